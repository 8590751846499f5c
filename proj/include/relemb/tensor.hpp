#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace relemb::nn {

// Dense row-major matrix of doubles. Everything in this project is at most
// rank 2: vectors are 1xN rows, scalars are 1x1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    static Tensor row(std::vector<double> values) {
        Tensor t;
        t.rows_ = 1;
        t.cols_ = values.size();
        t.v_ = std::move(values);
        return t;
    }

    static Tensor row(std::initializer_list<double> values) {
        return row(std::vector<double>(values));
    }

    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v_[0] = x;
        return t;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double& at(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double* row_ptr(std::size_t r) { return v_.data() + r * cols_; }
    const double* row_ptr(std::size_t r) const { return v_.data() + r * cols_; }

    const std::vector<double>& vec() const { return v_; }
    std::vector<double>& vec() { return v_; }

    bool same_shape(const Tensor& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    double item() const {
        if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
        return v_[0];
    }

    void fill(double x) { v_.assign(v_.size(), x); }

    std::string shape_str() const {
        return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

} // namespace relemb::nn
