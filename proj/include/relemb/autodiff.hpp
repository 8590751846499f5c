#pragma once

#include <functional>
#include <vector>

#include "relemb/tensor.hpp"

namespace relemb::nn {

class Tape;

// Handle into a Tape. Cheap to copy; only valid for the tape that created it.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over Tensor-valued nodes.
//
// A Tape records one dynamic computation graph. Forward arithmetic is
// identical whether gradients are enabled or not (the no-grad mode only skips
// recording backward closures), so inference and training paths produce
// bitwise-equal values.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

    // Leaf. needs_grad marks it as a differentiation target.
    Value input(Tensor t, bool needs_grad = false);
    Value constant(Tensor t) { return input(std::move(t), false); }

    const Tensor& val(Value v) const { return nodes_[check(v)].val; }
    const Tensor& grad(Value v) const;

    // Elementwise, shapes must match.
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    // k * a + c, elementwise.
    Value affine(Value a, double k, double c);
    Value scale(Value a, double k) { return affine(a, k, 0.0); }

    Value matmul(Value a, Value b);    // [m,k] x [k,n] -> [m,n]
    Value matmul_nt(Value a, Value b); // [m,k] x [n,k]^T -> [m,n]
    Value add_rowvec(Value x, Value b); // [m,n] + broadcast [1,n]

    Value relu(Value a);
    Value gelu(Value a); // exact erf form
    Value tanh(Value a);
    Value sigmoid(Value a);
    Value abs(Value a);
    Value log(Value a);
    Value sqrt(Value a);
    Value clamp(Value a, double lo, double hi);

    // Row-wise softmax. When valid is given, entries at positions with
    // valid[j] == 0 get probability 0 and are excluded from the normalizer.
    Value softmax_rows(Value a, const std::vector<unsigned char>* valid = nullptr);

    // Per-row layer normalization with learned gain/bias (both [1,d]).
    Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);

    // Gathers rows of a [V,d] table; backward scatter-adds into the table.
    Value embed_rows(Value table, const std::vector<int>& ids);

    // Copy of x with one row replaced by r ([1,d]); used for per-position
    // input-embedding overrides.
    Value replace_row(Value x, std::size_t row, Value r);

    Value slice_rows(Value x, std::size_t from, std::size_t n);
    Value slice_cols(Value x, std::size_t from, std::size_t n);
    Value concat_cols(const std::vector<Value>& xs);
    Value concat_rows(const std::vector<Value>& xs);

    // Mean over rows with mask[r] != 0 -> [1,d]. Mask must select >= 1 row.
    Value mean_rows(Value x, const std::vector<unsigned char>& mask);

    Value sum(Value a);          // -> 1x1
    Value dot(Value a, Value b); // flattened dot product -> 1x1

    // Mean negative log-likelihood of labels under row-wise softmax(logits).
    Value cross_entropy_mean(Value logits, const std::vector<int>& labels);

    // Seeds d(root)=1 and propagates through the recorded graph. root must be
    // scalar and the tape must have gradients enabled.
    void backward(Value root);

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&)> back; // empty for leaves / no-grad nodes
    };

    int check(Value v) const;
    Value make(Tensor val, bool needs_grad, std::function<void(Tape&)> back);
    bool track(std::initializer_list<Value> parents) const;
    Tensor& grad_buf(int id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

} // namespace relemb::nn
