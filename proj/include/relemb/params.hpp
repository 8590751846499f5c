#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relemb/tensor.hpp"

namespace relemb::nn {

// Ordered named tensor collection. Order is insertion order and is the
// canonical iteration/serialization/update order, so runs are reproducible.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    Tensor& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return items_[it->second].second;
    }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t count() const { return items_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : items_) n += v.size();
        return n;
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

// Gradients keyed by parameter name. std::map keeps deterministic order.
using GradTable = std::map<std::string, Tensor>;

} // namespace relemb::nn
