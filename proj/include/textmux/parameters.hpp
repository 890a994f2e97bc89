#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "textmux/rng.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

template <class Real>
struct Parameter {
    std::string name;  // path like "trunk/enc1/w"
    Tensor<Real> tensor;
    bool trainable = true;
};

// Ordered, name-unique registry of model parameters. Registration order is
// the reduction and serialization order, so it must be deterministic.
template <class Real>
class ParameterSet {
public:
    // Returned handle shares the underlying node; safe to hold across adds.
    Tensor<Real> add(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        std::vector<Real> data(shape_numel(shape));
        Real bound = fan_in > 0 ? Real(1) / std::sqrt(static_cast<Real>(fan_in)) : Real(0);
        for (auto& v : data) v = static_cast<Real>(rng.uniform(-bound, bound));
        Parameter<Real> p{name, Tensor<Real>::leaf_param(std::move(shape), std::move(data), name), true};
        index_[name] = items_.size();
        items_.push_back(std::move(p));
        return items_.back().tensor;
    }

    Parameter<Real>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return items_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter<Real>>& items() { return items_; }
    const std::vector<Parameter<Real>>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }

    std::size_t element_count() const {
        std::size_t total = 0;
        for (const auto& p : items_) total += p.tensor.size();
        return total;
    }

    void zero_grad() {
        for (auto& p : items_) p.tensor.zero_grad();
    }

    // Frozen parameters drop out of the autodiff graph entirely.
    void set_trainable(const std::string& prefix, bool trainable) {
        bool hit = false;
        for (auto& p : items_) {
            if (p.name.rfind(prefix, 0) == 0) {
                p.trainable = trainable;
                p.tensor.node()->requires_grad = trainable;
                hit = true;
            }
        }
        if (!hit) throw std::invalid_argument("no parameter matches prefix: " + prefix);
    }

    void set_all_trainable(bool trainable) {
        for (auto& p : items_) {
            p.trainable = trainable;
            p.tensor.node()->requires_grad = trainable;
        }
    }

    // Fixed-order reduction of per-worker sinks into parameter grads.
    void reduce_sinks(std::vector<GradSink<Real>>& sinks) {
        for (auto& p : items_) {
            auto* node = p.tensor.node();
            if (!node->requires_grad) continue;
            for (auto& sink : sinks) {
                auto it = sink.buffers.find(node);
                if (it == sink.buffers.end()) continue;
                if (node->grad.size() != node->value.size())
                    node->grad.assign(node->value.size(), Real(0));
                for (std::size_t i = 0; i < it->second.size(); ++i) node->grad[i] += it->second[i];
            }
        }
    }

private:
    std::vector<Parameter<Real>> items_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace textmux
