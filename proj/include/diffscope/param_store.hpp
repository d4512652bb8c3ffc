#pragma once

#include "diffscope/tensor.hpp"

#include <map>
#include <string>

namespace diffscope {

/// Named parameter tensors. Iteration is in lexicographic name order.
template <typename T>
class ParamStore {
public:
    using Map = std::map<std::string, Tensor<T>>;

    /// Registers a new tensor; names must be unique.
    void add(const std::string& name, Tensor<T> value) {
        auto [it, inserted] = params_.emplace(name, std::move(value));
        if (!inserted) throw ConfigError("duplicate parameter name: " + name);
    }

    const Tensor<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    /// Mutable access for optimizers; shapes stay fixed.
    Tensor<T>& mut(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    /// Replaces values in place, enforcing the registered shape.
    void assign(const std::string& name, Tensor<T> value) {
        auto& dst = mut(name);
        if (dst.shape() != value.shape()) {
            throw ConfigError("shape change for parameter " + name + ": " + shape_str(dst.shape()) + " -> " +
                              shape_str(value.shape()));
        }
        dst = std::move(value);
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    std::size_t size() const noexcept { return params_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, t] : params_) out.add(name, t.template cast<U>());
        return out;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.params_ == b.params_; }

private:
    Map params_;
};

}  // namespace diffscope
