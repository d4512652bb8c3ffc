#pragma once

// Reverse-mode differentiation over a linear record of operations.
//
// Every op appends a node holding its forward value. When recording is enabled the node
// also captures a backward closure; backward() then walks the record in reverse and
// routes gradients to the parameter leaves.

#include "diffscope/ops.hpp"
#include "diffscope/param_store.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace diffscope {

struct Var {
    std::int32_t id = -1;
    bool valid() const noexcept { return id >= 0; }
};

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

template <typename T>
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var constant(Tensor<T> value);
    /// Leaf that refers to a parameter tensor; the store must outlive the tape.
    Var param(const ParamStore<T>& params, const std::string& name);

    const Tensor<T>& value(Var v) const;
    /// Rewrites a forward value in place, used by activation hooks. Shape must be kept.
    void overwrite(Var v, Tensor<T> value);

    Var conv2d(Var x, Var w, Var b, ops::ConvGeometry g);
    Var conv_transpose2d(Var x, Var w, Var b, ops::ConvGeometry g);
    Var group_norm(Var x, std::int64_t groups, Var gain, Var shift, double eps);
    Var silu(Var x);
    Var linear(Var x, Var w, Var b);
    Var add(Var a, Var b);
    /// x [B,C,H,W] plus a per-sample, per-channel offset e [B,C].
    Var add_channel_offset(Var x, Var e);
    Var concat_channels(Var a, Var b);
    /// Rows of `table` [N,D] selected by `rows`; result [rows.size(), D].
    Var gather_rows(Var table, std::vector<std::int64_t> rows);
    Var sum(Var x);
    /// mean((a - b)^2) over all elements.
    Var mse(Var a, Var b);

    /// Runs reverse accumulation from a scalar node.
    void backward(Var loss);

    /// Gradient for every parameter in `params`; untouched parameters get zeros.
    Gradients<T> gradients(const ParamStore<T>& params) const;

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ref = nullptr;
        std::string param_name;
        std::function<void(Tape&, const Tensor<T>&)> backward;
        const Tensor<T>& value() const { return ref ? *ref : owned; }
    };

    Var push(Tensor<T> value, std::function<void(Tape&, const Tensor<T>&)> bw = {});
    void accumulate(Var v, const Tensor<T>& g);
    const Node& node(Var v) const;

    bool record_;
    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
};

/// Convenience: runs backward and collects parameter gradients.
template <typename T>
Gradients<T> backward(Tape<T>& tape, Var loss, const ParamStore<T>& params) {
    tape.backward(loss);
    return tape.gradients(params);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace diffscope
