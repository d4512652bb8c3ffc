#include "diffscope/tape.hpp"

#include <algorithm>

namespace diffscope {

template <typename T>
Var Tape<T>::push(Tensor<T> value, std::function<void(Tape&, const Tensor<T>&)> bw) {
    Node n;
    n.owned = std::move(value);
    if (record_) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw UsageError("variable not on this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    return node(v).value();
}

template <typename T>
void Tape<T>::overwrite(Var v, Tensor<T> value) {
    auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.ref) throw UsageError("cannot overwrite a parameter leaf");
    if (n.owned.shape() != value.shape()) throw UsageError("overwrite must preserve shape");
    n.owned = std::move(value);
}

template <typename T>
void Tape<T>::accumulate(Var v, const Tensor<T>& g) {
    auto& dst = grads_[static_cast<std::size_t>(v.id)];
    if (dst.numel() == 0 && dst.rank() == 0 && node(v).value().numel() != 0) {
        dst = g;
        return;
    }
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
    return push(std::move(value));
}

template <typename T>
Var Tape<T>::param(const ParamStore<T>& params, const std::string& name) {
    Node n;
    n.ref = &params.get(name);
    n.param_name = name;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var w, Var b, ops::ConvGeometry g) {
    auto y = ops::conv2d(value(x), value(w), value(b), g);
    return push(std::move(y), [x, w, b, g](Tape& t, const Tensor<T>& gy) {
        Tensor<T> gx, gw, gb;
        ops::conv2d_backward(t.value(x), t.value(w), gy, g, &gx, &gw, &gb);
        t.accumulate(x, gx);
        t.accumulate(w, gw);
        t.accumulate(b, gb);
    });
}

template <typename T>
Var Tape<T>::conv_transpose2d(Var x, Var w, Var b, ops::ConvGeometry g) {
    auto y = ops::conv_transpose2d(value(x), value(w), value(b), g);
    return push(std::move(y), [x, w, b, g](Tape& t, const Tensor<T>& gy) {
        Tensor<T> gx, gw, gb;
        ops::conv_transpose2d_backward(t.value(x), t.value(w), gy, g, &gx, &gw, &gb);
        t.accumulate(x, gx);
        t.accumulate(w, gw);
        t.accumulate(b, gb);
    });
}

template <typename T>
Var Tape<T>::group_norm(Var x, std::int64_t groups, Var gain, Var shift, double eps) {
    ops::GroupNormStats stats;
    auto y = ops::group_norm(value(x), groups, value(gain), value(shift), eps, record_ ? &stats : nullptr);
    return push(std::move(y), [x, groups, gain, shift, stats = std::move(stats)](Tape& t, const Tensor<T>& gy) {
        Tensor<T> gx, gg, gs;
        ops::group_norm_backward(t.value(x), groups, t.value(gain), stats, gy, &gx, &gg, &gs);
        t.accumulate(x, gx);
        t.accumulate(gain, gg);
        t.accumulate(shift, gs);
    });
}

template <typename T>
Var Tape<T>::silu(Var x) {
    return push(ops::silu(value(x)), [x](Tape& t, const Tensor<T>& gy) {
        t.accumulate(x, ops::silu_backward(t.value(x), gy));
    });
}

template <typename T>
Var Tape<T>::linear(Var x, Var w, Var b) {
    return push(ops::linear(value(x), value(w), value(b)), [x, w, b](Tape& t, const Tensor<T>& gy) {
        Tensor<T> gx, gw, gb;
        ops::linear_backward(t.value(x), t.value(w), gy, &gx, &gw, &gb);
        t.accumulate(x, gx);
        t.accumulate(w, gw);
        t.accumulate(b, gb);
    });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.shape() != vb.shape()) throw ConfigError("add: shape mismatch " + shape_str(va.shape()) + " vs " +
                                                    shape_str(vb.shape()));
    Tensor<T> y(va.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = va[i] + vb[i];
    return push(std::move(y), [a, b](Tape& t, const Tensor<T>& gy) {
        t.accumulate(a, gy);
        t.accumulate(b, gy);
    });
}

template <typename T>
Var Tape<T>::add_channel_offset(Var x, Var e) {
    const auto& vx = value(x);
    const auto& ve = value(e);
    const auto B = vx.dim(0), C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
    if (ve.rank() != 2 || ve.dim(0) != B || ve.dim(1) != C) {
        throw ConfigError("add_channel_offset: offset " + shape_str(ve.shape()) + " does not fit " +
                          shape_str(vx.shape()));
    }
    Tensor<T> y = vx;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        for (std::int64_t i = 0; i < HW; ++i) y[bc * HW + i] += ve[bc];
    }
    return push(std::move(y), [x, e, B, C, HW](Tape& t, const Tensor<T>& gy) {
        t.accumulate(x, gy);
        Tensor<T> ge(Shape{B, C});
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
            T s = 0;
            for (std::int64_t i = 0; i < HW; ++i) s += gy[bc * HW + i];
            ge[bc] = s;
        }
        t.accumulate(e, ge);
    });
}

template <typename T>
Var Tape<T>::concat_channels(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
        va.dim(3) != vb.dim(3)) {
        throw ConfigError("concat_channels: incompatible " + shape_str(va.shape()) + " and " + shape_str(vb.shape()));
    }
    const auto B = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), HW = va.dim(2) * va.dim(3);
    Tensor<T> y(Shape{B, Ca + Cb, va.dim(2), va.dim(3)});
    for (std::int64_t n = 0; n < B; ++n) {
        std::copy_n(va.ptr() + n * Ca * HW, Ca * HW, y.ptr() + n * (Ca + Cb) * HW);
        std::copy_n(vb.ptr() + n * Cb * HW, Cb * HW, y.ptr() + n * (Ca + Cb) * HW + Ca * HW);
    }
    return push(std::move(y), [a, b, B, Ca, Cb, HW, sa = va.shape(), sb = vb.shape()](Tape& t, const Tensor<T>& gy) {
        Tensor<T> ga(sa), gb(sb);
        for (std::int64_t n = 0; n < B; ++n) {
            std::copy_n(gy.ptr() + n * (Ca + Cb) * HW, Ca * HW, ga.ptr() + n * Ca * HW);
            std::copy_n(gy.ptr() + n * (Ca + Cb) * HW + Ca * HW, Cb * HW, gb.ptr() + n * Cb * HW);
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

template <typename T>
Var Tape<T>::gather_rows(Var table, std::vector<std::int64_t> rows) {
    const auto& tb = value(table);
    if (tb.rank() != 2) throw ConfigError("gather_rows: table must be rank 2");
    const auto N = tb.dim(0), D = tb.dim(1);
    Tensor<T> y(Shape{static_cast<std::int64_t>(rows.size()), D});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= N) throw UsageError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
        std::copy_n(tb.ptr() + rows[r] * D, D, y.ptr() + static_cast<std::int64_t>(r) * D);
    }
    return push(std::move(y), [table, rows = std::move(rows), D, shape = tb.shape()](Tape& t, const Tensor<T>& gy) {
        Tensor<T> gt(shape);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::int64_t d = 0; d < D; ++d) gt[rows[r] * D + d] += gy[static_cast<std::int64_t>(r) * D + d];
        }
        t.accumulate(table, gt);
    });
}

template <typename T>
Var Tape<T>::sum(Var x) {
    const auto& vx = value(x);
    T s = 0;
    for (std::size_t i = 0; i < vx.numel(); ++i) s += vx[i];
    return push(Tensor<T>::scalar(s), [x, shape = vx.shape()](Tape& t, const Tensor<T>& gy) {
        t.accumulate(x, Tensor<T>(shape, gy.item()));
    });
}

template <typename T>
Var Tape<T>::mse(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.shape() != vb.shape()) throw ConfigError("mse: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < va.numel(); ++i) {
        const double d = double(va[i]) - double(vb[i]);
        s += d * d;
    }
    const auto n = static_cast<double>(va.numel());
    return push(Tensor<T>::scalar(T(s / n)), [a, b, n](Tape& t, const Tensor<T>& gy) {
        const auto& xa = t.value(a);
        const auto& xb = t.value(b);
        Tensor<T> ga(xa.shape()), gb(xb.shape());
        const T scale = T(2.0 / n) * gy.item();
        for (std::size_t i = 0; i < xa.numel(); ++i) {
            ga[i] = scale * (xa[i] - xb[i]);
            gb[i] = -ga[i];
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

template <typename T>
void Tape<T>::backward(Var loss) {
    if (!record_) throw UsageError("backward on a tape that is not recording");
    if (node(loss).value().numel() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(node(loss).value().shape()));
    }
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[static_cast<std::size_t>(loss.id)] = Tensor<T>(node(loss).value().shape(), T(1));
    for (std::int64_t i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        const auto& g = grads_[static_cast<std::size_t>(i)];
        if (!n.backward || (g.numel() == 0 && g.rank() == 0)) continue;
        n.backward(*this, g);
    }
}

template <typename T>
Gradients<T> Tape<T>::gradients(const ParamStore<T>& params) const {
    Gradients<T> out;
    for (const auto& [name, value] : params) out.emplace(name, Tensor<T>(value.shape()));
    for (std::size_t i = 0; i < nodes_.size() && i < grads_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.param_name.empty()) continue;
        auto it = out.find(n.param_name);
        if (it == out.end()) continue;
        const auto& g = grads_[i];
        for (std::size_t k = 0; k < g.numel(); ++k) it->second[k] += g[k];
    }
    return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace diffscope
