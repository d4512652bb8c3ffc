#include "diffscope/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace diffscope::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRow = Eigen::Map<const RowMat<T>>;

struct Geom {
    std::int64_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

// col is [channels * k * k, out_h * out_w], row-major.
template <typename T>
void im2col(const T* in, const Geom& g, T* col) {
    const std::int64_t plane = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const std::int64_t ih = oh * g.stride - g.padding + ki;
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= g.height) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = in + (c * g.height + ih) * g.width;
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const std::int64_t iw = ow * g.stride - g.padding + kj;
                        dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-adds col back onto the (zero-initialised) image buffer.
template <typename T>
void col2im(const T* col, const Geom& g, T* out) {
    const std::int64_t plane = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
            for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const std::int64_t ih = oh * g.stride - g.padding + ki;
                    if (ih < 0 || ih >= g.height) continue;
                    T* dst = out + (c * g.height + ih) * g.width;
                    const T* src = row + oh * g.out_w;
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const std::int64_t iw = ow * g.stride - g.padding + kj;
                        if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4) throw ConfigError(std::string(what) + " must be rank 4, got " + shape_str(s));
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g) {
    if (g.stride <= 0 || g.padding < 0) throw ConfigError("conv: stride must be positive and padding non-negative");
    if (kernel > in + 2 * g.padding) {
        throw ConfigError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                          std::to_string(in + 2 * g.padding));
    }
    return (in + 2 * g.padding - kernel) / g.stride + 1;
}

std::int64_t conv_transpose_out_size(std::int64_t in, std::int64_t kernel, ConvGeometry g) {
    if (g.stride <= 0 || g.padding < 0) throw ConfigError("conv_transpose: invalid stride/padding");
    const std::int64_t out = (in - 1) * g.stride - 2 * g.padding + kernel;
    if (out <= 0) throw ConfigError("conv_transpose: non-positive output size");
    return out;
}

std::int64_t default_groups(std::int64_t channels) { return std::min<std::int64_t>(8, channels); }

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvGeometry g) {
    require_rank4(input.shape(), "conv2d input");
    require_rank4(weight.shape(), "conv2d weight");
    const auto B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Cin) {
        throw ConfigError("conv2d: input has " + std::to_string(Cin) + " channels, weight expects " +
                          std::to_string(weight.dim(1)));
    }
    if (weight.dim(3) != k) throw ConfigError("conv2d: only square kernels are supported");
    if (bias.numel() != static_cast<std::size_t>(Cout)) throw ConfigError("conv2d: bias length mismatch");
    const Geom geo{Cin, H, W, k, g.stride, g.padding, conv_out_size(H, k, g), conv_out_size(W, k, g)};
    const std::int64_t K = Cin * k * k, P = geo.out_h * geo.out_w;

    Tensor<T> out(Shape{B, Cout, geo.out_h, geo.out_w});
    std::vector<T> col(static_cast<std::size_t>(K * P));
    CMapRow<T> wmat(weight.ptr(), Cout, K);
    for (std::int64_t b = 0; b < B; ++b) {
        im2col(input.ptr() + b * Cin * H * W, geo, col.data());
        MapRow<T> o(out.ptr() + b * Cout * P, Cout, P);
        o.noalias() = wmat * CMapRow<T>(col.data(), K, P);
        for (std::int64_t c = 0; c < Cout; ++c) o.row(c).array() += bias[c];
    }
    return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out, ConvGeometry g,
                     Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
    const auto B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = weight.dim(0), k = weight.dim(2);
    const Geom geo{Cin, H, W, k, g.stride, g.padding, grad_out.dim(2), grad_out.dim(3)};
    const std::int64_t K = Cin * k * k, P = geo.out_h * geo.out_w;

    if (grad_input) *grad_input = Tensor<T>(input.shape());
    if (grad_weight) *grad_weight = Tensor<T>(weight.shape());
    if (grad_bias) *grad_bias = Tensor<T>(Shape{Cout});

    std::vector<T> col(static_cast<std::size_t>(K * P));
    CMapRow<T> wmat(weight.ptr(), Cout, K);
    for (std::int64_t b = 0; b < B; ++b) {
        CMapRow<T> dy(grad_out.ptr() + b * Cout * P, Cout, P);
        if (grad_weight) {
            im2col(input.ptr() + b * Cin * H * W, geo, col.data());
            MapRow<T>(grad_weight->ptr(), Cout, K).noalias() += dy * CMapRow<T>(col.data(), K, P).transpose();
        }
        if (grad_bias) {
            // Plain loop: Eigen's vectorised sum splits by pointer alignment, which makes it run-dependent.
            for (std::int64_t c = 0; c < Cout; ++c) {
                const T* row = grad_out.ptr() + (b * Cout + c) * P;
                T acc = 0;
                for (std::int64_t p = 0; p < P; ++p) acc += row[p];
                (*grad_bias)[c] += acc;
            }
        }
        if (grad_input) {
            MapRow<T>(col.data(), K, P).noalias() = wmat.transpose() * dy;
            col2im(col.data(), geo, grad_input->ptr() + b * Cin * H * W);
        }
    }
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvGeometry g) {
    require_rank4(input.shape(), "conv_transpose2d input");
    require_rank4(weight.shape(), "conv_transpose2d weight");
    const auto B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != Cin) {
        throw ConfigError("conv_transpose2d: input has " + std::to_string(Cin) + " channels, weight expects " +
                          std::to_string(weight.dim(0)));
    }
    if (weight.dim(3) != k) throw ConfigError("conv_transpose2d: only square kernels are supported");
    if (bias.numel() != static_cast<std::size_t>(Cout)) throw ConfigError("conv_transpose2d: bias length mismatch");
    const auto Ho = conv_transpose_out_size(H, k, g), Wo = conv_transpose_out_size(W, k, g);
    // The output plane plays the role of the conv2d input.
    const Geom geo{Cout, Ho, Wo, k, g.stride, g.padding, H, W};
    const std::int64_t K = Cout * k * k, P = H * W;

    Tensor<T> out(Shape{B, Cout, Ho, Wo});
    std::vector<T> col(static_cast<std::size_t>(K * P));
    CMapRow<T> wmat(weight.ptr(), Cin, K);
    for (std::int64_t b = 0; b < B; ++b) {
        MapRow<T>(col.data(), K, P).noalias() = wmat.transpose() * CMapRow<T>(input.ptr() + b * Cin * P, Cin, P);
        T* o = out.ptr() + b * Cout * Ho * Wo;
        col2im(col.data(), geo, o);
        for (std::int64_t c = 0; c < Cout; ++c) {
            for (std::int64_t i = 0; i < Ho * Wo; ++i) o[c * Ho * Wo + i] += bias[c];
        }
    }
    return out;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                               ConvGeometry g, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                               Tensor<T>* grad_bias) {
    const auto B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = weight.dim(1), k = weight.dim(2);
    const auto Ho = grad_out.dim(2), Wo = grad_out.dim(3);
    const Geom geo{Cout, Ho, Wo, k, g.stride, g.padding, H, W};
    const std::int64_t K = Cout * k * k, P = H * W;

    if (grad_input) *grad_input = Tensor<T>(input.shape());
    if (grad_weight) *grad_weight = Tensor<T>(weight.shape());
    if (grad_bias) *grad_bias = Tensor<T>(Shape{Cout});

    std::vector<T> col(static_cast<std::size_t>(K * P));
    CMapRow<T> wmat(weight.ptr(), Cin, K);
    for (std::int64_t b = 0; b < B; ++b) {
        const T* dy = grad_out.ptr() + b * Cout * Ho * Wo;
        im2col(dy, geo, col.data());
        CMapRow<T> colm(col.data(), K, P);
        if (grad_input) MapRow<T>(grad_input->ptr() + b * Cin * P, Cin, P).noalias() = wmat * colm;
        if (grad_weight) {
            MapRow<T>(grad_weight->ptr(), Cin, K).noalias() +=
                CMapRow<T>(input.ptr() + b * Cin * P, Cin, P) * colm.transpose();
        }
        if (grad_bias) {
            for (std::int64_t c = 0; c < Cout; ++c) {
                T s = 0;
                for (std::int64_t i = 0; i < Ho * Wo; ++i) s += dy[c * Ho * Wo + i];
                (*grad_bias)[c] += s;
            }
        }
    }
}

template <typename T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = silu(x[i]);
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
    Tensor<T> g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        g[i] = grad_out[i] * s * (T(1) + x[i] * (T(1) - s));
    }
    return g;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2) throw ConfigError("linear expects rank-2 input and weight");
    const auto N = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (weight.dim(1) != in) throw ConfigError("linear: input width does not match weight");
    if (bias.numel() != static_cast<std::size_t>(out)) throw ConfigError("linear: bias length mismatch");
    Tensor<T> y(Shape{N, out});
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t o = 0; o < out; ++o) {
            T s = bias[o];
            const T* w = weight.ptr() + o * in;
            const T* xr = x.ptr() + n * in;
            for (std::int64_t i = 0; i < in; ++i) s += w[i] * xr[i];
            y[n * out + o] = s;
        }
    }
    return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
    const auto N = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (grad_x) *grad_x = Tensor<T>(x.shape());
    if (grad_weight) *grad_weight = Tensor<T>(weight.shape());
    if (grad_bias) *grad_bias = Tensor<T>(Shape{out});
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t o = 0; o < out; ++o) {
            const T g = grad_out[n * out + o];
            if (grad_bias) (*grad_bias)[o] += g;
            for (std::int64_t i = 0; i < in; ++i) {
                if (grad_weight) (*grad_weight)[o * in + i] += g * x[n * in + i];
                if (grad_x) (*grad_x)[n * in + i] += g * weight[o * in + i];
            }
        }
    }
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gain, const Tensor<T>& shift,
                     double eps, GroupNormStats* stats) {
    require_rank4(x.shape(), "group_norm input");
    const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (groups <= 0 || C % groups != 0) {
        throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    }
    if (gain.numel() != static_cast<std::size_t>(C) || shift.numel() != static_cast<std::size_t>(C)) {
        throw ConfigError("group_norm: gain/shift length mismatch");
    }
    const std::int64_t cpg = C / groups, n = cpg * HW;
    Tensor<T> y(x.shape());
    if (stats) {
        stats->mean.assign(static_cast<std::size_t>(B * groups), 0.0);
        stats->rstd.assign(static_cast<std::size_t>(B * groups), 0.0);
    }
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (b * C + gi * cpg) * HW;
            // Shifted two-pass moments: a constant group yields mean == value and var == 0 exactly.
            const double pivot = x[base];
            double dsum = 0.0;
            for (std::int64_t i = 0; i < n; ++i) dsum += double(x[base + i]) - pivot;
            const double mean = pivot + dsum / double(n);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double d = double(x[base + i]) - mean;
                var += d * d;
            }
            var /= double(n);
            const double rstd = 1.0 / std::sqrt(var + eps);
            if (stats) {
                stats->mean[b * groups + gi] = mean;
                stats->rstd[b * groups + gi] = rstd;
            }
            for (std::int64_t c = 0; c < cpg; ++c) {
                const std::int64_t ch = gi * cpg + c;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const std::int64_t idx = base + c * HW + i;
                    y[idx] = T((x[idx] - mean) * rstd) * gain[ch] + shift[ch];
                }
            }
        }
    }
    return y;
}

template <typename T>
void group_norm_backward(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gain, const GroupNormStats& stats,
                         const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_gain,
                         Tensor<T>* grad_shift) {
    const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const std::int64_t cpg = C / groups, n = cpg * HW;
    if (grad_x) *grad_x = Tensor<T>(x.shape());
    if (grad_gain) *grad_gain = Tensor<T>(Shape{C});
    if (grad_shift) *grad_shift = Tensor<T>(Shape{C});
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (b * C + gi * cpg) * HW;
            const double mean = stats.mean[b * groups + gi], rstd = stats.rstd[b * groups + gi];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::int64_t c = 0; c < cpg; ++c) {
                const std::int64_t ch = gi * cpg + c;
                double dgain = 0.0, dshift = 0.0;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const std::int64_t idx = base + c * HW + i;
                    const double xhat = (x[idx] - mean) * rstd;
                    const double dy = grad_out[idx];
                    dgain += dy * xhat;
                    dshift += dy;
                    const double dxhat = dy * gain[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                if (grad_gain) (*grad_gain)[ch] += T(dgain);
                if (grad_shift) (*grad_shift)[ch] += T(dshift);
            }
            if (!grad_x) continue;
            const double m1 = sum_dxhat / double(n), m2 = sum_dxhat_xhat / double(n);
            for (std::int64_t c = 0; c < cpg; ++c) {
                const std::int64_t ch = gi * cpg + c;
                for (std::int64_t i = 0; i < HW; ++i) {
                    const std::int64_t idx = base + c * HW + i;
                    const double xhat = (x[idx] - mean) * rstd;
                    const double dxhat = double(grad_out[idx]) * gain[ch];
                    (*grad_x)[idx] = T(rstd * (dxhat - m1 - xhat * m2));
                }
            }
        }
    }
}

#define DIFFSCOPE_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry);               \
    template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry, Tensor<T>*, \
                                  Tensor<T>*, Tensor<T>*);                                                       \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry);     \
    template void conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry,   \
                                            Tensor<T>*, Tensor<T>*, Tensor<T>*);                                 \
    template T silu(T);                                                                                          \
    template Tensor<T> silu(const Tensor<T>&);                                                                   \
    template Tensor<T> silu_backward(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*,   \
                                  Tensor<T>*);                                                                   \
    template Tensor<T> group_norm(const Tensor<T>&, std::int64_t, const Tensor<T>&, const Tensor<T>&, double,     \
                                  GroupNormStats*);                                                              \
    template void group_norm_backward(const Tensor<T>&, std::int64_t, const Tensor<T>&, const GroupNormStats&,    \
                                      const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);

DIFFSCOPE_INSTANTIATE_OPS(float)
DIFFSCOPE_INSTANTIATE_OPS(double)

}  // namespace diffscope::ops
