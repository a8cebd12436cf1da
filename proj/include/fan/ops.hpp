#pragma once

#include <algorithm>
#include <cmath>

#include "fan/detail/gemm.hpp"
#include "fan/parallel.hpp"
#include "fan/tensor.hpp"

namespace fan {

namespace detail {

template <typename T>
void check_4d(const Tensor<T>& t, const char* what) {
    if (t.rank() != 4)
        throw ConfigError(strcat_(what, " must be 4D [B,C,H,W], got ", shape_str(t.shape())));
}

// Unpack [B,Cin,H,W] into columns [Cin*kh*kw, OH*OW] for one batch item.
template <typename T>
void im2col(const T* src, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* cols) {
    for (int64_t c = 0; c < cin; ++c) {
        const T* plane = src + c * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                T* dst = cols + ((c * kh + ky) * kw + kx) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride + ky - pad;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t ix = ox * stride + kx - pad;
                        dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? plane[iy * w + ix]
                                                : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of column gradients back into one batch item's input gradient.
template <typename T>
void col2im_add(const T* cols, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* dst) {
    for (int64_t c = 0; c < cin; ++c) {
        T* plane = dst + c * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                const T* src = cols + ((c * kh + ky) * kw + kx) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        plane[iy * w + ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

// input [B,Cin,H,W], weight [Cout,Cin,kh,kw], optional bias [Cout].
// OH = (H + 2*pad - kh)/stride + 1, likewise OW.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int64_t stride, int64_t pad) {
    detail::check_4d(input, "conv2d input");
    detail::check_4d(weight, "conv2d weight");
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d padding must be >= 0");
    const int64_t b = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin)
        throw ConfigError(strcat_("conv2d channel mismatch: input Cin=", cin, ", weight Cin=",
                                  weight.dim(1)));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw ConfigError(strcat_("conv2d bias must be [", cout, "], got ",
                                  shape_str(bias.shape())));
    if (kh > h + 2 * pad || kw > w + 2 * pad)
        throw ConfigError(strcat_("conv2d kernel ", kh, "x", kw, " exceeds padded input ",
                                  h + 2 * pad, "x", w + 2 * pad));
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (w + 2 * pad - kw) / stride + 1;
    const int64_t ckk = cin * kh * kw;

    Tensor<T> out = Tensor<T>::zeros({b, cout, oh, ow});
    parallel_for(0, b, [&](int64_t bi) {
        std::vector<T> cols(static_cast<size_t>(ckk * oh * ow));
        detail::im2col(input.data() + bi * cin * h * w, cin, h, w, kh, kw, stride, pad, oh, ow,
                       cols.data());
        T* dst = out.data() + bi * cout * oh * ow;
        detail::gemm_nn(cout, oh * ow, ckk, weight.data(), cols.data(), dst);
        if (bias.defined()) {
            for (int64_t co = 0; co < cout; ++co) {
                const T bv = bias.data()[co];
                T* row = dst + co * oh * ow;
                for (int64_t i = 0; i < oh * ow; ++i) row[i] += bv;
            }
        }
    });

    const bool rg = input.requires_grad() || weight.requires_grad() ||
                    (bias.defined() && bias.requires_grad());
    if (tape && rg) {
        out.set_requires_grad(true);
        Tensor<T> x = input, wt = weight, bs = bias, y = out;
        tape->record("conv2d", {out}, [=]() mutable {
            const T* gout = y.grad();
            if (x.requires_grad()) {
                parallel_for(0, b, [&](int64_t bi) {
                    std::vector<T> gcols(static_cast<size_t>(ckk * oh * ow), T(0));
                    detail::gemm_tn(ckk, oh * ow, cout, wt.data(), gout + bi * cout * oh * ow,
                                    gcols.data());
                    detail::col2im_add(gcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                                       x.grad() + bi * cin * h * w);
                });
            }
            if (wt.requires_grad()) {
                std::vector<T> cols(static_cast<size_t>(ckk * oh * ow));
                for (int64_t bi = 0; bi < b; ++bi) {
                    detail::im2col(x.data() + bi * cin * h * w, cin, h, w, kh, kw, stride, pad,
                                   oh, ow, cols.data());
                    detail::gemm_nt(cout, ckk, oh * ow, gout + bi * cout * oh * ow, cols.data(),
                                    wt.grad());
                }
            }
            if (bs.defined() && bs.requires_grad()) {
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t co = 0; co < cout; ++co) {
                        const T* row = gout + (bi * cout + co) * oh * ow;
                        T acc = T(0);
                        for (int64_t i = 0; i < oh * ow; ++i) acc += row[i];
                        bs.grad()[co] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d
// ---------------------------------------------------------------------------

// Train mode normalizes with biased batch statistics per channel and updates
// running stats in place: running = (1-momentum)*running + momentum*batch.
template <typename T>
Tensor<T> batchnorm2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                      bool train, T momentum, T eps) {
    detail::check_4d(input, "batchnorm2d input");
    const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (gamma.numel() != c || beta.numel() != c)
        throw ConfigError(strcat_("batchnorm2d gamma/beta must have ", c, " channels"));
    const int64_t m = b * h * w;
    if (train && m < 2)
        throw ConfigError(strcat_("batchnorm2d train mode needs B*H*W >= 2, got ", m));

    std::vector<T> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
    if (train) {
        for (int64_t ci = 0; ci < c; ++ci) {
            T sum = T(0);
            for (int64_t bi = 0; bi < b; ++bi) {
                const T* plane = input.data() + (bi * c + ci) * h * w;
                for (int64_t i = 0; i < h * w; ++i) sum += plane[i];
            }
            const T mu = sum / static_cast<T>(m);
            T vsum = T(0);
            for (int64_t bi = 0; bi < b; ++bi) {
                const T* plane = input.data() + (bi * c + ci) * h * w;
                for (int64_t i = 0; i < h * w; ++i) {
                    const T d = plane[i] - mu;
                    vsum += d * d;
                }
            }
            const T var = vsum / static_cast<T>(m);
            mean[static_cast<size_t>(ci)] = mu;
            invstd[static_cast<size_t>(ci)] = T(1) / std::sqrt(var + eps);
            running_mean.data()[ci] = (T(1) - momentum) * running_mean.data()[ci] + momentum * mu;
            running_var.data()[ci] = (T(1) - momentum) * running_var.data()[ci] + momentum * var;
        }
    } else {
        for (int64_t ci = 0; ci < c; ++ci) {
            mean[static_cast<size_t>(ci)] = running_mean.data()[ci];
            invstd[static_cast<size_t>(ci)] = T(1) / std::sqrt(running_var.data()[ci] + eps);
        }
    }

    Tensor<T> out = Tensor<T>::zeros(input.shape());
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = input.data() + (bi * c + ci) * h * w;
            T* dst = out.data() + (bi * c + ci) * h * w;
            const T mu = mean[static_cast<size_t>(ci)];
            const T is = invstd[static_cast<size_t>(ci)];
            const T g = gamma.data()[ci], bt = beta.data()[ci];
            for (int64_t i = 0; i < h * w; ++i) dst[i] = (src[i] - mu) * is * g + bt;
        }

    const bool rg = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    if (tape && rg) {
        out.set_requires_grad(true);
        Tensor<T> x = input, gm = gamma, bt = beta, y = out;
        tape->record("batchnorm2d", {out}, [=]() mutable {
            const T* gout = y.grad();
            for (int64_t ci = 0; ci < c; ++ci) {
                const T mu = mean[static_cast<size_t>(ci)];
                const T is = invstd[static_cast<size_t>(ci)];
                const T g = gm.data()[ci];
                // per-channel reductions over B,H,W
                T sum_dy = T(0), sum_dy_xhat = T(0);
                for (int64_t bi = 0; bi < b; ++bi) {
                    const T* gp = gout + (bi * c + ci) * h * w;
                    const T* xp = x.data() + (bi * c + ci) * h * w;
                    for (int64_t i = 0; i < h * w; ++i) {
                        sum_dy += gp[i];
                        sum_dy_xhat += gp[i] * (xp[i] - mu) * is;
                    }
                }
                if (gm.requires_grad()) gm.grad()[ci] += sum_dy_xhat;
                if (bt.requires_grad()) bt.grad()[ci] += sum_dy;
                if (x.requires_grad()) {
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (int64_t bi = 0; bi < b; ++bi) {
                        const T* gp = gout + (bi * c + ci) * h * w;
                        const T* xp = x.data() + (bi * c + ci) * h * w;
                        T* gx = x.grad() + (bi * c + ci) * h * w;
                        if (train) {
                            for (int64_t i = 0; i < h * w; ++i) {
                                const T xhat = (xp[i] - mu) * is;
                                gx[i] += g * is *
                                         (gp[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                            }
                        } else {
                            for (int64_t i = 0; i < h * w; ++i) gx[i] += g * is * gp[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise / pooling / resampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input) {
    Tensor<T> out = Tensor<T>::zeros(input.shape());
    const T* src = input.data();
    T* dst = out.data();
    const int64_t n = input.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> x = input, y = out;
        tape->record("relu", {out}, [=]() mutable {
            const T* gout = y.grad();
            T* gx = x.grad();
            for (int64_t i = 0; i < n; ++i)
                if (x.data()[i] > T(0)) gx[i] += gout[i];
        });
    }
    return out;
}

// 2x2 max pooling, stride 2. Backward routes the gradient to the argmax
// position; ties go to the first element in row-major scan order.
template <typename T>
Tensor<T> maxpool2x2(Tape<T>* tape, const Tensor<T>& input) {
    detail::check_4d(input, "maxpool2x2 input");
    const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ConfigError(strcat_("maxpool2x2 needs even spatial dims, got ", h, "x", w));
    const int64_t oh = h / 2, ow = w / 2;
    Tensor<T> out = Tensor<T>::zeros({b, c, oh, ow});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* plane = input.data() + bc * h * w;
        T* dst = out.data() + bc * oh * ow;
        int64_t* am = argmax->data() + bc * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                int64_t best = (2 * oy) * w + 2 * ox;
                T bv = plane[best];
                const int64_t cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                                         (2 * oy + 1) * w + 2 * ox + 1};
                for (int64_t idx : cand)
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                dst[oy * ow + ox] = bv;
                am[oy * ow + ox] = bc * h * w + best;
            }
    }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> x = input, y = out;
        tape->record("maxpool2x2", {out}, [=]() mutable {
            const T* gout = y.grad();
            T* gx = x.grad();
            const int64_t n = y.numel();
            for (int64_t i = 0; i < n; ++i) gx[(*argmax)[static_cast<size_t>(i)]] += gout[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(Tape<T>* tape, const Tensor<T>& input) {
    detail::check_4d(input, "upsample_nearest2x input");
    const int64_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor<T> out = Tensor<T>::zeros({b, c, 2 * h, 2 * w});
    for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* src = input.data() + bc * h * w;
        T* dst = out.data() + bc * 4 * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const T v = src[y * w + x];
                dst[(2 * y) * 2 * w + 2 * x] = v;
                dst[(2 * y) * 2 * w + 2 * x + 1] = v;
                dst[(2 * y + 1) * 2 * w + 2 * x] = v;
                dst[(2 * y + 1) * 2 * w + 2 * x + 1] = v;
            }
    }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> x = input, y = out;
        tape->record("upsample_nearest2x", {out}, [=]() mutable {
            const T* gout = y.grad();
            T* gx = x.grad();
            for (int64_t bc = 0; bc < b * c; ++bc) {
                const T* gp = gout + bc * 4 * h * w;
                T* xp = gx + bc * h * w;
                for (int64_t yy = 0; yy < h; ++yy)
                    for (int64_t xx = 0; xx < w; ++xx)
                        xp[yy * w + xx] += gp[(2 * yy) * 2 * w + 2 * xx] +
                                           gp[(2 * yy) * 2 * w + 2 * xx + 1] +
                                           gp[(2 * yy + 1) * 2 * w + 2 * xx] +
                                           gp[(2 * yy + 1) * 2 * w + 2 * xx + 1];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ConfigError(strcat_("add shape mismatch: ", shape_str(a.shape()), " vs ",
                                  shape_str(b.shape())));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> ta = a, tb = b, y = out;
        tape->record("add", {out}, [=]() mutable {
            const T* gout = y.grad();
            if (ta.requires_grad())
                for (int64_t i = 0; i < n; ++i) ta.grad()[i] += gout[i];
            if (tb.requires_grad())
                for (int64_t i = 0; i < n; ++i) tb.grad()[i] += gout[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ConfigError("concat_channels needs at least one input");
    for (const auto& p : parts) detail::check_4d(p, "concat_channels input");
    const int64_t b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int64_t ctotal = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != b || p.dim(2) != h || p.dim(3) != w)
            throw ConfigError(strcat_("concat_channels mismatch: ", shape_str(p.shape()),
                                      " vs leading ", shape_str(parts[0].shape())));
        ctotal += p.dim(1);
    }
    Tensor<T> out = Tensor<T>::zeros({b, ctotal, h, w});
    bool rg = false;
    for (int64_t bi = 0; bi < b; ++bi) {
        int64_t coff = 0;
        for (const auto& p : parts) {
            const int64_t pc = p.dim(1);
            std::copy_n(p.data() + bi * pc * h * w, pc * h * w,
                        out.data() + (bi * ctotal + coff) * h * w);
            coff += pc;
        }
    }
    for (const auto& p : parts) rg = rg || p.requires_grad();
    if (tape && rg) {
        out.set_requires_grad(true);
        std::vector<Tensor<T>> ins = parts;
        Tensor<T> y = out;
        tape->record("concat_channels", {out}, [=]() mutable {
            const T* gout = y.grad();
            for (int64_t bi = 0; bi < b; ++bi) {
                int64_t coff = 0;
                for (auto& p : ins) {
                    const int64_t pc = p.dim(1);
                    if (p.requires_grad()) {
                        const T* src = gout + (bi * ctotal + coff) * h * w;
                        T* dst = p.grad() + bi * pc * h * w;
                        for (int64_t i = 0; i < pc * h * w; ++i) dst[i] += src[i];
                    }
                    coff += pc;
                }
            }
        });
    }
    return out;
}

// Mean of squared differences over all elements; returns a [1] tensor.
// Gradient w.r.t. pred is exactly 2*(pred-target)/numel.
template <typename T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ConfigError(strcat_("mse_loss shape mismatch: ", shape_str(pred.shape()), " vs ",
                                  shape_str(target.shape())));
    const int64_t n = pred.numel();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::from({1}, {acc / static_cast<T>(n)});
    if (tape && (pred.requires_grad() || target.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<T> a = pred, tgt = target, y = out;
        tape->record("mse_loss", {out}, [=]() mutable {
            const T g = y.grad()[0] * T(2) / static_cast<T>(n);
            if (a.requires_grad())
                for (int64_t i = 0; i < n; ++i) a.grad()[i] += g * (a.data()[i] - tgt.data()[i]);
            if (tgt.requires_grad())
                for (int64_t i = 0; i < n; ++i)
                    tgt.grad()[i] -= g * (a.data()[i] - tgt.data()[i]);
        });
    }
    return out;
}

// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
Tensor<T> global_avgpool(Tape<T>* tape, const Tensor<T>& input) {
    detail::check_4d(input, "global_avgpool input");
    const int64_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    Tensor<T> out = Tensor<T>::zeros({b, c});
    for (int64_t bc = 0; bc < b * c; ++bc) {
        const T* src = input.data() + bc * hw;
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i) acc += src[i];
        out.data()[bc] = acc / static_cast<T>(hw);
    }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        Tensor<T> x = input, y = out;
        tape->record("global_avgpool", {out}, [=]() mutable {
            const T scale = T(1) / static_cast<T>(hw);
            for (int64_t bc = 0; bc < b * c; ++bc) {
                const T g = y.grad()[bc] * scale;
                T* dst = x.grad() + bc * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

// x [B,F] * weight [N,F]^T + bias [N] -> [B,N]
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
    if (input.rank() != 2 || weight.rank() != 2)
        throw ConfigError("linear expects input [B,F] and weight [N,F]");
    const int64_t b = input.dim(0), f = input.dim(1), n = weight.dim(0);
    if (weight.dim(1) != f)
        throw ConfigError(strcat_("linear feature mismatch: input F=", f, ", weight F=",
                                  weight.dim(1)));
    if (bias.defined() && bias.numel() != n)
        throw ConfigError(strcat_("linear bias must be [", n, "]"));
    Tensor<T> out = Tensor<T>::zeros({b, n});
    detail::gemm_nt(b, n, f, input.data(), weight.data(), out.data());
    if (bias.defined())
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t j = 0; j < n; ++j) out.data()[bi * n + j] += bias.data()[j];
    const bool rg = input.requires_grad() || weight.requires_grad() ||
                    (bias.defined() && bias.requires_grad());
    if (tape && rg) {
        out.set_requires_grad(true);
        Tensor<T> x = input, wt = weight, bs = bias, y = out;
        tape->record("linear", {out}, [=]() mutable {
            const T* gout = y.grad();
            if (x.requires_grad()) detail::gemm_nn(b, f, n, gout, wt.data(), x.grad());
            if (wt.requires_grad()) detail::gemm_tn(n, f, b, gout, x.data(), wt.grad());
            if (bs.defined() && bs.requires_grad())
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t j = 0; j < n; ++j) bs.grad()[j] += gout[bi * n + j];
        });
    }
    return out;
}

}  // namespace fan
