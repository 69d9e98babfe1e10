#pragma once

#include <cmath>
#include <cstddef>

#include "twins/counters.hpp"
#include "twins/tensor.hpp"

namespace twins {

namespace detail {

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// C[M,N] += A[M,K] * B[K,N], row-major, ikj order.
template <typename T>
inline void mm_accum(T* c, const T* a, const T* b, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* crow = c + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + k * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA[M,K] += dY[M,N] * B[K,N]^T
template <typename T>
inline void mm_accum_bt(T* da, const T* dy, const T* b, std::size_t M, std::size_t K,
                        std::size_t N) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* dyrow = dy + i * N;
        T* darow = da + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T* brow = b + k * N;
            T acc = T(0);
            for (std::size_t j = 0; j < N; ++j) acc += dyrow[j] * brow[j];
            darow[k] += acc;
        }
    }
}

// dB[K,N] += A[M,K]^T * dY[M,N]
template <typename T>
inline void mm_accum_at(T* db, const T* a, const T* dy, std::size_t M, std::size_t K,
                        std::size_t N) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        const T* dyrow = dy + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = arow[k];
            T* dbrow = db + k * N;
            for (std::size_t j = 0; j < N; ++j) dbrow[j] += av * dyrow[j];
        }
    }
}

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.vec());
    const T* bp = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
    auto pa = a.impl();
    auto pb = b.impl();
    return detail::make_op<T>("add", a.shape(), std::move(out), {a, b},
                              [pa, pb](TensorImpl<T>& self) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                      pa->grad[i] += self.grad[i];
                                      pb->grad[i] += self.grad[i];
                                  }
                              });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    const T* ap = a.data();
    const T* bp = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] * bp[i];
    auto pa = a.impl();
    auto pb = b.impl();
    return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                              [pa, pb](TensorImpl<T>& self) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                      pa->grad[i] += self.grad[i] * pb->data[i];
                                      pb->grad[i] += self.grad[i] * pa->data[i];
                                  }
                              });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    const T* ap = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] * c;
    auto pa = a.impl();
    return detail::make_op<T>("scale", a.shape(), std::move(out), {a},
                              [pa, c](TensorImpl<T>& self) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa->grad[i] += self.grad[i] * c;
                              });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> out(a.size());
    const T* ap = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ap[i] + c;
    auto pa = a.impl();
    return detail::make_op<T>("add_scalar", a.shape(), std::move(out), {a},
                              [pa](TensorImpl<T>& self) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa->grad[i] += self.grad[i];
                              });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (const T& v : a.vec()) acc += v;
    auto pa = a.impl();
    return detail::make_op<T>("sum", Shape{1}, std::vector<T>{acc}, {a},
                              [pa](TensorImpl<T>& self) {
                                  const T g = self.grad[0];
                                  for (auto& gv : pa->grad) gv += g;
                              });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    static const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    static const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
    std::vector<T> out(x.size());
    const T* xp = x.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = T(0.5) * xp[i] * (T(1) + std::erf(xp[i] * inv_sqrt2));
    auto px = x.impl();
    return detail::make_op<T>("gelu", x.shape(), std::move(out), {x},
                              [px](TensorImpl<T>& self) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                      const T v = px->data[i];
                                      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                                      const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt2pi;
                                      px->grad[i] += self.grad[i] * (cdf + v * pdf);
                                  }
                              });
}

// ---------------------------------------------------------------------------
// shape surgery (gradients route by index mapping)

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    auto px = x.impl();
    return detail::make_op<T>(
        "reshape", std::move(new_shape), std::vector<T>(x.vec()), {x},
        [px](TensorImpl<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        },
        /*finite_check=*/false);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const Shape& in = x.shape();
    if (axes.size() != in.size()) throw ShapeError("permute: axes rank mismatch");
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= in.size()) throw ShapeError("permute: axis out of range");
        out_shape[i] = in[axes[i]];
    }
    auto in_strides = detail::strides_of(in);
    // stride of output axis i in the input buffer
    std::vector<std::size_t> gather(in.size());
    for (std::size_t i = 0; i < axes.size(); ++i) gather[i] = in_strides[axes[i]];

    const std::size_t n = x.size();
    const std::size_t rank = in.size();
    std::vector<T> out(n);
    std::vector<std::size_t> idx(rank, 0);
    const T* xp = x.data();
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        out[o] = xp[src];
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                src += gather[ax];
                break;
            }
            src -= gather[ax] * (out_shape[ax] - 1);
            idx[ax] = 0;
        }
    }
    auto px = x.impl();
    return detail::make_op<T>(
        "permute", std::move(out_shape), std::move(out), {x},
        [px, gather, shp = x.shape(), axes](TensorImpl<T>& self) {
            const std::size_t rank = shp.size();
            Shape oshape = self.shape;
            std::vector<std::size_t> idx(rank, 0);
            std::size_t src = 0;
            for (std::size_t o = 0; o < self.grad.size(); ++o) {
                px->grad[src] += self.grad[o];
                for (std::size_t ax = rank; ax-- > 0;) {
                    if (++idx[ax] < oshape[ax]) {
                        src += gather[ax];
                        break;
                    }
                    src -= gather[ax] * (oshape[ax] - 1);
                    idx[ax] = 0;
                }
            }
        },
        /*finite_check=*/false);
}

// Zero-pads axis by axis: out[ax] = before[ax] + in[ax] + after[ax].
template <typename T>
Tensor<T> pad_zeros(const Tensor<T>& x, const std::vector<std::size_t>& before,
                    const std::vector<std::size_t>& after) {
    const Shape& in = x.shape();
    if (before.size() != in.size() || after.size() != in.size())
        throw ShapeError("pad_zeros: pad spec rank mismatch");
    Shape out_shape(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = before[i] + in[i] + after[i];
    auto out_strides = detail::strides_of(out_shape);

    std::vector<T> out(numel(out_shape), T(0));
    const std::size_t rank = in.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t dst = 0;
    for (std::size_t i = 0; i < rank; ++i) dst += before[i] * out_strides[i];
    const T* xp = x.data();
    for (std::size_t s = 0; s < x.size(); ++s) {
        out[dst] = xp[s];
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < in[ax]) {
                dst += out_strides[ax];
                break;
            }
            dst -= out_strides[ax] * (in[ax] - 1);
            idx[ax] = 0;
        }
    }
    auto px = x.impl();
    return detail::make_op<T>(
        "pad_zeros", std::move(out_shape), std::move(out), {x},
        [px, before, in, out_strides](TensorImpl<T>& self) {
            const std::size_t rank = in.size();
            std::vector<std::size_t> idx(rank, 0);
            std::size_t dst = 0;
            for (std::size_t i = 0; i < rank; ++i) dst += before[i] * out_strides[i];
            for (std::size_t s = 0; s < px->grad.size(); ++s) {
                px->grad[s] += self.grad[dst];
                for (std::size_t ax = rank; ax-- > 0;) {
                    if (++idx[ax] < in[ax]) {
                        dst += out_strides[ax];
                        break;
                    }
                    dst -= out_strides[ax] * (in[ax] - 1);
                    idx[ax] = 0;
                }
            }
        },
        /*finite_check=*/false);
}

// N-d slice: out[ax] = size[ax] starting at start[ax].
template <typename T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<std::size_t>& start,
               const std::vector<std::size_t>& size) {
    const Shape& in = x.shape();
    if (start.size() != in.size() || size.size() != in.size())
        throw ShapeError("crop: spec rank mismatch");
    for (std::size_t i = 0; i < in.size(); ++i)
        if (start[i] + size[i] > in[i])
            throw ShapeError("crop: region exceeds input " + shape_str(in));
    auto in_strides = detail::strides_of(in);
    Shape out_shape(size);

    const std::size_t rank = in.size();
    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += start[i] * in_strides[i];
    const T* xp = x.data();
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = xp[src];
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < size[ax]) {
                src += in_strides[ax];
                break;
            }
            src -= in_strides[ax] * (size[ax] - 1);
            idx[ax] = 0;
        }
    }
    auto px = x.impl();
    return detail::make_op<T>(
        "crop", std::move(out_shape), std::move(out), {x},
        [px, start, size, in_strides](TensorImpl<T>& self) {
            const std::size_t rank = size.size();
            std::vector<std::size_t> idx(rank, 0);
            std::size_t src = 0;
            for (std::size_t i = 0; i < rank; ++i) src += start[i] * in_strides[i];
            for (std::size_t o = 0; o < self.grad.size(); ++o) {
                px->grad[src] += self.grad[o];
                for (std::size_t ax = rank; ax-- > 0;) {
                    if (++idx[ax] < size[ax]) {
                        src += in_strides[ax];
                        break;
                    }
                    src -= in_strides[ax] * (size[ax] - 1);
                    idx[ax] = 0;
                }
            }
        },
        /*finite_check=*/false);
}

// ---------------------------------------------------------------------------
// contractions

// Batched matmul. Either both operands share identical leading batch
// dims, or `b` is a plain 2-D matrix applied to every batch of `a`.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(sa) +
                         " and " + shape_str(sb));
    const std::size_t M = sa[sa.size() - 2];
    const std::size_t K = sa[sa.size() - 1];
    const bool b_is_matrix = (sb.size() == 2);
    if (!b_is_matrix) {
        if (sb.size() != sa.size() ||
            !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
            throw ShapeError("matmul: batch dims differ, " + shape_str(sa) + " vs " +
                             shape_str(sb));
    }
    if (sb[sb.size() - 2] != K)
        throw ShapeError("matmul: inner dims disagree, " + shape_str(sa) + " vs " +
                         shape_str(sb));
    const std::size_t N = sb[sb.size() - 1];
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(N);
    std::vector<T> out(batch * M * N, T(0));
    const T* ap = a.data();
    const T* bp = b.data();
    for (std::size_t g = 0; g < batch; ++g)
        detail::mm_accum(out.data() + g * M * N, ap + g * M * K,
                         b_is_matrix ? bp : bp + g * K * N, M, K, N);
    detail::add_macs(mac_t(batch) * M * K * N);

    auto pa = a.impl();
    auto pb = b.impl();
    return detail::make_op<T>(
        "matmul", std::move(out_shape), std::move(out), {a, b},
        [pa, pb, batch, M, K, N, b_is_matrix](TensorImpl<T>& self) {
            const T* dy = self.grad.data();
            for (std::size_t g = 0; g < batch; ++g) {
                const T* bg = b_is_matrix ? pb->data.data() : pb->data.data() + g * K * N;
                T* dbg = b_is_matrix ? pb->grad.data() : pb->grad.data() + g * K * N;
                detail::mm_accum_bt(pa->grad.data() + g * M * K, dy + g * M * N, bg, M, K, N);
                detail::mm_accum_at(dbg, pa->data.data() + g * M * K, dy + g * M * N, M, K, N);
            }
        });
}

// Affine map over the last axis: y = x.W + b, x:[...,in], W:[in,out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sw.size() != 2)
        throw ShapeError("linear: weight must be 2-D, got " + shape_str(sw));
    if (sx.empty() || sx.back() != sw[0])
        throw ShapeError("linear: input " + shape_str(sx) + " incompatible with weight " +
                         shape_str(sw));
    const std::size_t in = sw[0], out_f = sw[1];
    const std::size_t rows = x.size() / in;
    if (b.valid() && (b.ndim() != 1 || b.dim(0) != out_f))
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " != [" +
                         std::to_string(out_f) + "]");

    Shape out_shape(sx.begin(), sx.end() - 1);
    out_shape.push_back(out_f);
    std::vector<T> out(rows * out_f, T(0));
    if (b.valid()) {
        const T* bp = b.data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(bp, bp + out_f, out.data() + r * out_f);
    }
    detail::mm_accum(out.data(), x.data(), w.data(), rows, in, out_f);
    detail::add_macs(mac_t(rows) * in * out_f);

    auto px = x.impl();
    auto pw = w.impl();
    auto pbias = b.valid() ? b.impl() : nullptr;
    return detail::make_op<T>(
        "linear", std::move(out_shape), std::move(out), {x, w, b},
        [px, pw, pbias, rows, in, out_f](TensorImpl<T>& self) {
            const T* dy = self.grad.data();
            detail::mm_accum_bt(px->grad.data(), dy, pw->data.data(), rows, in, out_f);
            detail::mm_accum_at(pw->grad.data(), px->data.data(), dy, rows, in, out_f);
            if (pbias) {
                T* db = pbias->grad.data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_f; ++j) db[j] += dy[r * out_f + j];
            }
        });
}

// ---------------------------------------------------------------------------
// normalization / attention scalars

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("softmax: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];

    std::vector<T> out(x.size());
    const T* xp = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = xp[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xp[base + l * inner]);
            T denom = T(0);
            for (std::size_t l = 0; l < len; ++l) {
                const T e = std::exp(xp[base + l * inner] - mx);
                out[base + l * inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
        }
    }
    auto px = x.impl();
    return detail::make_op<T>(
        "softmax", x.shape(), std::move(out), {x},
        [px, outer, inner, len](TensorImpl<T>& self) {
            const T* y = self.data.data();
            const T* dy = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    T dot = T(0);
                    for (std::size_t l = 0; l < len; ++l)
                        dot += dy[base + l * inner] * y[base + l * inner];
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t ix = base + l * inner;
                        px->grad[ix] += y[ix] * (dy[ix] - dot);
                    }
                }
            }
        });
}

// Normalizes the last axis to zero mean / unit variance, then applies
// the gamma/beta affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t C = s.back();
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        throw ShapeError("layer_norm: affine params do not match channel dim " +
                         std::to_string(C));
    const std::size_t rows = x.size() / C;

    std::vector<T> out(x.size());
    std::vector<T> mean(rows), rstd(rows);
    const T* xp = x.data();
    const T* gp = gamma.data();
    const T* bp = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xp + r * C;
        T mu = T(0);
        for (std::size_t c = 0; c < C; ++c) mu += row[c];
        mu /= T(C);
        T var = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            const T d = row[c] - mu;
            var += d * d;
        }
        var /= T(C);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        T* orow = out.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) orow[c] = (row[c] - mu) * rs * gp[c] + bp[c];
    }
    auto px = x.impl();
    auto pg = gamma.impl();
    auto pb = beta.impl();
    return detail::make_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [px, pg, pb, rows, C, mean = std::move(mean), rstd = std::move(rstd)](
            TensorImpl<T>& self) {
            const T* dy = self.grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xrow = px->data.data() + r * C;
                const T* dyrow = dy + r * C;
                const T mu = mean[r], rs = rstd[r];
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (std::size_t c = 0; c < C; ++c) {
                    const T xhat = (xrow[c] - mu) * rs;
                    const T dxhat = dyrow[c] * pg->data[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    pg->grad[c] += dyrow[c] * xhat;
                    pb->grad[c] += dyrow[c];
                }
                const T invC = T(1) / T(C);
                for (std::size_t c = 0; c < C; ++c) {
                    const T xhat = (xrow[c] - mu) * rs;
                    const T dxhat = dyrow[c] * pg->data[c];
                    px->grad[r * C + c] +=
                        rs * (dxhat - invC * sum_dxhat - xhat * invC * sum_dxhat_xhat);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// pooling

// kernel==stride pooling over an NHWC map (the only flavor the models
// need); geometry must divide exactly.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("avg_pool2d: expected [B,H,W,C], got " + shape_str(s));
    const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
    if (k == 0 || stride == 0 || H < k || W < k)
        throw ShapeError("avg_pool2d: kernel does not fit input " + shape_str(s));
    const std::size_t Ho = (H - k) / stride + 1;
    const std::size_t Wo = (W - k) / stride + 1;
    std::vector<T> out(B * Ho * Wo * C, T(0));
    const T* xp = x.data();
    const T inv = T(1) / T(k * k);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                T* orow = out.data() + ((b * Ho + oy) * Wo + ox) * C;
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const T* irow =
                            xp + ((b * H + oy * stride + ky) * W + ox * stride + kx) * C;
                        for (std::size_t c = 0; c < C; ++c) orow[c] += irow[c] * inv;
                    }
            }
    auto px = x.impl();
    return detail::make_op<T>(
        "avg_pool2d", Shape{B, Ho, Wo, C}, std::move(out), {x},
        [px, B, H, W, C, Ho, Wo, k, stride, inv](TensorImpl<T>& self) {
            const T* dy = self.grad.data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const T* drow = dy + ((b * Ho + oy) * Wo + ox) * C;
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                T* grow = px->grad.data() +
                                          ((b * H + oy * stride + ky) * W + ox * stride + kx) * C;
                                for (std::size_t c = 0; c < C; ++c) grow[c] += drow[c] * inv;
                            }
                    }
        });
}

// Mean over all tokens: [B,N,C] -> [B,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError("global_avg_pool: expected [B,N,C], got " + shape_str(s));
    const std::size_t B = s[0], N = s[1], C = s[2];
    std::vector<T> out(B * C, T(0));
    const T* xp = x.data();
    const T inv = T(1) / T(N);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) out[b * C + c] += xp[(b * N + n) * C + c] * inv;
    auto px = x.impl();
    return detail::make_op<T>("global_avg_pool", Shape{B, C}, std::move(out), {x},
                              [px, B, N, C, inv](TensorImpl<T>& self) {
                                  const T* dy = self.grad.data();
                                  for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t n = 0; n < N; ++n)
                                          for (std::size_t c = 0; c < C; ++c)
                                              px->grad[(b * N + n) * C + c] += dy[b * C + c] * inv;
                              });
}

// ---------------------------------------------------------------------------
// loss

// Mean softmax cross-entropy over a batch of logit rows.
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy: expected [B,K], got " + shape_str(s));
    const std::size_t B = s[0], K = s[1];
    if (labels.size() != B) throw ShapeError("cross_entropy: label count != batch");
    for (int l : labels)
        if (l < 0 || std::size_t(l) >= K) throw ShapeError("cross_entropy: label out of range");

    const T* xp = logits.data();
    T loss = T(0);
    std::vector<T> lse(B);
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = xp + b * K;
        T mx = row[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = T(0);
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        lse[b] = mx + std::log(denom);
        loss += lse[b] - row[labels[b]];
    }
    loss /= T(B);
    auto px = logits.impl();
    return detail::make_op<T>(
        "cross_entropy", Shape{1}, std::vector<T>{loss}, {logits},
        [px, labels, B, K, lse = std::move(lse)](TensorImpl<T>& self) {
            const T g = self.grad[0] / T(B);
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = px->data.data() + b * K;
                T* grow = px->grad.data() + b * K;
                for (std::size_t k = 0; k < K; ++k) {
                    T p = std::exp(row[k] - lse[b]);
                    grow[k] += g * (p - (int(k) == labels[b] ? T(1) : T(0)));
                }
            }
        });
}

}  // namespace twins
