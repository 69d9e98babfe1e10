#pragma once

#include "twins/conv.hpp"
#include "twins/ops.hpp"
#include "twins/rng.hpp"
#include "twins/tensor.hpp"

namespace twins {

// Additive logit mask value standing in for -inf; keeps softmax finite.
template <typename T>
constexpr T mask_fill();
template <>
constexpr float mask_fill<float>() { return -1e9f; }
template <>
constexpr double mask_fill<double>() { return -1e30; }

// Window tiling of an H x W token grid, including the zero padding
// applied to reach divisibility.
struct WindowGrid {
    std::size_t k1 = 0, k2 = 0;      // window height/width
    std::size_t m = 0, n = 0;        // window counts per axis
    std::size_t pad_h = 0, pad_w = 0;
};

template <typename T>
struct AttentionParams {
    std::size_t heads = 1;

    // fused layout (LSA): wqkv [C,3C]
    Tensor<T> wqkv, bqkv;
    // split layout (MHSA/GSA/SRA): wq [C,C], wkv [C,2C]
    Tensor<T> wq, bq, wkv, bkv;

    Tensor<T> wo, bo;  // output projection [C,C]

    // key/value sub-sampling; absent entirely when reduction == 1
    std::size_t reduction = 1;
    Tensor<T> sr_w, sr_b;  // [r,r,C,C] strided conv
    Tensor<T> sr_gamma, sr_beta;

    bool fused() const { return wqkv.valid(); }
    std::size_t channels() const { return wo.dim(0); }
};

namespace detail {

template <typename T>
inline Tensor<T> init_weight(Shape shape, SplitMix64& rng, double stddev = 0.02) {
    Tensor<T> t(std::move(shape), true);
    for (auto& v : t.vec()) v = T(rng.truncated_normal(stddev));
    return t;
}

template <typename T>
inline Tensor<T> zeros_param(Shape shape) {
    Tensor<T> t(std::move(shape), true);
    return t;
}

template <typename T>
inline Tensor<T> ones_param(Shape shape) {
    Tensor<T> t(std::move(shape), true);
    for (auto& v : t.vec()) v = T(1);
    return t;
}

}  // namespace detail

// Split-layout params; reduction > 1 adds the strided-conv summarizer.
template <typename T>
AttentionParams<T> make_attention_params(std::size_t channels, std::size_t heads,
                                         std::size_t reduction, SplitMix64& rng) {
    if (heads == 0 || channels % heads != 0)
        throw ShapeError("attention: channels " + std::to_string(channels) +
                         " not divisible by heads " + std::to_string(heads));
    AttentionParams<T> p;
    p.heads = heads;
    p.wq = detail::init_weight<T>({channels, channels}, rng);
    p.bq = detail::zeros_param<T>({channels});
    p.wkv = detail::init_weight<T>({channels, 2 * channels}, rng);
    p.bkv = detail::zeros_param<T>({2 * channels});
    p.wo = detail::init_weight<T>({channels, channels}, rng);
    p.bo = detail::zeros_param<T>({channels});
    p.reduction = reduction;
    if (reduction > 1) {
        p.sr_w = detail::init_weight<T>({reduction, reduction, channels, channels}, rng);
        p.sr_b = detail::zeros_param<T>({channels});
        p.sr_gamma = detail::ones_param<T>({channels});
        p.sr_beta = detail::zeros_param<T>({channels});
    }
    return p;
}

// Fused-QKV layout used by the windowed attention.
template <typename T>
AttentionParams<T> make_lsa_params(std::size_t channels, std::size_t heads, SplitMix64& rng) {
    if (heads == 0 || channels % heads != 0)
        throw ShapeError("attention: channels " + std::to_string(channels) +
                         " not divisible by heads " + std::to_string(heads));
    AttentionParams<T> p;
    p.heads = heads;
    p.wqkv = detail::init_weight<T>({channels, 3 * channels}, rng);
    p.bqkv = detail::zeros_param<T>({3 * channels});
    p.wo = detail::init_weight<T>({channels, channels}, rng);
    p.bo = detail::zeros_param<T>({channels});
    return p;
}

// Splits a fused-QKV parameter set into the equivalent split layout;
// column subsets of the fused weight, so outputs match bit for bit.
template <typename T>
AttentionParams<T> split_fused(const AttentionParams<T>& p) {
    if (!p.fused()) return p;
    const std::size_t C = p.wqkv.dim(0);
    AttentionParams<T> s;
    s.heads = p.heads;
    s.wq = crop(p.wqkv, {0, 0}, {C, C});
    s.bq = crop(p.bqkv, {0}, {C});
    s.wkv = crop(p.wqkv, {0, C}, {C, 2 * C});
    s.bkv = crop(p.bqkv, {C}, {2 * C});
    s.wo = p.wo;
    s.bo = p.bo;
    return s;
}

namespace detail {

// [B,N,C] -> [B,heads,N,hd]
template <typename T>
inline Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
    Tensor<T> r = reshape(x, {B, N, heads, C / heads});
    return permute(r, {0, 2, 1, 3});
}

// Scaled dot-product attention over pre-split projections.
// q,k,v: [B,N*,C]; optional additive mask [B,heads,Nq,Nk].
template <typename T>
Tensor<T> attend_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      std::size_t heads, const Tensor<T>& mask = {}) {
    const std::size_t B = q.dim(0), Nq = q.dim(1), C = q.dim(2);
    const std::size_t hd = C / heads;
    Tensor<T> qh = split_heads(q, heads);
    Tensor<T> kh = split_heads(k, heads);
    Tensor<T> vh = split_heads(v, heads);
    Tensor<T> logits;
    {
        AttnMacScope attn_macs;
        logits = matmul(qh, permute(kh, {0, 1, 3, 2}));
    }
    logits = scale(logits, T(1) / std::sqrt(T(hd)));
    if (mask.valid()) logits = add(logits, mask);
    Tensor<T> attn = softmax(logits, 3);
    Tensor<T> out;
    {
        AttnMacScope attn_macs;
        out = matmul(attn, vh);
    }
    out = permute(out, {0, 2, 1, 3});
    return reshape(out, {B, Nq, C});
}

}  // namespace detail

// Attention with queries from `q_src` and keys/values from `kv_src`
// (both token sequences [B,N,C]), split-layout projections.
template <typename T>
Tensor<T> attend(const Tensor<T>& q_src, const Tensor<T>& kv_src, const AttentionParams<T>& p,
                 const Tensor<T>& mask = {}) {
    const std::size_t C = q_src.dim(2);
    if (p.fused()) throw ShapeError("attend: expected split-layout params");
    if (p.wq.dim(0) != C)
        throw ShapeError("attend: params sized for C=" + std::to_string(p.wq.dim(0)) +
                         ", input has C=" + std::to_string(C));
    Tensor<T> q = linear(q_src, p.wq, p.bq);
    Tensor<T> kv = linear(kv_src, p.wkv, p.bkv);
    const std::size_t B = kv_src.dim(0), Nk = kv_src.dim(1);
    Tensor<T> k = crop(kv, {0, 0, 0}, {B, Nk, C});
    Tensor<T> v = crop(kv, {0, 0, C}, {B, Nk, C});
    Tensor<T> out = detail::attend_core(q, k, v, p.heads, mask);
    return linear(out, p.wo, p.bo);
}

// Standard multi-head self-attention over a token sequence [B,N,C].
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p) {
    if (x.ndim() != 3) throw ShapeError("mhsa: expected [B,N,C], got " + shape_str(x.shape()));
    return attend(x, x, p);
}

// Tiles [B,H,W,C] into windows [B*m*n, k1*k2, C], zero-padding H,W up
// to multiples of k1,k2. Lossless with window_unpartition.
// `pad_value` is a debug hook: masking must make the fill invisible to
// real-token outputs, and the neutrality check perturbs it to prove so.
template <typename T>
std::pair<Tensor<T>, WindowGrid> window_partition(const Tensor<T>& x, std::size_t k1,
                                                  std::size_t k2, T pad_value = T(0)) {
    if (x.ndim() != 4)
        throw ShapeError("window_partition: expected [B,H,W,C], got " + shape_str(x.shape()));
    if (k1 == 0 || k2 == 0) throw ShapeError("window_partition: window dims must be positive");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    WindowGrid g;
    g.k1 = k1;
    g.k2 = k2;
    g.m = (H + k1 - 1) / k1;
    g.n = (W + k2 - 1) / k2;
    g.pad_h = g.m * k1 - H;
    g.pad_w = g.n * k2 - W;
    Tensor<T> xp = x;
    if (g.pad_h || g.pad_w) {
        xp = pad_zeros(x, {0, 0, 0, 0}, {0, g.pad_h, g.pad_w, 0});
        if (pad_value != T(0)) {
            Tensor<T> fill(xp.shape());
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t y = 0; y < g.m * k1; ++y)
                    for (std::size_t xi = 0; xi < g.n * k2; ++xi)
                        if (y >= H || xi >= W) {
                            T* row = fill.data() + ((b * g.m * k1 + y) * g.n * k2 + xi) * C;
                            std::fill(row, row + C, pad_value);
                        }
            xp = add(xp, fill);
        }
    }
    Tensor<T> r = reshape(xp, {B, g.m, k1, g.n, k2, C});
    r = permute(r, {0, 1, 3, 2, 4, 5});
    return {reshape(r, {B * g.m * g.n, k1 * k2, C}), g};
}

template <typename T>
Tensor<T> window_unpartition(const Tensor<T>& windows, const WindowGrid& g, std::size_t B,
                             std::size_t H, std::size_t W) {
    if (windows.ndim() != 3 || windows.dim(0) != B * g.m * g.n ||
        windows.dim(1) != g.k1 * g.k2)
        throw ShapeError("window_unpartition: window tensor " + shape_str(windows.shape()) +
                         " inconsistent with grid");
    const std::size_t C = windows.dim(2);
    Tensor<T> r = reshape(windows, {B, g.m, g.n, g.k1, g.k2, C});
    r = permute(r, {0, 1, 3, 2, 4, 5});
    r = reshape(r, {B, g.m * g.k1, g.n * g.k2, C});
    if (g.pad_h || g.pad_w) r = crop(r, {0, 0, 0, 0}, {B, H, W, C});
    return r;
}

namespace detail {

// Additive mask excluding padded key positions, [G,heads,nw,nw].
template <typename T>
Tensor<T> window_pad_mask(const WindowGrid& g, std::size_t B, std::size_t H, std::size_t W,
                          std::size_t heads) {
    const std::size_t nw = g.k1 * g.k2;
    const std::size_t G = B * g.m * g.n;
    Tensor<T> mask({G, heads, nw, nw});
    T* mp = mask.data();
    const T fill = mask_fill<T>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t wi = 0; wi < g.m; ++wi)
            for (std::size_t wj = 0; wj < g.n; ++wj) {
                // key t is padding iff its grid position falls outside H x W
                std::vector<T> row(nw, T(0));
                bool any = false;
                for (std::size_t t = 0; t < nw; ++t) {
                    const std::size_t y = wi * g.k1 + t / g.k2;
                    const std::size_t x = wj * g.k2 + t % g.k2;
                    if (y >= H || x >= W) {
                        row[t] = fill;
                        any = true;
                    }
                }
                if (!any) continue;
                const std::size_t gi = (b * g.m + wi) * g.n + wj;
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t qp = 0; qp < nw; ++qp)
                        std::copy(row.begin(), row.end(),
                                  mp + ((gi * heads + h) * nw + qp) * nw);
            }
    return mask;
}

}  // namespace detail

// Locally-grouped self-attention: MHSA run independently inside each
// k1 x k2 window; padded keys are masked out of the softmax so padding
// never changes real-token outputs.
template <typename T>
Tensor<T> lsa(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t k1, std::size_t k2,
              T debug_pad_value = T(0)) {
    if (x.ndim() != 4) throw ShapeError("lsa: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (!p.fused()) throw ShapeError("lsa: expected fused-QKV params");
    if (p.wqkv.dim(0) != C)
        throw ShapeError("lsa: params sized for C=" + std::to_string(p.wqkv.dim(0)) +
                         ", input has C=" + std::to_string(C));
    auto [win, grid] = window_partition(x, k1, k2, debug_pad_value);
    const std::size_t G = win.dim(0), nw = win.dim(1);

    Tensor<T> qkv = linear(win, p.wqkv, p.bqkv);  // [G,nw,3C]
    Tensor<T> q = crop(qkv, {0, 0, 0}, {G, nw, C});
    Tensor<T> k = crop(qkv, {0, 0, C}, {G, nw, C});
    Tensor<T> v = crop(qkv, {0, 0, 2 * C}, {G, nw, C});

    Tensor<T> mask;
    if (grid.pad_h || grid.pad_w)
        mask = detail::window_pad_mask<T>(grid, B, H, W, p.heads);

    Tensor<T> out = detail::attend_core(q, k, v, p.heads, mask);
    out = linear(out, p.wo, p.bo);
    return window_unpartition(out, grid, B, H, W);
}

// Global sub-sampled attention: queries from every token, keys/values
// from an r-strided conv summary of the grid (layer-normalized).
// r == 1 bypasses sub-sampling entirely, so gsa == mhsa exactly.
template <typename T>
Tensor<T> gsa(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t r) {
    if (x.ndim() != 4) throw ShapeError("gsa: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (r == 0) throw ShapeError("gsa: ratio must be positive");
    if (r > std::max(H, W))
        throw ShapeError("gsa: ratio " + std::to_string(r) + " exceeds grid " +
                         std::to_string(H) + "x" + std::to_string(W));
    Tensor<T> tokens = reshape(x, {B, H * W, C});
    if (r == 1) {
        Tensor<T> out = attend(tokens, tokens, p);
        return reshape(out, {B, H, W, C});
    }
    if (!p.sr_w.valid()) throw ShapeError("gsa: params lack sub-sampling conv for r > 1");
    const std::size_t Hp = (H + r - 1) / r * r;
    const std::size_t Wp = (W + r - 1) / r * r;
    Tensor<T> xp = x;
    if (Hp != H || Wp != W) xp = pad_zeros(x, {0, 0, 0, 0}, {0, Hp - H, Wp - W, 0});
    Tensor<T> red = conv2d(xp, p.sr_w, p.sr_b, /*stride=*/r, /*pad=*/0, /*groups=*/1);
    red = reshape(red, {B, (Hp / r) * (Wp / r), C});
    red = layer_norm(red, p.sr_gamma, p.sr_beta);
    Tensor<T> out = attend(tokens, red, p);
    return reshape(out, {B, H, W, C});
}

// PVT-style spatial-reduction attention: same mechanism as gsa, named
// separately so the PCPVT and SVT configurations stay distinct.
template <typename T>
Tensor<T> sra(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t ratio) {
    return gsa(x, p, ratio);
}

}  // namespace twins
