#pragma once

#include "twins/attention.hpp"

namespace twins {

enum class BlockKind { Lsa, Gsa, Sra };

inline char block_letter(BlockKind k) {
    switch (k) {
        case BlockKind::Lsa: return 'L';
        case BlockKind::Gsa: return 'G';
        case BlockKind::Sra: return 'S';
    }
    return '?';
}

template <typename T>
struct FfnParams {
    Tensor<T> w1, b1;  // [C, E*C]
    Tensor<T> w2, b2;  // [E*C, C]
};

template <typename T>
FfnParams<T> make_ffn_params(std::size_t channels, std::size_t mlp_ratio, SplitMix64& rng) {
    FfnParams<T> f;
    f.w1 = detail::init_weight<T>({channels, mlp_ratio * channels}, rng);
    f.b1 = detail::zeros_param<T>({mlp_ratio * channels});
    f.w2 = detail::init_weight<T>({mlp_ratio * channels, channels}, rng);
    f.b2 = detail::zeros_param<T>({channels});
    return f;
}

// linear -> gelu -> linear over tokens [B,N,C]
template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& f) {
    return linear(gelu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

// One pre-norm residual encoder block: attention sub-layer then FFN
// sub-layer, each wrapped as x + f(LayerNorm(x)).
template <typename T>
struct EncoderBlock {
    BlockKind kind = BlockKind::Gsa;
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> ln2_gamma, ln2_beta;
    AttentionParams<T> attn;
    std::size_t k1 = 0, k2 = 0;   // LSA window
    std::size_t reduction = 1;    // GSA/SRA ratio
    FfnParams<T> mlp;
};

template <typename T>
EncoderBlock<T> make_encoder_block(BlockKind kind, std::size_t channels, std::size_t heads,
                                   std::size_t mlp_ratio, std::size_t k1, std::size_t k2,
                                   std::size_t reduction, SplitMix64& rng) {
    EncoderBlock<T> b;
    b.kind = kind;
    b.ln1_gamma = detail::ones_param<T>({channels});
    b.ln1_beta = detail::zeros_param<T>({channels});
    b.ln2_gamma = detail::ones_param<T>({channels});
    b.ln2_beta = detail::zeros_param<T>({channels});
    if (kind == BlockKind::Lsa) {
        if (k1 == 0 || k2 == 0) throw ShapeError("encoder_block: LSA requires a window");
        b.attn = make_lsa_params<T>(channels, heads, rng);
        b.k1 = k1;
        b.k2 = k2;
    } else {
        if (reduction == 0) throw ShapeError("encoder_block: GSA/SRA requires ratio >= 1");
        b.attn = make_attention_params<T>(channels, heads, reduction, rng);
        b.reduction = reduction;
    }
    b.mlp = make_ffn_params<T>(channels, mlp_ratio, rng);
    return b;
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const EncoderBlock<T>& blk) {
    if (x.ndim() != 4)
        throw ShapeError("encoder_block: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor<T> n1 = layer_norm(x, blk.ln1_gamma, blk.ln1_beta);
    Tensor<T> a;
    switch (blk.kind) {
        case BlockKind::Lsa: a = lsa(n1, blk.attn, blk.k1, blk.k2); break;
        case BlockKind::Gsa: a = gsa(n1, blk.attn, blk.reduction); break;
        case BlockKind::Sra: a = sra(n1, blk.attn, blk.reduction); break;
    }
    Tensor<T> z = add(x, a);
    Tensor<T> n2 = layer_norm(z, blk.ln2_gamma, blk.ln2_beta);
    Tensor<T> tokens = reshape(n2, {B, H * W, C});
    Tensor<T> f = reshape(ffn(tokens, blk.mlp), {B, H, W, C});
    return add(z, f);
}

// Position encoding generator: residual depthwise 3x3 conv, so the
// positional signal is conditioned on the input and the module is
// near-identity at init.
template <typename T>
struct PegParams {
    Tensor<T> w;  // [3,3,1,C] depthwise
    Tensor<T> b;  // [C]
};

template <typename T>
PegParams<T> make_peg_params(std::size_t channels, SplitMix64& rng) {
    PegParams<T> p;
    p.w = detail::init_weight<T>({3, 3, 1, channels}, rng);
    p.b = detail::zeros_param<T>({channels});
    return p;
}

template <typename T>
Tensor<T> peg(const Tensor<T>& x, const PegParams<T>& p, PadMode mode = PadMode::Zero) {
    if (x.ndim() != 4) throw ShapeError("peg: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t C = x.dim(3);
    return add(x, conv2d(x, p.w, p.b, /*stride=*/1, /*pad=*/1, /*groups=*/C, mode));
}

// Strided patchify conv (kernel == stride == P) plus layer norm over
// channels; pads H,W up to multiples of P.
template <typename T>
struct PatchEmbedParams {
    std::size_t patch = 0;
    Tensor<T> w;  // [P,P,Cin,Cout]
    Tensor<T> b;  // [Cout]
    Tensor<T> ln_gamma, ln_beta;
};

template <typename T>
PatchEmbedParams<T> make_patch_embed_params(std::size_t patch, std::size_t in_channels,
                                            std::size_t out_channels, SplitMix64& rng) {
    PatchEmbedParams<T> p;
    p.patch = patch;
    p.w = detail::init_weight<T>({patch, patch, in_channels, out_channels}, rng);
    p.b = detail::zeros_param<T>({out_channels});
    p.ln_gamma = detail::ones_param<T>({out_channels});
    p.ln_beta = detail::zeros_param<T>({out_channels});
    return p;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const PatchEmbedParams<T>& p) {
    if (x.ndim() != 4)
        throw ShapeError("patch_embed: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t P = p.patch;
    const std::size_t Hp = (H + P - 1) / P * P;
    const std::size_t Wp = (W + P - 1) / P * P;
    Tensor<T> xp = x;
    if (Hp != H || Wp != W) xp = pad_zeros(x, {0, 0, 0, 0}, {0, Hp - H, Wp - W, 0});
    Tensor<T> y = conv2d(xp, p.w, p.b, /*stride=*/P, /*pad=*/0, /*groups=*/1);
    return layer_norm(y, p.ln_gamma, p.ln_beta);
}

// Classification head replacing the class token: layer norm, global
// average pool over tokens, linear to classes.
template <typename T>
struct HeadParams {
    Tensor<T> ln_gamma, ln_beta;
    Tensor<T> w;  // [C, num_classes]
    Tensor<T> b;  // [num_classes]
};

template <typename T>
HeadParams<T> make_head_params(std::size_t channels, std::size_t num_classes, SplitMix64& rng) {
    HeadParams<T> h;
    h.ln_gamma = detail::ones_param<T>({channels});
    h.ln_beta = detail::zeros_param<T>({channels});
    h.w = detail::init_weight<T>({channels, num_classes}, rng);
    h.b = detail::zeros_param<T>({num_classes});
    return h;
}

template <typename T>
Tensor<T> classify_head(const Tensor<T>& x, const HeadParams<T>& h) {
    if (x.ndim() != 4)
        throw ShapeError("classify_head: expected [B,H,W,C], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), N = x.dim(1) * x.dim(2), C = x.dim(3);
    Tensor<T> tokens = reshape(x, {B, N, C});
    Tensor<T> normed = layer_norm(tokens, h.ln_gamma, h.ln_beta);
    return linear(global_avg_pool(normed), h.w, h.b);
}

}  // namespace twins
