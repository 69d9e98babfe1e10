#pragma once

#include <nlohmann/json.hpp>

#include "twins/model.hpp"

namespace twins {

// ---------------------------------------------------------------------------
// independent float64 oracles (naive loops only; nothing here touches
// the library's attention or conv kernels)

namespace oracle {

// y = x.W + b over rows, naive
inline std::vector<double> ref_linear(const std::vector<double>& x, std::size_t rows,
                                      std::size_t in, const std::vector<double>& w,
                                      std::size_t out, const std::vector<double>& b) {
    std::vector<double> y(rows * out, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) {
            double acc = b.empty() ? 0.0 : b[j];
            for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + j];
            y[r * out + j] = acc;
        }
    return y;
}

// Per-head scaled dot-product attention by direct formula.
// q: [Nq,C] and k,v: [Nk,C] already projected.
inline std::vector<double> ref_attention(const std::vector<double>& q, std::size_t Nq,
                                         const std::vector<double>& k,
                                         const std::vector<double>& v, std::size_t Nk,
                                         std::size_t C, std::size_t heads) {
    const std::size_t hd = C / heads;
    const double scale = 1.0 / std::sqrt(double(hd));
    std::vector<double> out(Nq * C, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < Nq; ++i) {
            std::vector<double> logits(Nk);
            double mx = -1e300;
            for (std::size_t j = 0; j < Nk; ++j) {
                double dot = 0;
                for (std::size_t c = 0; c < hd; ++c)
                    dot += q[i * C + h * hd + c] * k[j * C + h * hd + c];
                logits[j] = dot * scale;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0;
            for (std::size_t j = 0; j < Nk; ++j) {
                logits[j] = std::exp(logits[j] - mx);
                denom += logits[j];
            }
            for (std::size_t j = 0; j < Nk; ++j) {
                const double a = logits[j] / denom;
                for (std::size_t c = 0; c < hd; ++c)
                    out[i * C + h * hd + c] += a * v[j * C + h * hd + c];
            }
        }
    }
    return out;
}

// Split-layout projections + attention + output projection; the
// reference for MHSA/GSA/SRA given the already chosen kv tokens.
inline std::vector<double> ref_attend(const std::vector<double>& q_tokens, std::size_t Nq,
                                      const std::vector<double>& kv_tokens, std::size_t Nk,
                                      const AttentionParams<double>& p) {
    const std::size_t C = p.wq.dim(0);
    auto q = ref_linear(q_tokens, Nq, C, p.wq.vec(), C, p.bq.vec());
    auto kv = ref_linear(kv_tokens, Nk, C, p.wkv.vec(), 2 * C, p.bkv.vec());
    std::vector<double> k(Nk * C), v(Nk * C);
    for (std::size_t j = 0; j < Nk; ++j)
        for (std::size_t c = 0; c < C; ++c) {
            k[j * C + c] = kv[j * 2 * C + c];
            v[j * C + c] = kv[j * 2 * C + C + c];
        }
    auto attn = ref_attention(q, Nq, k, v, Nk, C, p.heads);
    return ref_linear(attn, Nq, C, p.wo.vec(), C, p.bo.vec());
}

// Windowed attention as masked global attention: each real token
// attends exactly to the real tokens sharing its k1 x k2 window.
inline std::vector<double> ref_lsa(const std::vector<double>& x, std::size_t H, std::size_t W,
                                   std::size_t C, const AttentionParams<double>& p,
                                   std::size_t k1, std::size_t k2) {
    // split fused columns by hand
    const std::vector<double>& wqkv = p.wqkv.vec();
    const std::vector<double>& bqkv = p.bqkv.vec();
    std::vector<double> wq(C * C), wk(C * C), wv(C * C), bq(C), bk(C), bv(C);
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
            wq[i * C + j] = wqkv[i * 3 * C + j];
            wk[i * C + j] = wqkv[i * 3 * C + C + j];
            wv[i * C + j] = wqkv[i * 3 * C + 2 * C + j];
        }
    for (std::size_t j = 0; j < C; ++j) {
        bq[j] = bqkv[j];
        bk[j] = bqkv[C + j];
        bv[j] = bqkv[2 * C + j];
    }
    const std::size_t N = H * W;
    auto q = ref_linear(x, N, C, wq, C, bq);
    auto k = ref_linear(x, N, C, wk, C, bk);
    auto v = ref_linear(x, N, C, wv, C, bv);

    std::vector<double> attn_out(N * C, 0.0);
    const std::size_t m = (H + k1 - 1) / k1, n = (W + k2 - 1) / k2;
    for (std::size_t wi = 0; wi < m; ++wi)
        for (std::size_t wj = 0; wj < n; ++wj) {
            std::vector<std::size_t> members;
            for (std::size_t y = wi * k1; y < std::min(H, (wi + 1) * k1); ++y)
                for (std::size_t xx = wj * k2; xx < std::min(W, (wj + 1) * k2); ++xx)
                    members.push_back(y * W + xx);
            const std::size_t nw = members.size();
            std::vector<double> qw(nw * C), kw(nw * C), vw(nw * C);
            for (std::size_t t = 0; t < nw; ++t)
                for (std::size_t c = 0; c < C; ++c) {
                    qw[t * C + c] = q[members[t] * C + c];
                    kw[t * C + c] = k[members[t] * C + c];
                    vw[t * C + c] = v[members[t] * C + c];
                }
            auto ow = ref_attention(qw, nw, kw, vw, nw, C, p.heads);
            for (std::size_t t = 0; t < nw; ++t)
                for (std::size_t c = 0; c < C; ++c) attn_out[members[t] * C + c] = ow[t * C + c];
        }
    return ref_linear(attn_out, N, C, p.wo.vec(), C, p.bo.vec());
}

// Explicitly materialized K/V summary: zero-pad to multiples of r,
// naive strided conv, naive layer norm, then attention.
inline std::vector<double> ref_gsa(const std::vector<double>& x, std::size_t H, std::size_t W,
                                   std::size_t C, const AttentionParams<double>& p,
                                   std::size_t r) {
    const std::size_t N = H * W;
    if (r == 1) return ref_attend(x, N, x, N, p);
    const std::size_t Hp = (H + r - 1) / r * r, Wp = (W + r - 1) / r * r;
    const std::size_t hr = Hp / r, wr = Wp / r;
    const std::vector<double>& w = p.sr_w.vec();  // [r,r,C,C]
    const std::vector<double>& b = p.sr_b.vec();
    std::vector<double> red(hr * wr * C, 0.0);
    for (std::size_t oy = 0; oy < hr; ++oy)
        for (std::size_t ox = 0; ox < wr; ++ox)
            for (std::size_t co = 0; co < C; ++co) {
                double acc = b[co];
                for (std::size_t ky = 0; ky < r; ++ky)
                    for (std::size_t kx = 0; kx < r; ++kx) {
                        const std::size_t y = oy * r + ky, xx = ox * r + kx;
                        if (y >= H || xx >= W) continue;  // zero padding
                        for (std::size_t ci = 0; ci < C; ++ci)
                            acc += x[(y * W + xx) * C + ci] *
                                   w[((ky * r + kx) * C + ci) * C + co];
                    }
                red[(oy * wr + ox) * C + co] = acc;
            }
    // naive layer norm over channels
    const std::vector<double>& g = p.sr_gamma.vec();
    const std::vector<double>& beta = p.sr_beta.vec();
    for (std::size_t t = 0; t < hr * wr; ++t) {
        double mu = 0;
        for (std::size_t c = 0; c < C; ++c) mu += red[t * C + c];
        mu /= double(C);
        double var = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = red[t * C + c] - mu;
            var += d * d;
        }
        var /= double(C);
        const double rs = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t c = 0; c < C; ++c)
            red[t * C + c] = (red[t * C + c] - mu) * rs * g[c] + beta[c];
    }
    return ref_attend(x, N, red, hr * wr, p);
}

}  // namespace oracle

// ---------------------------------------------------------------------------
// check harness

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0;   // worst value observed (diff or error)
    double tolerance = 0;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const CheckResult& r) {
    j = nlohmann::json{{"check", r.name},
                       {"status", r.pass ? "pass" : "fail"},
                       {"measured", r.measured},
                       {"tolerance", r.tolerance},
                       {"seed", r.seed}};
}

namespace detail {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double mx = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
    Tensor<T> t(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = T(rng.uniform(lo, hi));
    return t;
}

// Central finite differences on sampled coordinates against the
// recorded autodiff gradients. `make_loss` rebuilds the graph.
template <typename MakeLoss>
double fd_max_rel_err(const std::vector<Tensor<double>*>& tensors, MakeLoss make_loss,
                      SplitMix64& rng, std::size_t samples_per_tensor = 6, double h = 1e-5) {
    for (auto* t : tensors) t->zero_grad();
    {
        Tensor<double> loss = make_loss();
        backward(loss);
    }
    double worst = 0;
    NoGradGuard ng;
    for (auto* t : tensors) {
        const std::size_t n = t->size();
        for (std::size_t s = 0; s < std::min(samples_per_tensor, n); ++s) {
            const std::size_t i = rng.below(n);
            const double orig = t->data()[i];
            t->data()[i] = orig + h;
            const double lp = make_loss().item();
            t->data()[i] = orig - h;
            const double lm = make_loss().item();
            t->data()[i] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double ad = t->grad()[i];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-2});
            worst = std::max(worst, std::abs(ad - fd) / denom);
        }
    }
    return worst;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// checks

// LSA vs block-diagonal masked global attention on random small grids,
// divisible and non-divisible alike; plus single-window bit-equality.
inline CheckResult check_lsa_oracle(std::uint64_t seed, std::size_t instances = 40) {
    CheckResult r{"lsa_vs_masked_global", false, 0, 1e-10, seed};
    SplitMix64 rng(seed);
    for (std::size_t it = 0; it < instances; ++it) {
        const std::size_t H = 2 + rng.below(7), W = 2 + rng.below(7);
        const std::size_t heads = 1 + rng.below(2);
        const std::size_t C = heads * (2 + rng.below(16 / heads - 1));
        const std::size_t k1 = 1 + rng.below(H), k2 = 1 + rng.below(W);
        auto p = make_lsa_params<double>(C, heads, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng);
        Tensor<double> y = lsa(x, p, k1, k2);
        auto ref = oracle::ref_lsa(x.vec(), H, W, C, p, k1, k2);
        r.measured = std::max(r.measured, detail::max_abs_diff(y.vec(), ref));
    }
    // degenerate single window == mhsa, bitwise
    {
        const std::size_t H = 3, W = 4, C = 8, heads = 2;
        auto p = make_lsa_params<double>(C, heads, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng);
        Tensor<double> y = lsa(x, p, H, W);
        Tensor<double> tokens = reshape(x, {1, H * W, C});
        Tensor<double> z = mhsa(tokens, split_fused(p));
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y.vec()[i] != z.vec()[i]) r.measured = std::max(r.measured, 1.0);
    }
    r.pass = r.measured < r.tolerance;
    return r;
}

inline CheckResult check_gsa_oracle(std::uint64_t seed, std::size_t instances = 40,
                                    const char* name = "gsa_vs_materialized") {
    CheckResult r{name, false, 0, 1e-10, seed};
    SplitMix64 rng(seed);
    for (std::size_t it = 0; it < instances; ++it) {
        const std::size_t H = 2 + rng.below(7), W = 2 + rng.below(7);
        const std::size_t heads = 1 + rng.below(2);
        const std::size_t C = heads * (2 + rng.below(16 / heads - 1));
        const std::size_t ratio = 1 + rng.below(std::max(H, W));
        auto p = make_attention_params<double>(C, heads, ratio, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng);
        Tensor<double> y = gsa(x, p, ratio);
        auto ref = oracle::ref_gsa(x.vec(), H, W, C, p, ratio);
        r.measured = std::max(r.measured, detail::max_abs_diff(y.vec(), ref));
    }
    // r == 1 bypass is bit-identical to mhsa
    {
        const std::size_t H = 4, W = 5, C = 6, heads = 2;
        auto p = make_attention_params<double>(C, heads, 1, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng);
        Tensor<double> y = gsa(x, p, 1);
        Tensor<double> z = mhsa(reshape(x, {1, H * W, C}), p);
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y.vec()[i] != z.vec()[i]) r.measured = std::max(r.measured, 1.0);
    }
    r.pass = r.measured < r.tolerance;
    return r;
}

inline CheckResult check_sra_oracle(std::uint64_t seed, std::size_t instances = 40) {
    return check_gsa_oracle(seed ^ 0x5e1fULL, instances, "sra_vs_materialized");
}

// Real-token outputs must not depend on the value used to fill the
// window padding: poison the fill through the debug hook and compare.
inline CheckResult check_padding_neutrality(std::uint64_t seed, std::size_t instances = 10) {
    CheckResult r{"lsa_padding_neutrality", false, 0, 1e-10, seed};
    SplitMix64 rng(seed);
    for (std::size_t it = 0; it < instances; ++it) {
        const std::size_t H = 3 + rng.below(5), W = 3 + rng.below(5);
        const std::size_t C = 4, heads = 2;
        std::size_t k1 = 2 + rng.below(3), k2 = 2 + rng.below(3);
        if (H % k1 == 0) k1 = (H > 2) ? H - 1 : H + 1;  // force padding
        if (W % k2 == 0) k2 = (W > 2) ? W - 1 : W + 1;
        auto p = make_lsa_params<double>(C, heads, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng);
        Tensor<double> base = lsa(x, p, k1, k2);
        Tensor<double> poisoned = lsa(x, p, k1, k2, /*debug_pad_value=*/7.5);
        r.measured = std::max(r.measured, detail::max_abs_diff(base.vec(), poisoned.vec()));
    }
    r.pass = r.measured < r.tolerance;
    return r;
}

// Finite differences through one encoder block of each kind and a
// hand-composed two-stage micro model.
inline CheckResult check_gradients(std::uint64_t seed) {
    CheckResult r{"gradient_finite_difference", false, 0, 1e-5, seed};
    SplitMix64 rng(seed);

    auto run_block = [&](BlockKind kind, std::size_t H, std::size_t W, std::size_t k,
                         std::size_t ratio) {
        const std::size_t C = 6, heads = 2, mlp = 2;
        auto blk = make_encoder_block<double>(kind, C, heads, mlp, k, k, ratio, rng);
        Tensor<double> x = detail::random_tensor<double>({1, H, W, C}, rng, -1, 1, true);
        Tensor<double> w = detail::random_tensor<double>({1, H, W, C}, rng);
        auto make_loss = [&]() { return sum(mul(encoder_block(x, blk), w)); };
        std::vector<Tensor<double>*> tensors = {&x, &blk.ln1_gamma, &blk.mlp.w1, &blk.attn.wo};
        if (kind == BlockKind::Lsa)
            tensors.push_back(&blk.attn.wqkv);
        else {
            tensors.push_back(&blk.attn.wq);
            tensors.push_back(&blk.attn.wkv);
            if (ratio > 1) tensors.push_back(&blk.attn.sr_w);
        }
        r.measured = std::max(r.measured, detail::fd_max_rel_err(tensors, make_loss, rng));
    };
    run_block(BlockKind::Lsa, 5, 5, 2, 1);   // non-divisible: exercises the pad mask
    run_block(BlockKind::Gsa, 4, 4, 0, 2);
    run_block(BlockKind::Sra, 6, 6, 0, 3);

    // two-stage micro model
    {
        const std::size_t C1 = 4, C2 = 6;
        auto pe1 = make_patch_embed_params<double>(2, 3, C1, rng);
        auto b1 = make_encoder_block<double>(BlockKind::Lsa, C1, 2, 2, 2, 2, 1, rng);
        auto peg1 = make_peg_params<double>(C1, rng);
        auto pe2 = make_patch_embed_params<double>(2, C1, C2, rng);
        auto b2 = make_encoder_block<double>(BlockKind::Gsa, C2, 2, 2, 0, 0, 2, rng);
        auto head = make_head_params<double>(C2, 4, rng);
        Tensor<double> x = detail::random_tensor<double>({1, 8, 8, 3}, rng, 0, 1, true);
        std::vector<int> labels = {2};
        auto make_loss = [&]() {
            Tensor<double> z = patch_embed(x, pe1);
            z = peg(encoder_block(z, b1), peg1);
            z = patch_embed(z, pe2);
            z = encoder_block(z, b2);
            return cross_entropy_loss(classify_head(z, head), labels);
        };
        std::vector<Tensor<double>*> tensors = {&x,          &pe1.w,        &peg1.w,
                                                &b1.attn.wqkv, &pe2.ln_gamma, &b2.attn.wkv,
                                                &b2.attn.sr_w, &b2.mlp.w2,    &head.w};
        r.measured = std::max(r.measured, detail::fd_max_rel_err(tensors, make_loss, rng));
    }
    r.pass = r.measured < r.tolerance;
    return r;
}

// Configurable block patterns from the local/global ablation rows:
// every combination builds, runs, and parameter counts grow
// monotonically as L blocks are replaced by G blocks.
inline CheckResult check_block_patterns() {
    CheckResult r{"block_patterns", false, 0, 0, 0};
    auto make = [&](const std::vector<std::string>& patterns) {
        ModelConfig cfg;
        cfg.name = "pattern-test";
        cfg.num_classes = 10;
        cfg.stages.resize(4);
        const std::size_t ch[4] = {16, 32, 64, 128};
        const std::size_t hd[4] = {1, 2, 4, 8};
        const std::size_t ratios[4] = {8, 4, 2, 1};
        const std::size_t patch[4] = {4, 2, 2, 2};
        for (std::size_t i = 0; i < 4; ++i) {
            cfg.stages[i].patch_size = patch[i];
            cfg.stages[i].channels = ch[i];
            cfg.stages[i].heads = hd[i];
            cfg.stages[i].mlp_ratio = 2;
            cfg.stages[i].pattern = patterns[i];
            cfg.stages[i].lsa_window_h = cfg.stages[i].lsa_window_w = 7;
            cfg.stages[i].reduction_ratio = ratios[i];
        }
        return build<float>(cfg, 11);
    };
    try {
        // ablation-style rows must all construct and run
        const std::vector<std::vector<std::string>> rows = {
            {"L", "L", "L", "L"},  {"G", "G", "G", "G"},   {"L", "LG", "LG", "G"},
            {"LG", "LG", "LG", "G"}, {"S", "S", "S", "S"},
        };
        Tensor<float> img({1, 32, 32, 3});
        for (auto& v : img.vec()) v = 0.25f;
        NoGradGuard ng;
        for (const auto& row : rows) {
            auto m = make(row);
            Tensor<float> logits = forward(m, img);
            if (logits.shape() != Shape{1, 10}) return r;
        }
        // replacing L with G adds (or keeps) parameters, never removes
        const std::size_t p0 = make({"LL", "LL", "LL", "LL"}).param_count();
        const std::size_t p1 = make({"LG", "LG", "LG", "LG"}).param_count();
        const std::size_t p2 = make({"GG", "GG", "GG", "GG"}).param_count();
        r.measured = double(p2 - p0);
        if (!(p0 <= p1 && p1 <= p2)) return r;
        r.pass = true;
    } catch (const std::exception&) {
        r.pass = false;
    }
    return r;
}

// Named variants must run at several resolutions, square or not, with
// ceil-division output geometry.
inline CheckResult check_resolution_polymorphism() {
    CheckResult r{"resolution_polymorphism", false, 0, 0, 0};
    try {
        NoGradGuard ng;
        const std::vector<std::pair<std::size_t, std::size_t>> sizes = {
            {224, 224}, {256, 256}, {448, 448}, {224, 320}};
        for (const char* name : {"svt-s", "pcpvt-s"}) {
            auto m = build<float>(builtin_config(name), 3);
            for (auto [H, W] : sizes) {
                Tensor<float> img({1, H, W, 3});
                for (std::size_t i = 0; i < img.size(); ++i)
                    img.data()[i] = 0.5f + 0.4f * std::sin(0.05f * float(i % 977));
                Tensor<float> feat = forward_features(m, img);
                std::size_t eh = H, ew = W;
                for (const auto& sc : m.cfg.stages) {
                    eh = (eh + sc.patch_size - 1) / sc.patch_size;
                    ew = (ew + sc.patch_size - 1) / sc.patch_size;
                }
                if (feat.dim(1) != eh || feat.dim(2) != ew) return r;
                Tensor<float> logits = classify_head(feat, m.head);
                if (logits.shape() != Shape{1, m.cfg.num_classes}) return r;
            }
        }
        r.pass = true;
    } catch (const std::exception&) {
        r.pass = false;
    }
    return r;
}

// ---------------------------------------------------------------------------
// suite

struct VerifySummary {
    std::vector<CheckResult> results;
    bool all_pass() const {
        for (const auto& c : results)
            if (!c.pass) return false;
        return true;
    }
    nlohmann::json to_json_summary() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : results) arr.push_back(c);
        return nlohmann::json{{"all_pass", all_pass()}, {"checks", arr}};
    }
};

inline VerifySummary run_all(std::uint64_t seed) {
    VerifySummary s;
    s.results.push_back(check_lsa_oracle(seed));
    s.results.push_back(check_gsa_oracle(seed + 1));
    s.results.push_back(check_sra_oracle(seed + 2));
    s.results.push_back(check_padding_neutrality(seed + 3));
    s.results.push_back(check_gradients(seed + 4));
    s.results.push_back(check_block_patterns());
    s.results.push_back(check_resolution_polymorphism());
    return s;
}

}  // namespace twins
