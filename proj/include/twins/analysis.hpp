#pragma once

#include <chrono>

#include "twins/model.hpp"

namespace twins {

// ---------------------------------------------------------------------------
// closed-form attention-map costs (multiply-adds; factor 2 covers the
// QK^T + AV pair)

namespace detail {
inline mac_t checked_mul(mac_t a, mac_t b) {
    if (a != 0 && b > (~mac_t(0)) / a)
        throw std::overflow_error("cost arithmetic overflow");
    return a * b;
}
}  // namespace detail

inline mac_t cost_global(std::size_t H, std::size_t W, std::size_t d) {
    if (H == 0 || W == 0 || d == 0) throw ShapeError("cost_global: inputs must be positive");
    const mac_t hw = mac_t(H) * W;
    return detail::checked_mul(detail::checked_mul(2, detail::checked_mul(hw, hw)), d);
}

inline mac_t cost_lsa(std::size_t H, std::size_t W, std::size_t d, std::size_t k1,
                      std::size_t k2) {
    if (H == 0 || W == 0 || d == 0 || k1 == 0 || k2 == 0)
        throw ShapeError("cost_lsa: inputs must be positive");
    return detail::checked_mul(
        detail::checked_mul(2, detail::checked_mul(mac_t(k1) * k2, mac_t(H) * W)), d);
}

inline mac_t cost_gsa(std::size_t H, std::size_t W, std::size_t d, std::size_t k1,
                      std::size_t k2) {
    if (H == 0 || W == 0 || d == 0 || k1 == 0 || k2 == 0)
        throw ShapeError("cost_gsa: inputs must be positive");
    return cost_global(H, W, d) / (mac_t(k1) * k2);
}

// Continuous optimum of cost_lsa + cost_gsa over square windows:
// k^2 = sqrt(HW), i.e. k = (HW)^(1/4).
struct WindowOptimum {
    double continuous;
    std::size_t nearest;
};

inline WindowOptimum optimal_window(std::size_t H, std::size_t W) {
    if (H == 0 || W == 0) throw ShapeError("optimal_window: inputs must be positive");
    const double k = std::pow(double(H) * double(W), 0.25);
    return {k, std::size_t(std::llround(k))};
}

// Integer argmins of the combined cost over k in [1, k_max].
inline std::vector<std::size_t> brute_force_optimal_window(std::size_t H, std::size_t W,
                                                           std::size_t k_max) {
    std::vector<std::size_t> best;
    mac_t best_cost = ~mac_t(0);
    for (std::size_t k = 1; k <= k_max; ++k) {
        const mac_t c = cost_lsa(H, W, 1, k, k) + cost_gsa(H, W, 1, k, k);
        if (c < best_cost) {
            best_cost = c;
            best = {k};
        } else if (c == best_cost) {
            best.push_back(k);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// exact model accounting

struct LayerCost {
    std::string name;
    mac_t macs = 0;       // total multiply-adds including attention maps
    mac_t attn_macs = 0;  // attention-map share (QK^T + AV)
    std::size_t params = 0;
};

struct CostReport {
    std::vector<LayerCost> layers;
    mac_t total_macs = 0;
    mac_t total_attn_macs = 0;
    std::size_t total_params = 0;

    void add(LayerCost lc) {
        total_macs += lc.macs;
        total_attn_macs += lc.attn_macs;
        total_params += lc.params;
        layers.push_back(std::move(lc));
    }
};

namespace detail {

template <typename T>
std::size_t tensor_params(std::initializer_list<const Tensor<T>*> ts) {
    std::size_t n = 0;
    for (const auto* t : ts)
        if (t->valid()) n += t->size();
    return n;
}

inline std::size_t ceil_to(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace detail

// Walks the model at a reference input geometry, summing exact
// multiply-adds per layer. Convention: conv = out_elems*kh*kw*Cin/g,
// linear = rows*in*out, attention maps = 2*Nq*Nk*C; norms, activations
// and softmax are excluded.
template <typename T>
CostReport count_model(const Model<T>& m, std::size_t H, std::size_t W) {
    CostReport rep;
    std::size_t h = H, w = W, cin = 3;
    for (std::size_t si = 0; si < m.stages.size(); ++si) {
        const auto& st = m.stages[si];
        const auto& sc = m.cfg.stages[si];
        const std::string sp = "stage" + std::to_string(si) + ".";
        const std::size_t C = sc.channels;

        const std::size_t P = sc.patch_size;
        const std::size_t hp = detail::ceil_to(h, P) / P;
        const std::size_t wp = detail::ceil_to(w, P) / P;
        rep.add({sp + "patch_embed",
                 detail::checked_mul(mac_t(hp) * wp * C, mac_t(P) * P * cin), 0,
                 detail::tensor_params<T>({&st.patch.w, &st.patch.b, &st.patch.ln_gamma,
                                           &st.patch.ln_beta})});
        h = hp;
        w = wp;
        cin = C;

        const std::size_t tokens = h * w;
        for (std::size_t bi = 0; bi < st.blocks.size(); ++bi) {
            const auto& b = st.blocks[bi];
            const std::string bp = sp + "block" + std::to_string(bi);
            LayerCost lc;
            lc.name = bp + "." + std::string(1, block_letter(b.kind));
            lc.params = detail::tensor_params<T>(
                {&b.ln1_gamma, &b.ln1_beta, &b.ln2_gamma, &b.ln2_beta, &b.attn.wqkv,
                 &b.attn.bqkv, &b.attn.wq, &b.attn.bq, &b.attn.wkv, &b.attn.bkv, &b.attn.wo,
                 &b.attn.bo, &b.attn.sr_w, &b.attn.sr_b, &b.attn.sr_gamma, &b.attn.sr_beta,
                 &b.mlp.w1, &b.mlp.b1, &b.mlp.w2, &b.mlp.b2});
            if (b.kind == BlockKind::Lsa) {
                const std::size_t hpd = detail::ceil_to(h, b.k1);
                const std::size_t wpd = detail::ceil_to(w, b.k2);
                const mac_t padded = mac_t(hpd) * wpd;
                lc.attn_macs = 2 * mac_t(b.k1) * b.k2 * padded * C;
                lc.macs = padded * C * (3 * C)      // fused qkv
                          + padded * C * C          // output projection
                          + lc.attn_macs;
            } else {
                const std::size_t r = b.reduction;
                std::size_t nk = tokens;
                mac_t sr = 0;
                if (r > 1) {
                    nk = (detail::ceil_to(h, r) / r) * (detail::ceil_to(w, r) / r);
                    sr = mac_t(nk) * C * (mac_t(r) * r * C);
                }
                lc.attn_macs = 2 * mac_t(tokens) * nk * C;
                lc.macs = mac_t(tokens) * C * C      // q projection
                          + mac_t(nk) * C * (2 * C)  // kv projection
                          + sr + mac_t(tokens) * C * C  // output projection
                          + lc.attn_macs;
            }
            lc.macs += 2 * mac_t(tokens) * C * (sc.mlp_ratio * C);  // FFN
            rep.add(std::move(lc));
        }
        rep.add({sp + "peg", mac_t(tokens) * C * 9, 0,
                 detail::tensor_params<T>({&st.peg.w, &st.peg.b})});
    }
    rep.add({"head", mac_t(cin) * m.cfg.num_classes, 0,
             detail::tensor_params<T>({&m.head.ln_gamma, &m.head.ln_beta, &m.head.w,
                                       &m.head.b})});
    return rep;
}

// ---------------------------------------------------------------------------
// scaling measurements

enum class ScalingOp { Lsa, Gsa, Global };

struct ScalingRow {
    std::size_t side;       // H == W
    std::size_t hw;
    mac_t attn_macs;        // counted during the run
    mac_t total_macs;
    double seconds;
};

struct ScalingResult {
    std::vector<ScalingRow> rows;
    double attn_slope = 0;  // log-log slope of counted attention macs vs HW
};

namespace detail {
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
}
}  // namespace detail

// Runs the real attention op at each size under the multiply-add
// counter. Counted ops follow the closed forms exactly; wall time is
// reported but never asserted.
template <typename T = float>
ScalingResult scaling_bench(ScalingOp op, const std::vector<std::size_t>& sides, std::size_t d,
                            std::size_t k, std::uint64_t seed = 7) {
    for (std::size_t i = 1; i < sides.size(); ++i)
        if (sides[i] <= sides[i - 1])
            throw ShapeError("scaling_bench: sizes must be strictly increasing");
    SplitMix64 rng(seed);
    const std::size_t heads = 1;
    AttentionParams<T> split_params = make_attention_params<T>(d, heads, k, rng);
    AttentionParams<T> fused_params = make_lsa_params<T>(d, heads, rng);

    ScalingResult res;
    NoGradGuard ng;
    for (std::size_t side : sides) {
        Tensor<T> x({1, side, side, d});
        for (auto& v : x.vec()) v = T(rng.uniform(-1.0, 1.0));
        MacCounter counter;
        const auto t0 = std::chrono::steady_clock::now();
        {
            CounterGuard guard(counter);
            switch (op) {
                case ScalingOp::Lsa: lsa(x, fused_params, k, k); break;
                case ScalingOp::Gsa: gsa(x, split_params, k); break;
                case ScalingOp::Global: {
                    Tensor<T> tokens = reshape(x, {1, side * side, d});
                    mhsa(tokens, split_params);
                    break;
                }
            }
        }
        const auto t1 = std::chrono::steady_clock::now();
        res.rows.push_back({side, side * side, counter.attn, counter.total(),
                            std::chrono::duration<double>(t1 - t0).count()});
    }
    std::vector<double> xs, ys;
    for (const auto& r : res.rows) {
        xs.push_back(double(r.hw));
        ys.push_back(mac_double(r.attn_macs));
    }
    res.attn_slope = detail::loglog_slope(xs, ys);
    return res;
}

}  // namespace twins
