#include <catch2/catch_amalgamated.hpp>

#include "twins/twins.hpp"

using namespace twins;

TEST_CASE("closed-form attention costs") {
    // 2 * (HW)^2 * d
    CHECK(cost_global(16, 16, 2) == mac_t(2) * 256 * 256 * 2);
    CHECK(cost_global(4, 4, 1) == 512);
    // 2 * k1 k2 * HW * d
    CHECK(cost_lsa(56, 56, 64, 7, 7) == mac_t(2) * 49 * 3136 * 64);
    CHECK(cost_lsa(56, 56, 64, 7, 7) == 19668992u);
    // global cost divided by the summary factor
    CHECK(cost_gsa(56, 56, 64, 7, 7) == cost_global(56, 56, 64) / 49);

    // ratio identity: lsa/global = k1k2/HW
    const double ratio = mac_double(cost_lsa(32, 32, 8, 4, 4)) /
                         mac_double(cost_global(32, 32, 8));
    CHECK(ratio == Catch::Approx(16.0 / 1024.0));

    CHECK_THROWS_AS(cost_global(0, 4, 1), ShapeError);
    CHECK_THROWS_AS(cost_lsa(4, 4, 1, 0, 2), ShapeError);
    CHECK_THROWS_AS(cost_gsa(4, 4, 1, 2, 0), ShapeError);
}

TEST_CASE("combined cost optimum") {
    // continuous optimum k = (HW)^(1/4)
    auto o224 = optimal_window(224, 224);
    CHECK(o224.continuous == Catch::Approx(std::sqrt(224.0)).epsilon(1e-12));
    CHECK(o224.nearest == 15);

    auto o56 = optimal_window(56, 56);
    CHECK(o56.continuous == Catch::Approx(std::sqrt(56.0)).epsilon(1e-12));
    CHECK(o56.nearest == 7);

    // AM-GM: the combined cost at the continuous optimum lower-bounds
    // every integer candidate
    const double bound = 4.0 * mac_double(cost_global(56, 56, 1)) /
                         std::sqrt(56.0 * 56.0);  // 2HWd * 2 sqrt(HW) / ... simplified below
    for (std::size_t k = 1; k <= 56; ++k) {
        const double c = mac_double(cost_lsa(56, 56, 1, k, k) + cost_gsa(56, 56, 1, k, k));
        CHECK(c >= 2.0 * 2.0 * 56.0 * 56.0 * std::sqrt(56.0 * 56.0) - 1e-6);
    }
    (void)bound;

    auto mins56 = brute_force_optimal_window(56, 56, 56);
    REQUIRE(mins56.size() == 2);  // HW/k^2 + k^2 ties at k=7 and k=8
    CHECK(mins56[0] == 7);
    CHECK(mins56[1] == 8);
    // brute force agrees with the rounded continuous optimum within one step
    bool within = false;
    for (auto k : mins56)
        if (k + 1 >= o56.nearest && k <= o56.nearest + 1) within = true;
    CHECK(within);

    auto mins224 = brute_force_optimal_window(224, 224, 224);
    bool within224 = false;
    for (auto k : mins224)
        if (k + 1 >= o224.nearest && k <= o224.nearest + 1) within224 = true;
    CHECK(within224);
}

TEST_CASE("runtime counters match the closed forms on divisible grids") {
    SplitMix64 rng(7);
    const std::size_t d = 16;

    // LSA, 28x28 with k=7: divisible, so counted == formula exactly
    {
        auto p = make_lsa_params<float>(d, 1, rng);
        Tensor<float> x({1, 28, 28, d});
        for (auto& v : x.vec()) v = float(rng.uniform(-1.0, 1.0));
        MacCounter c;
        NoGradGuard ng;
        {
            CounterGuard guard(c);
            lsa(x, p, 7, 7);
        }
        CHECK(c.attn == cost_lsa(28, 28, d, 7, 7));
        // projections: fused qkv + output
        CHECK(c.other == mac_t(28 * 28) * d * (3 * d) + mac_t(28 * 28) * d * d);
    }

    // GSA, 28x28 with r=7
    {
        auto p = make_attention_params<float>(d, 1, 7, rng);
        Tensor<float> x({1, 28, 28, d});
        for (auto& v : x.vec()) v = float(rng.uniform(-1.0, 1.0));
        MacCounter c;
        NoGradGuard ng;
        {
            CounterGuard guard(c);
            gsa(x, p, 7);
        }
        CHECK(c.attn == cost_gsa(28, 28, d, 7, 7));
        const mac_t nk = 16;  // (28/7)^2
        CHECK(c.other == mac_t(28 * 28) * d * d       // q
                             + nk * d * (2 * d)        // kv
                             + nk * d * (49 * d)       // summary conv
                             + mac_t(28 * 28) * d * d);  // out
    }

    // plain global attention
    {
        auto p = make_attention_params<float>(d, 1, 1, rng);
        Tensor<float> x({1, 12 * 12, d});
        for (auto& v : x.vec()) v = float(rng.uniform(-1.0, 1.0));
        MacCounter c;
        NoGradGuard ng;
        {
            CounterGuard guard(c);
            mhsa(x, p);
        }
        CHECK(c.attn == cost_global(12, 12, d));
    }
}

TEST_CASE("analytic model accounting agrees with runtime counters") {
    auto cfg = micro_variant(builtin_config("svt-s"));
    auto m = build<float>(cfg, 3);
    auto rep = count_model(m, 32, 32);
    CHECK(rep.total_params == m.param_count());

    MacCounter c;
    Tensor<float> img({1, 32, 32, 3});
    SplitMix64 rng(8);
    for (auto& v : img.vec()) v = float(rng.uniform());
    NoGradGuard ng;
    {
        CounterGuard guard(c);
        forward(m, img);
    }
    CHECK(mac_str(c.total()) == mac_str(rep.total_macs));
    CHECK(mac_str(c.attn) == mac_str(rep.total_attn_macs));

    // the same agreement at a non-divisible resolution
    auto m2 = build<float>(micro_variant(builtin_config("pcpvt-s")), 3);
    auto rep2 = count_model(m2, 40, 36);
    MacCounter c2;
    Tensor<float> img2({1, 40, 36, 3});
    for (auto& v : img2.vec()) v = float(rng.uniform());
    {
        CounterGuard guard(c2);
        forward(m2, img2);
    }
    CHECK(mac_str(c2.total()) == mac_str(rep2.total_macs));
    CHECK(mac_str(c2.attn) == mac_str(rep2.total_attn_macs));
}

TEST_CASE("headline parameter counts") {
    // released-model scale: millions of parameters within 2%
    const std::tuple<const char*, double, double> expect[] = {
        {"pcpvt-s", 24.1e6, 0.02}, {"pcpvt-b", 43.8e6, 0.02}, {"pcpvt-l", 60.9e6, 0.02},
        {"svt-s", 24.0e6, 0.10},   {"svt-b", 56.0e6, 0.10},   {"svt-l", 99.2e6, 0.10},
    };
    for (auto [name, want, tol] : expect) {
        auto m = build<float>(builtin_config(name), 1);
        const double got = double(m.param_count());
        INFO(name << " params " << got);
        CHECK(std::abs(got - want) / want < tol);
    }
}

TEST_CASE("scaling bench slopes") {
    // counted attention multiply-adds follow the closed forms, so the
    // log-log slope against HW is exactly linear / quadratic
    auto local = scaling_bench<float>(ScalingOp::Lsa, {28, 56, 112}, 32, 7);
    CHECK(local.attn_slope == Catch::Approx(1.0).margin(0.05));
    auto global = scaling_bench<float>(ScalingOp::Gsa, {28, 56, 112}, 32, 7);
    CHECK(global.attn_slope == Catch::Approx(2.0).margin(0.05));
    REQUIRE(local.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(local.rows[i].attn_macs == cost_lsa(local.rows[i].side, local.rows[i].side, 32, 7, 7));
        CHECK(global.rows[i].attn_macs ==
              cost_gsa(global.rows[i].side, global.rows[i].side, 32, 7, 7));
    }
    CHECK_THROWS_AS(scaling_bench<float>(ScalingOp::Lsa, {56, 28}, 32, 7), ShapeError);
}
