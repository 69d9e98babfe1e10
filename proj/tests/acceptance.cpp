// End-to-end acceptance gate: one pass/fail line per criterion,
// nonzero exit if anything fails.
#include <cstdio>
#include <string>

#include "twins/twins.hpp"

using namespace twins;

namespace {

int failures = 0;

void report(int idx, bool pass, const std::string& what) {
    std::printf("[%d/9] %s  %s\n", idx, pass ? "PASS" : "FAIL", what.c_str());
    if (!pass) ++failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

int main() {
    // 1. parameter counts of the six named variants, within 2%
    {
        const std::tuple<const char*, double, double> expect[] = {
            {"pcpvt-s", 24.1e6, 0.02}, {"pcpvt-b", 43.8e6, 0.02}, {"pcpvt-l", 60.9e6, 0.02},
            {"svt-s", 24.0e6, 0.10},   {"svt-b", 56.0e6, 0.10},   {"svt-l", 99.2e6, 0.10},
        };
        bool ok = true;
        std::string detail;
        for (auto [name, want, tol] : expect) {
            const double got = double(build<float>(builtin_config(name), 1).param_count());
            const double rel = std::abs(got - want) / want;
            if (rel >= tol) ok = false;
            detail += std::string(name) + "=" + fmt(got / 1e6) + "M ";
        }
        report(1, ok, "parameter counts within tolerance of targets: " + detail);
    }

    // 2. compute at 224x224 within 15% of the published figures
    {
        const std::pair<const char*, double> expect[] = {
            {"pcpvt-s", 3.8e9}, {"pcpvt-b", 6.7e9}, {"pcpvt-l", 9.8e9},
            {"svt-s", 2.9e9},   {"svt-b", 8.6e9},   {"svt-l", 15.1e9},
        };
        bool ok = true;
        std::string detail;
        for (auto [name, want] : expect) {
            auto m = build<float>(builtin_config(name), 1);
            const double got = mac_double(count_model(m, 224, 224).total_macs);
            const double rel = std::abs(got - want) / want;
            if (rel >= 0.15) ok = false;
            detail += std::string(name) + "=" + fmt(got / 1e9) + "G ";
        }
        report(2, ok, "multiply-add totals at 224x224 within 15%: " + detail);
    }

    // 3. optimal square window: 224 -> 15, 56 -> 7; brute force agrees
    //    within one step of the rounded continuous optimum
    {
        auto o224 = optimal_window(224, 224);
        auto o56 = optimal_window(56, 56);
        bool ok = (o224.nearest == 15) && (o56.nearest == 7);
        auto near = [](const std::vector<std::size_t>& mins, std::size_t k) {
            for (auto m : mins)
                if (m + 1 >= k && m <= k + 1) return true;
            return false;
        };
        ok = ok && near(brute_force_optimal_window(224, 224, 224), o224.nearest);
        ok = ok && near(brute_force_optimal_window(56, 56, 56), o56.nearest);
        report(3, ok,
               "window optimum: 224 -> " + std::to_string(o224.nearest) + ", 56 -> " +
                   std::to_string(o56.nearest) + " (brute force within 1)");
    }

    // 4. oracle equivalence across >= 100 random instances, < 1e-10
    {
        auto lsa_r = check_lsa_oracle(101, 40);
        auto gsa_r = check_gsa_oracle(102, 40);
        auto sra_r = check_sra_oracle(103, 40);
        const double worst = std::max({lsa_r.measured, gsa_r.measured, sra_r.measured});
        const bool ok = lsa_r.pass && gsa_r.pass && sra_r.pass;
        report(4, ok,
               "attention oracles over 120 random instances, worst diff " + fmt(worst) +
                   " < 1e-10");
    }

    // 5. autodiff gradients vs finite differences, < 1e-5
    {
        auto g = check_gradients(104);
        report(5, g.pass, "gradient check worst relative error " + fmt(g.measured) + " < 1e-5");
    }

    // 6. scaling slopes of counted attention work, d=32, k=7
    {
        auto local = scaling_bench<float>(ScalingOp::Lsa, {28, 56, 112}, 32, 7);
        auto global = scaling_bench<float>(ScalingOp::Gsa, {28, 56, 112}, 32, 7);
        const bool ok = std::abs(local.attn_slope - 1.0) < 0.05 &&
                        std::abs(global.attn_slope - 2.0) < 0.05;
        report(6, ok,
               "scaling slopes: local " + fmt(local.attn_slope) + " (want 1.00), summary-global " +
                   fmt(global.attn_slope) + " (want 2.00)");
    }

    // 7. one weight set runs at multiple, non-square resolutions
    {
        auto r = check_resolution_polymorphism();
        report(7, r.pass, "resolution polymorphism at 224/256/448 and 224x320");
    }

    // 8. micro variants reach 95% train accuracy on the toy set
    {
        auto ds = gen_dataset(2024, 256);
        bool ok = true;
        std::string detail;
        for (const char* base : {"svt-s", "pcpvt-s"}) {
            auto cfg = micro_variant(builtin_config(base));
            auto model = build<float>(cfg, 7);
            TrainConfig tc;
            tc.steps = 2000;
            tc.batch_size = 32;
            tc.lr = 1e-3;
            tc.weight_decay = 0.01;
            tc.seed = 1;
            tc.stop_at_accuracy = 0.95;
            tc.eval_every = 25;
            tc.log_every = 0;
            auto res = train_toy(model, ds, tc);
            if (res.diverged || res.train_accuracy < 0.95) ok = false;
            detail += std::string(cfg.name) + ": acc " + fmt(res.train_accuracy) + " after " +
                      std::to_string(res.steps_run) + " steps; ";
        }
        report(8, ok, "toy training to 95% train accuracy: " + detail);
    }

    // 9. checkpoints round-trip bit-exactly and reject mismatched configs
    {
        bool ok = true;
        const std::string path = "/tmp/twins_acceptance.twns";
        auto cfg = micro_variant(builtin_config("svt-s"));
        auto m = build<float>(cfg, 11);
        save_model(m, path);
        auto m2 = build<float>(cfg, 12);
        load_model(m2, path);
        auto pa = m.named_params(), pb = m2.named_params();
        for (std::size_t i = 0; i < pa.size() && ok; ++i)
            if (pa[i].second.vec() != pb[i].second.vec()) ok = false;
        bool rejected = false;
        try {
            auto other = build<float>(micro_variant(builtin_config("pcpvt-s")), 1);
            load_model(other, path);
        } catch (const CheckpointError& e) {
            rejected = (e.kind() == CheckpointError::Kind::ShapeMismatch);
        }
        std::remove(path.c_str());
        ok = ok && rejected;
        report(9, ok, "checkpoint round trip bit-exact; cross-config load rejected");
    }

    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures ? 1 : 0;
}
