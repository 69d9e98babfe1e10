#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "twins/twins.hpp"

using namespace twins;

namespace {
struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/twins_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};
}  // namespace

TEST_CASE("builtin variants are wired as documented") {
    auto ps = builtin_config("pcpvt-s");
    CHECK(ps.stages.size() == 4);
    CHECK(ps.stages[0].channels == 64);
    CHECK(ps.stages[2].channels == 320);
    CHECK(ps.stages[3].channels == 512);
    CHECK(ps.stages[2].pattern == "SSSSSS");
    CHECK(ps.stages[0].mlp_ratio == 8);
    CHECK(ps.stages[3].mlp_ratio == 4);
    CHECK(ps.stages[0].reduction_ratio == 8);
    CHECK(ps.stages[3].reduction_ratio == 1);

    auto ss = builtin_config("svt-s");
    CHECK(ss.stages[0].pattern == "LG");
    CHECK(ss.stages[2].pattern == "LGLGLGLGLG");
    CHECK(ss.stages[3].pattern == "GGGG");
    CHECK(ss.stages[1].heads == 4);
    CHECK(ss.stages[3].channels == 512);
    CHECK(ss.stages[0].lsa_window_h == 7);

    auto bl = builtin_config("svt-l");
    CHECK(bl.stages[3].channels == 1024);
    CHECK(bl.stages[2].pattern.size() == 18);

    CHECK_THROWS_AS(builtin_config("resnet-50"), ShapeError);
}

TEST_CASE("micro variants shrink but keep the block mix") {
    for (const auto& name : builtin_names()) {
        auto micro = micro_variant(builtin_config(name));
        CHECK(micro.num_classes == 10);
        CHECK(micro.name == "micro-" + name);
        const std::size_t depths[4] = {1, 1, 2, 1};
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(micro.stages[i].depth() == depths[i]);
            CHECK(micro.stages[i].channels % micro.stages[i].heads == 0);
            CHECK(micro.stages[i].pattern[0] == builtin_config(name).stages[i].pattern[0]);
        }
        auto m = build<float>(micro, 5);
        CHECK(m.param_count() > 0);
    }
}

TEST_CASE("micro model forward pass") {
    auto m = build<float>(micro_variant(builtin_config("svt-s")), 9);
    Tensor<float> img({2, 32, 32, 3});
    SplitMix64 rng(4);
    for (auto& v : img.vec()) v = float(rng.uniform());
    NoGradGuard ng;
    auto logits = forward(m, img);
    CHECK(logits.shape() == Shape{2, 10});
    auto feat = forward_features(m, img);
    CHECK(feat.shape() == Shape{2, 1, 1, m.cfg.stages[3].channels});
    CHECK_THROWS_AS(forward(m, Tensor<float>({1, 16, 16, 3})), ShapeError);
}

TEST_CASE("seeded builds are deterministic") {
    auto cfg = micro_variant(builtin_config("pcpvt-s"));
    auto a = build<float>(cfg, 1234);
    auto b = build<float>(cfg, 1234);
    auto c = build<float>(cfg, 1235);
    auto pa = a.named_params(), pb = b.named_params(), pc = c.named_params();
    REQUIRE(pa.size() == pb.size());
    bool identical = true, different = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        if (pa[i].second.vec() != pb[i].second.vec()) identical = false;
        if (pa[i].second.vec() != pc[i].second.vec()) different = true;
    }
    CHECK(identical);
    CHECK(different);
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto cfg = micro_variant(builtin_config("svt-s"));
    auto m = build<float>(cfg, 77);
    TempFile f("roundtrip.twns");
    save_model(m, f.path);

    auto m2 = build<float>(cfg, 78);  // different init, then overwritten
    load_model(m2, f.path);
    auto pa = m.named_params(), pb = m2.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        INFO(pa[i].first);
        CHECK(pa[i].second.vec() == pb[i].second.vec());
    }
}

TEST_CASE("checkpoint error taxonomy") {
    auto cfg = micro_variant(builtin_config("svt-s"));
    auto m = build<float>(cfg, 77);
    TempFile f("errors.twns");
    save_model(m, f.path);

    SECTION("corrupt magic") {
        std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
        fs.write("JUNK", 4);
        fs.close();
        try {
            load_checkpoint(f.path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::CorruptHeader);
        }
    }

    SECTION("truncated file") {
        std::ifstream in(f.path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), std::streamsize(bytes.size() / 2));
        out.close();
        try {
            load_checkpoint(f.path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::Truncated);
        }
    }

    SECTION("applying to a mismatched config") {
        auto other = build<float>(micro_variant(builtin_config("pcpvt-s")), 3);
        try {
            load_model(other, f.path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::ShapeMismatch);
        }
    }

    SECTION("missing file") {
        try {
            load_checkpoint("/tmp/twins_test_does_not_exist.twns");
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(e.kind() == CheckpointError::Kind::Io);
        }
    }
}

TEST_CASE("json config round trip") {
    for (const auto& name : builtin_names()) {
        auto cfg = builtin_config(name);
        nlohmann::json j = cfg;
        auto back = j.get<ModelConfig>();
        CHECK(back.name == cfg.name);
        CHECK(back.num_classes == cfg.num_classes);
        REQUIRE(back.stages.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(back.stages[i].channels == cfg.stages[i].channels);
            CHECK(back.stages[i].pattern == cfg.stages[i].pattern);
            CHECK(back.stages[i].heads == cfg.stages[i].heads);
            CHECK(back.stages[i].mlp_ratio == cfg.stages[i].mlp_ratio);
            CHECK(back.stages[i].reduction_ratio == cfg.stages[i].reduction_ratio);
            CHECK(back.stages[i].lsa_window_h == cfg.stages[i].lsa_window_h);
        }
        // serialized depth field must agree with the pattern
        CHECK(j["stages"][0]["depth"] == cfg.stages[0].depth());
    }

    // inconsistent depth is rejected
    nlohmann::json j = builtin_config("svt-s");
    j["stages"][0]["depth"] = 9;
    CHECK_THROWS_AS(j.get<ModelConfig>(), ShapeError);
}

TEST_CASE("config validation") {
    auto cfg = builtin_config("svt-s");
    cfg.stages[1].pattern = "LGX";
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = builtin_config("svt-s");
    cfg.stages.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = builtin_config("svt-s");
    cfg.stages[0].channels = 63;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
    cfg = builtin_config("svt-s");
    cfg.num_classes = 0;
    CHECK_THROWS_AS(cfg.validate(), ShapeError);
}

TEST_CASE("optimizer state round trips through checkpoints") {
    auto cfg = micro_variant(builtin_config("pcpvt-s"));
    auto ds = gen_dataset(11, 20);
    TempFile f("optstate.twns");

    TrainConfig tc;
    tc.steps = 3;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = 2;
    tc.checkpoint_path = f.path;
    tc.eval_every = 0;
    tc.log_every = 0;

    auto m1 = build<float>(cfg, 21);
    AdamW<float> opt1;
    train_toy(m1, ds, tc, &opt1);
    CHECK(opt1.steps_taken() == 3);

    // resume: same model + opt state, run to 6 total steps
    auto m2 = build<float>(cfg, 99);
    AdamW<float> opt2;
    auto ckpt = load_checkpoint(f.path);
    apply_checkpoint(ckpt, m2);
    opt2.load_state(ckpt, m2.named_params());
    CHECK(opt2.steps_taken() == 3);
    TrainConfig tc2 = tc;
    tc2.steps = 6;
    tc2.checkpoint_path.clear();
    auto r2 = train_toy(m2, ds, tc2, &opt2);
    CHECK(r2.steps_run == 6);

    // reference: uninterrupted 6 steps from the same init
    auto m3 = build<float>(cfg, 21);
    AdamW<float> opt3;
    TrainConfig tc3 = tc2;
    auto r3 = train_toy(m3, ds, tc3, &opt3);
    CHECK(r3.steps_run == 6);

    // the resumed run replays the shuffle stream, so it reproduces the
    // uninterrupted run bit for bit
    auto p2 = m2.named_params(), p3 = m3.named_params();
    for (std::size_t i = 0; i < p2.size(); ++i) {
        INFO(p2[i].first);
        CHECK(p2[i].second.vec() == p3[i].second.vec());
    }
}
