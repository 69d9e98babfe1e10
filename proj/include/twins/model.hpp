#pragma once

#include <nlohmann/json.hpp>

#include "twins/blocks.hpp"

namespace twins {

struct StageConfig {
    std::size_t patch_size = 2;
    std::size_t channels = 64;
    std::size_t heads = 1;
    std::size_t mlp_ratio = 4;
    std::string pattern;                // one of L/G/S per block; length == depth
    std::size_t lsa_window_h = 7, lsa_window_w = 7;
    std::size_t reduction_ratio = 1;    // GSA summarizing size / SRA ratio
    std::size_t peg_after_block = 0;

    std::size_t depth() const { return pattern.size(); }

    void validate() const {
        if (channels == 0 || heads == 0 || channels % heads != 0)
            throw ShapeError("stage config: channels must be a positive multiple of heads");
        if (pattern.empty()) throw ShapeError("stage config: empty block pattern");
        if (mlp_ratio == 0 || patch_size == 0)
            throw ShapeError("stage config: patch size and mlp ratio must be positive");
        for (char c : pattern) {
            if (c == 'L') {
                if (lsa_window_h == 0 || lsa_window_w == 0)
                    throw ShapeError("stage config: L blocks require a window");
            } else if (c == 'G' || c == 'S') {
                if (reduction_ratio == 0)
                    throw ShapeError("stage config: G/S blocks require ratio >= 1");
            } else {
                throw ShapeError(std::string("stage config: unknown block letter '") + c + "'");
            }
        }
        if (peg_after_block >= pattern.size())
            throw ShapeError("stage config: peg_after_block out of range");
    }
};

struct ModelConfig {
    std::string name;
    std::vector<StageConfig> stages;  // exactly 4
    std::size_t num_classes = 1000;

    void validate() const {
        if (stages.size() != 4)
            throw ShapeError("model config: exactly 4 stages required, got " +
                             std::to_string(stages.size()));
        if (num_classes == 0) throw ShapeError("model config: num_classes must be positive");
        for (const auto& s : stages) s.validate();
    }
};

// ---------------------------------------------------------------------------
// JSON config format

inline void to_json(nlohmann::json& j, const StageConfig& s) {
    j = nlohmann::json{{"patch_size", s.patch_size},
                       {"channels", s.channels},
                       {"depth", s.depth()},
                       {"heads", s.heads},
                       {"mlp_ratio", s.mlp_ratio},
                       {"pattern", s.pattern},
                       {"lsa_window", {s.lsa_window_h, s.lsa_window_w}},
                       {"reduction_ratio", s.reduction_ratio}};
}

inline void from_json(const nlohmann::json& j, StageConfig& s) {
    j.at("patch_size").get_to(s.patch_size);
    j.at("channels").get_to(s.channels);
    j.at("heads").get_to(s.heads);
    j.at("mlp_ratio").get_to(s.mlp_ratio);
    j.at("pattern").get_to(s.pattern);
    if (j.contains("lsa_window")) {
        s.lsa_window_h = j["lsa_window"].at(0).get<std::size_t>();
        s.lsa_window_w = j["lsa_window"].at(1).get<std::size_t>();
    }
    j.at("reduction_ratio").get_to(s.reduction_ratio);
    if (j.contains("depth") && j["depth"].get<std::size_t>() != s.pattern.size())
        throw ShapeError("model config: depth does not match pattern length");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"name", c.name}, {"stages", c.stages}, {"num_classes", c.num_classes}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("name").get_to(c.name);
    j.at("stages").get_to(c.stages);
    j.at("num_classes").get_to(c.num_classes);
    c.validate();
}

// ---------------------------------------------------------------------------
// built-in variants

namespace detail {
inline std::string repeat_pattern(const std::string& unit, std::size_t depth) {
    std::string p;
    while (p.size() < depth) p += unit;
    p.resize(depth);
    return p;
}
}  // namespace detail

// Named variants: pcpvt-{s,b,l} (all-SRA pyramid) and svt-{s,b,l}
// (alternating local/global stages, all-global last stage).
inline ModelConfig builtin_config(const std::string& name) {
    ModelConfig cfg;
    cfg.name = name;
    cfg.num_classes = 1000;
    const std::vector<std::size_t> patch = {4, 2, 2, 2};
    const std::vector<std::size_t> ratios = {8, 4, 2, 1};

    auto make_stages = [&](const std::vector<std::size_t>& ch, const std::vector<std::size_t>& hd,
                           const std::vector<std::size_t>& mlp,
                           const std::vector<std::string>& patterns) {
        cfg.stages.resize(4);
        for (std::size_t i = 0; i < 4; ++i) {
            auto& s = cfg.stages[i];
            s.patch_size = patch[i];
            s.channels = ch[i];
            s.heads = hd[i];
            s.mlp_ratio = mlp[i];
            s.pattern = patterns[i];
            s.lsa_window_h = s.lsa_window_w = 7;
            s.reduction_ratio = ratios[i];
        }
    };

    auto sra_patterns = [&](const std::vector<std::size_t>& depths) {
        std::vector<std::string> p(4);
        for (std::size_t i = 0; i < 4; ++i) p[i] = std::string(depths[i], 'S');
        return p;
    };
    auto svt_patterns = [&](const std::vector<std::size_t>& depths) {
        std::vector<std::string> p(4);
        for (std::size_t i = 0; i < 3; ++i) p[i] = detail::repeat_pattern("LG", depths[i]);
        p[3] = std::string(depths[3], 'G');
        return p;
    };

    if (name == "pcpvt-s")
        make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {8, 8, 4, 4}, sra_patterns({3, 4, 6, 3}));
    else if (name == "pcpvt-b")
        make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {8, 8, 4, 4}, sra_patterns({3, 4, 18, 3}));
    else if (name == "pcpvt-l")
        make_stages({64, 128, 320, 512}, {1, 2, 5, 8}, {8, 8, 4, 4}, sra_patterns({3, 8, 27, 3}));
    else if (name == "svt-s")
        make_stages({64, 128, 256, 512}, {2, 4, 8, 16}, {4, 4, 4, 4}, svt_patterns({2, 2, 10, 4}));
    else if (name == "svt-b")
        make_stages({96, 192, 384, 768}, {3, 6, 12, 24}, {4, 4, 4, 4}, svt_patterns({2, 2, 18, 2}));
    else if (name == "svt-l")
        make_stages({128, 256, 512, 1024}, {4, 8, 16, 32}, {4, 4, 4, 4},
                    svt_patterns({2, 2, 18, 2}));
    else
        throw ShapeError("unknown model name: " + name);
    cfg.validate();
    return cfg;
}

inline const std::vector<std::string>& builtin_names() {
    static const std::vector<std::string> names = {"pcpvt-s", "pcpvt-b", "pcpvt-l",
                                                   "svt-s",   "svt-b",   "svt-l"};
    return names;
}

// Scaled-down variant for toy training: channels / 4, depths
// [1,1,2,1], same per-stage block style, 10 classes.
inline ModelConfig micro_variant(const ModelConfig& base) {
    ModelConfig cfg = base;
    cfg.name = "micro-" + base.name;
    cfg.num_classes = 10;
    const std::size_t depths[4] = {1, 1, 2, 1};
    for (std::size_t i = 0; i < 4; ++i) {
        auto& s = cfg.stages[i];
        s.channels = std::max<std::size_t>(s.heads, s.channels / 4);
        // keep the stage's block style at the reduced depth
        s.pattern = detail::repeat_pattern(base.stages[i].pattern, depths[i]);
        if (s.channels % s.heads != 0) s.channels = (s.channels / s.heads + 1) * s.heads;
        s.peg_after_block = 0;
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// the assembled model

template <typename T>
struct Stage {
    PatchEmbedParams<T> patch;
    std::vector<EncoderBlock<T>> blocks;
    PegParams<T> peg;
    std::size_t peg_after = 0;
};

template <typename T>
struct Model {
    ModelConfig cfg;
    std::vector<Stage<T>> stages;
    HeadParams<T> head;

    // Stable name -> tensor enumeration; defines init, checkpoint, and
    // optimizer ordering.
    std::vector<std::pair<std::string, Tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        auto put = [&](std::string name, const Tensor<T>& t) {
            if (t.valid()) out.emplace_back(std::move(name), t);
        };
        for (std::size_t si = 0; si < stages.size(); ++si) {
            const auto& st = stages[si];
            const std::string sp = "stage" + std::to_string(si) + ".";
            put(sp + "patch.w", st.patch.w);
            put(sp + "patch.b", st.patch.b);
            put(sp + "patch.ln.gamma", st.patch.ln_gamma);
            put(sp + "patch.ln.beta", st.patch.ln_beta);
            for (std::size_t bi = 0; bi < st.blocks.size(); ++bi) {
                const auto& b = st.blocks[bi];
                const std::string bp = sp + "block" + std::to_string(bi) + ".";
                put(bp + "ln1.gamma", b.ln1_gamma);
                put(bp + "ln1.beta", b.ln1_beta);
                put(bp + "attn.wqkv", b.attn.wqkv);
                put(bp + "attn.bqkv", b.attn.bqkv);
                put(bp + "attn.wq", b.attn.wq);
                put(bp + "attn.bq", b.attn.bq);
                put(bp + "attn.wkv", b.attn.wkv);
                put(bp + "attn.bkv", b.attn.bkv);
                put(bp + "attn.wo", b.attn.wo);
                put(bp + "attn.bo", b.attn.bo);
                put(bp + "attn.sr.w", b.attn.sr_w);
                put(bp + "attn.sr.b", b.attn.sr_b);
                put(bp + "attn.sr.ln.gamma", b.attn.sr_gamma);
                put(bp + "attn.sr.ln.beta", b.attn.sr_beta);
                put(bp + "ln2.gamma", b.ln2_gamma);
                put(bp + "ln2.beta", b.ln2_beta);
                put(bp + "ffn.w1", b.mlp.w1);
                put(bp + "ffn.b1", b.mlp.b1);
                put(bp + "ffn.w2", b.mlp.w2);
                put(bp + "ffn.b2", b.mlp.b2);
            }
            put(sp + "peg.w", st.peg.w);
            put(sp + "peg.b", st.peg.b);
        }
        put("head.ln.gamma", head.ln_gamma);
        put("head.ln.beta", head.ln_beta);
        put("head.w", head.w);
        put("head.b", head.b);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_params()) n += t.size();
        return n;
    }

    void zero_grad() const {
        for (auto& [name, t] : named_params()) const_cast<Tensor<T>&>(t).zero_grad();
    }
};

template <typename T>
Model<T> build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    SplitMix64 rng(seed);
    std::size_t in_ch = 3;
    for (const auto& sc : cfg.stages) {
        Stage<T> st;
        st.patch = make_patch_embed_params<T>(sc.patch_size, in_ch, sc.channels, rng);
        for (char letter : sc.pattern) {
            BlockKind kind = letter == 'L'   ? BlockKind::Lsa
                             : letter == 'G' ? BlockKind::Gsa
                                             : BlockKind::Sra;
            st.blocks.push_back(make_encoder_block<T>(kind, sc.channels, sc.heads, sc.mlp_ratio,
                                                      sc.lsa_window_h, sc.lsa_window_w,
                                                      sc.reduction_ratio, rng));
        }
        st.peg = make_peg_params<T>(sc.channels, rng);
        st.peg_after = sc.peg_after_block;
        m.stages.push_back(std::move(st));
        in_ch = sc.channels;
    }
    m.head = make_head_params<T>(cfg.stages.back().channels, cfg.num_classes, rng);
    return m;
}

// Backbone only: per stage patch_embed -> block[0] -> PEG -> remaining
// blocks. Returns the final feature map [B,H/32,W/32,C4] (ceil
// division at every stage). Accepts any H,W >= 32.
template <typename T>
Tensor<T> forward_features(const Model<T>& m, const Tensor<T>& images) {
    if (images.ndim() != 4 || images.dim(3) != 3)
        throw ShapeError("forward: expected [B,H,W,3] images, got " + shape_str(images.shape()));
    if (images.dim(1) < 32 || images.dim(2) < 32)
        throw ShapeError("forward: input smaller than 32x32");
    Tensor<T> x = images;
    for (const auto& st : m.stages) {
        x = patch_embed(x, st.patch);
        for (std::size_t bi = 0; bi < st.blocks.size(); ++bi) {
            x = encoder_block(x, st.blocks[bi]);
            if (bi == st.peg_after) x = peg(x, st.peg);
        }
    }
    return x;
}

// Full forward pass: backbone plus GAP classification head.
template <typename T>
Tensor<T> forward(const Model<T>& m, const Tensor<T>& images) {
    return classify_head(forward_features(m, images), m.head);
}

}  // namespace twins
