#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "twins/twins.hpp"

using namespace twins;

namespace {

struct HeadlineTarget {
    double params;  // absolute
    double macs;
    double param_tol;
    double mac_tol;
};

const std::map<std::string, HeadlineTarget> kTargets = {
    {"pcpvt-s", {24.1e6, 3.8e9, 0.02, 0.15}}, {"pcpvt-b", {43.8e6, 6.7e9, 0.02, 0.15}},
    {"pcpvt-l", {60.9e6, 9.8e9, 0.02, 0.15}}, {"svt-s", {24.0e6, 2.9e9, 0.10, 0.15}},
    {"svt-b", {56.0e6, 8.6e9, 0.10, 0.15}},   {"svt-l", {99.2e6, 15.1e9, 0.10, 0.15}},
};

bool parse_resolution(const std::string& s, std::size_t& h, std::size_t& w) {
    const auto x = s.find('x');
    if (x == std::string::npos) return false;
    try {
        h = std::stoul(s.substr(0, x));
        w = std::stoul(s.substr(x + 1));
    } catch (...) {
        return false;
    }
    return h > 0 && w > 0;
}

ModelConfig resolve_config(const std::string& model, const std::string& config_path) {
    if (!model.empty()) {
        if (model.rfind("micro-", 0) == 0)
            return micro_variant(builtin_config(model.substr(6)));
        return builtin_config(model);
    }
    std::ifstream is(config_path);
    if (!is) throw ShapeError("cannot open config " + config_path);
    nlohmann::json j;
    is >> j;
    return j.get<ModelConfig>();
}

// raw image container: "TIMG", u32 H, u32 W, u32 C, f32 pixels
Tensor<float> read_timg(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ShapeError("cannot open image " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TIMG")
        throw ShapeError(path + ": not a TIMG file");
    std::uint32_t h = 0, w = 0, c = 0;
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    if (!is || h == 0 || w == 0 || c == 0)
        throw ShapeError(path + ": bad TIMG header");
    Tensor<float> img({1, h, w, c});
    is.read(reinterpret_cast<char*>(img.data()),
            std::streamsize(img.size() * sizeof(float)));
    if (!is) throw ShapeError(path + ": truncated TIMG pixel data");
    return img;
}

void write_timg(const std::string& path, const float* pix, std::uint32_t h, std::uint32_t w,
                std::uint32_t c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ShapeError("cannot open " + path + " for writing");
    os.write("TIMG", 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(pix),
             std::streamsize(std::size_t(h) * w * c * sizeof(float)));
}

int cmd_report(const std::string& model, const std::string& config_path,
               const std::string& resolution, const std::string& format) {
    std::size_t H = 0, W = 0;
    if (!parse_resolution(resolution, H, W)) {
        std::cerr << "bad --resolution '" << resolution << "', expected HxW\n";
        return 2;
    }
    ModelConfig cfg;
    try {
        cfg = resolve_config(model, config_path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    auto m = build<float>(cfg, 1);
    auto rep = count_model(m, H, W);

    if (format == "csv") {
        std::cout << "layer,macs,params\n";
        for (const auto& lc : rep.layers)
            std::cout << lc.name << "," << mac_str(lc.macs) << "," << lc.params << "\n";
        std::cout << "total," << mac_str(rep.total_macs) << "," << rep.total_params << "\n";
    } else if (format == "json") {
        nlohmann::json j;
        j["model"] = cfg.name;
        j["resolution"] = {H, W};
        j["layers"] = nlohmann::json::array();
        for (const auto& lc : rep.layers)
            j["layers"].push_back({{"layer", lc.name},
                                   {"macs", mac_double(lc.macs)},
                                   {"attn_macs", mac_double(lc.attn_macs)},
                                   {"params", lc.params}});
        j["total_macs"] = mac_double(rep.total_macs);
        j["total_attn_macs"] = mac_double(rep.total_attn_macs);
        j["total_params"] = rep.total_params;
        std::cout << j.dump(2) << "\n";
    } else {
        std::size_t width = 5;
        for (const auto& lc : rep.layers) width = std::max(width, lc.name.size());
        std::cout << std::left << std::setw(int(width)) << "layer" << std::right
                  << std::setw(18) << "macs" << std::setw(12) << "params" << "\n";
        for (const auto& lc : rep.layers)
            std::cout << std::left << std::setw(int(width)) << lc.name << std::right
                      << std::setw(18) << mac_str(lc.macs) << std::setw(12) << lc.params
                      << "\n";
        std::cout << std::left << std::setw(int(width)) << "total" << std::right
                  << std::setw(18) << mac_str(rep.total_macs) << std::setw(12)
                  << rep.total_params << "\n";
        std::cout << "attention-map share: " << mac_str(rep.total_attn_macs) << " macs\n";
    }

    // informational comparison against the published figures; never
    // changes the exit status
    auto it = kTargets.find(cfg.name);
    if (it != kTargets.end() && H == 224 && W == 224) {
        const auto& t = it->second;
        const double p = double(rep.total_params), f = mac_double(rep.total_macs);
        const bool pok = std::abs(p - t.params) / t.params < t.param_tol;
        const bool fok = std::abs(f - t.macs) / t.macs < t.mac_tol;
        std::cout << "target params " << t.params / 1e6 << "M: measured " << p / 1e6 << "M ["
                  << (pok ? "pass" : "fail") << "]\n";
        std::cout << "target macs " << t.macs / 1e9 << "G: measured " << f / 1e9 << "G ["
                  << (fok ? "pass" : "fail") << "]\n";
    }
    return 0;
}

int cmd_verify(std::uint64_t seed, const std::string& json_path) {
    auto summary = run_all(seed);
    for (const auto& c : summary.results)
        std::cout << (c.pass ? "pass" : "FAIL") << "  " << c.name << "  measured "
                  << c.measured << "  tolerance " << c.tolerance << "  seed " << c.seed
                  << "\n";
    if (!json_path.empty()) {
        std::ofstream os(json_path);
        if (!os) {
            std::cerr << "cannot write " << json_path << "\n";
            return 2;
        }
        os << summary.to_json_summary().dump(2) << "\n";
    }
    std::cout << (summary.all_pass() ? "all checks passed" : "checks FAILED") << "\n";
    return summary.all_pass() ? 0 : 1;
}

int cmd_bench(const std::string& op_name, std::vector<std::size_t> sizes, std::size_t dim,
              std::size_t window) {
    ScalingOp op;
    double want_slope;
    if (op_name == "lsa") {
        op = ScalingOp::Lsa;
        want_slope = 1.0;
    } else if (op_name == "gsa") {
        op = ScalingOp::Gsa;
        want_slope = 2.0;
    } else if (op_name == "global") {
        op = ScalingOp::Global;
        want_slope = 2.0;
    } else {
        std::cerr << "unknown --op '" << op_name << "'\n";
        return 2;
    }
    auto res = scaling_bench<float>(op, sizes, dim, window);
    std::cout << "side" << std::setw(12) << "HW" << std::setw(20) << "attn_macs"
              << std::setw(20) << "total_macs" << std::setw(12) << "seconds\n";
    for (const auto& r : res.rows)
        std::cout << std::setw(4) << r.side << std::setw(12) << r.hw << std::setw(20)
                  << mac_str(r.attn_macs) << std::setw(20) << mac_str(r.total_macs)
                  << std::setw(12) << std::fixed << std::setprecision(4) << r.seconds << "\n";
    const bool ok = std::abs(res.attn_slope - want_slope) < 0.05;
    std::cout << "counted attention slope " << std::setprecision(4) << res.attn_slope
              << " (want " << want_slope << " +-0.05) [" << (ok ? "pass" : "fail") << "]\n";
    std::cout << "wall-time slopes are informational only\n";
    return ok ? 0 : 1;
}

int cmd_train_toy(const std::string& model, const TrainConfig& tc, const std::string& data_path,
                  std::size_t samples, std::uint64_t data_seed, bool resume) {
    ModelConfig cfg;
    try {
        const std::string base = model.rfind("micro-", 0) == 0 ? model.substr(6) : model;
        cfg = micro_variant(builtin_config(base));
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    ToyDataset ds;
    if (!data_path.empty()) {
        std::ifstream probe(data_path);
        if (probe.good()) {
            ds = load_dataset(data_path);
            std::cout << "loaded " << ds.images.dim(0) << " cached samples from " << data_path
                      << "\n";
        } else {
            ds = gen_dataset(data_seed, samples);
            save_dataset(ds, data_path);
            std::cout << "generated " << samples << " samples (seed " << data_seed
                      << ") and cached to " << data_path << "\n";
        }
    } else {
        ds = gen_dataset(data_seed, samples);
    }

    auto m = build<float>(cfg, tc.seed);
    AdamW<float> opt;
    if (resume && !tc.checkpoint_path.empty()) {
        std::ifstream probe(tc.checkpoint_path);
        if (probe.good()) {
            auto ckpt = load_checkpoint(tc.checkpoint_path);
            apply_checkpoint(ckpt, m);
            opt.load_state(ckpt, m.named_params());
            std::cout << "resumed from " << tc.checkpoint_path << " at step "
                      << opt.steps_taken() << "\n";
        }
    }
    std::cout << "training " << cfg.name << " (" << m.param_count() << " params) for up to "
              << tc.steps << " steps\n";
    auto res = train_toy(m, ds, tc, &opt, &std::cout);
    if (res.diverged) {
        std::cerr << "diverged (non-finite loss) at step " << res.diverged_step << "\n";
        return 3;
    }
    std::cout << std::setprecision(6) << "final loss " << res.final_loss << " train accuracy "
              << res.train_accuracy << " after " << res.steps_run << " steps\n";
    if (tc.stop_at_accuracy > 0 && res.train_accuracy < tc.stop_at_accuracy) {
        std::cerr << "target accuracy " << tc.stop_at_accuracy << " not reached\n";
        return 1;
    }
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& model,
              const std::string& config_path, const std::string& input, std::size_t topk) {
    ModelConfig cfg;
    try {
        cfg = resolve_config(model, config_path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    auto m = build<float>(cfg, 0);
    load_model(m, ckpt_path);
    Tensor<float> img = read_timg(input);
    if (img.dim(3) != 3) {
        std::cerr << "expected a 3-channel image, got C=" << img.dim(3) << "\n";
        return 2;
    }
    NoGradGuard ng;
    Tensor<float> logits = forward(m, img);
    const std::size_t K = logits.dim(1);
    std::vector<std::size_t> order(K);
    for (std::size_t i = 0; i < K; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return logits.vec()[a] > logits.vec()[b]; });
    // softmax over the row for readable confidences
    double mx = logits.vec()[order[0]], denom = 0;
    for (std::size_t i = 0; i < K; ++i) denom += std::exp(double(logits.vec()[i]) - mx);
    for (std::size_t i = 0; i < std::min(topk, K); ++i) {
        const std::size_t cls = order[i];
        std::cout << "class " << cls << "  logit " << std::setprecision(6)
                  << logits.vec()[cls] << "  prob "
                  << std::exp(double(logits.vec()[cls]) - mx) / denom << "\n";
    }
    return 0;
}

int cmd_gen_dataset(std::uint64_t seed, std::size_t n, const std::string& output,
                    const std::string& export_timg, std::size_t export_index) {
    auto ds = gen_dataset(seed, n);
    save_dataset(ds, output);
    std::cout << "wrote " << n << " samples (seed " << seed << ") to " << output << "\n";
    if (!export_timg.empty()) {
        if (export_index >= n) {
            std::cerr << "--export-index out of range\n";
            return 2;
        }
        const std::size_t S = ds.images.dim(1), W = ds.images.dim(2);
        write_timg(export_timg, ds.images.data() + export_index * S * W * 3,
                   std::uint32_t(S), std::uint32_t(W), 3);
        std::cout << "exported sample " << export_index << " (label "
                  << ds.labels[export_index] << ") to " << export_timg << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Twins attention models: analysis, verification, and toy training"};
    app.require_subcommand(1);

    // report
    std::string rep_model, rep_config, rep_resolution = "224x224", rep_format = "table";
    auto* rep = app.add_subcommand("report", "per-layer multiply-add and parameter accounting");
    auto* rm = rep->add_option("--model", rep_model, "built-in variant name");
    auto* rc = rep->add_option("--config", rep_config, "model config JSON");
    rm->excludes(rc);
    rep->add_option("--resolution", rep_resolution, "input size HxW");
    rep->add_option("--format", rep_format, "table|csv|json")
        ->check(CLI::IsMember({"table", "csv", "json"}));

    // verify
    std::uint64_t ver_seed = 12345;
    std::string ver_json;
    auto* ver = app.add_subcommand("verify", "run the oracle and property check suite");
    ver->add_option("--seed", ver_seed, "base seed for the checks");
    ver->add_option("--json", ver_json, "write the JSON summary here");

    // bench
    std::string bench_op = "lsa";
    std::vector<std::size_t> bench_sizes = {28, 56, 112};
    std::size_t bench_dim = 32, bench_window = 7;
    auto* ben = app.add_subcommand("bench", "attention scaling measurements");
    ben->add_option("--op", bench_op, "lsa|gsa|global");
    ben->add_option("--sizes", bench_sizes, "square grid sides, increasing")->delimiter(',');
    ben->add_option("--dim", bench_dim, "channel dim");
    ben->add_option("--window", bench_window, "window size / summary ratio");

    // train-toy
    std::string tt_model = "svt-s", tt_data;
    TrainConfig tt_cfg;
    tt_cfg.stop_at_accuracy = 0.95;
    std::size_t tt_samples = 256;
    std::uint64_t tt_data_seed = 2024;
    bool tt_resume = false;
    auto* tt = app.add_subcommand("train-toy", "overfit a micro variant on the synthetic set");
    tt->add_option("--model", tt_model, "base variant (trains its micro version)");
    tt->add_option("--steps", tt_cfg.steps, "max optimizer steps");
    tt->add_option("--batch-size", tt_cfg.batch_size, "batch size");
    tt->add_option("--lr", tt_cfg.lr, "learning rate");
    tt->add_option("--weight-decay", tt_cfg.weight_decay, "decoupled weight decay");
    tt->add_option("--seed", tt_cfg.seed, "init and shuffle seed");
    tt->add_option("--checkpoint", tt_cfg.checkpoint_path, "write model+optimizer state here");
    tt->add_option("--target-acc", tt_cfg.stop_at_accuracy, "early-stop train accuracy");
    tt->add_option("--dataset", tt_data, "dataset cache path (generated if absent)");
    tt->add_option("--samples", tt_samples, "sample count when generating");
    tt->add_option("--data-seed", tt_data_seed, "dataset generator seed");
    tt->add_flag("--resume", tt_resume, "resume from --checkpoint if present");

    // infer
    std::string inf_ckpt, inf_model, inf_config, inf_input;
    std::size_t inf_topk = 5;
    auto* inf = app.add_subcommand("infer", "classify one TIMG image");
    inf->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
    auto* im = inf->add_option("--model", inf_model, "built-in variant name");
    auto* ic = inf->add_option("--config", inf_config, "model config JSON");
    im->excludes(ic);
    inf->add_option("--input", inf_input, "TIMG image path")->required();
    inf->add_option("--topk", inf_topk, "classes to print");

    // gen-dataset
    std::uint64_t gd_seed = 2024;
    std::size_t gd_n = 256, gd_index = 0;
    std::string gd_out = "toy.twns", gd_timg;
    auto* gd = app.add_subcommand("gen-dataset", "write the synthetic dataset cache");
    gd->add_option("--seed", gd_seed, "generator seed");
    gd->add_option("--n", gd_n, "sample count");
    gd->add_option("--output", gd_out, "cache path");
    gd->add_option("--export-timg", gd_timg, "also export one sample as TIMG");
    gd->add_option("--export-index", gd_index, "which sample to export");

    CLI11_PARSE(app, argc, argv);

    try {
        if (rep->parsed()) {
            if (rep_model.empty() && rep_config.empty()) {
                std::cerr << "report: one of --model or --config is required\n";
                return 2;
            }
            return cmd_report(rep_model, rep_config, rep_resolution, rep_format);
        }
        if (ver->parsed()) return cmd_verify(ver_seed, ver_json);
        if (ben->parsed()) return cmd_bench(bench_op, bench_sizes, bench_dim, bench_window);
        if (tt->parsed())
            return cmd_train_toy(tt_model, tt_cfg, tt_data, tt_samples, tt_data_seed, tt_resume);
        if (inf->parsed()) {
            if (inf_model.empty() && inf_config.empty()) {
                std::cerr << "infer: one of --model or --config is required\n";
                return 2;
            }
            return cmd_infer(inf_ckpt, inf_model, inf_config, inf_input, inf_topk);
        }
        if (gd->parsed()) return cmd_gen_dataset(gd_seed, gd_n, gd_out, gd_timg, gd_index);
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
