#pragma once

#include "twins/checkpoint.hpp"

namespace twins {

// Synthetic 10-class set: a bright blob in one of 5 positions plus a
// background gradient in one of 2 directions; class = position*2 +
// direction. The gradient cue is global, the blob cue is local.
struct ToyDataset {
    Tensor<float> images;     // [N,32,32,3] in [0,1]
    std::vector<int> labels;  // in [0,10)
    std::uint64_t seed = 0;
};

inline ToyDataset gen_dataset(std::uint64_t seed, std::size_t n) {
    constexpr std::size_t S = 32;
    constexpr int centers[5][2] = {{8, 8}, {8, 24}, {24, 8}, {24, 24}, {16, 16}};
    ToyDataset ds;
    ds.seed = seed;
    ds.images = Tensor<float>({n, S, S, 3});
    ds.labels.resize(n);
    SplitMix64 rng(seed);

    // class-balanced within +-1, order shuffled
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = int(i % 10);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    float* img = ds.images.data();
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = order[i];
        ds.labels[i] = cls;
        const int pos = cls / 2;
        const int dir = cls % 2;
        const float cy = float(centers[pos][0]) + float(rng.uniform(-1.5, 1.5));
        const float cx = float(centers[pos][1]) + float(rng.uniform(-1.5, 1.5));
        float* base = img + i * S * S * 3;
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                const float ramp =
                    0.4f * (dir == 0 ? float(x) / float(S - 1) : float(y) / float(S - 1));
                const float dy = float(y) - cy, dx = float(x) - cx;
                const float blob = 0.8f * std::exp(-(dy * dy + dx * dx) / 18.0f);
                for (std::size_t c = 0; c < 3; ++c) {
                    float v = ramp + blob + 0.05f * float(rng.uniform(-1.0, 1.0));
                    base[(y * S + x) * 3 + c] = std::min(1.0f, std::max(0.0f, v));
                }
            }
    }
    return ds;
}

// Cache format: the checkpoint container with entries "images" (f32)
// and "labels" (f32 holding integer values).
inline void save_dataset(const ToyDataset& ds, const std::string& path) {
    Checkpoint ckpt;
    ckpt.add("images", ds.images);
    Tensor<float> labels({ds.labels.size()});
    for (std::size_t i = 0; i < ds.labels.size(); ++i) labels.data()[i] = float(ds.labels[i]);
    ckpt.add("labels", labels);
    save_checkpoint(ckpt, path);
}

inline ToyDataset load_dataset(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    const CheckpointTensor* imgs = ckpt.find("images");
    const CheckpointTensor* labels = ckpt.find("labels");
    if (!imgs || !labels)
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                              path + ": not a dataset cache (images/labels missing)");
    ToyDataset ds;
    ds.images = Tensor<float>::from(imgs->shape, imgs->as<float>());
    ds.labels.reserve(labels->count());
    for (float v : labels->as<float>()) ds.labels.push_back(int(v));
    return ds;
}

}  // namespace twins
