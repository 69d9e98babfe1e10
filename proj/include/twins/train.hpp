#pragma once

#include <ostream>

#include "twins/data.hpp"

namespace twins {

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    std::string checkpoint_path;
    double stop_at_accuracy = 0.0;  // 0 disables early stop
    std::size_t eval_every = 50;
    std::size_t log_every = 50;

    void validate() const {
        if (steps == 0 || batch_size == 0 || lr <= 0)
            throw ShapeError("train config: steps, batch size and lr must be positive");
    }
};

struct TrainResult {
    std::size_t steps_run = 0;
    double final_loss = 0;
    double train_accuracy = 0;
    bool diverged = false;
    std::size_t diverged_step = 0;
};

// Adam with decoupled weight decay; moment buffers follow the model's
// named-parameter order.
template <typename T>
class AdamW {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void step(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        if (m_.empty()) {
            for (const auto& [name, t] : params) {
                m_.emplace_back(t.size(), T(0));
                v_.emplace_back(t.size(), T(0));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, double(t_));
        const double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& tensor = const_cast<Tensor<T>&>(params[pi].second);
            const std::vector<T>& g = tensor.grad();
            T* w = tensor.data();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = T(beta1) * m[i] + T(1 - beta1) * g[i];
                v[i] = T(beta2) * v[i] + T(1 - beta2) * g[i] * g[i];
                const double mhat = double(m[i]) / bc1;
                const double vhat = double(v[i]) / bc2;
                w[i] -= T(lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * double(w[i])));
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

    void save_state(Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, Tensor<T>>>& params) const {
        Tensor<double> tstep({1});
        tstep.data()[0] = double(t_);
        ckpt.add("opt.t", tstep);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            if (pi < m_.size()) {
                ckpt.add("opt.m." + params[pi].first,
                         Tensor<T>::from(params[pi].second.shape(), m_[pi]));
                ckpt.add("opt.v." + params[pi].first,
                         Tensor<T>::from(params[pi].second.shape(), v_[pi]));
            }
        }
    }

    void load_state(const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, Tensor<T>>>& params) {
        const CheckpointTensor* ts = ckpt.find("opt.t");
        if (!ts) return;  // plain model checkpoint, start fresh
        t_ = std::size_t(ts->template as<double>()[0]);
        m_.clear();
        v_.clear();
        for (const auto& [name, t] : params) {
            const CheckpointTensor* m = ckpt.find("opt.m." + name);
            const CheckpointTensor* v = ckpt.find("opt.v." + name);
            if (!m || !v || m->count() != t.size() || v->count() != t.size())
                throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                      "optimizer state missing or mis-sized for " + name);
            m_.push_back(m->template as<T>());
            v_.push_back(v->template as<T>());
        }
    }

private:
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <typename T>
double evaluate_accuracy(const Model<T>& m, const ToyDataset& ds, std::size_t batch = 64) {
    NoGradGuard ng;
    const std::size_t n = ds.images.dim(0);
    const std::size_t S = ds.images.dim(1), W = ds.images.dim(2);
    std::size_t correct = 0;
    for (std::size_t off = 0; off < n; off += batch) {
        const std::size_t bs = std::min(batch, n - off);
        Tensor<T> x({bs, S, W, 3});
        const float* src = ds.images.data() + off * S * W * 3;
        for (std::size_t i = 0; i < bs * S * W * 3; ++i) x.data()[i] = T(src[i]);
        Tensor<T> logits = forward(m, x);
        const std::size_t K = logits.dim(1);
        for (std::size_t b = 0; b < bs; ++b) {
            const T* row = logits.data() + b * K;
            std::size_t arg = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (row[k] > row[arg]) arg = k;
            if (int(arg) == ds.labels[off + b]) ++correct;
        }
    }
    return double(correct) / double(n);
}

// Cross-entropy training over the toy set with a fixed, seeded batch
// order. Stops early once stop_at_accuracy is reached; flags
// divergence (NaN loss) with the offending step.
template <typename T>
TrainResult train_toy(Model<T>& model, const ToyDataset& ds, const TrainConfig& cfg,
                      AdamW<T>* opt_in = nullptr, std::ostream* log = nullptr) {
    cfg.validate();
    const std::size_t n = ds.images.dim(0);
    const std::size_t S = ds.images.dim(1), W = ds.images.dim(2);
    auto params = model.named_params();

    AdamW<T> local_opt;
    AdamW<T>& opt = opt_in ? *opt_in : local_opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    SplitMix64 shuffle_rng(cfg.seed ^ 0x5b5ad4u);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::size_t cursor = n;  // forces a shuffle before the first batch

    // replay the batch stream consumed before a resume so a resumed run
    // matches an uninterrupted one exactly
    const std::size_t consumed = opt.steps_taken() * std::min(cfg.batch_size, n);
    for (std::size_t s = 0; s < consumed; ++s) {
        if (cursor >= n) {
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.below(i)]);
            cursor = 0;
        }
        ++cursor;
    }

    TrainResult res;
    for (std::size_t step = opt.steps_taken(); step < cfg.steps; ++step) {
        const std::size_t bs = std::min(cfg.batch_size, n);
        Tensor<T> x({bs, S, W, 3});
        std::vector<int> labels(bs);
        for (std::size_t b = 0; b < bs; ++b) {
            if (cursor >= n) {
                for (std::size_t i = n; i > 1; --i)
                    std::swap(order[i - 1], order[shuffle_rng.below(i)]);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            const float* src = ds.images.data() + idx * S * W * 3;
            T* dst = x.data() + b * S * W * 3;
            for (std::size_t i = 0; i < S * W * 3; ++i) dst[i] = T(src[i]);
            labels[b] = ds.labels[idx];
        }

        model.zero_grad();
        Tensor<T> loss;
        try {
            Tensor<T> logits = forward(model, x);
            loss = cross_entropy_loss(logits, labels);
        } catch (const NumericError&) {
            res.diverged = true;
            res.diverged_step = step;
            return res;
        }
        const double lv = double(loss.item());
        if (!std::isfinite(lv)) {
            res.diverged = true;
            res.diverged_step = step;
            return res;
        }
        backward(loss);
        opt.step(params);
        res.final_loss = lv;
        res.steps_run = step + 1;

        if (log && cfg.log_every && (step + 1) % cfg.log_every == 0)
            (*log) << "step " << (step + 1) << " loss " << lv << "\n";
        if (cfg.stop_at_accuracy > 0 && cfg.eval_every && (step + 1) % cfg.eval_every == 0) {
            res.train_accuracy = evaluate_accuracy(model, ds);
            if (log && cfg.log_every)
                (*log) << "step " << (step + 1) << " train-acc " << res.train_accuracy << "\n";
            if (res.train_accuracy >= cfg.stop_at_accuracy) break;
        }
    }
    res.train_accuracy = evaluate_accuracy(model, ds);

    if (!cfg.checkpoint_path.empty()) {
        Checkpoint ckpt = checkpoint_from_model(model);
        opt.save_state(ckpt, params);
        save_checkpoint(ckpt, cfg.checkpoint_path);
    }
    return res;
}

}  // namespace twins
