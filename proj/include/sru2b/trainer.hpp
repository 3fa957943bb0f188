#pragma once

// Mini-batch AdaGrad training with global-norm clipping and length-bucketed
// batches. Everything random is keyed off (seed, epoch) or (seed, step) so a
// run can be stopped and resumed at any step boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "sru2b/error.hpp"
#include "sru2b/model.hpp"
#include "sru2b/objective.hpp"
#include "sru2b/params.hpp"
#include "sru2b/rng.hpp"

namespace sru2b {

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    double learning_rate = 0.1;
    double epsilon = 1e-8;
    double clip_norm = 5.0;
    LossConfig loss;

    void validate() const {
        if (batch_size < 1) throw PreconditionError("TrainConfig: batch_size must be at least 1");
        if (!(learning_rate >= 0.0)) throw PreconditionError("TrainConfig: learning_rate must be non-negative");
        if (!(epsilon > 0.0)) throw PreconditionError("TrainConfig: epsilon must be positive");
        if (!(clip_norm > 0.0)) throw PreconditionError("TrainConfig: clip_norm must be positive");
        loss.validate();
    }
};

struct OptimizerState {
    ModelParams accumulators;
    double learning_rate = 0.1;
    double epsilon = 1e-8;
    double clip_norm = 5.0;

    static OptimizerState for_params(const ModelParams& p, const TrainConfig& cfg) {
        return {zeros_like(p), cfg.learning_rate, cfg.epsilon, cfg.clip_norm};
    }
};

// Rescales g in place when its global norm is strictly above clip_norm.
// Returns the pre-clip norm.
inline double clip_global(ModelParams& g, double clip_norm) {
    if (!(clip_norm > 0.0)) throw PreconditionError("clip_global: clip_norm must be positive");
    const double norm = global_norm(g);
    if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for_each_tensor(g, [&](std::string_view, std::span<double> v, const auto&) {
            for (double& x : v) x *= s;
        });
    }
    return norm;
}

namespace detail {

// Parallel walk over the tensors of two same-shaped parameter sets.
template <class F>
void zip_tensors(ModelParams& a, const ModelParams& b, F&& f) {
    std::vector<std::span<const double>> bs;
    for_each_tensor(b, [&](std::string_view, std::span<const double> v, const auto&) { bs.push_back(v); });
    std::size_t k = 0;
    for_each_tensor(a, [&](std::string_view name, std::span<double> v, const auto&) {
        if (k >= bs.size() || bs[k].size() != v.size())
            throw ShapeError("parameter structure mismatch at " + std::string(name));
        f(v, bs[k++]);
    });
    if (k != bs.size()) throw ShapeError("parameter structure mismatch: tensor counts differ");
}

}  // namespace detail

inline void adagrad_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
    std::vector<std::span<const double>> gs;
    for_each_tensor(grads, [&](std::string_view, std::span<const double> v, const auto&) { gs.push_back(v); });
    std::vector<std::span<double>> accs;
    for_each_tensor(state.accumulators, [&](std::string_view, std::span<double> v, const auto&) { accs.push_back(v); });
    if (accs.size() != gs.size()) throw ShapeError("adagrad_step: accumulator structure does not match gradients");

    const double lr = state.learning_rate, eps = state.epsilon;
    std::size_t k = 0;
    for_each_tensor(params, [&](std::string_view name, std::span<double> theta, const auto&) {
        if (k >= gs.size() || gs[k].size() != theta.size() || accs[k].size() != theta.size())
            throw ShapeError("adagrad_step: shape mismatch at " + std::string(name));
        const auto g = gs[k];
        const auto acc = accs[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            acc[i] += gi * gi;
            theta[i] -= lr * gi / std::sqrt(acc[i] + eps);
        }
        ++k;
    });
}

// Sort by clicked length (stable), chunk, shuffle the chunk order.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> clicked_lengths,
                                                          std::size_t batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw PreconditionError("make_batches: batch_size must be at least 1");
    std::vector<std::size_t> order(clicked_lengths.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return clicked_lengths[a] < clicked_lengths[b]; });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    Rng rng(seed);
    shuffle(batches, rng);
    return batches;
}

inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<IndexedExample>& examples,
                                                          std::size_t batch_size, std::uint64_t seed) {
    std::vector<std::size_t> lens;
    lens.reserve(examples.size());
    for (const auto& ex : examples) lens.push_back(ex.clicked.size());
    return make_batches(lens, batch_size, seed);
}

// Label occurrences per item over the training examples.
inline std::vector<std::uint64_t> label_counts(const std::vector<IndexedExample>& examples, std::size_t n_items) {
    std::vector<std::uint64_t> counts(n_items, 0);
    for (const auto& ex : examples)
        for (std::size_t i : ex.labels) ++counts.at(i);
    return counts;
}

struct EpochLoss {
    std::size_t epoch;  // 1-based
    double mean_loss;
};

struct StepReport {
    std::uint64_t step;
    double loss;
    double grad_norm;  // before clipping
};

// Owns the optimizer state and the step counter for one model. Batches of
// epoch e come from make_batches(..., stream(seed, e)); negatives for the
// p-th example of step s come from stream(seed, s, p).
class Trainer {
public:
    Trainer(Model& model, std::vector<IndexedExample> train, TrainConfig cfg)
        : model_(model), train_(std::move(train)), cfg_(std::move(cfg)),
          opt_(OptimizerState::for_params(model.params, cfg_)), grads_(zeros_like(model.params)),
          cache_(model.vocab.n_items()) {
        cfg_.validate();
        if (train_.empty()) throw PreconditionError("Trainer: empty training split");
        const auto counts = label_counts(train_, model_.vocab.n_items());
        sampler_ = SamplerState(counts);
        steps_per_epoch_ = (train_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    }

    const TrainConfig& config() const noexcept { return cfg_; }
    const OptimizerState& optimizer() const noexcept { return opt_; }
    OptimizerState& optimizer() noexcept { return opt_; }
    const SamplerState& sampler() const noexcept { return sampler_; }
    std::uint64_t global_step() const noexcept { return step_; }
    std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::uint64_t total_steps() const noexcept { return static_cast<std::uint64_t>(cfg_.epochs) * steps_per_epoch_; }

    // Running sum of batch losses for the epoch in progress; persisted with
    // checkpoints so a resumed run reports the same trace.
    double partial_epoch_loss() const noexcept { return epoch_sum_; }

    void restore(OptimizerState opt, std::uint64_t step, double partial_epoch_loss) {
        detail::zip_tensors(opt.accumulators, model_.params, [](auto, auto) {});
        opt_ = std::move(opt);
        step_ = step;
        epoch_sum_ = partial_epoch_loss;
        batches_epoch_ = kNoEpoch;
    }

    std::vector<Negative> negatives_for(const IndexedExample& ex, std::uint64_t step, std::size_t position) const {
        Rng rng = Rng::stream(cfg_.seed, {0x6e6567, step, position});
        return sample_negatives(sampler_, ex.labels, cfg_.loss.num_negatives, rng);
    }

    // Runs one optimizer step. When the step closes an epoch, `finished`
    // receives that epoch's mean batch loss.
    StepReport step(std::function<void(const EpochLoss&)> finished = {}) {
        const std::size_t epoch = static_cast<std::size_t>(step_ / steps_per_epoch_);
        const std::size_t pos = static_cast<std::size_t>(step_ % steps_per_epoch_);
        if (batches_epoch_ != epoch) {
            batches_ = make_batches(train_, cfg_.batch_size, Rng::stream(cfg_.seed, {0xba7c4, epoch}).next());
            batches_epoch_ = epoch;
        }
        const auto& batch = batches_[pos];

        std::vector<IndexedExample> xs;
        std::vector<std::vector<Negative>> negs;
        xs.reserve(batch.size());
        negs.reserve(batch.size());
        for (std::size_t p = 0; p < batch.size(); ++p) {
            xs.push_back(train_[batch[p]]);
            negs.push_back(negatives_for(xs.back(), step_, p));
        }

        set_zero(grads_);
        const double loss = batch_loss_and_gradient(model_, xs, negs, cfg_.loss, grads_, cache_);
        const double norm = global_norm(grads_);
        if (!std::isfinite(loss) || !std::isfinite(norm)) {
            std::ostringstream msg;
            msg << "non-finite training state at epoch " << epoch + 1 << ", batch " << pos + 1 << " (step " << step_
                << "): loss=" << loss << ", gradient norm=" << norm << ", parameter norm=" << global_norm(model_.params)
                << ", accumulator norm=" << global_norm(opt_.accumulators);
            throw NumericError(msg.str());
        }
        clip_global(grads_, opt_.clip_norm);
        adagrad_step(model_.params, grads_, opt_);

        StepReport rep{step_, loss, norm};
        ++step_;
        epoch_sum_ += loss;
        if (pos + 1 == steps_per_epoch_) {
            if (finished) finished({epoch + 1, epoch_sum_ / static_cast<double>(steps_per_epoch_)});
            epoch_sum_ = 0.0;
        }
        return rep;
    }

    // Runs until `until` steps have been taken in total (or the configured
    // number of epochs when omitted). Returns completed-epoch means.
    std::vector<EpochLoss> run(std::uint64_t until, std::function<void(const EpochLoss&)> on_epoch = {}) {
        std::vector<EpochLoss> trace;
        while (step_ < until) {
            step([&](const EpochLoss& e) {
                trace.push_back(e);
                if (on_epoch) on_epoch(e);
            });
        }
        return trace;
    }
    std::vector<EpochLoss> run(std::function<void(const EpochLoss&)> on_epoch = {}) {
        return run(total_steps(), std::move(on_epoch));
    }

private:
    static constexpr std::size_t kNoEpoch = static_cast<std::size_t>(-1);

    Model& model_;
    std::vector<IndexedExample> train_;
    TrainConfig cfg_;
    OptimizerState opt_;
    ModelParams grads_;
    ItemEmbeddingCache cache_;
    SamplerState sampler_;
    std::size_t steps_per_epoch_ = 0;
    std::uint64_t step_ = 0;
    double epoch_sum_ = 0.0;
    std::vector<std::vector<std::size_t>> batches_;
    std::size_t batches_epoch_ = kNoEpoch;
};

// Convenience: trains `model` in place for cfg.epochs and returns the trace.
inline std::vector<EpochLoss> train(Model& model, const std::vector<IndexedExample>& train_split, const TrainConfig& cfg) {
    if (cfg.epochs == 0) return {};
    Trainer t(model, train_split, cfg);
    return t.run();
}

}  // namespace sru2b
