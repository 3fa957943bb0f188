#include <gtest/gtest.h>

#include <cmath>

#include "sru2b/evalrank.hpp"
#include "sru2b/syngen.hpp"
#include "sru2b/trainer.hpp"
#include "test_support.hpp"

using namespace sru2b;
using namespace sru2b::testing;

namespace {

// One-vector "model" for optimizer arithmetic: only b_q is non-empty.
ModelParams single(std::vector<double> v) {
    ModelParams p;
    p.encoder.b_q = DenseVector(std::move(v));
    return p;
}

const Dataset& small_dataset() {
    static const Dataset d = [] {
        GenConfig g;
        g.n_users = 40;
        g.n_items = 300;
        g.n_leaf_categories = 20;
        g.n_brands = 30;
        g.n_shops = 40;
        g.seed = 5;
        const auto log = generate_log(g);
        return prepare_dataset(log.catalog.items, log.events, SequenceConfig{}, 0.2);
    }();
    return d;
}

ModelConfig small_model() {
    ModelConfig c;
    c.embed_dim = 8;
    c.feature_dims = {8, 4, 4, 4, 4};
    return c;
}

TrainConfig small_train(std::size_t epochs = 2) {
    TrainConfig t;
    t.batch_size = 16;
    t.epochs = epochs;
    t.seed = 3;
    t.loss.num_negatives = 20;
    return t;
}

}  // namespace

TEST(ClipGlobal, Examples) {
    auto zero = single({0, 0});
    EXPECT_EQ(clip_global(zero, 5.0), 0.0);
    EXPECT_EQ(zero.encoder.b_q, (DenseVector{0, 0}));

    auto big = single({6, 8});
    EXPECT_EQ(clip_global(big, 5.0), 10.0);
    EXPECT_EQ(big.encoder.b_q, (DenseVector{3, 4}));

    auto edge = single({3, 4});
    clip_global(edge, 5.0);
    EXPECT_EQ(edge.encoder.b_q, (DenseVector{3, 4}));

    EXPECT_THROW(clip_global(edge, 0.0), PreconditionError);
}

TEST(ClipGlobal, BoundHoldsForRandomGradients) {
    Model m = tiny_model(4, ClickedEncoder::recurrent, 1);
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        ModelParams g = zeros_like(m.params);
        randomize(g, rng, rng.uniform(0.01, 10));
        const double clip = rng.uniform(0.1, 20);
        clip_global(g, clip);
        EXPECT_LE(global_norm(g), clip + 1e-9);
    }
}

TEST(AdaGrad, ZeroGradientChangesNothing) {
    auto p = single({1.0, -2.0});
    OptimizerState st{single({0.5, 0}), 0.1, 1e-8, 5};
    adagrad_step(p, single({0, 0}), st);
    EXPECT_EQ(p.encoder.b_q, (DenseVector{1.0, -2.0}));
    EXPECT_EQ(st.accumulators.encoder.b_q, (DenseVector{0.5, 0}));
}

TEST(AdaGrad, FirstAndSecondSteps) {
    auto p = single({1.0});
    OptimizerState st{single({0}), 0.1, 1e-8, 5};
    adagrad_step(p, single({2.0}), st);
    EXPECT_NEAR(p.encoder.b_q[0], 0.9, 1e-9);
    const double before = p.encoder.b_q[0];
    adagrad_step(p, single({2.0}), st);
    EXPECT_EQ(st.accumulators.encoder.b_q[0], 8.0);
    EXPECT_NEAR(before - p.encoder.b_q[0], 0.1 * 2 / std::sqrt(8.0), 1e-9);
    EXPECT_NEAR(before - p.encoder.b_q[0], 0.07071, 1e-5);
}

TEST(AdaGrad, ShapeMismatchRejected) {
    auto p = single({1.0, 2.0});
    OptimizerState st{single({0}), 0.1, 1e-8, 5};
    EXPECT_THROW(adagrad_step(p, single({1.0, 1.0}), st), ShapeError);
}

TEST(MakeBatches, Examples) {
    const std::vector<std::size_t> few{3, 1, 2};
    const auto one = make_batches(few, 8, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], (std::vector<std::size_t>{1, 2, 0}));

    const std::vector<std::size_t> lens{1, 9, 1, 9};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto b = make_batches(lens, 2, seed);
        ASSERT_EQ(b.size(), 2u);
        std::sort(b.begin(), b.end());
        EXPECT_EQ(b[0], (std::vector<std::size_t>{0, 2}));
        EXPECT_EQ(b[1], (std::vector<std::size_t>{1, 3}));
    }
    EXPECT_EQ(make_batches(lens, 1, 4), make_batches(lens, 1, 4));
    EXPECT_THROW(make_batches(lens, 0, 4), PreconditionError);
}

TEST(MakeBatches, PartitionsEveryIndexOnce) {
    Rng rng(2);
    std::vector<std::size_t> lens(101);
    for (auto& l : lens) l = 1 + rng.below(20);
    const auto batches = make_batches(lens, 8, 9);
    std::vector<int> seen(lens.size());
    std::size_t last_small = 0;
    for (const auto& b : batches) {
        EXPECT_LE(b.size(), 8u);
        if (b.size() < 8) ++last_small;
        for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LE(lens[b[i - 1]], lens[b[i]]);
        for (auto i : b) ++seen[i];
    }
    EXPECT_EQ(last_small, 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(LabelCounts, CountsLabelOccurrences) {
    std::vector<IndexedExample> xs{{0, {1}, {}, {2, 2, 3}}, {0, {1}, {}, {3}}};
    EXPECT_EQ(label_counts(xs, 5), (std::vector<std::uint64_t>{0, 0, 2, 2, 0}));
}

TEST(Train, ZeroEpochsLeavesParametersUntouched) {
    const auto& d = small_dataset();
    Model m = make_model(small_model(), d.vocab, 1);
    const auto before = m.params;
    const auto trace = train(m, d.train, small_train(0));
    EXPECT_TRUE(trace.empty());
    std::vector<double> a, b;
    for_each_tensor(before, [&](auto, std::span<const double> v, const auto&) { a.insert(a.end(), v.begin(), v.end()); });
    for_each_tensor(m.params, [&](auto, std::span<const double> v, const auto&) { b.insert(b.end(), v.begin(), v.end()); });
    EXPECT_EQ(a, b);
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
    const auto& d = small_dataset();
    Model m = make_model(small_model(), d.vocab, 1);
    const auto before = m.params;
    auto cfg = small_train(1);
    cfg.learning_rate = 0.0;
    const auto trace = train(m, d.train, cfg);
    ASSERT_EQ(trace.size(), 1u);
    std::vector<double> a, b;
    for_each_tensor(before, [&](auto, std::span<const double> v, const auto&) { a.insert(a.end(), v.begin(), v.end()); });
    for_each_tensor(m.params, [&](auto, std::span<const double> v, const auto&) { b.insert(b.end(), v.begin(), v.end()); });
    EXPECT_EQ(a, b);
}

TEST(Train, DeterministicAndLossDecreases) {
    const auto& d = small_dataset();
    Model a = make_model(small_model(), d.vocab, 1), b = make_model(small_model(), d.vocab, 1);
    const auto ta = train(a, d.train, small_train(4)), tb = train(b, d.train, small_train(4));
    ASSERT_EQ(ta.size(), 4u);
    for (std::size_t e = 0; e < ta.size(); ++e) {
        EXPECT_EQ(ta[e].epoch, e + 1);
        EXPECT_EQ(ta[e].mean_loss, tb[e].mean_loss);
        EXPECT_TRUE(std::isfinite(ta[e].mean_loss));
    }
    EXPECT_LT(ta.back().mean_loss, ta.front().mean_loss);
    EXPECT_EQ(a.params.encoder.w_h, b.params.encoder.w_h);
}

TEST(Trainer, AccumulatorsNeverDecrease) {
    const auto& d = small_dataset();
    Model m = make_model(small_model(), d.vocab, 2);
    Trainer t(m, d.train, small_train(1));
    std::vector<double> prev;
    for (int s = 0; s < 5; ++s) {
        const auto r = t.step();
        EXPECT_TRUE(std::isfinite(r.loss));
        std::vector<double> cur;
        for_each_tensor(t.optimizer().accumulators,
                        [&](auto, std::span<const double> v, const auto&) { cur.insert(cur.end(), v.begin(), v.end()); });
        if (!prev.empty()) {
            for (std::size_t i = 0; i < cur.size(); ++i) ASSERT_GE(cur[i], prev[i]);
        }
        prev = std::move(cur);
    }
}

// Stopping at an arbitrary step (mid-epoch) and restoring the state into a
// fresh trainer continues bit-identically.
TEST(Trainer, RestoreContinuesExactly) {
    const auto& d = small_dataset();
    const auto cfg = small_train(2);
    Model full = make_model(small_model(), d.vocab, 4);
    std::vector<EpochLoss> full_trace = train(full, d.train, cfg);

    Model part = make_model(small_model(), d.vocab, 4);
    Trainer first(part, d.train, cfg);
    const std::uint64_t cut = first.steps_per_epoch() + 2;
    auto trace = first.run(cut);
    const OptimizerState opt = first.optimizer();
    const double partial = first.partial_epoch_loss();

    Model resumed = part;
    Trainer second(resumed, d.train, cfg);
    second.restore(opt, cut, partial);
    for (const auto& e : second.run()) trace.push_back(e);

    ASSERT_EQ(trace.size(), full_trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) EXPECT_EQ(trace[i].mean_loss, full_trace[i].mean_loss);
    std::vector<double> a, b;
    for_each_tensor(full.params, [&](auto, std::span<const double> v, const auto&) { a.insert(a.end(), v.begin(), v.end()); });
    for_each_tensor(resumed.params, [&](auto, std::span<const double> v, const auto&) { b.insert(b.end(), v.begin(), v.end()); });
    EXPECT_EQ(a, b);
}

TEST(Trainer, NonFiniteLossAborts) {
    const auto& d = small_dataset();
    Model m = make_model(small_model(), d.vocab, 5);
    m.params.encoder.w_q(0, 0) = std::nan("");
    Trainer t(m, d.train, small_train(1));
    EXPECT_THROW(t.step(), NumericError);
}

TEST(TrainConfigTest, Validation) {
    TrainConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), PreconditionError);
    c = TrainConfig{};
    c.clip_norm = 0;
    EXPECT_THROW(c.validate(), PreconditionError);
    c = TrainConfig{};
    c.learning_rate = -0.1;
    EXPECT_THROW(c.validate(), PreconditionError);
    const auto& d = small_dataset();
    Model m = make_model(small_model(), d.vocab, 1);
    EXPECT_THROW(Trainer(m, {}, TrainConfig{}), PreconditionError);
}
