#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "sru2b/objective.hpp"
#include "test_support.hpp"

using namespace sru2b;
using namespace sru2b::testing;

namespace {

DenseVector random_vector(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    DenseVector v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

LossConfig mode(MetricMode m, double margin = 1.0, double margin_sym = 5.0) {
    LossConfig c;
    c.metric_mode = m;
    c.margin = margin;
    c.margin_sym = margin_sym;
    return c;
}

std::vector<const DenseVector*> ptrs(const std::vector<DenseVector>& v) {
    std::vector<const DenseVector*> out;
    for (const auto& x : v) out.push_back(&x);
    return out;
}

// −log softmax over the full catalog, straight from the definition.
double full_softmax_ce(const DenseVector& z, const std::vector<DenseVector>& catalog, std::size_t label) {
    double denom = 0.0;
    for (const auto& q : catalog) denom += std::exp(score(z, q));
    return -(score(z, catalog[label]) - std::log(denom));
}

}  // namespace

TEST(Score, Examples) {
    EXPECT_EQ(score(DenseVector{1, 0}, DenseVector{0, 1}), 0.0);
    EXPECT_EQ(score(DenseVector{1, 2}, DenseVector{3, 4}), 11.0);
    EXPECT_EQ(score(DenseVector{1, 1}, DenseVector{1, 1}), 2.0);
    EXPECT_THROW(score(DenseVector{1}, DenseVector{1, 2}), ShapeError);
}

TEST(Fuse, Modes) {
    FusionParams p{DenseMatrix(2, 4), DenseVector(2)};
    const DenseVector h{2, 2}, n{1, 3};
    EXPECT_EQ(fuse(h, n, p, FusionMode::none).z, h);
    EXPECT_TRUE(fuse(h, n, p, FusionMode::none).gate.empty());
    EXPECT_EQ(fuse(h, n, p, FusionMode::simple).z, (DenseVector{1, -1}));
    // W_g = 0, b_g = 0 forces G = 0.5.
    const auto g = fuse(h, n, p, FusionMode::gated);
    EXPECT_EQ(g.gate, (DenseVector{0.5, 0.5}));
    EXPECT_EQ(g.z, (DenseVector{1.5, 0.5}));
}

TEST(Fuse, SaturatedGateReproducesSimple) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        FusionParams p{DenseMatrix(3, 6), DenseVector{50, 50, 50}};
        for (double& x : p.w_g.values()) x = rng.uniform(-1, 1);
        const auto h = random_vector(rng, 3, -1, 1), n = random_vector(rng, 3, -1, 1);
        const auto a = fuse(h, n, p, FusionMode::gated).z, b = fuse(h, n, p, FusionMode::simple).z;
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
    }
}

TEST(Fuse, GateStrictlyInsideUnitInterval) {
    Rng rng(2);
    for (int t = 0; t < 1000; ++t) {
        FusionParams p{DenseMatrix(4, 8), random_vector(rng, 4, -5, 5)};
        for (double& x : p.w_g.values()) x = rng.uniform(-5, 5);
        const auto r = fuse(random_vector(rng, 4, -1, 1), random_vector(rng, 4, -1, 1), p, FusionMode::gated);
        for (double g : r.gate) {
            EXPECT_GT(g, 0.0);
            EXPECT_LT(g, 1.0);
        }
    }
}

TEST(Triplet, Examples) {
    EXPECT_EQ(triplet_loss({0, 0}, {0, 0}, {0, 0}, mode(MetricMode::sym)), 5.0);
    // h, n, c argument order
    EXPECT_EQ(triplet_loss({0, 0}, {3, 0}, {1, 0}, mode(MetricMode::sym)), 0.0);
    EXPECT_EQ(triplet_loss({0, 0}, {1, 0}, {0, 0}, mode(MetricMode::sym)), 3.0);
    EXPECT_EQ(triplet_loss({0, 0}, {1, 0}, {2, 0}, mode(MetricMode::asym, 1.0)), 4.0);
    EXPECT_EQ(triplet_loss({1, 0}, {4, 0}, {1, 0}, mode(MetricMode::asym, 5.0)), 0.0);
    EXPECT_EQ(triplet_loss({0, 0}, {1, 0}, {2, 0}, mode(MetricMode::pair_lab_clk)), 4.0);
    EXPECT_EQ(triplet_loss({0, 0}, {1, 0}, {2, 0}, mode(MetricMode::pair_unclk_lab, 3.0)), 2.0);
    EXPECT_EQ(triplet_loss({0, 0}, {1, 0}, {2, 0}, mode(MetricMode::pair_unclk_clk, 3.0)), 2.0);
    EXPECT_THROW(triplet_loss({0}, {0}, {0}, mode(MetricMode::none)), PreconditionError);
    EXPECT_THROW(triplet_loss({0}, {0, 1}, {0}, mode(MetricMode::sym)), ShapeError);
}

TEST(Triplet, Invariants) {
    Rng rng(3);
    for (MetricMode m : kAllMetricModes) {
        if (m == MetricMode::none) continue;
        for (int t = 0; t < 1000; ++t) {
            const auto cfg = mode(m, rng.uniform(0.01, 5), rng.uniform(0.01, 5));
            const auto h = random_vector(rng, 3), n = random_vector(rng, 3), c = random_vector(rng, 3);
            const double l = triplet_loss(h, n, c, cfg);
            EXPECT_GE(l, 0.0);
            auto shift = random_vector(rng, 3, -10, 10);
            DenseVector hs = h, ns = n, cs = c;
            for (std::size_t k = 0; k < 3; ++k) {
                hs[k] += shift[k];
                ns[k] += shift[k];
                cs[k] += shift[k];
            }
            EXPECT_NEAR(triplet_loss(hs, ns, cs, cfg), l, 1e-9);
            if (m == MetricMode::sym) {
                EXPECT_EQ(triplet_loss(c, n, h, cfg), l);
            }
        }
    }
}

// Both directions of the zero condition: place n so that the hinge argument
// is a chosen value and compare the loss with it.
TEST(Triplet, SymZeroConditionConstructive) {
    Rng rng(4);
    for (int t = 0; t < 1000; ++t) {
        const auto cfg = mode(MetricMode::sym, 1.0, rng.uniform(0.1, 5));
        const auto h = random_vector(rng, 2), c = random_vector(rng, 2), n = random_vector(rng, 2);
        const double arg = 2 * l2sq(h, c) - l2sq(h, n) - l2sq(c, n) + cfg.margin_sym;
        const double l = triplet_loss(h, n, c, cfg);
        if (arg <= 0) {
            EXPECT_EQ(l, 0.0);
        } else {
            EXPECT_NEAR(l, arg, 1e-12);
        }
        // Move n away along a direction orthogonal to h − c until the loss vanishes.
        DenseVector far = n;
        const double dx = c[0] - h[0], dy = c[1] - h[1];
        const double norm = std::hypot(dx, dy) + 1e-12;
        far[0] += -dy / norm * 100;
        far[1] += dx / norm * 100;
        EXPECT_EQ(triplet_loss(h, far, c, cfg), 0.0);
        EXPECT_GT(triplet_loss(h, h, h, cfg), 0.0);
    }
}

TEST(Triplet, KinkSubgradientIsZero) {
    // asym argument exactly 0: 1 - 1 + 0? use h=(0), c=(1), n=(2), m=3 -> 1-4+3 = 0
    const auto r = triplet({0.0}, {2.0}, {1.0}, mode(MetricMode::asym, 3.0));
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.dh[0], 0.0);
    EXPECT_EQ(r.dn[0], 0.0);
    EXPECT_EQ(r.dc[0], 0.0);
}

TEST(Triplet, GradientsMatchFiniteDifferences) {
    Rng rng(5);
    for (MetricMode m : kAllMetricModes) {
        if (m == MetricMode::none) continue;
        for (int t = 0; t < 50; ++t) {
            const auto cfg = mode(m, rng.uniform(0.5, 5), rng.uniform(0.5, 5));
            DenseVector x = random_vector(rng, 9, -1, 1);
            auto split = [](const DenseVector& v, std::size_t i) { return DenseVector{v[3 * i], v[3 * i + 1], v[3 * i + 2]}; };
            auto f = [&](const DenseVector& v) { return triplet_loss(split(v, 0), split(v, 1), split(v, 2), cfg); };
            const auto r = triplet(split(x, 0), split(x, 1), split(x, 2), cfg);
            const auto fd = finite_diff_grad(f, x, 1e-6);
            DenseVector an(9);
            for (std::size_t k = 0; k < 3; ++k) {
                an[k] = r.dh[k];
                an[3 + k] = r.dn[k];
                an[6 + k] = r.dc[k];
            }
            EXPECT_LT(relative_error(an.values(), fd.values()), 1e-6) << to_string(m);
        }
    }
}

TEST(Sampler, ForcedChoice) {
    const std::vector<std::uint64_t> counts{5, 1};
    SamplerState s(counts);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const std::vector<std::size_t> pos{0};
        const auto negs = sample_negatives(s, pos, 1, seed);
        ASSERT_EQ(negs.size(), 1u);
        EXPECT_EQ(negs[0].item, 1u);
    }
    const std::vector<std::size_t> both{0, 1};
    EXPECT_THROW(sample_negatives(s, both, 1, std::uint64_t{1}), PreconditionError);
}

TEST(Sampler, RankMass) {
    const std::vector<std::uint64_t> counts{1, 9, 4};
    SamplerState s(counts);
    EXPECT_EQ(s.item_at_rank(0), 1u);
    EXPECT_EQ(s.item_at_rank(1), 2u);
    EXPECT_EQ(s.item_at_rank(2), 0u);
    EXPECT_NEAR(s.rank_probability(0), 0.5, 1e-15);
    double total = 0;
    for (std::size_t r = 0; r < 3; ++r) total += s.rank_probability(r);
    EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(Sampler, EmpiricalFrequenciesMatchClosedForm) {
    std::vector<std::uint64_t> counts(10);
    for (std::size_t i = 0; i < 10; ++i) counts[i] = 100 - i;
    SamplerState s(counts);
    Rng rng(6);
    std::vector<std::size_t> hits(10);
    const std::size_t n = 1'000'000;
    for (std::size_t t = 0; t < n; ++t) ++hits[s.draw_rank(rng)];
    for (std::size_t r = 0; r < 10; ++r) {
        const double p = s.rank_probability(r);
        EXPECT_NEAR(static_cast<double>(hits[r]) / n, p, 0.01 * p) << "rank " << r;
    }
}

TEST(Sampler, NegativesAvoidPositivesAndCarryProbabilities) {
    std::vector<std::uint64_t> counts(20, 1);
    SamplerState s(counts);
    const std::vector<std::size_t> pos{0, 3, 7};
    const auto negs = sample_negatives(s, pos, 500, std::uint64_t{9});
    EXPECT_EQ(negs.size(), 500u);
    for (const auto& n : negs) {
        EXPECT_NE(n.item, 0u);
        EXPECT_NE(n.item, 3u);
        EXPECT_NE(n.item, 7u);
        EXPECT_EQ(n.proposal_prob, s.item_probability(n.item));
    }
    EXPECT_EQ(sample_negatives(s, pos, 50, std::uint64_t{9}).front().item, negs.front().item);
}

TEST(SampledSoftmax, UniformLogits) {
    const DenseVector z{0, 0};
    const std::vector<DenseVector> lab{{1, 1}}, neg{{2, 3}, {-1, 0}};
    const std::vector<double> prob{0.1, 0.2};
    EXPECT_NEAR(sampled_softmax_ce(z, ptrs(lab), ptrs(neg), prob, false), std::log(3.0), 1e-15);
    EXPECT_NEAR(std::log(3.0), 1.0986123, 1e-7);
}

TEST(SampledSoftmax, ConfidentPositive) {
    const DenseVector z{1};
    const std::vector<DenseVector> lab{{50}}, neg{{0}, {0}};
    const std::vector<double> prob{0.5, 0.5};
    EXPECT_NEAR(sampled_softmax_ce(z, ptrs(lab), ptrs(neg), prob, false), 0.0, 1e-12);
}

TEST(SampledSoftmax, CorrectionSubtractsLogProposal) {
    const DenseVector z{0};
    const std::vector<DenseVector> lab{{0}}, neg{{0}};
    const std::vector<double> prob{0.25};
    // logits: positive 0, negative −log 0.25 = log 4 → loss = log(1 + 4)
    EXPECT_NEAR(sampled_softmax_ce(z, ptrs(lab), ptrs(neg), prob, true), std::log(5.0), 1e-15);
}

TEST(SampledSoftmax, MeanOverLabels) {
    Rng rng(7);
    const auto z = random_vector(rng, 3);
    const std::vector<DenseVector> lab{random_vector(rng, 3), random_vector(rng, 3)}, neg{random_vector(rng, 3)};
    const std::vector<double> prob{0.3};
    const double both = sampled_softmax_ce(z, ptrs(lab), ptrs(neg), prob, true);
    const double a = sampled_softmax_ce(z, ptrs({lab[0]}), ptrs(neg), prob, true);
    const double b = sampled_softmax_ce(z, ptrs({lab[1]}), ptrs(neg), prob, true);
    EXPECT_NEAR(both, (a + b) / 2, 1e-14);
}

TEST(SampledSoftmax, ExhaustiveNegativesEqualFullSoftmax) {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<DenseVector> catalog;
        for (std::size_t i = 0; i < n; ++i) catalog.push_back(random_vector(rng, 4));
        const auto z = random_vector(rng, 4);
        const std::size_t label = rng.below(n);
        std::vector<DenseVector> negs;
        for (std::size_t i = 0; i < n; ++i)
            if (i != label) negs.push_back(catalog[i]);
        const std::vector<double> prob(negs.size(), 0.5);
        EXPECT_NEAR(sampled_softmax_ce(z, ptrs({catalog[label]}), ptrs(negs), prob, false),
                    full_softmax_ce(z, catalog, label), 1e-10);
    }
}

TEST(TotalLoss, LambdaZeroIsCrossEntropyOnly) {
    Rng rng(9);
    const auto h = random_vector(rng, 3, -1, 1), n = random_vector(rng, 3, -1, 1), c = random_vector(rng, 3, -1, 1);
    const std::vector<DenseVector> lab{random_vector(rng, 3)}, neg{random_vector(rng, 3), random_vector(rng, 3)};
    const std::vector<double> prob{0.2, 0.1};
    FusionParams fp{DenseMatrix(3, 6), DenseVector(3)};
    LossConfig cfg;
    cfg.lambda = 0.0;
    const auto r = total_loss(h, n, c, ptrs(lab), ptrs(neg), prob, fp, nullptr, cfg);
    EXPECT_EQ(r.loss, sampled_softmax_ce(fuse(h, n, fp, cfg.fusion_mode).z, ptrs(lab), ptrs(neg), prob, true));
    EXPECT_EQ(r.dc, DenseVector(3));
}

TEST(TotalLoss, BaseModeIsCrossEntropyOverH) {
    Rng rng(10);
    const auto h = random_vector(rng, 3, -1, 1), n = random_vector(rng, 3, -1, 1), c = random_vector(rng, 3, -1, 1);
    const std::vector<DenseVector> lab{random_vector(rng, 3)}, neg{random_vector(rng, 3)};
    const std::vector<double> prob{0.2};
    FusionParams fp{DenseMatrix(3, 6), DenseVector(3)};
    LossConfig cfg;
    cfg.metric_mode = MetricMode::none;
    cfg.fusion_mode = FusionMode::none;
    const auto r = total_loss(h, n, c, ptrs(lab), ptrs(neg), prob, fp, nullptr, cfg);
    EXPECT_EQ(r.loss, sampled_softmax_ce(h, ptrs(lab), ptrs(neg), prob, true));
    EXPECT_EQ(r.dn, DenseVector(3));
}

// Gradients of every input of total_loss (h, n, c, fusion params, candidate q)
// on L=3, 2 labels, 4 negatives, for every mode pair.
TEST(TotalLoss, InputGradientsMatchFiniteDifferences) {
    Rng rng(11);
    const std::size_t L = 3, nl = 2, nn = 4;
    for (MetricMode mm : kAllMetricModes) {
        for (FusionMode fm : kAllFusionModes) {
            LossConfig cfg;
            cfg.metric_mode = mm;
            cfg.fusion_mode = fm;
            cfg.lambda = 0.8;
            // Layout: h, n, c, labels, negatives, W_g, b_g.
            const std::size_t nvec = 3 + nl + nn;
            DenseVector x = random_vector(rng, nvec * L + 2 * L * L + L, -1, 1);
            const std::vector<double> prob{0.1, 0.2, 0.3, 0.15};
            auto unpack = [&](const DenseVector& v, std::vector<DenseVector>& vecs, FusionParams& fp) {
                vecs.assign(nvec, DenseVector(L));
                for (std::size_t i = 0; i < nvec; ++i)
                    for (std::size_t k = 0; k < L; ++k) vecs[i][k] = v[i * L + k];
                fp = {DenseMatrix(L, 2 * L), DenseVector(L)};
                std::size_t off = nvec * L;
                for (double& w : fp.w_g.values()) w = v[off++];
                for (double& b : fp.b_g) b = v[off++];
            };
            auto eval = [&](const DenseVector& v, FusionParams* grad, LossResult* out) {
                std::vector<DenseVector> vecs;
                FusionParams fp;
                unpack(v, vecs, fp);
                std::vector<const DenseVector*> lab, neg;
                for (std::size_t i = 0; i < nl; ++i) lab.push_back(&vecs[3 + i]);
                for (std::size_t i = 0; i < nn; ++i) neg.push_back(&vecs[3 + nl + i]);
                auto r = total_loss(vecs[0], vecs[1], vecs[2], lab, neg, prob, fp, grad, cfg);
                if (out) *out = r;
                return r.loss;
            };
            FusionParams fg{DenseMatrix(L, 2 * L), DenseVector(L)};
            LossResult r;
            eval(x, &fg, &r);
            DenseVector an(x.size());
            auto put = [&](std::size_t i, const DenseVector& d) {
                for (std::size_t k = 0; k < L; ++k) an[i * L + k] = d[k];
            };
            put(0, r.dh);
            put(1, r.dn);
            put(2, r.dc);
            for (std::size_t i = 0; i < nl; ++i) put(3 + i, r.d_label_q[i]);
            for (std::size_t i = 0; i < nn; ++i) put(3 + nl + i, r.d_negative_q[i]);
            std::size_t off = nvec * L;
            for (double w : fg.w_g.values()) an[off++] = w;
            for (double b : fg.b_g) an[off++] = b;
            const auto fd = finite_diff_grad([&](const DenseVector& v) { return eval(v, nullptr, nullptr); }, x, 1e-5);
            EXPECT_LT(relative_error(an.values(), fd.values()), 1e-4) << to_string(mm) << "/" << to_string(fm);
        }
    }
}

TEST(TotalLoss, GradScaleScalesGradientsNotLoss) {
    Rng rng(12);
    const auto h = random_vector(rng, 3, -1, 1), n = random_vector(rng, 3, -1, 1), c = random_vector(rng, 3, -1, 1);
    const std::vector<DenseVector> lab{random_vector(rng, 3)}, neg{random_vector(rng, 3)};
    const std::vector<double> prob{0.2};
    FusionParams fp{DenseMatrix(3, 6), DenseVector{0.1, 0.2, 0.3}};
    LossConfig cfg;
    FusionParams g1{DenseMatrix(3, 6), DenseVector(3)}, g2 = g1;
    const auto a = total_loss(h, n, c, ptrs(lab), ptrs(neg), prob, fp, &g1, cfg, 1.0);
    const auto b = total_loss(h, n, c, ptrs(lab), ptrs(neg), prob, fp, &g2, cfg, 0.25);
    EXPECT_EQ(a.loss, b.loss);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(b.dh[k], 0.25 * a.dh[k], 1e-15);
        EXPECT_NEAR(b.dc[k], 0.25 * a.dc[k], 1e-15);
        EXPECT_NEAR(g2.b_g[k], 0.25 * g1.b_g[k], 1e-15);
    }
}

// Full-model check for every mode pair, both clicked encoders.
class ModelGradients : public ::testing::TestWithParam<std::tuple<MetricMode, FusionMode>> {};

TEST_P(ModelGradients, MatchFiniteDifferences) {
    const auto [mm, fm] = GetParam();
    for (ClickedEncoder kind : {ClickedEncoder::meanpool, ClickedEncoder::recurrent}) {
        Rng rng = Rng::stream(3, {static_cast<std::uint64_t>(mm), static_cast<std::uint64_t>(fm)});
        Model m = tiny_model(3, kind, 21);
        std::vector<IndexedExample> exs{random_example(rng, m), random_example(rng, m)};
        std::vector<std::vector<Negative>> negs{random_negatives(rng, m, 4), random_negatives(rng, m, 4)};
        LossConfig cfg;
        cfg.metric_mode = mm;
        cfg.fusion_mode = fm;
        cfg.lambda = 0.6;
        for (const auto& e : check_gradients(m, exs, negs, cfg)) EXPECT_LT(e.rel_error, 1e-4) << e.name << " " << to_string(kind);
    }
}

INSTANTIATE_TEST_SUITE_P(AllModes, ModelGradients,
                         ::testing::Combine(::testing::ValuesIn(kAllMetricModes), ::testing::ValuesIn(kAllFusionModes)),
                         [](const auto& info) {
                             std::string s = std::string(to_string(std::get<0>(info.param))) + "_" +
                                             to_string(std::get<1>(info.param));
                             for (char& ch : s)
                                 if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                             return s;
                         });

TEST(LossConfigTest, Validation) {
    LossConfig c;
    EXPECT_NO_THROW(c.validate());
    c.margin = 0;
    EXPECT_THROW(c.validate(), PreconditionError);
    c = LossConfig{};
    c.lambda = -1;
    EXPECT_THROW(c.validate(), PreconditionError);
    c = LossConfig{};
    c.num_negatives = 0;
    EXPECT_THROW(c.validate(), PreconditionError);
    EXPECT_EQ(parse_metric_mode("sym"), MetricMode::sym);
    EXPECT_EQ(parse_fusion_mode("gated"), FusionMode::gated);
    EXPECT_THROW(parse_fusion_mode("nope"), PreconditionError);
}
