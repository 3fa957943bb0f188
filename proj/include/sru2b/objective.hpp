#pragma once

// Scoring, confidence fusion, triplet metric losses, log-uniform negative
// sampling and sampled-softmax cross-entropy, with analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sru2b/error.hpp"
#include "sru2b/numcore.hpp"
#include "sru2b/params.hpp"
#include "sru2b/rng.hpp"

namespace sru2b {

enum class MetricMode { none, asym, sym, pair_lab_clk, pair_unclk_lab, pair_unclk_clk };
enum class FusionMode { none, simple, gated };

inline const char* to_string(MetricMode m) {
    switch (m) {
        case MetricMode::none: return "none";
        case MetricMode::asym: return "asym";
        case MetricMode::sym: return "sym";
        case MetricMode::pair_lab_clk: return "pair_lab_clk";
        case MetricMode::pair_unclk_lab: return "pair_unclk_lab";
        case MetricMode::pair_unclk_clk: return "pair_unclk_clk";
    }
    return "?";
}

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::none: return "none";
        case FusionMode::simple: return "simple";
        case FusionMode::gated: return "gated";
    }
    return "?";
}

inline MetricMode parse_metric_mode(std::string_view s) {
    for (auto m : {MetricMode::none, MetricMode::asym, MetricMode::sym, MetricMode::pair_lab_clk,
                   MetricMode::pair_unclk_lab, MetricMode::pair_unclk_clk}) {
        if (s == to_string(m)) return m;
    }
    throw PreconditionError("unknown metric_mode \"" + std::string(s) + "\"");
}

inline FusionMode parse_fusion_mode(std::string_view s) {
    for (auto m : {FusionMode::none, FusionMode::simple, FusionMode::gated}) {
        if (s == to_string(m)) return m;
    }
    throw PreconditionError("unknown fusion_mode \"" + std::string(s) + "\"");
}

struct LossConfig {
    double margin = 2.5;       // m, asymmetric and pair hinges
    double margin_sym = 5.0;   // m*, symmetric hinge
    double lambda = 10.0;
    MetricMode metric_mode = MetricMode::sym;
    FusionMode fusion_mode = FusionMode::gated;
    std::size_t num_negatives = 200;
    bool correction = true;

    void validate() const {
        if (!(margin > 0.0) || !(margin_sym > 0.0)) throw PreconditionError("LossConfig: margins must be positive");
        if (!(lambda >= 0.0)) throw PreconditionError("LossConfig: lambda must be non-negative");
        if (num_negatives < 1) throw PreconditionError("LossConfig: num_negatives must be at least 1");
    }
};

// ŷ = zᵀ q
inline double score(std::span<const double> z, std::span<const double> q) {
    if (z.size() != q.size()) throw ShapeError("score: lengths " + std::to_string(z.size()) + " and " + std::to_string(q.size()));
    return dot(z, q);
}

inline double score(const DenseVector& z, const DenseVector& q) { return score(z.values(), q.values()); }

// ---------------------------------------------------------------------------
// Fusion.

struct FusionResult {
    DenseVector z;
    DenseVector gate;  // empty unless gated
    DenseVector gate_input;  // concat(h, n), gated only
};

// none: z = h. simple: z = h − n. gated: G = σ(W_g concat(h, n) + b_g),
// z = h − G ⊙ n.
inline FusionResult fuse(const DenseVector& h, const DenseVector& n, const FusionParams& p, FusionMode mode) {
    if (h.size() != n.size()) throw ShapeError("fuse: h and n differ in length");
    const std::size_t L = h.size();
    FusionResult r;
    switch (mode) {
        case FusionMode::none:
            r.z = h;
            break;
        case FusionMode::simple:
            r.z = DenseVector(L);
            for (std::size_t k = 0; k < L; ++k) r.z[k] = h[k] - n[k];
            break;
        case FusionMode::gated: {
            if (p.w_g.rows() != L || p.w_g.cols() != 2 * L) throw ShapeError("fuse: W_g must be L x 2L");
            r.gate_input = DenseVector(2 * L);
            std::copy(h.begin(), h.end(), r.gate_input.begin());
            std::copy(n.begin(), n.end(), r.gate_input.begin() + static_cast<std::ptrdiff_t>(L));
            r.gate = sigmoid_map(affine(p.w_g, r.gate_input, p.b_g));
            r.z = DenseVector(L);
            for (std::size_t k = 0; k < L; ++k) r.z[k] = h[k] - r.gate[k] * n[k];
            break;
        }
    }
    return r;
}

// Given dL/dz, accumulates into dh, dn and the fusion parameter gradients.
inline void backward_fuse(const FusionResult& fr, const DenseVector& n, const DenseVector& dz, FusionMode mode,
                          const FusionParams& p, FusionParams& gp, DenseVector& dh, DenseVector& dn) {
    const std::size_t L = dz.size();
    axpy(1.0, dz.values(), dh.values());
    if (mode == FusionMode::none) return;
    if (mode == FusionMode::simple) {
        axpy(-1.0, dz.values(), dn.values());
        return;
    }
    DenseVector da(L);
    for (std::size_t k = 0; k < L; ++k) {
        const double g = fr.gate[k];
        dn[k] -= dz[k] * g;
        da[k] = -dz[k] * n[k] * g * (1.0 - g);
    }
    outer_acc(gp.w_g, da.values(), fr.gate_input.values());
    axpy(1.0, da.values(), gp.b_g.values());
    DenseVector din(2 * L);
    gemv_t_acc(p.w_g, da.values(), din.values());
    axpy(1.0, din.values().subspan(0, L), dh.values());
    axpy(1.0, din.values().subspan(L, L), dn.values());
}

// ---------------------------------------------------------------------------
// Triplet metric losses over squared Euclidean distances.

struct TripletResult {
    double loss = 0.0;
    DenseVector dh, dn, dc;
};

inline TripletResult triplet(const DenseVector& h, const DenseVector& n, const DenseVector& c, const LossConfig& cfg) {
    if (h.size() != n.size() || h.size() != c.size()) throw ShapeError("triplet_loss: vectors differ in length");
    if (cfg.metric_mode == MetricMode::none) throw PreconditionError("triplet_loss: metric_mode is none");
    const std::size_t L = h.size();
    TripletResult r{0.0, DenseVector(L), DenseVector(L), DenseVector(L)};
    const double hc = l2sq(h, c), hn = l2sq(h, n), cn = l2sq(c, n);
    // ∂‖a−b‖²/∂a = 2(a − b); the hinge contributes only while its argument is
    // strictly positive.
    auto add = [&](double w, const DenseVector& a, DenseVector& da, const DenseVector& b, DenseVector& db) {
        for (std::size_t k = 0; k < L; ++k) {
            const double d = 2.0 * w * (a[k] - b[k]);
            da[k] += d;
            db[k] -= d;
        }
    };
    switch (cfg.metric_mode) {
        case MetricMode::asym: {
            const double arg = hc - hn + cfg.margin;
            if (arg > 0.0) {
                r.loss = arg;
                add(1.0, h, r.dh, c, r.dc);
                add(-1.0, h, r.dh, n, r.dn);
            }
            break;
        }
        case MetricMode::sym: {
            const double arg = 2.0 * hc - (hn + cn) + cfg.margin_sym;  // grouped so swapping h and c is exact
            if (arg > 0.0) {
                r.loss = arg;
                add(2.0, h, r.dh, c, r.dc);
                add(-1.0, h, r.dh, n, r.dn);
                add(-1.0, c, r.dc, n, r.dn);
            }
            break;
        }
        case MetricMode::pair_lab_clk:
            r.loss = hc;
            add(1.0, h, r.dh, c, r.dc);
            break;
        case MetricMode::pair_unclk_lab: {
            const double arg = cfg.margin - cn;
            if (arg > 0.0) {
                r.loss = arg;
                add(-1.0, c, r.dc, n, r.dn);
            }
            break;
        }
        case MetricMode::pair_unclk_clk: {
            const double arg = cfg.margin - hn;
            if (arg > 0.0) {
                r.loss = arg;
                add(-1.0, h, r.dh, n, r.dn);
            }
            break;
        }
        case MetricMode::none:
            break;
    }
    return r;
}

inline double triplet_loss(const DenseVector& h, const DenseVector& n, const DenseVector& c, const LossConfig& cfg) {
    return triplet(h, n, c, cfg).loss;
}

// ---------------------------------------------------------------------------
// Log-uniform negative sampler over click-frequency ranks:
// P(rank r) = (log(r + 2) − log(r + 1)) / log(N + 1).

class SamplerState {
public:
    SamplerState() = default;

    // counts[i] = training clicks of item i. Rank 0 is the most clicked item;
    // ties go to the lower item index.
    explicit SamplerState(std::span<const std::uint64_t> counts) {
        if (counts.empty()) throw PreconditionError("SamplerState: empty catalog");
        ranked_.resize(counts.size());
        std::iota(ranked_.begin(), ranked_.end(), std::size_t{0});
        std::stable_sort(ranked_.begin(), ranked_.end(),
                         [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
        rank_of_.resize(counts.size());
        for (std::size_t r = 0; r < ranked_.size(); ++r) rank_of_[ranked_[r]] = r;
        log_n1_ = std::log(static_cast<double>(counts.size()) + 1.0);
    }

    std::size_t size() const noexcept { return ranked_.size(); }
    std::size_t item_at_rank(std::size_t r) const { return ranked_.at(r); }
    std::size_t rank_of(std::size_t item) const { return rank_of_.at(item); }
    const std::vector<std::size_t>& ranked_items() const noexcept { return ranked_; }

    double rank_probability(std::size_t r) const {
        const double rr = static_cast<double>(r);
        return (std::log(rr + 2.0) - std::log(rr + 1.0)) / log_n1_;
    }
    double item_probability(std::size_t item) const { return rank_probability(rank_of(item)); }

    // Inverse CDF: floor(exp(U log(N + 1))) − 1.
    std::size_t draw_rank(Rng& rng) const {
        const double x = std::exp(rng.uniform() * log_n1_);
        auto r = static_cast<std::size_t>(std::floor(x)) - 1;
        return std::min(r, ranked_.size() - 1);
    }

private:
    std::vector<std::size_t> ranked_;
    std::vector<std::size_t> rank_of_;
    double log_n1_ = 0.0;
};

struct Negative {
    std::size_t item;
    double proposal_prob;
};

// j draws, redrawing any member of `positives`; accepted draws may repeat.
inline std::vector<Negative> sample_negatives(const SamplerState& sampler, std::span<const std::size_t> positives,
                                              std::size_t j, Rng& rng) {
    const std::unordered_set<std::size_t> pos(positives.begin(), positives.end());
    if (sampler.size() <= pos.size()) throw PreconditionError("sample_negatives: no item outside the positives");
    std::vector<Negative> out;
    out.reserve(j);
    while (out.size() < j) {
        const std::size_t r = sampler.draw_rank(rng);
        const std::size_t item = sampler.item_at_rank(r);
        if (pos.contains(item)) continue;
        out.push_back({item, sampler.rank_probability(r)});
    }
    return out;
}

inline std::vector<Negative> sample_negatives(const SamplerState& sampler, std::span<const std::size_t> positives,
                                              std::size_t j, std::uint64_t seed) {
    Rng rng(seed);
    return sample_negatives(sampler, positives, j, rng);
}

// ---------------------------------------------------------------------------
// Sampled-softmax cross-entropy. For each label the candidate set is the label
// plus all negatives; with correction, log(proposal) is subtracted from each
// negative logit. Loss is the mean over labels of −log softmax(label).

struct SoftmaxResult {
    double loss = 0.0;
    DenseVector dz;
    std::vector<DenseVector> d_label_q;
    std::vector<DenseVector> d_negative_q;
};

inline SoftmaxResult sampled_softmax(const DenseVector& z, std::span<const DenseVector* const> label_q,
                                     std::span<const DenseVector* const> negative_q,
                                     std::span<const double> negative_prob, bool correction, bool want_grad = true) {
    if (label_q.empty()) throw PreconditionError("sampled_softmax_ce: no labels");
    if (negative_prob.size() != negative_q.size()) throw ShapeError("sampled_softmax_ce: one probability per negative");
    const std::size_t L = z.size();
    const std::size_t J = negative_q.size();
    std::vector<double> neg_logit(J);
    for (std::size_t j = 0; j < J; ++j) {
        neg_logit[j] = score(z.values(), negative_q[j]->values());
        if (correction) neg_logit[j] -= std::log(negative_prob[j]);
    }
    const double neg_max = J ? *std::max_element(neg_logit.begin(), neg_logit.end()) : -INFINITY;

    SoftmaxResult r;
    if (want_grad) {
        r.dz = DenseVector(L);
        r.d_label_q.assign(label_q.size(), DenseVector(L));
        r.d_negative_q.assign(J, DenseVector(L));
    }
    const double inv_labels = 1.0 / static_cast<double>(label_q.size());
    std::vector<double> neg_weight(J, 0.0);
    for (std::size_t l = 0; l < label_q.size(); ++l) {
        const double pos = score(z.values(), label_q[l]->values());
        const double mx = std::max(pos, neg_max);
        double sum = std::exp(pos - mx);
        for (double s : neg_logit) sum += std::exp(s - mx);
        const double log_z = mx + std::log(sum);
        r.loss += (log_z - pos) * inv_labels;
        if (!want_grad) continue;
        // d/ds_k = p_k − y_k
        const double p_pos = std::exp(pos - log_z);
        const double g_pos = (p_pos - 1.0) * inv_labels;
        axpy(g_pos, label_q[l]->values(), r.dz.values());
        axpy(g_pos, z.values(), r.d_label_q[l].values());
        for (std::size_t j = 0; j < J; ++j) neg_weight[j] += std::exp(neg_logit[j] - log_z) * inv_labels;
    }
    if (want_grad) {
        for (std::size_t j = 0; j < J; ++j) {
            axpy(neg_weight[j], negative_q[j]->values(), r.dz.values());
            axpy(neg_weight[j], z.values(), r.d_negative_q[j].values());
        }
    }
    return r;
}

inline double sampled_softmax_ce(const DenseVector& z, std::span<const DenseVector* const> label_q,
                                 std::span<const DenseVector* const> negative_q, std::span<const double> negative_prob,
                                 bool correction) {
    return sampled_softmax(z, label_q, negative_q, negative_prob, correction, false).loss;
}

// ---------------------------------------------------------------------------
// Combined objective L = L_ce(ẑ) + λ L_tri(h, n, c) for one example.

struct LossResult {
    double loss = 0.0;
    double ce = 0.0;
    double tri = 0.0;
    DenseVector dh, dn, dc;
    std::vector<DenseVector> d_label_q;
    std::vector<DenseVector> d_negative_q;
    FusionResult fusion;
};

// Accumulates fusion-parameter gradients into `fusion_grad` (may be null);
// everything else is returned. Every gradient is multiplied by grad_scale,
// the reported losses are not.
inline LossResult total_loss(const DenseVector& h, const DenseVector& n, const DenseVector& c,
                             std::span<const DenseVector* const> label_q, std::span<const DenseVector* const> negative_q,
                             std::span<const double> negative_prob, const FusionParams& fusion,
                             FusionParams* fusion_grad, const LossConfig& cfg, double grad_scale = 1.0) {
    const std::size_t L = h.size();
    LossResult r;
    r.fusion = fuse(h, n, fusion, cfg.fusion_mode);
    auto sm = sampled_softmax(r.fusion.z, label_q, negative_q, negative_prob, cfg.correction, true);
    r.ce = sm.loss;
    if (grad_scale != 1.0) {
        for (double& v : sm.dz) v *= grad_scale;
        for (auto* vs : {&sm.d_label_q, &sm.d_negative_q})
            for (auto& d : *vs)
                for (double& v : d) v *= grad_scale;
    }
    r.dh = DenseVector(L);
    r.dn = DenseVector(L);
    r.dc = DenseVector(L);
    FusionParams scratch;
    if (fusion_grad == nullptr && cfg.fusion_mode == FusionMode::gated) {
        scratch = {DenseMatrix(L, 2 * L), DenseVector(L)};
        fusion_grad = &scratch;
    }
    backward_fuse(r.fusion, n, sm.dz, cfg.fusion_mode, fusion, *fusion_grad, r.dh, r.dn);
    r.d_label_q = std::move(sm.d_label_q);
    r.d_negative_q = std::move(sm.d_negative_q);

    if (cfg.metric_mode != MetricMode::none && cfg.lambda != 0.0) {
        auto t = triplet(h, n, c, cfg);
        r.tri = t.loss;
        const double w = cfg.lambda * grad_scale;
        axpy(w, t.dh.values(), r.dh.values());
        axpy(w, t.dn.values(), r.dn.values());
        axpy(w, t.dc.values(), r.dc.values());
    } else if (cfg.metric_mode != MetricMode::none) {
        r.tri = triplet(h, n, c, cfg).loss;
    }
    r.loss = r.ce + cfg.lambda * r.tri;
    return r;
}

}  // namespace sru2b
