#pragma once

// Full-catalog retrieval, ranking metrics, and the ablation / sweep harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sru2b/config.hpp"
#include "sru2b/datamodel.hpp"
#include "sru2b/error.hpp"
#include "sru2b/model.hpp"
#include "sru2b/objective.hpp"
#include "sru2b/trainer.hpp"
#include "sru2b/vocab.hpp"

namespace sru2b {

// Indices of the K highest scores. Equal scores are ordered by tie_key
// ascending (the item's rank in id order).
inline std::vector<std::size_t> topk(std::span<const double> scores, std::span<const std::uint32_t> tie_key, std::size_t k) {
    if (k < 1) throw PreconditionError("topk: K must be at least 1");
    if (tie_key.size() != scores.size()) throw ShapeError("topk: tie keys do not match scores");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t n = std::min(k, idx.size());
    auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return tie_key[a] < tie_key[b];
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), before);
    idx.resize(n);
    return idx;
}

// Scores ẑᵀq for every item of a full cache (slot == item).
inline std::vector<double> score_all(const DenseVector& z, const ItemEmbeddingCache& cache, std::size_t n_items) {
    std::vector<double> s(n_items);
    for (std::size_t i = 0; i < n_items; ++i) s[i] = dot(z.values(), cache.q(i).values());
    return s;
}

inline std::vector<std::size_t> topk(const DenseVector& z, const ItemEmbeddingCache& cache, const Vocabulary& vocab,
                                     std::size_t k) {
    const auto s = score_all(z, cache, vocab.n_items());
    std::vector<std::uint32_t> ties(vocab.n_items());
    for (std::size_t i = 0; i < ties.size(); ++i) ties[i] = vocab.id_rank(i);
    return topk(s, ties, k);
}

struct Metrics {
    double hr = 0.0, mrr = 0.0, recall = 0.0, precision = 0.0, f1 = 0.0;
};

// Metrics of the first K entries of `ranked` against the label set. Repeated
// labels count once.
template <class Id>
Metrics compute_metrics(std::span<const Id> ranked, std::span<const Id> labels, std::size_t k) {
    if (labels.empty()) throw PreconditionError("compute_metrics: empty label set");
    if (k < 1) throw PreconditionError("compute_metrics: K must be at least 1");
    std::vector<Id> c(labels.begin(), labels.end());
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());

    Metrics m;
    std::size_t hits = 0;
    const std::size_t n = std::min(k, ranked.size());
    for (std::size_t r = 0; r < n; ++r) {
        if (std::binary_search(c.begin(), c.end(), ranked[r])) {
            if (hits == 0) m.mrr = 1.0 / static_cast<double>(r + 1);
            ++hits;
        }
    }
    m.hr = hits > 0 ? 1.0 : 0.0;
    m.recall = static_cast<double>(hits) / static_cast<double>(c.size());
    m.precision = static_cast<double>(hits) / static_cast<double>(k);
    const double pr = m.precision + m.recall;
    m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
    return m;
}

template <class Id>
Metrics compute_metrics(const std::vector<Id>& ranked, const std::vector<Id>& labels, std::size_t k) {
    return compute_metrics(std::span<const Id>(ranked), std::span<const Id>(labels), k);
}

struct CutoffMetrics {
    std::size_t k;
    Metrics m;
};

struct MetricsReport {
    std::vector<CutoffMetrics> at;
    std::size_t n_cases = 0;
    std::string fingerprint;

    const Metrics& at_k(std::size_t k) const {
        for (const auto& c : at)
            if (c.k == k) return c.m;
        throw LookupError("no metrics at cutoff " + std::to_string(k));
    }
};

// FNV-1a over the model and loss configuration.
inline std::string config_fingerprint(const ModelConfig& model, const LossConfig& loss) {
    const std::string text = model_config_to_json(model).dump() + loss_config_to_json(loss).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// Mean metrics over the test examples, ranking the full catalog with ẑ.
inline MetricsReport evaluate(const Model& m, const std::vector<IndexedExample>& test, std::vector<std::size_t> cutoffs,
                              const LossConfig& loss) {
    if (test.empty()) throw PreconditionError("evaluate: empty test split");
    if (cutoffs.empty()) throw PreconditionError("evaluate: no cutoffs");
    for (auto k : cutoffs)
        if (k < 1) throw PreconditionError("evaluate: cutoffs must be positive");
    const std::size_t kmax = *std::max_element(cutoffs.begin(), cutoffs.end());

    const auto cache = full_item_cache(m);
    std::vector<std::uint32_t> ties(m.vocab.n_items());
    for (std::size_t i = 0; i < ties.size(); ++i) ties[i] = m.vocab.id_rank(i);

    MetricsReport rep;
    rep.n_cases = test.size();
    rep.fingerprint = config_fingerprint(m.config, loss);
    for (auto k : cutoffs) rep.at.push_back({k, {}});

    for (const auto& ex : test) {
        const DenseVector z = user_vector(m, ex, cache, loss.fusion_mode);
        const auto ranked = topk(score_all(z, cache, m.vocab.n_items()), ties, kmax);
        for (auto& c : rep.at) {
            const Metrics x = compute_metrics(std::span<const std::size_t>(ranked), std::span<const std::size_t>(ex.labels), c.k);
            c.m.hr += x.hr;
            c.m.mrr += x.mrr;
            c.m.recall += x.recall;
            c.m.precision += x.precision;
            c.m.f1 += x.f1;
        }
    }
    const double n = static_cast<double>(test.size());
    for (auto& c : rep.at) {
        c.m.hr /= n;
        c.m.mrr /= n;
        c.m.recall /= n;
        c.m.precision /= n;
        c.m.f1 /= n;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Data preparation shared by the training and evaluation entry points.

struct Dataset {
    Vocabulary vocab;
    DatasetSplit split;
    std::vector<IndexedExample> train;
    std::vector<IndexedExample> test;
};

inline Dataset prepare_dataset(const std::vector<ItemMeta>& catalog, const std::vector<Event>& events,
                               const SequenceConfig& seq, double test_fraction) {
    check_events_resolve(events, catalog);
    Dataset d;
    d.vocab = Vocabulary(catalog, users_of(events));
    const auto examples = build_examples(events, seq);
    validate_examples(examples, seq);
    d.split = split_temporal(examples, test_fraction);
    d.train = index_examples(d.vocab, d.split.train);
    d.test = index_examples(d.vocab, d.split.test);
    return d;
}

// ---------------------------------------------------------------------------
// Ablation variants.

struct Variant {
    std::string name;
    FusionMode fusion;
    MetricMode metric;
};

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{
        {"base", FusionMode::none, MetricMode::none},
        {"w/o conf+metric", FusionMode::simple, MetricMode::none},
        {"w/o metric", FusionMode::gated, MetricMode::none},
        {"w/o fusion+sym", FusionMode::none, MetricMode::asym},
        {"w/o sym", FusionMode::gated, MetricMode::asym},
        {"SRU2B", FusionMode::gated, MetricMode::sym},
        {"SRU2B-lab&clk", FusionMode::gated, MetricMode::pair_lab_clk},
        {"SRU2B-unclk&lab", FusionMode::gated, MetricMode::pair_unclk_lab},
        {"SRU2B-unclk&clk", FusionMode::gated, MetricMode::pair_unclk_clk},
    };
    return v;
}

inline const Variant& variant_by_name(const std::string& name) {
    for (const auto& v : all_variants())
        if (v.name == name) return v;
    throw PreconditionError("unknown variant \"" + name + "\"");
}

inline LossConfig variant_loss(const LossConfig& base, const Variant& v) {
    LossConfig l = base;
    l.fusion_mode = v.fusion;
    l.metric_mode = v.metric;
    return l;
}

// Checks that a loss configuration really is the variant it claims to be.
inline void audit_variant(const LossConfig& l, const Variant& v) {
    auto fail = [&](const std::string& what) { throw PreconditionError("variant " + v.name + ": " + what); };
    if (l.fusion_mode != v.fusion) fail("fusion mode is " + std::string(to_string(l.fusion_mode)));
    if (l.metric_mode != v.metric) fail("metric mode is " + std::string(to_string(l.metric_mode)));
    if (v.metric != MetricMode::none && !(l.lambda > 0.0)) fail("metric term enabled but lambda is 0");
    l.validate();
}

struct VariantResult {
    Variant variant;
    MetricsReport report;
    std::vector<EpochLoss> trace;
};

struct AblationTable {
    std::vector<VariantResult> rows;

    const VariantResult& row(const std::string& name) const {
        for (const auto& r : rows)
            if (r.variant.name == name) return r;
        throw LookupError("no ablation row " + name);
    }
    // Relative change of HR@k against the base row.
    double delta_vs_base(const VariantResult& r, std::size_t k) const {
        const double b = row("base").report.at_k(k).hr;
        const double x = r.report.at_k(k).hr;
        return b > 0.0 ? (x - b) / b : 0.0;
    }
};

// Trains one configuration from the seed in `train_cfg` and evaluates it.
inline VariantResult train_and_evaluate(const Dataset& d, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                        const Variant& v, const std::vector<std::size_t>& cutoffs,
                                        const std::function<void(const std::string&)>& log = {}) {
    TrainConfig tc = train_cfg;
    tc.loss = variant_loss(train_cfg.loss, v);
    audit_variant(tc.loss, v);
    Model m = make_model(model_cfg, d.vocab, tc.seed);
    std::vector<EpochLoss> trace;
    if (tc.epochs > 0) {
        Trainer t(m, d.train, tc);
        trace = t.run([&](const EpochLoss& e) {
            if (log) {
                std::ostringstream os;
                os << v.name << " epoch " << e.epoch << " loss " << e.mean_loss;
                log(os.str());
            }
        });
    }
    return {v, evaluate(m, d.test, cutoffs, tc.loss), std::move(trace)};
}

// The base row is always trained (first) since deltas are relative to it.
inline AblationTable run_ablation(const Dataset& d, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                  std::vector<std::string> variant_names, const std::vector<std::size_t>& cutoffs,
                                  const std::function<void(const std::string&)>& log = {}) {
    if (variant_names.empty())
        for (const auto& v : all_variants()) variant_names.push_back(v.name);
    if (std::find(variant_names.begin(), variant_names.end(), "base") == variant_names.end())
        variant_names.insert(variant_names.begin(), "base");
    AblationTable table;
    for (const auto& name : variant_names) {
        table.rows.push_back(train_and_evaluate(d, model_cfg, train_cfg, variant_by_name(name), cutoffs, log));
    }
    return table;
}

inline void write_ablation_csv(std::ostream& out, const AblationTable& t) {
    out << "variant,k,hr,mrr,recall,f1,delta_vs_base,fusion_mode,metric_mode\n";
    out << std::setprecision(17);
    for (const auto& r : t.rows) {
        for (const auto& c : r.report.at) {
            out << r.variant.name << ',' << c.k << ',' << c.m.hr << ',' << c.m.mrr << ',' << c.m.recall << ',' << c.m.f1
                << ',' << t.delta_vs_base(r, c.k) << ',' << to_string(r.variant.fusion) << ','
                << to_string(r.variant.metric) << '\n';
        }
    }
}

inline void write_ablation_text(std::ostream& out, const AblationTable& t) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "variant" << std::setw(8) << "fusion" << std::setw(16) << "metric"
       << std::right << std::setw(5) << "k" << std::setw(9) << "HR" << std::setw(9) << "MRR" << std::setw(9)
       << "Recall" << std::setw(9) << "F1" << std::setw(10) << "dHR" << '\n';
    os << std::fixed;
    for (const auto& r : t.rows) {
        for (const auto& c : r.report.at) {
            os << std::left << std::setw(18) << r.variant.name << std::setw(8) << to_string(r.variant.fusion)
               << std::setw(16) << to_string(r.variant.metric) << std::right << std::setw(5) << c.k
               << std::setprecision(4) << std::setw(9) << c.m.hr << std::setw(9) << c.m.mrr << std::setw(9)
               << c.m.recall << std::setw(9) << c.m.f1 << std::setprecision(2) << std::showpos << std::setw(9)
               << 100.0 * t.delta_vs_base(r, c.k) << '%' << std::noshowpos << '\n';
        }
    }
    out << os.str();
}

inline void write_report_csv(std::ostream& out, const MetricsReport& rep) {
    out << "k,hr,mrr,recall,precision,f1,n_cases,fingerprint\n" << std::setprecision(17);
    for (const auto& c : rep.at) {
        out << c.k << ',' << c.m.hr << ',' << c.m.mrr << ',' << c.m.recall << ',' << c.m.precision << ',' << c.m.f1
            << ',' << rep.n_cases << ',' << rep.fingerprint << '\n';
    }
}

inline void write_report_text(std::ostream& out, const MetricsReport& rep) {
    std::ostringstream os;
    os << "cases " << rep.n_cases << "  config " << rep.fingerprint << '\n' << std::fixed << std::setprecision(4);
    for (const auto& c : rep.at) {
        os << "@" << c.k << "  HR " << c.m.hr << "  MRR " << c.m.mrr << "  Recall " << c.m.recall << "  Precision "
           << c.m.precision << "  F1 " << c.m.f1 << '\n';
    }
    out << os.str();
}

// ---------------------------------------------------------------------------
// Hyperparameter sweep over λ (at the configured m*) and m* (at the
// configured λ) for the full model.

struct SweepRow {
    std::string parameter;  // "lambda" or "margin_sym"
    double value;
    VariantResult result;
};

inline std::vector<SweepRow> run_sweep(const Dataset& d, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                       const SweepConfig& sweep, const std::vector<std::size_t>& cutoffs,
                                       const std::function<void(const std::string&)>& log = {}) {
    const Variant& full = variant_by_name("SRU2B");
    std::vector<SweepRow> rows;
    for (double lam : sweep.lambdas) {
        TrainConfig tc = train_cfg;
        tc.loss.lambda = lam;
        rows.push_back({"lambda", lam, train_and_evaluate(d, model_cfg, tc, full, cutoffs, log)});
    }
    for (double m : sweep.margins) {
        TrainConfig tc = train_cfg;
        tc.loss.margin_sym = m;
        rows.push_back({"margin_sym", m, train_and_evaluate(d, model_cfg, tc, full, cutoffs, log)});
    }
    return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "parameter,value,k,hr,mrr,recall,f1,final_loss\n" << std::setprecision(17);
    for (const auto& r : rows) {
        const double final_loss = r.result.trace.empty() ? std::nan("") : r.result.trace.back().mean_loss;
        for (const auto& c : r.result.report.at) {
            out << r.parameter << ',' << r.value << ',' << c.k << ',' << c.m.hr << ',' << c.m.mrr << ',' << c.m.recall
                << ',' << c.m.f1 << ',' << final_loss << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Embedding export: h, n, c, ẑ per test example, then every item's q.

inline std::size_t write_embeddings_csv(std::ostream& out, const Model& m, const DatasetSplit& split,
                                        const std::vector<IndexedExample>& test, FusionMode fusion) {
    const std::size_t L = m.config.embed_dim;
    out << "type,id";
    for (std::size_t d = 0; d < L; ++d) out << ",d" << d;
    out << '\n' << std::setprecision(17);
    std::size_t rows = 0;
    auto row = [&](const char* type, const std::string& id, const DenseVector& v) {
        out << type << ',' << id;
        for (double x : v.values()) out << ',' << x;
        out << '\n';
        ++rows;
    };
    if (test.empty()) return rows;

    const auto cache = full_item_cache(m);
    for (std::size_t e = 0; e < test.size(); ++e) {
        const auto r = represent(m, test[e], cache, fusion);
        const std::string id = split.test.at(e).user_id + "@" + std::to_string(split.test[e].anchor_time);
        row("h", id, r.h);
        row("n", id, r.n);
        row("c", id, r.c);
        row("z", id, r.z);
    }
    for (std::size_t i = 0; i < m.vocab.n_items(); ++i) row("item", m.vocab.item_id(i), cache.q(i));
    return rows;
}

}  // namespace sru2b
