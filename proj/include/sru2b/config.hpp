#pragma once

// Run configuration: one JSON document with a section per concern. Unknown
// keys are rejected so that typos do not silently fall back to defaults.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "sru2b/datamodel.hpp"
#include "sru2b/error.hpp"
#include "sru2b/objective.hpp"
#include "sru2b/params.hpp"
#include "sru2b/syngen.hpp"
#include "sru2b/trainer.hpp"

namespace sru2b {

struct EvalConfig {
    std::vector<std::size_t> cutoffs{50, 80};
    double test_fraction = 0.2;
    std::vector<std::string> variants;  // empty = all nine
};

struct SweepConfig {
    std::vector<double> lambdas{0.1, 1.0, 10.0};
    std::vector<double> margins{0.01, 1.0, 5.0};
};

struct PathConfig {
    std::string out_dir = "run";
    std::string catalog;     // default <out_dir>/catalog.jsonl
    std::string events;      // default <out_dir>/events.jsonl
    std::string checkpoint;  // default <out_dir>/model.ckpt

    std::filesystem::path out() const { return out_dir; }
    std::filesystem::path catalog_path() const { return catalog.empty() ? out() / "catalog.jsonl" : std::filesystem::path(catalog); }
    std::filesystem::path events_path() const { return events.empty() ? out() / "events.jsonl" : std::filesystem::path(events); }
    std::filesystem::path checkpoint_path() const { return checkpoint.empty() ? out() / "model.ckpt" : std::filesystem::path(checkpoint); }
};

struct RunConfig {
    GenConfig generate;
    SequenceConfig sequence;
    ModelConfig model;
    TrainConfig train;  // train.loss is the "loss" section
    EvalConfig eval;
    SweepConfig sweep;
    PathConfig paths;

    void validate() const {
        generate.validate();
        if (sequence.label_k < 1) throw PreconditionError("sequence.label_k must be at least 1");
        if (sequence.max_clicked_len < 1) throw PreconditionError("sequence.max_clicked_len must be at least 1");
        if (sequence.unclicked_window_seconds < 0) throw PreconditionError("sequence.unclicked_window_seconds must be >= 0");
        if (model.embed_dim < 1) throw PreconditionError("model.embed_dim must be at least 1");
        if (!(model.init_range > 0.0)) throw PreconditionError("model.init_range must be positive");
        train.validate();
        if (eval.cutoffs.empty()) throw PreconditionError("eval.cutoffs must not be empty");
        for (auto k : eval.cutoffs)
            if (k < 1) throw PreconditionError("eval.cutoffs must be positive");
        if (!(eval.test_fraction > 0.0 && eval.test_fraction < 1.0))
            throw PreconditionError("eval.test_fraction must lie in (0, 1)");
    }
};

namespace detail {

using nlohmann::json;

// Reads known keys out of one section and rejects the rest.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw PreconditionError("config section \"" + name_ + "\" must be an object");
    }

    template <class T>
    void get(const char* key, T& dst) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (!it->is_number_integer() || it->template get<long long>() < 0) throw PreconditionError("");
            }
            dst = it->template get<T>();
        } catch (const std::exception&) {
            throw PreconditionError("config key " + name_ + "." + key + " has the wrong type");
        }
    }

    template <class E, class Parse>
    void get_enum(const char* key, E& dst, Parse parse) {
        std::string s;
        bool present = j_.contains(key);
        get(key, s);
        if (present) dst = parse(s);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.contains(it.key())) throw PreconditionError("unknown config key " + name_ + "." + it.key());
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

inline json section_or_empty(const json& root, const char* name) {
    auto it = root.find(name);
    return it == root.end() ? json::object() : *it;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& root) {
    using detail::Section;
    if (!root.is_object()) throw PreconditionError("config must be a JSON object");
    static const std::set<std::string> sections{"generate", "sequence", "model", "loss", "train", "eval", "sweep", "paths"};
    for (auto it = root.begin(); it != root.end(); ++it)
        if (!sections.contains(it.key())) throw PreconditionError("unknown config section \"" + it.key() + "\"");

    RunConfig rc;
    {
        auto j = detail::section_or_empty(root, "generate");
        Section s(j, "generate");
        auto& g = rc.generate;
        s.get("n_users", g.n_users);
        s.get("n_items", g.n_items);
        s.get("n_leaf_categories", g.n_leaf_categories);
        s.get("n_brands", g.n_brands);
        s.get("n_shops", g.n_shops);
        s.get("latent_dim", g.latent_dim);
        s.get("sessions_per_user", g.sessions_per_user);
        s.get("impressions_per_session", g.impressions_per_session);
        s.get("click_bias", g.click_bias);
        s.get("policy_noise", g.policy_noise);
        s.get("click_noise", g.click_noise);
        s.get("seed", g.seed);
        s.get("leaf_spread", g.leaf_spread);
        s.get("item_spread", g.item_spread);
        s.get("user_spread", g.user_spread);
        s.get("affinity_scale", g.affinity_scale);
        s.get("start_time", g.start_time);
        s.get("session_gap_seconds", g.session_gap_seconds);
        s.get("impression_gap_seconds", g.impression_gap_seconds);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "sequence");
        Section s(j, "sequence");
        auto& q = rc.sequence;
        s.get("label_k", q.label_k);
        s.get("max_clicked_len", q.max_clicked_len);
        s.get("max_unclicked_len", q.max_unclicked_len);
        s.get("unclicked_window_seconds", q.unclicked_window_seconds);
        s.get("min_exposures", q.min_exposures);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "model");
        Section s(j, "model");
        auto& m = rc.model;
        s.get("embed_dim", m.embed_dim);
        s.get("item_id_dim", m.feature_dims.item_id);
        s.get("leaf_dim", m.feature_dims.leaf);
        s.get("category_dim", m.feature_dims.category);
        s.get("brand_dim", m.feature_dims.brand);
        s.get("shop_dim", m.feature_dims.shop);
        s.get_enum("clicked_encoder", m.clicked, parse_clicked_encoder);
        s.get("share_label_ffn", m.share_label_ffn);
        s.get("stop_label_gradient", m.stop_label_gradient);
        s.get("init_range", m.init_range);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "loss");
        Section s(j, "loss");
        auto& l = rc.train.loss;
        s.get("margin", l.margin);
        s.get("margin_sym", l.margin_sym);
        s.get("lambda", l.lambda);
        s.get_enum("metric_mode", l.metric_mode, parse_metric_mode);
        s.get_enum("fusion_mode", l.fusion_mode, parse_fusion_mode);
        s.get("num_negatives", l.num_negatives);
        s.get("correction", l.correction);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "train");
        Section s(j, "train");
        auto& t = rc.train;
        s.get("batch_size", t.batch_size);
        s.get("epochs", t.epochs);
        s.get("seed", t.seed);
        s.get("learning_rate", t.learning_rate);
        s.get("epsilon", t.epsilon);
        s.get("clip_norm", t.clip_norm);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "eval");
        Section s(j, "eval");
        s.get("cutoffs", rc.eval.cutoffs);
        s.get("test_fraction", rc.eval.test_fraction);
        s.get("variants", rc.eval.variants);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "sweep");
        Section s(j, "sweep");
        s.get("lambdas", rc.sweep.lambdas);
        s.get("margins", rc.sweep.margins);
        s.finish();
    }
    {
        auto j = detail::section_or_empty(root, "paths");
        Section s(j, "paths");
        s.get("out_dir", rc.paths.out_dir);
        s.get("catalog", rc.paths.catalog);
        s.get("events", rc.paths.events);
        s.get("checkpoint", rc.paths.checkpoint);
        s.finish();
    }
    rc.validate();
    return rc;
}

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& m) {
    return {{"embed_dim", m.embed_dim},
            {"item_id_dim", m.feature_dims.item_id},
            {"leaf_dim", m.feature_dims.leaf},
            {"category_dim", m.feature_dims.category},
            {"brand_dim", m.feature_dims.brand},
            {"shop_dim", m.feature_dims.shop},
            {"clicked_encoder", to_string(m.clicked)},
            {"share_label_ffn", m.share_label_ffn},
            {"stop_label_gradient", m.stop_label_gradient},
            {"init_range", m.init_range}};
}

inline nlohmann::ordered_json loss_config_to_json(const LossConfig& l) {
    return {{"margin", l.margin},
            {"margin_sym", l.margin_sym},
            {"lambda", l.lambda},
            {"metric_mode", to_string(l.metric_mode)},
            {"fusion_mode", to_string(l.fusion_mode)},
            {"num_negatives", l.num_negatives},
            {"correction", l.correction}};
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& t) {
    return {{"batch_size", t.batch_size}, {"epochs", t.epochs},   {"seed", t.seed},
            {"learning_rate", t.learning_rate}, {"epsilon", t.epsilon}, {"clip_norm", t.clip_norm}};
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& rc) {
    const auto& g = rc.generate;
    const auto& q = rc.sequence;
    nlohmann::ordered_json j;
    j["generate"] = {{"n_users", g.n_users},
                     {"n_items", g.n_items},
                     {"n_leaf_categories", g.n_leaf_categories},
                     {"n_brands", g.n_brands},
                     {"n_shops", g.n_shops},
                     {"latent_dim", g.latent_dim},
                     {"sessions_per_user", g.sessions_per_user},
                     {"impressions_per_session", g.impressions_per_session},
                     {"click_bias", g.click_bias},
                     {"policy_noise", g.policy_noise},
                     {"click_noise", g.click_noise},
                     {"seed", g.seed},
                     {"leaf_spread", g.leaf_spread},
                     {"item_spread", g.item_spread},
                     {"user_spread", g.user_spread},
                     {"affinity_scale", g.affinity_scale},
                     {"start_time", g.start_time},
                     {"session_gap_seconds", g.session_gap_seconds},
                     {"impression_gap_seconds", g.impression_gap_seconds}};
    j["sequence"] = {{"label_k", q.label_k},
                     {"max_clicked_len", q.max_clicked_len},
                     {"max_unclicked_len", q.max_unclicked_len},
                     {"unclicked_window_seconds", q.unclicked_window_seconds},
                     {"min_exposures", q.min_exposures}};
    j["model"] = model_config_to_json(rc.model);
    j["loss"] = loss_config_to_json(rc.train.loss);
    j["train"] = train_config_to_json(rc.train);
    j["eval"] = {{"cutoffs", rc.eval.cutoffs}, {"test_fraction", rc.eval.test_fraction}, {"variants", rc.eval.variants}};
    j["sweep"] = {{"lambdas", rc.sweep.lambdas}, {"margins", rc.sweep.margins}};
    j["paths"] = {{"out_dir", rc.paths.out_dir},
                  {"catalog", rc.paths.catalog},
                  {"events", rc.paths.events},
                  {"checkpoint", rc.paths.checkpoint}};
    return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw PreconditionError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace sru2b
