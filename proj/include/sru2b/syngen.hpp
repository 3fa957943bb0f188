#pragma once

// Synthetic behavior logs in which impressed-but-unclicked items sit between
// clicked items and random items in latent affinity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sru2b/datamodel.hpp"
#include "sru2b/error.hpp"
#include "sru2b/numcore.hpp"
#include "sru2b/rng.hpp"

namespace sru2b {

struct GenConfig {
    std::size_t n_users = 500;
    std::size_t n_items = 2000;
    std::size_t n_leaf_categories = 100;
    std::size_t n_brands = 200;
    std::size_t n_shops = 300;
    std::size_t latent_dim = 8;
    std::size_t sessions_per_user = 12;
    std::size_t impressions_per_session = 20;
    double click_bias = -1.0;
    double policy_noise = 0.5;
    double click_noise = 0.5;
    std::uint64_t seed = 1;

    // Latent geometry.
    double leaf_spread = 0.5;     // leaf centroid around its first-level centroid
    double item_spread = 0.35;    // item around its leaf centroid
    double user_spread = 1.0;     // user around the mean of two favorite categories
    double affinity_scale = 0.1;  // multiplies user latents; larger values saturate HR@50

    std::int64_t start_time = 1600000000;
    std::int64_t session_gap_seconds = 21600;
    std::int64_t impression_gap_seconds = 10;

    // The subset generate_catalog needs.
    void validate_catalog() const {
        auto need = [](bool ok, const char* what) {
            if (!ok) throw PreconditionError(std::string("GenConfig: ") + what);
        };
        need(n_users > 0 && n_items > 0 && n_leaf_categories > 0 && n_brands > 0 && n_shops > 0,
             "counts must be positive");
        need(latent_dim > 0, "latent_dim must be positive");
    }

    void validate() const {
        validate_catalog();
        auto need = [](bool ok, const char* what) {
            if (!ok) throw PreconditionError(std::string("GenConfig: ") + what);
        };
        need(sessions_per_user > 0, "sessions_per_user must be positive");
        need(impressions_per_session >= 2, "impressions_per_session must be at least 2");
        need(n_items >= impressions_per_session, "n_items must be at least impressions_per_session");
        need(policy_noise >= 0.0 && click_noise >= 0.0, "noise levels must be non-negative");
        need(impression_gap_seconds >= 2, "impression_gap_seconds must be at least 2");
        need(session_gap_seconds > 2 * impression_gap_seconds * static_cast<std::int64_t>(impressions_per_session),
             "sessions would overlap");
    }
};

struct SyntheticCatalog {
    std::vector<ItemMeta> items;
    std::vector<std::vector<double>> item_latents;  // parallel to items
};

struct SyntheticUsers {
    std::vector<std::string> user_ids;
    std::vector<std::vector<double>> latents;
    // Per-user additive offset of the affinity: centers each user's top
    // impression scores at zero so click_bias sets the click-through rate.
    std::vector<double> offsets;
};

struct SyntheticLog {
    SyntheticCatalog catalog;
    SyntheticUsers users;
    std::vector<Event> events;
};

namespace detail {

inline std::string padded(const char* prefix, std::size_t i, std::size_t count) {
    std::size_t width = 1;
    for (std::size_t n = count > 0 ? count - 1 : 0; n >= 10; n /= 10) ++width;
    std::string digits = std::to_string(i);
    return prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

inline std::size_t n_first_level(const GenConfig& cfg) { return (cfg.n_leaf_categories + 4) / 5; }

inline std::vector<std::vector<double>> first_level_centroids(const GenConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, {0xCA7, 0});
    std::vector<std::vector<double>> c(n_first_level(cfg), std::vector<double>(cfg.latent_dim));
    for (auto& v : c)
        for (double& x : v) x = rng.normal();
    return c;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

// Leaf l nests under first-level category l / 5. Item latent = leaf centroid
// + a small per-item offset, so items in one leaf cluster tightly.
inline SyntheticCatalog generate_catalog(const GenConfig& cfg) {
    cfg.validate_catalog();
    const auto firsts = detail::first_level_centroids(cfg);
    Rng leaf_rng = Rng::stream(cfg.seed, {0xCA7, 1});
    std::vector<std::vector<double>> leaves(cfg.n_leaf_categories, std::vector<double>(cfg.latent_dim));
    for (std::size_t l = 0; l < cfg.n_leaf_categories; ++l) {
        for (std::size_t d = 0; d < cfg.latent_dim; ++d) {
            leaves[l][d] = firsts[l / 5][d] + leaf_rng.normal(0.0, cfg.leaf_spread);
        }
    }

    SyntheticCatalog cat;
    cat.items.reserve(cfg.n_items);
    cat.item_latents.reserve(cfg.n_items);
    Rng rng = Rng::stream(cfg.seed, {0xCA7, 2});
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
        const auto leaf = static_cast<std::size_t>(rng.below(cfg.n_leaf_categories));
        // Brands concentrate within a leaf; shops are unrelated to content.
        const auto brand = static_cast<std::size_t>((leaf * 7 + rng.below(5)) % cfg.n_brands);
        const auto shop = static_cast<std::size_t>(rng.below(cfg.n_shops));
        cat.items.push_back({detail::padded("i", i, cfg.n_items),
                             detail::padded("leaf", leaf, cfg.n_leaf_categories),
                             detail::padded("cat", leaf / 5, detail::n_first_level(cfg)),
                             detail::padded("b", brand, cfg.n_brands), detail::padded("s", shop, cfg.n_shops)});
        std::vector<double> v(cfg.latent_dim);
        for (std::size_t d = 0; d < cfg.latent_dim; ++d) v[d] = leaves[leaf][d] + rng.normal(0.0, cfg.item_spread);
        cat.item_latents.push_back(std::move(v));
    }
    return cat;
}

inline SyntheticUsers generate_users(const GenConfig& cfg, const SyntheticCatalog& catalog) {
    cfg.validate();
    const auto firsts = detail::first_level_centroids(cfg);
    SyntheticUsers users;
    std::vector<double> scores(catalog.items.size());
    for (std::size_t u = 0; u < cfg.n_users; ++u) {
        Rng rng = Rng::stream(cfg.seed, {0x05E, u});
        const auto f1 = rng.below(firsts.size());
        const auto f2 = rng.below(firsts.size());
        std::vector<double> v(cfg.latent_dim);
        for (std::size_t d = 0; d < cfg.latent_dim; ++d) {
            v[d] = cfg.affinity_scale *
                   (0.5 * (firsts[f1][d] + firsts[f2][d]) + rng.normal(0.0, cfg.user_spread));
        }
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = detail::dot(v, catalog.item_latents[i]);
        const std::size_t k = cfg.impressions_per_session;
        std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k - 1), scores.end(),
                         std::greater<>());
        const double top_mean = std::accumulate(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
                                static_cast<double>(k);
        users.user_ids.push_back(detail::padded("u", u, cfg.n_users));
        users.latents.push_back(std::move(v));
        users.offsets.push_back(-top_mean);
    }
    return users;
}

// Latent affinity the click model uses: user·item plus the user's offset.
inline double affinity(const SyntheticUsers& users, std::size_t u, const SyntheticCatalog& catalog, std::size_t i) {
    return detail::dot(users.latents[u], catalog.item_latents[i]) + users.offsets[u];
}

// Per (user, session): score every item by affinity + N(0, policy_noise),
// impress the top impressions_per_session in rank order, click each with
// probability sigmoid(affinity + click_bias + N(0, click_noise)). Clicks are
// logged one second after their impression.
inline std::vector<Event> generate_events(const GenConfig& cfg, const SyntheticCatalog& catalog,
                                          const SyntheticUsers& users) {
    cfg.validate();
    const std::size_t n = catalog.items.size();
    const std::size_t k = cfg.impressions_per_session;
    std::vector<Event> events;
    std::vector<double> noisy(n);
    std::vector<std::size_t> order(n);
    for (std::size_t u = 0; u < users.user_ids.size(); ++u) {
        const std::int64_t user_start = cfg.start_time + static_cast<std::int64_t>(Rng::stream(cfg.seed, {0x57A, u}).below(3600));
        for (std::size_t s = 0; s < cfg.sessions_per_user; ++s) {
            Rng rng = Rng::stream(cfg.seed, {0xE7E, u, s});
            for (std::size_t i = 0; i < n; ++i) {
                noisy[i] = affinity(users, u, catalog, i);
                if (cfg.policy_noise > 0.0) noisy[i] += rng.normal(0.0, cfg.policy_noise);
            }
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  return noisy[a] != noisy[b] ? noisy[a] > noisy[b] : a < b;
                              });
            const std::int64_t session_start = user_start + static_cast<std::int64_t>(s) * cfg.session_gap_seconds;
            for (std::size_t r = 0; r < k; ++r) {
                const std::size_t item = order[r];
                const std::int64_t t = session_start + static_cast<std::int64_t>(r) * cfg.impression_gap_seconds;
                events.push_back({users.user_ids[u], catalog.items[item].item_id, t, EventType::impression});
                double logit = affinity(users, u, catalog, item) + cfg.click_bias;
                if (cfg.click_noise > 0.0) logit += rng.normal(0.0, cfg.click_noise);
                if (rng.uniform() < sigmoid(logit)) {
                    events.push_back({users.user_ids[u], catalog.items[item].item_id, t + 1, EventType::click});
                }
            }
        }
    }
    return events;
}

inline SyntheticLog generate_log(const GenConfig& cfg) {
    SyntheticLog log;
    log.catalog = generate_catalog(cfg);
    log.users = generate_users(cfg, log.catalog);
    log.events = generate_events(cfg, log.catalog, log.users);
    return log;
}

// One JSON object per line: {"kind":"item"|"user","id":...,"v":[...]}; user
// rows also carry "offset".
inline void write_latents(std::ostream& out, const SyntheticLog& log) {
    for (std::size_t i = 0; i < log.catalog.items.size(); ++i) {
        nlohmann::ordered_json j;
        j["kind"] = "item";
        j["id"] = log.catalog.items[i].item_id;
        j["v"] = log.catalog.item_latents[i];
        out << j.dump() << '\n';
    }
    for (std::size_t u = 0; u < log.users.user_ids.size(); ++u) {
        nlohmann::ordered_json j;
        j["kind"] = "user";
        j["id"] = log.users.user_ids[u];
        j["v"] = log.users.latents[u];
        j["offset"] = log.users.offsets[u];
        out << j.dump() << '\n';
    }
}

}  // namespace sru2b
