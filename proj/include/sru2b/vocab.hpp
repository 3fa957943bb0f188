#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sru2b/datamodel.hpp"
#include "sru2b/error.hpp"

namespace sru2b {

enum FeatureSlot : std::size_t { kItemId = 0, kLeaf = 1, kCategory = 2, kBrand = 3, kShop = 4, kNumFeatures = 5 };

// Dense integer ids for everything a model looks up by string.
class Vocabulary {
public:
    Vocabulary() = default;

    Vocabulary(const std::vector<ItemMeta>& catalog, std::vector<std::string> user_ids) {
        std::array<std::vector<std::string>, kNumFeatures> values;
        for (const auto& m : catalog) {
            values[kLeaf].push_back(m.leaf_category);
            values[kCategory].push_back(m.first_level_category);
            values[kBrand].push_back(m.brand);
            values[kShop].push_back(m.shop);
        }
        for (std::size_t f = kLeaf; f < kNumFeatures; ++f) {
            auto& v = values[f];
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            feature_sizes_[f] = v.size();
        }
        feature_sizes_[kItemId] = catalog.size();

        auto index_of = [&](std::size_t f, const std::string& s) {
            const auto& v = values[f];
            return static_cast<std::uint32_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
        };
        item_ids_.reserve(catalog.size());
        features_.reserve(catalog.size());
        for (std::size_t i = 0; i < catalog.size(); ++i) {
            const auto& m = catalog[i];
            if (!item_index_.emplace(m.item_id, i).second) throw PreconditionError("duplicate item id " + m.item_id);
            item_ids_.push_back(m.item_id);
            features_.push_back({static_cast<std::uint32_t>(i), index_of(kLeaf, m.leaf_category),
                                 index_of(kCategory, m.first_level_category), index_of(kBrand, m.brand),
                                 index_of(kShop, m.shop)});
        }

        // Ties in retrieval break by ascending item id.
        std::vector<std::size_t> order(catalog.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return item_ids_[a] < item_ids_[b]; });
        id_rank_.resize(order.size());
        for (std::size_t r = 0; r < order.size(); ++r) id_rank_[order[r]] = static_cast<std::uint32_t>(r);

        std::sort(user_ids.begin(), user_ids.end());
        user_ids.erase(std::unique(user_ids.begin(), user_ids.end()), user_ids.end());
        user_ids_ = std::move(user_ids);
        for (std::size_t u = 0; u < user_ids_.size(); ++u) user_index_.emplace(user_ids_[u], u);
    }

    std::size_t n_items() const noexcept { return item_ids_.size(); }
    std::size_t n_users() const noexcept { return user_ids_.size(); }
    std::size_t feature_size(std::size_t slot) const { return feature_sizes_.at(slot); }

    std::size_t item(const std::string& id) const {
        auto it = item_index_.find(id);
        if (it == item_index_.end()) throw LookupError("unknown item id \"" + id + "\"");
        return it->second;
    }
    std::size_t user(const std::string& id) const {
        auto it = user_index_.find(id);
        if (it == user_index_.end()) throw LookupError("unknown user id \"" + id + "\"");
        return it->second;
    }

    const std::string& item_id(std::size_t i) const { return item_ids_.at(i); }
    const std::string& user_id(std::size_t u) const { return user_ids_.at(u); }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }

    // Table rows for (item_id, leaf, category, brand, shop).
    const std::array<std::uint32_t, kNumFeatures>& features(std::size_t item) const { return features_[item]; }
    std::uint32_t id_rank(std::size_t item) const { return id_rank_[item]; }

private:
    std::vector<std::string> item_ids_;
    std::unordered_map<std::string, std::size_t> item_index_;
    std::vector<std::array<std::uint32_t, kNumFeatures>> features_;
    std::array<std::size_t, kNumFeatures> feature_sizes_{};
    std::vector<std::uint32_t> id_rank_;
    std::vector<std::string> user_ids_;
    std::unordered_map<std::string, std::size_t> user_index_;
};

inline std::vector<std::string> users_of(const std::vector<Event>& events) {
    std::vector<std::string> ids;
    for (const auto& ev : events) {
        if (ids.empty() || ids.back() != ev.user_id) ids.push_back(ev.user_id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// A TrainingExample with every id resolved.
struct IndexedExample {
    std::size_t user = 0;
    std::vector<std::size_t> clicked;
    std::vector<std::size_t> unclicked;
    std::vector<std::size_t> labels;
};

inline IndexedExample index_example(const Vocabulary& vocab, const TrainingExample& ex) {
    IndexedExample out;
    out.user = vocab.user(ex.user_id);
    auto map = [&](const std::vector<std::string>& ids, std::vector<std::size_t>& dst) {
        dst.reserve(ids.size());
        for (const auto& id : ids) dst.push_back(vocab.item(id));
    };
    map(ex.clicked_seq, out.clicked);
    map(ex.unclicked_seq, out.unclicked);
    map(ex.labels, out.labels);
    return out;
}

inline std::vector<IndexedExample> index_examples(const Vocabulary& vocab, const std::vector<TrainingExample>& xs) {
    std::vector<IndexedExample> out;
    out.reserve(xs.size());
    for (const auto& ex : xs) out.push_back(index_example(vocab, ex));
    return out;
}

}  // namespace sru2b
