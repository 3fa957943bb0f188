#pragma once

// Behavior-log ingestion: catalog/event parsing, sequence construction with
// the unclicked-item filtering rules, and the per-user temporal split.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "sru2b/error.hpp"

namespace sru2b {

struct ItemMeta {
    std::string item_id;
    std::string leaf_category;
    std::string first_level_category;
    std::string brand;
    std::string shop;

    bool operator==(const ItemMeta&) const = default;
};

enum class EventType { impression, click };

struct Event {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
    EventType type = EventType::impression;

    bool operator==(const Event&) const = default;
};

struct SequenceConfig {
    std::size_t label_k = 5;
    std::size_t max_clicked_len = 50;
    std::size_t max_unclicked_len = 100;
    std::int64_t unclicked_window_seconds = 259200;  // three days
    std::size_t min_exposures = 2;
};

// History events (clicked_seq, unclicked_seq) have timestamps < anchor_time;
// label clicks have timestamps >= anchor_time.
struct TrainingExample {
    std::string user_id;
    std::int64_t anchor_time = 0;
    std::vector<std::string> clicked_seq;
    std::vector<std::string> unclicked_seq;
    std::vector<std::string> labels;

    bool operator==(const TrainingExample&) const = default;
};

struct DatasetSplit {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> test;
};

// ---------------------------------------------------------------------------
// Line-delimited formats.

namespace detail {

inline bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

inline nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
    try {
        auto j = nlohmann::json::parse(line);
        if (!j.is_object()) throw ParseError(lineno, "record is not an object");
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(lineno, std::string("malformed record: ") + e.what());
    }
}

inline std::string string_field(const nlohmann::json& j, const char* key, std::size_t lineno) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(lineno, std::string("missing key \"") + key + "\"");
    if (!it->is_string()) throw ParseError(lineno, std::string("key \"") + key + "\" is not a string");
    return it->get<std::string>();
}

}  // namespace detail

inline std::vector<ItemMeta> parse_catalog(std::istream& in) {
    std::vector<ItemMeta> items;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const auto j = detail::parse_line(line, lineno);
        ItemMeta m{detail::string_field(j, "i", lineno), detail::string_field(j, "leaf", lineno),
                   detail::string_field(j, "cat", lineno), detail::string_field(j, "brand", lineno),
                   detail::string_field(j, "shop", lineno)};
        if (m.item_id.empty()) throw ParseError(lineno, "empty item id");
        if (!seen.insert(m.item_id).second) throw ParseError(lineno, "duplicate item id \"" + m.item_id + "\"");
        items.push_back(std::move(m));
    }
    return items;
}

// Returned sorted ascending by (user_id, timestamp); ties keep file order.
inline std::vector<Event> parse_events(std::istream& in) {
    std::vector<Event> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const auto j = detail::parse_line(line, lineno);
        Event ev;
        ev.user_id = detail::string_field(j, "u", lineno);
        ev.item_id = detail::string_field(j, "i", lineno);
        auto t = j.find("t");
        if (t == j.end()) throw ParseError(lineno, "missing key \"t\"");
        if (!t->is_number_integer()) throw ParseError(lineno, "key \"t\" is not an integer");
        ev.timestamp = t->get<std::int64_t>();
        if (ev.timestamp < 0) throw ParseError(lineno, "negative timestamp");
        const auto type = detail::string_field(j, "e", lineno);
        if (type == "imp") {
            ev.type = EventType::impression;
        } else if (type == "clk") {
            ev.type = EventType::click;
        } else {
            throw ParseError(lineno, "unknown event type \"" + type + "\"");
        }
        events.push_back(std::move(ev));
    }
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        return a.timestamp < b.timestamp;
    });
    return events;
}

inline void write_catalog(std::ostream& out, const std::vector<ItemMeta>& items) {
    for (const auto& m : items) {
        nlohmann::ordered_json j;
        j["i"] = m.item_id;
        j["leaf"] = m.leaf_category;
        j["cat"] = m.first_level_category;
        j["brand"] = m.brand;
        j["shop"] = m.shop;
        out << j.dump() << '\n';
    }
}

inline void write_events(std::ostream& out, const std::vector<Event>& events) {
    for (const auto& ev : events) {
        nlohmann::ordered_json j;
        j["u"] = ev.user_id;
        j["i"] = ev.item_id;
        j["t"] = ev.timestamp;
        j["e"] = ev.type == EventType::click ? "clk" : "imp";
        out << j.dump() << '\n';
    }
}

// Every event must reference a catalog item.
inline void check_events_resolve(const std::vector<Event>& events, const std::vector<ItemMeta>& catalog) {
    std::unordered_set<std::string> ids;
    for (const auto& m : catalog) ids.insert(m.item_id);
    for (const auto& ev : events) {
        if (!ids.contains(ev.item_id)) {
            throw LookupError("event for user \"" + ev.user_id + "\" references unknown item \"" + ev.item_id + "\"");
        }
    }
}

// ---------------------------------------------------------------------------
// Sequence construction.

namespace detail {

struct TimedItem {
    std::int64_t t;
    const std::string* item;
};

inline void build_user_examples(const std::string& user, const std::vector<TimedItem>& clicks,
                                const std::vector<TimedItem>& imps, const SequenceConfig& cfg,
                                std::vector<TrainingExample>& out) {
    const std::size_t n = clicks.size();
    if (cfg.label_k == 0 || n < cfg.label_k + 1) return;
    for (std::size_t a = 0; a + cfg.label_k < n; ++a) {
        // Anchors sit strictly between two click timestamps so that history
        // and labels never share a timestamp.
        if (clicks[a + 1].t <= clicks[a].t) continue;
        TrainingExample ex;
        ex.user_id = user;
        ex.anchor_time = clicks[a].t + 1;

        const std::size_t first = a + 1 > cfg.max_clicked_len ? a + 1 - cfg.max_clicked_len : 0;
        for (std::size_t k = first; k <= a; ++k) ex.clicked_seq.push_back(*clicks[k].item);
        for (std::size_t k = a + 1; k <= a + cfg.label_k; ++k) ex.labels.push_back(*clicks[k].item);

        const std::int64_t lo = ex.anchor_time - cfg.unclicked_window_seconds;
        const std::int64_t hi = ex.anchor_time;
        auto in_window = [&](const std::vector<TimedItem>& v) {
            auto b = std::lower_bound(v.begin(), v.end(), lo, [](const TimedItem& e, std::int64_t t) { return e.t < t; });
            auto e = std::lower_bound(b, v.end(), hi, [](const TimedItem& x, std::int64_t t) { return x.t < t; });
            return std::pair{b, e};
        };

        std::unordered_set<std::string_view> clicked_in_window;
        auto [cb, ce] = in_window(clicks);
        for (auto it = cb; it != ce; ++it) clicked_in_window.insert(*it->item);

        struct Exposure {
            std::size_t count = 0;
            std::int64_t latest = 0;
        };
        std::map<std::string_view, Exposure> exposures;
        auto [ib, ie] = in_window(imps);
        for (auto it = ib; it != ie; ++it) {
            auto& e = exposures[*it->item];
            ++e.count;
            e.latest = std::max(e.latest, it->t);
        }
        std::vector<std::pair<std::int64_t, std::string_view>> kept;
        for (const auto& [item, e] : exposures) {
            if (e.count >= cfg.min_exposures && !clicked_in_window.contains(item)) kept.emplace_back(e.latest, item);
        }
        std::sort(kept.begin(), kept.end());
        const std::size_t skip = kept.size() > cfg.max_unclicked_len ? kept.size() - cfg.max_unclicked_len : 0;
        for (std::size_t k = skip; k < kept.size(); ++k) ex.unclicked_seq.emplace_back(kept[k].second);

        out.push_back(std::move(ex));
    }
}

}  // namespace detail

// One example per anchor: an anchor follows each click that still has at
// least label_k clicks after it. Input must be sorted as parse_events returns.
inline std::vector<TrainingExample> build_examples(const std::vector<Event>& events, const SequenceConfig& cfg) {
    std::vector<TrainingExample> out;
    std::size_t i = 0;
    while (i < events.size()) {
        const std::string& user = events[i].user_id;
        std::vector<detail::TimedItem> clicks;
        std::vector<detail::TimedItem> imps;
        std::size_t j = i;
        for (; j < events.size() && events[j].user_id == user; ++j) {
            const auto& ev = events[j];
            (ev.type == EventType::click ? clicks : imps).push_back({ev.timestamp, &ev.item_id});
        }
        detail::build_user_examples(user, clicks, imps, cfg, out);
        i = j;
    }
    return out;
}

// Structural invariants of a constructed example; throws PreconditionError
// naming the first violation.
inline void validate_example(const TrainingExample& ex, const SequenceConfig& cfg) {
    auto fail = [&](const std::string& why) {
        throw PreconditionError("example (" + ex.user_id + ", " + std::to_string(ex.anchor_time) + "): " + why);
    };
    if (ex.clicked_seq.empty() || ex.clicked_seq.size() > cfg.max_clicked_len) fail("clicked_seq length out of range");
    if (ex.unclicked_seq.size() > cfg.max_unclicked_len) fail("unclicked_seq too long");
    if (ex.labels.empty() || ex.labels.size() > cfg.label_k) fail("labels length out of range");
    std::unordered_set<std::string_view> seen;
    for (const auto& i : ex.unclicked_seq) {
        if (!seen.insert(i).second) fail("duplicate unclicked item " + i);
    }
}

inline void validate_examples(const std::vector<TrainingExample>& examples, const SequenceConfig& cfg) {
    for (const auto& ex : examples) validate_example(ex, cfg);
}

// Per user, the latest ceil(test_fraction * n) examples (by anchor time) go
// to test. Users appear in ascending id order in both halves.
inline DatasetSplit split_temporal(const std::vector<TrainingExample>& examples, double test_fraction) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw PreconditionError("split_temporal: test_fraction must lie in (0, 1)");
    }
    std::map<std::string, std::vector<const TrainingExample*>> by_user;
    for (const auto& ex : examples) by_user[ex.user_id].push_back(&ex);

    DatasetSplit split;
    for (auto& [user, list] : by_user) {
        std::stable_sort(list.begin(), list.end(),
                         [](const auto* a, const auto* b) { return a->anchor_time < b->anchor_time; });
        const double raw = test_fraction * static_cast<double>(list.size());
        // Products such as 0.3 * 10 land a hair above the integer.
        const auto n_test = static_cast<std::size_t>(std::ceil(raw - 1e-9));
        const std::size_t n_train = list.size() - std::min(n_test, list.size());
        for (std::size_t k = 0; k < list.size(); ++k) {
            (k < n_train ? split.train : split.test).push_back(*list[k]);
        }
    }
    return split;
}

// No user's test anchor may precede one of that user's train anchors.
inline bool split_is_temporal(const DatasetSplit& split) {
    std::unordered_map<std::string, std::int64_t> latest_train;
    for (const auto& ex : split.train) {
        auto [it, fresh] = latest_train.emplace(ex.user_id, ex.anchor_time);
        if (!fresh) it->second = std::max(it->second, ex.anchor_time);
    }
    for (const auto& ex : split.test) {
        auto it = latest_train.find(ex.user_id);
        if (it != latest_train.end() && ex.anchor_time < it->second) return false;
    }
    return true;
}

}  // namespace sru2b
