#pragma once

// Learnable tensors. Gradients and optimizer accumulators reuse ModelParams,
// so every structure that mirrors the parameters has identical shapes.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <type_traits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sru2b/error.hpp"
#include "sru2b/numcore.hpp"
#include "sru2b/rng.hpp"
#include "sru2b/vocab.hpp"

namespace sru2b {

enum class ClickedEncoder { meanpool, recurrent };

inline const char* to_string(ClickedEncoder e) { return e == ClickedEncoder::meanpool ? "meanpool" : "recurrent"; }

inline ClickedEncoder parse_clicked_encoder(std::string_view s) {
    if (s == "meanpool") return ClickedEncoder::meanpool;
    if (s == "recurrent") return ClickedEncoder::recurrent;
    throw PreconditionError("unknown clicked encoder \"" + std::string(s) + "\"");
}

struct FeatureDims {
    std::size_t item_id = 64;
    std::size_t leaf = 24;
    std::size_t category = 16;
    std::size_t brand = 12;
    std::size_t shop = 12;

    std::size_t operator[](std::size_t slot) const {
        switch (slot) {
            case kItemId: return item_id;
            case kLeaf: return leaf;
            case kCategory: return category;
            case kBrand: return brand;
            default: return shop;
        }
    }
    std::size_t total() const { return item_id + leaf + category + brand + shop; }
};

struct ModelConfig {
    std::size_t embed_dim = 32;  // L_e
    FeatureDims feature_dims;
    ClickedEncoder clicked = ClickedEncoder::meanpool;
    bool share_label_ffn = false;
    bool stop_label_gradient = false;
    double init_range = 0.05;
};

struct EmbeddingTables {
    DenseMatrix item_id, leaf, category, brand, shop;
    DenseMatrix user;

    const DenseMatrix& feature(std::size_t slot) const {
        switch (slot) {
            case kItemId: return item_id;
            case kLeaf: return leaf;
            case kCategory: return category;
            case kBrand: return brand;
            default: return shop;
        }
    }
    DenseMatrix& feature(std::size_t slot) {
        return const_cast<DenseMatrix&>(static_cast<const EmbeddingTables&>(*this).feature(slot));
    }
};

// Gated recurrent cell; empty when the clicked encoder is meanpool.
struct RecurrentParams {
    DenseMatrix w_z, u_z, w_r, u_r, w_o, u_o;
    DenseVector b_z, b_r, b_o;
};

struct EncoderParams {
    DenseMatrix w_q;  // item projection, L_e x feature width
    DenseVector b_q;
    DenseMatrix w_h;  // clicked head, L_e x 2L_e over concat(pooled, e_u)
    DenseVector b_h;
    RecurrentParams gru;
    DenseMatrix w_n;  // unclicked FFN
    DenseVector b_n;
    DenseMatrix w_c;  // label FFN; empty when shared with w_n
    DenseVector b_c;
};

struct FusionParams {
    DenseMatrix w_g;  // L_e x 2L_e
    DenseVector b_g;
};

struct ModelParams {
    EmbeddingTables tables;
    EncoderParams encoder;
    FusionParams fusion;
};

// Visits every non-empty tensor as (name, values, dims) in a fixed order.
// The order and names define the checkpoint layout.
template <class P, class F>
    requires std::same_as<std::remove_const_t<P>, ModelParams>
void for_each_tensor(P& p, F&& f) {
    auto mat = [&](const char* name, auto& m) {
        if (!m.empty()) f(std::string_view(name), m.values(), std::vector<std::uint64_t>{m.rows(), m.cols()});
    };
    auto vec = [&](const char* name, auto& v) {
        if (!v.empty()) f(std::string_view(name), v.values(), std::vector<std::uint64_t>{v.size()});
    };
    mat("tables.item_id", p.tables.item_id);
    mat("tables.leaf", p.tables.leaf);
    mat("tables.category", p.tables.category);
    mat("tables.brand", p.tables.brand);
    mat("tables.shop", p.tables.shop);
    mat("tables.user", p.tables.user);
    mat("encoder.w_q", p.encoder.w_q);
    vec("encoder.b_q", p.encoder.b_q);
    mat("encoder.w_h", p.encoder.w_h);
    vec("encoder.b_h", p.encoder.b_h);
    mat("encoder.gru.w_z", p.encoder.gru.w_z);
    mat("encoder.gru.u_z", p.encoder.gru.u_z);
    vec("encoder.gru.b_z", p.encoder.gru.b_z);
    mat("encoder.gru.w_r", p.encoder.gru.w_r);
    mat("encoder.gru.u_r", p.encoder.gru.u_r);
    vec("encoder.gru.b_r", p.encoder.gru.b_r);
    mat("encoder.gru.w_o", p.encoder.gru.w_o);
    mat("encoder.gru.u_o", p.encoder.gru.u_o);
    vec("encoder.gru.b_o", p.encoder.gru.b_o);
    mat("encoder.w_n", p.encoder.w_n);
    vec("encoder.b_n", p.encoder.b_n);
    mat("encoder.w_c", p.encoder.w_c);
    vec("encoder.b_c", p.encoder.b_c);
    mat("fusion.w_g", p.fusion.w_g);
    vec("fusion.b_g", p.fusion.b_g);
}

struct VocabSizes {
    std::size_t items = 0, leaf = 0, category = 0, brand = 0, shop = 0, users = 0;

    static VocabSizes of(const Vocabulary& v) {
        return {v.n_items(), v.feature_size(kLeaf), v.feature_size(kCategory), v.feature_size(kBrand),
                v.feature_size(kShop), v.n_users()};
    }
    bool operator==(const VocabSizes&) const = default;
};

// All-zero parameters with the shapes implied by (config, vocabulary).
inline ModelParams zero_params(const ModelConfig& cfg, const VocabSizes& vs) {
    const std::size_t L = cfg.embed_dim;
    if (L == 0) throw PreconditionError("embed_dim must be positive");
    const auto& fd = cfg.feature_dims;
    ModelParams p;
    p.tables.item_id = DenseMatrix(vs.items, fd.item_id);
    p.tables.leaf = DenseMatrix(vs.leaf, fd.leaf);
    p.tables.category = DenseMatrix(vs.category, fd.category);
    p.tables.brand = DenseMatrix(vs.brand, fd.brand);
    p.tables.shop = DenseMatrix(vs.shop, fd.shop);
    p.tables.user = DenseMatrix(vs.users, L);

    auto& e = p.encoder;
    e.w_q = DenseMatrix(L, fd.total());
    e.b_q = DenseVector(L);
    e.w_h = DenseMatrix(L, 2 * L);
    e.b_h = DenseVector(L);
    if (cfg.clicked == ClickedEncoder::recurrent) {
        for (auto* m : {&e.gru.w_z, &e.gru.u_z, &e.gru.w_r, &e.gru.u_r, &e.gru.w_o, &e.gru.u_o}) *m = DenseMatrix(L, L);
        for (auto* v : {&e.gru.b_z, &e.gru.b_r, &e.gru.b_o}) *v = DenseVector(L);
    }
    e.w_n = DenseMatrix(L, L);
    e.b_n = DenseVector(L);
    if (!cfg.share_label_ffn) {
        e.w_c = DenseMatrix(L, L);
        e.b_c = DenseVector(L);
    }
    p.fusion.w_g = DenseMatrix(L, 2 * L);
    p.fusion.b_g = DenseVector(L);
    return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for_each_tensor(z, [](std::string_view, std::span<double> v, const auto&) { std::fill(v.begin(), v.end(), 0.0); });
    return z;
}

inline void set_zero(ModelParams& p) {
    for_each_tensor(p, [](std::string_view, std::span<double> v, const auto&) { std::fill(v.begin(), v.end(), 0.0); });
}

// Weights and tables uniform in [-init_range, init_range]; biases zero.
inline ModelParams init_params(const ModelConfig& cfg, const VocabSizes& vs, std::uint64_t seed) {
    ModelParams p = zero_params(cfg, vs);
    std::uint64_t k = 0;
    for_each_tensor(p, [&](std::string_view, std::span<double> v, const std::vector<std::uint64_t>& dims) {
        Rng rng = Rng::stream(seed, {0x1417, k++});
        if (dims.size() == 1) return;
        for (double& x : v) x = rng.uniform(-cfg.init_range, cfg.init_range);
    });
    return p;
}

inline std::size_t parameter_count(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](std::string_view, std::span<const double> v, const auto&) { n += v.size(); });
    return n;
}

inline double global_norm(const ModelParams& g) {
    double s = 0.0;
    for_each_tensor(g, [&](std::string_view, std::span<const double> v, const auto&) { s += dot(v, v); });
    return std::sqrt(s);
}

}  // namespace sru2b
