#pragma once

// Ties the encoders and the objective together for one example: forward to
// h, n, c and ẑ, the combined loss, and the backward pass into ModelParams.

#include <span>
#include <vector>

#include "sru2b/encoders.hpp"
#include "sru2b/objective.hpp"
#include "sru2b/params.hpp"
#include "sru2b/vocab.hpp"

namespace sru2b {

struct Model {
    ModelConfig config;
    Vocabulary vocab;
    ModelParams params;
};

inline Model make_model(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
    Model m{cfg, std::move(vocab), {}};
    m.params = init_params(cfg, VocabSizes::of(m.vocab), seed);
    return m;
}

// Cached per-example activations.
struct ForwardState {
    ClickedState clicked;
    PooledState unclicked;
    PooledState labels;
    std::vector<std::size_t> label_slots;
    std::vector<std::size_t> negative_slots;
    std::vector<double> negative_prob;
};

// Registers every item the example touches; call cache.forward() afterwards.
inline void register_items(const IndexedExample& ex, std::span<const Negative> negatives, ItemEmbeddingCache& cache) {
    for (auto* seq : {&ex.clicked, &ex.unclicked, &ex.labels})
        for (std::size_t i : *seq) cache.slot(i);
    for (const auto& neg : negatives) cache.slot(neg.item);
}

inline ForwardState forward_example(const Model& m, const IndexedExample& ex, std::span<const Negative> negatives,
                                    ItemEmbeddingCache& cache) {
    ForwardState st;
    st.clicked = encode_clicked(cache.slots(ex.clicked), ex.user, cache, m.params, m.config.clicked);
    st.unclicked = encode_unclicked(cache.slots(ex.unclicked), cache, m.params);
    st.label_slots = cache.slots(ex.labels);
    st.labels = encode_labels(st.label_slots, cache, m.params);
    st.negative_slots.reserve(negatives.size());
    st.negative_prob.reserve(negatives.size());
    for (const auto& neg : negatives) {
        st.negative_slots.push_back(cache.slot(neg.item));
        st.negative_prob.push_back(neg.proposal_prob);
    }
    return st;
}

inline LossResult example_loss(const Model& m, const ForwardState& st, const ItemEmbeddingCache& cache,
                               const LossConfig& cfg, FusionParams* fusion_grad, double grad_scale) {
    std::vector<const DenseVector*> label_q, negative_q;
    label_q.reserve(st.label_slots.size());
    negative_q.reserve(st.negative_slots.size());
    for (std::size_t s : st.label_slots) label_q.push_back(&cache.q(s));
    for (std::size_t s : st.negative_slots) negative_q.push_back(&cache.q(s));
    return total_loss(st.clicked.h, st.unclicked.out, st.labels.out, label_q, negative_q, st.negative_prob,
                      m.params.fusion, fusion_grad, cfg, grad_scale);
}

// Pushes dh, dn, dc and the candidate-item gradients back through the
// encoders into `grads` and the cache's dq slots.
inline void backward_encoders(const Model& m, const ForwardState& st, const LossResult& lr, ModelParams& grads,
                              ItemEmbeddingCache& cache) {
    for (std::size_t l = 0; l < st.label_slots.size(); ++l) axpy(1.0, lr.d_label_q[l].values(), cache.dq(st.label_slots[l]).values());
    for (std::size_t j = 0; j < st.negative_slots.size(); ++j)
        axpy(1.0, lr.d_negative_q[j].values(), cache.dq(st.negative_slots[j]).values());
    backward_clicked(st.clicked, lr.dh, m.params, grads, cache);
    backward_unclicked(st.unclicked, lr.dn, m.params, grads, cache);
    if (!m.config.stop_label_gradient) backward_labels(st.labels, lr.dc, m.params, grads, cache);
}

// Loss of one example; its gradient, scaled by grad_scale, is added to
// `grads` (item-level contributions stay in the cache until cache.backward).
inline double accumulate_example(const Model& m, const IndexedExample& ex, std::span<const Negative> negatives,
                                 const LossConfig& cfg, double grad_scale, ItemEmbeddingCache& cache,
                                 ModelParams& grads) {
    const auto st = forward_example(m, ex, negatives, cache);
    const auto lr = example_loss(m, st, cache, cfg, &grads.fusion, grad_scale);
    backward_encoders(m, st, lr, grads, cache);
    return lr.loss;
}

// Mean loss over a set of examples and its full parameter gradient.
inline double batch_loss_and_gradient(const Model& m, std::span<const IndexedExample> examples,
                                      std::span<const std::vector<Negative>> negatives, const LossConfig& cfg,
                                      ModelParams& grads, ItemEmbeddingCache& cache) {
    cache.clear();
    for (std::size_t e = 0; e < examples.size(); ++e) register_items(examples[e], negatives[e], cache);
    cache.forward(m.vocab, m.params);
    const double scale = 1.0 / static_cast<double>(examples.size());
    double loss = 0.0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        loss += accumulate_example(m, examples[e], negatives[e], cfg, scale, cache, grads);
    }
    cache.backward(m.vocab, m.params, grads);
    return loss * scale;
}

// Mean loss only.
inline double batch_loss(const Model& m, std::span<const IndexedExample> examples,
                         std::span<const std::vector<Negative>> negatives, const LossConfig& cfg,
                         ItemEmbeddingCache& cache) {
    cache.clear();
    for (std::size_t e = 0; e < examples.size(); ++e) register_items(examples[e], negatives[e], cache);
    cache.forward(m.vocab, m.params);
    double loss = 0.0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto st = forward_example(m, examples[e], negatives[e], cache);
        loss += example_loss(m, st, cache, cfg, nullptr, 1.0).loss;
    }
    return loss / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Inference.

// Cache holding every catalog item with slot == item index.
inline ItemEmbeddingCache full_item_cache(const Model& m) {
    ItemEmbeddingCache cache(m.vocab.n_items());
    for (std::size_t i = 0; i < m.vocab.n_items(); ++i) cache.slot(i);
    cache.forward(m.vocab, m.params);
    return cache;
}

struct UserRepresentation {
    DenseVector h, n, c, z;
};

// h, n, c and the fused ẑ for an example. `cache` must be a full item cache.
inline UserRepresentation represent(const Model& m, const IndexedExample& ex, const ItemEmbeddingCache& cache,
                                    FusionMode fusion) {
    UserRepresentation r;
    r.h = encode_clicked(ex.clicked, ex.user, cache, m.params, m.config.clicked).h;
    r.n = encode_unclicked(ex.unclicked, cache, m.params).out;
    r.c = encode_labels(ex.labels, cache, m.params).out;
    r.z = fuse(r.h, r.n, m.params.fusion, fusion).z;
    return r;
}

inline DenseVector user_vector(const Model& m, const IndexedExample& ex, const ItemEmbeddingCache& cache,
                               FusionMode fusion) {
    const DenseVector h = encode_clicked(ex.clicked, ex.user, cache, m.params, m.config.clicked).h;
    if (fusion == FusionMode::none) return h;
    const DenseVector n = encode_unclicked(ex.unclicked, cache, m.params).out;
    return fuse(h, n, m.params.fusion, fusion).z;
}

}  // namespace sru2b
