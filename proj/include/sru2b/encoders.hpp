#pragma once

// Item embedding and the clicked / unclicked / label sequence encoders, each
// with a hand-derived backward pass.

#include <cstdint>
#include <span>
#include <vector>

#include "sru2b/error.hpp"
#include "sru2b/numcore.hpp"
#include "sru2b/params.hpp"
#include "sru2b/vocab.hpp"

namespace sru2b {

// Concatenated feature embeddings of one item (the projection input).
inline void gather_features(std::size_t item, const Vocabulary& vocab, const ModelParams& p, std::span<double> out) {
    const auto& rows = vocab.features(item);
    std::size_t off = 0;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        const auto src = p.tables.feature(f).row(rows[f]);
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
        off += src.size();
    }
}

// q_i = tanh(W_q concat(features) + b_q)
inline DenseVector embed_item(std::size_t item, const Vocabulary& vocab, const ModelParams& p) {
    if (item >= vocab.n_items()) throw LookupError("item index " + std::to_string(item) + " out of range");
    DenseVector x(p.encoder.w_q.cols());
    gather_features(item, vocab, p, x.values());
    return tanh_map(affine(p.encoder.w_q, x, p.encoder.b_q));
}

inline DenseVector embed_item(const std::string& item_id, const Vocabulary& vocab, const ModelParams& p) {
    return embed_item(vocab.item(item_id), vocab, p);
}

// Item embeddings computed once per batch. Encoders read q through slots and
// deposit dL/dq back into the same slots; backward() then pushes the
// accumulated item gradients through the projection into the tables.
class ItemEmbeddingCache {
public:
    ItemEmbeddingCache() = default;
    explicit ItemEmbeddingCache(std::size_t n_items) : slot_of_(n_items, kNone) {}

    std::size_t slot(std::size_t item) {
        if (item >= slot_of_.size()) throw LookupError("item index " + std::to_string(item) + " out of range");
        if (slot_of_[item] == kNone) {
            slot_of_[item] = static_cast<std::uint32_t>(items_.size());
            items_.push_back(item);
        }
        return slot_of_[item];
    }

    std::vector<std::size_t> slots(std::span<const std::size_t> items) {
        std::vector<std::size_t> out;
        out.reserve(items.size());
        for (std::size_t i : items) out.push_back(slot(i));
        return out;
    }

    // Computes q for every slot registered since the last call.
    void forward(const Vocabulary& vocab, const ModelParams& p) {
        const std::size_t L = p.encoder.w_q.rows();
        const std::size_t F = p.encoder.w_q.cols();
        for (std::size_t s = q_.size(); s < items_.size(); ++s) {
            DenseVector x(F);
            gather_features(items_[s], vocab, p, x.values());
            DenseVector a = p.encoder.b_q;
            gemv(p.encoder.w_q, x.values(), a.values(), true);
            x_.push_back(std::move(x));
            q_.push_back(tanh_map(std::move(a)));
            dq_.emplace_back(L);
        }
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t item(std::size_t slot) const { return items_[slot]; }
    const DenseVector& q(std::size_t slot) const { return q_.at(slot); }
    DenseVector& dq(std::size_t slot) { return dq_.at(slot); }

    void backward(const Vocabulary& vocab, const ModelParams& p, ModelParams& g) {
        const std::size_t L = p.encoder.w_q.rows();
        DenseVector da(L);
        DenseVector dx(p.encoder.w_q.cols());
        for (std::size_t s = 0; s < q_.size(); ++s) {
            const auto& q = q_[s];
            const auto& dq = dq_[s];
            bool any = false;
            for (std::size_t k = 0; k < L; ++k) {
                da[k] = dq[k] * (1.0 - q[k] * q[k]);
                any = any || da[k] != 0.0;
            }
            if (!any) continue;
            outer_acc(g.encoder.w_q, da.values(), x_[s].values());
            axpy(1.0, da.values(), g.encoder.b_q.values());
            dx.fill(0.0);
            gemv_t_acc(p.encoder.w_q, da.values(), dx.values());
            const auto& rows = vocab.features(items_[s]);
            std::size_t off = 0;
            for (std::size_t f = 0; f < kNumFeatures; ++f) {
                auto dst = g.tables.feature(f).row(rows[f]);
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += dx[off + k];
                off += dst.size();
            }
        }
    }

    void clear() {
        for (std::size_t item : items_) slot_of_[item] = kNone;
        items_.clear();
        x_.clear();
        q_.clear();
        dq_.clear();
    }

private:
    static constexpr std::uint32_t kNone = ~std::uint32_t{0};
    std::vector<std::uint32_t> slot_of_;
    std::vector<std::size_t> items_;
    std::vector<DenseVector> x_, q_, dq_;
};

// ---------------------------------------------------------------------------
// Clicked sequence (the base sequential recommender).

struct RecurrentTrace {
    std::vector<DenseVector> states;  // h_0 .. h_T
    std::vector<DenseVector> z, r, g;  // per step 1..T
};

// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
// g = tanh(W_o x + U_o (r ⊙ h) + b_o), h' = (1 − z) ⊙ h + z ⊙ g, h_0 = 0.
template <class Inputs>
RecurrentTrace gru_forward(const Inputs& xs, const RecurrentParams& w) {
    const std::size_t L = w.b_z.size();
    RecurrentTrace t;
    t.states.emplace_back(L);
    DenseVector rh(L);
    for (const DenseVector* x : xs) {
        const DenseVector& h = t.states.back();
        DenseVector z = w.b_z, r = w.b_r, g = w.b_o;
        gemv(w.w_z, x->values(), z.values(), true);
        gemv(w.u_z, h.values(), z.values(), true);
        gemv(w.w_r, x->values(), r.values(), true);
        gemv(w.u_r, h.values(), r.values(), true);
        z = sigmoid_map(std::move(z));
        r = sigmoid_map(std::move(r));
        for (std::size_t k = 0; k < L; ++k) rh[k] = r[k] * h[k];
        gemv(w.w_o, x->values(), g.values(), true);
        gemv(w.u_o, rh.values(), g.values(), true);
        g = tanh_map(std::move(g));
        DenseVector next(L);
        for (std::size_t k = 0; k < L; ++k) next[k] = (1.0 - z[k]) * h[k] + z[k] * g[k];
        t.z.push_back(std::move(z));
        t.r.push_back(std::move(r));
        t.g.push_back(std::move(g));
        t.states.push_back(std::move(next));
    }
    return t;
}

struct ClickedState {
    ClickedEncoder kind = ClickedEncoder::meanpool;
    std::vector<std::size_t> slots;
    std::size_t user = 0;
    DenseVector head_input;  // concat(pooled, e_u)
    DenseVector h;
    RecurrentTrace trace;
};

// meanpool: h = tanh(W_h concat(mean q, e_u) + b_h)
// recurrent: h = tanh(W_h concat(h_T, e_u) + b_h)
inline ClickedState encode_clicked(std::vector<std::size_t> slots, std::size_t user, const ItemEmbeddingCache& cache,
                                   const ModelParams& p, ClickedEncoder kind) {
    if (slots.empty()) throw PreconditionError("encode_clicked: clicked sequence is empty");
    const std::size_t L = p.encoder.b_h.size();
    ClickedState st;
    st.kind = kind;
    st.user = user;
    st.head_input = DenseVector(2 * L);
    auto pooled = st.head_input.values().subspan(0, L);
    if (kind == ClickedEncoder::meanpool) {
        const double inv = 1.0 / static_cast<double>(slots.size());
        for (std::size_t s : slots) axpy(inv, cache.q(s).values(), pooled);
    } else {
        if (p.encoder.gru.b_z.empty()) throw PreconditionError("encode_clicked: model has no recurrent weights");
        std::vector<const DenseVector*> xs;
        xs.reserve(slots.size());
        for (std::size_t s : slots) xs.push_back(&cache.q(s));
        st.trace = gru_forward(xs, p.encoder.gru);
        const auto& last = st.trace.states.back();
        std::copy(last.begin(), last.end(), pooled.begin());
    }
    const auto eu = p.tables.user.row(user);
    std::copy(eu.begin(), eu.end(), st.head_input.values().begin() + static_cast<std::ptrdiff_t>(L));
    st.h = tanh_map(affine(p.encoder.w_h, st.head_input, p.encoder.b_h));
    st.slots = std::move(slots);
    return st;
}

inline void backward_clicked(const ClickedState& st, const DenseVector& dh, const ModelParams& p, ModelParams& g,
                             ItemEmbeddingCache& cache) {
    const std::size_t L = dh.size();
    DenseVector da(L);
    for (std::size_t k = 0; k < L; ++k) da[k] = dh[k] * (1.0 - st.h[k] * st.h[k]);
    outer_acc(g.encoder.w_h, da.values(), st.head_input.values());
    axpy(1.0, da.values(), g.encoder.b_h.values());
    DenseVector din(2 * L);
    gemv_t_acc(p.encoder.w_h, da.values(), din.values());
    axpy(1.0, din.values().subspan(L, L), g.tables.user.row(st.user));
    const auto dpooled = din.values().subspan(0, L);

    if (st.kind == ClickedEncoder::meanpool) {
        const double inv = 1.0 / static_cast<double>(st.slots.size());
        for (std::size_t s : st.slots) axpy(inv, dpooled, cache.dq(s).values());
        return;
    }

    const auto& w = p.encoder.gru;
    auto& gw = g.encoder.gru;
    DenseVector dstate(std::vector<double>(dpooled.begin(), dpooled.end()));
    DenseVector dz(L), dg(L), dr(L), daz(L), dar(L), dag(L), drh(L), rh(L), dprev(L);
    for (std::size_t t = st.slots.size(); t-- > 0;) {
        const auto& hprev = st.trace.states[t];
        const auto& z = st.trace.z[t];
        const auto& r = st.trace.r[t];
        const auto& gg = st.trace.g[t];
        const auto& x = cache.q(st.slots[t]);
        for (std::size_t k = 0; k < L; ++k) {
            dz[k] = dstate[k] * (gg[k] - hprev[k]);
            dg[k] = dstate[k] * z[k];
            dprev[k] = dstate[k] * (1.0 - z[k]);
            dag[k] = dg[k] * (1.0 - gg[k] * gg[k]);
            daz[k] = dz[k] * z[k] * (1.0 - z[k]);
            rh[k] = r[k] * hprev[k];
        }
        outer_acc(gw.w_o, dag.values(), x.values());
        outer_acc(gw.u_o, dag.values(), rh.values());
        axpy(1.0, dag.values(), gw.b_o.values());
        drh.fill(0.0);
        gemv_t_acc(w.u_o, dag.values(), drh.values());
        for (std::size_t k = 0; k < L; ++k) {
            dr[k] = drh[k] * hprev[k];
            dprev[k] += drh[k] * r[k];
            dar[k] = dr[k] * r[k] * (1.0 - r[k]);
        }
        outer_acc(gw.w_z, daz.values(), x.values());
        outer_acc(gw.u_z, daz.values(), hprev.values());
        axpy(1.0, daz.values(), gw.b_z.values());
        outer_acc(gw.w_r, dar.values(), x.values());
        outer_acc(gw.u_r, dar.values(), hprev.values());
        axpy(1.0, dar.values(), gw.b_r.values());
        gemv_t_acc(w.u_z, daz.values(), dprev.values());
        gemv_t_acc(w.u_r, dar.values(), dprev.values());
        auto dx = cache.dq(st.slots[t]).values();
        gemv_t_acc(w.w_z, daz.values(), dx);
        gemv_t_acc(w.w_r, dar.values(), dx);
        gemv_t_acc(w.w_o, dag.values(), dx);
        std::swap(dstate, dprev);
    }
}

// ---------------------------------------------------------------------------
// Mean-pooled FFN encoders: unclicked items (n) and labels (c).

struct PooledState {
    std::vector<std::size_t> slots;
    DenseVector mean;
    DenseVector out;
};

// out = tanh(W mean(q) + b); an empty sequence pools to the zero vector.
inline PooledState encode_pooled(std::vector<std::size_t> slots, const ItemEmbeddingCache& cache, const DenseMatrix& w,
                                 const DenseVector& b) {
    PooledState st;
    st.mean = DenseVector(w.cols());
    if (!slots.empty()) {
        const double inv = 1.0 / static_cast<double>(slots.size());
        for (std::size_t s : slots) axpy(inv, cache.q(s).values(), st.mean.values());
    }
    st.out = tanh_map(affine(w, st.mean, b));
    st.slots = std::move(slots);
    return st;
}

inline void backward_pooled(const PooledState& st, const DenseVector& dout, const DenseMatrix& w, DenseMatrix& gw,
                            DenseVector& gb, ItemEmbeddingCache& cache) {
    const std::size_t L = dout.size();
    DenseVector da(L);
    for (std::size_t k = 0; k < L; ++k) da[k] = dout[k] * (1.0 - st.out[k] * st.out[k]);
    outer_acc(gw, da.values(), st.mean.values());
    axpy(1.0, da.values(), gb.values());
    if (st.slots.empty()) return;
    DenseVector dmean(w.cols());
    gemv_t_acc(w, da.values(), dmean.values());
    const double inv = 1.0 / static_cast<double>(st.slots.size());
    for (std::size_t s : st.slots) axpy(inv, dmean.values(), cache.dq(s).values());
}

inline PooledState encode_unclicked(std::vector<std::size_t> slots, const ItemEmbeddingCache& cache,
                                    const ModelParams& p) {
    return encode_pooled(std::move(slots), cache, p.encoder.w_n, p.encoder.b_n);
}

inline PooledState encode_labels(std::vector<std::size_t> slots, const ItemEmbeddingCache& cache, const ModelParams& p) {
    if (slots.empty()) throw PreconditionError("encode_labels: label set is empty");
    const bool shared = p.encoder.w_c.empty();
    return encode_pooled(std::move(slots), cache, shared ? p.encoder.w_n : p.encoder.w_c,
                         shared ? p.encoder.b_n : p.encoder.b_c);
}

inline void backward_unclicked(const PooledState& st, const DenseVector& dn, const ModelParams& p, ModelParams& g,
                               ItemEmbeddingCache& cache) {
    backward_pooled(st, dn, p.encoder.w_n, g.encoder.w_n, g.encoder.b_n, cache);
}

inline void backward_labels(const PooledState& st, const DenseVector& dc, const ModelParams& p, ModelParams& g,
                            ItemEmbeddingCache& cache) {
    if (p.encoder.w_c.empty()) {
        backward_pooled(st, dc, p.encoder.w_n, g.encoder.w_n, g.encoder.b_n, cache);
    } else {
        backward_pooled(st, dc, p.encoder.w_c, g.encoder.w_c, g.encoder.b_c, cache);
    }
}

}  // namespace sru2b
