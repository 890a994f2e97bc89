#pragma once

// Script-specific sequence recognition heads: an additive spatial-attention
// decoder over the masked pooled feature grid with a two-layer gated
// recurrent stack, plus the three sequence-loss variants (plain, masked,
// penalized). count_head_parameters() in charset.hpp documents exactly the
// parameter inventory realized here.

#include <cmath>
#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/parameters.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

// out[c,i,j] = f[c,i,j] + row[c,i] + col[c,j]; learned 2-D positional grid.
template <class Real>
Tensor<Real> add_positional_grid(const Tensor<Real>& f, const Tensor<Real>& row,
                                 const Tensor<Real>& col) {
    const auto& shape = f.shape();
    if (shape.size() != 3) throw std::invalid_argument("add_positional_grid: f must be CHW");
    const int c = shape[0], h = shape[1], w = shape[2];
    if (row.shape() != std::vector<int>{c, h} || col.shape() != std::vector<int>{c, w})
        throw std::invalid_argument("add_positional_grid: encoding shape mismatch");
    auto n = detail::make_op_node<Real>(shape, "positional_grid", {f, row, col});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y) {
            Real r = row.values()[static_cast<std::size_t>(ic) * h + y];
            const Real* fr = f.values().data() + (static_cast<std::size_t>(ic) * h + y) * w;
            const Real* cl = col.values().data() + static_cast<std::size_t>(ic) * w;
            Real* o = n->value.data() + (static_cast<std::size_t>(ic) * h + y) * w;
            for (int x = 0; x < w; ++x) o[x] = fr[x] + r + cl[x];
        }
    if (n->requires_grad) {
        auto fn = f.handle();
        auto rn = row.handle();
        auto cn = col.handle();
        n->backward_fn = [fn, rn, cn, c, h, w](TensorNode<Real>& self, GradSink<Real>* sink) {
            if (fn->requires_grad) {
                Real* g = fn->grad_accum(sink);
                for (std::size_t i = 0; i < self.size(); ++i) g[i] += self.grad[i];
            }
            if (rn->requires_grad) {
                Real* g = rn->grad_accum(sink);
                for (int ic = 0; ic < c; ++ic)
                    for (int y = 0; y < h; ++y) {
                        Real acc = 0;
                        const Real* gr = self.grad.data() + (static_cast<std::size_t>(ic) * h + y) * w;
                        for (int x = 0; x < w; ++x) acc += gr[x];
                        g[static_cast<std::size_t>(ic) * h + y] += acc;
                    }
            }
            if (cn->requires_grad) {
                Real* g = cn->grad_accum(sink);
                for (int ic = 0; ic < c; ++ic)
                    for (int y = 0; y < h; ++y) {
                        const Real* gr = self.grad.data() + (static_cast<std::size_t>(ic) * h + y) * w;
                        for (int x = 0; x < w; ++x) g[static_cast<std::size_t>(ic) * w + x] += gr[x];
                    }
            }
        };
    }
    return Tensor<Real>(n);
}

template <class Real>
struct GruCell {
    Tensor<Real> wz, wr, wn, uz, ur, un, bz, br, bn;

    void init(ParameterSet<Real>& params, Rng& rng, const std::string& prefix, int input, int hidden) {
        wz = params.add(prefix + "/wz", {hidden, input}, input, rng);
        wr = params.add(prefix + "/wr", {hidden, input}, input, rng);
        wn = params.add(prefix + "/wn", {hidden, input}, input, rng);
        uz = params.add(prefix + "/uz", {hidden, hidden}, hidden, rng);
        ur = params.add(prefix + "/ur", {hidden, hidden}, hidden, rng);
        un = params.add(prefix + "/un", {hidden, hidden}, hidden, rng);
        bz = params.add(prefix + "/bz", {hidden}, input, rng);
        br = params.add(prefix + "/br", {hidden}, input, rng);
        bn = params.add(prefix + "/bn", {hidden}, input, rng);
    }

    Tensor<Real> step(const Tensor<Real>& x, const Tensor<Real>& h) const {
        auto z = sigmoid(add(linear(wz, x, bz), matvec(uz, h)));
        auto r = sigmoid(add(linear(wr, x, br), matvec(ur, h)));
        auto n = tanh_op(add(linear(wn, x, bn), matvec(un, mul(r, h))));
        auto one_minus_z = add_scalar(scale(z, Real(-1)), Real(1));
        return add(mul(one_minus_z, n), mul(z, h));
    }
};

template <class Real>
struct CharProbSequence {
    std::vector<Tensor<Real>> log_probs;  // one row per step, each charset+EOS wide

    int steps() const { return static_cast<int>(log_probs.size()); }

    std::vector<std::vector<Real>> probability_rows() const {
        std::vector<std::vector<Real>> rows;
        for (const auto& lp : log_probs) {
            std::vector<Real> row(lp.size());
            for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::exp(lp.values()[i]);
            rows.push_back(std::move(row));
        }
        return rows;
    }
};

struct DecodeResult {
    std::string transcription;
    std::vector<int> indices;
    std::vector<double> confidences;  // probability of each emitted character
    double score = 0.0;               // mean log-probability incl. the stop step
};

template <class Real>
struct RecognitionHead {
    HeadConfig config;
    CharsetTable table;
    std::string prefix;

    Tensor<Real> emb;                // [V+2, E] (chars, EOS, PAD)
    Tensor<Real> pos_row, pos_col;   // [C, S] each
    Tensor<Real> att_query;          // [C, H]
    Tensor<Real> att_key;            // [C, C]
    Tensor<Real> att_bias, att_score;  // [C]
    GruCell<Real> gru1, gru2;
    Tensor<Real> out_w, out_b;       // [V+1, H], [V+1]

    void init(ParameterSet<Real>& params, Rng& rng, const std::string& name) {
        prefix = name;
        const int v = config.charset_size, e = config.embed_size, h = config.hidden_size;
        const int c = config.feature_channels, s = config.pooled_size;
        if (v <= 0 || e <= 0 || h <= 0)
            throw std::invalid_argument("RecognitionHead: sizes must be positive");
        emb = params.add(prefix + "/emb", {v + 2, e}, e, rng);
        pos_row = params.add(prefix + "/pos_row", {c, s}, c, rng);
        pos_col = params.add(prefix + "/pos_col", {c, s}, c, rng);
        att_query = params.add(prefix + "/att_query", {c, h}, h, rng);
        att_key = params.add(prefix + "/att_key", {c, c}, c, rng);
        att_bias = params.add(prefix + "/att_bias", {c}, c, rng);
        att_score = params.add(prefix + "/att_score", {c}, c, rng);
        gru1.init(params, rng, prefix + "/gru1", e + c, h);
        gru2.init(params, rng, prefix + "/gru2", h + c, h);
        out_w = params.add(prefix + "/out_w", {v + 1, h}, h, rng);
        out_b = params.add(prefix + "/out_b", {v + 1}, h, rng);
    }

    // Shared per-word state for the attention decoder.
    struct DecoderState {
        Tensor<Real> grid;  // PE-added feature grid as [C, S*S]
        Tensor<Real> keys;  // att_key applied to the grid
        Tensor<Real> h1, h2;
        int prev_index;  // row in the embedding table
    };

    DecoderState begin(const Tensor<Real>& pooled) const {
        const int c = config.feature_channels, s = config.pooled_size;
        if (pooled.shape() != std::vector<int>{c, s, s})
            throw std::invalid_argument("head_forward: feature size mismatch");
        DecoderState st;
        auto grid = add_positional_grid(pooled, pos_row, pos_col);
        st.grid = reshape(grid, {c, s * s});
        st.keys = matmul(att_key, st.grid);
        st.h1 = Tensor<Real>::zeros({config.hidden_size}, "h1_0");
        st.h2 = Tensor<Real>::zeros({config.hidden_size}, "h2_0");
        st.prev_index = table.pad_index();  // start token
        return st;
    }

    // One decode step: returns log-probabilities over charset+EOS.
    Tensor<Real> step(DecoderState& st) const {
        const int c = config.feature_channels, s = config.pooled_size;
        auto query = add(matvec(att_query, st.h2), att_bias);
        auto scores_in = tanh_op(add_col_broadcast(st.keys, query));
        auto scores = reshape(matmul(reshape(att_score, {1, c}), scores_in), {s * s});
        auto attention = softmax_vec(scores);
        auto context = reshape(matmul(st.grid, reshape(attention, {s * s, 1})), {c});
        auto x1 = concat(embedding(emb, st.prev_index), context);
        st.h1 = gru1.step(x1, st.h1);
        auto x2 = concat(st.h1, context);
        st.h2 = gru2.step(x2, st.h2);
        return log_softmax_vec(linear(out_w, st.h2, out_b));
    }

    // Teacher-forced forward: one probability row per teacher position.
    CharProbSequence<Real> forward(const Tensor<Real>& pooled, const TokenSequence& teacher) const {
        CharProbSequence<Real> out;
        DecoderState st = begin(pooled);
        for (int t = 0; t < teacher.length(); ++t) {
            out.log_probs.push_back(step(st));
            st.prev_index = teacher.indices[static_cast<std::size_t>(t)];
        }
        return out;
    }

    DecodeResult decode_greedy(const Tensor<Real>& pooled) const {
        NoGradGuard guard;
        DecodeResult res;
        DecoderState st = begin(pooled);
        double log_sum = 0;
        int steps = 0;
        for (int t = 0; t < config.t_max; ++t) {
            auto lp = step(st);
            const auto& v = lp.values();
            int best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
            log_sum += static_cast<double>(v[static_cast<std::size_t>(best)]);
            ++steps;
            if (best == table.eos_index()) break;
            res.indices.push_back(best);
            res.confidences.push_back(std::exp(static_cast<double>(v[static_cast<std::size_t>(best)])));
            st.prev_index = best;
        }
        res.transcription = table.decode_indices(res.indices);
        res.score = steps > 0 ? log_sum / steps : 0.0;
        return res;
    }
};

// ---------------------------------------------------------------------------
// sequence losses
// ---------------------------------------------------------------------------

// -(1/T_w) sum_t log p(y_t = c_t); every position must be supported.
template <class Real>
Tensor<Real> sequence_loss(const CharProbSequence<Real>& probs, const TokenSequence& target) {
    if (probs.steps() != target.length())
        throw std::invalid_argument("sequence_loss: length mismatch");
    for (bool s : target.supported)
        if (!s) throw std::invalid_argument("sequence_loss: unsupported position (use the masked form)");
    Tensor<Real> acc = Tensor<Real>::scalar(Real(0), "seq_loss_zero");
    for (int t = 0; t < target.length(); ++t)
        acc = add(acc, pick(probs.log_probs[static_cast<std::size_t>(t)],
                            static_cast<std::size_t>(target.indices[static_cast<std::size_t>(t)])));
    return scale(acc, Real(-1) / static_cast<Real>(target.length()));
}

// Unsupported positions contribute exactly zero to value and gradient.
template <class Real>
Tensor<Real> masked_sequence_loss(const CharProbSequence<Real>& probs, const TokenSequence& target) {
    if (probs.steps() != target.length())
        throw std::invalid_argument("masked_sequence_loss: length mismatch");
    Tensor<Real> acc = Tensor<Real>::scalar(Real(0), "seq_loss_zero");
    for (int t = 0; t < target.length(); ++t) {
        if (!target.supported[static_cast<std::size_t>(t)]) continue;
        acc = add(acc, pick(probs.log_probs[static_cast<std::size_t>(t)],
                            static_cast<std::size_t>(target.indices[static_cast<std::size_t>(t)])));
    }
    return scale(acc, Real(-1) / static_cast<Real>(target.length()));
}

inline int count_unsupported(const TokenSequence& target) {
    int k = 0;
    for (bool s : target.supported) k += !s;
    return k;
}

// Masked loss plus a constant (-beta) * (#unsupported) / T_w, so the
// difference against the masked form is exact by construction.
template <class Real>
Tensor<Real> penalized_sequence_loss(const CharProbSequence<Real>& probs,
                                     const TokenSequence& target, double beta) {
    if (!(beta < 0.0)) throw std::invalid_argument("penalized_sequence_loss: beta must be negative");
    auto base = masked_sequence_loss(probs, target);
    Real penalty = static_cast<Real>(-beta) *
                   (static_cast<Real>(count_unsupported(target)) / static_cast<Real>(target.length()));
    return add_scalar(base, penalty);
}

}  // namespace textmux
