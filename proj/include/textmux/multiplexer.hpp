#pragma once

// Routes words to recognition heads from the LPN posterior and combines the
// per-head sequence losses: disentangled (parallel sum), hard integrated
// (argmax selection, penalized), soft integrated (posterior-weighted sum,
// penalized).

#include <array>
#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/lpn.hpp"
#include "textmux/recheads.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

struct MultiplexConfig {
    int num_languages = kNumScripts;
    int num_heads = kNumScripts;
    std::array<int, kNumScripts> script_to_head = {0, 1, 2, 3, 4, 5, 6, 7};

    void validate() const {
        if (num_heads < 1 || num_languages < 2)
            throw std::invalid_argument("MultiplexConfig: bad sizes");
        for (int h : script_to_head)
            if (h < 0 || h >= num_heads)
                throw std::invalid_argument("MultiplexConfig: script maps to unknown head");
    }
};

enum class LossMode { disentangled, hard, soft };

struct LossConfig {
    double alpha_lang = 1.0;
    std::vector<double> alpha_seq;  // per head; empty means 0.5 everywhere
    double beta = -12.0;
    LossMode mode = LossMode::disentangled;
    // Eq.-5-literal hard mode carries no language term; the toggle restores
    // alpha_lang * L_lang when word-level script labels exist.
    bool hard_keep_language_loss = false;

    double alpha_for(int head) const {
        if (alpha_seq.empty()) return 0.5;
        return alpha_seq.at(static_cast<std::size_t>(head));
    }
};

template <class Real>
struct LossBreakdown {
    Tensor<Real> total;
    double language_loss = 0.0;              // value of L_lang (0 when absent)
    std::vector<double> head_losses;         // value of L_seq(r) per head (0 when not run)
    int selected_head = -1;                  // hard mode only
};

// head = script_to_head[argmax_l p(l)]; ties break to the lowest ordinal.
template <class Real>
int route(const LanguagePosterior<Real>& posterior, const MultiplexConfig& config) {
    int l = posterior.argmax();
    if (l >= static_cast<int>(config.script_to_head.size()))
        throw std::invalid_argument("route: posterior wider than the script map");
    return config.script_to_head[static_cast<std::size_t>(l)];
}

// Aggregated posterior probability of one head: sum of p(l) over the scripts
// mapped to it (equals p(r) under the identity mapping).
template <class Real>
Tensor<Real> head_probability(const LanguagePosterior<Real>& posterior, int head,
                              const MultiplexConfig& config) {
    Tensor<Real> acc;
    for (int l = 0; l < config.num_languages; ++l) {
        if (config.script_to_head[static_cast<std::size_t>(l)] != head) continue;
        auto p = pick(posterior.probs, static_cast<std::size_t>(l));
        acc = acc.defined() ? add(acc, p) : p;
    }
    if (!acc.defined()) acc = Tensor<Real>::scalar(Real(0), "head_prob_zero");
    return acc;
}

// ---------------------------------------------------------------------------
// combination rules over precomputed per-head scalar losses
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> combine_disentangled(const Tensor<Real>& lang_loss,
                                  const std::vector<Tensor<Real>>& head_losses,
                                  const LossConfig& cfg) {
    Tensor<Real> total = scale(lang_loss, static_cast<Real>(cfg.alpha_lang));
    for (std::size_t r = 0; r < head_losses.size(); ++r)
        total = add(total, scale(head_losses[r], static_cast<Real>(cfg.alpha_for(static_cast<int>(r)))));
    return total;
}

template <class Real>
Tensor<Real> combine_soft(const LanguagePosterior<Real>& posterior,
                          const std::vector<Tensor<Real>>& head_losses, const LossConfig& cfg,
                          const MultiplexConfig& mux) {
    Tensor<Real> total;
    for (std::size_t r = 0; r < head_losses.size(); ++r) {
        auto term = mul(head_probability(posterior, static_cast<int>(r), mux),
                        scale(head_losses[r], static_cast<Real>(cfg.alpha_for(static_cast<int>(r)))));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// Arithmetic form of the hard rule over precomputed losses: selects the
// routed head's loss scaled by its weight.
template <class Real>
std::pair<Tensor<Real>, int> combine_hard(const LanguagePosterior<Real>& posterior,
                                          const std::vector<Tensor<Real>>& head_losses,
                                          const LossConfig& cfg, const MultiplexConfig& mux) {
    int r = route(posterior, mux);
    return {scale(head_losses.at(static_cast<std::size_t>(r)), static_cast<Real>(cfg.alpha_for(r))), r};
}

// ---------------------------------------------------------------------------
// word-level losses driving the heads
// ---------------------------------------------------------------------------

inline bool any_real_character_supported(const TokenSequence& target) {
    for (int t = 0; t + 1 < target.length(); ++t)  // last position is EOS
        if (target.supported[static_cast<std::size_t>(t)]) return true;
    return false;
}

// Eq.-1 style: language cross-entropy plus every head's masked sequence
// loss. A head for which no real character of the word is supported is
// skipped outright: it contributes zero and receives zero gradient.
template <class Real>
LossBreakdown<Real> disentangled_loss(const LanguagePosterior<Real>& posterior, ScriptId gt_script,
                                      const std::vector<RecognitionHead<Real>>& heads,
                                      const Tensor<Real>& pooled, const std::string& word,
                                      const LossConfig& cfg, const MultiplexConfig& mux) {
    mux.validate();
    LossBreakdown<Real> out;
    auto lang = language_loss(posterior, gt_script);
    out.language_loss = static_cast<double>(lang.item());
    std::vector<Tensor<Real>> losses;
    for (const auto& head : heads) {
        auto target = head.table.encode_word(word, head.config.t_max);
        if (!any_real_character_supported(target)) {
            losses.push_back(Tensor<Real>::scalar(Real(0), "seq_loss_skipped"));
            out.head_losses.push_back(0.0);
            continue;
        }
        auto probs = head.forward(pooled, target);
        losses.push_back(masked_sequence_loss(probs, target));
        out.head_losses.push_back(static_cast<double>(losses.back().item()));
    }
    out.total = combine_disentangled(lang, losses, cfg);
    return out;
}

// Eq.-5 style: only the routed head runs, with the penalized loss; the LPN
// sees no gradient through the argmax selection.
template <class Real>
LossBreakdown<Real> hard_integrated_loss(const LanguagePosterior<Real>& posterior,
                                         const std::vector<RecognitionHead<Real>>& heads,
                                         const Tensor<Real>& pooled, const std::string& word,
                                         const LossConfig& cfg, const MultiplexConfig& mux,
                                         const ScriptId* gt_script = nullptr) {
    mux.validate();
    LossBreakdown<Real> out;
    out.head_losses.assign(heads.size(), 0.0);
    int r = route(posterior, mux);
    out.selected_head = r;
    const auto& head = heads.at(static_cast<std::size_t>(r));
    auto target = head.table.encode_word(word, head.config.t_max);
    auto probs = head.forward(pooled, target);
    auto seq = penalized_sequence_loss(probs, target, cfg.beta);
    out.head_losses[static_cast<std::size_t>(r)] = static_cast<double>(seq.item());
    out.total = scale(seq, static_cast<Real>(cfg.alpha_for(r)));
    if (cfg.hard_keep_language_loss && gt_script) {
        auto lang = language_loss(posterior, *gt_script);
        out.language_loss = static_cast<double>(lang.item());
        out.total = add(out.total, scale(lang, static_cast<Real>(cfg.alpha_lang)));
    }
    return out;
}

// Eq.-7 style: every head runs, weighted by its posterior probability;
// gradient reaches the LPN through the weights.
template <class Real>
LossBreakdown<Real> soft_integrated_loss(const LanguagePosterior<Real>& posterior,
                                         const std::vector<RecognitionHead<Real>>& heads,
                                         const Tensor<Real>& pooled, const std::string& word,
                                         const LossConfig& cfg, const MultiplexConfig& mux) {
    mux.validate();
    LossBreakdown<Real> out;
    std::vector<Tensor<Real>> losses;
    for (const auto& head : heads) {
        auto target = head.table.encode_word(word, head.config.t_max);
        auto probs = head.forward(pooled, target);
        losses.push_back(penalized_sequence_loss(probs, target, cfg.beta));
        out.head_losses.push_back(static_cast<double>(losses.back().item()));
    }
    out.total = combine_soft(posterior, losses, cfg, mux);
    return out;
}

}  // namespace textmux
