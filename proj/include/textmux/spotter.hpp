#pragma once

// Full spotting model: trunk + LPN + recognition heads (or the budget-matched
// single head), with word-level pooling and the inference pipeline.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/evalkit.hpp"
#include "textmux/lpn.hpp"
#include "textmux/multiplexer.hpp"
#include "textmux/recheads.hpp"
#include "textmux/trunk.hpp"

namespace textmux {

struct SpotterOptions {
    TrunkConfig trunk;
    LpnConfig lpn;
    MultiplexConfig mux;
    int t_max = 32;
    int embed_size = 12;            // per-head decoder sizes (desk defaults)
    int hidden_size = 28;
    bool single_head = false;       // union-charset baseline
    int single_embed_size = 0;      // 0 = derive via match_budget against the
    int single_hidden_size = 0;     //     multiplexed total
    std::uint64_t init_seed = 1;
};

// Union charset over all scripts: global frequency order, shared block suffix.
inline CharsetTable build_union_charset(const std::array<CharsetTable, kNumScripts>& tables) {
    std::vector<Codepoint> merged;
    const auto& shared = default_shared_codepoints();
    for (const auto& t : tables)
        for (Codepoint cp : t.characters()) {
            if (std::find(shared.begin(), shared.end(), cp) != shared.end()) continue;
            if (std::find(merged.begin(), merged.end(), cp) == merged.end()) merged.push_back(cp);
        }
    std::sort(merged.begin(), merged.end());
    merged.insert(merged.end(), shared.begin(), shared.end());
    return CharsetTable(ScriptId::Latin, std::move(merged));
}

// Post-hoc script inference for the single-head baseline: majority vote of
// script-exclusive characters; shared characters carry no vote; no votes or
// ties resolve to the lowest ordinal with the maximum count.
inline ScriptId majority_script(const std::string& text,
                                const std::array<CharsetTable, kNumScripts>& tables) {
    const auto& shared = default_shared_codepoints();
    std::array<int, kNumScripts> votes{};
    for (Codepoint cp : utf8_decode(text)) {
        if (std::find(shared.begin(), shared.end(), cp) != shared.end()) continue;
        int owner = -1, owners = 0;
        for (int s = 0; s < kNumScripts; ++s)
            if (tables[static_cast<std::size_t>(s)].contains(cp)) {
                owner = s;
                ++owners;
            }
        if (owners == 1) ++votes[static_cast<std::size_t>(owner)];
    }
    int best = static_cast<int>(ScriptId::Symbol);
    int best_votes = 0;
    for (int s = 0; s < kNumScripts; ++s)
        if (votes[static_cast<std::size_t>(s)] > best_votes) {
            best_votes = votes[static_cast<std::size_t>(s)];
            best = s;
        }
    return static_cast<ScriptId>(best);
}

template <class Real>
struct SpotterModel {
    SpotterOptions options;
    ParameterSet<Real> params;
    TrunkModel<Real> trunk;
    LpnModel<Real> lpn;  // unused in single-head mode
    std::vector<RecognitionHead<Real>> heads;
    std::array<CharsetTable, kNumScripts> script_tables;

    static SpotterModel build(const SpotterOptions& opts,
                              const std::array<CharsetTable, kNumScripts>& tables) {
        SpotterModel m;
        m.options = opts;
        m.script_tables = tables;
        Rng rng(opts.init_seed);
        m.trunk.config = opts.trunk;
        m.trunk.init(m.params, rng);
        if (opts.single_head) {
            CharsetTable uni = build_union_charset(tables);
            HeadConfig cfg;
            cfg.script = ScriptId::Latin;
            cfg.charset_size = uni.size();
            cfg.feature_channels = opts.trunk.feature_channels;
            cfg.pooled_size = opts.trunk.pooled_size;
            cfg.t_max = opts.t_max;
            if (opts.single_embed_size > 0) {
                cfg.embed_size = opts.single_embed_size;
                cfg.hidden_size = opts.single_hidden_size;
            } else {
                auto match = match_budget(m.single_head_budget_query(uni.size()));
                cfg.embed_size = match.embed_size;
                cfg.hidden_size = match.hidden_size;
            }
            RecognitionHead<Real> head;
            head.table = std::move(uni);
            head.config = cfg;
            head.init(m.params, rng, "head/union");
            m.heads.push_back(std::move(head));
        } else {
            m.lpn.config = opts.lpn;
            m.lpn.config.feature_channels = opts.trunk.feature_channels;
            m.lpn.config.pooled_size = opts.trunk.pooled_size;
            m.lpn.init(m.params, rng);
            for (int s = 0; s < kNumScripts; ++s) {
                HeadConfig cfg;
                cfg.script = static_cast<ScriptId>(s);
                cfg.charset_size = tables[static_cast<std::size_t>(s)].size();
                cfg.embed_size = opts.embed_size;
                cfg.hidden_size = opts.hidden_size;
                cfg.feature_channels = opts.trunk.feature_channels;
                cfg.pooled_size = opts.trunk.pooled_size;
                cfg.t_max = opts.t_max;
                RecognitionHead<Real> head;
                head.table = tables[static_cast<std::size_t>(s)];
                head.config = cfg;
                head.init(m.params, rng,
                          std::string("head/") + script_name(static_cast<ScriptId>(s)));
                m.heads.push_back(std::move(head));
            }
        }
        return m;
    }

    BudgetQuery single_head_budget_query(int union_charset) const {
        // target: the multiplexed variant of this same architecture
        std::int64_t target = count_lpn_parameters(LpnConfig{options.lpn}.count_config());
        for (int s = 0; s < kNumScripts; ++s) {
            HeadConfig cfg;
            cfg.charset_size = script_tables[static_cast<std::size_t>(s)].size();
            cfg.embed_size = options.embed_size;
            cfg.hidden_size = options.hidden_size;
            cfg.feature_channels = options.trunk.feature_channels;
            cfg.pooled_size = options.trunk.pooled_size;
            target += count_head_parameters(cfg);
        }
        BudgetQuery q;
        q.target_parameter_count = target;
        q.charset_size = union_charset;
        q.embed_min = 4;
        q.embed_max = std::max(64, options.embed_size * 8);
        q.embed_step = 1;
        q.hidden_min = 8;
        q.hidden_max = std::max(128, options.hidden_size * 8);
        q.hidden_step = 1;
        q.feature_channels = options.trunk.feature_channels;
        q.pooled_size = options.trunk.pooled_size;
        return q;
    }

    // Architecture fingerprint for checkpoint compatibility.
    std::string arch_signature() const {
        std::ostringstream os;
        os << "textmux-arch-v1;trunk=" << options.trunk.feature_channels << ","
           << options.trunk.pooled_size << ",r" << options.trunk.shrink_ratio << ";single="
           << options.single_head << ";";
        for (const auto& p : params.items()) {
            os << p.name << "[";
            for (int d : p.tensor.shape()) os << d << "x";
            os << "];";
        }
        return os.str();
    }

    MaskedFeature<Real> pool_word(const Tensor<Real>& features, const Polygon& quad, int height,
                                  int width, int id = 0) const {
        auto prop = proposal_from_polygon(quad, options.trunk, height, width, id);
        return roi_mask_pool(features, prop, options.trunk.pooled_size);
    }

    // Detection + routing + transcription for one image.
    std::vector<DetectionRecord> infer_image(const GrayImage& img) const {
        NoGradGuard guard;
        auto out = trunk.forward(img);
        std::vector<float> seg(out.seg_prob.values().begin(), out.seg_prob.values().end());
        auto proposals = propose_regions(seg, img.height, img.width, options.trunk);
        return transcribe(out.features, proposals, img.height, img.width);
    }

    std::vector<DetectionRecord> transcribe(const Tensor<Real>& features,
                                            const std::vector<Proposal>& proposals, int height,
                                            int width) const {
        NoGradGuard guard;
        std::vector<DetectionRecord> records;
        for (const auto& prop : proposals) {
            MaskedFeature<Real> pooled;
            try {
                pooled = roi_mask_pool(features, prop, options.trunk.pooled_size);
            } catch (const std::invalid_argument&) {
                continue;  // empty mask
            }
            DetectionRecord rec;
            rec.polygon = prop.polygon;
            rec.confidence = prop.confidence;
            if (options.single_head) {
                auto decoded = heads[0].decode_greedy(pooled.block);
                rec.transcription = decoded.transcription;
                rec.script = majority_script(decoded.transcription, script_tables);
            } else {
                auto post = lpn.forward(pooled.block);
                int script = post.argmax();
                int head = options.mux.script_to_head[static_cast<std::size_t>(script)];
                auto decoded = heads[static_cast<std::size_t>(head)].decode_greedy(pooled.block);
                rec.transcription = decoded.transcription;
                rec.script = static_cast<ScriptId>(script);
            }
            records.push_back(std::move(rec));
        }
        return records;
    }

    // Ground-truth-box spotting: perfect detection, model routing/reading.
    std::vector<DetectionRecord> infer_gt_boxes(const GrayImage& img,
                                                const std::vector<WordAnnotation>& words) const {
        NoGradGuard guard;
        auto out = trunk.forward(img);
        std::vector<Proposal> proposals;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (!words[w].legible) continue;
            proposals.push_back(proposal_from_polygon(words[w].polygon(), options.trunk, img.height,
                                                      img.width, static_cast<int>(w)));
        }
        return transcribe(out.features, proposals, img.height, img.width);
    }
};

}  // namespace textmux
