#pragma once

// MLT-protocol scoring for the three reported tasks: detection, joint
// detection + script identification, and end-to-end recognition. Matching is
// greedy by confidence with one-to-one assignment and don't-care absorption.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/geometry.hpp"
#include "textmux/io.hpp"
#include "textmux/scenegen.hpp"

namespace textmux {

struct DetectionRecord {
    Polygon polygon;
    double confidence = 0.0;
    ScriptId script = ScriptId::Latin;
    std::string transcription;
};

enum class EvalTask { detection, joint_script, e2e };

inline EvalTask eval_task_from_name(const std::string& name) {
    if (name == "detection") return EvalTask::detection;
    if (name == "joint") return EvalTask::joint_script;
    if (name == "e2e") return EvalTask::e2e;
    throw std::invalid_argument("unknown eval task: " + name);
}

// Strict matching on the NFC-stable codepoint inventory this artifact emits;
// optional case folding for ASCII letters.
struct MatchPolicy {
    double iou_threshold = 0.5;
    bool case_insensitive = false;

    std::string normalize(const std::string& s) const {
        if (!case_insensitive) return s;
        std::string out = s;
        for (char& c : out)
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        return out;
    }
};

struct MatchResult {
    struct PairEntry {
        int pred = -1;
        int gt = -1;
        double iou = 0.0;
    };
    std::vector<PairEntry> pairs;       // one-to-one, prediction order by confidence
    std::vector<int> absorbed;          // predictions removed by don't-care regions
    std::vector<int> false_positives;   // predictions matching nothing
    std::vector<int> missed_gts;        // legible gts left unmatched
    int num_predictions = 0;
    int num_legible_gts = 0;
};

// Confidence-descending stable order (ties keep input order).
inline std::vector<int> confidence_order(const std::vector<DetectionRecord>& preds) {
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return preds[static_cast<std::size_t>(a)].confidence >
               preds[static_cast<std::size_t>(b)].confidence;
    });
    return order;
}

inline MatchResult match_instances(const std::vector<DetectionRecord>& preds,
                                   const std::vector<WordAnnotation>& gts,
                                   const MatchPolicy& policy = {}) {
    MatchResult res;
    res.num_predictions = static_cast<int>(preds.size());
    std::vector<bool> gt_taken(gts.size(), false);
    for (const auto& g : gts) res.num_legible_gts += g.legible;

    for (int pi : confidence_order(preds)) {
        const auto& pred = preds[static_cast<std::size_t>(pi)];
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (!gts[gi].legible || gt_taken[gi]) continue;
            double iou = polygon_iou(pred.polygon, gts[gi].polygon());
            if (iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0 && best_iou >= policy.iou_threshold) {
            gt_taken[static_cast<std::size_t>(best_gt)] = true;
            res.pairs.push_back({pi, best_gt, best_iou});
            continue;
        }
        bool absorbed = false;
        for (std::size_t gi = 0; gi < gts.size() && !absorbed; ++gi) {
            if (gts[gi].legible) continue;
            if (polygon_iou(pred.polygon, gts[gi].polygon()) >= policy.iou_threshold) absorbed = true;
        }
        if (absorbed)
            res.absorbed.push_back(pi);
        else
            res.false_positives.push_back(pi);
    }
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (!gts[gi].legible) continue;
        bool matched = false;
        for (const auto& p : res.pairs) matched = matched || p.gt == static_cast<int>(gi);
        if (!matched) res.missed_gts.push_back(static_cast<int>(gi));
    }
    return res;
}

// Task rule for one geometrically matched pair.
inline bool pair_is_true_positive(const DetectionRecord& pred, const WordAnnotation& gt,
                                  EvalTask task, const MatchPolicy& policy) {
    switch (task) {
        case EvalTask::detection: return true;
        case EvalTask::joint_script: return pred.script == gt.script;
        case EvalTask::e2e:
            return pred.script == gt.script &&
                   policy.normalize(pred.transcription) == policy.normalize(gt.transcription);
    }
    return false;
}

// Area under the precision-recall curve: precision at each true-positive
// rank times the recall increment, no interpolation. Ranked flags must be in
// confidence order; absorbed predictions are excluded beforehand.
inline double average_precision(const std::vector<bool>& ranked_tp, int total_gts) {
    if (total_gts <= 0) return 0.0;
    double ap = 0.0;
    int tp = 0;
    for (std::size_t k = 0; k < ranked_tp.size(); ++k) {
        if (!ranked_tp[k]) continue;
        ++tp;
        ap += (static_cast<double>(tp) / static_cast<double>(k + 1)) / total_gts;
    }
    return ap;
}

struct MetricReport {
    double precision = 0.0;
    double recall = 0.0;
    double f_measure = 0.0;
    double average_precision = 0.0;
    int true_positives = 0;
    int false_positives = 0;
    int false_negatives = 0;
    std::array<double, kNumScripts> per_script_f{};
    std::array<int, kNumScripts> per_script_gts{};
};

namespace detail {

struct TaskCounts {
    int tp = 0, fp = 0, fn = 0;
    std::vector<std::pair<double, bool>> ranked;  // (confidence, task-TP), input-stable
};

inline TaskCounts count_task(const std::vector<DetectionRecord>& preds,
                             const std::vector<WordAnnotation>& gts, EvalTask task,
                             const MatchPolicy& policy) {
    auto match = match_instances(preds, gts, policy);
    TaskCounts c;
    std::vector<int> state(preds.size(), 0);  // 0 fp, 1 tp, 2 absorbed
    for (const auto& p : match.pairs)
        if (pair_is_true_positive(preds[static_cast<std::size_t>(p.pred)],
                                  gts[static_cast<std::size_t>(p.gt)], task, policy))
            state[static_cast<std::size_t>(p.pred)] = 1;
    for (int pi : match.absorbed) state[static_cast<std::size_t>(pi)] = 2;
    for (int pi : confidence_order(preds)) {
        if (state[static_cast<std::size_t>(pi)] == 2) continue;
        c.ranked.push_back({preds[static_cast<std::size_t>(pi)].confidence,
                            state[static_cast<std::size_t>(pi)] == 1});
    }
    for (int s : state) {
        if (s == 1) ++c.tp;
        if (s == 0) ++c.fp;
    }
    c.fn = match.num_legible_gts - c.tp;
    return c;
}

}  // namespace detail

inline double f_measure(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// Scores one task over per-image prediction/gt lists. Matching never crosses
// images; counts aggregate before the final ratios.
inline MetricReport compute_metrics(const std::vector<std::vector<DetectionRecord>>& preds,
                                    const std::vector<std::vector<WordAnnotation>>& gts,
                                    EvalTask task, const MatchPolicy& policy = {}) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("compute_metrics: image count mismatch");
    MetricReport rep;
    std::vector<std::pair<double, bool>> ranked_all;
    int total_gts = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto c = detail::count_task(preds[i], gts[i], task, policy);
        rep.true_positives += c.tp;
        rep.false_positives += c.fp;
        rep.false_negatives += c.fn;
        for (auto& r : c.ranked) ranked_all.push_back(r);
        for (const auto& g : gts[i]) total_gts += g.legible;
    }
    std::stable_sort(ranked_all.begin(), ranked_all.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<bool> flags;
    for (auto& [conf, tp] : ranked_all) flags.push_back(tp);
    rep.average_precision = average_precision(flags, total_gts);
    int tp_fp = rep.true_positives + rep.false_positives;
    int tp_fn = rep.true_positives + rep.false_negatives;
    rep.precision = tp_fp > 0 ? static_cast<double>(rep.true_positives) / tp_fp : 0.0;
    rep.recall = tp_fn > 0 ? static_cast<double>(rep.true_positives) / tp_fn : 0.0;
    rep.f_measure = f_measure(rep.precision, rep.recall);

    // language-wise F: predictions claiming script s against gts of script s
    for (int s = 0; s < kNumScripts; ++s) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::vector<DetectionRecord> ps;
            for (const auto& p : preds[i])
                if (p.script == static_cast<ScriptId>(s)) ps.push_back(p);
            std::vector<WordAnnotation> gs;
            for (const auto& g : gts[i])
                if (!g.legible || g.script == static_cast<ScriptId>(s)) gs.push_back(g);
            auto c = detail::count_task(ps, gs, task, policy);
            tp += c.tp;
            fp += c.fp;
            fn += c.fn;
            for (const auto& g : gts[i])
                rep.per_script_gts[static_cast<std::size_t>(s)] +=
                    g.legible && g.script == static_cast<ScriptId>(s);
        }
        double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        rep.per_script_f[static_cast<std::size_t>(s)] = f_measure(p, r);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// prediction files
// ---------------------------------------------------------------------------

inline void write_predictions(const std::vector<DetectionRecord>& preds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    char conf[32];
    for (const auto& p : preds) {
        if (p.polygon.size() != 4) throw std::invalid_argument("write_predictions: need quads");
        for (const Point& q : p.polygon)
            out << static_cast<int>(std::lround(q.x)) << "," << static_cast<int>(std::lround(q.y))
                << ",";
        std::snprintf(conf, sizeof(conf), "%.6f", p.confidence);
        out << conf << "," << script_name(p.script) << "," << p.transcription << "\n";
    }
}

inline std::vector<DetectionRecord> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read: " + path);
    std::vector<DetectionRecord> preds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        DetectionRecord rec;
        std::size_t pos = 0;
        std::array<int, 8> quad{};
        for (int f = 0; f < 10; ++f) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos)
                throw DataError(path + ":" + std::to_string(lineno) + ": expected 11 fields");
            std::string field = line.substr(pos, comma - pos);
            try {
                if (f < 8) {
                    std::size_t used = 0;
                    quad[static_cast<std::size_t>(f)] = std::stoi(field, &used);
                    if (used != field.size()) throw std::invalid_argument(field);
                } else if (f == 8) {
                    rec.confidence = std::stod(field);
                    if (rec.confidence < 0.0 || rec.confidence > 1.0)
                        throw std::invalid_argument("confidence outside [0,1]");
                } else {
                    rec.script = script_from_name(field);
                }
            } catch (const std::exception& e) {
                throw DataError(path + ":" + std::to_string(lineno) + ": bad field '" + field +
                                "' (" + e.what() + ")");
            }
            pos = comma + 1;
        }
        rec.transcription = line.substr(pos);
        for (int i = 0; i < 4; ++i)
            rec.polygon.push_back({static_cast<double>(quad[static_cast<std::size_t>(2 * i)]),
                                   static_cast<double>(quad[static_cast<std::size_t>(2 * i + 1)])});
        preds.push_back(std::move(rec));
    }
    return preds;
}

}  // namespace textmux
