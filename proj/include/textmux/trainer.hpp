#pragma once

// Three-stage training: disentangled warm-up on script-labeled data, hard
// integrated training, and per-head fine-tuning with the rest of the network
// frozen. Batching, reductions and checkpoints are fully deterministic.

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "textmux/io.hpp"
#include "textmux/multiplexer.hpp"
#include "textmux/scenegen.hpp"
#include "textmux/spotter.hpp"
#include "textmux/trunk.hpp"

namespace textmux {

struct TrainConfig {
    int stage = 1;
    int iterations = 3000;
    int batch_size = 8;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double decay_at_1 = 0.6, decay_at_2 = 0.8;  // x0.1 at these fractions
    int alpha_switch_iteration = 1000;          // stage 1 only
    double alpha_seq = 0.5;
    double beta = -12.0;
    bool hard_keep_language_loss = false;
    bool soft_integrated = false;  // stage 2 ablation: Eq. 7 instead of Eq. 5
    int stage3_head = -1;
    std::uint64_t seed = 1;
    int workers = 1;

    void validate(int num_heads) const {
        if (stage < 1 || stage > 3) throw std::invalid_argument("TrainConfig: stage must be 1..3");
        if (iterations <= 0 || batch_size <= 0)
            throw std::invalid_argument("TrainConfig: counts must be positive");
        if (stage == 3 && (stage3_head < 0 || stage3_head >= num_heads))
            throw std::invalid_argument("TrainConfig: stage 3 requires a valid target head");
        if (!(beta < 0)) throw std::invalid_argument("TrainConfig: beta must be negative");
    }
};

// 0.02 for the first iterations of stage 1, 1.0 from the switch on.
inline double alpha_schedule(int iteration, const TrainConfig& config) {
    if (iteration < 0) throw std::invalid_argument("alpha_schedule: negative iteration");
    if (config.stage != 1) return 1.0;
    return iteration < config.alpha_switch_iteration ? 0.02 : 1.0;
}

inline double lr_schedule(int iteration, const TrainConfig& config) {
    double frac = static_cast<double>(iteration) / config.iterations;
    double lr = config.learning_rate;
    if (frac >= config.decay_at_1) lr *= 0.1;
    if (frac >= config.decay_at_2) lr *= 0.1;
    return lr;
}

template <class Real>
class SgdOptimizer {
public:
    SgdOptimizer(ParameterSet<Real>& params, double momentum)
        : params_(params), momentum_(momentum) {
        velocity_.resize(params.count());
        for (std::size_t i = 0; i < params.count(); ++i)
            velocity_[i].assign(params.items()[i].tensor.size(), Real(0));
    }

    void step(double lr) {
        for (std::size_t i = 0; i < params_.count(); ++i) {
            auto& p = params_.items()[i];
            if (!p.trainable) continue;
            auto& grad = p.tensor.grad();
            if (grad.size() != p.tensor.size()) continue;  // never touched
            auto& vel = velocity_[i];
            auto& val = p.tensor.values();
            const Real m = static_cast<Real>(momentum_);
            const Real step_lr = static_cast<Real>(lr);
            for (std::size_t k = 0; k < val.size(); ++k) {
                vel[k] = m * vel[k] + grad[k];
                val[k] -= step_lr * vel[k];
            }
        }
    }

private:
    ParameterSet<Real>& params_;
    double momentum_;
    std::vector<std::vector<Real>> velocity_;
};

struct TrainLogEntry {
    int iteration = 0;
    double total = 0.0;
    double language = 0.0;
    std::array<double, kNumScripts> per_head{};
};

// Preprocessed training scene: decoded image plus cached targets and masks.
template <class Real>
struct PreparedScene {
    GrayImage image;
    std::vector<WordAnnotation> words;
    SegTarget seg_target;
    std::vector<Proposal> word_proposals;  // legible words only, aligned with word_index
    std::vector<int> word_index;
};

template <class Real>
std::vector<PreparedScene<Real>> prepare_scenes(const std::vector<LoadedScene>& scenes,
                                                const TrunkConfig& trunk_config) {
    std::vector<PreparedScene<Real>> out;
    for (const auto& s : scenes) {
        PreparedScene<Real> p;
        p.image = s.image;
        p.words = s.words;
        p.seg_target = build_seg_target(s.words, s.image.height, s.image.width,
                                        trunk_config.shrink_ratio);
        for (std::size_t w = 0; w < s.words.size(); ++w) {
            if (!s.words[w].legible) continue;
            p.word_proposals.push_back(proposal_from_polygon(
                s.words[w].polygon(), trunk_config, s.image.height, s.image.width,
                static_cast<int>(w)));
            p.word_index.push_back(static_cast<int>(w));
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace detail {

template <class Real>
struct SampleResult {
    double total = 0.0;
    double language = 0.0;
    std::array<double, kNumScripts> per_head{};
};

// Builds one scene's loss graph and backprops into the sink.
template <class Real>
SampleResult<Real> train_sample(const SpotterModel<Real>& model, const PreparedScene<Real>& scene,
                                const TrainConfig& config, double alpha_lang,
                                GradSink<Real>* sink) {
    LossConfig loss_cfg;
    loss_cfg.alpha_lang = alpha_lang;
    loss_cfg.alpha_seq.assign(model.heads.size(), config.alpha_seq);
    loss_cfg.beta = config.beta;
    loss_cfg.hard_keep_language_loss = config.hard_keep_language_loss;

    SampleResult<Real> res;
    auto out = model.trunk.forward(scene.image);
    Tensor<Real> loss;
    if (config.stage != 3) loss = segmentation_loss(out.seg_prob, scene.seg_target);

    Tensor<Real> word_acc;
    int words_used = 0;
    for (std::size_t wi = 0; wi < scene.word_proposals.size(); ++wi) {
        const auto& word = scene.words[static_cast<std::size_t>(scene.word_index[wi])];
        if (config.stage == 3) {
            int head = model.options.mux.script_to_head[static_cast<std::size_t>(word.script)];
            if (head != config.stage3_head) continue;
        }
        auto pooled = roi_mask_pool(out.features, scene.word_proposals[wi],
                                    model.options.trunk.pooled_size);
        Tensor<Real> wl;
        if (model.options.single_head) {
            const auto& head = model.heads[0];
            auto target = head.table.encode_word(word.transcription, head.config.t_max);
            auto probs = head.forward(pooled.block, target);
            auto seq = masked_sequence_loss(probs, target);
            res.per_head[0] += seq.item();
            wl = scale(seq, static_cast<Real>(config.alpha_seq));
        } else if (config.stage == 1) {
            auto post = model.lpn.forward(pooled.block);
            auto b = disentangled_loss(post, word.script, model.heads, pooled.block,
                                       word.transcription, loss_cfg, model.options.mux);
            res.language += b.language_loss;
            for (std::size_t r = 0; r < b.head_losses.size(); ++r) res.per_head[r] += b.head_losses[r];
            wl = b.total;
        } else if (config.stage == 2) {
            auto post = model.lpn.forward(pooled.block);
            LossBreakdown<Real> b;
            if (config.soft_integrated) {
                b = soft_integrated_loss(post, model.heads, pooled.block, word.transcription,
                                         loss_cfg, model.options.mux);
            } else {
                ScriptId gt = word.script;
                b = hard_integrated_loss(post, model.heads, pooled.block, word.transcription,
                                         loss_cfg, model.options.mux,
                                         config.hard_keep_language_loss ? &gt : nullptr);
            }
            res.language += b.language_loss;
            for (std::size_t r = 0; r < b.head_losses.size(); ++r) res.per_head[r] += b.head_losses[r];
            wl = b.total;
        } else {  // stage 3: target head only, its own script's words
            const auto& head = model.heads[static_cast<std::size_t>(config.stage3_head)];
            auto target = head.table.encode_word(word.transcription, head.config.t_max);
            auto probs = head.forward(pooled.block, target);
            auto seq = masked_sequence_loss(probs, target);
            res.per_head[static_cast<std::size_t>(config.stage3_head)] += seq.item();
            wl = scale(seq, static_cast<Real>(config.alpha_seq));
        }
        word_acc = word_acc.defined() ? add(word_acc, wl) : wl;
        ++words_used;
    }
    if (word_acc.defined()) {
        auto word_mean = scale(word_acc, Real(1) / static_cast<Real>(words_used));
        loss = loss.defined() ? add(loss, word_mean) : word_mean;
    }
    if (!loss.defined()) return res;
    res.total = loss.item();
    forward_backward(loss, sink);
    return res;
}

}  // namespace detail

// One training stage over a prepared dataset. Returns the per-iteration log;
// losses are batch means recomputable offline from the recorded batches.
template <class Real>
std::vector<TrainLogEntry> run_stage(SpotterModel<Real>& model,
                                     const std::vector<PreparedScene<Real>>& scenes,
                                     const TrainConfig& config) {
    config.validate(static_cast<int>(model.heads.size()));
    if (scenes.empty()) throw std::invalid_argument("run_stage: empty dataset");
    if (config.stage == 1 && !model.options.single_head) {
        // stage 1 needs word-level script labels; the gt format always
        // carries them, but verify the data actually has words
        bool any = false;
        for (const auto& s : scenes) any = any || !s.word_proposals.empty();
        if (!any) throw std::invalid_argument("run_stage: stage 1 data has no labeled words");
    }

    // stage 3: freeze everything but the target head, restrict to scenes
    // containing that head's scripts
    std::vector<int> pool;
    if (config.stage == 3) {
        model.params.set_all_trainable(false);
        std::string prefix =
            model.options.single_head ? "head/union" : model.heads[static_cast<std::size_t>(
                                                           config.stage3_head)].prefix;
        model.params.set_trainable(prefix, true);
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            for (int wi : scenes[i].word_index) {
                auto script = scenes[i].words[static_cast<std::size_t>(wi)].script;
                if (model.options.mux.script_to_head[static_cast<std::size_t>(script)] ==
                    config.stage3_head) {
                    pool.push_back(static_cast<int>(i));
                    break;
                }
            }
        }
        if (pool.empty()) throw std::invalid_argument("run_stage: no scenes for the stage-3 head");
    } else {
        model.params.set_all_trainable(true);
        for (std::size_t i = 0; i < scenes.size(); ++i) pool.push_back(static_cast<int>(i));
    }

    SgdOptimizer<Real> opt(model.params, config.momentum);
    Rng batch_rng = Rng::derive(config.seed, 0xBA7C);
    std::vector<TrainLogEntry> log;
    const int workers = std::max(1, config.workers);

    for (int iter = 0; iter < config.iterations; ++iter) {
        double alpha_lang = alpha_schedule(iter, config);
        std::vector<int> batch(static_cast<std::size_t>(config.batch_size));
        for (auto& b : batch) b = pool[static_cast<std::size_t>(batch_rng.below(pool.size()))];

        std::vector<GradSink<Real>> sinks(batch.size());
        std::vector<detail::SampleResult<Real>> results(batch.size());
        model.params.zero_grad();

        if (workers == 1) {
            for (std::size_t i = 0; i < batch.size(); ++i)
                results[i] = detail::train_sample(model, scenes[static_cast<std::size_t>(batch[i])],
                                                  config, alpha_lang, &sinks[i]);
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> threads;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
            for (int t = 0; t < workers; ++t) {
                threads.emplace_back([&, t] {
                    try {
                        for (std::size_t i = next.fetch_add(1); i < batch.size();
                             i = next.fetch_add(1))
                            results[i] = detail::train_sample(
                                model, scenes[static_cast<std::size_t>(batch[i])], config,
                                alpha_lang, &sinks[i]);
                    } catch (...) {
                        errors[static_cast<std::size_t>(t)] = std::current_exception();
                    }
                });
            }
            for (auto& th : threads) th.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        model.params.reduce_sinks(sinks);  // fixed sample order
        opt.step(lr_schedule(iter, config));

        TrainLogEntry entry;
        entry.iteration = iter;
        for (const auto& r : results) {
            entry.total += r.total;
            entry.language += r.language;
            for (int h = 0; h < kNumScripts; ++h) entry.per_head[static_cast<std::size_t>(h)] += r.per_head[static_cast<std::size_t>(h)];
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        entry.total *= inv;
        entry.language *= inv;
        for (auto& v : entry.per_head) v *= inv;
        if (!std::isfinite(entry.total))
            throw NumericError("run_stage: non-finite batch loss at iteration " +
                               std::to_string(iter));
        log.push_back(entry);
    }
    return log;
}

inline void write_loss_log(const std::vector<TrainLogEntry>& log,
                           const std::vector<std::string>& head_names, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    out << "iteration,total,L_lang";
    for (const auto& n : head_names) out << ",L_seq_" << n;
    out << "\n";
    char buf[64];
    for (const auto& e : log) {
        out << e.iteration;
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", e.total, e.language);
        out << buf;
        for (std::size_t h = 0; h < head_names.size(); ++h) {
            std::snprintf(buf, sizeof(buf), ",%.6f", e.per_head[h]);
            out << buf;
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// checkpoints: manifest.txt + one little-endian float32 blob per parameter
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as little-endian float32");

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <class Real>
void save_checkpoint(const SpotterModel<Real>& model, int iteration, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    KeyValues kv;
    kv["format"] = "textmux-checkpoint-v1";
    auto sig = model.arch_signature();
    kv["config_digest"] = hex64(fnv1a(sig.data(), sig.size()));
    kv["iteration"] = std::to_string(iteration);
    kv["param_count"] = std::to_string(model.params.count());
    char key[64];
    for (std::size_t i = 0; i < model.params.count(); ++i) {
        const auto& p = model.params.items()[i];
        std::vector<float> blob(p.tensor.size());
        for (std::size_t k = 0; k < blob.size(); ++k)
            blob[k] = static_cast<float>(p.tensor.values()[k]);
        fs::path blob_path = fs::path(dir) / "blobs" / (p.name + ".bin");
        fs::create_directories(blob_path.parent_path());
        std::ofstream out(blob_path, std::ios::binary);
        if (!out) throw DataError("cannot write: " + blob_path.string());
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * sizeof(float)));
        std::snprintf(key, sizeof(key), "param.%05zu.", i);
        std::string base = key;
        kv[base + "name"] = p.name;
        std::string shape;
        for (int d : p.tensor.shape()) shape += std::to_string(d) + "x";
        kv[base + "shape"] = shape;
        kv[base + "digest"] = hex64(fnv1a(blob.data(), blob.size() * sizeof(float)));
    }
    write_key_values((fs::path(dir) / "manifest.txt").string(), kv);
}

template <class Real>
int load_checkpoint(SpotterModel<Real>& model, const std::string& dir) {
    namespace fs = std::filesystem;
    auto kv = read_key_values((fs::path(dir) / "manifest.txt").string());
    if (kv_get(kv, "format") != "textmux-checkpoint-v1")
        throw DataError("unknown checkpoint format in " + dir);
    std::size_t count = static_cast<std::size_t>(kv_get_int(kv, "param_count", -1));
    if (count != model.params.count())
        throw DataError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                        std::to_string(model.params.count()));
    char key[64];
    // shape comparison first so mismatches are reported by parameter name
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(key, sizeof(key), "param.%05zu.", i);
        std::string base = key;
        std::string name = kv_get(kv, base + "name");
        if (!model.params.contains(name)) throw DataError("unexpected parameter in checkpoint: " + name);
        auto& p = model.params.at(name);
        std::string shape;
        for (int d : p.tensor.shape()) shape += std::to_string(d) + "x";
        if (shape != kv_get(kv, base + "shape"))
            throw DataError("shape digest mismatch for parameter '" + name + "': checkpoint " +
                            kv_get(kv, base + "shape") + ", model " + shape);
    }
    auto sig = model.arch_signature();
    if (kv_get(kv, "config_digest") != hex64(fnv1a(sig.data(), sig.size())))
        throw DataError("config digest mismatch: checkpoint was written by a different configuration");
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(key, sizeof(key), "param.%05zu.", i);
        std::string base = key;
        std::string name = kv_get(kv, base + "name");
        auto& p = model.params.at(name);
        fs::path blob_path = fs::path(dir) / "blobs" / (name + ".bin");
        std::ifstream in(blob_path, std::ios::binary);
        if (!in) throw DataError("missing blob: " + blob_path.string());
        std::vector<float> blob(p.tensor.size());
        in.read(reinterpret_cast<char*>(blob.data()),
                static_cast<std::streamsize>(blob.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(float)))
            throw DataError("truncated blob for parameter '" + name + "'");
        char extra;
        if (in.read(&extra, 1) && in.gcount() == 1)
            throw DataError("oversized blob for parameter '" + name + "'");
        if (hex64(fnv1a(blob.data(), blob.size() * sizeof(float))) != kv_get(kv, base + "digest"))
            throw DataError("content digest mismatch for parameter '" + name + "'");
        for (std::size_t k = 0; k < blob.size(); ++k)
            p.tensor.values()[k] = static_cast<Real>(blob[k]);
    }
    return static_cast<int>(kv_get_int(kv, "iteration", 0));
}

}  // namespace textmux
