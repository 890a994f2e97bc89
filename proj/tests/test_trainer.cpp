#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "textmux/trainer.hpp"

using namespace textmux;
namespace fs = std::filesystem;

namespace {

DatasetManifest tiny_dataset(const std::string& root, std::uint64_t seed = 3) {
    DatasetManifest m;
    m.root = root;
    m.seed = seed;
    m.train_scenes = 12;
    m.test_scenes = 0;
    m.image_size = 32;
    m.min_words = 1;
    m.max_words = 2;
    m.min_word_len = 1;
    m.max_word_len = 3;
    m.glyph_height = 9;
    m.illegible_fraction = 0.0;
    m.alphabet_sizes = {5, 5, 8, 5, 6, 5, 6, 4};
    return m;
}

SpotterOptions tiny_options(bool single = false) {
    SpotterOptions o;
    o.trunk.feature_channels = 6;
    o.trunk.pooled_size = 6;
    o.trunk.encoder_widths = {3, 4, 4, 5, 5};
    o.lpn.conv1 = 4;
    o.lpn.conv2 = 3;
    o.lpn.fc_hidden = 8;
    o.embed_size = 4;
    o.hidden_size = 6;
    o.t_max = 8;
    o.single_head = single;
    o.init_seed = 11;
    return o;
}

struct Fixture {
    fs::path dir;
    std::array<CharsetTable, kNumScripts> tables;
    std::vector<PreparedScene<float>> scenes;

    explicit Fixture(const std::string& tag, std::uint64_t seed = 3) {
        dir = fs::temp_directory_path() / ("textmux_trainer_" + tag);
        fs::remove_all(dir);
        auto m = tiny_dataset(dir.string(), seed);
        generate_dataset(m);
        auto loaded = load_split(dir.string(), "train");
        std::vector<std::pair<std::string, ScriptId>> corpus;
        for (const auto& s : loaded)
            for (const auto& w : s.words)
                if (w.legible) corpus.push_back({w.transcription, w.script});
        tables = build_charsets(corpus);
        SpotterOptions opts = tiny_options();
        scenes = prepare_scenes<float>(loaded, opts.trunk);
    }
    ~Fixture() { fs::remove_all(dir); }
};

TrainConfig quick_config(int stage, int iterations = 4) {
    TrainConfig c;
    c.stage = stage;
    c.iterations = iterations;
    c.batch_size = 3;
    c.alpha_switch_iteration = 2;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("alpha schedule") {
    TrainConfig c;
    c.stage = 1;
    c.alpha_switch_iteration = 1000;
    REQUIRE(alpha_schedule(0, c) == 0.02);
    REQUIRE(alpha_schedule(999, c) == 0.02);
    REQUIRE(alpha_schedule(1000, c) == 1.0);
    REQUIRE(alpha_schedule(5000, c) == 1.0);
    c.alpha_switch_iteration = 0;
    REQUIRE(alpha_schedule(0, c) == 1.0);
    REQUIRE_THROWS_AS(alpha_schedule(-1, c), std::invalid_argument);
    c.stage = 2;
    c.alpha_switch_iteration = 1000;
    REQUIRE(alpha_schedule(0, c) == 1.0);
}

TEST_CASE("stage 1 training is deterministic and reduces the loss") {
    Fixture fx("det");
    auto run = [&]() {
        auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
        auto log = run_stage(model, fx.scenes, quick_config(1, 30));
        std::vector<double> totals;
        for (const auto& e : log) totals.push_back(e.total);
        return totals;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a == b);  // bit-identical loss curves
    double early = (a[0] + a[1] + a[2]) / 3;
    double late = (a[27] + a[28] + a[29]) / 3;
    REQUIRE(late < early);
}

TEST_CASE("optimizer with zero learning rate leaves parameters bit-identical") {
    Fixture fx("lr0");
    auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
    std::vector<std::vector<float>> before;
    for (auto& p : model.params.items()) before.push_back(p.tensor.values());
    auto cfg = quick_config(1, 3);
    cfg.learning_rate = 0.0;
    run_stage(model, fx.scenes, cfg);
    for (std::size_t i = 0; i < model.params.count(); ++i)
        REQUIRE(model.params.items()[i].tensor.values() == before[i]);
}

TEST_CASE("stage 3 freezes everything except the target head") {
    Fixture fx("s3");
    auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
    run_stage(model, fx.scenes, quick_config(1, 4));

    int target = 2;  // Chinese-like head
    std::string target_prefix = model.heads[static_cast<std::size_t>(target)].prefix;
    std::vector<std::vector<float>> before;
    for (auto& p : model.params.items()) before.push_back(p.tensor.values());

    auto cfg = quick_config(3, 6);
    cfg.stage3_head = target;
    run_stage(model, fx.scenes, cfg);

    bool target_changed = false;
    for (std::size_t i = 0; i < model.params.count(); ++i) {
        const auto& p = model.params.items()[i];
        if (p.name.rfind(target_prefix, 0) == 0) {
            if (p.tensor.values() != before[i]) target_changed = true;
        } else {
            REQUIRE(p.tensor.values() == before[i]);  // bit-identical
        }
    }
    REQUIRE(target_changed);
}

TEST_CASE("stage 3 requires a target head") {
    Fixture fx("s3err");
    auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
    auto cfg = quick_config(3, 2);
    cfg.stage3_head = -1;
    REQUIRE_THROWS_AS(run_stage(model, fx.scenes, cfg), std::invalid_argument);
    cfg.stage3_head = 99;
    REQUIRE_THROWS_AS(run_stage(model, fx.scenes, cfg), std::invalid_argument);
}

TEST_CASE("stage 2 resumed from a checkpoint matches an offline loss recomputation") {
    Fixture fx("resume");
    auto dir = fs::temp_directory_path() / "textmux_trainer_resume_ckpt";
    fs::remove_all(dir);
    {
        auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
        run_stage(model, fx.scenes, quick_config(1, 5));
        save_checkpoint(model, 5, dir.string());
    }
    auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
    load_checkpoint(model, dir.string());

    auto cfg = quick_config(2, 1);
    // offline recomputation of the first batch, before training perturbs weights
    Rng batch_rng = Rng::derive(cfg.seed, 0xBA7C);
    std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size));
    for (auto& b : batch) b = static_cast<int>(batch_rng.below(fx.scenes.size()));
    // offline recomputation straight from the public pieces
    auto offline_loss = [&](const PreparedScene<float>& scene) {
        NoGradGuard guard;
        auto out = model.trunk.forward(scene.image);
        double loss = segmentation_loss(out.seg_prob, scene.seg_target).item();
        LossConfig lc;
        lc.alpha_seq.assign(model.heads.size(), cfg.alpha_seq);
        lc.beta = cfg.beta;
        double word_sum = 0;
        int n = 0;
        for (std::size_t wi = 0; wi < scene.word_proposals.size(); ++wi) {
            const auto& word = scene.words[static_cast<std::size_t>(scene.word_index[wi])];
            auto pooled = roi_mask_pool(out.features, scene.word_proposals[wi],
                                        model.options.trunk.pooled_size);
            auto post = model.lpn.forward(pooled.block);
            auto b = hard_integrated_loss(post, model.heads, pooled.block, word.transcription, lc,
                                          model.options.mux);
            word_sum += b.total.item();
            ++n;
        }
        if (n > 0) loss += word_sum / n;
        return loss;
    };
    double expect = 0;
    for (int idx : batch) expect += offline_loss(fx.scenes[static_cast<std::size_t>(idx)]);
    expect /= cfg.batch_size;

    auto log = run_stage(model, fx.scenes, cfg);
    REQUIRE(log[0].total == Catch::Approx(expect).margin(1e-5));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip and error paths") {
    Fixture fx("ckpt");
    auto dir = fs::temp_directory_path() / "textmux_trainer_ckpt";
    fs::remove_all(dir);
    auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
    run_stage(model, fx.scenes, quick_config(1, 2));
    save_checkpoint(model, 2, dir.string());

    SECTION("load restores every parameter bit-exactly") {
        auto other = SpotterModel<float>::build(tiny_options(), fx.tables);
        bool differed = false;
        for (std::size_t i = 0; i < model.params.count(); ++i)
            differed = differed || other.params.items()[i].tensor.values() !=
                                       model.params.items()[i].tensor.values();
        // fresh build with the same seed matches, so force a difference first
        for (auto& p : other.params.items())
            for (auto& v : p.tensor.values()) v += 0.125f;
        REQUIRE(load_checkpoint(other, dir.string()) == 2);
        for (std::size_t i = 0; i < model.params.count(); ++i)
            REQUIRE(other.params.items()[i].tensor.values() ==
                    model.params.items()[i].tensor.values());
    }
    SECTION("tampering one byte in a blob is detected") {
        auto blob = dir / "blobs" / "lpn" / "fc1" / "w.bin";
        REQUIRE(fs::exists(blob));
        std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        char c;
        f.seekg(4);
        f.read(&c, 1);
        c = static_cast<char>(c ^ 0x40);
        f.seekp(4);
        f.write(&c, 1);
        f.close();
        auto other = SpotterModel<float>::build(tiny_options(), fx.tables);
        try {
            load_checkpoint(other, dir.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            REQUIRE(std::string(e.what()).find("digest mismatch") != std::string::npos);
        }
    }
    SECTION("a model with a changed head width fails naming the parameter") {
        auto opts = tiny_options();
        opts.hidden_size = 7;  // widened decoder
        auto other = SpotterModel<float>::build(opts, fx.tables);
        try {
            load_checkpoint(other, dir.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            std::string msg = e.what();
            REQUIRE(msg.find("head/") != std::string::npos);
            REQUIRE(msg.find("mismatch") != std::string::npos);
        }
    }
    SECTION("truncated blob is detected") {
        auto blob = dir / "blobs" / "lpn" / "fc2" / "w.bin";
        auto size = fs::file_size(blob);
        fs::resize_file(blob, size - 4);
        auto other = SpotterModel<float>::build(tiny_options(), fx.tables);
        try {
            load_checkpoint(other, dir.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            REQUIRE(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("single-head baseline trains with the same driver") {
    Fixture fx("single");
    auto model = SpotterModel<float>::build(tiny_options(true), fx.tables);
    REQUIRE(model.heads.size() == 1);
    auto log = run_stage(model, fx.scenes, quick_config(1, 3));
    REQUIRE(log.size() == 3);
    for (const auto& e : log) REQUIRE(std::isfinite(e.total));
}

TEST_CASE("loss log CSV has the documented layout") {
    std::vector<TrainLogEntry> log(2);
    log[0].iteration = 0;
    log[0].total = 1.5;
    log[0].language = 0.5;
    log[1].iteration = 1;
    log[1].total = 1.25;
    auto dir = fs::temp_directory_path() / "textmux_trainer_log";
    fs::create_directories(dir);
    auto path = (dir / "loss.csv").string();
    write_loss_log(log, {"Arabic", "Bengali"}, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "iteration,total,L_lang,L_seq_Arabic,L_seq_Bengali");
    std::string row;
    std::getline(in, row);
    REQUIRE(row.rfind("0,1.500000,0.500000", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("worker pool reduction matches the single-threaded result") {
    Fixture fx("mt");
    auto cfg = quick_config(1, 4);
    auto run = [&](int workers) {
        auto model = SpotterModel<float>::build(tiny_options(), fx.tables);
        auto c = cfg;
        c.workers = workers;
        auto log = run_stage(model, fx.scenes, c);
        std::vector<float> tail = model.params.items()[0].tensor.values();
        std::vector<double> totals;
        for (const auto& e : log) totals.push_back(e.total);
        return std::pair{tail, totals};
    };
    auto [w1, t1] = run(1);
    auto [w2, t2] = run(3);
    REQUIRE(w1 == w2);  // bit-identical parameters
    REQUIRE(t1 == t2);
}
