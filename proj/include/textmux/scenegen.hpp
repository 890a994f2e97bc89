#pragma once

// Procedural multilingual scene generator: eight synthetic pseudo-scripts
// rendered from deterministic 5x7 stroke grids, with MLT-style quadrangle
// ground truth. Stands in for the real multilingual datasets at desk scale.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/geometry.hpp"
#include "textmux/io.hpp"
#include "textmux/rng.hpp"
#include "textmux/utf8.hpp"

namespace textmux {

// ---------------------------------------------------------------------------
// pseudo-script alphabets
// ---------------------------------------------------------------------------

// Default alphabet sizes mirror the relative charset asymmetry of the eight
// scripts (large CJK-like sets, small symbol set).
inline const std::array<int, kNumScripts>& default_alphabet_sizes() {
    static const std::array<int, kNumScripts> sizes = {40, 50, 200, 50, 120, 80, 52, 20};
    return sizes;
}

// Codepoint inventory per script, drawn from non-combining runs of the real
// Unicode blocks so every generated string is NFC-stable.
inline std::vector<Codepoint> script_alphabet(ScriptId script, int size) {
    std::vector<std::pair<Codepoint, int>> runs;
    switch (script) {
        case ScriptId::Arabic: runs = {{0x0621, 40}}; break;
        case ScriptId::Bengali: runs = {{0x0985, 50}}; break;
        case ScriptId::Chinese: runs = {{0x4E00, 512}}; break;
        case ScriptId::Hindi: runs = {{0x0905, 50}}; break;
        case ScriptId::Japanese: runs = {{0x3042, 82}, {0x30A2, 56}}; break;
        case ScriptId::Korean: runs = {{0xAC00, 256}}; break;
        case ScriptId::Latin: runs = {{'A', 26}, {'a', 26}}; break;
        case ScriptId::Symbol: runs = {{0x2190, 40}}; break;
    }
    std::vector<Codepoint> out;
    for (auto [base, len] : runs)
        for (int i = 0; i < len && static_cast<int>(out.size()) < size; ++i)
            out.push_back(base + static_cast<Codepoint>(i));
    if (static_cast<int>(out.size()) < size)
        throw std::invalid_argument("script_alphabet: size exceeds available range for " +
                                    std::string(script_name(script)));
    return out;
}

// ---------------------------------------------------------------------------
// glyph rasters
// ---------------------------------------------------------------------------

constexpr int kGlyphCols = 5;
constexpr int kGlyphRows = 7;

using GlyphRaster = std::array<std::array<bool, kGlyphCols>, kGlyphRows>;

// Deterministic 5x7 stroke grid for one codepoint. Each script family uses a
// fixed structural motif plus codepoint-seeded strokes, so scripts are
// visually distinct while glyphs within a script stay individual.
inline GlyphRaster glyph_raster(ScriptId script, Codepoint cp, std::uint64_t stroke_seed) {
    GlyphRaster g{};
    Rng rng = Rng::derive(stroke_seed * 8 + static_cast<std::uint64_t>(script), cp);
    auto set = [&](int r, int c) {
        if (r >= 0 && r < kGlyphRows && c >= 0 && c < kGlyphCols) g[r][c] = true;
    };
    auto hline = [&](int r, int c0, int c1) {
        for (int c = c0; c <= c1; ++c) set(r, c);
    };
    auto vline = [&](int c, int r0, int r1) {
        for (int r = r0; r <= r1; ++r) set(r, c);
    };
    switch (script) {
        case ScriptId::Arabic: {  // bottom-heavy: baseline band, empty top
            hline(5, 0, 4);
            hline(4, rng.range_int(0, 2), rng.range_int(2, 4));
            int ticks = rng.range_int(1, 2);
            for (int t = 0; t < ticks; ++t) vline(rng.range_int(0, 4), 3, 5);
            if (rng.bernoulli(0.6)) set(6, rng.range_int(1, 3));  // descender dot
            break;
        }
        case ScriptId::Bengali: {  // top-heavy: headline band with short hangers
            hline(0, 0, 4);
            hline(1, rng.range_int(0, 2), rng.range_int(2, 4));
            int hangers = rng.range_int(2, 3);
            for (int t = 0; t < hangers; ++t) vline(rng.range_int(0, 4), 0, rng.range_int(2, 3));
            break;
        }
        case ScriptId::Chinese: {  // densest: full frame with inner strokes
            hline(0, 0, 4);
            hline(6, 0, 4);
            vline(0, 0, 6);
            vline(4, 0, 6);
            hline(3, 1, 3);
            for (int t = 0; t < 3; ++t) set(rng.range_int(1, 5), rng.range_int(1, 3));
            break;
        }
        case ScriptId::Hindi: {  // headline plus a full-height stem
            hline(0, 0, 4);
            vline(rng.range_int(1, 3), 0, 6);
            hline(rng.range_int(3, 4), rng.range_int(0, 1), rng.range_int(3, 4));
            if (rng.bernoulli(0.5)) set(6, rng.range_int(0, 4));
            break;
        }
        case ScriptId::Japanese: {  // sparse single diagonal with a short bar
            int c0 = rng.range_int(0, 1);
            for (int r = 0; r < 6; ++r) set(r, std::min(c0 + (r * 4) / 6, 4));
            hline(rng.range_int(1, 2), 2, rng.range_int(3, 4));
            break;
        }
        case ScriptId::Korean: {  // block composition: closed box plus side bar
            int top = rng.range_int(0, 1);
            hline(top, 0, 2);
            hline(top + 2, 0, 2);
            vline(0, top, top + 2);
            vline(2, top, top + 2);
            vline(4, rng.range_int(0, 2), rng.range_int(4, 6));
            hline(rng.range_int(5, 6), 0, rng.range_int(2, 3));
            break;
        }
        case ScriptId::Latin: {  // left stem with right-side bowls
            vline(0, 0, 6);
            int bowls = rng.range_int(1, 2);
            for (int t = 0; t < bowls; ++t) {
                int r = rng.range_int(0, 5);
                hline(r, 0, rng.range_int(2, 4));
            }
            if (rng.bernoulli(0.6)) vline(rng.range_int(3, 4), rng.range_int(1, 3), rng.range_int(4, 6));
            break;
        }
        case ScriptId::Symbol: {  // small centered mark, empty border
            set(3, 2);
            int arms = rng.range_int(2, 4);
            for (int t = 0; t < arms; ++t) {
                int dr = rng.range_int(-1, 1), dc = rng.range_int(-1, 1);
                set(3 + dr, 2 + dc);
            }
            if (rng.bernoulli(0.5)) set(rng.range_int(2, 4), rng.range_int(1, 3));
            break;
        }
    }
    // shared digits/punctuation render as a neutral family
    int on = 0;
    for (auto& row : g)
        for (bool b : row) on += b;
    if (on < 4) {  // keep every glyph visible
        set(2, 1);
        set(3, 2);
        set(4, 3);
        set(2, 3);
    }
    return g;
}

// Neutral raster for shared characters (digits, punctuation) independent of
// the surrounding script.
inline GlyphRaster shared_glyph_raster(Codepoint cp, std::uint64_t stroke_seed) {
    GlyphRaster g{};
    Rng rng = Rng::derive(stroke_seed * 8 + 101, cp);
    for (int r = 1; r < 6; ++r)
        for (int c = 0; c < kGlyphCols; ++c)
            if (rng.bernoulli(0.35)) g[r][c] = true;
    g[1][1] = g[4][3] = true;
    return g;
}

// ---------------------------------------------------------------------------
// annotations and samples
// ---------------------------------------------------------------------------

struct WordAnnotation {
    std::array<int, 8> quad{};  // x1,y1,...,x4,y4 clockwise from the local top-left
    ScriptId script = ScriptId::Latin;
    std::string transcription;
    bool legible = true;

    Polygon polygon() const {
        Polygon p(4);
        for (int i = 0; i < 4; ++i)
            p[static_cast<std::size_t>(i)] = {static_cast<double>(quad[2 * i]),
                                              static_cast<double>(quad[2 * i + 1])};
        return p;
    }
};

struct SceneSample {
    GrayImage image;
    std::vector<WordAnnotation> words;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::string root;
    std::uint64_t seed = 7;
    int train_scenes = 500;
    int test_scenes = 100;
    int image_size = 256;
    int min_words = 1, max_words = 8;
    int min_word_len = 1, max_word_len = 6;
    int glyph_height = 21;
    double rotation_max_deg = 15.0;
    double illegible_fraction = 0.05;
    double shared_char_prob = 0.08;
    std::array<double, kNumScripts> script_weights = {1, 1, 1, 1, 1, 1, 1, 1};
    std::array<int, kNumScripts> alphabet_sizes = default_alphabet_sizes();

    KeyValues to_key_values() const {
        KeyValues kv;
        kv["seed"] = std::to_string(seed);
        kv["train_scenes"] = std::to_string(train_scenes);
        kv["test_scenes"] = std::to_string(test_scenes);
        kv["image_size"] = std::to_string(image_size);
        kv["min_words"] = std::to_string(min_words);
        kv["max_words"] = std::to_string(max_words);
        kv["min_word_len"] = std::to_string(min_word_len);
        kv["max_word_len"] = std::to_string(max_word_len);
        kv["glyph_height"] = std::to_string(glyph_height);
        kv["rotation_max_deg"] = std::to_string(rotation_max_deg);
        kv["illegible_fraction"] = std::to_string(illegible_fraction);
        kv["shared_char_prob"] = std::to_string(shared_char_prob);
        for (int s = 0; s < kNumScripts; ++s) {
            kv[std::string("weight_") + script_name(static_cast<ScriptId>(s))] =
                std::to_string(script_weights[static_cast<std::size_t>(s)]);
            kv[std::string("alphabet_") + script_name(static_cast<ScriptId>(s))] =
                std::to_string(alphabet_sizes[static_cast<std::size_t>(s)]);
        }
        return kv;
    }

    static DatasetManifest from_key_values(const KeyValues& kv) {
        DatasetManifest m;
        m.seed = static_cast<std::uint64_t>(kv_get_int(kv, "seed", 7));
        m.train_scenes = static_cast<int>(kv_get_int(kv, "train_scenes", m.train_scenes));
        m.test_scenes = static_cast<int>(kv_get_int(kv, "test_scenes", m.test_scenes));
        m.image_size = static_cast<int>(kv_get_int(kv, "image_size", m.image_size));
        m.min_words = static_cast<int>(kv_get_int(kv, "min_words", m.min_words));
        m.max_words = static_cast<int>(kv_get_int(kv, "max_words", m.max_words));
        m.min_word_len = static_cast<int>(kv_get_int(kv, "min_word_len", m.min_word_len));
        m.max_word_len = static_cast<int>(kv_get_int(kv, "max_word_len", m.max_word_len));
        m.glyph_height = static_cast<int>(kv_get_int(kv, "glyph_height", m.glyph_height));
        m.rotation_max_deg = kv_get_real(kv, "rotation_max_deg", m.rotation_max_deg);
        m.illegible_fraction = kv_get_real(kv, "illegible_fraction", m.illegible_fraction);
        m.shared_char_prob = kv_get_real(kv, "shared_char_prob", m.shared_char_prob);
        for (int s = 0; s < kNumScripts; ++s) {
            m.script_weights[static_cast<std::size_t>(s)] = kv_get_real(
                kv, std::string("weight_") + script_name(static_cast<ScriptId>(s)), 1.0);
            m.alphabet_sizes[static_cast<std::size_t>(s)] = static_cast<int>(kv_get_int(
                kv, std::string("alphabet_") + script_name(static_cast<ScriptId>(s)),
                default_alphabet_sizes()[static_cast<std::size_t>(s)]));
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// MLT-style ground truth files
// ---------------------------------------------------------------------------

inline void write_gt(const std::vector<WordAnnotation>& words, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    for (const auto& w : words) {
        for (int v : w.quad) out << v << ",";
        out << script_name(w.script) << "," << (w.legible ? w.transcription : "###") << "\n";
    }
}

inline std::vector<WordAnnotation> read_gt(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read: " + path);
    std::vector<WordAnnotation> words;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        WordAnnotation w;
        std::size_t pos = 0;
        for (int f = 0; f < 9; ++f) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos)
                throw DataError(path + ":" + std::to_string(lineno) + ": expected 10 fields");
            std::string field = line.substr(pos, comma - pos);
            if (f < 8) {
                std::size_t used = 0;
                int value = 0;
                try {
                    value = std::stoi(field, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != field.size() || field.empty())
                    throw DataError(path + ":" + std::to_string(lineno) +
                                    ": non-integer coordinate '" + field + "'");
                w.quad[static_cast<std::size_t>(f)] = value;
            } else {
                w.script = script_from_name(field);
            }
            pos = comma + 1;
        }
        w.transcription = line.substr(pos);
        w.legible = w.transcription != "###";
        words.push_back(std::move(w));
    }
    return words;
}

// ---------------------------------------------------------------------------
// scene composition
// ---------------------------------------------------------------------------

namespace detail {

struct WordLayout {
    double cx, cy;       // center in image coordinates
    double w, h;         // unrotated extent
    double angle;        // radians
    Polygon corners;     // clockwise in image view, starting local top-left
};

inline Polygon layout_corners(double cx, double cy, double w, double h, double angle) {
    double ca = std::cos(angle), sa = std::sin(angle);
    auto map = [&](double lx, double ly) {
        double dx = lx - w / 2, dy = ly - h / 2;
        return Point{cx + dx * ca - dy * sa, cy + dx * sa + dy * ca};
    };
    return {map(0, 0), map(w, 0), map(w, h), map(0, h)};
}

}  // namespace detail

inline SceneSample generate_scene(const DatasetManifest& m, std::uint64_t scene_seed) {
    SceneSample sample;
    sample.seed = scene_seed;
    Rng rng(scene_seed);
    const int n = m.image_size;
    sample.image.height = n;
    sample.image.width = n;
    sample.image.pixels.resize(static_cast<std::size_t>(n) * n);
    for (auto& p : sample.image.pixels)
        p = static_cast<float>(std::clamp(0.12 + 0.05 * rng.normal(), 0.0, 0.45));

    std::array<std::vector<Codepoint>, kNumScripts> alphabets;
    for (int s = 0; s < kNumScripts; ++s)
        alphabets[static_cast<std::size_t>(s)] =
            script_alphabet(static_cast<ScriptId>(s), m.alphabet_sizes[static_cast<std::size_t>(s)]);
    const auto& shared = default_shared_codepoints();

    double wtotal = 0;
    for (double w : m.script_weights) wtotal += w;
    if (wtotal <= 0) throw std::invalid_argument("generate_scene: zero total script weight");

    const double cell = m.glyph_height / static_cast<double>(kGlyphRows);
    const double margin = std::max(1.0, cell * 0.6);
    const int target_words = rng.range_int(m.min_words, m.max_words);

    std::vector<Polygon> placed;
    for (int wi = 0; wi < target_words; ++wi) {
        int script_idx = rng.weighted(m.script_weights);
        ScriptId script = static_cast<ScriptId>(script_idx);
        int len = rng.range_int(m.min_word_len, m.max_word_len);
        std::vector<Codepoint> cps;
        for (int k = 0; k < len; ++k) {
            if (!shared.empty() && rng.bernoulli(m.shared_char_prob))
                cps.push_back(shared[rng.below(shared.size())]);
            else
                cps.push_back(alphabets[static_cast<std::size_t>(script_idx)]
                                       [rng.below(alphabets[static_cast<std::size_t>(script_idx)].size())]);
        }
        std::string transcription = utf8_encode(cps);
        if (transcription == "###") transcription = "##.";  // avoid the don't-care marker
        bool legible = !rng.bernoulli(m.illegible_fraction);

        const double word_w = len * (kGlyphCols + 1) * cell - cell + 2 * margin;
        const double word_h = kGlyphRows * cell + 2 * margin;

        detail::WordLayout layout{};
        bool ok = false;
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            double angle = m.rotation_max_deg == 0.0
                               ? 0.0
                               : rng.uniform(-m.rotation_max_deg, m.rotation_max_deg) * M_PI / 180.0;
            double half_span_x = (std::fabs(std::cos(angle)) * word_w + std::fabs(std::sin(angle)) * word_h) / 2;
            double half_span_y = (std::fabs(std::sin(angle)) * word_w + std::fabs(std::cos(angle)) * word_h) / 2;
            if (2 * half_span_x + 2 >= n || 2 * half_span_y + 2 >= n) break;  // word cannot fit
            double cx = rng.uniform(half_span_x + 1, n - half_span_x - 1);
            double cy = rng.uniform(half_span_y + 1, n - half_span_y - 1);
            Polygon corners = detail::layout_corners(cx, cy, word_w, word_h, angle);
            bool clash = false;
            for (const auto& other : placed)
                if (polygon_iou(corners, other) > 0.05) clash = true;
            if (clash) continue;
            layout = {cx, cy, word_w, word_h, angle, corners};
            ok = true;
        }
        if (!ok) continue;
        placed.push_back(layout.corners);

        WordAnnotation ann;
        ann.script = script;
        ann.transcription = transcription;
        ann.legible = legible;
        for (int i = 0; i < 4; ++i) {
            int x = static_cast<int>(std::lround(layout.corners[static_cast<std::size_t>(i)].x));
            int y = static_cast<int>(std::lround(layout.corners[static_cast<std::size_t>(i)].y));
            ann.quad[static_cast<std::size_t>(2 * i)] = std::clamp(x, 0, n - 1);
            ann.quad[static_cast<std::size_t>(2 * i + 1)] = std::clamp(y, 0, n - 1);
        }

        // rasterize glyphs by inverse mapping into the word frame
        float fg = static_cast<float>(rng.uniform(0.75, 0.95));
        std::vector<GlyphRaster> rasters;
        for (Codepoint cp : cps) {
            bool is_shared = std::find(shared.begin(), shared.end(), cp) != shared.end();
            rasters.push_back(is_shared ? shared_glyph_raster(cp, m.seed)
                                        : glyph_raster(script, cp, m.seed));
        }
        Rng noise = Rng::derive(scene_seed, 7777 + static_cast<std::uint64_t>(wi));
        double ca = std::cos(layout.angle), sa = std::sin(layout.angle);
        double bx0, by0, bx1, by1;
        polygon_bounds(layout.corners, bx0, by0, bx1, by1);
        int px0 = std::max(0, static_cast<int>(std::floor(bx0)));
        int py0 = std::max(0, static_cast<int>(std::floor(by0)));
        int px1 = std::min(n - 1, static_cast<int>(std::ceil(bx1)));
        int py1 = std::min(n - 1, static_cast<int>(std::ceil(by1)));
        const double advance = (kGlyphCols + 1) * cell;
        for (int py = py0; py <= py1; ++py) {
            for (int px = px0; px <= px1; ++px) {
                double dx = px + 0.5 - layout.cx, dy = py + 0.5 - layout.cy;
                double u = dx * ca + dy * sa + word_w / 2;
                double v = -dx * sa + dy * ca + word_h / 2;
                if (u < 0 || v < 0 || u >= word_w || v >= word_h) continue;
                bool on = false;
                if (!legible) {
                    on = noise.bernoulli(0.35);  // unreadable scramble
                } else {
                    double gu = u - margin, gv = v - margin;
                    if (gu >= 0 && gv >= 0 && gv < kGlyphRows * cell) {
                        int k = static_cast<int>(gu / advance);
                        double cu = gu - k * advance;
                        if (k >= 0 && k < len && cu < kGlyphCols * cell) {
                            int col = static_cast<int>(cu / cell);
                            int row = static_cast<int>(gv / cell);
                            on = rasters[static_cast<std::size_t>(k)]
                                        [static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
                        }
                    }
                }
                if (on) sample.image.at(py, px) = fg;
            }
        }
        sample.words.push_back(std::move(ann));
    }
    return sample;
}

inline std::string scene_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return buf;
}

// Writes images/ and gt/ for both splits plus the manifest file under root.
// Per-scene seeds derive from (manifest seed, split, index), so regeneration
// is byte-identical and order-independent.
inline void generate_dataset(const DatasetManifest& m) {
    namespace fs = std::filesystem;
    if (m.root.empty()) throw std::invalid_argument("generate_dataset: empty root");
    double wtotal = 0;
    for (double w : m.script_weights) wtotal += w;
    if (wtotal <= 0) throw std::invalid_argument("generate_dataset: zero total script weight");
    const std::pair<const char*, int> splits[2] = {{"train", m.train_scenes},
                                                   {"test", m.test_scenes}};
    for (int si = 0; si < 2; ++si) {
        auto [split, count] = splits[si];
        fs::create_directories(fs::path(m.root) / split / "images");
        fs::create_directories(fs::path(m.root) / split / "gt");
        for (int i = 0; i < count; ++i) {
            std::uint64_t scene_seed =
                Rng::derive(m.seed, static_cast<std::uint64_t>(si) * 1000003 +
                                        static_cast<std::uint64_t>(i)).next_u64();
            SceneSample sample = generate_scene(m, scene_seed);
            write_pgm((fs::path(m.root) / split / "images" / (scene_id(i) + ".pgm")).string(),
                      sample.image);
            write_gt(sample.words,
                     (fs::path(m.root) / split / "gt" / (scene_id(i) + ".txt")).string());
        }
    }
    write_key_values((fs::path(m.root) / "manifest.txt").string(), m.to_key_values());
}

struct LoadedScene {
    GrayImage image;
    std::vector<WordAnnotation> words;
};

inline std::vector<LoadedScene> load_split(const std::string& root, const std::string& split) {
    namespace fs = std::filesystem;
    std::vector<LoadedScene> scenes;
    for (int i = 0;; ++i) {
        fs::path img = fs::path(root) / split / "images" / (scene_id(i) + ".pgm");
        if (!fs::exists(img)) break;
        LoadedScene s;
        s.image = read_pgm(img.string());
        s.words = read_gt((fs::path(root) / split / "gt" / (scene_id(i) + ".txt")).string());
        scenes.push_back(std::move(s));
    }
    if (scenes.empty()) throw DataError("no scenes under " + root + "/" + split);
    return scenes;
}

}  // namespace textmux
