#pragma once

// Per-script character tables, word encoding with unsupported-character
// flags, and the parameter-budget arithmetic for head sizing.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "textmux/utf8.hpp"

namespace textmux {

enum class ScriptId : int {
    Arabic = 0,
    Bengali = 1,
    Chinese = 2,
    Hindi = 3,
    Japanese = 4,
    Korean = 5,
    Latin = 6,
    Symbol = 7,
};

constexpr int kNumScripts = 8;

inline const char* script_name(ScriptId s) {
    static const char* names[kNumScripts] = {"Arabic",   "Bengali", "Chinese", "Hindi",
                                             "Japanese", "Korean",  "Latin",   "Symbol"};
    int i = static_cast<int>(s);
    if (i < 0 || i >= kNumScripts) throw std::invalid_argument("script_name: bad ordinal");
    return names[i];
}

inline ScriptId script_from_name(const std::string& name) {
    for (int i = 0; i < kNumScripts; ++i)
        if (name == script_name(static_cast<ScriptId>(i))) return static_cast<ScriptId>(i);
    throw std::invalid_argument("unknown script tag: " + name);
}

// Digits plus the ASCII punctuation block and space; appended to every table.
inline const std::vector<Codepoint>& default_shared_codepoints() {
    static const std::vector<Codepoint> shared = [] {
        std::vector<Codepoint> v;
        for (Codepoint c = '0'; c <= '9'; ++c) v.push_back(c);
        const char* punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
        for (const char* p = punct; *p; ++p) v.push_back(static_cast<Codepoint>(*p));
        v.push_back(' ');
        return v;
    }();
    return shared;
}

// Token stream for one word against one head's charset. Unsupported
// positions keep a sentinel index and supported=false; the final real
// position is EOS.
struct TokenSequence {
    std::vector<int> indices;
    std::vector<bool> supported;
    int length() const { return static_cast<int>(indices.size()); }
};

class CharsetTable {
public:
    CharsetTable() = default;
    CharsetTable(ScriptId script, std::vector<Codepoint> chars) : script_(script), chars_(std::move(chars)) {
        for (std::size_t i = 0; i < chars_.size(); ++i) {
            if (!index_.emplace(chars_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("CharsetTable: duplicate codepoint");
        }
    }

    ScriptId script() const { return script_; }
    int size() const { return static_cast<int>(chars_.size()); }  // real characters only
    int eos_index() const { return size(); }
    int pad_index() const { return size() + 1; }
    int vocab_with_sentinels() const { return size() + 2; }

    bool contains(Codepoint cp) const { return index_.count(cp) != 0; }

    int index_of(Codepoint cp) const {
        auto it = index_.find(cp);
        if (it == index_.end()) throw std::invalid_argument("index_of: unsupported codepoint");
        return it->second;
    }

    Codepoint decode(int index) const {
        if (index < 0 || index >= size()) throw std::invalid_argument("decode: index out of range");
        return chars_[index];
    }

    const std::vector<Codepoint>& characters() const { return chars_; }

    TokenSequence encode_word(const std::string& word, int t_max) const {
        if (word.empty()) throw std::invalid_argument("encode_word: empty word");
        auto cps = utf8_decode(word);
        if (static_cast<int>(cps.size()) > t_max - 1) cps.resize(t_max - 1);
        TokenSequence seq;
        for (Codepoint cp : cps) {
            auto it = index_.find(cp);
            if (it == index_.end()) {
                seq.indices.push_back(pad_index());  // sentinel for unsupported
                seq.supported.push_back(false);
            } else {
                seq.indices.push_back(it->second);
                seq.supported.push_back(true);
            }
        }
        seq.indices.push_back(eos_index());
        seq.supported.push_back(true);
        return seq;
    }

    // Supported indices back to text; EOS/PAD/unsupported entries are skipped.
    std::string decode_indices(const std::vector<int>& indices) const {
        std::string out;
        for (int idx : indices) {
            if (idx >= 0 && idx < size()) utf8_append(out, chars_[idx]);
        }
        return out;
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write charset file: " + path);
        out << "script=" << script_name(script_) << " size=" << size() << "\n";
        char buf[16];
        for (Codepoint cp : chars_) {
            std::snprintf(buf, sizeof(buf), "U+%04X", cp);
            out << buf << " " << utf8_encode(cp) << "\n";
        }
    }

    static CharsetTable read_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read charset file: " + path);
        std::string header;
        if (!std::getline(in, header)) throw std::runtime_error("charset file empty: " + path);
        std::string script_tag;
        int declared = -1;
        {
            std::istringstream hs(header);
            std::string tok;
            while (hs >> tok) {
                if (tok.rfind("script=", 0) == 0) script_tag = tok.substr(7);
                else if (tok.rfind("size=", 0) == 0) declared = std::stoi(tok.substr(5));
            }
        }
        if (script_tag.empty() || declared < 0)
            throw std::runtime_error("malformed charset header: " + header);
        std::vector<Codepoint> chars;
        std::string line;
        int lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::size_t sp = line.find(' ');
            if (line.compare(0, 2, "U+") != 0 || sp == std::string::npos || sp < 6)
                throw std::runtime_error("malformed charset line " + std::to_string(lineno));
            Codepoint cp = static_cast<Codepoint>(std::stoul(line.substr(2, sp - 2), nullptr, 16));
            std::string literal = line.substr(sp + 1);
            if (literal != utf8_encode(cp))
                throw std::runtime_error("charset literal mismatch at line " + std::to_string(lineno));
            chars.push_back(cp);
        }
        if (static_cast<int>(chars.size()) != declared)
            throw std::runtime_error("charset size mismatch: declared " + std::to_string(declared) +
                                     ", found " + std::to_string(chars.size()));
        return CharsetTable(script_from_name(script_tag), std::move(chars));
    }

private:
    ScriptId script_ = ScriptId::Latin;
    std::vector<Codepoint> chars_;
    std::map<Codepoint, int> index_;
};

// Real characters sorted by descending corpus frequency, ties by ascending
// codepoint; the shared digit/punctuation block follows as a contiguous
// suffix (members already seen in-corpus keep their frequency-ordered slot).
inline std::array<CharsetTable, kNumScripts> build_charsets(
    const std::vector<std::pair<std::string, ScriptId>>& corpus,
    const std::vector<Codepoint>& shared = default_shared_codepoints()) {
    if (corpus.empty()) throw std::invalid_argument("build_charsets: empty corpus");
    std::array<std::map<Codepoint, std::int64_t>, kNumScripts> freq;
    for (const auto& [word, script] : corpus) {
        int s = static_cast<int>(script);
        if (s < 0 || s >= kNumScripts) throw std::invalid_argument("build_charsets: unknown script tag");
        for (Codepoint cp : utf8_decode(word)) ++freq[s][cp];
    }
    std::array<CharsetTable, kNumScripts> tables;
    for (int s = 0; s < kNumScripts; ++s) {
        std::vector<std::pair<Codepoint, std::int64_t>> entries;
        for (const auto& [cp, count] : freq[s])
            if (std::find(shared.begin(), shared.end(), cp) == shared.end())
                entries.push_back({cp, count});
        std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<Codepoint> chars;
        for (auto& [cp, count] : entries) chars.push_back(cp);
        chars.insert(chars.end(), shared.begin(), shared.end());
        tables[s] = CharsetTable(static_cast<ScriptId>(s), std::move(chars));
    }
    return tables;
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

// Recognition-head sizing. The decoder that these counts describe:
//   embedding (charset+2 sentinels) x embed
//   factorized 2-D positional encoding: 2 x S x C
//   additive attention at width C: query C x hidden, key C x C, bias C, score C
//   two stacked gated recurrent cells, 3 gates each, inputs
//   [embed; context] and [hidden; context]
//   output affine hidden -> charset+1 (EOS)
struct HeadConfig {
    ScriptId script = ScriptId::Latin;
    int charset_size = 0;  // real characters, sentinels excluded
    int embed_size = 0;
    int hidden_size = 0;
    int t_max = 32;
    int feature_channels = 256;  // C of the masked pooled feature
    int pooled_size = 32;        // S
};

inline std::int64_t count_head_parameters(const HeadConfig& c) {
    if (c.charset_size <= 0 || c.embed_size <= 0 || c.hidden_size <= 0)
        throw std::invalid_argument("count_head_parameters: counts must be positive");
    const std::int64_t v = c.charset_size, e = c.embed_size, h = c.hidden_size;
    const std::int64_t C = c.feature_channels, s = c.pooled_size;
    std::int64_t total = 0;
    total += (v + 2) * e;               // embedding incl. EOS/PAD rows
    total += 2 * s * C;                 // positional encoding (rows + cols)
    total += C * h + C * C + C + C;     // attention: query, key, bias, score
    total += 3 * ((e + C) * h + h * h + h);  // recurrent layer 1
    total += 3 * ((h + C) * h + h * h + h);  // recurrent layer 2
    total += (h + 1) * (v + 1);         // output affine to charset+EOS
    return total;
}

struct LpnCountConfig {
    int feature_channels = 256;
    int pooled_size = 32;
    int conv1 = 32;
    int conv2 = 16;
    int fc_hidden = 32;
    int num_languages = 8;
};

inline std::int64_t count_lpn_parameters(const LpnCountConfig& c) {
    const std::int64_t C = c.feature_channels;
    std::int64_t total = 0;
    total += static_cast<std::int64_t>(c.conv1) * (4 * C + 1);        // 2x2 conv
    total += static_cast<std::int64_t>(c.conv2) * (4 * c.conv1 + 1);  // 2x2 conv
    int side = (c.pooled_size - 1) / 2 - 1;  // conv(valid) -> pool 2x2 -> conv(valid)
    if (side <= 0) throw std::invalid_argument("count_lpn_parameters: pooled size too small");
    std::int64_t flat = static_cast<std::int64_t>(c.conv2) * side * side;
    total += static_cast<std::int64_t>(c.fc_hidden) * (flat + 1);
    total += static_cast<std::int64_t>(c.num_languages) * (c.fc_hidden + 1);
    return total;
}

// Table-style defaults for the paper-scale configuration.
inline std::vector<HeadConfig> paper_head_configs() {
    auto mk = [](ScriptId s, int v, int e, int h) {
        HeadConfig c;
        c.script = s;
        c.charset_size = v;
        c.embed_size = e;
        c.hidden_size = h;
        return c;
    };
    return {
        mk(ScriptId::Arabic, 80, 100, 224),   mk(ScriptId::Bengali, 110, 100, 224),
        mk(ScriptId::Chinese, 5200, 200, 224), mk(ScriptId::Hindi, 110, 100, 224),
        mk(ScriptId::Japanese, 2300, 200, 224), mk(ScriptId::Korean, 1500, 200, 224),
        mk(ScriptId::Latin, 250, 150, 256),   mk(ScriptId::Symbol, 60, 30, 64),
    };
}

inline HeadConfig paper_single_head_config() {
    HeadConfig c;
    c.script = ScriptId::Latin;
    c.charset_size = 9000;
    c.embed_size = 400;
    c.hidden_size = 512;
    return c;
}

struct BudgetQuery {
    std::int64_t target_parameter_count = 0;
    int charset_size = 0;
    int embed_min = 0, embed_max = 0, embed_step = 1;
    int hidden_min = 0, hidden_max = 0, hidden_step = 1;
    int feature_channels = 256;
    int pooled_size = 32;
    double tolerance = 0.02;
};

struct BudgetMatch {
    int embed_size = 0;
    int hidden_size = 0;
    std::int64_t parameter_count = 0;
    double relative_error = 0.0;
};

// Scans the bound grid and returns the qualifying pair with the smallest
// |count-target|/target; first hit wins on exact ties.
inline BudgetMatch match_budget(const BudgetQuery& q) {
    if (q.embed_min <= 0 || q.embed_max < q.embed_min || q.hidden_min <= 0 ||
        q.hidden_max < q.hidden_min || q.embed_step <= 0 || q.hidden_step <= 0)
        throw std::invalid_argument("match_budget: bounds are empty or invalid");
    if (q.target_parameter_count <= 0) throw std::invalid_argument("match_budget: bad target");
    BudgetMatch best;
    bool found = false;
    for (int e = q.embed_min; e <= q.embed_max; e += q.embed_step) {
        for (int h = q.hidden_min; h <= q.hidden_max; h += q.hidden_step) {
            HeadConfig c;
            c.charset_size = q.charset_size;
            c.embed_size = e;
            c.hidden_size = h;
            c.feature_channels = q.feature_channels;
            c.pooled_size = q.pooled_size;
            std::int64_t count = count_head_parameters(c);
            double rel = std::abs(static_cast<double>(count - q.target_parameter_count)) /
                         static_cast<double>(q.target_parameter_count);
            if (rel <= q.tolerance && (!found || rel < best.relative_error)) {
                best = {e, h, count, rel};
                found = true;
            }
        }
    }
    if (!found)
        throw std::runtime_error("match_budget: no (embed, hidden) pair within " +
                                 std::to_string(q.tolerance * 100) + "% of target in bounds");
    return best;
}

}  // namespace textmux
