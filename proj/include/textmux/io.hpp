#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace textmux {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// flat key=value text files (manifests, configs, checkpoint manifests)
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read: " + path);
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

inline std::string kv_get(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("missing key: " + key);
    return it->second;
}

inline std::string kv_get(const KeyValues& kv, const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

inline long kv_get_int(const KeyValues& kv, const std::string& key, long fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stol(it->second);
}

inline double kv_get_real(const KeyValues& kv, const std::string& key, double fallback) {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : std::stod(it->second);
}

// ---------------------------------------------------------------------------
// PGM (binary, maxval 255)
// ---------------------------------------------------------------------------

struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // row-major, [0,1]

    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float v = img.at(y, x);
            v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(v * 255.0f + 0.5f);
        }
        out.write(reinterpret_cast<const char*>(row.data()), img.width);
    }
}

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError("not a binary PGM: " + path);
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PGM header: " + path);
    in.get();  // single whitespace after header
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    std::vector<unsigned char> raw(img.pixels.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError("truncated PGM: " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
    return img;
}

}  // namespace textmux
