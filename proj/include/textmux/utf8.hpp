#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace textmux {

using Codepoint = std::uint32_t;

inline void utf8_append(std::string& out, Codepoint cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string utf8_encode(const std::vector<Codepoint>& cps) {
    std::string s;
    for (Codepoint cp : cps) utf8_append(s, cp);
    return s;
}

inline std::string utf8_encode(Codepoint cp) {
    std::string s;
    utf8_append(s, cp);
    return s;
}

inline std::vector<Codepoint> utf8_decode(const std::string& s) {
    std::vector<Codepoint> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        Codepoint cp = 0;
        int extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c & 0xE0) == 0xC0) {
            cp = c & 0x1F;
            extra = 1;
        } else if ((c & 0xF0) == 0xE0) {
            cp = c & 0x0F;
            extra = 2;
        } else if ((c & 0xF8) == 0xF0) {
            cp = c & 0x07;
            extra = 3;
        } else {
            throw std::runtime_error("utf8_decode: invalid lead byte at offset " + std::to_string(i));
        }
        if (i + extra >= s.size() && extra > 0)
            throw std::runtime_error("utf8_decode: truncated sequence at offset " + std::to_string(i));
        for (int k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80)
                throw std::runtime_error("utf8_decode: invalid continuation at offset " + std::to_string(i + k));
            cp = (cp << 6) | (cc & 0x3F);
        }
        out.push_back(cp);
        i += 1 + extra;
    }
    return out;
}

}  // namespace textmux
