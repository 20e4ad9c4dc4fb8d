#pragma once

// Minimal emit helpers for JSON lines whose doubles must carry 17 significant
// digits (nlohmann's dump() prints shortest round-trip instead).

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

namespace swd::json_text {

inline void append_double(std::string& out, double v) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

inline std::string format_double(double v) {
    std::string s;
    append_double(s, v);
    return s;
}

inline void append_doubles(std::string& out, const std::vector<double>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        append_double(out, v[i]);
    }
    out += ']';
}

template <typename Int>
void append_ints(std::string& out, const std::vector<Int>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    out += ']';
}

inline void append_key(std::string& out, const char* key) {
    out += '"';
    out += key;
    out += "\":";
}

inline void append_string(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
}

}  // namespace swd::json_text
