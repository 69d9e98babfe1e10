#pragma once

#include <cstdint>
#include <string>

namespace twins {

// 128-bit multiply-add tally; large models overflow 64 bits only in
// pathological geometries but the headroom costs nothing.
using mac_t = unsigned __int128;

inline std::string mac_str(mac_t v) {
    if (v == 0) return "0";
    std::string s;
    while (v > 0) {
        s.push_back(char('0' + int(v % 10)));
        v /= 10;
    }
    return std::string(s.rbegin(), s.rend());
}

inline double mac_double(mac_t v) { return static_cast<double>(v); }

// Multiply-add tally with the attention-map term kept separate from
// projection/conv work.
struct MacCounter {
    mac_t attn = 0;   // QK^T and AV contractions
    mac_t other = 0;  // projections, convs, FFN
    mac_t total() const { return attn + other; }
    void reset() { attn = other = 0; }
};

namespace detail {
inline thread_local MacCounter* active_counter = nullptr;
inline thread_local bool attn_mac_scope = false;

inline void add_macs(mac_t n) {
    if (active_counter) {
        if (attn_mac_scope)
            active_counter->attn += n;
        else
            active_counter->other += n;
    }
}
}  // namespace detail

// Routes multiply-add counts from matmul/conv/linear into `c` for the
// enclosing scope.
struct CounterGuard {
    MacCounter* prev;
    explicit CounterGuard(MacCounter& c) : prev(detail::active_counter) {
        detail::active_counter = &c;
    }
    ~CounterGuard() { detail::active_counter = prev; }
    CounterGuard(const CounterGuard&) = delete;
    CounterGuard& operator=(const CounterGuard&) = delete;
};

// Marks the contained contractions as attention-map work.
struct AttnMacScope {
    bool prev;
    AttnMacScope() : prev(detail::attn_mac_scope) { detail::attn_mac_scope = true; }
    ~AttnMacScope() { detail::attn_mac_scope = prev; }
    AttnMacScope(const AttnMacScope&) = delete;
    AttnMacScope& operator=(const AttnMacScope&) = delete;
};

}  // namespace twins
