#pragma once

// Counter-based random streams: every draw is a pure function of its key, so
// results never depend on evaluation order or thread count.

#include <cstdint>
#include <initializer_list>

namespace ofield {

constexpr uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_key(std::initializer_list<uint64_t> parts) {
    uint64_t h = 0x6A09E667F3BCC909ULL;
    for (uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

class CounterRng {
public:
    explicit CounterRng(uint64_t key) : key_(key) {}
    double uniform() { return to_unit(splitmix64(key_ + 0x632BE59BD9B4E019ULL * ++counter_)); }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace ofield
