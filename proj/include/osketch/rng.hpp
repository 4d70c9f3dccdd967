// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace osketch {

// Distributions are implemented here rather than with <random>'s distribution
// classes, whose output is implementation-defined. mt19937_64 itself is fully
// specified, so every seeded stream is reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer on the closed range [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derives an independent stream seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace osketch
