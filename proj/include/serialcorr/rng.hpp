#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace serialcorr::rng {

/// Philox4x32-10 counter-based generator.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

/// Stateless draws keyed by (seed, entity, index, stream).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    std::array<std::uint32_t, 4> bits(std::uint32_t entity, std::uint32_t index, std::uint32_t stream,
                                      std::uint32_t lane = 0) const {
        return philox4x32({entity, index, stream, lane}, key_);
    }

    /// Two uniforms in (0, 1).
    std::array<double, 2> uniform2(std::uint32_t entity, std::uint32_t index, std::uint32_t stream) const {
        const auto b = bits(entity, index, stream);
        return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
    }

    double uniform(std::uint32_t entity, std::uint32_t index, std::uint32_t stream) const {
        return uniform2(entity, index, stream)[0];
    }

    /// Standard normal via Box-Muller on one counter block.
    double normal(std::uint32_t entity, std::uint32_t index, std::uint32_t stream) const {
        const auto u = uniform2(entity, index, stream);
        return std::sqrt(-2.0 * std::log(u[0])) * std::cos(6.283185307179586476925286766559 * u[1]);
    }

private:
    static double to_unit(std::uint32_t hi, std::uint32_t lo) {
        const std::uint64_t v = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
        return (static_cast<double>(v) + 0.5) * 0x1.0p-53;
    }

    std::array<std::uint32_t, 2> key_;
};

}  // namespace serialcorr::rng
