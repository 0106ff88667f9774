#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace eenn {

/// SplitMix64 step (Steele, Lea & Flood): state += 0x9E3779B97F4A7C15, then
/// the 30/27/31 xor-shift-multiply finalizer with 0xBF58476D1CE4E5B9 and
/// 0x94D049BB133111EB. Used to seed Rng and to derive child seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Child seed for a named purpose ("data", "init", "shuffle", ...). The tag is
/// folded in with 64-bit FNV-1a, so streams are independent of call order.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) noexcept;

/// xoshiro256** 1.0 (Blackman & Vigna). State is filled from SplitMix64 of the
/// seed. Every random draw in the project goes through this generator, so
/// streams are identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;
    static Rng from_state(const std::array<std::uint64_t, 4>& state) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1): top 53 bits times 2^-53.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) noexcept;
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept;

    /// Fisher-Yates, iterating from the back.
    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace eenn
