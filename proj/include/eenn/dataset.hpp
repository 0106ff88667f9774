#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "eenn/tensor.hpp"

namespace eenn {

enum class Split : std::uint8_t { Train, Val, Test };

/// Labelled feature matrix. Labels are 0-based in memory and 1-based on disk.
struct Dataset {
    Tensor features;
    std::vector<int> labels;
    std::vector<Split> splits;
    std::size_t classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    std::vector<std::size_t> indices(Split split) const;
    /// Class counts over the given split (all rows when split is empty).
    std::vector<std::size_t> histogram(std::optional<Split> split = std::nullopt) const;
};

/// Parses "label,f0,f1,..." with 1-based labels. When `classes` is empty the
/// class count is the largest label seen. Errors name the offending line.
Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> classes = std::nullopt);
void save_csv(const Dataset& data, const std::filesystem::path& path);

/// Gaussian mixtures arranged hierarchically. `coarse_groups` group centres
/// sit at distance `coarse_scale` from the origin; class c belongs to group
/// c mod groups and owns `modes_per_class` blob centres, each offset from the
/// group centre by `fine_scale` along a random direction. Centres use only
/// the first `latent_dim` coordinates. Samples add isotropic noise of std
/// `spread`. Shallow features separate the groups early; the interleaved
/// fine classes need more capacity.
struct SynthSpec {
    std::size_t classes = 8;
    std::size_t dim = 32;
    std::size_t per_class = 200;
    double spread = 0.3;
    std::size_t coarse_groups = 4;
    double coarse_scale = 3.0;
    double fine_scale = 2.0;
    /// Each class is a union of this many blobs, so deeper exits have
    /// non-linear structure to exploit.
    std::size_t modes_per_class = 4;
    /// Centres live in the first `latent_dim` coordinates (0 = all of them);
    /// the remaining coordinates carry noise only.
    std::size_t latent_dim = 4;

    bool operator==(const SynthSpec&) const = default;
};

/// Every row is tagged Train; call assign_splits afterwards.
Dataset synth_blobs(std::uint64_t seed, const SynthSpec& spec);

/// Seeded shuffle of all rows; the first `test_fraction` become Test, and the
/// last `validation_fraction` of the remainder become Val. Fails if a class is
/// missing from Train.
void assign_splits(Dataset& data, double test_fraction, double validation_fraction, std::uint64_t seed);

/// Row-subset of a dataset as dense training arrays.
struct SplitData {
    Tensor x;
    std::vector<int> y;
    std::size_t size() const noexcept { return y.size(); }
};

SplitData take(const Dataset& data, Split split);

}  // namespace eenn
