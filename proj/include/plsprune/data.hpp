#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace plsprune {

/// Channels-height-width geometry of one sample.
struct Shape3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t size() const { return channels * height * width; }
    bool operator==(const Shape3&) const = default;
};

/// Immutable labelled image set. Pixels are reals in [0,1], stored
/// sample-major as (n, channels, height, width).
struct Dataset {
    Shape3 shape;
    std::size_t count = 0;
    std::vector<double> images;  // count * shape.size() values
    std::vector<int> labels;     // count entries in [0, class_count)
    int class_count = 0;

    std::span<const double> sample(std::size_t i) const {
        return {images.data() + i * shape.size(), shape.size()};
    }
};

/// Declared value range of CSV pixels.
enum class PixelRange { Unit, Byte };

/// Reads a big-endian IDX image/label file pair (magic 0x00000803 and
/// 0x00000801). Pixel bytes are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

/// Reads rows of `label, pixel_0, ..., pixel_{CHW-1}`. A non-numeric
/// first row is treated as a header and skipped.
Dataset load_csv(const std::filesystem::path& path, Shape3 image_shape,
                 PixelRange range = PixelRange::Byte);

/// Deterministic synthetic dataset: k classes of oriented bars at
/// class-dependent angles with seeded position jitter and pixel noise.
/// Classes are balanced (counts differ by at most 1).
Dataset synthetic(std::size_t n, int k, Shape3 shape, std::uint64_t seed);

/// Draws floor(fraction*n) rows uniformly without replacement, seeded.
/// Original relative order is preserved.
Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed);

/// Disjoint, exhaustive, seeded split; train gets floor(train_frac*n) rows.
struct Split {
    Dataset train;
    Dataset heldout;
};
Split split(const Dataset& ds, double train_frac, std::uint64_t seed);

}  // namespace plsprune
