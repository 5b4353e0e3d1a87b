#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jnflow/tensor.hpp"

namespace jnflow {

inline constexpr int kImageSide = 32;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kMinWidth = 10;
inline constexpr int kMaxWidth = 28;

using Image = std::array<std::uint8_t, kImagePixels>;

enum class ShapeClass : std::uint8_t { Full, Empty };

struct ShapeSample {
  Image square{};
  Image circle{};
  ShapeClass shape_class = ShapeClass::Full;
  int square_width = 0;
  int circle_width = 0;
};

struct ToyDatasetConfig {
  std::size_t n_samples = 20000;
  std::uint64_t seed = 0;
};

struct ToyDataset {
  std::uint64_t seed = 0;
  std::vector<ShapeSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Axis-aligned square in a window starting at floor((32 - width) / 2).
/// Filled squares light every pixel of the window; empty ones only the
/// one-pixel border.
Image rasterize_square(int width, bool filled);

/// Pixel (r, c) lights iff its distance d to (15.5, 15.5) satisfies
/// d <= width / 2 (filled) or width / 2 - 1 <= d <= width / 2 (ring).
Image rasterize_circle(int width, bool filled);

/// Sample `index` of the dataset keyed by `seed`, independent of every other
/// index. Samples 2p and 2p + 1 always carry opposite classes, so any even
/// count is exactly balanced.
ShapeSample generate_sample(std::uint64_t seed, std::size_t index);

ToyDataset generate_dataset(const ToyDatasetConfig& cfg);

/// Class read off the interior pixel (15, 15).
ShapeClass interior_class(const Image& img);

/// Width of the lit bounding box (exact for squares).
int bounding_width(const Image& img);

/// Header `JNF-TOY v1 n=<n> seed=<s>`; then per sample three lines: the
/// square's 1024 pixels, the circle's 1024 pixels, and the class letter
/// (F or E).
void write_dataset(const std::filesystem::path& path, const ToyDataset& data);
ToyDataset read_dataset(const std::filesystem::path& path);

/// (count x 1024) matrix of 0/1 pixels for one modality (0 square,
/// 1 circle) at the given sample indices.
Tensor modality_matrix(const ToyDataset& data, int modality, std::span<const std::size_t> indices);
Tensor image_row(const Image& img);

/// All sample indices 0..n-1.
std::vector<std::size_t> all_indices(const ToyDataset& data);

inline constexpr std::array<const char*, 2> kModalityNames{"square", "circle"};
int modality_from_name(const std::string& name);

}  // namespace jnflow
