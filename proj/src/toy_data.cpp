#include "jnflow/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "jnflow/rng.hpp"

namespace jnflow {

namespace {

void check_width(int width, const char* op) {
  if (width < kMinWidth || width > kMaxWidth)
    throw ContractViolation(std::string(op) + ": width " + std::to_string(width) + " outside [" +
                            std::to_string(kMinWidth) + ", " + std::to_string(kMaxWidth) + "]");
}

}  // namespace

Image rasterize_square(int width, bool filled) {
  check_width(width, "rasterize_square");
  Image img{};
  const int start = (kImageSide - width) / 2;
  const int end = start + width - 1;
  for (int r = start; r <= end; ++r)
    for (int c = start; c <= end; ++c) {
      const bool border = r == start || r == end || c == start || c == end;
      if (filled || border) img[static_cast<std::size_t>(r * kImageSide + c)] = 1;
    }
  return img;
}

Image rasterize_circle(int width, bool filled) {
  check_width(width, "rasterize_circle");
  Image img{};
  const double radius = width / 2.0;
  const double center = (kImageSide - 1) / 2.0;
  for (int r = 0; r < kImageSide; ++r)
    for (int c = 0; c < kImageSide; ++c) {
      const double dr = r - center, dc = c - center;
      const double dist = std::sqrt(dr * dr + dc * dc);
      const bool on = filled ? dist <= radius : (dist >= radius - 1.0 && dist <= radius);
      if (on) img[static_cast<std::size_t>(r * kImageSide + c)] = 1;
    }
  return img;
}

ShapeSample generate_sample(std::uint64_t seed, std::size_t index) {
  // The pair stream decides which member of (2p, 2p + 1) is full.
  Rng pair_rng = make_rng(seed, 2 * (index / 2));
  const bool even_is_full = std::bernoulli_distribution(0.5)(pair_rng);
  const bool full = (index % 2 == 0) == even_is_full;

  Rng rng = make_rng(seed, 2 * index + 1);
  std::uniform_int_distribution<int> width(kMinWidth, kMaxWidth);
  ShapeSample s;
  s.shape_class = full ? ShapeClass::Full : ShapeClass::Empty;
  s.square_width = width(rng);
  s.circle_width = width(rng);
  s.square = rasterize_square(s.square_width, full);
  s.circle = rasterize_circle(s.circle_width, full);
  return s;
}

ToyDataset generate_dataset(const ToyDatasetConfig& cfg) {
  if (cfg.n_samples % 2 != 0)
    throw ContractViolation("generate_dataset: n_samples must be even, got " + std::to_string(cfg.n_samples));
  ToyDataset data;
  data.seed = cfg.seed;
  data.samples.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) data.samples.push_back(generate_sample(cfg.seed, i));
  return data;
}

ShapeClass interior_class(const Image& img) {
  return img[15 * kImageSide + 15] ? ShapeClass::Full : ShapeClass::Empty;
}

int bounding_width(const Image& img) {
  int lo = kImageSide, hi = -1;
  for (int r = 0; r < kImageSide; ++r)
    for (int c = 0; c < kImageSide; ++c)
      if (img[static_cast<std::size_t>(r * kImageSide + c)]) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
  return hi < lo ? 0 : hi - lo + 1;
}

void write_dataset(const std::filesystem::path& path, const ToyDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "JNF-TOY v1 n=" << data.size() << " seed=" << data.seed << '\n';
  std::string line(kImagePixels, '0');
  for (const auto& s : data.samples) {
    for (const Image* img : {&s.square, &s.circle}) {
      for (int i = 0; i < kImagePixels; ++i) line[static_cast<std::size_t>(i)] = (*img)[static_cast<std::size_t>(i)] ? '1' : '0';
      out << line << '\n';
    }
    out << (s.shape_class == ShapeClass::Full ? 'F' : 'E') << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ToyDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string header;
  std::getline(in, header);
  std::size_t n = 0;
  std::uint64_t seed = 0;
  {
    std::istringstream hs(header);
    std::string magic, version, n_field, seed_field;
    hs >> magic >> version >> n_field >> seed_field;
    if (magic != "JNF-TOY" || version != "v1" || n_field.rfind("n=", 0) != 0 || seed_field.rfind("seed=", 0) != 0)
      throw std::runtime_error(path.string() + ": bad dataset header '" + header + "'");
    n = std::stoull(n_field.substr(2));
    seed = std::stoull(seed_field.substr(5));
  }
  ToyDataset data;
  data.seed = seed;
  data.samples.reserve(n);
  std::string line;
  auto parse_image = [&](Image& img, std::size_t idx) {
    if (!std::getline(in, line) || line.size() != kImagePixels)
      throw std::runtime_error(path.string() + ": sample " + std::to_string(idx) + " has a malformed image row");
    for (int i = 0; i < kImagePixels; ++i) {
      const char ch = line[static_cast<std::size_t>(i)];
      if (ch != '0' && ch != '1')
        throw std::runtime_error(path.string() + ": sample " + std::to_string(idx) + " has a non-binary pixel");
      img[static_cast<std::size_t>(i)] = ch == '1';
    }
  };
  for (std::size_t k = 0; k < n; ++k) {
    ShapeSample s;
    parse_image(s.square, k);
    parse_image(s.circle, k);
    if (!std::getline(in, line) || (line != "F" && line != "E"))
      throw std::runtime_error(path.string() + ": sample " + std::to_string(k) + " has a bad class line");
    s.shape_class = line == "F" ? ShapeClass::Full : ShapeClass::Empty;
    s.square_width = bounding_width(s.square);
    s.circle_width = bounding_width(s.circle);
    data.samples.push_back(s);
  }
  return data;
}

Tensor image_row(const Image& img) {
  Tensor t({1, static_cast<std::size_t>(kImagePixels)});
  for (int i = 0; i < kImagePixels; ++i) t[static_cast<std::size_t>(i)] = img[static_cast<std::size_t>(i)];
  return t;
}

Tensor modality_matrix(const ToyDataset& data, int modality, std::span<const std::size_t> indices) {
  if (modality != 0 && modality != 1) throw ContractViolation("modality_matrix: modality must be 0 or 1");
  Tensor t({indices.size(), static_cast<std::size_t>(kImagePixels)});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& s = data.samples.at(indices[r]);
    const Image& img = modality == 0 ? s.square : s.circle;
    for (int i = 0; i < kImagePixels; ++i)
      t[r * kImagePixels + static_cast<std::size_t>(i)] = img[static_cast<std::size_t>(i)];
  }
  return t;
}

std::vector<std::size_t> all_indices(const ToyDataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

int modality_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kModalityNames.size(); ++i)
    if (name == kModalityNames[i]) return static_cast<int>(i);
  throw ConfigError("unknown modality '" + name + "' (expected square or circle)");
}

}  // namespace jnflow
