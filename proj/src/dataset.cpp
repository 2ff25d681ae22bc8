#include "latentadv/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "latentadv/errors.hpp"

namespace latentadv {

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t n = rows * cols;
  Tensor out({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& image = images.at(indices[r]);
    std::copy(image.data().begin(), image.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return out;
}

void Dataset::validate() const {
  require(images.size() == labels.size(), ErrorCode::count_mismatch,
          "dataset has " + std::to_string(images.size()) + " images but " + std::to_string(labels.size()) +
              " labels");
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].size() == rows * cols, ErrorCode::shape_mismatch, "dataset image has wrong pixel count");
    require(labels[i] < class_count, ErrorCode::invalid_argument, "label out of range");
    for (double v : images[i].data()) {
      require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument, "dataset pixel outside [0,1]");
    }
  }
}

// --- IDX --------------------------------------------------------------------
//
// [offset] [type]          [value]
// 0000     32 bit integer  0x00000803 (images) / 0x00000801 (labels), MSB first
// 0004     32 bit integer  item count
// 0008     32 bit integer  rows      (images only)
// 0012     32 bit integer  columns   (images only)
// ....     unsigned byte   pixels / labels, row-major

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  require(bytes.size() >= offset + 4, ErrorCode::truncated, "'" + path.string() + "' is truncated in its header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

IdxImages parse_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto magic = read_be32(bytes, 0, path);
  require(magic == kImageMagic, ErrorCode::bad_magic, "'" + path.string() + "': bad magic for IDX image file");
  const std::size_t count = read_be32(bytes, 4, path);
  IdxImages out;
  out.rows = read_be32(bytes, 8, path);
  out.cols = read_be32(bytes, 12, path);
  const std::size_t pixels = out.rows * out.cols;
  require(bytes.size() >= 16 + count * pixels, ErrorCode::truncated,
          "'" + path.string() + "' is truncated: expected " + std::to_string(count) + " images");
  out.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(16 + i * pixels);
    out.images.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(pixels));
  }
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto magic = read_be32(bytes, 0, path);
  require(magic == kLabelMagic, ErrorCode::bad_magic, "'" + path.string() + "': bad magic for IDX label file");
  const std::size_t count = read_be32(bytes, 4, path);
  require(bytes.size() >= 8 + count, ErrorCode::truncated,
          "'" + path.string() + "' is truncated: expected " + std::to_string(count) + " labels");
  return {bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(8 + count)};
}

std::vector<double> area_resample(std::span<const double> pixels, std::size_t in_rows, std::size_t in_cols,
                                  std::size_t out_rows, std::size_t out_cols) {
  require(pixels.size() == in_rows * in_cols, ErrorCode::shape_mismatch, "resample input size mismatch");
  // Overlap of output cell [o·s, (o+1)·s) with input cell [i, i+1), s = in/out.
  auto weights = [](std::size_t in, std::size_t out) {
    std::vector<double> w(in * out, 0.0);
    const double step = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double lo = static_cast<double>(o) * step, hi = lo + step;
      for (std::size_t i = 0; i < in; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) w[o * in + i] = overlap / step;
      }
    }
    return w;
  };
  const auto wr = weights(in_rows, out_rows);
  const auto wc = weights(in_cols, out_cols);
  std::vector<double> out(out_rows * out_cols, 0.0);
  for (std::size_t orow = 0; orow < out_rows; ++orow)
    for (std::size_t irow = 0; irow < in_rows; ++irow) {
      const double a = wr[orow * in_rows + irow];
      if (a == 0.0) continue;
      for (std::size_t ocol = 0; ocol < out_cols; ++ocol)
        for (std::size_t icol = 0; icol < in_cols; ++icol) {
          const double b = wc[ocol * in_cols + icol];
          if (b != 0.0) out[orow * out_cols + ocol] += a * b * pixels[irow * in_cols + icol];
        }
    }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Dataset parse_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                  std::size_t rows, std::size_t cols) {
  const auto raw = parse_idx_images(images_path);
  const auto labels = parse_idx_labels(labels_path);
  require(raw.images.size() == labels.size(), ErrorCode::count_mismatch,
          "image file holds " + std::to_string(raw.images.size()) + " images but label file holds " +
              std::to_string(labels.size()) + " labels");
  Dataset out;
  out.rows = rows;
  out.cols = cols;
  out.provenance = "idx-file";
  std::vector<double> scaled(raw.rows * raw.cols);
  for (std::size_t i = 0; i < raw.images.size(); ++i) {
    for (std::size_t p = 0; p < scaled.size(); ++p) scaled[p] = raw.images[i][p] / 255.0;
    auto pixels = (raw.rows == rows && raw.cols == cols) ? scaled
                                                         : area_resample(scaled, raw.rows, raw.cols, rows, cols);
    out.images.push_back(Tensor::vector(std::move(pixels)));
    require(labels[i] < out.class_count, ErrorCode::invalid_argument, "IDX label out of range");
    out.labels.push_back(labels[i]);
  }
  return out;
}

// --- synthetic glyphs -----------------------------------------------------------

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

Stroke ellipse(double cx, double cy, double rx, double ry, int segments = 12) {
  Stroke s;
  for (int k = 0; k <= segments; ++k) {
    const double t = 2.0 * std::numbers::pi * k / segments;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Skeletons in glyph coordinates [0,1]², y pointing down.
const std::array<std::vector<Stroke>, kClassCount>& glyphs() {
  static const std::array<std::vector<Stroke>, kClassCount> table = {{
      {ellipse(0.5, 0.5, 0.38, 0.48)},
      {{{0.55, 0.0}, {0.55, 1.0}}, {{0.3, 0.22}, {0.55, 0.0}}},
      {{{0.1, 0.25}, {0.3, 0.02}, {0.7, 0.02}, {0.9, 0.25}, {0.1, 1.0}, {0.92, 1.0}}},
      {{{0.1, 0.04}, {0.9, 0.04}, {0.45, 0.45}, {0.9, 0.68}, {0.7, 0.98}, {0.1, 0.95}}},
      {{{0.7, 1.0}, {0.7, 0.0}, {0.05, 0.68}, {0.95, 0.68}}},
      {{{0.9, 0.0}, {0.15, 0.0}, {0.1, 0.45}, {0.75, 0.45}, {0.9, 0.75}, {0.7, 1.0}, {0.1, 0.95}}},
      {{{0.8, 0.0}, {0.2, 0.4}, {0.1, 0.75}, {0.4, 1.0}, {0.8, 0.85}, {0.8, 0.6}, {0.45, 0.5}, {0.15, 0.65}}},
      {{{0.05, 0.0}, {0.95, 0.0}, {0.35, 1.0}}},
      {ellipse(0.5, 0.26, 0.3, 0.24), ellipse(0.5, 0.73, 0.36, 0.26)},
      {ellipse(0.5, 0.3, 0.35, 0.28), {{0.85, 0.3}, {0.7, 1.0}}},
  }};
  return table;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

Tensor render_glyph(std::size_t label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double sx = uniform(0.85, 1.1), sy = uniform(0.85, 1.1);
  const double shift_x = uniform(-1.5, 1.5), shift_y = uniform(-1.5, 1.5);
  const double angle = uniform(-0.15, 0.15);
  const double half_width = uniform(0.7, 1.2);
  // Glyph box spans 9 × 12 pixels around the canvas centre.
  const double box_w = 9.0 * sx, box_h = 12.0 * sy;
  const double cx = 8.0 + shift_x, cy = 8.0 + shift_y;
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<Point> points;
  std::vector<std::pair<Point, Point>> segments;
  for (const auto& stroke : glyphs()[label]) {
    for (std::size_t k = 0; k + 1 < stroke.size(); ++k) {
      auto place = [&](Point g) {
        const double lx = (g.x - 0.5) * box_w, ly = (g.y - 0.5) * box_h;
        return Point{cx + ca * lx - sa * ly, cy + sa * lx + ca * ly};
      };
      segments.emplace_back(place(stroke[k]), place(stroke[k + 1]));
    }
  }

  std::normal_distribution<double> noise(0.0, 0.05);
  Tensor image({kImagePixels});
  for (std::size_t r = 0; r < kImageRows; ++r) {
    for (std::size_t c = 0; c < kImageCols; ++c) {
      const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      double d = 1e9;
      for (const auto& [a, b] : segments) d = std::min(d, segment_distance(p, a, b));
      const double ink = std::clamp(half_width - d + 0.5, 0.0, 1.0);
      image[r * kImageCols + c] = std::clamp(ink + noise(rng), 0.0, 1.0);
    }
  }
  return image;
}

}  // namespace

Dataset synthetic_dataset(std::uint64_t seed, std::size_t per_class) {
  require(per_class >= 1, ErrorCode::invalid_argument, "synthetic_dataset needs per_class >= 1");
  std::mt19937_64 rng(seed);
  Dataset out;
  out.provenance = "synthetic(seed=" + std::to_string(seed) + ")";
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t label = 0; label < kClassCount; ++label) {
      out.images.push_back(render_glyph(label, rng));
      out.labels.push_back(label);
    }
  }
  return out;
}

namespace {

Dataset take_per_class(const Dataset& full, std::size_t per_class) {
  Dataset out;
  out.rows = full.rows;
  out.cols = full.cols;
  out.provenance = full.provenance;
  std::vector<std::size_t> taken(full.class_count, 0);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (taken[full.labels[i]] >= per_class) continue;
    ++taken[full.labels[i]];
    out.images.push_back(full.images[i]);
    out.labels.push_back(full.labels[i]);
  }
  return out;
}

}  // namespace

DataSplit load_data(std::uint64_t seed, std::size_t train_per_class, std::size_t test_per_class,
                    const std::optional<std::filesystem::path>& data_dir) {
  std::optional<std::filesystem::path> dir = data_dir;
  if (!dir) {
    if (const char* env = std::getenv(kDataDirEnv); env && *env) dir = std::filesystem::path(env);
  }
  if (dir) {
    const auto train_images = *dir / "train-images-idx3-ubyte";
    const auto train_labels = *dir / "train-labels-idx1-ubyte";
    const auto test_images = *dir / "t10k-images-idx3-ubyte";
    const auto test_labels = *dir / "t10k-labels-idx1-ubyte";
    if (std::filesystem::exists(train_images) && std::filesystem::exists(train_labels) &&
        std::filesystem::exists(test_images) && std::filesystem::exists(test_labels)) {
      return {take_per_class(parse_idx(train_images, train_labels), train_per_class),
              take_per_class(parse_idx(test_images, test_labels), test_per_class)};
    }
  }
  return {synthetic_dataset(seed, train_per_class), synthetic_dataset(seed ^ 0x5DEECE66DULL, test_per_class)};
}

}  // namespace latentadv
