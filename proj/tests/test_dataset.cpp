#include "doctest.h"

#include <cstdint>
#include <fstream>
#include <vector>

#include "latentadv/dataset.hpp"
#include "latentadv/errors.hpp"
#include "support.hpp"

using namespace latentadv;

namespace {

// Four 2×2 images.
const std::vector<std::uint8_t> kImageBytes = {
    0x00, 0x00, 0x08, 0x03,  // magic
    0x00, 0x00, 0x00, 0x04,  // count
    0x00, 0x00, 0x00, 0x02,  // rows
    0x00, 0x00, 0x00, 0x02,  // cols
    0x00, 0xFF, 0x80, 0x01,  // image 0
    0xFF, 0xFF, 0xFF, 0xFF,  // image 1
    0x00, 0x00, 0x00, 0x00,  // image 2
    0x10, 0x20, 0x30, 0x40,  // image 3
};

const std::vector<std::uint8_t> kLabelBytes = {
    0x00, 0x00, 0x08, 0x01,  // magic
    0x00, 0x00, 0x00, 0x04,  // count
    0x07, 0x00, 0x09, 0x03,
};

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("IDX fixture parses to the enumerated pixels") {
  testing::TempDir dir("idx");
  write_bytes(dir.path() / "img", kImageBytes);
  write_bytes(dir.path() / "lbl", kLabelBytes);

  const IdxImages raw = parse_idx_images(dir.path() / "img");
  CHECK(raw.rows == 2);
  CHECK(raw.cols == 2);
  REQUIRE(raw.images.size() == 4);
  CHECK(raw.images[0] == std::vector<std::uint8_t>{0, 255, 128, 1});
  CHECK(raw.images[3] == std::vector<std::uint8_t>{16, 32, 48, 64});
  CHECK(parse_idx_labels(dir.path() / "lbl") == std::vector<std::uint8_t>{7, 0, 9, 3});

  const Dataset d = parse_idx(dir.path() / "img", dir.path() / "lbl", 2, 2);
  REQUIRE(d.size() == 4);
  CHECK(d.labels == std::vector<std::size_t>{7, 0, 9, 3});
  const double expected[4][4] = {{0, 255, 128, 1}, {255, 255, 255, 255}, {0, 0, 0, 0}, {16, 32, 48, 64}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(d.images[i][j] == doctest::Approx(expected[i][j] / 255.0).epsilon(1e-15));
  CHECK(d.provenance == "idx-file");

  // Area downsampling to a single pixel is the mean.
  const Dataset one = parse_idx(dir.path() / "img", dir.path() / "lbl", 1, 1);
  CHECK(one.images[0][0] == doctest::Approx(384.0 / 4.0 / 255.0).epsilon(1e-14));
  CHECK(one.images[3][0] == doctest::Approx(160.0 / 4.0 / 255.0).epsilon(1e-14));
}

TEST_CASE("IDX negative cases") {
  testing::TempDir dir("idxbad");
  std::vector<std::uint8_t> bad = kImageBytes;
  bad[2] = bad[3] = 0;
  write_bytes(dir.path() / "magic", bad);
  CHECK(error_of([&] { parse_idx_images(dir.path() / "magic"); }) == ErrorCode::bad_magic);

  write_bytes(dir.path() / "empty", {});
  CHECK(error_of([&] { parse_idx_images(dir.path() / "empty"); }) == ErrorCode::truncated);
  CHECK(error_of([&] { parse_idx_labels(dir.path() / "empty"); }) == ErrorCode::truncated);

  std::vector<std::uint8_t> cut(kImageBytes.begin(), kImageBytes.end() - 1);
  write_bytes(dir.path() / "cut", cut);
  CHECK(error_of([&] { parse_idx_images(dir.path() / "cut"); }) == ErrorCode::truncated);

  write_bytes(dir.path() / "img", kImageBytes);
  std::vector<std::uint8_t> three = {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3};
  write_bytes(dir.path() / "three", three);
  CHECK(error_of([&] { parse_idx(dir.path() / "img", dir.path() / "three"); }) == ErrorCode::count_mismatch);

  CHECK(error_of([&] { parse_idx_labels(dir.path() / "img"); }) == ErrorCode::bad_magic);
  CHECK(error_of([&] { parse_idx_images(dir.path() / "missing"); }) == ErrorCode::io);
}

TEST_CASE("area resampling") {
  std::vector<double> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<double>(i + 1) / 16.0;
  const auto out = area_resample(px, 4, 4, 2, 2);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == doctest::Approx(3.5 / 16));
  CHECK(out[1] == doctest::Approx(5.5 / 16));
  CHECK(out[2] == doctest::Approx(11.5 / 16));
  CHECK(out[3] == doctest::Approx(13.5 / 16));
  // 3 → 2 splits the middle source pixel between both targets.
  const std::vector<double> row = {0, 0.3, 0.6};
  const auto r = area_resample(row, 1, 3, 1, 2);
  CHECK(r[0] == doctest::Approx(0.1));
  CHECK(r[1] == doctest::Approx(0.5));
}

TEST_CASE("synthetic dataset") {
  const Dataset a = synthetic_dataset(3, 4);
  const Dataset b = synthetic_dataset(3, 4);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 40);
  CHECK(a.provenance == "synthetic(seed=3)");
  a.validate();
  const Dataset c = synthetic_dataset(4, 4);
  CHECK(c.labels == a.labels);
  CHECK_FALSE(c.images == a.images);
  CHECK_THROWS_AS(synthetic_dataset(1, 0), Error);
}

TEST_CASE("load_data falls back to synthetic data") {
  testing::TempDir dir("nodata");
  const DataSplit split = load_data(2, 3, 2, dir.path());
  CHECK(split.train.size() == 30);
  CHECK(split.test.size() == 20);
  CHECK(split.train.provenance.rfind("synthetic", 0) == 0);
}
