#include "latentadv/image_io.hpp"

#include <fstream>
#include <sstream>

#include "latentadv/errors.hpp"
#include "latentadv/steganalysis.hpp"

namespace latentadv {

std::string format_pgm(const Tensor& image, std::size_t rows, std::size_t cols) {
  require(rows >= 1 && cols >= 1 && image.size() == rows * cols, ErrorCode::shape_mismatch,
          "image of " + std::to_string(image.size()) + " pixels is not " + std::to_string(rows) + "x" +
              std::to_string(cols));
  std::ostringstream out;
  out << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out << ' ';
      out << quantize_pixel(image[r * cols + c]);
    }
    out << '\n';
  }
  return out.str();
}

void write_pgm(const Tensor& image, std::size_t rows, std::size_t cols, const std::filesystem::path& path) {
  const std::string text = format_pgm(image, rows, cols);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

GrayImage parse_pgm(const std::string& text) {
  // Tokenize, dropping '#' comments.
  std::vector<std::string> tokens;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream words(line);
    std::string w;
    while (words >> w) tokens.push_back(w);
  }
  require(tokens.size() >= 4 && tokens[0] == "P2", ErrorCode::bad_magic, "not a plain PGM (P2) file");
  auto number = [&](std::size_t i) {
    std::size_t used = 0;
    long value = -1;
    try {
      value = std::stol(tokens[i], &used);
    } catch (const std::exception&) {
    }
    require(used == tokens[i].size() && value >= 0, ErrorCode::invalid_argument, "bad PGM token '" + tokens[i] + "'");
    return static_cast<std::size_t>(value);
  };
  GrayImage img;
  img.cols = number(1);
  img.rows = number(2);
  const std::size_t maxval = number(3);
  require(img.rows >= 1 && img.cols >= 1, ErrorCode::invalid_argument, "PGM has an empty raster");
  require(maxval == 255, ErrorCode::invalid_argument, "only maxval 255 is supported");
  require(tokens.size() == 4 + img.rows * img.cols, ErrorCode::truncated,
          "PGM raster holds " + std::to_string(tokens.size() - 4) + " values, expected " +
              std::to_string(img.rows * img.cols));
  img.pixels = Tensor({img.rows * img.cols});
  for (std::size_t i = 0; i < img.rows * img.cols; ++i) {
    const std::size_t v = number(4 + i);
    require(v <= maxval, ErrorCode::invalid_argument, "PGM value exceeds maxval");
    img.pixels[i] = static_cast<double>(v) / 255.0;
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_pgm(buffer.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

GrayImage compose_strip(const std::vector<Tensor>& images, std::size_t rows, std::size_t cols, std::size_t gap,
                        double fill) {
  require(!images.empty(), ErrorCode::invalid_argument, "strip needs at least one image");
  GrayImage strip;
  strip.rows = rows;
  strip.cols = images.size() * cols + (images.size() - 1) * gap;
  strip.pixels = Tensor({strip.rows * strip.cols}, fill);
  for (std::size_t k = 0; k < images.size(); ++k) {
    require(images[k].size() == rows * cols, ErrorCode::shape_mismatch, "strip images differ in size");
    const std::size_t offset = k * (cols + gap);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) strip.pixels[r * strip.cols + offset + c] = images[k][r * cols + c];
  }
  return strip;
}

}  // namespace latentadv
