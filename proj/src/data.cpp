#include "seqadv/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "seqadv/rng.hpp"

namespace seqadv::data {

double normalize(std::uint8_t byte) { return static_cast<double>(byte) / 127.5 - 1.0; }

std::uint8_t denormalize(double x) {
  const double v = std::floor((x + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

std::vector<std::uint8_t> denormalize(const grad::Tensor& image) {
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = denormalize(image[i]);
  return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

std::vector<ImageSample> load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                                  std::size_t index_offset) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  if (img.size() < 16) throw FormatError(fmt::format("{}: truncated IDX header", images.string()));
  if (lab.size() < 8) throw FormatError(fmt::format("{}: truncated IDX header", labels.string()));
  if (be32(img, 0) != 2051) {
    throw FormatError(fmt::format("{}: wrong magic {} (expected 2051)", images.string(), be32(img, 0)));
  }
  if (be32(lab, 0) != 2049) {
    throw FormatError(fmt::format("{}: wrong magic {} (expected 2049)", labels.string(), be32(lab, 0)));
  }
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  if (rows != kDigitSize || cols != kDigitSize) {
    throw FormatError(fmt::format("{}: images are {}x{}, expected 28x28", images.string(), rows, cols));
  }
  if (be32(lab, 4) != n) {
    throw FormatError(fmt::format("dim mismatch: {} images but {} labels", n, be32(lab, 4)));
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n * pixels) throw FormatError(fmt::format("{}: truncated payload", images.string()));
  if (lab.size() < 8 + n) throw FormatError(fmt::format("{}: truncated payload", labels.string()));

  std::vector<ImageSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad::Tensor t({rows, cols});
    for (std::size_t p = 0; p < pixels; ++p) t[p] = normalize(img[16 + i * pixels + p]);
    const int label = lab[8 + i];
    if (label > 9) throw FormatError(fmt::format("{}: label {} at {} outside [0, 9]", labels.string(), label, i));
    out.push_back({std::move(t), label, index_offset + i});
  }
  return out;
}

std::vector<grad::Tensor> load_idx_images(const std::filesystem::path& images) {
  const auto img = read_bytes(images);
  if (img.size() < 16) throw FormatError(fmt::format("{}: truncated IDX header", images.string()));
  if (be32(img, 0) != 2051) {
    throw FormatError(fmt::format("{}: wrong magic {} (expected 2051)", images.string(), be32(img, 0)));
  }
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  if (img.size() < 16 + n * rows * cols) throw FormatError(fmt::format("{}: truncated payload", images.string()));
  std::vector<grad::Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    grad::Tensor t({rows, cols});
    for (std::size_t p = 0; p < rows * cols; ++p) t[p] = normalize(img[16 + i * rows * cols + p]);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ImageSample> load_mnist(const std::filesystem::path& dir, Split split) {
  if (split == Split::train) {
    return load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", 0);
  }
  return load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", kTestIndexOffset);
}

namespace {

// Area-averaging resample of a square n x n image to size x size.
std::vector<double> resample(const grad::Tensor& src, std::size_t size) {
  const std::size_t n = src.shape()[0];
  const double scale = static_cast<double>(n) / static_cast<double>(size);
  // Overlap weights of output cell i with source cell j along one axis.
  std::vector<std::vector<std::pair<std::size_t, double>>> weights(size);
  for (std::size_t i = 0; i < size; ++i) {
    const double lo = static_cast<double>(i) * scale;
    const double hi = lo + scale;
    for (auto j = static_cast<std::size_t>(lo); j < n && static_cast<double>(j) < hi; ++j) {
      const double w = std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
      if (w > 0.0) weights[i].emplace_back(j, w / scale);
    }
  }
  std::vector<double> out(size * size, 0.0);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double acc = 0.0;
      for (const auto& [sr, wr] : weights[r]) {
        for (const auto& [sc, wc] : weights[c]) acc += wr * wc * src[sr * n + sc];
      }
      out[r * size + c] = std::clamp(acc, -1.0, 1.0);
    }
  }
  return out;
}

}  // namespace

std::vector<SeqSample> synth_seqmnist(std::span<const ImageSample> mnist, std::size_t count, std::uint64_t seed) {
  if (mnist.empty()) throw Error("synth_seqmnist: empty source set");
  Rng rng(seed);
  std::vector<SeqSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t k = kSeqMinLength + rng.below(kSeqMaxLength - kSeqMinLength + 1);
    std::vector<const ImageSample*> picks(k);
    for (auto& p : picks) p = &mnist[rng.below(mnist.size())];

    const std::size_t gaps = (k - 1) * kSeqGap;
    const std::size_t size = std::min(kSeqDigitHeight, (kSeqWidth - gaps) / k);
    const std::size_t strip = k * size + gaps;
    const std::size_t margin = rng.below(kSeqWidth - strip + 1);
    const std::size_t top = (kSeqHeight - size) / 2;

    SeqSample sample{grad::Tensor({kSeqHeight, kSeqWidth}, -1.0), {}, {}};
    std::size_t left = margin;
    for (const ImageSample* digit : picks) {
      const auto cell = resample(digit->pixels, size);
      for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) sample.pixels[(top + r) * kSeqWidth + left + c] = cell[r * size + c];
      }
      sample.digits.push_back(static_cast<char>('0' + digit->label));
      sample.placements.push_back({digit->index, left, size});
      left += size + kSeqGap;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::string encode_pgm(const grad::Tensor& image) {
  if (image.rank() != 2) throw ShapeError(fmt::format("pgm: expected [H, W], got {}", grad::shape_str(image.shape())));
  const auto bytes = denormalize(image);
  std::string out = fmt::format("P5\n{} {}\n255\n", image.shape()[1], image.shape()[0]);
  out.append(bytes.begin(), bytes.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const grad::Tensor& image) {
  const std::string encoded = encode_pgm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out.write(encoded.data(), static_cast<std::streamsize>(encoded.size()));
  if (!out) throw Error(fmt::format("write failed: {}", path.string()));
}

grad::Tensor read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  // Header tokens separated by whitespace, '#' comments allowed.
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw FormatError(fmt::format("{}: bad PGM {} '{}'", path.string(), what, t));
    }
    return std::stoul(t);
  };
  if (token() != "P5") throw FormatError(fmt::format("{}: not a binary PGM", path.string()));
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  if (number("maxval") != 255) throw FormatError(fmt::format("{}: only maxval 255 is supported", path.string()));
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + width * height) throw FormatError(fmt::format("{}: truncated PGM raster", path.string()));
  grad::Tensor image({height, width});
  for (std::size_t i = 0; i < width * height; ++i) image[i] = normalize(bytes[pos + i]);
  return image;
}

}  // namespace seqadv::data
