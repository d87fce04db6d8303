#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seqadv/tensor.hpp"

namespace seqadv {

class FormatError : public Error {
 public:
  using Error::Error;
};

namespace data {

inline constexpr std::size_t kDigitSize = 28;
inline constexpr std::size_t kSeqHeight = 32;
inline constexpr std::size_t kSeqWidth = 100;
inline constexpr std::size_t kSeqDigitHeight = 24;
inline constexpr std::size_t kSeqGap = 1;
inline constexpr std::size_t kSeqMinLength = 3;
inline constexpr std::size_t kSeqMaxLength = 6;

/// Offset added to test-split indices so sample indices are unique across splits.
inline constexpr std::size_t kTestIndexOffset = 60000;

/// One MNIST digit, pixels [28, 28] in [-1, 1].
struct ImageSample {
  grad::Tensor pixels;
  int label = 0;
  std::size_t index = 0;
};

struct DigitPlacement {
  std::size_t source = 0;  // ImageSample::index
  std::size_t left = 0;    // first column
  std::size_t width = 0;
};

/// Concatenated digits, pixels [32, 100] in [-1, 1].
struct SeqSample {
  grad::Tensor pixels;
  std::string digits;
  std::vector<DigitPlacement> placements;
};

enum class Split { train, test };

double normalize(std::uint8_t byte);

/// round((x + 1) * 127.5), half-up, clamped to [0, 255].
std::uint8_t denormalize(double x);
std::vector<std::uint8_t> denormalize(const grad::Tensor& image);

/// Decodes a big-endian IDX image/label pair (magics 2051 / 2049, 28x28 images).
std::vector<ImageSample> load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                                  std::size_t index_offset = 0);

/// Images of an IDX image file without labels; any rows x cols.
std::vector<grad::Tensor> load_idx_images(const std::filesystem::path& images);

/// Loads one split from a directory holding the standard MNIST file names.
std::vector<ImageSample> load_mnist(const std::filesystem::path& dir, Split split);

/// Deterministic SeqMNIST synthesis: 3-6 digits drawn with replacement from `mnist`,
/// scaled to height 24 (smaller when the strip would overflow 100 columns),
/// 1-pixel gaps, random left margin, vertically centred on a -1 background.
std::vector<SeqSample> synth_seqmnist(std::span<const ImageSample> mnist, std::size_t count, std::uint64_t seed);

/// Binary PGM (P5, maxval 255) of a [H, W] image in [-1, 1].
void write_pgm(const std::filesystem::path& path, const grad::Tensor& image);
std::string encode_pgm(const grad::Tensor& image);
/// Reads a binary PGM into a [H, W] tensor in [-1, 1].
grad::Tensor read_pgm(const std::filesystem::path& path);

}  // namespace data
}  // namespace seqadv
