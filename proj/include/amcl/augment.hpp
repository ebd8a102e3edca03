#pragma once

// Images, binary PNM I/O, the two-view augmentation pipeline and datasets.

#include "amcl/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace amcl {

/// Row-major, channel-interleaved pixels in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 or 3
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// -- PNM (P5 / P6, maxval 255) --

/// Parses a binary PGM (P5) or PPM (P6). Header tokens may be separated by
/// any whitespace and `#` comments. Throws ParseError whose field() is one
/// of: magic, width, height, maxval, dimension, payload.
Image parse_pnm(std::span<const std::uint8_t> bytes);
/// Canonical encoding: "P5\n<w> <h>\n255\n" (or P6) followed by the payload,
/// each value rounded to the nearest of 256 levels.
std::vector<std::uint8_t> write_pnm(const Image& img);

Image read_pnm_file(const std::filesystem::path& path);
void write_pnm_file(const std::filesystem::path& path, const Image& img);

// -- augmentation --

enum class AugOp { crop = 0, blur = 1, gray = 2, jitter = 3, flip = 4 };
inline constexpr std::size_t kAugOpCount = 5;
inline constexpr std::size_t kMinAugSize = 8;

struct AugParams {
  double crop_scale_min = 0.5;  // fraction of image area
  double crop_scale_max = 1.0;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;
  double gray_probability = 0.2;
  double jitter_strength = 0.4;  // brightness/contrast/saturation in [1 - s, 1 + s]
  double flip_probability = 0.5;
};

struct AugPipeline {
  std::vector<AugOp> ops;  // applied in canonical order regardless of listing order
  AugParams params;
  std::size_t output_size = 16;  // square output resolution

  /// The first `n` ops of crop, blur, gray, jitter, flip (1 <= n <= 5).
  static AugPipeline prefix(std::size_t n, AugParams params = {}, std::size_t output_size = 16);
  bool enabled(AugOp op) const;
};

/// Applies the enabled ops in canonical order; op i draws its parameters
/// from a stream seeded by (seed, i). Throws ContractViolation for images
/// smaller than 8x8.
Image augment_view(const Image& img, const AugPipeline& pipeline, std::uint64_t seed);

/// Two independent views seeded by (run_seed, epoch, sample_index, branch).
std::pair<Image, Image> make_two_views(const Image& img, const AugPipeline& pipeline, std::uint64_t epoch,
                                       std::uint64_t sample_index, std::uint64_t run_seed);

// Individual ops, exposed for testing.
Image resize_square(const Image& img, double x0, double y0, double side, std::size_t out);
Image gaussian_blur3(const Image& img, double sigma);
Image grayscale(const Image& img);
Image color_jitter(const Image& img, double brightness, double contrast, double saturation);
Image hflip(const Image& img);

// -- datasets --

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> filenames;

  std::size_t size() const { return images.size(); }
  /// Number of classes: max label + 1.
  std::size_t classes() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Reads `<dir>/labels.csv` (header `filename,label`) and the listed images.
/// Errors name the offending row ("labels.csv row 7").
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Deterministic stratified split: roughly `held_out` of each class goes to
/// the second set.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double held_out, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t size = 16;
  std::size_t channels = 3;
  std::uint64_t seed = 1;
};

/// Class-specific spatial patterns (horizontal stripes, vertical stripes,
/// blob, checkerboard, diagonal stripes, ring; cycled for more classes) with
/// random foreground/background colors, phase, scale, position and pixel noise.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Flattens equally sized images into rows of a {n, w*h*c} matrix.
RowMatrixXd images_to_rows(std::span<const Image> images);

}  // namespace amcl
