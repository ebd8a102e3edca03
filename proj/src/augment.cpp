#include "amcl/augment.hpp"

#include "amcl/errors.hpp"
#include "amcl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace amcl {

// -- PNM --

namespace {

// Largest accepted width, height or total sample count.
constexpr std::uint64_t kMaxExtent = 1u << 24;

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (is_space(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::uint64_t number(const char* field) {
    skip_separators();
    if (pos_ >= bytes_.size()) throw ParseError(field, "missing value (end of header)");
    if (bytes_[pos_] < '0' || bytes_[pos_] > '9') {
      throw ParseError(field, std::string("expected a decimal integer, found '") + static_cast<char>(bytes_[pos_]) + "'");
    }
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > kMaxExtent * 1024) throw ParseError("dimension", std::string(field) + " value overflows");
      ++pos_;
    }
    if (pos_ < bytes_.size() && !is_space(bytes_[pos_]) && bytes_[pos_] != '#') {
      throw ParseError(field, "value is not followed by whitespace");
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image parse_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("magic", "unsupported magic");
  std::size_t channels = 0;
  if (bytes[1] == '5') channels = 1;
  else if (bytes[1] == '6') channels = 3;
  else throw ParseError("magic", "unsupported magic P" + std::string(1, static_cast<char>(bytes[1])));
  if (bytes.size() > 2 && !is_space(bytes[2]) && bytes[2] != '#') throw ParseError("magic", "unsupported magic");

  HeaderReader r(bytes.subspan(2));
  const std::uint64_t width = r.number("width");
  const std::uint64_t height = r.number("height");
  if (width == 0) throw ParseError("width", "must be positive");
  if (height == 0) throw ParseError("height", "must be positive");
  if (width > kMaxExtent || height > kMaxExtent || width * height * channels > kMaxExtent) {
    throw ParseError("dimension", std::to_string(width) + "x" + std::to_string(height) + " exceeds the supported size");
  }
  const std::uint64_t maxval = r.number("maxval");
  if (maxval != 255) throw ParseError("maxval", "expected 255, got " + std::to_string(maxval));
  if (2 + r.pos() < bytes.size() && !is_space(bytes[2 + r.pos()])) {
    throw ParseError("maxval", "must be followed by a single whitespace byte");
  }
  // Exactly one whitespace byte separates maxval from the payload.
  const std::size_t start = 2 + r.pos() + 1;
  if (2 + r.pos() >= bytes.size()) throw ParseError("payload", "missing");
  const std::size_t need = static_cast<std::size_t>(width * height * channels);
  if (bytes.size() < start + need) {
    throw ParseError("payload", "truncated: expected " + std::to_string(need) + " bytes, got " +
                                    std::to_string(bytes.size() - std::min(bytes.size(), start)));
  }
  Image img(width, height, channels);
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = bytes[start + i] / 255.0;
  return img;
}

std::vector<std::uint8_t> write_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractViolation("write_pnm: channels must be 1 or 3");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.pixels.size());
  for (const double v : img.pixels) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

Image read_pnm_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pnm(bytes);
}

void write_pnm_file(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = write_pnm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// -- augmentation ops --

namespace {

double luma(const Image& img, std::size_t x, std::size_t y) {
  if (img.channels == 1) return img.at(x, y, 0);
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return static_cast<std::size_t>(-i);
  if (i >= static_cast<std::ptrdiff_t>(n)) return 2 * n - 2 - static_cast<std::size_t>(i);
  return static_cast<std::size_t>(i);
}

}  // namespace

Image resize_square(const Image& img, double x0, double y0, double side, std::size_t out) {
  Image res(out, out, img.channels);
  const double scale = side / static_cast<double>(out);
  const double max_x = static_cast<double>(img.width - 1);
  const double max_y = static_cast<double>(img.height - 1);
  for (std::size_t oy = 0; oy < out; ++oy) {
    const double sy = std::clamp(y0 + (oy + 0.5) * scale - 0.5, 0.0, max_y);
    const auto y_lo = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y_hi = std::min(y_lo + 1, img.height - 1);
    const double fy = sy - y_lo;
    for (std::size_t ox = 0; ox < out; ++ox) {
      const double sx = std::clamp(x0 + (ox + 0.5) * scale - 0.5, 0.0, max_x);
      const auto x_lo = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x_hi = std::min(x_lo + 1, img.width - 1);
      const double fx = sx - x_lo;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1 - fx) * img.at(x_lo, y_lo, c) + fx * img.at(x_hi, y_lo, c);
        const double bottom = (1 - fx) * img.at(x_lo, y_hi, c) + fx * img.at(x_hi, y_hi, c);
        res.at(ox, oy, c) = (1 - fy) * top + fy * bottom;
      }
    }
  }
  clamp_unit(res);
  return res;
}

Image gaussian_blur3(const Image& img, double sigma) {
  const double side = std::exp(-1.0 / (2.0 * sigma * sigma));
  const double k[3] = {side / (1 + 2 * side), 1 / (1 + 2 * side), side / (1 + 2 * side)};
  Image tmp(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int d = -1; d <= 1; ++d) acc += k[d + 1] * img.at(reflect(static_cast<std::ptrdiff_t>(x) + d, img.width), y, c);
        tmp.at(x, y, c) = acc;
      }
    }
  }
  Image out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int d = -1; d <= 1; ++d) acc += k[d + 1] * tmp.at(x, reflect(static_cast<std::ptrdiff_t>(y) + d, img.height), c);
        out.at(x, y, c) = acc;
      }
    }
  }
  clamp_unit(out);
  return out;
}

Image grayscale(const Image& img) {
  Image out = img;
  if (img.channels == 1) return out;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double g = luma(img, x, y);
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = g;
    }
  }
  return out;
}

Image color_jitter(const Image& img, double brightness, double contrast, double saturation) {
  Image out = img;
  for (auto& v : out.pixels) v *= brightness;
  clamp_unit(out);

  double mean = 0.0;
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) mean += luma(out, x, y);
  }
  mean /= static_cast<double>(out.width * out.height);
  for (auto& v : out.pixels) v = (v - mean) * contrast + mean;
  clamp_unit(out);

  if (out.channels == 3) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const double g = luma(out, x, y);
        for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = g + (out.at(x, y, c) - g) * saturation;
      }
    }
    clamp_unit(out);
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    }
  }
  return out;
}

// -- pipeline --

AugPipeline AugPipeline::prefix(std::size_t n, AugParams params, std::size_t output_size) {
  if (n < 1 || n > kAugOpCount) {
    throw ContractViolation("augmentation prefix length must be in [1, 5], got " + std::to_string(n));
  }
  AugPipeline p;
  for (std::size_t i = 0; i < n; ++i) p.ops.push_back(static_cast<AugOp>(i));
  p.params = params;
  p.output_size = output_size;
  return p;
}

bool AugPipeline::enabled(AugOp op) const { return std::find(ops.begin(), ops.end(), op) != ops.end(); }

Image augment_view(const Image& img, const AugPipeline& pipeline, std::uint64_t seed) {
  if (img.width < kMinAugSize || img.height < kMinAugSize) {
    throw ContractViolation("augment_view: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            " is smaller than 8x8");
  }
  const auto& p = pipeline.params;
  auto stream = [seed](AugOp op) { return SplitMix64(derive_seed(seed, {static_cast<std::uint64_t>(op)})); };

  Image out;
  const double full = static_cast<double>(std::min(img.width, img.height));
  if (pipeline.enabled(AugOp::crop)) {
    auto rng = stream(AugOp::crop);
    const double scale = rng.uniform(p.crop_scale_min, p.crop_scale_max);
    const double side = std::min(full, std::sqrt(scale * static_cast<double>(img.width * img.height)));
    const double x0 = rng.uniform(0.0, static_cast<double>(img.width) - side);
    const double y0 = rng.uniform(0.0, static_cast<double>(img.height) - side);
    out = resize_square(img, x0, y0, side, pipeline.output_size);
  } else {
    out = resize_square(img, (static_cast<double>(img.width) - full) / 2.0, (static_cast<double>(img.height) - full) / 2.0,
                        full, pipeline.output_size);
  }
  if (pipeline.enabled(AugOp::blur)) {
    auto rng = stream(AugOp::blur);
    out = gaussian_blur3(out, rng.uniform(p.blur_sigma_min, p.blur_sigma_max));
  }
  if (pipeline.enabled(AugOp::gray)) {
    auto rng = stream(AugOp::gray);
    if (rng.uniform() < p.gray_probability) out = grayscale(out);
  }
  if (pipeline.enabled(AugOp::jitter)) {
    auto rng = stream(AugOp::jitter);
    const double s = p.jitter_strength;
    const double b = rng.uniform(1 - s, 1 + s);
    const double c = rng.uniform(1 - s, 1 + s);
    const double sat = rng.uniform(1 - s, 1 + s);
    out = color_jitter(out, b, c, sat);
  }
  if (pipeline.enabled(AugOp::flip)) {
    auto rng = stream(AugOp::flip);
    if (rng.uniform() < p.flip_probability) out = hflip(out);
  }
  clamp_unit(out);
  return out;
}

std::pair<Image, Image> make_two_views(const Image& img, const AugPipeline& pipeline, std::uint64_t epoch,
                                       std::uint64_t sample_index, std::uint64_t run_seed) {
  return {augment_view(img, pipeline, derive_seed(run_seed, {epoch, sample_index, 0})),
          augment_view(img, pipeline, derive_seed(run_seed, {epoch, sample_index, 1}))};
}

// -- datasets --

std::size_t Dataset::classes() const {
  int m = -1;
  for (const int l : labels) m = std::max(m, l);
  return static_cast<std::size_t>(m + 1);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  for (const auto i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
    out.filenames.push_back(i < filenames.size() ? filenames[i] : std::string());
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto csv = dir / "labels.csv";
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "filename,label") {
    throw ParseError("labels.csv row 1", "expected header 'filename,label'");
  }
  Dataset ds;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "labels.csv row " + std::to_string(row);
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ParseError(where, "expected two fields");
    }
    const std::string name = trim(line.substr(0, comma));
    const std::string label = trim(line.substr(comma + 1));
    int value = 0;
    std::size_t used = 0;
    try {
      value = std::stoi(label, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (label.empty() || used != label.size() || value < 0) throw ParseError(where, "label must be a non-negative integer");
    if (name.empty()) throw ParseError(where, "empty filename");
    Image img;
    try {
      img = read_pnm_file(dir / name);
    } catch (const ParseError& e) {
      throw ParseError(where, name + ": " + e.what());
    } catch (const IoError& e) {
      throw ParseError(where, e.what());
    }
    if (!ds.images.empty() && (img.width != ds.images[0].width || img.height != ds.images[0].height ||
                               img.channels != ds.images[0].channels)) {
      throw ParseError(where, name + ": image size differs from the first image");
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(value);
    ds.filenames.push_back(name);
  }
  if (ds.images.empty()) throw ParseError("labels.csv", "no rows");
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
  csv << "filename,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::string name = i < ds.filenames.size() ? ds.filenames[i] : std::string();
    if (name.empty()) {
      std::ostringstream os;
      os << "img_" << i << (ds.images[i].channels == 1 ? ".pgm" : ".ppm");
      name = os.str();
    }
    write_pnm_file(dir / name, ds.images[i]);
    csv << name << ',' << ds.labels[i] << '\n';
  }
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double held_out, std::uint64_t seed) {
  if (!(held_out > 0.0 && held_out < 1.0)) throw ContractViolation("split_dataset: fraction must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    const auto perm = shuffled_indices(idx.size(), derive_seed(seed, {static_cast<std::uint64_t>(label)}));
    const auto n_test = static_cast<std::size_t>(std::llround(held_out * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < perm.size(); ++k) (k < n_test ? test : train).push_back(idx[perm[k]]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

namespace {

// Pattern intensity in [0, 1] at pixel (x, y).
double pattern(std::size_t kind, double x, double y, double phase, double period, double cx, double cy, double radius) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (kind % 6) {
    case 0: return 0.5 + 0.5 * std::sin(two_pi * (y + phase) / period);
    case 1: return 0.5 + 0.5 * std::sin(two_pi * (x + phase) / period);
    case 2: {
      const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      return std::exp(-r2 / (2.0 * radius * radius));
    }
    case 3: {
      const auto cell = static_cast<long>(std::max(2.0, std::round(period / 2.0)));
      const long ix = static_cast<long>(std::floor(x + phase)) / cell;
      const long iy = static_cast<long>(std::floor(y + phase)) / cell;
      return ((ix + iy) % 2 == 0) ? 1.0 : 0.0;
    }
    case 4: return 0.5 + 0.5 * std::sin(two_pi * (x + y + phase) / (period * std::numbers::sqrt2));
    default: {
      const double r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
      return std::exp(-(r - radius * 1.5) * (r - radius * 1.5) / 2.0);
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1) throw ContractViolation("synthetic: need at least one class and sample");
  if (spec.size < kMinAugSize) throw ContractViolation("synthetic: size must be >= 8");
  if (spec.channels != 1 && spec.channels != 3) throw ContractViolation("synthetic: channels must be 1 or 3");
  Dataset ds;
  const double s = static_cast<double>(spec.size);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t k = 0; k < spec.classes; ++k) {
      const std::size_t index = i * spec.classes + k;
      SplitMix64 rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(index)}));
      const double phase = rng.uniform(0.0, 8.0);
      const double period = rng.uniform(3.0, 5.0) * s / 16.0;
      const double cx = rng.uniform(0.3, 0.7) * s;
      const double cy = rng.uniform(0.3, 0.7) * s;
      const double radius = rng.uniform(0.12, 0.25) * s;
      double fg[3], bg[3];
      for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(0.5, 1.0);
      for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.0, 0.45);
      Image img(spec.size, spec.size, spec.channels);
      for (std::size_t y = 0; y < spec.size; ++y) {
        for (std::size_t x = 0; x < spec.size; ++x) {
          const double v = pattern(k, static_cast<double>(x), static_cast<double>(y), phase, period, cx, cy, radius);
          for (std::size_t c = 0; c < spec.channels; ++c) {
            const double f = spec.channels == 1 ? 0.8 : fg[c];
            const double b = spec.channels == 1 ? 0.2 : bg[c];
            img.at(x, y, c) = std::clamp(b + (f - b) * v + 0.05 * rng.normal(), 0.0, 1.0);
          }
        }
      }
      // Quantize so the on-disk form is exact.
      for (auto& v : img.pixels) v = std::round(v * 255.0) / 255.0;
      std::ostringstream name;
      name << "c" << k << "_" << i << (spec.channels == 1 ? ".pgm" : ".ppm");
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<int>(k));
      ds.filenames.push_back(name.str());
    }
  }
  return ds;
}

RowMatrixXd images_to_rows(std::span<const Image> images) {
  if (images.empty()) return RowMatrixXd(0, 0);
  const std::size_t n = images[0].pixels.size();
  RowMatrixXd out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].pixels.size() != n) throw ContractViolation("images_to_rows: images differ in size");
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(images[i].pixels.data(), static_cast<Eigen::Index>(n));
  }
  return out;
}

}  // namespace amcl
