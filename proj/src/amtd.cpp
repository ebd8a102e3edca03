#include "amcl/amtd.hpp"

#include "amcl/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace amcl {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in, const char* field) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError(field, "truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr std::size_t kMaxElements = std::size_t{1} << 32;

}  // namespace

std::size_t amtd_encoded_size(const Shape& shape, AmtdDtype dtype) {
  const std::size_t elem = dtype == AmtdDtype::float32 ? 4 : 1;
  return 4 + 4 + 4 + 4 * shape.size() + 1 + elem * numel(shape);
}

void write_amtd(std::ostream& out, const Tensor& t, AmtdDtype dtype) {
  out.write("AMTD", 4);
  put_u32(out, kAmtdVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (const auto e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw ContractViolation("write_amtd: extent exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  out.put(static_cast<char>(dtype));
  const auto& v = t.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dtype == AmtdDtype::float32) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[i]));
      put_u32(out, bits);
    } else {
      const double x = v[i];
      if (!(x >= 0.0 && x <= 255.0) || x != std::floor(x)) {
        throw ContractViolation("write_amtd: value " + std::to_string(x) +
                                " is not representable as an unsigned byte");
      }
      out.put(static_cast<char>(static_cast<std::uint8_t>(x)));
    }
  }
  if (!out) throw IoError("write_amtd: stream write failed");
}

std::vector<std::uint8_t> encode_amtd(const Tensor& t, AmtdDtype dtype) {
  std::ostringstream os(std::ios::binary);
  write_amtd(os, t, dtype);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor read_amtd(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw ParseError("magic", "truncated");
  if (std::memcmp(magic, "AMTD", 4) != 0) throw ParseError("magic", "expected AMTD");
  const std::uint32_t version = get_u32(in, "version");
  if (version != kAmtdVersion) {
    throw ParseError("version", "unsupported version " + std::to_string(version));
  }
  const std::uint32_t ndim = get_u32(in, "ndim");
  if (ndim > 8) throw ParseError("ndim", "too many dimensions: " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = get_u32(in, "extent");
    count *= e;
    if (count > kMaxElements) throw ParseError("extent", "element count overflow");
  }
  const int dt = in.get();
  if (dt == std::char_traits<char>::eof()) throw ParseError("dtype", "truncated");
  if (dt != 0 && dt != 1) throw ParseError("dtype", "unknown dtype byte " + std::to_string(dt));
  Eigen::VectorXd values(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    if (dt == 0) {
      values[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(get_u32(in, "payload"));
    } else {
      const int b = in.get();
      if (b == std::char_traits<char>::eof()) throw ParseError("payload", "truncated");
      values[static_cast<Eigen::Index>(i)] = static_cast<double>(b);
    }
  }
  return Tensor::constant(std::move(shape), std::move(values));
}

Tensor decode_amtd(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_amtd(is);
}

}  // namespace amcl
