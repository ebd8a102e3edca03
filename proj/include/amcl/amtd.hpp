#pragma once

// "AMTD" binary tensor files.
//
//   magic    4 bytes  "AMTD"
//   version  u32 LE   (currently 1)
//   ndim     u32 LE
//   extents  ndim x u32 LE
//   dtype    u8       0 = IEEE-754 binary32, 1 = unsigned byte
//   payload  row-major, little-endian
//
// Readers always upcast to double.

#include "amcl/tensor.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace amcl {

enum class AmtdDtype : std::uint8_t { float32 = 0, uint8 = 1 };

inline constexpr std::uint32_t kAmtdVersion = 1;

/// Encoded size in bytes of a tensor with `shape` and `dtype`.
std::size_t amtd_encoded_size(const Shape& shape, AmtdDtype dtype);

void write_amtd(std::ostream& out, const Tensor& t, AmtdDtype dtype = AmtdDtype::float32);
std::vector<std::uint8_t> encode_amtd(const Tensor& t, AmtdDtype dtype = AmtdDtype::float32);

/// Reads one tensor; throws ParseError naming the offending field.
Tensor read_amtd(std::istream& in);
Tensor decode_amtd(const std::vector<std::uint8_t>& bytes);

}  // namespace amcl
