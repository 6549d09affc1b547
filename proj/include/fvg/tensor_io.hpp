// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw tensor container (.fvt):
//   "FVGT" | u32 version | u32 header length | JSON header {dtype, shape} | payload | u32 CRC32(payload)
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fvg {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
    std::vector<std::int64_t> shape;
    std::vector<float> values;
};

std::vector<std::uint8_t> encode_fvt(std::span<const std::int64_t> shape, std::span<const float> values);
TensorFile decode_fvt(std::span<const std::uint8_t> bytes);

void write_fvt(const std::filesystem::path& path, std::span<const std::int64_t> shape, std::span<const float> values);
TensorFile read_fvt(const std::filesystem::path& path);

// Little-endian primitives shared with the checkpoint container.
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset);
void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values);
void append_f64(std::vector<std::uint8_t>& out, std::span<const double> values);
void read_f32(std::span<const std::uint8_t> bytes, std::span<float> out);
void read_f64(std::span<const std::uint8_t> bytes, std::span<double> out);

}  // namespace fvg
