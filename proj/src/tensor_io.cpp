// SPDX-License-Identifier: Apache-2.0
#include "fvg/tensor_io.hpp"

#include "fvg/common.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

namespace fvg {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'F', 'V', 'G', 'T'};
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) throw ChecksumError("truncated container: cannot read u32 at " + std::to_string(offset));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
    return v;
}

void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values) {
    const auto pos = out.size();
    out.resize(pos + values.size_bytes());
    std::memcpy(out.data() + pos, values.data(), values.size_bytes());
}

void append_f64(std::vector<std::uint8_t>& out, std::span<const double> values) {
    const auto pos = out.size();
    out.resize(pos + values.size_bytes());
    std::memcpy(out.data() + pos, values.data(), values.size_bytes());
}

void read_f32(std::span<const std::uint8_t> bytes, std::span<float> out) {
    if (bytes.size() != out.size_bytes()) throw FormatError("f32 payload size mismatch");
    std::memcpy(out.data(), bytes.data(), bytes.size());
}

void read_f64(std::span<const std::uint8_t> bytes, std::span<double> out) {
    if (bytes.size() != out.size_bytes()) throw FormatError("f64 payload size mismatch");
    std::memcpy(out.data(), bytes.data(), bytes.size());
}

std::vector<std::uint8_t> encode_fvt(std::span<const std::int64_t> shape, std::span<const float> values) {
    std::int64_t count = 1;
    for (auto d : shape) count *= d;
    if (count != static_cast<std::int64_t>(values.size())) throw ShapeError("fvt shape does not match value count");
    nlohmann::json header = {{"dtype", "f32le"}, {"shape", std::vector<std::int64_t>(shape.begin(), shape.end())}};
    const std::string h = header.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.reserve(16 + h.size() + values.size_bytes());
    append_u32(out, kTensorFileVersion);
    append_u32(out, static_cast<std::uint32_t>(h.size()));
    out.insert(out.end(), h.begin(), h.end());
    const auto payload_start = out.size();
    append_f32(out, values);
    append_u32(out, crc32(std::span(out).subspan(payload_start)));
    return out;
}

TensorFile decode_fvt(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12) throw ChecksumError("truncated tensor file");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic: not an FVGT tensor file");
    const auto version = read_u32(bytes, 4);
    if (version != kTensorFileVersion) throw FormatError("unsupported tensor file version " + std::to_string(version));
    const auto hlen = read_u32(bytes, 8);
    if (12 + static_cast<std::size_t>(hlen) > bytes.size()) throw ChecksumError("truncated tensor header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("tensor header is not JSON: ") + e.what());
    }
    if (header.value("dtype", "") != "f32le") throw FormatError("field 'dtype' must be f32le");
    TensorFile tf;
    tf.shape = header.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t count = 1;
    for (auto d : tf.shape) count *= d;
    const std::size_t payload_start = 12 + hlen;
    const std::size_t payload_bytes = static_cast<std::size_t>(count) * sizeof(float);
    if (payload_start + payload_bytes + 4 != bytes.size())
        throw ChecksumError("tensor payload truncated or padded: expected " + std::to_string(payload_bytes) + " bytes");
    const auto payload = bytes.subspan(payload_start, payload_bytes);
    if (crc32(payload) != read_u32(bytes, payload_start + payload_bytes)) throw ChecksumError("tensor payload CRC mismatch");
    tf.values.resize(static_cast<std::size_t>(count));
    read_f32(payload, tf.values);
    return tf;
}

void write_fvt(const std::filesystem::path& path, std::span<const std::int64_t> shape, std::span<const float> values) {
    write_file_bytes(path, encode_fvt(shape, values));
}

TensorFile read_fvt(const std::filesystem::path& path) { return decode_fvt(read_file_bytes(path)); }

}  // namespace fvg
