// SPDX-License-Identifier: Apache-2.0
#include "fvg/checkpoint.hpp"

#include "fvg/tensor_io.hpp"

#include <cstring>

namespace fvg {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'G', 'C'};

template <class S>
constexpr const char* dtype_name() {
    return sizeof(S) == 4 ? "f32le" : "f64le";
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32le") return 4;
    if (dtype == "f64le") return 8;
    throw FormatError("checkpoint field 'dtype' has unsupported value '" + dtype + "'");
}

struct Parsed {
    CheckpointInfo info;
    nlohmann::json tensors;
    std::vector<std::uint8_t> bytes;
    std::size_t payload_start = 0;
    std::size_t payload_size = 0;
};

template <class S>
std::vector<std::uint8_t> encode(const nlohmann::json& header_without_tensors, const ParamLayout& layout,
                                 const std::vector<S>& values) {
    nlohmann::json header = header_without_tensors;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& t : layout.tensors())
        table.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset * sizeof(S)}});
    header["tensors"] = table;
    header["dtype"] = dtype_name<S>();
    const std::string h = header.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    append_u32(out, kCheckpointVersion);
    append_u32(out, static_cast<std::uint32_t>(h.size()));
    out.insert(out.end(), h.begin(), h.end());
    const std::size_t start = out.size();
    if constexpr (sizeof(S) == 4)
        append_f32(out, values);
    else
        append_f64(out, values);
    append_u32(out, crc32(std::span(out).subspan(start)));
    return out;
}

Parsed parse(const std::filesystem::path& path) {
    Parsed p;
    p.bytes = read_file_bytes(path);
    const auto& b = p.bytes;
    if (b.size() < 4) throw ChecksumError("truncated checkpoint " + path.string());
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("checkpoint field 'magic' is not FVGC in " + path.string());
    const auto version = read_u32(b, 4);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint field 'version' is " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    const auto hlen = read_u32(b, 8);
    if (12 + static_cast<std::size_t>(hlen) > b.size()) throw ChecksumError("truncated checkpoint header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(b.begin() + 12, b.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint field 'header' is not valid JSON: ") + e.what());
    }
    try {
        p.info.kind = header.at("kind").get<std::string>();
        p.info.dtype = header.at("dtype").get<std::string>();
        p.info.config = header.at("config").get<ModelConfig>();
        p.info.meta = header.value("meta", nlohmann::json::object());
        if (p.info.kind == "lora") {
            p.info.base_hash = header.at("base_hash").get<std::string>();
            p.info.lora_rank = header.at("lora").at("rank").get<int>();
            p.info.lora_alpha = header.at("lora").at("alpha").get<double>();
        } else if (p.info.kind != "base") {
            throw FormatError("checkpoint field 'kind' has unsupported value '" + p.info.kind + "'");
        }
        p.tensors = header.at("tensors");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is missing a field: ") + e.what());
    }
    const std::size_t elem = dtype_size(p.info.dtype);
    std::size_t count = 0;
    for (const auto& t : p.tensors) {
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        count += n;
    }
    p.payload_start = 12 + hlen;
    p.payload_size = count * elem;
    if (p.payload_start + p.payload_size + 4 > b.size())
        throw ChecksumError("checkpoint payload truncated in " + path.string());
    if (p.payload_start + p.payload_size + 4 < b.size()) throw FormatError("checkpoint has trailing bytes: " + path.string());
    const auto payload = std::span(b).subspan(p.payload_start, p.payload_size);
    if (crc32(payload) != read_u32(b, p.payload_start + p.payload_size))
        throw ChecksumError("checkpoint payload CRC mismatch in " + path.string());
    return p;
}

void check_config(const ModelConfig& got, const ModelConfig& want) {
    nlohmann::json g = got, w = want;
    for (auto it = w.begin(); it != w.end(); ++it)
        if (g.at(it.key()) != it.value())
            throw FormatError("checkpoint config field '" + it.key() + "' is " + g.at(it.key()).dump() + ", expected " +
                              it.value().dump());
}

template <class S>
void fill(const Parsed& p, const ParamLayout& layout, std::vector<S>& values) {
    if (p.tensors.size() != layout.tensors().size())
        throw FormatError("checkpoint field 'tensors' lists " + std::to_string(p.tensors.size()) + " tensors, expected " +
                          std::to_string(layout.tensors().size()));
    const std::size_t elem = dtype_size(p.info.dtype);
    values.assign(layout.size(), S(0));
    for (std::size_t i = 0; i < layout.tensors().size(); ++i) {
        const auto& spec = layout.tensors()[i];
        const auto& t = p.tensors[i];
        const auto name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (name != spec.name) throw FormatError("checkpoint tensor '" + name + "' found where '" + spec.name + "' expected");
        if (shape.size() != 2 || shape[0] != spec.rows || shape[1] != spec.cols)
            throw FormatError("checkpoint tensor '" + name + "' field 'shape' mismatch");
        const auto offset = t.at("offset").get<std::size_t>();
        if (offset + spec.size() * elem > p.payload_size) throw FormatError("checkpoint tensor '" + name + "' field 'offset' out of range");
        const std::uint8_t* src = p.bytes.data() + p.payload_start + offset;
        for (std::size_t k = 0; k < spec.size(); ++k) {
            if (elem == 4) {
                float f;
                std::memcpy(&f, src + 4 * k, 4);
                values[spec.offset + k] = static_cast<S>(f);
            } else {
                double d;
                std::memcpy(&d, src + 8 * k, 8);
                values[spec.offset + k] = static_cast<S>(d);
            }
        }
    }
}

}  // namespace

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) { return parse(path).info; }

template <class S>
void save_base_checkpoint(const std::filesystem::path& path, const ModelParams<S>& params, const nlohmann::json& meta) {
    const nlohmann::json header = {{"kind", "base"}, {"config", params.config}, {"meta", meta}};
    write_file_bytes(path, encode(header, params.layout, params.values));
}

template <class S>
ModelParams<S> load_base_checkpoint(const std::filesystem::path& path, CheckpointInfo* info, const ModelConfig* expected) {
    const Parsed p = parse(path);
    if (p.info.kind != "base") throw FormatError("checkpoint field 'kind' is '" + p.info.kind + "', expected 'base'");
    if (expected) check_config(p.info.config, *expected);
    try {
        p.info.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
    ModelParams<S> params(p.info.config);
    fill(p, params.layout, params.values);
    for (const S v : params.values)
        if (!std::isfinite(static_cast<double>(v))) throw FormatError("checkpoint contains non-finite parameters");
    if (info) *info = p.info;
    return params;
}

template <class S>
void save_lora_checkpoint(const std::filesystem::path& path, const LoraAdapters<S>& adapters, const ModelConfig& config,
                          const std::string& base_hash, const nlohmann::json& meta) {
    const nlohmann::json header = {{"kind", "lora"},
                                   {"config", config},
                                   {"base_hash", base_hash},
                                   {"lora", {{"rank", adapters.rank}, {"alpha", adapters.alpha}}},
                                   {"meta", meta}};
    write_file_bytes(path, encode(header, adapters.layout, adapters.values));
}

template <class S>
LoraAdapters<S> load_lora_checkpoint(const std::filesystem::path& path, const ModelParams<S>& base,
                                     const std::string& base_hash, CheckpointInfo* info) {
    const Parsed p = parse(path);
    if (p.info.kind != "lora") throw FormatError("checkpoint field 'kind' is '" + p.info.kind + "', expected 'lora'");
    if (p.info.base_hash != base_hash)
        throw HashMismatchError("adapters were trained against base " + p.info.base_hash + ", got " + base_hash);
    check_config(p.info.config, base.config);
    LoraAdapters<S> ad = empty_lora<S>(base.layout, p.info.lora_rank, p.info.lora_alpha);
    fill(p, ad.layout, ad.values);
    if (info) *info = p.info;
    return ad;
}

template void save_base_checkpoint<float>(const std::filesystem::path&, const ModelParams<float>&, const nlohmann::json&);
template void save_base_checkpoint<double>(const std::filesystem::path&, const ModelParams<double>&, const nlohmann::json&);
template ModelParams<float> load_base_checkpoint<float>(const std::filesystem::path&, CheckpointInfo*, const ModelConfig*);
template ModelParams<double> load_base_checkpoint<double>(const std::filesystem::path&, CheckpointInfo*, const ModelConfig*);
template void save_lora_checkpoint<float>(const std::filesystem::path&, const LoraAdapters<float>&, const ModelConfig&,
                                          const std::string&, const nlohmann::json&);
template void save_lora_checkpoint<double>(const std::filesystem::path&, const LoraAdapters<double>&, const ModelConfig&,
                                           const std::string&, const nlohmann::json&);
template LoraAdapters<float> load_lora_checkpoint<float>(const std::filesystem::path&, const ModelParams<float>&,
                                                         const std::string&, CheckpointInfo*);
template LoraAdapters<double> load_lora_checkpoint<double>(const std::filesystem::path&, const ModelParams<double>&,
                                                           const std::string&, CheckpointInfo*);

}  // namespace fvg
