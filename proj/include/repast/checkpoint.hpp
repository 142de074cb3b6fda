#pragma once

// Checkpoint container:
//   "RPCK" | version u32 | config text | metadata text | count u32 |
//   count x { name | dtype u8 (0 = f32, 1 = f64) | rank u32 | dims u64... | little-endian data }
// Strings are u32 length + bytes. Metadata is `key=value` lines (training step, seed).

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include "repast/binio.hpp"
#include "repast/model.hpp"

namespace repast {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor<T>> tensors;
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ck) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    ByteWriter w;
    w.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("RPCK"), 4));
    w.put(kCheckpointVersion);
    w.put_string(ck.config.canonical());
    std::string meta;
    for (const auto& [k, v] : ck.meta) meta += k + "=" + v + "\n";
    w.put_string(meta);
    w.put(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        w.put_string(name);
        w.put(static_cast<std::uint8_t>(std::is_same_v<T, double> ? 1 : 0));
        w.put(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
        for (T v : t.data()) w.put(v);
    }
    return w.bytes();
}

/// Decodes a checkpoint, converting stored tensors to T if the dtype differs.
template <class T>
Checkpoint<T> decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& what = "checkpoint") {
    ByteReader r(std::move(bytes), what);
    auto magic = r.get_bytes(4);
    if (std::string(magic.begin(), magic.end()) != "RPCK")
        throw FormatError(what + ": not a checkpoint (bad magic; unsupported version or foreign file)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint<T> ck;
    try {
        ck.config = ModelConfig::parse(r.get_string());
    } catch (const std::invalid_argument& e) {
        throw FormatError(what + ": bad model config: " + e.what());
    }
    std::istringstream meta(r.get_string());
    for (std::string line; std::getline(meta, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string(4096);
        const auto dtype = r.get<std::uint8_t>();
        if (dtype > 1) throw FormatError(what + ": unknown dtype tag for '" + name + "'");
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError(what + ": implausible rank for '" + name + "'");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        const std::size_t n = numel(shape);
        if (n * (dtype ? 8 : 4) > r.remaining()) throw FormatError(what + ": truncated tensor '" + name + "'");
        Tensor<T> t(shape);
        for (std::size_t k = 0; k < n; ++k) t[k] = dtype ? static_cast<T>(r.get<double>()) : static_cast<T>(r.get<float>());
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");
    return ck;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
    const auto bytes = encode_checkpoint(ck);
    write_file_atomic(path, bytes);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(read_file(path), path.string());
}

/// Parameters for `cfg` from a checkpoint; rejects config mismatch and missing or misshapen tensors.
template <class T>
Params<T> params_from_checkpoint(const Checkpoint<T>& ck, const ModelConfig& cfg) {
    if (!(ck.config == cfg))
        throw FormatError("checkpoint config does not match the requested model config:\n" + ck.config.canonical() +
                          "vs\n" + cfg.canonical());
    Params<T> p;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != shape)
            throw FormatError("checkpoint parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                              ", expected " + to_string(shape));
        p.tensors.emplace(name, it->second);
    }
    return p;
}

}  // namespace repast
