#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/segnet.hpp"

namespace vesselseg {

inline constexpr char kCheckpointMagic[4] = {'V', 'G', 'S', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.write(buf, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    char buf[4];
    in.read(buf, 4);
    if (!in) throw IoError("checkpoint truncated");
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
}

struct RawTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

template <typename T>
void put_tensor(std::ostream& out, const std::string& name,
                const std::vector<std::uint32_t>& dims, const std::vector<T>& values) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::uint32_t d : dims) put_u32(out, d);
    for (const T& v : values) {
        const float f = static_cast<float>(v);
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.write(buf, 4);
    }
}

}  // namespace detail

/// Writes the network to the binary checkpoint format: "VGSN", format
/// version, tensor count, then per tensor the length-prefixed name, rank,
/// dims, and little-endian float32 values.
template <typename T>
void save_checkpoint(const std::string& path, const NetworkParams<T>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    auto entries = param_entries(params);
    detail::put_u32(out, static_cast<std::uint32_t>(2 * entries.size()));
    for (const auto& e : entries) {
        const Tensor4<T>& w = e.param->weight;
        detail::put_tensor(out, std::string(e.name) + ".weight",
                           {static_cast<std::uint32_t>(w.n), static_cast<std::uint32_t>(w.c),
                            static_cast<std::uint32_t>(w.h), static_cast<std::uint32_t>(w.w)},
                           w.v);
        detail::put_tensor(out, std::string(e.name) + ".bias",
                           {static_cast<std::uint32_t>(e.param->bias.size())}, e.param->bias);
    }
    if (!out) throw IoError("failed while writing checkpoint " + path);
}

template <typename T>
NetworkParams<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError(path + " is not a checkpoint file");
    const std::uint32_t version = detail::get_u32(in);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = detail::get_u32(in);

    std::map<std::string, detail::RawTensor> tensors;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = detail::get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = detail::get_u32(in);
        detail::RawTensor raw;
        std::size_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            raw.dims.push_back(detail::get_u32(in));
            total *= raw.dims.back();
        }
        raw.values.resize(total);
        in.read(reinterpret_cast<char*>(raw.values.data()),
                static_cast<std::streamsize>(total * sizeof(float)));
        if (!in) throw IoError("checkpoint truncated in tensor " + name);
        tensors.emplace(std::move(name), std::move(raw));
    }

    auto dims_of = [&](const std::string& name) -> const detail::RawTensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("checkpoint missing tensor " + name);
        return it->second;
    };

    NetworkConfig config;
    const auto& enc1a = dims_of("enc1a.weight");
    if (enc1a.dims.size() != 4) throw IoError("checkpoint: enc1a.weight must be rank 4");
    config.c1 = static_cast<int>(enc1a.dims[0]);
    config.in_channels = static_cast<int>(enc1a.dims[1]);
    config.c2 = static_cast<int>(dims_of("enc2a.weight").dims[0]);
    config.c3 = static_cast<int>(dims_of("enc3a.weight").dims[0]);

    NetworkParams<T> params = zero_params<T>(config);
    for (auto& e : param_entries(params)) {
        const auto& w = dims_of(std::string(e.name) + ".weight");
        const auto& b = dims_of(std::string(e.name) + ".bias");
        Tensor4<T>& dst = e.param->weight;
        if (w.dims.size() != 4 || static_cast<int>(w.dims[0]) != dst.n ||
            static_cast<int>(w.dims[1]) != dst.c || static_cast<int>(w.dims[2]) != dst.h ||
            static_cast<int>(w.dims[3]) != dst.w)
            throw IoError(std::string("checkpoint tensor shape mismatch for ") + e.name);
        if (b.values.size() != e.param->bias.size())
            throw IoError(std::string("checkpoint bias shape mismatch for ") + e.name);
        for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] = static_cast<T>(w.values[i]);
        for (std::size_t i = 0; i < e.param->bias.size(); ++i)
            e.param->bias[i] = static_cast<T>(b.values[i]);
    }
    return params;
}

}  // namespace vesselseg
