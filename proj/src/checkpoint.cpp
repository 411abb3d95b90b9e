#include "ccdnet/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ccdnet/core/errors.hpp"

namespace ccdnet {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'K', 'P'};

template <typename T>
void write_le(std::ofstream& f, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
    return v;
}

void write_f32_le(std::ofstream& f, const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) write_le(f, data[i]);
    }
}

void read_f32_le(std::ifstream& f, float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        f.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) data[i] = read_le<float>(f);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["config"] = ck.config;
    header["mode"] = ck.mode;
    auto dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        dir.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "f32"},
                       {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel()) * 4;
    }
    header["tensors"] = dir;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError("checkpoint: cannot write " + path);
    f.write(kMagic, 4);
    write_le<std::uint32_t>(f, Checkpoint::kVersion);
    write_le<std::uint64_t>(f, static_cast<std::uint64_t>(hs.size()));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : ck.tensors) write_f32_le(f, t.data(), static_cast<std::size_t>(t.numel()));
    if (!f) throw ParseError("checkpoint: write failed " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    const auto version = read_le<std::uint32_t>(f);
    if (version != Checkpoint::kVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    const auto hlen = read_le<std::uint64_t>(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad header: ") + e.what());
    }

    Checkpoint ck;
    ck.config = header.value("config", nlohmann::json::object());
    ck.mode = header.value("mode", "train");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name");
        std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        Tensor<float> t(shape);
        read_f32_le(f, t.data(), static_cast<std::size_t>(t.numel()));
        if (!f) throw ParseError("checkpoint: truncated payload in " + path);
        ck.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

}  // namespace ccdnet
