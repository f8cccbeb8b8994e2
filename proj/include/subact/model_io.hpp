#pragma once

// Binary weight container shared by the CNNs and the detector SVM:
//   "SACNN1\0" | arity:u32 | { rank:u32 | dims:u32[rank] | f32[prod(dims)] }*
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cnn.hpp"
#include "error.hpp"

namespace subact {

inline constexpr char kModelMagic[7] = {'S', 'A', 'C', 'N', 'N', '1', '\0'};

struct TensorFile {
    std::uint32_t arity = 0;
    std::vector<Tensor<float>> tensors;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos, const std::string& origin) {
    if (pos + 4 > in.size()) throw FormatError("truncated model file: " + origin);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

}  // namespace detail

inline std::string encode_tensors(const TensorFile& file) {
    std::string out(kModelMagic, sizeof kModelMagic);
    detail::put_u32(out, file.arity);
    for (const auto& t : file.tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        for (int d : t.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float f : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

inline TensorFile decode_tensors(const std::string& bytes, const std::string& origin = "<model>") {
    if (bytes.size() < sizeof kModelMagic || std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0)
        throw FormatError("bad magic in model file: " + origin);
    std::size_t pos = sizeof kModelMagic;
    TensorFile file;
    file.arity = detail::get_u32(bytes, pos, origin);
    while (pos < bytes.size()) {
        std::uint32_t rank = detail::get_u32(bytes, pos, origin);
        if (rank == 0 || rank > 8) throw FormatError("bad tensor rank in model file: " + origin);
        std::vector<int> dims;
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint32_t d = detail::get_u32(bytes, pos, origin);
            if (d == 0 || d > (1u << 24)) throw FormatError("bad tensor dimension in model file: " + origin);
            dims.push_back(static_cast<int>(d));
            n *= d;
        }
        if (pos + 4 * n > bytes.size()) throw FormatError("truncated model file: " + origin);
        Tensor<float> t(dims);
        for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(detail::get_u32(bytes, pos, origin));
        file.tensors.push_back(std::move(t));
    }
    return file;
}

inline void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("unwritable path: " + path.string());
    auto bytes = encode_tensors(file);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensors(bytes, path.string());
}

inline std::string encode_model(const Network<float>& net) {
    TensorFile file;
    file.arity = static_cast<std::uint32_t>(net.arity);
    file.tensors.assign(net.params.begin(), net.params.end());
    return encode_tensors(file);
}

inline Network<float> decode_model(const std::string& bytes, const std::string& origin = "<model>") {
    TensorFile file = decode_tensors(bytes, origin);
    if (file.tensors.size() != nn::kParamCount)
        throw FormatError("model file " + origin + " holds " + std::to_string(file.tensors.size()) + " tensors, expected " +
                          std::to_string(nn::kParamCount));
    if (file.arity < 2) throw FormatError("model file " + origin + " has arity < 2");
    Network<float> net;
    net.arity = static_cast<int>(file.arity);
    for (int p = 0; p < nn::kParamCount; ++p) net[p] = std::move(file.tensors[p]);
    try {
        check_shapes(net);
    } catch (const FormatError& e) {
        throw FormatError(origin + ": " + e.what() + " (header arity " + std::to_string(file.arity) + ")");
    }
    return net;
}

inline void save_model(const Network<float>& net, const std::filesystem::path& path) {
    check_shapes(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("unwritable path: " + path.string());
    auto bytes = encode_model(net);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline Network<float> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_model(bytes, path.string());
}

}  // namespace subact
