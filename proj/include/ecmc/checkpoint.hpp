#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ecmc/autodiff.hpp"
#include "ecmc/tensor.hpp"

// Versioned binary containers. Checkpoints ("ECMB") hold named parameter
// tensors; feature matrices ("ECMF") hold a single matrix. All integers and
// doubles are little-endian regardless of host order.

namespace ecmc {

namespace io {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f64(std::ostream& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const std::string& path) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw ParseError("'" + path + "': truncated (wanted " + std::to_string(n) +
                         " bytes at offset " + std::to_string(static_cast<long long>(in.tellg())) +
                         ")");
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
    char b[4];
    read_exact(in, b, 4, path);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
}

inline double read_f64(std::istream& in, const std::string& path) {
    char b[8];
    read_exact(in, b, 8, path);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return std::bit_cast<double>(v);
}

} // namespace io

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMatrixVersion = 1;

// ECMB: magic, version, section count, then (name_len, name, rows, cols, data).
inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Var>>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write '" + path + "'");
    out.write("ECMB", 4);
    io::write_u32(out, kCheckpointVersion);
    io::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, var] : params) {
        io::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Tensor& t = var.value();
        io::write_u32(out, static_cast<std::uint32_t>(t.rows()));
        io::write_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (double d : t.data()) io::write_f64(out, d);
    }
    if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    io::read_exact(in, magic, 4, path);
    if (std::string(magic, 4) != "ECMB")
        throw ParseError("'" + path + "': bad magic, not an ECMB checkpoint");
    const std::uint32_t version = io::read_u32(in, path);
    if (version != kCheckpointVersion)
        throw ParseError("'" + path + "': unsupported checkpoint version " +
                         std::to_string(version));
    const std::uint32_t count = io::read_u32(in, path);
    std::map<std::string, Tensor> out;
    for (std::uint32_t s = 0; s < count; ++s) {
        const std::uint32_t name_len = io::read_u32(in, path);
        std::string name(name_len, '\0');
        io::read_exact(in, name.data(), name_len, path);
        const std::uint32_t rows = io::read_u32(in, path);
        const std::uint32_t cols = io::read_u32(in, path);
        Tensor t(rows, cols);
        for (double& d : t.data()) d = io::read_f64(in, path);
        if (!out.emplace(std::move(name), std::move(t)).second)
            throw ParseError("'" + path + "': duplicate section name");
    }
    return out;
}

// Loads a checkpoint into existing parameters, validating that every expected
// section is present with the configured shape.
inline void load_checkpoint_into(const std::string& path,
                                 const std::vector<std::pair<std::string, Var>>& params) {
    auto sections = load_checkpoint(path);
    for (const auto& [name, var] : params) {
        auto it = sections.find(name);
        if (it == sections.end())
            throw ParseError("'" + path + "': missing section '" + name + "'");
        if (!it->second.same_shape(var.value()))
            throw ParseError("'" + path + "': section '" + name + "' has shape " +
                             it->second.shape_string() + ", config expects " +
                             var.value().shape_string());
        const_cast<Var&>(var).leaf_value() = it->second;
        sections.erase(it);
    }
    if (!sections.empty())
        throw ParseError("'" + path + "': unexpected extra section '" +
                         sections.begin()->first + "'");
}

// ECMF: magic, version, rows, cols, row-major doubles.
inline void save_matrix_ecmf(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("matrix: cannot write '" + path + "'");
    out.write("ECMF", 4);
    io::write_u32(out, kMatrixVersion);
    io::write_u32(out, static_cast<std::uint32_t>(t.rows()));
    io::write_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (double d : t.data()) io::write_f64(out, d);
    if (!out) throw IoError("matrix: write failed for '" + path + "'");
}

inline Tensor load_matrix_ecmf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("matrix: cannot open '" + path + "'");
    char magic[4];
    io::read_exact(in, magic, 4, path);
    if (std::string(magic, 4) != "ECMF")
        throw ParseError("'" + path + "': bad magic, not an ECMF matrix");
    const std::uint32_t version = io::read_u32(in, path);
    if (version != kMatrixVersion)
        throw ParseError("'" + path + "': unsupported matrix version " + std::to_string(version));
    const std::uint32_t rows = io::read_u32(in, path);
    const std::uint32_t cols = io::read_u32(in, path);
    Tensor t(rows, cols);
    for (double& d : t.data()) d = io::read_f64(in, path);
    char extra;
    if (in.read(&extra, 1).gcount() == 1)
        throw ParseError("'" + path + "': trailing bytes after matrix data");
    return t;
}

} // namespace ecmc
