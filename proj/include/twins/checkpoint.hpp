#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

#include "twins/model.hpp"

namespace twins {

// Errors from the "TWNS" binary tensor archive, split by failure kind
// so callers can tell a corrupt header from a short read.
class CheckpointError : public std::runtime_error {
public:
    enum class Kind { CorruptHeader, Truncated, ShapeMismatch, Io };
    CheckpointError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

enum class Dtype : std::uint8_t { Float32 = 0, Float64 = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::Float32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::Float64; }

struct CheckpointTensor {
    Dtype dtype = Dtype::Float32;
    Shape shape;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t count() const { return numel(shape); }

    template <typename T>
    std::vector<T> as() const {
        std::vector<T> out(count());
        if (dtype == Dtype::Float32)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(f32[i]);
        else
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(f64[i]);
        return out;
    }
};

// Ordered name -> tensor archive; round-trips bit-exactly.
struct Checkpoint {
    std::vector<std::pair<std::string, CheckpointTensor>> entries;

    const CheckpointTensor* find(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return &t;
        return nullptr;
    }

    template <typename T>
    void add(const std::string& name, const Tensor<T>& t) {
        if (find(name)) throw CheckpointError(CheckpointError::Kind::Io,
                                              "duplicate tensor name: " + name);
        CheckpointTensor ct;
        ct.dtype = dtype_of<T>();
        ct.shape = t.shape();
        if constexpr (std::is_same_v<T, float>)
            ct.f32 = t.vec();
        else
            ct.f64 = t.vec();
        entries.emplace_back(name, std::move(ct));
    }
};

namespace detail {

constexpr char kMagic[4] = {'T', 'W', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void write_le(std::ostream& os, U v) {
    // little-endian host assumed (x86/aarch64); bytes written verbatim
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
bool read_le(std::istream& is, U& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    return bool(is);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
    os.write(detail::kMagic, 4);
    detail::write_le<std::uint32_t>(os, detail::kVersion);
    detail::write_le<std::uint32_t>(os, std::uint32_t(ckpt.entries.size()));
    for (const auto& [name, t] : ckpt.entries) {
        detail::write_le<std::uint32_t>(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        detail::write_le<std::uint8_t>(os, std::uint8_t(t.dtype));
        detail::write_le<std::uint8_t>(os, std::uint8_t(t.shape.size()));
        for (auto d : t.shape) detail::write_le<std::uint64_t>(os, d);
        if (t.dtype == Dtype::Float32)
            os.write(reinterpret_cast<const char*>(t.f32.data()),
                     std::streamsize(t.f32.size() * sizeof(float)));
        else
            os.write(reinterpret_cast<const char*>(t.f64.data()),
                     std::streamsize(t.f64.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                              path + ": bad magic bytes (not a TWNS checkpoint)");
    std::uint32_t version = 0, count = 0;
    if (!detail::read_le(is, version) || version != detail::kVersion)
        throw CheckpointError(CheckpointError::Kind::CorruptHeader,
                              path + ": unsupported version " + std::to_string(version));
    if (!detail::read_le(is, count))
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, path + ": missing count");

    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        if (!detail::read_le(is, name_len))
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  path + ": truncated before tensor " + std::to_string(i));
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint8_t dtype = 0, rank = 0;
        if (!is || !detail::read_le(is, dtype) || !detail::read_le(is, rank) || dtype > 1)
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  path + ": truncated record for tensor " + std::to_string(i) +
                                      (name.empty() ? "" : " (" + name + ")"));
        CheckpointTensor t;
        t.dtype = Dtype(dtype);
        t.shape.resize(rank);
        for (auto& d : t.shape) {
            std::uint64_t v = 0;
            if (!detail::read_le(is, v))
                throw CheckpointError(CheckpointError::Kind::Truncated,
                                      path + ": truncated dims of tensor " + name);
            d = std::size_t(v);
        }
        const std::size_t n = t.count();
        if (t.dtype == Dtype::Float32) {
            t.f32.resize(n);
            is.read(reinterpret_cast<char*>(t.f32.data()), std::streamsize(n * sizeof(float)));
        } else {
            t.f64.resize(n);
            is.read(reinterpret_cast<char*>(t.f64.data()), std::streamsize(n * sizeof(double)));
        }
        if (!is)
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  path + ": truncated data of tensor " + name);
        ckpt.entries.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

template <typename T>
Checkpoint checkpoint_from_model(const Model<T>& m) {
    Checkpoint ckpt;
    for (const auto& [name, t] : m.named_params()) ckpt.add(name, t);
    return ckpt;
}

template <typename T>
void save_model(const Model<T>& m, const std::string& path) {
    save_checkpoint(checkpoint_from_model(m), path);
}

// Copies archived tensors into the model, validating name coverage and
// per-tensor shapes against the model's config.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Model<T>& m) {
    for (auto& [name, t] : m.named_params()) {
        const CheckpointTensor* src = ckpt.find(name);
        if (!src)
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "checkpoint lacks tensor " + name);
        if (src->shape != t.shape())
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "tensor " + name + ": checkpoint shape " +
                                      shape_str(src->shape) + " != model shape " +
                                      shape_str(t.shape()));
        auto vals = src->template as<T>();
        std::copy(vals.begin(), vals.end(), const_cast<Tensor<T>&>(t).data());
    }
}

template <typename T>
void load_model(Model<T>& m, const std::string& path) {
    apply_checkpoint(load_checkpoint(path), m);
}

}  // namespace twins
