#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

// Ordered, name-addressed collection of trainable tensors. Order is the
// registration order and is what the checkpoint file and the optimizer
// iterate over, so it must be deterministic.
template <typename S>
class ParamSetT {
  public:
    void add(const std::string& name, TensorT<S> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const TensorT<S>& get(const std::string& name) const { return tensors_[find(name)]; }
    TensorT<S>& get(const std::string& name) { return tensors_[find(name)]; }

    size_t size() const { return names_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    const TensorT<S>& tensor(size_t i) const { return tensors_[i]; }
    TensorT<S>& tensor(size_t i) { return tensors_[i]; }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

  private:
    size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<TensorT<S>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

using ParamSet = ParamSetT<float>;

template <typename S>
ParamSetT<S> cast_params(const ParamSet& params) {
    ParamSetT<S> out;
    for (size_t i = 0; i < params.size(); ++i) {
        out.add(params.name(i), params.tensor(i).template cast<S>());
    }
    return out;
}

// Leaf handles for one parameter set registered on a tape; lookups by the
// same names as the ParamSet.
template <typename S>
class BoundParams {
  public:
    BoundParams(TapeT<S>& tape, const ParamSetT<S>& params) {
        for (size_t i = 0; i < params.size(); ++i) {
            vars_[params.name(i)] = tape.leaf(params.tensor(i));
        }
    }

    Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw ConfigError("unknown parameter name: " + name);
        return it->second;
    }

  private:
    std::unordered_map<std::string, Var> vars_;
};

// ---- checkpoint file format ----
//
// Binary, little endian:
//   magic "VFLOWCKP" (8 bytes), u32 version = 1, u32 tensor count,
//   then per tensor: u16 name length, name bytes, u8 rank, u32 dims[rank],
//   float32 payload. Round-trips bit-exactly.

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little endian");

inline void put_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }
inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline uint16_t get_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    return v;
}
inline uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'V', 'F', 'L', 'O', 'W', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        const Tensor& t = params.tensor(i);
        detail::put_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(t.rank()));
        for (int d : t.shape()) detail::put_u32(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline ParamSet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("bad checkpoint magic in " + path);
    }
    const uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const uint32_t count = detail::get_u32(is);
    ParamSet params;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = detail::get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const int rank = is.get();
        std::vector<int> shape(static_cast<size_t>(rank));
        for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(detail::get_u32(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
        params.add(name, std::move(t));
    }
    return params;
}

}  // namespace vflow
