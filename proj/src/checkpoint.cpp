#include "partseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace partseg {

namespace {

constexpr std::uint32_t kMagic = 0x50534731;  // "PSG1"

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, I64 = 3 };

Dtype dtype_of(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return Dtype::F32;
        case torch::kFloat64: return Dtype::F64;
        case torch::kUInt8: return Dtype::U8;
        case torch::kInt64: return Dtype::I64;
        default: throw ConfigError("unsupported checkpoint dtype: " + std::string(c10::toString(t.scalar_type())));
    }
}

torch::ScalarType to_torch(Dtype d) {
    switch (d) {
        case Dtype::F32: return torch::kFloat32;
        case Dtype::F64: return torch::kFloat64;
        case Dtype::U8: return torch::kUInt8;
        case Dtype::I64: return torch::kInt64;
    }
    throw ConfigError("corrupt checkpoint: unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw ConfigError("corrupt checkpoint '" + path + "' at offset " + std::to_string(static_cast<long long>(in.tellg())));
    return v;
}

}  // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& t) {
    tensors_[name] = t.detach().cpu().contiguous();
}

torch::Tensor TensorArchive::get(const std::string& name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("checkpoint entry missing: " + name);
    return it->second;
}

void TensorArchive::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    write_pod(out, kMagic);
    const std::uint64_t meta_len = metadata_json_.size();
    write_pod(out, meta_len);
    out.write(metadata_json_.data(), static_cast<std::streamsize>(meta_len));
    write_pod(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
        write_pod(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::uint8_t>(dtype_of(t)));
        write_pod(out, static_cast<std::uint8_t>(t.dim()));
        for (std::int64_t d = 0; d < t.dim(); ++d) write_pod(out, static_cast<std::uint64_t>(t.size(d)));
        const std::uint64_t nbytes = t.numel() * t.element_size();
        write_pod(out, nbytes);
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    }
    if (!out) throw ConfigError("write failure on checkpoint: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    if (read_pod<std::uint32_t>(in, path) != kMagic)
        throw ConfigError("corrupt checkpoint '" + path + "' at offset 0: bad magic");
    TensorArchive ar;
    const auto meta_len = read_pod<std::uint64_t>(in, path);
    ar.metadata_json_.resize(meta_len);
    in.read(ar.metadata_json_.data(), static_cast<std::streamsize>(meta_len));
    const auto count = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto dtype = to_torch(static_cast<Dtype>(read_pod<std::uint8_t>(in, path)));
        const auto ndim = read_pod<std::uint8_t>(in, path);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, path));
        const auto nbytes = read_pod<std::uint64_t>(in, path);
        torch::Tensor t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes)
            throw ConfigError("corrupt checkpoint '" + path + "' at offset " +
                              std::to_string(static_cast<long long>(in.tellg())) + ": size mismatch for " + name);
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
        if (!in)
            throw ConfigError("corrupt checkpoint '" + path + "' at offset " +
                              std::to_string(static_cast<long long>(in.tellg())) + ": truncated data for " + name);
        ar.tensors_[name] = t;
    }
    return ar;
}

}  // namespace partseg
