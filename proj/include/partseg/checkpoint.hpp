#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "partseg/common.hpp"

namespace partseg {

// Flat checkpoint archive: a JSON metadata block followed by named tensors.
// Tensor payloads are little-endian arrays with explicit shape headers;
// parameters are stored as 32-bit floats, auxiliary state may use other dtypes.
class TensorArchive {
public:
    void put(const std::string& name, const torch::Tensor& t);
    torch::Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors_.count(name) > 0; }
    const std::map<std::string, torch::Tensor>& tensors() const { return tensors_; }

    std::string& metadata() { return metadata_json_; }
    const std::string& metadata() const { return metadata_json_; }

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

private:
    std::string metadata_json_ = "{}";
    std::map<std::string, torch::Tensor> tensors_;
};

}  // namespace partseg
