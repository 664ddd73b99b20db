#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dropreg/tensor.hpp"

namespace dropreg {

// Tensor record: little-endian, magic "DRT1", four u64 extents (N,C,H,W),
// then N*C*H*W f64 values. Parameter files are one concatenated blob of such
// records plus a JSON manifest listing (name, byte offset) pairs.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

// blob_path gets the concatenated records, manifest_path the JSON index.
void save_parameter_blob(const std::string& blob_path, const std::string& manifest_path,
                         const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_parameter_blob(const std::string& blob_path,
                                             const std::string& manifest_path);

}  // namespace dropreg
