#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sarmatch/tensor.hpp"

namespace sarmatch {

// TSR1: "TSR1" | u32 rank | u32 dims[rank] | f32 payload, little-endian, row-major.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

// CKPT1: "CKPT1" | u32 count | { u32 name_len | name | TSR1 } * count.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::string& path);

// plain-text key=value, one per line, '#' comments
void save_kv_file(const std::string& path, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> load_kv_file(const std::string& path);

}  // namespace sarmatch
