#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "idcloak/tensor.hpp"

namespace idcloak {

// ".tns" layout, all integers little-endian:
//   "IDTN" | version u16 | rank u8 | dims u32 x rank | payload f64 x volume
// Checkpoints append a named-slice table after the payload:
//   count u32 | per slice: name length u32, UTF-8 name, offset u64, length u64
inline constexpr char kTnsMagic[4] = {'I', 'D', 'T', 'N'};
inline constexpr std::uint16_t kTnsVersion = 1;

struct NamedSlice {
    std::string name;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    friend bool operator==(const NamedSlice&, const NamedSlice&) = default;
};

struct TnsRecord {
    Shape shape;
    Eigen::VectorXd values;
    std::vector<NamedSlice> slices;  // empty for plain tensors
};

std::string encode_tns(const TnsRecord& rec);
// `source` names the origin in error messages.
TnsRecord decode_tns(const std::string& bytes, const std::string& source = "<memory>");

void write_tns(const std::filesystem::path& path, const TnsRecord& rec);
TnsRecord read_tns(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const DataTensor& t);
DataTensor read_tensor(const std::filesystem::path& path);

// Stacks equally shaped tensors into one record of shape [n, ...].
void write_tensor_stack(const std::filesystem::path& path, const std::vector<DataTensor>& items);
std::vector<DataTensor> read_tensor_stack(const std::filesystem::path& path);

} // namespace idcloak
