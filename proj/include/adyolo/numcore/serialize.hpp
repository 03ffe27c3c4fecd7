#pragma once

// Tensor blob: "ADTN", u32 rank, u32 extents[rank], then IEEE-754 binary64
// values, all little-endian.

#include <iosfwd>
#include <string>

#include "adyolo/numcore/tensor.hpp"

namespace adyolo {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

}  // namespace adyolo
