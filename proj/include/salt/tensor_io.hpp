#pragma once

#include <iosfwd>
#include <string>

#include "salt/tensor.hpp"

namespace salt {

enum class Dtype { F32, F64 };

Dtype dtype_from_string(const std::string& s);
std::string dtype_to_string(Dtype d);

/// Raw tensor block: "SALT" magic, u32 dtype flag (0 = f32, 1 = f64),
/// u32 rank, u32 extents, then the contiguous little-endian payload.
void write_tensor_block(std::ostream& os, const Tensor& t, Dtype dtype);
Tensor read_tensor_block(std::istream& is);

void write_tensor(const std::string& path, const Tensor& t, Dtype dtype = Dtype::F64);
Tensor read_tensor(const std::string& path);

}  // namespace salt
