#include "salt/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace salt {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swaps");

Dtype dtype_from_string(const std::string& s) {
  if (s == "f32") return Dtype::F32;
  if (s == "f64") return Dtype::F64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

std::string dtype_to_string(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

namespace {

constexpr char kMagic[4] = {'S', 'A', 'L', 'T'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw DataError("tensor block: truncated header");
  return v;
}

}  // namespace

void write_tensor_block(std::ostream& os, const Tensor& t, Dtype dtype) {
  os.write(kMagic, 4);
  put_u32(os, dtype == Dtype::F32 ? 0u : 1u);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int e : t.shape()) put_u32(os, static_cast<uint32_t>(e));
  if (dtype == Dtype::F64) {
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> buf(t.values().begin(), t.values().end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw DataError("tensor block: write failed");
}

Tensor read_tensor_block(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("tensor block: bad magic (expected SALT)");
  }
  const uint32_t dtype_flag = get_u32(is);
  if (dtype_flag > 1) throw DataError("tensor block: unknown dtype flag " + std::to_string(dtype_flag));
  const uint32_t rank = get_u32(is);
  if (rank == 0 || rank > 8) throw DataError("tensor block: bad rank " + std::to_string(rank));
  Shape shape(rank);
  int64_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(get_u32(is));
    if (shape[i] <= 0) throw DataError("tensor block: bad extent");
    numel *= shape[i];
  }
  std::vector<double> data(static_cast<size_t>(numel));
  if (dtype_flag == 1) {
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(numel * 8));
  } else {
    std::vector<float> buf(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * 4));
    for (size_t i = 0; i < buf.size(); ++i) data[i] = buf[i];
  }
  if (!is) throw DataError("tensor block: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::string& path, const Tensor& t, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_tensor_block(os, t, dtype);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_tensor_block(is);
}

}  // namespace salt
