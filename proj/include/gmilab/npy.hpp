#pragma once

// Minimal NPY v1.0 reader/writer: little-endian, C-order, 1-D or 2-D arrays.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gmilab::npy {

enum class DType { f4, f8, i4, i8 };

struct Array {
  DType dtype = DType::f4;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;

  std::size_t size() const;
  std::vector<double> as_double() const;
  std::vector<float> as_float() const;
  std::vector<std::int64_t> as_int64() const;
};

Array read(const std::filesystem::path& path);

void write_f4(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const float* values);
void write_f8(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const double* values);
void write_i8(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const std::int64_t* values);

}  // namespace gmilab::npy
