#include "gmilab/npy.hpp"

#include "gmilab/core.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace gmilab::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::size_t item_size(DType t) {
  switch (t) {
    case DType::f4:
    case DType::i4:
      return 4;
    case DType::f8:
    case DType::i8:
      return 8;
  }
  return 0;
}

const char* descr(DType t) {
  switch (t) {
    case DType::f4: return "<f4";
    case DType::f8: return "<f8";
    case DType::i4: return "<i4";
    case DType::i8: return "<i8";
  }
  return "";
}

DType parse_descr(const std::string& d, const std::string& where) {
  if (d == "<f4") return DType::f4;
  if (d == "<f8") return DType::f8;
  if (d == "<i4") return DType::i4;
  if (d == "<i8") return DType::i8;
  throw FormatError(where + ": unsupported NPY dtype '" + d + "'");
}

void write_raw(const std::filesystem::path& path, DType dtype,
               const std::vector<std::size_t>& shape, const void* data) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr(dtype) << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) dict << ",";
    if (i + 1 < shape.size()) dict << " ";
  }
  dict << "), }";
  std::string header = dict.str();
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64.
  const std::size_t prefix = 10;
  std::size_t total = prefix + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFileError("cannot open for writing: " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hlen), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  out.write(static_cast<const char*>(data),
            static_cast<std::streamsize>(count * item_size(dtype)));
  if (!out) throw FormatError("write failed: " + path.string());
}

template <typename T>
std::vector<T> convert(const Array& a) {
  std::vector<T> out(a.size());
  const std::uint8_t* p = a.bytes.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (a.dtype) {
      case DType::f4: {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = static_cast<T>(v);
        break;
      }
      case DType::f8: {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = static_cast<T>(v);
        break;
      }
      case DType::i4: {
        std::int32_t v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = static_cast<T>(v);
        break;
      }
      case DType::i8: {
        std::int64_t v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = static_cast<T>(v);
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::size_t Array::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double> Array::as_double() const { return convert<double>(*this); }
std::vector<float> Array::as_float() const { return convert<float>(*this); }

std::vector<std::int64_t> Array::as_int64() const {
  if (dtype == DType::f4 || dtype == DType::f8)
    throw FormatError("expected an integer array, found floating point");
  return convert<std::int64_t>(*this);
}

Array read(const std::filesystem::path& path) {
  const std::string where = path.string();
  if (!std::filesystem::exists(path)) throw MissingFileError("missing array file: " + where);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open: " + where);

  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) throw FormatError(where + ": not an NPY file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::size_t hlen = 0;
  if (version[0] == 1) {
    std::uint16_t h;
    in.read(reinterpret_cast<char*>(&h), 2);
    hlen = h;
  } else if (version[0] == 2 || version[0] == 3) {
    std::uint32_t h;
    in.read(reinterpret_cast<char*>(&h), 4);
    hlen = h;
  } else {
    throw FormatError(where + ": unsupported NPY version");
  }
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw FormatError(where + ": truncated header");

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(header, m, descr_re)) throw FormatError(where + ": header lacks descr");
  Array arr;
  arr.dtype = parse_descr(m[1], where);
  if (!std::regex_search(header, m, fortran_re))
    throw FormatError(where + ": header lacks fortran_order");
  if (m[1] == "True") throw FormatError(where + ": Fortran-order arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw FormatError(where + ": header lacks shape");
  std::string dims = m[1];
  std::stringstream ss(dims);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto first = tok.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
  }

  const std::size_t nbytes = arr.size() * item_size(arr.dtype);
  arr.bytes.resize(nbytes);
  in.read(reinterpret_cast<char*>(arr.bytes.data()), static_cast<std::streamsize>(nbytes));
  if (static_cast<std::size_t>(in.gcount()) != nbytes)
    throw ShapeMismatchError(where + ": payload shorter than declared shape");
  in.peek();
  if (!in.eof()) throw ShapeMismatchError(where + ": payload longer than declared shape");
  return arr;
}

void write_f4(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const float* values) {
  write_raw(path, DType::f4, shape, values);
}

void write_f8(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const double* values) {
  write_raw(path, DType::f8, shape, values);
}

void write_i8(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
              const std::int64_t* values) {
  write_raw(path, DType::i8, shape, values);
}

}  // namespace gmilab::npy
