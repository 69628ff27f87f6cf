#include "tryon/io.hpp"

#include <cstring>
#include <fstream>

namespace tryon {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t& pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s.at(pos++))) << (8 * i);
  return v;
}

uint64_t get_u64(const std::string& s, size_t& pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s.at(pos++))) << (8 * i);
  return v;
}

}  // namespace

void save_dten(const std::filesystem::path& path, const Tensor& t) {
  const auto& im = t.impl();
  std::string out;
  out.reserve(im.buf.size() + 64);
  out += "DTEN";
  put_u32(out, 1);
  out.push_back(static_cast<char>(im.dtype == DType::f32 ? 0 : 1));
  put_u32(out, static_cast<uint32_t>(im.shape.size()));
  for (int64_t d : im.shape) put_u64(out, static_cast<uint64_t>(d));
  // payload, little-endian scalar by scalar
  if (im.dtype == DType::f32) {
    const float* p = im.ptr<float>();
    for (int64_t i = 0; i < im.numel(); ++i) {
      uint32_t bits = 0;
      std::memcpy(&bits, &p[i], 4);
      put_u32(out, bits);
    }
  } else {
    const double* p = im.ptr<double>();
    for (int64_t i = 0; i < im.numel(); ++i) {
      uint64_t bits = 0;
      std::memcpy(&bits, &p[i], 8);
      put_u64(out, bits);
    }
  }
  write_text_file(path, out);
}

Tensor load_dten(const std::filesystem::path& path) {
  const std::string s = read_text_file(path);
  size_t pos = 0;
  if (s.size() < 13 || s.compare(0, 4, "DTEN") != 0)
    throw IoError("not a DTEN file: " + path.string());
  pos = 4;
  const uint32_t version = get_u32(s, pos);
  if (version != 1) throw IoError("unsupported DTEN version " + std::to_string(version));
  const uint8_t dt = static_cast<uint8_t>(s.at(pos++));
  if (dt > 1) throw IoError("unsupported DTEN dtype " + std::to_string(dt));
  const uint32_t rank = get_u32(s, pos);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(get_u64(s, pos));
  Tensor t = Tensor::zeros(shape, dt == 0 ? DType::f32 : DType::f64);
  auto& im = t.impl();
  if (s.size() - pos != im.buf.size())
    throw IoError("DTEN payload size mismatch in " + path.string());
  if (im.dtype == DType::f32) {
    float* p = im.ptr<float>();
    for (int64_t i = 0; i < im.numel(); ++i) {
      const uint32_t bits = get_u32(s, pos);
      std::memcpy(&p[i], &bits, 4);
    }
  } else {
    double* p = im.ptr<double>();
    for (int64_t i = 0; i < im.numel(); ++i) {
      const uint64_t bits = get_u64(s, pos);
      std::memcpy(&p[i], &bits, 8);
    }
  }
  return t;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return s;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace tryon
