#include "tryon/png.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tryon/io.hpp"

namespace tryon {

namespace {

uint32_t crc32_of(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

void put_be32(std::string& s, uint32_t v) {
  for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  const uint32_t crc =
      crc32_of(reinterpret_cast<const uint8_t*>(body.data()), body.size()) ^ 0xffffffffu;
  put_be32(out, crc);
}

}  // namespace

void write_png(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (width < 1 || height < 1 ||
      rgb.size() != static_cast<size_t>(width) * static_cast<size_t>(height) * 3)
    throw ContractError("write_png: payload does not match dimensions");

  std::string out("\x89PNG\r\n\x1a\n", 8);

  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  put_chunk(out, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::string raw;
  raw.reserve(static_cast<size_t>(height) * (static_cast<size_t>(width) * 3 + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.append(reinterpret_cast<const char*>(rgb.data()) +
                   static_cast<size_t>(y) * width * 3,
               static_cast<size_t>(width) * 3);
  }

  // zlib wrapper around stored deflate blocks
  std::string z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t pos = 0;
  while (pos < raw.size()) {
    const size_t chunk = std::min<size_t>(65535, raw.size() - pos);
    const bool final = pos + chunk == raw.size();
    z.push_back(final ? 1 : 0);
    z.push_back(static_cast<char>(chunk & 0xff));
    z.push_back(static_cast<char>((chunk >> 8) & 0xff));
    z.push_back(static_cast<char>(~chunk & 0xff));
    z.push_back(static_cast<char>((~chunk >> 8) & 0xff));
    z.append(raw, pos, chunk);
    pos += chunk;
  }
  uint32_t a = 1, b = 0;
  for (unsigned char ch : raw) {
    a = (a + ch) % 65521;
    b = (b + a) % 65521;
  }
  put_be32(z, (b << 16) | a);

  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  write_text_file(path, out);
}

std::vector<uint8_t> latent_frame_to_rgb(const Tensor& latent, int frame) {
  if (latent.rank() != 4) throw ShapeError("preview: expected [f,h,w,cz]");
  const int64_t h = latent.dim(1), w = latent.dim(2), cz = latent.dim(3);
  std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
  const auto& im = latent.impl();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int rc = 0; rc < 3; ++rc) {
        double acc = 0.0;
        for (int64_t k = 0; k < cz; ++k) {
          const double wgt = (k == rc) ? 0.9 : (k == 3 ? 0.1 : 0.05);
          acc += wgt * im.get(((static_cast<int64_t>(frame) * h + y) * w + x) * cz + k);
        }
        acc = std::clamp(acc, 0.0, 1.0);
        rgb[static_cast<size_t>((y * w + x) * 3 + rc)] =
            static_cast<uint8_t>(std::lround(acc * 255.0));
      }
  return rgb;
}

void save_frame_previews(const std::filesystem::path& dir, const std::string& prefix,
                         const Tensor& latent) {
  const int f = static_cast<int>(latent.dim(0));
  for (int fr = 0; fr < f; ++fr) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_f%03d.png", prefix.c_str(), fr);
    write_png(dir / name, static_cast<int>(latent.dim(2)), static_cast<int>(latent.dim(1)),
              latent_frame_to_rgb(latent, fr));
  }
}

}  // namespace tryon
