#pragma once

#include <filesystem>

#include "tryon/tensor.hpp"

namespace tryon {

// Binary tensor dump: magic "DTEN", u32 version=1, u8 dtype (0=f32, 1=f64),
// u32 rank, rank x u64 dims, little-endian payload.
void save_dten(const std::filesystem::path& path, const Tensor& t);
Tensor load_dten(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tryon
