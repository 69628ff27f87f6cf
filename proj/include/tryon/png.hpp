#pragma once

#include <filesystem>

#include "tryon/tensor.hpp"

namespace tryon {

// Minimal RGB8 PNG writer (stored deflate blocks, fully deterministic).
void write_png(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& rgb);

// Fixed linear visualization map from cz latent channels to RGB in [0,1];
// purely for previews, no round-trip fidelity implied.
std::vector<uint8_t> latent_frame_to_rgb(const Tensor& latent, int frame);

void save_frame_previews(const std::filesystem::path& dir, const std::string& prefix,
                         const Tensor& latent);

}  // namespace tryon
