#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <torch/types.h>

namespace ccr {

/// Images are float32 tensors of shape (3, H, W) with values in [0, 1]. PNG files hold 8-bit RGB.
torch::Tensor load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Area-resamples a batch (N,3,H,W) to (N,3,R,R); returns the input when it already matches.
torch::Tensor resize_images(const torch::Tensor& images, int resolution);

std::string encode_png(const torch::Tensor& image);
torch::Tensor decode_png(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace ccr
