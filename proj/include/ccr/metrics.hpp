#pragma once

#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "ccr/registry.hpp"

namespace ccr {

/// Number of differing bits; labels must have equal length.
int hamming(const AttributeLabel& a, const AttributeLabel& b);

/// Group-level editing accuracy: fraction of (image, domain) pairs whose predicted domain bits all equal
/// the target bits. Throws std::invalid_argument on empty or mismatched input.
double eac(const std::vector<AttributeLabel>& predicted, const std::vector<AttributeLabel>& targets,
           const DomainRegistry& registry);
/// Bit-level remove accuracy: 1 - sum(hamming) / (m * total_bits).
double rac(const std::vector<AttributeLabel>& predicted, const std::vector<AttributeLabel>& originals,
           const DomainRegistry& registry);

// Full-reference image metrics on (3,H,W) images with range 1.0, computed in double precision.
inline constexpr double kPsnrCap = 100.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kGmsdC = 0.0026;

double mean_l1(const torch::Tensor& a, const torch::Tensor& b);
double mse(const torch::Tensor& a, const torch::Tensor& b);
double rmse(const torch::Tensor& a, const torch::Tensor& b);
double psnr(const torch::Tensor& a, const torch::Tensor& b);
double ssim(const torch::Tensor& a, const torch::Tensor& b);
double uqi(const torch::Tensor& a, const torch::Tensor& b);
/// min(5, floor(log2(min_dim / 11)) + 1) dyadic scales; negative contrast terms are clamped to 0.
double ms_ssim(const torch::Tensor& a, const torch::Tensor& b, int* scales_used = nullptr);
int ms_ssim_scales(int min_dim);
/// Standard deviation of the gradient-magnitude similarity map (Prewitt, Rec. 601 luminance). Lower is better.
double gmsd(const torch::Tensor& a, const torch::Tensor& b);

struct ImageMetrics {
  double mean_l1 = 0, mse = 0, rmse = 0, psnr = 0, uqi = 0, ssim = 0, ms_ssim = 0, gmsd = 0;
  int ms_ssim_scales = 0;

  static ImageMetrics compute(const torch::Tensor& a, const torch::Tensor& b);
  /// Element-wise mean over rows; throws on empty input.
  static ImageMetrics mean(const std::vector<ImageMetrics>& rows);
  nlohmann::json to_json() const;
  /// {"mse": "lower", "ssim": "higher", ...}
  static nlohmann::json directions();
};

}  // namespace ccr
