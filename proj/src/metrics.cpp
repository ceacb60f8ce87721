#include "ccr/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <torch/torch.h>

namespace ccr {

namespace {

torch::Tensor as_double(const torch::Tensor& t, const char* what) {
  if (t.dim() != 3) throw std::invalid_argument(std::string(what) + " expects (C,H,W) images");
  return t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
}

std::pair<torch::Tensor, torch::Tensor> prepare(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes())
    throw std::invalid_argument(std::string(what) + ": image shapes differ " + c10::str(a.sizes()) + " vs " +
                                c10::str(b.sizes()));
  return {as_double(a, what), as_double(b, what)};
}

torch::Tensor gaussian_1d() {
  std::array<double, kSsimWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return torch::tensor(std::vector<double>(w.begin(), w.end()), torch::kFloat64);
}

// Separable valid-mode Gaussian filtering of (C,1,H,W) maps.
torch::Tensor blur(const torch::Tensor& x) {
  static const torch::Tensor g = gaussian_1d();
  auto h = torch::conv2d(x, g.view({1, 1, 1, kSsimWindow}));
  return torch::conv2d(h, g.view({1, 1, kSsimWindow, 1}));
}

struct SsimMaps {
  torch::Tensor ssim;  // per-channel mean of the full SSIM map, (C)
  torch::Tensor cs;    // per-channel mean of the contrast-structure map, (C)
};

SsimMaps ssim_maps(const torch::Tensor& a, const torch::Tensor& b, double c1, double c2, bool zero_over_zero_is_one) {
  if (a.size(1) < kSsimWindow || a.size(2) < kSsimWindow)
    throw std::invalid_argument("SSIM needs images of at least 11x11");
  const auto x = a.unsqueeze(1);
  const auto y = b.unsqueeze(1);
  const auto mu_x = blur(x), mu_y = blur(y);
  const auto var_x = blur(x * x) - mu_x * mu_x;
  const auto var_y = blur(y * y) - mu_y * mu_y;
  const auto cov = blur(x * y) - mu_x * mu_y;
  const auto lum_num = 2.0 * mu_x * mu_y + c1;
  const auto lum_den = mu_x * mu_x + mu_y * mu_y + c1;
  const auto cs_num = 2.0 * cov + c2;
  const auto cs_den = var_x + var_y + c2;
  auto full = (lum_num * cs_num) / (lum_den * cs_den);
  auto cs = cs_num / cs_den;
  if (zero_over_zero_is_one) {
    full = torch::where((lum_den * cs_den).abs() <= 1e-15, torch::ones_like(full), full);
    cs = torch::where(cs_den.abs() <= 1e-15, torch::ones_like(cs), cs);
  }
  return {full.mean({1, 2, 3}), cs.mean({1, 2, 3})};
}

torch::Tensor luminance(const torch::Tensor& img) {
  if (img.size(0) == 1) return img[0];
  if (img.size(0) != 3) throw std::invalid_argument("GMSD expects 1 or 3 channels");
  return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2];
}

torch::Tensor gradient_magnitude(const torch::Tensor& lum) {
  const auto hx = torch::tensor({1.0, 0.0, -1.0, 1.0, 0.0, -1.0, 1.0, 0.0, -1.0}, torch::kFloat64).view({1, 1, 3, 3}) / 3.0;
  const auto hy = hx.transpose(2, 3).contiguous();
  const auto x = lum.unsqueeze(0).unsqueeze(0);
  const auto gx = torch::conv2d(x, hx);
  const auto gy = torch::conv2d(x, hy);
  return torch::sqrt(gx * gx + gy * gy);
}

constexpr std::array<double, 5> kMsWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

}  // namespace

int hamming(const AttributeLabel& a, const AttributeLabel& b) {
  if (a.bits.size() != b.bits.size()) throw std::invalid_argument("hamming: label lengths differ");
  int n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] != b.bits[i];
  return n;
}

double eac(const std::vector<AttributeLabel>& predicted, const std::vector<AttributeLabel>& targets,
           const DomainRegistry& registry) {
  if (predicted.empty()) throw std::invalid_argument("eac: no edited images");
  if (predicted.size() != targets.size()) throw std::invalid_argument("eac: prediction/target counts differ");
  std::size_t matches = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (std::size_t d = 0; d < registry.num_domains(); ++d) matches += registry.group_equal(predicted[i], targets[i], d);
  return static_cast<double>(matches) / static_cast<double>(predicted.size() * registry.num_domains());
}

double rac(const std::vector<AttributeLabel>& predicted, const std::vector<AttributeLabel>& originals,
           const DomainRegistry& registry) {
  if (predicted.empty()) throw std::invalid_argument("rac: no reversed images");
  if (predicted.size() != originals.size()) throw std::invalid_argument("rac: prediction/original counts differ");
  long errors = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) errors += hamming(predicted[i], originals[i]);
  return 1.0 - static_cast<double>(errors) / static_cast<double>(predicted.size() * registry.total_bits());
}

double mean_l1(const torch::Tensor& a, const torch::Tensor& b) {
  const auto [x, y] = prepare(a, b, "mean_l1");
  return (x - y).abs().mean().item<double>();
}

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  const auto [x, y] = prepare(a, b, "mse");
  return (x - y).pow(2).mean().item<double>();
}

double rmse(const torch::Tensor& a, const torch::Tensor& b) { return std::sqrt(mse(a, b)); }

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  const auto [x, y] = prepare(a, b, "ssim");
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  return ssim_maps(x, y, c1, c2, false).ssim.mean().item<double>();
}

double uqi(const torch::Tensor& a, const torch::Tensor& b) {
  const auto [x, y] = prepare(a, b, "uqi");
  return ssim_maps(x, y, 0.0, 0.0, true).ssim.mean().item<double>();
}

int ms_ssim_scales(int min_dim) {
  if (min_dim < kSsimWindow) throw std::invalid_argument("MS-SSIM needs images of at least 11x11");
  return std::min(5, static_cast<int>(std::floor(std::log2(static_cast<double>(min_dim) / kSsimWindow))) + 1);
}

double ms_ssim(const torch::Tensor& a, const torch::Tensor& b, int* scales_used) {
  auto [x, y] = prepare(a, b, "ms_ssim");
  const int scales = ms_ssim_scales(static_cast<int>(std::min(x.size(1), x.size(2))));
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsWeights[static_cast<std::size_t>(s)];
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  auto result = torch::ones({x.size(0)}, torch::kFloat64);
  for (int s = 0; s < scales; ++s) {
    const double w = kMsWeights[static_cast<std::size_t>(s)] / weight_sum;
    const auto maps = ssim_maps(x, y, c1, c2, false);
    const auto term = (s == scales - 1 ? maps.ssim : maps.cs).clamp_min(0.0);
    result = result * term.pow(w);
    if (s + 1 < scales) {
      x = torch::avg_pool2d(x.unsqueeze(0), 2).squeeze(0);
      y = torch::avg_pool2d(y.unsqueeze(0), 2).squeeze(0);
    }
  }
  if (scales_used != nullptr) *scales_used = scales;
  return result.mean().item<double>();
}

double gmsd(const torch::Tensor& a, const torch::Tensor& b) {
  const auto [x, y] = prepare(a, b, "gmsd");
  const auto ga = gradient_magnitude(luminance(x));
  const auto gb = gradient_magnitude(luminance(y));
  const auto gms = (2.0 * ga * gb + kGmsdC) / (ga * ga + gb * gb + kGmsdC);
  return gms.std(/*unbiased=*/false).item<double>();
}

ImageMetrics ImageMetrics::compute(const torch::Tensor& a, const torch::Tensor& b) {
  ImageMetrics m;
  m.mean_l1 = ccr::mean_l1(a, b);
  m.mse = ccr::mse(a, b);
  m.rmse = std::sqrt(m.mse);
  m.psnr = ccr::psnr(a, b);
  m.uqi = ccr::uqi(a, b);
  m.ssim = ccr::ssim(a, b);
  m.ms_ssim = ccr::ms_ssim(a, b, &m.ms_ssim_scales);
  m.gmsd = ccr::gmsd(a, b);
  return m;
}

ImageMetrics ImageMetrics::mean(const std::vector<ImageMetrics>& rows) {
  if (rows.empty()) throw std::invalid_argument("no metric rows to average");
  ImageMetrics out;
  for (const auto& r : rows) {
    out.mean_l1 += r.mean_l1;
    out.mse += r.mse;
    out.rmse += r.rmse;
    out.psnr += r.psnr;
    out.uqi += r.uqi;
    out.ssim += r.ssim;
    out.ms_ssim += r.ms_ssim;
    out.gmsd += r.gmsd;
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&out.mean_l1, &out.mse, &out.rmse, &out.psnr, &out.uqi, &out.ssim, &out.ms_ssim, &out.gmsd})
    *v /= n;
  out.ms_ssim_scales = rows.front().ms_ssim_scales;
  return out;
}

nlohmann::json ImageMetrics::to_json() const {
  return {{"mean_l1", mean_l1}, {"mse", mse},         {"rmse", rmse}, {"psnr", psnr},
          {"uqi", uqi},         {"ssim", ssim},       {"ms_ssim", ms_ssim},
          {"gmsd", gmsd},       {"ms_ssim_scales", ms_ssim_scales}};
}

nlohmann::json ImageMetrics::directions() {
  return {{"mean_l1", "lower"}, {"mse", "lower"},  {"rmse", "lower"},    {"psnr", "higher"},
          {"uqi", "higher"},    {"ssim", "higher"}, {"ms_ssim", "higher"}, {"gmsd", "lower"}};
}

}  // namespace ccr
