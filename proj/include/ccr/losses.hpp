#pragma once

#include <functional>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace ccr {

struct LossWeights {
  double lambda_rec = 1.0;
  double lambda_con = 1.0;
  double lambda_rev = 1.0;
  double lambda_sty = 1.0;
  double lambda_id = 0.0;  // identity-loss ablation only

  /// Throws std::invalid_argument on negative/non-finite weights or lambda_id > 0 without the ablation.
  void validate(bool use_identity_loss) const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

/// Named images of one path episode of length L (L = 3 reproduces x00 -> x01 -> x11 -> x21).
/// Stage k is x00 for k = 0 and forward[k-1] otherwise.
struct EpisodeTensors {
  torch::Tensor x00;
  std::vector<torch::Tensor> forward;   // x01, x11, x21
  torch::Tensor swapped_final;          // final image of the path with its last two steps swapped
  std::vector<torch::Tensor> backward;  // backward[k] restores stage k: x'00, x'01, x'11
  std::vector<torch::Tensor> self_rec;  // self_rec[k] reconstructs stage k: x''00 .. x''21
  std::vector<torch::Tensor> styles;    // s01, s11, s21, shape (N, d_s)
  std::vector<torch::Tensor> extracted; // F(x01), F(x11), F(x21)
  /// Discriminator head indices per stage, int64 (N, heads_per_image); selects the heads that match
  /// each stage's symbolic label.
  std::vector<torch::Tensor> stage_heads;

  std::size_t length() const { return forward.size(); }
  const torch::Tensor& stage(std::size_t k) const { return k == 0 ? x00 : forward.at(k - 1); }
  /// Six fakes for L = 3: forward chain then backward chain, paired with their symbolic stage.
  std::vector<std::pair<torch::Tensor, std::size_t>> fakes() const;
  /// Throws std::invalid_argument when counts or shapes disagree.
  void validate() const;
};

struct AdversarialLoss {
  torch::Tensor loss_d;
  torch::Tensor loss_g;
};

/// Probability form: loss_D = -(mean log D(real) + sum_f mean log(1 - D(f))), loss_G = -sum_f mean log D(f).
/// Scores are clamped to [1e-7, 1 - 1e-7].
AdversarialLoss adv_loss_scores(const torch::Tensor& real_scores, const std::vector<torch::Tensor>& fake_scores);
/// Same objective on pre-sigmoid logits via log-sigmoid; numerically stable when D saturates.
AdversarialLoss adv_loss_logits(const torch::Tensor& real_logits, const std::vector<torch::Tensor>& fake_logits);

/// Maps images (N,3,R,R) to per-head discriminator logits (N, num_heads).
using HeadLogitsFn = std::function<torch::Tensor(const torch::Tensor&)>;
/// `real` replaces x00 on the real side when given.
AdversarialLoss adv_loss(const EpisodeTensors& ep, const HeadLogitsFn& discriminator, bool detach_fakes = false,
                         const torch::Tensor& real = {});

torch::Tensor rec_loss(const EpisodeTensors& ep);
torch::Tensor con_loss(const EpisodeTensors& ep);
torch::Tensor rev_loss(const EpisodeTensors& ep);
torch::Tensor sty_loss(const EpisodeTensors& ep);

/// 1 - cos between identity embeddings, batch-mean.
torch::Tensor identity_loss(const torch::Tensor& embed_a, const torch::Tensor& embed_b);

struct LossBreakdown {
  torch::Tensor total_g;
  torch::Tensor loss_d;
  torch::Tensor adv_g, rec, con, rev, sty;
  torch::Tensor id;  // undefined unless supplied
  nlohmann::json to_json() const;
};

/// total_g = adv_G + lambda_rec*rec + lambda_con*con + lambda_rev*rev + lambda_sty*sty (+ lambda_id*id).
LossBreakdown combine_losses(const torch::Tensor& adv_g, const torch::Tensor& loss_d, const torch::Tensor& rec,
                             const torch::Tensor& con, const torch::Tensor& rev, const torch::Tensor& sty,
                             const LossWeights& w, const torch::Tensor& id = {});
LossBreakdown total_loss(const EpisodeTensors& ep, const HeadLogitsFn& discriminator, const LossWeights& w,
                         const torch::Tensor& id = {});

}  // namespace ccr
