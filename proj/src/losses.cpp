#include "ccr/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ccr {

namespace {

constexpr double kScoreEps = 1e-7;

torch::Tensor mean_l1(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes())
    throw std::invalid_argument("shape mismatch: " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  return (a - b).abs().mean();
}

torch::Tensor pair_mean(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("loss needs matching non-empty pair lists");
  auto sum = mean_l1(a[0], b[0]);
  for (std::size_t i = 1; i < a.size(); ++i) sum = sum + mean_l1(a[i], b[i]);
  return sum / static_cast<double>(a.size());
}

void check_weight(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument(std::string(name) + " must be finite and >= 0");
}

}  // namespace

void LossWeights::validate(bool use_identity_loss) const {
  check_weight(lambda_rec, "lambda_rec");
  check_weight(lambda_con, "lambda_con");
  check_weight(lambda_rev, "lambda_rev");
  check_weight(lambda_sty, "lambda_sty");
  check_weight(lambda_id, "lambda_id");
  if (lambda_id > 0.0 && !use_identity_loss) throw std::invalid_argument("lambda_id > 0 requires use_identity_loss");
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda_rec", lambda_rec}, {"lambda_con", lambda_con}, {"lambda_rev", lambda_rev},
          {"lambda_sty", lambda_sty}, {"lambda_id", lambda_id}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda_rec") w.lambda_rec = value.get<double>();
    else if (key == "lambda_con") w.lambda_con = value.get<double>();
    else if (key == "lambda_rev") w.lambda_rev = value.get<double>();
    else if (key == "lambda_sty") w.lambda_sty = value.get<double>();
    else if (key == "lambda_id") w.lambda_id = value.get<double>();
    else throw std::invalid_argument("unknown loss weight '" + key + "'");
  }
  return w;
}

std::vector<std::pair<torch::Tensor, std::size_t>> EpisodeTensors::fakes() const {
  std::vector<std::pair<torch::Tensor, std::size_t>> out;
  for (std::size_t k = 0; k < forward.size(); ++k) out.emplace_back(forward[k], k + 1);
  for (std::size_t k = backward.size(); k-- > 0;) out.emplace_back(backward[k], k);
  return out;
}

void EpisodeTensors::validate() const {
  const auto L = forward.size();
  if (!x00.defined()) throw std::invalid_argument("episode lacks x00");
  if (L == 0) throw std::invalid_argument("episode needs at least one forward step");
  if (backward.size() != L || self_rec.size() != L + 1 || styles.size() != L || extracted.size() != L)
    throw std::invalid_argument("episode tensor counts disagree with path length " + std::to_string(L));
  if (L >= 2 && !swapped_final.defined()) throw std::invalid_argument("episode lacks the swapped-order final");
  auto same = [&](const torch::Tensor& t) {
    if (t.sizes() != x00.sizes()) throw std::invalid_argument("episode images differ in shape");
  };
  for (const auto& t : forward) same(t);
  for (const auto& t : backward) same(t);
  for (const auto& t : self_rec) same(t);
  if (swapped_final.defined()) same(swapped_final);
  for (std::size_t k = 0; k < L; ++k)
    if (styles[k].sizes() != styles[0].sizes() || extracted[k].sizes() != styles[0].sizes())
      throw std::invalid_argument("episode styles differ in shape");
}

AdversarialLoss adv_loss_scores(const torch::Tensor& real_scores, const std::vector<torch::Tensor>& fake_scores) {
  auto clamp = [](const torch::Tensor& s) { return s.clamp(kScoreEps, 1.0 - kScoreEps); };
  AdversarialLoss out;
  out.loss_d = -torch::log(clamp(real_scores)).mean();
  out.loss_g = torch::zeros({}, real_scores.options());
  for (const auto& f : fake_scores) {
    out.loss_d = out.loss_d - torch::log(1.0 - clamp(f)).mean();
    out.loss_g = out.loss_g - torch::log(clamp(f)).mean();
  }
  return out;
}

AdversarialLoss adv_loss_logits(const torch::Tensor& real_logits, const std::vector<torch::Tensor>& fake_logits) {
  AdversarialLoss out;
  out.loss_d = -torch::log_sigmoid(real_logits).mean();
  out.loss_g = torch::zeros({}, real_logits.options());
  for (const auto& f : fake_logits) {
    out.loss_d = out.loss_d - torch::log_sigmoid(-f).mean();
    out.loss_g = out.loss_g - torch::log_sigmoid(f).mean();
  }
  return out;
}

AdversarialLoss adv_loss(const EpisodeTensors& ep, const HeadLogitsFn& discriminator, bool detach_fakes,
                         const torch::Tensor& real) {
  if (ep.stage_heads.size() != ep.length() + 1) throw std::invalid_argument("episode lacks stage head indices");
  auto select = [&](const torch::Tensor& images, std::size_t stage) {
    return discriminator(images).gather(1, ep.stage_heads[stage]);
  };
  std::vector<torch::Tensor> fake_logits;
  for (const auto& [image, stage] : ep.fakes()) fake_logits.push_back(select(detach_fakes ? image.detach() : image, stage));
  if (real.defined() && real.sizes() != ep.x00.sizes()) throw std::invalid_argument("real images must match x00");
  return adv_loss_logits(select(real.defined() ? real : ep.x00, 0), fake_logits);
}

torch::Tensor rec_loss(const EpisodeTensors& ep) {
  std::vector<torch::Tensor> stages;
  for (std::size_t k = 0; k <= ep.length(); ++k) stages.push_back(ep.stage(k));
  return pair_mean(stages, ep.self_rec);
}

torch::Tensor con_loss(const EpisodeTensors& ep) {
  if (!ep.swapped_final.defined()) return torch::zeros({}, ep.x00.options());
  return mean_l1(ep.forward.back(), ep.swapped_final);
}

torch::Tensor rev_loss(const EpisodeTensors& ep) {
  std::vector<torch::Tensor> stages;
  for (std::size_t k = 0; k < ep.length(); ++k) stages.push_back(ep.stage(k));
  return pair_mean(stages, ep.backward);
}

torch::Tensor sty_loss(const EpisodeTensors& ep) { return pair_mean(ep.extracted, ep.styles); }

torch::Tensor identity_loss(const torch::Tensor& embed_a, const torch::Tensor& embed_b) {
  if (embed_a.sizes() != embed_b.sizes()) throw std::invalid_argument("identity embeddings differ in shape");
  return (1.0 - torch::cosine_similarity(embed_a, embed_b, 1, 1e-12)).mean();
}

LossBreakdown combine_losses(const torch::Tensor& adv_g, const torch::Tensor& loss_d, const torch::Tensor& rec,
                             const torch::Tensor& con, const torch::Tensor& rev, const torch::Tensor& sty,
                             const LossWeights& w, const torch::Tensor& id) {
  LossBreakdown out{adv_g, loss_d, adv_g, rec, con, rev, sty, id};
  out.total_g = adv_g + w.lambda_rec * rec + w.lambda_con * con + w.lambda_rev * rev + w.lambda_sty * sty;
  if (id.defined()) out.total_g = out.total_g + w.lambda_id * id;
  return out;
}

LossBreakdown total_loss(const EpisodeTensors& ep, const HeadLogitsFn& discriminator, const LossWeights& w,
                         const torch::Tensor& id) {
  ep.validate();
  const auto adv = adv_loss(ep, discriminator);
  return combine_losses(adv.loss_g, adv.loss_d, rec_loss(ep), con_loss(ep), rev_loss(ep), sty_loss(ep), w, id);
}

nlohmann::json LossBreakdown::to_json() const {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  nlohmann::json j = {{"adv_d", v(loss_d)}, {"adv_g", v(adv_g)}, {"rec", v(rec)},
                      {"con", v(con)},      {"rev", v(rev)},      {"sty", v(sty)}};
  if (id.defined()) j["id"] = v(id);
  return j;
}

}  // namespace ccr
