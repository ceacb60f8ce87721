#include "ccr/evaluation.hpp"

#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

#include "ccr/rng.hpp"

namespace ccr {

namespace {

std::size_t limit(const ImageSet& data, std::size_t max_images) {
  if (data.size() == 0) throw std::invalid_argument("evaluation needs at least one image");
  return max_images == 0 ? data.size() : std::min(max_images, data.size());
}

int next_state(const Domain& domain, int state) {
  if (!domain.exclusive) return 1;
  return state < 0 ? 0 : (state + 1) % static_cast<int>(domain.num_states());
}

EditPath path_for(const AttributeLabel& label, const DomainRegistry& reg, std::uint64_t seed, std::size_t image) {
  EditPath path;
  for (std::size_t d = 0; d < reg.num_domains(); ++d) {
    const auto& domain = reg.domains()[d];
    const int target = next_state(domain, reg.state_of(label, d));
    const std::size_t attribute = domain.exclusive ? static_cast<std::size_t>(target) : 0;
    const auto style_seed = static_cast<std::int64_t>(mix_seed(seed, image, d) >> 1);
    path.steps.push_back({{d, attribute, Direction::kForward}, StyleSource::from_seed(style_seed)});
  }
  return path;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json consistency_j = consistency.to_json();
  nlohmann::json reversibility_j = reversibility.to_json();
  return {{"config_hash", config_hash},
          {"m", m},
          {"n", n},
          {"eac", {{"path1", eac_path1}, {"path2", eac_path2}}},
          {"rac", rac},
          {"metrics", {{"consistency", consistency_j}, {"reversibility", reversibility_j}}},
          {"directions", ImageMetrics::directions()},
          {"consistency_label_agreement", consistency_label_agreement},
          {"symbolic_agreement", symbolic_agreement},
          {"rows", rows}};
}

MetricReport evaluate_paths(const ImageSet& data, const CcrModel& model, const EvalOptions& options) {
  torch::NoGradGuard no_grad;
  const auto& reg = model.registry();
  const std::size_t m = limit(data, options.max_images);
  MetricReport report;
  report.m = m;
  report.n = reg.num_domains();
  report.config_hash = options.config_hash;

  std::vector<AttributeLabel> pred1, pred2, targets, reversed, originals;
  std::vector<ImageMetrics> cons_rows, rev_rows;
  std::size_t label_agree = 0, sym_match = 0, sym_total = 0;
  std::vector<std::size_t> order(report.n);
  for (std::size_t i = 0; i < report.n; ++i) order[i] = i;
  if (report.n >= 2) std::swap(order[report.n - 2], order[report.n - 1]);

  for (std::size_t i = 0; i < m; ++i) {
    const auto source = data.images[static_cast<std::int64_t>(i)];
    const auto path = path_for(data.labels[i], reg, options.seed, i);
    const auto trace = apply_path(source, path, model);
    const auto cons = check_consistency(trace, order, model);
    const auto back = reverse_trace(trace, model);

    pred1.push_back(cons.trace_a.final_stage().predicted);
    pred2.push_back(cons.trace_b.final_stage().predicted);
    targets.push_back(cons.trace_a.final_stage().symbolic);
    reversed.push_back(back.final_stage().predicted);
    originals.push_back(data.labels[i]);
    label_agree += cons.labels_equal;
    for (const auto& st : trace.stages) {
      sym_match += st.predicted == st.symbolic;
      ++sym_total;
    }
    cons_rows.push_back(cons.metrics);
    rev_rows.push_back(ImageMetrics::compute(source, back.final_stage().image));
    report.rows.push_back({{"index", i},
                           {"path1", path.to_string(reg)},
                           {"target", targets.back().to_string()},
                           {"path1_predicted", pred1.back().to_string()},
                           {"path2_predicted", pred2.back().to_string()},
                           {"source", originals.back().to_string()},
                           {"reversed_predicted", reversed.back().to_string()},
                           {"consistency_l1", cons.metrics.mean_l1},
                           {"reversibility_l1", rev_rows.back().mean_l1}});
  }
  report.eac_path1 = eac(pred1, targets, reg);
  report.eac_path2 = eac(pred2, targets, reg);
  report.rac = rac(reversed, originals, reg);
  report.consistency = ImageMetrics::mean(cons_rows);
  report.reversibility = ImageMetrics::mean(rev_rows);
  report.consistency_label_agreement = static_cast<double>(label_agree) / static_cast<double>(m);
  report.symbolic_agreement = static_cast<double>(sym_match) / static_cast<double>(sym_total);
  return report;
}

std::map<std::string, double> single_attribute_accuracy(const ImageSet& data, const CcrModel& model,
                                                        std::uint64_t seed, std::size_t max_images) {
  torch::NoGradGuard no_grad;
  const auto& reg = model.registry();
  const std::size_t m = limit(data, max_images);
  std::map<std::string, double> out;
  for (std::size_t d = 0; d < reg.num_domains(); ++d) {
    const auto& domain = reg.domains()[d];
    for (std::size_t a = 0; a < domain.attributes.size(); ++a) {
      const int state = reg.forward_state(d, a);
      std::vector<std::int64_t> idx;
      for (std::size_t i = 0; i < m; ++i)
        if (reg.state_of(data.labels[i], d) != state) idx.push_back(static_cast<std::int64_t>(i));
      const auto& name = reg.bit_name(reg.bit_index(d, a));
      if (idx.empty()) continue;
      auto gen = at::detail::createCPUGenerator(mix_seed(seed, d, a, 0x5a));
      const auto xs = data.images.index_select(0, torch::tensor(idx));
      const auto noise = torch::randn({static_cast<std::int64_t>(idx.size()), model.config().noise_dim}, gen);
      const auto edited = model.translate_forward(xs, d, model.sample_style(d, state, noise));
      const auto pred = model.classify_attributes(edited);
      std::size_t ok = 0;
      for (const auto& label : pred.labels) ok += reg.state_of(label, d) == state;
      out[name] = static_cast<double>(ok) / static_cast<double>(idx.size());
    }
  }
  return out;
}

std::map<std::string, double> classifier_bit_accuracy(const ImageSet& data, const CcrModel& model) {
  torch::NoGradGuard no_grad;
  const auto& reg = model.registry();
  const std::size_t m = limit(data, 0);
  std::vector<std::size_t> hits(reg.total_bits(), 0);
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(m); start += kChunk) {
    const auto end = std::min<std::int64_t>(start + kChunk, static_cast<std::int64_t>(m));
    const auto pred = model.classify_attributes(data.images.slice(0, start, end));
    for (std::int64_t i = start; i < end; ++i)
      for (std::size_t b = 0; b < reg.total_bits(); ++b)
        hits[b] += pred.labels[static_cast<std::size_t>(i - start)].bits[b] == data.labels[static_cast<std::size_t>(i)].bits[b];
  }
  std::map<std::string, double> out;
  for (std::size_t b = 0; b < reg.total_bits(); ++b)
    out[reg.bit_name(b)] = static_cast<double>(hits[b]) / static_cast<double>(m);
  return out;
}

double reconstruction_error(const ImageSet& data, const CcrModel& model, std::size_t max_images) {
  torch::NoGradGuard no_grad;
  const auto m = static_cast<std::int64_t>(limit(data, max_images));
  double total = 0.0;
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = 0; start < m; start += kChunk) {
    const auto x = data.images.slice(0, start, std::min(start + kChunk, m));
    total += (model.generate(model.encode(x)) - x).abs().sum().item<double>();
  }
  return total / static_cast<double>(data.images.slice(0, 0, m).numel());
}

nlohmann::json FullEvaluation::to_json() const {
  auto j = paths.to_json();
  j["single_attribute_accuracy"] = single_attribute;
  j["classifier_bit_accuracy"] = classifier;
  j["reconstruction_l1"] = reconstruction_l1;
  return j;
}

FullEvaluation evaluate_all(const ImageSet& data, const CcrModel& model, const EvalOptions& options) {
  FullEvaluation out;
  out.paths = evaluate_paths(data, model, options);
  out.single_attribute = single_attribute_accuracy(data, model, options.seed, options.max_images);
  out.classifier = classifier_bit_accuracy(data, model);
  out.reconstruction_l1 = reconstruction_error(data, model, options.max_images);
  return out;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {"no_attention", "no_affine", "neither", "idloss"};
  return names;
}

TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
  if (variant == "default") return cfg;
  if (variant == "no_attention") {
    cfg.model.use_attention = false;
  } else if (variant == "no_affine") {
    cfg.model.use_affine = false;
  } else if (variant == "neither") {
    cfg.model.use_attention = false;
    cfg.model.use_affine = false;
  } else if (variant == "idloss") {
    cfg.model.use_identity_loss = true;
    cfg.weights.lambda_id = kAblationIdentityWeight;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  }
  return cfg;
}

nlohmann::json ablation_row(const std::string& variant, const TrainConfig& cfg, const FullEvaluation& eval) {
  return {{"variant", variant},
          {"use_attention", cfg.model.use_attention},
          {"use_affine", cfg.model.use_affine},
          {"use_identity_loss", cfg.model.use_identity_loss},
          {"identity_loss_weight", cfg.weights.lambda_id},
          {"eac_path1", eval.paths.eac_path1},
          {"eac_path2", eval.paths.eac_path2},
          {"rac", eval.paths.rac},
          {"single_attribute_accuracy", eval.single_attribute},
          {"consistency_l1", eval.paths.consistency.mean_l1},
          {"reversibility_mse", eval.paths.reversibility.mse}};
}

}  // namespace ccr
