#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccr/editpath.hpp"
#include "ccr/metrics.hpp"
#include "ccr/model.hpp"
#include "ccr/synthfaces.hpp"
#include "ccr/training.hpp"

namespace ccr {

struct EvalOptions {
  std::size_t max_images = 0;  // 0 = all
  std::uint64_t seed = 0;      // drives the per-image style seeds
  std::string config_hash;
};

/// Aggregated path evaluation. Path 1 edits every domain in registry order (exclusive domains move to the
/// next state, binary domains switch on); path 2 swaps its last two steps with the same style payloads.
struct MetricReport {
  std::size_t m = 0;
  std::size_t n = 0;
  double eac_path1 = 0.0;
  double eac_path2 = 0.0;
  double rac = 0.0;
  ImageMetrics consistency;    // path-1 final vs path-2 final
  ImageMetrics reversibility;  // source vs reversed path-1 final
  double consistency_label_agreement = 0.0;
  double symbolic_agreement = 0.0;  // predicted == symbolic over all path-1 stages
  std::string config_hash;
  std::vector<nlohmann::json> rows;

  nlohmann::json to_json() const;
};

MetricReport evaluate_paths(const ImageSet& data, const CcrModel& model, const EvalOptions& options = {});

/// Forward edit towards each attribute over the images that lack it; accuracy keyed by bit name.
std::map<std::string, double> single_attribute_accuracy(const ImageSet& data, const CcrModel& model,
                                                        std::uint64_t seed = 0, std::size_t max_images = 0);

/// Per-bit accuracy of the classifier on clean images, keyed by bit name.
std::map<std::string, double> classifier_bit_accuracy(const ImageSet& data, const CcrModel& model);

/// Mean-L1 error of the reconstruction G(E(x)).
double reconstruction_error(const ImageSet& data, const CcrModel& model, std::size_t max_images = 0);

/// Held-out evaluation bundle used by `eval` and `ablate`.
struct FullEvaluation {
  MetricReport paths;
  std::map<std::string, double> single_attribute;
  std::map<std::string, double> classifier;
  double reconstruction_l1 = 0.0;
  nlohmann::json to_json() const;
};
FullEvaluation evaluate_all(const ImageSet& data, const CcrModel& model, const EvalOptions& options = {});

/// "no_attention", "no_affine", "neither", "idloss"; "default" is the unmodified configuration.
const std::vector<std::string>& ablation_variants();
/// Throws std::invalid_argument for unknown names.
TrainConfig apply_variant(TrainConfig cfg, const std::string& variant);
/// Weight of the identity loss switched on by the idloss variant.
inline constexpr double kAblationIdentityWeight = 1.0;
/// One comparison row: the config flags followed by the scores.
nlohmann::json ablation_row(const std::string& variant, const TrainConfig& cfg, const FullEvaluation& eval);

}  // namespace ccr
