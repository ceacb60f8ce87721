#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccr/metrics.hpp"
#include "ccr/model.hpp"
#include "ccr/registry.hpp"

namespace ccr {

/// Where a step's style comes from.
struct StyleSource {
  enum class Kind { kFresh, kSeed, kReference, kStored };
  Kind kind = Kind::kFresh;
  std::int64_t seed = 0;       // kSeed
  std::string reference;       // kReference: image file
  std::string style_id;        // kStored

  static StyleSource fresh() { return {}; }
  static StyleSource from_seed(std::int64_t seed) { return {Kind::kSeed, seed, {}, {}}; }
  static StyleSource from_reference(std::string file) { return {Kind::kReference, 0, std::move(file), {}}; }
  static StyleSource stored(std::string id) { return {Kind::kStored, 0, {}, std::move(id)}; }

  /// Grammar suffix without '@': "seed:7", "ref:a.png", "stored:s1"; empty for fresh.
  std::string to_string() const;
  bool operator==(const StyleSource&) const = default;
};

struct EditStep {
  AttributeEdit edit;
  StyleSource style;
  bool operator==(const EditStep&) const = default;
};

struct EditPath {
  std::vector<EditStep> steps;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }
  std::string to_string(const DomainRegistry& registry) const;
  bool operator==(const EditPath&) const = default;
};

/// Parses `(+|-)attribute[@style]` tokens separated by commas. Errors carry the column of the offending
/// character in the full text.
EditStep parse_step(std::string_view token, const DomainRegistry& registry);
EditPath parse_path(std::string_view text, const DomainRegistry& registry);

/// Exchanges steps i and j with their style payloads; throws std::out_of_range.
EditPath swap_steps(const EditPath& path, std::size_t i, std::size_t j);

/// True when b holds exactly the steps of a (edits and style sources) in some order.
bool is_permutation_of(const EditPath& a, const EditPath& b);

/// Named style vectors referenced by StyleSource::stored.
using StyleStore = std::map<std::string, StyleCode>;

struct TraceStage {
  std::optional<EditStep> step;  // empty for the head (source) stage
  torch::Tensor image;           // (3,R,R)
  std::optional<StyleCode> style;
  /// How the style was obtained: "sampled:seed:<n>", "extracted:ref:<file>", "extracted:stage:<k>", "stored:<id>".
  std::string provenance;
  AttributeLabel predicted;
  AttributeLabel symbolic;
};

struct EditTrace {
  std::vector<TraceStage> stages;

  std::size_t size() const { return stages.size(); }
  const TraceStage& head() const { return stages.front(); }
  const TraceStage& final_stage() const { return stages.back(); }
  EditPath path() const;

  /// Metadata plus "image" file names; images are written by save().
  nlohmann::json to_json(const DomainRegistry& registry, const std::string& image_prefix = "stage_") const;
  /// Writes <dir>/<prefix><k>.png for every stage and <dir>/trace.json.
  void save(const std::filesystem::path& dir, const DomainRegistry& registry, const nlohmann::json& extra = {},
            const std::string& image_prefix = "stage_") const;
  static EditTrace load(const std::filesystem::path& trace_json, const DomainRegistry& registry);
};

struct ApplyOptions {
  std::filesystem::path reference_dir = ".";
  /// Seeds the draws for fresh-style steps; the drawn seed is recorded in the trace.
  std::uint64_t fresh_seed = 0;
  const StyleStore* store = nullptr;
};

class EditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Folds FM/BM over the steps. Backward steps use the reference style when given; a backward step without a
/// reference on a binary domain uses a sampled "absent" style, and on an exclusive domain it is an error.
EditTrace apply_path(const torch::Tensor& source, const EditPath& path, const CcrModel& model,
                     const ApplyOptions& options = {});
/// Appends one step to an existing trace.
void apply_step(EditTrace& trace, const EditStep& step, const CcrModel& model, const ApplyOptions& options = {});
/// Creates the head stage (source image + labels).
EditTrace start_trace(const torch::Tensor& source, const CcrModel& model,
                      const std::optional<AttributeLabel>& known_label = std::nullopt);

/// Inverse steps in reverse order; stage k is restored by BM with the style of the forward trace's stage k.
EditTrace reverse_trace(const EditTrace& trace, const CcrModel& model);

struct ContinuityReport {
  std::vector<bool> stage_ok;  // stage_ok[0] is the head, always true
  std::optional<std::size_t> first_violation;
  std::string detail;
  bool ok() const { return !first_violation.has_value(); }
  nlohmann::json to_json() const;
};
/// Every domain edited before stage k must keep its symbolic value in the prediction at stage k.
ContinuityReport check_continuity(const EditTrace& trace, const DomainRegistry& registry);

struct ConsistencyReport {
  EditTrace trace_a, trace_b;
  ImageMetrics metrics;  // between the two finals
  bool labels_equal = false;
  nlohmann::json to_json() const;
};
/// Runs both orders with identical style payloads. Fresh/seeded/reference styles of path_a are resolved once
/// and reused for path_b. Throws EditError when path_b is not a permutation of path_a.
ConsistencyReport check_consistency(const torch::Tensor& source, const EditPath& path_a, const EditPath& path_b,
                                    const CcrModel& model, const ApplyOptions& options = {});
/// Same comparison starting from an applied trace; `order` permutes its steps.
ConsistencyReport check_consistency(const EditTrace& trace, const std::vector<std::size_t>& order,
                                    const CcrModel& model);

/// Interactive undo stack over one source image.
class Session {
 public:
  Session(std::string id, const torch::Tensor& source, const CcrModel& model,
          std::optional<AttributeLabel> known_label = std::nullopt);

  struct UndoResult {
    std::size_t stage_index = 0;
    torch::Tensor image;       // model-reversed
    torch::Tensor cached;      // pre-edit image kept from the trace
    AttributeLabel predicted;
    double reversal_error = 0.0;  // mean-L1(image, cached)
  };

  const std::string& id() const { return id_; }
  const TraceStage& push_edit(const EditStep& step, const ApplyOptions& options = {});
  /// Throws EditError("nothing to undo") on an empty history.
  UndoResult undo();
  const EditTrace& trace() const { return trace_; }
  ConsistencyReport whatif(const std::vector<std::size_t>& order) const;
  ContinuityReport continuity() const;

  std::mutex& mutex() { return mutex_; }

 private:
  std::string id_;
  const CcrModel* model_;
  EditTrace trace_;
  std::uint64_t fresh_counter_ = 0;
  std::mutex mutex_;
};

}  // namespace ccr
