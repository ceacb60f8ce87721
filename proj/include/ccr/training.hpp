#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccr/losses.hpp"
#include "ccr/model.hpp"
#include "ccr/rng.hpp"
#include "ccr/synthfaces.hpp"

namespace ccr {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class StageSelection { kStage1 = 1, kStage2 = 2, kStage3 = 3, kAll = 0 };
StageSelection parse_stage(const std::string& text);

struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  LossWeights weights;
  std::uint64_t seed = 0;
  int batch_size = 8;
  int epochs_stage1 = 20;
  int epochs_stage2 = 10;  // per domain
  int epochs_stage3 = 10;
  int classifier_epochs = 10;
  int identity_epochs = 10;
  /// Caps optimisation steps per epoch; 0 means a full pass over the training split.
  int max_iters_per_epoch = 0;
  double lr_g = 1e-3;
  double lr_d = 2e-4;
  double lr_cls = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.99;
  /// Scales adv_G in every stage.
  double adv_weight = 0.1;
  /// Weight of the discriminator term that scores real images under a wrong attribute state as fake.
  double mismatch_weight = 1.0;
  /// Weight of the frozen guide classifier's BCE on every translated image (target: the stage's symbolic label).
  double guide_weight = 3.0;
  /// Stages 2-3: D's real side is the frozen reconstruction G(E(x)) instead of x.
  bool reconstructed_real = true;
  /// Reconstruction weight of the stage-1 autoencoder.
  double stage1_rec_weight = 10.0;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint_dir = "checkpoints";
  /// Log one JSONL record every N iterations.
  int log_every = 10;
  /// Held-out evaluation at the end of every N-th epoch; 0 disables.
  int eval_every = 1;

  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Component identifiers (see CcrModel::component_names) that must stay bit-identical.
using FreezeSet = std::set<std::string>;
using ModelSnapshot = std::map<std::string, ComponentSnapshot>;

ModelSnapshot snapshot_model(const CcrModel& model);

struct FreezeReport {
  bool ok = true;
  std::vector<std::string> changed;  // frozen components that differ
  explicit operator bool() const { return ok; }
};
FreezeReport freeze_check(const ModelSnapshot& before, const ModelSnapshot& after, const FreezeSet& frozen);
FreezeReport freeze_check(const std::filesystem::path& before, const std::filesystem::path& after,
                          const FreezeSet& frozen);

/// One edit of a sampled training path: domain plus the target appearance state.
struct PathSample {
  std::size_t domain = 0;
  int state = 0;
};

/// Discriminator heads selected by each sample's label, int64 (N, num_domains).
torch::Tensor label_heads(const CcrModel& model, const std::vector<AttributeLabel>& labels);

/// Builds the episode of Eqs. 1-3 for a path of any length >= 1. styles[k] drives step k.
EpisodeTensors build_episode(const CcrModel& model, const torch::Tensor& x00, const std::vector<AttributeLabel>& labels,
                             const std::vector<PathSample>& path, const std::vector<StyleCode>& styles);

struct StepEvent {
  int stage = 0;
  std::int64_t iteration = 0;
  std::optional<std::size_t> domain;       // stage 2
  std::vector<std::size_t> path_domains;   // stage 3
  const CcrModel* model = nullptr;
  nlohmann::json losses;
};
using StepCallback = std::function<void(const StepEvent&)>;

struct TrainingData {
  ImageSet train;
  ImageSet test;
};
/// Loads a generated dataset and resamples it to the model resolution.
TrainingData load_training_data(const std::filesystem::path& dataset, const DomainRegistry& registry, int resolution);

enum class InitMode {
  kFresh,           // new weights from cfg.seed
  kFromCheckpoint,  // continue from the finished checkpoint in cfg.checkpoint_dir
  kResume,          // continue from the last epoch boundary recorded in cfg.checkpoint_dir/state
};

/// Drives the three-stage schedule. Checkpoints go to cfg.checkpoint_dir; optimiser state and progress for
/// resuming go to cfg.checkpoint_dir/state; the JSONL log is cfg.checkpoint_dir/train_log.jsonl.
class Trainer {
 public:
  Trainer(TrainConfig cfg, DomainRegistry registry, TrainingData data, InitMode mode = InitMode::kFresh);
  ~Trainer();

  void set_step_callback(StepCallback cb) { callback_ = std::move(cb); }

  void run(StageSelection selection);
  void train_stage1();
  void train_stage2();
  void train_stage3();
  void train_classifier();
  void train_identity_embedder();

  CcrModel& model() { return *model_; }
  const CheckpointManifest& manifest() const { return manifest_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  struct Optimizers;
  struct Progress {
    int stage = 0;
    int epoch = 0;
    std::int64_t iteration = 0;
  };

  void require_stages(int stage) const;
  void finish_stage(int stage);
  void save_progress(int stage, int next_epoch);
  void log_step(int stage, const nlohmann::json& losses, const nlohmann::json& extra = {});
  torch::Tensor mismatch_loss(const torch::Tensor& real, const std::vector<AttributeLabel>& labels, Rng& rng) const;
  torch::Tensor guide_loss(const EpisodeTensors& ep, const std::vector<AttributeLabel>& labels,
                           const std::vector<PathSample>& path) const;
  torch::Tensor real_for_d(const torch::Tensor& real) const;
  void check_finite(std::initializer_list<torch::Tensor> values, int stage) const;
  void notify(StepEvent ev);
  std::vector<std::vector<std::int64_t>> epoch_batches(int stage, int epoch, std::uint64_t salt = 0) const;
  void set_trainable(const std::string& component, bool trainable);
  int resume_epoch(int stage) const;
  void build_optimizers();

  TrainConfig cfg_;
  DomainRegistry registry_;
  TrainingData data_;
  std::unique_ptr<CcrModel> model_;
  std::unique_ptr<Optimizers> opt_;
  CheckpointManifest manifest_;
  Progress progress_;
  std::int64_t iteration_ = 0;
  std::ofstream log_;
  StepCallback callback_;
};

/// Applies CCR_DETERMINISTIC=1 (single thread, deterministic kernels). Returns whether it is active.
bool apply_deterministic_mode();

}  // namespace ccr
