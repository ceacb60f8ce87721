#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "ccr/registry.hpp"

namespace ccr {

/// Architecture and ablation switches. The style length always equals the latent channel count.
struct ModelConfig {
  int resolution = 64;
  int latent_channels = 256;
  int noise_dim = 16;
  std::vector<int> encoder_widths = {64, 128};
  int translator_hidden = 0;  // 0 selects latent_channels
  int mapper_hidden = 128;
  std::vector<int> disc_widths = {32, 64, 128, 256};
  int identity_dim = 32;
  bool use_attention = true;
  bool use_affine = true;
  bool use_identity_loss = false;

  int latent_size() const { return resolution / 4; }
  int style_dim() const { return latent_channels; }
  int hidden() const { return translator_hidden > 0 ? translator_hidden : latent_channels; }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  /// 32x32 configuration that trains on a laptop CPU.
  static ModelConfig desk();
  /// 16x16, C_z = 8; used for finite-difference checks.
  static ModelConfig tiny();
};

/// Latent style vector for one domain, batched as (N, d_s).
struct StyleCode {
  torch::Tensor values;
  std::size_t domain = 0;
};

/// Logit used by the attention stub when attention is disabled (sigmoid(10) ~ 1).
inline constexpr double kDisabledMaskLogit = 10.0;

class ConfigurationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---- networks --------------------------------------------------------------------------------------

struct EncoderImpl : torch::nn::Module {
  explicit EncoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images);
  torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(Encoder);

struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& fused);
  torch::nn::Sequential net{nullptr};
};
TORCH_MODULE(Generator);

/// Strided conv trunk followed by a linear projection; shared by the discriminator, the attribute
/// classifier, the identity embedder and the style extractors.
struct ConvTrunkImpl : torch::nn::Module {
  ConvTrunkImpl(int resolution, const std::vector<int>& widths, bool global_pool);
  torch::Tensor forward(const torch::Tensor& images);
  int64_t out_features = 0;
  torch::nn::Sequential net{nullptr};
  bool global_pool;
};
TORCH_MODULE(ConvTrunk);

/// Forward-module and backward-module parts for one domain: a style mapper per appearance state,
/// attention M, affine T (FM) and the style extractor F (BM).
struct DomainTranslatorImpl : torch::nn::Module {
  DomainTranslatorImpl(const ModelConfig& cfg, std::size_t num_states);
  torch::nn::ModuleList mappers{nullptr};
  torch::nn::Sequential attention{nullptr};
  torch::nn::Sequential affine{nullptr};
  ConvTrunk extractor_trunk{nullptr};
  torch::nn::Linear extractor_head{nullptr};

  void save_forward(torch::serialize::OutputArchive& archive) const;
  void save_backward(torch::serialize::OutputArchive& archive) const;
  void load_forward(torch::serialize::InputArchive& archive);
  void load_backward(torch::serialize::InputArchive& archive);
};
TORCH_MODULE(DomainTranslator);

struct DiscriminatorImpl : torch::nn::Module {
  DiscriminatorImpl(const ModelConfig& cfg, std::size_t num_heads);
  /// (N, num_heads) logits.
  torch::Tensor forward(const torch::Tensor& images);
  ConvTrunk trunk{nullptr};
  torch::nn::Linear heads{nullptr};
};
TORCH_MODULE(Discriminator);

struct ClassifierImpl : torch::nn::Module {
  ClassifierImpl(const ModelConfig& cfg, std::size_t num_bits);
  torch::Tensor forward(const torch::Tensor& images);
  ConvTrunk trunk{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(Classifier);

struct IdentityEmbedderImpl : torch::nn::Module {
  explicit IdentityEmbedderImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images);
  ConvTrunk trunk{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(IdentityEmbedder);

// ---- model ---------------------------------------------------------------------------------------

struct AttributePrediction {
  torch::Tensor probabilities;  // (N, total_bits)
  std::vector<AttributeLabel> labels;
};

/// All learnable components: shared E, G, D, cls, guide (and the optional identity embedder) plus one translator
/// per registry domain.
class CcrModel {
 public:
  CcrModel(ModelConfig config, DomainRegistry registry, std::uint64_t seed = 0);

  const ModelConfig& config() const noexcept { return config_; }
  const DomainRegistry& registry() const noexcept { return registry_; }
  torch::Dtype dtype() const noexcept { return dtype_; }
  void to(torch::Dtype dtype);

  // Images are (N, 3, R, R) in [0, 1]; an unbatched (3, R, R) image is accepted and returned unbatched.
  torch::Tensor encode(const torch::Tensor& images) const;
  StyleCode sample_style(std::size_t domain, int state, const torch::Tensor& noise) const;
  StyleCode sample_style(std::size_t domain, std::string_view attribute, const torch::Tensor& noise) const;
  StyleCode extract_style(const torch::Tensor& images, std::size_t domain) const;
  torch::Tensor attention_mask(const torch::Tensor& latent, const StyleCode& style) const;
  torch::Tensor affine_feature(const torch::Tensor& latent, const StyleCode& style) const;
  static torch::Tensor fuse(const torch::Tensor& latent, const torch::Tensor& mask_logits,
                            const torch::Tensor& affine);
  torch::Tensor generate(const torch::Tensor& fused) const;
  torch::Tensor translate_forward(const torch::Tensor& images, std::size_t domain, const StyleCode& style) const;
  torch::Tensor translate_backward(const torch::Tensor& edited, const torch::Tensor& source_reference,
                                   std::size_t domain) const;

  /// Per-head discriminator logits, (N, num_heads). Heads are indexed by head_index(domain, state).
  torch::Tensor discriminator_logits(const torch::Tensor& images) const;
  /// Real-score in (0, 1) from the head of (domain, state).
  torch::Tensor discriminate(const torch::Tensor& images, std::size_t domain, int state) const;
  std::size_t num_heads() const noexcept { return num_heads_; }
  std::size_t head_index(std::size_t domain, int state) const;

  torch::Tensor classifier_logits(const torch::Tensor& images) const;
  /// Independently trained attribute classifier that supervises the translators; never used for evaluation.
  torch::Tensor guide_logits(const torch::Tensor& images) const;
  /// Per-bit probabilities thresholded at 0.5; exclusive groups keep only their most probable bit.
  AttributePrediction classify_attributes(const torch::Tensor& images) const;

  /// L2-normalised identity embedding; only available with use_identity_loss.
  torch::Tensor identity_embed(const torch::Tensor& images) const;

  Encoder& encoder() { return encoder_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  Classifier& classifier() { return classifier_; }
  Classifier& guide() { return guide_; }
  IdentityEmbedder& identity_embedder();
  DomainTranslator& translator(std::size_t domain) { return translators_.at(domain); }
  DomainTranslator& translator(std::size_t domain) const { return translators_.at(domain); }

  /// Component identifiers used by checkpoints and freeze sets: "E", "G", "D", "cls", "id",
  /// "T:<domain>".
  std::vector<std::string> component_names() const;
  std::shared_ptr<torch::nn::Module> component(const std::string& name) const;
  static std::string translator_name(const std::string& domain) { return "T:" + domain; }

  /// Deep copy of all parameters and buffers.
  CcrModel clone() const;

 private:
  torch::Tensor prepare_images(const torch::Tensor& images, bool& squeezed) const;
  torch::Tensor check_latent(const torch::Tensor& latent) const;
  torch::Tensor style_map(const torch::Tensor& latent, const StyleCode& style) const;

  ModelConfig config_;
  DomainRegistry registry_;
  torch::Dtype dtype_ = torch::kFloat32;
  // libtorch forward() is non-const; holders are mutable so inference stays usable through const models.
  mutable Encoder encoder_{nullptr};
  mutable Generator generator_{nullptr};
  mutable Discriminator discriminator_{nullptr};
  mutable Classifier classifier_{nullptr};
  mutable Classifier guide_{nullptr};
  mutable IdentityEmbedder identity_{nullptr};
  mutable std::vector<DomainTranslator> translators_;
  std::vector<std::size_t> head_offset_;
  std::size_t num_heads_ = 0;
};

// ---- checkpoints -----------------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

/// Parsed manifest.json of a checkpoint directory.
struct CheckpointManifest {
  int format_version = kCheckpointFormatVersion;
  ModelConfig model_config;
  nlohmann::json registry;
  std::vector<int> trained_stages;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointManifest from_json(const nlohmann::json& j);
};

/// Writes manifest.json plus one blob per component (E, G, D, cls, id, fm_<domain>, bm_<domain>).
void save_checkpoint(const std::filesystem::path& dir, const CcrModel& model, const CheckpointManifest& manifest);
CheckpointManifest read_manifest(const std::filesystem::path& dir);
struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::unique_ptr<CcrModel> model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);
/// SHA-256 over the manifest and every blob, in a fixed order.
std::string checkpoint_hash(const std::filesystem::path& dir);

/// Flat parameter/buffer snapshot of one component, keyed by qualified name.
using ComponentSnapshot = std::map<std::string, torch::Tensor>;
ComponentSnapshot snapshot(const torch::nn::Module& module);
bool bit_equal(const ComponentSnapshot& a, const ComponentSnapshot& b);

}  // namespace ccr
