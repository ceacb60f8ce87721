#include "ccr/model.hpp"

#include <algorithm>
#include <fstream>

#include "ccr/image_io.hpp"

namespace ccr {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

torch::Tensor broadcast_style(const torch::Tensor& style, int64_t h, int64_t w) {
  return style.unsqueeze(-1).unsqueeze(-1).expand({style.size(0), style.size(1), h, w});
}

}  // namespace

// ---- config ----------------------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (resolution < 16 || resolution % 16 != 0) throw std::invalid_argument("resolution must be a multiple of 16");
  if (latent_channels <= 0 || noise_dim <= 0 || mapper_hidden <= 0 || identity_dim <= 0)
    throw std::invalid_argument("model widths must be positive");
  if (encoder_widths.size() != 2) throw std::invalid_argument("encoder_widths needs two entries");
  if (disc_widths.empty()) throw std::invalid_argument("disc_widths must not be empty");
  if ((resolution >> disc_widths.size()) < 1) throw std::invalid_argument("too many discriminator stages");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"resolution", resolution},
          {"latent_channels", latent_channels},
          {"style_dim", style_dim()},
          {"noise_dim", noise_dim},
          {"encoder_widths", encoder_widths},
          {"translator_hidden", translator_hidden},
          {"mapper_hidden", mapper_hidden},
          {"disc_widths", disc_widths},
          {"identity_dim", identity_dim},
          {"use_attention", use_attention},
          {"use_affine", use_affine},
          {"use_identity_loss", use_identity_loss}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKnown = {
      "resolution", "latent_channels", "style_dim", "noise_dim", "encoder_widths", "translator_hidden",
      "mapper_hidden", "disc_widths", "identity_dim", "use_attention", "use_affine", "use_identity_loss"};
  for (const auto& [key, _] : j.items())
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end())
      throw std::invalid_argument("unknown model_config key '" + key + "'");
  ModelConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  if (j.contains("style_dim") && j.at("style_dim").get<int>() != c.latent_channels)
    throw std::invalid_argument("style_dim must equal latent_channels");
  c.noise_dim = j.value("noise_dim", c.noise_dim);
  c.encoder_widths = j.value("encoder_widths", c.encoder_widths);
  c.translator_hidden = j.value("translator_hidden", c.translator_hidden);
  c.mapper_hidden = j.value("mapper_hidden", c.mapper_hidden);
  c.disc_widths = j.value("disc_widths", c.disc_widths);
  c.identity_dim = j.value("identity_dim", c.identity_dim);
  c.use_attention = j.value("use_attention", c.use_attention);
  c.use_affine = j.value("use_affine", c.use_affine);
  c.use_identity_loss = j.value("use_identity_loss", c.use_identity_loss);
  c.validate();
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.resolution = 32;
  c.latent_channels = 64;
  c.encoder_widths = {32, 64};
  c.mapper_hidden = 64;
  c.disc_widths = {32, 64, 128, 128};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.resolution = 16;
  c.latent_channels = 8;
  c.noise_dim = 4;
  c.encoder_widths = {4, 8};
  c.mapper_hidden = 8;
  c.disc_widths = {4, 8};
  c.identity_dim = 4;
  return c;
}

// ---- networks --------------------------------------------------------------------------------------

EncoderImpl::EncoderImpl(const ModelConfig& cfg) {
  const int w0 = cfg.encoder_widths[0], w1 = cfg.encoder_widths[1], c = cfg.latent_channels;
  net = register_module("net", nn::Sequential(conv(3, w0, 3, 1, 1), lrelu(), conv(w0, w1, 4, 2, 1), lrelu(),
                                              conv(w1, c, 4, 2, 1), lrelu(), conv(c, c, 3, 1, 1)));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images) { return net->forward(images * 2.0 - 1.0); }

GeneratorImpl::GeneratorImpl(const ModelConfig& cfg) {
  const int w0 = cfg.encoder_widths[0], w1 = cfg.encoder_widths[1], c = cfg.latent_channels;
  auto up = [] {
    return nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  };
  net = register_module("net", nn::Sequential(conv(c, w1, 3, 1, 1), lrelu(), up(), conv(w1, w1, 3, 1, 1), lrelu(),
                                              up(), conv(w1, w0, 3, 1, 1), lrelu(), conv(w0, 3, 3, 1, 1),
                                              nn::Sigmoid()));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& fused) { return net->forward(fused); }

ConvTrunkImpl::ConvTrunkImpl(int resolution, const std::vector<int>& widths, bool pool) : global_pool(pool) {
  nn::Sequential seq;
  int in = 3;
  int size = resolution;
  for (int w : widths) {
    seq->push_back(conv(in, w, 4, 2, 1));
    seq->push_back(lrelu());
    in = w;
    size /= 2;
  }
  net = register_module("net", seq);
  out_features = global_pool ? in : static_cast<int64_t>(in) * size * size;
}

torch::Tensor ConvTrunkImpl::forward(const torch::Tensor& images) {
  auto h = net->forward(images * 2.0 - 1.0);
  return global_pool ? h.mean({2, 3}) : h.flatten(1);
}

DomainTranslatorImpl::DomainTranslatorImpl(const ModelConfig& cfg, std::size_t num_states) {
  const int c = cfg.latent_channels, s = cfg.style_dim(), h = cfg.hidden(), m = cfg.mapper_hidden;
  mappers = register_module("mappers", nn::ModuleList());
  for (std::size_t i = 0; i < num_states; ++i)
    mappers->push_back(nn::Sequential(nn::Linear(cfg.noise_dim, m), lrelu(), nn::Linear(m, m), lrelu(),
                                      nn::Linear(m, s)));
  attention = register_module("attention", nn::Sequential(conv(c + s, h, 3, 1, 1), lrelu(), conv(h, 1, 3, 1, 1)));
  affine = register_module("affine", nn::Sequential(conv(c + s, h, 3, 1, 1), lrelu(), conv(h, c, 3, 1, 1)));
  const int w0 = cfg.encoder_widths[0], w1 = cfg.encoder_widths[1];
  extractor_trunk = register_module("extractor_trunk", ConvTrunk(cfg.resolution, std::vector<int>{w0, w1, w1}, true));
  extractor_head = register_module("extractor_head", nn::Linear(extractor_trunk->out_features, s));
}

void DomainTranslatorImpl::save_forward(torch::serialize::OutputArchive& archive) const {
  for (const auto& [name, child] : std::vector<std::pair<std::string, std::shared_ptr<nn::Module>>>{
           {"mappers", mappers.ptr()}, {"attention", attention.ptr()}, {"affine", affine.ptr()}}) {
    torch::serialize::OutputArchive sub;
    child->save(sub);
    archive.write(name, sub);
  }
}

void DomainTranslatorImpl::save_backward(torch::serialize::OutputArchive& archive) const {
  for (const auto& [name, child] : std::vector<std::pair<std::string, std::shared_ptr<nn::Module>>>{
           {"extractor_trunk", extractor_trunk.ptr()}, {"extractor_head", extractor_head.ptr()}}) {
    torch::serialize::OutputArchive sub;
    child->save(sub);
    archive.write(name, sub);
  }
}

void DomainTranslatorImpl::load_forward(torch::serialize::InputArchive& archive) {
  for (const auto& [name, child] : std::vector<std::pair<std::string, std::shared_ptr<nn::Module>>>{
           {"mappers", mappers.ptr()}, {"attention", attention.ptr()}, {"affine", affine.ptr()}}) {
    torch::serialize::InputArchive sub;
    archive.read(name, sub);
    child->load(sub);
  }
}

void DomainTranslatorImpl::load_backward(torch::serialize::InputArchive& archive) {
  for (const auto& [name, child] : std::vector<std::pair<std::string, std::shared_ptr<nn::Module>>>{
           {"extractor_trunk", extractor_trunk.ptr()}, {"extractor_head", extractor_head.ptr()}}) {
    torch::serialize::InputArchive sub;
    archive.read(name, sub);
    child->load(sub);
  }
}

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& cfg, std::size_t num_heads) {
  trunk = register_module("trunk", ConvTrunk(cfg.resolution, cfg.disc_widths, false));
  heads = register_module("heads", nn::Linear(trunk->out_features, static_cast<int64_t>(num_heads)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) { return heads->forward(trunk->forward(images)); }

ClassifierImpl::ClassifierImpl(const ModelConfig& cfg, std::size_t num_bits) {
  trunk = register_module("trunk", ConvTrunk(cfg.resolution, cfg.disc_widths, false));
  head = register_module("head", nn::Linear(trunk->out_features, static_cast<int64_t>(num_bits)));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& images) { return head->forward(trunk->forward(images)); }

IdentityEmbedderImpl::IdentityEmbedderImpl(const ModelConfig& cfg) {
  trunk = register_module("trunk", ConvTrunk(cfg.resolution, cfg.disc_widths, false));
  head = register_module("head", nn::Linear(trunk->out_features, cfg.identity_dim));
}

torch::Tensor IdentityEmbedderImpl::forward(const torch::Tensor& images) {
  return torch::nn::functional::normalize(head->forward(trunk->forward(images)),
                                          torch::nn::functional::NormalizeFuncOptions().dim(1).eps(1e-12));
}

// ---- model ---------------------------------------------------------------------------------------

CcrModel::CcrModel(ModelConfig config, DomainRegistry registry, std::uint64_t seed)
    : config_(std::move(config)), registry_(std::move(registry)) {
  config_.validate();
  torch::manual_seed(seed);
  encoder_ = Encoder(config_);
  generator_ = Generator(config_);
  for (const auto& d : registry_.domains()) {
    head_offset_.push_back(num_heads_);
    num_heads_ += d.num_states();
  }
  for (const auto& d : registry_.domains()) translators_.emplace_back(config_, d.num_states());
  discriminator_ = Discriminator(config_, num_heads_);
  classifier_ = Classifier(config_, registry_.total_bits());
  guide_ = Classifier(config_, registry_.total_bits());
  if (config_.use_identity_loss) identity_ = IdentityEmbedder(config_);
}

void CcrModel::to(torch::Dtype dtype) {
  for (const auto& name : component_names()) component(name)->to(dtype);
  dtype_ = dtype;
}

torch::Tensor CcrModel::prepare_images(const torch::Tensor& images, bool& squeezed) const {
  squeezed = images.dim() == 3;
  auto x = squeezed ? images.unsqueeze(0) : images;
  const int r = config_.resolution;
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != r || x.size(3) != r)
    throw std::invalid_argument("expected images of shape (N,3," + std::to_string(r) + "," + std::to_string(r) +
                                "), got " + c10::str(images.sizes()));
  if (torch::isnan(x).any().item<bool>()) throw std::invalid_argument("image contains NaN");
  return x.to(dtype_);
}

torch::Tensor CcrModel::check_latent(const torch::Tensor& latent) const {
  const int c = config_.latent_channels, s = config_.latent_size();
  if (latent.dim() != 4 || latent.size(1) != c || latent.size(2) != s || latent.size(3) != s)
    throw std::invalid_argument("expected latent of shape (N," + std::to_string(c) + "," + std::to_string(s) + "," +
                                std::to_string(s) + "), got " + c10::str(latent.sizes()));
  return latent;
}

torch::Tensor CcrModel::encode(const torch::Tensor& images) const {
  bool squeezed = false;
  auto z = encoder_->forward(prepare_images(images, squeezed));
  return squeezed ? z.squeeze(0) : z;
}

StyleCode CcrModel::sample_style(std::size_t domain, int state, const torch::Tensor& noise) const {
  if (domain >= translators_.size()) throw std::invalid_argument("unknown domain index");
  if (state < 0 || static_cast<std::size_t>(state) >= registry_.domains()[domain].num_states())
    throw std::invalid_argument("state " + std::to_string(state) + " does not belong to domain '" +
                                registry_.domains()[domain].name + "'");
  auto n = noise.dim() == 1 ? noise.unsqueeze(0) : noise;
  if (n.dim() != 2 || n.size(1) != config_.noise_dim)
    throw std::invalid_argument("noise must have length " + std::to_string(config_.noise_dim));
  auto mapper = translators_[domain]->mappers[static_cast<std::size_t>(state)]->as<nn::Sequential>();
  return StyleCode{mapper->forward(n.to(dtype_)), domain};
}

StyleCode CcrModel::sample_style(std::size_t domain, std::string_view attribute, const torch::Tensor& noise) const {
  const auto [d, a] = registry_.find_attribute(attribute);
  if (d != domain)
    throw std::invalid_argument("attribute '" + std::string(attribute) + "' does not belong to domain '" +
                                registry_.domains().at(domain).name + "'");
  return sample_style(domain, registry_.forward_state(d, a), noise);
}

StyleCode CcrModel::extract_style(const torch::Tensor& images, std::size_t domain) const {
  bool squeezed = false;
  auto x = prepare_images(images, squeezed);
  auto& t = translators_.at(domain);
  return StyleCode{t->extractor_head->forward(t->extractor_trunk->forward(x)), domain};
}

torch::Tensor CcrModel::style_map(const torch::Tensor& latent, const StyleCode& style) const {
  check_latent(latent);
  if (style.values.dim() != 2 || style.values.size(1) != config_.style_dim())
    throw std::invalid_argument("style must have shape (N," + std::to_string(config_.style_dim()) + ")");
  auto s = style.values;
  if (s.size(0) == 1 && latent.size(0) > 1) s = s.expand({latent.size(0), s.size(1)});
  if (s.size(0) != latent.size(0)) throw std::invalid_argument("style and latent batch sizes differ");
  return torch::cat({latent, broadcast_style(s, latent.size(2), latent.size(3))}, 1);
}

torch::Tensor CcrModel::attention_mask(const torch::Tensor& latent, const StyleCode& style) const {
  check_latent(latent);
  if (!config_.use_attention)
    return torch::full({latent.size(0), 1, latent.size(2), latent.size(3)}, kDisabledMaskLogit, latent.options());
  return translators_.at(style.domain)->attention->forward(style_map(latent, style));
}

torch::Tensor CcrModel::affine_feature(const torch::Tensor& latent, const StyleCode& style) const {
  check_latent(latent);
  if (!config_.use_affine) return latent;
  return translators_.at(style.domain)->affine->forward(style_map(latent, style));
}

torch::Tensor CcrModel::fuse(const torch::Tensor& latent, const torch::Tensor& mask_logits,
                             const torch::Tensor& affine) {
  if (latent.sizes() != affine.sizes()) throw std::invalid_argument("latent and affine feature shapes differ");
  if (mask_logits.dim() != latent.dim() || mask_logits.size(0) != latent.size(0) || mask_logits.size(1) != 1 ||
      mask_logits.size(2) != latent.size(2) || mask_logits.size(3) != latent.size(3))
    throw std::invalid_argument("mask must have shape (N,1,H,W) matching the latent");
  const auto gate = torch::sigmoid(mask_logits);
  // same value as gate*z + (1-gate)*t, but exact when z == t
  return affine + gate * (latent - affine);
}

torch::Tensor CcrModel::generate(const torch::Tensor& fused) const {
  const bool squeezed = fused.dim() == 3;
  auto f = check_latent(squeezed ? fused.unsqueeze(0) : fused);
  auto x = generator_->forward(f);
  return squeezed ? x.squeeze(0) : x;
}

torch::Tensor CcrModel::translate_forward(const torch::Tensor& images, std::size_t domain,
                                          const StyleCode& style) const {
  if (style.domain != domain) throw std::invalid_argument("style belongs to a different domain");
  bool squeezed = false;
  auto x = prepare_images(images, squeezed);
  auto z = encoder_->forward(x);
  auto out = generator_->forward(fuse(z, attention_mask(z, style), affine_feature(z, style)));
  return squeezed ? out.squeeze(0) : out;
}

torch::Tensor CcrModel::translate_backward(const torch::Tensor& edited, const torch::Tensor& source_reference,
                                           std::size_t domain) const {
  bool squeezed = false;
  prepare_images(edited, squeezed);
  auto ref = source_reference.dim() == 3 ? source_reference.unsqueeze(0) : source_reference;
  return translate_forward(edited, domain, extract_style(ref, domain));
}

torch::Tensor CcrModel::discriminator_logits(const torch::Tensor& images) const {
  bool squeezed = false;
  return discriminator_->forward(prepare_images(images, squeezed));
}

std::size_t CcrModel::head_index(std::size_t domain, int state) const {
  if (domain >= head_offset_.size() || state < 0 ||
      static_cast<std::size_t>(state) >= registry_.domains()[domain].num_states())
    throw std::invalid_argument("no discriminator head for that domain/state");
  return head_offset_[domain] + static_cast<std::size_t>(state);
}

torch::Tensor CcrModel::discriminate(const torch::Tensor& images, std::size_t domain, int state) const {
  return torch::sigmoid(discriminator_logits(images).select(1, static_cast<int64_t>(head_index(domain, state))));
}

torch::Tensor CcrModel::classifier_logits(const torch::Tensor& images) const {
  bool squeezed = false;
  return classifier_->forward(prepare_images(images, squeezed));
}

torch::Tensor CcrModel::guide_logits(const torch::Tensor& images) const {
  bool squeezed = false;
  return guide_->forward(prepare_images(images, squeezed));
}

AttributePrediction CcrModel::classify_attributes(const torch::Tensor& images) const {
  AttributePrediction out;
  out.probabilities = torch::sigmoid(classifier_logits(images)).to(torch::kFloat64).contiguous();
  auto acc = out.probabilities.accessor<double, 2>();
  for (int64_t i = 0; i < out.probabilities.size(0); ++i) {
    auto label = registry_.empty_label();
    for (std::size_t b = 0; b < registry_.total_bits(); ++b) label.bits[b] = acc[i][static_cast<int64_t>(b)] > 0.5;
    for (std::size_t d = 0; d < registry_.num_domains(); ++d) {
      if (!registry_.domains()[d].exclusive) continue;
      const auto bits = registry_.domain_bits(d);
      std::size_t best = bits[0];
      int active = 0;
      for (auto b : bits) {
        active += label.bits[b];
        if (acc[i][static_cast<int64_t>(b)] > acc[i][static_cast<int64_t>(best)]) best = b;
      }
      if (active > 1) {
        for (auto b : bits) label.bits[b] = 0;
        label.bits[best] = 1;
      }
    }
    out.labels.push_back(std::move(label));
  }
  return out;
}

IdentityEmbedder& CcrModel::identity_embedder() {
  if (!identity_) throw ConfigurationError("identity embedder requires use_identity_loss=true");
  return identity_;
}

torch::Tensor CcrModel::identity_embed(const torch::Tensor& images) const {
  if (!identity_) throw ConfigurationError("identity_embed requires use_identity_loss=true");
  bool squeezed = false;
  auto e = identity_->forward(prepare_images(images, squeezed));
  return squeezed ? e.squeeze(0) : e;
}

std::vector<std::string> CcrModel::component_names() const {
  std::vector<std::string> names = {"E", "G", "D", "cls", "guide"};
  if (identity_) names.push_back("id");
  for (const auto& d : registry_.domains()) names.push_back(translator_name(d.name));
  return names;
}

std::shared_ptr<nn::Module> CcrModel::component(const std::string& name) const {
  if (name == "E") return encoder_.ptr();
  if (name == "G") return generator_.ptr();
  if (name == "D") return discriminator_.ptr();
  if (name == "cls") return classifier_.ptr();
  if (name == "guide") return guide_.ptr();
  if (name == "id" && identity_) return identity_.ptr();
  for (std::size_t d = 0; d < registry_.num_domains(); ++d)
    if (name == translator_name(registry_.domains()[d].name)) return translators_[d].ptr();
  throw std::invalid_argument("unknown component '" + name + "'");
}

CcrModel CcrModel::clone() const {
  CcrModel copy(config_, registry_);
  copy.to(dtype_);
  torch::NoGradGuard guard;
  for (const auto& name : component_names()) {
    auto src = component(name)->named_parameters(true);
    auto dst = copy.component(name)->named_parameters(true);
    for (const auto& item : src) dst[item.key()].copy_(item.value());
    auto sb = component(name)->named_buffers(true);
    auto db = copy.component(name)->named_buffers(true);
    for (const auto& item : sb) db[item.key()].copy_(item.value());
  }
  return copy;
}

// ---- checkpoints -----------------------------------------------------------------------------------

nlohmann::json CheckpointManifest::to_json() const {
  return {{"format_version", format_version}, {"model_config", model_config.to_json()}, {"registry", registry},
          {"trained_stages", trained_stages}, {"seed", seed},                            {"extra", extra}};
}

CheckpointManifest CheckpointManifest::from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format_version " + std::to_string(m.format_version));
  m.model_config = ModelConfig::from_json(j.at("model_config"));
  m.registry = j.at("registry");
  m.trained_stages = j.at("trained_stages").get<std::vector<int>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

namespace {

std::vector<std::pair<std::string, std::string>> blob_names(const CcrModel& model) {
  std::vector<std::pair<std::string, std::string>> out = {{"E", "E.pt"}, {"G", "G.pt"}, {"D", "D.pt"}, {"cls", "cls.pt"},
                                                            {"guide", "guide.pt"}};
  if (model.config().use_identity_loss) out.emplace_back("id", "id.pt");
  for (const auto& d : model.registry().domains()) {
    out.emplace_back("fm:" + d.name, "fm_" + d.name + ".pt");
    out.emplace_back("bm:" + d.name, "bm_" + d.name + ".pt");
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const CcrModel& model, const CheckpointManifest& manifest) {
  std::filesystem::create_directories(dir);
  for (const auto& [component, file] : blob_names(model)) {
    torch::serialize::OutputArchive archive;
    if (component.rfind("fm:", 0) == 0) {
      model.translator(model.registry().domain_index(component.substr(3)))->save_forward(archive);
    } else if (component.rfind("bm:", 0) == 0) {
      model.translator(model.registry().domain_index(component.substr(3)))->save_backward(archive);
    } else {
      model.component(component)->save(archive);
    }
    archive.save_to((dir / file).string());
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.to_json().dump(2) << '\n';
}

CheckpointManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing checkpoint manifest " + (dir / "manifest.json").string());
  return CheckpointManifest::from_json(nlohmann::json::parse(in));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  LoadedCheckpoint out;
  out.manifest = read_manifest(dir);
  out.model = std::make_unique<CcrModel>(out.manifest.model_config, DomainRegistry::from_json(out.manifest.registry),
                                         out.manifest.seed);
  auto& model = *out.model;
  for (const auto& [component, file] : blob_names(model)) {
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint blob " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    if (component.rfind("fm:", 0) == 0) {
      model.translator(model.registry().domain_index(component.substr(3)))->load_forward(archive);
    } else if (component.rfind("bm:", 0) == 0) {
      model.translator(model.registry().domain_index(component.substr(3)))->load_backward(archive);
    } else {
      model.component(component)->load(archive);
    }
  }
  return out;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  const auto loaded = load_checkpoint(dir);
  // Hash tensor bytes rather than archive files so the digest ignores container layout.
  std::string digest_input = sha256_file(dir / "manifest.json");
  for (const auto& name : loaded.model->component_names()) {
    for (const auto& item : loaded.model->component(name)->named_parameters(true)) {
      auto t = item.value().detach().contiguous();
      digest_input += name + "/" + item.key();
      digest_input.append(static_cast<const char*>(t.data_ptr()), static_cast<std::size_t>(t.nbytes()));
    }
  }
  return sha256_hex(digest_input);
}

ComponentSnapshot snapshot(const torch::nn::Module& module) {
  ComponentSnapshot out;
  for (const auto& item : module.named_parameters(true)) out[item.key()] = item.value().detach().clone();
  for (const auto& item : module.named_buffers(true)) out["buffer:" + item.key()] = item.value().detach().clone();
  return out;
}

bool bit_equal(const ComponentSnapshot& a, const ComponentSnapshot& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [key, t] : a) {
    auto it = b.find(key);
    if (it == b.end() || !torch::equal(t, it->second)) return false;
  }
  return true;
}

}  // namespace ccr
