#include "ccr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <tuple>

#include "ccr/image_io.hpp"
#include "ccr/rng.hpp"

namespace ccr {

namespace {

constexpr const char* kStateDir = "state";
constexpr const char* kLogName = "train_log.jsonl";

torch::Generator make_generator(std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return gen;
}

torch::Tensor gather_rows(const torch::Tensor& images, const std::vector<std::int64_t>& idx) {
  return images.index_select(0, torch::tensor(idx, torch::kLong));
}

std::vector<AttributeLabel> gather_labels(const std::vector<AttributeLabel>& labels,
                                          const std::vector<std::int64_t>& idx) {
  std::vector<AttributeLabel> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

double item(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

// Light blur/noise so the classifier also judges generated (slightly smoothed) images reliably.
torch::Tensor augment(const torch::Tensor& x, torch::Generator& gen) {
  auto blurred = torch::avg_pool2d(torch::replication_pad2d(x, {1, 1, 1, 1}), 3, 1);
  auto pick = torch::rand({x.size(0), 1, 1, 1}, gen, x.options()) < 0.5;
  auto out = torch::where(pick, blurred, x);
  return (out + 0.02 * torch::randn(x.sizes(), gen, x.options())).clamp(0.0, 1.0);
}

}  // namespace

StageSelection parse_stage(const std::string& text) {
  if (text == "1") return StageSelection::kStage1;
  if (text == "2") return StageSelection::kStage2;
  if (text == "3") return StageSelection::kStage3;
  if (text == "all") return StageSelection::kAll;
  throw std::invalid_argument("stage must be 1, 2, 3 or all");
}

// ---- config ----------------------------------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  weights.validate(model.use_identity_loss);
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (epochs_stage1 <= 0 || epochs_stage2 <= 0 || epochs_stage3 <= 0)
    throw std::invalid_argument("epochs must be positive");
  if (classifier_epochs < 0 || identity_epochs < 0 || max_iters_per_epoch < 0)
    throw std::invalid_argument("epoch counts must be non-negative");
  for (double lr : {lr_g, lr_d, lr_cls})
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("betas in [0,1)");
  if (adv_weight < 0.0 || stage1_rec_weight < 0.0 || mismatch_weight < 0.0 || guide_weight < 0.0) throw std::invalid_argument("weights must be non-negative");
  if (log_every <= 0 || eval_every < 0) throw std::invalid_argument("log_every must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"weights", weights.to_json()},
          {"seed", seed},
          {"batch_size", batch_size},
          {"epochs_stage1", epochs_stage1},
          {"epochs_stage2", epochs_stage2},
          {"epochs_stage3", epochs_stage3},
          {"classifier_epochs", classifier_epochs},
          {"identity_epochs", identity_epochs},
          {"max_iters_per_epoch", max_iters_per_epoch},
          {"lr_g", lr_g},
          {"lr_d", lr_d},
          {"lr_cls", lr_cls},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adv_weight", adv_weight},
          {"stage1_rec_weight", stage1_rec_weight},
          {"mismatch_weight", mismatch_weight},
          {"guide_weight", guide_weight},
          {"reconstructed_real", reconstructed_real},
          {"dataset", dataset.string()},
          {"checkpoint_dir", checkpoint_dir.string()},
          {"log_every", log_every},
          {"eval_every", eval_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") c.model = ModelConfig::from_json(v);
    else if (key == "weights") c.weights = LossWeights::from_json(v);
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "epochs_stage1") c.epochs_stage1 = v.get<int>();
    else if (key == "epochs_stage2") c.epochs_stage2 = v.get<int>();
    else if (key == "epochs_stage3") c.epochs_stage3 = v.get<int>();
    else if (key == "classifier_epochs") c.classifier_epochs = v.get<int>();
    else if (key == "identity_epochs") c.identity_epochs = v.get<int>();
    else if (key == "max_iters_per_epoch") c.max_iters_per_epoch = v.get<int>();
    else if (key == "lr_g") c.lr_g = v.get<double>();
    else if (key == "lr_d") c.lr_d = v.get<double>();
    else if (key == "lr_cls") c.lr_cls = v.get<double>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "adv_weight") c.adv_weight = v.get<double>();
    else if (key == "stage1_rec_weight") c.stage1_rec_weight = v.get<double>();
    else if (key == "mismatch_weight") c.mismatch_weight = v.get<double>();
    else if (key == "guide_weight") c.guide_weight = v.get<double>();
    else if (key == "reconstructed_real") c.reconstructed_real = v.get<bool>();
    else if (key == "dataset") c.dataset = v.get<std::string>();
    else if (key == "checkpoint_dir") c.checkpoint_dir = v.get<std::string>();
    else if (key == "log_every") c.log_every = v.get<int>();
    else if (key == "eval_every") c.eval_every = v.get<int>();
    else throw std::invalid_argument("unknown training config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---- freezing --------------------------------------------------------------------------------------

ModelSnapshot snapshot_model(const CcrModel& model) {
  ModelSnapshot out;
  for (const auto& name : model.component_names()) out[name] = snapshot(*model.component(name));
  return out;
}

FreezeReport freeze_check(const ModelSnapshot& before, const ModelSnapshot& after, const FreezeSet& frozen) {
  FreezeReport report;
  for (const auto& name : frozen) {
    auto a = before.find(name);
    auto b = after.find(name);
    if (a == before.end() || b == after.end() || !bit_equal(a->second, b->second)) {
      report.ok = false;
      report.changed.push_back(name);
    }
  }
  return report;
}

FreezeReport freeze_check(const std::filesystem::path& before, const std::filesystem::path& after,
                          const FreezeSet& frozen) {
  const auto a = load_checkpoint(before);
  const auto b = load_checkpoint(after);
  return freeze_check(snapshot_model(*a.model), snapshot_model(*b.model), frozen);
}

// ---- episodes --------------------------------------------------------------------------------------

torch::Tensor label_heads(const CcrModel& model, const std::vector<AttributeLabel>& labels) {
  const auto& reg = model.registry();
  std::vector<std::int64_t> idx;
  idx.reserve(labels.size() * reg.num_domains());
  for (const auto& label : labels) {
    for (std::size_t d = 0; d < reg.num_domains(); ++d) {
      const int state = reg.state_of(label, d);
      if (state < 0)
        throw std::invalid_argument("label " + label.to_string() + " has no state in domain '" + reg.domains()[d].name +
                                    "'");
      idx.push_back(static_cast<std::int64_t>(model.head_index(d, state)));
    }
  }
  return torch::tensor(idx, torch::kLong).view({static_cast<std::int64_t>(labels.size()),
                                                static_cast<std::int64_t>(reg.num_domains())});
}

EpisodeTensors build_episode(const CcrModel& model, const torch::Tensor& x00, const std::vector<AttributeLabel>& labels,
                             const std::vector<PathSample>& path, const std::vector<StyleCode>& styles) {
  if (path.empty()) throw std::invalid_argument("episode path must not be empty");
  if (styles.size() != path.size()) throw std::invalid_argument("one style per path step required");
  if (static_cast<std::int64_t>(labels.size()) != x00.size(0)) throw std::invalid_argument("one label per image");
  const auto& reg = model.registry();
  const auto L = path.size();

  EpisodeTensors ep;
  ep.x00 = x00;
  std::vector<AttributeLabel> current = labels;
  ep.stage_heads.push_back(label_heads(model, current));
  for (std::size_t k = 0; k < L; ++k) {
    const auto& step = path[k];
    ep.forward.push_back(model.translate_forward(ep.stage(k), step.domain, styles[k]));
    ep.styles.push_back(styles[k].values.expand({x00.size(0), styles[k].values.size(1)}));
    for (auto& label : current) reg.set_state(label, step.domain, step.state);
    ep.stage_heads.push_back(label_heads(model, current));
  }
  if (L >= 2) {
    const auto a = model.translate_forward(ep.stage(L - 2), path[L - 1].domain, styles[L - 1]);
    ep.swapped_final = model.translate_forward(a, path[L - 2].domain, styles[L - 2]);
  }
  ep.backward.resize(L);
  torch::Tensor y = ep.forward.back();
  for (std::size_t k = L; k-- > 0;) {
    y = model.translate_backward(y, ep.stage(k), path[k].domain);
    ep.backward[k] = y;
  }
  for (std::size_t k = 0; k <= L; ++k) {
    const auto d = path[k == 0 ? 0 : k - 1].domain;
    ep.self_rec.push_back(model.translate_backward(ep.stage(k), ep.stage(k), d));
  }
  for (std::size_t k = 0; k < L; ++k) ep.extracted.push_back(model.extract_style(ep.forward[k], path[k].domain).values);
  ep.validate();
  return ep;
}

// ---- data ------------------------------------------------------------------------------------------

TrainingData load_training_data(const std::filesystem::path& dataset, const DomainRegistry& registry, int resolution) {
  const auto records = load_dataset(dataset, registry);
  TrainingData data;
  data.train = load_images(dataset, records, Split::kTrain);
  data.test = load_images(dataset, records, Split::kTest);
  if (data.train.size() == 0) throw TrainingError("dataset has no training images: " + dataset.string());
  data.train.images = resize_images(data.train.images, resolution);
  if (data.test.size() > 0) data.test.images = resize_images(data.test.images, resolution);
  return data;
}

bool apply_deterministic_mode() {
  const char* env = std::getenv("CCR_DETERMINISTIC");
  if (env == nullptr || std::string(env) != "1") return false;
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
  return true;
}

// ---- trainer ---------------------------------------------------------------------------------------

struct Trainer::Optimizers {
  std::unique_ptr<torch::optim::Adam> autoencoder;
  std::unique_ptr<torch::optim::Adam> discriminator;
  std::unique_ptr<torch::optim::Adam> classifier;
  std::unique_ptr<torch::optim::Adam> guide;
  std::unique_ptr<torch::optim::Adam> identity;
  torch::nn::Linear identity_head{nullptr};
  std::vector<std::unique_ptr<torch::optim::Adam>> translators;

  std::vector<std::pair<std::string, torch::optim::Optimizer*>> all() {
    std::vector<std::pair<std::string, torch::optim::Optimizer*>> out = {
        {"autoencoder", autoencoder.get()}, {"discriminator", discriminator.get()}, {"classifier", classifier.get()},
        {"guide", guide.get()}};
    if (identity) out.emplace_back("identity", identity.get());
    for (std::size_t i = 0; i < translators.size(); ++i)
      out.emplace_back("translator" + std::to_string(i), translators[i].get());
    return out;
  }
};

Trainer::Trainer(TrainConfig cfg, DomainRegistry registry, TrainingData data, InitMode mode)
    : cfg_(std::move(cfg)), registry_(std::move(registry)), data_(std::move(data)) {
  cfg_.validate();
  if (data_.train.size() == 0) throw TrainingError("dataset empty");
  const auto state_dir = cfg_.checkpoint_dir / kStateDir;
  bool resumed = false;
  if (mode == InitMode::kResume && std::filesystem::exists(state_dir / "progress.json")) {
    auto loaded = load_checkpoint(state_dir);
    model_ = std::move(loaded.model);
    manifest_ = loaded.manifest;
    std::ifstream in(state_dir / "progress.json");
    const auto p = nlohmann::json::parse(in);
    progress_ = {p.at("stage").get<int>(), p.at("epoch").get<int>(), p.at("iteration").get<std::int64_t>()};
    iteration_ = progress_.iteration;
    resumed = true;
  } else if (mode == InitMode::kFromCheckpoint) {
    if (!std::filesystem::exists(cfg_.checkpoint_dir / "manifest.json"))
      throw TrainingError("no checkpoint in " + cfg_.checkpoint_dir.string() + "; stage 1 required");
    auto loaded = load_checkpoint(cfg_.checkpoint_dir);
    model_ = std::move(loaded.model);
    manifest_ = loaded.manifest;
  } else {
    model_ = std::make_unique<CcrModel>(cfg_.model, registry_, cfg_.seed);
    manifest_.model_config = cfg_.model;
    manifest_.registry = registry_.to_json();
    manifest_.seed = cfg_.seed;
  }
  if (model_->config().resolution != data_.train.images.size(2))
    data_.train.images = resize_images(data_.train.images, model_->config().resolution);
  if (data_.test.size() > 0 && model_->config().resolution != data_.test.images.size(2))
    data_.test.images = resize_images(data_.test.images, model_->config().resolution);
  manifest_.extra["train_config"] = cfg_.to_json();
  build_optimizers();
  if (resumed) {
    for (auto& [name, optimizer] : opt_->all()) {
      const auto path = state_dir / ("opt_" + name + ".pt");
      if (!std::filesystem::exists(path)) continue;
      torch::serialize::InputArchive archive;
      archive.load_from(path.string());
      optimizer->load(archive);
    }
  }
  std::filesystem::create_directories(cfg_.checkpoint_dir);
  log_.open(cfg_.checkpoint_dir / kLogName, mode == InitMode::kFresh ? std::ios::trunc : std::ios::app);
  if (!log_) throw TrainingError("cannot write training log in " + cfg_.checkpoint_dir.string());
}

Trainer::~Trainer() = default;

void Trainer::build_optimizers() {
  auto& m = *model_;
  const auto adam = [&](std::vector<torch::Tensor> params, double lr) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(lr).betas(std::make_tuple(cfg_.beta1, cfg_.beta2)));
  };
  opt_ = std::make_unique<Optimizers>();
  auto ae = m.encoder()->parameters();
  for (auto& p : m.generator()->parameters()) ae.push_back(p);
  opt_->autoencoder = adam(ae, cfg_.lr_g);
  opt_->discriminator = adam(m.discriminator()->parameters(), cfg_.lr_d);
  opt_->classifier = std::make_unique<torch::optim::Adam>(m.classifier()->parameters(),
                                                          torch::optim::AdamOptions(cfg_.lr_cls));
  opt_->guide = std::make_unique<torch::optim::Adam>(m.guide()->parameters(), torch::optim::AdamOptions(cfg_.lr_cls));
  if (m.config().use_identity_loss) {
    std::set<int> ids(data_.train.identities.begin(), data_.train.identities.end());
    torch::manual_seed(mix_seed(cfg_.seed, 0x1d));
    opt_->identity_head = torch::nn::Linear(
        torch::nn::LinearOptions(m.config().identity_dim, static_cast<std::int64_t>(ids.size())).bias(false));
    auto params = m.identity_embedder()->parameters();
    for (auto& p : opt_->identity_head->parameters()) params.push_back(p);
    opt_->identity = std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(cfg_.lr_cls));
  }
  for (std::size_t d = 0; d < registry_.num_domains(); ++d)
    opt_->translators.push_back(adam(m.translator(d)->parameters(), cfg_.lr_g));
}

void Trainer::set_trainable(const std::string& component, bool trainable) {
  for (auto& p : model_->component(component)->parameters()) p.requires_grad_(trainable);
}

void Trainer::require_stages(int stage) const {
  const auto& done = manifest_.trained_stages;
  for (int s = 1; s < stage; ++s)
    if (std::find(done.begin(), done.end(), s) == done.end())
      throw TrainingError("stage " + std::to_string(stage - 1) + " required");
}

int Trainer::resume_epoch(int stage) const { return progress_.stage == stage ? progress_.epoch : 0; }

std::vector<std::vector<std::int64_t>> Trainer::epoch_batches(int stage, int epoch, std::uint64_t salt) const {
  std::vector<std::int64_t> order(data_.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  Rng rng(mix_seed(cfg_.seed, stage, epoch, salt, 0xba7c));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::int64_t>> batches;
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t i = 0; i + bs <= order.size() || (batches.empty() && i < order.size()); i += bs)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + bs)));
  if (cfg_.max_iters_per_epoch > 0 && batches.size() > static_cast<std::size_t>(cfg_.max_iters_per_epoch))
    batches.resize(static_cast<std::size_t>(cfg_.max_iters_per_epoch));
  return batches;
}

torch::Tensor Trainer::mismatch_loss(const torch::Tensor& real, const std::vector<AttributeLabel>& labels,
                                     Rng& rng) const {
  std::vector<std::int64_t> heads;
  for (const auto& label : labels) {
    const auto d = static_cast<std::size_t>(rng.below(static_cast<int>(registry_.num_domains())));
    const int states = static_cast<int>(registry_.domains()[d].num_states());
    const int wrong = (registry_.state_of(label, d) + 1 + rng.below(states - 1)) % states;
    heads.push_back(static_cast<std::int64_t>(model_->head_index(d, wrong)));
  }
  const auto idx = torch::tensor(heads, torch::kLong).unsqueeze(1);
  return -torch::log_sigmoid(-model_->discriminator_logits(real).gather(1, idx)).mean();
}

torch::Tensor Trainer::real_for_d(const torch::Tensor& real) const {
  if (!cfg_.reconstructed_real) return real;
  torch::NoGradGuard guard;
  return model_->generate(model_->encode(real));
}

void Trainer::check_finite(std::initializer_list<torch::Tensor> values, int stage) const {
  for (const auto& t : values)
    if (t.defined() && !std::isfinite(t.item<double>()))
      throw TrainingError("non-finite loss in stage " + std::to_string(stage) + " at iteration " +
                          std::to_string(iteration_) + "; last good checkpoint kept");
}

void Trainer::log_step(int stage, const nlohmann::json& losses, const nlohmann::json& extra) {
  if (iteration_ % cfg_.log_every != 0) return;
  nlohmann::json rec = {{"iter", iteration_}, {"stage", stage}, {"losses", losses}, {"lr", cfg_.lr_g},
                        {"lr_d", cfg_.lr_d}};
  for (const auto& [k, v] : extra.items()) rec[k] = v;
  log_ << rec.dump() << '\n';
  log_.flush();
}

void Trainer::notify(StepEvent ev) {
  if (!callback_) return;
  ev.iteration = iteration_;
  ev.model = model_.get();
  callback_(ev);
}

void Trainer::save_progress(int stage, int next_epoch) {
  const auto dir = cfg_.checkpoint_dir / kStateDir;
  save_checkpoint(dir, *model_, manifest_);
  for (auto& [name, optimizer] : opt_->all()) {
    torch::serialize::OutputArchive archive;
    optimizer->save(archive);
    archive.save_to((dir / ("opt_" + name + ".pt")).string());
  }
  progress_ = {stage, next_epoch, iteration_};
  std::ofstream out(dir / "progress.json");
  out << nlohmann::json{{"stage", stage}, {"epoch", next_epoch}, {"iteration", iteration_}}.dump() << '\n';
}

void Trainer::finish_stage(int stage) {
  auto& done = manifest_.trained_stages;
  if (std::find(done.begin(), done.end(), stage) == done.end()) done.push_back(stage);
  save_checkpoint(cfg_.checkpoint_dir, *model_, manifest_);
  save_progress(stage + 1, 0);
}

void Trainer::run(StageSelection selection) {
  const auto done = [&](int s) {
    const auto& t = manifest_.trained_stages;
    return std::find(t.begin(), t.end(), s) != t.end();
  };
  if (selection == StageSelection::kAll) {
    if (!done(1)) train_stage1();
    if (!done(2)) train_stage2();
    if (!done(3)) train_stage3();
    return;
  }
  switch (selection) {
    case StageSelection::kStage1: train_stage1(); break;
    case StageSelection::kStage2: train_stage2(); break;
    default: train_stage3(); break;
  }
}

void Trainer::train_classifier() {
  const auto& x = data_.train.images;
  std::vector<float> targets;
  for (const auto& l : data_.train.labels)
    for (auto b : l.bits) targets.push_back(static_cast<float>(b));
  const auto y = torch::tensor(targets).view({static_cast<std::int64_t>(data_.train.size()), -1});
  // The guide sees its own batch order and augmentation draws.
  const std::vector<std::tuple<Classifier*, torch::optim::Adam*, std::uint64_t>> nets = {
      {&model_->classifier(), opt_->classifier.get(), 0xc1}, {&model_->guide(), opt_->guide.get(), 0x9d}};
  for (const auto& [net, opt, salt] : nets) {
    (*net)->train();
    for (int epoch = 0; epoch < cfg_.classifier_epochs; ++epoch) {
      auto gen = make_generator(mix_seed(cfg_.seed, salt, epoch));
      for (const auto& batch : epoch_batches(static_cast<int>(salt), epoch)) {
        auto logits = (*net)->forward(augment(gather_rows(x, batch), gen));
        auto loss = torch::binary_cross_entropy_with_logits(logits, gather_rows(y, batch));
        opt->zero_grad();
        loss.backward();
        opt->step();
      }
    }
  }
  set_trainable("guide", false);
  if (data_.test.size() > 0) {
    torch::NoGradGuard guard;
    const auto pred = model_->classify_attributes(data_.test.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i)
      for (std::size_t b = 0; b < registry_.total_bits(); ++b)
        correct += pred.labels[i].bits[b] == data_.test.labels[i].bits[b];
    log_ << nlohmann::json{{"stage", 1},
                           {"classifier_test_bit_accuracy",
                            static_cast<double>(correct) / static_cast<double>(pred.labels.size() * registry_.total_bits())}}
                .dump()
         << '\n';
  }
}

torch::Tensor Trainer::guide_loss(const EpisodeTensors& ep, const std::vector<AttributeLabel>& labels,
                                  const std::vector<PathSample>& path) const {
  if (cfg_.guide_weight == 0.0) return {};
  // Symbolic label of every stage; each fake is pushed towards the label of the stage it depicts.
  std::vector<torch::Tensor> stage_targets;
  std::vector<AttributeLabel> current = labels;
  for (std::size_t k = 0; k <= path.size(); ++k) {
    std::vector<float> bits;
    for (const auto& l : current)
      for (auto b : l.bits) bits.push_back(static_cast<float>(b));
    stage_targets.push_back(
        torch::tensor(bits).view({static_cast<std::int64_t>(current.size()), -1}).to(model_->dtype()));
    if (k < path.size())
      for (auto& l : current) registry_.set_state(l, path[k].domain, path[k].state);
  }
  torch::Tensor total;
  const auto fakes = ep.fakes();
  for (const auto& [image, k] : fakes) {
    auto term = torch::binary_cross_entropy_with_logits(model_->guide_logits(image), stage_targets.at(k));
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(fakes.size());
}

void Trainer::train_identity_embedder() {
  auto& emb = model_->identity_embedder();
  std::map<int, std::int64_t> ids;
  for (int id : data_.train.identities) ids.emplace(id, 0);
  std::int64_t next = 0;
  for (auto& [id, idx] : ids) idx = next++;
  std::vector<std::int64_t> targets;
  for (int id : data_.train.identities) targets.push_back(ids.at(id));
  const auto y = torch::tensor(targets, torch::kLong);
  for (int epoch = 0; epoch < cfg_.identity_epochs; ++epoch) {
    auto gen = make_generator(mix_seed(cfg_.seed, 0x1d, epoch));
    for (const auto& batch : epoch_batches(0x1d, epoch)) {
      auto e = emb->forward(augment(gather_rows(data_.train.images, batch), gen));
      auto w = torch::nn::functional::normalize(opt_->identity_head->weight,
                                                torch::nn::functional::NormalizeFuncOptions().dim(1));
      auto loss = torch::nn::functional::cross_entropy(10.0 * e.matmul(w.t()), gather_rows(y, batch));
      opt_->identity->zero_grad();
      loss.backward();
      opt_->identity->step();
    }
  }
  set_trainable("id", false);
}

void Trainer::train_stage1() {
  auto& m = *model_;
  if (resume_epoch(1) == 0) {
    if (cfg_.classifier_epochs > 0) train_classifier();
    if (m.config().use_identity_loss && cfg_.identity_epochs > 0) train_identity_embedder();
  }
  if (m.config().use_identity_loss) set_trainable("id", false);
  set_trainable("E", true);
  set_trainable("G", true);
  const auto& x = data_.train.images;
  for (int epoch = resume_epoch(1); epoch < cfg_.epochs_stage1; ++epoch) {
    Rng rng(mix_seed(cfg_.seed, 1, epoch, 0x57a7e));
    for (const auto& batch : epoch_batches(1, epoch)) {
      const auto real = gather_rows(x, batch);
      const auto heads = label_heads(m, gather_labels(data_.train.labels, batch));
      const auto fake = m.generate(m.encode(real));

      set_trainable("D", true);
      auto d_loss = adv_loss_logits(m.discriminator_logits(real).gather(1, heads),
                                    {m.discriminator_logits(fake.detach()).gather(1, heads)})
                        .loss_d;
      if (cfg_.mismatch_weight > 0.0)
        d_loss = d_loss + cfg_.mismatch_weight * mismatch_loss(real, gather_labels(data_.train.labels, batch), rng);
      check_finite({d_loss}, 1);
      opt_->discriminator->zero_grad();
      d_loss.backward();
      opt_->discriminator->step();
      set_trainable("D", false);

      auto adv_g = -torch::log_sigmoid(m.discriminator_logits(fake).gather(1, heads)).mean();
      auto rec = (fake - real).abs().mean();
      torch::Tensor id;
      if (m.config().use_identity_loss) id = identity_loss(m.identity_embed(fake), m.identity_embed(real).detach());
      auto g_total = cfg_.adv_weight * adv_g + cfg_.stage1_rec_weight * rec;
      if (id.defined()) g_total = g_total + cfg_.weights.lambda_id * id;
      check_finite({g_total}, 1);
      opt_->autoencoder->zero_grad();
      g_total.backward();
      opt_->autoencoder->step();

      ++iteration_;
      nlohmann::json losses = {{"adv_d", item(d_loss)}, {"adv_g", item(adv_g)}, {"rec", item(rec)},
                               {"con", 0.0},            {"rev", 0.0},           {"sty", 0.0}};
      if (id.defined()) losses["id"] = item(id);
      log_step(1, losses);
      notify({1, 0, std::nullopt, {}, nullptr, losses});
    }
    set_trainable("D", true);
    if (cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0 && data_.test.size() > 0) {
      torch::NoGradGuard guard;
      const auto n = std::min<std::int64_t>(256, data_.test.images.size(0));
      const auto t = data_.test.images.slice(0, 0, n);
      const double err = (m.generate(m.encode(t)) - t).abs().mean().item<double>();
      log_ << nlohmann::json{{"iter", iteration_}, {"stage", 1}, {"epoch", epoch}, {"eval", {{"rec_l1", err}}}}.dump()
           << '\n';
      log_.flush();
    }
    save_progress(1, epoch + 1);
  }
  finish_stage(1);
}

void Trainer::train_stage2() {
  require_stages(2);
  auto& m = *model_;
  set_trainable("E", false);
  set_trainable("G", false);
  set_trainable("guide", false);
  const auto& x = data_.train.images;
  const int total = cfg_.epochs_stage2 * static_cast<int>(registry_.num_domains());
  for (int e = resume_epoch(2); e < total; ++e) {
    const auto d = static_cast<std::size_t>(e / cfg_.epochs_stage2);
    const int local_epoch = e % cfg_.epochs_stage2;
    // Per-domain seeds: a domain's sample stream does not depend on which domains precede it.
    auto gen = make_generator(mix_seed(cfg_.seed, 2, d, local_epoch));
    Rng rng(mix_seed(cfg_.seed, 2, d, local_epoch, 0x57a7e));
    const int states = static_cast<int>(registry_.domains()[d].num_states());
    for (const auto& batch : epoch_batches(2, local_epoch, d)) {
      const auto real = gather_rows(x, batch);
      const auto labels = gather_labels(data_.train.labels, batch);
      const PathSample step{d, rng.below(states)};
      const auto noise = torch::randn({1, m.config().noise_dim}, gen);
      const auto style = m.sample_style(d, step.state, noise);
      auto ep = build_episode(m, real, labels, {step}, {style});
      iteration_ += 1;
      const auto logits = [&](const torch::Tensor& img) { return m.discriminator_logits(img); };

      const auto d_real = real_for_d(real);
      auto d_loss = adv_loss(ep, logits, true, d_real).loss_d;
      if (cfg_.mismatch_weight > 0.0) d_loss = d_loss + cfg_.mismatch_weight * mismatch_loss(d_real, labels, rng);
      check_finite({d_loss}, 2);
      opt_->discriminator->zero_grad();
      d_loss.backward();
      opt_->discriminator->step();
      set_trainable("D", false);
      auto lb = combine_losses(adv_loss(ep, logits, false, d_real).loss_g * cfg_.adv_weight, d_loss, rec_loss(ep), con_loss(ep),
                               rev_loss(ep), sty_loss(ep), cfg_.weights);
      const auto guide = guide_loss(ep, labels, {step});
      auto total = guide.defined() ? lb.total_g + cfg_.guide_weight * guide : lb.total_g;
      check_finite({total}, 2);
      opt_->translators[d]->zero_grad();
      total.backward();
      opt_->translators[d]->step();
      set_trainable("D", true);

      auto losses = lb.to_json();
      losses["guide"] = item(guide);
      log_step(2, losses, {{"domain", registry_.domains()[d].name}});
      notify({2, 0, d, {d}, nullptr, losses});
    }
    save_progress(2, e + 1);
  }
  finish_stage(2);
}

void Trainer::train_stage3() {
  require_stages(3);
  auto& m = *model_;
  set_trainable("E", false);
  set_trainable("G", false);
  set_trainable("guide", false);
  const auto& x = data_.train.images;
  const auto n_domains = registry_.num_domains();
  const auto path_len = std::min<std::size_t>(3, n_domains);
  for (int epoch = resume_epoch(3); epoch < cfg_.epochs_stage3; ++epoch) {
    auto gen = make_generator(mix_seed(cfg_.seed, 3, epoch));
    Rng rng(mix_seed(cfg_.seed, 3, epoch, 0x57a7e));
    for (const auto& batch : epoch_batches(3, epoch)) {
      const auto real = gather_rows(x, batch);
      const auto labels = gather_labels(data_.train.labels, batch);
      std::vector<std::size_t> order(n_domains);
      for (std::size_t i = 0; i < n_domains; ++i) order[i] = i;
      rng.shuffle(order.begin(), order.end());
      order.resize(path_len);
      std::vector<PathSample> path;
      std::vector<StyleCode> styles;
      for (auto d : order) {
        path.push_back({d, rng.below(static_cast<int>(registry_.domains()[d].num_states()))});
        styles.push_back(m.sample_style(d, path.back().state, torch::randn({1, m.config().noise_dim}, gen)));
      }
      auto ep = build_episode(m, real, labels, path, styles);
      iteration_ += 1;
      const auto logits = [&](const torch::Tensor& img) { return m.discriminator_logits(img); };

      const auto d_real = real_for_d(real);
      auto d_loss = adv_loss(ep, logits, true, d_real).loss_d;
      if (cfg_.mismatch_weight > 0.0) d_loss = d_loss + cfg_.mismatch_weight * mismatch_loss(d_real, labels, rng);
      check_finite({d_loss}, 3);
      opt_->discriminator->zero_grad();
      d_loss.backward();
      opt_->discriminator->step();
      set_trainable("D", false);
      auto lb = combine_losses(adv_loss(ep, logits, false, d_real).loss_g * cfg_.adv_weight, d_loss, rec_loss(ep), con_loss(ep),
                               rev_loss(ep), sty_loss(ep), cfg_.weights);
      const auto guide = guide_loss(ep, labels, path);
      auto total = guide.defined() ? lb.total_g + cfg_.guide_weight * guide : lb.total_g;
      check_finite({total}, 3);
      for (auto d : order) opt_->translators[d]->zero_grad();
      total.backward();
      for (auto d : order) opt_->translators[d]->step();
      set_trainable("D", true);

      auto losses = lb.to_json();
      losses["guide"] = item(guide);
      nlohmann::json names = nlohmann::json::array();
      for (auto d : order) names.push_back(registry_.domains()[d].name);
      log_step(3, losses, {{"path", names}});
      notify({3, 0, std::nullopt, order, nullptr, losses});
    }
    save_progress(3, epoch + 1);
  }
  finish_stage(3);
}

}  // namespace ccr
