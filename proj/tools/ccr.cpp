#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccr/editpath.hpp"
#include "ccr/evaluation.hpp"
#include "ccr/image_io.hpp"
#include "ccr/metrics.hpp"
#include "ccr/service.hpp"
#include "ccr/synthfaces.hpp"
#include "ccr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Top-level config file: one object per module, unknown keys rejected.
struct CliConfig {
  json train = json::object();
  json registry;
  json eval = json::object();
  json service = json::object();

  static CliConfig load(const std::string& path) {
    CliConfig c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "train") c.train = value;
      else if (key == "registry") c.registry = value;
      else if (key == "eval") c.eval = value;
      else if (key == "service") c.service = value;
      else throw UsageError("unknown config key '" + key + "'");
    }
    return c;
  }

  ccr::DomainRegistry make_registry() const {
    return registry.is_null() ? ccr::DomainRegistry::standard() : ccr::DomainRegistry::from_json(registry);
  }

  ccr::TrainConfig make_train() const {
    try {
      return ccr::TrainConfig::from_json(train);
    } catch (const std::exception& e) {
      throw UsageError(std::string("bad train config: ") + e.what());
    }
  }

  void check_section(const json& section, const std::set<std::string>& allowed, const char* name) const {
    if (!section.is_object()) throw UsageError(std::string(name) + " config must be an object");
    for (const auto& [key, value] : section.items())
      if (!allowed.count(key)) throw UsageError("unknown " + std::string(name) + " config key '" + key + "'");
  }
};

ccr::LoadedCheckpoint open_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw std::runtime_error("checkpoint not found: " + dir.string());
  return ccr::load_checkpoint(dir);
}

std::string manifest_hash(const fs::path& root) { return ccr::sha256_file(root / ccr::kManifestName); }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

ccr::ImageSet held_out(const fs::path& dataset, const ccr::CcrModel& model) {
  auto data = ccr::load_training_data(dataset, model.registry(), model.config().resolution);
  if (data.test.size() == 0) throw std::runtime_error("dataset " + dataset.string() + " has no held-out images");
  return data.test;
}

void print_labels(const ccr::DomainRegistry& reg, const ccr::AttributeLabel& label) {
  for (std::size_t b = 0; b < reg.total_bits(); ++b)
    std::cout << (b ? " " : "") << reg.bit_name(b) << "=" << int(label.bits[b]);
  std::cout << '\n';
}

// ---- subcommands -----------------------------------------------------------------------------------

struct GenDataArgs {
  int count = 2000;
  std::uint64_t seed = 0;
  std::string out = "data";
  int resolution = 64;
  std::string config;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.count < 1) throw UsageError("--count must be positive");
  const auto cfg = CliConfig::load(a.config);
  const auto manifest = ccr::generate_dataset(a.count, a.seed, cfg.make_registry(), a.out, a.resolution);
  std::cout << "manifest " << manifest.manifest_path.string() << '\n';
  std::cout << "manifest_sha256 " << manifest_hash(a.out) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string stage = "all";
  bool resume = false;
  std::string dataset;
  std::string checkpoint_dir;
  std::optional<std::uint64_t> seed;
};

ccr::TrainConfig train_config(const CliConfig& cfg, const TrainArgs& a) {
  auto tc = cfg.make_train();
  if (!a.dataset.empty()) tc.dataset = a.dataset;
  if (!a.checkpoint_dir.empty()) tc.checkpoint_dir = a.checkpoint_dir;
  if (a.seed) tc.seed = *a.seed;
  if (tc.dataset.empty()) throw UsageError("no dataset: pass --dataset or set train.dataset");
  try {
    tc.validate();
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad train config: ") + e.what());
  }
  return tc;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = CliConfig::load(a.config);
  const auto tc = train_config(cfg, a);
  const auto selection = ccr::parse_stage(a.stage);
  const auto registry = cfg.make_registry();
  auto data = ccr::load_training_data(tc.dataset, registry, tc.model.resolution);
  ccr::InitMode mode = ccr::InitMode::kFresh;
  if (a.resume) mode = ccr::InitMode::kResume;
  else if (fs::exists(tc.checkpoint_dir / "manifest.json")) mode = ccr::InitMode::kFromCheckpoint;
  ccr::Trainer trainer(tc, registry, std::move(data), mode);
  trainer.run(selection);
  std::cout << "checkpoint " << tc.checkpoint_dir.string() << '\n';
  std::cout << "trained_stages " << json(trainer.manifest().trained_stages).dump() << '\n';
  std::cout << "checkpoint_hash " << ccr::checkpoint_hash(tc.checkpoint_dir) << '\n';
  return 0;
}

struct EditArgs {
  std::string checkpoint;
  std::string input;
  std::string path;
  std::string out_dir = "edit_out";
  std::uint64_t seed = 0;
};

int cmd_edit(const EditArgs& a) {
  auto loaded = open_checkpoint(a.checkpoint);
  const auto& model = *loaded.model;
  ccr::EditPath path;
  try {
    path = ccr::parse_path(a.path, model.registry());
  } catch (const ccr::ParseError& e) {
    throw UsageError(std::string("parse error: ") + e.what());
  } catch (const ccr::UnknownAttributeError& e) {
    throw UsageError(std::string("parse error: ") + e.what());
  }
  if (!fs::exists(a.input)) throw std::runtime_error("input image not found: " + a.input);
  const auto source = ccr::resize_images(ccr::load_png(a.input).unsqueeze(0), model.config().resolution)[0];
  ccr::ApplyOptions opts;
  opts.reference_dir = fs::path(a.input).parent_path().empty() ? fs::path(".") : fs::path(a.input).parent_path();
  opts.fresh_seed = a.seed;
  const auto trace = ccr::apply_path(source, path, model, opts);
  trace.save(a.out_dir, model.registry(),
             {{"checkpoint", fs::absolute(a.checkpoint).string()},
              {"checkpoint_hash", ccr::checkpoint_hash(a.checkpoint)},
              {"path", path.to_string(model.registry())},
              {"continuity", ccr::check_continuity(trace, model.registry()).to_json()}});
  for (std::size_t k = 0; k < trace.size(); ++k) {
    std::cout << "stage " << k << ' ' << (trace.stages[k].step ? trace.stages[k].provenance : "source") << ": ";
    print_labels(model.registry(), trace.stages[k].predicted);
  }
  std::cout << "trace " << (fs::path(a.out_dir) / "trace.json").string() << '\n';
  return 0;
}

struct ReverseArgs {
  std::string trace;
  std::string out_dir;
  std::string checkpoint;
};

int cmd_reverse(const ReverseArgs& a) {
  if (!fs::exists(a.trace)) throw std::runtime_error("trace not found: " + a.trace);
  std::ifstream in(a.trace);
  const auto meta = json::parse(in);
  std::string ckpt = a.checkpoint;
  if (ckpt.empty()) ckpt = meta.value("checkpoint", std::string());
  if (ckpt.empty()) throw UsageError("trace does not name a checkpoint; pass --checkpoint");
  auto loaded = open_checkpoint(ckpt);
  const auto& model = *loaded.model;
  const auto forward = ccr::EditTrace::load(a.trace, model.registry());
  const auto back = ccr::reverse_trace(forward, model);
  const fs::path out = a.out_dir.empty() ? fs::path(a.trace).parent_path() / "reversed" : fs::path(a.out_dir);
  const auto& source = forward.head();
  const auto& restored = back.final_stage();
  back.save(out, model.registry(),
            {{"checkpoint", fs::absolute(ckpt).string()},
             {"forward_trace", fs::absolute(a.trace).string()},
             {"restored_vs_source", ccr::ImageMetrics::compute(source.image, restored.image).to_json()},
             {"restored_labels_match", restored.predicted == source.predicted}},
            "reverse_");
  std::cout << "restored: ";
  print_labels(model.registry(), restored.predicted);
  std::cout << "source:   ";
  print_labels(model.registry(), source.predicted);
  std::cout << "mean_l1 " << ccr::mean_l1(source.image, restored.image) << '\n';
  std::cout << "trace " << (out / "trace.json").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string report = "report.json";
  std::string config;
  std::optional<std::size_t> max_images;
  std::optional<std::uint64_t> seed;
};

ccr::EvalOptions eval_options(const CliConfig& cfg, std::optional<std::size_t> max_images,
                              std::optional<std::uint64_t> seed) {
  cfg.check_section(cfg.eval, {"max_images", "seed"}, "eval");
  ccr::EvalOptions o;
  o.max_images = cfg.eval.value("max_images", std::size_t{0});
  o.seed = cfg.eval.value("seed", std::uint64_t{0});
  if (max_images) o.max_images = *max_images;
  if (seed) o.seed = *seed;
  return o;
}

void print_eval(const ccr::FullEvaluation& e) {
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "images " << e.paths.m << " domains " << e.paths.n << '\n';
  std::cout << "eac path1 " << e.paths.eac_path1 << " path2 " << e.paths.eac_path2 << '\n';
  std::cout << "rac " << e.paths.rac << '\n';
  std::cout << "consistency mean_l1 " << e.paths.consistency.mean_l1 << " ssim " << e.paths.consistency.ssim << '\n';
  std::cout << "reversibility mse " << e.paths.reversibility.mse << " ssim " << e.paths.reversibility.ssim << '\n';
  for (const auto& [name, v] : e.single_attribute) std::cout << "edit_accuracy " << name << ' ' << v << '\n';
  for (const auto& [name, v] : e.classifier) std::cout << "classifier_accuracy " << name << ' ' << v << '\n';
  std::cout << "symbolic_agreement " << e.paths.symbolic_agreement << '\n';
}

int cmd_eval(const EvalArgs& a) {
  const auto cfg = CliConfig::load(a.config);
  auto opts = eval_options(cfg, a.max_images, a.seed);
  auto loaded = open_checkpoint(a.checkpoint);
  opts.config_hash = ccr::checkpoint_hash(a.checkpoint);
  const auto data = held_out(a.dataset, *loaded.model);
  const auto e = ccr::evaluate_all(data, *loaded.model, opts);
  auto j = e.to_json();
  j["checkpoint"] = fs::absolute(a.checkpoint).string();
  write_json(a.report, j);
  print_eval(e);
  std::cout << "report " << a.report << '\n';
  return 0;
}

struct MetricsArgs {
  std::string a, b;
  bool as_json = false;
};

int cmd_metrics(const MetricsArgs& a) {
  for (const auto& p : {a.a, a.b})
    if (!fs::exists(p)) throw std::runtime_error("image not found: " + p);
  const auto m = ccr::ImageMetrics::compute(ccr::load_png(a.a), ccr::load_png(a.b));
  if (a.as_json) {
    std::cout << json{{"metrics", m.to_json()}, {"directions", ccr::ImageMetrics::directions()}}.dump(2) << '\n';
    return 0;
  }
  const auto dirs = ccr::ImageMetrics::directions();
  std::cout << std::setprecision(10);
  const auto fields = m.to_json();
  for (const auto& [name, v] : fields.items()) {
    if (name == "ms_ssim_scales") continue;
    std::cout << std::left << std::setw(8) << name << ' ' << v.get<double>() << "  (" << dirs.at(name).get<std::string>()
              << " is better)\n";
  }
  std::cout << "ms_ssim_scales " << m.ms_ssim_scales << '\n';
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string variant;
  std::string dataset;
  std::string work_dir = "ablation";
  std::string report;
  std::optional<std::size_t> max_images;
  std::optional<std::uint64_t> seed;
};

// Trains into dir unless a checkpoint with all three stages is already there.
std::unique_ptr<ccr::CcrModel> trained_variant(ccr::TrainConfig tc, const ccr::DomainRegistry& registry,
                                               const fs::path& dir) {
  tc.checkpoint_dir = dir;
  if (fs::exists(dir / "manifest.json")) {
    const auto manifest = ccr::read_manifest(dir);
    if (manifest.trained_stages == std::vector<int>{1, 2, 3} &&
        manifest.model_config.to_json() == tc.model.to_json()) {
      std::cout << "reusing " << dir.string() << '\n';
      return std::move(ccr::load_checkpoint(dir).model);
    }
  }
  auto data = ccr::load_training_data(tc.dataset, registry, tc.model.resolution);
  const auto mode = fs::exists(dir / "state" / "progress.json") ? ccr::InitMode::kResume : ccr::InitMode::kFresh;
  ccr::Trainer trainer(tc, registry, std::move(data), mode);
  trainer.run(ccr::StageSelection::kAll);
  return std::move(ccr::load_checkpoint(dir).model);
}

int cmd_ablate(const AblateArgs& a) {
  const auto cfg = CliConfig::load(a.config);
  TrainArgs ta;
  ta.dataset = a.dataset;
  ta.seed = a.seed;
  const auto base = train_config(cfg, ta);
  const auto registry = cfg.make_registry();
  auto opts = eval_options(cfg, a.max_images, a.seed);
  json rows = json::array();
  json variant_config;
  for (const std::string& name : {std::string("default"), a.variant}) {
    const auto tc = ccr::apply_variant(base, name);
    const auto model = trained_variant(tc, registry, fs::path(a.work_dir) / name);
    const auto data = held_out(tc.dataset, *model);
    const auto e = ccr::evaluate_all(data, *model, opts);
    rows.push_back(ccr::ablation_row(name, tc, e));
    if (name == a.variant) variant_config = tc.model.to_json();
  }
  const json report = {{"variant", a.variant},
                       {"use_attention", variant_config.at("use_attention")},
                       {"use_affine", variant_config.at("use_affine")},
                       {"use_identity_loss", variant_config.at("use_identity_loss")},
                       {"model_config", variant_config},
                       {"columns", {"variant", "use_attention", "use_affine", "use_identity_loss", "identity_loss_weight",
                                    "eac_path1", "eac_path2", "rac", "single_attribute_accuracy", "consistency_l1",
                                    "reversibility_mse"}},
                       {"rows", rows}};
  const fs::path out = a.report.empty() ? fs::path(a.work_dir) / ("ablation_" + a.variant + ".json") : fs::path(a.report);
  write_json(out, report);
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    std::cout << r.at("variant").get<std::string>() << " eac1 " << r.at("eac_path1").get<double>() << " eac2 "
              << r.at("eac_path2").get<double>() << " rac " << r.at("rac").get<double>() << " id_loss "
              << r.at("identity_loss_weight").get<double>() << '\n';
  std::cout << "report " << out.string() << '\n';
  return 0;
}

struct ServeArgs {
  std::string checkpoint;
  std::string config;
  std::string host;
  std::optional<int> port;
  std::optional<int> ttl;
  std::string cors_origin;
};

ccr::EditService* g_service = nullptr;

int cmd_serve(const ServeArgs& a) {
  const auto cfg = CliConfig::load(a.config);
  cfg.check_section(cfg.service, {"host", "port", "session_ttl_s", "cors_origin", "seed"}, "service");
  ccr::ServiceOptions opts;
  opts.host = cfg.service.value("host", opts.host);
  opts.port = cfg.service.value("port", opts.port);
  opts.session_ttl = std::chrono::seconds(cfg.service.value("session_ttl_s", 3600));
  opts.cors_origin = cfg.service.value("cors_origin", opts.cors_origin);
  opts.seed = cfg.service.value("seed", std::uint64_t{0});
  if (!a.host.empty()) opts.host = a.host;
  if (a.port) opts.port = *a.port;
  if (a.ttl) opts.session_ttl = std::chrono::seconds(*a.ttl);
  if (!a.cors_origin.empty()) opts.cors_origin = a.cors_origin;
  auto loaded = open_checkpoint(a.checkpoint);
  ccr::EditService service(std::move(loaded.model), ccr::checkpoint_hash(a.checkpoint), opts);
  const int port = service.bind();
  if (port < 0) throw std::runtime_error("cannot bind " + opts.host + ":" + std::to_string(opts.port));
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  std::cout << "listening on http://" << opts.host << ':' << port << std::endl;
  service.serve();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential facial-attribute editing: data, training, editing, evaluation and serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ccr 1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a labelled synthetic face dataset");
  gen_cmd->add_option("--count", gen.count, "Number of images")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--resolution", gen.resolution, "Image size")->check(CLI::IsMember({32, 64, 128}))->capture_default_str();
  gen_cmd->add_option("--config", gen.config, "JSON config (registry section)");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Run training stages");
  train_cmd->add_option("--config", train.config, "JSON config with a 'train' section");
  train_cmd->add_option("--stage", train.stage, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}))->capture_default_str();
  train_cmd->add_flag("--resume", train.resume, "Continue from the last saved epoch");
  train_cmd->add_option("--dataset", train.dataset, "Dataset directory (overrides config)");
  train_cmd->add_option("--checkpoint-dir", train.checkpoint_dir, "Checkpoint directory (overrides config)");
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Training seed (overrides config)");

  EditArgs edit;
  auto* edit_cmd = app.add_subcommand("edit", "Apply an edit path to an image");
  edit_cmd->add_option("--checkpoint", edit.checkpoint, "Checkpoint directory")->required();
  edit_cmd->add_option("--input", edit.input, "Source PNG")->required();
  edit_cmd->add_option("--path", edit.path, "Edit path, e.g. \"+blond@seed:7,+bangs,+glasses\"")->required();
  edit_cmd->add_option("--out-dir", edit.out_dir, "Output directory")->capture_default_str();
  edit_cmd->add_option("--seed", edit.seed, "Seed for fresh style draws")->capture_default_str();

  ReverseArgs rev;
  auto* rev_cmd = app.add_subcommand("reverse", "Undo a saved edit trace step by step");
  rev_cmd->add_option("--trace", rev.trace, "trace.json written by edit")->required();
  rev_cmd->add_option("--out-dir", rev.out_dir, "Output directory (default <trace dir>/reversed)");
  rev_cmd->add_option("--checkpoint", rev.checkpoint, "Checkpoint (default: the one recorded in the trace)");

  EvalArgs ev;
  std::size_t ev_max = 0;
  std::uint64_t ev_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--report", ev.report, "Report path")->capture_default_str();
  eval_cmd->add_option("--config", ev.config, "JSON config with an 'eval' section");
  auto* ev_max_opt = eval_cmd->add_option("--max-images", ev_max, "Limit on held-out images (0 = all)");
  auto* ev_seed_opt = eval_cmd->add_option("--seed", ev_seed, "Style seed");

  MetricsArgs met;
  auto* met_cmd = app.add_subcommand("metrics", "Full-reference metrics between two PNGs");
  met_cmd->add_option("--a", met.a, "First image")->required();
  met_cmd->add_option("--b", met.b, "Second image")->required();
  met_cmd->add_flag("--json", met.as_json, "Print JSON");

  AblateArgs abl;
  std::size_t abl_max = 0;
  std::uint64_t abl_seed = 0;
  auto* abl_cmd = app.add_subcommand("ablate", "Train and compare a fusion or identity-loss variant");
  abl_cmd->add_option("--config", abl.config, "JSON config with a 'train' section");
  abl_cmd->add_option("--variant", abl.variant, "Variant")->required()->check(CLI::IsMember(ccr::ablation_variants()));
  abl_cmd->add_option("--dataset", abl.dataset, "Dataset directory (overrides config)");
  abl_cmd->add_option("--work-dir", abl.work_dir, "Directory for variant checkpoints")->capture_default_str();
  abl_cmd->add_option("--report", abl.report, "Report path (default <work-dir>/ablation_<variant>.json)");
  auto* abl_max_opt = abl_cmd->add_option("--max-images", abl_max, "Limit on held-out images (0 = all)");
  auto* abl_seed_opt = abl_cmd->add_option("--seed", abl_seed, "Training and style seed");

  ServeArgs srv;
  int srv_port = ccr::kDefaultServicePort;
  int srv_ttl = 3600;
  auto* srv_cmd = app.add_subcommand("serve", "Serve editing sessions over HTTP");
  srv_cmd->add_option("--checkpoint", srv.checkpoint, "Checkpoint directory")->required();
  srv_cmd->add_option("--config", srv.config, "JSON config with a 'service' section");
  srv_cmd->add_option("--host", srv.host, "Bind address (default 127.0.0.1)");
  auto* srv_port_opt = srv_cmd->add_option("--port", srv_port, "Port (default 8797)")->check(CLI::Range(0, 65535));
  auto* srv_ttl_opt = srv_cmd->add_option("--session-ttl", srv_ttl, "Idle session lifetime in seconds")->check(CLI::PositiveNumber);
  srv_cmd->add_option("--cors-origin", srv.cors_origin, "Allowed CORS origin (default *)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_seed_opt) train.seed = train_seed;
  if (*ev_max_opt) ev.max_images = ev_max;
  if (*ev_seed_opt) ev.seed = ev_seed;
  if (*abl_max_opt) abl.max_images = abl_max;
  if (*abl_seed_opt) abl.seed = abl_seed;
  if (*srv_port_opt) srv.port = srv_port;
  if (*srv_ttl_opt) srv.ttl = srv_ttl;

  if (ccr::apply_deterministic_mode()) std::cerr << "deterministic mode\n";
  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train);
    if (*edit_cmd) return cmd_edit(edit);
    if (*rev_cmd) return cmd_reverse(rev);
    if (*eval_cmd) return cmd_eval(ev);
    if (*met_cmd) return cmd_metrics(met);
    if (*abl_cmd) return cmd_ablate(abl);
    if (*srv_cmd) return cmd_serve(srv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
