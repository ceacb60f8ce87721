#include "ccr/editpath.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "ccr/image_io.hpp"
#include "ccr/rng.hpp"

namespace ccr {

namespace {

torch::Tensor batch1(const torch::Tensor& image) { return image.dim() == 3 ? image.unsqueeze(0) : image; }

AttributeLabel predict(const CcrModel& model, const torch::Tensor& image) {
  return model.classify_attributes(batch1(image)).labels.at(0);
}

torch::Tensor noise_for_seed(const CcrModel& model, std::int64_t seed) {
  auto gen = at::detail::createCPUGenerator(static_cast<std::uint64_t>(seed));
  return torch::randn({1, model.config().noise_dim}, gen, torch::TensorOptions().dtype(torch::kFloat32))
      .to(model.dtype());
}

torch::Tensor load_reference(const std::filesystem::path& path, const CcrModel& model) {
  auto img = load_png(path);
  const int r = model.config().resolution;
  return resize_images(img.unsqueeze(0), r).to(model.dtype());
}

std::string step_token(const EditStep& step, const DomainRegistry& registry) {
  auto token = registry.token_for(step.edit);
  const auto suffix = step.style.to_string();
  if (!suffix.empty()) token += "@" + suffix;
  return token;
}

StyleSource parse_style(std::string_view text, std::size_t column) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ParseError("style must be seed:<int>, ref:<file> or stored:<id>", column);
  const auto kind = text.substr(0, colon);
  const auto value = text.substr(colon + 1);
  if (value.empty()) throw ParseError("empty style value", column + colon + 1);
  if (kind == "seed") {
    std::int64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
    if (ec != std::errc() || ptr != value.data() + value.size())
      throw ParseError("seed must be an integer", column + colon + 1 + static_cast<std::size_t>(ptr - value.data()));
    return StyleSource::from_seed(seed);
  }
  if (kind == "ref") return StyleSource::from_reference(std::string(value));
  if (kind == "stored") return StyleSource::stored(std::string(value));
  throw ParseError("unknown style kind '" + std::string(kind) + "'", column);
}

struct ResolvedStyle {
  StyleCode style;
  std::string provenance;
  StyleSource source;  // fresh draws are recorded as their seed
  std::optional<AttributeLabel> symbolic_override;
};

ResolvedStyle resolve_style(const EditStep& step, const AttributeLabel& symbolic, const CcrModel& model,
                            const ApplyOptions& options, std::uint64_t& fresh_draws) {
  const auto& reg = model.registry();
  const auto d = step.edit.domain;
  const auto& dom = reg.domains().at(d);
  const bool forward = step.edit.direction == Direction::kForward;
  ResolvedStyle out;
  out.source = step.style;
  const auto sampled = [&](std::int64_t seed) {
    if (!forward && dom.exclusive)
      throw EditError("backward edit '" + reg.token_for(step.edit) + "' in exclusive domain '" + dom.name +
                      "' needs a reference style (@ref:<image>)");
    const int state = forward ? reg.forward_state(d, step.edit.attribute) : 0;
    out.style = model.sample_style(d, state, noise_for_seed(model, seed));
    out.provenance = "sampled:seed:" + std::to_string(seed);
    out.source = StyleSource::from_seed(seed);
  };
  switch (step.style.kind) {
    case StyleSource::Kind::kFresh: {
      Rng rng(mix_seed(options.fresh_seed, fresh_draws++));
      sampled(static_cast<std::int64_t>(rng.next() >> 33));
      break;
    }
    case StyleSource::Kind::kSeed:
      sampled(step.style.seed);
      break;
    case StyleSource::Kind::kReference: {
      const auto ref = load_reference(options.reference_dir / step.style.reference, model);
      out.style = model.extract_style(ref, d);
      out.provenance = "extracted:ref:" + step.style.reference;
      if (!forward && dom.exclusive) {
        auto label = symbolic;
        const auto ref_label = predict(model, ref);
        reg.set_state(label, d, reg.state_of(ref_label, d));
        out.symbolic_override = label;
      }
      break;
    }
    case StyleSource::Kind::kStored: {
      if (options.store == nullptr || options.store->count(step.style.style_id) == 0)
        throw EditError("missing stored style '" + step.style.style_id + "'");
      out.style = options.store->at(step.style.style_id);
      if (out.style.domain != d) throw EditError("stored style '" + step.style.style_id + "' belongs to another domain");
      out.provenance = "stored:" + step.style.style_id;
      break;
    }
  }
  return out;
}

}  // namespace

// ---- grammar ---------------------------------------------------------------------------------------

std::string StyleSource::to_string() const {
  switch (kind) {
    case Kind::kFresh: return "";
    case Kind::kSeed: return "seed:" + std::to_string(seed);
    case Kind::kReference: return "ref:" + reference;
    case Kind::kStored: return "stored:" + style_id;
  }
  return "";
}

std::string EditPath::to_string(const DomainRegistry& registry) const {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += ',';
    out += step_token(steps[i], registry);
  }
  return out;
}

EditStep parse_step(std::string_view token, const DomainRegistry& registry) {
  const auto at = token.find('@');
  EditStep step;
  step.edit = parse_edit_token(token.substr(0, at), registry);
  if (at != std::string_view::npos) step.style = parse_style(token.substr(at + 1), at + 1);
  return step;
}

EditPath parse_path(std::string_view text, const DomainRegistry& registry) {
  EditPath path;
  if (text.find_first_not_of(" \t") == std::string_view::npos) return path;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    auto token = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    std::size_t lead = 0;
    while (lead < token.size() && (token[lead] == ' ' || token[lead] == '\t')) ++lead;
    auto trimmed = token.substr(lead);
    while (!trimmed.empty() && (trimmed.back() == ' ' || trimmed.back() == '\t')) trimmed.remove_suffix(1);
    try {
      path.steps.push_back(parse_step(trimmed, registry));
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      throw ParseError(msg.substr(0, msg.rfind(" (column")), start + lead + e.column());
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return path;
}

EditPath swap_steps(const EditPath& path, std::size_t i, std::size_t j) {
  if (i >= path.size() || j >= path.size())
    throw std::out_of_range("swap index out of range for a path of " + std::to_string(path.size()) + " steps");
  EditPath out = path;
  std::swap(out.steps[i], out.steps[j]);
  return out;
}

bool is_permutation_of(const EditPath& a, const EditPath& b) {
  if (a.size() != b.size()) return false;
  std::vector<bool> used(a.size(), false);
  for (const auto& step : b.steps) {
    bool found = false;
    for (std::size_t i = 0; i < a.size() && !found; ++i)
      if (!used[i] && a.steps[i] == step) used[i] = found = true;
    if (!found) return false;
  }
  return true;
}

// ---- traces ----------------------------------------------------------------------------------------

EditPath EditTrace::path() const {
  EditPath p;
  for (std::size_t k = 1; k < stages.size(); ++k) p.steps.push_back(stages[k].step.value());
  return p;
}

nlohmann::json EditTrace::to_json(const DomainRegistry& registry, const std::string& image_prefix) const {
  nlohmann::json out = {{"registry", registry.to_json()}, {"stages", nlohmann::json::array()}};
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    nlohmann::json j = {{"index", k},
                        {"image", image_prefix + std::to_string(k) + ".png"},
                        {"predicted_bits", s.predicted.bits},
                        {"symbolic_bits", s.symbolic.bits},
                        {"provenance", s.provenance}};
    if (s.step) {
      j["token"] = step_token(*s.step, registry);
      j["domain"] = registry.domains().at(s.step->edit.domain).name;
    } else {
      j["token"] = nullptr;
    }
    if (s.style) {
      auto v = s.style->values.detach().to(torch::kFloat64).contiguous().view(-1);
      j["style"] = std::vector<double>(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
    } else {
      j["style"] = nullptr;
    }
    out["stages"].push_back(j);
  }
  return out;
}

void EditTrace::save(const std::filesystem::path& dir, const DomainRegistry& registry, const nlohmann::json& extra,
                     const std::string& image_prefix) const {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < stages.size(); ++k)
    save_png(dir / (image_prefix + std::to_string(k) + ".png"), stages[k].image.to(torch::kFloat32));
  auto j = to_json(registry, image_prefix);
  for (const auto& [key, value] : extra.items()) j[key] = value;
  std::ofstream out(dir / "trace.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "trace.json").string());
  out << j.dump(2) << '\n';
}

EditTrace EditTrace::load(const std::filesystem::path& trace_json, const DomainRegistry& registry) {
  std::ifstream in(trace_json);
  if (!in) throw std::runtime_error("cannot read trace " + trace_json.string());
  const auto j = nlohmann::json::parse(in);
  const auto dir = trace_json.parent_path();
  EditTrace trace;
  for (const auto& s : j.at("stages")) {
    TraceStage stage;
    if (!s.contains("image")) throw EditError("trace stage without image");
    stage.image = load_png(dir / s.at("image").get<std::string>());
    stage.predicted.bits = s.at("predicted_bits").get<std::vector<std::uint8_t>>();
    stage.symbolic.bits = s.at("symbolic_bits").get<std::vector<std::uint8_t>>();
    stage.provenance = s.value("provenance", "");
    if (!s.at("token").is_null()) {
      stage.step = parse_step(s.at("token").get<std::string>(), registry);
      if (!s.at("style").is_null()) {
        const auto v = s.at("style").get<std::vector<double>>();
        stage.style = StyleCode{torch::tensor(v, torch::kFloat64).to(torch::kFloat32).unsqueeze(0),
                                stage.step->edit.domain};
      }
    } else if (!trace.stages.empty()) {
      throw EditError("trace stage " + std::to_string(trace.stages.size()) + " lacks its edit step");
    }
    trace.stages.push_back(std::move(stage));
  }
  if (trace.stages.empty()) throw EditError("trace has no stages");
  return trace;
}

// ---- application -----------------------------------------------------------------------------------

EditTrace start_trace(const torch::Tensor& source, const CcrModel& model,
                      const std::optional<AttributeLabel>& known_label) {
  torch::NoGradGuard guard;
  TraceStage head;
  head.image = batch1(source).to(model.dtype())[0];
  head.predicted = predict(model, head.image);
  head.symbolic = known_label.value_or(head.predicted);
  model.registry().validate(head.symbolic);
  head.provenance = "source";
  EditTrace trace;
  trace.stages.push_back(std::move(head));
  return trace;
}

namespace {

void apply_step_impl(EditTrace& trace, const EditStep& step, const CcrModel& model, const ApplyOptions& options,
                     std::uint64_t& fresh_draws) {
  torch::NoGradGuard guard;
  const auto& reg = model.registry();
  if (step.edit.domain >= reg.num_domains()) throw EditError("model has no translator for the step's domain");
  const auto& prev = trace.stages.back();
  auto resolved = resolve_style(step, prev.symbolic, model, options, fresh_draws);
  TraceStage stage;
  stage.step = EditStep{step.edit, resolved.source};
  stage.image = model.translate_forward(batch1(prev.image), step.edit.domain, resolved.style)[0];
  stage.style = resolved.style;
  stage.provenance = resolved.provenance;
  stage.predicted = predict(model, stage.image);
  stage.symbolic = resolved.symbolic_override.value_or(label_apply(prev.symbolic, step.edit, reg));
  trace.stages.push_back(std::move(stage));
}

}  // namespace

void apply_step(EditTrace& trace, const EditStep& step, const CcrModel& model, const ApplyOptions& options) {
  std::uint64_t draws = trace.size();
  apply_step_impl(trace, step, model, options, draws);
}

EditTrace apply_path(const torch::Tensor& source, const EditPath& path, const CcrModel& model,
                     const ApplyOptions& options) {
  auto trace = start_trace(source, model);
  std::uint64_t draws = 0;
  for (const auto& step : path.steps) apply_step_impl(trace, step, model, options, draws);
  return trace;
}

EditTrace reverse_trace(const EditTrace& trace, const CcrModel& model) {
  torch::NoGradGuard guard;
  if (trace.stages.empty()) throw EditError("cannot reverse an empty trace");
  EditTrace out;
  TraceStage head = trace.final_stage();
  head.step.reset();
  head.style.reset();
  head.provenance = "source";
  out.stages.push_back(head);
  torch::Tensor y = batch1(trace.final_stage().image);
  for (std::size_t k = trace.size() - 1; k >= 1; --k) {
    const auto& stage = trace.stages[k];
    if (!stage.step) throw EditError("trace stage " + std::to_string(k) + " has no provenance");
    const auto d = stage.step->edit.domain;
    const auto& reference = trace.stages[k - 1];
    TraceStage back;
    back.style = model.extract_style(batch1(reference.image), d);
    y = model.translate_forward(y, d, *back.style);
    back.step = EditStep{inverse(stage.step->edit), StyleSource::stored("stage:" + std::to_string(k - 1))};
    back.image = y[0];
    back.provenance = "extracted:stage:" + std::to_string(k - 1);
    back.predicted = predict(model, back.image);
    back.symbolic = reference.symbolic;
    out.stages.push_back(std::move(back));
  }
  return out;
}

// ---- checks ----------------------------------------------------------------------------------------

nlohmann::json ContinuityReport::to_json() const {
  nlohmann::json j = {{"ok", ok()}, {"stage_ok", stage_ok}, {"detail", detail}};
  j["first_violation"] = first_violation ? nlohmann::json(*first_violation) : nlohmann::json(nullptr);
  return j;
}

ContinuityReport check_continuity(const EditTrace& trace, const DomainRegistry& registry) {
  ContinuityReport report;
  report.stage_ok.assign(trace.size(), true);
  for (std::size_t k = 1; k < trace.size(); ++k) {
    const auto& stage = trace.stages[k];
    for (std::size_t j = 1; j < k; ++j) {
      const auto d = trace.stages[j].step.value().edit.domain;
      if (!registry.group_equal(stage.predicted, stage.symbolic, d)) {
        report.stage_ok[k] = false;
        if (!report.first_violation) {
          report.first_violation = k;
          report.detail = "stage " + std::to_string(k) + " lost the '" + registry.domains()[d].name +
                          "' edit made at stage " + std::to_string(j);
        }
        break;
      }
    }
  }
  return report;
}

nlohmann::json ConsistencyReport::to_json() const {
  return {{"metrics", metrics.to_json()},
          {"directions", ImageMetrics::directions()},
          {"labels_equal", labels_equal},
          {"final_a_bits", trace_a.final_stage().predicted.bits},
          {"final_b_bits", trace_b.final_stage().predicted.bits}};
}

namespace {

ConsistencyReport compare_orders(const EditTrace& applied, const std::vector<std::size_t>& order,
                                 const CcrModel& model) {
  // Both orders are recomputed from the head with the recorded style vectors, so an identity order
  // reproduces trace A exactly even after undo replaced intermediate images.
  StyleStore store;
  EditPath stored_a;
  for (std::size_t k = 1; k < applied.size(); ++k) {
    const auto& stage = applied.stages[k];
    const std::string id = "step" + std::to_string(k - 1);
    store[id] = stage.style.value();
    stored_a.steps.push_back(EditStep{stage.step->edit, StyleSource::stored(id)});
  }
  EditPath stored_b;
  for (auto idx : order) stored_b.steps.push_back(stored_a.steps.at(idx));
  ApplyOptions opts;
  opts.store = &store;
  ConsistencyReport report;
  report.trace_a = apply_path(applied.head().image, stored_a, model, opts);
  report.trace_b = apply_path(applied.head().image, stored_b, model, opts);
  for (auto* t : {&report.trace_a, &report.trace_b}) {
    t->stages[0].symbolic = applied.head().symbolic;
    for (std::size_t k = 1; k < t->size(); ++k)
      t->stages[k].symbolic = label_apply(t->stages[k - 1].symbolic, t->stages[k].step->edit, model.registry());
  }
  report.metrics = ImageMetrics::compute(report.trace_a.final_stage().image, report.trace_b.final_stage().image);
  report.labels_equal = report.trace_a.final_stage().predicted == report.trace_b.final_stage().predicted;
  return report;
}

void check_order(const std::vector<std::size_t>& order, std::size_t n) {
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  bool ok = sorted.size() == n;
  for (std::size_t i = 0; ok && i < n; ++i) ok = sorted[i] == i;
  if (!ok) throw EditError("order is not a permutation of the " + std::to_string(n) + " applied steps");
}

}  // namespace

ConsistencyReport check_consistency(const torch::Tensor& source, const EditPath& path_a, const EditPath& path_b,
                                    const CcrModel& model, const ApplyOptions& options) {
  if (!is_permutation_of(path_a, path_b)) throw EditError("path B is not a permutation of path A");
  const auto trace_a = apply_path(source, path_a, model, options);
  std::vector<std::size_t> order;
  std::vector<bool> used(path_a.size(), false);
  for (const auto& step : path_b.steps)
    for (std::size_t i = 0; i < path_a.size(); ++i)
      if (!used[i] && path_a.steps[i] == step) {
        used[i] = true;
        order.push_back(i);
        break;
      }
  return compare_orders(trace_a, order, model);
}

ConsistencyReport check_consistency(const EditTrace& trace, const std::vector<std::size_t>& order,
                                    const CcrModel& model) {
  check_order(order, trace.size() - 1);
  return compare_orders(trace, order, model);
}

// ---- sessions --------------------------------------------------------------------------------------

Session::Session(std::string id, const torch::Tensor& source, const CcrModel& model,
                 std::optional<AttributeLabel> known_label)
    : id_(std::move(id)), model_(&model), trace_(start_trace(source, model, known_label)) {}

const TraceStage& Session::push_edit(const EditStep& step, const ApplyOptions& options) {
  ApplyOptions opts = options;
  opts.fresh_seed = mix_seed(options.fresh_seed, std::hash<std::string>{}(id_));
  apply_step_impl(trace_, step, *model_, opts, fresh_counter_);
  return trace_.stages.back();
}

Session::UndoResult Session::undo() {
  if (trace_.size() <= 1) throw EditError("nothing to undo");
  torch::NoGradGuard guard;
  const auto& last = trace_.stages.back();
  const auto& prev = trace_.stages[trace_.size() - 2];
  const auto d = last.step->edit.domain;
  UndoResult result;
  result.cached = prev.image;
  result.image = model_->translate_backward(batch1(last.image), batch1(prev.image), d)[0];
  result.reversal_error = mean_l1(result.image, result.cached);
  result.predicted = predict(*model_, result.image);
  trace_.stages.pop_back();
  auto& restored = trace_.stages.back();
  restored.image = result.image;
  restored.predicted = result.predicted;
  result.stage_index = trace_.size() - 1;
  return result;
}

ConsistencyReport Session::whatif(const std::vector<std::size_t>& order) const {
  return check_consistency(trace_, order, *model_);
}

ContinuityReport Session::continuity() const { return check_continuity(trace_, model_->registry()); }

}  // namespace ccr
