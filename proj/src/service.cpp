#include "ccr/service.hpp"

#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "ccr/image_io.hpp"
#include "ccr/rng.hpp"
#include "ccr/synthfaces.hpp"

namespace ccr {

// ---- worker queue ----------------------------------------------------------------------------------

InferenceQueue::InferenceQueue() : worker_([this] { loop(); }) {}

InferenceQueue::~InferenceQueue() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void InferenceQueue::push(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void InferenceQueue::loop() {
  torch::NoGradGuard no_grad;
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
  }
}

// ---- helpers ---------------------------------------------------------------------------------------

namespace {

HttpResponse json_response(int status, const nlohmann::json& body) {
  return {status, "application/json", body.dump()};
}

HttpResponse error(int status, const std::string& message, nlohmann::json extra = nlohmann::json::object()) {
  extra["error"] = message;
  return json_response(status, extra);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : path.substr(0, path.find('?'))) {
    if (c == '/') {
      if (!current.empty()) parts.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) parts.push_back(std::move(current));
  return parts;
}

std::string png_b64(const torch::Tensor& image) { return base64_encode(encode_png(image.to(torch::kFloat32))); }

torch::Tensor to_model_resolution(const torch::Tensor& image, int resolution) {
  if (image.size(1) != image.size(2)) throw std::invalid_argument("image must be square");
  return resize_images(image.unsqueeze(0), resolution)[0];
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(body);
  if (!j.is_object()) throw nlohmann::json::type_error::create(302, "request body must be a JSON object", nullptr);
  return j;
}

}  // namespace

// ---- service ---------------------------------------------------------------------------------------

EditService::EditService(std::unique_ptr<CcrModel> model, std::string checkpoint_hash, ServiceOptions options)
    : model_(std::move(model)), checkpoint_hash_(std::move(checkpoint_hash)), options_(std::move(options)) {
  if (!model_) throw std::invalid_argument("EditService needs a model");
}

EditService::~EditService() { stop(); }

std::size_t EditService::session_count() {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

std::size_t EditService::evict_expired() {
  std::lock_guard lock(sessions_mutex_);
  const auto now = now_();
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second.last_access > options_.session_ttl) {
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::string EditService::new_session_id() {
  std::lock_guard lock(sessions_mutex_);
  const auto raw = mix_seed(options_.seed, ++session_counter_,
                            static_cast<std::uint64_t>(now_().time_since_epoch().count()));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << raw;
  return os.str();
}

std::shared_ptr<Session> EditService::find(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second.last_access = now_();
  return it->second.session;
}

HttpResponse EditService::handle(const std::string& method, const std::string& path, const std::string& body) {
  evict_expired();
  const auto parts = split_path(path);
  try {
    if (method == "OPTIONS") return {204, "text/plain", ""};
    if (parts.size() == 1 && parts[0] == "healthz") {
      if (method != "GET") return error(405, "method not allowed");
      return healthz();
    }
    if (parts.empty() || parts[0] != "sessions") return error(404, "no route for " + path);
    if (parts.size() == 1) {
      if (method != "POST") return error(405, "method not allowed");
      return create_session(body);
    }
    auto session = find(parts[1]);
    if (!session) return error(404, "unknown session '" + parts[1] + "'");
    std::lock_guard lock(session->mutex());
    if (parts.size() == 3 && parts[2] == "edits" && method == "POST") return push_edit(*session, body);
    if (parts.size() == 3 && parts[2] == "undo" && method == "POST") return undo(*session);
    if (parts.size() == 3 && parts[2] == "trace" && method == "GET") return trace(*session);
    if (parts.size() == 3 && parts[2] == "whatif" && method == "POST") return whatif(*session, body);
    if (parts.size() == 4 && parts[2] == "stages" && method == "GET") {
      const auto& name = parts[3];
      const auto dot = name.find(".png");
      std::size_t consumed = 0;
      std::size_t k = 0;
      try {
        k = std::stoul(name.substr(0, dot), &consumed);
      } catch (const std::exception&) {
        return error(404, "bad stage '" + name + "'");
      }
      if (dot == std::string::npos || consumed != dot) return error(404, "bad stage '" + name + "'");
      return stage_png(*session, k);
    }
    return error(404, "no route for " + method + " " + path);
  } catch (const nlohmann::json::exception& e) {
    return error(400, std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpResponse EditService::healthz() const {
  return json_response(200, {{"status", "ok"},
                             {"checkpoint_hash", checkpoint_hash_},
                             {"registry", model_->registry().to_json()}});
}

HttpResponse EditService::create_session(const std::string& body) {
  const auto j = parse_body(body);
  const bool has_image = j.contains("image");
  const bool has_sample = j.contains("sample");
  if (has_image == has_sample) return error(400, "give exactly one of 'image' or 'sample'");
  const int res = model_->config().resolution;
  torch::Tensor source;
  std::optional<AttributeLabel> known;
  try {
    if (has_image) {
      source = to_model_resolution(decode_png(base64_decode(j.at("image").get<std::string>())), res);
    } else {
      const auto spec = FaceSpec::from_json(j.at("sample"));
      source = to_model_resolution(render_face(spec, 64), res);
      known = spec.label(model_->registry());
    }
  } catch (const nlohmann::json::exception&) {
    throw;
  } catch (const std::exception& e) {
    return error(400, e.what());
  }
  const auto id = new_session_id();
  auto session = queue_.run([&] { return std::make_shared<Session>(id, source, *model_, known); });
  const auto& head = session->trace().head();
  {
    std::lock_guard lock(sessions_mutex_);
    const auto now = now_();
    sessions_[id] = Entry{session, now, now};
  }
  return json_response(201, {{"session_id", id},
                             {"labels", head.symbolic.bits},
                             {"predicted_bits", head.predicted.bits},
                             {"bit_names", model_->registry().bit_names()},
                             {"preview", png_b64(head.image)}});
}

HttpResponse EditService::push_edit(Session& session, const std::string& body) {
  const auto j = parse_body(body);
  if (!j.contains("token") || !j.at("token").is_string()) return error(422, "body needs a string 'token'");
  const auto token = j.at("token").get<std::string>();
  EditStep step;
  try {
    step = parse_step(token, model_->registry());
  } catch (const ParseError& e) {
    return error(422, e.what(), {{"position", e.column()}});
  } catch (const UnknownAttributeError& e) {
    return error(422, e.what(), {{"position", 1}});
  }
  ApplyOptions opts;
  opts.reference_dir = options_.reference_dir;
  opts.fresh_seed = options_.seed;
  try {
    return queue_.run([&] {
      const auto& stage = session.push_edit(step, opts);
      const auto cont = session.continuity();
      return json_response(200, {{"stage_index", session.trace().size() - 1},
                                 {"image", png_b64(stage.image)},
                                 {"predicted_bits", stage.predicted.bits},
                                 {"symbolic_bits", stage.symbolic.bits},
                                 {"provenance", stage.provenance},
                                 {"continuity_ok", cont.ok()},
                                 {"continuity", cont.to_json()}});
    });
  } catch (const EditError& e) {
    return error(422, e.what());
  }
}

HttpResponse EditService::undo(Session& session) {
  try {
    return queue_.run([&] {
      const auto r = session.undo();
      return json_response(200, {{"stage_index", r.stage_index},
                                 {"image", png_b64(r.image)},
                                 {"cached_image", png_b64(r.cached)},
                                 {"predicted_bits", r.predicted.bits},
                                 {"reversal_error", r.reversal_error}});
    });
  } catch (const EditError& e) {
    return error(409, e.what());
  }
}

HttpResponse EditService::trace(Session& session) {
  const std::string prefix = "/sessions/" + session.id() + "/stages/";
  auto j = session.trace().to_json(model_->registry(), prefix);
  for (auto& stage : j["stages"]) stage["image_url"] = stage.at("image");
  j["session_id"] = session.id();
  j["continuity"] = session.continuity().to_json();
  return json_response(200, j);
}

HttpResponse EditService::stage_png(Session& session, std::size_t stage) {
  if (stage >= session.trace().size()) return error(404, "no stage " + std::to_string(stage));
  return {200, "image/png", encode_png(session.trace().stages[stage].image.to(torch::kFloat32))};
}

HttpResponse EditService::whatif(Session& session, const std::string& body) {
  const auto j = parse_body(body);
  const auto steps = session.trace().size() - 1;
  if (!j.contains("order") || !j.at("order").is_array()) return error(422, "body needs an 'order' array");
  std::vector<std::size_t> order;
  for (const auto& v : j.at("order")) {
    if (!v.is_number_integer() || v.get<long long>() < 0) return error(422, "order entries must be step indices");
    order.push_back(v.get<std::size_t>());
  }
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  bool permutation = sorted.size() == steps;
  for (std::size_t i = 0; permutation && i < sorted.size(); ++i) permutation = sorted[i] == i;
  if (!permutation)
    return error(422, "order must be a permutation of the " + std::to_string(steps) + " applied steps");
  try {
    return queue_.run([&] {
      const auto report = session.whatif(order);
      auto out = report.to_json();
      out["order"] = order;
      out["final_a"] = png_b64(report.trace_a.final_stage().image);
      out["final_b"] = png_b64(report.trace_b.final_stage().image);
      return json_response(200, out);
    });
  } catch (const EditError& e) {
    return error(422, e.what());
  }
}

// ---- transport -------------------------------------------------------------------------------------

int EditService::bind() {
  server_ = std::make_unique<httplib::Server>();
  server_->set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->Get(".*", forward);
  server_->Post(".*", forward);
  server_->Options(".*", forward);
  if (options_.port == 0) return server_->bind_to_any_port(options_.host);
  return server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
}

void EditService::serve() {
  if (server_) server_->listen_after_bind();
}

bool EditService::listen() {
  if (bind() < 0) return false;
  serve();
  return true;
}

void EditService::stop() {
  if (server_) server_->stop();
}

}  // namespace ccr
