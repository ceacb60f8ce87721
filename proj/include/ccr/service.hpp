#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "ccr/editpath.hpp"
#include "ccr/model.hpp"

namespace httplib {
class Server;
}

namespace ccr {

inline constexpr int kDefaultServicePort = 8797;

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = kDefaultServicePort;  // 0 binds any free port
  std::chrono::seconds session_ttl{3600};
  std::string cors_origin = "*";
  std::filesystem::path reference_dir = ".";
  std::uint64_t seed = 0;
};

/// Runs jobs one at a time on a dedicated thread.
class InferenceQueue {
 public:
  InferenceQueue();
  ~InferenceQueue();
  InferenceQueue(const InferenceQueue&) = delete;
  InferenceQueue& operator=(const InferenceQueue&) = delete;

  template <class F>
  auto run(F&& fn) -> decltype(fn()) {
    using R = decltype(fn());
    auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(fn));
    auto result = task->get_future();
    push([task] { (*task)(); });
    return result.get();
  }

 private:
  void push(std::function<void()> job);
  void loop();

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// HTTP editing sessions over one loaded checkpoint. handle() is the transport-independent dispatcher;
/// listen() serves it over HTTP.
class EditService {
 public:
  using Clock = std::chrono::steady_clock;

  EditService(std::unique_ptr<CcrModel> model, std::string checkpoint_hash, ServiceOptions options = {});
  ~EditService();

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Binds and serves until stop(); returns false when the port cannot be bound.
  bool listen();
  /// Binds without serving; returns the bound port or -1. Pair with serve().
  int bind();
  void serve();
  void stop();

  std::size_t session_count();
  /// Drops sessions idle for longer than the TTL; returns how many were removed.
  std::size_t evict_expired();
  /// Overrides the clock used for TTL bookkeeping.
  void set_clock(std::function<Clock::time_point()> now) { now_ = std::move(now); }

 private:
  struct Entry {
    std::shared_ptr<Session> session;
    Clock::time_point created;
    Clock::time_point last_access;
  };

  HttpResponse create_session(const std::string& body);
  HttpResponse push_edit(Session& session, const std::string& body);
  HttpResponse undo(Session& session);
  HttpResponse trace(Session& session);
  HttpResponse stage_png(Session& session, std::size_t stage);
  HttpResponse whatif(Session& session, const std::string& body);
  HttpResponse healthz() const;
  std::shared_ptr<Session> find(const std::string& id);
  std::string new_session_id();

  std::unique_ptr<CcrModel> model_;
  std::string checkpoint_hash_;
  ServiceOptions options_;
  InferenceQueue queue_;
  std::mutex sessions_mutex_;
  std::map<std::string, Entry> sessions_;
  std::uint64_t session_counter_ = 0;
  std::function<Clock::time_point()> now_ = [] { return Clock::now(); };
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace ccr
