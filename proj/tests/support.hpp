#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>
#include <unistd.h>

#include "ccr/model.hpp"
#include "ccr/registry.hpp"

namespace ccr::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ccr") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline torch::Generator gen(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

inline torch::Tensor random_images(std::int64_t n, int r, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto g = gen(seed);
  return torch::rand({n, 3, r, r}, g, torch::TensorOptions().dtype(dtype));
}

inline CcrModel tiny_model(std::uint64_t seed = 0, torch::Dtype dtype = torch::kFloat32,
                           const DomainRegistry& registry = DomainRegistry::standard()) {
  CcrModel m(ModelConfig::tiny(), registry, seed);
  m.to(dtype);
  return m;
}

/// Four domains so that a three-step path always leaves one translator off the path.
inline DomainRegistry four_domain_registry() {
  return DomainRegistry({{"hair_color", {"black", "blond", "brown"}, true, "_hair"},
                         {"bangs", {"bangs"}, false, ""},
                         {"glasses", {"glasses"}, false, ""},
                         {"beard", {"beard"}, false, ""}});
}

}  // namespace ccr::test
