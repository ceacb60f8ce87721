#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "ccr/registry.hpp"

namespace ccr {

enum class HairColor { kBlack = 0, kBlond = 1, kBrown = 2 };

struct Rgb {
  double r, g, b;
};

/// Palette colour painted over the hair region.
Rgb hair_palette(HairColor hair);

struct FaceGeometry {
  double center_dx = 0.0;  // [-0.1, 0.1]
  double center_dy = 0.0;  // [-0.1, 0.1]
  double scale_x = 1.0;    // [0.8, 1.2]
  double scale_y = 1.0;    // [0.8, 1.2]
};

/// Everything needed to render one synthetic face. Rendering is a pure function of this value.
struct FaceSpec {
  std::uint64_t identity_seed = 0;
  double skin_tone = 0.3;
  FaceGeometry geometry;
  HairColor hair = HairColor::kBlack;
  bool bangs = false;
  bool glasses = false;
  int glasses_style = 0;  // [0, 3]
  int bangs_style = 0;    // [0, 3]

  /// Ground-truth label. The registry must expose hair_color / bangs / glasses domains.
  AttributeLabel label(const DomainRegistry& registry) const;
  /// Copies the attribute part of `label` into this spec.
  void set_attributes(const AttributeLabel& label, const DomainRegistry& registry);

  void validate() const;
  nlohmann::json to_json() const;
  static FaceSpec from_json(const nlohmann::json& j);
  /// Identity-driven face: geometry, skin and styles all derive from the seed.
  static FaceSpec random_identity(std::uint64_t identity_seed);
};

/// Renders a (3, R, R) float image in [0, 1]. R must be 32, 64 or 128.
torch::Tensor render_face(const FaceSpec& spec, int resolution);

/// Pixel masks (R x R, bool) derived from the same geometry the renderer paints with.
struct FaceRegions {
  torch::Tensor hair;     // visible hair colour pixels
  torch::Tensor bangs;    // fringe area toggled by the bangs attribute
  torch::Tensor eyewear;  // rims + bridge
  int eyewear_x0 = 0, eyewear_y0 = 0, eyewear_x1 = 0, eyewear_y1 = 0;  // inclusive bounding box
};
FaceRegions face_regions(const FaceSpec& spec, int resolution);

enum class Split { kTrain, kTest };
std::string to_string(Split split);

struct DatasetRecord {
  std::string image_path;  // relative to the dataset root
  AttributeLabel label;
  int identity = 0;
  Split split = Split::kTrain;

  bool operator==(const DatasetRecord&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::filesystem::path manifest_path;
  std::vector<DatasetRecord> records;
};

inline constexpr const char* kManifestName = "labels.jsonl";

/// Writes `count` PNGs under out_dir/images plus out_dir/labels.jsonl. Label combinations are balanced,
/// four renders share an identity and ~10% of identities are held out.
DatasetManifest generate_dataset(int count, std::uint64_t seed, const DomainRegistry& registry,
                                 const std::filesystem::path& out_dir, int resolution = 64);

/// Reads and validates a manifest. expected_resolution == 0 accepts any square resolution as long as all
/// images agree.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir, const DomainRegistry& registry,
                                        int expected_resolution = 0);

/// In-memory tensors for one split of a dataset.
struct ImageSet {
  torch::Tensor images;                // (N, 3, R, R) float32
  std::vector<AttributeLabel> labels;  // N
  std::vector<int> identities;         // N
  std::size_t size() const { return labels.size(); }
};

ImageSet load_images(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records,
                     std::optional<Split> split = std::nullopt);

}  // namespace ccr
