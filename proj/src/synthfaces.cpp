#include "ccr/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <torch/torch.h>

#include "ccr/image_io.hpp"
#include "ccr/rng.hpp"

namespace ccr {

namespace {

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// Geometry shared by the renderer and the region masks. Coordinates are normalised to [0,1] with
// (u, v) = ((x + 0.5) / R, (y + 0.5) / R).
struct Layout {
  double fx, fy, rx, ry;          // face ellipse
  double hx, hy, hrx, hry, hcut;  // hair ellipse, hair stops below v > hcut
  double eye_dx, eye_y, eye_r;
  double rim_outer, rim_inner;
  bool rim_square;
  double bridge_half_h;
  int bangs_style;
  double fringe_base;
  Rgb frame;
  // Identity texture.
  Rgb bg_top, bg_bottom, eye_color;
  double tex_phase, tex_freq;

  explicit Layout(const FaceSpec& s, int resolution) {
    const auto& g = s.geometry;
    fx = 0.5 + g.center_dx;
    fy = 0.53 + g.center_dy;
    rx = 0.27 * g.scale_x;
    ry = 0.32 * g.scale_y;
    hx = fx;
    hy = fy - 0.06;
    hrx = rx * 1.28;
    hry = ry * 1.18;
    hcut = fy + 0.6 * ry;
    eye_dx = 0.45 * rx;
    eye_y = fy - 0.17 * ry;
    eye_r = 0.12 * rx;
    rim_square = s.glasses_style >= 2;
    rim_outer = 0.36 * rx;
    rim_inner = (s.glasses_style % 2 == 0 ? 0.22 : 0.14) * rx;
    bridge_half_h = std::max(0.025, 0.6 / resolution);
    static constexpr std::array<Rgb, 4> kFrames = {
        Rgb{0.05, 0.05, 0.06}, Rgb{0.28, 0.13, 0.05}, Rgb{0.05, 0.05, 0.06}, Rgb{0.32, 0.32, 0.38}};
    frame = kFrames[static_cast<std::size_t>(s.glasses_style)];
    bangs_style = s.bangs_style;
    fringe_base = fy - 0.35 * ry;

    Rng rng(s.identity_seed ^ 0xA5A5A5A5ULL);
    auto pastel = [&rng] {
      const double grey = rng.uniform(0.55, 0.9);
      return Rgb{grey + rng.uniform(-0.08, 0.08), grey + rng.uniform(-0.08, 0.08), grey + rng.uniform(-0.04, 0.1)};
    };
    bg_top = pastel();
    bg_bottom = pastel();
    eye_color = {rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.4)};
    tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    tex_freq = rng.uniform(10.0, 30.0);
  }

  static double sq(double x) { return x * x; }

  bool in_face(double u, double v) const { return sq((u - fx) / rx) + sq((v - fy) / ry) <= 1.0; }
  bool in_hair_back(double u, double v) const {
    return v <= hcut && sq((u - hx) / hrx) + sq((v - hy) / hry) <= 1.0;
  }
  double fringe(double u) const {
    const double du = u - fx;
    switch (bangs_style) {
      case 1: return fringe_base + 0.03 * std::sin(2.0 * std::numbers::pi * du / 0.12);
      case 2: return fringe_base + 0.25 * du;
      case 3: return fringe_base + 0.05 - 0.4 * std::abs(du);
      default: return fringe_base;
    }
  }
  bool in_bangs(double u, double v) const { return in_face(u, v) && v <= fringe(u); }
  double rim_distance(double u, double v, double cx) const {
    const double du = u - cx, dv = v - eye_y;
    return rim_square ? std::max(std::abs(du), std::abs(dv)) : std::sqrt(du * du + dv * dv);
  }
  bool in_eyewear(double u, double v) const {
    for (double cx : {fx - eye_dx, fx + eye_dx}) {
      const double d = rim_distance(u, v, cx);
      if (d <= rim_outer && d >= rim_inner) return true;
    }
    const double bridge_x = eye_dx - rim_outer;
    return std::abs(u - fx) <= bridge_x + 1e-9 && std::abs(v - eye_y) <= bridge_half_h;
  }
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

void check_resolution(int resolution) {
  if (resolution != 32 && resolution != 64 && resolution != 128)
    throw std::invalid_argument("unsupported resolution " + std::to_string(resolution));
}

}  // namespace

Rgb hair_palette(HairColor hair) {
  switch (hair) {
    case HairColor::kBlack: return {0.08, 0.07, 0.07};
    case HairColor::kBlond: return {0.85, 0.72, 0.35};
    case HairColor::kBrown: return {0.45, 0.28, 0.15};
  }
  throw std::invalid_argument("bad hair colour");
}

AttributeLabel FaceSpec::label(const DomainRegistry& registry) const {
  auto out = registry.empty_label();
  registry.set_state(out, registry.domain_index("hair_color"), static_cast<int>(hair));
  registry.set_state(out, registry.domain_index("bangs"), bangs ? 1 : 0);
  registry.set_state(out, registry.domain_index("glasses"), glasses ? 1 : 0);
  return out;
}

void FaceSpec::set_attributes(const AttributeLabel& label, const DomainRegistry& registry) {
  registry.validate(label);
  const int h = registry.state_of(label, registry.domain_index("hair_color"));
  if (h < 0) throw LabelError("synthetic faces always carry a hair colour");
  hair = static_cast<HairColor>(h);
  bangs = registry.state_of(label, registry.domain_index("bangs")) == 1;
  glasses = registry.state_of(label, registry.domain_index("glasses")) == 1;
}

void FaceSpec::validate() const {
  auto in = [](double x, double lo, double hi) { return x >= lo && x <= hi; };
  if (!in(skin_tone, 0, 1)) throw std::invalid_argument("skin_tone out of [0,1]");
  if (!in(geometry.center_dx, -0.1, 0.1) || !in(geometry.center_dy, -0.1, 0.1))
    throw std::invalid_argument("face centre offset out of [-0.1,0.1]");
  if (!in(geometry.scale_x, 0.8, 1.2) || !in(geometry.scale_y, 0.8, 1.2))
    throw std::invalid_argument("face scale out of [0.8,1.2]");
  if (glasses_style < 0 || glasses_style > 3) throw std::invalid_argument("glasses_style out of [0,3]");
  if (bangs_style < 0 || bangs_style > 3) throw std::invalid_argument("bangs_style out of [0,3]");
}

nlohmann::json FaceSpec::to_json() const {
  static constexpr const char* kHair[] = {"black", "blond", "brown"};
  return {{"identity_seed", identity_seed},
          {"skin_tone", skin_tone},
          {"face_geometry", {geometry.center_dx, geometry.center_dy, geometry.scale_x, geometry.scale_y}},
          {"hair", kHair[static_cast<int>(hair)]},
          {"bangs", bangs},
          {"glasses", glasses},
          {"glasses_style", glasses_style},
          {"bangs_style", bangs_style}};
}

FaceSpec FaceSpec::from_json(const nlohmann::json& j) {
  FaceSpec s = random_identity(j.value("identity_seed", std::uint64_t{0}));
  s.skin_tone = j.value("skin_tone", s.skin_tone);
  if (j.contains("face_geometry")) {
    const auto g = j.at("face_geometry").get<std::vector<double>>();
    if (g.size() != 4) throw std::invalid_argument("face_geometry needs 4 values");
    s.geometry = {g[0], g[1], g[2], g[3]};
  }
  if (j.contains("hair")) {
    const auto h = j.at("hair").get<std::string>();
    if (h == "black") s.hair = HairColor::kBlack;
    else if (h == "blond") s.hair = HairColor::kBlond;
    else if (h == "brown") s.hair = HairColor::kBrown;
    else throw std::invalid_argument("unknown hair colour '" + h + "'");
  }
  s.bangs = j.value("bangs", s.bangs);
  s.glasses = j.value("glasses", s.glasses);
  s.glasses_style = j.value("glasses_style", s.glasses_style);
  s.bangs_style = j.value("bangs_style", s.bangs_style);
  s.validate();
  return s;
}

FaceSpec FaceSpec::random_identity(std::uint64_t identity_seed) {
  Rng rng(identity_seed);
  FaceSpec s;
  s.identity_seed = identity_seed;
  s.skin_tone = rng.uniform(0.0, 1.0);
  s.geometry = {rng.uniform(-0.1, 0.1) * 0.6, rng.uniform(-0.1, 0.1) * 0.5, rng.uniform(0.85, 1.15),
                rng.uniform(0.85, 1.15)};
  s.glasses_style = rng.below(4);
  s.bangs_style = rng.below(4);
  return s;
}

torch::Tensor render_face(const FaceSpec& spec, int resolution) {
  check_resolution(resolution);
  spec.validate();
  const Layout L(spec, resolution);
  const Rgb hair = hair_palette(spec.hair);
  const Rgb skin = mix({0.98, 0.84, 0.72}, {0.55, 0.38, 0.26}, spec.skin_tone);
  const Rgb mouth{0.70, 0.25, 0.25};

  auto image = torch::empty({3, resolution, resolution}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  for (int y = 0; y < resolution; ++y) {
    const double v = (y + 0.5) / resolution;
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) / resolution;
      Rgb c = mix(L.bg_top, L.bg_bottom, v);
      if (L.in_hair_back(u, v)) {
        const double strand = 0.03 * std::sin(u * 90.0 + L.tex_phase);
        c = {hair.r + strand, hair.g + strand, hair.b + strand};
      }
      if (L.in_face(u, v)) {
        const double tex = 0.015 * std::sin(L.tex_freq * (u + 0.7 * v) + L.tex_phase);
        c = {skin.r + tex, skin.g + tex, skin.b + tex};
        const double nose = Layout::sq((u - L.fx) / (0.06 * L.rx)) + Layout::sq((v - (L.fy + 0.2 * L.ry)) / (0.12 * L.ry));
        if (nose <= 1.0) c = {skin.r * 0.85, skin.g * 0.85, skin.b * 0.85};
        const double m = Layout::sq((u - L.fx) / (0.30 * L.rx)) + Layout::sq((v - (L.fy + 0.55 * L.ry)) / (0.08 * L.ry));
        if (m <= 1.0) c = mouth;
        for (double cx : {L.fx - L.eye_dx, L.fx + L.eye_dx})
          if (Layout::sq(u - cx) + Layout::sq(v - L.eye_y) <= Layout::sq(L.eye_r)) c = L.eye_color;
        if (spec.bangs && L.in_bangs(u, v)) {
          const double strand = 0.03 * std::sin(u * 90.0 + L.tex_phase);
          c = {hair.r + strand, hair.g + strand, hair.b + strand};
        }
      }
      if (spec.glasses && L.in_eyewear(u, v)) c = L.frame;
      acc[0][y][x] = static_cast<float>(clamp01(c.r));
      acc[1][y][x] = static_cast<float>(clamp01(c.g));
      acc[2][y][x] = static_cast<float>(clamp01(c.b));
    }
  }
  return image;
}

FaceRegions face_regions(const FaceSpec& spec, int resolution) {
  check_resolution(resolution);
  const Layout L(spec, resolution);
  auto opts = torch::TensorOptions().dtype(torch::kBool);
  FaceRegions r{torch::zeros({resolution, resolution}, opts), torch::zeros({resolution, resolution}, opts),
                torch::zeros({resolution, resolution}, opts)};
  auto hair = r.hair.accessor<bool, 2>();
  auto bangs = r.bangs.accessor<bool, 2>();
  auto eyewear = r.eyewear.accessor<bool, 2>();
  r.eyewear_x0 = r.eyewear_y0 = resolution;
  r.eyewear_x1 = r.eyewear_y1 = -1;
  for (int y = 0; y < resolution; ++y) {
    const double v = (y + 0.5) / resolution;
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) / resolution;
      const bool face = L.in_face(u, v);
      bangs[y][x] = L.in_bangs(u, v);
      const bool ew = L.in_eyewear(u, v);
      eyewear[y][x] = ew;
      if (ew) {
        r.eyewear_x0 = std::min(r.eyewear_x0, x);
        r.eyewear_y0 = std::min(r.eyewear_y0, y);
        r.eyewear_x1 = std::max(r.eyewear_x1, x);
        r.eyewear_y1 = std::max(r.eyewear_y1, y);
      }
      bool h = (L.in_hair_back(u, v) && !face) || (spec.bangs && bangs[y][x]);
      if (spec.glasses && ew) h = false;
      hair[y][x] = h;
    }
  }
  return r;
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

DatasetManifest generate_dataset(int count, std::uint64_t seed, const DomainRegistry& registry,
                                 const std::filesystem::path& out_dir, int resolution) {
  if (count < 0) throw std::invalid_argument("count must be >= 0");
  check_resolution(resolution);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  constexpr int kRendersPerIdentity = 4;
  constexpr int kCombos = 12;  // 3 hair colours x bangs x glasses
  const int num_ids = (count + kRendersPerIdentity - 1) / kRendersPerIdentity;

  Rng rng(seed);
  std::vector<int> combos;
  combos.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(combos.size()) < count) {
    std::vector<int> block(kCombos);
    for (int i = 0; i < kCombos; ++i) block[static_cast<std::size_t>(i)] = i;
    rng.shuffle(block.begin(), block.end());
    for (int c : block)
      if (static_cast<int>(combos.size()) < count) combos.push_back(c);
  }
  std::vector<int> ids(static_cast<std::size_t>(num_ids));
  for (int i = 0; i < num_ids; ++i) ids[static_cast<std::size_t>(i)] = i;
  rng.shuffle(ids.begin(), ids.end());
  const int num_test = static_cast<int>(std::lround(num_ids * 0.1));
  std::vector<bool> is_test(static_cast<std::size_t>(num_ids), false);
  for (int i = 0; i < num_test; ++i) is_test[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = true;

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.manifest_path = out_dir / kManifestName;
  std::ofstream out(manifest.manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest.manifest_path.string());

  for (int k = 0; k < count; ++k) {
    const int identity = k / kRendersPerIdentity;
    FaceSpec spec = FaceSpec::random_identity(splitmix64(seed * 1000003ULL + static_cast<std::uint64_t>(identity)));
    const int c = combos[static_cast<std::size_t>(k)];
    spec.hair = static_cast<HairColor>(c % 3);
    spec.bangs = (c / 3) % 2 == 1;
    spec.glasses = c / 6 == 1;

    char name[32];
    std::snprintf(name, sizeof name, "images/%06d.png", k);
    save_png(out_dir / name, render_face(spec, resolution));

    DatasetRecord rec{name, spec.label(registry), identity,
                      is_test[static_cast<std::size_t>(identity)] ? Split::kTest : Split::kTrain};
    nlohmann::ordered_json line;
    line["file"] = rec.image_path;
    line["bits"] = rec.label.bits;
    line["identity"] = rec.identity;
    line["split"] = to_string(rec.split);
    out << line.dump() << '\n';
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir, const DomainRegistry& registry,
                                        int expected_resolution) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing manifest " + path.string());
  std::vector<DatasetRecord> records;
  std::string line;
  int resolution = expected_resolution;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto index = records.size();
    const auto j = nlohmann::json::parse(line);
    DatasetRecord rec;
    rec.image_path = j.at("file").get<std::string>();
    rec.label.bits = j.at("bits").get<std::vector<std::uint8_t>>();
    rec.identity = j.at("identity").get<int>();
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "test")
      throw std::runtime_error("record " + std::to_string(index) + ": bad split '" + split + "'");
    rec.split = split == "train" ? Split::kTrain : Split::kTest;
    try {
      registry.validate(rec.label);
    } catch (const LabelError& e) {
      throw LabelError("record " + std::to_string(index) + ": " + e.what());
    }
    const auto image_path = dir / rec.image_path;
    const auto image = load_png(image_path);
    if (image.size(1) != image.size(2))
      throw std::runtime_error("record " + std::to_string(index) + ": non-square image " + image_path.string());
    if (resolution == 0) resolution = static_cast<int>(image.size(1));
    if (image.size(1) != resolution)
      throw std::runtime_error("record " + std::to_string(index) + ": resolution mismatch in " + image_path.string() +
                               " (" + std::to_string(image.size(1)) + " vs " + std::to_string(resolution) + ")");
    records.push_back(std::move(rec));
  }
  return records;
}

ImageSet load_images(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records,
                     std::optional<Split> split) {
  ImageSet set;
  std::vector<torch::Tensor> images;
  for (const auto& rec : records) {
    if (split && rec.split != *split) continue;
    images.push_back(load_png(dir / rec.image_path));
    set.labels.push_back(rec.label);
    set.identities.push_back(rec.identity);
  }
  set.images = images.empty() ? torch::empty({0, 3, 0, 0}) : torch::stack(images);
  return set;
}

}  // namespace ccr
