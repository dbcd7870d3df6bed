#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pocvit/image.hpp"
#include "pocvit/image_io.hpp"
#include "pocvit/rng.hpp"

namespace pocvit {

// One quadratic Bezier stroke, control points in the unit square.
struct CurveSegment {
  double x0, y0, x1, y1, x2, y2;
  double width;  // pixels
  double darkness;
};

struct EllipseSpec {
  double cx, cy, rx, ry, width, darkness;
};

// Deterministic, seed-derived description of one synthetic identity.
struct SubjectSpec {
  int subject_id = 0;
  uint64_t seed = 0;
  std::vector<CurveSegment> vein_graph;       // forehead pattern, >= 6 segments
  std::vector<EllipseSpec> periocular_rings;  // eye outline + iris
  std::vector<CurveSegment> periocular_arcs;  // lid/brow strokes, >= 3
};

// Per-frame capture perturbation; models illumination and pose variability.
struct FrameParams {
  double brightness_scale = 1.0;  // in [0.6, 1.4]
  double gradient_direction = 0.0;
  double gradient_strength = 0.0;
  double noise_sigma = 0.0;
  double dx = 0.0, dy = 0.0;      // |dx|,|dy| <= 3 px
  double rotation = 0.0;          // radians, |rot| <= 3 deg
  uint64_t noise_seed = 0;
};

inline void to_json(nlohmann::json& j, const FrameParams& p) {
  j = {{"brightness_scale", p.brightness_scale},
       {"gradient_direction", p.gradient_direction},
       {"gradient_strength", p.gradient_strength},
       {"noise_sigma", p.noise_sigma},
       {"dx", p.dx},
       {"dy", p.dy},
       {"rotation", p.rotation},
       {"noise_seed", p.noise_seed}};
}

inline void from_json(const nlohmann::json& j, FrameParams& p) {
  j.at("brightness_scale").get_to(p.brightness_scale);
  j.at("gradient_direction").get_to(p.gradient_direction);
  j.at("gradient_strength").get_to(p.gradient_strength);
  j.at("noise_sigma").get_to(p.noise_sigma);
  j.at("dx").get_to(p.dx);
  j.at("dy").get_to(p.dy);
  j.at("rotation").get_to(p.rotation);
  j.at("noise_seed").get_to(p.noise_seed);
}

// Counter-based stream keyed by (dataset_seed, subject_id); generation order
// never affects content.
inline SubjectSpec generate_subject(int subject_id, uint64_t dataset_seed) {
  SubjectSpec spec;
  spec.subject_id = subject_id;
  spec.seed = Rng::mix(dataset_seed, 0x50b0a5eULL + static_cast<uint64_t>(subject_id));
  Rng rng(spec.seed);

  // Vein graph: a few trunks crossing the patch plus branches.
  int n_trunks = 3 + static_cast<int>(rng.next_below(2));
  for (int t = 0; t < n_trunks; ++t) {
    double x0 = rng.uniform(0.05, 0.3), y0 = rng.uniform(0.05, 0.95);
    double x2 = rng.uniform(0.7, 0.95), y2 = rng.uniform(0.05, 0.95);
    double x1 = rng.uniform(0.25, 0.75), y1 = rng.uniform(0.0, 1.0);
    double w = rng.uniform(1.0, 2.2);
    spec.vein_graph.push_back({x0, y0, x1, y1, x2, y2, w, rng.uniform(0.5, 0.8)});
    // two branches off each trunk
    for (int b = 0; b < 2; ++b) {
      double s = rng.uniform(0.2, 0.8);
      double bx0 = (1 - s) * (1 - s) * x0 + 2 * (1 - s) * s * x1 + s * s * x2;
      double by0 = (1 - s) * (1 - s) * y0 + 2 * (1 - s) * s * y1 + s * s * y2;
      double bx2 = std::clamp(bx0 + rng.uniform(-0.4, 0.4), 0.0, 1.0);
      double by2 = std::clamp(by0 + rng.uniform(-0.4, 0.4), 0.0, 1.0);
      double bx1 = (bx0 + bx2) / 2 + rng.uniform(-0.15, 0.15);
      double by1 = (by0 + by2) / 2 + rng.uniform(-0.15, 0.15);
      spec.vein_graph.push_back(
          {bx0, by0, bx1, by1, bx2, by2, rng.uniform(0.8, 1.6), rng.uniform(0.4, 0.7)});
    }
  }

  // Periocular: eye outline, iris ring, and brow/lid arcs.
  double cx = rng.uniform(0.42, 0.58), cy = rng.uniform(0.45, 0.6);
  spec.periocular_rings.push_back(
      {cx, cy, rng.uniform(0.22, 0.34), rng.uniform(0.1, 0.17), rng.uniform(1.2, 2.0),
       rng.uniform(0.55, 0.8)});
  spec.periocular_rings.push_back(
      {cx, cy, rng.uniform(0.05, 0.09), rng.uniform(0.05, 0.09), rng.uniform(1.5, 2.6),
       rng.uniform(0.6, 0.85)});
  int n_arcs = 3 + static_cast<int>(rng.next_below(3));
  for (int a = 0; a < n_arcs; ++a) {
    double ax0 = rng.uniform(0.1, 0.4), ay0 = rng.uniform(0.1, 0.9);
    double ax2 = rng.uniform(0.6, 0.9), ay2 = std::clamp(ay0 + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    double ax1 = (ax0 + ax2) / 2, ay1 = std::clamp(ay0 + rng.uniform(-0.3, 0.3), 0.0, 1.0);
    spec.periocular_arcs.push_back(
        {ax0, ay0, ax1, ay1, ax2, ay2, rng.uniform(1.0, 1.8), rng.uniform(0.4, 0.7)});
  }
  return spec;
}

namespace detail {

inline void stamp_point(std::vector<double>& ink, int size, double px, double py,
                        double radius, double darkness) {
  int x0 = std::max(0, static_cast<int>(std::floor(px - radius - 1)));
  int x1 = std::min(size - 1, static_cast<int>(std::ceil(px + radius + 1)));
  int y0 = std::max(0, static_cast<int>(std::floor(py - radius - 1)));
  int y1 = std::min(size - 1, static_cast<int>(std::ceil(py + radius + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d = std::hypot(x - px, y - py);
      double a = 1.0 - d / radius;  // linear falloff gives soft edges
      if (a <= 0) continue;
      double v = darkness * std::min(1.0, a * 1.5);
      double& cell = ink[static_cast<size_t>(y) * size + x];
      cell = std::max(cell, v);
    }
}

inline void stamp_curve(std::vector<double>& ink, int size, const CurveSegment& c) {
  int steps = 4 * size;
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    double u = 1.0 - t;
    double x = u * u * c.x0 + 2 * u * t * c.x1 + t * t * c.x2;
    double y = u * u * c.y0 + 2 * u * t * c.y1 + t * t * c.y2;
    stamp_point(ink, size, x * (size - 1), y * (size - 1), c.width / 2.0 + 0.5, c.darkness);
  }
}

inline void stamp_ellipse(std::vector<double>& ink, int size, const EllipseSpec& e) {
  int steps = 6 * size;
  for (int i = 0; i <= steps; ++i) {
    double a = 2.0 * 3.14159265358979323846 * i / steps;
    double x = e.cx + e.rx * std::cos(a);
    double y = e.cy + e.ry * std::sin(a);
    stamp_point(ink, size, x * (size - 1), y * (size - 1), e.width / 2.0 + 0.5, e.darkness);
  }
}

inline double sample_bilinear_clamped(const GrayImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  double fx = x - x0, fy = y - y0;
  return (1 - fx) * (1 - fy) * img.at(x0, y0) + fx * (1 - fy) * img.at(x1, y0) +
         (1 - fx) * fy * img.at(x0, y1) + fx * fy * img.at(x1, y1);
}

inline GrayImage render_pattern(const SubjectSpec& spec, bool periocular, int size,
                                const FrameParams& fp) {
  std::vector<double> ink(static_cast<size_t>(size) * size, 0.0);
  if (!periocular) {
    for (const auto& c : spec.vein_graph) stamp_curve(ink, size, c);
  } else {
    for (const auto& e : spec.periocular_rings) stamp_ellipse(ink, size, e);
    for (const auto& c : spec.periocular_arcs) stamp_curve(ink, size, c);
  }
  GrayImage canvas(size, size);
  for (size_t i = 0; i < canvas.size(); ++i) canvas.data[i] = 0.9 - 0.6 * ink[i];
  canvas = gaussian_blur(canvas, 1.2);

  // affine jitter (rotation about the center plus translation)
  GrayImage jittered(size, size);
  double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
  double cr = std::cos(-fp.rotation), sr = std::sin(-fp.rotation);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double rx = x - cx - fp.dx, ry = y - cy - fp.dy;
      jittered.at(x, y) =
          sample_bilinear_clamped(canvas, cx + cr * rx - sr * ry, cy + sr * rx + cr * ry);
    }

  // multiplicative illumination gradient + brightness, additive sensor noise
  Rng noise(Rng::mix(fp.noise_seed, periocular ? 0x9e0cULL : 0xf04eULL));
  double gx = std::cos(fp.gradient_direction), gy = std::sin(fp.gradient_direction);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double u = ((x - cx) * gx + (y - cy) * gy) / size;  // in [-0.5, 0.5] roughly
      double illum = fp.brightness_scale * (1.0 + 2.0 * fp.gradient_strength * u);
      double v = jittered.at(x, y) * illum + fp.noise_sigma * noise.normal();
      jittered.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  return jittered;
}

}  // namespace detail

// Rasterizes one frame pair (forehead, periocular) for a subject.
inline std::pair<GrayImage, GrayImage> render_frame(const SubjectSpec& spec,
                                                    const FrameParams& fp, int size) {
  return {detail::render_pattern(spec, false, size, fp),
          detail::render_pattern(spec, true, size, fp)};
}

inline FrameParams sample_frame_params(uint64_t dataset_seed, int subject_id, int frame) {
  Rng rng(Rng::mix(Rng::mix(dataset_seed, 0xf7a3eULL + subject_id), frame));
  FrameParams fp;
  fp.brightness_scale = rng.uniform(0.7, 1.3);
  fp.gradient_direction = rng.uniform(0.0, 6.283185307179586);
  fp.gradient_strength = rng.uniform(0.0, 0.3);
  fp.noise_sigma = rng.uniform(0.005, 0.02);
  fp.dx = rng.uniform(-2.0, 2.0);
  fp.dy = rng.uniform(-2.0, 2.0);
  fp.rotation = rng.uniform(-0.035, 0.035);
  fp.noise_seed = rng.next_u64();
  return fp;
}

struct ManifestEntry {
  int subject = 0;
  int frame = 0;
  std::string forehead;    // path relative to the manifest directory
  std::string periocular;
  std::string split;       // "train" | "test"
  FrameParams params;
};

struct DatasetManifest {
  uint64_t dataset_seed = 0;
  int n_subjects = 0;
  int frames_per_subject = 0;
  int image_size = 64;
  std::string root;  // directory holding the manifest, set on load
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split_entries(const std::string& split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(&e);
    return out;
  }
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"subject", e.subject}, {"frame", e.frame},     {"forehead", e.forehead},
       {"periocular", e.periocular}, {"split", e.split}, {"frame_params", e.params}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
  j.at("subject").get_to(e.subject);
  j.at("frame").get_to(e.frame);
  j.at("forehead").get_to(e.forehead);
  j.at("periocular").get_to(e.periocular);
  j.at("split").get_to(e.split);
  j.at("frame_params").get_to(e.params);
}

// Writes PGM pairs plus a JSON manifest with a seeded stratified 80/20
// split (every subject appears in both splits).
inline DatasetManifest build_dataset(int n_subjects, int frames_per_subject,
                                     uint64_t dataset_seed, const std::string& out_dir,
                                     int image_size = 64) {
  if (n_subjects <= 0 || frames_per_subject < 2)
    throw std::invalid_argument("build_dataset: need >=1 subject and >=2 frames");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  DatasetManifest man;
  man.dataset_seed = dataset_seed;
  man.n_subjects = n_subjects;
  man.frames_per_subject = frames_per_subject;
  man.image_size = image_size;
  man.root = out_dir;

  for (int s = 0; s < n_subjects; ++s) {
    SubjectSpec spec = generate_subject(s, dataset_seed);
    char sub_dir[32];
    std::snprintf(sub_dir, sizeof sub_dir, "subject_%03d", s);
    fs::create_directories(fs::path(out_dir) / sub_dir);

    // stratified split: a seeded shuffle of frame indices, last 20% to test
    std::vector<int> order(frames_per_subject);
    for (int f = 0; f < frames_per_subject; ++f) order[f] = f;
    Rng rng(Rng::mix(dataset_seed, 0x5b117ULL + s));
    for (int f = frames_per_subject - 1; f > 0; --f)
      std::swap(order[f], order[rng.next_below(static_cast<uint64_t>(f) + 1)]);
    int n_test = std::max(1, static_cast<int>(std::lround(frames_per_subject * 0.2)));
    if (n_test >= frames_per_subject) n_test = frames_per_subject - 1;
    std::vector<bool> is_test(frames_per_subject, false);
    for (int i = 0; i < n_test; ++i) is_test[order[i]] = true;

    for (int f = 0; f < frames_per_subject; ++f) {
      FrameParams fp = sample_frame_params(dataset_seed, s, f);
      auto [forehead, periocular] = render_frame(spec, fp, image_size);
      char base[64];
      std::snprintf(base, sizeof base, "%s/frame_%02d", sub_dir, f);
      ManifestEntry e;
      e.subject = s;
      e.frame = f;
      e.forehead = std::string(base) + "_forehead.pgm";
      e.periocular = std::string(base) + "_periocular.pgm";
      e.split = is_test[f] ? "test" : "train";
      e.params = fp;
      try {
        write_pgm((fs::path(out_dir) / e.forehead).string(), forehead);
        write_pgm((fs::path(out_dir) / e.periocular).string(), periocular);
      } catch (const std::exception& ex) {
        throw std::runtime_error("build_dataset: writing frame for subject " +
                                 std::to_string(s) + ": " + ex.what());
      }
      man.entries.push_back(std::move(e));
    }
  }

  nlohmann::json j;
  j["dataset_seed"] = man.dataset_seed;
  j["n_subjects"] = man.n_subjects;
  j["frames_per_subject"] = man.frames_per_subject;
  j["image_size"] = man.image_size;
  j["entries"] = man.entries;
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw std::runtime_error("build_dataset: cannot write manifest in " + out_dir);
  out << j.dump(2) << "\n";
  return man;
}

inline DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path);
  nlohmann::json j = nlohmann::json::parse(in);
  DatasetManifest man;
  j.at("dataset_seed").get_to(man.dataset_seed);
  j.at("n_subjects").get_to(man.n_subjects);
  j.at("frames_per_subject").get_to(man.frames_per_subject);
  j.at("image_size").get_to(man.image_size);
  man.entries = j.at("entries").get<std::vector<ManifestEntry>>();
  man.root = std::filesystem::path(manifest_path).parent_path().string();
  return man;
}

}  // namespace pocvit
