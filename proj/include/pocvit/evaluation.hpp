#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pocvit/model.hpp"
#include "pocvit/training.hpp"

namespace pocvit {

// Labeled genuine/impostor similarity scores.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct CurvePoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of impostor scores >= threshold
  double frr = 0.0;  // fraction of genuine scores < threshold
};

struct MetricsReport {
  double accuracy = 0.0;          // percent
  double eer = 0.0;               // percent
  double tar_at_far_0p1 = 0.0;    // percent
  double threshold_at_eer = 0.0;
  bool eer_degenerate = false;    // no FAR/FRR sign change observed
  bool tar_degenerate = false;    // FAR never reached the target
  std::vector<CurvePoint> det_points;
};

inline double classification_accuracy(const PocVitModel& model,
                                      const std::vector<LoadedSample>& split) {
  return accuracy_percent(model, split);
}

inline std::vector<double> extract_features(const PocVitModel& model, const LoadedSample& s) {
  return poc_vit_forward(s.forehead, s.periocular, model).features.data();
}

// Per-subject template: L2-normalized mean feature over the subject's
// training frames.
inline std::map<int, std::vector<double>> enroll_templates(
    const PocVitModel& model, const std::vector<LoadedSample>& train_split) {
  std::map<int, std::vector<double>> sums;
  std::map<int, int> counts;
  for (const auto& s : train_split) {
    auto f = extract_features(model, s);
    auto& acc = sums[s.label];
    if (acc.empty()) acc.assign(f.size(), 0.0);
    for (size_t i = 0; i < f.size(); ++i) acc[i] += f[i];
    counts[s.label]++;
  }
  for (auto& [id, t] : sums) {
    double norm = 0.0;
    for (double v : t) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& v : t) v /= norm;
  }
  return sums;
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double d = std::sqrt(na) * std::sqrt(nb);
  return d > 0 ? dot / d : 0.0;
}

// Cosine similarity of every test frame against every enrolled template;
// own-subject scores are genuine, the rest impostor.
inline ScoreSet score_probes(const PocVitModel& model,
                             const std::map<int, std::vector<double>>& templates,
                             const std::vector<LoadedSample>& test_split) {
  ScoreSet out;
  for (const auto& s : test_split) {
    if (!templates.count(s.label))
      throw std::invalid_argument("score_probes: no template for subject " +
                                  std::to_string(s.label));
    auto f = extract_features(model, s);
    for (const auto& [id, t] : templates) {
      double score = cosine_similarity(f, t);
      (id == s.label ? out.genuine : out.impostor).push_back(score);
    }
  }
  return out;
}

// Alternative scoring route: the model's softmax probability of each
// enrolled subject, instead of template cosines.
inline ScoreSet score_probes_softmax(const PocVitModel& model,
                                     const std::vector<int>& subject_ids,
                                     const std::vector<LoadedSample>& test_split) {
  ScoreSet out;
  for (const auto& s : test_split) {
    ForwardResult r = poc_vit_forward(s.forehead, s.periocular, model);
    const auto& lg = r.logits.data();
    double mx = *std::max_element(lg.begin(), lg.end());
    double sum = 0.0;
    std::vector<double> p(lg.size());
    for (size_t i = 0; i < lg.size(); ++i) {
      p[i] = std::exp(lg[i] - mx);
      sum += p[i];
    }
    for (int id : subject_ids)
      (id == s.label ? out.genuine : out.impostor).push_back(p[id] / sum);
  }
  return out;
}

// Threshold sweep over the observed score range. FAR is non-increasing and
// FRR non-decreasing in the threshold; ties count as accept (>=).
inline std::vector<CurvePoint> far_frr_curves(const ScoreSet& s, int n_thresholds = 2001) {
  if (s.genuine.empty() || s.impostor.empty())
    throw std::invalid_argument("far_frr_curves: both score lists must be nonempty");
  if (n_thresholds < 2) throw std::invalid_argument("far_frr_curves: need >= 2 thresholds");
  double lo = 1e300, hi = -1e300;
  for (double v : s.genuine) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : s.impostor) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> gen = s.genuine, imp = s.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<CurvePoint> curve(n_thresholds);
  for (int i = 0; i < n_thresholds; ++i) {
    double t = lo + (hi - lo) * i / static_cast<double>(n_thresholds - 1);
    // impostor >= t
    auto it = std::lower_bound(imp.begin(), imp.end(), t);
    double far = static_cast<double>(imp.end() - it) / imp.size();
    // genuine < t
    auto gt = std::lower_bound(gen.begin(), gen.end(), t);
    double frr = static_cast<double>(gt - gen.begin()) / gen.size();
    curve[i] = {t, far, frr};
  }
  return curve;
}

struct EerResult {
  double eer = 0.0;  // percent
  double threshold = 0.0;
  bool degenerate = false;
};

// Linear interpolation between the consecutive thresholds where FAR-FRR
// changes sign.
inline EerResult compute_eer(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) throw std::invalid_argument("compute_eer: empty curve");
  for (size_t i = 0; i + 1 < curve.size(); ++i) {
    double d0 = curve[i].far - curve[i].frr;
    double d1 = curve[i + 1].far - curve[i + 1].frr;
    if (d0 == 0.0) return {100.0 * curve[i].far, curve[i].threshold, false};
    if ((d0 > 0.0) != (d1 > 0.0)) {
      double alpha = d0 / (d0 - d1);
      double eer = curve[i].far + alpha * (curve[i + 1].far - curve[i].far);
      double thr = curve[i].threshold + alpha * (curve[i + 1].threshold - curve[i].threshold);
      return {100.0 * eer, thr, false};
    }
  }
  // no crossing: report the best achievable max(FAR, FRR) endpoint
  double best = 1.0, thr = curve.front().threshold;
  for (const auto& p : curve) {
    double m = std::max(p.far, p.frr);
    if (m < best) {
      best = m;
      thr = p.threshold;
    }
  }
  return {100.0 * best, thr, true};
}

struct TarResult {
  double tar = 0.0;  // percent
  bool degenerate = false;
};

// TAR = 100 - FRR at the largest threshold keeping FAR <= far_target
// (percent), interpolated between curve points.
inline TarResult tar_at_far(const std::vector<CurvePoint>& curve, double far_target_pct = 0.1) {
  if (curve.empty()) throw std::invalid_argument("tar_at_far: empty curve");
  double target = far_target_pct / 100.0;
  // FAR is non-increasing in threshold: find the first index with FAR <= target
  size_t idx = curve.size();
  for (size_t i = 0; i < curve.size(); ++i)
    if (curve[i].far <= target) {
      idx = i;
      break;
    }
  if (idx == curve.size()) return {0.0, true};
  if (idx == 0) return {100.0 * (1.0 - curve[0].frr), false};
  const auto& a = curve[idx - 1];  // far > target
  const auto& b = curve[idx];      // far <= target
  double frr;
  if (a.far == b.far) {
    frr = b.frr;
  } else {
    double alpha = (a.far - target) / (a.far - b.far);
    frr = a.frr + alpha * (b.frr - a.frr);
  }
  return {100.0 * (1.0 - frr), false};
}

inline MetricsReport evaluate_model(const PocVitModel& model,
                                    const std::vector<LoadedSample>& train_split,
                                    const std::vector<LoadedSample>& test_split,
                                    int n_thresholds = 2001) {
  MetricsReport rep;
  rep.accuracy = classification_accuracy(model, test_split);
  auto templates = enroll_templates(model, train_split);
  ScoreSet scores = score_probes(model, templates, test_split);
  rep.det_points = far_frr_curves(scores, n_thresholds);
  EerResult eer = compute_eer(rep.det_points);
  rep.eer = eer.eer;
  rep.threshold_at_eer = eer.threshold;
  rep.eer_degenerate = eer.degenerate;
  TarResult tar = tar_at_far(rep.det_points, 0.1);
  rep.tar_at_far_0p1 = tar.tar;
  rep.tar_degenerate = tar.degenerate;
  return rep;
}

inline void write_metrics_json(const std::string& path, const MetricsReport& rep) {
  nlohmann::json j;
  j["accuracy_percent"] = rep.accuracy;
  j["eer_percent"] = rep.eer;
  j["tar_at_far_0.1pct_percent"] = rep.tar_at_far_0p1;
  j["threshold_at_eer"] = rep.threshold_at_eer;
  j["eer_degenerate"] = rep.eer_degenerate;
  j["tar_degenerate"] = rep.tar_degenerate;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline void write_det_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "threshold,far,frr\n";
  char line[96];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g\n", p.threshold, p.far, p.frr);
    out << line;
  }
}

}  // namespace pocvit
