#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pocvit/archive.hpp"
#include "pocvit/data_synth.hpp"
#include "pocvit/image_io.hpp"
#include "pocvit/model.hpp"
#include "pocvit/ops.hpp"
#include "pocvit/preprocess.hpp"
#include "pocvit/rng.hpp"

namespace pocvit {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  uint64_t seed = 0;
  bool preprocess = false;  // adaptive Tan-Triggs before patching

  void validate() const {
    if (epochs <= 0 || batch_size <= 0) throw std::invalid_argument("TrainConfig: counts must be positive");
    if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
       {"beta2", c.beta2},         {"eps_opt", c.eps_opt},
       {"seed", c.seed},           {"preprocess", c.preprocess}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", 200);
  c.batch_size = j.value("batch_size", 16);
  c.learning_rate = j.value("learning_rate", 3e-4);
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.eps_opt = j.value("eps_opt", 1e-8);
  c.seed = j.value("seed", uint64_t{0});
  c.preprocess = j.value("preprocess", false);
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // percent
  double val_acc = 0.0;    // percent
};

using TrainLog = std::vector<EpochStats>;

// Adaptive-moment optimizer with bias correction over the model's named
// parameter list.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::string, Tensor>>& params) {
    ++t_;
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    double c1 = 1.0 - std::pow(b1_, t_);
    double c2 = 1.0 - std::pow(b2_, t_);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor p = params[pi].second;
      auto& g = p.grad();
      auto& val = p.data();
      for (size_t i = 0; i < val.size(); ++i) {
        if (!std::isfinite(g[i]))
          throw std::runtime_error("optimizer_step: non-finite gradient in parameter " +
                                   params[pi].first);
        m_[pi][i] = b1_ * m_[pi][i] + (1.0 - b1_) * g[i];
        v_[pi][i] = b2_ * v_[pi][i] + (1.0 - b2_) * g[i] * g[i];
        val[i] -= lr_ * (m_[pi][i] / c1) / (std::sqrt(v_[pi][i] / c2) + eps_);
      }
    }
  }

  int64_t step_count() const { return t_; }

  std::vector<std::pair<std::string, Tensor>> state_tensors(
      const std::vector<std::pair<std::string, Tensor>>& params) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t pi = 0; pi < params.size(); ++pi) {
      out.emplace_back("opt." + params[pi].first + ".m",
                       Tensor::from(params[pi].second.shape(), m_[pi]));
      out.emplace_back("opt." + params[pi].first + ".v",
                       Tensor::from(params[pi].second.shape(), v_[pi]));
    }
    out.emplace_back("opt.step", Tensor::scalar(static_cast<double>(t_)));
    return out;
  }

  void load_state(const std::map<std::string, Tensor>& archive,
                  const std::vector<std::pair<std::string, Tensor>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& [name, p] : params) {
      m_.push_back(archive.at("opt." + name + ".m").data());
      v_.push_back(archive.at("opt." + name + ".v").data());
    }
    t_ = static_cast<int64_t>(archive.at("opt.step").item());
  }

 private:
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct LoadedSample {
  GrayImage forehead, periocular;
  int label = 0;
};

// Loads one split into memory, applying the preprocessing chain once here
// rather than per epoch.
inline std::vector<LoadedSample> load_split(const DatasetManifest& man,
                                            const std::string& split, bool preprocess) {
  namespace fs = std::filesystem;
  std::vector<LoadedSample> out;
  for (const auto* e : man.split_entries(split)) {
    LoadedSample s;
    s.forehead = read_image((fs::path(man.root) / e->forehead).string());
    s.periocular = read_image((fs::path(man.root) / e->periocular).string());
    if (preprocess) {
      s.forehead = tan_triggs_pipeline(s.forehead).first;
      s.periocular = tan_triggs_pipeline(s.periocular).first;
    }
    s.label = e->subject;
    out.push_back(std::move(s));
  }
  return out;
}

inline int predict_label(const PocVitModel& model, const GrayImage& fh, const GrayImage& po) {
  ForwardResult r = poc_vit_forward(fh, po, model);
  const auto& v = r.logits.data();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double accuracy_percent(const PocVitModel& model, const std::vector<LoadedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("accuracy: empty sample set");
  int hits = 0;
  for (const auto& s : samples)
    if (predict_label(model, s.forehead, s.periocular) == s.label) ++hits;
  return 100.0 * hits / static_cast<double>(samples.size());
}

inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,train_acc,val_acc\n";
  char line[128];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g\n", e.epoch, e.train_loss,
                  e.train_acc, e.val_acc);
    out << line;
  }
}

struct TrainResult {
  TrainLog log;
  double best_val_acc = 0.0;
  int best_epoch = -1;
};

inline void save_checkpoint(const std::string& base, const PocVitModel& model,
                            const AdamOptimizer* opt, int next_epoch) {
  auto tensors = model.named_params();
  if (opt) {
    auto st = opt->state_tensors(model.named_params());
    tensors.insert(tensors.end(), st.begin(), st.end());
  }
  tensors.emplace_back("meta.next_epoch", Tensor::scalar(next_epoch));
  save_archive(base, tensors, "f64");
  nlohmann::json j = model.cfg;
  std::ofstream cf(base + ".config.json");
  cf << j.dump(2) << "\n";
}

inline void load_model_params(PocVitModel& model, const std::map<std::string, Tensor>& archive) {
  for (auto& [name, t] : model.named_params()) {
    auto it = archive.find(name);
    if (it == archive.end()) throw std::runtime_error("checkpoint missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    Tensor tt = t;
    tt.data() = it->second.data();
  }
}

inline PocVitModel load_checkpoint(const std::string& base) {
  std::ifstream cf(base + ".config.json");
  if (!cf) throw std::runtime_error("cannot open " + base + ".config.json");
  ModelConfig cfg = nlohmann::json::parse(cf).get<ModelConfig>();
  PocVitModel model = make_model(cfg);
  load_model_params(model, load_archive(base));
  return model;
}

// Seeded-shuffle minibatch training with per-epoch validation and
// best-checkpoint tracking. Writes train_log.csv, checkpoint_best.* and
// checkpoint_last.* (the latter with optimizer state for exact resume) under
// out_dir. `start_epoch` > 0 continues a resumed run; epoch shuffles are
// keyed by absolute epoch index so a resumed run replays the identical
// batch schedule.
inline TrainResult train_loop(PocVitModel& model, const DatasetManifest& man,
                              const TrainConfig& tc, const std::string& out_dir,
                              AdamOptimizer* opt_in = nullptr, int start_epoch = 0,
                              TrainLog log = {}) {
  tc.validate();
  if (man.image_size != model.cfg.image_size)
    throw std::invalid_argument("train_loop: manifest image size does not match model");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  auto train = load_split(man, "train", tc.preprocess);
  auto val = load_split(man, "test", tc.preprocess);
  if (train.empty() || val.empty())
    throw std::invalid_argument("train_loop: empty split in manifest");

  AdamOptimizer local_opt(tc.learning_rate, tc.beta1, tc.beta2, tc.eps_opt);
  AdamOptimizer& opt = opt_in ? *opt_in : local_opt;
  auto params = model.named_params();
  model.set_trainable(true);

  TrainResult res;
  res.log = std::move(log);
  for (const auto& e : res.log)
    if (e.val_acc > res.best_val_acc) {
      res.best_val_acc = e.val_acc;
      res.best_epoch = e.epoch;
    }

  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(Rng::mix(tc.seed, 0xe90cULL + static_cast<uint64_t>(epoch)));
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

    double loss_sum = 0.0;
    int hits = 0;
    for (size_t b = 0; b < order.size(); b += tc.batch_size) {
      size_t bend = std::min(order.size(), b + tc.batch_size);
      model.zero_grad();
      for (size_t i = b; i < bend; ++i) {
        const auto& s = train[order[i]];
        ForwardResult r = poc_vit_forward(s.forehead, s.periocular, model);
        Tensor loss = cross_entropy_loss(r.logits, {s.label});
        double lv = loss.item();
        if (!std::isfinite(lv))
          throw std::runtime_error("train_loop: non-finite loss at epoch " +
                                   std::to_string(epoch));
        loss_sum += lv;
        const auto& lg = r.logits.data();
        if (static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin()) == s.label)
          ++hits;
        loss.backward(1.0 / static_cast<double>(bend - b));
      }
      opt.step(params);
    }

    model.set_trainable(false);
    double val_acc = accuracy_percent(model, val);
    model.set_trainable(true);

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(train.size());
    st.train_acc = 100.0 * hits / static_cast<double>(train.size());
    st.val_acc = val_acc;
    res.log.push_back(st);

    if (val_acc > res.best_val_acc) {
      res.best_val_acc = val_acc;
      res.best_epoch = epoch;
      save_checkpoint((fs::path(out_dir) / "checkpoint_best").string(), model, nullptr,
                      epoch + 1);
    }
    save_checkpoint((fs::path(out_dir) / "checkpoint_last").string(), model, &opt, epoch + 1);
    write_train_log_csv((fs::path(out_dir) / "train_log.csv").string(), res.log);
  }
  model.set_trainable(false);
  return res;
}

}  // namespace pocvit
