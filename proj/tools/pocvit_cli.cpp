// pocvit: dataset synthesis, preprocessing, training, evaluation and
// complexity reporting for the dual-trait POC-ViT pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pocvit/complexity.hpp"
#include "pocvit/data_synth.hpp"
#include "pocvit/evaluation.hpp"
#include "pocvit/image_io.hpp"
#include "pocvit/model.hpp"
#include "pocvit/preprocess.hpp"
#include "pocvit/training.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void apply_thread_cap() {
  if (const char* env = std::getenv("POCVIT_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) openblas_set_num_threads(n);
  }
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_stamp(const std::string& out_dir, const std::string& subcommand,
                 const json& config) {
  json stamp;
  stamp["tool"] = "pocvit";
  stamp["version"] = kVersion;
  stamp["subcommand"] = subcommand;
  stamp["config"] = config;
  stamp["config_hash"] = fnv1a(config.dump());
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "run_stamp.json");
  out << stamp.dump(2) << "\n";
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok)
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

// Validates the config file against the documented schema before any output
// is produced.
std::pair<pocvit::ModelConfig, pocvit::TrainConfig> load_config(const std::string& path,
                                                                json* raw = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path);
  json j = json::parse(in);
  check_keys(j, {"model", "train"}, "top level");
  if (!j.contains("model")) throw std::invalid_argument("config: missing \"model\" object");
  check_keys(j["model"],
             {"image_size", "patch_size", "embed_dim", "n_blocks", "n_heads", "mlp_hidden",
              "n_classes", "share_vq_weights", "seed"},
             "model");
  pocvit::ModelConfig mc = j["model"].get<pocvit::ModelConfig>();
  mc.validate();
  pocvit::TrainConfig tc;
  if (j.contains("train")) {
    check_keys(j["train"],
               {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps_opt", "seed",
                "preprocess"},
               "train");
    tc = j["train"].get<pocvit::TrainConfig>();
    tc.validate();
  }
  if (raw) *raw = j;
  return {mc, tc};
}

int cmd_synth(int subjects, int frames, uint64_t seed, const std::string& out,
              int size) {
  auto man = pocvit::build_dataset(subjects, frames, seed, out, size);
  json cfg = {{"subjects", subjects}, {"frames", frames}, {"seed", seed}, {"size", size}};
  write_stamp(out, "synth", cfg);
  std::cout << "wrote " << man.entries.size() << " frame pairs under " << out << "\n";
  return 0;
}

int cmd_preprocess(const std::string& in_dir, const std::string& out_dir, bool sidecar) {
  if (!fs::is_directory(in_dir))
    throw std::invalid_argument("preprocess: input directory not found: " + in_dir);
  fs::create_directories(out_dir);
  size_t count = 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in_dir))
    if (e.is_regular_file()) {
      auto ext = e.path().extension().string();
      if (ext == ".pgm" || ext == ".png" || ext == ".PGM" || ext == ".PNG")
        files.push_back(e.path());
    }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    pocvit::GrayImage img = pocvit::read_image(p.string());
    auto [enhanced, params] = pocvit::tan_triggs_pipeline(img);
    fs::path rel = fs::relative(p, in_dir);
    fs::path out = fs::path(out_dir) / rel;
    out.replace_extension(".pgm");
    fs::create_directories(out.parent_path());
    pocvit::write_pgm(out.string(), enhanced);
    if (sidecar) {
      json pj = {{"gamma", params.gamma}, {"sigma0", params.sigma0},
                 {"sigma1", params.sigma1}, {"tau", params.tau},
                 {"epsilon", params.epsilon}};
      std::ofstream sf(out.string() + ".json");
      sf << pj.dump(2) << "\n";
    }
    ++count;
  }
  std::cout << "preprocessed " << count << " images into " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, bool resume) {
  json raw;
  auto [mc, tc] = load_config(config_path, &raw);
  auto man = pocvit::load_manifest(data_path);
  write_stamp(out_dir, "train", raw);

  pocvit::PocVitModel model = pocvit::make_model(mc);
  pocvit::AdamOptimizer opt(tc.learning_rate, tc.beta1, tc.beta2, tc.eps_opt);
  int start_epoch = 0;
  if (resume) {
    std::string base = (fs::path(out_dir) / "checkpoint_last").string();
    auto archive = pocvit::load_archive(base);
    pocvit::load_model_params(model, archive);
    opt.load_state(archive, model.named_params());
    start_epoch = static_cast<int>(archive.at("meta.next_epoch").item());
    std::cout << "resuming at epoch " << start_epoch << "\n";
  } else {
    pocvit::init_xavier(model, mc.seed);
  }
  auto res = pocvit::train_loop(model, man, tc, out_dir, &opt, start_epoch);
  std::cout << "best validation accuracy " << res.best_val_acc << "% at epoch "
            << res.best_epoch << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& out_dir, bool preprocess, const std::string& scoring) {
  auto man = pocvit::load_manifest(data_path);
  pocvit::PocVitModel model = pocvit::load_checkpoint(checkpoint);
  write_stamp(out_dir, "eval",
              json{{"checkpoint", checkpoint}, {"scoring", scoring}, {"preprocess", preprocess}});
  auto train = pocvit::load_split(man, "train", preprocess);
  auto test = pocvit::load_split(man, "test", preprocess);

  pocvit::MetricsReport rep;
  rep.accuracy = pocvit::classification_accuracy(model, test);
  pocvit::ScoreSet scores;
  if (scoring == "softmax") {
    std::vector<int> ids;
    for (int s = 0; s < man.n_subjects; ++s) ids.push_back(s);
    scores = pocvit::score_probes_softmax(model, ids, test);
  } else {
    auto templates = pocvit::enroll_templates(model, train);
    scores = pocvit::score_probes(model, templates, test);
  }
  rep.det_points = pocvit::far_frr_curves(scores);
  auto eer = pocvit::compute_eer(rep.det_points);
  rep.eer = eer.eer;
  rep.threshold_at_eer = eer.threshold;
  rep.eer_degenerate = eer.degenerate;
  auto tar = pocvit::tar_at_far(rep.det_points);
  rep.tar_at_far_0p1 = tar.tar;
  rep.tar_degenerate = tar.degenerate;

  pocvit::write_metrics_json((fs::path(out_dir) / "metrics.json").string(), rep);
  pocvit::write_det_csv((fs::path(out_dir) / "det_curve.csv").string(), rep.det_points);
  std::cout << "accuracy " << rep.accuracy << "%  EER " << rep.eer << "%  TAR@FAR=0.1% "
            << rep.tar_at_far_0p1 << "%\n";
  return 0;
}

int cmd_flops(const std::string& config_path, bool as_json) {
  auto [mc, tc] = load_config(config_path);
  (void)tc;
  if (as_json)
    std::cout << pocvit::complexity_json(mc).dump(2) << "\n";
  else
    std::cout << pocvit::complexity_table(mc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"POC-ViT dual-trait biometric pipeline"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dual-trait dataset");
  int subjects = 20, frames = 25, size = 64;
  uint64_t seed = 0;
  std::string out_dir = "data";
  synth->add_option("--subjects", subjects, "number of identities");
  synth->add_option("--frames", frames, "frames per identity");
  synth->add_option("--seed", seed, "dataset seed");
  synth->add_option("--size", size, "image size in pixels");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* prep = app.add_subcommand("preprocess", "adaptive Tan-Triggs over a directory");
  std::string in_dir, prep_out;
  bool sidecar = false;
  prep->add_option("--in", in_dir, "input directory")->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_flag("--sidecar", sidecar, "write JSON sidecars with chosen parameters");

  auto* train = app.add_subcommand("train", "train a POC-ViT model");
  std::string config_path, data_path, train_out;
  bool resume = false;
  train->add_option("--config", config_path, "JSON config (model + train)")->required();
  train->add_option("--data", data_path, "dataset manifest.json")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_flag("--resume", resume, "resume from checkpoint_last in --out");

  auto* eval = app.add_subcommand("eval", "verification metrics for a checkpoint");
  std::string checkpoint, eval_data, eval_out, scoring = "template";
  bool eval_prep = false;
  eval->add_option("--checkpoint", checkpoint, "checkpoint base path (no extension)")->required();
  eval->add_option("--data", eval_data, "dataset manifest.json")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--scoring", scoring, "template|softmax")
      ->check(CLI::IsMember({"template", "softmax"}));
  eval->add_flag("--preprocess", eval_prep, "apply adaptive Tan-Triggs before inference");

  auto* flops = app.add_subcommand("flops", "parameter and FLOPs accounting");
  std::string flops_config;
  bool flops_json = false;
  flops->add_option("--config", flops_config, "JSON config")->required();
  flops->add_flag("--json", flops_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 1 : 0;
  }

  try {
    if (*synth) return cmd_synth(subjects, frames, seed, out_dir, size);
    if (*prep) return cmd_preprocess(in_dir, prep_out, sidecar);
    if (*train) return cmd_train(config_path, data_path, train_out, resume);
    if (*eval) return cmd_eval(checkpoint, eval_data, eval_out, eval_prep, scoring);
    if (*flops) return cmd_flops(flops_config, flops_json);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
