#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pocvit/data_synth.hpp"
#include "pocvit/training.hpp"

using namespace pocvit;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int n_classes) {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;  // 16 tokens
  c.embed_dim = 16;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.mlp_hidden = 32;
  c.n_classes = n_classes;
  c.seed = 5;
  return c;
}

PocVitModel init_model(int n_classes) {
  PocVitModel m = make_model(tiny_config(n_classes));
  init_xavier(m, m.cfg.seed);
  return m;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / (tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::pair<std::string, Tensor>> one_param(const std::string& name,
                                                      std::vector<double> values) {
  int n = static_cast<int>(values.size());
  Tensor t = Tensor::from({n}, std::move(values));
  t.set_requires_grad(true);
  return {{name, t}};
}

}  // namespace

TEST_CASE("TrainConfig validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  TrainConfig bad = tc;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tc;
  bad.beta2 = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("TrainConfig JSON round-trip and defaults") {
  TrainConfig tc;
  tc.epochs = 17;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 99;
  tc.preprocess = true;
  nlohmann::json j = tc;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(back.epochs == 17);
  CHECK(back.batch_size == 4);
  CHECK(back.learning_rate == 1e-3);
  CHECK(back.seed == 99);
  CHECK(back.preprocess == true);
  TrainConfig defaults = nlohmann::json::object().get<TrainConfig>();
  CHECK(defaults.epochs == 200);
  CHECK(defaults.learning_rate == 3e-4);
  CHECK(defaults.beta1 == 0.9);
  CHECK(defaults.beta2 == 0.999);
  CHECK(defaults.preprocess == false);
}

TEST_CASE("optimizer single step matches the hand-computed moment update") {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto params = one_param("w", {1.0, -2.0});
  Tensor w = params[0].second;
  w.grad() = {0.5, -0.25};
  AdamOptimizer opt(lr, b1, b2, eps);
  opt.step(params);
  // t=1: m = (1-b1)g, v = (1-b2)g^2; bias correction makes m_hat = g, v_hat = g^2,
  // so the first step is w -= lr * g / (|g| + eps)
  CHECK(w.data()[0] == Catch::Approx(1.0 - lr * 0.5 / (0.5 + eps)).epsilon(1e-14));
  CHECK(w.data()[1] == Catch::Approx(-2.0 + lr * 0.25 / (0.25 + eps)).epsilon(1e-14));
  CHECK(opt.step_count() == 1);

  // second step with a new gradient, against a direct two-step simulation
  w.grad() = {-0.1, 0.3};
  opt.step(params);
  double m0 = (1 - b1) * 0.5, v0 = (1 - b2) * 0.25;
  double w0 = 1.0 - lr * (m0 / (1 - b1)) / (std::sqrt(v0 / (1 - b2)) + eps);
  m0 = b1 * m0 + (1 - b1) * -0.1;
  v0 = b2 * v0 + (1 - b2) * 0.01;
  w0 -= lr * (m0 / (1 - b1 * b1)) / (std::sqrt(v0 / (1 - b2 * b2)) + eps);
  CHECK(w.data()[0] == Catch::Approx(w0).epsilon(1e-14));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto params = one_param("w", {0.3, -0.7, 2.0});
  Tensor w = params[0].second;
  AdamOptimizer opt(0.05, 0.9, 0.999, 1e-8);
  for (int i = 0; i < 10; ++i) {
    w.grad() = {0.0, 0.0, 0.0};
    opt.step(params);
  }
  CHECK(w.data()[0] == 0.3);
  CHECK(w.data()[1] == -0.7);
  CHECK(w.data()[2] == 2.0);
}

TEST_CASE("scalar quadratic descends monotonically in |w|") {
  auto params = one_param("w", {1.0});
  Tensor w = params[0].second;
  AdamOptimizer opt(0.01, 0.9, 0.999, 1e-8);
  double prev = 1.0;
  for (int i = 0; i < 100; ++i) {
    w.zero_grad();
    Tensor loss = square(w);
    loss.backward();
    opt.step(params);
    double cur = std::abs(w.data()[0]);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(prev < 0.5);
}

TEST_CASE("two identical optimizer runs are bit-identical after 10 steps") {
  auto run = [] {
    auto params = one_param("w", {0.5, -1.5, 0.25, 3.0});
    Tensor w = params[0].second;
    AdamOptimizer opt(0.02, 0.9, 0.999, 1e-8);
    Rng rng(404);
    for (int i = 0; i < 10; ++i) {
      auto& g = w.grad();
      for (double& v : g) v = rng.normal();
      opt.step(params);
      w.zero_grad();
    }
    return w.data();
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  auto params = one_param("blocks.0.attn.wq", {1.0});
  params[0].second.grad() = {std::numeric_limits<double>::quiet_NaN()};
  AdamOptimizer opt(0.01, 0.9, 0.999, 1e-8);
  CHECK_THROWS_WITH(opt.step(params), Catch::Matchers::ContainsSubstring("blocks.0.attn.wq"));
}

TEST_CASE("optimizer state round-trips through its tensor snapshot") {
  auto params = one_param("w", {1.0, 2.0});
  Tensor w = params[0].second;
  AdamOptimizer opt(0.05, 0.9, 0.999, 1e-8);
  Rng rng(7);
  auto random_grad = [&] {
    auto& g = w.grad();
    for (double& v : g) v = rng.normal();
  };
  for (int i = 0; i < 5; ++i) {
    w.zero_grad();
    random_grad();
    opt.step(params);
  }
  // snapshot, then continue two ways with identical gradients
  auto snapshot = opt.state_tensors(params);
  std::map<std::string, Tensor> archive;
  for (auto& [name, t] : snapshot) archive.emplace(name, t);
  std::vector<double> w_saved = w.data();

  std::vector<double> grads1 = {0.4, -0.9}, grads2 = {-0.2, 0.1};
  w.grad() = grads1;
  opt.step(params);
  w.zero_grad();
  w.grad() = grads2;
  opt.step(params);
  std::vector<double> uninterrupted = w.data();

  w.data() = w_saved;
  AdamOptimizer resumed(0.05, 0.9, 0.999, 1e-8);
  resumed.load_state(archive, params);
  CHECK(resumed.step_count() == 5);
  w.zero_grad();
  w.grad() = grads1;
  resumed.step(params);
  w.zero_grad();
  w.grad() = grads2;
  resumed.step(params);
  for (size_t i = 0; i < uninterrupted.size(); ++i) REQUIRE(w.data()[i] == uninterrupted[i]);
}

TEST_CASE("train_loop smoke test: one epoch on a tiny dataset logs one entry") {
  TempDir data("pocvit_train_smoke_data");
  TempDir out("pocvit_train_smoke_out");
  DatasetManifest man = build_dataset(2, 4, 11, data.path.string(), 32);
  PocVitModel model = init_model(2);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.seed = 1;
  TrainResult res = train_loop(model, man, tc, out.path.string());
  REQUIRE(res.log.size() == 1);
  CHECK(res.log[0].epoch == 0);
  CHECK(std::isfinite(res.log[0].train_loss));
  CHECK(res.log[0].train_acc >= 0.0);
  CHECK(res.log[0].val_acc >= 0.0);
  CHECK(fs::exists(out.path / "train_log.csv"));
  CHECK(fs::exists(out.path / "checkpoint_last.json"));
  CHECK(fs::exists(out.path / "checkpoint_best.json"));

  // CSV format: header plus one line per epoch
  std::ifstream csv(out.path / "train_log.csv");
  std::string header, line, extra;
  REQUIRE(std::getline(csv, header));
  CHECK(header == "epoch,train_loss,train_acc,val_acc");
  REQUIRE(std::getline(csv, line));
  int epoch;
  double loss, tracc, vacc;
  REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &epoch, &loss, &tracc, &vacc) == 4);
  CHECK(epoch == 0);
  CHECK(loss == Catch::Approx(res.log[0].train_loss));
  CHECK_FALSE(std::getline(csv, extra));
}

TEST_CASE("train_loop validates its inputs") {
  TempDir data("pocvit_train_bad_data");
  TempDir out("pocvit_train_bad_out");
  DatasetManifest man = build_dataset(2, 4, 3, data.path.string(), 64);
  PocVitModel model = init_model(2);  // expects 32x32 input
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_loop(model, man, tc, out.path.string()), std::invalid_argument);
  TrainConfig bad;
  bad.learning_rate = -1.0;
  DatasetManifest man32 = build_dataset(2, 4, 3, (out.path / "d32").string(), 32);
  CHECK_THROWS_AS(train_loop(model, man32, bad, out.path.string()), std::invalid_argument);
}

TEST_CASE("loss decreases over a short training run") {
  TempDir data("pocvit_train_desc_data");
  TempDir out("pocvit_train_desc_out");
  DatasetManifest man = build_dataset(3, 5, 17, data.path.string(), 32);
  PocVitModel model = init_model(3);
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 2;
  TrainResult res = train_loop(model, man, tc, out.path.string());
  REQUIRE(res.log.size() == 12);
  INFO("first-epoch loss " << res.log.front().train_loss << ", last-epoch loss "
                           << res.log.back().train_loss);
  CHECK(res.log.back().train_loss < res.log.front().train_loss);
  // best-checkpoint invariant: recorded best is the max over epochs so far
  double best = 0.0;
  for (const auto& e : res.log) best = std::max(best, e.val_acc);
  CHECK(res.best_val_acc == best);
}

TEST_CASE("resume from checkpoint_last replays the uninterrupted run") {
  TempDir data("pocvit_train_resume_data");
  TempDir out_a("pocvit_train_resume_a");
  TempDir out_b("pocvit_train_resume_b");
  DatasetManifest man = build_dataset(2, 5, 23, data.path.string(), 32);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.seed = 9;

  // uninterrupted 4-epoch run
  PocVitModel model_a = init_model(2);
  TrainResult full = train_loop(model_a, man, tc, out_a.path.string());

  // interrupted: 2 epochs, then resume from checkpoint_last for 2 more
  PocVitModel model_b = init_model(2);
  TrainConfig first_half = tc;
  first_half.epochs = 2;
  AdamOptimizer opt(tc.learning_rate, tc.beta1, tc.beta2, tc.eps_opt);
  TrainResult half = train_loop(model_b, man, first_half, out_b.path.string(), &opt);

  std::string ckpt = (out_b.path / "checkpoint_last").string();
  PocVitModel resumed = load_checkpoint(ckpt);
  auto archive = load_archive(ckpt);
  REQUIRE(static_cast<int>(archive.at("meta.next_epoch").item()) == 2);
  AdamOptimizer opt2(tc.learning_rate, tc.beta1, tc.beta2, tc.eps_opt);
  opt2.load_state(archive, resumed.named_params());
  TrainResult done =
      train_loop(resumed, man, tc, out_b.path.string(), &opt2, 2, half.log);

  REQUIRE(done.log.size() == full.log.size());
  for (size_t i = 0; i < full.log.size(); ++i) {
    CHECK(done.log[i].train_loss == Catch::Approx(full.log[i].train_loss).margin(1e-6));
    CHECK(done.log[i].val_acc == full.log[i].val_acc);
  }
}

TEST_CASE("two identical train_loop runs produce identical CSV logs") {
  TempDir data("pocvit_train_det_data");
  TempDir out_a("pocvit_train_det_a");
  TempDir out_b("pocvit_train_det_b");
  DatasetManifest man = build_dataset(2, 4, 29, data.path.string(), 32);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 12;
  PocVitModel ma = init_model(2);
  PocVitModel mb = init_model(2);
  train_loop(ma, man, tc, out_a.path.string());
  train_loop(mb, man, tc, out_b.path.string());
  CHECK(read_file(out_a.path / "train_log.csv") == read_file(out_b.path / "train_log.csv"));
  auto pa = ma.named_params(), pb = mb.named_params();
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto &da = pa[i].second.data(), &db = pb[i].second.data();
    for (size_t k = 0; k < da.size(); ++k) REQUIRE(da[k] == db[k]);
  }
}

TEST_CASE("checkpoint save/load restores the exact model parameters") {
  TempDir out("pocvit_train_ckpt");
  PocVitModel model = init_model(4);
  std::string base = (out.path / "ckpt").string();
  save_checkpoint(base, model, nullptr, 3);
  PocVitModel back = load_checkpoint(base);
  CHECK(back.cfg.image_size == model.cfg.image_size);
  CHECK(back.cfg.n_classes == 4);
  auto pa = model.named_params(), pb = back.named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    const auto &da = pa[i].second.data(), &db = pb[i].second.data();
    REQUIRE(da.size() == db.size());
    for (size_t k = 0; k < da.size(); ++k) REQUIRE(da[k] == db[k]);
  }
  CHECK_THROWS_AS(load_checkpoint((out.path / "missing").string()), std::runtime_error);
}

TEST_CASE("accuracy_percent rejects an empty sample set") {
  PocVitModel model = init_model(2);
  CHECK_THROWS_AS(accuracy_percent(model, {}), std::invalid_argument);
}
