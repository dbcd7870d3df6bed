#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <string>

#include "pocvit/complexity.hpp"
#include "pocvit/model.hpp"

using namespace pocvit;

namespace {

// image 4, patch 2: 4 tokens of patch_dim 4, d=4, 2 heads (head_dim 2,
// kernel length 2), 1 block, mlp 8, 2 classes -- small enough to enumerate
// every parameter and operation by hand
ModelConfig enum_config() {
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.embed_dim = 4;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.mlp_hidden = 8;
  c.n_classes = 2;
  return c;
}

uint64_t layer_params(const ComplexityReport& rep, const std::string& name) {
  for (const auto& l : rep.per_layer)
    if (l.name == name) return l.params;
  FAIL("no layer named " << name);
  return 0;
}

uint64_t layer_flops(const ComplexityReport& rep, const std::string& name) {
  for (const auto& l : rep.per_layer)
    if (l.name == name) return l.flops;
  FAIL("no layer named " << name);
  return 0;
}

uint64_t instantiated_param_count(const ModelConfig& cfg) {
  PocVitModel m = make_model(cfg);
  uint64_t total = 0;
  for (const auto& [name, t] : m.named_params()) total += t.size();
  return total;
}

}  // namespace

TEST_CASE("hand-enumerated parameter count on the tiny config") {
  ComplexityReport rep = count_params(enum_config());
  // patch embedding per channel: 4x4 weight + 4 bias = 20
  CHECK(layer_params(rep, "embed0") == 20);
  CHECK(layer_params(rep, "embed1") == 20);
  // attention per channel: 3 conv sets per head (V, Q, K), 2 heads;
  // each set is a [2, 4, 2] kernel + 2 biases = 18; 6 * 18 = 108
  CHECK(layer_params(rep, "block0.ch0.attention") == 108);
  CHECK(layer_params(rep, "block0.ch1.attention") == 108);
  // two layer norms, gain + bias of width 4 each: 16
  CHECK(layer_params(rep, "block0.ch0.layernorms") == 16);
  // mlp: 4x8 + 8 + 8x4 + 4 = 76
  CHECK(layer_params(rep, "block0.ch0.mlp") == 76);
  // pooling has no parameters
  CHECK(layer_params(rep, "pooling") == 0);
  // classifier: 8x4 + 4 + 1 (prelu) + 4x2 + 2 = 47
  CHECK(layer_params(rep, "classifier") == 47);
  // grand total: 2*20 + 2*(108 + 16 + 76) + 0 + 47 = 487
  CHECK(rep.total_params == 487);
}

TEST_CASE("hand-enumerated FLOP count on the tiny config") {
  ComplexityReport rep = count_flops(enum_config());
  // embedding: 4 tokens x (4x4 matmul at 2 FLOPs/MAC = 32, bias add 4) = 144
  CHECK(layer_flops(rep, "embed0") == 144);
  // attention, one channel:
  //   convs: 6 sets x (2*4*4*2*2 MAC-FLOPs + 4*2 bias) = 6 * 136 = 816
  //   ffts: 2 heads x 3 transforms x 2 columns x 5*4*log2(4) = 480
  //   phase normalization: 12 * 4 tokens * 4 dims = 192
  //   softmax gate: 5*16 + 16 = 96
  CHECK(layer_flops(rep, "block0.ch0.attention") == 816 + 480 + 192 + 96);
  // layer norms: 2 x (residual add 16 + 8 FLOPs/element * 16) = 288
  CHECK(layer_flops(rep, "block0.ch0.layernorms") == 288);
  // mlp: 2*4*4*8 + 32 bias + 10*32 gelu + 2*4*8*4 + 16 bias = 880
  CHECK(layer_flops(rep, "block0.ch0.mlp") == 880);
  // pooling: mean over 4 tokens for both channels = 2*4*4
  CHECK(layer_flops(rep, "pooling") == 32);
  // classifier: 2*8*4 matmul + 4 bias + 4 prelu + 2*4*2 matmul + 2 bias = 90
  CHECK(layer_flops(rep, "classifier") == 90);
  CHECK(rep.total_flops == 2 * 144 + 2 * (1584 + 288 + 880) + 32 + 90);
}

TEST_CASE("totals equal the sum of per-layer rows exactly") {
  for (ModelConfig cfg : {enum_config(), desk_config(), full_scale_config()}) {
    ComplexityReport rep = complexity_report(cfg);
    uint64_t p = 0, f = 0;
    for (const auto& l : rep.per_layer) {
      p += l.params;
      f += l.flops;
    }
    CHECK(rep.total_params == p);
    CHECK(rep.total_flops == f);
  }
}

TEST_CASE("params and FLOPs are linear in depth") {
  ModelConfig one = enum_config();
  ModelConfig two = one, four = one;
  two.n_blocks = 2;
  four.n_blocks = 4;
  ComplexityReport r1 = complexity_report(one);
  ComplexityReport r2 = complexity_report(two);
  ComplexityReport r4 = complexity_report(four);
  uint64_t dp = r2.total_params - r1.total_params;
  uint64_t df = r2.total_flops - r1.total_flops;
  CHECK(dp == 2 * (108 + 16 + 76));  // one more block, both channels
  CHECK(r4.total_params == r1.total_params + 3 * dp);
  CHECK(r4.total_flops == r1.total_flops + 3 * df);
}

TEST_CASE("shared V/Q weights drop one conv set per head") {
  ModelConfig cfg = enum_config();
  ModelConfig shared = cfg;
  shared.share_vq_weights = true;
  uint64_t delta = count_params(cfg).total_params - count_params(shared).total_params;
  // per block, per channel, per head: one [2,4,2] kernel + 2 biases = 18
  CHECK(delta == uint64_t{1} * 2 * 2 * 18);
  CHECK(instantiated_param_count(shared) == count_params(shared).total_params);
}

TEST_CASE("static parameter count matches instantiated models exactly") {
  for (ModelConfig cfg : {enum_config(), desk_config()}) {
    CHECK(instantiated_param_count(cfg) == count_params(cfg).total_params);
  }
  ModelConfig wide = desk_config();
  wide.n_heads = 8;
  wide.n_blocks = 3;
  wide.n_classes = 37;
  CHECK(instantiated_param_count(wide) == count_params(wide).total_params);
}

TEST_CASE("full-scale config totals and the published reference figures") {
  ComplexityReport rep = complexity_report(full_scale_config());
  double pm = rep.total_params / 1e6;
  double fb = rep.total_flops / 1e9;
  // the faithful all-blocks total sits far above the published reference
  // numbers; one (block, channel) unit is what lines up with them
  uint64_t unit_params = 0, unit_flops = 0;
  for (const auto& l : rep.per_layer)
    if (l.name.rfind("block0.ch0.", 0) == 0) {
      unit_params += l.params;
      unit_flops += l.flops;
    }
  INFO("full-scale totals: " << pm << "M params, " << fb << "G FLOPs");
  CHECK(unit_params / 1e6 == Catch::Approx(kPublishedParamsMillion).epsilon(0.05));
  CHECK(unit_flops / 1e9 == Catch::Approx(kPublishedFlopsBillion).epsilon(0.05));
  CHECK(pm > 100.0);  // the 12-unit total is an order of magnitude larger

  // the human-readable table surfaces both the comparison and the unit line
  std::string table = complexity_table(full_scale_config());
  CHECK(table.find("reference comparison") != std::string::npos);
  CHECK(table.find("per (block,channel) unit") != std::string::npos);
  CHECK(table.find("TOTAL") != std::string::npos);
}

TEST_CASE("complexity JSON carries totals and the per-layer breakdown") {
  ModelConfig cfg = desk_config();
  ComplexityReport rep = complexity_report(cfg);
  nlohmann::json j = complexity_json(cfg);
  CHECK(j.at("total_params").get<uint64_t>() == rep.total_params);
  CHECK(j.at("total_flops").get<uint64_t>() == rep.total_flops);
  REQUIRE(j.at("per_layer").size() == rep.per_layer.size());
  CHECK(j.at("per_layer")[0].at("name").get<std::string>() == rep.per_layer[0].name);
  CHECK(j.at("note").get<std::string>().find("1 MAC = 2 FLOPs") != std::string::npos);
}

TEST_CASE("complexity_report rejects illegal configs") {
  ModelConfig bad = enum_config();
  bad.n_heads = 3;
  CHECK_THROWS_AS(complexity_report(bad), std::invalid_argument);
}
