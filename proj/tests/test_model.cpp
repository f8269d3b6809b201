#include <cstdio>
#include <random>
#include <set>

#include "doctest.h"
#include "mame/checkpoint.hpp"
#include "mame/model.hpp"

using namespace mame;

namespace {

ModelConfig small_cfg() {
  ModelConfig c;
  c.depth = 3;
  c.embed_dim = 8;
  c.state_dim = 4;
  c.grid_side = 3;  // 10 tokens, cls at 4
  c.raw_dim = 5;
  c.n_classes = 4;
  return c;
}

Tensor<double> rand_grid(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Tensor<double> g({std::size_t(c.grid_side * c.grid_side), std::size_t(c.raw_dim)});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = n(rng);
  return g;
}

struct TmpFile {
  std::string path;
  explicit TmpFile(const char* name) : path(std::string("/tmp/mame_test_") + name) {}
  ~TmpFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("patch embed inserts cls at the middle slot") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 3);
  Tape<double> tape;
  auto v = register_params(tape, model);
  auto grid = rand_grid(cfg, 1);
  Var tokens = patch_embed(tape, v, grid, cfg);
  const auto& val = tape.value(tokens);
  REQUIRE(val.rows() == std::size_t(cfg.n_tokens()));
  REQUIRE(val.cols() == std::size_t(cfg.embed_dim));
  for (int j = 0; j < cfg.embed_dim; ++j)
    CHECK(val.at(cfg.cls_pos(), j) == model.cls_token.at(0, j));
  // neighbouring rows come from the linear projection, not the cls token
  Tensor<double> bad({2, 2});
  CHECK_THROWS_AS(patch_embed(tape, v, bad, cfg), std::invalid_argument);
}

TEST_CASE("forward without merging keeps all tokens") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 5);
  auto grid = rand_grid(cfg, 2);
  auto [logits, trace] = forward_inference(model, grid, MergeSchedule{});
  REQUIRE(logits.rows() == 1);
  REQUIRE(logits.cols() == std::size_t(cfg.n_classes));
  CHECK(logits.all_finite());
  CHECK(trace.layers.empty());
}

TEST_CASE("forward with merging tracks bookkeeping") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 5);
  auto grid = rand_grid(cfg, 2);
  auto schedule = make_schedule({1, 2}, 2);

  Tape<double> tape;
  auto v = register_params(tape, model);
  std::mt19937_64 rng(0);
  auto res = forward(tape, model, v, grid, schedule, rng, true);

  CHECK(res.final_seq.length() == std::size_t(cfg.n_tokens() - 4));
  CHECK(res.final_seq.total_size() == cfg.n_tokens());
  REQUIRE(res.final_seq.cls_pos.has_value());
  CHECK(res.final_seq.sizes[*res.final_seq.cls_pos] == 1);
  CHECK(res.final_seq.orig_index[*res.final_seq.cls_pos] == cfg.cls_pos());
  REQUIRE(res.trace.layers.size() == 2);
  CHECK(res.trace.layers[0].layer == 1);
  CHECK(res.trace.layers[1].layer == 2);
  CHECK(res.trace.layers[0].decision.pairs.size() == 2);
  // every original token accounted for exactly once
  std::set<int> seen;
  for (auto& m : res.final_seq.members)
    for (int idx : m) CHECK(seen.insert(idx).second);
  CHECK(seen.size() == std::size_t(cfg.n_tokens()));
  CHECK(tape.value(res.logits).all_finite());
}

TEST_CASE("schedule validation") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 1);
  auto grid = rand_grid(cfg, 1);
  CHECK_THROWS_AS(forward_inference(model, grid, make_schedule({7}, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(forward_inference(model, grid, make_schedule({0, 1, 2}, 4)),
                  std::invalid_argument);
}

TEST_CASE("default merge layers") {
  CHECK(default_merge_layers(6) == std::vector<int>{2, 3, 4});
  for (int depth : {3, 4, 8, 12, 24}) {
    auto ls = default_merge_layers(depth);
    CHECK(!ls.empty());
    for (std::size_t i = 1; i < ls.size(); ++i) CHECK(ls[i] > ls[i - 1]);
    for (int l : ls) {
      CHECK(l >= 0);
      CHECK(l < depth);
    }
  }
  CHECK(default_merge_layers(24) == std::vector<int>{8, 14, 20});
}

TEST_CASE("forward is deterministic") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 9);
  auto grid = rand_grid(cfg, 3);
  auto schedule = make_schedule({1}, 3);
  auto [l1, t1] = forward_inference(model, grid, schedule, 0, true);
  auto [l2, t2] = forward_inference(model, grid, schedule, 0, true);
  for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1[i] == l2[i]);
  CHECK(t1.layers[0].decision.pairs == t2.layers[0].decision.pairs);
}

TEST_CASE("huge tau recovers similarity-only logits bitwise") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 21);
  auto grid = rand_grid(cfg, 4);
  auto big = make_schedule({1, 2}, 2, 1e9, DeltaIntegration::avg,
                           Arrangement::ord_front, ScoreMode::mame);
  auto sim = make_schedule({1, 2}, 2, 1e9, DeltaIntegration::avg,
                           Arrangement::ord_front, ScoreMode::similarity_only);
  auto [l1, t1] = forward_inference(model, grid, big, 0, true);
  auto [l2, t2] = forward_inference(model, grid, sim, 0, true);
  for (std::size_t l = 0; l < t1.layers.size(); ++l)
    CHECK(t1.layers[l].decision.pairs == t2.layers[l].decision.pairs);
  // same pairs and same arrangement -> identical downstream compute up to the
  // shared w_delta factor, which only rescales scores, not merged values
  for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1[i] == l2[i]);
}

TEST_CASE("gradients through a merge layer match finite differences") {
  auto cfg = small_cfg();
  ToyVim<double> model(cfg, 41);
  auto grid = rand_grid(cfg, 6);
  auto schedule = make_schedule({1}, 2);
  const int label = 1;

  auto loss_at = [&](ToyVim<double>& m, std::vector<std::pair<int, int>>& pairs) {
    Tape<double> tape;
    auto v = register_params(tape, m);
    std::mt19937_64 rng(0);
    auto res = forward(tape, m, v, grid, schedule, rng, true);
    pairs = res.trace.layers[0].decision.pairs;
    Var loss = softmax_cross_entropy(tape, res.logits, label);
    return tape.value(loss)[0];
  };

  Tape<double> tape;
  auto v = register_params(tape, model);
  std::mt19937_64 rng(0);
  auto res = forward(tape, model, v, grid, schedule, rng, true);
  Var loss = softmax_cross_entropy(tape, res.logits, label);
  tape.backward(loss);
  auto base_pairs = res.trace.layers[0].decision.pairs;

  auto params = model.params();
  const double eps = 1e-6;
  int checked = 0;
  std::mt19937_64 pick(7);
  for (std::size_t p = 0; p < params.size(); ++p) {
    // a few coordinates per tensor keeps the FD sweep fast but broad
    std::uniform_int_distribution<std::size_t> idx(0, params[p].tensor->size() - 1);
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = idx(pick);
      const double orig = (*params[p].tensor)[i];
      std::vector<std::pair<int, int>> pp, pm;
      (*params[p].tensor)[i] = orig + eps;
      const double lp = loss_at(model, pp);
      (*params[p].tensor)[i] = orig - eps;
      const double lm = loss_at(model, pm);
      (*params[p].tensor)[i] = orig;
      // the check is only meaningful where the discrete match set is locally
      // constant; a coordinate on a decision boundary gets a jump in the FD
      if (pp != base_pairs || pm != base_pairs) continue;
      const double fd = (lp - lm) / (2 * eps);
      const double ad = tape.has_grad(v.all[p]) ? tape.grad(v.all[p])[i] : 0.0;
      const double scale = std::max({std::abs(fd), std::abs(ad), 1e-6});
      CHECK(std::abs(fd - ad) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("checkpoint round-trip") {
  auto cfg = small_cfg();
  cfg.cls_readout = true;
  ToyVim<float> model(cfg, 77);
  TmpFile f("ckpt.bin");
  save_checkpoint(model, f.path);
  auto loaded = load_checkpoint(f.path);
  CHECK(loaded.cfg.depth == cfg.depth);
  CHECK(loaded.cfg.embed_dim == cfg.embed_dim);
  CHECK(loaded.cfg.cls_readout == cfg.cls_readout);
  auto a = model.params();
  auto b = loaded.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    REQUIRE(a[p].tensor->size() == b[p].tensor->size());
    for (std::size_t i = 0; i < a[p].tensor->size(); ++i)
      CHECK((*a[p].tensor)[i] == (*b[p].tensor)[i]);
  }
  // identical forward behaviour after reload
  auto grid = rand_grid(cfg, 8).cast<float>();
  auto [l1, t1] = forward_inference(model, grid, MergeSchedule{});
  auto [l2, t2] = forward_inference(loaded, grid, MergeSchedule{});
  for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1[i] == l2[i]);
}

TEST_CASE("checkpoint rejects corrupt headers") {
  auto cfg = small_cfg();
  ToyVim<float> model(cfg, 1);
  TmpFile f("ckpt_bad.bin");
  save_checkpoint(model, f.path);

  SUBCASE("flipped magic byte") {
    std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(0);
    fs.put('X');
    fs.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("bad magic"),
                         std::runtime_error);
  }
  SUBCASE("wrong container kind") {
    std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(8);  // kind field
    fs.put(char(9));
    fs.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(f.path),
                         doctest::Contains("wrong container kind"),
                         std::runtime_error);
  }
  SUBCASE("truncated payload") {
    std::ifstream in(f.path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(f.path, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("short read"),
                         std::runtime_error);
  }
}

TEST_CASE("cls readout differs from mean readout") {
  auto cfg = small_cfg();
  ToyVim<double> mean_model(cfg, 55);
  auto cls_cfg = cfg;
  cls_cfg.cls_readout = true;
  ToyVim<double> cls_model(cls_cfg, 55);  // same seed, same weights
  auto grid = rand_grid(cfg, 9);
  auto [l1, t1] = forward_inference(mean_model, grid, MergeSchedule{});
  auto [l2, t2] = forward_inference(cls_model, grid, MergeSchedule{});
  bool any_diff = false;
  for (std::size_t i = 0; i < l1.size(); ++i)
    if (l1[i] != l2[i]) any_diff = true;
  CHECK(any_diff);
}
