#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "mame/train.hpp"

using namespace mame;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig c;
  c.depth = 2;
  c.embed_dim = 8;
  c.state_dim = 4;
  c.grid_side = 3;
  c.raw_dim = 5;
  c.n_classes = 3;
  return c;
}

DatasetSpec tiny_data() {
  DatasetSpec s;
  s.n_classes = 3;
  s.per_class = 10;
  s.grid_side = 3;
  s.raw_dim = 5;
  s.blob_size = 3;
  s.seed = 11;
  return s;
}

TrainConfig quick_train(int epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.lr = 5e-3;
  return t;
}

struct TmpFile {
  std::string path;
  explicit TmpFile(const char* name) : path(std::string("/tmp/mame_test_") + name) {}
  ~TmpFile() { std::remove(path.c_str()); }
};

bool params_equal(ToyVim<float>& a, ToyVim<float>& b) {
  auto pa = a.params(), pb = b.params();
  for (std::size_t p = 0; p < pa.size(); ++p)
    for (std::size_t i = 0; i < pa[p].tensor->size(); ++i)
      if ((*pa[p].tensor)[i] != (*pb[p].tensor)[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("lr schedule: warmup then cosine decay") {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.epochs = 10;
  cfg.warmup_epochs = 2;
  CHECK(lr_at(cfg, 0) == doctest::Approx(0.5));
  CHECK(lr_at(cfg, 1) == doctest::Approx(1.0));
  CHECK(lr_at(cfg, 2) == doctest::Approx(1.0));  // cosine starts at full lr
  for (int e = 3; e < 10; ++e) CHECK(lr_at(cfg, e) < lr_at(cfg, e - 1));
  CHECK(lr_at(cfg, 9) > 0.0);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.threads = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("sample gradients line up with the parameter registry") {
  ToyVim<float> model(tiny_cfg(), 3);
  auto [train_set, val_set] = generate(tiny_data());
  auto res = sample_backward(model, train_set.samples[0], MergeSchedule{}, 0);
  auto params = model.params();
  REQUIRE(res.grads.size() == params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    CHECK(res.grads[p].size() == params[p].tensor->size());
  CHECK(std::isfinite(res.loss));
  // at least the head weights see a nonzero gradient
  bool any = false;
  for (float g : res.grads[3]) any = any || g != 0.f;  // w_head
  CHECK(any);
}

TEST_CASE("sgd step matches the update rule by hand") {
  ModelConfig mc = tiny_cfg();
  ToyVim<float> model(mc, 1);
  TrainConfig cfg;
  cfg.optimizer = "sgd";
  cfg.weight_decay = 0.1;
  auto params = model.params();
  const float w0 = (*params[0].tensor)[0];
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    grads[p].assign(params[p].tensor->size(), 0.0);
  grads[0][0] = 2.0;
  Optimizer opt(params, cfg);
  opt.step(grads, 0.01);
  // first momentum step: m = g + wd*w; w -= lr*m
  const double expect = w0 - 0.01 * (2.0 + 0.1 * w0);
  CHECK((*params[0].tensor)[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adamw first step is a signed unit step times lr") {
  ModelConfig mc = tiny_cfg();
  ToyVim<float> model(mc, 1);
  TrainConfig cfg;
  cfg.optimizer = "adamw";
  cfg.weight_decay = 0.0;
  auto params = model.params();
  const float w0 = (*params[0].tensor)[0];
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    grads[p].assign(params[p].tensor->size(), 0.0);
  grads[0][0] = -3.0;
  Optimizer opt(params, cfg);
  opt.step(grads, 0.01);
  // bias-corrected mh/sqrt(vh) = g/|g| on the first step
  CHECK((*params[0].tensor)[0] == doctest::Approx(w0 + 0.01).epsilon(1e-4));
}

TEST_CASE("training reduces loss and is deterministic") {
  auto [train_set, val_set] = generate(tiny_data());
  auto cfg = quick_train(4);

  ToyVim<float> m1(tiny_cfg(), 7);
  auto metrics1 = train(m1, train_set, val_set, cfg);
  REQUIRE(metrics1.size() == 4);
  CHECK(metrics1.back().train_loss < metrics1.front().train_loss);
  for (auto& m : metrics1) {
    CHECK(std::isfinite(m.train_loss));
    CHECK(m.val_acc >= 0.0);
    CHECK(m.val_acc <= 1.0);
  }

  ToyVim<float> m2(tiny_cfg(), 7);
  auto metrics2 = train(m2, train_set, val_set, cfg);
  CHECK(params_equal(m1, m2));
  for (std::size_t i = 0; i < metrics1.size(); ++i) {
    CHECK(metrics1[i].train_loss == metrics2[i].train_loss);
    CHECK(metrics1[i].val_acc == metrics2[i].val_acc);
  }
}

TEST_CASE("thread count does not change the result") {
  auto [train_set, val_set] = generate(tiny_data());
  auto cfg = quick_train(2);

  ToyVim<float> m1(tiny_cfg(), 9);
  train(m1, train_set, val_set, cfg);
  auto cfg4 = cfg;
  cfg4.threads = 4;
  ToyVim<float> m2(tiny_cfg(), 9);
  train(m2, train_set, val_set, cfg4);
  CHECK(params_equal(m1, m2));

  auto e1 = evaluate(m1, val_set, MergeSchedule{}, 0, 1);
  auto e4 = evaluate(m1, val_set, MergeSchedule{}, 0, 4);
  CHECK(e1.loss == e4.loss);
  CHECK(e1.acc == e4.acc);
}

TEST_CASE("training through merge layers stays finite and deterministic") {
  auto [train_set, val_set] = generate(tiny_data());
  auto cfg = quick_train(2);
  auto schedule = make_schedule({1}, 2);

  ToyVim<float> m1(tiny_cfg(), 13);
  auto metrics = train(m1, train_set, val_set, cfg, schedule);
  for (auto& m : metrics) CHECK(std::isfinite(m.train_loss));
  ToyVim<float> m2(tiny_cfg(), 13);
  train(m2, train_set, val_set, cfg, schedule);
  CHECK(params_equal(m1, m2));
}

TEST_CASE("metrics csv layout") {
  std::vector<EpochMetrics> ms(2);
  ms[0] = {0, 1.5, 0.25, 1.4, 0.3};
  ms[1] = {1, 1.0, 0.5, 0.9, 0.6};
  TmpFile f("metrics.csv");
  write_metrics_csv(ms, f.path);
  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,split,loss,acc");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("layer list parsing") {
  CHECK(parse_layer_list("2+3+4") == std::vector<int>{2, 3, 4});
  CHECK(parse_layer_list("7") == std::vector<int>{7});
  CHECK_THROWS(parse_layer_list("a+b"));
}

TEST_CASE("sweep schedule construction per axis") {
  auto base = make_schedule({1, 2}, 3, 10.0);
  auto s_tau = schedule_for_value(base, "tau", "2.5");
  for (auto& [l, c] : s_tau.layers) CHECK(c.tau == doctest::Approx(2.5));
  auto s_r = schedule_for_value(base, "r", "5");
  for (auto& [l, c] : s_r.layers) CHECK(c.r == 5);
  auto s_f = schedule_for_value(base, "f", "max");
  for (auto& [l, c] : s_f.layers) CHECK(c.integration == DeltaIntegration::max);
  auto s_strat = schedule_for_value(base, "strategy", "dst_pos");
  for (auto& [l, c] : s_strat.layers) CHECK(c.strategy == Arrangement::dst_pos);
  auto s_layers = schedule_for_value(base, "layers", "0+1");
  REQUIRE(s_layers.layers.size() == 2);
  CHECK(s_layers.layers.count(0) == 1);
  CHECK(s_layers.layers.begin()->second.r == 3);
  CHECK_THROWS_AS(schedule_for_value(base, "banana", "1"), std::invalid_argument);
}

TEST_CASE("sweep rows track the schedule") {
  ToyVim<float> model(tiny_cfg(), 5);
  auto [train_set, val_set] = generate(tiny_data());
  SweepSpec spec;
  spec.axis = "r";
  spec.values = {"0", "2", "4"};
  // merge at layer 0 so the later layer actually runs on fewer tokens
  spec.base = make_schedule({0}, 0);
  auto rows = sweep(model, val_set, spec);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].value == "0");
  // more merging -> fewer estimated flops
  CHECK(rows[1].flops < rows[0].flops);
  CHECK(rows[2].flops < rows[1].flops);
  for (auto& r : rows) {
    CHECK(r.acc >= 0.0);
    CHECK(r.acc <= 1.0);
    CHECK(r.img_per_s == 0.0);  // speed not requested
  }

  TmpFile f("sweep.csv");
  write_sweep_csv("r", rows, f.path);
  std::ifstream in(f.path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "r,acc,estimated_flops,img_per_s");
  auto table = sweep_table("r", rows);
  CHECK(table.find("r\tacc") == 0);
}
