// mame: desk-scale token-merging lab for a bidirectional selective-scan
// encoder. Subcommands cover dataset generation, training, evaluation,
// ablation sweeps, FLOPs/throughput benchmarking, and visualization.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mame/bench.hpp"
#include "mame/checkpoint.hpp"
#include "mame/data.hpp"
#include "mame/merge.hpp"
#include "mame/model.hpp"
#include "mame/ssm.hpp"
#include "mame/train.hpp"
#include "mame/viz.hpp"

using json = nlohmann::json;
using namespace mame;

namespace {

struct RunConfig {
  ModelConfig model;
  DatasetSpec data;
  TrainConfig train;
  std::vector<int> layers;  // empty -> default placement for the depth
  int r = 0;
  double tau = 10.0;
  std::string f = "avg";
  std::string strategy = "ord_front";
  std::string mode = "mame";
  std::uint64_t seed = 0;
  std::string out = "run";
  std::string dataset;     // path prefix (expects <prefix>.train.bin/.val.bin)
  std::string checkpoint;  // checkpoint path
};

json to_json(const RunConfig& rc) {
  json j;
  j["model"] = {{"depth", rc.model.depth},
                {"embed_dim", rc.model.embed_dim},
                {"state_dim", rc.model.state_dim},
                {"grid_side", rc.model.grid_side},
                {"raw_dim", rc.model.raw_dim},
                {"n_classes", rc.model.n_classes},
                {"cls_readout", rc.model.cls_readout}};
  j["data"] = {{"n_classes", rc.data.n_classes}, {"per_class", rc.data.per_class},
               {"grid_side", rc.data.grid_side}, {"raw_dim", rc.data.raw_dim},
               {"blob_size", rc.data.blob_size}, {"n_background", rc.data.n_background},
               {"sigma", rc.data.sigma}};
  j["train"] = {{"epochs", rc.train.epochs},
                {"lr", rc.train.lr},
                {"weight_decay", rc.train.weight_decay},
                {"warmup_epochs", rc.train.warmup_epochs},
                {"batch_size", rc.train.batch_size},
                {"optimizer", rc.train.optimizer},
                {"max_grad_norm", rc.train.max_grad_norm},
                {"momentum", rc.train.momentum},
                {"threads", rc.train.threads}};
  j["merge"] = {{"layers", rc.layers.empty() ? default_merge_layers(rc.model.depth)
                                             : rc.layers},
                {"r", rc.r}, {"tau", rc.tau}, {"f", rc.f},
                {"strategy", rc.strategy}, {"mode", rc.mode}};
  j["seed"] = rc.seed;
  j["out"] = rc.out;
  if (!rc.dataset.empty()) j["dataset"] = rc.dataset;
  if (!rc.checkpoint.empty()) j["checkpoint"] = rc.checkpoint;
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void from_json_file(const std::string& path, RunConfig& rc) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j = json::parse(in);
  if (j.contains("model")) {
    const json& m = j["model"];
    maybe(m, "depth", rc.model.depth);
    maybe(m, "embed_dim", rc.model.embed_dim);
    maybe(m, "state_dim", rc.model.state_dim);
    maybe(m, "grid_side", rc.model.grid_side);
    maybe(m, "raw_dim", rc.model.raw_dim);
    maybe(m, "n_classes", rc.model.n_classes);
    maybe(m, "cls_readout", rc.model.cls_readout);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    maybe(d, "n_classes", rc.data.n_classes);
    maybe(d, "per_class", rc.data.per_class);
    maybe(d, "grid_side", rc.data.grid_side);
    maybe(d, "raw_dim", rc.data.raw_dim);
    maybe(d, "blob_size", rc.data.blob_size);
    maybe(d, "n_background", rc.data.n_background);
    maybe(d, "sigma", rc.data.sigma);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    maybe(t, "epochs", rc.train.epochs);
    maybe(t, "lr", rc.train.lr);
    maybe(t, "weight_decay", rc.train.weight_decay);
    maybe(t, "warmup_epochs", rc.train.warmup_epochs);
    maybe(t, "batch_size", rc.train.batch_size);
    maybe(t, "optimizer", rc.train.optimizer);
    maybe(t, "max_grad_norm", rc.train.max_grad_norm);
    maybe(t, "momentum", rc.train.momentum);
    maybe(t, "threads", rc.train.threads);
  }
  if (j.contains("merge")) {
    const json& m = j["merge"];
    maybe(m, "layers", rc.layers);
    maybe(m, "r", rc.r);
    maybe(m, "tau", rc.tau);
    maybe(m, "f", rc.f);
    maybe(m, "strategy", rc.strategy);
    maybe(m, "mode", rc.mode);
  }
  maybe(j, "seed", rc.seed);
  maybe(j, "out", rc.out);
  maybe(j, "dataset", rc.dataset);
  maybe(j, "checkpoint", rc.checkpoint);
}

MergeSchedule schedule_from(const RunConfig& rc) {
  if (rc.r <= 0) return {};
  auto layers = rc.layers.empty() ? default_merge_layers(rc.model.depth) : rc.layers;
  return make_schedule(layers, rc.r, rc.tau, parse_integration(rc.f),
                       parse_arrangement(rc.strategy), parse_score_mode(rc.mode));
}

void sync_fields(RunConfig& rc) {
  // model and data describe the same grid; keep them agreeing
  rc.data.grid_side = rc.model.grid_side;
  rc.data.raw_dim = rc.model.raw_dim;
  rc.data.n_classes = rc.model.n_classes;
  rc.data.seed = rc.seed;
  rc.train.seed = rc.seed;
}

void print_resolved(const char* cmd, const RunConfig& rc) {
  json j;
  j["command"] = cmd;
  j["config"] = to_json(rc);
  std::cout << j.dump() << "\n";
}

std::pair<Dataset, Dataset> load_or_generate(const RunConfig& rc) {
  if (!rc.dataset.empty())
    return {load_dataset(rc.dataset + ".train.bin"),
            load_dataset(rc.dataset + ".val.bin")};
  return generate(rc.data);
}

ToyVim<float> load_or_init(const RunConfig& rc) {
  if (!rc.checkpoint.empty()) return load_checkpoint(rc.checkpoint);
  return ToyVim<float>(rc.model, rc.seed);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen_data(const RunConfig& rc) {
  print_resolved("gen-data", rc);
  auto [train_set, val_set] = generate(rc.data);
  save_dataset(train_set, rc.out + ".train.bin");
  save_dataset(val_set, rc.out + ".val.bin");
  std::cout << "wrote " << rc.out << ".train.bin (" << train_set.samples.size()
            << " samples), " << rc.out << ".val.bin (" << val_set.samples.size()
            << " samples)\n";
  return 0;
}

int cmd_train(const RunConfig& rc) {
  print_resolved("train", rc);
  auto [train_set, val_set] = load_or_generate(rc);
  ToyVim<float> model(rc.model, rc.seed);
  auto schedule = schedule_from(rc);
  auto metrics = train(model, train_set, val_set, rc.train, schedule);
  save_checkpoint(model, rc.out + ".ckpt");
  write_metrics_csv(metrics, rc.out + ".metrics.csv");
  const auto& last = metrics.back();
  json j = {{"epochs", int(metrics.size())},
            {"final_train_acc", last.train_acc},
            {"final_val_acc", last.val_acc},
            {"final_val_loss", last.val_loss},
            {"checkpoint", rc.out + ".ckpt"},
            {"metrics_csv", rc.out + ".metrics.csv"}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_eval(RunConfig rc) {
  print_resolved("eval", rc);
  auto [train_set, val_set] = load_or_generate(rc);
  ToyVim<float> model = load_or_init(rc);
  rc.model = model.cfg;  // schedule placement follows the loaded model's depth
  auto schedule = schedule_from(rc);
  auto ev = evaluate(model, val_set, schedule, rc.seed, rc.train.threads);
  auto rep = estimate_flops(FlopsConfig::from_model(model.cfg), schedule_r_map(schedule));
  json j = {{"val_acc", ev.acc},
            {"val_loss", ev.loss},
            {"estimated_flops", rep.total_scheduled},
            {"flops_ratio", rep.ratio}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_sweep(RunConfig rc, const std::string& axis, const std::string& values,
              bool measure_speed) {
  print_resolved("sweep", rc);
  auto [train_set, val_set] = load_or_generate(rc);
  ToyVim<float> model = load_or_init(rc);
  rc.model = model.cfg;
  SweepSpec spec;
  spec.axis = axis;
  spec.values = split_csv(values);
  if (spec.values.empty()) throw std::runtime_error("no sweep values given");
  spec.base = schedule_from(rc);
  if (spec.base.layers.empty())
    spec.base = make_schedule(
        rc.layers.empty() ? default_merge_layers(rc.model.depth) : rc.layers, rc.r,
        rc.tau, parse_integration(rc.f), parse_arrangement(rc.strategy),
        parse_score_mode(rc.mode));
  spec.measure_speed = measure_speed;
  spec.seed = rc.seed;
  spec.threads = rc.train.threads;
  auto rows = sweep(model, val_set, spec);
  write_sweep_csv(axis, rows, rc.out + ".sweep.csv");
  std::cout << sweep_table(axis, rows);
  std::cout << "wrote " << rc.out << ".sweep.csv\n";
  return 0;
}

int cmd_bench(RunConfig rc, bool vim_tiny, bool measure) {
  print_resolved("bench", rc);
  FlopsConfig fc = vim_tiny ? FlopsConfig::vim_tiny() : FlopsConfig::from_model(rc.model);
  std::map<int, int> rmap;
  if (rc.r > 0) {
    std::vector<int> layers = rc.layers;
    if (layers.empty())
      layers = vim_tiny ? std::vector<int>{8, 14, 20} : default_merge_layers(fc.depth);
    for (int l : layers) rmap[l] = rc.r;
  }
  auto rep = estimate_flops(fc, rmap);
  json j = {{"total_baseline", rep.total_baseline},
            {"total_scheduled", rep.total_scheduled},
            {"ratio", rep.ratio},
            {"speedup", rep.speedup}};
  json per_layer = json::array();
  for (auto& l : rep.scheduled)
    per_layer.push_back({{"layer", l.layer}, {"n_tokens", l.n_tokens}, {"flops", l.flops}});
  j["per_layer"] = per_layer;
  if (measure) {
    auto [train_set, val_set] = load_or_generate(rc);
    ToyVim<float> model = load_or_init(rc);
    rc.model = model.cfg;
    std::vector<Tensor<float>> grids;
    for (std::size_t i = 0; i < std::min<std::size_t>(32, val_set.samples.size()); ++i)
      grids.push_back(val_set.samples[i].grid);
    j["img_per_s"] = measure_throughput(model, grids, schedule_from(rc), 1, 5);
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_viz(RunConfig rc, int sample_idx) {
  print_resolved("viz", rc);
  auto [train_set, val_set] = load_or_generate(rc);
  if (sample_idx < 0 || sample_idx >= int(val_set.samples.size()))
    throw std::runtime_error("sample index out of range");
  ToyVim<float> model = load_or_init(rc);
  rc.model = model.cfg;
  auto schedule = schedule_from(rc);
  if (schedule.layers.empty())
    throw std::runtime_error("viz needs a merge schedule (set --r > 0)");

  Tape<float> tape;
  auto vars = register_params(tape, model);
  std::mt19937_64 rng(rc.seed);
  auto res = forward(tape, model, vars, val_set.samples[sample_idx].grid, schedule,
                     rng, true);

  RenderSpec spec;
  spec.grid_side = model.cfg.grid_side;
  spec.palette_seed = rc.seed;
  std::vector<std::vector<int>> partition = res.final_seq.members;
  auto svg = render_merge_map(partition, spec, model.cfg.cls_pos());

  // delta heatmap from the first merge layer; at that point slots are still
  // original indices, so drop cls and lay the rest out on the grid
  const auto& dh = res.trace.layers.front().delta_hat;
  std::vector<double> heat;
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (int(i) != model.cfg.cls_pos()) heat.push_back(double(dh[i]));
  auto ppm = render_heatmap(heat, spec);

  std::ofstream svg_out(rc.out + ".merge.svg");
  svg_out << svg;
  svg_out.close();
  std::ofstream ppm_out(rc.out + ".delta.ppm", std::ios::binary);
  ppm_out << ppm;
  ppm_out.close();
  std::ofstream trace_out(rc.out + ".trace.json");
  trace_out << trace_to_json(res.trace).dump(2) << "\n";
  trace_out.close();
  std::cout << "wrote " << rc.out << ".merge.svg, " << rc.out << ".delta.ppm, "
            << rc.out << ".trace.json\n";
  return 0;
}

// ---- selftest ------------------------------------------------------------

bool check(const char* name, bool ok) {
  std::cout << (ok ? "pass" : "FAIL") << "  " << name << "\n";
  return ok;
}

bool selftest_scan_oracle() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  const int N = 16, E = 3, S = 4, R = 2;
  SsmDirectionParams<double> p;
  auto fill = [&](Tensor<double>& t, std::vector<std::size_t> shape) {
    t = Tensor<double>(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * n(rng);
  };
  p.a_log = Tensor<double>({E, S});
  for (int c = 0; c < E; ++c)
    for (int k = 0; k < S; ++k) p.a_log.at(c, k) = std::log(k + 1.0);
  fill(p.w_b, {E, S});
  fill(p.w_c, {E, S});
  fill(p.w_dt_in, {E, R});
  fill(p.w_dt_out, {R, E});
  fill(p.b_dt, {E});
  Tensor<double> x({N, E});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = n(rng);

  auto [y, delta] = selective_scan(x, p);

  // naive per-step recurrence, written independently of the library loop
  double max_err = 0;
  for (int c = 0; c < E; ++c) {
    std::vector<double> h(S, 0.0);
    for (int t = 0; t < N; ++t) {
      double b_row[16], c_row[16];
      for (int k = 0; k < S; ++k) {
        b_row[k] = 0;
        c_row[k] = 0;
      }
      for (int k = 0; k < S; ++k)
        for (int e = 0; e < E; ++e) {
          b_row[k] += x.at(t, e) * p.w_b.at(e, k);
          c_row[k] += x.at(t, e) * p.w_c.at(e, k);
        }
      const double dt = delta.at(t, c);
      double yt = 0;
      for (int k = 0; k < S; ++k) {
        const double a = -std::exp(p.a_log.at(c, k));
        const double abar = std::exp(dt * a);
        const double bbar = (abar - 1.0) / a * b_row[k];
        h[k] = abar * h[k] + bbar * x.at(t, c);
        yt += c_row[k] * h[k];
      }
      max_err = std::max(max_err, std::abs(yt - y.at(t, c)));
    }
  }
  return max_err < 1e-10;
}

bool selftest_zoh_limits() {
  for (double a : {-0.5, -2.0, -7.0}) {
    auto [abar_big, bbar_big] = discretize_channel(a, 1.0, 1e3);
    if (std::abs(abar_big) >= 1e-3) return false;
    auto [abar_small, bbar_small] = discretize_channel(a, 1.0, 1e-6);
    if (std::abs(abar_small - 1.0) >= 1e-3) return false;
  }
  return true;
}

bool selftest_matching() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const int ns = 1 + int(rng() % 6), nd = 1 + int(rng() % 6);
    Tensor<double> score({std::size_t(ns), std::size_t(nd)});
    for (std::size_t i = 0; i < score.size(); ++i) score[i] = u(rng);
    for (int r = 0; r <= ns; ++r) {
      auto got = bipartite_match_indices(score, r);
      // greedy reference with the documented tie-breaks
      std::vector<int> best(ns);
      std::vector<double> bs(ns);
      for (int i = 0; i < ns; ++i) {
        best[i] = 0;
        bs[i] = score.at(i, 0);
        for (int j = 1; j < nd; ++j)
          if (score.at(i, j) > bs[i]) {
            bs[i] = score.at(i, j);
            best[i] = j;
          }
      }
      std::vector<bool> used(ns, false);
      std::vector<std::pair<int, int>> want;
      for (int k = 0; k < r; ++k) {
        int pick = -1;
        for (int i = 0; i < ns; ++i)
          if (!used[i] && (pick < 0 || bs[i] > bs[pick])) pick = i;
        used[pick] = true;
        want.push_back({pick, best[pick]});
      }
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      if (got != want) return false;
    }
  }
  return true;
}

bool selftest_conservation() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Tensor<double> vals({13, 4});
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = n(rng);
  auto seq = TokenSequence<double>::fresh(std::move(vals), 6);
  Tensor<double> df({13, 5}), db({13, 5});
  for (std::size_t i = 0; i < df.size(); ++i) {
    df[i] = softplus_scalar(n(rng));
    db[i] = softplus_scalar(n(rng));
  }
  Tensor<double> star({13, 4});
  for (std::size_t i = 0; i < star.size(); ++i) star[i] = n(rng);
  MergeLayerConfig cfg;
  cfg.r = 4;
  auto [out, trace] = mame_layer(seq, df, db, star, cfg, ScoreMode::mame, rng);
  if (out.length() != 9) return false;
  if (out.total_size() != 13) return false;
  if (!out.cls_pos || out.sizes[*out.cls_pos] != 1) return false;
  return true;
}

bool selftest_flops() {
  auto rep = estimate_flops(FlopsConfig::vim_tiny(), {{8, 50}, {14, 50}, {20, 50}});
  return rep.total_baseline > 1.36e9 && rep.total_baseline < 1.84e9 &&
         rep.ratio > 0.689 && rep.ratio < 0.761;
}

int cmd_selftest(const RunConfig& rc) {
  print_resolved("selftest", rc);
  bool ok = true;
  ok &= check("scan matches naive recurrence", selftest_scan_oracle());
  ok &= check("zoh delta limits", selftest_zoh_limits());
  ok &= check("bipartite matching vs greedy reference", selftest_matching());
  ok &= check("merge bookkeeping conservation", selftest_conservation());
  ok &= check("flops calibration bands", selftest_flops());
  if (!ok) throw std::runtime_error("selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mame: token-merging lab for a bidirectional selective-scan encoder"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;

  // overrides shared by subcommands
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--r", rc.r, "tokens merged per merge layer");
    sub->add_option("--tau", rc.tau, "informativeness temperature");
    sub->add_option("--strategy", rc.strategy, "token arrangement strategy");
    sub->add_option("--layers", rc.layers, "merge layer indices")->delimiter('+');
    sub->add_option("--f", rc.f, "delta integration function (max|min|avg|sum)");
    sub->add_option("--mode", rc.mode, "score mode (mame|similarity_only|random_score)");
    sub->add_option("--seed", rc.seed, "rng seed");
    sub->add_option("--out", rc.out, "output path prefix");
    sub->add_option("--dataset", rc.dataset, "dataset path prefix");
    sub->add_option("--checkpoint", rc.checkpoint, "checkpoint path");
    sub->add_option("--threads", rc.train.threads, "worker thread cap");
    sub->add_option("--epochs", rc.train.epochs, "training epochs");
    sub->add_option("--lr", rc.train.lr, "learning rate");
    sub->add_option("--depth", rc.model.depth, "encoder depth");
    sub->add_option("--embed-dim", rc.model.embed_dim, "token embedding width");
    sub->add_option("--state-dim", rc.model.state_dim, "ssm state size");
    sub->add_option("--grid-side", rc.model.grid_side, "patch grid side");
    sub->add_flag("--cls-readout", rc.model.cls_readout, "read out the class token");
    sub->add_option("--per-class", rc.data.per_class, "samples per class");
    sub->add_option("--sigma", rc.data.sigma, "dataset noise level");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a planted-pattern dataset");
  CLI::App* tr = app.add_subcommand("train", "train the toy encoder");
  CLI::App* ev = app.add_subcommand("eval", "evaluate a model with a merge schedule");
  CLI::App* sw = app.add_subcommand("sweep", "sweep one merge axis and emit CSV");
  CLI::App* be = app.add_subcommand("bench", "analytical FLOPs / throughput report");
  CLI::App* vz = app.add_subcommand("viz", "render merge map and delta heatmap");
  CLI::App* st = app.add_subcommand("selftest", "run quick built-in oracle checks");
  for (CLI::App* sub : {gen, tr, ev, sw, be, vz, st}) add_common(sub);

  std::string axis = "tau", values;
  bool measure_speed = false;
  sw->add_option("--axis", axis, "tau | r | layers | strategy | f");
  sw->add_option("--values", values, "comma-separated sweep values")->required();
  sw->add_flag("--measure", measure_speed, "also time throughput");

  bool vim_tiny = false, bench_measure = false;
  be->add_flag("--vim-tiny", vim_tiny, "use the ViM-T operating point");
  be->add_flag("--measure", bench_measure, "also time toy-model throughput");

  int sample_idx = 0;
  vz->add_option("--sample", sample_idx, "validation sample index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (!config_path.empty()) {
      // file first, then re-apply flag overrides on top
      RunConfig file_rc;
      from_json_file(config_path, file_rc);
      RunConfig flags = rc;
      rc = file_rc;
      CLI::App* sub = app.get_subcommands().front();
      auto touched = [&](const std::string& name) {
        return sub->count(name) > 0;
      };
      if (touched("--r")) rc.r = flags.r;
      if (touched("--tau")) rc.tau = flags.tau;
      if (touched("--strategy")) rc.strategy = flags.strategy;
      if (touched("--layers")) rc.layers = flags.layers;
      if (touched("--f")) rc.f = flags.f;
      if (touched("--mode")) rc.mode = flags.mode;
      if (touched("--seed")) rc.seed = flags.seed;
      if (touched("--out")) rc.out = flags.out;
      if (touched("--dataset")) rc.dataset = flags.dataset;
      if (touched("--checkpoint")) rc.checkpoint = flags.checkpoint;
      if (touched("--threads")) rc.train.threads = flags.train.threads;
      if (touched("--epochs")) rc.train.epochs = flags.train.epochs;
      if (touched("--lr")) rc.train.lr = flags.train.lr;
      if (touched("--depth")) rc.model.depth = flags.model.depth;
      if (touched("--embed-dim")) rc.model.embed_dim = flags.model.embed_dim;
      if (touched("--state-dim")) rc.model.state_dim = flags.model.state_dim;
      if (touched("--cls-readout")) rc.model.cls_readout = flags.model.cls_readout;
      if (touched("--grid-side")) rc.model.grid_side = flags.model.grid_side;
      if (touched("--per-class")) rc.data.per_class = flags.data.per_class;
      if (touched("--sigma")) rc.data.sigma = flags.data.sigma;
    }
    sync_fields(rc);

    if (gen->parsed()) return cmd_gen_data(rc);
    if (tr->parsed()) return cmd_train(rc);
    if (ev->parsed()) return cmd_eval(rc);
    if (sw->parsed()) return cmd_sweep(rc, axis, values, measure_speed);
    if (be->parsed()) return cmd_bench(rc, vim_tiny, bench_measure);
    if (vz->parsed()) return cmd_viz(rc, sample_idx);
    if (st->parsed()) return cmd_selftest(rc);
    std::cerr << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
