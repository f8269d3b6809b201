#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "mame/model.hpp"

namespace mame {

// Analytical FLOPs model. GEMMs are counted as multiply-adds (the fvcore
// convention) and the recurrent scan as 9 ops per (token, channel, state);
// direction-specific terms carry the bidirectional factor 2.
struct FlopsConfig {
  int depth;
  int embed_dim;   // D
  int inner_dim;   // E
  int state_dim;   // S
  int dt_rank;     // R
  int n_tokens;    // N including class token
  int n_classes;

  static FlopsConfig from_model(const ModelConfig& c) {
    return {c.depth, c.embed_dim, c.inner_dim(), c.state_dim, c.dt_rank(),
            c.n_tokens(), c.n_classes};
  }

  // ViM-T operating point: 24 layers, D=192, expand 2, 16 states, 197 tokens.
  static FlopsConfig vim_tiny() { return {24, 192, 384, 16, 12, 197, 1000}; }
};

struct LayerFlops {
  int layer;
  int n_tokens;
  double flops;
};

struct FlopsReport {
  std::vector<LayerFlops> baseline;
  std::vector<LayerFlops> scheduled;
  double total_baseline = 0;
  double total_scheduled = 0;
  double ratio = 0;    // scheduled / baseline
  double speedup = 0;  // baseline / scheduled
};

inline double layer_flops(const FlopsConfig& c, int n) {
  const double nn = n, d = c.embed_dim, e = c.inner_dim, s = c.state_dim,
               r = c.dt_rank;
  const double in_proj = nn * d * e;
  const double out_proj = nn * e * d;
  const double dir_proj = 2.0 * (nn * e * s + nn * e * s + nn * e * r + nn * r * e);
  const double scan = 2.0 * 9.0 * nn * e * s;
  return in_proj + out_proj + dir_proj + scan;
}

// `schedule` maps layer index -> r removed from that layer's output.
inline FlopsReport estimate_flops(const FlopsConfig& cfg,
                                  const std::map<int, int>& schedule) {
  FlopsReport rep;
  int n = cfg.n_tokens;
  for (int l = 0; l < cfg.depth; ++l) {
    rep.baseline.push_back({l, cfg.n_tokens, layer_flops(cfg, cfg.n_tokens)});
    rep.scheduled.push_back({l, n, layer_flops(cfg, n)});
    auto it = schedule.find(l);
    if (it != schedule.end()) {
      n -= it->second;
      if (n < 1) throw std::invalid_argument("schedule removes all tokens");
    }
  }
  const double head = double(cfg.embed_dim) * cfg.n_classes;
  for (auto& l : rep.baseline) rep.total_baseline += l.flops;
  for (auto& l : rep.scheduled) rep.total_scheduled += l.flops;
  rep.total_baseline += head;
  rep.total_scheduled += head;
  rep.ratio = rep.total_scheduled / rep.total_baseline;
  rep.speedup = rep.total_baseline / rep.total_scheduled;
  return rep;
}

inline std::map<int, int> schedule_r_map(const MergeSchedule& s) {
  std::map<int, int> m;
  for (auto& [l, c] : s.layers) m[l] = c.r;
  return m;
}

// Median images/s over `reps` timed passes of the whole batch.
template <typename T>
double measure_throughput(ToyVim<T>& model, const std::vector<Tensor<T>>& grids,
                          const MergeSchedule& schedule, int warmup, int reps) {
  if (reps < 3) throw std::invalid_argument("reps must be >= 3");
  if (grids.empty()) throw std::invalid_argument("empty batch");
  auto run = [&]() {
    for (const auto& g : grids) forward_inference(model, g, schedule);
  };
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> rates;
  for (int i = 0; i < reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    run();
    auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    rates.push_back(double(grids.size()) / sec);
  }
  std::sort(rates.begin(), rates.end());
  return rates[rates.size() / 2];
}

}  // namespace mame
