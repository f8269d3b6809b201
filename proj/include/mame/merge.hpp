#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mame/autodiff.hpp"
#include "mame/tensor.hpp"
#include "json.hpp"

namespace mame {

enum class DeltaIntegration { max, min, avg, sum };
enum class Arrangement { iso_front, iso_last, dst_pos, informativeness, ord_front, ord_mid };
enum class ScoreMode { mame, similarity_only, random_score };

inline std::string to_string(DeltaIntegration f) {
  switch (f) {
    case DeltaIntegration::max: return "max";
    case DeltaIntegration::min: return "min";
    case DeltaIntegration::avg: return "avg";
    case DeltaIntegration::sum: return "sum";
  }
  return "?";
}

inline std::string to_string(Arrangement a) {
  switch (a) {
    case Arrangement::iso_front: return "iso_front";
    case Arrangement::iso_last: return "iso_last";
    case Arrangement::dst_pos: return "dst_pos";
    case Arrangement::informativeness: return "informativeness";
    case Arrangement::ord_front: return "ord_front";
    case Arrangement::ord_mid: return "ord_mid";
  }
  return "?";
}

inline std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::mame: return "mame";
    case ScoreMode::similarity_only: return "similarity_only";
    case ScoreMode::random_score: return "random_score";
  }
  return "?";
}

inline DeltaIntegration parse_integration(const std::string& s) {
  if (s == "max") return DeltaIntegration::max;
  if (s == "min") return DeltaIntegration::min;
  if (s == "avg") return DeltaIntegration::avg;
  if (s == "sum") return DeltaIntegration::sum;
  throw std::invalid_argument("unknown integration function: " + s);
}

inline Arrangement parse_arrangement(const std::string& s) {
  if (s == "iso_front") return Arrangement::iso_front;
  if (s == "iso_last") return Arrangement::iso_last;
  if (s == "dst_pos") return Arrangement::dst_pos;
  if (s == "informativeness") return Arrangement::informativeness;
  if (s == "ord_front") return Arrangement::ord_front;
  if (s == "ord_mid") return Arrangement::ord_mid;
  throw std::invalid_argument("unknown strategy: " + s);
}

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "mame") return ScoreMode::mame;
  if (s == "similarity_only" || s == "sim") return ScoreMode::similarity_only;
  if (s == "random_score" || s == "random") return ScoreMode::random_score;
  throw std::invalid_argument("unknown score mode: " + s);
}

// Token sequence with merge bookkeeping. `members` lists the original token
// indices absorbed into each current token; `orig_index` is the
// representative original position used for ordering.
template <typename T>
struct TokenSequence {
  Tensor<T> values;  // N x D
  std::vector<int> sizes;
  std::vector<int> orig_index;
  std::vector<std::vector<int>> members;
  std::optional<int> cls_pos;

  std::size_t length() const { return sizes.size(); }

  static TokenSequence fresh(Tensor<T> values, std::optional<int> cls = {}) {
    TokenSequence s;
    const int n = static_cast<int>(values.rows());
    s.values = std::move(values);
    s.sizes.assign(n, 1);
    s.orig_index.resize(n);
    s.members.resize(n);
    for (int i = 0; i < n; ++i) {
      s.orig_index[i] = i;
      s.members[i] = {i};
    }
    s.cls_pos = cls;
    return s;
  }

  int total_size() const {
    int t = 0;
    for (int v : sizes) t += v;
    return t;
  }
};

struct MergeLayerConfig {
  int r = 0;
  double tau = 10.0;
  DeltaIntegration integration = DeltaIntegration::avg;
  Arrangement strategy = Arrangement::ord_front;
};

struct MergeDecision {
  std::vector<std::pair<int, int>> pairs;        // (src_pos, dst_pos), current positions
  std::vector<std::vector<int>> partition;       // per surviving slot: original indices
  Arrangement strategy = Arrangement::ord_front;
  double tau = 10.0;
  DeltaIntegration integration = DeltaIntegration::avg;
};

template <typename T>
struct MergeTraceLayer {
  int layer = 0;
  std::vector<T> delta_hat;
  Tensor<T> w_sim;    // src x dst
  Tensor<T> w_delta;  // src x dst
  Tensor<T> score;    // src x dst
  MergeDecision decision;
};

template <typename T>
struct MergeTrace {
  std::vector<MergeTraceLayer<T>> layers;
};

// --- scoring -----------------------------------------------------------

// Channel-mean each direction, then combine per token with f.
template <typename T>
std::vector<T> integrate_delta(const Tensor<T>& delta_f, const Tensor<T>& delta_b,
                               DeltaIntegration f) {
  if (!delta_f.same_shape(delta_b)) throw std::invalid_argument("shape: integrate_delta");
  const std::size_t n = delta_f.rows(), e = delta_f.cols();
  std::vector<T> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    T mf = 0, mb = 0;
    for (std::size_t c = 0; c < e; ++c) {
      mf += delta_f.at(t, c);
      mb += delta_b.at(t, c);
    }
    mf /= T(e);
    mb /= T(e);
    switch (f) {
      case DeltaIntegration::max: out[t] = std::max(mf, mb); break;
      case DeltaIntegration::min: out[t] = std::min(mf, mb); break;
      case DeltaIntegration::avg: out[t] = (mf + mb) / T(2); break;
      case DeltaIntegration::sum: out[t] = mf + mb; break;
    }
  }
  return out;
}

// (cos + 1) / 2; a zero-norm vector is treated as orthogonal to everything.
template <typename T>
T similarity_weight(const T* a, const T* b, std::size_t d) {
  T ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == T(0) || bb == T(0)) return T(0.5);
  T cosv = ab / (std::sqrt(aa) * std::sqrt(bb));
  cosv = std::clamp(cosv, T(-1), T(1));
  return (cosv + T(1)) / T(2);
}

template <typename T>
T delta_weight(T dh_i, T dh_j, T tau) {
  if (tau <= T(0)) throw std::invalid_argument("tau must be positive");
  return std::exp(-(dh_i + dh_j) / (T(2) * tau));
}

template <typename T>
Tensor<T> merge_score(const Tensor<T>& w_sim, const Tensor<T>& w_delta) {
  return hadamard(w_sim, w_delta);
}

// Non-protected tokens at even current positions form src, odd form dst.
inline void split_src_dst(std::size_t n, std::optional<int> cls_pos,
                          std::vector<int>& src, std::vector<int>& dst) {
  src.clear();
  dst.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (cls_pos && static_cast<int>(i) == *cls_pos) continue;
    (i % 2 == 0 ? src : dst).push_back(static_cast<int>(i));
  }
}

// --- matching ----------------------------------------------------------

// Each src row picks its best dst (ties: lower dst index); the r srcs with
// the highest best-scores merge (ties: lower src index).
inline std::vector<std::pair<int, int>> bipartite_match_indices(
    const Tensor<double>& score, int r) {
  const int ns = static_cast<int>(score.rows());
  const int nd = static_cast<int>(score.cols());
  if (r > ns) throw std::invalid_argument("reduction exceeds source set");
  if (r > 0 && nd == 0) throw std::invalid_argument("reduction exceeds source set");

  std::vector<int> best(ns, 0);
  for (int i = 0; i < ns; ++i)
    for (int j = 1; j < nd; ++j)
      if (score.at(i, j) > score.at(i, best[i])) best[i] = j;

  std::vector<int> order(ns);
  for (int i = 0; i < ns; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = score.at(a, best[a]);
    const double sb = score.at(b, best[b]);
    if (sa != sb) return sa > sb;
    return a < b;
  });

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(r);
  for (int k = 0; k < r; ++k) pairs.push_back({order[k], best[order[k]]});
  return pairs;
}

// --- merging and arrangement -------------------------------------------

struct MergeGroup {
  std::vector<int> slots;  // participating current positions, ascending
  int anchor_slot = -1;    // dst slot for merged groups, own slot otherwise
  bool merged = false;
};

struct MergePlan {
  std::vector<MergeGroup> groups;  // in final output order
};

// Group tokens by the pair list, output in current-slot order of the anchor.
inline std::vector<MergeGroup> build_groups(std::size_t n,
                                            const std::vector<std::pair<int, int>>& pairs) {
  std::vector<std::vector<int>> absorbed(n);
  std::vector<bool> removed(n, false);
  for (auto [s, d] : pairs) {
    if (s < 0 || d < 0 || s >= static_cast<int>(n) || d >= static_cast<int>(n) ||
        removed[s])
      throw std::invalid_argument("invalid merge pair");
    absorbed[d].push_back(s);
    removed[s] = true;
  }
  std::vector<MergeGroup> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    MergeGroup g;
    g.anchor_slot = static_cast<int>(i);
    g.slots = absorbed[i];
    g.slots.push_back(static_cast<int>(i));
    std::sort(g.slots.begin(), g.slots.end());
    g.merged = !absorbed[i].empty();
    groups.push_back(std::move(g));
  }
  return groups;
}

// Decide each group's output position per the arrangement strategy.
// Internal strategies give every group a representative slot and sort by it;
// isolated strategies pull merged groups out to a boundary.
template <typename T>
MergePlan arrange_groups(std::vector<MergeGroup> groups, Arrangement strategy,
                         const std::vector<T>& delta_hat) {
  auto rep_slot = [&](const MergeGroup& g) -> int {
    if (!g.merged) return g.anchor_slot;
    switch (strategy) {
      case Arrangement::dst_pos:
        return g.anchor_slot;
      case Arrangement::ord_front:
        return g.slots.front();
      case Arrangement::ord_mid:
        return g.slots[(g.slots.size() - 1) / 2];
      case Arrangement::informativeness: {
        int best = g.slots.front();
        for (int s : g.slots)
          if (delta_hat[s] > delta_hat[best]) best = s;
        return best;
      }
      default:
        return g.anchor_slot;
    }
  };

  MergePlan plan;
  if (strategy == Arrangement::iso_front || strategy == Arrangement::iso_last) {
    std::vector<MergeGroup> merged, survivors;
    for (auto& g : groups) (g.merged ? merged : survivors).push_back(g);
    if (strategy == Arrangement::iso_front) {
      plan.groups = std::move(merged);
      plan.groups.insert(plan.groups.end(), survivors.begin(), survivors.end());
    } else {
      plan.groups = std::move(survivors);
      plan.groups.insert(plan.groups.end(), merged.begin(), merged.end());
    }
    return plan;
  }

  std::stable_sort(groups.begin(), groups.end(),
                   [&](const MergeGroup& a, const MergeGroup& b) {
                     return rep_slot(a) < rep_slot(b);
                   });
  plan.groups = std::move(groups);
  return plan;
}

// Size-weighted merge of values per plan; destination-anchored weighting.
template <typename T>
Tensor<T> apply_plan_values(const MergePlan& plan, const Tensor<T>& values,
                            const std::vector<int>& sizes) {
  const std::size_t d = values.cols();
  Tensor<T> out({plan.groups.size(), d});
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    T total = 0;
    for (int s : plan.groups[g].slots) total += T(sizes[s]);
    for (int s : plan.groups[g].slots) {
      const T w = T(sizes[s]) / total;
      const T* src = values.row_ptr(s);
      T* dstp = out.row_ptr(g);
      for (std::size_t c = 0; c < d; ++c) dstp[c] += w * src[c];
    }
  }
  return out;
}

// Differentiable version: the plan (a discrete decision) is treated as a
// constant; gradients scatter back through the weighted average.
template <typename T>
Var apply_plan(Tape<T>& tape, Var values, const MergePlan& plan,
               const std::vector<int>& sizes) {
  Tensor<T> out = apply_plan_values(plan, tape.value(values), sizes);
  return tape.push(std::move(out), [values, plan, sizes, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& gv = t.grad(values);
    const std::size_t d = g.cols();
    for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
      T total = 0;
      for (int s : plan.groups[gi].slots) total += T(sizes[s]);
      for (int s : plan.groups[gi].slots) {
        const T w = T(sizes[s]) / total;
        const T* grow = g.row_ptr(gi);
        T* vrow = gv.row_ptr(s);
        for (std::size_t c = 0; c < d; ++c) vrow[c] += w * grow[c];
      }
    }
  });
}

// New bookkeeping after applying a plan. The representative for a merged
// group follows the arrangement strategy (anchor for isolated/dst).
template <typename T>
TokenSequence<T> apply_plan_sequence(const MergePlan& plan, const TokenSequence<T>& seq,
                                     Tensor<T> merged_values, Arrangement strategy,
                                     const std::vector<T>& delta_hat) {
  TokenSequence<T> out;
  out.values = std::move(merged_values);
  out.sizes.reserve(plan.groups.size());
  out.orig_index.reserve(plan.groups.size());
  out.members.reserve(plan.groups.size());
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const MergeGroup& grp = plan.groups[g];
    int size = 0;
    std::vector<int> members;
    for (int s : grp.slots) {
      size += seq.sizes[s];
      members.insert(members.end(), seq.members[s].begin(), seq.members[s].end());
    }
    std::sort(members.begin(), members.end());

    int rep_from;
    if (!grp.merged) {
      rep_from = grp.anchor_slot;
    } else {
      switch (strategy) {
        case Arrangement::ord_front: rep_from = grp.slots.front(); break;
        case Arrangement::ord_mid: rep_from = grp.slots[(grp.slots.size() - 1) / 2]; break;
        case Arrangement::informativeness: {
          rep_from = grp.slots.front();
          for (int s : grp.slots)
            if (delta_hat[s] > delta_hat[rep_from]) rep_from = s;
          break;
        }
        default: rep_from = grp.anchor_slot; break;
      }
    }
    out.orig_index.push_back(seq.orig_index[rep_from]);
    out.sizes.push_back(size);
    out.members.push_back(std::move(members));

    if (seq.cls_pos && grp.anchor_slot == *seq.cls_pos)
      out.cls_pos = static_cast<int>(g);
  }
  return out;
}

// merge_tokens per the spec contract: destination-anchored merging without
// rearrangement (output stays in current-slot order).
template <typename T>
TokenSequence<T> merge_tokens(const TokenSequence<T>& seq,
                              const std::vector<std::pair<int, int>>& pairs) {
  std::vector<MergeGroup> groups = build_groups(seq.length(), pairs);
  MergePlan plan{std::move(groups)};
  Tensor<T> vals = apply_plan_values(plan, seq.values, seq.sizes);
  return apply_plan_sequence(plan, seq, std::move(vals), Arrangement::dst_pos, {});
}

// --- full layer --------------------------------------------------------

template <typename T>
struct MergeLayerPlan {
  MergePlan plan;
  MergeTraceLayer<T> trace;
};

// Score + match + arrange; does not touch values. `rng` is only consumed in
// random_score mode.
template <typename T>
MergeLayerPlan<T> plan_merge_layer(const TokenSequence<T>& seq,
                                   const Tensor<T>& t_star,
                                   const Tensor<T>& delta_f,
                                   const Tensor<T>& delta_b,
                                   const MergeLayerConfig& cfg, ScoreMode mode,
                                   std::mt19937_64& rng) {
  const std::size_t n = seq.length();
  MergeLayerPlan<T> out;
  out.trace.decision.strategy = cfg.strategy;
  out.trace.decision.tau = cfg.tau;
  out.trace.decision.integration = cfg.integration;

  std::vector<T> delta_hat = integrate_delta(delta_f, delta_b, cfg.integration);
  out.trace.delta_hat = delta_hat;

  std::vector<int> src, dst;
  split_src_dst(n, seq.cls_pos, src, dst);
  if (cfg.r > static_cast<int>(src.size()))
    throw std::invalid_argument("reduction exceeds source set");

  const std::size_t ns = src.size(), nd = dst.size();
  Tensor<T> w_sim({std::max<std::size_t>(ns, 1), std::max<std::size_t>(nd, 1)});
  Tensor<T> w_delta(w_sim.shape());
  Tensor<double> score({std::max<std::size_t>(ns, 1), std::max<std::size_t>(nd, 1)});
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < nd; ++j) {
      const T ws = similarity_weight(t_star.row_ptr(src[i]), t_star.row_ptr(dst[j]),
                                     t_star.cols());
      const T wd = delta_weight(delta_hat[src[i]], delta_hat[dst[j]], T(cfg.tau));
      w_sim.at(i, j) = ws;
      w_delta.at(i, j) = wd;
      switch (mode) {
        case ScoreMode::mame: score.at(i, j) = double(ws) * double(wd); break;
        case ScoreMode::similarity_only: score.at(i, j) = double(ws); break;
        case ScoreMode::random_score: score.at(i, j) = uni(rng); break;
      }
    }
  }
  out.trace.w_sim = std::move(w_sim);
  out.trace.w_delta = std::move(w_delta);
  out.trace.score = Tensor<T>(score.shape());
  for (std::size_t i = 0; i < score.size(); ++i)
    out.trace.score[i] = T(score[i]);

  std::vector<std::pair<int, int>> pairs;
  for (auto [si, dj] : bipartite_match_indices(score, cfg.r))
    pairs.push_back({src[si], dst[dj]});
  out.trace.decision.pairs = pairs;

  std::vector<MergeGroup> groups = build_groups(n, pairs);
  out.plan = arrange_groups(std::move(groups), cfg.strategy, delta_hat);

  for (const MergeGroup& g : out.plan.groups) {
    std::vector<int> cell;
    for (int s : g.slots)
      cell.insert(cell.end(), seq.members[s].begin(), seq.members[s].end());
    std::sort(cell.begin(), cell.end());
    out.trace.decision.partition.push_back(std::move(cell));
  }
  return out;
}

// Plain (non-autodiff) MaMe layer: merge T* and the residual stream with the
// identical plan, then sum.
template <typename T>
std::pair<TokenSequence<T>, MergeTraceLayer<T>> mame_layer(
    const TokenSequence<T>& t_prev, const Tensor<T>& delta_f,
    const Tensor<T>& delta_b, const Tensor<T>& t_star,
    const MergeLayerConfig& cfg, ScoreMode mode, std::mt19937_64& rng) {
  MergeLayerPlan<T> lp = plan_merge_layer(t_prev, t_star, delta_f, delta_b, cfg,
                                          mode, rng);
  Tensor<T> star_merged = apply_plan_values(lp.plan, t_star, t_prev.sizes);
  Tensor<T> prev_merged = apply_plan_values(lp.plan, t_prev.values, t_prev.sizes);
  TokenSequence<T> next = apply_plan_sequence(lp.plan, t_prev,
                                              add(star_merged, prev_merged),
                                              cfg.strategy, lp.trace.delta_hat);
  return {std::move(next), std::move(lp.trace)};
}

// residual_merge per the spec contract: regroup the previous-layer stream by
// an already-computed plan.
template <typename T>
TokenSequence<T> residual_merge(const TokenSequence<T>& t_prev, const MergePlan& plan,
                                Arrangement strategy, const std::vector<T>& delta_hat) {
  Tensor<T> vals = apply_plan_values(plan, t_prev.values, t_prev.sizes);
  return apply_plan_sequence(plan, t_prev, std::move(vals), strategy, delta_hat);
}

// --- trace serialization ------------------------------------------------

template <typename T>
nlohmann::json trace_to_json(const MergeTrace<T>& trace) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : trace.layers) {
    nlohmann::json jl;
    jl["layer"] = l.layer;
    jl["delta_hat"] = l.delta_hat;
    nlohmann::json pairs = nlohmann::json::array();
    for (auto [s, d] : l.decision.pairs) pairs.push_back({s, d});
    jl["pairs"] = pairs;
    jl["partition"] = l.decision.partition;
    jl["strategy"] = to_string(l.decision.strategy);
    jl["tau"] = l.decision.tau;
    jl["integration"] = to_string(l.decision.integration);
    jl["r"] = static_cast<int>(l.decision.pairs.size());
    layers.push_back(std::move(jl));
  }
  return nlohmann::json{{"layers", std::move(layers)}};
}

}  // namespace mame
