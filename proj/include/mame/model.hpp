#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mame/merge.hpp"
#include "mame/ssm.hpp"

namespace mame {

struct ModelConfig {
  int depth = 6;
  int embed_dim = 32;    // D
  int state_dim = 8;     // S
  int grid_side = 8;     // P, N = P*P + 1 (cls)
  int raw_dim = 12;      // D_raw per patch
  int n_classes = 10;
  int batch_size = 32;
  bool cls_readout = false;  // default: mean over surviving tokens

  int inner_dim() const { return 2 * embed_dim; }
  int dt_rank() const { return std::max(1, embed_dim / 16); }
  int n_tokens() const { return grid_side * grid_side + 1; }
  int cls_pos() const { return (grid_side * grid_side) / 2; }
};

struct MergeSchedule {
  std::map<int, MergeLayerConfig> layers;  // layer index -> config
  ScoreMode mode = ScoreMode::mame;

  int total_r() const {
    int t = 0;
    for (auto& [l, c] : layers) t += c.r;
    return t;
  }

  void validate(const ModelConfig& cfg) const {
    for (auto& [l, c] : layers) {
      if (l < 0 || l >= cfg.depth)
        throw std::invalid_argument("merge schedule layer out of range");
      if (c.r < 0) throw std::invalid_argument("negative r");
    }
    if (total_r() >= cfg.n_tokens())
      throw std::invalid_argument("cumulative r exceeds token count");
  }
};

// Default schedule: three merge layers at ~1/3, 3/5, 5/6 depth. Shallow
// stacks can collide; duplicates are nudged forward and clipped to range.
inline std::vector<int> default_merge_layers(int depth) {
  if (depth == 6) return {2, 3, 4};
  std::vector<int> ls = {depth / 3, depth * 3 / 5, depth * 5 / 6};
  for (std::size_t i = 1; i < ls.size(); ++i)
    if (ls[i] <= ls[i - 1]) ls[i] = ls[i - 1] + 1;
  while (!ls.empty() && ls.back() >= depth) ls.pop_back();
  return ls;
}

inline MergeSchedule make_schedule(const std::vector<int>& layer_ids, int r,
                                   double tau = 10.0,
                                   DeltaIntegration f = DeltaIntegration::avg,
                                   Arrangement strategy = Arrangement::ord_front,
                                   ScoreMode mode = ScoreMode::mame) {
  MergeSchedule s;
  s.mode = mode;
  for (int l : layer_ids) s.layers[l] = MergeLayerConfig{r, tau, f, strategy};
  return s;
}

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
class ToyVim {
 public:
  ModelConfig cfg;
  Tensor<T> w_embed, b_embed;  // D_raw x D, D
  Tensor<T> cls_token;         // 1 x D
  Tensor<T> w_head, b_head;    // D x n_classes, n_classes
  std::vector<VimBlockParams<T>> blocks;

  explicit ToyVim(const ModelConfig& c, std::uint64_t seed = 0) : cfg(c) {
    std::mt19937_64 rng(seed);
    const int d = cfg.embed_dim, e = cfg.inner_dim(), s = cfg.state_dim,
              r = cfg.dt_rank();
    // fan-in scaled init so signal magnitude survives the stacked scans
    const double sd_d = 1.0 / std::sqrt(double(d));
    const double sd_e = 1.0 / std::sqrt(double(e));
    const double sd_raw = 1.0 / std::sqrt(double(cfg.raw_dim));
    w_embed = init({std::size_t(cfg.raw_dim), std::size_t(d)}, rng, sd_raw);
    b_embed = Tensor<T>({std::size_t(d)});
    cls_token = init({1, std::size_t(d)}, rng, sd_raw);
    w_head = init({std::size_t(d), std::size_t(cfg.n_classes)}, rng, sd_d);
    b_head = Tensor<T>({std::size_t(cfg.n_classes)});
    blocks.resize(cfg.depth);
    for (auto& blk : blocks) {
      blk.w_in = init({std::size_t(d), std::size_t(e)}, rng, sd_d);
      blk.b_in = Tensor<T>({std::size_t(e)});
      // residual branch starts small so the stream does not compound
      // across depth (there is no normalization to rein it in)
      blk.w_out = init({std::size_t(e), std::size_t(d)}, rng,
                       sd_e / std::sqrt(2.0 * cfg.depth));
      blk.b_out = Tensor<T>({std::size_t(d)});
      for (SsmDirectionParams<T>* dir : {&blk.fwd, &blk.bwd}) {
        dir->a_log = Tensor<T>({std::size_t(e), std::size_t(s)});
        for (int c2 = 0; c2 < e; ++c2)
          for (int k = 0; k < s; ++k)
            dir->a_log.at(c2, k) = std::log(T(k + 1));  // A = -(1..S)
        dir->w_b = init({std::size_t(e), std::size_t(s)}, rng, sd_e);
        dir->w_c = init({std::size_t(e), std::size_t(s)}, rng, sd_e);
        dir->w_dt_in = init({std::size_t(e), std::size_t(r)}, rng, sd_e);
        dir->w_dt_out = init({std::size_t(r), std::size_t(e)}, rng,
                             1.0 / std::sqrt(double(r)));
        // bias so initial delta lands around 0.01..0.1, log-uniform
        dir->b_dt = Tensor<T>({std::size_t(e)});
        std::uniform_real_distribution<double> u(std::log(0.01), std::log(0.1));
        for (int c2 = 0; c2 < e; ++c2) {
          const double dt = std::exp(u(rng));
          dir->b_dt[c2] = T(std::log(std::expm1(dt)));  // softplus inverse
        }
      }
    }
  }

  std::vector<NamedParam<T>> params() {
    std::vector<NamedParam<T>> out;
    out.push_back({"w_embed", &w_embed});
    out.push_back({"b_embed", &b_embed});
    out.push_back({"cls_token", &cls_token});
    out.push_back({"w_head", &w_head});
    out.push_back({"b_head", &b_head});
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& blk = blocks[l];
      const std::string pre = "block" + std::to_string(l) + ".";
      out.push_back({pre + "w_in", &blk.w_in});
      out.push_back({pre + "b_in", &blk.b_in});
      out.push_back({pre + "w_out", &blk.w_out});
      out.push_back({pre + "b_out", &blk.b_out});
      const char* dn[2] = {"fwd.", "bwd."};
      SsmDirectionParams<T>* dirs[2] = {&blk.fwd, &blk.bwd};
      for (int i = 0; i < 2; ++i) {
        out.push_back({pre + dn[i] + "a_log", &dirs[i]->a_log});
        out.push_back({pre + dn[i] + "w_b", &dirs[i]->w_b});
        out.push_back({pre + dn[i] + "w_c", &dirs[i]->w_c});
        out.push_back({pre + dn[i] + "w_dt_in", &dirs[i]->w_dt_in});
        out.push_back({pre + dn[i] + "w_dt_out", &dirs[i]->w_dt_out});
        out.push_back({pre + dn[i] + "b_dt", &dirs[i]->b_dt});
      }
    }
    return out;
  }

  template <typename U>
  ToyVim<U> cast() const {
    ToyVim<U> out(cfg, 0);
    auto dst = out.params();
    auto src = const_cast<ToyVim*>(this)->params();
    for (std::size_t i = 0; i < src.size(); ++i)
      *dst[i].tensor = src[i].tensor->template cast<U>();
    return out;
  }

 private:
  Tensor<T> init(std::vector<std::size_t> shape, std::mt19937_64& rng, double sd) {
    Tensor<T> t(shape);
    std::normal_distribution<double> n(0.0, sd);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(n(rng));
    return t;
  }
};

// Tape handles for every parameter, in params() order.
template <typename T>
struct ModelVars {
  Var w_embed, b_embed, cls_token, w_head, b_head;
  std::vector<VimBlockVars> blocks;
  std::vector<Var> all;
};

template <typename T>
ModelVars<T> register_params(Tape<T>& tape, ToyVim<T>& model) {
  ModelVars<T> v;
  auto reg = [&](Tensor<T>& t) {
    Var var = tape.leaf(t);
    v.all.push_back(var);
    return var;
  };
  v.w_embed = reg(model.w_embed);
  v.b_embed = reg(model.b_embed);
  v.cls_token = reg(model.cls_token);
  v.w_head = reg(model.w_head);
  v.b_head = reg(model.b_head);
  for (auto& blk : model.blocks) {
    VimBlockVars bv;
    bv.w_in = reg(blk.w_in);
    bv.b_in = reg(blk.b_in);
    bv.w_out = reg(blk.w_out);
    bv.b_out = reg(blk.b_out);
    SsmDirectionParams<T>* dirs[2] = {&blk.fwd, &blk.bwd};
    SsmDirectionVars* dvs[2] = {&bv.fwd, &bv.bwd};
    for (int i = 0; i < 2; ++i) {
      dvs[i]->a_log = reg(dirs[i]->a_log);
      dvs[i]->w_b = reg(dirs[i]->w_b);
      dvs[i]->w_c = reg(dirs[i]->w_c);
      dvs[i]->w_dt_in = reg(dirs[i]->w_dt_in);
      dvs[i]->w_dt_out = reg(dirs[i]->w_dt_out);
      dvs[i]->b_dt = reg(dirs[i]->b_dt);
    }
    v.blocks.push_back(bv);
  }
  return v;
}

// Linear per-patch projection, class token inserted at the middle position.
template <typename T>
Var patch_embed(Tape<T>& tape, const ModelVars<T>& v, const Tensor<T>& grid,
                const ModelConfig& cfg) {
  if (grid.rows() != std::size_t(cfg.grid_side * cfg.grid_side) ||
      grid.cols() != std::size_t(cfg.raw_dim))
    throw std::invalid_argument("shape: patch grid");
  Var x = tape.leaf(grid);
  Var tokens = add_row(tape, matmul(tape, x, v.w_embed), v.b_embed);
  return insert_row(tape, tokens, v.cls_token, std::size_t(cfg.cls_pos()));
}

template <typename T>
struct ForwardResult {
  Var logits;
  MergeTrace<T> trace;
  TokenSequence<T> final_seq;  // bookkeeping of the last layer (values unset)
};

// Full forward pass. Merge decisions are made on plain values; merging of
// T* and the residual stream goes through differentiable gather ops.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, ToyVim<T>& model, const ModelVars<T>& v,
                         const Tensor<T>& grid, const MergeSchedule& schedule,
                         std::mt19937_64& rng, bool collect_trace = false) {
  const ModelConfig& cfg = model.cfg;
  schedule.validate(cfg);

  Var t_cur = patch_embed(tape, v, grid, cfg);
  TokenSequence<T> seq = TokenSequence<T>::fresh(Tensor<T>({1, 1}), cfg.cls_pos());
  // bookkeeping only; values live on the tape
  seq.sizes.assign(cfg.n_tokens(), 1);
  seq.orig_index.resize(cfg.n_tokens());
  seq.members.assign(cfg.n_tokens(), {});
  for (int i = 0; i < cfg.n_tokens(); ++i) {
    seq.orig_index[i] = i;
    seq.members[i] = {i};
  }

  ForwardResult<T> res;
  for (int l = 0; l < cfg.depth; ++l) {
    VimBlockTapeOutput<T> blk = vim_block(tape, t_cur, v.blocks[l]);
    auto it = schedule.layers.find(l);
    if (it != schedule.layers.end() && it->second.r > 0) {
      seq.values = Tensor<T>{};  // values tracked on tape, not in seq
      MergeLayerPlan<T> lp = plan_merge_layer(
          seq, tape.value(blk.t_star), tape.value(blk.delta_f),
          tape.value(blk.delta_b), it->second, schedule.mode, rng);
      Var star_m = apply_plan(tape, blk.t_star, lp.plan, seq.sizes);
      Var prev_m = apply_plan(tape, t_cur, lp.plan, seq.sizes);
      t_cur = add(tape, star_m, prev_m);
      seq = apply_plan_sequence(lp.plan, seq, Tensor<T>{}, it->second.strategy,
                                lp.trace.delta_hat);
      if (collect_trace) {
        lp.trace.layer = l;
        res.trace.layers.push_back(std::move(lp.trace));
      }
    } else {
      t_cur = add(tape, blk.t_star, t_cur);
    }
  }

  Var pooled = cfg.cls_readout && seq.cls_pos
                   ? row_at(tape, t_cur, std::size_t(*seq.cls_pos))
                   : mean_rows(tape, t_cur);
  res.logits = add_row(tape, matmul(tape, pooled, v.w_head), v.b_head);
  res.final_seq = std::move(seq);
  return res;
}

// Inference-only convenience: fresh tape per call.
template <typename T>
std::pair<Tensor<T>, MergeTrace<T>> forward_inference(ToyVim<T>& model,
                                                      const Tensor<T>& grid,
                                                      const MergeSchedule& schedule,
                                                      std::uint64_t seed = 0,
                                                      bool collect_trace = false) {
  Tape<T> tape;
  ModelVars<T> v = register_params(tape, model);
  std::mt19937_64 rng(seed);
  ForwardResult<T> res = forward(tape, model, v, grid, schedule, rng, collect_trace);
  return {tape.value(res.logits), std::move(res.trace)};
}

}  // namespace mame
