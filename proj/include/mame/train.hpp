#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mame/bench.hpp"
#include "mame/data.hpp"
#include "mame/model.hpp"

namespace mame {

struct TrainConfig {
  int epochs = 15;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  int warmup_epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string optimizer = "adamw";  // or "sgd"
  double max_grad_norm = 1.0;      // global-norm clip; <=0 disables
  double momentum = 0.9;           // sgd only
  int threads = 1;

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("lr must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1 || threads < 1) throw std::invalid_argument("bad train config");
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
};

namespace detail {

// Run fn(i) for i in [0, n) across `threads` workers. Work is claimed via an
// atomic counter; outputs must be written to per-index slots so reduction
// order stays fixed.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline std::size_t argmax_row(const Tensor<float>& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

}  // namespace detail

struct SampleResult {
  double loss = 0;
  bool correct = false;
  std::vector<std::vector<float>> grads;  // per param, flat
};

// Loss + gradients for one sample on a fresh tape.
inline SampleResult sample_backward(ToyVim<float>& model, const Sample& s,
                                    const MergeSchedule& schedule,
                                    std::uint64_t rng_seed) {
  Tape<float> tape;
  ModelVars<float> vars = register_params(tape, model);
  std::mt19937_64 rng(rng_seed);
  ForwardResult<float> res = forward(tape, model, vars, s.grid, schedule, rng);
  Var loss = softmax_cross_entropy(tape, res.logits, s.label);
  tape.backward(loss);

  SampleResult out;
  out.loss = tape.value(loss)[0];
  out.correct = detail::argmax_row(tape.value(res.logits)) == s.label;
  out.grads.reserve(vars.all.size());
  for (Var p : vars.all) {
    if (tape.has_grad(p))
      out.grads.push_back(tape.grad(p).data());
    else
      out.grads.push_back(std::vector<float>(tape.value(p).size(), 0.f));
  }
  return out;
}

class Optimizer {
 public:
  Optimizer(std::vector<NamedParam<float>> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor->size(), 0.f);
      v_[i].assign(params_[i].tensor->size(), 0.f);
    }
  }

  void step(const std::vector<std::vector<double>>& grads, double lr) {
    ++t_;
    const bool adam = cfg_.optimizer == "adamw";
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, mom = cfg_.momentum;
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& w = params_[p].tensor->data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = grads[p][i];
        if (adam) {
          m_[p][i] = float(b1 * m_[p][i] + (1 - b1) * g);
          v_[p][i] = float(b2 * v_[p][i] + (1 - b2) * g * g);
          const double mh = m_[p][i] / (1 - std::pow(b1, t_));
          const double vh = v_[p][i] / (1 - std::pow(b2, t_));
          w[i] = float(w[i] - lr * (mh / (std::sqrt(vh) + eps) +
                                    cfg_.weight_decay * w[i]));
        } else {
          m_[p][i] = float(mom * m_[p][i] + g + cfg_.weight_decay * w[i]);
          w[i] = float(w[i] - lr * m_[p][i]);
        }
      }
    }
  }

 private:
  std::vector<NamedParam<float>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

// Linear warmup then cosine decay, per epoch.
inline double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < cfg.warmup_epochs) return cfg.lr * double(epoch + 1) / cfg.warmup_epochs;
  const double p = double(epoch - cfg.warmup_epochs) /
                   std::max(1, cfg.epochs - cfg.warmup_epochs);
  return cfg.lr * 0.5 * (1.0 + std::cos(p * 3.14159265358979323846));
}

struct EvalResult {
  double loss = 0;
  double acc = 0;
};

inline EvalResult evaluate(ToyVim<float>& model, const Dataset& data,
                           const MergeSchedule& schedule, std::uint64_t seed = 0,
                           int threads = 1) {
  if (data.samples.empty()) throw std::invalid_argument("empty dataset");
  std::vector<double> losses(data.samples.size());
  std::vector<char> correct(data.samples.size());
  std::exception_ptr err;
  std::mutex err_mu;
  detail::parallel_for(data.samples.size(), threads, [&](std::size_t i) {
    try {
      const Sample& s = data.samples[i];
      Tape<float> tape;
      ModelVars<float> vars = register_params(tape, model);
      std::mt19937_64 rng(seed ^ (i * 0x9e3779b97f4a7c15ULL));
      ForwardResult<float> res = forward(tape, model, vars, s.grid, schedule, rng);
      const Tensor<float>& logits = tape.value(res.logits);
      Var loss = softmax_cross_entropy(tape, res.logits, s.label);
      losses[i] = tape.value(loss)[0];
      correct[i] = detail::argmax_row(logits) == s.label;
    } catch (...) {
      std::lock_guard<std::mutex> lk(err_mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
  EvalResult out;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out.loss += losses[i];
    out.acc += correct[i] ? 1.0 : 0.0;
  }
  out.loss /= double(losses.size());
  out.acc /= double(losses.size());
  return out;
}

// Deterministic for a fixed config: batch order comes from the seed and
// per-sample gradients are reduced in sample order regardless of threads.
inline std::vector<EpochMetrics> train(ToyVim<float>& model, const Dataset& train_set,
                                       const Dataset& val_set, const TrainConfig& cfg,
                                       const MergeSchedule& schedule = {}) {
  cfg.validate();
  if (train_set.samples.empty()) throw std::invalid_argument("empty dataset");
  auto params = model.params();
  Optimizer opt(params, cfg);
  std::mt19937_64 shuffle_rng(cfg.seed);

  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochMetrics> metrics;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = lr_at(cfg, epoch);
    double ep_loss = 0, ep_acc = 0;

    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t bn = std::min(order.size() - b0, std::size_t(cfg.batch_size));
      std::vector<SampleResult> results(bn);
      std::exception_ptr err;
      std::mutex err_mu;
      detail::parallel_for(bn, cfg.threads, [&](std::size_t k) {
        try {
          const Sample& s = train_set.samples[order[b0 + k]];
          const std::uint64_t rs =
              cfg.seed ^ ((std::uint64_t(epoch) << 32 | (b0 + k)) * 0x9e3779b97f4a7c15ULL);
          results[k] = sample_backward(model, s, schedule, rs);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      });
      if (err) std::rethrow_exception(err);

      std::vector<std::vector<double>> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p)
        grads[p].assign(params[p].tensor->size(), 0.0);
      for (const SampleResult& r : results) {  // fixed order reduction
        ep_loss += r.loss;
        ep_acc += r.correct ? 1.0 : 0.0;
        for (std::size_t p = 0; p < params.size(); ++p)
          for (std::size_t i = 0; i < grads[p].size(); ++i)
            grads[p][i] += r.grads[p][i] / double(bn);
      }
      if (cfg.max_grad_norm > 0) {
        double sq = 0;
        for (auto& g : grads)
          for (double v : g) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > cfg.max_grad_norm) {
          const double s = cfg.max_grad_norm / norm;
          for (auto& g : grads)
            for (double& v : g) v *= s;
        }
      }
      opt.step(grads, lr);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = ep_loss / double(order.size());
    m.train_acc = ep_acc / double(order.size());
    EvalResult ev = evaluate(model, val_set, schedule, cfg.seed, cfg.threads);
    m.val_loss = ev.loss;
    m.val_acc = ev.acc;
    metrics.push_back(m);
  }
  return metrics;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "epoch,split,loss,acc\n";
  for (const auto& m : metrics) {
    out << m.epoch << ",train," << m.train_loss << "," << m.train_acc << "\n";
    out << m.epoch << ",val," << m.val_loss << "," << m.val_acc << "\n";
  }
}

// --- sweeps -------------------------------------------------------------

struct SweepRow {
  std::string value;
  double acc = 0;
  double flops = 0;
  double img_per_s = 0;
};

struct SweepSpec {
  std::string axis;  // tau | r | layers | strategy | f
  std::vector<std::string> values;
  MergeSchedule base;
  bool measure_speed = false;
  std::uint64_t seed = 0;
  int threads = 1;
};

inline std::vector<int> parse_layer_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '+')) out.push_back(std::stoi(tok));
  return out;
}

inline MergeSchedule schedule_for_value(const MergeSchedule& base,
                                        const std::string& axis,
                                        const std::string& value) {
  MergeSchedule s = base;
  if (axis == "tau") {
    for (auto& [l, c] : s.layers) c.tau = std::stod(value);
  } else if (axis == "r") {
    for (auto& [l, c] : s.layers) c.r = std::stoi(value);
  } else if (axis == "strategy") {
    for (auto& [l, c] : s.layers) c.strategy = parse_arrangement(value);
  } else if (axis == "f") {
    for (auto& [l, c] : s.layers) c.integration = parse_integration(value);
  } else if (axis == "layers") {
    // value like "2+3+4"; keeps the base per-layer settings of the first entry
    MergeLayerConfig proto =
        s.layers.empty() ? MergeLayerConfig{} : s.layers.begin()->second;
    s.layers.clear();
    for (int l : parse_layer_list(value)) s.layers[l] = proto;
  } else {
    throw std::invalid_argument("unknown sweep axis: " + axis);
  }
  return s;
}

inline std::vector<SweepRow> sweep(ToyVim<float>& model, const Dataset& data,
                                   const SweepSpec& spec) {
  std::vector<SweepRow> rows;
  for (const std::string& v : spec.values) {
    MergeSchedule s = schedule_for_value(spec.base, spec.axis, v);
    SweepRow row;
    row.value = v;
    row.acc = evaluate(model, data, s, spec.seed, spec.threads).acc;
    row.flops = estimate_flops(FlopsConfig::from_model(model.cfg), schedule_r_map(s))
                    .total_scheduled;
    if (spec.measure_speed) {
      std::vector<Tensor<float>> grids;
      for (std::size_t i = 0; i < std::min<std::size_t>(32, data.samples.size()); ++i)
        grids.push_back(data.samples[i].grid);
      row.img_per_s = measure_throughput(model, grids, s, 1, 3);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << axis << ",acc,estimated_flops,img_per_s\n";
  for (const auto& r : rows)
    out << r.value << "," << r.acc << "," << r.flops << "," << r.img_per_s << "\n";
}

inline std::string sweep_table(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << axis << "\tacc\tflops\timg/s\n";
  for (const auto& r : rows)
    os << r.value << "\t" << r.acc << "\t" << r.flops << "\t" << r.img_per_s << "\n";
  return os.str();
}

}  // namespace mame
