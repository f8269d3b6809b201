#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mame/autodiff.hpp"
#include "mame/tensor.hpp"

namespace mame {

// phi(z) = (exp(z) - 1) / z with a series fallback near zero, so that
// Bbar = phi(delta*A) * delta * B stays well-defined as delta*A -> 0.
template <typename T>
T phi(T z) {
  if (std::abs(z) < T(1e-4)) return T(1) + z / T(2) + z * z / T(6);
  return (std::exp(z) - T(1)) / z;
}

template <typename T>
T phi_prime(T z) {
  if (std::abs(z) < T(1e-4)) return T(0.5) + z / T(3) + z * z / T(8);
  return ((z - T(1)) * std::exp(z) + T(1)) / (z * z);
}

// ZOH discretization of a diagonal channel: Abar = exp(delta*a),
// Bbar = (exp(delta*a) - 1) / (delta*a) * delta * b.
template <typename T>
std::pair<T, T> discretize_channel(T a, T b, T delta) {
  if (delta <= T(0)) throw std::invalid_argument("nonpositive step");
  const T z = delta * a;
  return {std::exp(z), phi(z) * delta * b};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>& a_diag,
                                           const Tensor<T>& b_row, T delta) {
  if (!a_diag.same_shape(b_row)) throw std::invalid_argument("shape: discretize");
  Tensor<T> abar(a_diag.shape());
  Tensor<T> bbar(a_diag.shape());
  for (std::size_t i = 0; i < a_diag.size(); ++i) {
    auto [ab, bb] = discretize_channel(a_diag[i], b_row[i], delta);
    abar[i] = ab;
    bbar[i] = bb;
  }
  return {abar, bbar};
}

// One direction of a selective-scan layer. B and C are shared across inner
// channels; delta is per channel through a low-rank projection, Mamba style.
template <typename T>
struct SsmDirectionParams {
  Tensor<T> a_log;     // E x S, A = -exp(a_log)
  Tensor<T> w_b;       // E x S
  Tensor<T> w_c;       // E x S
  Tensor<T> w_dt_in;   // E x R
  Tensor<T> w_dt_out;  // R x E
  Tensor<T> b_dt;      // E
};

template <typename T>
struct ScanOutput {
  Tensor<T> y;      // N x E
  Tensor<T> delta;  // N x E, strictly positive
};

template <typename T>
struct ScanCache {
  Tensor<T> h;  // N x E x S
  Tensor<T> b_mat;  // N x S
  Tensor<T> c_mat;  // N x S
};

template <typename T>
ScanOutput<T> selective_scan(const Tensor<T>& x, const SsmDirectionParams<T>& p,
                             ScanCache<T>* cache = nullptr) {
  const std::size_t n = x.rows(), e = x.cols(), s = p.a_log.cols();
  if (p.a_log.rows() != e) throw std::invalid_argument("shape: scan params");

  Tensor<T> pre = matmul(matmul(x, p.w_dt_in), p.w_dt_out);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < e; ++c) pre.at(t, c) += p.b_dt[c];
  Tensor<T> b_mat = matmul(x, p.w_b);
  Tensor<T> c_mat = matmul(x, p.w_c);
  if (!pre.all_finite() || !b_mat.all_finite() || !c_mat.all_finite())
    throw std::runtime_error("nonfinite");

  Tensor<T> delta = softplus(pre);
  Tensor<T> y({n, e});
  Tensor<T> h({n, e, s});

  for (std::size_t c = 0; c < e; ++c) {
    for (std::size_t k = 0; k < s; ++k) {
      const T a = -std::exp(p.a_log.at(c, k));
      T hv = 0;
      for (std::size_t t = 0; t < n; ++t) {
        const T dt = delta.at(t, c);
        const T z = dt * a;
        const T abar = std::exp(z);
        const T bbar = phi(z) * dt * b_mat.at(t, k);
        hv = abar * hv + bbar * x.at(t, c);
        h.at(t, c, k) = hv;
        y.at(t, c) += c_mat.at(t, k) * hv;
      }
    }
  }

  if (cache) {
    cache->h = std::move(h);
    cache->b_mat = std::move(b_mat);
    cache->c_mat = std::move(c_mat);
  }
  return {std::move(y), std::move(delta)};
}

template <typename T>
struct ScanGrads {
  Tensor<T> x, a_log, w_b, w_c, w_dt_in, w_dt_out, b_dt;
};

// Hand-derived adjoint of selective_scan; validated against finite
// differences in the test suite.
template <typename T>
ScanGrads<T> selective_scan_backward(const Tensor<T>& x,
                                     const SsmDirectionParams<T>& p,
                                     const ScanOutput<T>& out,
                                     const ScanCache<T>& cache,
                                     const Tensor<T>& gy,
                                     const Tensor<T>& gdelta) {
  const std::size_t n = x.rows(), e = x.cols(), s = p.a_log.cols();
  ScanGrads<T> g;
  g.x = Tensor<T>({n, e});
  g.a_log = Tensor<T>({e, s});
  g.w_b = Tensor<T>({e, s});
  g.w_c = Tensor<T>({e, s});
  g.w_dt_in = Tensor<T>(p.w_dt_in.shape());
  g.w_dt_out = Tensor<T>(p.w_dt_out.shape());
  g.b_dt = Tensor<T>({e});

  Tensor<T> g_b_mat({n, s});
  Tensor<T> g_c_mat({n, s});
  Tensor<T> g_pre({n, e});
  const Tensor<T>& delta = out.delta;

  std::vector<T> gh(s);
  for (std::size_t c = 0; c < e; ++c) {
    std::fill(gh.begin(), gh.end(), T(0));
    for (std::size_t t = n; t-- > 0;) {
      const T gy_tc = gy.empty() ? T(0) : gy.at(t, c);
      const T x_tc = x.at(t, c);
      const T dt = delta.at(t, c);
      T gdt = gdelta.empty() ? T(0) : gdelta.at(t, c);
      T gx_tc = 0;
      for (std::size_t k = 0; k < s; ++k) {
        const T hv = cache.h.at(t, c, k);
        gh[k] += gy_tc * cache.c_mat.at(t, k);
        g_c_mat.at(t, k) += gy_tc * hv;

        const T a = -std::exp(p.a_log.at(c, k));
        const T z = dt * a;
        const T abar = std::exp(z);
        const T ph = phi(z);
        const T b_tk = cache.b_mat.at(t, k);
        const T hprev = t > 0 ? cache.h.at(t - 1, c, k) : T(0);

        const T gcur = gh[k];
        const T gabar = gcur * hprev;
        const T gbbar = gcur * x_tc;
        gx_tc += gcur * ph * dt * b_tk;

        const T gz = gabar * abar + gbbar * phi_prime(z) * dt * b_tk;
        gdt += gbbar * ph * b_tk + gz * a;
        g_b_mat.at(t, k) += gbbar * ph * dt;
        g.a_log.at(c, k) += gz * dt * a;  // dA/da_log = A

        gh[k] = gcur * abar;
      }
      g.x.at(t, c) += gx_tc;
      // d softplus / d pre = sigmoid(pre) = 1 - exp(-delta)
      g_pre.at(t, c) = gdt * (T(1) - std::exp(-dt));
    }
  }

  // Projection adjoints.
  Tensor<T> xt = transpose(x);
  {
    Tensor<T> gx_b = matmul(g_b_mat, transpose(p.w_b));
    Tensor<T> gx_c = matmul(g_c_mat, transpose(p.w_c));
    for (std::size_t i = 0; i < g.x.size(); ++i) g.x[i] += gx_b[i] + gx_c[i];
    g.w_b = matmul(xt, g_b_mat);
    g.w_c = matmul(xt, g_c_mat);
  }
  {
    Tensor<T> dt_mid = matmul(x, p.w_dt_in);  // N x R
    Tensor<T> g_mid = matmul(g_pre, transpose(p.w_dt_out));
    Tensor<T> gx_dt = matmul(g_mid, transpose(p.w_dt_in));
    for (std::size_t i = 0; i < g.x.size(); ++i) g.x[i] += gx_dt[i];
    g.w_dt_out = matmul(transpose(dt_mid), g_pre);
    g.w_dt_in = matmul(xt, g_mid);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < e; ++c) g.b_dt[c] += g_pre.at(t, c);
  }
  return g;
}

// Tape leaves for one scan direction.
struct SsmDirectionVars {
  Var a_log, w_b, w_c, w_dt_in, w_dt_out, b_dt;
};

template <typename T>
SsmDirectionParams<T> direction_params(const Tape<T>& tape, const SsmDirectionVars& v) {
  return {tape.value(v.a_log), tape.value(v.w_b), tape.value(v.w_c),
          tape.value(v.w_dt_in), tape.value(v.w_dt_out), tape.value(v.b_dt)};
}

// Fused differentiable scan. Returns (y, delta) as tape nodes; the delta
// node carries no backward of its own — its adjoint is consumed by y's.
template <typename T>
std::pair<Var, Var> selective_scan(Tape<T>& tape, Var x, const SsmDirectionVars& v) {
  SsmDirectionParams<T> p = direction_params(tape, v);
  auto cache = std::make_shared<ScanCache<T>>();
  ScanOutput<T> out = selective_scan(tape.value(x), p, cache.get());
  Var delta_var = tape.push(out.delta);
  Var y_var = tape.push(
      std::move(out.y),
      [x, v, cache, delta_var, o_id = tape.size()](Tape<T>& t) {
        SsmDirectionParams<T> p = direction_params(t, v);
        const Tensor<T>& gy = t.grad(Var{o_id});
        const Tensor<T> gdelta =
            t.has_grad(delta_var) ? t.grad(delta_var) : Tensor<T>{};
        ScanOutput<T> out{t.value(Var{o_id}), t.value(delta_var)};
        ScanGrads<T> g = selective_scan_backward(t.value(x), p, out, *cache,
                                                 gy, gdelta);
        auto acc = [&t](Var dst, const Tensor<T>& src) {
          Tensor<T>& d = t.grad(dst);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
        };
        acc(x, g.x);
        acc(v.a_log, g.a_log);
        acc(v.w_b, g.w_b);
        acc(v.w_c, g.w_c);
        acc(v.w_dt_in, g.w_dt_in);
        acc(v.w_dt_out, g.w_dt_out);
        acc(v.b_dt, g.b_dt);
      });
  return {y_var, delta_var};
}

// Simplified ViM block: in_proj -> bidirectional scan -> out_proj + residual.
// The causal conv and gating branch of the full Mamba block are omitted.
template <typename T>
struct VimBlockParams {
  Tensor<T> w_in, b_in;    // D x E, E
  Tensor<T> w_out, b_out;  // E x D, D
  SsmDirectionParams<T> fwd, bwd;
};

struct VimBlockVars {
  Var w_in, b_in, w_out, b_out;
  SsmDirectionVars fwd, bwd;
};

template <typename T>
struct VimBlockOutput {
  Tensor<T> t_star;   // N x D, pre-residual
  Tensor<T> t_next;   // N x D, t_star + t_prev
  Tensor<T> delta_f;  // N x E
  Tensor<T> delta_b;  // N x E
};

template <typename T>
Tensor<T> reversed_rows(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      out.at(r, c) = a.at(a.rows() - 1 - r, c);
  return out;
}

template <typename T>
VimBlockOutput<T> vim_block(const Tensor<T>& t_prev, const VimBlockParams<T>& p) {
  if (!t_prev.all_finite()) throw std::runtime_error("nonfinite");
  Tensor<T> x = matmul(t_prev, p.w_in);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x.at(r, c) += p.b_in[c];

  ScanOutput<T> fwd = selective_scan(x, p.fwd);
  ScanOutput<T> brev = selective_scan(reversed_rows(x), p.bwd);
  Tensor<T> y_b = reversed_rows(brev.y);
  Tensor<T> delta_b = reversed_rows(brev.delta);

  Tensor<T> y_sum = add(fwd.y, y_b);
  Tensor<T> t_star = matmul(y_sum, p.w_out);
  for (std::size_t r = 0; r < t_star.rows(); ++r)
    for (std::size_t c = 0; c < t_star.cols(); ++c) t_star.at(r, c) += p.b_out[c];

  return {t_star, add(t_star, t_prev), std::move(fwd.delta), std::move(delta_b)};
}

// Tape version used by the model; returns (t_star, delta_f, delta_b).
template <typename T>
struct VimBlockTapeOutput {
  Var t_star;
  Var delta_f;
  Var delta_b;
};

template <typename T>
VimBlockTapeOutput<T> vim_block(Tape<T>& tape, Var t_prev, const VimBlockVars& v) {
  Var x = add_row(tape, matmul(tape, t_prev, v.w_in), v.b_in);
  auto [y_f, d_f] = selective_scan(tape, x, v.fwd);
  Var x_rev = reverse_rows(tape, x);
  auto [y_br, d_br] = selective_scan(tape, x_rev, v.bwd);
  Var y_b = reverse_rows(tape, y_br);
  Var d_b = reverse_rows(tape, d_br);
  Var t_star = add_row(tape, matmul(tape, add(tape, y_f, y_b), v.w_out), v.b_out);
  return {t_star, d_f, d_b};
}

}  // namespace mame
