#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mame/tensor.hpp"

namespace mame {

struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape over Tensor values. Node ids are topological by
// construction; backward() replays them once in reverse.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  Var push(Tensor<T> value, std::function<void(Tape&)> bw = {}) {
    nodes_.push_back(Node{std::move(value), std::move(bw)});
    return Var{nodes_.size() - 1};
  }

  Var leaf(Tensor<T> value) { return push(std::move(value)); }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }

  Tensor<T>& grad(Var v) {
    if (grads_[v.id].empty()) grads_[v.id] = Tensor<T>(nodes_[v.id].value.shape());
    return grads_[v.id];
  }

  bool has_grad(Var v) const { return !grads_[v.id].empty(); }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (value(loss).size() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>{});
    grad(loss)[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (grads_[i].empty()) continue;  // not reachable from loss
      if (nodes_[i].backward) nodes_[i].backward(*this);
    }
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = matmul(tape.value(a), tape.value(b));
  Var o{};
  o = tape.push(std::move(out), [a, b, o_id = tape.size()](Tape<T>& t) mutable {
    const Tensor<T>& g = t.grad(Var{o_id});
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    Tensor<T> ga = matmul(g, transpose(bv));
    Tensor<T> gb = matmul(transpose(av), g);
    Tensor<T>& gaa = t.grad(a);
    for (std::size_t i = 0; i < gaa.size(); ++i) gaa[i] += ga[i];
    Tensor<T>& gbb = t.grad(b);
    for (std::size_t i = 0; i < gbb.size(); ++i) gbb[i] += gb[i];
  });
  return o;
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = add(tape.value(a), tape.value(b));
  return tape.push(std::move(out), [a, b, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = hadamard(tape.value(a), tape.value(b));
  return tape.push(std::move(out), [a, b, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv[i];
      gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  Tensor<T> out = scale(tape.value(a), s);
  return tape.push(std::move(out), [a, s, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

// Adds a bias row to every row of a.
template <typename T>
Var add_row(Tape<T>& tape, Var a, Var bias) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(bias);
  if (av.cols() != bv.size()) throw std::invalid_argument("shape: add_row");
  Tensor<T> out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
  return tape.push(std::move(out), [a, bias, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gb = t.grad(bias);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        ga.at(r, c) += g.at(r, c);
        gb[c] += g.at(r, c);
      }
  });
}

template <typename T>
Var softplus(Tape<T>& tape, Var a) {
  Tensor<T> out = softplus(tape.value(a));
  return tape.push(std::move(out), [a, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    const Tensor<T>& out_v = t.value(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    // sigmoid(x) = 1 - exp(-softplus(x))
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * (T(1) - std::exp(-out_v[i]));
  });
}

template <typename T>
Var reverse_rows(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  const std::size_t n = av.rows(), d = av.cols();
  Tensor<T> out({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = av.at(n - 1 - r, c);
  return tape.push(std::move(out), [a, n, d, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) ga.at(n - 1 - r, c) += g.at(r, c);
  });
}

template <typename T>
Var insert_row(Tape<T>& tape, Var a, Var row, std::size_t pos) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& rv = tape.value(row);
  const std::size_t n = av.rows(), d = av.cols();
  if (rv.size() != d || pos > n) throw std::invalid_argument("shape: insert_row");
  Tensor<T> out({n + 1, d});
  for (std::size_t r = 0; r < n + 1; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out.at(r, c) = (r == pos) ? rv[c] : av.at(r < pos ? r : r - 1, c);
  return tape.push(std::move(out), [a, row, pos, n, d, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    Tensor<T>& gr = t.grad(row);
    for (std::size_t r = 0; r < n + 1; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        if (r == pos)
          gr[c] += g.at(r, c);
        else
          ga.at(r < pos ? r : r - 1, c) += g.at(r, c);
      }
  });
}

template <typename T>
Var row_at(Tape<T>& tape, Var a, std::size_t pos) {
  const Tensor<T>& av = tape.value(a);
  const std::size_t d = av.cols();
  Tensor<T> out({1, d});
  for (std::size_t c = 0; c < d; ++c) out.at(0, c) = av.at(pos, c);
  return tape.push(std::move(out), [a, pos, d, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    for (std::size_t c = 0; c < d; ++c) ga.at(pos, c) += g.at(0, c);
  });
}

template <typename T>
Var mean_rows(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  const std::size_t n = av.rows(), d = av.cols();
  Tensor<T> out({1, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(0, c) += av.at(r, c);
  for (std::size_t c = 0; c < d; ++c) out.at(0, c) /= T(n);
  return tape.push(std::move(out), [a, n, d, o_id = tape.size()](Tape<T>& t) {
    const Tensor<T>& g = t.grad(Var{o_id});
    Tensor<T>& ga = t.grad(a);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) ga.at(r, c) += g.at(0, c) / T(n);
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Tensor<T> out({1});
  out[0] = s;
  return tape.push(std::move(out), [a, o_id = tape.size()](Tape<T>& t) {
    const T g = t.grad(Var{o_id})[0];
    Tensor<T>& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// Softmax cross-entropy against an integer label; logits are 1xC.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::size_t label) {
  const Tensor<T>& lv = tape.value(logits);
  const std::size_t c = lv.size();
  if (label >= c) throw std::invalid_argument("softmax_cross_entropy: label");
  T mx = lv[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, lv[i]);
  T se = 0;
  for (std::size_t i = 0; i < c; ++i) se += std::exp(lv[i] - mx);
  const T lse = mx + std::log(se);
  Tensor<T> out({1});
  out[0] = lse - lv[label];
  return tape.push(std::move(out), [logits, label, lse, o_id = tape.size()](Tape<T>& t) {
    const T g = t.grad(Var{o_id})[0];
    const Tensor<T>& lv = t.value(logits);
    Tensor<T>& gl = t.grad(logits);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      T p = std::exp(lv[i] - lse);
      gl[i] += g * (p - (i == label ? T(1) : T(0)));
    }
  });
}

}  // namespace mame
