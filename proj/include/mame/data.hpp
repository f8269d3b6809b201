#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mame/io.hpp"
#include "mame/tensor.hpp"

namespace mame {

// Planted-pattern dataset: a contiguous run of K foreground tokens carries
// the class prototype; background tokens are drawn from a small set of
// shared prototypes, so informativeness-aware merging has something to save.
struct DatasetSpec {
  int n_classes = 10;
  int per_class = 50;
  int grid_side = 8;   // P, tokens = P*P
  int raw_dim = 12;
  int blob_size = 8;   // K foreground tokens
  int n_background = 3;
  double sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (blob_size >= grid_side * grid_side)
      throw std::invalid_argument("blob must be smaller than the grid");
    if (sigma < 0) throw std::invalid_argument("negative sigma");
    if (n_classes < 2 || per_class < 1 || n_background < 1)
      throw std::invalid_argument("bad dataset spec");
  }
};

struct Sample {
  Tensor<float> grid;  // P*P x raw_dim, token-major
  std::uint16_t label = 0;
  int blob_start = 0;  // first foreground token index
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> samples;
};

namespace detail {

inline std::vector<Tensor<double>> prototypes(int count, int dim, double amp,
                                              std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Tensor<double>> out;
  for (int i = 0; i < count; ++i) {
    Tensor<double> p({std::size_t(dim)});
    double norm = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] = n(rng);
      norm += p[j] * p[j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = amp * p[j] / norm;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

// Deterministic per seed; per-sample streams are derived so samples are
// independent of generation order.
inline std::pair<Dataset, Dataset> generate(const DatasetSpec& spec,
                                            double val_fraction = 0.2) {
  spec.validate();
  std::mt19937_64 proto_rng(spec.seed);
  auto class_protos = detail::prototypes(spec.n_classes, spec.raw_dim, 1.0, proto_rng);
  auto bg_protos = detail::prototypes(spec.n_background, spec.raw_dim, 1.0, proto_rng);

  const int n_tokens = spec.grid_side * spec.grid_side;
  Dataset train{spec, {}}, val{spec, {}};
  const int n_val = std::max(1, int(spec.per_class * val_fraction));

  for (int cls = 0; cls < spec.n_classes; ++cls) {
    for (int i = 0; i < spec.per_class; ++i) {
      std::mt19937_64 rng(spec.seed ^ (0x9e3779b97f4a7c15ULL *
                                       (std::uint64_t(cls) * spec.per_class + i + 1)));
      std::uniform_int_distribution<int> start_d(0, n_tokens - spec.blob_size);
      std::uniform_int_distribution<int> bg_d(0, spec.n_background - 1);
      std::normal_distribution<double> noise(0.0, spec.sigma);

      Sample s;
      s.label = std::uint16_t(cls);
      s.blob_start = start_d(rng);
      s.grid = Tensor<float>({std::size_t(n_tokens), std::size_t(spec.raw_dim)});
      for (int t = 0; t < n_tokens; ++t) {
        const bool fg = t >= s.blob_start && t < s.blob_start + spec.blob_size;
        const Tensor<double>& proto = fg ? class_protos[cls] : bg_protos[bg_d(rng)];
        for (int j = 0; j < spec.raw_dim; ++j)
          s.grid.at(t, j) = float(proto[j] + (spec.sigma > 0 ? noise(rng) : 0.0));
      }
      (i < spec.per_class - n_val ? train : val).samples.push_back(std::move(s));
    }
  }
  return {std::move(train), std::move(val)};
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  BinWriter w(path);
  w.magic(kDatasetKind);
  w.u32(std::uint32_t(ds.samples.size()));
  w.u32(std::uint32_t(ds.spec.grid_side));
  w.u32(std::uint32_t(ds.spec.raw_dim));
  w.u32(std::uint32_t(ds.spec.n_classes));
  for (const Sample& s : ds.samples)
    w.f32_block(s.grid.data().data(), s.grid.size());
  for (const Sample& s : ds.samples) w.u16(s.label);
  w.close();
}

inline Dataset load_dataset(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kDatasetKind);
  Dataset ds;
  const std::uint32_t n = r.u32();
  ds.spec.grid_side = int(r.u32());
  ds.spec.raw_dim = int(r.u32());
  ds.spec.n_classes = int(r.u32());
  const std::size_t tokens = std::size_t(ds.spec.grid_side) * ds.spec.grid_side;
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.grid = Tensor<float>({tokens, std::size_t(ds.spec.raw_dim)});
    for (std::size_t i = 0; i < s.grid.size(); ++i) s.grid[i] = r.f32();
  }
  for (auto& s : ds.samples) s.label = r.u16();
  return ds;
}

}  // namespace mame
