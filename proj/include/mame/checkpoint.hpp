#pragma once

#include <string>

#include "mame/io.hpp"
#include "mame/model.hpp"

namespace mame {

// Checkpoint layout: MAME header, config block (u32 fields), then every
// parameter tensor as little-endian f32 in params() order.
inline void save_checkpoint(ToyVim<float>& model, const std::string& path) {
  BinWriter w(path);
  w.magic(kCheckpointKind);
  const ModelConfig& c = model.cfg;
  w.u32(std::uint32_t(c.depth));
  w.u32(std::uint32_t(c.embed_dim));
  w.u32(std::uint32_t(c.state_dim));
  w.u32(std::uint32_t(c.grid_side));
  w.u32(std::uint32_t(c.raw_dim));
  w.u32(std::uint32_t(c.n_classes));
  w.u32(std::uint32_t(c.batch_size));
  w.u32(c.cls_readout ? 1 : 0);
  auto ps = model.params();
  w.u32(std::uint32_t(ps.size()));
  for (auto& p : ps) {
    w.u32(std::uint32_t(p.tensor->size()));
    w.f32_block(p.tensor->data().data(), p.tensor->size());
  }
  w.close();
}

inline ToyVim<float> load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic(kCheckpointKind);
  ModelConfig c;
  c.depth = int(r.u32());
  c.embed_dim = int(r.u32());
  c.state_dim = int(r.u32());
  c.grid_side = int(r.u32());
  c.raw_dim = int(r.u32());
  c.n_classes = int(r.u32());
  c.batch_size = int(r.u32());
  c.cls_readout = r.u32() != 0;
  ToyVim<float> model(c, 0);
  auto ps = model.params();
  if (r.u32() != ps.size()) throw std::runtime_error("checkpoint: parameter count");
  for (auto& p : ps) {
    if (r.u32() != p.tensor->size())
      throw std::runtime_error("checkpoint: tensor size for " + p.name);
    for (std::size_t i = 0; i < p.tensor->size(); ++i) (*p.tensor)[i] = r.f32();
  }
  return model;
}

}  // namespace mame
