#pragma once

// Parametric building blocks. Each layer only remembers parameter names and
// sizes; values live in a ParamStore so a model is a (layout, store) pair.

#include <string>

#include "ate/diff/ops.hpp"

namespace ate::diff {

struct Dense {
  std::string name;
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  // Glorot-normal weight scaled by gain, zero bias.
  static Dense create(ParamStore& store, const std::string& name, Eigen::Index in,
                      Eigen::Index out, double gain = 1.0);
  Var operator()(Tape& tape, const ParamStore& store, Var x) const;
};

struct LayerNorm {
  std::string name;
  Eigen::Index dim = 0;

  static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index dim);
  Var operator()(Tape& tape, const ParamStore& store, Var x) const;
};

struct MultiHeadAttention {
  Dense query, key, value, output;
  int heads = 1;

  static MultiHeadAttention create(ParamStore& store, const std::string& name,
                                   Eigen::Index width, int heads);
  // queries: groups*tq rows, context: groups*tk rows.
  Var operator()(Tape& tape, const ParamStore& store, Var queries, Var context,
                 int groups) const;
};

struct FeedForward {
  Dense up, down;

  static FeedForward create(ParamStore& store, const std::string& name, Eigen::Index width,
                            Eigen::Index hidden);
  Var operator()(Tape& tape, const ParamStore& store, Var x) const;
};

// Pre-norm transformer encoder block: self-attention then feed-forward.
struct EncoderBlock {
  LayerNorm norm_attn, norm_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  static EncoderBlock create(ParamStore& store, const std::string& name, Eigen::Index width,
                             int heads, Eigen::Index hidden);
  Var operator()(Tape& tape, const ParamStore& store, Var x, int groups) const;
};

// Pre-norm transformer decoder block: self-attention over the queries,
// cross-attention into a memory sequence, then feed-forward.
struct DecoderBlock {
  LayerNorm norm_self, norm_cross, norm_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderBlock create(ParamStore& store, const std::string& name, Eigen::Index width,
                             int heads, Eigen::Index hidden);
  Var operator()(Tape& tape, const ParamStore& store, Var x, Var memory, int groups) const;
};

}  // namespace ate::diff
