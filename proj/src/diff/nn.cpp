#include "ate/diff/nn.hpp"

namespace ate::diff {

Dense Dense::create(ParamStore& store, const std::string& name, Eigen::Index in,
                    Eigen::Index out, double gain) {
  store.add_glorot(name + ".w", in, out, gain);
  store.add_zeros(name + ".b", 1, out);
  return Dense{name, in, out};
}

Var Dense::operator()(Tape& tape, const ParamStore& store, Var x) const {
  check_dims(x.cols() == in, name, "expected " + std::to_string(in) + " input columns, got " +
                                       std::to_string(x.cols()));
  return add_row(matmul(x, tape.param(store, name + ".w")), tape.param(store, name + ".b"));
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index dim) {
  store.add_constant(name + ".gamma", 1, dim, 1.0);
  store.add_zeros(name + ".beta", 1, dim);
  return LayerNorm{name, dim};
}

Var LayerNorm::operator()(Tape& tape, const ParamStore& store, Var x) const {
  return layer_norm(x, tape.param(store, name + ".gamma"), tape.param(store, name + ".beta"));
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& store, const std::string& name,
                                              Eigen::Index width, int heads) {
  check_dims(width % heads == 0, name, "width not divisible by heads");
  MultiHeadAttention m;
  m.query = Dense::create(store, name + ".q", width, width);
  m.key = Dense::create(store, name + ".k", width, width);
  m.value = Dense::create(store, name + ".v", width, width);
  m.output = Dense::create(store, name + ".o", width, width);
  m.heads = heads;
  return m;
}

Var MultiHeadAttention::operator()(Tape& tape, const ParamStore& store, Var queries,
                                   Var context, int groups) const {
  Var q = query(tape, store, queries);
  Var k = key(tape, store, context);
  Var v = value(tape, store, context);
  return output(tape, store, attention(q, k, v, groups, heads));
}

FeedForward FeedForward::create(ParamStore& store, const std::string& name, Eigen::Index width,
                                Eigen::Index hidden) {
  FeedForward f;
  f.up = Dense::create(store, name + ".up", width, hidden);
  f.down = Dense::create(store, name + ".down", hidden, width);
  return f;
}

Var FeedForward::operator()(Tape& tape, const ParamStore& store, Var x) const {
  return down(tape, store, silu(up(tape, store, x)));
}

EncoderBlock EncoderBlock::create(ParamStore& store, const std::string& name, Eigen::Index width,
                                  int heads, Eigen::Index hidden) {
  EncoderBlock b;
  b.norm_attn = LayerNorm::create(store, name + ".ln_attn", width);
  b.attn = MultiHeadAttention::create(store, name + ".attn", width, heads);
  b.norm_ffn = LayerNorm::create(store, name + ".ln_ffn", width);
  b.ffn = FeedForward::create(store, name + ".ffn", width, hidden);
  return b;
}

Var EncoderBlock::operator()(Tape& tape, const ParamStore& store, Var x, int groups) const {
  Var h = norm_attn(tape, store, x);
  x = add(x, attn(tape, store, h, h, groups));
  return add(x, ffn(tape, store, norm_ffn(tape, store, x)));
}

DecoderBlock DecoderBlock::create(ParamStore& store, const std::string& name, Eigen::Index width,
                                  int heads, Eigen::Index hidden) {
  DecoderBlock b;
  b.norm_self = LayerNorm::create(store, name + ".ln_self", width);
  b.self_attn = MultiHeadAttention::create(store, name + ".self", width, heads);
  b.norm_cross = LayerNorm::create(store, name + ".ln_cross", width);
  b.cross_attn = MultiHeadAttention::create(store, name + ".cross", width, heads);
  b.norm_ffn = LayerNorm::create(store, name + ".ln_ffn", width);
  b.ffn = FeedForward::create(store, name + ".ffn", width, hidden);
  return b;
}

Var DecoderBlock::operator()(Tape& tape, const ParamStore& store, Var x, Var memory,
                             int groups) const {
  Var h = norm_self(tape, store, x);
  x = add(x, self_attn(tape, store, h, h, groups));
  x = add(x, cross_attn(tape, store, norm_cross(tape, store, x), memory, groups));
  return add(x, ffn(tape, store, norm_ffn(tape, store, x)));
}

}  // namespace ate::diff
