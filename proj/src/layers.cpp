#include "mealrec/layers.hpp"

#include <cmath>

namespace mealrec::nn {

ad::Var Dropout::apply(ad::Var x) const {
  if (rng == nullptr || rate <= 0.0) return x;
  return ad::dropout(x, rate, (*rng)());
}

Mat xavier(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> uni(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  return m;
}

void add_linear(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng,
                bool bias) {
  store.add(prefix + ".weight", xavier(in, out, rng));
  if (bias) store.add(prefix + ".bias", Mat::Zero(1, out));
}

ad::Var linear(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x) {
  ad::Var y = ad::matmul(x, tape.param(store, prefix + ".weight"));
  const std::string bias = prefix + ".bias";
  if (store.contains(bias)) y = ad::add_row(y, tape.param(store, bias));
  return y;
}

void add_layer_norm(ParamStore& store, const std::string& prefix, int dim) {
  store.add(prefix + ".gain", Mat::Ones(1, dim));
  store.add(prefix + ".bias", Mat::Zero(1, dim));
}

ad::Var layer_norm(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x) {
  return ad::layer_norm(x, tape.param(store, prefix + ".gain"), tape.param(store, prefix + ".bias"));
}

void add_attention_block(ParamStore& store, const std::string& prefix, int dim, int ffn_dim,
                         Rng& rng) {
  add_layer_norm(store, prefix + ".ln_attn", dim);
  add_linear(store, prefix + ".query", dim, dim, rng);
  add_linear(store, prefix + ".key", dim, dim, rng);
  add_linear(store, prefix + ".value", dim, dim, rng);
  add_layer_norm(store, prefix + ".ln_ffn", dim);
  add_linear(store, prefix + ".ffn_in", dim, ffn_dim, rng);
  add_linear(store, prefix + ".ffn_out", ffn_dim, dim, rng);
}

ad::Var attention_block(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x,
                        const ad::AttentionSpec& spec, const Dropout& drop) {
  ad::Var normed = layer_norm(tape, store, prefix + ".ln_attn", x);
  ad::Var q = linear(tape, store, prefix + ".query", normed);
  ad::Var k = linear(tape, store, prefix + ".key", normed);
  ad::Var v = linear(tape, store, prefix + ".value", normed);
  ad::Var h = ad::add(x, drop.apply(ad::attention(q, k, v, spec)));
  ad::Var f = layer_norm(tape, store, prefix + ".ln_ffn", h);
  f = ad::gelu(linear(tape, store, prefix + ".ffn_in", f));
  f = linear(tape, store, prefix + ".ffn_out", drop.apply(f));
  return ad::add(h, drop.apply(f));
}

}  // namespace mealrec::nn
