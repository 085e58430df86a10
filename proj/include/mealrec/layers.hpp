#pragma once

// Parameterized building blocks shared by the encoder and both denoisers.
// Each block registers its arrays under a name prefix and reads them back
// from the store when applied.

#include "mealrec/autograd.hpp"
#include "mealrec/rng.hpp"

#include <string>

namespace mealrec::nn {

/// Dropout source for one forward pass; a null rng or zero rate disables it.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  ad::Var apply(ad::Var x) const;
};

Mat xavier(int rows, int cols, Rng& rng);

void add_linear(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng,
                bool bias = true);
ad::Var linear(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x);

void add_layer_norm(ParamStore& store, const std::string& prefix, int dim);
ad::Var layer_norm(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x);

/// Pre-norm transformer block: h += MHA(LN(h)); h += FFN(LN(h)).
/// Queries, keys and values are W^Q, W^K, W^V projections of the same rows.
void add_attention_block(ParamStore& store, const std::string& prefix, int dim, int ffn_dim,
                         Rng& rng);
ad::Var attention_block(ad::Tape& tape, ParamStore& store, const std::string& prefix, ad::Var x,
                        const ad::AttentionSpec& spec, const Dropout& drop);

}  // namespace mealrec::nn
