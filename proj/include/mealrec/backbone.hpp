#pragma once

// Self-attention sequential encoder (SASRec style): item embeddings plus
// learned positions, causal pre-norm attention blocks, final layer norm.

#include "mealrec/autograd.hpp"
#include "mealrec/layers.hpp"

#include <span>
#include <utility>
#include <vector>

namespace mealrec::backbone {

struct EncoderConfig {
  int num_items = 0;  // vocabulary size |I|; embedding row 0 is padding
  int dim = 64;
  int max_len = 10;
  int blocks = 2;
  int heads = 2;
  double dropout = 0.2;
};

/// Single-head Softmax(QK^T / sqrt(d)) V on plain matrices.
Mat attention(const Mat& q, const Mat& k, const Mat& v, bool causal);

struct EncodedSequences {
  ad::Var states;  // (batch * max_len) x dim
  ad::Var last;    // batch x dim, state at the last non-padding position
};

/// Seam for alternative sequence encoders; the recommender only depends on
/// this interface.
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;
  virtual const EncoderConfig& config() const = 0;
  virtual void register_params(ParamStore& store, Rng& rng) const = 0;
  /// `item_ids` holds batch rows of `len` <= max_len left-padded item indices.
  /// Positions count back from the newest item, so trimming shared padding
  /// columns leaves every output unchanged.
  virtual EncodedSequences encode(ad::Tape& tape, ParamStore& store, std::span<const int> item_ids, int len,
                                  const nn::Dropout& drop) const = 0;
  /// Item embedding table including the padding row, (|I|+1) x dim.
  virtual ad::Var item_table(ad::Tape& tape, ParamStore& store) const = 0;
};

class SelfAttentionEncoder final : public SequenceEncoder {
 public:
  explicit SelfAttentionEncoder(EncoderConfig cfg);

  const EncoderConfig& config() const override { return cfg_; }
  void register_params(ParamStore& store, Rng& rng) const override;
  EncodedSequences encode(ad::Tape& tape, ParamStore& store, std::span<const int> item_ids, int len,
                          const nn::Dropout& drop) const override;
  ad::Var item_table(ad::Tape& tape, ParamStore& store) const override;

 private:
  EncoderConfig cfg_;
};

/// Left-pads (or keeps the most recent max_len of) a history.
std::vector<int> pad_left(std::span<const int> history, int max_len);

/// Encodes one sequence without dropout: (states L x d, x_0 1 x d).
std::pair<Mat, Mat> seq_encode(const SequenceEncoder& encoder, ParamStore& store,
                               std::span<const int> item_ids);

}  // namespace mealrec::backbone
