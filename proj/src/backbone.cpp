#include "mealrec/backbone.hpp"

#include <stdexcept>
#include <string>

namespace mealrec::backbone {

Mat attention(const Mat& q, const Mat& k, const Mat& v, bool causal) {
  if (q.rows() != k.rows() || k.rows() != v.rows() || q.cols() != k.cols() || q.rows() < 1) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  ad::Tape tape(false);
  ad::AttentionSpec spec;
  spec.query_len = static_cast<int>(q.rows());
  spec.key_len = static_cast<int>(k.rows());
  spec.causal = causal;
  return ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), spec).value();
}

SelfAttentionEncoder::SelfAttentionEncoder(EncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.num_items < 1) throw std::invalid_argument("encoder needs a non-empty vocabulary");
  if (cfg_.dim < 1 || cfg_.heads < 1 || cfg_.dim % cfg_.heads != 0) {
    throw std::invalid_argument("encoder dim must be divisible by heads");
  }
  if (cfg_.max_len < 1 || cfg_.blocks < 0) throw std::invalid_argument("bad encoder shape");
}

void SelfAttentionEncoder::register_params(ParamStore& store, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
  Mat items(cfg_.num_items + 1, cfg_.dim);
  for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = normal(rng);
  items.row(0).setZero();
  store.add("backbone.item_embedding", std::move(items));
  Mat pos(cfg_.max_len, cfg_.dim);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = normal(rng);
  store.add("backbone.position_embedding", std::move(pos));
  for (int b = 0; b < cfg_.blocks; ++b) {
    nn::add_attention_block(store, "backbone.block" + std::to_string(b), cfg_.dim, cfg_.dim, rng);
  }
  nn::add_layer_norm(store, "backbone.ln_out", cfg_.dim);
}

ad::Var SelfAttentionEncoder::item_table(ad::Tape& tape, ParamStore& store) const {
  return tape.param(store, "backbone.item_embedding");
}

EncodedSequences SelfAttentionEncoder::encode(ad::Tape& tape, ParamStore& store,
                                              std::span<const int> item_ids, int len,
                                              const nn::Dropout& drop) const {
  if (len < 1 || len > cfg_.max_len) throw std::invalid_argument("encode: row length outside [1, max_len]");
  if (item_ids.empty() || item_ids.size() % static_cast<std::size_t>(len) != 0) {
    throw std::invalid_argument("encode: ids must be batch x len");
  }
  const int offset = cfg_.max_len - len;
  const int batch = static_cast<int>(item_ids.size() / static_cast<std::size_t>(len));
  std::vector<int> ids(item_ids.begin(), item_ids.end());
  std::vector<double> keep(ids.size());
  std::vector<char> valid(ids.size());
  std::vector<int> positions(ids.size());
  std::vector<int> last(static_cast<std::size_t>(batch), -1);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] > cfg_.num_items) {
      throw std::out_of_range("encode: unknown item index " + std::to_string(ids[r]));
    }
    const bool real = ids[r] != 0;
    keep[r] = real ? 1.0 : 0.0;
    valid[r] = real ? 1 : 0;
    positions[r] = offset + static_cast<int>(r % static_cast<std::size_t>(len));
    if (real) last[r / static_cast<std::size_t>(len)] = static_cast<int>(r);
  }
  for (int b = 0; b < batch; ++b) {
    if (last[static_cast<std::size_t>(b)] < 0) throw std::invalid_argument("encode: empty sequence");
  }

  ad::Var h = ad::add(ad::rows(item_table(tape, store), ids),
                      ad::rows(tape.param(store, "backbone.position_embedding"), positions));
  h = ad::row_scale(drop.apply(h), keep);
  ad::AttentionSpec spec;
  spec.groups = batch;
  spec.query_len = len;
  spec.key_len = len;
  spec.heads = cfg_.heads;
  spec.causal = true;
  spec.key_valid = valid;
  for (int b = 0; b < cfg_.blocks; ++b) {
    h = nn::attention_block(tape, store, "backbone.block" + std::to_string(b), h, spec, drop);
    h = ad::row_scale(h, keep);
  }
  h = ad::row_scale(nn::layer_norm(tape, store, "backbone.ln_out", h), keep);
  return {h, ad::rows(h, last)};
}

std::vector<int> pad_left(std::span<const int> history, int max_len) {
  std::vector<int> out(static_cast<std::size_t>(max_len), 0);
  const std::size_t n = std::min(history.size(), static_cast<std::size_t>(max_len));
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), out.end() - static_cast<std::ptrdiff_t>(n));
  return out;
}

std::pair<Mat, Mat> seq_encode(const SequenceEncoder& encoder, ParamStore& store,
                               std::span<const int> item_ids) {
  if (static_cast<int>(item_ids.size()) > encoder.config().max_len) {
    throw std::invalid_argument("seq_encode: sequence longer than max_len");
  }
  if (item_ids.empty()) throw std::invalid_argument("seq_encode: empty sequence");
  std::vector<int> padded = pad_left(item_ids, encoder.config().max_len);
  ad::Tape tape(false);
  EncodedSequences out = encoder.encode(tape, store, padded, encoder.config().max_len, nn::Dropout{});
  const Eigen::Index n = static_cast<Eigen::Index>(item_ids.size());
  Mat states = out.states.value().bottomRows(n);
  return {std::move(states), out.last.value()};
}

}  // namespace mealrec::backbone
