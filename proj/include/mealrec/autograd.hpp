#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; batched sequence data is stored as
// stacked row groups (group g occupies rows [g*len, (g+1)*len)).

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mealrec {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named learnable array with its accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
};

/// Owns every learnable array of a model. Names are unique and insertion
/// order is stable, which keeps checkpoints and optimizer state deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Mat init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations and replays them backwards. With gradients disabled the
/// tape only evaluates values, which is what inference paths use.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf bound to a parameter; repeated calls on one tape reuse the leaf.
  Var param(Parameter& p);
  Var param(ParamStore& store, const std::string& name) { return param(store.get(name)); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into Parameter::grad.
  void backward(const Var& loss);

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()]->requires_grad; }
  const Mat& value(int id) const { return nodes_[id]->value; }
  Mat& grad(int id);

  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Mat value, std::span<const Var> inputs, Backward backward);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  bool grad_enabled_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<const Parameter*, int> param_leaves_;
};

// Elementwise and linear algebra.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
/// Multiplies row r of a by factors[r].
Var row_scale(Var a, std::vector<double> factors);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Inverted dropout with a precomputed keep mask (1 = keep).
Var dropout(Var x, double rate, std::uint64_t seed);

// Row bookkeeping.
/// out row r = a row index[r]; gradients scatter-add back.
Var rows(Var a, std::vector<int> index);
/// Each row of a repeated `times` times consecutively.
Var repeat_rows(Var a, int times);
/// Per group of `in_len` rows, out_g = map * a_g with map of shape out_len x in_len.
Var group_map(Var a, const Mat& map);
/// Group g of the output concatenates group g of every part, in order.
Var interleave_groups(std::span<const Var> parts, std::span<const int> rows_per_group);
Var concat_cols(std::span<const Var> parts);
/// Per group of `len` rows, row r becomes [x_{r-1}, x_r, x_{r+1}] with zero
/// padding at group edges (kernel-3 convolution input).
Var im2col3(Var a, int len);

struct AttentionSpec {
  int groups = 1;
  int query_len = 1;
  int key_len = 1;
  int heads = 1;
  bool causal = false;
  /// Optional groups*key_len flags; zero marks a key that may not be attended.
  std::vector<char> key_valid;
};

/// Multi-head scaled dot-product attention, Softmax(QK^T / sqrt(d_head)) V,
/// applied independently per group and per head (heads split the columns).
/// A query that can see no valid key yields a zero row.
Var attention(Var q, Var k, Var v, const AttentionSpec& spec);
/// Attention probabilities of the same computation, (groups*heads*query_len) x key_len.
Mat attention_weights(const Mat& q, const Mat& k, const AttentionSpec& spec);

// Losses (1 x 1 results).
/// Mean over all entries of (a - b)^2.
Var mse(Var a, Var b);
/// Mean over rows of -log softmax(logits_r)[target_r].
Var cross_entropy(Var logits, std::vector<int> targets);
Var sum_scalars(std::span<const Var> terms, std::span<const double> weights);

}  // namespace ad
}  // namespace mealrec
