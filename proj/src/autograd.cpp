#include "mealrec/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mealrec {

Parameter& ParamStore::add(const std::string& name, Mat init) {
  if (index_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Mat::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->name);
  return out;
}

namespace ad {

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  auto it = param_leaves_.find(&p);
  if (it != param_leaves_.end()) return {this, it->second};
  auto node = std::make_unique<Node>();
  node->value = p.value;
  node->requires_grad = grad_enabled_;
  node->param = &p;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_leaves_[&p] = id;
  return {this, id};
}

Mat& Tape::grad(int id) {
  Node& n = *nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backward backward) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id()]->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) node->backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(const Var& loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a tape without gradients");
  if (loss.value().size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  if (!requires_grad(loss)) return;
  grad(loss.id()).setOnes();
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = *nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

bool needs(Tape& t, const Var& v) { return t.requires_grad(v); }

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()) += g;
    if (needs(t, b)) t.grad(b.id()) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()) += g;
    if (needs(t, b)) t.grad(b.id()) -= g;
  });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a, b, "hadamard");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()) += g.cwiseProduct(b.value());
    if (needs(t, b)) t.grad(b.id()) += g.cwiseProduct(a.value());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Mat& g) { t.grad(a.id()) += g * s; });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  Mat out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()).noalias() += g * b.value().transpose();
    if (needs(t, b)) t.grad(b.id()).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape();
  Mat out = a.value() * b.value().transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()).noalias() += g * b.value();
    if (needs(t, b)) t.grad(b.id()).noalias() += g.transpose() * a.value();
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: bias must be 1 x cols");
  }
  Tape& t = *a.tape();
  Mat out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
    if (needs(t, a)) t.grad(a.id()) += g;
    if (needs(t, row)) t.grad(row.id()) += g.colwise().sum();
  });
}

Var row_scale(Var a, std::vector<double> factors) {
  if (static_cast<Eigen::Index>(factors.size()) != a.rows()) {
    throw std::invalid_argument("row_scale: one factor per row required");
  }
  Tape& t = *a.tape();
  Eigen::Map<const Eigen::VectorXd> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
  Mat out = f.asDiagonal() * a.value();
  return t.record(std::move(out), {a}, [a, factors = std::move(factors)](Tape& t, const Mat& g) {
    Eigen::Map<const Eigen::VectorXd> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
    t.grad(a.id()) += f.asDiagonal() * g;
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Mat out = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return t.record(std::move(out), {a}, [a, inv_sqrt2](Tape& t, const Mat& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Mat d = a.value().unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    t.grad(a.id()) += g.cwiseProduct(d);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x cols");
  }
  Mat xhat(n, c);
  Eigen::VectorXd inv_std(n);
  const Mat& xv = x.value();
  for (Eigen::Index r = 0; r < n; ++r) {
    double mean = xv.row(r).mean();
    double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
            bias.value().row(0).array();
  Tape& t = *x.tape();
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& t, const Mat& g) {
                    if (needs(t, gain)) t.grad(gain.id()) += g.cwiseProduct(xhat).colwise().sum();
                    if (needs(t, bias)) t.grad(bias.id()) += g.colwise().sum();
                    if (!needs(t, x)) return;
                    Mat dxhat = g.array().rowwise() * gain.value().row(0).array();
                    Mat& gx = t.grad(x.id());
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      double m1 = dxhat.row(r).mean();
                      double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                      gx.row(r).array() +=
                          inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                  });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::mt19937_64 gen(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(gen) ? s : 0.0;
  Tape& t = *x.tape();
  Mat out = x.value().cwiseProduct(mask);
  return t.record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Mat& g) {
    t.grad(x.id()) += g.cwiseProduct(mask);
  });
}

Var rows(Var a, std::vector<int> index) {
  Mat out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= a.rows()) throw std::out_of_range("rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
  }
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [a, index = std::move(index)](Tape& t, const Mat& g) {
    Mat& ga = t.grad(a.id());
    for (std::size_t r = 0; r < index.size(); ++r) {
      ga.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var repeat_rows(Var a, int times) {
  if (times < 1) throw std::invalid_argument("repeat_rows: times must be positive");
  const Eigen::Index n = a.rows();
  Mat out(n * times, a.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    out.middleRows(r * times, times).rowwise() = a.value().row(r);
  }
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [a, times](Tape& t, const Mat& g) {
    Mat& ga = t.grad(a.id());
    for (Eigen::Index r = 0; r < ga.rows(); ++r) {
      ga.row(r) += g.middleRows(r * times, times).colwise().sum();
    }
  });
}

Var group_map(Var a, const Mat& map) {
  const Eigen::Index in_len = map.cols();
  const Eigen::Index out_len = map.rows();
  if (a.rows() % in_len != 0) throw std::invalid_argument("group_map: rows not divisible");
  const Eigen::Index groups = a.rows() / in_len;
  Mat out(groups * out_len, a.cols());
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    out.middleRows(gi * out_len, out_len).noalias() = map * a.value().middleRows(gi * in_len, in_len);
  }
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [a, map, groups, in_len, out_len](Tape& t, const Mat& g) {
    Mat& ga = t.grad(a.id());
    for (Eigen::Index gi = 0; gi < groups; ++gi) {
      ga.middleRows(gi * in_len, in_len).noalias() +=
          map.transpose() * g.middleRows(gi * out_len, out_len);
    }
  });
}

Var interleave_groups(std::span<const Var> parts, std::span<const int> rows_per_group) {
  if (parts.empty() || parts.size() != rows_per_group.size()) {
    throw std::invalid_argument("interleave_groups: parts and sizes disagree");
  }
  const Eigen::Index cols = parts[0].cols();
  const Eigen::Index groups = parts[0].rows() / rows_per_group[0];
  Eigen::Index per_group = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].cols() != cols || parts[p].rows() != groups * rows_per_group[p]) {
      throw std::invalid_argument("interleave_groups: inconsistent part shapes");
    }
    per_group += rows_per_group[p];
  }
  Mat out(groups * per_group, cols);
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    Eigen::Index offset = gi * per_group;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const int n = rows_per_group[p];
      out.middleRows(offset, n) = parts[p].value().middleRows(gi * n, n);
      offset += n;
    }
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  std::vector<int> sizes(rows_per_group.begin(), rows_per_group.end());
  Tape& t = *parts[0].tape();
  return t.record(std::move(out), parts,
                  [saved, sizes, groups, per_group](Tape& t, const Mat& g) {
                    for (Eigen::Index gi = 0; gi < groups; ++gi) {
                      Eigen::Index offset = gi * per_group;
                      for (std::size_t p = 0; p < saved.size(); ++p) {
                        const int n = sizes[p];
                        if (needs(t, saved[p])) {
                          t.grad(saved[p].id()).middleRows(gi * n, n) += g.middleRows(offset, n);
                        }
                        offset += n;
                      }
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const Eigen::Index n = parts[0].rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
  }
  Mat out(n, total);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  Tape& t = *parts[0].tape();
  return t.record(std::move(out), parts, [saved](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (const Var& p : saved) {
      if (needs(t, p)) t.grad(p.id()) += g.middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

Var im2col3(Var a, int len) {
  if (len < 1 || a.rows() % len != 0) throw std::invalid_argument("im2col3: bad group length");
  const Eigen::Index c = a.cols();
  const Eigen::Index n = a.rows();
  Mat out = Mat::Zero(n, 3 * c);
  const Mat& av = a.value();
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index pos = r % len;
    if (pos > 0) out.block(r, 0, 1, c) = av.row(r - 1);
    out.block(r, c, 1, c) = av.row(r);
    if (pos + 1 < len) out.block(r, 2 * c, 1, c) = av.row(r + 1);
  }
  Tape& t = *a.tape();
  return t.record(std::move(out), {a}, [a, len, c, n](Tape& t, const Mat& g) {
    Mat& ga = t.grad(a.id());
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index pos = r % len;
      if (pos > 0) ga.row(r - 1) += g.block(r, 0, 1, c);
      ga.row(r) += g.block(r, c, 1, c);
      if (pos + 1 < len) ga.row(r + 1) += g.block(r, 2 * c, 1, c);
    }
  });
}

namespace {

void validate_attention(const Mat& q, const Mat& k, const Mat* v, const AttentionSpec& s) {
  if (s.groups < 1 || s.query_len < 1 || s.key_len < 1 || s.heads < 1) {
    throw std::invalid_argument("attention: sizes must be positive");
  }
  if (q.rows() != s.groups * s.query_len || k.rows() != s.groups * s.key_len) {
    throw std::invalid_argument("attention: row counts disagree with spec");
  }
  if (q.cols() != k.cols() || q.cols() % s.heads != 0) {
    throw std::invalid_argument("attention: query/key width mismatch");
  }
  if (v != nullptr && (v->rows() != k.rows() || v->cols() % s.heads != 0)) {
    throw std::invalid_argument("attention: value shape mismatch");
  }
  if (s.causal && s.query_len != s.key_len) {
    throw std::invalid_argument("attention: causal mask needs square attention");
  }
  if (!s.key_valid.empty() && static_cast<Eigen::Index>(s.key_valid.size()) != k.rows()) {
    throw std::invalid_argument("attention: key_valid length mismatch");
  }
}

// Row-stochastic weights for one (group, head); masked entries are exactly 0.
Mat softmax_block(const Mat& q, const Mat& k, Eigen::Index g, int h, const AttentionSpec& s) {
  const Eigen::Index dh = q.cols() / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat scores = q.block(g * s.query_len, h * dh, s.query_len, dh) *
               k.block(g * s.key_len, h * dh, s.key_len, dh).transpose() * scale;
  Mat p = Mat::Zero(s.query_len, s.key_len);
  for (int i = 0; i < s.query_len; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < s.key_len; ++j) {
      bool visible = (!s.causal || j <= i) &&
                     (s.key_valid.empty() || s.key_valid[g * s.key_len + j] != 0);
      if (visible) mx = std::max(mx, scores(i, j));
      else scores(i, j) = -std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(mx)) continue;
    double sum = 0.0;
    for (int j = 0; j < s.key_len; ++j) {
      if (std::isfinite(scores(i, j))) {
        p(i, j) = std::exp(scores(i, j) - mx);
        sum += p(i, j);
      }
    }
    p.row(i) /= sum;
  }
  return p;
}

}  // namespace

Mat attention_weights(const Mat& q, const Mat& k, const AttentionSpec& spec) {
  validate_attention(q, k, nullptr, spec);
  Mat out(static_cast<Eigen::Index>(spec.groups) * spec.heads * spec.query_len, spec.key_len);
  for (int g = 0; g < spec.groups; ++g) {
    for (int h = 0; h < spec.heads; ++h) {
      out.middleRows((static_cast<Eigen::Index>(g) * spec.heads + h) * spec.query_len,
                     spec.query_len) = softmax_block(q, k, g, h, spec);
    }
  }
  return out;
}

Var attention(Var q, Var k, Var v, const AttentionSpec& spec) {
  validate_attention(q.value(), k.value(), &v.value(), spec);
  const Eigen::Index dh = q.cols() / spec.heads;
  const Eigen::Index dv = v.cols() / spec.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat probs = attention_weights(q.value(), k.value(), spec);
  Mat out(q.rows(), v.cols());
  for (int g = 0; g < spec.groups; ++g) {
    for (int h = 0; h < spec.heads; ++h) {
      auto p = probs.middleRows((static_cast<Eigen::Index>(g) * spec.heads + h) * spec.query_len,
                                spec.query_len);
      out.block(g * spec.query_len, h * dv, spec.query_len, dv).noalias() =
          p * v.value().block(g * spec.key_len, h * dv, spec.key_len, dv);
    }
  }
  Tape& t = *q.tape();
  return t.record(std::move(out), {q, k, v},
                  [q, k, v, spec, probs = std::move(probs), dh, dv, scl](Tape& t, const Mat& gout) {
                    const bool gq = needs(t, q), gk = needs(t, k), gv = needs(t, v);
                    for (int g = 0; g < spec.groups; ++g) {
                      const Eigen::Index qr = static_cast<Eigen::Index>(g) * spec.query_len;
                      const Eigen::Index kr = static_cast<Eigen::Index>(g) * spec.key_len;
                      for (int h = 0; h < spec.heads; ++h) {
                        auto p = probs.middleRows(
                            (static_cast<Eigen::Index>(g) * spec.heads + h) * spec.query_len,
                            spec.query_len);
                        Mat go = gout.block(qr, h * dv, spec.query_len, dv);
                        if (gv) {
                          t.grad(v.id()).block(kr, h * dv, spec.key_len, dv).noalias() +=
                              p.transpose() * go;
                        }
                        if (!gq && !gk) continue;
                        Mat dp = go * v.value().block(kr, h * dv, spec.key_len, dv).transpose();
                        Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
                        Mat ds = p.cwiseProduct(dp.colwise() - rowdot) * scl;
                        if (gq) {
                          t.grad(q.id()).block(qr, h * dh, spec.query_len, dh).noalias() +=
                              ds * k.value().block(kr, h * dh, spec.key_len, dh);
                        }
                        if (gk) {
                          t.grad(k.id()).block(kr, h * dh, spec.key_len, dh).noalias() +=
                              ds.transpose() * q.value().block(qr, h * dh, spec.query_len, dh);
                        }
                      }
                    }
                  });
}

Var mse(Var a, Var b) {
  check_same_shape(a, b, "mse");
  Mat diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  Tape& t = *a.tape();
  return t.record(std::move(out), {a, b}, [a, b, diff = std::move(diff), n](Tape& t, const Mat& g) {
    const double s = 2.0 * g(0, 0) / n;
    if (needs(t, a)) t.grad(a.id()) += diff * s;
    if (needs(t, b)) t.grad(b.id()) -= diff * s;
  });
}

Var cross_entropy(Var logits, std::vector<int> targets) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(targets.size()) != n) {
    throw std::invalid_argument("cross_entropy: one target per row required");
  }
  Mat probs(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= logits.cols()) throw std::out_of_range("cross_entropy: target out of range");
    const double mx = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - mx).exp();
    const double sum = probs.row(r).sum();
    probs.row(r) /= sum;
    total += -(logits.value()(r, tgt) - mx - std::log(sum));
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  Tape& t = *logits.tape();
  return t.record(std::move(out), {logits},
                  [logits, targets = std::move(targets), probs = std::move(probs)](Tape& t,
                                                                                  const Mat& g) {
                    const double s = g(0, 0) / static_cast<double>(probs.rows());
                    Mat d = probs;
                    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, targets[r]) -= 1.0;
                    t.grad(logits.id()) += d * s;
                  });
}

Var sum_scalars(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw std::invalid_argument("sum_scalars: terms and weights disagree");
  }
  Mat out = Mat::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw std::invalid_argument("sum_scalars: non-scalar term");
    out(0, 0) += weights[i] * terms[i].value()(0, 0);
  }
  std::vector<Var> saved(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  Tape& t = *terms[0].tape();
  return t.record(std::move(out), terms, [saved, w](Tape& t, const Mat& g) {
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (needs(t, saved[i])) t.grad(saved[i].id())(0, 0) += w[i] * g(0, 0);
    }
  });
}

}  // namespace ad
}  // namespace mealrec
