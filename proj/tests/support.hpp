#pragma once

// Shared helpers for the unit and acceptance tests.

#include "mealrec/autograd.hpp"
#include "mealrec/rng.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace mealrec::testing {

/// Relative error |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradProbe {
  std::string param;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

/// Compares the analytic gradient of `loss` (recorded on a fresh tape each
/// call) with central differences at `probes` random entries of every named
/// parameter. `loss` must be deterministic.
inline std::vector<GradProbe> check_gradients(ParamStore& store, const std::vector<std::string>& names,
                                              const std::function<ad::Var(ad::Tape&)>& loss, int probes,
                                              std::uint64_t seed, double step = 1e-6) {
  store.zero_grad();
  {
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  Rng rng(seed);
  std::vector<GradProbe> out;
  for (const auto& name : names) {
    Parameter& p = store.get(name);
    std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
    for (int i = 0; i < probes; ++i) {
      GradProbe g;
      g.param = name;
      g.index = pick(rng);
      g.analytic = p.grad.data()[g.index];
      const double saved = p.value.data()[g.index];
      auto eval_at = [&](double v) {
        p.value.data()[g.index] = v;
        ad::Tape tape(false);
        return loss(tape).value()(0, 0);
      };
      const double up = eval_at(saved + step);
      const double down = eval_at(saved - step);
      p.value.data()[g.index] = saved;
      g.numeric = (up - down) / (2.0 * step);
      g.error = rel_error(g.analytic, g.numeric, 1e-6);
      out.push_back(g);
    }
  }
  return out;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mealrec_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline double max_error(const std::vector<GradProbe>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.error);
  return m;
}

namespace reference {

// Plain-loop re-implementations used as forward-pass oracles.

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
    }
  }
  return out;
}

inline Mat layer_norm(const ParamStore& s, const std::string& prefix, const Mat& x) {
  return layer_norm(x, s.get(prefix + ".gain").value, s.get(prefix + ".bias").value);
}

inline Mat dense(const ParamStore& s, const std::string& prefix, const Mat& x) {
  Mat y = x * s.get(prefix + ".weight").value;
  if (s.contains(prefix + ".bias")) y.rowwise() += s.get(prefix + ".bias").value.row(0);
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

/// Scaled dot-product attention per head; `causal` restricts row i to keys 0..i.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, int heads, bool causal) {
  const Eigen::Index n = q.rows(), m = k.rows(), dh = q.cols() / heads;
  Mat out = Mat::Zero(n, v.cols());
  for (int head = 0; head < heads; ++head) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index keys = causal ? i + 1 : m;
      std::vector<double> w;
      for (Eigen::Index j = 0; j < keys; ++j) {
        double dot = 0.0;
        for (Eigen::Index d = 0; d < dh; ++d) dot += q(i, head * dh + d) * k(j, head * dh + d);
        w.push_back(dot / std::sqrt(static_cast<double>(dh)));
      }
      const double mx = *std::max_element(w.begin(), w.end());
      double z = 0.0;
      for (double& x : w) z += (x = std::exp(x - mx));
      for (Eigen::Index j = 0; j < keys; ++j) {
        for (Eigen::Index d = 0; d < dh; ++d) out(i, head * dh + d) += w[j] / z * v(j, head * dh + d);
      }
    }
  }
  return out;
}

/// Pre-norm block: h += MHA(LN(h)); h += FFN(LN(h)), no dropout.
inline Mat attention_block(const ParamStore& s, const std::string& p, Mat h, int heads, bool causal) {
  const Mat x = layer_norm(s, p + ".ln_attn", h);
  h += attention(dense(s, p + ".query", x), dense(s, p + ".key", x), dense(s, p + ".value", x), heads, causal);
  h += dense(s, p + ".ffn_out", gelu(dense(s, p + ".ffn_in", layer_norm(s, p + ".ln_ffn", h))));
  return h;
}

}  // namespace reference

}  // namespace mealrec::testing
