#include "mealrec/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mealrec::diffusion {

Schedule::Schedule(std::vector<double> betas) : beta_(std::move(betas)) {
  const std::size_t n = beta_.size();
  alpha_.resize(n);
  alpha_bar_.resize(n);
  posterior_var_.resize(n);
  sigma_.resize(n);
  coef_x0_.resize(n);
  coef_xt_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double prev = running;
    alpha_[i] = 1.0 - beta_[i];
    running *= alpha_[i];
    alpha_bar_[i] = running;
    posterior_var_[i] = beta_[i] * (1.0 - prev) / (1.0 - running);
    sigma_[i] = std::sqrt(posterior_var_[i]);
    coef_x0_[i] = std::sqrt(prev) * beta_[i] / (1.0 - running);
    coef_xt_[i] = std::sqrt(alpha_[i]) * (1.0 - prev) / (1.0 - running);
  }
  if (n > 0) {
    // 1 - alpha_bar_1 need not round to beta_1; pin the exact collapse.
    posterior_var_[0] = 0.0;
    sigma_[0] = 0.0;
    coef_x0_[0] = 1.0;
    coef_xt_[0] = 0.0;
  }
}

Schedule Schedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("schedule betas must satisfy 0 < start <= end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  }
  return Schedule(std::move(betas));
}

Schedule Schedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("every beta must lie in (0, 1)");
  }
  return Schedule(std::move(betas));
}

void Schedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
}

double Schedule::beta(int t) const { check_step(t); return beta_[t - 1]; }
double Schedule::alpha(int t) const { check_step(t); return alpha_[t - 1]; }
double Schedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bar_[t - 1];
}
double Schedule::posterior_variance(int t) const { check_step(t); return posterior_var_[t - 1]; }
double Schedule::sigma(int t) const { check_step(t); return sigma_[t - 1]; }
double Schedule::mean_coef_x0(int t) const { check_step(t); return coef_x0_[t - 1]; }
double Schedule::mean_coef_xt(int t) const { check_step(t); return coef_xt_[t - 1]; }

Schedule make_schedule(int steps, double beta_start, double beta_end, bool rescale) {
  if (rescale && steps >= 1) {
    const double factor = 1000.0 / steps;
    beta_start = std::min(beta_start * factor, 0.999);
    beta_end = std::min(beta_end * factor, 0.999);
  }
  return Schedule::linear(steps, beta_start, beta_end);
}

Mat q_sample(const Mat& x0, int t, const Mat& eps, const Schedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw std::invalid_argument("q_sample: noise shape differs from x0");
  }
  const double ab = sched.alpha_bar(t);
  if (t == 0) throw std::out_of_range("q_sample: step must be >= 1");
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Mat posterior_step(const Mat& x_t, const Mat& x0_hat, int t, const Schedule& sched, const Mat& eps) {
  if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols() || eps.rows() != x_t.rows() ||
      eps.cols() != x_t.cols()) {
    throw std::invalid_argument("posterior_step: shape mismatch");
  }
  const double c0 = sched.mean_coef_x0(t);
  if (t == 1) return x0_hat;
  return c0 * x0_hat + sched.mean_coef_xt(t) * x_t + sched.sigma(t) * eps;
}

}  // namespace mealrec::diffusion
