#pragma once

// Diffusion variance schedule, closed-form forward sampling and the
// x0-parameterized reverse posterior step. Step indices are 1-based
// (1..T); alpha_bar(0) == 1 is implicit.

#include "mealrec/autograd.hpp"

#include <vector>

namespace mealrec::diffusion {

class Schedule {
 public:
  /// Linearly spaced betas from beta_start to beta_end over `steps` steps.
  /// Throws std::invalid_argument unless steps >= 1 and 0 < start <= end < 1.
  static Schedule linear(int steps, double beta_start, double beta_end);
  /// Arbitrary betas, each in (0, 1).
  static Schedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  /// Defined for t in [0, T]; alpha_bar(0) == 1.
  double alpha_bar(int t) const;
  double posterior_variance(int t) const;
  double sigma(int t) const;
  /// Coefficients (on x0_hat, on x_t) of the posterior mean at step t.
  double mean_coef_x0(int t) const;
  double mean_coef_xt(int t) const;

 private:
  explicit Schedule(std::vector<double> betas);
  void check_step(int t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
  std::vector<double> sigma_;
  std::vector<double> coef_x0_;
  std::vector<double> coef_xt_;
};

/// Effective linear schedule for a configured step count. With `rescale` the
/// endpoints are multiplied by 1000/steps (capped at 0.999) so a few-step
/// chain spans the same corruption range as a 1000-step one.
Schedule make_schedule(int steps, double beta_start, double beta_end, bool rescale);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Mat q_sample(const Mat& x0, int t, const Mat& eps, const Schedule& sched);

/// One reverse step: mu(x_t, x0_hat) + sigma_t eps. Returns x0_hat exactly at t = 1.
Mat posterior_step(const Mat& x_t, const Mat& x0_hat, int t, const Schedule& sched, const Mat& eps);

}  // namespace mealrec::diffusion
