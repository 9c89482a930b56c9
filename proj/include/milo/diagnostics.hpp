#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/models.hpp"
#include "milo/types.hpp"

namespace milo {

/// max over the support of d_expert of d_expert / rho; unbounded when d_expert
/// puts mass where rho is zero.
MaybeInfinite concentrability(const Mat& d_expert, const Mat& rho);

/// sup_x (x^T Sigma_e x) / (x^T Sigma_rho x); unbounded when Sigma_e has a
/// component outside range(Sigma_rho) with norm above 1e-8.
MaybeInfinite relative_condition_number(const Mat& sigma_expert, const Mat& sigma_rho);

/// E_d[phi phi^T] for one-hot features of a distribution over S x A.
Mat one_hot_covariance(const Mat& d);

/// min{j >= 0 : j >= B(j+1) n_o / zeta^2} with B(j) = sum_{k >= j} mu_k
/// (eigenvalues indexed from 1, nonincreasing).
int effective_dimension(const Vec& eigenvalues, int n_o, double zeta);

/// min{j >= 0 : j >= B_hat(j+1) / zeta^2} for Gram eigenvalues.
int empirical_effective_dimension(const Vec& gram_eigenvalues, double zeta);

/// Nonincreasing eigenvalues of a symmetric PSD matrix (negatives clipped to 0).
Vec sorted_eigenvalues(const Mat& sym);

struct ErrBounds {
  double err_o = 0.0;        // 8 H^2 E[min(sigma, 1)]
  double err_e = 0.0;        // 2 H sqrt(ln(2|F| / delta) / (2 n_e))
  double err_o_proof = 0.0;  // (6 H^2 + 2 H) E[min(sigma, 1)]
  double total() const { return err_o + err_e; }
};

/// Exact expectation of min(sigma, 1) under a tabular expert occupancy.
ErrBounds err_bounds(const Mat& sigma, const Mat& d_expert, int n_e, int class_size,
                     double delta, int horizon);
/// Sample average of min(sigma, 1) over expert samples.
ErrBounds err_bounds(const std::vector<double>& sigma_at_expert, int n_e, int class_size,
                     double delta, int horizon);

struct BoundConstants {
  double c1 = 1.0;
  double c2 = 1.0;
};

/// c1 H^2 (sqrt(C S^2 A / n_o) + C S A / n_o) log(S A c2 / delta). Up to constants.
double tabular_bound(double concentrability, int n_states, int n_actions, int n_o, double delta,
                     int horizon, BoundConstants k = {});
/// c1 H^2 (r^2 + r log(c2 / delta)) sqrt(d_S C / n_o) sqrt(log(1 + n_o)). Up to constants.
double knr_bound(int rank, int state_dim, double relative_condition, int n_o, double delta,
                 int horizon, BoundConstants k = {});
/// c1 H^2 (d*^2 + d* log(c2 / delta)) sqrt(d_S C / n_o)
///   sqrt(log^3(c2 d_S n_o / delta) log(1 + n_o)). Up to constants.
double gp_bound(int effective_dim, int state_dim, double relative_condition, int n_o,
                double delta, int horizon, BoundConstants k = {});

/// Sample average of the posterior variance k_n(x, x) over query inputs.
double learning_curve(const GPModel& model, const std::vector<Vec>& queries);

struct CoverageReport {
  std::optional<MaybeInfinite> concentrability;
  std::optional<MaybeInfinite> relative_condition_number;
  std::optional<double> information_gain_bar;  // KNR
  std::optional<double> information_gain;      // GP
  std::optional<int> effective_dim;
  std::optional<int> empirical_effective_dim;
  std::optional<ErrBounds> err;
  std::optional<double> rate_bound;

  nlohmann::json to_json() const;
};

}  // namespace milo
