#include "milo/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

constexpr double kNullSpaceTolerance = 1e-8;

double mean_min_sigma(const Mat& sigma, const Mat& d) {
  require(sigma.rows() == d.rows() && sigma.cols() == d.cols(), "sigma and d differ in shape");
  return (sigma.cwiseMin(1.0).array() * d.array()).sum();
}

ErrBounds assemble(double expected_min_sigma, int n_e, int class_size, double delta, int horizon) {
  require(n_e >= 1 && class_size >= 1, "n_e and |F| must be positive");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(horizon >= 1, "horizon must be positive");
  const double H = horizon;
  ErrBounds out;
  out.err_o = 8.0 * H * H * expected_min_sigma;
  out.err_o_proof = (6.0 * H * H + 2.0 * H) * expected_min_sigma;
  out.err_e = 2.0 * H * std::sqrt(std::log(2.0 * class_size / delta) / (2.0 * n_e));
  return out;
}

int smallest_dimension(const Vec& eigenvalues, double scale) {
  const int m = static_cast<int>(eigenvalues.size());
  for (int i = 0; i < m; ++i) {
    require(eigenvalues(i) >= 0.0 && std::isfinite(eigenvalues(i)),
            "eigenvalues must be finite and nonnegative");
    if (i > 0) require(eigenvalues(i) <= eigenvalues(i - 1), "eigenvalues must be nonincreasing");
  }
  // tail(j) = B(j + 1) = sum_{k > j} mu_k with mu indexed from 1.
  Vec tail = Vec::Zero(m + 1);
  for (int j = m - 1; j >= 0; --j) tail(j) = tail(j + 1) + eigenvalues(j);
  for (int j = 0; j <= m; ++j) {
    if (j >= tail(j) * scale) return j;
  }
  return m;
}

nlohmann::json maybe_json(const MaybeInfinite& v) {
  return {{"value", v.value}, {"infinite", v.infinite}};
}

}  // namespace

MaybeInfinite concentrability(const Mat& d_expert, const Mat& rho) {
  require(d_expert.rows() == rho.rows() && d_expert.cols() == rho.cols(),
          "distributions differ in shape");
  require((d_expert.array() >= 0.0).all() && (rho.array() >= 0.0).all(),
          "distributions must be nonnegative");
  double best = 0.0;
  for (int i = 0; i < d_expert.rows(); ++i) {
    for (int j = 0; j < d_expert.cols(); ++j) {
      if (d_expert(i, j) <= 0.0) continue;
      if (rho(i, j) <= 0.0) return MaybeInfinite::unbounded();
      best = std::max(best, d_expert(i, j) / rho(i, j));
    }
  }
  return MaybeInfinite::finite(best);
}

MaybeInfinite relative_condition_number(const Mat& sigma_expert, const Mat& sigma_rho) {
  require(sigma_expert.rows() == sigma_expert.cols() && sigma_rho.rows() == sigma_rho.cols() &&
              sigma_expert.rows() == sigma_rho.rows(),
          "covariances must be square and of equal size");
  const Mat se = 0.5 * (sigma_expert + sigma_expert.transpose());
  const Mat sr = 0.5 * (sigma_rho + sigma_rho.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sr);
  const Vec& lam = eig.eigenvalues();
  const Mat& u = eig.eigenvectors();
  const double top = std::max(lam.maxCoeff(), 0.0);
  const double cutoff = 1e-12 * std::max(top, 1e-300);
  std::vector<int> range;
  std::vector<int> null;
  for (int i = 0; i < lam.size(); ++i) (lam(i) > cutoff ? range : null).push_back(i);

  if (!null.empty()) {
    Mat un(u.rows(), static_cast<int>(null.size()));
    for (std::size_t k = 0; k < null.size(); ++k) un.col(static_cast<int>(k)) = u.col(null[k]);
    if ((se * un).norm() > kNullSpaceTolerance) return MaybeInfinite::unbounded();
  }
  if (range.empty()) return MaybeInfinite::finite(0.0);
  Mat whiten(u.rows(), static_cast<int>(range.size()));
  for (std::size_t k = 0; k < range.size(); ++k) {
    whiten.col(static_cast<int>(k)) = u.col(range[k]) / std::sqrt(lam(range[k]));
  }
  const Mat pencil = whiten.transpose() * se * whiten;
  Eigen::SelfAdjointEigenSolver<Mat> inner(0.5 * (pencil + pencil.transpose()),
                                           Eigen::EigenvaluesOnly);
  return MaybeInfinite::finite(std::max(0.0, inner.eigenvalues().maxCoeff()));
}

Mat one_hot_covariance(const Mat& d) { return Mat(flatten_pairs(d).asDiagonal()); }

int effective_dimension(const Vec& eigenvalues, int n_o, double zeta) {
  require(n_o >= 0 && zeta > 0.0, "need n_o >= 0 and zeta > 0");
  return smallest_dimension(eigenvalues, n_o / (zeta * zeta));
}

int empirical_effective_dimension(const Vec& gram_eigenvalues, double zeta) {
  require(zeta > 0.0, "zeta must be positive");
  return smallest_dimension(gram_eigenvalues, 1.0 / (zeta * zeta));
}

Vec sorted_eigenvalues(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  Vec ev = eig.eigenvalues().reverse().cwiseMax(0.0);
  return ev;
}

ErrBounds err_bounds(const Mat& sigma, const Mat& d_expert, int n_e, int class_size,
                     double delta, int horizon) {
  return assemble(mean_min_sigma(sigma, d_expert), n_e, class_size, delta, horizon);
}

ErrBounds err_bounds(const std::vector<double>& sigma_at_expert, int n_e, int class_size,
                     double delta, int horizon) {
  require(!sigma_at_expert.empty(), "need at least one expert sample");
  double mean = 0.0;
  for (double s : sigma_at_expert) mean += std::min(s, 1.0);
  mean /= static_cast<double>(sigma_at_expert.size());
  return assemble(mean, n_e, class_size, delta, horizon);
}

double tabular_bound(double concentrability, int n_states, int n_actions, int n_o, double delta,
                     int horizon, BoundConstants k) {
  require(n_o >= 1 && concentrability >= 0.0, "need n_o >= 1 and C >= 0");
  const double C = concentrability;
  const double S = n_states;
  const double A = n_actions;
  const double H = horizon;
  return k.c1 * H * H * (std::sqrt(C * S * S * A / n_o) + C * S * A / n_o) *
         std::log(S * A * k.c2 / delta);
}

double knr_bound(int rank, int state_dim, double relative_condition, int n_o, double delta,
                 int horizon, BoundConstants k) {
  require(n_o >= 1 && relative_condition >= 0.0, "need n_o >= 1 and C >= 0");
  const double r = rank;
  const double H = horizon;
  return k.c1 * H * H * (r * r + r * std::log(k.c2 / delta)) *
         std::sqrt(state_dim * relative_condition / n_o) * std::sqrt(std::log(1.0 + n_o));
}

double gp_bound(int effective_dim, int state_dim, double relative_condition, int n_o,
                double delta, int horizon, BoundConstants k) {
  require(n_o >= 1 && relative_condition >= 0.0, "need n_o >= 1 and C >= 0");
  const double d = effective_dim;
  const double H = horizon;
  const double log_term = std::log(k.c2 * state_dim * n_o / delta);
  return k.c1 * H * H * (d * d + d * std::log(k.c2 / delta)) *
         std::sqrt(state_dim * relative_condition / n_o) *
         std::sqrt(std::pow(log_term, 3) * std::log(1.0 + n_o));
}

double learning_curve(const GPModel& model, const std::vector<Vec>& queries) {
  require(!queries.empty(), "need at least one query input");
  double total = 0.0;
  for (const Vec& x : queries) total += std::max(0.0, model.posterior_kernel(x, x));
  return total / static_cast<double>(queries.size());
}

nlohmann::json CoverageReport::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  if (concentrability) doc["concentrability"] = maybe_json(*concentrability);
  if (relative_condition_number) {
    doc["relative_condition_number"] = maybe_json(*relative_condition_number);
  }
  if (information_gain_bar) doc["information_gain_bar"] = *information_gain_bar;
  if (information_gain) doc["information_gain"] = *information_gain;
  if (effective_dim) doc["effective_dim"] = *effective_dim;
  if (empirical_effective_dim) doc["empirical_effective_dim"] = *empirical_effective_dim;
  if (err) {
    doc["err_o"] = err->err_o;
    doc["err_e"] = err->err_e;
    doc["err_o_proof"] = err->err_o_proof;
  }
  if (rate_bound) doc["rate_bound_up_to_constants"] = *rate_bound;
  return doc;
}

}  // namespace milo
