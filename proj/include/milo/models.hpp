#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/datasets.hpp"
#include "milo/mdp.hpp"

namespace milo {

enum class PenaltyVariant { kTheory, kEnsemble, kNone };

/// Count-based model P_hat(s'|s,a) = N(s'|s,a) / (N(s,a) + lambda). Rows are
/// sub-stochastic for lambda > 0.
class TabularModel {
 public:
  static TabularModel fit(const OfflineDataset& data, int n_states, int n_actions, double lambda);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  double lambda() const { return lambda_; }
  /// N(s, a) as an S x A table.
  const Mat& counts() const { return counts_; }
  /// N(s'|s,a) with rows indexed s * A + a.
  const Mat& transition_counts() const { return transition_counts_; }
  Mat p_hat() const;

  double sigma(int s, int a, double delta) const;
  Mat sigma_table(double delta) const;

  nlohmann::json to_json() const;
  static TabularModel from_json(const nlohmann::json& doc);

 private:
  int n_states_ = 0;
  int n_actions_ = 0;
  double lambda_ = 1.0;
  Mat counts_;
  Mat transition_counts_;
};

/// sqrt((S ln 2 + ln(2 S A / delta)) / (2 (N + lambda))) + lambda / (N + lambda).
double sigma_tabular(int n_states, int n_actions, double count, double lambda, double delta);

/// H * min(sigma, 2).
double theory_penalty(double sigma, int horizon);

struct KNRParams {
  double lambda = 1.0;
  double zeta = 0.1;
  double w_norm_bound = 1.0;  // upper bound on the spectral norm of W*
  double delta = 0.1;
};

/// Kernelized nonlinear regulator s' = W phi(s, a) + zeta * eps fit by ridge
/// regression: W_hat = S' Phi^T (Phi Phi^T + lambda I)^{-1}.
class KNRModel {
 public:
  static constexpr double kIllConditioned = 1e12;

  KNRModel() = default;
  static KNRModel fit(const std::vector<Vec>& features, const std::vector<Vec>& targets,
                      const KNRParams& params, int feature_dim, int state_dim);
  static KNRModel fit(const OfflineDataset& data, const FeatureMap& feature_map,
                      const KNRParams& params);

  /// Model refit with one more (phi, s') sample.
  KNRModel appended(const Vec& phi, const Vec& target) const;

  const Mat& w_hat() const { return w_hat_; }
  /// Sigma_n = sum_i phi_i phi_i^T + lambda I.
  const Mat& sigma_matrix() const { return gram_; }
  const KNRParams& params() const { return params_; }
  int n_samples() const { return n_; }
  int feature_dim() const { return static_cast<int>(gram_.rows()); }
  int state_dim() const { return static_cast<int>(cross_.rows()); }
  bool ill_conditioned() const { return condition_number_ > kIllConditioned; }
  double condition_number() const { return condition_number_; }

  Vec predict(const Vec& phi) const { return w_hat_ * phi; }
  /// log det(Sigma_n / lambda).
  double information_gain_bar() const;
  double beta() const;
  /// sqrt(phi^T Sigma_n^{-1} phi).
  double elliptical_norm(const Vec& phi) const;
  /// (beta / zeta) * sqrt(phi^T Sigma_n^{-1} phi).
  double sigma(const Vec& phi) const;

  nlohmann::json to_json() const;
  static KNRModel from_json(const nlohmann::json& doc);

 private:
  void refresh();

  KNRParams params_;
  int n_ = 0;
  Mat gram_;   // d x d
  Mat cross_;  // d_S x d, sum_i s'_i phi_i^T
  Mat w_hat_;
  Eigen::LLT<Mat> factor_;
  double condition_number_ = 1.0;
};

/// {2 lambda ||W*||^2 + 8 zeta^2 (d_S ln 5 + ln(1/delta) + I_bar)}^{1/2}.
double beta_knr(double lambda, double w_norm_bound, double zeta, int state_dim,
                double information_gain_bar, double delta);

struct KernelSpec {
  enum class Kind { kRbf, kDot };
  Kind kind = Kind::kRbf;
  double bandwidth = 1.0;

  /// RBF exp(-||x - y||^2 / (2 bandwidth^2)) has unit diagonal; the dot kernel
  /// x^T y satisfies k(x, x) <= 1 when inputs lie in the unit ball.
  double operator()(const Vec& x, const Vec& y) const;
  static KernelSpec rbf(double bandwidth) { return {Kind::kRbf, bandwidth}; }
  static KernelSpec dot() { return {Kind::kDot, 1.0}; }
};

/// Median pairwise Euclidean distance (over at most `max_points` inputs).
double median_heuristic(const std::vector<Vec>& inputs, int max_points = 500);

/// Gaussian-process dynamics with independent output dimensions sharing one
/// kernel and noise level zeta.
class GPModel {
 public:
  GPModel() = default;
  static GPModel fit(std::vector<Vec> inputs, std::vector<Vec> targets, const KernelSpec& kernel,
                     double zeta, int state_dim);
  static GPModel fit(const OfflineDataset& data, const FeatureMap& input_map,
                     const KernelSpec& kernel, double zeta);

  GPModel appended(const Vec& x, const Vec& target) const;

  int n_samples() const { return static_cast<int>(inputs_.size()); }
  int state_dim() const { return state_dim_; }
  double zeta() const { return zeta_; }
  const KernelSpec& kernel() const { return kernel_; }
  const std::vector<Vec>& inputs() const { return inputs_; }
  /// K_n, the n x n Gram matrix of the training inputs.
  const Mat& gram() const { return gram_; }
  /// Diagonal jitter that was needed to factor K + zeta^2 I (0 if none).
  double jitter() const { return jitter_; }

  Vec posterior_mean(const Vec& x) const;
  double posterior_kernel(const Vec& x, const Vec& y) const;
  /// log det(I + zeta^{-2} K_n).
  double information_gain() const;
  double beta(double delta) const;
  /// (beta / zeta) * sqrt(k_n(x, x)).
  double sigma(const Vec& x, double delta) const;

  nlohmann::json to_json() const;
  static GPModel from_json(const nlohmann::json& doc);

 private:
  void refresh();
  Vec cross_kernel(const Vec& x) const;

  std::vector<Vec> inputs_;
  Mat targets_;  // d_S x n
  KernelSpec kernel_;
  double zeta_ = 1.0;
  int state_dim_ = 0;
  Mat gram_;
  Eigen::LLT<Mat> factor_;
  Mat alpha_;  // (K + zeta^2 I)^{-1} S'^T, n x d_S
  double jitter_ = 0.0;
};

/// {d_S (2 + 150 log^3(d_S n / delta) I_n)}^{1/2}.
double beta_gp(int state_dim, double information_gain, int n_samples, double delta);

/// Bootstrap ensemble of KNR models sharing one feature map.
class EnsembleModel {
 public:
  static EnsembleModel fit(const OfflineDataset& data, const FeatureMap& feature_map,
                           const KNRParams& params, int n_members, std::uint64_t seed);
  explicit EnsembleModel(std::vector<KNRModel> members);

  const std::vector<KNRModel>& members() const { return members_; }
  /// max_{i,j} ||g_i(phi) - g_j(phi)||_2.
  double disagreement(const Vec& phi) const;

 private:
  std::vector<KNRModel> members_;
};

struct CalibrationResult {
  int violations = 0;
  int total = 0;
  double fraction = 0.0;
};

/// ||P_hat(.|s,a) - P(.|s,a)||_1 per pair, counting the missing mass of a
/// sub-stochastic row as error.
Mat total_variation_table(const Mat& p_hat, const Mat& p, int n_states, int n_actions);

/// Exact check of ||P_hat - P||_1 <= min(sigma, 2) at every (s, a).
CalibrationResult calibration_check(const Mat& p_hat, const Mat& sigma, const FiniteMDP& env);
CalibrationResult calibration_check(const TabularModel& model, const FiniteMDP& env,
                                    double delta);
/// Gaussian surrogate ||mu_hat - mu*||_2 / zeta <= min(sigma, 2) on (s, a) queries.
CalibrationResult calibration_check(const KNRModel& model, const LinearGaussianEnv& env,
                                    const std::vector<std::pair<Vec, Vec>>& queries);
CalibrationResult calibration_check(const GPModel& model, const FeatureMap& input_map,
                                    const LinearGaussianEnv& env,
                                    const std::vector<std::pair<Vec, Vec>>& queries,
                                    double delta);

}  // namespace milo
