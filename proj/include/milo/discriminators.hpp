#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/types.hpp"

namespace milo {

/// Finite class of tabular cost functions, each an S x A table with entries in [0, 1].
class FiniteClass {
 public:
  explicit FiniteClass(std::vector<Mat> members);

  int size() const { return static_cast<int>(members_.size()); }
  const Mat& operator[](int i) const { return members_[i]; }
  const std::vector<Mat>& members() const { return members_; }

 private:
  std::vector<Mat> members_;
};

struct FiniteBestResponse {
  int index = 0;
  double ipm_value = 0.0;
};

/// argmax_f E_model[f] - E_expert[f] over the class; ties go to the lowest index.
/// Both distributions are S x A tables (an empirical expert table is allowed).
FiniteBestResponse best_response_finite(const FiniteClass& cls, const Mat& d_model,
                                        const Mat& d_expert);

/// Random Fourier features phi_j(x) = sqrt(2/D) cos(omega_j . x + b_j) with
/// omega ~ N(0, bandwidth^{-2} I) and b ~ U[0, 2 pi). Inputs are standardized by
/// (x - shift) / scale before projection.
class RFFMap {
 public:
  RFFMap(Mat frequencies, Vec phases, double bandwidth, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(frequencies_.cols()); }
  int output_dim() const { return static_cast<int>(frequencies_.rows()); }
  double bandwidth() const { return bandwidth_; }
  std::uint64_t seed() const { return seed_; }
  const Mat& frequencies() const { return frequencies_; }
  const Vec& phases() const { return phases_; }

  void set_normalization(Vec shift, Vec scale);
  const Vec& shift() const { return shift_; }
  const Vec& scale() const { return scale_; }

  Vec featurize(const Vec& x) const;
  Vec featurize(const Vec& state, const Vec& action) const;

  nlohmann::json to_json() const;
  static RFFMap from_json(const nlohmann::json& doc);

 private:
  Mat frequencies_;  // D x d_in
  Vec phases_;
  double bandwidth_;
  std::uint64_t seed_;
  Vec shift_;
  Vec scale_;
};

RFFMap make_rff(int d_in, int n_features, double bandwidth, std::uint64_t seed);

/// Per-dimension mean and standard deviation (floored at 1e-8) of inputs.
std::pair<Vec, Vec> standardization(const std::vector<Vec>& inputs);

struct LinearDiscriminator {
  Vec w;

  double operator()(const Vec& features) const { return w.dot(features); }
};

struct MMDBestResponse {
  LinearDiscriminator discriminator;
  double ipm_value = 0.0;
};

/// Maximizes w^T (mean_model - mean_expert) over ||w||_2^2 <= radius_sq. The
/// default radius gives the unit ball.
MMDBestResponse mmd_best_response(const Vec& mean_model, const Vec& mean_expert,
                                  double radius_sq = 1.0);

/// One-hot indicator of (s, a) in R^{S*A}, row-major.
Vec one_hot(int s, int a, int n_states, int n_actions);

}  // namespace milo
