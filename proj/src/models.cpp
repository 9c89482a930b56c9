#include "milo/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

nlohmann::json mat_to_json(const Mat& m) {
  std::vector<double> flat;
  flat.reserve(m.size());
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Mat mat_from_json(const nlohmann::json& doc) {
  const int rows = doc.at("rows").get<int>();
  const int cols = doc.at("cols").get<int>();
  const auto flat = doc.at("data").get<std::vector<double>>();
  require(rows >= 0 && cols >= 0 && flat.size() == static_cast<std::size_t>(rows) * cols,
          "matrix document has inconsistent size");
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = flat[static_cast<std::size_t>(i) * cols + j];
  }
  return m;
}

template <typename Fn>
auto json_guard(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid ") + what + " document: " + e.what());
  }
}

CalibrationResult tally(int violations, int total) {
  CalibrationResult out;
  out.violations = violations;
  out.total = total;
  out.fraction = total > 0 ? static_cast<double>(violations) / total : 0.0;
  return out;
}

std::vector<Vec> dataset_features(const OfflineDataset& data, const FeatureMap& map) {
  std::vector<Vec> out;
  out.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) out.push_back(map(data.states[i], data.actions[i]));
  return out;
}

}  // namespace

// ---------------------------------------------------------------- tabular

TabularModel TabularModel::fit(const OfflineDataset& data, int n_states, int n_actions,
                               double lambda) {
  require(lambda > 0.0, "lambda must be positive");
  require(n_states >= 1 && n_actions >= 1, "model needs states and actions");
  TabularModel model;
  model.n_states_ = n_states;
  model.n_actions_ = n_actions;
  model.lambda_ = lambda;
  model.counts_ = Mat::Zero(n_states, n_actions);
  model.transition_counts_ = Mat::Zero(n_states * n_actions, n_states);
  for (int i = 0; i < data.size(); ++i) {
    const int s = as_index(data.states[i], n_states);
    const int a = as_index(data.actions[i], n_actions);
    const int sp = as_index(data.next_states[i], n_states);
    model.counts_(s, a) += 1.0;
    model.transition_counts_(s * n_actions + a, sp) += 1.0;
  }
  return model;
}

Mat TabularModel::p_hat() const {
  Mat p = transition_counts_;
  for (int s = 0; s < n_states_; ++s) {
    for (int a = 0; a < n_actions_; ++a) p.row(s * n_actions_ + a) /= counts_(s, a) + lambda_;
  }
  return p;
}

double TabularModel::sigma(int s, int a, double delta) const {
  require(s >= 0 && s < n_states_ && a >= 0 && a < n_actions_, "(s, a) out of range");
  return sigma_tabular(n_states_, n_actions_, counts_(s, a), lambda_, delta);
}

Mat TabularModel::sigma_table(double delta) const {
  Mat out(n_states_, n_actions_);
  for (int s = 0; s < n_states_; ++s) {
    for (int a = 0; a < n_actions_; ++a) out(s, a) = sigma(s, a, delta);
  }
  return out;
}

nlohmann::json TabularModel::to_json() const {
  return {{"kind", "tabular"},
          {"n_states", n_states_},
          {"n_actions", n_actions_},
          {"lambda", lambda_},
          {"transition_counts", mat_to_json(transition_counts_)}};
}

TabularModel TabularModel::from_json(const nlohmann::json& doc) {
  return json_guard("tabular model", [&] {
    TabularModel model;
    model.n_states_ = doc.at("n_states").get<int>();
    model.n_actions_ = doc.at("n_actions").get<int>();
    model.lambda_ = doc.at("lambda").get<double>();
    require(model.lambda_ > 0.0, "lambda must be positive");
    model.transition_counts_ = mat_from_json(doc.at("transition_counts"));
    require(model.transition_counts_.rows() == model.n_states_ * model.n_actions_ &&
                model.transition_counts_.cols() == model.n_states_,
            "transition_counts has wrong shape");
    model.counts_ = unflatten_pairs(model.transition_counts_.rowwise().sum(), model.n_states_,
                                    model.n_actions_);
    return model;
  });
}

double sigma_tabular(int n_states, int n_actions, double count, double lambda, double delta) {
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(lambda > 0.0 && count >= 0.0, "need lambda > 0 and a nonnegative count");
  const double numerator =
      n_states * std::log(2.0) + std::log(2.0 * n_states * n_actions / delta);
  return std::sqrt(numerator / (2.0 * (count + lambda))) + lambda / (count + lambda);
}

double theory_penalty(double sigma, int horizon) { return horizon * std::min(sigma, 2.0); }

// ---------------------------------------------------------------- KNR

KNRModel KNRModel::fit(const std::vector<Vec>& features, const std::vector<Vec>& targets,
                       const KNRParams& params, int feature_dim, int state_dim) {
  require(params.lambda > 0.0, "lambda must be positive");
  require(params.zeta > 0.0, "zeta must be positive");
  require(params.delta > 0.0 && params.delta < 1.0, "delta must lie in (0, 1)");
  require(features.size() == targets.size(), "features and targets differ in count");
  require(feature_dim >= 1 && state_dim >= 1, "dimensions must be positive");
  KNRModel model;
  model.params_ = params;
  model.n_ = static_cast<int>(features.size());
  model.gram_ = params.lambda * Mat::Identity(feature_dim, feature_dim);
  model.cross_ = Mat::Zero(state_dim, feature_dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(features[i].size() == feature_dim, "feature has wrong dimension");
    require(targets[i].size() == state_dim, "target has wrong dimension");
    model.gram_.noalias() += features[i] * features[i].transpose();
    model.cross_.noalias() += targets[i] * features[i].transpose();
  }
  model.refresh();
  return model;
}

KNRModel KNRModel::fit(const OfflineDataset& data, const FeatureMap& feature_map,
                       const KNRParams& params) {
  require(data.size() >= 1, "offline dataset is empty");
  const std::vector<Vec> features = dataset_features(data, feature_map);
  return fit(features, data.next_states, params, static_cast<int>(features.front().size()),
             static_cast<int>(data.next_states.front().size()));
}

KNRModel KNRModel::appended(const Vec& phi, const Vec& target) const {
  require(phi.size() == feature_dim() && target.size() == state_dim(),
          "appended sample has wrong dimension");
  KNRModel next = *this;
  next.n_ += 1;
  next.gram_.noalias() += phi * phi.transpose();
  next.cross_.noalias() += target * phi.transpose();
  next.refresh();
  return next;
}

void KNRModel::refresh() {
  gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
  factor_.compute(gram_);
  if (factor_.info() != Eigen::Success) throw NumericalError("KNR covariance is not positive definite");
  w_hat_ = factor_.solve(cross_.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram_, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  condition_number_ = lo > 0.0 ? eig.eigenvalues().maxCoeff() / lo
                               : std::numeric_limits<double>::infinity();
}

double KNRModel::information_gain_bar() const {
  const Vec diag = factor_.matrixL().toDenseMatrix().diagonal();
  return 2.0 * diag.array().log().sum() - feature_dim() * std::log(params_.lambda);
}

double KNRModel::beta() const {
  return beta_knr(params_.lambda, params_.w_norm_bound, params_.zeta, state_dim(),
                  information_gain_bar(), params_.delta);
}

double KNRModel::elliptical_norm(const Vec& phi) const {
  require(phi.size() == feature_dim(), "feature has wrong dimension");
  return std::sqrt(std::max(0.0, phi.dot(factor_.solve(phi))));
}

double KNRModel::sigma(const Vec& phi) const {
  return beta() / params_.zeta * elliptical_norm(phi);
}

nlohmann::json KNRModel::to_json() const {
  return {{"kind", "knr"},
          {"lambda", params_.lambda},
          {"zeta", params_.zeta},
          {"w_norm_bound", params_.w_norm_bound},
          {"delta", params_.delta},
          {"n", n_},
          {"sigma", mat_to_json(gram_)},
          {"cross", mat_to_json(cross_)},
          {"w_hat", mat_to_json(w_hat_)}};
}

KNRModel KNRModel::from_json(const nlohmann::json& doc) {
  return json_guard("KNR model", [&] {
    KNRModel model;
    model.params_.lambda = doc.at("lambda").get<double>();
    model.params_.zeta = doc.at("zeta").get<double>();
    model.params_.w_norm_bound = doc.at("w_norm_bound").get<double>();
    model.params_.delta = doc.at("delta").get<double>();
    model.n_ = doc.at("n").get<int>();
    model.gram_ = mat_from_json(doc.at("sigma"));
    model.cross_ = mat_from_json(doc.at("cross"));
    require(model.gram_.rows() == model.gram_.cols() && model.cross_.cols() == model.gram_.rows(),
            "KNR matrices have inconsistent shapes");
    model.refresh();
    return model;
  });
}

double beta_knr(double lambda, double w_norm_bound, double zeta, int state_dim,
                double information_gain_bar, double delta) {
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  const double inner =
      state_dim * std::log(5.0) + std::log(1.0 / delta) + information_gain_bar;
  return std::sqrt(2.0 * lambda * w_norm_bound * w_norm_bound + 8.0 * zeta * zeta * inner);
}

// ---------------------------------------------------------------- GP

double KernelSpec::operator()(const Vec& x, const Vec& y) const {
  if (kind == Kind::kDot) return x.dot(y);
  return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

double median_heuristic(const std::vector<Vec>& inputs, int max_points) {
  require(inputs.size() >= 2, "median heuristic needs at least two inputs");
  const std::size_t m = std::min<std::size_t>(inputs.size(), static_cast<std::size_t>(max_points));
  const std::size_t stride = inputs.size() / m;
  std::vector<double> dists;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      dists.push_back((inputs[i * stride] - inputs[j * stride]).norm());
    }
  }
  auto mid = dists.begin() + dists.size() / 2;
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid > 0.0 ? *mid : 1.0;
}

GPModel GPModel::fit(std::vector<Vec> inputs, std::vector<Vec> targets, const KernelSpec& kernel,
                     double zeta, int state_dim) {
  require(zeta > 0.0, "zeta must be positive");
  require(kernel.bandwidth > 0.0, "kernel bandwidth must be positive");
  require(inputs.size() == targets.size(), "inputs and targets differ in count");
  require(state_dim >= 1, "state_dim must be positive");
  GPModel model;
  model.kernel_ = kernel;
  model.zeta_ = zeta;
  model.state_dim_ = state_dim;
  model.targets_ = Mat(state_dim, static_cast<int>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require(targets[i].size() == state_dim, "target has wrong dimension");
    model.targets_.col(static_cast<int>(i)) = targets[i];
  }
  model.inputs_ = std::move(inputs);
  model.refresh();
  return model;
}

GPModel GPModel::fit(const OfflineDataset& data, const FeatureMap& input_map,
                     const KernelSpec& kernel, double zeta) {
  require(data.size() >= 1, "offline dataset is empty");
  return fit(dataset_features(data, input_map), data.next_states, kernel, zeta,
             static_cast<int>(data.next_states.front().size()));
}

GPModel GPModel::appended(const Vec& x, const Vec& target) const {
  std::vector<Vec> inputs = inputs_;
  std::vector<Vec> targets;
  for (int i = 0; i < targets_.cols(); ++i) targets.push_back(targets_.col(i));
  inputs.push_back(x);
  targets.push_back(target);
  return fit(std::move(inputs), std::move(targets), kernel_, zeta_, state_dim_);
}

void GPModel::refresh() {
  const int n = n_samples();
  gram_.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) gram_(i, j) = gram_(j, i) = kernel_(inputs_[i], inputs_[j]);
  }
  jitter_ = 0.0;
  if (n == 0) {
    alpha_ = Mat::Zero(0, state_dim_);
    return;
  }
  Mat system = gram_;
  system.diagonal().array() += zeta_ * zeta_;
  factor_.compute(system);
  double jitter = 1e-10 * gram_.trace() / n;
  for (int attempt = 0; factor_.info() != Eigen::Success; ++attempt) {
    if (attempt == 4 || !(jitter > 0.0)) {
      throw NumericalError("Cholesky factorization of the GP system failed after jitter");
    }
    Mat jittered = system;
    jittered.diagonal().array() += jitter;
    factor_.compute(jittered);
    jitter_ = jitter;
    jitter *= 10.0;
  }
  alpha_ = factor_.solve(targets_.transpose());
}

Vec GPModel::cross_kernel(const Vec& x) const {
  Vec k(n_samples());
  for (int i = 0; i < n_samples(); ++i) k(i) = kernel_(inputs_[i], x);
  return k;
}

Vec GPModel::posterior_mean(const Vec& x) const {
  if (n_samples() == 0) return Vec::Zero(state_dim_);
  return alpha_.transpose() * cross_kernel(x);
}

double GPModel::posterior_kernel(const Vec& x, const Vec& y) const {
  const double prior = kernel_(x, y);
  if (n_samples() == 0) return prior;
  const Vec kx = cross_kernel(x);
  const Vec ky = cross_kernel(y);
  return prior - kx.dot(factor_.solve(ky));
}

double GPModel::information_gain() const {
  if (n_samples() == 0) return 0.0;
  Mat scaled = Mat::Identity(n_samples(), n_samples()) + gram_ / (zeta_ * zeta_);
  Eigen::LLT<Mat> llt(scaled);
  if (llt.info() != Eigen::Success) throw NumericalError("I + K / zeta^2 is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double GPModel::beta(double delta) const {
  return beta_gp(state_dim_, information_gain(), n_samples(), delta);
}

double GPModel::sigma(const Vec& x, double delta) const {
  return beta(delta) / zeta_ * std::sqrt(std::max(0.0, posterior_kernel(x, x)));
}

nlohmann::json GPModel::to_json() const {
  Mat x(n_samples(), n_samples() > 0 ? inputs_.front().size() : 0);
  for (int i = 0; i < n_samples(); ++i) x.row(i) = inputs_[i].transpose();
  return {{"kind", "gp"},
          {"kernel", kernel_.kind == KernelSpec::Kind::kRbf ? "rbf" : "dot"},
          {"bandwidth", kernel_.bandwidth},
          {"zeta", zeta_},
          {"state_dim", state_dim_},
          {"inputs", mat_to_json(x)},
          {"targets", mat_to_json(targets_)}};
}

GPModel GPModel::from_json(const nlohmann::json& doc) {
  return json_guard("GP model", [&] {
    const std::string kind = doc.at("kernel").get<std::string>();
    require(kind == "rbf" || kind == "dot", "unknown kernel " + kind);
    KernelSpec kernel = kind == "rbf" ? KernelSpec::rbf(doc.at("bandwidth").get<double>())
                                      : KernelSpec::dot();
    const Mat x = mat_from_json(doc.at("inputs"));
    const Mat t = mat_from_json(doc.at("targets"));
    require(t.cols() == x.rows(), "GP inputs and targets differ in count");
    std::vector<Vec> inputs;
    std::vector<Vec> targets;
    for (int i = 0; i < x.rows(); ++i) {
      inputs.push_back(x.row(i).transpose());
      targets.push_back(t.col(i));
    }
    return fit(std::move(inputs), std::move(targets), kernel, doc.at("zeta").get<double>(),
               doc.at("state_dim").get<int>());
  });
}

double beta_gp(int state_dim, double information_gain, int n_samples, double delta) {
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  if (n_samples == 0) return std::sqrt(2.0 * state_dim);
  const double log_term = std::max(0.0, std::log(state_dim * n_samples / delta));
  return std::sqrt(state_dim * (2.0 + 150.0 * std::pow(log_term, 3) * information_gain));
}

// ---------------------------------------------------------------- ensemble

EnsembleModel::EnsembleModel(std::vector<KNRModel> members) : members_(std::move(members)) {
  require(members_.size() >= 2, "an ensemble needs at least two members");
  for (const KNRModel& m : members_) {
    require(m.feature_dim() == members_.front().feature_dim() &&
                m.params().zeta == members_.front().params().zeta,
            "ensemble members must share features and zeta");
  }
}

EnsembleModel EnsembleModel::fit(const OfflineDataset& data, const FeatureMap& feature_map,
                                 const KNRParams& params, int n_members, std::uint64_t seed) {
  require(n_members >= 2, "an ensemble needs at least two members");
  require(data.size() >= 1, "offline dataset is empty");
  const std::vector<Vec> features = dataset_features(data, feature_map);
  const int d = static_cast<int>(features.front().size());
  const int ds = static_cast<int>(data.next_states.front().size());
  std::vector<KNRModel> members;
  for (int m = 0; m < n_members; ++m) {
    Rng rng(seed + 7919ULL * static_cast<std::uint64_t>(m));
    std::uniform_int_distribution<int> pick(0, data.size() - 1);
    std::vector<Vec> phis;
    std::vector<Vec> targets;
    phis.reserve(data.size());
    targets.reserve(data.size());
    for (int i = 0; i < data.size(); ++i) {
      const int j = pick(rng);
      phis.push_back(features[j]);
      targets.push_back(data.next_states[j]);
    }
    members.push_back(KNRModel::fit(phis, targets, params, d, ds));
  }
  return EnsembleModel(std::move(members));
}

double EnsembleModel::disagreement(const Vec& phi) const {
  std::vector<Vec> preds;
  preds.reserve(members_.size());
  for (const KNRModel& m : members_) preds.push_back(m.predict(phi));
  double best = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = i + 1; j < preds.size(); ++j) {
      best = std::max(best, (preds[i] - preds[j]).norm());
    }
  }
  return best;
}

// ---------------------------------------------------------------- calibration

Mat total_variation_table(const Mat& p_hat, const Mat& p, int n_states, int n_actions) {
  require(p_hat.rows() == p.rows() && p_hat.cols() == p.cols() &&
              p.rows() == n_states * n_actions && p.cols() == n_states,
          "transition tables have mismatched shapes");
  Mat tv(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const int r = s * n_actions + a;
      const double missing = std::max(0.0, 1.0 - p_hat.row(r).sum());
      tv(s, a) = (p_hat.row(r) - p.row(r)).cwiseAbs().sum() + missing;
    }
  }
  return tv;
}

CalibrationResult calibration_check(const Mat& p_hat, const Mat& sigma, const FiniteMDP& env) {
  require(sigma.rows() == env.n_states() && sigma.cols() == env.n_actions(),
          "sigma table has wrong shape");
  const Mat tv = total_variation_table(p_hat, env.transition(), env.n_states(), env.n_actions());
  int violations = 0;
  for (int s = 0; s < env.n_states(); ++s) {
    for (int a = 0; a < env.n_actions(); ++a) {
      if (tv(s, a) > std::min(sigma(s, a), 2.0) + 1e-12) ++violations;
    }
  }
  return tally(violations, env.n_states() * env.n_actions());
}

CalibrationResult calibration_check(const TabularModel& model, const FiniteMDP& env,
                                    double delta) {
  return calibration_check(model.p_hat(), model.sigma_table(delta), env);
}

CalibrationResult calibration_check(const KNRModel& model, const LinearGaussianEnv& env,
                                    const std::vector<std::pair<Vec, Vec>>& queries) {
  int violations = 0;
  for (const auto& [s, a] : queries) {
    const Vec phi = env.features(s, a);
    const double err = (model.predict(phi) - env.mean_next(s, a)).norm() / env.noise_std();
    if (err > std::min(model.sigma(phi), 2.0)) ++violations;
  }
  return tally(violations, static_cast<int>(queries.size()));
}

CalibrationResult calibration_check(const GPModel& model, const FeatureMap& input_map,
                                    const LinearGaussianEnv& env,
                                    const std::vector<std::pair<Vec, Vec>>& queries,
                                    double delta) {
  int violations = 0;
  for (const auto& [s, a] : queries) {
    const Vec x = input_map(s, a);
    const double err = (model.posterior_mean(x) - env.mean_next(s, a)).norm() / env.noise_std();
    if (err > std::min(model.sigma(x, delta), 2.0)) ++violations;
  }
  return tally(violations, static_cast<int>(queries.size()));
}

}  // namespace milo
