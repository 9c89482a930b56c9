#include "milo/discriminators.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

#include <nlohmann/json.hpp>

namespace milo {

FiniteClass::FiniteClass(std::vector<Mat> members) : members_(std::move(members)) {
  require(!members_.empty(), "function class is empty");
  for (const Mat& f : members_) {
    require(f.rows() == members_.front().rows() && f.cols() == members_.front().cols(),
            "class members have different shapes");
    require(f.allFinite() && (f.array() >= 0.0).all() && (f.array() <= 1.0).all(),
            "class members must take values in [0, 1]");
  }
}

FiniteBestResponse best_response_finite(const FiniteClass& cls, const Mat& d_model,
                                        const Mat& d_expert) {
  require(d_model.rows() == cls[0].rows() && d_model.cols() == cls[0].cols() &&
              d_expert.rows() == d_model.rows() && d_expert.cols() == d_model.cols(),
          "distributions do not match the class shape");
  const Mat diff = d_model - d_expert;
  FiniteBestResponse best;
  best.ipm_value = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < cls.size(); ++i) {
    const double gap = (cls[i].array() * diff.array()).sum();
    if (gap > best.ipm_value) {
      best.index = i;
      best.ipm_value = gap;
    }
  }
  return best;
}

RFFMap::RFFMap(Mat frequencies, Vec phases, double bandwidth, std::uint64_t seed)
    : frequencies_(std::move(frequencies)),
      phases_(std::move(phases)),
      bandwidth_(bandwidth),
      seed_(seed) {
  require(frequencies_.rows() >= 1 && frequencies_.cols() >= 1, "RFF map needs D, d_in >= 1");
  require(phases_.size() == frequencies_.rows(), "phases must have length D");
  require(bandwidth_ > 0.0, "bandwidth must be positive");
  shift_ = Vec::Zero(input_dim());
  scale_ = Vec::Ones(input_dim());
}

void RFFMap::set_normalization(Vec shift, Vec scale) {
  require(shift.size() == input_dim() && scale.size() == input_dim(),
          "normalization has wrong dimension");
  require((scale.array() > 0.0).all(), "normalization scale must be positive");
  shift_ = std::move(shift);
  scale_ = std::move(scale);
}

Vec RFFMap::featurize(const Vec& x) const {
  require(x.size() == input_dim(), "RFF input has wrong dimension");
  const Vec z = (x - shift_).cwiseQuotient(scale_);
  const Vec proj = frequencies_ * z + phases_;
  return std::sqrt(2.0 / output_dim()) * proj.array().cos().matrix();
}

Vec RFFMap::featurize(const Vec& state, const Vec& action) const {
  Vec x(state.size() + action.size());
  x << state, action;
  return featurize(x);
}

nlohmann::json RFFMap::to_json() const {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<double> freq;
  for (int i = 0; i < frequencies_.rows(); ++i) {
    for (int j = 0; j < frequencies_.cols(); ++j) freq.push_back(frequencies_(i, j));
  }
  return {{"d_in", input_dim()},     {"n_features", output_dim()}, {"bandwidth", bandwidth_},
          {"seed", seed_},           {"frequencies", freq},        {"phases", vec(phases_)},
          {"shift", vec(shift_)},    {"scale", vec(scale_)}};
}

RFFMap RFFMap::from_json(const nlohmann::json& doc) {
  try {
    const int d_in = doc.at("d_in").get<int>();
    const int n = doc.at("n_features").get<int>();
    const auto freq = doc.at("frequencies").get<std::vector<double>>();
    const auto phases = doc.at("phases").get<std::vector<double>>();
    require(d_in >= 1 && n >= 1 && freq.size() == static_cast<std::size_t>(n) * d_in &&
                phases.size() == static_cast<std::size_t>(n),
            "RFF document has inconsistent sizes");
    Mat f(n, d_in);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d_in; ++j) f(i, j) = freq[static_cast<std::size_t>(i) * d_in + j];
    }
    RFFMap map(f, Eigen::Map<const Vec>(phases.data(), n), doc.at("bandwidth").get<double>(),
               doc.at("seed").get<std::uint64_t>());
    const auto shift = doc.at("shift").get<std::vector<double>>();
    const auto scale = doc.at("scale").get<std::vector<double>>();
    require(shift.size() == static_cast<std::size_t>(d_in) &&
                scale.size() == static_cast<std::size_t>(d_in),
            "RFF normalization has wrong length");
    map.set_normalization(Eigen::Map<const Vec>(shift.data(), d_in),
                          Eigen::Map<const Vec>(scale.data(), d_in));
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid RFF document: ") + e.what());
  }
}

RFFMap make_rff(int d_in, int n_features, double bandwidth, std::uint64_t seed) {
  require(d_in >= 1 && n_features >= 1, "RFF map needs D, d_in >= 1");
  require(bandwidth > 0.0, "bandwidth must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / bandwidth);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Mat freq(n_features, d_in);
  Vec phases(n_features);
  for (int i = 0; i < n_features; ++i) {
    for (int j = 0; j < d_in; ++j) freq(i, j) = normal(rng);
    phases(i) = phase(rng);
  }
  return RFFMap(std::move(freq), std::move(phases), bandwidth, seed);
}

std::pair<Vec, Vec> standardization(const std::vector<Vec>& inputs) {
  require(!inputs.empty(), "cannot standardize an empty set");
  const int d = static_cast<int>(inputs.front().size());
  Vec mean = Vec::Zero(d);
  for (const Vec& x : inputs) mean += x;
  mean /= static_cast<double>(inputs.size());
  Vec var = Vec::Zero(d);
  for (const Vec& x : inputs) var += (x - mean).cwiseAbs2();
  var /= static_cast<double>(inputs.size());
  return {mean, var.cwiseSqrt().cwiseMax(1e-8)};
}

MMDBestResponse mmd_best_response(const Vec& mean_model, const Vec& mean_expert,
                                  double radius_sq) {
  require(mean_model.size() == mean_expert.size(), "mean embeddings differ in dimension");
  require(radius_sq > 0.0, "radius must be positive");
  const Vec delta = mean_model - mean_expert;
  const double norm = delta.norm();
  MMDBestResponse out;
  if (norm > 0.0) {
    const double radius = std::sqrt(radius_sq);
    out.discriminator.w = radius * delta / norm;
    out.ipm_value = radius * norm;
  } else {
    out.discriminator.w = Vec::Zero(delta.size());
  }
  return out;
}

Vec one_hot(int s, int a, int n_states, int n_actions) {
  require(s >= 0 && s < n_states && a >= 0 && a < n_actions, "(s, a) out of range");
  Vec v = Vec::Zero(n_states * n_actions);
  v(s * n_actions + a) = 1.0;
  return v;
}

}  // namespace milo
