#pragma once

// Problem data model for guaranteed-display allocation under random supply:
// instances, allocations, supply scenarios, the representativeness objective,
// random instance generation and Monte Carlo fulfillment estimation.

#include "adplan/errors.hpp"
#include "adplan/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace adplan {

// ---------------------------------------------------------------------------
// Seeding

/// Independent random streams derived from one master seed.
enum class Stream : std::uint64_t {
  instance = 1,
  scenarios = 2,
  evaluation = 3,
  sa_lower = 4,
  sa_upper = 5,
  chunk = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `label` (and repetition/problem `index`) of `master`.
inline std::uint64_t derive_seed(std::uint64_t master, Stream label,
                                 std::uint64_t index = 0) noexcept {
  const std::uint64_t a = splitmix64(master + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(label));
  return splitmix64(a ^ splitmix64(index + 0x9e3779b97f4a7c15ULL));
}

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Instance

class Instance {
public:
  /// Targeting is |K| rows by |V| columns; cell (k,v) means campaign k targets
  /// viewer type v. Throws InvalidInput when any invariant fails.
  Instance(std::vector<std::vector<bool>> targeting, Vector mu, DenseMatrix sigma, Vector goals,
           Vector weights, double alpha)
      : targeting_(std::move(targeting)), mu_(std::move(mu)), sigma_(std::move(sigma)),
        goals_(std::move(goals)), weights_(std::move(weights)), alpha_(alpha) {
    validate();
    build_index();
  }

  std::size_t num_viewer_types() const noexcept { return mu_.size(); }
  std::size_t num_campaigns() const noexcept { return goals_.size(); }
  bool targets(std::size_t k, std::size_t v) const noexcept { return targeting_[k][v]; }
  const std::vector<std::vector<bool>> &targeting() const noexcept { return targeting_; }
  const Vector &mu() const noexcept { return mu_; }
  const DenseMatrix &sigma() const noexcept { return sigma_; }
  const Vector &goals() const noexcept { return goals_; }
  const Vector &weights() const noexcept { return weights_; }
  double alpha() const noexcept { return alpha_; }

  /// Number of targeting pairs, i.e. decision variables p_vk.
  std::size_t decision_count() const noexcept { return pair_viewer_.size(); }

  /// V_k in ascending order.
  const std::vector<std::size_t> &campaign_viewers(std::size_t k) const { return viewers_of_[k]; }
  /// K_v in ascending order.
  const std::vector<std::size_t> &viewer_campaigns(std::size_t v) const { return campaigns_of_[v]; }

  /// Canonical (campaign-major) offset of campaign k's first pair.
  std::size_t campaign_offset(std::size_t k) const noexcept { return offset_[k]; }
  /// Canonical index of pair (v,k); v must be in V_k.
  std::size_t pair_index(std::size_t v, std::size_t k) const noexcept { return pair_of_[k][v]; }
  std::size_t pair_viewer(std::size_t idx) const noexcept { return pair_viewer_[idx]; }
  std::size_t pair_campaign(std::size_t idx) const noexcept { return pair_campaign_[idx]; }

  /// mu restricted to V_k.
  Vector campaign_mu(std::size_t k) const {
    Vector m;
    for (std::size_t v : viewers_of_[k])
      m.push_back(mu_[v]);
    return m;
  }
  /// Sigma restricted to V_k x V_k.
  DenseMatrix campaign_sigma(std::size_t k) const { return sigma_.submatrix(viewers_of_[k]); }

  /// Copy with a different tolerance.
  Instance with_alpha(double alpha) const {
    return Instance(targeting_, mu_, sigma_, goals_, weights_, alpha);
  }

  friend bool operator==(const Instance &a, const Instance &b) {
    return a.targeting_ == b.targeting_ && a.mu_ == b.mu_ && a.sigma_ == b.sigma_ &&
           a.goals_ == b.goals_ && a.weights_ == b.weights_ && a.alpha_ == b.alpha_;
  }

private:
  void validate() const {
    const std::size_t nk = goals_.size();
    const std::size_t nv = mu_.size();
    if (nk == 0)
      throw InvalidInput("num_campaigns must be positive");
    if (nv == 0)
      throw InvalidInput("num_viewer_types must be positive");
    if (targeting_.size() != nk)
      throw InvalidInput("targeting must have num_campaigns rows");
    for (std::size_t k = 0; k < nk; ++k) {
      if (targeting_[k].size() != nv)
        throw InvalidInput("targeting row " + std::to_string(k) + " must have num_viewer_types columns");
      if (std::none_of(targeting_[k].begin(), targeting_[k].end(), [](bool b) { return b; }))
        throw InvalidInput("targeting: campaign " + std::to_string(k) + " targets no viewer type");
    }
    for (std::size_t v = 0; v < nv; ++v) {
      bool any = false;
      for (std::size_t k = 0; k < nk; ++k)
        any = any || targeting_[k][v];
      if (!any)
        throw InvalidInput("targeting: viewer type " + std::to_string(v) + " is targeted by no campaign");
    }
    for (std::size_t v = 0; v < nv; ++v)
      if (!(mu_[v] > 0.0) || !std::isfinite(mu_[v]))
        throw InvalidInput("mu[" + std::to_string(v) + "] must be a positive real");
    if (sigma_.rows() != nv || sigma_.cols() != nv)
      throw InvalidInput("sigma must be num_viewer_types x num_viewer_types");
    if (!sigma_.symmetric(1e-12))
      throw InvalidInput("sigma must be symmetric");
    check_psd();
    if (weights_.size() != nk)
      throw InvalidInput("weights must have num_campaigns entries");
    for (std::size_t k = 0; k < nk; ++k) {
      if (!(goals_[k] > 0.0) || !std::isfinite(goals_[k]))
        throw InvalidInput("goals[" + std::to_string(k) + "] must be a positive real");
      if (!(weights_[k] >= 0.0) || !std::isfinite(weights_[k]))
        throw InvalidInput("weights[" + std::to_string(k) + "] must be non-negative");
    }
    if (!(alpha_ > 0.0 && alpha_ < 0.5))
      throw InvalidInput("alpha must lie in the open interval (0, 0.5), got " + std::to_string(alpha_));
  }

  // Smallest eigenvalue test through a shifted Cholesky: sigma + tol*I must be
  // positive definite for tol = 1e-10*trace/|V| (plus a tiny absolute floor).
  void check_psd() const {
    const std::size_t nv = mu_.size();
    const double tol = 1e-10 * std::max(sigma_.trace(), 0.0) / static_cast<double>(nv);
    DenseMatrix shifted = sigma_;
    for (std::size_t i = 0; i < nv; ++i)
      shifted(i, i) += tol + 1e-300;
    for (std::size_t i = 0; i < nv; ++i)
      for (std::size_t j = 0; j < i; ++j)
        shifted(i, j) = shifted(j, i);
    try {
      (void)cholesky(shifted);
    } catch (const NotPositiveDefinite &) {
      throw InvalidInput("sigma must be positive semidefinite");
    }
  }

  void build_index() {
    const std::size_t nk = goals_.size();
    const std::size_t nv = mu_.size();
    viewers_of_.assign(nk, {});
    campaigns_of_.assign(nv, {});
    pair_of_.assign(nk, std::vector<std::size_t>(nv, SIZE_MAX));
    offset_.assign(nk, 0);
    for (std::size_t k = 0; k < nk; ++k) {
      offset_[k] = pair_viewer_.size();
      for (std::size_t v = 0; v < nv; ++v)
        if (targeting_[k][v]) {
          pair_of_[k][v] = pair_viewer_.size();
          pair_viewer_.push_back(v);
          pair_campaign_.push_back(k);
          viewers_of_[k].push_back(v);
          campaigns_of_[v].push_back(k);
        }
    }
  }

  std::vector<std::vector<bool>> targeting_;
  Vector mu_;
  DenseMatrix sigma_;
  Vector goals_;
  Vector weights_;
  double alpha_;

  std::vector<std::vector<std::size_t>> viewers_of_;
  std::vector<std::vector<std::size_t>> campaigns_of_;
  std::vector<std::vector<std::size_t>> pair_of_;
  std::vector<std::size_t> offset_;
  std::vector<std::size_t> pair_viewer_;
  std::vector<std::size_t> pair_campaign_;
};

// ---------------------------------------------------------------------------
// Allocation

/// Supply proportions p_vk in canonical (campaign-major, viewer ascending) order.
class Allocation {
public:
  Allocation() = default;

  Allocation(const Instance &instance, Vector values) : values_(std::move(values)) {
    if (values_.size() != instance.decision_count())
      throw InvalidInput("allocation has " + std::to_string(values_.size()) +
                         " entries, instance has " + std::to_string(instance.decision_count()) +
                         " targeting pairs");
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!(values_[i] >= 0.0) || !std::isfinite(values_[i]))
        throw InvalidInput("allocation entry " + std::to_string(i) + " must be a non-negative real");
    for (std::size_t v = 0; v < instance.num_viewer_types(); ++v) {
      double used = 0.0;
      for (std::size_t k : instance.viewer_campaigns(v))
        used += values_[instance.pair_index(v, k)];
      if (used > 1.0 + 1e-9)
        throw InvalidInput("allocation exceeds the supply of viewer type " + std::to_string(v));
    }
  }

  const Vector &values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  /// p_k, the proportions of campaign k in ascending viewer order.
  std::span<const double> campaign(const Instance &instance, std::size_t k) const {
    return {values_.data() + instance.campaign_offset(k), instance.campaign_viewers(k).size()};
  }

private:
  Vector values_;
};

/// Sum over campaigns of w_k times the population variance of p_k.
inline double objective_value(const Instance &instance, std::span<const double> p) {
  if (p.size() != instance.decision_count())
    throw InvalidInput("objective_value: allocation size does not match the instance");
  double total = 0.0;
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    const std::size_t m = instance.campaign_viewers(k).size();
    const std::size_t off = instance.campaign_offset(k);
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      mean += p[off + j];
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = p[off + j] - mean;
      ss += d * d;
    }
    total += instance.weights()[k] * ss / static_cast<double>(m);
  }
  return total;
}

inline double objective_value(const Instance &instance, const Allocation &allocation) {
  return objective_value(instance, std::span<const double>(allocation.values()));
}

// ---------------------------------------------------------------------------
// Random instances

struct GenSpec {
  std::size_t campaigns_min = 5, campaigns_max = 10;
  std::size_t viewers_min = 10, viewers_max = 20;
  double targeting_probability = 0.5;
  double mu_min = 1000.0, mu_max = 10000.0;
  double variance_ratio_min = 0.25, variance_ratio_max = 0.5;
  double goal_ratio_min = 0.5, goal_ratio_max = 0.75;
  double weight = 1.0;
  double alpha = 0.1;
};

/// Gram matrix of `dim` independent uniform unit vectors in R^dim.
inline DenseMatrix random_correlation(std::size_t dim, Rng &rng) {
  if (dim == 0)
    throw InvalidInput("random_correlation: dim must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> u(dim, Vector(dim));
  for (auto &vec : u) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double &x : vec) {
        x = normal(rng);
        norm2 += x * x;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double &x : vec)
      x *= inv;
  }
  DenseMatrix g(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    g(i, i) = 1.0;
    for (std::size_t j = i + 1; j < dim; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < dim; ++t)
        dot += u[i][t] * u[j][t];
      dot = std::clamp(dot, -1.0, 1.0);
      g(i, j) = dot;
      g(j, i) = dot;
    }
  }
  return g;
}

inline Instance generate_instance(const GenSpec &spec, std::uint64_t seed) {
  if (spec.campaigns_min == 0 || spec.campaigns_min > spec.campaigns_max)
    throw InvalidInput("generate_instance: empty campaign-count range");
  if (spec.viewers_min == 0 || spec.viewers_min > spec.viewers_max)
    throw InvalidInput("generate_instance: empty viewer-type-count range");
  if (!(spec.mu_min > 0.0 && spec.mu_min <= spec.mu_max))
    throw InvalidInput("generate_instance: empty or non-positive mean range");
  if (!(spec.variance_ratio_min >= 0.0 && spec.variance_ratio_min <= spec.variance_ratio_max))
    throw InvalidInput("generate_instance: empty variance-ratio range");
  if (!(spec.goal_ratio_min > 0.0 && spec.goal_ratio_min <= spec.goal_ratio_max))
    throw InvalidInput("generate_instance: empty goal-ratio range");
  if (!(spec.targeting_probability >= 0.0 && spec.targeting_probability <= 1.0))
    throw InvalidInput("generate_instance: targeting probability outside [0,1]");

  Rng rng(seed);
  const std::size_t nk =
      std::uniform_int_distribution<std::size_t>(spec.campaigns_min, spec.campaigns_max)(rng);
  const std::size_t nv =
      std::uniform_int_distribution<std::size_t>(spec.viewers_min, spec.viewers_max)(rng);

  std::bernoulli_distribution coin(spec.targeting_probability);
  std::vector<std::vector<bool>> targeting(nk, std::vector<bool>(nv, false));
  for (auto &row : targeting)
    for (std::size_t v = 0; v < nv; ++v)
      row[v] = coin(rng);
  for (std::size_t k = 0; k < nk; ++k)
    if (std::none_of(targeting[k].begin(), targeting[k].end(), [](bool b) { return b; }))
      targeting[k][std::uniform_int_distribution<std::size_t>(0, nv - 1)(rng)] = true;
  for (std::size_t v = 0; v < nv; ++v) {
    bool any = false;
    for (std::size_t k = 0; k < nk; ++k)
      any = any || targeting[k][v];
    if (!any)
      targeting[std::uniform_int_distribution<std::size_t>(0, nk - 1)(rng)][v] = true;
  }

  Vector mu(nv);
  std::uniform_real_distribution<double> mean_dist(spec.mu_min, spec.mu_max);
  for (double &m : mu)
    m = mean_dist(rng);
  Vector sd(nv);
  std::uniform_real_distribution<double> var_dist(spec.variance_ratio_min, spec.variance_ratio_max);
  for (std::size_t v = 0; v < nv; ++v)
    sd[v] = std::sqrt(var_dist(rng) * mu[v]);

  const DenseMatrix corr = random_correlation(nv, rng);
  DenseMatrix sigma(nv, nv);
  for (std::size_t i = 0; i < nv; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double c = sd[i] * corr(i, j) * sd[j];
      sigma(i, j) = c;
      sigma(j, i) = c;
    }

  std::vector<std::size_t> fan_in(nv, 0);
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t k = 0; k < nk; ++k)
      fan_in[v] += targeting[k][v] ? 1 : 0;
  Vector goals(nk);
  std::uniform_real_distribution<double> goal_dist(spec.goal_ratio_min, spec.goal_ratio_max);
  for (std::size_t k = 0; k < nk; ++k) {
    double share = 0.0;
    for (std::size_t v = 0; v < nv; ++v)
      if (targeting[k][v])
        share += mu[v] / static_cast<double>(fan_in[v]);
    goals[k] = goal_dist(rng) * share;
  }

  return Instance(std::move(targeting), std::move(mu), std::move(sigma), std::move(goals),
                  Vector(nk, spec.weight), spec.alpha);
}

// ---------------------------------------------------------------------------
// Scenarios

enum class DistributionTag { multivariate_normal };

struct ScenarioSet {
  DenseMatrix samples; // N x |V|
  std::uint64_t seed = 0;
  DistributionTag distribution = DistributionTag::multivariate_normal;

  std::size_t size() const noexcept { return samples.rows(); }
  std::span<const double> scenario(std::size_t i) const { return samples.row(i); }
};

/// Draws rows mu + L z into `out` (rows x |V|), reusing one normal stream.
inline void draw_normal_rows(const Vector &mu, const LowerTriangular &factor, Rng &rng,
                             std::span<double> out, std::size_t rows) {
  const std::size_t nv = mu.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(nv);
  for (std::size_t r = 0; r < rows; ++r) {
    for (double &x : z)
      x = normal(rng);
    double *row = out.data() + r * nv;
    for (std::size_t i = 0; i < nv; ++i) {
      double acc = mu[i];
      for (std::size_t j = 0; j <= i; ++j)
        acc += factor(i, j) * z[j];
      row[i] = acc;
    }
  }
}

/// N multivariate-normal supply draws; negative draws are kept as sampled.
inline ScenarioSet sample_supply(const Instance &instance, std::size_t n, std::uint64_t seed) {
  if (n == 0)
    throw InvalidInput("sample_supply: n must be positive");
  const LowerTriangular factor = cholesky_jittered(instance.sigma());
  std::vector<double> data(n * instance.num_viewer_types());
  Rng rng(seed);
  draw_normal_rows(instance.mu(), factor, rng, data, n);
  return {DenseMatrix(n, instance.num_viewer_types(), std::move(data)), seed,
          DistributionTag::multivariate_normal};
}

/// True when every campaign's allocated supply in `scenario` meets its goal.
inline bool all_fulfilled(const Instance &instance, std::span<const double> p,
                          std::span<const double> scenario) {
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    const auto &vk = instance.campaign_viewers(k);
    const std::size_t off = instance.campaign_offset(k);
    double got = 0.0;
    for (std::size_t j = 0; j < vk.size(); ++j)
      got += scenario[vk[j]] * p[off + j];
    if (got < instance.goals()[k])
      return false;
  }
  return true;
}

inline std::size_t count_fulfilled(const Instance &instance, const Allocation &allocation,
                                   const ScenarioSet &scenarios) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scenarios.size(); ++i)
    hits += all_fulfilled(instance, allocation.values(), scenarios.scenario(i)) ? 1 : 0;
  return hits;
}

struct FulfillmentEstimate {
  std::uint64_t successes = 0;
  std::uint64_t trials = 0;
  double point_estimate = 0.0;
  double lower_confidence = 0.0;
  double confidence_level = 0.99;
};

inline FulfillmentEstimate make_fulfillment_estimate(std::uint64_t successes, std::uint64_t trials,
                                                     double confidence) {
  if (trials == 0)
    throw InvalidInput("estimate_fulfillment: trials must be positive");
  if (successes > trials)
    throw InvalidInput("estimate_fulfillment: successes exceed trials");
  FulfillmentEstimate e;
  e.successes = successes;
  e.trials = trials;
  e.confidence_level = confidence;
  e.point_estimate = static_cast<double>(successes) / static_cast<double>(trials);
  e.lower_confidence = std::min(
      e.point_estimate, clopper_pearson_lower(static_cast<long long>(successes),
                                              static_cast<long long>(trials), confidence));
  return e;
}

inline constexpr std::size_t kFulfillmentChunk = 8192;

/// Monte Carlo estimate of the joint probability of fulfillment with a
/// one-sided exact lower confidence bound. Scenario chunks are seeded from
/// (seed, chunk index), so the count does not depend on `workers`.
inline FulfillmentEstimate estimate_fulfillment(const Instance &instance,
                                                const Allocation &allocation, std::uint64_t trials,
                                                double confidence, std::uint64_t seed,
                                                unsigned workers = 0) {
  if (trials == 0)
    throw InvalidInput("estimate_fulfillment: trials must be positive");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw InvalidInput("estimate_fulfillment: confidence must lie in (0,1)");
  if (allocation.size() != instance.decision_count())
    throw InvalidInput("estimate_fulfillment: allocation does not match the instance");

  const LowerTriangular factor = cholesky_jittered(instance.sigma());
  const std::size_t nv = instance.num_viewer_types();
  const std::uint64_t chunks = (trials + kFulfillmentChunk - 1) / kFulfillmentChunk;

  auto run_chunk = [&](std::uint64_t c) -> std::uint64_t {
    const std::uint64_t begin = c * kFulfillmentChunk;
    const std::size_t rows = static_cast<std::size_t>(std::min<std::uint64_t>(kFulfillmentChunk, trials - begin));
    Rng rng(derive_seed(seed, Stream::chunk, c));
    std::vector<double> buf(rows * nv);
    draw_normal_rows(instance.mu(), factor, rng, buf, rows);
    std::uint64_t hits = 0;
    for (std::size_t r = 0; r < rows; ++r)
      hits += all_fulfilled(instance, allocation.values(),
                            std::span<const double>(buf.data() + r * nv, nv))
                  ? 1
                  : 0;
    return hits;
  };

  if (workers == 0)
    workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::uint64_t>(workers, chunks));

  std::vector<std::uint64_t> per_chunk(chunks, 0);
  if (workers <= 1) {
    for (std::uint64_t c = 0; c < chunks; ++c)
      per_chunk[c] = run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::uint64_t c = w; c < chunks; c += workers)
          per_chunk[c] = run_chunk(c);
      });
    for (auto &t : pool)
      t.join();
  }
  std::uint64_t successes = 0;
  for (auto h : per_chunk)
    successes += h;
  return make_fulfillment_estimate(successes, trials, confidence);
}

} // namespace adplan
