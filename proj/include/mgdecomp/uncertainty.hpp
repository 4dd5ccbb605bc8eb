#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mgdecomp/detail/random.hpp"
#include "mgdecomp/errors.hpp"
#include "mgdecomp/prosumer.hpp"

namespace mgdecomp {

/// Finite law: one atom per row of `atoms`.
class FiniteDistribution {
 public:
  FiniteDistribution() = default;

  int size() const { return static_cast<int>(probabilities_.size()); }
  int dim() const { return static_cast<int>(atoms_.cols()); }
  const Eigen::MatrixXd& atoms() const { return atoms_; }
  Eigen::VectorXd atom(int k) const { return atoms_.row(k).transpose(); }
  double probability(int k) const { return probabilities_[k]; }
  const std::vector<double>& probabilities() const { return probabilities_; }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
    for (int k = 0; k < size(); ++k) m += probabilities_[k] * atoms_.row(k).transpose();
    return m;
  }

  int sample_index(detail::Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<int>(static_cast<int>(it - cumulative_.begin()), size() - 1);
  }

  /// Interprets a 2-dimensional atom as (hot water, electricity).
  NodeNoise node_noise(int k) const { return NodeNoise{atoms_(k, 0), atoms_(k, 1)}; }

 private:
  friend FiniteDistribution make_distribution(Eigen::MatrixXd atoms, std::vector<double> probabilities);

  Eigen::MatrixXd atoms_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
};

inline FiniteDistribution make_distribution(Eigen::MatrixXd atoms, std::vector<double> probabilities) {
  if (atoms.rows() == 0 || probabilities.empty()) throw ModelError("distribution needs at least one atom");
  if (static_cast<std::size_t>(atoms.rows()) != probabilities.size())
    throw ModelError("distribution has " + std::to_string(atoms.rows()) + " atoms but " +
                     std::to_string(probabilities.size()) + " probabilities");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw ModelError("distribution has a negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ModelError("distribution probabilities sum to " + std::to_string(total));
  FiniteDistribution d;
  d.atoms_ = std::move(atoms);
  d.probabilities_ = std::move(probabilities);
  d.cumulative_.resize(d.probabilities_.size());
  std::partial_sum(d.probabilities_.begin(), d.probabilities_.end(), d.cumulative_.begin());
  d.cumulative_.back() = 1.0;
  return d;
}

/// Convenience overload for ragged input as nested vectors.
inline FiniteDistribution make_distribution(const std::vector<std::vector<double>>& atoms,
                                            std::vector<double> probabilities) {
  if (atoms.empty()) throw ModelError("distribution needs at least one atom");
  const std::size_t dim = atoms.front().size();
  Eigen::MatrixXd m(atoms.size(), dim);
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    if (atoms[k].size() != dim) throw ModelError("distribution atoms have ragged dimensions");
    for (std::size_t j = 0; j < dim; ++j) m(k, j) = atoms[k][j];
  }
  return make_distribution(std::move(m), std::move(probabilities));
}

/// Stagewise-independent node noise: law(t, i) is the law of the noise
/// observed before the stage-t decision at node i.
class NoiseModel {
 public:
  NoiseModel() = default;

  NoiseModel(std::vector<std::vector<FiniteDistribution>> laws_by_node) : laws_(std::move(laws_by_node)) {
    if (laws_.empty()) throw ModelError("noise model has no nodes");
    const std::size_t horizon = laws_.front().size();
    for (const auto& node : laws_) {
      if (node.size() != horizon) throw ModelError("noise model horizons differ across nodes");
      for (const auto& law : node)
        if (law.dim() != 2) throw ModelError("node noise atoms must be (hot water, electricity)");
    }
  }

  int num_nodes() const { return static_cast<int>(laws_.size()); }
  int horizon() const { return laws_.empty() ? 0 : static_cast<int>(laws_.front().size()); }
  const FiniteDistribution& law(int t, int node) const { return laws_.at(node).at(t); }
  const std::vector<FiniteDistribution>& node_laws(int node) const { return laws_.at(node); }

  bool deterministic() const {
    for (const auto& node : laws_)
      for (const auto& law : node)
        if (law.size() != 1) return false;
    return true;
  }

 private:
  std::vector<std::vector<FiniteDistribution>> laws_;  // [node][t]
};

/// One joint realization: atom index and value per (stage, node).
struct Scenario {
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> atom;          // [t][node]
  std::vector<std::vector<NodeNoise>> noise;   // [t][node]

  friend bool operator==(const Scenario& a, const Scenario& b) { return a.seed == b.seed && a.atom == b.atom; }
};

inline Scenario sample_scenario(const NoiseModel& model, std::uint64_t seed) {
  detail::Rng rng(seed);
  Scenario s;
  s.seed = seed;
  s.atom.assign(model.horizon(), std::vector<int>(model.num_nodes()));
  s.noise.assign(model.horizon(), std::vector<NodeNoise>(model.num_nodes()));
  for (int t = 0; t < model.horizon(); ++t)
    for (int i = 0; i < model.num_nodes(); ++i) {
      const auto& law = model.law(t, i);
      const int k = law.sample_index(rng);
      s.atom[t][i] = k;
      s.noise[t][i] = law.node_noise(k);
    }
  return s;
}

/// Node-local path of atom indices (length T); used for common random numbers.
inline std::vector<int> sample_node_path(const NoiseModel& model, int node, std::uint64_t seed) {
  detail::Rng rng(seed);
  std::vector<int> path(model.horizon());
  for (int t = 0; t < model.horizon(); ++t) path[t] = model.law(t, node).sample_index(rng);
  return path;
}

namespace detail {

inline int count_distinct_rows(const Eigen::MatrixXd& samples) {
  std::vector<int> order(samples.rows());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](int a, int b) {
    for (int j = 0; j < samples.cols(); ++j) {
      if (samples(a, j) < samples(b, j)) return true;
      if (samples(a, j) > samples(b, j)) return false;
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  int distinct = order.empty() ? 0 : 1;
  for (std::size_t k = 1; k < order.size(); ++k)
    if (less(order[k - 1], order[k])) ++distinct;
  return distinct;
}

struct Clustering {
  Eigen::MatrixXd centers;
  std::vector<int> assignment;
  double initial_sse = 0.0;
  double final_sse = 0.0;
  int iterations = 0;
};

inline double sse(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers, const std::vector<int>& assignment) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < samples.rows(); ++n)
    total += (samples.row(n) - centers.row(assignment[n])).squaredNorm();
  return total;
}

// k-means++ seeding followed by Lloyd iterations.
inline Clustering lloyd(const Eigen::MatrixXd& samples, int k, std::uint64_t seed, int max_iterations) {
  const Eigen::Index n = samples.rows();
  Rng rng(seed);
  Clustering c;
  c.centers.resize(k, samples.cols());
  c.centers.row(0) = samples.row(static_cast<Eigen::Index>(rng.below(n)));
  Eigen::VectorXd dist2(n);
  for (Eigen::Index i = 0; i < n; ++i) dist2(i) = (samples.row(i) - c.centers.row(0)).squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = dist2.sum();
    Eigen::Index pick = -1;
    const double target = rng.uniform() * total;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dist2(i) <= 0.0) continue;
      acc += dist2(i);
      pick = i;
      if (acc > target) break;
    }
    if (pick < 0) throw ModelError("k-means++ ran out of distinct samples");
    c.centers.row(j) = samples.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      dist2(i) = std::min(dist2(i), (samples.row(i) - c.centers.row(j)).squaredNorm());
  }

  auto assign = [&](std::vector<int>& a) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (samples.row(i) - c.centers.row(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (a[i] != best) {
        a[i] = best;
        changed = true;
      }
    }
    return changed;
  };

  c.assignment.assign(n, -1);
  assign(c.assignment);
  c.initial_sse = sse(samples, c.centers, c.assignment);

  for (c.iterations = 0; c.iterations < max_iterations; ++c.iterations) {
    // centroid update with empty-cluster repair
    std::vector<int> counts(k, 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, samples.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      ++counts[c.assignment[i]];
      sums.row(c.assignment[i]) += samples.row(i);
    }
    for (int j = 0; j < k; ++j)
      if (counts[j] > 0) c.centers.row(j) = sums.row(j) / counts[j];
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      // split the largest cluster: its farthest member seeds the empty one
      const int largest = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (c.assignment[i] == largest) {
          const double d = (samples.row(i) - c.centers.row(largest)).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
      c.centers.row(j) = samples.row(far);
      c.assignment[far] = j;
      --counts[largest];
      counts[j] = 1;
    }
    if (!assign(c.assignment)) break;
  }
  // final centroids consistent with final assignment
  std::vector<int> counts(k, 0);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, samples.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    ++counts[c.assignment[i]];
    sums.row(c.assignment[i]) += samples.row(i);
  }
  for (int j = 0; j < k; ++j)
    if (counts[j] > 0) c.centers.row(j) = sums.row(j) / counts[j];
  c.final_sse = sse(samples, c.centers, c.assignment);
  return c;
}

}  // namespace detail

/// Quantizes an empirical sample (one sample per row) to k atoms.
/// Atom probabilities are the fractions of samples in each cluster.
inline FiniteDistribution kmeans_quantize(const Eigen::MatrixXd& samples, int k, std::uint64_t seed,
                                          int max_iterations = 100) {
  if (k < 1) throw ModelError("k-means needs k >= 1");
  const int distinct = detail::count_distinct_rows(samples);
  if (k > distinct)
    throw ModelError("k-means asked for " + std::to_string(k) + " clusters but samples have only " +
                     std::to_string(distinct) + " distinct values");
  const auto c = detail::lloyd(samples, k, seed, max_iterations);
  std::vector<double> probs(k, 0.0);
  for (int a : c.assignment) probs[a] += 1.0;
  for (auto& p : probs) p /= static_cast<double>(samples.rows());
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  probs.back() += 1.0 - total;
  return make_distribution(c.centers, std::move(probs));
}

/// Global stage noise vector layout: (hot water, electricity) per node.
inline Eigen::VectorXd global_noise_vector(const std::vector<NodeNoise>& noise) {
  Eigen::VectorXd v(2 * noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    v(2 * i) = noise[i].hot_water;
    v(2 * i + 1) = noise[i].electricity;
  }
  return v;
}

inline std::vector<NodeNoise> split_global_noise(const Eigen::VectorXd& v) {
  std::vector<NodeNoise> out(v.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = NodeNoise{v(2 * i), v(2 * i + 1)};
  return out;
}

/// Number of atoms of the exact product law at stage t (saturating).
inline double product_support_size(const NoiseModel& model, int t) {
  double n = 1.0;
  for (int i = 0; i < model.num_nodes(); ++i) n *= model.law(t, i).size();
  return n;
}

/// Exact product law of the global stage-t noise. Only for small supports.
inline FiniteDistribution product_distribution(const NoiseModel& model, int t) {
  const double support = product_support_size(model, t);
  if (support > 1e6) throw ModelError("product support too large to enumerate");
  const int n_nodes = model.num_nodes();
  const int total = static_cast<int>(support);
  Eigen::MatrixXd atoms(total, 2 * n_nodes);
  std::vector<double> probs(total, 1.0);
  for (int a = 0; a < total; ++a) {
    int rest = a;
    for (int i = n_nodes - 1; i >= 0; --i) {
      const auto& law = model.law(t, i);
      const int k = rest % law.size();
      rest /= law.size();
      atoms(a, 2 * i) = law.atoms()(k, 0);
      atoms(a, 2 * i + 1) = law.atoms()(k, 1);
      probs[a] *= law.probability(k);
    }
  }
  double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (auto& p : probs) p /= sum;
  sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  probs.back() += 1.0 - sum;
  return make_distribution(std::move(atoms), std::move(probs));
}

/// Samples the global stage-t noise from the product law and quantizes it
/// to at most k atoms; k is clamped to the number of distinct samples.
inline FiniteDistribution resample_product(const NoiseModel& model, int t, int k, int n_samples = 10000,
                                           std::uint64_t seed = 0) {
  if (t < 0 || t >= model.horizon()) throw ModelError("stage out of range");
  if (n_samples < 1) throw ModelError("resampling needs at least one sample");
  detail::Rng rng(detail::stream_seed(seed, static_cast<std::uint64_t>(t), 0x5eed));
  Eigen::MatrixXd samples(n_samples, 2 * model.num_nodes());
  for (int s = 0; s < n_samples; ++s)
    for (int i = 0; i < model.num_nodes(); ++i) {
      const auto& law = model.law(t, i);
      const int a = law.sample_index(rng);
      samples(s, 2 * i) = law.atoms()(a, 0);
      samples(s, 2 * i + 1) = law.atoms()(a, 1);
    }
  const int distinct = detail::count_distinct_rows(samples);
  return kmeans_quantize(samples, std::min(k, distinct), detail::stream_seed(seed, static_cast<std::uint64_t>(t), 0xc1u));
}

}  // namespace mgdecomp
