#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mgdecomp/errors.hpp"

namespace mgdecomp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Directed edge between two 0-based node indices.
struct Edge {
  int tail = 0;
  int head = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Fixed directed graph. Connected components are labelled once at
/// construction by union-find; labels are dense in [0, num_components).
class GraphTopology {
 public:
  GraphTopology() = default;

  GraphTopology(int num_nodes, std::vector<Edge> edges) : num_nodes_(num_nodes), edges_(std::move(edges)) {
    if (num_nodes_ <= 0) throw ModelError("topology needs at least one node");
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const auto [tail, head] = edges_[e];
      if (tail < 0 || tail >= num_nodes_ || head < 0 || head >= num_nodes_)
        throw ModelError("edge " + std::to_string(e + 1) + " has an endpoint out of range");
      if (tail == head) throw ModelError("edge " + std::to_string(e + 1) + " is a self-loop");
    }
    label_components();
  }

  int num_nodes() const { return num_nodes_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& component_labels() const { return labels_; }
  int num_components() const { return num_components_; }

  /// Node indices of each component, in increasing order.
  std::vector<std::vector<int>> components() const {
    std::vector<std::vector<int>> out(num_components_);
    for (int i = 0; i < num_nodes_; ++i) out[labels_[i]].push_back(i);
    return out;
  }

 private:
  void label_components() {
    std::vector<int> parent(num_nodes_);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    for (const auto& e : edges_) {
      const int a = find(e.tail), b = find(e.head);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    labels_.assign(num_nodes_, -1);
    std::vector<int> root_label(num_nodes_, -1);
    num_components_ = 0;
    for (int i = 0; i < num_nodes_; ++i) {
      const int r = find(i);
      if (root_label[r] < 0) root_label[r] = num_components_++;
      labels_[i] = root_label[r];
    }
  }

  int num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> labels_;
  int num_components_ = 0;
};

/// Node-edge incidence matrix: +1 at the tail of each edge, -1 at its head.
struct IncidenceMatrix {
  Matrix entries;

  int num_nodes() const { return static_cast<int>(entries.rows()); }
  int num_edges() const { return static_cast<int>(entries.cols()); }
};

inline IncidenceMatrix build_incidence(const GraphTopology& topology) {
  IncidenceMatrix a{Matrix::Zero(topology.num_nodes(), topology.num_edges())};
  for (int e = 0; e < topology.num_edges(); ++e) {
    const auto& edge = topology.edges()[e];
    a.entries(edge.tail, e) = 1.0;
    a.entries(edge.head, e) = -1.0;
  }
  return a;
}

namespace tags {
struct NodeFlow {};
struct EdgeFlow {};
struct NodePrice {};
struct EdgePrice {};
struct Resource {};
}  // namespace tags

/// A real quantity indexed by (time step, node or edge), stored as a
/// horizon x width matrix. The tag keeps flows, prices and resources apart.
template <class Tag>
class StageSeries {
 public:
  StageSeries() = default;
  StageSeries(int horizon, int width) : data_(Matrix::Zero(horizon, width)) {}
  explicit StageSeries(Matrix data) : data_(std::move(data)) {}

  int horizon() const { return static_cast<int>(data_.rows()); }
  int width() const { return static_cast<int>(data_.cols()); }

  double& operator()(int t, int k) { return data_(t, k); }
  double operator()(int t, int k) const { return data_(t, k); }

  auto stage(int t) { return data_.row(t); }
  auto stage(int t) const { return data_.row(t); }
  auto series(int k) { return data_.col(k); }
  auto series(int k) const { return data_.col(k); }

  Matrix& matrix() { return data_; }
  const Matrix& matrix() const { return data_; }

  /// Flattened time-major view (t * width + k), the layout of R^{T.N}.
  Vector flat() const {
    Vector v(data_.size());
    for (int t = 0; t < horizon(); ++t)
      for (int k = 0; k < width(); ++k) v(t * width() + k) = data_(t, k);
    return v;
  }

  static StageSeries from_flat(const Vector& v, int horizon, int width) {
    if (v.size() != static_cast<Eigen::Index>(horizon) * width) throw ModelError("flat vector size mismatch");
    StageSeries s(horizon, width);
    for (int t = 0; t < horizon; ++t)
      for (int k = 0; k < width; ++k) s(t, k) = v(t * width + k);
    return s;
  }

 private:
  Matrix data_;
};

using NodeFlows = StageSeries<tags::NodeFlow>;
using EdgeFlows = StageSeries<tags::EdgeFlow>;
using PriceProcess = StageSeries<tags::NodePrice>;
using EdgePrices = StageSeries<tags::EdgePrice>;
using ResourceProcess = StageSeries<tags::Resource>;

/// A q_t + f_t.
inline Vector kirchhoff_residual(const IncidenceMatrix& a, const EdgeFlows& q, const NodeFlows& f, int t) {
  if (q.horizon() != f.horizon()) throw ModelError("edge and node flows have different horizons");
  if (q.width() != a.num_edges() || f.width() != a.num_nodes()) throw ModelError("flow width does not match incidence");
  if (t < 0 || t >= q.horizon()) throw ModelError("time index out of range");
  return a.entries * q.stage(t).transpose() + f.stage(t).transpose();
}

/// Edge prices mu_t = A^T p_t, the dual-cone partner of a node price.
inline EdgePrices dual_edge_prices(const IncidenceMatrix& a, const PriceProcess& p) {
  if (p.width() != a.num_nodes()) throw ModelError("price width does not match incidence");
  return EdgePrices(Matrix(p.matrix() * a.entries));
}

/// Orthogonal projection onto im(A) applied per time step: subtract the
/// per-component mean. For a connected component the image of the incidence
/// map is exactly the zero-sum subspace.
template <class Tag>
StageSeries<Tag> project_onto_image(const StageSeries<Tag>& r, const GraphTopology& topology) {
  if (r.width() != topology.num_nodes()) throw ModelError("resource width does not match topology");
  StageSeries<Tag> out = r;
  const auto groups = topology.components();
  for (int t = 0; t < r.horizon(); ++t) {
    for (const auto& nodes : groups) {
      double mean = 0.0;
      for (int i : nodes) mean += r(t, i);
      mean /= static_cast<double>(nodes.size());
      for (int i : nodes) out(t, i) = r(t, i) - mean;
    }
  }
  return out;
}

/// True when every time step sums to zero on each component, within tol.
template <class Tag>
bool in_image(const StageSeries<Tag>& r, const GraphTopology& topology, double tol = 1e-9) {
  const auto groups = topology.components();
  for (int t = 0; t < r.horizon(); ++t)
    for (const auto& nodes : groups) {
      double sum = 0.0, scale = 1.0;
      for (int i : nodes) {
        sum += r(t, i);
        scale = std::max(scale, std::abs(r(t, i)));
      }
      if (std::abs(sum) > tol * scale) return false;
    }
  return true;
}

}  // namespace mgdecomp
