#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "mgdecomp/network.hpp"

// Minimization drivers for the coordination loops. The objective may return
// +inf (outside its domain); such points fail the sufficient decrease test.

namespace mgdecomp {

enum class StepRule { gradient, quasi_newton };

struct OptimizerOptions {
  StepRule rule = StepRule::quasi_newton;
  double initial_step = 1.0;        // rho0
  double gradient_tolerance = 1e-3; // on the sup norm
  double value_tolerance = 1e-5;    // relative change over the stall window
  int stall_window = 5;
  int max_iterations = 100;
  int memory = 10;
  int max_halvings = 20;
  int max_line_search = 30;
  double armijo = 1e-4;
  double curvature = 0.9;
};

/// Value and gradient oracles. gradient(x) is only requested at points
/// whose value was just computed, so implementations may cache by x.
struct Objective {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  // Optional linear projection applied to every gradient (and so to every
  // search direction); keeps iterates on a subspace.
  std::function<Vector(const Vector&)> project;
};

struct IterationRecord {
  int iteration = 0;
  double value = 0.0;
  double gradient_norm = 0.0;
  double step = 0.0;
  double wall_seconds = 0.0;
  int evaluations = 0;
};

struct OptimizerResult {
  Vector x;
  double value = kInfinity;
  Vector gradient;
  std::vector<IterationRecord> trace;  // entry 0 is the starting point
  int iterations = 0;
  int evaluations = 0;
  std::string stop_reason;
};

namespace detail {

class LbfgsMemory {
 public:
  explicit LbfgsMemory(int size) : size_(size) {}

  void clear() { s_.clear(), y_.clear(); }

  void push(const Vector& s, const Vector& y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-12 * s.norm() * y.norm())) return;  // keep H positive definite
    s_.push_back(s);
    y_.push_back(y);
    if (static_cast<int>(s_.size()) > size_) s_.pop_front(), y_.pop_front();
  }

  bool empty() const { return s_.empty(); }

  // Two-loop recursion: returns H g.
  Vector apply(const Vector& g, double h0) const {
    Vector q = g;
    const int m = static_cast<int>(s_.size());
    std::vector<double> alpha(m), rho(m);
    for (int k = m - 1; k >= 0; --k) {
      rho[k] = 1.0 / y_[k].dot(s_[k]);
      alpha[k] = rho[k] * s_[k].dot(q);
      q -= alpha[k] * y_[k];
    }
    if (m > 0) h0 = s_.back().dot(y_.back()) / y_.back().squaredNorm();
    Vector r = h0 * q;
    for (int k = 0; k < m; ++k) {
      const double beta = rho[k] * y_[k].dot(r);
      r += (alpha[k] - beta) * s_[k];
    }
    return r;
  }

 private:
  int size_;
  std::deque<Vector> s_, y_;
};

}  // namespace detail

inline OptimizerResult minimize(const Objective& obj, const Vector& x0, const OptimizerOptions& opts = {}) {
  if (!(opts.initial_step > 0.0) || !(opts.gradient_tolerance > 0.0) || !(opts.value_tolerance > 0.0) ||
      opts.max_iterations < 1 || opts.stall_window < 1)
    throw ModelError("optimizer options need positive tolerances and a cap >= 1");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  auto project = [&](Vector g) { return obj.project ? obj.project(g) : g; };

  OptimizerResult res;
  res.x = x0;
  res.value = obj.value(x0);
  res.evaluations = 1;
  if (!std::isfinite(res.value)) {
    res.stop_reason = "infeasible starting point";
    res.trace.push_back({0, res.value, kInfinity, 0.0, elapsed(), 1});
    return res;
  }
  res.gradient = project(obj.gradient(x0));
  res.trace.push_back({0, res.value, res.gradient.lpNorm<Eigen::Infinity>(), 0.0, elapsed(), 1});

  detail::LbfgsMemory memory(opts.memory);
  double step_scale = opts.initial_step;
  for (res.iterations = 0; res.iterations < opts.max_iterations;) {
    const Vector& g = res.gradient;
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      res.stop_reason = "gradient tolerance";
      return res;
    }
    Vector d;
    if (opts.rule == StepRule::quasi_newton) {
      d = -project(memory.apply(g, opts.initial_step));
      if (!(d.dot(g) < 0.0)) {
        memory.clear();
        d = -opts.initial_step * g;
      }
    } else {
      d = -step_scale * g;
    }
    const double slope = g.dot(d);

    // Line search. Quasi-Newton: weak Wolfe bracketing (Lewis-Overton).
    // Gradient rule: Armijo backtracking by halving.
    double t = 1.0, lo = 0.0, hi = kInfinity;
    Vector best_x, best_g;
    double best_v = res.value, best_t = 0.0;
    const int budget = opts.rule == StepRule::quasi_newton ? opts.max_line_search : opts.max_halvings + 1;
    for (int k = 0; k < budget; ++k) {
      const Vector xt = res.x + t * d;
      const double vt = obj.value(xt);
      ++res.evaluations;
      const bool armijo = std::isfinite(vt) && vt <= res.value + opts.armijo * t * slope;
      if (!armijo) {
        hi = t;
      } else {
        const Vector gt = project(obj.gradient(xt));
        if (vt < best_v) best_x = xt, best_g = gt, best_v = vt, best_t = t;
        if (opts.rule == StepRule::gradient || gt.dot(d) >= opts.curvature * slope) break;
        lo = t;
      }
      t = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * t;
    }
    // An unfinished Wolfe bracket still yields its best Armijo point.
    if (best_t == 0.0) {
      res.stop_reason = "no descent step found";
      return res;
    }
    memory.push(best_x - res.x, best_g - res.gradient);
    res.x = best_x;
    res.gradient = best_g;
    res.value = best_v;
    ++res.iterations;
    if (opts.rule == StepRule::gradient) step_scale = std::min(opts.initial_step, 2.0 * step_scale * best_t);
    res.trace.push_back(
        {res.iterations, res.value, res.gradient.lpNorm<Eigen::Infinity>(), best_t * d.norm(), elapsed(), res.evaluations});
    const int n = static_cast<int>(res.trace.size());
    if (n > opts.stall_window) {
      const double old = res.trace[n - 1 - opts.stall_window].value;
      if (std::abs(old - res.value) <= opts.value_tolerance * std::max(1.0, std::abs(res.value))) {
        res.stop_reason = "stalled";
        return res;
      }
    }
  }
  res.stop_reason = "iteration cap";
  return res;
}

}  // namespace mgdecomp
