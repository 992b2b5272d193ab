// Copyright 2026 The mddr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Exact one-dimensional optimal transport between uniform empirical measures
// and the Monte Carlo sliced Wasserstein distance built on top of it.
//
// Atom counts may differ. The optimal 1-D coupling is the north-west-corner
// plan on the merged quantile grid; masses are tracked in integer units
// (source atoms carry m units, target atoms n units, out of n*m) so the plan
// is exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mddr/empirical.hpp"
#include "mddr/error.hpp"
#include "mddr/random.hpp"

namespace mddr {

// L directions on the unit sphere S^{d-1}, one per row.
struct ProjectionSet {
  Matrix directions;
  std::uint64_t seed = 0;

  Index size() const { return directions.rows(); }
  Index dim() const { return directions.cols(); }
  auto direction(Index l) const { return directions.row(l); }
};

struct PlanEntry {
  Index source;
  Index target;
  double mass;
};

using TransportPlan1D = std::vector<PlanEntry>;

// |u|^p with the common orders special-cased.
inline double abs_pow(double u, double p) {
  if (p == 2.0) return u * u;
  if (p == 1.0) return std::abs(u);
  return std::pow(std::abs(u), p);
}

// d/du |u|^p = p |u|^{p-2} u, defined as 0 at u = 0.
inline double abs_pow_deriv(double u, double p) {
  if (u == 0.0) return 0.0;
  if (p == 2.0) return 2.0 * u;
  if (p == 1.0) return u > 0 ? 1.0 : -1.0;
  return p * std::pow(std::abs(u), p - 1.0) * (u > 0 ? 1.0 : -1.0);
}

// d^2/du^2 |u|^p = p (p-1) |u|^{p-2}, defined as 0 at u = 0 when p < 2.
inline double abs_pow_second(double u, double p) {
  if (p == 2.0) return 2.0;
  if (p == 1.0) return 0.0;
  if (u == 0.0) return 0.0;
  return p * (p - 1.0) * std::pow(std::abs(u), p - 2.0);
}

inline ProjectionSet sample_projections(Index count, Index dim,
                                        std::uint64_t seed) {
  detail::require(count >= 1, "sample_projections: need at least one "
                              "projection");
  detail::require(dim >= 1, "sample_projections: dimension must be >= 1");
  ProjectionSet out{Matrix(count, dim), seed};
  Stream rng(seed);
  for (Index l = 0; l < count; ++l) {
    double norm = 0.0;
    do {
      for (Index j = 0; j < dim; ++j) out.directions(l, j) = rng.normal();
      norm = out.directions.row(l).norm();
    } while (norm == 0.0);
    out.directions.row(l) /= norm;
  }
  return out;
}

namespace detail {

inline void check_order(double p) {
  require(p >= 1.0 && std::isfinite(p),
          "transport order p must be >= 1, got " + std::to_string(p));
}

inline void check_sorted(std::span<const double> xs, const char* name) {
  require(!xs.empty(), std::string(name) + " must be nonempty");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(!std::isnan(xs[i]), std::string(name) + " contains NaN");
    require(i == 0 || xs[i - 1] <= xs[i],
            std::string(name) + " must be sorted ascending");
  }
}

// Walks the north-west-corner coupling between two sorted index orders of
// uniform measures with `n` and `m` atoms: visit(src, tgt, mass).
template <typename SrcOrder, typename TgtOrder, typename Visit>
void monotone_coupling(const SrcOrder& src, std::size_t n, const TgtOrder& tgt,
                       std::size_t m, Visit&& visit) {
  const double total = static_cast<double>(n) * static_cast<double>(m);
  std::size_t i = 0, j = 0;
  std::uint64_t left_i = m, left_j = n;
  while (i < n && j < m) {
    const std::uint64_t units = std::min(left_i, left_j);
    visit(src[i], tgt[j], static_cast<double>(units) / total);
    left_i -= units;
    left_j -= units;
    if (left_i == 0) {
      ++i;
      left_i = m;
    }
    if (left_j == 0) {
      ++j;
      left_j = n;
    }
  }
}

struct IdentityOrder {
  Index operator[](std::size_t i) const { return static_cast<Index>(i); }
};

// Projections of atoms onto one direction plus their stable ascending order.
struct SortedProjection {
  Vector values;
  std::vector<Index> order;

  void assign(const Matrix& points, const Eigen::RowVectorXd& theta) {
    values.noalias() = points * theta.transpose();
    order.resize(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [this](Index a, Index b) {
      return values[a] < values[b];
    });
  }

  std::size_t size() const { return order.size(); }
};

inline void check_same_dim(const EmpiricalDistribution& a,
                           const EmpiricalDistribution& b,
                           const ProjectionSet& proj) {
  require(a.dim() == b.dim() && a.dim() == proj.dim(),
          "dimension mismatch: " + std::to_string(a.dim()) + ", " +
              std::to_string(b.dim()) + ", projections " +
              std::to_string(proj.dim()));
  require(proj.size() >= 1, "projection set is empty");
}

}  // namespace detail

// W_p^p between the uniform measures on xs and ys (both sorted).
inline double wasserstein_1d_pp(std::span<const double> xs,
                                std::span<const double> ys, double p) {
  detail::check_order(p);
  detail::check_sorted(xs, "xs");
  detail::check_sorted(ys, "ys");
  double cost = 0.0;
  detail::monotone_coupling(detail::IdentityOrder{}, xs.size(),
                            detail::IdentityOrder{}, ys.size(),
                            [&](Index a, Index b, double mass) {
                              cost += mass * abs_pow(xs[a] - ys[b], p);
                            });
  return cost;
}

inline TransportPlan1D transport_plan_1d(std::span<const double> xs,
                                         std::span<const double> ys) {
  detail::check_sorted(xs, "xs");
  detail::check_sorted(ys, "ys");
  TransportPlan1D plan;
  plan.reserve(xs.size() + ys.size());
  detail::monotone_coupling(
      detail::IdentityOrder{}, xs.size(), detail::IdentityOrder{}, ys.size(),
      [&](Index a, Index b, double mass) { plan.push_back({a, b, mass}); });
  return plan;
}

// Monte Carlo SW_p^p over the given projection set.
inline double sw_distance_pp(const EmpiricalDistribution& g1,
                             const EmpiricalDistribution& g2,
                             const ProjectionSet& proj, double p) {
  detail::check_order(p);
  detail::check_same_dim(g1, g2, proj);
  detail::SortedProjection a, b;
  double total = 0.0;
  for (Index l = 0; l < proj.size(); ++l) {
    const Eigen::RowVectorXd theta = proj.direction(l);
    a.assign(g1.points(), theta);
    b.assign(g2.points(), theta);
    double cost = 0.0;
    detail::monotone_coupling(a.order, a.size(), b.order, b.size(),
                              [&](Index i, Index j, double mass) {
                                cost += mass *
                                        abs_pow(a.values[i] - b.values[j], p);
                              });
    total += cost;
  }
  return total / static_cast<double>(proj.size());
}

struct SwEvaluation {
  double value = 0.0;
  Matrix grad;  // d value / d atoms of the first argument
};

// Value and plan-frozen gradient with respect to the atoms of g1.
inline SwEvaluation sw_evaluate(const EmpiricalDistribution& g1,
                                const EmpiricalDistribution& g2,
                                const ProjectionSet& proj, double p) {
  detail::check_order(p);
  detail::check_same_dim(g1, g2, proj);
  SwEvaluation out{0.0, Matrix::Zero(g1.size(), g1.dim())};
  detail::SortedProjection a, b;
  const double inv_l = 1.0 / static_cast<double>(proj.size());
  Vector coef(g1.size());
  for (Index l = 0; l < proj.size(); ++l) {
    const Eigen::RowVectorXd theta = proj.direction(l);
    a.assign(g1.points(), theta);
    b.assign(g2.points(), theta);
    coef.setZero();
    double cost = 0.0;
    detail::monotone_coupling(a.order, a.size(), b.order, b.size(),
                              [&](Index i, Index j, double mass) {
                                const double u = a.values[i] - b.values[j];
                                cost += mass * abs_pow(u, p);
                                coef[i] += mass * abs_pow_deriv(u, p);
                              });
    out.value += cost;
    out.grad.noalias() += inv_l * coef * theta;
  }
  out.value *= inv_l;
  return out;
}

inline Matrix sw_grad_points(const EmpiricalDistribution& g1,
                             const EmpiricalDistribution& g2,
                             const ProjectionSet& proj, double p) {
  return sw_evaluate(g1, g2, proj, p).grad;
}

}  // namespace mddr
