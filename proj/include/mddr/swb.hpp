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

// Free-support sliced Wasserstein barycenter.
//
// The barycenter is M_G uniform atoms z moved by Adam along the plan-frozen
// gradient h of sum_k pi_k SW_p^p(z, marginal_k). Fresh projections are drawn
// every iteration from the stream (seed, iteration).
//
// Optionally the solver carries forward-mode tangents of the atoms with
// respect to the regression parameters phi (when the marginals are affine
// pushforwards A_k x + b_k of fixed source atoms) and the weights pi. The
// tangents of the Adam moments are carried as well, so the final Jacobian is
// the exact derivative of the T-step solver output under frozen streams.
//
// Tangent layout: row a*d + r is coordinate r of atom a; phi columns follow
// the caller's parameter layout, pi columns are k = 0..K-1.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mddr/empirical.hpp"
#include "mddr/error.hpp"
#include "mddr/random.hpp"
#include "mddr/sliced_ot.hpp"

namespace mddr {

using Jacobian = Eigen::MatrixXd;

struct SwbConfig {
  int iterations = 100;  // T
  double step_size = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index atoms = 0;  // M_G; 0 picks the largest marginal atom count
  Index projections = 100;
  double p = 2.0;
  std::uint64_t seed = 0;
  double divergence_bound = 1e8;

  void validate(const std::string& where = "swb") const {
    using detail::require;
    require(iterations >= 1, where + ".T: must be >= 1");
    require(step_size > 0 && std::isfinite(step_size),
            where + ".eta: must be > 0");
    require(beta1 >= 0 && beta1 < 1, where + ".beta1: must lie in [0, 1)");
    require(beta2 >= 0 && beta2 < 1, where + ".beta2: must lie in [0, 1)");
    require(epsilon > 0, where + ".epsilon: must be > 0");
    require(atoms >= 0, where + ".M_G: must be >= 1 (or 0 for automatic)");
    require(projections >= 1, where + ".L_solver: must be >= 1");
    require(p >= 1, where + ".p: must be >= 1");
  }
};

// Simplex vector of barycenter weights.
struct BarycenterWeights {
  Vector pi;

  BarycenterWeights() = default;
  explicit BarycenterWeights(Vector w) : pi(std::move(w)) { validate(); }

  static BarycenterWeights uniform(Index k) {
    return BarycenterWeights(Vector::Constant(k, 1.0 / static_cast<double>(k)));
  }

  Index size() const { return pi.size(); }
  double operator[](Index k) const { return pi[k]; }

  void validate() const {
    detail::require(pi.size() >= 1, "barycenter weights: K must be >= 1");
    for (Index k = 0; k < pi.size(); ++k)
      detail::require(pi[k] >= 0 && pi[k] <= 1,
                      "barycenter weights: entries must lie in [0, 1]");
    detail::require(std::abs(pi.sum() - 1.0) <= 1e-12,
                    "barycenter weights: entries must sum to 1");
  }
};

// Marginal k is atoms A_k s_j + b_k of the rows s_j of `source`, with A_k
// (d x h, row-major) then b_k stored at phi[offset...].
struct AffineSource {
  const Matrix* source = nullptr;
  Index offset = 0;
};

struct PushforwardJacobian {
  std::vector<AffineSource> sources;  // one per marginal
  Index parameters = 0;               // P, total phi length
};

struct BarycenterState {
  Matrix z;  // M_G x d atoms
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
  int t = 0;

  Jacobian jac_phi, jac_phi_m, jac_phi_v;
  Jacobian jac_pi, jac_pi_m, jac_pi_v;

  bool tracks_phi() const { return jac_phi.size() > 0; }
  bool tracks_pi() const { return jac_pi.size() > 0; }

  static BarycenterState start(Matrix atoms) {
    BarycenterState s;
    s.m = Matrix::Zero(atoms.rows(), atoms.cols());
    s.v = Matrix::Zero(atoms.rows(), atoms.cols());
    s.z = std::move(atoms);
    return s;
  }

  void enable_phi(Index parameters) {
    jac_phi = Jacobian::Zero(z.size(), parameters);
    jac_phi_m = jac_phi;
    jac_phi_v = jac_phi;
  }

  void enable_pi(Index k) {
    jac_pi = Jacobian::Zero(z.size(), k);
    jac_pi_m = jac_pi;
    jac_pi_v = jac_pi;
  }
};

namespace detail {

inline void check_marginals(const std::vector<EmpiricalDistribution>& marginals,
                            const BarycenterWeights& pi) {
  require(!marginals.empty(), "barycenter: need at least one marginal");
  require(static_cast<Index>(marginals.size()) == pi.size(),
          "barycenter: " + std::to_string(marginals.size()) +
              " marginals but " + std::to_string(pi.size()) + " weights");
  for (const auto& g : marginals)
    require(g.dim() == marginals.front().dim(),
            "barycenter: marginals have different dimensions");
}

inline void check_pushforward(const PushforwardJacobian& jac,
                              const std::vector<EmpiricalDistribution>& marg) {
  require(jac.sources.size() == marg.size(),
          "pushforward jacobian: one source per marginal required");
  const Index d = marg.front().dim();
  for (std::size_t k = 0; k < marg.size(); ++k) {
    const auto& src = jac.sources[k];
    require(src.source != nullptr && src.source->rows() == marg[k].size(),
            "pushforward jacobian: source atoms of marginal " +
                std::to_string(k) + " do not match the marginal");
    const Index width = d * src.source->cols() + d;
    require(src.offset >= 0 && src.offset + width <= jac.parameters,
            "pushforward jacobian: parameter block of marginal " +
                std::to_string(k) + " exceeds the parameter vector");
  }
}

}  // namespace detail

inline double swb_objective(const EmpiricalDistribution& z,
                            const std::vector<EmpiricalDistribution>& marginals,
                            const BarycenterWeights& pi,
                            const ProjectionSet& proj, double p) {
  detail::check_marginals(marginals, pi);
  double total = 0.0;
  for (std::size_t k = 0; k < marginals.size(); ++k)
    total += pi[static_cast<Index>(k)] *
             sw_distance_pp(z, marginals[k], proj, p);
  return total;
}

// Gradient h of the objective and, when requested, its derivatives with
// respect to phi and pi along the tangents already carried by `state`.
struct SupportDerivatives {
  Matrix h;                          // M_G x d
  std::optional<Jacobian> dh_dphi;   // (M_G d) x P
  std::optional<Jacobian> dh_dpi;    // (M_G d) x K
};

inline SupportDerivatives support_derivatives(
    const BarycenterState& state,
    const std::vector<EmpiricalDistribution>& marginals,
    const BarycenterWeights& pi, const ProjectionSet& proj, double p,
    const PushforwardJacobian* phi = nullptr) {
  detail::check_marginals(marginals, pi);
  const Index n = state.z.rows();
  const Index d = state.z.cols();
  const auto big_k = static_cast<Index>(marginals.size());
  detail::require(d == marginals.front().dim() && d == proj.dim(),
                  "barycenter: atom dimension does not match marginals");
  const bool want_phi = phi != nullptr && state.tracks_phi();
  const bool want_pi = state.tracks_pi();
  if (want_phi) {
    detail::check_pushforward(*phi, marginals);
    detail::require(state.jac_phi.cols() == phi->parameters,
                    "barycenter: phi tangent width does not match layout");
  }
  const bool want_second = want_phi || want_pi;
  const double inv_l = 1.0 / static_cast<double>(proj.size());

  std::vector<Matrix> per_k(static_cast<std::size_t>(big_k),
                            Matrix::Zero(n, d));
  SupportDerivatives out;
  if (want_phi) out.dh_dphi = Jacobian::Zero(n * d, phi->parameters);

  // Sum over projections of (sum_k pi_k c) theta theta^T per atom.
  std::vector<Eigen::MatrixXd> curvature;
  if (want_second)
    curvature.assign(static_cast<std::size_t>(n), Eigen::MatrixXd::Zero(d, d));

  detail::SortedProjection zp, xp;
  Vector coef(n), second(n), total_second(n);
  Vector cbar(n);
  Matrix xbar;
  for (Index l = 0; l < proj.size(); ++l) {
    const Eigen::RowVectorXd theta = proj.direction(l);
    zp.assign(state.z, theta);
    if (want_second) total_second.setZero();
    for (Index k = 0; k < big_k; ++k) {
      const auto& mk = marginals[static_cast<std::size_t>(k)];
      xp.assign(mk.points(), theta);
      coef.setZero();
      const Matrix* src = want_phi ? phi->sources[k].source : nullptr;
      if (want_second) second.setZero();
      if (src) {
        xbar = Matrix::Zero(n, src->cols());
        cbar.setZero();
      }
      detail::monotone_coupling(
          zp.order, zp.size(), xp.order, xp.size(),
          [&](Index a, Index b, double mass) {
            const double u = zp.values[a] - xp.values[b];
            coef[a] += mass * abs_pow_deriv(u, p);
            if (want_second) {
              const double c = mass * abs_pow_second(u, p);
              second[a] += c;
              if (src) {
                xbar.row(a) += c * src->row(b);
                cbar[a] += c;
              }
            }
          });
      per_k[static_cast<std::size_t>(k)].noalias() += inv_l * coef * theta;
      if (want_second) total_second += pi[k] * second;
      if (src) {
        // d h_a / d phi_k -= pi_k / L * theta (theta^T d f_k(xbar) / d phi_k)
        const Index h = src->cols();
        const Index off = phi->sources[k].offset;
        const double scale = pi[k] * inv_l;
        auto& jac = *out.dh_dphi;
        for (Index a = 0; a < n; ++a) {
          for (Index r = 0; r < d; ++r) {
            const double tr = scale * theta[r];
            if (tr == 0.0) continue;
            for (Index s = 0; s < d; ++s) {
              const double trs = tr * theta[s];
              for (Index c = 0; c < h; ++c)
                jac(a * d + r, off + s * h + c) -= trs * xbar(a, c);
              jac(a * d + r, off + d * h + s) -= trs * cbar[a];
            }
          }
        }
      }
    }
    if (want_second) {
      const Eigen::MatrixXd outer = theta.transpose() * theta;
      for (Index a = 0; a < n; ++a)
        curvature[static_cast<std::size_t>(a)] +=
            (inv_l * total_second[a]) * outer;
    }
  }

  out.h = Matrix::Zero(n, d);
  for (Index k = 0; k < big_k; ++k)
    out.h += pi[k] * per_k[static_cast<std::size_t>(k)];

  if (want_phi) {
    for (Index a = 0; a < n; ++a)
      out.dh_dphi->middleRows(a * d, d).noalias() +=
          curvature[static_cast<std::size_t>(a)] *
          state.jac_phi.middleRows(a * d, d);
  }
  if (want_pi) {
    detail::require(state.jac_pi.cols() == big_k,
                    "barycenter: pi tangent width does not match K");
    out.dh_dpi = Jacobian::Zero(n * d, big_k);
    auto& jac = *out.dh_dpi;
    for (Index k = 0; k < big_k; ++k) {
      const auto& g = per_k[static_cast<std::size_t>(k)];
      for (Index a = 0; a < n; ++a)
        for (Index r = 0; r < d; ++r) jac(a * d + r, k) = g(a, r);
    }
    for (Index a = 0; a < n; ++a)
      jac.middleRows(a * d, d).noalias() +=
          curvature[static_cast<std::size_t>(a)] *
          state.jac_pi.middleRows(a * d, d);
  }
  return out;
}

inline Matrix swb_grad_support(const EmpiricalDistribution& z,
                               const std::vector<EmpiricalDistribution>& marg,
                               const BarycenterWeights& pi,
                               const ProjectionSet& proj, double p) {
  return support_derivatives(BarycenterState::start(z.points()), marg, pi,
                             proj, p)
      .h;
}

namespace detail {

// Tangent update of one Adam coordinate for a block of parameter columns.
inline void adam_tangent(Jacobian& dz, Jacobian& dm, Jacobian& dv,
                         const Jacobian& dh, Index row, double h, double mhat,
                         double vhat, double bc1, double bc2,
                         const SwbConfig& cfg) {
  dm.row(row) = cfg.beta1 * dm.row(row) + (1.0 - cfg.beta1) * dh.row(row);
  dv.row(row) = cfg.beta2 * dv.row(row) + 2.0 * (1.0 - cfg.beta2) * h *
                                              dh.row(row);
  const double s = std::sqrt(vhat);
  const double den = s + cfg.epsilon;
  dz.row(row) -= (cfg.step_size / (bc1 * den)) * dm.row(row);
  if (s > 0.0)
    dz.row(row) += (cfg.step_size * mhat / (den * den * 2.0 * s * bc2)) *
                   dv.row(row);
}

}  // namespace detail

// One bias-corrected Adam update of the atoms with gradient h; advances the
// phi / pi tangents when their dh is supplied.
inline BarycenterState adam_step(BarycenterState state, const Matrix& h,
                                 const SwbConfig& cfg,
                                 const Jacobian* dh_dphi = nullptr,
                                 const Jacobian* dh_dpi = nullptr) {
  detail::require(h.rows() == state.z.rows() && h.cols() == state.z.cols(),
                  "adam_step: gradient shape does not match atoms");
  if (!h.allFinite())
    throw NumericalError("adam_step: non-finite gradient at iteration " +
                         std::to_string(state.t + 1));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  const bool phi = dh_dphi != nullptr && state.tracks_phi();
  const bool pi = dh_dpi != nullptr && state.tracks_pi();
  const Index cols = state.z.cols();
  for (Index i = 0; i < state.z.size(); ++i) {
    const Index a = i / cols;
    const Index r = i % cols;
    const double g = h(a, r);
    double& m = state.m(a, r);
    double& v = state.v(a, r);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    state.z(a, r) -= cfg.step_size * mhat / (std::sqrt(vhat) + cfg.epsilon);
    if (phi)
      detail::adam_tangent(state.jac_phi, state.jac_phi_m, state.jac_phi_v,
                           *dh_dphi, i, g, mhat, vhat, bc1, bc2, cfg);
    if (pi)
      detail::adam_tangent(state.jac_pi, state.jac_pi_m, state.jac_pi_v,
                           *dh_dpi, i, g, mhat, vhat, bc1, bc2, cfg);
  }
  if (!state.z.allFinite() ||
      state.z.cwiseAbs().maxCoeff() > cfg.divergence_bound)
    throw NumericalError("barycenter solver diverged at iteration " +
                         std::to_string(state.t));
  return state;
}

struct SolveOptions {
  const Matrix* init = nullptr;               // explicit starting atoms
  const PushforwardJacobian* phi = nullptr;   // track d z / d phi
  bool track_pi = false;                      // track d z / d pi
  bool record_trace = false;
};

struct SwbResult {
  EmpiricalDistribution barycenter;
  std::vector<double> trace;  // held-out objective at t = 0..T when recorded
  BarycenterState state;
};

inline ProjectionSet solver_projections(const SwbConfig& cfg, Index dim,
                                        int iteration) {
  return sample_projections(
      cfg.projections, dim,
      derive_key(cfg.seed, {tag::kSolverProjection,
                            static_cast<std::uint64_t>(iteration)}));
}

inline Index default_atom_count(
    const std::vector<EmpiricalDistribution>& marginals) {
  Index m = 0;
  for (const auto& g : marginals) m = std::max(m, g.size());
  return m;
}

// Draws M_G atoms from the pi-mixture of marginal atoms. `picks` receives
// (marginal, atom) for each draw.
inline Matrix mixture_init(const std::vector<EmpiricalDistribution>& marginals,
                           const BarycenterWeights& pi, Index count,
                           std::uint64_t seed,
                           std::vector<std::pair<Index, Index>>* picks) {
  const Index d = marginals.front().dim();
  Matrix z(count, d);
  Stream rng(seed, {tag::kSolverInit});
  const auto big_k = static_cast<Index>(marginals.size());
  for (Index a = 0; a < count; ++a) {
    const double u = rng.uniform();
    Index k = 0;
    double acc = pi[0];
    while (k + 1 < big_k && (u >= acc || pi[k] == 0.0)) acc += pi[++k];
    const auto& mk = marginals[static_cast<std::size_t>(k)];
    const auto j = static_cast<Index>(rng.below(
        static_cast<std::uint64_t>(mk.size())));
    z.row(a) = mk.atom(j);
    if (picks) picks->emplace_back(k, j);
  }
  return z;
}

inline SwbResult swb_solve(const std::vector<EmpiricalDistribution>& marginals,
                           const BarycenterWeights& pi, const SwbConfig& cfg,
                           const SolveOptions& opts = {}) {
  cfg.validate();
  detail::check_marginals(marginals, pi);
  const Index d = marginals.front().dim();
  const Index count = cfg.atoms > 0 ? cfg.atoms : default_atom_count(marginals);

  std::vector<std::pair<Index, Index>> picks;
  Matrix init;
  if (opts.init) {
    detail::require(opts.init->cols() == d && opts.init->rows() >= 1,
                    "swb_solve: initial atoms have the wrong shape");
    detail::require(opts.init->allFinite(),
                    "swb_solve: initial atoms are not finite");
    init = *opts.init;
  } else {
    init = mixture_init(marginals, pi, count, cfg.seed, &picks);
  }

  BarycenterState state = BarycenterState::start(std::move(init));
  if (opts.phi) {
    detail::check_pushforward(*opts.phi, marginals);
    state.enable_phi(opts.phi->parameters);
    // Atoms drawn from a pushforward inherit its derivative.
    for (std::size_t a = 0; a < picks.size(); ++a) {
      const auto [k, j] = picks[a];
      const auto& src = opts.phi->sources[static_cast<std::size_t>(k)];
      const Index h = src.source->cols();
      for (Index r = 0; r < d; ++r) {
        const Index row = static_cast<Index>(a) * d + r;
        for (Index c = 0; c < h; ++c)
          state.jac_phi(row, src.offset + r * h + c) = (*src.source)(j, c);
        state.jac_phi(row, src.offset + d * h + r) = 1.0;
      }
    }
  }
  if (opts.track_pi) state.enable_pi(pi.size());

  SwbResult result;
  std::optional<ProjectionSet> held_out;
  if (opts.record_trace) {
    held_out = sample_projections(cfg.projections, d,
                                  derive_key(cfg.seed, {tag::kSolverTrace}));
    result.trace.push_back(swb_objective(EmpiricalDistribution(state.z),
                                         marginals, pi, *held_out, cfg.p));
  }
  for (int t = 1; t <= cfg.iterations; ++t) {
    const ProjectionSet proj = solver_projections(cfg, d, t);
    const SupportDerivatives der =
        support_derivatives(state, marginals, pi, proj, cfg.p, opts.phi);
    state = adam_step(std::move(state), der.h, cfg,
                      der.dh_dphi ? &*der.dh_dphi : nullptr,
                      der.dh_dpi ? &*der.dh_dpi : nullptr);
    if (held_out)
      result.trace.push_back(swb_objective(EmpiricalDistribution(state.z),
                                           marginals, pi, *held_out, cfg.p));
  }
  result.barycenter = EmpiricalDistribution(state.z);
  result.state = std::move(state);
  return result;
}

}  // namespace mddr
