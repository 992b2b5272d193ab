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

// Density-density regression model: each response G_i is fitted by the
// sliced Wasserstein barycenter of affine pushforwards A_k F_ik + b_k with
// shared weights pi, scored by the generalized likelihood
// exp(-w SW_p^p(fitted_i, G_i)).
//
// Parameter layout (phi): for k = 0..K-1, A_k row-major (d x h_k) then b_k.
// The weights are carried unconstrained as omega in R^{K-1} with pi_K as
// the softmax anchor.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mddr/empirical.hpp"
#include "mddr/error.hpp"
#include "mddr/parallel.hpp"
#include "mddr/random.hpp"
#include "mddr/sliced_ot.hpp"
#include "mddr/swb.hpp"

namespace mddr {

struct LinearMap {
  Eigen::MatrixXd A;  // d x h
  Vector b;           // d

  Index in_dim() const { return A.cols(); }
  Index out_dim() const { return A.rows(); }
  Index parameter_count() const { return A.size() + b.size(); }

  static LinearMap zero(Index out, Index in) {
    return {Eigen::MatrixXd::Zero(out, in), Vector::Zero(out)};
  }
};

inline EmpiricalDistribution pushforward(const LinearMap& map,
                                         const EmpiricalDistribution& f) {
  detail::require(f.dim() == map.in_dim(),
                  "pushforward: distribution has dimension " +
                      std::to_string(f.dim()) + ", map expects " +
                      std::to_string(map.in_dim()));
  Matrix out = f.points() * map.A.transpose();
  out.rowwise() += map.b.transpose();
  return EmpiricalDistribution(std::move(out));
}

// Dimensions shared by every observation of a dataset.
struct Schema {
  Index response_dim = 0;
  std::vector<Index> predictor_dims;

  Index num_predictors() const {
    return static_cast<Index>(predictor_dims.size());
  }

  Index block_offset(Index k) const {
    Index off = 0;
    for (Index j = 0; j < k; ++j)
      off += response_dim * predictor_dims[static_cast<std::size_t>(j)] +
             response_dim;
    return off;
  }

  Index parameter_count() const { return block_offset(num_predictors()); }

  void validate() const {
    detail::require(response_dim >= 1, "schema: response dimension must be >= 1");
    detail::require(!predictor_dims.empty(), "schema: need at least one predictor");
    for (Index h : predictor_dims)
      detail::require(h >= 1, "schema: predictor dimensions must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Simplex reparameterization
// ---------------------------------------------------------------------------

// pi_k = e^{omega_k} / (1 + sum_j e^{omega_j}) for k < K, pi_K = 1 / (...).
inline Vector simplex_forward(const Vector& omega) {
  for (Index k = 0; k < omega.size(); ++k)
    detail::require(std::isfinite(omega[k]), "simplex_forward: omega must be finite");
  const double top = omega.size() ? std::max(0.0, omega.maxCoeff()) : 0.0;
  Vector pi(omega.size() + 1);
  for (Index k = 0; k < omega.size(); ++k) pi[k] = std::exp(omega[k] - top);
  pi[omega.size()] = std::exp(-top);
  pi /= pi.sum();
  return pi;
}

inline Vector simplex_inverse(const Vector& pi) {
  detail::require(pi.size() >= 1, "simplex_inverse: empty weight vector");
  for (Index k = 0; k < pi.size(); ++k)
    detail::require(pi[k] > 0.0, "simplex_inverse: weight " + std::to_string(k) +
                                     " is zero");
  const Index last = pi.size() - 1;
  Vector omega(last);
  for (Index k = 0; k < last; ++k) omega[k] = std::log(pi[k] / pi[last]);
  return omega;
}

// Pulls a gradient with respect to pi back to omega through J = D - pi pi^T.
inline Vector simplex_chain_rule(const Vector& grad_pi, const Vector& pi) {
  detail::require(grad_pi.size() == pi.size() && pi.size() >= 1,
                  "simplex_chain_rule: length mismatch");
  const double mean = grad_pi.dot(pi);
  Vector out(pi.size() - 1);
  for (Index k = 0; k + 1 < pi.size(); ++k)
    out[k] = pi[k] * (grad_pi[k] - mean);
  return out;
}

// ---------------------------------------------------------------------------
// Parameters and data
// ---------------------------------------------------------------------------

struct ModelParams {
  std::vector<LinearMap> maps;
  Vector omega;  // K - 1

  Index num_predictors() const { return static_cast<Index>(maps.size()); }
  Vector weights() const { return simplex_forward(omega); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& m : maps) n += m.parameter_count();
    return n;
  }

  Vector phi() const {
    Vector out(parameter_count());
    Index off = 0;
    for (const auto& m : maps) {
      for (Index r = 0; r < m.A.rows(); ++r)
        for (Index c = 0; c < m.A.cols(); ++c) out[off++] = m.A(r, c);
      out.segment(off, m.b.size()) = m.b;
      off += m.b.size();
    }
    return out;
  }

  void set_phi(const Vector& phi) {
    detail::require(phi.size() == parameter_count(),
                    "phi has length " + std::to_string(phi.size()) +
                        ", layout needs " + std::to_string(parameter_count()));
    Index off = 0;
    for (auto& m : maps) {
      for (Index r = 0; r < m.A.rows(); ++r)
        for (Index c = 0; c < m.A.cols(); ++c) m.A(r, c) = phi[off++];
      m.b = phi.segment(off, m.b.size());
      off += m.b.size();
    }
  }

  static ModelParams zeros(const Schema& schema) {
    ModelParams p;
    for (Index h : schema.predictor_dims)
      p.maps.push_back(LinearMap::zero(schema.response_dim, h));
    p.omega = Vector::Zero(schema.num_predictors() - 1);
    return p;
  }

  void validate(const Schema& schema) const {
    detail::require(num_predictors() == schema.num_predictors(),
                    "params: expected " + std::to_string(schema.num_predictors()) +
                        " maps");
    detail::require(omega.size() == schema.num_predictors() - 1,
                    "params: omega must have length K - 1");
    for (Index k = 0; k < num_predictors(); ++k) {
      const auto& m = maps[static_cast<std::size_t>(k)];
      detail::require(m.out_dim() == schema.response_dim && m.b.size() == schema.response_dim &&
                          m.in_dim() == schema.predictor_dims[static_cast<std::size_t>(k)],
                      "params: map " + std::to_string(k) + " has the wrong shape");
      detail::require(m.A.allFinite() && m.b.allFinite(),
                      "params: map " + std::to_string(k) + " is not finite");
    }
  }
};

struct Observation {
  std::vector<EmpiricalDistribution> predictors;
  EmpiricalDistribution response;
};

struct Dataset {
  Schema schema;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }

  void validate() const {
    schema.validate();
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const auto& o = observations[i];
      const std::string where = "observation " + std::to_string(i);
      detail::require(static_cast<Index>(o.predictors.size()) == schema.num_predictors(),
                      where + ": wrong number of predictors");
      for (std::size_t k = 0; k < o.predictors.size(); ++k)
        detail::require(o.predictors[k].dim() == schema.predictor_dims[k],
                        where + ": predictor " + std::to_string(k) +
                            " has the wrong dimension");
      detail::require(o.response.dim() == schema.response_dim,
                      where + ": response has the wrong dimension");
    }
  }

  // The same observations keeping only predictor k (single-predictor model).
  Dataset restrict_to(Index k) const {
    detail::require(k >= 0 && k < schema.num_predictors(),
                    "restrict_to: predictor index out of range");
    Dataset out;
    out.schema.response_dim = schema.response_dim;
    out.schema.predictor_dims = {schema.predictor_dims[static_cast<std::size_t>(k)]};
    for (const auto& o : observations)
      out.observations.push_back({{o.predictors[static_cast<std::size_t>(k)]}, o.response});
    return out;
  }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct LikelihoodConfig {
  double w = 10.0;
  double p = 2.0;
  Index projections = 1000;  // L for the likelihood SW
  SwbConfig swb;

  void validate(const std::string& where = "likelihood") const {
    detail::require(w > 0 && std::isfinite(w), where + ".w: must be > 0");
    detail::require(p >= 1, where + ".p: must be >= 1");
    detail::require(projections >= 1, where + ".L: must be >= 1");
    swb.validate("swb");
    detail::require(swb.p == p, "swb.p: must equal likelihood.p");
  }
};

struct PriorConfig {
  double laplace_scale = 1.0;
  double normal_variance = 1e3;
  Vector alpha;  // empty -> 0.01 for every predictor

  Vector concentration(Index k) const {
    if (alpha.size() == 0) return Vector::Constant(k, 0.01);
    detail::require(alpha.size() == k, "prior.alpha: expected " +
                                           std::to_string(k) + " entries");
    return alpha;
  }

  void validate(const std::string& where = "prior") const {
    detail::require(laplace_scale > 0, where + ".laplace_scale: must be > 0");
    detail::require(normal_variance > 0, where + ".normal_variance: must be > 0");
    for (Index k = 0; k < alpha.size(); ++k)
      detail::require(alpha[k] > 0, where + ".alpha: entries must be > 0");
  }
};

// Addresses the random streams of one posterior evaluation. Current and
// proposed states inside one MH step share a key.
struct EvalKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t phase = 0;

  std::uint64_t solver_seed(std::size_t obs) const {
    return derive_key(seed, {tag::kSolver, step, phase, obs});
  }
  std::uint64_t likelihood_seed(std::size_t obs) const {
    return derive_key(seed, {tag::kLikelihood, step, phase, obs});
  }
};

// ---------------------------------------------------------------------------
// Fitted distribution and likelihood
// ---------------------------------------------------------------------------

struct Tracking {
  bool phi = false;
  bool pi = false;
};

struct FittedDistribution {
  EmpiricalDistribution atoms;
  BarycenterState state;  // carries jac_phi / jac_pi when tracked
};

inline FittedDistribution fitted_distribution(const std::vector<LinearMap>& maps,
                                              const Vector& pi, const Observation& obs,
                                              SwbConfig swb, std::uint64_t solver_seed,
                                              Tracking track = {}) {
  detail::require(maps.size() == obs.predictors.size(),
                  "fitted_distribution: one map per predictor required");
  std::vector<EmpiricalDistribution> marginals;
  marginals.reserve(maps.size());
  for (std::size_t k = 0; k < maps.size(); ++k)
    marginals.push_back(pushforward(maps[k], obs.predictors[k]));
  if (maps.size() == 1) {
    // A single marginal is its own barycenter; no solver noise.
    FittedDistribution out{marginals.front(), BarycenterState::start(marginals.front().points())};
    if (track.phi) {
      const Matrix& src = obs.predictors.front().points();
      const Index d = maps.front().out_dim(), h = src.rows() ? src.cols() : 0;
      out.state.enable_phi(maps.front().parameter_count());
      for (Index a = 0; a < src.rows(); ++a)
        for (Index r = 0; r < d; ++r) {
          for (Index c = 0; c < h; ++c) out.state.jac_phi(a * d + r, r * h + c) = src(a, c);
          out.state.jac_phi(a * d + r, d * h + r) = 1.0;
        }
    }
    if (track.pi) out.state.enable_pi(1);
    return out;
  }
  PushforwardJacobian layout;
  SolveOptions opts;
  if (track.phi) {
    Index off = 0;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      layout.sources.push_back({&obs.predictors[k].points(), off});
      off += maps[k].parameter_count();
    }
    layout.parameters = off;
    opts.phi = &layout;
  }
  opts.track_pi = track.pi;
  swb.seed = solver_seed;
  auto res = swb_solve(marginals, BarycenterWeights(pi), swb, opts);
  return {std::move(res.barycenter), std::move(res.state)};
}

struct LikelihoodTerm {
  double value = 0.0;  // -w SW_p^p(fitted, response)
  Vector grad_phi;     // empty unless requested
  Vector grad_pi;      // empty unless requested
};

inline LikelihoodTerm likelihood_term(const std::vector<LinearMap>& maps, const Vector& pi,
                                      const Observation& obs, const LikelihoodConfig& cfg,
                                      const EvalKey& key, std::size_t index,
                                      Tracking track = {}) {
  const auto fit =
      fitted_distribution(maps, pi, obs, cfg.swb, key.solver_seed(index), track);
  const auto proj = sample_projections(cfg.projections, obs.response.dim(),
                                       key.likelihood_seed(index));
  LikelihoodTerm out;
  if (!track.phi && !track.pi) {
    out.value = -cfg.w * sw_distance_pp(fit.atoms, obs.response, proj, cfg.p);
    return out;
  }
  const auto sw = sw_evaluate(fit.atoms, obs.response, proj, cfg.p);
  out.value = -cfg.w * sw.value;
  const Eigen::Map<const Vector> g(sw.grad.data(), sw.grad.size());
  if (track.phi) out.grad_phi = -cfg.w * (fit.state.jac_phi.transpose() * g);
  if (track.pi) out.grad_pi = -cfg.w * (fit.state.jac_pi.transpose() * g);
  return out;
}

inline double gen_log_lik(const ModelParams& params, const Observation& obs,
                          const LikelihoodConfig& cfg, const EvalKey& key,
                          std::size_t index = 0) {
  return likelihood_term(params.maps, params.weights(), obs, cfg, key, index).value;
}

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

struct PriorValue {
  double value = 0.0;
  bool clamped = false;  // some pi_k underflowed and was clamped at 1e-300
};

struct PriorGradient {
  Vector grad_phi;
  Vector grad_omega;
};

inline PriorValue log_prior(const ModelParams& params, const PriorConfig& prior) {
  PriorValue out;
  const double lap_norm = -std::log(2.0 * prior.laplace_scale);
  const double gauss_norm = -0.5 * std::log(2.0 * std::numbers::pi * prior.normal_variance);
  for (const auto& m : params.maps) {
    for (Index i = 0; i < m.A.size(); ++i)
      out.value += lap_norm - std::abs(m.A.data()[i]) / prior.laplace_scale;
    for (Index i = 0; i < m.b.size(); ++i)
      out.value += gauss_norm - m.b[i] * m.b[i] / (2.0 * prior.normal_variance);
  }
  const Vector pi = params.weights();
  const Vector alpha = prior.concentration(pi.size());
  // Dirichlet density on pi times the |det J| = prod pi_k of the softmax map.
  double log_beta = -std::lgamma(alpha.sum());
  for (Index k = 0; k < pi.size(); ++k) {
    log_beta += std::lgamma(alpha[k]);
    double pk = pi[k];
    if (pk < 1e-300) {
      pk = 1e-300;
      out.clamped = true;
    }
    out.value += alpha[k] * std::log(pk);
  }
  out.value -= log_beta;
  return out;
}

inline PriorGradient log_prior_grad(const ModelParams& params, const PriorConfig& prior) {
  PriorGradient out;
  out.grad_phi = Vector(params.parameter_count());
  Index off = 0;
  for (const auto& m : params.maps) {
    for (Index r = 0; r < m.A.rows(); ++r)
      for (Index c = 0; c < m.A.cols(); ++c) {
        const double a = m.A(r, c);
        out.grad_phi[off++] = a > 0 ? -1.0 / prior.laplace_scale
                                    : (a < 0 ? 1.0 / prior.laplace_scale : 0.0);
      }
    for (Index i = 0; i < m.b.size(); ++i)
      out.grad_phi[off++] = -m.b[i] / prior.normal_variance;
  }
  const Vector pi = params.weights();
  const Vector alpha = prior.concentration(pi.size());
  out.grad_omega = Vector(pi.size() - 1);
  for (Index k = 0; k + 1 < pi.size(); ++k)
    out.grad_omega[k] = alpha[k] - pi[k] * alpha.sum();
  return out;
}

// ---------------------------------------------------------------------------
// Log posterior over a dataset
// ---------------------------------------------------------------------------

struct PosteriorEvaluation {
  double log_post = 0.0;
  double log_lik = 0.0;
  double log_prior = 0.0;
  Vector grad_phi;    // filled when phi gradients are requested
  Vector grad_omega;  // filled when omega gradients are requested
};

inline PosteriorEvaluation evaluate_posterior(const ModelParams& params, const Dataset& data,
                                              const LikelihoodConfig& cfg,
                                              const PriorConfig& prior, const EvalKey& key,
                                              Tracking track = {}, std::size_t threads = 1) {
  const Vector pi = params.weights();
  const Index big_k = pi.size();
  // With K = 1 the weight is pinned to 1 and has no tangent.
  const Tracking solver_track{track.phi, track.pi && big_k > 1};
  std::vector<LikelihoodTerm> terms(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    terms[i] = likelihood_term(params.maps, pi, data.observations[i], cfg, key, i,
                               solver_track);
  });
  PosteriorEvaluation out;
  const PriorValue pv = log_prior(params, prior);
  out.log_prior = pv.value;
  Vector grad_pi = Vector::Zero(big_k);
  if (track.phi) out.grad_phi = Vector::Zero(params.parameter_count());
  for (const auto& t : terms) {
    out.log_lik += t.value;
    if (track.phi) out.grad_phi += t.grad_phi;
    if (solver_track.pi) grad_pi += t.grad_pi;
  }
  out.log_post = out.log_prior + out.log_lik;
  if (track.phi || track.pi) {
    const PriorGradient pg = log_prior_grad(params, prior);
    if (track.phi) out.grad_phi += pg.grad_phi;
    if (track.pi) out.grad_omega = pg.grad_omega + simplex_chain_rule(grad_pi, pi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relative residual error
// ---------------------------------------------------------------------------

// Mean of all response atoms pooled over observations, repeated K times.
inline std::vector<Vector> pooled_response_intercepts(const Dataset& data) {
  detail::require(!data.empty(), "reference intercepts need at least one observation");
  Vector sum = Vector::Zero(data.schema.response_dim);
  double count = 0.0;
  for (const auto& o : data.observations) {
    sum += o.response.points().colwise().sum().transpose();
    count += static_cast<double>(o.response.size());
  }
  return std::vector<Vector>(static_cast<std::size_t>(data.schema.num_predictors()),
                             sum / count);
}

// The intercept-only reference fit: SWB of the point masses delta_{b'_k}
// under uniform weights.
inline EmpiricalDistribution reference_distribution(const std::vector<Vector>& intercepts,
                                                    const SwbConfig& swb) {
  detail::require(!intercepts.empty(), "reference: need at least one intercept");
  bool identical = true;
  for (const auto& b : intercepts) identical = identical && (b.array() == intercepts[0].array()).all();
  if (identical) return EmpiricalDistribution(Matrix(intercepts[0].transpose()));
  std::vector<EmpiricalDistribution> masses;
  for (const auto& b : intercepts) masses.emplace_back(Matrix(b.transpose()));
  SwbConfig cfg = swb;
  cfg.atoms = 1;
  return swb_solve(masses, BarycenterWeights::uniform(static_cast<Index>(masses.size())), cfg)
      .barycenter;
}

struct ErrorBreakdown {
  double re = 0.0;
  std::vector<double> numerators;    // SW_p^p(fitted_i, G_i)
  std::vector<double> denominators;  // SW_p^p(reference_i, G_i)
  std::vector<EmpiricalDistribution> fitted;
};

// RE = mean_i SW(fitted_i, G_i) / SW(reference_i, G_i). `projections` is the
// evaluation L; `key` addresses the solver and projection streams.
inline ErrorBreakdown relative_error_breakdown(const std::vector<LinearMap>& maps,
                                               const Vector& pi, const Dataset& data,
                                               const LikelihoodConfig& cfg,
                                               Index projections,
                                               const std::vector<Vector>& intercepts,
                                               const EvalKey& key, std::size_t threads = 1) {
  detail::require(!data.empty(), "relative_error: dataset is empty");
  for (const auto& b : intercepts)
    detail::require(b.size() == data.schema.response_dim,
                    "relative_error: reference intercepts have the wrong dimension");
  const auto reference = reference_distribution(intercepts, cfg.swb);
  ErrorBreakdown out;
  out.numerators.resize(data.size());
  out.denominators.resize(data.size());
  out.fitted.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto& obs = data.observations[i];
    const auto proj = sample_projections(projections, obs.response.dim(),
                                         key.likelihood_seed(i));
    out.fitted[i] =
        fitted_distribution(maps, pi, obs, cfg.swb, key.solver_seed(i)).atoms;
    out.numerators[i] = sw_distance_pp(out.fitted[i], obs.response, proj, cfg.p);
    out.denominators[i] = sw_distance_pp(reference, obs.response, proj, cfg.p);
  });
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(out.denominators[i] > 0.0))
      throw NumericalError("relative_error: reference fit is exact for observation " +
                           std::to_string(i) + " (degenerate reference)");
    out.re += out.numerators[i] / out.denominators[i];
  }
  out.re /= static_cast<double>(data.size());
  return out;
}

inline double relative_error(const ModelParams& params, const Dataset& data,
                             const LikelihoodConfig& cfg, Index projections,
                             const std::vector<Vector>& intercepts, const EvalKey& key,
                             std::size_t threads = 1) {
  return relative_error_breakdown(params.maps, params.weights(), data, cfg, projections,
                                  intercepts, key, threads)
      .re;
}

}  // namespace mddr
