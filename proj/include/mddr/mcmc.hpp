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

// MALA over the generalized posterior. Each iteration updates phi with omega
// fixed and then omega with phi fixed. Within one update the current and the
// proposed state are scored with the same solver / projection streams, so
// the current state is re-evaluated every step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mddr/error.hpp"
#include "mddr/model.hpp"
#include "mddr/random.hpp"

namespace mddr {

struct MalaConfig {
  double eta1 = 1e-3;  // phi step size
  double eta2 = 5e-3;  // omega step size
  int n_steps = 100;
  int burn_in = 0;
  int thin = 1;
  std::uint64_t seed = 0;

  void validate(const std::string& where = "mcmc") const {
    using detail::require;
    require(eta1 > 0 && std::isfinite(eta1), where + ".eta1: must be > 0");
    require(eta2 > 0 && std::isfinite(eta2), where + ".eta2: must be > 0");
    require(n_steps >= 1, where + ".n_steps: must be >= 1");
    require(burn_in >= 0 && burn_in < n_steps,
            where + ".burn_in: must lie in [0, n_steps)");
    require(thin >= 1, where + ".thin: must be >= 1");
  }
};

struct ChainSample {
  ModelParams params;
  double log_post = 0.0;
  bool accepted_phi = false;
  bool accepted_omega = false;
  int step = 0;
};

using Chain = std::vector<ChainSample>;

inline Vector grad_log_post_phi(const ModelParams& params, const Dataset& data,
                                const LikelihoodConfig& cfg, const PriorConfig& prior,
                                const EvalKey& key, std::size_t threads = 1) {
  return evaluate_posterior(params, data, cfg, prior, key, {true, false}, threads).grad_phi;
}

inline Vector grad_log_post_omega(const ModelParams& params, const Dataset& data,
                                  const LikelihoodConfig& cfg, const PriorConfig& prior,
                                  const EvalKey& key, std::size_t threads = 1) {
  return evaluate_posterior(params, data, cfg, prior, key, {false, true}, threads).grad_omega;
}

// ---------------------------------------------------------------------------
// Generic MALA kernel
// ---------------------------------------------------------------------------

struct TargetValue {
  double log_p = 0.0;
  Vector grad;
};

struct MalaOutcome {
  Vector x;
  TargetValue at;     // target at the returned x
  bool accepted = false;
  double log_alpha = 0.0;
};

// log q(to | from) up to a constant, for x* = x + eta grad + sqrt(2 eta) xi.
inline double mala_log_q(const Vector& to, const Vector& from, const Vector& grad_from,
                         double eta) {
  return -(to - from - eta * grad_from).squaredNorm() / (4.0 * eta);
}

// One MALA transition. `target` maps x to (log p, grad) and may throw
// NumericalError; a proposal that throws or is non-finite is rejected. The
// current state is scored by the same callable.
template <typename Target>
MalaOutcome mala_step(const Vector& x, double eta, Stream& rng, Target&& target) {
  MalaOutcome out;
  out.x = x;
  out.at = target(x);
  if (!std::isfinite(out.at.log_p) || !out.at.grad.allFinite())
    throw NumericalError("mala: current state has a non-finite log posterior");
  Vector prop = x + eta * out.at.grad;
  const double scale = std::sqrt(2.0 * eta);
  for (Index i = 0; i < prop.size(); ++i) prop[i] += scale * rng.normal();
  const double u = rng.uniform_pos();

  TargetValue next;
  try {
    next = target(prop);
  } catch (const NumericalError&) {
    out.log_alpha = -INFINITY;
    return out;
  }
  if (!std::isfinite(next.log_p) || !next.grad.allFinite()) {
    out.log_alpha = -INFINITY;
    return out;
  }
  out.log_alpha = next.log_p - out.at.log_p + mala_log_q(x, prop, next.grad, eta) -
                  mala_log_q(prop, x, out.at.grad, eta);
  if (std::isnan(out.log_alpha)) out.log_alpha = -INFINITY;
  if (std::log(u) <= out.log_alpha) {
    out.x = std::move(prop);
    out.at = std::move(next);
    out.accepted = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

// A from Laplace prior draws scaled by 0.1; b at its prior mode 0 (a scaled
// draw from the wide Normal would still sit several units off the data);
// omega = 0.
inline ModelParams initial_params(const Schema& schema, const PriorConfig& prior,
                                  std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(schema);
  Stream rng(seed, {tag::kInit});
  for (auto& m : p.maps)
    for (Index r = 0; r < m.A.rows(); ++r)
      for (Index c = 0; c < m.A.cols(); ++c) m.A(r, c) = 0.1 * rng.laplace(prior.laplace_scale);
  return p;
}

struct ChainOptions {
  std::size_t threads = 1;
  std::function<void(const ChainSample&)> sink;  // called per recorded sample
};

struct ChainStats {
  int steps = 0;
  int accepted_phi = 0;
  int accepted_omega = 0;
};

// One phi update followed by one omega update (skipped for K = 1).
inline ChainSample chain_iteration(const ChainSample& current, const Dataset& data,
                                   const LikelihoodConfig& cfg, const PriorConfig& prior,
                                   const MalaConfig& mcfg, int step, std::size_t threads) {
  ChainSample next = current;
  next.step = step;
  const auto s = static_cast<std::uint64_t>(step);

  {
    const EvalKey key{mcfg.seed, s, tag::kPhiPhase};
    Stream rng(mcfg.seed, {tag::kProposal, s, tag::kPhiPhase});
    ModelParams probe = next.params;
    auto target = [&](const Vector& phi) {
      probe.set_phi(phi);
      const auto ev = evaluate_posterior(probe, data, cfg, prior, key, {true, false}, threads);
      return TargetValue{ev.log_post, ev.grad_phi};
    };
    const auto out = mala_step(next.params.phi(), mcfg.eta1, rng, target);
    next.params.set_phi(out.x);
    next.log_post = out.at.log_p;
    next.accepted_phi = out.accepted;
  }
  next.accepted_omega = false;
  if (next.params.omega.size() > 0) {
    const EvalKey key{mcfg.seed, s, tag::kOmegaPhase};
    Stream rng(mcfg.seed, {tag::kProposal, s, tag::kOmegaPhase});
    ModelParams probe = next.params;
    auto target = [&](const Vector& omega) {
      probe.omega = omega;
      const auto ev = evaluate_posterior(probe, data, cfg, prior, key, {false, true}, threads);
      return TargetValue{ev.log_post, ev.grad_omega};
    };
    const auto out = mala_step(next.params.omega, mcfg.eta2, rng, target);
    next.params.omega = out.x;
    next.log_post = out.at.log_p;
    next.accepted_omega = out.accepted;
  }
  return next;
}

inline Chain run_chain(const Dataset& data, const ModelParams& init,
                       const LikelihoodConfig& cfg, const PriorConfig& prior,
                       const MalaConfig& mcfg, const ChainOptions& opts = {},
                       ChainStats* stats = nullptr) {
  data.validate();
  detail::require(!data.empty(), "run_chain: dataset is empty");
  cfg.validate();
  prior.validate();
  mcfg.validate();
  init.validate(data.schema);
  prior.concentration(data.schema.num_predictors());

  Chain chain;
  ChainSample current{init, 0.0, false, false, -1};
  ChainStats local;
  for (int step = 0; step < mcfg.n_steps; ++step) {
    try {
      current = chain_iteration(current, data, cfg, prior, mcfg, step, opts.threads);
    } catch (const NumericalError& e) {
      throw NumericalError("mcmc step " + std::to_string(step) + ": " + e.what());
    }
    local.steps += 1;
    local.accepted_phi += current.accepted_phi;
    local.accepted_omega += current.accepted_omega;
    if (step >= mcfg.burn_in && (step - mcfg.burn_in) % mcfg.thin == 0) {
      chain.push_back(current);
      if (opts.sink) opts.sink(current);
    }
  }
  if (stats) *stats = local;
  return chain;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

struct Summary {
  double mean = 0.0;
  Interval hpd;
};

inline constexpr std::size_t kMinSummarySamples = 20;

// Shortest window holding ceil(mass * n) of the sorted values.
inline Interval hpd_interval(std::vector<double> values, double mass = 0.95) {
  detail::require(values.size() >= kMinSummarySamples,
                  "hpd: need at least " + std::to_string(kMinSummarySamples) +
                      " samples, got " + std::to_string(values.size()));
  detail::require(mass > 0 && mass <= 1, "hpd: mass must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const auto keep = static_cast<std::size_t>(
      std::ceil(mass * static_cast<double>(n) - 1e-9));
  Interval best{values.front(), values.back()};
  for (std::size_t i = 0; i + keep <= n; ++i) {
    const double w = values[i + keep - 1] - values[i];
    if (w < best.width()) best = {values[i], values[i + keep - 1]};
  }
  return best;
}

inline Summary summarize(const std::vector<double>& values, double mass = 0.95) {
  Summary s;
  s.hpd = hpd_interval(values, mass);
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  return s;
}

inline double mean_of(const std::vector<double>& values) {
  detail::require(!values.empty(), "mean of an empty sample");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

inline Vector posterior_mean_weights(const Chain& chain) {
  detail::require(!chain.empty(), "posterior mean of an empty chain");
  Vector mean = Vector::Zero(chain.front().params.omega.size() + 1);
  for (const auto& s : chain) mean += s.params.weights();
  return mean / static_cast<double>(chain.size());
}

// Per-coordinate summaries of pi.
inline std::vector<Summary> summarize_weights(const Chain& chain, double mass = 0.95) {
  detail::require(!chain.empty(), "summarize: chain is empty");
  const Index k = chain.front().params.omega.size() + 1;
  std::vector<Summary> out;
  for (Index j = 0; j < k; ++j) {
    std::vector<double> v;
    for (const auto& s : chain) v.push_back(s.params.weights()[j]);
    out.push_back(summarize(v, mass));
  }
  return out;
}

// Per-coordinate summaries of phi.
inline std::vector<Summary> summarize_coefficients(const Chain& chain, double mass = 0.95) {
  detail::require(!chain.empty(), "summarize: chain is empty");
  const Index n = chain.front().params.parameter_count();
  std::vector<Summary> out;
  for (Index j = 0; j < n; ++j) {
    std::vector<double> v;
    for (const auto& s : chain) v.push_back(s.params.phi()[j]);
    out.push_back(summarize(v, mass));
  }
  return out;
}

}  // namespace mddr
