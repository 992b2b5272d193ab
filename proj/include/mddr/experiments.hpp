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

// Synthetic data generators, the single-predictor baseline, train/test
// evaluation and the weighted communication graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mddr/error.hpp"
#include "mddr/mcmc.hpp"
#include "mddr/model.hpp"
#include "mddr/parallel.hpp"
#include "mddr/random.hpp"
#include "mddr/swb.hpp"

namespace mddr {

// ---------------------------------------------------------------------------
// Rotation-mixture simulation
// ---------------------------------------------------------------------------

struct SimulationConfig {
  int n_obs = 70;
  Index n_atoms = 100;
  Vector true_pi = Vector(Eigen::Vector3d(2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0));
  double noise_sd = 0.1;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  SwbConfig swb;  // solver used to build the responses

  void validate(const std::string& where = "simulation") const {
    using detail::require;
    require(n_obs >= 1, where + ".n_obs: must be >= 1");
    require(n_atoms >= 1, where + ".n_atoms: must be >= 1");
    require(noise_sd >= 0 && std::isfinite(noise_sd), where + ".noise_sd: must be >= 0");
    require(train_fraction > 0 && train_fraction <= 1,
            where + ".train_fraction: must lie in (0, 1]");
    try {
      BarycenterWeights w(true_pi);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ".true_pi: " + e.what());
    }
    swb.validate(where + ".swb");
  }
};

struct SimulationTruth {
  std::vector<LinearMap> maps;
  Vector pi;
};

struct SimulatedData {
  Dataset train;
  Dataset test;
  SimulationTruth truth;
  std::vector<std::size_t> train_index;  // positions in generation order
  std::vector<std::size_t> test_index;
};

inline Eigen::Matrix2d rotation(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return (Eigen::Matrix2d() << c, -s, s, c).finished();
}

// Shuffled train/test partition with round(fraction * n) training items.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Stream rng(seed, {tag::kSplit});
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<long>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline SimulatedData simulate_dataset(const SimulationConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  const Index k_pred = cfg.true_pi.size();
  SimulatedData out;
  Stream shared(cfg.seed, {tag::kSimulation});
  for (Index k = 0; k < k_pred; ++k)
    out.truth.maps.push_back(
        {rotation(2.0 * std::numbers::pi * shared.uniform()), Vector::Zero(2)});
  out.truth.pi = cfg.true_pi;

  Schema schema{2, std::vector<Index>(static_cast<std::size_t>(k_pred), 2)};
  std::vector<Observation> all(static_cast<std::size_t>(cfg.n_obs));
  parallel_for(all.size(), threads, [&](std::size_t i) {
    Stream rng(cfg.seed, {tag::kSimulation, 1, i});
    Observation obs;
    for (Index k = 0; k < k_pred; ++k) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const Eigen::RowVector2d v(std::cos(angle), std::sin(angle));
      const double mu = 3.0 * rng.normal();
      const double var = 1.0 / (rng.exponential() + rng.exponential() + rng.exponential());
      const double sd = std::sqrt(var);
      Matrix pts(cfg.n_atoms, 2);
      for (Index j = 0; j < cfg.n_atoms; ++j) pts.row(j) = (mu + sd * rng.normal()) * v;
      obs.predictors.emplace_back(std::move(pts));
    }
    std::vector<EmpiricalDistribution> marginals;
    for (Index k = 0; k < k_pred; ++k)
      marginals.push_back(pushforward(out.truth.maps[static_cast<std::size_t>(k)],
                                      obs.predictors[static_cast<std::size_t>(k)]));
    SwbConfig swb = cfg.swb;
    swb.atoms = cfg.n_atoms;
    swb.seed = derive_key(cfg.seed, {tag::kSimulation, 2, i});
    Matrix response = swb_solve(marginals, BarycenterWeights(cfg.true_pi), swb).barycenter.points();
    for (Index j = 0; j < response.rows(); ++j)
      for (Index r = 0; r < 2; ++r) response(j, r) += cfg.noise_sd * rng.normal();
    obs.response = EmpiricalDistribution(std::move(response));
    all[i] = std::move(obs);
  });

  std::tie(out.train_index, out.test_index) =
      split_indices(all.size(), cfg.train_fraction, cfg.seed);
  out.train.schema = schema;
  out.test.schema = schema;
  for (auto i : out.train_index) out.train.observations.push_back(all[i]);
  for (auto i : out.test_index) out.test.observations.push_back(all[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Fitting and evaluation
// ---------------------------------------------------------------------------

struct FitConfig {
  LikelihoodConfig likelihood;
  PriorConfig prior;
  MalaConfig mcmc;
  Index eval_projections = 1000;
  std::size_t threads = 1;

  void validate() const {
    likelihood.validate();
    prior.validate();
    mcmc.validate();
    detail::require(eval_projections >= 1, "evaluation.L_eval: must be >= 1");
  }
};

struct FitResult {
  Chain chain;
  ChainStats stats;
};

inline FitResult fit_model(const Dataset& train, const FitConfig& cfg,
                           const std::function<void(const ChainSample&)>& sink = {}) {
  cfg.validate();
  const ModelParams init = initial_params(train.schema, cfg.prior, cfg.mcmc.seed);
  FitResult out;
  ChainOptions opts{cfg.threads, sink};
  out.chain = run_chain(train, init, cfg.likelihood, cfg.prior, cfg.mcmc, opts, &out.stats);
  return out;
}

// The K = 1 model on predictor k alone (pi fixed at 1).
inline FitResult ddr_baseline(const Dataset& train, Index k, FitConfig cfg) {
  PriorConfig prior = cfg.prior;
  if (prior.alpha.size() > 1) prior.alpha = Vector::Constant(1, prior.alpha[k]);
  cfg.prior = prior;
  return fit_model(train.restrict_to(k), cfg);
}

struct SplitMetrics {
  std::vector<double> re;  // one per chain sample
  double mean = 0.0;
  std::optional<Interval> hpd;  // needs at least 20 samples
  std::vector<Matrix> fitted;   // pooled fitted atoms per observation
};

struct Metrics {
  std::vector<Vector> intercepts;  // reference b'_k
  SplitMetrics train;
  std::optional<SplitMetrics> test;
  std::vector<Summary> weights;  // empty when the chain is too short
  Vector mean_weights;
  ChainStats stats;
};

inline SplitMetrics evaluate_split(const Chain& chain, const Dataset& data,
                                   const LikelihoodConfig& cfg, Index projections,
                                   const std::vector<Vector>& intercepts, std::uint64_t seed,
                                   bool keep_fitted, std::size_t threads) {
  SplitMetrics out;
  if (keep_fitted) out.fitted.assign(data.size(), Matrix());
  for (const auto& s : chain) {
    // Same streams for train and test only matter per observation index.
    const EvalKey key{seed, static_cast<std::uint64_t>(s.step), tag::kEvaluation};
    auto br = relative_error_breakdown(s.params.maps, s.params.weights(), data, cfg,
                                       projections, intercepts, key, threads);
    out.re.push_back(br.re);
    if (keep_fitted)
      for (std::size_t i = 0; i < data.size(); ++i) {
        Matrix& pool = out.fitted[i];
        const Matrix& add = br.fitted[i].points();
        Matrix grown(pool.rows() + add.rows(), add.cols());
        if (pool.rows()) grown.topRows(pool.rows()) = pool;
        grown.bottomRows(add.rows()) = add;
        pool = std::move(grown);
      }
  }
  out.mean = mean_of(out.re);
  if (out.re.size() >= kMinSummarySamples) out.hpd = hpd_interval(out.re);
  return out;
}

inline Metrics evaluate(const Chain& chain, const Dataset& train, const Dataset* test,
                        const LikelihoodConfig& cfg, Index projections, std::uint64_t seed,
                        bool keep_fitted = false, std::size_t threads = 1) {
  detail::require(!chain.empty(), "evaluate: chain is empty");
  Metrics m;
  m.intercepts = pooled_response_intercepts(train);
  m.train = evaluate_split(chain, train, cfg, projections, m.intercepts, seed, keep_fitted,
                           threads);
  if (test && !test->empty())
    m.test = evaluate_split(chain, *test, cfg, projections, m.intercepts,
                            derive_key(seed, {tag::kEvaluation, 1}), keep_fitted, threads);
  m.mean_weights = posterior_mean_weights(chain);
  if (chain.size() >= kMinSummarySamples) m.weights = summarize_weights(chain);
  return m;
}

// ---------------------------------------------------------------------------
// Communication graph
// ---------------------------------------------------------------------------

struct GraphEdge {
  std::string from;
  std::string to;
  double weight = 0.0;
};

struct GraphSpec {
  std::vector<std::string> nodes;
  std::vector<GraphEdge> edges;
  double threshold = 0.0;
};

struct GraphTarget {
  std::string label;
  std::vector<std::string> sources;  // aligned with the weights
  Vector weights;                    // posterior-mean pi
};

inline GraphSpec build_graph(const std::vector<GraphTarget>& targets, double threshold) {
  detail::require(std::isfinite(threshold), "graph: threshold must be finite");
  GraphSpec g;
  g.threshold = threshold;
  for (const auto& t : targets)
    if (std::find(g.nodes.begin(), g.nodes.end(), t.label) == g.nodes.end())
      g.nodes.push_back(t.label);
  for (const auto& t : targets)
    for (const auto& s : t.sources)
      if (std::find(g.nodes.begin(), g.nodes.end(), s) == g.nodes.end()) g.nodes.push_back(s);
  for (const auto& t : targets) {
    detail::require(static_cast<Index>(t.sources.size()) == t.weights.size(),
                    "graph: target '" + t.label + "' has " + std::to_string(t.sources.size()) +
                        " source labels but " + std::to_string(t.weights.size()) + " weights");
    for (std::size_t k = 0; k < t.sources.size(); ++k) {
      detail::require(t.sources[k] != t.label,
                      "graph: target '" + t.label + "' lists itself as a source");
      const double w = t.weights[static_cast<Index>(k)];
      detail::require(w >= 0 && w <= 1, "graph: weight outside [0, 1] for target '" + t.label + "'");
      if (w > threshold || threshold <= 0.0) g.edges.push_back({t.sources[k], t.label, w});
    }
  }
  return g;
}

// Each node regressed on all the others: target t's sources in label order.
inline std::vector<std::string> sources_for(const std::vector<std::string>& labels,
                                            std::size_t target) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (j != target) out.push_back(labels[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cell-communication stand-in
// ---------------------------------------------------------------------------

// Four cell types; each is a regression target whose receptor profile
// (dimension 14..21) is the weighted SWB of affine images of the other three
// types' ligand profiles (dimension 4..7), observed per donor.
struct CellSimulationConfig {
  std::vector<std::string> labels{"B", "CD4T", "NK", "Mono"};
  std::vector<Index> ligand_dims{4, 5, 6, 7};
  std::vector<Index> receptor_dims{14, 16, 18, 21};
  int n_donors = 75;
  Index n_atoms = 90;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  SwbConfig swb;

  void validate(const std::string& where = "cells") const {
    using detail::require;
    require(labels.size() >= 2, where + ".labels: need at least two cell types");
    require(ligand_dims.size() == labels.size() && receptor_dims.size() == labels.size(),
            where + ": one ligand and one receptor dimension per label");
    for (auto h : ligand_dims) require(h >= 1, where + ".ligand_dims: must be >= 1");
    for (auto d : receptor_dims) require(d >= 1, where + ".receptor_dims: must be >= 1");
    require(n_donors >= 1, where + ".n_donors: must be >= 1");
    require(n_atoms >= 1, where + ".n_atoms: must be >= 1");
    require(noise_sd >= 0, where + ".noise_sd: must be >= 0");
    swb.validate(where + ".swb");
  }
};

struct CellProblem {
  std::string target;
  std::vector<std::string> sources;
  Dataset data;
  SimulationTruth truth;
};

inline std::vector<CellProblem> simulate_cells(const CellSimulationConfig& cfg,
                                               std::size_t threads = 1) {
  cfg.validate();
  const std::size_t n_types = cfg.labels.size();
  std::vector<CellProblem> problems;
  for (std::size_t t = 0; t < n_types; ++t) {
    CellProblem prob;
    prob.target = cfg.labels[t];
    prob.sources = sources_for(cfg.labels, t);
    const Index d = cfg.receptor_dims[t];
    prob.data.schema.response_dim = d;
    Stream shared(cfg.seed, {tag::kSimulation, 10, t});
    Vector pi(static_cast<Index>(n_types - 1));
    for (Index k = 0; k < pi.size(); ++k) pi[k] = shared.exponential();
    prob.truth.pi = pi / pi.sum();
    for (std::size_t j = 0; j < n_types; ++j) {
      if (j == t) continue;
      const Index h = cfg.ligand_dims[j];
      prob.data.schema.predictor_dims.push_back(h);
      LinearMap m = LinearMap::zero(d, h);
      for (Index r = 0; r < d; ++r) {
        for (Index c = 0; c < h; ++c) m.A(r, c) = shared.normal() / std::sqrt(double(h));
        m.b[r] = shared.normal();
      }
      prob.truth.maps.push_back(std::move(m));
    }
    prob.data.observations.resize(static_cast<std::size_t>(cfg.n_donors));
    parallel_for(prob.data.observations.size(), threads, [&](std::size_t i) {
      Stream rng(cfg.seed, {tag::kSimulation, 11, t, i});
      Observation obs;
      std::vector<EmpiricalDistribution> marginals;
      for (std::size_t j = 0, k = 0; j < n_types; ++j) {
        if (j == t) continue;
        const Index h = cfg.ligand_dims[j];
        // Donor-specific location and scale for this cell type.
        Vector loc(h);
        for (Index c = 0; c < h; ++c) loc[c] = rng.normal();
        const double scale = 0.5 + rng.uniform();
        Matrix pts(cfg.n_atoms, h);
        for (Index a = 0; a < cfg.n_atoms; ++a)
          for (Index c = 0; c < h; ++c) pts(a, c) = loc[c] + scale * rng.normal();
        obs.predictors.emplace_back(std::move(pts));
        marginals.push_back(pushforward(prob.truth.maps[k], obs.predictors.back()));
        ++k;
      }
      SwbConfig swb = cfg.swb;
      swb.atoms = cfg.n_atoms;
      swb.seed = derive_key(cfg.seed, {tag::kSimulation, 12, t, i});
      Matrix resp = swb_solve(marginals, BarycenterWeights(prob.truth.pi), swb).barycenter.points();
      for (Index a = 0; a < resp.rows(); ++a)
        for (Index r = 0; r < d; ++r) resp(a, r) += cfg.noise_sd * rng.normal();
      obs.response = EmpiricalDistribution(std::move(resp));
      prob.data.observations[i] = std::move(obs);
    });
    problems.push_back(std::move(prob));
  }
  return problems;
}

}  // namespace mddr
