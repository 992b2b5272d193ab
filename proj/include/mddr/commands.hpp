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

// Command implementations behind the `mddr` executable. Each throws
// ValidationError (bad input, exit 2) or NumericalError (exit 3).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mddr/error.hpp"
#include "mddr/experiments.hpp"
#include "mddr/io.hpp"
#include "mddr/mcmc.hpp"
#include "mddr/swb.hpp"

#ifndef MDDR_VERSION
#define MDDR_VERSION "unknown"
#endif

namespace mddr::cli {

namespace fs = std::filesystem;
using io::json;

struct CommandOptions {
  std::string data;
  std::string config;
  std::string out;
  std::string chain;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  double threshold = 0.0;
  std::vector<std::string> labels;
  std::vector<std::string> chains;
  std::vector<std::string> marginals;
  std::vector<double> weights;
  std::string model = "mddr";  // or "ddr"
  int predictor = 0;           // for the ddr model
  bool write_fitted = false;
};

inline void require_flag(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ValidationError("missing required flag " + flag);
}

inline io::RunConfig effective_config(const CommandOptions& o) {
  io::RunConfig c = io::load_run_config(o.config);
  if (o.seed) c.apply_seed(*o.seed);
  detail::require(o.threads >= 1, "--threads: must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------

inline void cmd_simulate(const CommandOptions& o) {
  require_flag(o.out, "--out");
  const auto cfg = effective_config(o);
  const auto sim = simulate_dataset(cfg.simulation, o.threads);
  const fs::path out(o.out);
  io::save_dataset(sim.train, out / "train");
  if (!sim.test.empty()) io::save_dataset(sim.test, out / "test");
  json truth = io::truth_to_json(sim.truth);
  truth["train_index"] = sim.train_index;
  truth["test_index"] = sim.test_index;
  truth["seed"] = cfg.seed;
  io::write_json(out / "truth.json", truth);
}

inline void cmd_simulate_cells(const CommandOptions& o) {
  require_flag(o.out, "--out");
  const auto cfg = effective_config(o);
  const auto problems = simulate_cells(cfg.cells, o.threads);
  const fs::path out(o.out);
  json index = json::array();
  for (const auto& p : problems) {
    io::save_dataset(p.data, out / p.target);
    json t = io::truth_to_json(p.truth);
    t["target"] = p.target;
    t["sources"] = p.sources;
    io::write_json(out / p.target / "truth.json", t);
    index.push_back({{"target", p.target}, {"sources", p.sources}});
  }
  io::write_json(out / "targets.json", index);
}

inline Dataset select_model_data(const Dataset& d, const CommandOptions& o) {
  if (o.model == "mddr") return d;
  if (o.model == "ddr") {
    detail::require(o.predictor >= 0 && o.predictor < d.schema.num_predictors(),
                    "--predictor: out of range for this dataset");
    return d.restrict_to(o.predictor);
  }
  throw ValidationError("--model: expected 'mddr' or 'ddr', got '" + o.model + "'");
}

inline PriorConfig select_prior(PriorConfig prior, const CommandOptions& o) {
  if (o.model == "ddr" && prior.alpha.size() > 1)
    prior.alpha = Vector::Constant(1, prior.alpha[o.predictor]);
  return prior;
}

inline void write_fitted(const fs::path& dir, const SplitMetrics& s) {
  for (std::size_t i = 0; i < s.fitted.size(); ++i)
    io::atomic_write(dir / (io::obs_name(i) + ".csv"), io::to_csv(s.fitted[i]));
}

inline json evaluate_and_report(const Chain& chain, const io::DataBundle& data,
                                const io::RunConfig& cfg, const CommandOptions& o,
                                const fs::path& out) {
  const Dataset* test = data.test ? &*data.test : nullptr;
  const Metrics m = evaluate(chain, data.train, test, cfg.likelihood, cfg.eval_projections,
                             derive_key(cfg.seed, {tag::kEvaluation}), o.write_fitted, o.threads);
  json j = io::metrics_to_json(m, chain);
  j["L_eval"] = cfg.eval_projections;
  j["model"] = o.model;
  if (o.model == "ddr") j["predictor"] = o.predictor;
  io::write_json(out / "metrics.json", j);
  if (o.write_fitted) {
    write_fitted(out / "fitted" / "train", m.train);
    if (m.test) write_fitted(out / "fitted" / "test", *m.test);
  }
  return j;
}

inline void cmd_fit(const CommandOptions& o) {
  require_flag(o.data, "--data");
  require_flag(o.out, "--out");
  const auto cfg = effective_config(o);
  io::DataBundle raw = io::load_data(o.data);
  io::DataBundle data{select_model_data(raw.train, o), std::nullopt};
  if (raw.test) data.test = select_model_data(*raw.test, o);

  FitConfig fc = cfg.fit_config(o.threads);
  fc.prior = select_prior(cfg.prior, o);
  fc.prior.concentration(data.train.schema.num_predictors());

  const fs::path out(o.out);
  fs::create_directories(out);
  json meta = {{"version", MDDR_VERSION},
               {"seed", cfg.seed},
               {"model", o.model},
               {"config", io::to_json(cfg)},
               {"data", o.data},
               {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                             std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION)},
               {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                     std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                     std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  if (o.model == "ddr") meta["predictor"] = o.predictor;
  io::write_json(out / "run_meta.json", meta);

  // Records stream into a temporary file that is moved into place at the
  // end, whether the chain finished or failed part way.
  const fs::path chain_path = out / "chain.ndjson";
  fs::path partial = chain_path;
  partial += ".tmp";
  FitResult fit;
  {
    std::ofstream sink(partial, std::ios::binary | std::ios::trunc);
    if (!sink) throw ValidationError("cannot write " + partial.string());
    try {
      fit = fit_model(data.train, fc, [&](const ChainSample& s) {
        sink << io::sample_to_line(s);
        sink.flush();
      });
    } catch (...) {
      sink.close();
      fs::rename(partial, chain_path);
      throw;
    }
  }
  fs::rename(partial, chain_path);
  evaluate_and_report(fit.chain, data, cfg, o, out);
}

inline void cmd_evaluate(const CommandOptions& o) {
  require_flag(o.data, "--data");
  require_flag(o.chain, "--chain");
  const auto cfg = effective_config(o);
  io::DataBundle raw = io::load_data(o.data);
  io::DataBundle data{select_model_data(raw.train, o), std::nullopt};
  if (raw.test) data.test = select_model_data(*raw.test, o);
  const Chain chain = io::read_chain(o.chain, data.train.schema);
  const fs::path out = o.out.empty() ? fs::path(o.chain).parent_path() : fs::path(o.out);
  evaluate_and_report(chain, data, cfg, o, out);
}

inline GraphSpec graph_from_chains(const std::vector<std::string>& labels,
                                   const std::vector<std::string>& chains, double threshold) {
  detail::require(labels.size() >= 2, "--labels: need at least two labels");
  detail::require(chains.size() == labels.size(),
                  "--chains: expected one chain per label (" + std::to_string(labels.size()) +
                      "), got " + std::to_string(chains.size()));
  std::vector<GraphTarget> targets;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!fs::exists(chains[t]))
      throw ValidationError("graph: chain file for target '" + labels[t] +
                            "' not found: " + chains[t]);
    const auto weights = io::read_chain_weights(chains[t]);
    Vector mean = Vector::Zero(weights.front().size());
    for (const auto& w : weights) mean += w;
    mean /= static_cast<double>(weights.size());
    if (static_cast<std::size_t>(mean.size()) != labels.size() - 1)
      throw ValidationError("graph: chain for target '" + labels[t] + "' has " +
                            std::to_string(mean.size()) + " weights but " +
                            std::to_string(labels.size() - 1) + " source labels");
    targets.push_back({labels[t], sources_for(labels, t), mean});
  }
  return build_graph(targets, threshold);
}

inline void cmd_graph(const CommandOptions& o) {
  require_flag(o.out, "--out");
  const GraphSpec g = graph_from_chains(o.labels, o.chains, o.threshold);
  const fs::path out(o.out);
  io::atomic_write(out / "graph.csv", io::graph_to_csv(g));
  io::atomic_write(out / "graph.dot", io::graph_to_dot(g));
}

inline void cmd_swb(const CommandOptions& o) {
  require_flag(o.out, "--out");
  detail::require(!o.marginals.empty(), "--marginals: need at least one CSV file");
  const auto cfg = effective_config(o);
  std::vector<EmpiricalDistribution> marginals;
  for (const auto& path : o.marginals) {
    if (!fs::exists(path)) throw ValidationError("marginal file not found: " + path);
    marginals.emplace_back(io::read_csv(path));
    detail::require(marginals.back().dim() == marginals.front().dim(),
                    path + ": dimension differs from " + o.marginals.front());
  }
  Vector pi;
  if (o.weights.empty()) {
    pi = Vector::Constant(static_cast<Index>(marginals.size()), 1.0 / double(marginals.size()));
  } else {
    detail::require(o.weights.size() == marginals.size(),
                    "--weights: expected one weight per marginal");
    pi = Eigen::Map<const Vector>(o.weights.data(), static_cast<Index>(o.weights.size()));
    if (std::abs(pi.sum() - 1.0) > 1e-12) pi /= pi.sum();
  }
  SolveOptions opts;
  opts.record_trace = true;
  SwbConfig swb = cfg.likelihood.swb;
  swb.seed = derive_key(cfg.seed, {tag::kSolver});
  const auto res = swb_solve(marginals, BarycenterWeights(pi), swb, opts);
  const fs::path out(o.out);
  io::atomic_write(out / "barycenter.csv", io::to_csv(res.barycenter.points()));
  std::string trace;
  for (std::size_t t = 0; t < res.trace.size(); ++t)
    trace += std::to_string(t) + "," + io::format_double(res.trace[t]) + "\n";
  io::atomic_write(out / "trace.csv", trace);
}

}  // namespace mddr::cli
