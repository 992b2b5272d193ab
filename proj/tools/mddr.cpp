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

// mddr: simulate, fit, evaluate, graph and barycenter commands.
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <CLI11.hpp>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "mddr/commands.hpp"

namespace {

using mddr::cli::CommandOptions;

void add_common(CLI::App* cmd, CommandOptions& o, std::uint64_t& seed) {
  cmd->add_option("--config", o.config, "run configuration (JSON)");
  cmd->add_option("--seed", seed, "global seed, overrides the config");
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian multiple density-density regression"};
  app.set_version_flag("--version", std::string(MDDR_VERSION));
  app.require_subcommand(1);

  CommandOptions o;
  std::uint64_t seed = 0;

  auto* sim = app.add_subcommand("simulate", "write the rotation-mixture dataset");
  add_common(sim, o, seed);
  sim->add_option("--out", o.out, "output directory")->required();

  auto* cells = app.add_subcommand("simulate-cells", "write the synthetic cell-communication data");
  add_common(cells, o, seed);
  cells->add_option("--out", o.out, "output directory")->required();

  auto* fit = app.add_subcommand("fit", "run MALA and write chain, metrics and run metadata");
  add_common(fit, o, seed);
  fit->add_option("--data", o.data, "dataset directory")->required();
  fit->add_option("--out", o.out, "output directory")->required();
  fit->add_option("--model", o.model, "mddr or ddr")->check(CLI::IsMember({"mddr", "ddr"}));
  fit->add_option("--predictor", o.predictor, "predictor used by the ddr model");
  fit->add_flag("--fitted", o.write_fitted, "also write pooled fitted atoms");

  auto* eval = app.add_subcommand("evaluate", "relative error summaries for a stored chain");
  add_common(eval, o, seed);
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--chain", o.chain, "chain.ndjson")->required();
  eval->add_option("--out", o.out, "output directory (default: next to the chain)");
  eval->add_option("--model", o.model, "mddr or ddr")->check(CLI::IsMember({"mddr", "ddr"}));
  eval->add_option("--predictor", o.predictor, "predictor used by the ddr model");
  eval->add_flag("--fitted", o.write_fitted, "also write pooled fitted atoms");

  auto* graph = app.add_subcommand("graph", "weighted graph from per-target chains");
  graph->add_option("--labels", o.labels, "target labels, one per chain")
      ->delimiter(',')
      ->required();
  graph->add_option("--chains", o.chains, "chain files in label order")
      ->delimiter(',')
      ->required();
  graph->add_option("--threshold", o.threshold, "keep edges with weight above this");
  graph->add_option("--out", o.out, "output directory")->required();

  auto* swb = app.add_subcommand("swb", "sliced Wasserstein barycenter of CSV point clouds");
  add_common(swb, o, seed);
  swb->add_option("--marginals", o.marginals, "CSV files")->delimiter(',')->required();
  swb->add_option("--weights", o.weights, "barycenter weights")->delimiter(',');
  swb->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto* c : {sim, cells, fit, eval, swb})
    if (c->parsed() && c->count("--seed")) o.seed = seed;

  try {
    if (sim->parsed()) mddr::cli::cmd_simulate(o);
    else if (cells->parsed()) mddr::cli::cmd_simulate_cells(o);
    else if (fit->parsed()) mddr::cli::cmd_fit(o);
    else if (eval->parsed()) mddr::cli::cmd_evaluate(o);
    else if (graph->parsed()) mddr::cli::cmd_graph(o);
    else if (swb->parsed()) mddr::cli::cmd_swb(o);
  } catch (const mddr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mddr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
