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

// Files on disk: headerless CSV atom files, JSON dataset manifests, the run
// configuration document, NDJSON chains and metrics records.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "mddr/error.hpp"
#include "mddr/experiments.hpp"
#include "mddr/mcmc.hpp"
#include "mddr/model.hpp"

namespace mddr::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Plain files
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temporary file and renames it into place.
inline void atomic_write(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw ValidationError("cannot create directory " + path.parent_path().string());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw ValidationError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw ValidationError("cannot rename " + tmp.string() + " to " + path.string());
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string to_csv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline Matrix parse_csv(const std::string& text, const std::string& name,
                        Index expected_cols = -1) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      const auto a = cell.find_first_not_of(" \t");
      const auto b = cell.find_last_not_of(" \t");
      cell = a == std::string::npos ? "" : cell.substr(a, b - a + 1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ValidationError(name + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      row.push_back(v);
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError(name + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, found " +
                            std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(name + ": no atoms");
  const auto cols = static_cast<Index>(rows.front().size());
  if (expected_cols >= 0 && cols != expected_cols)
    throw ValidationError(name + ": expected " + std::to_string(expected_cols) +
                          " columns, found " + std::to_string(cols));
  Matrix m(static_cast<Index>(rows.size()), cols);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline Matrix read_csv(const fs::path& path, Index expected_cols = -1) {
  return parse_csv(read_file(path), path.string(), expected_cols);
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Field-path aware JSON reading
// ---------------------------------------------------------------------------

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + ": expected an object");
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ValidationError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
            throw ValidationError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ValidationError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ValidationError(where(key) + ": expected " + type_name<T>() + ", got " + v.dump());
    }
  }

  void get_vector(const std::string& key, Vector& out) {
    std::vector<double> v;
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    get(key, v);
    out = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  }

  // Marks a key that the caller parses by hand.
  void mark(const std::string& key) { seen_.insert(key); }

  std::optional<Fields> child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Fields(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError(where(k) + ": unknown field");
  }

 private:
  template <typename T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 0;
  LikelihoodConfig likelihood;  // carries the fitting solver in .swb
  PriorConfig prior;
  MalaConfig mcmc;
  Index eval_projections = 1000;
  SimulationConfig simulation;
  CellSimulationConfig cells;

  // Propagates the global seed into every module.
  void apply_seed(std::uint64_t s) {
    seed = s;
    mcmc.seed = s;
    simulation.seed = s;
    cells.seed = s;
    likelihood.swb.seed = s;
  }

  void validate() const {
    likelihood.validate();
    prior.validate();
    mcmc.validate();
    detail::require(eval_projections >= 1, "evaluation.L_eval: must be >= 1");
    simulation.validate();
    cells.validate();
  }

  FitConfig fit_config(std::size_t threads) const {
    return {likelihood, prior, mcmc, eval_projections, threads};
  }
};

inline json swb_to_json(const SwbConfig& s) {
  return {{"T", s.iterations}, {"eta", s.step_size}, {"beta1", s.beta1}, {"beta2", s.beta2},
          {"epsilon", s.epsilon}, {"M_G", s.atoms}, {"L_solver", s.projections}};
}

inline void swb_from_fields(Fields f, SwbConfig& s) {
  f.get("T", s.iterations);
  f.get("eta", s.step_size);
  f.get("beta1", s.beta1);
  f.get("beta2", s.beta2);
  f.get("epsilon", s.epsilon);
  f.get("M_G", s.atoms);
  f.get("L_solver", s.projections);
  f.finish();
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["likelihood"] = {{"w", c.likelihood.w}, {"p", c.likelihood.p}, {"L", c.likelihood.projections}};
  j["swb"] = swb_to_json(c.likelihood.swb);
  j["prior"] = {{"laplace_scale", c.prior.laplace_scale},
                {"normal_variance", c.prior.normal_variance}};
  if (c.prior.alpha.size()) j["prior"]["alpha"] = to_std(c.prior.alpha);
  j["mcmc"] = {{"eta1", c.mcmc.eta1}, {"eta2", c.mcmc.eta2}, {"n_steps", c.mcmc.n_steps},
               {"burn_in", c.mcmc.burn_in}, {"thin", c.mcmc.thin}};
  j["evaluation"] = {{"L_eval", c.eval_projections}};
  const auto& s = c.simulation;
  j["simulation"] = {{"n_obs", s.n_obs}, {"n_atoms", s.n_atoms}, {"true_pi", to_std(s.true_pi)},
                     {"noise_sd", s.noise_sd}, {"train_fraction", s.train_fraction},
                     {"swb", swb_to_json(s.swb)}};
  const auto& cl = c.cells;
  j["cells"] = {{"labels", cl.labels}, {"ligand_dims", cl.ligand_dims},
                {"receptor_dims", cl.receptor_dims}, {"n_donors", cl.n_donors},
                {"n_atoms", cl.n_atoms}, {"noise_sd", cl.noise_sd}, {"swb", swb_to_json(cl.swb)}};
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields root(j, "");
  root.get("seed", c.seed);
  if (auto f = root.child("likelihood")) {
    f->get("w", c.likelihood.w);
    f->get("p", c.likelihood.p);
    f->get("L", c.likelihood.projections);
    f->finish();
  }
  if (auto f = root.child("swb")) swb_from_fields(*f, c.likelihood.swb);
  if (auto f = root.child("prior")) {
    f->get("laplace_scale", c.prior.laplace_scale);
    f->get("normal_variance", c.prior.normal_variance);
    f->get_vector("alpha", c.prior.alpha);
    f->finish();
  }
  if (auto f = root.child("mcmc")) {
    f->get("eta1", c.mcmc.eta1);
    f->get("eta2", c.mcmc.eta2);
    f->get("n_steps", c.mcmc.n_steps);
    f->get("burn_in", c.mcmc.burn_in);
    f->get("thin", c.mcmc.thin);
    f->finish();
  }
  if (auto f = root.child("evaluation")) {
    f->get("L_eval", c.eval_projections);
    f->finish();
  }
  if (auto f = root.child("simulation")) {
    auto& s = c.simulation;
    f->get("n_obs", s.n_obs);
    f->get("n_atoms", s.n_atoms);
    f->get_vector("true_pi", s.true_pi);
    f->get("noise_sd", s.noise_sd);
    f->get("train_fraction", s.train_fraction);
    if (auto g = f->child("swb")) swb_from_fields(*g, s.swb);
    f->finish();
  }
  if (auto f = root.child("cells")) {
    auto& cl = c.cells;
    f->get("labels", cl.labels);
    f->get("ligand_dims", cl.ligand_dims);
    f->get("receptor_dims", cl.receptor_dims);
    f->get("n_donors", cl.n_donors);
    f->get("n_atoms", cl.n_atoms);
    f->get("noise_sd", cl.noise_sd);
    if (auto g = f->child("swb")) swb_from_fields(*g, cl.swb);
    f->finish();
  }
  root.finish();
  c.likelihood.swb.p = c.likelihood.p;
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.validate();
    return c;
  }
  try {
    return run_config_from_json(read_json(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::vector<std::string> predictors;  // relative to the manifest directory
  std::string response;
};

struct DatasetManifest {
  int version = kManifestVersion;
  Schema schema;
  std::vector<ManifestEntry> observations;
};

inline json to_json(const DatasetManifest& m) {
  json obs = json::array();
  for (const auto& e : m.observations)
    obs.push_back({{"id", e.id}, {"predictors", e.predictors}, {"response", e.response}});
  return {{"schema_version", m.version},
          {"response_dim", m.schema.response_dim},
          {"predictor_dims", m.schema.predictor_dims},
          {"observations", obs}};
}

inline DatasetManifest manifest_from_json(const json& j, const std::string& name) {
  DatasetManifest m;
  Fields root(j, name);
  root.get("schema_version", m.version);
  if (m.version != kManifestVersion)
    throw ValidationError(name + ".schema_version: unsupported version " + std::to_string(m.version));
  root.get("response_dim", m.schema.response_dim);
  root.get("predictor_dims", m.schema.predictor_dims);
  if (!j.contains("observations") || !j.at("observations").is_array())
    throw ValidationError(name + ".observations: expected a list");
  root.mark("observations");
  root.finish();
  try {
    m.schema.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
  const auto& obs = j.at("observations");
  if (obs.empty()) throw ValidationError(name + ".observations: need at least one observation");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::string where = name + ".observations[" + std::to_string(i) + "]";
    Fields f(obs[i], where);
    ManifestEntry e;
    f.get("id", e.id);
    f.get("predictors", e.predictors);
    f.get("response", e.response);
    f.finish();
    if (static_cast<Index>(e.predictors.size()) != m.schema.num_predictors())
      throw ValidationError(where + ".predictors: expected " +
                            std::to_string(m.schema.num_predictors()) + " files");
    if (e.response.empty()) throw ValidationError(where + ".response: missing");
    m.observations.push_back(std::move(e));
  }
  return m;
}

inline std::string obs_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "obs_%03zu", i);
  return buf;
}

inline void save_dataset(const Dataset& data, const fs::path& dir) {
  DatasetManifest m;
  m.schema = data.schema;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& o = data.observations[i];
    ManifestEntry e;
    e.id = obs_name(i);
    for (std::size_t k = 0; k < o.predictors.size(); ++k) {
      const std::string rel = e.id + "/predictor_" + std::to_string(k) + ".csv";
      atomic_write(dir / rel, to_csv(o.predictors[k].points()));
      e.predictors.push_back(rel);
    }
    e.response = e.id + "/response.csv";
    atomic_write(dir / e.response, to_csv(o.response.points()));
    m.observations.push_back(std::move(e));
  }
  write_json(dir / "manifest.json", to_json(m));
}

inline Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw ValidationError("no manifest.json in " + dir.string());
  const auto m = manifest_from_json(read_json(mpath), mpath.string());
  Dataset data;
  data.schema = m.schema;
  for (const auto& e : m.observations) {
    Observation o;
    for (std::size_t k = 0; k < e.predictors.size(); ++k) {
      const fs::path p = dir / e.predictors[k];
      if (!fs::exists(p)) throw ValidationError(mpath.string() + ": missing file " + p.string());
      o.predictors.emplace_back(read_csv(p, m.schema.predictor_dims[k]));
    }
    const fs::path r = dir / e.response;
    if (!fs::exists(r)) throw ValidationError(mpath.string() + ": missing file " + r.string());
    o.response = EmpiricalDistribution(read_csv(r, m.schema.response_dim));
    data.observations.push_back(std::move(o));
  }
  data.validate();
  return data;
}

// A manifest directory, or a directory holding train/ and optionally test/.
struct DataBundle {
  Dataset train;
  std::optional<Dataset> test;
};

inline DataBundle load_data(const fs::path& dir) {
  DataBundle b;
  if (fs::exists(dir / "manifest.json")) {
    b.train = load_dataset(dir);
    return b;
  }
  if (!fs::exists(dir / "train" / "manifest.json"))
    throw ValidationError(dir.string() + ": expected manifest.json or train/manifest.json");
  b.train = load_dataset(dir / "train");
  if (fs::exists(dir / "test" / "manifest.json")) {
    b.test = load_dataset(dir / "test");
    if (b.test->schema.response_dim != b.train.schema.response_dim ||
        b.test->schema.predictor_dims != b.train.schema.predictor_dims)
      throw ValidationError(dir.string() + ": train and test schemas differ");
  }
  return b;
}

inline json truth_to_json(const SimulationTruth& t) {
  json maps = json::array();
  for (const auto& m : t.maps) {
    json a = json::array();
    for (Index r = 0; r < m.A.rows(); ++r) a.push_back(to_std(m.A.row(r).transpose()));
    maps.push_back({{"A", a}, {"b", to_std(m.b)}});
  }
  return {{"pi", to_std(t.pi)}, {"maps", maps}};
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

inline json sample_to_json(const ChainSample& s) {
  return {{"step", s.step},
          {"log_post", s.log_post},
          {"accepted_phi", s.accepted_phi},
          {"accepted_omega", s.accepted_omega},
          {"pi", to_std(s.params.weights())},
          {"omega", to_std(s.params.omega)},
          {"phi", to_std(s.params.phi())}};
}

inline std::string sample_to_line(const ChainSample& s) { return sample_to_json(s).dump() + "\n"; }

inline ChainSample sample_from_json(const json& j, const Schema& schema, const std::string& where) {
  Fields f(j, where);
  ChainSample s;
  std::vector<double> pi, omega, phi;
  f.get("step", s.step);
  f.get("log_post", s.log_post);
  f.get("accepted_phi", s.accepted_phi);
  f.get("accepted_omega", s.accepted_omega);
  f.get("pi", pi);
  f.get("omega", omega);
  f.get("phi", phi);
  f.finish();
  s.params = ModelParams::zeros(schema);
  if (static_cast<Index>(phi.size()) != s.params.parameter_count())
    throw ValidationError(where + ".phi: length " + std::to_string(phi.size()) +
                          " does not match the manifest layout (" +
                          std::to_string(s.params.parameter_count()) + " parameters)");
  s.params.set_phi(Eigen::Map<const Vector>(phi.data(), static_cast<Index>(phi.size())));
  if (static_cast<Index>(pi.size()) != schema.num_predictors())
    throw ValidationError(where + ".pi: expected " + std::to_string(schema.num_predictors()) +
                          " weights");
  if (j.contains("omega")) {
    if (static_cast<Index>(omega.size()) != schema.num_predictors() - 1)
      throw ValidationError(where + ".omega: expected K - 1 entries");
    s.params.omega = Eigen::Map<const Vector>(omega.data(), static_cast<Index>(omega.size()));
  } else {
    s.params.omega = simplex_inverse(Eigen::Map<const Vector>(pi.data(), static_cast<Index>(pi.size())));
  }
  return s;
}

template <typename Fn>
void for_each_record(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read chain " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": invalid JSON record");
    }
    fn(j, where);
  }
}

inline Chain read_chain(const fs::path& path, const Schema& schema) {
  Chain chain;
  for_each_record(path, [&](const json& j, const std::string& where) {
    chain.push_back(sample_from_json(j, schema, where));
  });
  if (chain.empty()) throw ValidationError(path.string() + ": chain is empty");
  return chain;
}

// Only the weights of each record (enough for the graph).
inline std::vector<Vector> read_chain_weights(const fs::path& path) {
  std::vector<Vector> out;
  for_each_record(path, [&](const json& j, const std::string& where) {
    if (!j.contains("pi") || !j.at("pi").is_array())
      throw ValidationError(where + ".pi: expected a list");
    std::vector<double> pi;
    try {
      pi = j.at("pi").get<std::vector<double>>();
    } catch (const std::exception&) {
      throw ValidationError(where + ".pi: expected numbers");
    }
    out.emplace_back(Eigen::Map<const Vector>(pi.data(), static_cast<Index>(pi.size())));
    if (!out.empty() && out.back().size() != out.front().size())
      throw ValidationError(where + ".pi: length changes within the chain");
  });
  if (out.empty()) throw ValidationError(path.string() + ": chain is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Metrics and graphs
// ---------------------------------------------------------------------------

inline json split_to_json(const SplitMetrics& s) {
  json j = {{"re_mean", s.mean}, {"re_samples", s.re}};
  if (s.hpd) j["re_hpd95"] = {s.hpd->lo, s.hpd->hi};
  return j;
}

inline json metrics_to_json(const Metrics& m, const Chain& chain) {
  json j;
  j["n_samples"] = chain.size();
  json b = json::array();
  for (const auto& v : m.intercepts) b.push_back(to_std(v));
  j["reference_intercepts"] = b;
  j["train"] = split_to_json(m.train);
  if (m.test) j["test"] = split_to_json(*m.test);
  j["weights"] = {{"mean", to_std(m.mean_weights)}};
  if (!m.weights.empty()) {
    json iv = json::array();
    for (const auto& s : m.weights) iv.push_back({s.hpd.lo, s.hpd.hi});
    j["weights"]["hpd95"] = iv;
  }
  int acc_phi = 0, acc_omega = 0;
  for (const auto& s : chain) {
    acc_phi += s.accepted_phi;
    acc_omega += s.accepted_omega;
  }
  j["acceptance"] = {{"phi", double(acc_phi) / double(chain.size())},
                     {"omega", double(acc_omega) / double(chain.size())}};
  return j;
}

inline std::string graph_to_csv(const GraphSpec& g) {
  std::string out = "source,target,weight\n";
  for (const auto& e : g.edges) out += e.from + "," + e.to + "," + format_double(e.weight) + "\n";
  return out;
}

inline std::string graph_to_dot(const GraphSpec& g) {
  std::string out = "digraph communication {\n";
  for (const auto& n : g.nodes) out += "  \"" + n + "\";\n";
  for (const auto& e : g.edges)
    out += "  \"" + e.from + "\" -> \"" + e.to + "\" [weight=" + format_double(e.weight) +
           ", label=\"" + format_double(std::round(e.weight * 1000.0) / 1000.0) + "\"];\n";
  out += "}\n";
  return out;
}

}  // namespace mddr::io
