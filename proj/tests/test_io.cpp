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

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "mddr/commands.hpp"
#include "oracles.hpp"

namespace mddr {
namespace {

namespace fs = std::filesystem;
using io::json;
using testing::random_points;

// Fresh directory per test, removed afterwards.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            ("mddr_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

template <typename Fn>
std::string validation_message(Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "<no error>";
}

// ---------------------------------------------------------------------------

TEST(Csv, RoundTripIsExact) {
  Matrix m = random_points(7, 3, 1);
  m(0, 0) = 1e-300;
  m(1, 1) = -0.1;
  EXPECT_EQ(io::parse_csv(io::to_csv(m), "x"), m);
}

TEST(Csv, ToleratesBlankLinesAndCarriageReturns) {
  const Matrix m = io::parse_csv("1, 2\r\n\n3,4\n", "x");
  EXPECT_EQ(m, (Matrix(2, 2) << 1, 2, 3, 4).finished());
}

TEST(Csv, ErrorsNameFileAndLine) {
  EXPECT_EQ(validation_message([] { io::parse_csv("1,2\n3,abc\n", "f.csv"); }),
            "f.csv:2: not a number: 'abc'");
  EXPECT_EQ(validation_message([] { io::parse_csv("1,2\n3\n", "f.csv"); }),
            "f.csv:2: expected 2 columns, found 1");
  EXPECT_EQ(validation_message([] { io::parse_csv("\n", "f.csv"); }), "f.csv: no atoms");
  EXPECT_EQ(validation_message([] { io::parse_csv("1,2\n", "f.csv", 3); }),
            "f.csv: expected 3 columns, found 2");
}

TEST(AtomicWrite, CreatesParentsAndLeavesNoTemporary) {
  TempDir dir;
  const fs::path p = dir / "a/b/c.txt";
  io::atomic_write(p, "hello\n");
  EXPECT_EQ(io::read_file(p), "hello\n");
  io::atomic_write(p, "x");
  EXPECT_EQ(io::read_file(p), "x");
  EXPECT_FALSE(fs::exists(dir / "a/b/c.txt.tmp"));
}

// ---------------------------------------------------------------------------

TEST(RunConfig, DefaultsRoundTrip) {
  io::RunConfig c;
  c.apply_seed(17);
  const json j = io::to_json(c);
  const auto back = io::run_config_from_json(j);
  EXPECT_EQ(io::to_json(back), j);
  EXPECT_EQ(back.likelihood.w, 10.0);
  EXPECT_EQ(back.likelihood.projections, 1000);
  EXPECT_EQ(back.likelihood.swb.iterations, 100);
  EXPECT_EQ(back.mcmc.eta1, 1e-3);
  EXPECT_EQ(back.mcmc.eta2, 5e-3);
  EXPECT_EQ(back.mcmc.seed, 17u);
  EXPECT_EQ(back.simulation.n_obs, 70);
}

TEST(RunConfig, PartialDocumentKeepsDefaults) {
  const auto c = io::run_config_from_json(json::parse(R"({"mcmc": {"n_steps": 5}, "seed": 3})"));
  EXPECT_EQ(c.mcmc.n_steps, 5);
  EXPECT_EQ(c.mcmc.eta1, 1e-3);
  EXPECT_EQ(c.simulation.seed, 3u);
}

TEST(RunConfig, ErrorsCarryFieldPaths) {
  auto msg = [](const char* text) {
    return validation_message([&] { io::run_config_from_json(json::parse(text)); });
  };
  EXPECT_EQ(msg(R"({"mcmc": {"eta": 1}})"), "mcmc.eta: unknown field");
  EXPECT_EQ(msg(R"({"bogus": 1})"), "bogus: unknown field");
  EXPECT_EQ(msg(R"({"likelihood": {"w": -1}})"), "likelihood.w: must be > 0");
  EXPECT_NE(msg(R"({"swb": {"T": "many"}})").find("swb.T"), std::string::npos);
  EXPECT_NE(msg(R"({"simulation": {"true_pi": [0.5, 0.6, 0.1]}})").find("simulation.true_pi"),
            std::string::npos);
}

TEST(RunConfig, FileErrorsNameThePath) {
  TempDir dir;
  io::atomic_write(dir / "c.json", R"({"mcmc": {"thin": 0}})");
  const auto msg = validation_message([&] { io::load_run_config((dir / "c.json").string()); });
  EXPECT_NE(msg.find("c.json"), std::string::npos);
  EXPECT_NE(msg.find("mcmc.thin"), std::string::npos);
  EXPECT_THROW(io::load_run_config((dir / "missing.json").string()), ValidationError);
}

// ---------------------------------------------------------------------------

Dataset tiny_dataset(int n, std::uint64_t seed) {
  Dataset d;
  d.schema = {2, {1, 2}};
  for (int i = 0; i < n; ++i) {
    Observation o;
    o.predictors.emplace_back(random_points(4, 1, seed + 3 * i));
    o.predictors.emplace_back(random_points(5, 2, seed + 3 * i + 1));
    o.response = EmpiricalDistribution(random_points(4, 2, seed + 3 * i + 2));
    d.observations.push_back(o);
  }
  return d;
}

TEST(Manifest, DatasetRoundTrip) {
  TempDir dir;
  const Dataset d = tiny_dataset(3, 10);
  io::save_dataset(d, dir.path());
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "obs_000/response.csv"));
  const Dataset back = io::load_dataset(dir.path());
  EXPECT_EQ(back.schema.response_dim, 2);
  EXPECT_EQ(back.schema.predictor_dims, d.schema.predictor_dims);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.observations[i].response.points(), d.observations[i].response.points());
    EXPECT_EQ(back.observations[i].predictors[1].points(), d.observations[i].predictors[1].points());
  }
}

TEST(Manifest, MissingAtomFileIsAValidationError) {
  TempDir dir;
  io::save_dataset(tiny_dataset(2, 20), dir.path());
  fs::remove(dir / "obs_001/predictor_1.csv");
  EXPECT_THROW(io::load_dataset(dir.path()), ValidationError);
}

TEST(Manifest, WrongColumnCountIsRejected) {
  TempDir dir;
  io::save_dataset(tiny_dataset(2, 30), dir.path());
  io::atomic_write(dir / "obs_000/response.csv", "1,2,3\n");
  const auto msg = validation_message([&] { io::load_dataset(dir.path()); });
  EXPECT_NE(msg.find("response.csv"), std::string::npos);
}

TEST(Manifest, LoadDataFindsTrainAndTest) {
  TempDir dir;
  io::save_dataset(tiny_dataset(2, 40), dir / "train");
  EXPECT_FALSE(io::load_data(dir.path()).test.has_value());
  io::save_dataset(tiny_dataset(1, 50), dir / "test");
  const auto b = io::load_data(dir.path());
  EXPECT_EQ(b.train.size(), 2u);
  ASSERT_TRUE(b.test.has_value());
  EXPECT_EQ(b.test->size(), 1u);
  EXPECT_THROW(io::load_data(dir / "nothing"), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(ChainFile, RoundTripIsExact) {
  TempDir dir;
  const Schema schema{2, {1, 2}};
  Chain chain;
  for (int s = 0; s < 3; ++s) {
    ChainSample c;
    c.params = initial_params(schema, PriorConfig{}, s + 1);
    c.params.omega = Vector::Constant(1, 0.1 * s - 0.7);
    c.log_post = -12.5 + s;
    c.accepted_phi = s % 2;
    c.accepted_omega = 1;
    c.step = s;
    chain.push_back(c);
  }
  std::string text;
  for (const auto& c : chain) text += io::sample_to_line(c);
  io::atomic_write(dir / "chain.ndjson", text);
  const Chain back = io::read_chain(dir / "chain.ndjson", schema);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].params.phi(), chain[i].params.phi());
    EXPECT_EQ(back[i].params.omega, chain[i].params.omega);
    EXPECT_EQ(back[i].log_post, chain[i].log_post);
    EXPECT_EQ(back[i].step, chain[i].step);
  }
  const auto w = io::read_chain_weights(dir / "chain.ndjson");
  EXPECT_EQ(w[2], chain[2].params.weights());
}

TEST(ChainFile, PhiLengthMismatchNamesTheLayout) {
  TempDir dir;
  ChainSample c;
  c.params = ModelParams::zeros({2, {1, 2}});
  io::atomic_write(dir / "chain.ndjson", io::sample_to_line(c));
  const auto msg =
      validation_message([&] { io::read_chain(dir / "chain.ndjson", Schema{2, {1, 3}}); });
  EXPECT_NE(msg.find("chain.ndjson:1.phi"), std::string::npos);
  EXPECT_NE(msg.find("manifest layout"), std::string::npos);
}

TEST(ChainFile, BadRecordsAreValidationErrors) {
  TempDir dir;
  io::atomic_write(dir / "chain.ndjson", "{not json\n");
  EXPECT_THROW(io::read_chain_weights(dir / "chain.ndjson"), ValidationError);
  io::atomic_write(dir / "empty.ndjson", "\n");
  EXPECT_THROW(io::read_chain_weights(dir / "empty.ndjson"), ValidationError);
}

// ---------------------------------------------------------------------------
// Commands, called in process.

json quick_config(std::uint64_t seed) {
  io::RunConfig c;
  c.apply_seed(seed);
  c.likelihood.projections = 20;
  c.likelihood.swb.iterations = 3;
  c.likelihood.swb.projections = 10;
  c.mcmc.n_steps = 2;
  c.eval_projections = 30;
  c.simulation.n_obs = 10;
  c.simulation.n_atoms = 8;
  c.simulation.swb.iterations = 5;
  c.simulation.swb.projections = 10;
  return io::to_json(c);
}

cli::CommandOptions options_with_config(const TempDir& dir, std::uint64_t seed = 5) {
  io::write_json(dir / "config.json", quick_config(seed));
  cli::CommandOptions o;
  o.config = (dir / "config.json").string();
  return o;
}

std::size_t count_obs_dirs(const fs::path& p) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory()) ++n;
  return n;
}

TEST(CmdSimulate, WritesSplitAndTruthDeterministically) {
  TempDir dir;
  auto o = options_with_config(dir);
  o.out = (dir / "a").string();
  cli::cmd_simulate(o);
  EXPECT_EQ(count_obs_dirs(dir / "a/train"), 7u);
  EXPECT_EQ(count_obs_dirs(dir / "a/test"), 3u);
  const json truth = io::read_json(dir / "a/truth.json");
  EXPECT_EQ(truth.at("pi").size(), 3u);
  EXPECT_EQ(truth.at("maps").size(), 3u);
  o.out = (dir / "b").string();
  cli::cmd_simulate(o);
  EXPECT_EQ(io::read_file(dir / "a/train/obs_004/response.csv"),
            io::read_file(dir / "b/train/obs_004/response.csv"));
  EXPECT_EQ(io::read_file(dir / "a/truth.json"), io::read_file(dir / "b/truth.json"));
}

TEST(CmdFit, WritesChainMetricsAndMeta) {
  TempDir dir;
  auto o = options_with_config(dir);
  io::save_dataset(tiny_dataset(2, 60), dir / "data");
  o.data = (dir / "data").string();
  o.out = (dir / "run").string();
  cli::cmd_fit(o);
  EXPECT_EQ(io::read_chain(dir / "run/chain.ndjson", Schema{2, {1, 2}}).size(), 2u);
  EXPECT_FALSE(fs::exists(dir / "run/chain.ndjson.tmp"));
  const json m = io::read_json(dir / "run/metrics.json");
  EXPECT_EQ(m.at("train").at("re_samples").size(), 2u);
  EXPECT_FALSE(m.contains("test"));
  const json meta = io::read_json(dir / "run/run_meta.json");
  EXPECT_EQ(meta.at("seed"), 5);
  EXPECT_TRUE(meta.contains("version"));
  EXPECT_TRUE(meta.contains("eigen"));
}

TEST(CmdFit, SeedFlagGivesIdenticalChains) {
  TempDir dir;
  auto o = options_with_config(dir);
  io::save_dataset(tiny_dataset(2, 70), dir / "data");
  o.data = (dir / "data").string();
  o.seed = 42;
  o.out = (dir / "r1").string();
  cli::cmd_fit(o);
  o.out = (dir / "r2").string();
  cli::cmd_fit(o);
  EXPECT_EQ(io::read_file(dir / "r1/chain.ndjson"), io::read_file(dir / "r2/chain.ndjson"));
  EXPECT_EQ(io::read_json(dir / "r1/run_meta.json").at("seed"), 42);
  o.seed = 43;
  o.out = (dir / "r3").string();
  cli::cmd_fit(o);
  EXPECT_NE(io::read_file(dir / "r1/chain.ndjson"), io::read_file(dir / "r3/chain.ndjson"));
}

TEST(CmdFit, ConfigEchoReproducesTheRun) {
  TempDir dir;
  auto o = options_with_config(dir, 9);
  io::save_dataset(tiny_dataset(2, 80), dir / "data");
  o.data = (dir / "data").string();
  o.out = (dir / "r1").string();
  cli::cmd_fit(o);
  io::write_json(dir / "echo.json", io::read_json(dir / "r1/run_meta.json").at("config"));
  o.config = (dir / "echo.json").string();
  o.out = (dir / "r2").string();
  cli::cmd_fit(o);
  EXPECT_EQ(io::read_file(dir / "r1/chain.ndjson"), io::read_file(dir / "r2/chain.ndjson"));
}

TEST(CmdFit, DdrModelUsesOnePredictor) {
  TempDir dir;
  auto o = options_with_config(dir);
  io::save_dataset(tiny_dataset(2, 90), dir / "data");
  o.data = (dir / "data").string();
  o.out = (dir / "ddr").string();
  o.model = "ddr";
  o.predictor = 1;
  cli::cmd_fit(o);
  EXPECT_EQ(io::read_chain_weights(dir / "ddr/chain.ndjson").front().size(), 1);
  o.predictor = 2;
  EXPECT_THROW(cli::cmd_fit(o), ValidationError);
}

TEST(CmdEvaluate, TrainOnlyAndLayoutMismatch) {
  TempDir dir;
  auto o = options_with_config(dir);
  io::save_dataset(tiny_dataset(2, 100), dir / "data");
  o.data = (dir / "data").string();
  o.out = (dir / "run").string();
  cli::cmd_fit(o);
  const auto before = io::read_file(dir / "run/metrics.json");
  fs::remove(dir / "run/metrics.json");
  o.chain = (dir / "run/chain.ndjson").string();
  o.out.clear();
  cli::cmd_evaluate(o);
  EXPECT_EQ(io::read_file(dir / "run/metrics.json"), before);

  Dataset other = tiny_dataset(2, 110);
  other.schema.predictor_dims = {1, 3};
  for (auto& ob : other.observations) ob.predictors[1] = EmpiricalDistribution(random_points(5, 3, 1));
  io::save_dataset(other, dir / "other");
  o.data = (dir / "other").string();
  EXPECT_THROW(cli::cmd_evaluate(o), ValidationError);
}

void write_weights_chain(const fs::path& p, const Vector& pi) {
  ChainSample c;
  c.params.omega = simplex_inverse(pi);
  c.params.maps.assign(static_cast<std::size_t>(pi.size()), LinearMap::zero(1, 1));
  io::atomic_write(p, io::sample_to_line(c));
}

TEST(CmdGraph, ThresholdsAndMissingChains) {
  TempDir dir;
  const std::vector<std::string> labels{"A", "B", "C"};
  std::vector<std::string> chains;
  const Vector w[3] = {Vector(Eigen::Vector2d(0.8, 0.2)), Vector(Eigen::Vector2d(0.5, 0.5)),
                       Vector(Eigen::Vector2d(0.1, 0.9))};
  for (int t = 0; t < 3; ++t) {
    chains.push_back((dir / (labels[t] + ".ndjson")).string());
    write_weights_chain(chains.back(), w[t]);
  }
  cli::CommandOptions o;
  o.labels = labels;
  o.chains = chains;
  o.out = (dir / "g").string();
  cli::cmd_graph(o);
  std::string text = io::read_file(dir / "g/graph.csv");
  EXPECT_EQ(text.substr(0, 21), "source,target,weight\n");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  EXPECT_NE(io::read_file(dir / "g/graph.dot").find("\"B\" -> \"A\""), std::string::npos);

  o.threshold = 1.0 / 3.0;
  cli::cmd_graph(o);
  text = io::read_file(dir / "g/graph.csv");
  // Kept: B->A 0.8, A->B 0.5, C->B 0.5, B->C 0.9.
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);

  o.chains[1] = (dir / "nope.ndjson").string();
  const auto msg = validation_message([&] { cli::cmd_graph(o); });
  EXPECT_NE(msg.find("'B'"), std::string::npos);
}

TEST(CmdSwb, SingleMarginalMidpointAndTrace) {
  TempDir dir;
  auto o = options_with_config(dir);
  const Matrix pts = random_points(6, 2, 7);
  io::atomic_write(dir / "m.csv", io::to_csv(pts));
  o.marginals = {(dir / "m.csv").string()};
  o.out = (dir / "one").string();
  cli::cmd_swb(o);
  const EmpiricalDistribution bary(io::read_csv(dir / "one/barycenter.csv"));
  EXPECT_EQ(bary.size(), 6);

  // Two point masses with equal weights meet halfway.
  io::write_json(dir / "config.json",
                 json::parse(R"({"swb": {"T": 300, "eta": 0.05, "M_G": 1}})"));
  io::atomic_write(dir / "p0.csv", "0,0\n");
  io::atomic_write(dir / "p1.csv", "2,4\n");
  o.marginals = {(dir / "p0.csv").string(), (dir / "p1.csv").string()};
  o.weights = {0.5, 0.5};
  o.out = (dir / "mid").string();
  cli::cmd_swb(o);
  const Matrix mid = io::read_csv(dir / "mid/barycenter.csv");
  EXPECT_NEAR(mid(0, 0), 1.0, 1e-3);
  EXPECT_NEAR(mid(0, 1), 2.0, 1e-3);
  const Matrix trace = io::read_csv(dir / "mid/trace.csv");
  EXPECT_EQ(trace.cols(), 2);
  EXPECT_LE(trace(trace.rows() - 1, 1), trace(0, 1));

  o.weights = {0.5};
  EXPECT_THROW(cli::cmd_swb(o), ValidationError);
}

// ---------------------------------------------------------------------------
// The executable itself: exit codes.

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MDDR_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Executable, ExitCodes) {
  TempDir dir;
  io::write_json(dir / "config.json", quick_config(1));
  const std::string cfg = " --config " + (dir / "config.json").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("--version"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("fit --out x"), 2);  // missing --data
  EXPECT_EQ(run_cli("simulate --out " + (dir / "sim").string() + cfg), 0);
  EXPECT_EQ(run_cli("fit --data " + (dir / "nowhere").string() + " --out " +
                    (dir / "r").string() + cfg),
            2);
  io::atomic_write(dir / "bad.json", R"({"likelihood": {"w": 0}})");
  EXPECT_EQ(run_cli("simulate --out " + (dir / "s2").string() + " --config " +
                    (dir / "bad.json").string()),
            2);
  EXPECT_EQ(run_cli("fit --data " + (dir / "sim").string() + " --out " + (dir / "r").string() +
                    cfg + " --seed 3 --threads 2"),
            0);
  EXPECT_TRUE(fs::exists(dir / "r/chain.ndjson"));

  // Every response equals the reference point mass: relative error has a
  // zero denominator.
  Dataset flat;
  flat.schema = {1, {1, 1}};
  for (int i = 0; i < 2; ++i) {
    const EmpiricalDistribution pm(Matrix::Constant(1, 1, 0.5));
    flat.observations.push_back({{EmpiricalDistribution(random_points(3, 1, i)), pm}, pm});
  }
  io::save_dataset(flat, dir / "flat");
  EXPECT_EQ(run_cli("fit --data " + (dir / "flat").string() + " --out " +
                    (dir / "f").string() + cfg),
            3);
}

}  // namespace
}  // namespace mddr
