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

#include <cmath>
#include <numbers>
#include <vector>

#include "mddr/model.hpp"
#include "oracles.hpp"

namespace mddr {
namespace {

using testing::finite_difference;
using testing::random_points;
using testing::relative_error;

// Two observations, K = 2 (dims 1 and 2), response in d = 2, three atoms.
struct TinyInstance {
  Dataset data;
  ModelParams params;
  LikelihoodConfig cfg;
  PriorConfig prior;
  EvalKey key{17, 3, 1};
};

TinyInstance tiny_instance() {
  TinyInstance t;
  t.data.schema = {2, {1, 2}};
  for (int i = 0; i < 2; ++i) {
    Observation o;
    o.predictors.emplace_back(random_points(3, 1, 100 + i));
    o.predictors.emplace_back(random_points(3, 2, 200 + i));
    o.response = EmpiricalDistribution(random_points(3, 2, 300 + i));
    t.data.observations.push_back(o);
  }
  t.params = ModelParams::zeros(t.data.schema);
  Vector phi(t.params.parameter_count());
  Stream rng(5, {1});
  // Keep every A entry away from the Laplace kink at 0.
  for (Index i = 0; i < phi.size(); ++i) {
    const double u = rng.normal();
    phi[i] = u + (u >= 0 ? 0.2 : -0.2);
  }
  t.params.set_phi(phi);
  t.params.omega = Vector::Constant(1, 0.4);
  t.cfg.w = 10.0;
  t.cfg.projections = 20;
  t.cfg.swb.iterations = 3;
  t.cfg.swb.projections = 10;
  t.cfg.swb.step_size = 0.05;
  return t;
}

TEST(Pushforward, IdentityKeepsAtoms) {
  const EmpiricalDistribution f(random_points(5, 3, 1));
  LinearMap m{Eigen::MatrixXd::Identity(3, 3), Vector::Zero(3)};
  EXPECT_EQ(pushforward(m, f).points(), f.points());
}

TEST(Pushforward, ZeroMapGivesPointMass) {
  const EmpiricalDistribution f(random_points(4, 2, 2));
  LinearMap m{Eigen::MatrixXd::Zero(3, 2), Vector(Eigen::Vector3d(1, -2, 0.5))};
  const auto g = pushforward(m, f);
  ASSERT_EQ(g.size(), 4);
  for (Index a = 0; a < 4; ++a)
    EXPECT_EQ(g.atom(a), Eigen::RowVector3d(1, -2, 0.5));
}

TEST(Pushforward, LiftsLineIntoPlane) {
  Matrix pts(2, 1);
  pts << 0, 1;
  LinearMap m{Eigen::MatrixXd(Eigen::Vector2d(1, 0)), Vector::Zero(2)};
  const auto g = pushforward(m, EmpiricalDistribution(pts));
  Matrix want(2, 2);
  want << 0, 0, 1, 0;
  EXPECT_EQ(g.points(), want);
}

TEST(Pushforward, RejectsDimensionMismatch) {
  const EmpiricalDistribution f(random_points(4, 2, 3));
  EXPECT_THROW(pushforward(LinearMap::zero(2, 3), f), ValidationError);
}

TEST(Simplex, ZeroOmegaIsUniform) {
  const Vector pi = simplex_forward(Vector::Zero(2));
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(pi[k], 1.0 / 3.0, 1e-15);
}

TEST(Simplex, LogThreeGivesThreeQuarters) {
  const Vector pi = simplex_forward(Vector::Constant(1, std::log(3.0)));
  EXPECT_NEAR(pi[0], 0.75, 1e-15);
  EXPECT_NEAR(pi[1], 0.25, 1e-15);
}

TEST(Simplex, RoundTripOnRandomPoints) {
  Stream rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector pi(4);
    for (Index k = 0; k < 4; ++k) pi[k] = rng.exponential();
    pi /= pi.sum();
    worst = std::max(worst, (simplex_forward(simplex_inverse(pi)) - pi).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Simplex, StaysOnSimplexForLargeOmega) {
  Vector omega(3);
  omega << 500, -500, 250;
  const Vector pi = simplex_forward(omega);
  EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
  EXPECT_TRUE((pi.array() >= 0).all());
}

TEST(Simplex, InverseRejectsZeroWeight) {
  EXPECT_THROW(simplex_inverse(Vector(Eigen::Vector3d(0.5, 0.5, 0.0))), ValidationError);
}

TEST(Simplex, ForwardRejectsNonFinite) {
  EXPECT_THROW(simplex_forward(Vector::Constant(1, NAN)), ValidationError);
}

TEST(SimplexChainRule, ConstantGradientIsTangentFree) {
  const Vector pi = simplex_forward(Vector(Eigen::Vector3d(0.3, -1.0, 2.0)));
  const Vector g = simplex_chain_rule(Vector::Constant(4, 2.5), pi);
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SimplexChainRule, HandArithmetic) {
  const Vector g = simplex_chain_rule(Vector(Eigen::Vector2d(1, 0)), Vector(Eigen::Vector2d(0.5, 0.5)));
  ASSERT_EQ(g.size(), 1);
  EXPECT_DOUBLE_EQ(g[0], 0.25);
}

TEST(SimplexChainRule, MatchesFiniteDifferences) {
  const Vector c = random_points(4, 1, 11).col(0);
  const auto scalar = [&](const Vector& omega) {
    const Vector pi = simplex_forward(omega);
    double s = 0.0;
    for (Index k = 0; k < 4; ++k) s += c[k] * pi[k] * pi[k] + std::sin(pi[k]);
    return s;
  };
  const Vector omega(Eigen::Vector3d(0.2, -0.7, 1.1));
  const Vector pi = simplex_forward(omega);
  Vector grad_pi(4);
  for (Index k = 0; k < 4; ++k) grad_pi[k] = 2.0 * c[k] * pi[k] + std::cos(pi[k]);
  const Vector fd = finite_difference(scalar, omega, 1e-6);
  EXPECT_LT(relative_error(simplex_chain_rule(grad_pi, pi), fd), 1e-6);
}

TEST(SimplexChainRule, RejectsLengthMismatch) {
  EXPECT_THROW(simplex_chain_rule(Vector::Zero(2), Vector::Constant(3, 1.0 / 3)), ValidationError);
}

TEST(ModelParams, PhiRoundTrip) {
  const Schema schema{3, {2, 1, 4}};
  ModelParams p = ModelParams::zeros(schema);
  const Vector phi = random_points(schema.parameter_count(), 1, 4).col(0);
  p.set_phi(phi);
  EXPECT_EQ(p.phi(), phi);
  EXPECT_EQ(p.parameter_count(), 3 * 2 + 3 + 3 * 1 + 3 + 3 * 4 + 3);
  // Row-major A then b.
  EXPECT_EQ(p.maps[0].A(0, 1), phi[1]);
  EXPECT_EQ(p.maps[0].A(1, 0), phi[2]);
  EXPECT_EQ(p.maps[0].b[0], phi[6]);
  EXPECT_EQ(schema.block_offset(1), 9);
}

TEST(ModelParams, SetPhiRejectsWrongLength) {
  ModelParams p = ModelParams::zeros({2, {1}});
  EXPECT_THROW(p.set_phi(Vector::Zero(3)), ValidationError);
}

TEST(LogPrior, ModeValueAndZeroGradient) {
  const Schema schema{2, {1, 3}};
  const ModelParams p = ModelParams::zeros(schema);
  PriorConfig prior;
  const auto v = log_prior(p, prior);
  const double n_a = 2 * 1 + 2 * 3, n_b = 4;
  const double expect = n_a * -std::log(2.0) +
                        n_b * -0.5 * std::log(2.0 * std::numbers::pi * 1e3) +
                        0.02 * std::log(0.5) -
                        (2 * std::lgamma(0.01) - std::lgamma(0.02));
  EXPECT_NEAR(v.value, expect, 1e-10);
  EXPECT_FALSE(v.clamped);
  const auto g = log_prior_grad(p, prior);
  EXPECT_EQ(g.grad_phi.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(g.grad_omega[0], 0.0, 1e-15);
}

TEST(LogPrior, UniformWeightsAreStationaryForSymmetricAlpha) {
  const ModelParams p = ModelParams::zeros({1, {1, 1, 1}});
  const auto g = log_prior_grad(p, PriorConfig{});
  ASSERT_EQ(g.grad_omega.size(), 2);
  EXPECT_NEAR(g.grad_omega[0], 0.0, 1e-15);
  EXPECT_NEAR(g.grad_omega[1], 0.0, 1e-15);
}

TEST(LogPrior, GradientsMatchFiniteDifferences) {
  auto t = tiny_instance();
  t.prior.alpha = Vector(Eigen::Vector2d(0.3, 2.0));
  const auto g = log_prior_grad(t.params, t.prior);
  ModelParams probe = t.params;
  const Vector fd_phi = finite_difference(
      [&](const Vector& phi) {
        probe.set_phi(phi);
        return log_prior(probe, t.prior).value;
      },
      t.params.phi(), 1e-6);
  EXPECT_LT(relative_error(g.grad_phi, fd_phi), 1e-6);
  probe = t.params;
  const Vector fd_omega = finite_difference(
      [&](const Vector& omega) {
        probe.omega = omega;
        return log_prior(probe, t.prior).value;
      },
      t.params.omega, 1e-6);
  EXPECT_LT(relative_error(g.grad_omega, fd_omega), 1e-6);
}

TEST(LogPrior, ClampsUnderflowedWeights) {
  ModelParams p = ModelParams::zeros({1, {1, 1}});
  p.omega = Vector::Constant(1, 800.0);
  const auto v = log_prior(p, PriorConfig{});
  EXPECT_TRUE(v.clamped);
  EXPECT_TRUE(std::isfinite(v.value));
}

TEST(LogPrior, RejectsWrongAlphaLength) {
  PriorConfig prior;
  prior.alpha = Vector::Constant(3, 1.0);
  EXPECT_THROW(log_prior(ModelParams::zeros({1, {1, 1}}), prior), ValidationError);
}

TEST(FittedDistribution, SinglePredictorIsPushforward) {
  const auto t = tiny_instance();
  const auto& obs = t.data.observations[0];
  const auto fit = fitted_distribution({t.params.maps[1]}, Vector::Ones(1),
                                       {{obs.predictors[1]}, obs.response}, t.cfg.swb, 3);
  const auto proj = sample_projections(200, 2, 1);
  EXPECT_LT(sw_distance_pp(fit.atoms, pushforward(t.params.maps[1], obs.predictors[1]), proj, 2),
            1e-20);
}

TEST(FittedDistribution, IdenticalMarginalsGiveCommonPushforward) {
  const EmpiricalDistribution f(random_points(30, 2, 8));
  const LinearMap m{Eigen::MatrixXd(Eigen::Matrix2d{{1.0, 0.5}, {-0.3, 2.0}}),
                    Vector(Eigen::Vector2d(1, -1))};
  LikelihoodConfig cfg;
  const auto fit = fitted_distribution({m, m}, Vector(Eigen::Vector2d(0.4, 0.6)), {{f, f}, f},
                                       cfg.swb, 21);
  const auto proj = sample_projections(500, 2, 2);
  EXPECT_LE(sw_distance_pp(fit.atoms, pushforward(m, f), proj, 2), 1e-2);
}

TEST(Likelihood, ZeroWhenResponseIsFitted) {
  auto t = tiny_instance();
  Observation obs = t.data.observations[0];
  obs.response = fitted_distribution(t.params.maps, t.params.weights(), obs, t.cfg.swb,
                                     t.key.solver_seed(0))
                     .atoms;
  EXPECT_EQ(gen_log_lik(t.params, obs, t.cfg, t.key, 0), 0.0);
  EXPECT_LT(gen_log_lik(t.params, t.data.observations[0], t.cfg, t.key, 0), 0.0);
}

TEST(Likelihood, LinearInTemperature) {
  auto t = tiny_instance();
  const double full = gen_log_lik(t.params, t.data.observations[1], t.cfg, t.key, 1);
  t.cfg.w *= 0.5;
  EXPECT_DOUBLE_EQ(gen_log_lik(t.params, t.data.observations[1], t.cfg, t.key, 1), 0.5 * full);
}

TEST(Likelihood, InvariantToResponsePermutation) {
  auto t = tiny_instance();
  Observation obs = t.data.observations[0];
  const double base = gen_log_lik(t.params, obs, t.cfg, t.key, 0);
  Matrix pts = obs.response.points();
  pts.row(0).swap(pts.row(2));
  obs.response = EmpiricalDistribution(pts);
  EXPECT_NEAR(gen_log_lik(t.params, obs, t.cfg, t.key, 0), base, 1e-12);
}

TEST(Posterior, FullGradientMatchesFiniteDifferences) {
  const auto t = tiny_instance();
  const auto ev = evaluate_posterior(t.params, t.data, t.cfg, t.prior, t.key, {true, true});
  ModelParams probe = t.params;
  const auto value = [&](const ModelParams& p) {
    return evaluate_posterior(p, t.data, t.cfg, t.prior, t.key).log_post;
  };
  const Vector fd_phi = finite_difference(
      [&](const Vector& phi) {
        probe.set_phi(phi);
        return value(probe);
      },
      t.params.phi(), 1e-6);
  EXPECT_LT(relative_error(ev.grad_phi, fd_phi), 1e-3);
  probe = t.params;
  const Vector fd_omega = finite_difference(
      [&](const Vector& omega) {
        probe.omega = omega;
        return value(probe);
      },
      t.params.omega, 1e-6);
  EXPECT_LT(relative_error(ev.grad_omega, fd_omega), 1e-3);
  EXPECT_NEAR(ev.log_post, value(t.params), 1e-12);
}

TEST(Posterior, ThreePredictorOmegaGradientMatchesFiniteDifferences) {
  auto t = tiny_instance();
  t.data.schema.predictor_dims.push_back(1);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    t.data.observations[i].predictors.emplace_back(random_points(3, 1, 400 + i));
  t.params.maps.push_back(LinearMap{Eigen::MatrixXd(Eigen::Vector2d(0.7, -0.4)),
                                    Vector(Eigen::Vector2d(0.3, 0.3))});
  t.params.omega = Vector(Eigen::Vector2d(0.4, -0.3));
  const auto ev = evaluate_posterior(t.params, t.data, t.cfg, t.prior, t.key, {false, true});
  ModelParams probe = t.params;
  const Vector fd = finite_difference(
      [&](const Vector& omega) {
        probe.omega = omega;
        return evaluate_posterior(probe, t.data, t.cfg, t.prior, t.key).log_post;
      },
      t.params.omega, 1e-6);
  EXPECT_LT(relative_error(ev.grad_omega, fd), 1e-3);
}

TEST(Posterior, ThreadCountDoesNotChangeResult) {
  const auto t = tiny_instance();
  const auto a = evaluate_posterior(t.params, t.data, t.cfg, t.prior, t.key, {true, true}, 1);
  const auto b = evaluate_posterior(t.params, t.data, t.cfg, t.prior, t.key, {true, true}, 4);
  EXPECT_EQ(a.log_post, b.log_post);
  EXPECT_EQ(a.grad_phi, b.grad_phi);
  EXPECT_EQ(a.grad_omega, b.grad_omega);
}

TEST(Posterior, SinglePredictorMatchesRestrictedModel) {
  const auto t = tiny_instance();
  const Dataset one = t.data.restrict_to(0);
  ModelParams p;
  p.maps = {t.params.maps[0]};
  p.omega = Vector(0);
  const auto ev = evaluate_posterior(p, one, t.cfg, t.prior, t.key, {true, true});
  EXPECT_EQ(ev.grad_omega.size(), 0);
  double lik = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    const auto& o = one.observations[i];
    const auto proj = sample_projections(t.cfg.projections, 2, t.key.likelihood_seed(i));
    lik -= t.cfg.w * sw_distance_pp(pushforward(p.maps[0], o.predictors[0]), o.response, proj, 2);
  }
  EXPECT_NEAR(ev.log_lik, lik, 1e-9 * std::abs(lik));
}

TEST(RelativeError, ZeroForPerfectFit) {
  auto t = tiny_instance();
  for (std::size_t i = 0; i < t.data.size(); ++i)
    t.data.observations[i].response =
        fitted_distribution(t.params.maps, t.params.weights(), t.data.observations[i], t.cfg.swb,
                            t.key.solver_seed(i))
            .atoms;
  const auto b = pooled_response_intercepts(t.data);
  EXPECT_EQ(relative_error(t.params, t.data, t.cfg, 50, b, t.key), 0.0);
}

TEST(RelativeError, OneForInterceptModel) {
  auto t = tiny_instance();
  const auto b = pooled_response_intercepts(t.data);
  ModelParams ref = ModelParams::zeros(t.data.schema);
  for (std::size_t k = 0; k < ref.maps.size(); ++k) ref.maps[k].b = b[k];
  EXPECT_NEAR(relative_error(ref, t.data, t.cfg, 50, b, t.key), 1.0, 1e-12);
}

TEST(RelativeError, PooledInterceptIsResponseMean) {
  const auto t = tiny_instance();
  const auto b = pooled_response_intercepts(t.data);
  ASSERT_EQ(b.size(), 2u);
  const Vector mean = (t.data.observations[0].response.points().colwise().sum() +
                       t.data.observations[1].response.points().colwise().sum())
                          .transpose() /
                      6.0;
  EXPECT_LT((b[0] - mean).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(b[0], b[1]);
}

TEST(RelativeError, DegenerateReferenceThrows) {
  auto t = tiny_instance();
  const Vector c(Eigen::Vector2d(0.5, 0.5));
  for (auto& o : t.data.observations) o.response = EmpiricalDistribution(Matrix(c.transpose()));
  EXPECT_THROW(relative_error(t.params, t.data, t.cfg, 20, {c, c}, t.key), NumericalError);
}

TEST(RelativeError, RejectsWrongInterceptDimension) {
  const auto t = tiny_instance();
  EXPECT_THROW(relative_error(t.params, t.data, t.cfg, 20, {Vector::Zero(3), Vector::Zero(3)},
                              t.key),
               ValidationError);
}

TEST(Dataset, ValidateCatchesWrongPredictorDimension) {
  auto t = tiny_instance();
  t.data.observations[1].predictors[1] = EmpiricalDistribution(random_points(3, 3, 1));
  EXPECT_THROW(t.data.validate(), ValidationError);
}

TEST(LikelihoodConfig, ValidatesFieldPaths) {
  LikelihoodConfig cfg;
  cfg.w = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("likelihood.w"), std::string::npos);
  }
}

}  // namespace
}  // namespace mddr
