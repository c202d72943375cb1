// Copyright 2026 The Authors.
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

#include <cmath>

#include <gtest/gtest.h>

#include "pcore/dataset.hpp"
#include "pcore/posterior.hpp"
#include "pcore/selection.hpp"
#include "pcore/trainer.hpp"

namespace pcore {
namespace {

ModelState RandomState(const ModelSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  return ModelState(spec, sample_gaussian(rng, spec.param_count(), 0.5));
}

PosteriorSpec Spherical(double sigma, int m, ParamGroup g) {
  PosteriorSpec p;
  p.sigma = sigma;
  p.num_samples = m;
  p.target_group = g;
  return p;
}

TEST(DrawPerturbedTest, ZeroSigmaCopies) {
  const ModelState st = RandomState(ModelSpec::mlp(3, 4, 2), 1);
  RngStream rng(0);
  const auto out = draw_perturbed(Spherical(0.0, 3, ParamGroup::kAll), st, rng);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& s : out) EXPECT_EQ(s.params, st.params);
}

TEST(DrawPerturbedTest, MaskingIsExact) {
  const ModelState st = RandomState(ModelSpec::mlp(3, 4, 2), 1);
  RngStream rng(0);
  const auto out = draw_perturbed(Spherical(0.3, 5, ParamGroup::kNormalization), st, rng);
  const GroupRange r = st.range(ParamGroup::kNormalization);
  for (const auto& s : out) {
    const Vector delta = s.params - st.params;
    EXPECT_EQ(delta.head(r.offset).norm(), 0.0);
    EXPECT_EQ(delta.tail(delta.size() - r.offset - r.size).norm(), 0.0);
    EXPECT_GT(delta.segment(r.offset, r.size).norm(), 0.0);
  }
}

TEST(DrawPerturbedTest, PerCoordinateVariance) {
  const ModelState st(ModelSpec::softmax(2, 2));
  RngStream rng(4);
  const int m = 100000;
  const auto out = draw_perturbed(Spherical(0.1, m, ParamGroup::kAll), st, rng);
  for (Index j = 0; j < st.params.size(); ++j) {
    double s = 0.0, ss = 0.0;
    for (const auto& o : out) {
      s += o.params[j];
      ss += o.params[j] * o.params[j];
    }
    const double mean = s / m;
    const double var = (ss - m * mean * mean) / (m - 1);
    EXPECT_NEAR(var, 0.01, 0.0005);
  }
}

TEST(DrawPerturbedTest, DeterministicAndRejectsEmptyGroup) {
  const ModelState st = RandomState(ModelSpec::mlp(3, 4, 2), 1);
  RngStream a(5), b(5);
  const auto p = Spherical(0.2, 2, ParamGroup::kOutput);
  EXPECT_EQ(draw_perturbed(p, st, a)[1].params, draw_perturbed(p, st, b)[1].params);
  const ModelState sm(ModelSpec::softmax(2, 2));
  RngStream c(0);
  EXPECT_THROW(draw_perturbed(Spherical(0.1, 1, ParamGroup::kNormalization), sm, c), Error);
}

TEST(HessianInverseTest, IdentityMatchesSpherical) {
  const double sigma = 0.2;
  RngStream rng(8);
  const int m = 100000;
  const auto deltas = gaussian_from_precision(Matrix::Identity(3, 3), 0.0, sigma * sigma, m, rng);
  Matrix cov = Matrix::Zero(3, 3);
  for (const auto& d : deltas) cov += d * d.transpose();
  cov /= m;
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(cov(i, i), sigma * sigma, 0.05 * sigma * sigma);
    for (Index j = 0; j < i; ++j) EXPECT_LT(std::abs(cov(i, j)), 0.05 * sigma * sigma);
  }
}

TEST(HessianInverseTest, ZeroScaleGivesZero) {
  RngStream rng(0);
  for (const auto& d : gaussian_from_precision(Matrix::Identity(4, 4), 0.1, 0.0, 3, rng)) {
    EXPECT_EQ(d, Vector::Zero(4));
  }
}

TEST(HessianInverseTest, VarianceOrderingFollowsEigenvalues) {
  Vector diag(4);
  diag << 1.0, 10.0, 4.0, 4.0;
  const Matrix h = diag.asDiagonal();
  RngStream rng(2);
  const auto deltas = gaussian_from_precision(h, 1e-3, 1.0, 20000, rng);
  double v_small = 0.0, v_large = 0.0;
  for (const auto& d : deltas) {
    v_small += d[0] * d[0];
    v_large += d[1] * d[1];
  }
  EXPECT_GT(v_small, v_large);
}

TEST(HessianInverseTest, SamplerRejectsNonPositiveRidge) {
  const Dataset ds = gen_blobs(2, 10, 2, 1.0, 0);
  const ModelState st(ModelSpec::softmax(2, 2));
  RngStream rng(0);
  const auto all = ds.all_indices();
  EXPECT_THROW(hessian_inverse_sampler(st, ds, all, 0.0, 1.0, 2, rng), Error);
  const auto out = hessian_inverse_sampler(st, ds, all, 1e-2, 0.01, 2, rng);
  EXPECT_EQ(out.size(), 2u);
  EXPECT_NE(out[0].params, st.params);
}

TEST(HessianInverseTest, RequiresAllGroup) {
  PosteriorSpec p;
  p.kind = PosteriorKind::kHessianInverse;
  p.target_group = ParamGroup::kOutput;
  EXPECT_THROW(validate(p, ModelSpec::softmax(2, 2)), Error);
  p.target_group = ParamGroup::kAll;
  EXPECT_NO_THROW(validate(p, ModelSpec::softmax(2, 2)));
}

TEST(HessianInverseTest, PosteriorSampleUsesDefaultRidge) {
  const Dataset ds = gen_blobs(2, 10, 2, 1.0, 0);
  const ModelState st(ModelSpec::softmax(2, 2));
  PosteriorSpec p;
  p.kind = PosteriorKind::kHessianInverse;
  p.target_group = ParamGroup::kAll;
  p.sigma = 0.01;
  p.num_samples = 3;
  RngStream rng(1);
  const auto pool = ds.all_indices();
  const auto states = Posterior{p, {}}.sample(st, ds, pool, rng);
  ASSERT_EQ(states.size(), 3u);
  for (const auto& s : states) EXPECT_TRUE(s.params.allFinite());
}

TEST(TheorySigmaTest, ClosedForm) {
  const double s = theory_sigma(4, 16, 8);
  EXPECT_NEAR(s * s * 8, 1.0 / (4 * 4), 1e-15);
}

class EnsembleTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const Split sp = split(gen_blobs(2, 250, 2, 0.1, 3), 0.8, 1);
    train_ = sp.train;
    test_ = sp.test;
    cfg_.model = ModelSpec::softmax(2, 2);
    cfg_.method = Method::kFull;
    cfg_.schedule.epochs = 10;
    cfg_.schedule.warmup_epochs = 0;
    cfg_.schedule.milestones = {};
  }
  Dataset train_, test_;
  TrainConfig cfg_;
};

TEST_F(EnsembleTest, DuplicateSeedsRejected) {
  EXPECT_THROW(ensemble_posterior(cfg_, train_, test_, {3, 3}), Error);
  EXPECT_THROW(ensemble_posterior(cfg_, train_, test_, {3}), Error);
}

TEST_F(EnsembleTest, MembersFitSeparableBlobs) {
  cfg_.model = ModelSpec::mlp(2, 8, 2);
  const auto members = ensemble_posterior(cfg_, train_, test_, {1, 2});
  ASSERT_EQ(members.size(), 2u);
  EXPECT_NE(members[0].params, members[1].params);
  for (const auto& m : members) EXPECT_GE(evaluate(m, train_).accuracy, 0.99);
}

TEST_F(EnsembleTest, SingleMemberEqualsUnsmoothedDistances) {
  RngStream init(0);
  const ModelState st = init_state(ModelSpec::mlp(2, 4, 2), init);
  PosteriorSpec p;
  p.kind = PosteriorKind::kEnsemble;
  p.ensemble_seeds = {7};
  const Posterior ens{p, {st}};
  const std::vector<std::size_t> pool{0, 3, 5, 8, 13};
  RngStream r1(0), r2(0);
  const DistanceMatrix a = smoothed_distances(st, train_, pool, ens, ParamGroup::kOutput, r1);
  const DistanceMatrix b = smoothed_distances(st, train_, pool, Posterior{PosteriorSpec::point(), {}},
                                              ParamGroup::kOutput, r2);
  EXPECT_EQ(a.values, b.values);
}

}  // namespace
}  // namespace pcore
