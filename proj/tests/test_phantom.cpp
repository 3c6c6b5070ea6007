#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "resectkit/phantom.hpp"

using namespace rk;

namespace {

std::size_t overlap(const BinaryMask& a, const BinaryMask& b) {
  return oracle::intersection_size(oracle::voxel_set(a), oracle::voxel_set(b));
}

double ml(const BinaryMask& m) {
  const auto& s = m.geometry().spacing;
  return static_cast<double>(m.count()) * s.x * s.y * s.z / 1000.0;
}

double sphere_ml(double r) { return 4.0 / 3.0 * std::numbers::pi * r * r * r / 1000.0; }

PhantomSpec small_spec(double spacing) {
  PhantomSpec s;
  const auto d = static_cast<std::size_t>(std::lround(44.0 / spacing)) + 1;
  s.dims = {d, d, d};
  s.spacing = {spacing, spacing, spacing};
  s.brain_semi_axes_mm = {20.0, 19.0, 18.0};
  s.tumor_center_mm = {23.3, 21.3, 22.4};
  s.tumor_radius_mm = 8.0;
  s.rim_thickness_mm = 2.5;
  s.edema_thickness_mm = 3.0;
  s.cavity_radius_mm = 5.0;
  return s;
}

}  // namespace

TEST(Preop, TumorCoreVolumeNearAnalytic) {
  const auto p = generate_preop(PhantomSpec{});
  const double want = 4.18879;
  EXPECT_NEAR(p.analytic_ml.at(StructureKind::TumorCore), sphere_ml(10.0), 1e-12);
  EXPECT_NEAR(ml(p.truth.get(StructureKind::TumorCore)), want, 0.02 * want);
  EXPECT_NEAR(ml(p.truth.get(StructureKind::NETC)), sphere_ml(7.0), 0.03 * sphere_ml(7.0));
  EXPECT_NEAR(ml(p.truth.get(StructureKind::SNFH)), sphere_ml(15.0) - sphere_ml(10.0),
              0.03 * (sphere_ml(15.0) - sphere_ml(10.0)));
  ASSERT_EQ(p.channels.size(), 4u);
}

TEST(Preop, SameSeedBitIdentical) {
  auto s = small_spec(1.0);
  s.noise_amplitude = 0.1;
  s.seed = 42;
  const auto a = generate_preop(s);
  const auto b = generate_preop(s);
  for (std::size_t c = 0; c < 4; ++c) {
    ASSERT_EQ(a.channels[c].data().size(), b.channels[c].data().size());
    EXPECT_EQ(std::memcmp(a.channels[c].data().data(), b.channels[c].data().data(),
                          a.channels[c].data().size() * sizeof(double)),
              0);
  }
  EXPECT_EQ(a.truth.get(StructureKind::TumorCore), b.truth.get(StructureKind::TumorCore));
  s.seed = 43;
  const auto c = generate_preop(s);
  EXPECT_NE(a.channels[0].data(), c.channels[0].data());
}

TEST(Preop, Nesting) {
  const auto p = generate_preop(small_spec(1.0));
  const auto& brain = p.truth.get(StructureKind::Brain);
  const auto& tc = p.truth.get(StructureKind::TumorCore);
  const auto& netc = p.truth.get(StructureKind::NETC);
  EXPECT_TRUE(mask_subset(netc, tc));
  EXPECT_TRUE(mask_subset(tc, brain));
  EXPECT_TRUE(mask_subset(p.truth.get(StructureKind::SNFH), brain));
  EXPECT_EQ(overlap(tc, p.truth.get(StructureKind::SNFH)), 0u);
  EXPECT_GT(netc.count(), 0u);
}

TEST(Preop, NoiseIsBounded) {
  auto s = small_spec(1.0);
  const auto clean = generate_preop(s);
  s.noise_amplitude = 0.05;
  const auto noisy = generate_preop(s);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < clean.channels[0].size(); ++i)
    max_diff = std::max(max_diff, std::abs(clean.channels[1][i] - noisy.channels[1][i]));
  EXPECT_GT(max_diff, 0.0);
  EXPECT_LE(max_diff, 0.05);
}

TEST(Postop, ZeroFractionEmptyResidual) {
  const auto p = generate_postop(small_spec(1.0));
  EXPECT_EQ(p.truth.get(StructureKind::ResidualTumor).count(), 0u);
  EXPECT_DOUBLE_EQ(p.analytic_ml.at(StructureKind::ResidualTumor), 0.0);
  EXPECT_GT(p.truth.get(StructureKind::ResectionCavity).count(), 0u);
}

TEST(Postop, QuarterCrescentOfTwoMlShell) {
  PhantomSpec s;
  // shell volume 4/3 pi (R^3 - Rc^3) = 2.0 ml
  s.cavity_radius_mm = std::cbrt(1000.0 - 2000.0 / (4.0 / 3.0 * std::numbers::pi));
  s.residual_fraction = 0.25;
  const auto p = generate_postop(s);
  EXPECT_NEAR(sphere_ml(10.0) - sphere_ml(s.cavity_radius_mm), 2.0, 1e-12);
  EXPECT_NEAR(p.analytic_ml.at(StructureKind::ResidualTumor), 0.5, 1e-12);
  EXPECT_NEAR(ml(p.truth.get(StructureKind::ResidualTumor)), 0.5, 0.05 * 0.5);
}

TEST(Postop, CavityResidualDisjoint) {
  auto s = small_spec(1.0);
  for (double f : {0.1, 0.5, 1.0}) {
    s.residual_fraction = f;
    const auto p = generate_postop(s);
    EXPECT_EQ(overlap(p.truth.get(StructureKind::ResectionCavity), p.truth.get(StructureKind::ResidualTumor)),
              0u);
    EXPECT_EQ(overlap(p.truth.get(StructureKind::SNFH), p.truth.get(StructureKind::ResidualTumor)), 0u);
  }
}

TEST(Postop, ResidualFractionFor) {
  PhantomSpec s;
  s.residual_fraction = residual_fraction_for(s, 0.5);
  const double shell = sphere_ml(s.tumor_radius_mm) - sphere_ml(s.cavity_radius_mm);
  EXPECT_NEAR(s.residual_fraction * shell, 0.5, 1e-12);
  const auto p = generate_postop(s);
  EXPECT_NEAR(p.analytic_ml.at(StructureKind::ResidualTumor), 0.5, 1e-12);
}

// Lattice counting error oscillates with the sphere's sub-voxel position, so
// the error at each spacing is averaged over the same set of random centres.
TEST(Voxelization, ErrorShrinksWithSpacing) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::vector<std::array<double, 3>> centres(16), axes(16);
  for (auto& c : centres) c = {22.0 + jitter(rng), 22.0 + jitter(rng), 22.0 + jitter(rng)};
  for (auto& a : axes) a = {19.0 + jitter(rng), 18.0 + jitter(rng), 17.0 + jitter(rng)};
  double prev_tc = 1e9, prev_brain = 1e9;
  for (double sp : {2.0, 1.0, 0.5}) {
    double e_tc = 0.0, e_brain = 0.0;
    for (std::size_t k = 0; k < centres.size(); ++k) {
      auto s = small_spec(sp);
      s.tumor_center_mm = centres[k];
      s.brain_semi_axes_mm = axes[k];
      const auto& a = axes[k];
      const auto p = generate_preop(s);
      e_tc += std::abs(ml(p.truth.get(StructureKind::TumorCore)) - sphere_ml(8.0));
      e_brain +=
          std::abs(ml(p.truth.get(StructureKind::Brain)) - 4.0 / 3.0 * std::numbers::pi * a[0] * a[1] * a[2] / 1000.0);
    }
    EXPECT_LT(e_tc, prev_tc) << sp;
    EXPECT_LT(e_brain, prev_brain) << sp;
    prev_tc = e_tc;
    prev_brain = e_brain;
  }
}

TEST(Spec, Validation) {
  PhantomSpec s;
  EXPECT_NO_THROW(s.validate());
  auto bad = s;
  bad.cavity_radius_mm = 10.0;
  EXPECT_THROW(generate_postop(bad), std::invalid_argument);
  bad = s;
  bad.tumor_center_mm = {110.0, 63.5, 63.5};
  EXPECT_THROW(generate_preop(bad), std::invalid_argument);
  bad = s;
  bad.tumor_radius_mm = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = s;
  bad.residual_fraction = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(CounterUniform, DeterministicAndInRange) {
  double sum = 0.0;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const double u = counter_uniform(3, 1, k);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    EXPECT_EQ(u, counter_uniform(3, 1, k));
    sum += u;
  }
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.02);
  EXPECT_NE(counter_uniform(3, 1, 0), counter_uniform(3, 2, 0));
  EXPECT_NE(counter_uniform(3, 1, 0), counter_uniform(4, 1, 0));
}

TEST(PhantomProbability, SharpMapThresholdsToTruth) {
  const auto s = small_spec(1.0);
  ProbabilityPerturbation pert;
  pert.softness_mm = 1e-4;
  const auto prob = phantom_probability(s, StructureKind::TumorCore, pert);
  const auto truth = generate_preop(s).truth.get(StructureKind::TumorCore);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) agree += ((prob[i] >= 0.5) == (truth[i] != 0));
  EXPECT_EQ(agree, prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    ASSERT_GE(prob[i], 0.0);
    ASSERT_LE(prob[i], 1.0);
  }
  EXPECT_THROW(phantom_probability(s, StructureKind::SNFH, pert), std::invalid_argument);
}

TEST(PhantomProbability, ScaledRadiusShrinksVolume) {
  const auto s = small_spec(1.0);
  ProbabilityPerturbation a, b;
  b.radius_scale = 0.8;
  std::size_t na = 0, nb = 0;
  const auto pa = phantom_probability(s, StructureKind::TumorCore, a);
  const auto pb = phantom_probability(s, StructureKind::TumorCore, b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    na += pa[i] >= 0.5;
    nb += pb[i] >= 0.5;
  }
  EXPECT_LT(nb, na);
}

TEST(CohortMember, ReproducibleAndValid) {
  for (std::size_t i = 0; i < 50; ++i) {
    const auto [s, p] = cohort_member(9, i, Dims{64, 64, 64});
    EXPECT_NO_THROW(s.validate());
    const auto [s2, p2] = cohort_member(9, i, Dims{64, 64, 64});
    EXPECT_EQ(s.tumor_center_mm, s2.tumor_center_mm);
    EXPECT_EQ(p.radius_scale, p2.radius_scale);
  }
  EXPECT_NE(cohort_member(9, 0, Dims{64, 64, 64}).first.tumor_radius_mm,
            cohort_member(9, 1, Dims{64, 64, 64}).first.tumor_radius_mm);
}

TEST(AnalyticJson, KeysAreStructureNames) {
  const auto j = analytic_json(generate_preop(small_spec(2.0)).analytic_ml);
  EXPECT_TRUE(j.contains(std::string(to_string(StructureKind::TumorCore))));
  EXPECT_NEAR(j[std::string(to_string(StructureKind::TumorCore))].get<double>(), sphere_ml(8.0), 1e-12);
}
