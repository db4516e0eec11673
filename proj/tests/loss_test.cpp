#include "disenhcn/loss.hpp"

#include <gtest/gtest.h>

#include "disenhcn/verify.hpp"
#include "test_util.hpp"

using namespace disenhcn;
using testutil::random_dense;

namespace {

// Independent straight-line implementation of the guarded distance
// correlation: explicit pair loops, no tape machinery. Oracle for the
// differentiable version.
double dcor_reference(const DenseMatrix& x, const DenseMatrix& y) {
  const std::int64_t n = x.n_rows;
  auto dist_matrix = [n](const DenseMatrix& m) {
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        if (i == j) continue;  // exact zero diagonal
        double sq = 0.0;
        for (std::int64_t k = 0; k < m.n_cols; ++k) {
          const double diff = m.at(i, k) - m.at(j, k);
          sq += diff * diff;
        }
        d[i][j] = std::sqrt(sq + 1e-10);
      }
    std::vector<double> row(n, 0.0), col(n, 0.0);
    double grand = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        row[i] += d[i][j] / n;
        col[j] += d[i][j] / n;
        grand += d[i][j] / (static_cast<double>(n) * n);
      }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) d[i][j] = d[i][j] - row[i] - col[j] + grand;
    return d;
  };
  auto a = dist_matrix(x);
  auto b = dist_matrix(y);
  double m_xy = 0.0, m_xx = 0.0, m_yy = 0.0;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      m_xy += a[i][j] * b[i][j];
      m_xx += a[i][j] * a[i][j];
      m_yy += b[i][j] * b[i][j];
    }
  const double n2 = static_cast<double>(n) * n;
  m_xy /= n2;
  m_xx /= n2;
  m_yy /= n2;
  if (m_xx <= 1e-10 || m_yy <= 1e-10) return 0.0;
  return std::sqrt(std::max(m_xy, 0.0) + 1e-10) / std::sqrt(std::sqrt(m_xx * m_yy + 1e-10) + 1e-10);
}

double dcor(const DenseMatrix& x, const DenseMatrix& y) {
  ad::Tape tape;
  return distance_correlation(tape, tape.constant(x), tape.constant(y))->value.at(0, 0);
}

// Gram-Schmidt orthogonal matrix for the rotation-invariance property.
DenseMatrix random_orthogonal(Rng& rng, std::int64_t k) {
  DenseMatrix q = random_dense(rng, k, k);
  for (std::int64_t c = 0; c < k; ++c) {
    for (std::int64_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::int64_t r = 0; r < k; ++r) dot += q.at(r, c) * q.at(r, prev);
      for (std::int64_t r = 0; r < k; ++r) q.at(r, c) -= dot * q.at(r, prev);
    }
    double norm = 0.0;
    for (std::int64_t r = 0; r < k; ++r) norm += q.at(r, c) * q.at(r, c);
    norm = std::sqrt(norm);
    for (std::int64_t r = 0; r < k; ++r) q.at(r, c) /= norm;
  }
  return q;
}

}  // namespace

TEST(BprLoss, ReferenceValues) {
  ad::Tape tape;
  DenseMatrix pos(3, 1), neg(3, 1);
  pos.at(0, 0) = 1.0;
  neg.at(0, 0) = 1.0;                  // margin 0 -> ln 2
  pos.at(1, 0) = std::log(3.0);
  neg.at(1, 0) = 0.0;                  // margin ln 3 -> ln(4/3)
  pos.at(2, 0) = 50.0;
  neg.at(2, 0) = 0.0;                  // margin 50 -> ~0
  auto each = tape.sigmoid_logloss(tape.sub(tape.constant(pos), tape.constant(neg)));
  EXPECT_NEAR(each->value.at(0, 0), 0.693147, 1e-6);
  EXPECT_NEAR(each->value.at(1, 0), 0.287682, 1e-6);
  EXPECT_LE(each->value.at(2, 0), 1e-20);
  EXPECT_TRUE(std::isfinite(each->value.at(2, 0)));

  auto mean = bpr_loss(tape, tape.constant(pos), tape.constant(neg));
  EXPECT_NEAR(mean->value.at(0, 0), (0.6931471805599453 + 0.28768207245178085 + 0.0) / 3.0, 1e-12);
}

TEST(BprLoss, StrictlyDecreasingInMargin) {
  Rng rng(1);
  DenseMatrix pos = random_dense(rng, 5, 1), neg = random_dense(rng, 5, 1);
  auto value = [&](double bump, int at) {
    ad::Tape tape;
    DenseMatrix p = pos;
    p.at(at, 0) += bump;
    return bpr_loss(tape, tape.constant(p), tape.constant(neg))->value.at(0, 0);
  };
  for (int at = 0; at < 5; ++at) EXPECT_LT(value(0.3, at), value(0.0, at));
}

TEST(BprLoss, EmptyBatchIsError) {
  ad::Tape tape;
  EXPECT_THROW(bpr_loss(tape, tape.constant(DenseMatrix(0, 1)), tape.constant(DenseMatrix(0, 1))),
               std::invalid_argument);
}

TEST(L2Term, ZeroParamsAndSingleRow) {
  ModelConfig cfg;
  cfg.d = 6;
  Vocab vocab;
  vocab.intern(Vocab::kUser, "u0");
  vocab.intern(Vocab::kLocation, "l0");
  vocab.intern(Vocab::kTime, "t0");
  vocab.intern(Vocab::kActivity, "a0");
  Rng rng(2);
  auto params = init_params(cfg, vocab, rng);
  for (auto ref : params.named_tables()) ref.table->fill(0.0);

  PairwiseBatch batch;
  batch.users = {0};
  batch.locations = {0};
  batch.times = {0};
  batch.positives = {0};
  batch.negatives = {0};
  batch.finalize_unique_users();

  {
    ad::Tape tape;
    auto pn = make_parameter_nodes(tape, params, false);
    EXPECT_EQ(l2_term(tape, pn, batch, L2Scope::Touched)->value.at(0, 0), 0.0);
  }
  params.p0.at(0, 0) = 3.0;
  params.p0.at(0, 1) = 4.0;
  {
    ad::Tape tape;
    auto pn = make_parameter_nodes(tape, params, false);
    EXPECT_DOUBLE_EQ(l2_term(tape, pn, batch, L2Scope::Touched)->value.at(0, 0), 25.0);
  }
}

TEST(L2Term, FullCoverageMatchesDirectSum) {
  ModelConfig cfg;
  cfg.d = 6;
  Vocab vocab;
  for (int i = 0; i < 3; ++i) vocab.intern(Vocab::kUser, "u" + std::to_string(i));
  for (int i = 0; i < 2; ++i) vocab.intern(Vocab::kLocation, "l" + std::to_string(i));
  for (int i = 0; i < 2; ++i) vocab.intern(Vocab::kTime, "t" + std::to_string(i));
  for (int i = 0; i < 2; ++i) vocab.intern(Vocab::kActivity, "a" + std::to_string(i));
  Rng rng(3);
  auto params = init_params(cfg, vocab, rng);

  // batch touches every row of every table
  PairwiseBatch batch;
  for (std::int32_t u = 0; u < 3; ++u)
    for (std::int32_t l = 0; l < 2; ++l)
      for (std::int32_t t = 0; t < 2; ++t) {
        batch.users.push_back(u);
        batch.locations.push_back(l);
        batch.times.push_back(t);
        batch.positives.push_back(0);
        batch.negatives.push_back(1);
      }
  batch.finalize_unique_users();

  double direct = 0.0;
  for (auto ref : params.named_tables())
    for (double v : ref.table->data) direct += v * v;
  direct /= static_cast<double>(batch.size());

  ad::Tape tape;
  auto pn = make_parameter_nodes(tape, params, false);
  EXPECT_NEAR(l2_term(tape, pn, batch, L2Scope::Touched)->value.at(0, 0), direct, 1e-12);
  EXPECT_NEAR(l2_term(tape, pn, batch, L2Scope::Full)->value.at(0, 0), direct, 1e-12);
}

TEST(DistanceCorrelation, SelfIsOne) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_dense(rng, 10 + trial, 4);
    const double v = dcor(x, x);
    EXPECT_GE(v, 1.0 - 1e-6);
    EXPECT_LE(v, 1.0);
  }
}

TEST(DistanceCorrelation, ConstantArgumentIsZero) {
  Rng rng(5);
  auto x = random_dense(rng, 8, 3);
  DenseMatrix constant(8, 3, 2.5);
  EXPECT_EQ(dcor(x, constant), 0.0);
  EXPECT_EQ(dcor(constant, x), 0.0);
}

TEST(DistanceCorrelation, InvariancesWithinTolerance) {
  Rng rng(6);
  auto x = random_dense(rng, 12, 3);
  auto y = random_dense(rng, 12, 3);
  const double base = dcor(x, y);

  auto shifted = x;
  for (std::int64_t i = 0; i < shifted.n_rows; ++i)
    for (std::int64_t j = 0; j < shifted.n_cols; ++j) shifted.at(i, j) += 7.25;
  EXPECT_NEAR(dcor(shifted, y), base, 1e-6);

  auto rotated = matmul(x, random_orthogonal(rng, 3));
  EXPECT_NEAR(dcor(rotated, y), base, 1e-6);

  auto scaled = x;
  for (auto& v : scaled.data) v *= 3.7;
  EXPECT_NEAR(dcor(scaled, y), base, 1e-6);

  EXPECT_NEAR(dcor(y, x), base, 1e-12);  // symmetry
}

TEST(DistanceCorrelation, AgreesWithReferenceImplementation) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 4 + static_cast<std::int64_t>(rng.uniform_below(20));
    const auto k = 1 + static_cast<std::int64_t>(rng.uniform_below(5));
    auto x = random_dense(rng, n, k);
    auto y = random_dense(rng, n, k);
    EXPECT_NEAR(dcor(x, y), dcor_reference(x, y), 1e-10);
  }
  // pinned small case
  DenseMatrix x(3, 1), y(3, 1);
  x.at(1, 0) = 1.0;
  x.at(2, 0) = 2.0;
  y.at(1, 0) = 2.0;
  y.at(2, 0) = 1.0;
  EXPECT_NEAR(dcor(x, y), dcor_reference(x, y), 1e-10);
}

TEST(DistanceCorrelation, ErrorsOnBadInput) {
  ad::Tape tape;
  auto one_row = tape.constant(DenseMatrix(1, 3));
  EXPECT_THROW(distance_correlation(tape, one_row, one_row), std::invalid_argument);
}

TEST(IndependenceLoss, IdenticalChunksSaturate) {
  Rng rng(8);
  auto x = random_dense(rng, 9, 4);
  ad::Tape tape;
  auto node = independence_loss(tape, tape.constant(x), tape.constant(x), tape.constant(x));
  EXPECT_NEAR(node->value.at(0, 0), 3.0, 3e-6);
}

TEST(IndependenceLoss, RangeAndTranslationInvariance) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_dense(rng, 8, 3);
    auto b = random_dense(rng, 8, 3);
    auto c = random_dense(rng, 8, 3);
    ad::Tape tape;
    const double v =
        independence_loss(tape, tape.constant(a), tape.constant(b), tape.constant(c))->value.at(0, 0);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 3.0);

    auto a_shift = a;
    for (auto& t : a_shift.data) t += 11.0;
    ad::Tape tape2;
    const double v2 =
        independence_loss(tape2, tape2.constant(a_shift), tape2.constant(b), tape2.constant(c))
            ->value.at(0, 0);
    EXPECT_NEAR(v, v2, 1e-8);
  }
}

TEST(IndependenceLoss, IndependentGaussiansScoreLow) {
  // seeded smoke bound: three independent chunks should show little dependence
  Rng rng(20240601);
  auto gaussian = [&rng](std::int64_t n, std::int64_t k) {
    DenseMatrix m(n, k);
    for (auto& v : m.data) {
      // Box-Muller from two uniforms
      const double u1 = std::max(rng.uniform01(), 1e-12);
      const double u2 = rng.uniform01();
      v = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    return m;
  };
  auto a = gaussian(256, 2), b = gaussian(256, 2), c = gaussian(256, 2);
  ad::Tape tape;
  const double v =
      independence_loss(tape, tape.constant(a), tape.constant(b), tape.constant(c))->value.at(0, 0);
  EXPECT_LT(v, 0.6);
}

TEST(TotalLoss, CompositionModes) {
  auto bundle = gradcheck_bundle();
  ModelConfig cfg;
  cfg.d = 6;
  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, cfg.enabled_types);
  GraphContext ctx(adj);
  Rng rng(10);
  auto params = init_params(cfg, bundle.vocab, rng);

  PairwiseBatch batch;
  for (const auto& r : bundle.train) {
    batch.users.push_back(r.u);
    batch.locations.push_back(r.l);
    batch.times.push_back(r.t);
    batch.positives.push_back(r.a);
    batch.negatives.push_back((r.a + 1) % 3);
  }
  batch.finalize_unique_users();

  auto run = [&](double lambda, double gamma) {
    ad::Tape tape;
    auto pn = make_parameter_nodes(tape, params, false);
    auto fwd = forward(tape, pn, ctx, cfg);
    return total_loss(tape, pn, fwd, batch, lambda, gamma, L2Scope::Touched).values();
  };

  auto plain = run(0.0, 0.0);
  EXPECT_DOUBLE_EQ(plain.total, plain.bpr);

  auto no_gamma = run(3e-5, 0.0);
  EXPECT_NEAR(no_gamma.total, no_gamma.bpr + 3e-5 * no_gamma.l2, 1e-15);
  EXPECT_EQ(no_gamma.independence, 0.0);

  auto full = run(3e-5, 3e-3);
  EXPECT_NEAR(full.total, full.bpr + 3e-5 * full.l2 + 3e-3 * full.independence, 1e-15);
  EXPECT_GT(full.independence, 0.0);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  GradCheckSetup setup;
  auto report = run_model_gradcheck(setup);
  EXPECT_TRUE(report.pass()) << "max rel err " << report.max_rel_err << " at " << report.worst_param;
  EXPECT_GT(report.n_checked, 50u);  // every parameter entry of the tiny model
}

TEST(TotalLoss, GradcheckCoversAblationModes) {
  GradCheckSetup setup;
  setup.fusion = FusionMode::Mean;
  EXPECT_TRUE(run_model_gradcheck(setup).pass());
  setup.fusion = FusionMode::Attention;
  setup.conv = ConvMode::HGConvLinearized;
  EXPECT_TRUE(run_model_gradcheck(setup).pass());
}
