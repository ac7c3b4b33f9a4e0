#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtam/numcore/blob.hpp"
#include "dtam/numcore/grad_check.hpp"
#include "dtam/numcore/nn.hpp"
#include "dtam/numcore/prob.hpp"

using namespace dtam;

namespace {

MatXd random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(Mlp, IdentityLayer) {
  auto p = MlpParams<double>::zeros({2, 2}, Activation::Identity);
  p.weights[0].value = MatXd::Identity(2, 2);
  MatXd x(1, 2);
  x << 1, 2;
  MatXd y = mlp_apply(p, x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(Mlp, ZeroWeightsGiveBias) {
  auto p = MlpParams<double>::zeros({3, 4, 2});
  p.biases[1].value << 0.25, -1.5;
  std::mt19937_64 rng(3);
  for (int k = 0; k < 5; ++k) {
    MatXd y = mlp_apply(p, random_mat(1, 3, rng));
    EXPECT_DOUBLE_EQ(y(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(y(0, 1), -1.5);
  }
}

TEST(Mlp, ShapeMismatchThrows) {
  auto p = MlpParams<double>::zeros({3, 2});
  EXPECT_THROW(mlp_apply(p, MatXd::Zero(1, 4)), DimensionError);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto p = MlpParams<double>::init({2, 3, 1}, Activation::Tanh, 0.0, rng);
  Param<double> x(random_mat(4, 2, rng));
  NamedParams<double> params{{"x", &x}};
  p.visit("mlp", [&](const std::string& n, Param<double>& q) { params.emplace_back(n, &q); });
  auto rep = grad_check<double>([&](Tape<double>& t) { return sum(square(mlp_apply(t, p, t.param(x)))); }, params, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.worst_entry;
}

TEST(Mlp, DropoutOnlyInTraining) {
  std::mt19937_64 rng(5);
  auto p = MlpParams<double>::init({4, 16, 2}, Activation::Relu, 0.3, rng);
  MatXd x = random_mat(3, 4, rng);
  Tape<double> eval_a, eval_b;
  EXPECT_TRUE(mlp_apply(eval_a, p, eval_a.constant(x)).value().isApprox(mlp_apply(eval_b, p, eval_b.constant(x)).value()));
  Tape<double> train;
  train.training = true;
  train.seed(1);
  EXPECT_FALSE(mlp_apply(train, p, train.constant(x)).value().isApprox(mlp_apply(eval_a, p, eval_a.constant(x)).value()));
}

TEST(Gru, ZeroWeightsZeroState) {
  auto p = GruParams<double>::zeros(CellKind::Gru, 3, 4, 1);
  std::vector<VecXd> in(5, VecXd::Ones(3));
  auto hs = gru_sequence(p, in, VecXd::Zero(4));
  ASSERT_EQ(hs.size(), 5u);
  for (const auto& h : hs) EXPECT_EQ(h.norm(), 0.0);
}

TEST(Gru, ZeroWeightsHalveInitialState) {
  // z = sigmoid(0) = 1/2 and candidate = tanh(0) = 0, so h_t = h_{t-1} / 2.
  auto p = GruParams<double>::zeros(CellKind::Gru, 2, 2, 1);
  VecXd h0(2);
  h0 << 1.0, -2.0;
  auto hs = gru_sequence(p, {VecXd::Ones(2), VecXd::Ones(2)}, h0);
  EXPECT_TRUE(hs[0].isApprox(h0 / 2));
  EXPECT_TRUE(hs[1].isApprox(h0 / 4));
}

TEST(Gru, EmptySequence) {
  auto p = GruParams<double>::zeros(CellKind::Gru, 2, 2, 1);
  EXPECT_TRUE(gru_sequence(p, {}, VecXd::Zero(2)).empty());
}

TEST(Gru, LengthOneEqualsSingleStep) {
  std::mt19937_64 rng(2);
  auto p = GruParams<double>::init(CellKind::Gru, 3, 4, 1, 0.0, rng);
  VecXd x = random_mat(3, 1, rng).col(0);
  VecXd h0 = random_mat(4, 1, rng).col(0);
  auto hs = gru_sequence(p, {x}, h0);
  // hand-written single step
  const auto& L = p.layers[0];
  RowVec<double> gx = x.transpose() * L.w_input.value + L.b_input.value;
  RowVec<double> gh = h0.transpose() * L.w_hidden.value + L.b_hidden.value;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  VecXd h(4);
  for (int i = 0; i < 4; ++i) {
    const double r = sig(gx(i) + gh(i));
    const double z = sig(gx(4 + i) + gh(4 + i));
    const double n = std::tanh(gx(8 + i) + r * gh(8 + i));
    h(i) = (1 - z) * n + z * h0(i);
  }
  EXPECT_TRUE(hs[0].isApprox(h, 1e-14));
}

TEST(Gru, SequenceGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (CellKind kind : {CellKind::Gru, CellKind::Lstm}) {
    auto p = GruParams<double>::init(kind, 3, 4, 2, 0.0, rng);
    Param<double> x(random_mat(3, 3, rng));
    Param<double> readout(random_mat(4, 1, rng));
    NamedParams<double> params{{"x", &x}, {"readout", &readout}};
    p.visit("gru", [&](const std::string& n, Param<double>& q) { params.emplace_back(n, &q); });
    auto rep = grad_check<double>(
        [&](Tape<double>& t) { return sum(matmul(recurrent_run(t, p, t.param(x), 1), t.param(readout))); }, params, 1e-6);
    EXPECT_TRUE(rep.passed) << to_string(kind) << " " << rep.max_rel_error << " " << rep.worst_entry;
  }
}

TEST(Gru, MaskedBatchMatchesUnbatched) {
  std::mt19937_64 rng(8);
  auto p = GruParams<double>::init(CellKind::Gru, 2, 3, 1, 0.0, rng);
  MatXd a = random_mat(3, 2, rng), b = random_mat(3, 2, rng);
  // pack step-major, second sequence of length 2
  MatXd packed(6, 2);
  for (int j = 0; j < 3; ++j) {
    packed.row(2 * j) = a.row(j);
    packed.row(2 * j + 1) = b.row(j);
  }
  Tape<double> t;
  MatXd out = recurrent_run(t, p, t.constant(packed), 2, {3, 2}).value();
  auto ha = gru_sequence(p, {a.row(0).transpose(), a.row(1).transpose(), a.row(2).transpose()}, VecXd::Zero(3));
  auto hb = gru_sequence(p, {b.row(0).transpose(), b.row(1).transpose()}, VecXd::Zero(3));
  EXPECT_TRUE(out.row(4).transpose().isApprox(ha[2]));
  EXPECT_TRUE(out.row(5).transpose().isApprox(hb[1]));  // frozen after length
}

TEST(Softmax, Examples) {
  VecXd v = VecXd::Zero(3);
  EXPECT_TRUE(softmax(v).isApprox(VecXd::Constant(3, 1.0 / 3)));
  VecXd big(2);
  big << 1000, 0;
  VecXd s = softmax(big);
  EXPECT_NEAR(s(0), 1.0, 1e-15);
  EXPECT_NEAR(s(1), 0.0, 1e-15);
  EXPECT_TRUE(s.allFinite());
  VecXd logs(3);
  logs << std::log(1.0), std::log(2.0), std::log(3.0);
  VecXd e(3);
  e << 1.0 / 6, 2.0 / 6, 3.0 / 6;
  EXPECT_TRUE(softmax(logs).isApprox(e, 1e-14));
}

TEST(Softmax, AxisSelection) {
  MatXd m(2, 2);
  m << 0, std::log(3.0), 0, 0;
  MatXd by_row = softmax(m, Axis::Cols);
  EXPECT_NEAR(by_row(0, 0), 0.25, 1e-15);
  MatXd by_col = softmax(m, Axis::Rows);
  EXPECT_NEAR(by_col(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(by_col(0, 1), 0.75, 1e-15);
}

TEST(Softmax, SimplexAndShiftInvarianceProperty) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> mag(-6, 6);
  for (int trial = 0; trial < 2000; ++trial) {
    const double scale = std::pow(10.0, mag(rng));
    MatXd v = random_mat(1, 1 + trial % 9, rng, scale);
    MatXd s = softmax(v);
    ASSERT_TRUE(s.allFinite());
    ASSERT_GE(s.minCoeff(), 0.0);
    ASSERT_NEAR(s.sum(), 1.0, 1e-12);
    MatXd shifted = softmax(MatXd(v.array() + 123.25));
    ASSERT_TRUE((s - shifted).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST(Reparam, Examples) {
  DiagGaussian<double> g(VecXd::Constant(2, 0.7), VecXd::Constant(2, 1.3));
  EXPECT_TRUE(gaussian_reparam_sample(g, VecXd::Zero(2)) == g.mean);
  VecXd eps(2);
  eps << 0.3, -1.1;
  EXPECT_TRUE(gaussian_reparam_sample(DiagGaussian<double>::standard(2), eps) == eps);
  DiagGaussian<double> h(VecXd::Constant(1, 1.0), VecXd::Constant(1, 2.0));
  EXPECT_DOUBLE_EQ(gaussian_reparam_sample(h, VecXd::Constant(1, 0.5))(0), 2.0);
}

TEST(Reparam, NonPositiveStddevIsDomainError) {
  EXPECT_THROW(DiagGaussian<double>(VecXd::Zero(1), VecXd::Zero(1)), DomainError);
  Tape<double> t;
  EXPECT_THROW(gaussian_reparam_sample(t.constant(MatXd::Zero(1, 1)), t.constant(MatXd::Constant(1, 1, -1.0)), MatXd::Zero(1, 1)),
               DomainError);
}

TEST(Reparam, EmpiricalMomentsConverge) {
  const int N = 100000;
  DiagGaussian<double> g(VecXd::Constant(1, -0.4), VecXd::Constant(1, 1.7));
  GaussianNoise<double> noise(99);
  MatXd eps = noise.normal(1, N);
  double s1 = 0, s2 = 0;
  for (int i = 0; i < N; ++i) {
    const double x = gaussian_reparam_sample(g, VecXd::Constant(1, eps(0, i)))(0);
    s1 += x;
    s2 += x * x;
  }
  const double m = s1 / N;
  const double var = s2 / N - m * m;
  const double sd2 = 1.7 * 1.7;
  EXPECT_LT(std::abs(m + 0.4), 5 * std::sqrt(sd2 / N));
  // Var of the sample variance for a Gaussian is 2 sigma^4 / N.
  EXPECT_LT(std::abs(var - sd2), 5 * std::sqrt(2 * sd2 * sd2 / N));
}

TEST(Kl, Examples) {
  auto n01 = DiagGaussian<double>::standard(3);
  EXPECT_DOUBLE_EQ(kl_diag_gaussian(n01, n01), 0.0);
  DiagGaussian<double> q(VecXd::Constant(1, 1.0), VecXd::Ones(1));
  EXPECT_NEAR(kl_diag_gaussian(q, DiagGaussian<double>::standard(1)), 0.5, 1e-15);
  EXPECT_THROW(kl_diag_gaussian(q, n01), DimensionError);
}

TEST(Kl, MatchesMonteCarloEstimate) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  VecXd mq = random_mat(5, 1, rng).col(0), mp = random_mat(5, 1, rng).col(0);
  VecXd sq(5), sp(5);
  for (int i = 0; i < 5; ++i) {
    sq(i) = u(rng);
    sp(i) = u(rng);
  }
  DiagGaussian<double> q(mq, sq), p(mp, sp);
  GaussianNoise<double> noise(7);
  const int N = 1000000;
  MatXd eps = noise.normal(5, N);
  double acc = 0;
  for (int k = 0; k < N; ++k) {
    double lq = 0, lp = 0;
    for (int i = 0; i < 5; ++i) {
      const double x = mq(i) + sq(i) * eps(i, k);
      lq += -std::log(sq(i)) - 0.5 * std::pow((x - mq(i)) / sq(i), 2);
      lp += -std::log(sp(i)) - 0.5 * std::pow((x - mp(i)) / sp(i), 2);
    }
    acc += lq - lp;
  }
  EXPECT_NEAR(kl_diag_gaussian(q, p), acc / N, 1e-2);
}

TEST(Kl, NonNegativeZeroIffEqualProperty) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const int d = 1 + trial % 6;
    VecXd m1 = random_mat(d, 1, rng).col(0), m2 = random_mat(d, 1, rng).col(0);
    VecXd s1(d), s2(d);
    for (int i = 0; i < d; ++i) {
      s1(i) = u(rng);
      s2(i) = u(rng);
    }
    DiagGaussian<double> a(m1, s1), b(m2, s2);
    ASSERT_GT(kl_diag_gaussian(a, b), 0.0);
    ASSERT_EQ(kl_diag_gaussian(a, a), 0.0);
  }
}

TEST(Kl, TapeVersionMatchesClosedForm) {
  std::mt19937_64 rng(43);
  MatXd mq = random_mat(3, 4, rng), lq = random_mat(3, 4, rng, 0.3), mp = random_mat(3, 4, rng), lp = random_mat(3, 4, rng, 0.3);
  Tape<double> t;
  const double v = kl_diag_gaussian(t.constant(mq), t.constant(lq), t.constant(mp), t.constant(lp)).scalar();
  double ref = 0;
  for (int r = 0; r < 3; ++r)
    ref += kl_diag_gaussian(DiagGaussian<double>(mq.row(r).transpose(), lq.row(r).array().exp().transpose()),
                            DiagGaussian<double>(mp.row(r).transpose(), lp.row(r).array().exp().transpose()));
  EXPECT_NEAR(v, ref, 1e-12);
}

TEST(GradCheck, Quadratic) {
  Param<double> x(MatXd(1, 2));
  x.value << 1, 2;
  auto rep = grad_check<double>([&](Tape<double>& t) { return sum(square(t.param(x))); }, {{"x", &x}}, 1e-8);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-9);
  EXPECT_DOUBLE_EQ(x.grad(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(x.grad(0, 1), 4.0);
}

TEST(GradCheck, CorruptedGradientFails) {
  Param<double> x(MatXd::Constant(1, 3, 0.7));
  auto wrong_square = [](Var<double> a) {
    Tape<double>& t = *a.tape;
    MatXd out = a.value().array().square();
    return t.push(std::move(out), {a}, [a](Tape<double>& t, int self) {
      t.accum(a, (3.0 * t.grad(self).array() * a.value().array()).matrix());  // should be 2x
    });
  };
  auto rep = grad_check<double>([&](Tape<double>& t) { return sum(wrong_square(t.param(x))); }, {{"x", &x}}, 1e-4);
  EXPECT_FALSE(rep.passed);
}

TEST(GradCheck, NonFiniteValueThrows) {
  Param<double> x(MatXd::Constant(1, 1, -1.0));
  EXPECT_THROW(grad_check<double>([&](Tape<double>& t) { return sum(exp(scale(exp(scale(t.param(x), -1000.0)), 1.0))); },
                                  {{"x", &x}}, 1e-4),
               NumericError);
}

// Every differentiable op on randomized small shapes.
TEST(GradCheck, AllOpsRandomShapes) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + trial % 3, d = 2 + (trial + 1) % 3;
    Param<double> a(random_mat(n, d, rng)), b(random_mat(n, d, rng)), row(random_mat(1, d, rng)), col(random_mat(n, 1, rng));
    Param<double> w(random_mat(d, 3, rng)), pos(MatXd(random_mat(n, d, rng).array().abs() + 0.5));
    // Keep the clamp kinks outside the finite-difference stencil.
    for (Eigen::Index i = 0; i < a.value.size(); ++i) {
      double& v = a.value.data()[i];
      if (std::abs(std::abs(v) - 0.5) < 0.05) v += v > 0 ? 0.1 : -0.1;
    }
    NamedParams<double> ps{{"a", &a}, {"b", &b}, {"row", &row}, {"col", &col}, {"w", &w}, {"pos", &pos}};
    auto f = [&](Tape<double>& t) {
      Var<double> A = t.param(a), B = t.param(b), R = t.param(row), C = t.param(col), W = t.param(w), P = t.param(pos);
      Var<double> x = add_rowwise(cmul(A, B) + sub(A, B), R);
      x = cmul_colwise(tanh(x), C) + sigmoid(scale(B, 0.5)) + softplus(A) + exp(scale(A, 0.1));
      x = x + log_floor(P, 1e-12) + sqrt(P) + clamp(A, -0.5, 0.5) + add_scalar(square(B), 0.3);
      Var<double> y = matmul(softmax_rows(x), W);
      Var<double> z = concat_cols(y, transpose(slice_rows(transpose(x), 0, 2)));
      z = vstack<double>({slice_cols(z, 1, 3), slice_cols(gather_rows(z, {0, 0}), 0, 3)});
      return add(sum(sum_rows(z)), mean(square(relu(x))));
    };
    auto rep = grad_check<double>(f, ps, 1e-6);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.worst_entry;
  }
}

TEST(GradCheck, AttentionPool) {
  std::mt19937_64 rng(5);
  const int B = 3, M = 4, K = 2, H = 3;
  Param<double> scores(random_mat(M * B, K, rng)), words(random_mat(M * B, H, rng)), weights(random_mat(B, K, rng));
  Param<double> readout(random_mat(H, 1, rng));
  std::vector<int> lengths{4, 1, 3};
  auto rep = grad_check<double>(
      [&](Tape<double>& t) {
        return sum(square(matmul(attention_pool(t.param(scores), t.param(words), t.param(weights), lengths), t.param(readout))));
      },
      {{"scores", &scores}, {"words", &words}, {"weights", &weights}}, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.worst_entry;
}

TEST(Tape, CheckFiniteRejectsNaN) {
  Tape<double> t;
  t.check_finite = true;
  EXPECT_THROW(log_floor(t.constant(MatXd::Constant(1, 1, -1.0)), -1.0), NumericError);
}

TEST(Precision, FloatPathWithRelaxedTolerance) {
  std::mt19937 rng(3);
  std::mt19937_64 rng64(3);
  auto p = MlpParams<float>::init({3, 4, 1}, Activation::Tanh, 0.0, rng64);
  Param<float> x(Mat<float>::Random(2, 3));
  NamedParams<float> params{{"x", &x}};
  p.visit("mlp", [&](const std::string& n, Param<float>& q) { params.emplace_back(n, &q); });
  auto rep = grad_check<float>([&](Tape<float>& t) { return sum(square(mlp_apply(t, p, t.param(x)))); }, params, 1e-2, 1e-2);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.worst_entry;
}

TEST(Blob, BitExactRoundTrip) {
  std::mt19937_64 rng(1);
  TensorBlob blob;
  blob.meta["K"] = "3";
  blob.meta["note"] = "two words";
  MatXd a = random_mat(3, 5, rng);
  a(0, 0) = -0.0;
  a(1, 1) = std::numeric_limits<double>::denorm_min();
  Mat<float> b = random_mat(2, 2, rng).cast<float>();
  blob.add("gen.alpha", a);
  blob.add("f.b", b);
  auto dir = std::filesystem::temp_directory_path() / "dtam_blob_test";
  std::filesystem::remove_all(dir);
  write_blob(dir, blob);
  TensorBlob back = read_blob(dir);
  EXPECT_EQ(back.meta, blob.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  const auto& ra = std::get<MatXd>(back.find("gen.alpha")->data);
  EXPECT_EQ(std::memcmp(ra.data(), a.data(), sizeof(double) * a.size()), 0);
  EXPECT_TRUE(std::signbit(ra(0, 0)));
  const auto& rb = std::get<Mat<float>>(back.find("f.b")->data);
  EXPECT_EQ(std::memcmp(rb.data(), b.data(), sizeof(float) * b.size()), 0);
}

TEST(Blob, TruncatedFileIsCorruption) {
  TensorBlob blob;
  blob.add("x", MatXd::Ones(4, 4));
  auto dir = std::filesystem::temp_directory_path() / "dtam_blob_trunc";
  std::filesystem::remove_all(dir);
  write_blob(dir, blob);
  std::filesystem::resize_file(dir / "tensors.bin", std::filesystem::file_size(dir / "tensors.bin") - 9);
  EXPECT_THROW(read_blob(dir), CorruptionError);
}

TEST(Blob, FlippedByteIsCorruption) {
  TensorBlob blob;
  blob.add("x", MatXd::Ones(2, 2));
  auto dir = std::filesystem::temp_directory_path() / "dtam_blob_flip";
  std::filesystem::remove_all(dir);
  write_blob(dir, blob);
  std::fstream f(dir / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-1, std::ios::end);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(read_blob(dir), CorruptionError);
}
