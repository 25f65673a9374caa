#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "core/autodiff.hpp"

using namespace waco;
using ad::Mat;
using ad::Pooling;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

// Reduces any matrix to a scalar with fixed weights so every entry of the
// upstream gradient is nontrivial.
Var weighted_sum(Tape& t, Var y, const Mat& w) {
  Var s = t.cmul(y, t.constant(w));
  Var col = t.pool_range(s, 0, s.rows() - 1, Pooling::kSum);  // 1 x d
  return t.matmul(col, t.constant(Mat::Ones(s.cols(), 1)));
}

double rel_err(const Mat& a, const Mat& b) {
  double denom = std::max(1.0, std::max(a.norm(), b.norm()));
  return (a - b).norm() / denom;
}

// Checks d(weighted_sum(op(x)))/dx against central finite differences.
void check_grad(const std::function<Var(Tape&, Var)>& op, const Mat& x,
                std::uint64_t weight_seed, double tol = 1e-6) {
  std::mt19937_64 rng(weight_seed);
  Mat w;
  {
    Tape probe;
    Var shape = op(probe, probe.leaf(x));
    w = random_mat(rng, shape.rows(), shape.cols());
  }
  Tape t;
  Var in = t.leaf(x);
  t.backward(weighted_sum(t, op(t, in), w));
  Mat fd = ad::finite_diff(
      [&](const Mat& m) {
        Tape u;
        return weighted_sum(u, op(u, u.leaf(m)), w).val()(0, 0);
      },
      x);
  CHECK(rel_err(in.grad(), fd) < tol);
}

}  // namespace

TEST_CASE("leaf values and backward seed") {
  Tape t;
  Var x = t.leaf(Mat::Constant(2, 2, 3.0));
  t.backward(weighted_sum(t, x, Mat::Ones(2, 2)));
  CHECK(x.grad() == Mat::Ones(2, 2));
}

TEST_CASE("grad sink accumulates across tapes") {
  Mat sink = Mat::Zero(1, 2);
  Mat v(1, 2);
  v << 2.0, -1.0;
  for (int rep = 0; rep < 2; ++rep) {
    Tape t;
    Var x = t.leaf(v, &sink);
    t.backward(weighted_sum(t, x, Mat::Ones(1, 2)));
  }
  CHECK(sink == Mat::Constant(1, 2, 2.0));
}

TEST_CASE("elementwise and matmul gradients") {
  std::mt19937_64 rng(7);
  Mat x = random_mat(rng, 3, 4);
  Mat other = random_mat(rng, 3, 4);
  Mat rhs = random_mat(rng, 4, 2);
  check_grad([&](Tape& t, Var v) { return t.add(v, t.constant(other)); }, x, 1);
  check_grad([&](Tape& t, Var v) { return t.sub(t.constant(other), v); }, x, 2);
  check_grad([&](Tape& t, Var v) { return t.cmul(v, t.constant(other)); }, x, 3);
  check_grad([&](Tape& t, Var v) { return t.scale(v, -1.7); }, x, 4);
  check_grad([&](Tape& t, Var v) { return t.matmul(v, t.constant(rhs)); }, x, 5);
  check_grad([&](Tape& t, Var v) { return t.matmul_nt(v, t.constant(other)); }, x, 6);
  check_grad([&](Tape& t, Var v) { return t.matmul_nt(t.constant(other), v); }, x, 7);
}

TEST_CASE("bias, relu, layer norm, softmax") {
  std::mt19937_64 rng(11);
  Mat x = random_mat(rng, 4, 6);
  Mat bias = random_mat(rng, 1, 6);
  Mat gain = random_mat(rng, 1, 6);
  check_grad([&](Tape& t, Var v) { return t.add_row(v, t.constant(bias)); }, x, 8);
  check_grad([&](Tape& t, Var v) { return t.add_row(t.constant(x), v); }, bias, 9);
  // Keep x away from the relu kink so finite differences stay valid.
  Mat xr = x;
  for (Eigen::Index i = 0; i < xr.size(); ++i)
    if (std::abs(xr(i)) < 1e-2) xr(i) += 0.5;
  check_grad([&](Tape& t, Var v) { return t.relu(v); }, xr, 10);
  check_grad(
      [&](Tape& t, Var v) {
        return t.layer_norm(v, t.constant(gain), t.constant(bias));
      },
      x, 11);
  check_grad(
      [&](Tape& t, Var v) {
        return t.layer_norm(t.constant(x), v, t.constant(bias));
      },
      gain, 12);
  check_grad([&](Tape& t, Var v) { return t.softmax_rows(v); }, x, 13);
  Mat mask = Mat::Zero(4, 6);
  mask(0, 1) = -1e30;
  mask(2, 3) = -1e30;
  check_grad([&](Tape& t, Var v) { return t.softmax_rows(v, &mask); }, x, 14);
}

TEST_CASE("softmax rows sum to one and respect additive mask") {
  std::mt19937_64 rng(3);
  Mat x = random_mat(rng, 3, 5);
  Mat mask = Mat::Zero(3, 5);
  mask(1, 2) = -1e30;
  Tape t;
  Var y = t.softmax_rows(t.leaf(x), &mask);
  for (Eigen::Index i = 0; i < 3; ++i)
    CHECK(y.val().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.val()(1, 2) == doctest::Approx(0.0));
}

TEST_CASE("shape ops: slice, concat, vstack, gather") {
  std::mt19937_64 rng(21);
  Mat x = random_mat(rng, 5, 6);
  check_grad([&](Tape& t, Var v) { return t.slice_cols(v, 1, 3); }, x, 15);
  check_grad(
      [&](Tape& t, Var v) {
        return t.concat_cols({t.slice_cols(v, 0, 2), t.slice_cols(v, 3, 2)});
      },
      x, 16);
  check_grad(
      [&](Tape& t, Var v) {
        std::vector<Var> rows;
        for (Eigen::Index i = 0; i < v.rows(); ++i)
          rows.push_back(t.pool_range(v, i, i, Pooling::kMean));
        return t.vstack(rows);
      },
      x, 17);
  std::vector<int> ids = {4, 0, 0, 2};
  check_grad([&](Tape& t, Var v) { return t.gather_rows(v, ids); }, x, 18);
  // Gathering one row twice doubles that row's gradient.
  Tape t;
  Var table = t.leaf(x);
  t.backward(weighted_sum(t, t.gather_rows(table, ids), Mat::Ones(4, 6)));
  CHECK(table.grad().row(0) == Mat::Constant(1, 6, 2.0));
  CHECK(table.grad().row(1) == Mat::Zero(1, 6));
}

TEST_CASE("window gather values and gradient") {
  Mat x(5, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  Tape t;
  Var y = t.window_gather(t.leaf(x), 3, 2);
  // ceil(5/2) = 3 windows of 3 rows each, zero padded past the end.
  CHECK(y.rows() == 3);
  CHECK(y.cols() == 6);
  CHECK(y.val()(0, 0) == 1);
  CHECK(y.val()(0, 5) == 6);
  CHECK(y.val()(1, 0) == 5);
  CHECK(y.val()(2, 0) == 9);
  CHECK(y.val()(2, 2) == 0);  // padding
  std::mt19937_64 rng(5);
  Mat xr = random_mat(rng, 7, 3);
  check_grad([&](Tape& t2, Var v) { return t2.window_gather(v, 4, 3); }, xr, 19);
}

TEST_CASE("pool range modes") {
  Mat x(4, 2);
  x << 1, -1, 3, 0, 2, 5, -4, 2;
  Tape t;
  Var in = t.leaf(x);
  CHECK(t.pool_range(in, 1, 2, Pooling::kMean).val()(0, 0) == doctest::Approx(2.5));
  CHECK(t.pool_range(in, 1, 2, Pooling::kSum).val()(0, 1) == doctest::Approx(5.0));
  CHECK(t.pool_range(in, 0, 3, Pooling::kMax).val()(0, 0) == doctest::Approx(3.0));
  std::mt19937_64 rng(9);
  Mat xr = random_mat(rng, 6, 4);
  check_grad([&](Tape& t2, Var v) { return t2.pool_range(v, 1, 4, Pooling::kMean); },
             xr, 20);
  check_grad([&](Tape& t2, Var v) { return t2.pool_range(v, 0, 5, Pooling::kSum); },
             xr, 21);
  check_grad([&](Tape& t2, Var v) { return t2.pool_range(v, 2, 4, Pooling::kMax); },
             xr, 22);
}

TEST_CASE("mean pool gradient distributes 1/|range| to each row") {
  Mat x = Mat::Zero(5, 3);
  Tape t;
  Var in = t.leaf(x);
  t.backward(weighted_sum(t, t.pool_range(in, 1, 3, Pooling::kMean), Mat::Ones(1, 3)));
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(in.grad()(0, j) == 0.0);
    CHECK(in.grad()(2, j) == doctest::Approx(1.0 / 3.0));
    CHECK(in.grad()(4, j) == 0.0);
  }
}

TEST_CASE("row normalize") {
  std::mt19937_64 rng(31);
  Mat x = random_mat(rng, 4, 5);
  Tape t;
  Var y = t.row_normalize(t.leaf(x));
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(y.val().row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  check_grad([&](Tape& t2, Var v) { return t2.row_normalize(v); }, x, 23);
}

TEST_CASE("nce diag loss value and gradient") {
  Mat z(2, 2);
  z << 5.0, 0.0, 0.0, 5.0;
  Tape t;
  Var loss = t.nce_diag_loss(t.leaf(z));
  CHECK(loss.val()(0, 0) == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-12));
  std::mt19937_64 rng(41);
  Mat zr = random_mat(rng, 5, 5);
  check_grad([&](Tape& t2, Var v) { return t2.nce_diag_loss(v); }, zr, 24);
}

TEST_CASE("label smoothed cross entropy") {
  // Uniform logits: loss is ln(V) for every smoothing level.
  Mat z = Mat::Zero(3, 4);
  std::vector<int> targets = {0, 2, 3};
  for (double eps : {0.0, 0.1, 0.3}) {
    Tape t;
    CHECK(t.ce_label_smooth(t.leaf(z), targets, eps).val()(0, 0) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  std::mt19937_64 rng(43);
  Mat zr = random_mat(rng, 4, 6);
  std::vector<int> tr = {5, 0, 3, 3};
  check_grad([&](Tape& t2, Var v) { return t2.ce_label_smooth(v, tr, 0.1); }, zr, 25);
  check_grad([&](Tape& t2, Var v) { return t2.ce_label_smooth(v, tr, 0.0); }, zr, 26);
}

TEST_CASE("ctc loss closed forms") {
  // T=2, uniform over 3 symbols (blank = 2), target "a" (= 0):
  // valid paths {(a,-), (-,a), (a,a)} -> probability 3/9, loss ln 3.
  Tape t;
  Var loss = t.ctc_loss(t.leaf(Mat::Zero(2, 3)), {0}, 2);
  CHECK(loss.val()(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  // T=1: loss is the negative log softmax of the single target symbol.
  Mat z1(1, 4);
  z1 << 0.3, -1.2, 0.8, 0.1;
  Tape t2;
  Var l1 = t2.ctc_loss(t2.leaf(z1), {2}, 3);
  double lse = std::log(z1.array().exp().sum());
  CHECK(l1.val()(0, 0) == doctest::Approx(lse - 0.8).epsilon(1e-12));
}

TEST_CASE("ctc gradient vs finite differences") {
  std::mt19937_64 rng(47);
  Mat z = random_mat(rng, 5, 4);
  std::vector<int> target = {1, 1, 0};
  check_grad([&](Tape& t, Var v) { return t.ctc_loss(v, target, 3); }, z, 27, 1e-5);
}

TEST_CASE("mean_of averages scalars") {
  Tape t;
  std::vector<Var> xs = {t.scalar(1.0), t.scalar(2.0), t.scalar(6.0)};
  CHECK(t.mean_of(xs).val()(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("dropout is identity at p=0 and rescales otherwise") {
  std::mt19937_64 rng(53);
  Mat x = random_mat(rng, 20, 10).array().abs() + 1.0;
  Tape t(99);
  Var in = t.leaf(x);
  CHECK(t.dropout(in, 0.0).val() == x);
  Var y = t.dropout(in, 0.5);
  int zeros = 0;
  for (Eigen::Index i = 0; i < y.val().size(); ++i) {
    if (y.val()(i) == 0.0)
      ++zeros;
    else
      CHECK(y.val()(i) == doctest::Approx(x(i) / 0.5));
  }
  CHECK(zeros > 20);
  CHECK(zeros < 180);
}

TEST_CASE("two tapes with the same seed drop the same entries") {
  Mat x = Mat::Ones(8, 8);
  Tape a(1234), b(1234);
  Var ya = a.dropout(a.leaf(x), 0.3);
  Var yb = b.dropout(b.leaf(x), 0.3);
  CHECK(ya.val() == yb.val());
}
