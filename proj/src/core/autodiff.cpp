#include "core/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace waco::ad {

namespace {

Mat& grad_of(Node* n) {
  if (n->grad.size() == 0) n->grad = Mat::Zero(n->val.rows(), n->val.cols());
  return n->grad;
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

Node* Tape::make(Mat v) {
  nodes_.push_back(std::make_unique<Node>());
  Node* n = nodes_.back().get();
  n->val = std::move(v);
  return n;
}

Var Tape::leaf(Mat v, Mat* grad_sink) {
  Node* n = make(std::move(v));
  n->grad_sink = grad_sink;
  return Var(n);
}

Var Tape::add(Var a, Var b) {
  Node* n = make(a.val() + b.val());
  n->backward = [n, a, b] {
    grad_of(a.node()) += n->grad;
    grad_of(b.node()) += n->grad;
  };
  return Var(n);
}

Var Tape::sub(Var a, Var b) {
  Node* n = make(a.val() - b.val());
  n->backward = [n, a, b] {
    grad_of(a.node()) += n->grad;
    grad_of(b.node()) -= n->grad;
  };
  return Var(n);
}

Var Tape::cmul(Var a, Var b) {
  Node* n = make(a.val().cwiseProduct(b.val()));
  n->backward = [n, a, b] {
    grad_of(a.node()) += n->grad.cwiseProduct(b.val());
    grad_of(b.node()) += n->grad.cwiseProduct(a.val());
  };
  return Var(n);
}

Var Tape::scale(Var a, double s) {
  Node* n = make(a.val() * s);
  n->backward = [n, a, s] { grad_of(a.node()) += n->grad * s; };
  return Var(n);
}

Var Tape::matmul(Var a, Var b) {
  Node* n = make(a.val() * b.val());
  n->backward = [n, a, b] {
    grad_of(a.node()) += n->grad * b.val().transpose();
    grad_of(b.node()) += a.val().transpose() * n->grad;
  };
  return Var(n);
}

Var Tape::matmul_nt(Var a, Var b) {
  Node* n = make(a.val() * b.val().transpose());
  n->backward = [n, a, b] {
    grad_of(a.node()) += n->grad * b.val();
    grad_of(b.node()) += n->grad.transpose() * a.val();
  };
  return Var(n);
}

Var Tape::add_row(Var x, Var bias) {
  Node* n = make(x.val().rowwise() + bias.val().row(0));
  n->backward = [n, x, bias] {
    grad_of(x.node()) += n->grad;
    grad_of(bias.node()).row(0) += n->grad.colwise().sum();
  };
  return Var(n);
}

Var Tape::relu(Var x) {
  Node* n = make(x.val().cwiseMax(0.0));
  n->backward = [n, x] {
    grad_of(x.node()) +=
        n->grad.cwiseProduct((x.val().array() > 0.0).cast<double>().matrix());
  };
  return Var(n);
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Mat& v = x.val();
  Eigen::Index r = v.rows(), c = v.cols();
  Mat mu = v.rowwise().mean();
  Mat centered = v.colwise() - mu.col(0);
  Mat var = centered.array().square().rowwise().mean();
  Mat inv_sd = (var.array() + eps).rsqrt();
  Mat norm = centered.array().colwise() * inv_sd.col(0).array();
  Mat out = (norm.array().rowwise() * gain.val().row(0).array()).rowwise() +
            bias.val().row(0).array();
  Node* n = make(out);
  n->backward = [n, x, gain, bias, norm, inv_sd, c] {
    // d(norm)/dx handled per-row via the standard layernorm backward.
    Mat gnorm = n->grad.array().rowwise() * gain.val().row(0).array();
    Mat row_dot = (gnorm.cwiseProduct(norm)).rowwise().sum();
    Mat row_sum = gnorm.rowwise().sum();
    Mat dx = (gnorm.array() -
              ((norm.array().colwise() * row_dot.col(0).array()) +
               (Mat::Ones(norm.rows(), c).array().colwise() *
                row_sum.col(0).array())) /
                  static_cast<double>(c))
                 .colwise() *
             inv_sd.col(0).array();
    grad_of(x.node()) += dx.matrix();
    grad_of(gain.node()).row(0) += (n->grad.cwiseProduct(norm)).colwise().sum();
    grad_of(bias.node()).row(0) += n->grad.colwise().sum();
  };
  return Var(n);
}

Var Tape::softmax_rows(Var x, const Mat* add_mask) {
  Mat z = x.val();
  if (add_mask) z += *add_mask;
  Mat mx = z.rowwise().maxCoeff();
  Mat e = (z.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  Mat p = e.array().colwise() / sum.col(0).array();
  Node* n = make(p);
  n->backward = [n, x, p] {
    Mat dot = (n->grad.cwiseProduct(p)).rowwise().sum();
    grad_of(x.node()) +=
        p.cwiseProduct(n->grad.colwise() - dot.col(0));
  };
  return Var(n);
}

Var Tape::slice_cols(Var x, Eigen::Index c0, Eigen::Index w) {
  Node* n = make(x.val().middleCols(c0, w));
  n->backward = [n, x, c0, w] {
    grad_of(x.node()).middleCols(c0, w) += n->grad;
  };
  return Var(n);
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  Eigen::Index r = xs.front().rows(), c = 0;
  for (const Var& v : xs) c += v.cols();
  Mat out(r, c);
  Eigen::Index at = 0;
  for (const Var& v : xs) {
    out.middleCols(at, v.cols()) = v.val();
    at += v.cols();
  }
  Node* n = make(std::move(out));
  n->backward = [n, xs] {
    Eigen::Index at = 0;
    for (const Var& v : xs) {
      grad_of(v.node()) += n->grad.middleCols(at, v.cols());
      at += v.cols();
    }
  };
  return Var(n);
}

Var Tape::vstack(const std::vector<Var>& rows) {
  Eigen::Index c = rows.front().cols();
  Mat out(static_cast<Eigen::Index>(rows.size()), c);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = rows[i].val().row(0);
  Node* n = make(std::move(out));
  n->backward = [n, rows] {
    for (std::size_t i = 0; i < rows.size(); ++i)
      grad_of(rows[i].node()).row(0) += n->grad.row(i);
  };
  return Var(n);
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) +
                              " out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.val().row(ids[i]);
  }
  Node* n = make(std::move(out));
  n->backward = [n, table, ids] {
    Mat& g = grad_of(table.node());
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.row(ids[i]) += n->grad.row(static_cast<Eigen::Index>(i));
  };
  return Var(n);
}

Var Tape::window_gather(Var x, int kernel, int stride) {
  Eigen::Index in_rows = x.rows(), d = x.cols();
  Eigen::Index out_rows = (in_rows + stride - 1) / stride;
  Mat out = Mat::Zero(out_rows, kernel * d);
  for (Eigen::Index t = 0; t < out_rows; ++t)
    for (int k = 0; k < kernel; ++k) {
      Eigen::Index src = t * stride + k;
      if (src < in_rows) out.block(t, k * d, 1, d) = x.val().row(src);
    }
  Node* n = make(std::move(out));
  n->backward = [n, x, kernel, stride, in_rows, d] {
    Mat& g = grad_of(x.node());
    for (Eigen::Index t = 0; t < n->val.rows(); ++t)
      for (int k = 0; k < kernel; ++k) {
        Eigen::Index src = t * stride + k;
        if (src < in_rows) g.row(src) += n->grad.block(t, k * d, 1, d);
      }
  };
  return Var(n);
}

Var Tape::pool_range(Var x, Eigen::Index r0, Eigen::Index r1, Pooling mode) {
  if (r0 > r1 || r0 < 0 || r1 >= x.rows())
    throw std::invalid_argument("pool_range: empty or out-of-bounds range");
  Eigen::Index len = r1 - r0 + 1;
  Mat out;
  std::vector<Eigen::Index> argmax;
  switch (mode) {
    case Pooling::kMean:
      out = x.val().middleRows(r0, len).colwise().mean();
      break;
    case Pooling::kSum:
      out = x.val().middleRows(r0, len).colwise().sum();
      break;
    case Pooling::kMax: {
      out.resize(1, x.cols());
      argmax.resize(x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index am;
        out(0, c) = x.val().middleRows(r0, len).col(c).maxCoeff(&am);
        argmax[c] = r0 + am;
      }
      break;
    }
  }
  Node* n = make(std::move(out));
  n->backward = [n, x, r0, len, mode, argmax] {
    Mat& g = grad_of(x.node());
    switch (mode) {
      case Pooling::kMean:
        g.middleRows(r0, len).rowwise() +=
            (n->grad.row(0) / static_cast<double>(len)).eval();
        break;
      case Pooling::kSum:
        g.middleRows(r0, len).rowwise() += n->grad.row(0).eval();
        break;
      case Pooling::kMax:
        for (Eigen::Index c = 0; c < x.cols(); ++c)
          g(argmax[c], c) += n->grad(0, c);
        break;
    }
  };
  return Var(n);
}

Var Tape::row_normalize(Var x) {
  Mat norms = x.val().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.rows(); ++i)
    if (norms(i, 0) <= 0.0)
      throw std::domain_error("row_normalize: zero-norm row " + std::to_string(i));
  Mat out = x.val().array().colwise() / norms.col(0).array();
  Node* n = make(out);
  n->backward = [n, x, norms] {
    const Mat& y = n->val;
    Mat dot = (n->grad.cwiseProduct(y)).rowwise().sum();
    Mat dx = (n->grad - (y.array().colwise() * dot.col(0).array()).matrix())
                 .array()
                 .colwise() /
             norms.col(0).array();
    grad_of(x.node()) += dx.matrix();
  };
  return Var(n);
}

Var Tape::dropout(Var x, double p) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = keep(rng_) ? 1.0 / (1.0 - p) : 0.0;
  Node* n = make(x.val().cwiseProduct(mask));
  n->backward = [n, x, mask] { grad_of(x.node()) += n->grad.cwiseProduct(mask); };
  return Var(n);
}

Var Tape::nce_diag_loss(Var scores) {
  const Mat& z = scores.val();
  if (z.rows() != z.cols() || z.rows() == 0)
    throw std::invalid_argument("nce_diag_loss: scores must be square and non-empty");
  Eigen::Index m = z.rows();
  Mat mx = z.rowwise().maxCoeff();
  Mat e = (z.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  Mat p = e.array().colwise() / sum.col(0).array();  // row-softmax
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    loss += std::log(sum(i, 0)) + mx(i, 0) - z(i, i);
  loss /= static_cast<double>(m);
  Node* n = make(Mat::Constant(1, 1, loss));
  n->backward = [n, scores, p, m] {
    double g = n->grad(0, 0) / static_cast<double>(m);
    Mat dz = p * g;
    for (Eigen::Index i = 0; i < m; ++i) dz(i, i) -= g;
    grad_of(scores.node()) += dz;
  };
  return Var(n);
}

Var Tape::ce_label_smooth(Var logits, const std::vector<int>& targets,
                          double epsilon) {
  const Mat& z = logits.val();
  Eigen::Index T = z.rows(), V = z.cols();
  if (static_cast<Eigen::Index>(targets.size()) != T)
    throw std::invalid_argument("ce_label_smooth: target length mismatch");
  Mat mx = z.rowwise().maxCoeff();
  Mat e = (z.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  Mat logp = (z.colwise() - mx.col(0)).colwise() -
             sum.array().log().matrix().col(0);
  Mat p = e.array().colwise() / sum.col(0).array();
  double uniform = epsilon / static_cast<double>(V);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (targets[t] < 0 || targets[t] >= V)
      throw std::out_of_range("ce_label_smooth: target id out of range");
    loss -= (1.0 - epsilon) * logp(t, targets[t]);
    loss -= uniform * logp.row(t).sum();
  }
  loss /= static_cast<double>(T);
  Node* n = make(Mat::Constant(1, 1, loss));
  n->backward = [n, logits, targets, p, epsilon, T, V] {
    double g = n->grad(0, 0) / static_cast<double>(T);
    Mat dz = p;  // softmax minus the smoothed target distribution
    dz.array() -= epsilon / static_cast<double>(V);
    for (Eigen::Index t = 0; t < T; ++t) dz(t, targets[t]) -= 1.0 - epsilon;
    grad_of(logits.node()) += dz * g;
  };
  return Var(n);
}

Var Tape::ctc_loss(Var logits, const std::vector<int>& targets, int blank) {
  const double kNegInf = -std::numeric_limits<double>::infinity();
  const Mat& z = logits.val();
  Eigen::Index T = z.rows(), C = z.cols();
  std::size_t U = targets.size();
  // Minimal length: |y| plus one extra frame per repeated adjacent label.
  std::size_t min_len = U;
  for (std::size_t u = 1; u < U; ++u)
    if (targets[u] == targets[u - 1]) ++min_len;
  if (static_cast<std::size_t>(T) < min_len)
    throw std::invalid_argument("ctc_loss: target too long for input length");

  // Log-softmax per frame.
  Mat mx = z.rowwise().maxCoeff();
  Mat e = (z.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  Mat logp = (z.colwise() - mx.col(0)).colwise() -
             sum.array().log().matrix().col(0);
  Mat p = e.array().colwise() / sum.col(0).array();

  std::size_t S = 2 * U + 1;  // blank-extended label sequence
  auto lab = [&](std::size_t s) -> int {
    return (s % 2 == 0) ? blank : targets[s / 2];
  };
  Mat alpha = Mat::Constant(T, S, kNegInf);
  alpha(0, 0) = logp(0, lab(0));
  if (S > 1) alpha(0, 1) = logp(0, lab(1));
  for (Eigen::Index t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_sum_exp(a, alpha(t - 1, s - 1));
      if (s >= 2 && lab(s) != blank && lab(s) != lab(s - 2))
        a = log_sum_exp(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + logp(t, lab(s));
    }
  double log_z = alpha(T - 1, S - 1);
  if (S > 1) log_z = log_sum_exp(log_z, alpha(T - 1, S - 2));
  if (!(log_z > kNegInf))
    throw std::domain_error("ctc_loss: no valid alignment path");

  Mat beta = Mat::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = logp(T - 1, lab(S - 1));
  if (S > 1) beta(T - 1, S - 2) = logp(T - 1, lab(S - 2));
  for (Eigen::Index t = T - 2; t >= 0; --t)
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_sum_exp(b, beta(t + 1, s + 1));
      if (s + 2 < S && lab(s) != blank && lab(s) != lab(s + 2))
        b = log_sum_exp(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + logp(t, lab(s));
    }

  Node* n = make(Mat::Constant(1, 1, -log_z));
  auto lab_copy = targets;
  n->backward = [n, logits, lab_copy, blank, alpha, beta, logp, p, log_z, T, C,
                 S] {
    auto lab = [&](std::size_t s) -> int {
      return (s % 2 == 0) ? blank : lab_copy[s / 2];
    };
    // dL/d logp(t,k) = -sum_{s: lab(s)=k} exp(alpha + beta - logp(t,k) - logZ)
    Mat dlogp = Mat::Zero(T, C);
    for (Eigen::Index t = 0; t < T; ++t)
      for (std::size_t s = 0; s < S; ++s) {
        double a = alpha(t, s), b = beta(t, s);
        if (a == -std::numeric_limits<double>::infinity() ||
            b == -std::numeric_limits<double>::infinity())
          continue;
        dlogp(t, lab(s)) -= std::exp(a + b - logp(t, lab(s)) - log_z);
      }
    double g = n->grad(0, 0);
    Mat row_sum = dlogp.rowwise().sum();
    Mat dz = dlogp - (p.array().colwise() * row_sum.col(0).array()).matrix();
    grad_of(logits.node()) += dz * g;
  };
  return Var(n);
}

Var Tape::mean_of(const std::vector<Var>& scalars) {
  double v = 0.0;
  for (const Var& s : scalars) v += s.val()(0, 0);
  v /= static_cast<double>(scalars.size());
  Node* n = make(Mat::Constant(1, 1, v));
  std::size_t k = scalars.size();
  n->backward = [n, scalars, k] {
    double g = n->grad(0, 0) / static_cast<double>(k);
    for (const Var& s : scalars) grad_of(s.node())(0, 0) += g;
  };
  return Var(n);
}

void Tape::backward(Var out) {
  if (out.val().size() != 1)
    throw std::invalid_argument("backward: output must be a scalar");
  grad_of(out.node()).setConstant(1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->grad.size() == 0) continue;  // never reached from the output
    if (n->backward) n->backward();
    if (n->grad_sink) {
      if (n->grad_sink->size() == 0)
        *n->grad_sink = Mat::Zero(n->val.rows(), n->val.cols());
      *n->grad_sink += n->grad;
    }
  }
}

Mat finite_diff(const std::function<double(const Mat&)>& f, const Mat& x,
                double h) {
  Mat g(x.rows(), x.cols());
  Mat xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double orig = xp(i, j);
      xp(i, j) = orig + h;
      double fp = f(xp);
      xp(i, j) = orig - h;
      double fm = f(xp);
      xp(i, j) = orig;
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  return g;
}

}  // namespace waco::ad
