// Reverse-mode automatic differentiation over Eigen double matrices.
// A Tape owns every node created during one forward pass; backward()
// walks the creation order in reverse. Parameters attach an external
// gradient sink so one tape step can accumulate into the optimizer state.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace waco::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat val;
  Mat grad;                       // same shape as val, zero-initialized lazily
  std::function<void()> backward; // empty for leaves
  Mat* grad_sink = nullptr;       // external accumulator (parameters)
};

class Var {
 public:
  Var() = default;
  explicit Var(Node* n) : n_(n) {}
  const Mat& val() const { return n_->val; }
  Mat& grad() const { return n_->grad; }
  Node* node() const { return n_; }
  Eigen::Index rows() const { return n_->val.rows(); }
  Eigen::Index cols() const { return n_->val.cols(); }
  explicit operator bool() const { return n_ != nullptr; }

 private:
  Node* n_ = nullptr;
};

enum class Pooling { kMean, kMax, kSum };

class Tape {
 public:
  explicit Tape(std::uint64_t dropout_seed = 0) : rng_(dropout_seed) {}

  Var leaf(Mat v, Mat* grad_sink = nullptr);
  Var constant(Mat v) { return leaf(std::move(v), nullptr); }
  Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);      // a * b^T
  Var add_row(Var x, Var bias);     // bias broadcast over rows, bias is 1 x d
  Var relu(Var x);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);
  Var softmax_rows(Var x, const Mat* add_mask = nullptr);
  Var slice_cols(Var x, Eigen::Index c0, Eigen::Index w);
  Var concat_cols(const std::vector<Var>& xs);
  Var vstack(const std::vector<Var>& rows);
  Var gather_rows(Var table, const std::vector<int>& ids);
  // Sliding windows of `kernel` rows with the given stride, zero padded past
  // the end; output row t is the concatenation of rows [t*stride, t*stride+kernel).
  Var window_gather(Var x, int kernel, int stride);
  Var pool_range(Var x, Eigen::Index r0, Eigen::Index r1, Pooling mode); // rows [r0, r1], inclusive
  Var row_normalize(Var x);         // each row divided by its L2 norm
  Var dropout(Var x, double p);     // identity when p == 0
  // Mean over rows i of (logsumexp_j z_ij - z_ii) for a square score matrix.
  Var nce_diag_loss(Var scores);
  Var ce_label_smooth(Var logits, const std::vector<int>& targets, double epsilon);
  // CTC negative log-likelihood; logits are T x C with `blank` a column index.
  Var ctc_loss(Var logits, const std::vector<int>& targets, int blank);
  Var mean_of(const std::vector<Var>& scalars); // 1x1 vars

  // Seeds d(out)/d(out) = 1 and propagates to every leaf and grad sink.
  void backward(Var out);

  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  Node* make(Mat v);
  std::vector<std::unique_ptr<Node>> nodes_;
  std::mt19937_64 rng_;
};

// Central finite differences for d(f)/d(x) where f returns a scalar.
Mat finite_diff(const std::function<double(const Mat&)>& f, const Mat& x,
                double h = 1e-5);

}  // namespace waco::ad
