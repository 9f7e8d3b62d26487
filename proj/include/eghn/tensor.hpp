#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eghn/errors.hpp"

namespace eghn {

class Tape;

// Dense row-major matrix of 64-bit floats. Scalars are 1x1, row vectors 1xC.
// A tensor may carry a tape node id, in which case gradients flow to it
// during Tape::backward.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);
  Tensor(int rows, int cols, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);
  static Tensor identity(int n);
  static Tensor filled(int rows, int cols, double v);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool defined() const { return data_ != nullptr; }

  double at(int r, int c) const { return (*data_)[static_cast<size_t>(r) * cols_ + c]; }
  double& at(int r, int c) { return (*data_)[static_cast<size_t>(r) * cols_ + c]; }

  // Value of a 1x1 tensor.
  double value() const;

  const std::vector<double>& data() const { return *data_; }
  std::vector<double>& mutable_data() { return *data_; }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }

  // Same buffer, no tape node.
  Tensor detached() const;
  // Deep copy, no tape node.
  Tensor clone() const;

  bool all_finite() const;
  std::string shape_str() const;

 private:
  friend class Tape;
  int rows_ = 0;
  int cols_ = 0;
  std::shared_ptr<std::vector<double>> data_;
  int node_ = -1;
};

// Gradients keyed by the storage buffer of the watched leaf tensors.
using GradMap = std::unordered_map<const std::vector<double>*, Tensor>;

// Records every operation whose inputs require gradients and replays them in
// reverse for backpropagation. One tape per forward/backward cycle; backward
// clears the tape. A tape constructed with recording=false runs all ops as
// plain arithmetic (used for evaluation).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  // Registers `value` as a differentiable leaf. The returned handle shares
  // the underlying buffer.
  Tensor var(const Tensor& value);

  // --- elementwise / scalar ---
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor silu(const Tensor& a);
  Tensor recip(const Tensor& a);

  // --- linear algebra ---
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  // --- structure ---
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_cols(const Tensor& a, int c0, int c1);
  Tensor reshape(const Tensor& a, int rows, int cols);
  Tensor permute_cols(const Tensor& a, const std::vector<int>& perm);
  Tensor tile_rows(const Tensor& a, int times);
  Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
  Tensor segment_sum_rows(const Tensor& a, const std::vector<int>& seg, int out_rows);
  Tensor gather_entries(const Tensor& a, const std::vector<std::pair<int, int>>& idx);

  // --- reductions ---
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor rowsum(const Tensor& a);
  Tensor colsum(const Tensor& a);

  // --- broadcasting ---
  Tensor add_rowvec(const Tensor& a, const Tensor& v);  // a RxC, v 1xC
  Tensor mul_rowvec(const Tensor& a, const Tensor& v);  // a RxC, v 1xC
  Tensor mul_colvec(const Tensor& a, const Tensor& v);  // a RxC, v Rx1

  // --- rows ---
  Tensor softmax_rows(const Tensor& a);
  // Scales every row to sum 1; all-zero rows stay zero.
  Tensor rownorm_rows(const Tensor& a);

  // --- block ops over stacks of (block x C) node matrices ---
  // x: (B*block)xP, y: (B*block)xQ -> Bx(P*Q); row b = flatten(x_b^T y_b).
  Tensor block_gram(const Tensor& x, const Tensor& y, int block);
  // x: (B*block)xP, h: Bx(P*Q) -> (B*block)xQ; out_b = x_b * reshape(h_b, P, Q).
  Tensor block_matmul_rows(const Tensor& x, const Tensor& h, int block);
  // z: (Bin*block)xC, w: BinxBout -> (Bout*block)xC; out_b = sum_a w[a,b] z_a.
  Tensor block_weighted_sum(const Tensor& z, const Tensor& w, int block);
  // (B*block)xC -> block x C, mean over the B blocks.
  Tensor block_mean_rows(const Tensor& a, int block);

  // Accumulates d(loss)/d(leaf) for every watched leaf, clears the tape and
  // returns the gradients keyed by leaf storage.
  GradMap backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }
  // Backward visit counters from the most recent backward() (one per node).
  const std::vector<int>& last_visit_counts() const { return last_visits_; }

 private:
  struct Node {
    std::function<void()> back;  // empty for leaves
  };

  Tensor make(int rows, int cols, bool track);
  Tensor& grad(int node) { return grads_[static_cast<size_t>(node)]; }
  // Adds g into the gradient slot of `t` if tracked.
  void accumulate(const Tensor& t, const std::vector<double>& g);

  bool recording_ = true;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<int, std::shared_ptr<std::vector<double>>>> leaves_;
  std::vector<int> last_visits_;
};

// Convenience wrappers for untracked tensor arithmetic (no tape state is
// touched when no input is tracked).
namespace ops {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a);
}  // namespace ops

}  // namespace eghn
