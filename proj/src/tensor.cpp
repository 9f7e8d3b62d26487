#include "eghn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace eghn {

namespace {

std::string shape_of(int r, int c) {
  std::ostringstream os;
  os << "(" << r << "," << c << ")";
  return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + a.shape_str() + " vs " + b.shape_str());
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor::Tensor(int rows, int cols)
    : rows_(rows), cols_(cols), data_(std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols, 0.0)) {}

Tensor::Tensor(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols) {
  if (static_cast<size_t>(rows) * cols != values.size()) {
    throw ShapeError("tensor: " + shape_of(rows, cols) + " needs " +
                     std::to_string(static_cast<size_t>(rows) * cols) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, {v}); }

Tensor Tensor::row(std::vector<double> values) {
  const int c = static_cast<int>(values.size());
  return Tensor(1, c, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
  const int r = static_cast<int>(values.size());
  return Tensor(r, 1, std::move(values));
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::filled(int rows, int cols, double v) {
  return Tensor(rows, cols, std::vector<double>(static_cast<size_t>(rows) * cols, v));
}

double Tensor::value() const {
  if (rows_ != 1 || cols_ != 1) {
    throw ShapeError("value: tensor is " + shape_str() + ", expected (1,1)");
  }
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(rows_, cols_);
  if (data_) *t.data_ = *data_;
  return t;
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_of(rows_, cols_); }

// ---------------------------------------------------------------------------

Tensor Tape::make(int rows, int cols, bool track) {
  Tensor t(rows, cols);
  if (track && recording_) {
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{});
    grads_.emplace_back(rows, cols);
  }
  return t;
}

void Tape::accumulate(const Tensor& t, const std::vector<double>& g) {
  if (!t.tracked()) return;
  auto& slot = grad(t.node()).mutable_data();
  for (size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

Tensor Tape::var(const Tensor& value) {
  if (!value.defined()) throw ShapeError("var: undefined tensor");
  if (!recording_) return value.detached();
  Tensor t = value.detached();
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{});
  grads_.emplace_back(value.rows(), value.cols());
  leaves_.emplace_back(t.node_, value.storage());
  return t;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const bool track = a.tracked() || b.tracked();
  Tensor out = make(a.rows(), a.cols(), track);
  auto& o = out.mutable_data();
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, b, id]() {
      const auto& g = grad(id).data();
      accumulate(a, g);
      accumulate(b, g);
    };
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const bool track = a.tracked() || b.tracked();
  Tensor out = make(a.rows(), a.cols(), track);
  auto& o = out.mutable_data();
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, b, id]() {
      const auto& g = grad(id).data();
      accumulate(a, g);
      if (b.tracked()) {
        auto& slot = grad(b.node()).mutable_data();
        for (size_t i = 0; i < g.size(); ++i) slot[i] -= g[i];
      }
    };
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const bool track = a.tracked() || b.tracked();
  Tensor out = make(a.rows(), a.cols(), track);
  auto& o = out.mutable_data();
  const auto& x = a.data();
  const auto& y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, b, id]() {
      const auto& g = grad(id).data();
      if (a.tracked()) {
        auto& slot = grad(a.node()).mutable_data();
        const auto& y2 = b.data();
        for (size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * y2[i];
      }
      if (b.tracked()) {
        auto& slot = grad(b.node()).mutable_data();
        const auto& x2 = a.data();
        for (size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * x2[i];
      }
    };
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  auto& o = out.mutable_data();
  const auto& x = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, c, id]() {
      const auto& g = grad(id).data();
      auto& slot = grad(a.node()).mutable_data();
      for (size_t i = 0; i < g.size(); ++i) slot[i] += c * g[i];
    };
  }
  return out;
}

Tensor Tape::silu(const Tensor& a) {
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  auto& o = out.mutable_data();
  const auto& x = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * sigmoid(x[i]);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const auto& g = grad(id).data();
      auto& slot = grad(a.node()).mutable_data();
      const auto& x2 = a.data();
      for (size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(x2[i]);
        slot[i] += g[i] * s * (1.0 + x2[i] * (1.0 - s));
      }
    };
  }
  return out;
}

Tensor Tape::recip(const Tensor& a) {
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  auto& o = out.mutable_data();
  const auto& x = a.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / x[i];
  if (out.tracked()) {
    const int id = out.node();
    Tensor saved = out.detached();
    nodes_[id].back = [this, a, saved, id]() {
      const auto& g = grad(id).data();
      auto& slot = grad(a.node()).mutable_data();
      const auto& r = saved.data();
      for (size_t i = 0; i < g.size(); ++i) slot[i] -= g[i] * r[i] * r[i];
    };
  }
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape " + a.shape_str() + " vs " + b.shape_str());
  }
  const int n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = make(n, m, a.tracked() || b.tracked());
  {
    auto& o = out.mutable_data();
    const auto& x = a.data();
    const auto& y = b.data();
    for (int i = 0; i < n; ++i) {
      double* orow = o.data() + static_cast<size_t>(i) * m;
      const double* xrow = x.data() + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const double xv = xrow[p];
        if (xv == 0.0) continue;
        const double* yrow = y.data() + static_cast<size_t>(p) * m;
        for (int j = 0; j < m; ++j) orow[j] += xv * yrow[j];
      }
    }
  }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, b, n, k, m, id]() {
      const auto& g = grad(id).data();
      if (a.tracked()) {
        auto& da = grad(a.node()).mutable_data();
        const auto& y = b.data();
        // dA = G * B^T
        for (int i = 0; i < n; ++i) {
          const double* grow = g.data() + static_cast<size_t>(i) * m;
          double* darow = da.data() + static_cast<size_t>(i) * k;
          for (int p = 0; p < k; ++p) {
            const double* yrow = y.data() + static_cast<size_t>(p) * m;
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += grow[j] * yrow[j];
            darow[p] += acc;
          }
        }
      }
      if (b.tracked()) {
        auto& db = grad(b.node()).mutable_data();
        const auto& x = a.data();
        // dB = A^T * G
        for (int i = 0; i < n; ++i) {
          const double* xrow = x.data() + static_cast<size_t>(i) * k;
          const double* grow = g.data() + static_cast<size_t>(i) * m;
          for (int p = 0; p < k; ++p) {
            const double xv = xrow[p];
            if (xv == 0.0) continue;
            double* dbrow = db.data() + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) dbrow[j] += xv * grow[j];
          }
        }
      }
    };
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  Tensor out = make(a.cols(), a.rows(), a.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + j] += g.at(j, i);
    };
  }
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int r = parts[0].rows();
  int total = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: shape " + parts[0].shape_str() + " vs " + p.shape_str());
    }
    total += p.cols();
    track = track || p.tracked();
  }
  Tensor out = make(r, total, track);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  if (out.tracked()) {
    const int id = out.node();
    std::vector<Tensor> saved = parts;
    nodes_[id].back = [this, saved, r, id]() {
      const Tensor& g = grad(id);
      int off2 = 0;
      for (const auto& p : saved) {
        if (p.tracked()) {
          auto& slot = grad(p.node()).mutable_data();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < p.cols(); ++j)
              slot[static_cast<size_t>(i) * p.cols() + j] += g.at(i, off2 + j);
        }
        off2 += p.cols();
      }
    };
  }
  return out;
}

Tensor Tape::slice_cols(const Tensor& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + a.shape_str());
  }
  const int w = c1 - c0;
  Tensor out = make(a.rows(), w, a.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = a.at(i, c0 + j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, c0, w, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < w; ++j) slot[static_cast<size_t>(i) * a.cols() + c0 + j] += g.at(i, j);
    };
  }
  return out;
}

Tensor Tape::reshape(const Tensor& a, int rows, int cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: " + a.shape_str() + " to " + shape_of(rows, cols));
  }
  Tensor out = make(rows, cols, a.tracked());
  out.mutable_data() = a.data();
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const auto& g = grad(id).data();
      accumulate(a, g);
    };
  }
  return out;
}

Tensor Tape::permute_cols(const Tensor& a, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != a.cols()) {
    throw ShapeError("permute_cols: perm size " + std::to_string(perm.size()) + " vs " + a.shape_str());
  }
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, perm[j]);
  if (out.tracked()) {
    const int id = out.node();
    std::vector<int> p = perm;
    nodes_[id].back = [this, a, p, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + p[j]] += g.at(i, j);
    };
  }
  return out;
}

Tensor Tape::tile_rows(const Tensor& a, int times) {
  Tensor out = make(a.rows() * times, a.cols(), a.tracked());
  for (int t = 0; t < times; ++t)
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < a.cols(); ++j) out.at(t * a.rows() + i, j) = a.at(i, j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, times, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int t = 0; t < times; ++t)
        for (int i = 0; i < a.rows(); ++i)
          for (int j = 0; j < a.cols(); ++j)
            slot[static_cast<size_t>(i) * a.cols() + j] += g.at(t * a.rows() + i, j);
    };
  }
  return out;
}

Tensor Tape::gather_rows(const Tensor& a, const std::vector<int>& idx) {
  for (int i : idx) {
    if (i < 0 || i >= a.rows()) throw ShapeError("gather_rows: index " + std::to_string(i) + " in " + a.shape_str());
  }
  Tensor out = make(static_cast<int>(idx.size()), a.cols(), a.tracked());
  for (size_t k = 0; k < idx.size(); ++k)
    for (int j = 0; j < a.cols(); ++j) out.at(static_cast<int>(k), j) = a.at(idx[k], j);
  if (out.tracked()) {
    const int id = out.node();
    std::vector<int> ix = idx;
    nodes_[id].back = [this, a, ix, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (size_t k = 0; k < ix.size(); ++k)
        for (int j = 0; j < a.cols(); ++j)
          slot[static_cast<size_t>(ix[k]) * a.cols() + j] += g.at(static_cast<int>(k), j);
    };
  }
  return out;
}

Tensor Tape::segment_sum_rows(const Tensor& a, const std::vector<int>& seg, int out_rows) {
  if (static_cast<int>(seg.size()) != a.rows()) {
    throw ShapeError("segment_sum_rows: segment count " + std::to_string(seg.size()) + " vs " + a.shape_str());
  }
  for (int s : seg) {
    if (s < 0 || s >= out_rows) throw ShapeError("segment_sum_rows: segment " + std::to_string(s) + " out of range");
  }
  Tensor out = make(out_rows, a.cols(), a.tracked());
  for (int k = 0; k < a.rows(); ++k)
    for (int j = 0; j < a.cols(); ++j) out.at(seg[k], j) += a.at(k, j);
  if (out.tracked()) {
    const int id = out.node();
    std::vector<int> sg = seg;
    nodes_[id].back = [this, a, sg, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int k = 0; k < a.rows(); ++k)
        for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(k) * a.cols() + j] += g.at(sg[k], j);
    };
  }
  return out;
}

Tensor Tape::gather_entries(const Tensor& a, const std::vector<std::pair<int, int>>& idx) {
  Tensor out = make(static_cast<int>(idx.size()), 1, a.tracked());
  for (size_t k = 0; k < idx.size(); ++k) out.at(static_cast<int>(k), 0) = a.at(idx[k].first, idx[k].second);
  if (out.tracked()) {
    const int id = out.node();
    auto ix = idx;
    nodes_[id].back = [this, a, ix, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (size_t k = 0; k < ix.size(); ++k)
        slot[static_cast<size_t>(ix[k].first) * a.cols() + ix[k].second] += g.at(static_cast<int>(k), 0);
    };
  }
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  Tensor out = make(1, 1, a.tracked());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.mutable_data()[0] = acc;
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const double g = grad(id).data()[0];
      auto& slot = grad(a.node()).mutable_data();
      for (auto& v : slot) v += g;
    };
  }
  return out;
}

Tensor Tape::mean(const Tensor& a) {
  Tensor out = make(1, 1, a.tracked());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.mutable_data()[0] = acc / a.size();
  if (out.tracked()) {
    const int id = out.node();
    const double inv = 1.0 / a.size();
    nodes_[id].back = [this, a, inv, id]() {
      const double g = grad(id).data()[0] * inv;
      auto& slot = grad(a.node()).mutable_data();
      for (auto& v : slot) v += g;
    };
  }
  return out;
}

Tensor Tape::rowsum(const Tensor& a) {
  Tensor out = make(a.rows(), 1, a.tracked());
  for (int i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += a.at(i, j);
    out.at(i, 0) = acc;
  }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + j] += g.at(i, 0);
    };
  }
  return out;
}

Tensor Tape::colsum(const Tensor& a) {
  Tensor out = make(1, a.cols(), a.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(0, j) += a.at(i, j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + j] += g.at(0, j);
    };
  }
  return out;
}

Tensor Tape::add_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    throw ShapeError("add_rowvec: shape " + a.shape_str() + " vs " + v.shape_str());
  }
  Tensor out = make(a.rows(), a.cols(), a.tracked() || v.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, v, id]() {
      const Tensor& g = grad(id);
      accumulate(a, g.data());
      if (v.tracked()) {
        auto& slot = grad(v.node()).mutable_data();
        for (int i = 0; i < a.rows(); ++i)
          for (int j = 0; j < a.cols(); ++j) slot[j] += g.at(i, j);
      }
    };
  }
  return out;
}

Tensor Tape::mul_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    throw ShapeError("mul_rowvec: shape " + a.shape_str() + " vs " + v.shape_str());
  }
  Tensor out = make(a.rows(), a.cols(), a.tracked() || v.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * v.at(0, j);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, v, id]() {
      const Tensor& g = grad(id);
      if (a.tracked()) {
        auto& slot = grad(a.node()).mutable_data();
        for (int i = 0; i < a.rows(); ++i)
          for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + j] += g.at(i, j) * v.at(0, j);
      }
      if (v.tracked()) {
        auto& slot = grad(v.node()).mutable_data();
        for (int i = 0; i < a.rows(); ++i)
          for (int j = 0; j < a.cols(); ++j) slot[j] += g.at(i, j) * a.at(i, j);
      }
    };
  }
  return out;
}

Tensor Tape::mul_colvec(const Tensor& a, const Tensor& v) {
  if (v.cols() != 1 || v.rows() != a.rows()) {
    throw ShapeError("mul_colvec: shape " + a.shape_str() + " vs " + v.shape_str());
  }
  Tensor out = make(a.rows(), a.cols(), a.tracked() || v.tracked());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * v.at(i, 0);
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, v, id]() {
      const Tensor& g = grad(id);
      if (a.tracked()) {
        auto& slot = grad(a.node()).mutable_data();
        for (int i = 0; i < a.rows(); ++i)
          for (int j = 0; j < a.cols(); ++j) slot[static_cast<size_t>(i) * a.cols() + j] += g.at(i, j) * v.at(i, 0);
      }
      if (v.tracked()) {
        auto& slot = grad(v.node()).mutable_data();
        for (int i = 0; i < a.rows(); ++i) {
          double acc = 0.0;
          for (int j = 0; j < a.cols(); ++j) acc += g.at(i, j) * a.at(i, j);
          slot[i] += acc;
        }
      }
    };
  }
  return out;
}

Tensor Tape::softmax_rows(const Tensor& a) {
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  for (int i = 0; i < a.rows(); ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < a.cols(); ++j) mx = std::max(mx, a.at(i, j));
    double z = 0.0;
    for (int j = 0; j < a.cols(); ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) /= z;
  }
  if (out.tracked()) {
    const int id = out.node();
    Tensor saved = out.detached();
    nodes_[id].back = [this, a, saved, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i) {
        double dot = 0.0;
        for (int j = 0; j < a.cols(); ++j) dot += g.at(i, j) * saved.at(i, j);
        for (int j = 0; j < a.cols(); ++j)
          slot[static_cast<size_t>(i) * a.cols() + j] += saved.at(i, j) * (g.at(i, j) - dot);
      }
    };
  }
  return out;
}

Tensor Tape::rownorm_rows(const Tensor& a) {
  Tensor out = make(a.rows(), a.cols(), a.tracked());
  std::vector<double> sums(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < a.cols(); ++j) acc += a.at(i, j);
    sums[i] = acc;
    if (acc != 0.0) {
      for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) / acc;
    }
  }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, sums, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      for (int i = 0; i < a.rows(); ++i) {
        const double s = sums[i];
        if (s == 0.0) continue;
        double dot = 0.0;
        for (int j = 0; j < a.cols(); ++j) dot += g.at(i, j) * a.at(i, j);
        for (int j = 0; j < a.cols(); ++j)
          slot[static_cast<size_t>(i) * a.cols() + j] += g.at(i, j) / s - dot / (s * s);
      }
    };
  }
  return out;
}

Tensor Tape::block_gram(const Tensor& x, const Tensor& y, int block) {
  if (x.rows() != y.rows() || x.rows() % block != 0) {
    throw ShapeError("block_gram: shape " + x.shape_str() + " vs " + y.shape_str() + " block " + std::to_string(block));
  }
  const int nb = x.rows() / block;
  const int p = x.cols(), q = y.cols();
  Tensor out = make(nb, p * q, x.tracked() || y.tracked());
  for (int b = 0; b < nb; ++b) {
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < q; ++c) {
        double acc = 0.0;
        for (int d = 0; d < block; ++d) acc += x.at(b * block + d, r) * y.at(b * block + d, c);
        out.at(b, r * q + c) = acc;
      }
    }
  }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, x, y, block, nb, p, q, id]() {
      const Tensor& g = grad(id);
      if (x.tracked()) {
        auto& slot = grad(x.node()).mutable_data();
        for (int b = 0; b < nb; ++b)
          for (int d = 0; d < block; ++d)
            for (int r = 0; r < p; ++r) {
              double acc = 0.0;
              for (int c = 0; c < q; ++c) acc += g.at(b, r * q + c) * y.at(b * block + d, c);
              slot[static_cast<size_t>(b * block + d) * p + r] += acc;
            }
      }
      if (y.tracked()) {
        auto& slot = grad(y.node()).mutable_data();
        for (int b = 0; b < nb; ++b)
          for (int d = 0; d < block; ++d)
            for (int c = 0; c < q; ++c) {
              double acc = 0.0;
              for (int r = 0; r < p; ++r) acc += g.at(b, r * q + c) * x.at(b * block + d, r);
              slot[static_cast<size_t>(b * block + d) * q + c] += acc;
            }
      }
    };
  }
  return out;
}

Tensor Tape::block_matmul_rows(const Tensor& x, const Tensor& h, int block) {
  if (x.rows() % block != 0 || x.rows() / block != h.rows() || h.cols() % x.cols() != 0) {
    throw ShapeError("block_matmul_rows: shape " + x.shape_str() + " vs " + h.shape_str() + " block " +
                     std::to_string(block));
  }
  const int nb = h.rows();
  const int p = x.cols();
  const int q = h.cols() / p;
  Tensor out = make(nb * block, q, x.tracked() || h.tracked());
  for (int b = 0; b < nb; ++b)
    for (int d = 0; d < block; ++d)
      for (int c = 0; c < q; ++c) {
        double acc = 0.0;
        for (int r = 0; r < p; ++r) acc += x.at(b * block + d, r) * h.at(b, r * q + c);
        out.at(b * block + d, c) = acc;
      }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, x, h, block, nb, p, q, id]() {
      const Tensor& g = grad(id);
      if (x.tracked()) {
        auto& slot = grad(x.node()).mutable_data();
        for (int b = 0; b < nb; ++b)
          for (int d = 0; d < block; ++d)
            for (int r = 0; r < p; ++r) {
              double acc = 0.0;
              for (int c = 0; c < q; ++c) acc += g.at(b * block + d, c) * h.at(b, r * q + c);
              slot[static_cast<size_t>(b * block + d) * p + r] += acc;
            }
      }
      if (h.tracked()) {
        auto& slot = grad(h.node()).mutable_data();
        for (int b = 0; b < nb; ++b)
          for (int r = 0; r < p; ++r)
            for (int c = 0; c < q; ++c) {
              double acc = 0.0;
              for (int d = 0; d < block; ++d) acc += x.at(b * block + d, r) * g.at(b * block + d, c);
              slot[static_cast<size_t>(b) * (p * q) + r * q + c] += acc;
            }
      }
    };
  }
  return out;
}

Tensor Tape::block_weighted_sum(const Tensor& z, const Tensor& w, int block) {
  if (z.rows() % block != 0 || z.rows() / block != w.rows()) {
    throw ShapeError("block_weighted_sum: shape " + z.shape_str() + " vs " + w.shape_str() + " block " +
                     std::to_string(block));
  }
  const int bin = w.rows(), bout = w.cols(), cdim = z.cols();
  Tensor out = make(bout * block, cdim, z.tracked() || w.tracked());
  for (int a = 0; a < bin; ++a)
    for (int b = 0; b < bout; ++b) {
      const double wv = w.at(a, b);
      if (wv == 0.0) continue;
      for (int d = 0; d < block; ++d)
        for (int c = 0; c < cdim; ++c) out.at(b * block + d, c) += wv * z.at(a * block + d, c);
    }
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, z, w, block, bin, bout, cdim, id]() {
      const Tensor& g = grad(id);
      if (z.tracked()) {
        auto& slot = grad(z.node()).mutable_data();
        for (int a = 0; a < bin; ++a)
          for (int b = 0; b < bout; ++b) {
            const double wv = w.at(a, b);
            if (wv == 0.0) continue;
            for (int d = 0; d < block; ++d)
              for (int c = 0; c < cdim; ++c)
                slot[static_cast<size_t>(a * block + d) * cdim + c] += wv * g.at(b * block + d, c);
          }
      }
      if (w.tracked()) {
        auto& slot = grad(w.node()).mutable_data();
        for (int a = 0; a < bin; ++a)
          for (int b = 0; b < bout; ++b) {
            double acc = 0.0;
            for (int d = 0; d < block; ++d)
              for (int c = 0; c < cdim; ++c) acc += z.at(a * block + d, c) * g.at(b * block + d, c);
            slot[static_cast<size_t>(a) * bout + b] += acc;
          }
      }
    };
  }
  return out;
}

Tensor Tape::block_mean_rows(const Tensor& a, int block) {
  if (a.rows() % block != 0) {
    throw ShapeError("block_mean_rows: " + a.shape_str() + " block " + std::to_string(block));
  }
  const int nb = a.rows() / block;
  Tensor out = make(block, a.cols(), a.tracked());
  for (int b = 0; b < nb; ++b)
    for (int d = 0; d < block; ++d)
      for (int j = 0; j < a.cols(); ++j) out.at(d, j) += a.at(b * block + d, j);
  for (auto& v : out.mutable_data()) v /= nb;
  if (out.tracked()) {
    const int id = out.node();
    nodes_[id].back = [this, a, block, nb, id]() {
      const Tensor& g = grad(id);
      auto& slot = grad(a.node()).mutable_data();
      const double inv = 1.0 / nb;
      for (int b = 0; b < nb; ++b)
        for (int d = 0; d < block; ++d)
          for (int j = 0; j < a.cols(); ++j)
            slot[static_cast<size_t>(b * block + d) * a.cols() + j] += inv * g.at(d, j);
    };
  }
  return out;
}

GradMap Tape::backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss is " + loss.shape_str() + ", expected scalar (1,1)");
  }
  if (!loss.tracked()) {
    throw NumericError("backward: loss does not depend on any watched leaf");
  }
  if (nodes_.empty()) {
    throw NumericError("backward: tape is empty");
  }
  grad(loss.node()).mutable_data()[0] = 1.0;
  last_visits_.assign(nodes_.size(), 0);
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    ++last_visits_[static_cast<size_t>(id)];
    if (nodes_[static_cast<size_t>(id)].back) nodes_[static_cast<size_t>(id)].back();
  }
  GradMap out;
  for (const auto& [node, storage] : leaves_) {
    const Tensor& g = grads_[static_cast<size_t>(node)];
    auto it = out.find(storage.get());
    if (it == out.end()) {
      out.emplace(storage.get(), g.clone());
    } else {
      auto& acc = it->second.mutable_data();
      const auto& src = g.data();
      for (size_t i = 0; i < src.size(); ++i) acc[i] += src[i];
    }
  }
  nodes_.clear();
  grads_.clear();
  leaves_.clear();
  return out;
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape t(false);
  return t.matmul(a, b);
}

Tensor transpose(const Tensor& a) {
  Tape t(false);
  return t.transpose(a);
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape t(false);
  return t.add(a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape t(false);
  return t.sub(a, b);
}

Tensor scale(const Tensor& a, double c) {
  Tape t(false);
  return t.scale(a, c);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_abs_diff: shape " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double frobenius_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace ops

}  // namespace eghn
