#include "eghn/system.hpp"

#include <cmath>
#include <limits>

#include "eghn/errors.hpp"

namespace eghn {

namespace {
constexpr double kEdgeSupportTol = 1e-12;
constexpr double kOrthogonalityTol = 1e-10;
}  // namespace

int SystemGraph::position_column() const {
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == ChannelRole::Position) return static_cast<int>(i);
  }
  throw ConfigError("system graph has no Position channel");
}

int SystemGraph::velocity_column() const {
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == ChannelRole::Velocity) return static_cast<int>(i);
  }
  return -1;
}

DirectionalState SystemGraph::state(int i) const {
  DirectionalState s;
  s.roles = roles;
  s.Z = Tensor(spatial_dims, channels());
  for (int d = 0; d < spatial_dims; ++d)
    for (int c = 0; c < channels(); ++c) s.Z.at(d, c) = Z.at(i * spatial_dims + d, c);
  return s;
}

void SystemGraph::validate() const {
  if (num_nodes <= 0) throw DataError("system graph: no nodes");
  if (roles.empty()) throw DataError("system graph: no directional channels");
  if (Z.rows() != num_nodes * spatial_dims || Z.cols() != channels()) {
    throw ShapeError("system graph: Z is " + Z.shape_str() + ", expected (" +
                     std::to_string(num_nodes * spatial_dims) + "," + std::to_string(channels()) + ")");
  }
  if (h.defined() && h.rows() != num_nodes) {
    throw ShapeError("system graph: h is " + h.shape_str() + " for " + std::to_string(num_nodes) + " nodes");
  }
  if (!Z.all_finite() || (h.defined() && !h.all_finite())) {
    throw NumericError("system graph: non-finite state");
  }
  int n_pos = 0;
  for (auto r : roles) {
    if (r == ChannelRole::Position) ++n_pos;
  }
  if (n_pos != 1) throw DataError("system graph: expected exactly one Position channel");
  for (const Tensor* A : {&A_local, &A_global}) {
    if (!A->defined()) continue;
    if (A->rows() != num_nodes || A->cols() != num_nodes) {
      throw ShapeError("system graph: adjacency " + A->shape_str() + " for " + std::to_string(num_nodes) +
                       " nodes");
    }
    for (int i = 0; i < num_nodes; ++i) {
      if (A->at(i, i) != 0.0) throw DataError("system graph: adjacency has nonzero diagonal");
      for (int j = 0; j < num_nodes; ++j) {
        if (std::abs(A->at(i, j) - A->at(j, i)) > 1e-12) {
          throw DataError("system graph: adjacency not symmetric");
        }
      }
    }
  }
}

EuclideanAction EuclideanAction::identity(int n) {
  EuclideanAction g;
  g.rotation = Tensor::identity(n);
  g.translation = Tensor(1, n);
  return g;
}

void EuclideanAction::validate() const {
  const int n = rotation.rows();
  if (rotation.cols() != n) throw ShapeError("action: rotation " + rotation.shape_str() + " not square");
  if (translation.rows() != 1 || translation.cols() != n) {
    throw ShapeError("action: translation " + translation.shape_str() + " vs rotation " + rotation.shape_str());
  }
  Tensor rtr = ops::matmul(ops::transpose(rotation), rotation);
  double dev = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dev = std::max(dev, std::abs(rtr.at(i, j) - (i == j ? 1.0 : 0.0)));
  if (dev > kOrthogonalityTol) {
    throw NumericError("action: rotation not orthogonal (deviation " + std::to_string(dev) + ")");
  }
}

EuclideanAction EuclideanAction::compose(const EuclideanAction& inner) const {
  EuclideanAction g;
  g.rotation = ops::matmul(rotation, inner.rotation);
  // x -> R2 (R1 x + b1) + b2
  g.translation = ops::add(ops::transpose(ops::matmul(rotation, ops::transpose(inner.translation))), translation);
  if (!permutation.empty() || !inner.permutation.empty()) {
    const int n = !permutation.empty() ? static_cast<int>(permutation.size())
                                       : static_cast<int>(inner.permutation.size());
    auto lift = [n](const std::vector<int>& p, int i) { return p.empty() ? i : p[i]; };
    g.permutation.resize(n);
    for (int i = 0; i < n; ++i) g.permutation[i] = lift(permutation, lift(inner.permutation, i));
  }
  return g;
}

Tensor apply_action_states(const EuclideanAction& g, const Tensor& Z, const std::vector<ChannelRole>& roles,
                           int n) {
  const int total = Z.rows();
  if (total % n != 0) throw ShapeError("apply_action_states: " + Z.shape_str() + " with n " + std::to_string(n));
  const int num_nodes = total / n;
  const int m = Z.cols();
  Tensor out(total, m);
  for (int i = 0; i < num_nodes; ++i) {
    for (int c = 0; c < m; ++c) {
      for (int d = 0; d < n; ++d) {
        double acc = 0.0;
        for (int e = 0; e < n; ++e) acc += g.rotation.at(d, e) * Z.at(i * n + e, c);
        if (roles[static_cast<size_t>(c)] == ChannelRole::Position) acc += g.translation.at(0, d);
        out.at(i * n + d, c) = acc;
      }
    }
  }
  if (!g.permutation.empty()) {
    Tensor perm(total, m);
    for (int i = 0; i < num_nodes; ++i) {
      const int pi = g.permutation[static_cast<size_t>(i)];
      for (int d = 0; d < n; ++d)
        for (int c = 0; c < m; ++c) perm.at(pi * n + d, c) = out.at(i * n + d, c);
    }
    return perm;
  }
  return out;
}

SystemGraph apply_action(const EuclideanAction& g, const SystemGraph& sys) {
  g.validate();
  if (g.rotation.rows() != sys.spatial_dims) {
    throw ShapeError("apply_action: rotation " + g.rotation.shape_str() + " vs spatial dims " +
                     std::to_string(sys.spatial_dims));
  }
  SystemGraph out = sys;
  out.Z = apply_action_states(g, sys.Z, sys.roles, sys.spatial_dims);
  if (!g.permutation.empty()) {
    const auto& p = g.permutation;
    if (sys.h.defined()) {
      Tensor h(sys.h.rows(), sys.h.cols());
      for (int i = 0; i < sys.num_nodes; ++i)
        for (int j = 0; j < sys.h.cols(); ++j) h.at(p[static_cast<size_t>(i)], j) = sys.h.at(i, j);
      out.h = h;
    }
    auto permute_matrix = [&p, &sys](const Tensor& A) {
      Tensor out_m(sys.num_nodes, sys.num_nodes);
      for (int i = 0; i < sys.num_nodes; ++i)
        for (int j = 0; j < sys.num_nodes; ++j)
          out_m.at(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]) = A.at(i, j);
      return out_m;
    };
    if (sys.A_local.defined()) out.A_local = permute_matrix(sys.A_local);
    if (sys.A_global.defined()) out.A_global = permute_matrix(sys.A_global);
    out.edge_attrs.clear();
    for (const auto& attr : sys.edge_attrs) out.edge_attrs.push_back(permute_matrix(attr));
  }
  return out;
}

Tensor build_global_adjacency(const Tensor& positions, double threshold) {
  if (threshold <= 0.0) throw ConfigError("build_global_adjacency: threshold must be positive");
  const int num_nodes = positions.rows();
  const int n = positions.cols();
  Tensor A(num_nodes, num_nodes);
  for (int i = 0; i < num_nodes; ++i) {
    for (int j = i + 1; j < num_nodes; ++j) {
      double d2 = 0.0;
      for (int d = 0; d < n; ++d) {
        const double diff = positions.at(i, d) - positions.at(j, d);
        d2 += diff * diff;
      }
      const bool edge = std::isinf(threshold) || std::sqrt(d2) < threshold;
      if (edge) {
        A.at(i, j) = 1.0;
        A.at(j, i) = 1.0;
      }
    }
  }
  return A;
}

Tensor rescale_adjacency(Tape& tape, const Tensor& A, const Tensor& S) {
  if (A.rows() != A.cols() || S.rows() != A.rows()) {
    throw ShapeError("rescale_adjacency: A " + A.shape_str() + " vs S " + S.shape_str());
  }
  Tensor pooled = tape.matmul(tape.matmul(tape.transpose(S), A), S);
  Tensor normed = tape.rownorm_rows(pooled);
  Tensor sym = tape.scale(tape.add(normed, tape.transpose(normed)), 0.5);
  const int k = S.cols();
  Tensor mask(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) mask.at(i, j) = (i == j) ? 0.0 : 1.0;
  return tape.mul(sym, mask);
}

EdgeList edges_from_adjacency(const Tensor& A) {
  if (A.rows() != A.cols()) throw ShapeError("edges_from_adjacency: " + A.shape_str() + " not square");
  EdgeList e;
  for (int i = 0; i < A.rows(); ++i) {
    for (int j = 0; j < A.cols(); ++j) {
      if (i == j) continue;
      if (std::abs(A.at(i, j)) > kEdgeSupportTol) {
        e.recv.push_back(i);
        e.send.push_back(j);
      }
    }
  }
  return e;
}

}  // namespace eghn
