#pragma once

#include <vector>

#include "eghn/tensor.hpp"

namespace eghn {

// Role of one geometric channel. Position columns pick up translations; all
// other directional columns only rotate.
enum class ChannelRole { Position, Velocity, OtherDirectional };

// Per-node stack of m n-dimensional vectors.
struct DirectionalState {
  Tensor Z;  // n x m
  std::vector<ChannelRole> roles;
};

// One level of the hierarchy: node states, scalar features and the two
// adjacency matrices. Values are immutable once constructed.
struct SystemGraph {
  int num_nodes = 0;
  int spatial_dims = 3;
  std::vector<ChannelRole> roles;  // m entries
  Tensor Z;                        // (N * n) x m, node i occupies rows [i*n, (i+1)*n)
  Tensor h;                        // N x c
  Tensor A_local;                  // N x N physical bonds (may carry weights above level 0)
  Tensor A_global;                 // N x N interaction graph
  std::vector<Tensor> edge_attrs;  // data-level per-edge scalars, each N x N symmetric

  int channels() const { return static_cast<int>(roles.size()); }
  int feature_dim() const { return h.defined() ? h.cols() : 0; }
  int position_column() const;
  int velocity_column() const;  // -1 when absent
  DirectionalState state(int i) const;

  // Validates a data-level graph: adjacency symmetry, zero diagonal, finite
  // values, consistent dims. Internally produced (pooled) graphs may carry
  // self-weights on A_local and are not passed through this check.
  void validate() const;
};

// Element of E(n), optionally combined with a node relabeling.
struct EuclideanAction {
  Tensor rotation;             // n x n orthogonal (det +1 or -1)
  Tensor translation;          // 1 x n
  std::vector<int> permutation;  // empty = identity; new_index = permutation[old_index]

  static EuclideanAction identity(int n);
  // this . inner (apply inner first).
  EuclideanAction compose(const EuclideanAction& inner) const;
  void validate() const;  // orthogonality within 1e-10
};

// Applies g to every node state: position columns get R*x + b, other
// directional columns get R*v; h and adjacencies are permuted when a
// permutation is present.
SystemGraph apply_action(const EuclideanAction& g, const SystemGraph& sys);

// Transforms a raw (N*n) x m state stack (helper for probing layer outputs).
Tensor apply_action_states(const EuclideanAction& g, const Tensor& Z, const std::vector<ChannelRole>& roles,
                           int spatial_dims);

// Symmetric 0/1 matrix with zero diagonal; edge iff distance < threshold.
// threshold = +infinity yields the fully connected graph.
Tensor build_global_adjacency(const Tensor& positions /* N x n */, double threshold);

// Row-normalized S^T A S, symmetrized and with the diagonal zeroed. Used to
// carry A_global across hierarchy levels. Differentiable through S and A.
Tensor rescale_adjacency(Tape& tape, const Tensor& A, const Tensor& S);

// Directed edge list from the support of an adjacency matrix (entries above
// 1e-12, diagonal skipped), ordered receiver-major.
struct EdgeList {
  std::vector<int> recv, send;
  int count() const { return static_cast<int>(recv.size()); }
};
EdgeList edges_from_adjacency(const Tensor& A);

}  // namespace eghn
