#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eghn/nn.hpp"
#include "eghn/system.hpp"

namespace eghn {

// Message-passing flavors. Generalized passes full directional-matrix
// messages; GmnDegenerate restricts the pair matrix to the difference
// Z_i - Z_j; EgnnRelaxed keeps only the radial interaction; Plain feeds raw
// coordinates through MLPs, as the non-equivariant ablation control.
enum class EmmpMode { Generalized, GmnDegenerate, EgnnRelaxed, Plain };

enum class AdjacencyKind { Local, Global };

struct EmmpConfig {
  int spatial_dims = 3;
  std::vector<ChannelRole> roles;  // channel layout of the graphs this layer sees
  int feat_in = 1;
  int feat_out = 32;
  int hidden = 32;
  int edge_attr_dim = 0;    // data-level per-edge scalars fed into the message MLP
  bool weighted = false;    // append the adjacency entry as an extra edge input
  EmmpMode mode = EmmpMode::Generalized;
  bool recursive = false;   // update velocity first, then integrate position

  int channels() const { return static_cast<int>(roles.size()); }
  void validate() const;
};

// Subtracts the node-mean of Position columns; other columns are untouched.
// Returns the centered stack and the subtracted (masked) mean as an n x m
// matrix for later restoration.
std::pair<Tensor, Tensor> center_states(Tape& tape, const Tensor& Z, const std::vector<ChannelRole>& roles,
                                        int spatial_dims);

class EmmpLayer {
 public:
  EmmpLayer() = default;
  EmmpLayer(const std::string& name, const EmmpConfig& cfg, Rng& rng);

  struct Out {
    Tensor Z;  // (N*n) x m
    Tensor h;  // N x feat_out
  };
  Out forward(Tape& tape, const SystemGraph& sys, AdjacencyKind which) const;

  void collect(std::vector<Parameter*>& out);
  const EmmpConfig& config() const { return cfg_; }
  const Mlp& message_mlp() const { return message_; }
  const Mlp& feature_mlp() const { return feature_; }
  const Mlp& coord_mlp() const { return coord_; }
  const Mlp& velocity_mlp() const { return velocity_; }

 private:
  Out forward_matrix(Tape& tape, const SystemGraph& sys, const Tensor& A) const;  // Generalized / Gmn
  Out forward_egnn(Tape& tape, const SystemGraph& sys, const Tensor& A) const;
  Out forward_plain(Tape& tape, const SystemGraph& sys, const Tensor& A) const;

  // Edge inputs shared by all modes: h_recv, h_send, data attrs, weight.
  std::vector<Tensor> edge_feature_parts(Tape& tape, const SystemGraph& sys, const Tensor& A,
                                         const EdgeList& edges) const;
  Tensor empty_message_features(Tape& tape, const SystemGraph& sys) const;

  EmmpConfig cfg_;
  Mlp message_;   // phi_H (matrix modes) or phi_e (egnn / plain)
  Mlp feature_;   // phi_h
  Mlp coord_;     // phi_x (egnn) / phi_z (plain); unused in matrix modes
  Mlp velocity_;  // phi_v, recursive update only
};

}  // namespace eghn
