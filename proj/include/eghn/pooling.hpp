#pragma once

#include <string>
#include <vector>

#include "eghn/emmp.hpp"

namespace eghn {

// Soft pooled adjacency S^T A S and score-weighted pooled states. Split out
// so the score-matrix algebra can be exercised with hand-built S.
Tensor pool_adjacency(Tape& tape, const Tensor& A, const Tensor& S);
// Z: (N*n) x m, S: N x K -> (K*n) x m, rows normalized by cluster mass.
Tensor pool_states(Tape& tape, const Tensor& Z, const Tensor& S, int spatial_dims);
// h: N x c, S: N x K -> K x c, rows normalized by cluster mass.
Tensor pool_features(Tape& tape, const Tensor& h, const Tensor& S);

struct EPoolConfig {
  int clusters = 2;
  EmmpConfig internal;         // generalized mode over A_local by default
  int score_hidden = 32;
  bool pool_updated_features = false;  // pool h' instead of the input h
  void validate() const;
};

// Coarsens an N-node system to K cluster nodes via an internal EMMP, a
// softmax score head and score-weighted averaging.
class EPoolLayer {
 public:
  EPoolLayer() = default;
  EPoolLayer(const std::string& name, const EPoolConfig& cfg, Rng& rng);

  struct Out {
    SystemGraph high;         // K nodes; A_local = S^T A_low S (self-weights kept)
    Tensor S;                 // N x K row-stochastic scores
    Tensor consumed_A_local;  // adjacency of the system the internal EMMP ran on
  };
  Out forward(Tape& tape, const SystemGraph& low, AdjacencyKind internal_adjacency = AdjacencyKind::Local) const;

  void collect(std::vector<Parameter*>& out);
  const EPoolConfig& config() const { return cfg_; }
  const EmmpLayer& internal() const { return internal_; }
  const Mlp& score_mlp() const { return score_; }
  Mlp& score_mlp() { return score_; }

 private:
  EPoolConfig cfg_;
  EmmpLayer internal_;
  Mlp score_;
};

struct EUpPoolConfig {
  int spatial_dims = 3;
  std::vector<ChannelRole> low_roles, high_roles;
  int feat_low = 32, feat_high = 32, feat_out = 32;
  int hidden = 32;
  void validate() const;
  int concat_channels() const { return static_cast<int>(low_roles.size() + high_roles.size()); }
};

// Maps a high-level system back onto the low-level node set: score-weighted
// broadcast followed by an equivariant integration of the concatenated
// centered states. The output keeps the low level's channel layout and
// adjacencies.
class EUpPoolLayer {
 public:
  EUpPoolLayer() = default;
  EUpPoolLayer(const std::string& name, const EUpPoolConfig& cfg, Rng& rng);

  SystemGraph forward(Tape& tape, const SystemGraph& high, const Tensor& S, const SystemGraph& low) const;

  void collect(std::vector<Parameter*>& out);
  const EUpPoolConfig& config() const { return cfg_; }
  const Mlp& output_mlp() const { return output_; }

 private:
  EUpPoolConfig cfg_;
  Mlp output_;  // shared trunk, feature head and coefficient head concatenated
};

}  // namespace eghn
