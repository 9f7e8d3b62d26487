#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "eghn/pooling.hpp"

namespace eghn {

// Architecture and optimization settings for one model. Defaults follow the
// (3,3,1) simulation row of the shipped configuration catalogue.
struct EghnConfig {
  int spatial_dims = 3;
  std::vector<ChannelRole> roles = {ChannelRole::Position, ChannelRole::Velocity};
  int node_feat_in = 1;
  int edge_attr_dim = 2;
  int feature_dim = 32;
  int hidden_dim = 32;
  int levels = 1;                 // number of E-Pool / E-UpPool pairs (0 = plain EGNN stack)
  std::vector<int> clusters = {3};  // K per level
  int encoder_layers = 4;         // external EMMPs before each E-Pool
  int decoder_layers = 2;         // external EMMPs before each E-UpPool
  bool recursive = true;
  double lambda_connectivity = 4.0;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  double gradient_clip = 10.0;  // global-norm clip; 0 disables
  int batch_size = 50;
  double global_threshold = std::numeric_limits<double>::infinity();
  bool supervise_velocity = false;
  std::string pool_features = "input";  // input | updated

  // Ablation switches.
  EmmpMode external_mode = EmmpMode::EgnnRelaxed;
  EmmpMode internal_mode = EmmpMode::Generalized;
  AdjacencyKind external_adjacency = AdjacencyKind::Global;
  AdjacencyKind internal_adjacency = AdjacencyKind::Local;

  void validate() const;
  std::string to_json() const;
  static EghnConfig from_json(const std::string& text);
};

// Encoder-decoder hierarchy: per level, external EMMPs over A_global feed an
// E-Pool; the decoder mirrors the levels with external EMMPs and E-UpPools,
// each consuming the score matrix and cached system of its matched E-Pool.
class EghnModel {
 public:
  EghnModel(const EghnConfig& cfg, uint64_t seed);

  struct Forward {
    SystemGraph out;
    std::vector<Tensor> scores;             // S per level
    std::vector<Tensor> pooled_adjacencies; // A_local consumed by each E-Pool's internal EMMP
  };
  Forward forward(Tape& tape, const SystemGraph& in) const;

  // Eq.-level objective: summed squared position error plus the connectivity
  // term lambda * sum_l |rownorm(S^T A S) - I|_F^2.
  Tensor loss(Tape& tape, const Forward& fwd, const Tensor& target_positions,
              const Tensor* target_velocities = nullptr) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  int64_t parameter_count() const;
  const EghnConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Submodule access for chained-composition checks.
  const std::vector<std::vector<EmmpLayer>>& encoder_layers() const { return enc_; }
  const std::vector<EPoolLayer>& pool_layers() const { return pools_; }
  std::vector<EPoolLayer>& pool_layers() { return pools_; }
  const std::vector<std::vector<EmmpLayer>>& decoder_layers() const { return dec_; }
  const std::vector<EUpPoolLayer>& uppool_layers() const { return uppools_; }

  void save(const std::string& path) const;
  static EghnModel load(const std::string& path);

 private:
  EghnConfig cfg_;
  uint64_t seed_ = 0;
  std::vector<std::vector<EmmpLayer>> enc_;  // [level][depth]
  std::vector<EPoolLayer> pools_;
  std::vector<std::vector<EmmpLayer>> dec_;  // [level][depth], level L-1 first
  std::vector<EUpPoolLayer> uppools_;
};

// Deterministic construction from config + seed.
EghnModel build_from_config(const EghnConfig& cfg, uint64_t seed);

}  // namespace eghn
