#include "eghn/pooling.hpp"

#include <cmath>

#include "eghn/errors.hpp"

namespace eghn {

namespace {

constexpr double kDegenerateClusterTol = 1e-12;
constexpr double kRowSumTol = 1e-8;
// Softmax floor: keeps every cluster mass strictly positive so that the
// mass normalization and its gradients stay bounded for outlier inputs.
// Rows still sum to 1 exactly and the argmax is unchanged.
constexpr double kScoreFloor = 1e-8;

// Expands a 1 x K row of cluster masses into a (K*n) x 1 column of
// reciprocals aligned with pooled state rows.
Tensor cluster_inverse_rows(Tape& tape, const Tensor& colsums, int n) {
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(colsums.cols()) * n);
  for (int k = 0; k < colsums.cols(); ++k)
    for (int d = 0; d < n; ++d) idx.push_back(k);
  return tape.gather_rows(tape.recip(tape.transpose(colsums)), idx);
}

}  // namespace

Tensor pool_adjacency(Tape& tape, const Tensor& A, const Tensor& S) {
  if (A.rows() != A.cols() || A.rows() != S.rows()) {
    throw ShapeError("pool_adjacency: A " + A.shape_str() + " vs S " + S.shape_str());
  }
  return tape.matmul(tape.matmul(tape.transpose(S), A), S);
}

Tensor pool_states(Tape& tape, const Tensor& Z, const Tensor& S, int n) {
  Tensor sums = tape.colsum(S);  // 1 x K cluster masses
  for (int k = 0; k < sums.cols(); ++k) {
    if (sums.at(0, k) < kDegenerateClusterTol) {
      throw DataError("pool_states: degenerate cluster " + std::to_string(k) + " (mass " +
                      std::to_string(sums.at(0, k)) + ")");
    }
  }
  Tensor pooled = tape.block_weighted_sum(Z, S, n);
  return tape.mul_colvec(pooled, cluster_inverse_rows(tape, sums, n));
}

Tensor pool_features(Tape& tape, const Tensor& h, const Tensor& S) {
  Tensor sums = tape.colsum(S);
  for (int k = 0; k < sums.cols(); ++k) {
    if (sums.at(0, k) < kDegenerateClusterTol) {
      throw DataError("pool_features: degenerate cluster " + std::to_string(k));
    }
  }
  return tape.mul_colvec(tape.matmul(tape.transpose(S), h), tape.recip(tape.transpose(sums)));
}

void EPoolConfig::validate() const {
  if (clusters < 1) throw ConfigError("epool: clusters must be >= 1");
  internal.validate();
}

EPoolLayer::EPoolLayer(const std::string& name, const EPoolConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  internal_ = EmmpLayer(name + ".emmp", cfg_.internal, rng);
  // Small final-layer init keeps the initial assignment near uniform.
  score_ = Mlp(name + ".score", {cfg_.internal.feat_out, cfg_.score_hidden, cfg_.clusters}, rng,
               OutputActivation::Identity, 0.1);
}

void EPoolLayer::collect(std::vector<Parameter*>& out) {
  internal_.collect(out);
  score_.collect(out);
}

EPoolLayer::Out EPoolLayer::forward(Tape& tape, const SystemGraph& low, AdjacencyKind internal_adjacency) const {
  if (low.num_nodes < cfg_.clusters) {
    throw ConfigError("epool: " + std::to_string(cfg_.clusters) + " clusters for " +
                      std::to_string(low.num_nodes) + " nodes");
  }
  EmmpLayer::Out updated = internal_.forward(tape, low, internal_adjacency);
  Tensor S = tape.softmax_rows(score_.forward(tape, updated.h));
  S = tape.add(tape.scale(S, 1.0 - cfg_.clusters * kScoreFloor),
               Tensor::filled(low.num_nodes, cfg_.clusters, kScoreFloor));

  Out out;
  out.S = S;
  out.consumed_A_local = low.A_local;
  out.high.num_nodes = cfg_.clusters;
  out.high.spatial_dims = low.spatial_dims;
  out.high.roles = low.roles;
  out.high.Z = pool_states(tape, updated.Z, S, low.spatial_dims);
  out.high.h = pool_features(tape, cfg_.pool_updated_features ? updated.h : low.h, S);
  out.high.A_local = pool_adjacency(tape, low.A_local, S);
  return out;
}

void EUpPoolConfig::validate() const {
  if (spatial_dims <= 0 || feat_low <= 0 || feat_high <= 0 || feat_out <= 0 || hidden <= 0) {
    throw ConfigError("euppool: non-positive dimension");
  }
  if (low_roles.empty() || high_roles.empty()) throw ConfigError("euppool: empty channel layout");
}

EUpPoolLayer::EUpPoolLayer(const std::string& name, const EUpPoolConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int mhat = cfg_.concat_channels();
  const int m_out = static_cast<int>(cfg_.low_roles.size());
  const int in = mhat * mhat + cfg_.feat_low + cfg_.feat_high;
  // One trunk, two heads: feature vector plus per-channel combination
  // coefficients for the centered concatenated states.
  output_ = Mlp(name + ".out", {in, cfg_.hidden, cfg_.feat_out + mhat * m_out}, rng);
}

void EUpPoolLayer::collect(std::vector<Parameter*>& out) { output_.collect(out); }

SystemGraph EUpPoolLayer::forward(Tape& tape, const SystemGraph& high, const Tensor& S,
                                  const SystemGraph& low) const {
  const int n = cfg_.spatial_dims;
  if (low.roles != cfg_.low_roles || high.roles != cfg_.high_roles) {
    throw ShapeError("euppool: channel layout mismatch");
  }
  if (S.rows() != low.num_nodes || S.cols() != high.num_nodes) {
    throw ShapeError("euppool: S " + S.shape_str() + " vs " + std::to_string(low.num_nodes) + " low / " +
                     std::to_string(high.num_nodes) + " high nodes");
  }
  for (int i = 0; i < S.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < S.cols(); ++j) acc += S.at(i, j);
    if (std::abs(acc - 1.0) > kRowSumTol) {
      throw DataError("euppool: score row " + std::to_string(i) + " sums to " + std::to_string(acc));
    }
  }

  // Broadcast: rows of S sum to 1, so no normalization is needed here.
  Tensor Z_agg = tape.block_weighted_sum(high.Z, tape.transpose(S), n);
  Tensor h_agg = tape.matmul(S, high.h);

  auto [low_centered, low_mean] = center_states(tape, low.Z, low.roles, n);
  auto [agg_centered, agg_mean] = center_states(tape, Z_agg, high.roles, n);
  (void)agg_mean;
  Tensor concat = tape.concat_cols({low_centered, agg_centered});
  Tensor gram = tape.scale(tape.block_gram(concat, concat, n), 1.0 / n);
  Tensor heads = output_.forward(tape, tape.concat_cols({gram, low.h, h_agg}));

  const int mhat = cfg_.concat_channels();
  const int m_out = static_cast<int>(cfg_.low_roles.size());
  Tensor h_out = tape.slice_cols(heads, 0, cfg_.feat_out);
  Tensor coeff = tape.slice_cols(heads, cfg_.feat_out, cfg_.feat_out + mhat * m_out);
  Tensor Z_centered = tape.block_matmul_rows(concat, coeff, n);
  // Restore the low-level position mean so absolute positions transform
  // correctly under translations.
  Tensor Z_out = tape.add(Z_centered, tape.tile_rows(low_mean, low.num_nodes));
  if (!Z_out.all_finite() || !h_out.all_finite()) throw NumericError("euppool: non-finite output");

  SystemGraph out;
  out.num_nodes = low.num_nodes;
  out.spatial_dims = n;
  out.roles = low.roles;
  out.Z = Z_out;
  out.h = h_out;
  out.A_local = low.A_local;
  out.A_global = low.A_global;
  out.edge_attrs = low.edge_attrs;
  return out;
}

}  // namespace eghn
