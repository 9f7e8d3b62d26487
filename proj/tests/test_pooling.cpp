#include <cmath>
#include <vector>

#include "doctest.h"
#include "eghn/pooling.hpp"
#include "test_helpers.hpp"

using namespace eghn;
using namespace eghn::testing;

namespace {

using Vec = std::vector<double>;

Vec ref_mlp(const Mlp& mlp, Vec x) {
  const auto& ws = mlp.weights();
  const auto& bs = mlp.biases();
  for (size_t l = 0; l < ws.size(); ++l) {
    const Tensor& w = ws[l].value;
    const Tensor& b = bs[l].value;
    Vec y(static_cast<size_t>(w.cols()), 0.0);
    for (int j = 0; j < w.cols(); ++j) {
      double acc = b.at(0, j);
      for (int i = 0; i < w.rows(); ++i) acc += x[static_cast<size_t>(i)] * w.at(i, j);
      y[static_cast<size_t>(j)] = acc;
    }
    if (l + 1 < ws.size()) {
      for (auto& v : y) v = v / (1.0 + std::exp(-v));
    }
    x = std::move(y);
  }
  return x;
}

SystemGraph random_system(int n_nodes, Rng& rng, int feat_dim = 3, int attr_dim = 0) {
  SystemGraph sys;
  sys.num_nodes = n_nodes;
  sys.spatial_dims = 3;
  sys.roles = {ChannelRole::Position, ChannelRole::Velocity};
  sys.Z = random_tensor(n_nodes * 3, 2, rng);
  sys.h = random_tensor(n_nodes, feat_dim, rng);
  sys.A_local = Tensor(n_nodes, n_nodes);
  for (int i = 0; i + 1 < n_nodes; ++i) {
    sys.A_local.at(i, i + 1) = 1.0;
    sys.A_local.at(i + 1, i) = 1.0;
  }
  sys.A_global = Tensor(n_nodes, n_nodes);
  for (int i = 0; i < n_nodes; ++i)
    for (int j = 0; j < n_nodes; ++j) sys.A_global.at(i, j) = i == j ? 0.0 : 1.0;
  for (int a = 0; a < attr_dim; ++a) {
    Tensor attr(n_nodes, n_nodes);
    for (int i = 0; i < n_nodes; ++i)
      for (int j = i + 1; j < n_nodes; ++j) {
        const double v = rng.uniform(-1.0, 1.0);
        attr.at(i, j) = v;
        attr.at(j, i) = v;
      }
    sys.edge_attrs.push_back(attr);
  }
  return sys;
}

EPoolConfig pool_config(int clusters, int feat_dim = 3) {
  EPoolConfig cfg;
  cfg.clusters = clusters;
  cfg.score_hidden = 6;
  cfg.internal.spatial_dims = 3;
  cfg.internal.roles = {ChannelRole::Position, ChannelRole::Velocity};
  cfg.internal.feat_in = feat_dim;
  cfg.internal.feat_out = feat_dim;
  cfg.internal.hidden = 6;
  cfg.internal.edge_attr_dim = 0;
  cfg.internal.mode = EmmpMode::Generalized;
  return cfg;
}

EUpPoolConfig uppool_config(int feat_dim = 3) {
  EUpPoolConfig cfg;
  cfg.spatial_dims = 3;
  cfg.low_roles = {ChannelRole::Position, ChannelRole::Velocity};
  cfg.high_roles = {ChannelRole::Position, ChannelRole::Velocity};
  cfg.feat_low = feat_dim;
  cfg.feat_high = feat_dim;
  cfg.feat_out = feat_dim;
  cfg.hidden = 6;
  return cfg;
}

Tensor hard_scores(Tape& tape, const std::vector<int>& clusters, int k) {
  Tensor logits(static_cast<int>(clusters.size()), k);
  for (size_t i = 0; i < clusters.size(); ++i) logits.at(static_cast<int>(i), clusters[i]) = 1e6;
  return tape.softmax_rows(logits);
}

}  // namespace

TEST_CASE("score matrix rows sum to one") {
  Rng rng(1);
  EPoolLayer pool("pool", pool_config(3), rng);
  SystemGraph sys = random_system(7, rng);
  Tape t(false);
  auto out = pool.forward(t, sys);
  CHECK(out.S.rows() == 7);
  CHECK(out.S.cols() == 3);
  for (int i = 0; i < out.S.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < out.S.cols(); ++j) {
      acc += out.S.at(i, j);
      CHECK(out.S.at(i, j) > 0.0);
      CHECK(out.S.at(i, j) < 1.0);
    }
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
  CHECK(out.high.num_nodes == 3);
}

TEST_CASE("K=1 pools to the mean of the updated states") {
  Rng rng(2);
  EPoolLayer pool("pool", pool_config(1), rng);
  SystemGraph sys = random_system(5, rng);
  Tape t(false);
  auto out = pool.forward(t, sys);
  for (int i = 0; i < 5; ++i) CHECK(out.S.at(i, 0) == 1.0);
  // Z_high must be the arithmetic mean of the internal EMMP's output.
  auto updated = pool.internal().forward(t, sys, AdjacencyKind::Local);
  for (int d = 0; d < 3; ++d)
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int i = 0; i < 5; ++i) mean += updated.Z.at(i * 3 + d, c);
      mean /= 5.0;
      CHECK(out.high.Z.at(d, c) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("translation moves pooled positions by exactly b") {
  Rng rng(3);
  EPoolLayer pool("pool", pool_config(2), rng);
  SystemGraph sys = random_system(6, rng);
  EuclideanAction g = EuclideanAction::identity(3);
  g.translation = Tensor(1, 3, {3.0, -1.0, 7.0});
  Tape t1(false), t2(false);
  auto base = pool.forward(t1, sys);
  auto moved = pool.forward(t2, apply_action(g, sys));
  for (int kk = 0; kk < 2; ++kk)
    for (int d = 0; d < 3; ++d) {
      CHECK(moved.high.Z.at(kk * 3 + d, 0) ==
            doctest::Approx(base.high.Z.at(kk * 3 + d, 0) + g.translation.at(0, d)).epsilon(1e-10));
      CHECK(moved.high.Z.at(kk * 3 + d, 1) == doctest::Approx(base.high.Z.at(kk * 3 + d, 1)).epsilon(1e-10));
    }
}

TEST_CASE("hard one-hot scores: pooled adjacency and member means") {
  Tape t;
  // Path graph 1-2-3-4 with clusters {0,1} and {2,3}.
  Tensor A(4, 4, {0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0});
  Tensor S = hard_scores(t, {0, 0, 1, 1}, 2);
  Tensor pooled = pool_adjacency(t, A, S);
  CHECK(pooled.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(pooled.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pooled.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pooled.at(1, 1) == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(4);
  Tensor Z = random_tensor(12, 2, rng);
  Tensor high = pool_states(t, Z, S, 3);
  for (int d = 0; d < 3; ++d)
    for (int c = 0; c < 2; ++c) {
      CHECK(high.at(d, c) == doctest::Approx(0.5 * (Z.at(d, c) + Z.at(3 + d, c))).epsilon(1e-12));
      CHECK(high.at(3 + d, c) == doctest::Approx(0.5 * (Z.at(6 + d, c) + Z.at(9 + d, c))).epsilon(1e-12));
    }
}

TEST_CASE("degenerate cluster mass is rejected") {
  Tape t;
  Tensor Z(6, 2);
  Tensor S(2, 2, {1.0, 0.0, 1.0, 0.0});  // cluster 1 empty
  CHECK_THROWS_AS(pool_states(t, Z, S, 3), DataError);
}

TEST_CASE("uppool: K=1 broadcasts the single high node") {
  Rng rng(5);
  EUpPoolLayer up("up", uppool_config(), rng);
  SystemGraph low = random_system(4, rng);
  SystemGraph high = random_system(1, rng);
  high.A_local = Tensor(1, 1);
  high.A_global = Tensor(1, 1);
  Tensor S = Tensor::filled(4, 1, 1.0);
  Tape t(false);
  // Z_agg_i = Z_high_0 for every i; verify through the centered concat: the
  // aggregate block of the gram equals the centered high state (zero),
  // easiest checked by translation: shifting the high node moves nothing
  // after centering, so the output changes only through the restored low
  // mean. Directly: compare against a manual broadcast.
  Tensor Zagg = t.block_weighted_sum(high.Z, t.transpose(S), 3);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d)
      for (int c = 0; c < 2; ++c) CHECK(Zagg.at(i * 3 + d, c) == high.Z.at(d, c));
  SystemGraph out = up.forward(t, high, S, low);
  CHECK(out.num_nodes == 4);
  CHECK(out.h.cols() == 3);
}

TEST_CASE("uppool: rows must sum to one") {
  Rng rng(6);
  EUpPoolLayer up("up", uppool_config(), rng);
  SystemGraph low = random_system(4, rng);
  SystemGraph high = random_system(2, rng);
  Tensor S(4, 2, {0.5, 0.5, 0.9, 0.2, 0.5, 0.5, 0.5, 0.5});  // bad row 1
  Tape t(false);
  CHECK_THROWS_AS(up.forward(t, high, S, low), DataError);
}

TEST_CASE("uppool: translating high positions shifts the aggregate by b") {
  Rng rng(7);
  SystemGraph high = random_system(3, rng);
  Tape t(false);
  Tensor S = t.softmax_rows(random_tensor(5, 3, rng));
  EuclideanAction g = EuclideanAction::identity(3);
  g.translation = Tensor(1, 3, {2.0, 4.0, -3.0});
  Tensor base = t.block_weighted_sum(high.Z, t.transpose(S), 3);
  Tensor moved = t.block_weighted_sum(apply_action(g, high).Z, t.transpose(S), 3);
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 3; ++d) {
      CHECK(moved.at(i * 3 + d, 0) == doctest::Approx(base.at(i * 3 + d, 0) + g.translation.at(0, d)).epsilon(1e-10));
      CHECK(moved.at(i * 3 + d, 1) == doctest::Approx(base.at(i * 3 + d, 1)).epsilon(1e-10));
    }
}

TEST_CASE("frozen-weight transcription of the uppool equations") {
  Rng rng(8);
  const int feat = 3;
  EUpPoolLayer up("up", uppool_config(feat), rng);
  SystemGraph low = random_system(3, rng, feat);
  SystemGraph high = random_system(2, rng, feat);
  Tape ts(false);
  Tensor S = ts.softmax_rows(random_tensor(3, 2, rng));
  Tape t(false);
  SystemGraph out = up.forward(t, high, S, low);

  // Straight-line reference: aggregate, center, gram, two-headed MLP,
  // combine, restore low position mean.
  const int n = 3, m_low = 2, m_high = 2, mhat = 4;
  for (int i = 0; i < 3; ++i) {
    double Zagg[3][2] = {};
    Vec hagg(static_cast<size_t>(feat), 0.0);
    for (int j = 0; j < 2; ++j) {
      const double s = S.at(i, j);
      for (int d = 0; d < n; ++d)
        for (int c = 0; c < m_high; ++c) Zagg[d][c] += s * high.Z.at(j * 3 + d, c);
      for (int f = 0; f < feat; ++f) hagg[static_cast<size_t>(f)] += s * high.h.at(j, f);
    }
    // Means over nodes (position columns only).
    double low_mean[3] = {}, agg_mean[3] = {};
    for (int d = 0; d < n; ++d) {
      for (int ii = 0; ii < 3; ++ii) low_mean[d] += low.Z.at(ii * 3 + d, 0) / 3.0;
      // aggregate mean over the three low-level rows of Zagg
    }
    // Aggregate mean needs all nodes' Zagg; recompute globally.
    double Zagg_all[3][3][2] = {};
    for (int ii = 0; ii < 3; ++ii)
      for (int j = 0; j < 2; ++j) {
        const double s = S.at(ii, j);
        for (int d = 0; d < n; ++d)
          for (int c = 0; c < m_high; ++c) Zagg_all[ii][d][c] += s * high.Z.at(j * 3 + d, c);
      }
    for (int d = 0; d < n; ++d)
      for (int ii = 0; ii < 3; ++ii) agg_mean[d] += Zagg_all[ii][d][0] / 3.0;

    double Zhat[3][4];
    for (int d = 0; d < n; ++d) {
      Zhat[d][0] = low.Z.at(i * 3 + d, 0) - low_mean[d];
      Zhat[d][1] = low.Z.at(i * 3 + d, 1);
      Zhat[d][2] = Zagg[d][0] - agg_mean[d];
      Zhat[d][3] = Zagg[d][1];
    }
    Vec in;
    for (int a = 0; a < mhat; ++a)
      for (int b = 0; b < mhat; ++b) {
        double acc = 0.0;
        for (int d = 0; d < n; ++d) acc += Zhat[d][a] * Zhat[d][b];
        in.push_back(acc / 3.0);
      }
    for (int f = 0; f < feat; ++f) in.push_back(low.h.at(i, f));
    for (double v : hagg) in.push_back(v);
    Vec heads = ref_mlp(up.output_mlp(), in);
    for (int f = 0; f < feat; ++f) CHECK(out.h.at(i, f) == doctest::Approx(heads[static_cast<size_t>(f)]).epsilon(1e-12));
    for (int d = 0; d < n; ++d)
      for (int c = 0; c < m_low; ++c) {
        double acc = 0.0;
        for (int a = 0; a < mhat; ++a) acc += Zhat[d][a] * heads[static_cast<size_t>(feat + a * m_low + c)];
        if (c == 0) acc += low_mean[d];
        CHECK(out.Z.at(i * 3 + d, c) == doctest::Approx(acc).epsilon(1e-11));
      }
  }
}

TEST_CASE("full pipeline equivariance: uppool after pool") {
  Rng rng(9);
  const int feat = 3;
  EPoolLayer pool("pool", pool_config(2, feat), rng);
  EUpPoolLayer up("up", uppool_config(feat), rng);
  SystemGraph sys = random_system(6, rng, feat);
  auto run = [&](const SystemGraph& in) {
    Tape t(false);
    auto pooled = pool.forward(t, in);
    return up.forward(t, pooled.high, pooled.S, in);
  };
  SystemGraph base = run(sys);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    EuclideanAction g = random_action(3, rng);
    SystemGraph moved = run(apply_action(g, sys));
    Tensor expect = apply_action_states(g, base.Z, sys.roles, 3);
    worst = std::max(worst, equivariance_residual(moved.Z, expect));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("permutation covariance of pooling") {
  Rng rng(10);
  const int feat = 3;
  EPoolLayer pool("pool", pool_config(2, feat), rng);
  SystemGraph sys = random_system(5, rng, feat);
  EuclideanAction g = EuclideanAction::identity(3);
  g.permutation = {4, 2, 0, 1, 3};
  Tape t1(false), t2(false);
  auto base = pool.forward(t1, sys);
  auto permuted = pool.forward(t2, apply_action(g, sys));
  // S rows permute with the nodes; the high-level system is unchanged.
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 2; ++k)
      CHECK(permuted.S.at(g.permutation[static_cast<size_t>(i)], k) == doctest::Approx(base.S.at(i, k)).epsilon(1e-12));
  CHECK(ops::max_abs_diff(permuted.high.Z, base.high.Z) < 1e-11);
  CHECK(ops::max_abs_diff(permuted.high.h, base.high.h) < 1e-11);
}

TEST_CASE("gradients reach low-level inputs and the score head") {
  Rng rng(11);
  const int feat = 3;
  EPoolLayer pool("pool", pool_config(2, feat), rng);
  EUpPoolLayer up("up", uppool_config(feat), rng);
  SystemGraph sys = random_system(5, rng, feat);
  Tensor Z_in = sys.Z;
  Tape t;
  sys.Z = t.var(Z_in);
  auto pooled = pool.forward(t, sys);
  SystemGraph out = up.forward(t, pooled.high, pooled.S, sys);
  Tensor loss = t.sum(t.mul(out.Z, out.Z));
  auto grads = t.backward(loss);
  double z_grad = 0.0;
  for (double v : grads.at(Z_in.storage().get()).data()) z_grad += std::abs(v);
  CHECK(z_grad > 0.0);
  std::vector<Parameter*> params;
  EPoolLayer& p = const_cast<EPoolLayer&>(pool);
  p.score_mlp().collect(params);
  for (auto* param : params) {
    double total = 0.0;
    for (double v : grads.at(param->value.storage().get()).data()) total += std::abs(v);
    CHECK(total > 0.0);
  }
}
