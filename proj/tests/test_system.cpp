#include <cmath>

#include "doctest.h"
#include "eghn/system.hpp"
#include "test_helpers.hpp"

using namespace eghn;
using namespace eghn::testing;

namespace {

SystemGraph small_system(Rng& rng, int n_nodes = 4) {
  SystemGraph sys;
  sys.num_nodes = n_nodes;
  sys.spatial_dims = 3;
  sys.roles = {ChannelRole::Position, ChannelRole::Velocity};
  sys.Z = random_tensor(n_nodes * 3, 2, rng);
  sys.h = random_tensor(n_nodes, 2, rng);
  Tensor positions(n_nodes, 3);
  for (int i = 0; i < n_nodes; ++i)
    for (int d = 0; d < 3; ++d) positions.at(i, d) = sys.Z.at(i * 3 + d, 0);
  sys.A_global = build_global_adjacency(positions, std::numeric_limits<double>::infinity());
  sys.A_local = Tensor(n_nodes, n_nodes);
  for (int i = 0; i + 1 < n_nodes; ++i) {
    sys.A_local.at(i, i + 1) = 1.0;
    sys.A_local.at(i + 1, i) = 1.0;
  }
  return sys;
}

Tensor rotation_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Tensor(3, 3, {c, -s, 0, s, c, 0, 0, 0, 1});
}

}  // namespace

TEST_CASE("identity action is bit-exact") {
  Rng rng(1);
  SystemGraph sys = small_system(rng);
  SystemGraph out = apply_action(EuclideanAction::identity(3), sys);
  CHECK(ops::max_abs_diff(out.Z, sys.Z) == 0.0);
  CHECK(ops::max_abs_diff(out.h, sys.h) == 0.0);
}

TEST_CASE("pure translation shifts positions, leaves velocities") {
  Rng rng(2);
  SystemGraph sys = small_system(rng);
  EuclideanAction g = EuclideanAction::identity(3);
  g.translation = Tensor(1, 3, {1.0, -2.0, 0.5});
  SystemGraph out = apply_action(g, sys);
  for (int i = 0; i < sys.num_nodes; ++i) {
    for (int d = 0; d < 3; ++d) {
      CHECK(out.Z.at(i * 3 + d, 0) == sys.Z.at(i * 3 + d, 0) + g.translation.at(0, d));
      CHECK(out.Z.at(i * 3 + d, 1) == sys.Z.at(i * 3 + d, 1));
    }
  }
}

TEST_CASE("two 90-degree rotations equal one 180-degree rotation") {
  Rng rng(3);
  SystemGraph sys = small_system(rng);
  EuclideanAction quarter = EuclideanAction::identity(3);
  quarter.rotation = rotation_z(M_PI / 2.0);
  EuclideanAction half = EuclideanAction::identity(3);
  half.rotation = rotation_z(M_PI);
  SystemGraph twice = apply_action(quarter, apply_action(quarter, sys));
  SystemGraph once = apply_action(half, sys);
  CHECK(ops::max_abs_diff(twice.Z, once.Z) < 1e-12);
}

TEST_CASE("apply_action is a group action") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    SystemGraph sys = small_system(rng);
    EuclideanAction g1 = random_action(3, rng);
    EuclideanAction g2 = random_action(3, rng);
    SystemGraph sequential = apply_action(g2, apply_action(g1, sys));
    SystemGraph composed = apply_action(g2.compose(g1), sys);
    CHECK(ops::max_abs_diff(sequential.Z, composed.Z) < 1e-10);
  }
}

TEST_CASE("permutation relabels states, features and adjacencies") {
  Rng rng(5);
  SystemGraph sys = small_system(rng);
  EuclideanAction g = EuclideanAction::identity(3);
  g.permutation = {2, 0, 3, 1};
  SystemGraph out = apply_action(g, sys);
  for (int i = 0; i < sys.num_nodes; ++i) {
    const int pi = g.permutation[static_cast<size_t>(i)];
    for (int d = 0; d < 3; ++d) CHECK(out.Z.at(pi * 3 + d, 0) == sys.Z.at(i * 3 + d, 0));
    CHECK(out.h.at(pi, 0) == sys.h.at(i, 0));
    for (int j = 0; j < sys.num_nodes; ++j) {
      const int pj = g.permutation[static_cast<size_t>(j)];
      CHECK(out.A_local.at(pi, pj) == sys.A_local.at(i, j));
    }
  }
}

TEST_CASE("non-orthogonal rotation is rejected") {
  Rng rng(6);
  SystemGraph sys = small_system(rng);
  EuclideanAction g = EuclideanAction::identity(3);
  g.rotation.at(0, 0) = 1.5;
  CHECK_THROWS_AS(apply_action(g, sys), NumericError);
}

TEST_CASE("global adjacency: coincident points always connected") {
  Tensor pos(2, 3);  // both at the origin
  Tensor A = build_global_adjacency(pos, 1e-9);
  CHECK(A.at(0, 1) == 1.0);
  CHECK(A.at(1, 0) == 1.0);
  CHECK(A.at(0, 0) == 0.0);
}

TEST_CASE("global adjacency: infinite threshold gives the complete graph") {
  Rng rng(7);
  Tensor pos = random_tensor(4, 3, rng, -5.0, 5.0);
  Tensor A = build_global_adjacency(pos, std::numeric_limits<double>::infinity());
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(A.at(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("global adjacency: collinear points with finite threshold") {
  // Points at 0, 5, 10 on the x axis; threshold 6 connects only neighbors.
  // Hand-checked distance table: d01 = 5, d12 = 5, d02 = 10.
  Tensor pos(3, 3, {0, 0, 0, 5, 0, 0, 10, 0, 0});
  Tensor A = build_global_adjacency(pos, 6.0);
  CHECK(A.at(0, 1) == 1.0);
  CHECK(A.at(1, 2) == 1.0);
  CHECK(A.at(0, 2) == 0.0);
  CHECK(A.at(2, 0) == 0.0);
}

TEST_CASE("global adjacency is invariant under euclidean actions") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor pos = random_tensor(5, 3, rng, -3.0, 3.0);
    EuclideanAction g = random_action(3, rng);
    Tensor moved(5, 3);
    for (int i = 0; i < 5; ++i)
      for (int d = 0; d < 3; ++d) {
        double acc = g.translation.at(0, d);
        for (int e = 0; e < 3; ++e) acc += g.rotation.at(d, e) * pos.at(i, e);
        moved.at(i, d) = acc;
      }
    const double threshold = rng.uniform(0.5, 6.0);
    CHECK(ops::max_abs_diff(build_global_adjacency(pos, threshold),
                            build_global_adjacency(moved, threshold)) == 0.0);
  }
}

TEST_CASE("rescale_adjacency: identity scores reduce to row-normalized A") {
  Tape t;
  // Path graph 1-2-3-4.
  Tensor A(4, 4, {0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0});
  Tensor S = Tensor::identity(4);
  Tensor R = rescale_adjacency(t, A, S);
  for (int i = 0; i < 4; ++i) CHECK(R.at(i, i) == 0.0);
  // Row-normalized path graph, then symmetrized: endpoints keep 1 -> (1 + 0.5)/2.
  CHECK(R.at(0, 1) == doctest::Approx(0.75));
  CHECK(R.at(1, 0) == doctest::Approx(0.75));
  CHECK(R.at(1, 2) == doctest::Approx(0.5));
  CHECK(R.at(0, 2) == 0.0);
}

TEST_CASE("pooled path graph with hard clusters gives [[2,1],[1,2]]") {
  Tape t;
  Tensor A(4, 4, {0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0});
  // Hard one-hot scores from saturated logits: clusters {0,1} and {2,3}.
  Tensor logits(4, 2, {1e6, 0, 1e6, 0, 0, 1e6, 0, 1e6});
  Tensor S = t.softmax_rows(logits);
  Tensor raw = t.matmul(t.matmul(t.transpose(S), A), S);
  CHECK(raw.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(raw.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(raw.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(raw.at(1, 1) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("rescale_adjacency: zero adjacency stays zero") {
  Tape t;
  Tensor A(3, 3);
  Rng rng(9);
  Tape ts(false);
  Tensor S = ts.softmax_rows(random_tensor(3, 2, rng));
  Tensor R = rescale_adjacency(t, A, S);
  for (double v : R.data()) CHECK(v == 0.0);
}

TEST_CASE("rescale_adjacency output is symmetric with zero diagonal") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor A(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) {
        const double v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        A.at(i, j) = v;
        A.at(j, i) = v;
      }
    Tape t;
    Tensor S = t.softmax_rows(random_tensor(5, 3, rng));
    Tensor R = rescale_adjacency(t, A, S);
    for (int i = 0; i < 3; ++i) {
      CHECK(R.at(i, i) == 0.0);
      for (int j = 0; j < 3; ++j) CHECK(R.at(i, j) == doctest::Approx(R.at(j, i)).epsilon(1e-14));
    }
  }
}

TEST_CASE("edge list skips the diagonal and respects support") {
  Tensor A(3, 3, {0.5, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0});
  EdgeList e = edges_from_adjacency(A);
  CHECK(e.count() == 4);  // (0,1), (1,0), (1,2), (2,1); A(0,0) ignored
  CHECK(e.recv[0] == 0);
  CHECK(e.send[0] == 1);
}

TEST_CASE("system graph validation catches asymmetry and diagonals") {
  Rng rng(11);
  SystemGraph sys = small_system(rng);
  sys.validate();
  SystemGraph bad = sys;
  bad.A_local.at(0, 1) = 0.25;  // asymmetric now
  CHECK_THROWS_AS(bad.validate(), DataError);
  SystemGraph diag = sys;
  diag.A_global.at(1, 1) = 1.0;
  CHECK_THROWS_AS(diag.validate(), DataError);
}
