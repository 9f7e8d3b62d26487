#include <cmath>

#include "doctest.h"
#include "eghn/tensor.hpp"
#include "test_helpers.hpp"

using namespace eghn;
using namespace eghn::testing;

namespace {

// Fixed random projection so every op reduces to a scalar loss.
Tensor make_probe(int rows, int cols, Rng& rng) { return random_tensor(rows, cols, rng, -1.0, 1.0); }

double projected(Tape& tape, const Tensor& out, const Tensor& probe) {
  return tape.sum(tape.mul(out, probe)).value();
}

// Gradient check harness: builds loss = sum(op(x) * probe) and compares the
// gradient of every input entry against central finite differences.
void check_op(const char* name, int rows, int cols, uint64_t seed,
              const std::function<Tensor(Tape&, const Tensor&)>& op, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(rows, cols, rng, lo, hi);
    Tape probe_tape(false);
    Tensor probe = make_probe(op(probe_tape, x).rows(), op(probe_tape, x).cols(), rng);
    auto loss_value = [&]() {
      Tape t(false);
      return projected(t, op(t, x), probe);
    };
    auto loss_node = [&](Tape& t, const Tensor& leaf) { return t.sum(t.mul(op(t, leaf), probe)); };
    const double err = max_grad_rel_err(x, loss_value, loss_node);
    INFO(name << " trial " << trial);
    CHECK(err < 1e-6);
  }
}

}  // namespace

TEST_CASE("matmul identity and known values") {
  Tape t(false);
  Tensor a(2, 2, {1, 2, 3, 4});
  Tensor r = t.matmul(a, Tensor::identity(2));
  CHECK(ops::max_abs_diff(r, a) == 0.0);
  Tensor b(2, 2, {5, 6, 7, 8});
  Tensor p = t.matmul(a, b);
  CHECK(p.at(0, 0) == 19.0);
  CHECK(p.at(0, 1) == 22.0);
  CHECK(p.at(1, 0) == 43.0);
  CHECK(p.at(1, 1) == 50.0);
}

TEST_CASE("softmax of a symmetric row splits evenly") {
  Tape t(false);
  Tensor r = t.softmax_rows(Tensor(1, 2, {0.0, 0.0}));
  CHECK(r.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  double rowsum = r.at(0, 0) + r.at(0, 1);
  CHECK(std::abs(rowsum - 1.0) < 1e-12);
}

TEST_CASE("silu fixes zero") {
  Tape t(false);
  CHECK(t.silu(Tensor::scalar(0.0)).value() == 0.0);
  // silu(x) = x * sigmoid(x)
  CHECK(t.silu(Tensor::scalar(1.5)).value() == doctest::Approx(1.5 / (1.0 + std::exp(-1.5))).epsilon(1e-15));
}

TEST_CASE("shape mismatches name both shapes") {
  Tape t;
  Tensor a(2, 3), b(3, 2);
  CHECK_THROWS_WITH_AS(t.add(a, b), "add: shape (2,3) vs (3,2)", ShapeError);
  CHECK_THROWS_WITH_AS(t.matmul(a, a), "matmul: shape (2,3) vs (2,3)", ShapeError);
}

TEST_CASE("d/dx x*x at 3 equals 6") {
  Tape t;
  Tensor x = Tensor::scalar(3.0);
  Tensor leaf = t.var(x);
  Tensor loss = t.mul(leaf, leaf);
  auto grads = t.backward(loss);
  CHECK(grads.at(x.storage().get()).value() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  Tensor x = t.var(Tensor(2, 2, {1, 2, 3, 4}));
  Tensor y = t.add(x, x);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
}

TEST_CASE("backward needs a tracked loss") {
  Tape t;
  Tensor c = Tensor::scalar(1.0);
  CHECK_THROWS_AS(t.backward(c), NumericError);
}

TEST_CASE("tape replay visits every node exactly once") {
  Tape t;
  Tensor x = t.var(Tensor::scalar(2.0));
  Tensor y = t.mul(x, x);
  Tensor z = t.add(y, y);
  t.backward(z);
  const auto& visits = t.last_visit_counts();
  CHECK(visits.size() == 3);
  for (int v : visits) CHECK(v == 1);
  CHECK(t.size() == 0);  // cleared
}

TEST_CASE("gradients accumulate when a leaf is watched twice") {
  Tensor x = Tensor::scalar(1.5);
  Tape t;
  Tensor a = t.var(x);
  Tensor b = t.var(x);
  Tensor loss = t.add(t.mul(a, a), t.scale(b, 3.0));  // x^2 + 3x -> 2x + 3 = 6
  auto grads = t.backward(loss);
  CHECK(grads.at(x.storage().get()).value() == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("forward pass is deterministic for a fixed seed") {
  auto run = []() {
    Rng rng(1234);
    Tape t(false);
    Tensor a = random_tensor(4, 5, rng);
    Tensor b = random_tensor(5, 3, rng);
    return t.silu(t.matmul(a, b));
  };
  Tensor r1 = run();
  Tensor r2 = run();
  CHECK(ops::max_abs_diff(r1, r2) == 0.0);
}

TEST_CASE("gradient check: elementwise and scalar ops") {
  check_op("add", 3, 4, 11, [](Tape& t, const Tensor& x) { return t.add(x, x); });
  check_op("sub", 3, 4, 12, [](Tape& t, const Tensor& x) {
    Tensor c = Tensor::filled(3, 4, 0.7);
    return t.sub(x, t.mul(x, c));
  });
  check_op("mul", 3, 4, 13, [](Tape& t, const Tensor& x) { return t.mul(x, t.add(x, x)); });
  check_op("scale", 3, 4, 14, [](Tape& t, const Tensor& x) { return t.scale(x, -1.7); });
  check_op("silu", 3, 4, 15, [](Tape& t, const Tensor& x) { return t.silu(x); });
  check_op("recip", 3, 4, 16, [](Tape& t, const Tensor& x) { return t.recip(x); }, 0.5, 2.5);
}

TEST_CASE("gradient check: linear algebra") {
  Rng rng(17);
  Tensor w = random_tensor(4, 3, rng);
  check_op("matmul-left", 3, 4, 18, [&](Tape& t, const Tensor& x) { return t.matmul(x, w); });
  Tensor a = random_tensor(3, 4, rng);
  check_op("matmul-right", 4, 3, 19, [&](Tape& t, const Tensor& x) { return t.matmul(a, x); });
  check_op("matmul-both", 3, 3, 20, [](Tape& t, const Tensor& x) { return t.matmul(x, x); });
  check_op("transpose", 3, 4, 21, [](Tape& t, const Tensor& x) { return t.transpose(x); });
}

TEST_CASE("gradient check: structure ops") {
  check_op("concat_cols", 3, 4, 22, [](Tape& t, const Tensor& x) {
    return t.concat_cols({x, t.scale(x, 2.0), x});
  });
  check_op("slice_cols", 3, 5, 23, [](Tape& t, const Tensor& x) { return t.slice_cols(x, 1, 4); });
  check_op("reshape", 3, 4, 24, [](Tape& t, const Tensor& x) { return t.reshape(x, 2, 6); });
  check_op("permute_cols", 2, 4, 25, [](Tape& t, const Tensor& x) {
    return t.permute_cols(x, {3, 0, 2, 1});
  });
  check_op("tile_rows", 2, 3, 26, [](Tape& t, const Tensor& x) { return t.tile_rows(x, 3); });
  check_op("gather_rows", 4, 3, 27, [](Tape& t, const Tensor& x) {
    return t.gather_rows(x, {0, 2, 2, 3, 1, 0});
  });
  check_op("segment_sum_rows", 6, 3, 28, [](Tape& t, const Tensor& x) {
    return t.segment_sum_rows(x, {0, 1, 1, 2, 0, 2}, 3);
  });
  check_op("gather_entries", 4, 4, 29, [](Tape& t, const Tensor& x) {
    return t.gather_entries(x, {{0, 1}, {3, 2}, {0, 1}, {2, 2}});
  });
}

TEST_CASE("gradient check: reductions and broadcasts") {
  check_op("sum", 3, 4, 30, [](Tape& t, const Tensor& x) { return t.sum(x); });
  check_op("mean", 3, 4, 31, [](Tape& t, const Tensor& x) { return t.mean(x); });
  check_op("rowsum", 3, 4, 32, [](Tape& t, const Tensor& x) { return t.rowsum(x); });
  check_op("colsum", 3, 4, 33, [](Tape& t, const Tensor& x) { return t.colsum(x); });
  Rng rng(34);
  Tensor rv = random_tensor(1, 4, rng);
  Tensor cv = random_tensor(3, 1, rng);
  check_op("add_rowvec", 3, 4, 35, [&](Tape& t, const Tensor& x) { return t.add_rowvec(x, rv); });
  check_op("mul_rowvec", 3, 4, 36, [&](Tape& t, const Tensor& x) { return t.mul_rowvec(x, rv); });
  check_op("mul_colvec", 3, 4, 37, [&](Tape& t, const Tensor& x) { return t.mul_colvec(x, cv); });
  Tensor base = random_tensor(3, 4, rng);
  check_op("add_rowvec-vec", 1, 4, 38, [&](Tape& t, const Tensor& x) { return t.add_rowvec(base, x); });
  check_op("mul_colvec-vec", 3, 1, 39, [&](Tape& t, const Tensor& x) { return t.mul_colvec(base, x); });
}

TEST_CASE("gradient check: row softmax and row normalization") {
  check_op("softmax_rows", 3, 4, 40, [](Tape& t, const Tensor& x) { return t.softmax_rows(x); });
  // Positive entries keep row sums away from zero.
  check_op("rownorm_rows", 3, 4, 41, [](Tape& t, const Tensor& x) { return t.rownorm_rows(x); }, 0.2, 2.0);
}

TEST_CASE("gradient check: block ops") {
  Rng rng(42);
  Tensor other = random_tensor(6, 2, rng);
  check_op("block_gram-left", 6, 3, 43, [&](Tape& t, const Tensor& x) { return t.block_gram(x, other, 3); });
  check_op("block_gram-sym", 6, 2, 44, [](Tape& t, const Tensor& x) { return t.block_gram(x, x, 3); });
  Tensor h = random_tensor(2, 6, rng);
  check_op("block_matmul-x", 6, 3, 45, [&](Tape& t, const Tensor& x) { return t.block_matmul_rows(x, h, 3); });
  Tensor x6 = random_tensor(6, 3, rng);
  check_op("block_matmul-h", 2, 6, 46, [&](Tape& t, const Tensor& x) { return t.block_matmul_rows(x6, x, 3); });
  Tensor w = random_tensor(2, 4, rng, 0.1, 1.0);
  check_op("block_weighted-z", 6, 3, 47, [&](Tape& t, const Tensor& x) { return t.block_weighted_sum(x, w, 3); });
  Tensor z = random_tensor(6, 3, rng);
  check_op("block_weighted-w", 2, 4, 48, [&](Tape& t, const Tensor& x) { return t.block_weighted_sum(z, x, 3); });
  check_op("block_mean_rows", 9, 2, 49, [](Tape& t, const Tensor& x) { return t.block_mean_rows(x, 3); });
}

TEST_CASE("rownorm keeps all-zero rows at zero") {
  Tape t;
  Tensor x(2, 3, {1.0, 2.0, 1.0, 0.0, 0.0, 0.0});
  Tensor leaf = t.var(x);
  Tensor out = t.rownorm_rows(leaf);
  CHECK(out.at(0, 0) == doctest::Approx(0.25));
  CHECK(out.at(1, 0) == 0.0);
  CHECK(out.at(1, 2) == 0.0);
  auto grads = t.backward(t.sum(t.mul(out, out)));
  for (int j = 0; j < 3; ++j) CHECK(grads.at(x.storage().get()).at(1, j) == 0.0);
}

TEST_CASE("linear layer MSE gradient matches finite differences") {
  // One-layer net y = x W, loss = mean((y - target)^2).
  Rng rng(50);
  Tensor x = random_tensor(6, 3, rng);
  Tensor target = random_tensor(6, 2, rng);
  Tensor w = random_tensor(3, 2, rng);
  auto loss_value = [&]() {
    Tape t(false);
    Tensor d = t.sub(t.matmul(x, w), target);
    return t.mean(t.mul(d, d)).value();
  };
  auto loss_node = [&](Tape& t, const Tensor& leaf) {
    Tensor d = t.sub(t.matmul(x, leaf), target);
    return t.mean(t.mul(d, d));
  };
  CHECK(max_grad_rel_err(w, loss_value, loss_node) < 1e-6);
}

TEST_CASE("softmax row entry gradient matches finite differences") {
  Rng rng(51);
  Tensor x = random_tensor(2, 4, rng);
  auto loss_value = [&]() {
    Tape t(false);
    return t.softmax_rows(x).at(1, 2);
  };
  auto loss_node = [&](Tape& t, const Tensor& leaf) {
    Tensor s = t.softmax_rows(leaf);
    Tensor row = t.gather_rows(s, {1});
    return t.sum(t.slice_cols(row, 2, 3));
  };
  CHECK(max_grad_rel_err(x, loss_value, loss_node) < 1e-6);
}

TEST_CASE("finite detection") {
  Tensor x(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(x.all_finite());
  Tensor y(1, 2, {1.0, 2.0});
  CHECK(y.all_finite());
}
