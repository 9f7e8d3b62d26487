#include "eghn/emmp.hpp"

#include <cmath>

#include "eghn/errors.hpp"

namespace eghn {

namespace {

// Row indices covering the n-row block of every listed node.
std::vector<int> block_rows(const std::vector<int>& nodes, int n) {
  std::vector<int> rows;
  rows.reserve(nodes.size() * static_cast<size_t>(n));
  for (int node : nodes)
    for (int d = 0; d < n; ++d) rows.push_back(node * n + d);
  return rows;
}

// For (E*n) stacked edge rows: the edge index of every row.
std::vector<int> row_owner(int count, int n) {
  std::vector<int> owner;
  owner.reserve(static_cast<size_t>(count) * n);
  for (int e = 0; e < count; ++e)
    for (int d = 0; d < n; ++d) owner.push_back(e);
  return owner;
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("emmp: non-finite ") + what);
}

}  // namespace

void EmmpConfig::validate() const {
  if (roles.empty()) throw ConfigError("emmp: node state needs at least one channel");
  if (spatial_dims <= 0 || feat_in <= 0 || feat_out <= 0 || hidden <= 0) {
    throw ConfigError("emmp: non-positive dimension");
  }
  int n_pos = 0, n_vel = 0;
  for (auto r : roles) {
    if (r == ChannelRole::Position) ++n_pos;
    if (r == ChannelRole::Velocity) ++n_vel;
  }
  if (n_pos != 1) throw ConfigError("emmp: expected exactly one Position channel");
  if (recursive && n_vel != 1) throw ConfigError("emmp: recursive update needs a Velocity channel");
  if (mode == EmmpMode::EgnnRelaxed && roles.size() > 2) {
    throw ConfigError("emmp: egnn-relaxed supports [Position] or [Position, Velocity] layouts");
  }
}

std::pair<Tensor, Tensor> center_states(Tape& tape, const Tensor& Z, const std::vector<ChannelRole>& roles,
                                        int n) {
  if (Z.rows() % n != 0) throw ShapeError("center_states: " + Z.shape_str() + " with n " + std::to_string(n));
  const int num_nodes = Z.rows() / n;
  const int m = Z.cols();
  Tensor mask(1, m);
  for (int c = 0; c < m; ++c) mask.at(0, c) = roles[static_cast<size_t>(c)] == ChannelRole::Position ? 1.0 : 0.0;
  Tensor mean = tape.mul_rowvec(tape.block_mean_rows(Z, n), mask);
  Tensor centered = tape.sub(Z, tape.tile_rows(mean, num_nodes));
  return {centered, mean};
}

EmmpLayer::EmmpLayer(const std::string& name, const EmmpConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int m = cfg_.channels();
  const int n = cfg_.spatial_dims;
  const int ed = cfg_.edge_attr_dim + (cfg_.weighted ? 1 : 0);
  switch (cfg_.mode) {
    case EmmpMode::Generalized: {
      const int gram = 4 * m * m;
      message_ = Mlp(name + ".msg", {gram + 2 * cfg_.feat_in + ed, cfg_.hidden, 2 * m * m}, rng);
      feature_ = Mlp(name + ".feat", {cfg_.feat_in + 2 * m * m, cfg_.hidden, cfg_.feat_out}, rng);
      break;
    }
    case EmmpMode::GmnDegenerate: {
      const int gram = m * m;
      message_ = Mlp(name + ".msg", {gram + 2 * cfg_.feat_in + ed, cfg_.hidden, m * m}, rng);
      feature_ = Mlp(name + ".feat", {cfg_.feat_in + m * m, cfg_.hidden, cfg_.feat_out}, rng);
      break;
    }
    case EmmpMode::EgnnRelaxed: {
      message_ = Mlp(name + ".msg", {2 * cfg_.feat_in + 1 + ed, cfg_.hidden, cfg_.hidden}, rng);
      coord_ = Mlp(name + ".coord", {cfg_.hidden, 1}, rng);
      feature_ = Mlp(name + ".feat", {cfg_.feat_in + cfg_.hidden, cfg_.hidden, cfg_.feat_out}, rng);
      break;
    }
    case EmmpMode::Plain: {
      message_ = Mlp(name + ".msg", {2 * cfg_.feat_in + 2 * n * m + ed, cfg_.hidden, cfg_.hidden}, rng);
      coord_ = Mlp(name + ".coord", {cfg_.hidden, n * m}, rng);
      feature_ = Mlp(name + ".feat", {cfg_.feat_in + cfg_.hidden, cfg_.hidden, cfg_.feat_out}, rng);
      break;
    }
  }
  const bool needs_velocity_head =
      cfg_.recursive || (cfg_.mode == EmmpMode::EgnnRelaxed && cfg_.channels() == 2);
  if (needs_velocity_head) {
    velocity_ = Mlp(name + ".vel", {cfg_.feat_out, cfg_.hidden, 1}, rng);
  }
}

void EmmpLayer::collect(std::vector<Parameter*>& out) {
  message_.collect(out);
  feature_.collect(out);
  if (!coord_.widths().empty()) coord_.collect(out);
  if (!velocity_.widths().empty()) velocity_.collect(out);
}

std::vector<Tensor> EmmpLayer::edge_feature_parts(Tape& tape, const SystemGraph& sys, const Tensor& A,
                                                  const EdgeList& edges) const {
  std::vector<Tensor> parts;
  parts.push_back(tape.gather_rows(sys.h, edges.recv));
  parts.push_back(tape.gather_rows(sys.h, edges.send));
  if (cfg_.edge_attr_dim > 0) {
    if (static_cast<int>(sys.edge_attrs.size()) != cfg_.edge_attr_dim) {
      throw ShapeError("emmp: expected " + std::to_string(cfg_.edge_attr_dim) + " edge attrs, graph has " +
                       std::to_string(sys.edge_attrs.size()));
    }
    Tensor attrs(edges.count(), cfg_.edge_attr_dim);
    for (int e = 0; e < edges.count(); ++e)
      for (int a = 0; a < cfg_.edge_attr_dim; ++a)
        attrs.at(e, a) = sys.edge_attrs[static_cast<size_t>(a)].at(edges.recv[static_cast<size_t>(e)],
                                                                   edges.send[static_cast<size_t>(e)]);
    parts.push_back(attrs);
  }
  if (cfg_.weighted) {
    std::vector<std::pair<int, int>> pairs(static_cast<size_t>(edges.count()));
    for (int e = 0; e < edges.count(); ++e)
      pairs[static_cast<size_t>(e)] = {edges.recv[static_cast<size_t>(e)], edges.send[static_cast<size_t>(e)]};
    parts.push_back(tape.gather_entries(A, pairs));
  }
  return parts;
}

Tensor EmmpLayer::empty_message_features(Tape& tape, const SystemGraph& sys) const {
  return tape.concat_cols({sys.h, Tensor(sys.num_nodes, message_.out_dim())});
}

EmmpLayer::Out EmmpLayer::forward(Tape& tape, const SystemGraph& sys, AdjacencyKind which) const {
  if (sys.roles != cfg_.roles) throw ShapeError("emmp: channel layout mismatch");
  if (sys.h.cols() != cfg_.feat_in) {
    throw ShapeError("emmp: features " + sys.h.shape_str() + " vs feat_in " + std::to_string(cfg_.feat_in));
  }
  const Tensor& A = which == AdjacencyKind::Local ? sys.A_local : sys.A_global;
  if (!A.defined()) throw ConfigError("emmp: selected adjacency is undefined");
  Out out;
  switch (cfg_.mode) {
    case EmmpMode::Generalized:
    case EmmpMode::GmnDegenerate:
      out = forward_matrix(tape, sys, A);
      break;
    case EmmpMode::EgnnRelaxed:
      out = forward_egnn(tape, sys, A);
      break;
    case EmmpMode::Plain:
      out = forward_plain(tape, sys, A);
      break;
  }
  check_finite(out.Z, "states");
  check_finite(out.h, "features");
  return out;
}

EmmpLayer::Out EmmpLayer::forward_matrix(Tape& tape, const SystemGraph& sys, const Tensor& A) const {
  const int n = cfg_.spatial_dims;
  const EdgeList edges = edges_from_adjacency(A);
  if (edges.count() == 0) {
    return {sys.Z, feature_.forward(tape, empty_message_features(tape, sys))};
  }
  auto [centered, mean] = center_states(tape, sys.Z, sys.roles, n);
  (void)mean;
  const auto recv_rows = block_rows(edges.recv, n);
  const auto send_rows = block_rows(edges.send, n);
  Tensor Zr = tape.gather_rows(centered, recv_rows);
  Tensor Zs = tape.gather_rows(centered, send_rows);
  // Zhat_e = (Z_i - Zbar, Z_j - Zbar) for the generalized form, Z_i - Z_j for
  // the degenerate one; the message MLP sees the flattened gram Zhat^T Zhat
  // scaled by 1/n.
  Tensor Zhat = cfg_.mode == EmmpMode::Generalized ? tape.concat_cols({Zr, Zs}) : tape.sub(Zr, Zs);
  Tensor gram = tape.scale(tape.block_gram(Zhat, Zhat, n), 1.0 / n);
  std::vector<Tensor> parts{gram};
  for (auto& p : edge_feature_parts(tape, sys, A, edges)) parts.push_back(p);
  Tensor H = message_.forward(tape, tape.concat_cols(parts));
  Tensor Hsum = tape.segment_sum_rows(H, edges.recv, sys.num_nodes);
  Tensor h_new = feature_.forward(tape, tape.concat_cols({sys.h, Hsum}));
  Tensor M = tape.block_matmul_rows(Zhat, H, n);
  Tensor Msum = tape.segment_sum_rows(M, block_rows(edges.recv, n), sys.num_nodes * n);

  Tensor Z_new;
  if (cfg_.recursive) {
    const int pc = sys.position_column();
    const int vc = sys.velocity_column();
    Tensor x = tape.slice_cols(sys.Z, pc, pc + 1);
    Tensor v = tape.slice_cols(sys.Z, vc, vc + 1);
    Tensor dv = tape.slice_cols(Msum, vc, vc + 1);
    Tensor vscale = tape.gather_rows(velocity_.forward(tape, h_new), row_owner(sys.num_nodes, n));
    Tensor v_new = tape.add(tape.mul(v, vscale), dv);
    Tensor x_new = tape.add(x, v_new);
    Z_new = pc < vc ? tape.concat_cols({x_new, v_new}) : tape.concat_cols({v_new, x_new});
  } else {
    Z_new = tape.add(sys.Z, Msum);
  }
  return {Z_new, h_new};
}

EmmpLayer::Out EmmpLayer::forward_egnn(Tape& tape, const SystemGraph& sys, const Tensor& A) const {
  const int n = cfg_.spatial_dims;
  const int pc = sys.position_column();
  const int vc = sys.velocity_column();
  const EdgeList edges = edges_from_adjacency(A);
  if (edges.count() == 0) {
    return {sys.Z, feature_.forward(tape, empty_message_features(tape, sys))};
  }
  Tensor x = tape.slice_cols(sys.Z, pc, pc + 1);
  const auto recv_rows = block_rows(edges.recv, n);
  const auto send_rows = block_rows(edges.send, n);
  Tensor diff = tape.sub(tape.gather_rows(x, recv_rows), tape.gather_rows(x, send_rows));
  Tensor radial = tape.block_gram(diff, diff, n);  // squared distances
  std::vector<Tensor> parts = edge_feature_parts(tape, sys, A, edges);
  parts.insert(parts.begin() + 2, radial);  // phi_e(h_i, h_j, |x_i-x_j|^2, a_ij)
  Tensor msg = message_.forward(tape, tape.concat_cols(parts));
  Tensor w = coord_.forward(tape, msg);
  Tensor weighted = tape.mul(diff, tape.gather_rows(w, row_owner(edges.count(), n)));
  Tensor agg = tape.segment_sum_rows(weighted, block_rows(edges.recv, n), sys.num_nodes * n);
  // C = 1 / |N(i)|
  Tensor inv_deg(sys.num_nodes * n, 1);
  {
    std::vector<int> deg(static_cast<size_t>(sys.num_nodes), 0);
    for (int r : edges.recv) ++deg[static_cast<size_t>(r)];
    for (int i = 0; i < sys.num_nodes; ++i) {
      const double c = deg[static_cast<size_t>(i)] > 0 ? 1.0 / deg[static_cast<size_t>(i)] : 0.0;
      for (int d = 0; d < n; ++d) inv_deg.at(i * n + d, 0) = c;
    }
  }
  Tensor update = tape.mul(agg, inv_deg);
  Tensor h_new = feature_.forward(tape, tape.concat_cols({sys.h, tape.segment_sum_rows(msg, edges.recv, sys.num_nodes)}));
  if (vc >= 0) {
    // Velocity present: update v first, then integrate the position.
    Tensor v = tape.slice_cols(sys.Z, vc, vc + 1);
    Tensor vscale = tape.gather_rows(velocity_.forward(tape, h_new), row_owner(sys.num_nodes, n));
    Tensor v_new = tape.add(tape.mul(v, vscale), update);
    Tensor x_new = tape.add(x, v_new);
    return {pc < vc ? tape.concat_cols({x_new, v_new}) : tape.concat_cols({v_new, x_new}), h_new};
  }
  return {tape.add(x, update), h_new};
}

EmmpLayer::Out EmmpLayer::forward_plain(Tape& tape, const SystemGraph& sys, const Tensor& A) const {
  const int n = cfg_.spatial_dims;
  const int m = cfg_.channels();
  const EdgeList edges = edges_from_adjacency(A);
  if (edges.count() == 0) {
    return {sys.Z, feature_.forward(tape, empty_message_features(tape, sys))};
  }
  Tensor Zflat = tape.reshape(sys.Z, sys.num_nodes, n * m);
  std::vector<Tensor> parts = edge_feature_parts(tape, sys, A, edges);
  parts.push_back(tape.gather_rows(Zflat, edges.recv));
  parts.push_back(tape.gather_rows(Zflat, edges.send));
  Tensor msg = message_.forward(tape, tape.concat_cols(parts));
  Tensor h_new = feature_.forward(tape, tape.concat_cols({sys.h, tape.segment_sum_rows(msg, edges.recv, sys.num_nodes)}));
  Tensor dz = tape.segment_sum_rows(coord_.forward(tape, msg), edges.recv, sys.num_nodes);
  Tensor Z_new = tape.add(sys.Z, tape.reshape(dz, sys.num_nodes * n, m));
  return {Z_new, h_new};
}

}  // namespace eghn
