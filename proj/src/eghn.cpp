#include "eghn/eghn.hpp"

#include <cmath>

#include "eghn/errors.hpp"
#include "json.hpp"

namespace eghn {

namespace {

std::string role_name(ChannelRole r) {
  switch (r) {
    case ChannelRole::Position: return "position";
    case ChannelRole::Velocity: return "velocity";
    case ChannelRole::OtherDirectional: return "other";
  }
  return "other";
}

ChannelRole role_from(const std::string& s) {
  if (s == "position") return ChannelRole::Position;
  if (s == "velocity") return ChannelRole::Velocity;
  if (s == "other") return ChannelRole::OtherDirectional;
  throw ConfigError("unknown channel role: " + s);
}

std::string mode_name(EmmpMode m) {
  switch (m) {
    case EmmpMode::Generalized: return "generalized";
    case EmmpMode::GmnDegenerate: return "gmn";
    case EmmpMode::EgnnRelaxed: return "egnn";
    case EmmpMode::Plain: return "plain";
  }
  return "generalized";
}

EmmpMode mode_from(const std::string& s) {
  if (s == "generalized") return EmmpMode::Generalized;
  if (s == "gmn") return EmmpMode::GmnDegenerate;
  if (s == "egnn") return EmmpMode::EgnnRelaxed;
  if (s == "plain") return EmmpMode::Plain;
  throw ConfigError("unknown emmp mode: " + s);
}

std::string adjacency_name(AdjacencyKind k) { return k == AdjacencyKind::Local ? "local" : "global"; }

AdjacencyKind adjacency_from(const std::string& s) {
  if (s == "local") return AdjacencyKind::Local;
  if (s == "global") return AdjacencyKind::Global;
  throw ConfigError("unknown adjacency kind: " + s);
}

bool has_velocity(const std::vector<ChannelRole>& roles) {
  for (auto r : roles) {
    if (r == ChannelRole::Velocity) return true;
  }
  return false;
}

SystemGraph with_states(const SystemGraph& sys, Tensor Z, Tensor h) {
  SystemGraph out = sys;
  out.Z = std::move(Z);
  out.h = std::move(h);
  return out;
}

}  // namespace

void EghnConfig::validate() const {
  if (spatial_dims <= 0) throw ConfigError("config: spatial_dims must be positive");
  if (levels < 0) throw ConfigError("config: levels must be >= 0");
  if (static_cast<int>(clusters.size()) != levels) {
    throw ConfigError("config: " + std::to_string(clusters.size()) + " cluster counts for " +
                      std::to_string(levels) + " levels");
  }
  for (int k : clusters) {
    if (k < 1) throw ConfigError("config: cluster count must be >= 1");
  }
  if (encoder_layers < 1) throw ConfigError("config: encoder_layers must be >= 1");
  if (levels >= 1 && decoder_layers < 1) throw ConfigError("config: decoder_layers must be >= 1");
  if (node_feat_in < 1 || feature_dim < 1 || hidden_dim < 1) throw ConfigError("config: non-positive width");
  if (edge_attr_dim < 0) throw ConfigError("config: negative edge_attr_dim");
  if (lambda_connectivity < 0.0) throw ConfigError("config: lambda must be >= 0");
  if (gradient_clip < 0.0) throw ConfigError("config: gradient_clip must be >= 0");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (!(global_threshold > 0.0)) throw ConfigError("config: global_threshold must be positive");
  if (pool_features != "input" && pool_features != "updated") {
    throw ConfigError("config: pool_features must be 'input' or 'updated'");
  }
  int n_pos = 0;
  for (auto r : roles) {
    if (r == ChannelRole::Position) ++n_pos;
  }
  if (n_pos != 1) throw ConfigError("config: expected exactly one Position channel");
}

std::string EghnConfig::to_json() const {
  nlohmann::ordered_json j;
  j["spatial_dims"] = spatial_dims;
  std::vector<std::string> rs;
  for (auto r : roles) rs.push_back(role_name(r));
  j["roles"] = rs;
  j["node_feat_in"] = node_feat_in;
  j["edge_attr_dim"] = edge_attr_dim;
  j["feature_dim"] = feature_dim;
  j["hidden_dim"] = hidden_dim;
  j["levels"] = levels;
  j["clusters"] = clusters;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["recursive"] = recursive;
  j["lambda"] = lambda_connectivity;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["gradient_clip"] = gradient_clip;
  j["batch_size"] = batch_size;
  j["global_threshold"] = std::isinf(global_threshold) ? nlohmann::ordered_json() : nlohmann::ordered_json(global_threshold);
  j["supervise_velocity"] = supervise_velocity;
  j["pool_features"] = pool_features;
  j["external_mode"] = mode_name(external_mode);
  j["internal_mode"] = mode_name(internal_mode);
  j["external_adjacency"] = adjacency_name(external_adjacency);
  j["internal_adjacency"] = adjacency_name(internal_adjacency);
  return j.dump();
}

EghnConfig EghnConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  EghnConfig cfg;
  try {
    cfg.spatial_dims = j.at("spatial_dims").get<int>();
    cfg.roles.clear();
    for (const auto& r : j.at("roles")) cfg.roles.push_back(role_from(r.get<std::string>()));
    cfg.node_feat_in = j.at("node_feat_in").get<int>();
    cfg.edge_attr_dim = j.at("edge_attr_dim").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.levels = j.at("levels").get<int>();
    cfg.clusters = j.at("clusters").get<std::vector<int>>();
    cfg.encoder_layers = j.at("encoder_layers").get<int>();
    cfg.decoder_layers = j.at("decoder_layers").get<int>();
    cfg.recursive = j.at("recursive").get<bool>();
    cfg.lambda_connectivity = j.at("lambda").get<double>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.gradient_clip = j.at("gradient_clip").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.global_threshold = j.at("global_threshold").is_null()
                               ? std::numeric_limits<double>::infinity()
                               : j.at("global_threshold").get<double>();
    cfg.supervise_velocity = j.at("supervise_velocity").get<bool>();
    cfg.pool_features = j.at("pool_features").get<std::string>();
    cfg.external_mode = mode_from(j.at("external_mode").get<std::string>());
    cfg.internal_mode = mode_from(j.at("internal_mode").get<std::string>());
    cfg.external_adjacency = adjacency_from(j.at("external_adjacency").get<std::string>());
    cfg.internal_adjacency = adjacency_from(j.at("internal_adjacency").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

EghnModel::EghnModel(const EghnConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  Rng rng(seed);
  const bool vel = has_velocity(cfg_.roles);
  auto matrix_recursive = [&](EmmpMode m) {
    return cfg_.recursive && vel && (m == EmmpMode::Generalized || m == EmmpMode::GmnDegenerate);
  };
  auto external_cfg = [&](int level, bool first_of_level0) {
    EmmpConfig e;
    e.spatial_dims = cfg_.spatial_dims;
    e.roles = cfg_.roles;
    e.feat_in = first_of_level0 ? cfg_.node_feat_in : cfg_.feature_dim;
    e.feat_out = cfg_.feature_dim;
    e.hidden = cfg_.hidden_dim;
    e.edge_attr_dim = level == 0 ? cfg_.edge_attr_dim : 0;
    e.weighted = level > 0;
    e.mode = cfg_.external_mode;
    e.recursive = matrix_recursive(cfg_.external_mode);
    return e;
  };

  enc_.resize(static_cast<size_t>(cfg_.levels == 0 ? 1 : cfg_.levels));
  for (int l = 0; l < static_cast<int>(enc_.size()); ++l) {
    for (int d = 0; d < cfg_.encoder_layers; ++d) {
      const std::string name = "enc.l" + std::to_string(l) + ".emmp" + std::to_string(d);
      enc_[static_cast<size_t>(l)].emplace_back(name, external_cfg(l, l == 0 && d == 0), rng);
    }
    if (l < cfg_.levels) {
      EPoolConfig pc;
      pc.clusters = cfg_.clusters[static_cast<size_t>(l)];
      pc.score_hidden = cfg_.hidden_dim;
      pc.pool_updated_features = cfg_.pool_features == "updated";
      pc.internal.spatial_dims = cfg_.spatial_dims;
      pc.internal.roles = cfg_.roles;
      pc.internal.feat_in = cfg_.feature_dim;
      pc.internal.feat_out = cfg_.feature_dim;
      pc.internal.hidden = cfg_.hidden_dim;
      pc.internal.edge_attr_dim = l == 0 ? cfg_.edge_attr_dim : 0;
      pc.internal.weighted = l > 0;
      pc.internal.mode = cfg_.internal_mode;
      pc.internal.recursive = matrix_recursive(cfg_.internal_mode);
      pools_.emplace_back("enc.l" + std::to_string(l) + ".pool", pc, rng);
    }
  }
  // Decoder, top level first; decoder externals always run above level 0.
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    std::vector<EmmpLayer> stack;
    for (int d = 0; d < cfg_.decoder_layers; ++d) {
      EmmpConfig e = external_cfg(l + 1, false);
      const std::string name = "dec.l" + std::to_string(l) + ".emmp" + std::to_string(d);
      stack.emplace_back(name, e, rng);
    }
    dec_.push_back(std::move(stack));
    EUpPoolConfig uc;
    uc.spatial_dims = cfg_.spatial_dims;
    uc.low_roles = cfg_.roles;
    uc.high_roles = cfg_.roles;
    uc.feat_low = cfg_.feature_dim;
    uc.feat_high = cfg_.feature_dim;
    uc.feat_out = cfg_.feature_dim;
    uc.hidden = cfg_.hidden_dim;
    uppools_.emplace_back("dec.l" + std::to_string(l) + ".uppool", uc, rng);
  }
}

EghnModel::Forward EghnModel::forward(Tape& tape, const SystemGraph& in) const {
  if (in.roles != cfg_.roles) throw ShapeError("eghn: input channel layout mismatch");
  if (in.h.cols() != cfg_.node_feat_in) {
    throw ShapeError("eghn: input features " + in.h.shape_str() + " vs node_feat_in " +
                     std::to_string(cfg_.node_feat_in));
  }
  for (int l = 0; l < cfg_.levels; ++l) {
    if (cfg_.clusters[static_cast<size_t>(l)] > in.num_nodes) {
      throw ConfigError("eghn: cluster count " + std::to_string(cfg_.clusters[static_cast<size_t>(l)]) +
                        " exceeds node count " + std::to_string(in.num_nodes));
    }
  }

  Forward fw;
  SystemGraph sys = in;
  std::vector<SystemGraph> lows;
  for (size_t l = 0; l < enc_.size(); ++l) {
    for (const auto& layer : enc_[l]) {
      auto o = layer.forward(tape, sys, cfg_.external_adjacency);
      sys = with_states(sys, o.Z, o.h);
    }
    if (static_cast<int>(l) < cfg_.levels) {
      auto pr = pools_[l].forward(tape, sys, cfg_.internal_adjacency);
      lows.push_back(sys);
      fw.scores.push_back(pr.S);
      fw.pooled_adjacencies.push_back(pr.consumed_A_local);
      SystemGraph high = pr.high;
      high.A_global = rescale_adjacency(tape, sys.A_global, pr.S);
      sys = high;
    }
  }
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    const size_t di = static_cast<size_t>(cfg_.levels - 1 - l);
    for (const auto& layer : dec_[di]) {
      auto o = layer.forward(tape, sys, cfg_.external_adjacency);
      sys = with_states(sys, o.Z, o.h);
    }
    sys = uppools_[di].forward(tape, sys, fw.scores[static_cast<size_t>(l)], lows[static_cast<size_t>(l)]);
  }
  fw.out = sys;
  return fw;
}

Tensor EghnModel::loss(Tape& tape, const Forward& fwd, const Tensor& target_positions,
                       const Tensor* target_velocities) const {
  const int pc = fwd.out.position_column();
  Tensor pos = tape.slice_cols(fwd.out.Z, pc, pc + 1);
  if (pos.rows() != target_positions.rows()) {
    throw ShapeError("loss: prediction " + pos.shape_str() + " vs target " + target_positions.shape_str());
  }
  Tensor diff = tape.sub(pos, target_positions);
  Tensor total = tape.sum(tape.mul(diff, diff));
  if (cfg_.supervise_velocity && target_velocities != nullptr) {
    const int vc = fwd.out.velocity_column();
    if (vc < 0) throw ConfigError("loss: velocity supervision without a Velocity channel");
    Tensor vdiff = tape.sub(tape.slice_cols(fwd.out.Z, vc, vc + 1), *target_velocities);
    total = tape.add(total, tape.sum(tape.mul(vdiff, vdiff)));
  }
  if (cfg_.lambda_connectivity > 0.0 && !fwd.scores.empty()) {
    Tensor conn;
    for (size_t l = 0; l < fwd.scores.size(); ++l) {
      Tensor pooled = pool_adjacency(tape, fwd.pooled_adjacencies[l], fwd.scores[l]);
      Tensor normed = tape.rownorm_rows(pooled);
      Tensor dev = tape.sub(normed, Tensor::identity(normed.rows()));
      Tensor term = tape.sum(tape.mul(dev, dev));
      conn = conn.defined() ? tape.add(conn, term) : term;
    }
    total = tape.add(total, tape.scale(conn, cfg_.lambda_connectivity));
  }
  if (!total.all_finite()) throw NumericError("loss: non-finite value");
  return total;
}

std::vector<Parameter*> EghnModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& stack : enc_)
    for (auto& layer : stack) layer.collect(out);
  for (auto& p : pools_) p.collect(out);
  for (auto& stack : dec_)
    for (auto& layer : stack) layer.collect(out);
  for (auto& u : uppools_) u.collect(out);
  return out;
}

std::vector<const Parameter*> EghnModel::parameters() const {
  auto* self = const_cast<EghnModel*>(this);
  std::vector<const Parameter*> out;
  for (auto* p : self->parameters()) out.push_back(p);
  return out;
}

int64_t EghnModel::parameter_count() const {
  int64_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void EghnModel::save(const std::string& path) const {
  auto* self = const_cast<EghnModel*>(this);
  auto params = self->parameters();
  save_checkpoint(params, cfg_.to_json(), path);
}

EghnModel EghnModel::load(const std::string& path) {
  EghnConfig cfg = EghnConfig::from_json(peek_checkpoint_config(path));
  EghnModel model(cfg, 0);
  auto params = model.parameters();
  load_checkpoint(params, path);
  return model;
}

EghnModel build_from_config(const EghnConfig& cfg, uint64_t seed) { return EghnModel(cfg, seed); }

}  // namespace eghn
