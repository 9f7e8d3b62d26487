#include "eghn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eghn/errors.hpp"
#include "json.hpp"

namespace eghn {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

// Global-norm gradient clipping over the watched parameters, in parameter
// order for determinism.
void clip_gradients(GradMap& grads, const std::vector<Parameter*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (const auto* p : params) {
    auto it = grads.find(p->value.storage().get());
    if (it == grads.end()) continue;
    for (double g : it->second.data()) total += g * g;
  }
  total = std::sqrt(total);
  if (total <= max_norm) return;
  const double scale = max_norm / total;
  for (const auto* p : params) {
    auto it = grads.find(p->value.storage().get());
    if (it == grads.end()) continue;
    for (auto& g : it->second.mutable_data()) g *= scale;
  }
}

}  // namespace

std::string run_record_to_json(const RunRecord& record) {
  ordered_json j;
  j["schema_version"] = record.schema_version;
  j["config"] = record.config_json.empty() ? ordered_json::object() : ordered_json::parse(record.config_json);
  j["model"] = record.model_kind;
  j["ablation"] = record.ablation;
  j["seed"] = record.seed;
  j["train_losses"] = record.train_losses;
  j["val_losses"] = record.val_losses;
  j["best_epoch"] = record.best_epoch;
  j["test_mse"] = record.test_mse;
  j["final_pool_purity"] = record.final_pool_purity;
  j["wall_clock_seconds"] = record.wall_clock_seconds;
  j["checkpoint"] = record.checkpoint_path;
  return j.dump(2);
}

RunRecord run_record_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
  RunRecord r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version > 1) throw DataError("run record schema_version not supported");
    r.config_json = j.at("config").dump();
    r.model_kind = j.at("model").get<std::string>();
    r.ablation = j.at("ablation").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.train_losses = j.at("train_losses").get<std::vector<double>>();
    r.val_losses = j.at("val_losses").get<std::vector<double>>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.test_mse = j.at("test_mse").get<double>();
    r.final_pool_purity = j.at("final_pool_purity").get<double>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    r.checkpoint_path = j.at("checkpoint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("run record: ") + e.what());
  }
  return r;
}

void save_run_record(const RunRecord& record, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << run_record_to_json(record) << "\n";
  if (!out) throw IoError("failed writing: " + path);
}

RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_record_from_json(ss.str());
}

std::string losses_csv(const RunRecord& record) {
  std::ostringstream os;
  os << "epoch,train_loss,val_mse\n";
  os.precision(17);
  for (size_t e = 0; e < record.train_losses.size(); ++e) {
    os << e << "," << record.train_losses[e] << ",";
    if (e < record.val_losses.size()) os << record.val_losses[e];
    os << "\n";
  }
  return os.str();
}

std::vector<PreparedSample> prepare_samples(const std::vector<ModelSample>& samples, double global_threshold) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({build_system(s, global_threshold), target_positions_tensor(s), target_velocities_tensor(s)});
  }
  return out;
}

double evaluate_model_mse(const EghnModel& model, const std::vector<PreparedSample>& samples) {
  double total = 0.0;
  int64_t entries = 0;
  for (const auto& s : samples) {
    Tape tape(false);
    auto fwd = model.forward(tape, s.sys);
    const int pc = fwd.out.position_column();
    for (int r = 0; r < fwd.out.Z.rows(); ++r) {
      const double d = fwd.out.Z.at(r, pc) - s.target_positions.at(r, 0);
      total += d * d;
    }
    entries += fwd.out.Z.rows();
  }
  if (entries == 0) throw DataError("evaluate: empty split");
  return total / static_cast<double>(entries);
}

std::vector<SampleErrors> evaluate_per_sample(const EghnModel& model, const std::vector<PreparedSample>& samples) {
  std::vector<SampleErrors> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Tape tape(false);
    auto fwd = model.forward(tape, s.sys);
    const int pc = fwd.out.position_column();
    const int n = fwd.out.num_nodes;
    const int dims = fwd.out.spatial_dims;
    SampleErrors err;
    err.per_node.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int d = 0; d < dims; ++d) {
        const double diff = fwd.out.Z.at(i * dims + d, pc) - s.target_positions.at(i * dims + d, 0);
        acc += diff * diff;
      }
      err.per_node[static_cast<size_t>(i)] = acc / dims;
      err.mse += acc;
    }
    err.mse /= static_cast<double>(n * dims);
    out.push_back(std::move(err));
  }
  return out;
}

double linear_baseline_mse(const std::vector<ModelSample>& samples, double horizon) {
  double total = 0.0;
  int64_t entries = 0;
  for (const auto& s : samples) {
    for (size_t i = 0; i < s.positions.size(); ++i) {
      for (int d = 0; d < 3; ++d) {
        const double pred = s.positions[i][static_cast<size_t>(d)] + horizon * s.velocities[i][static_cast<size_t>(d)];
        const double diff = pred - s.target_positions[i][static_cast<size_t>(d)];
        total += diff * diff;
        ++entries;
      }
    }
  }
  if (entries == 0) throw DataError("linear baseline: empty split");
  return total / static_cast<double>(entries);
}

std::vector<int> hard_assignments(const Tensor& S) {
  std::vector<int> out(static_cast<size_t>(S.rows()), 0);
  for (int i = 0; i < S.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < S.cols(); ++j) {
      if (S.at(i, j) > S.at(i, best)) best = j;  // ties keep the lowest index
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

double cluster_purity(const Tensor& S, const std::vector<int>& membership) {
  if (static_cast<int>(membership.size()) != S.rows()) {
    throw ShapeError("cluster_purity: " + std::to_string(membership.size()) + " labels vs S " + S.shape_str());
  }
  const auto assign = hard_assignments(S);
  const int k = S.cols();
  int correct = 0;
  for (int cluster = 0; cluster < k; ++cluster) {
    std::vector<int> counts;
    for (int i = 0; i < S.rows(); ++i) {
      if (assign[static_cast<size_t>(i)] != cluster) continue;
      const int label = membership[static_cast<size_t>(i)];
      if (label >= static_cast<int>(counts.size())) counts.resize(static_cast<size_t>(label) + 1, 0);
      ++counts[static_cast<size_t>(label)];
    }
    if (!counts.empty()) correct += *std::max_element(counts.begin(), counts.end());
  }
  return static_cast<double>(correct) / static_cast<double>(S.rows());
}

double mean_final_pool_purity(const EghnModel& model, const std::vector<PreparedSample>& samples,
                              const std::vector<std::vector<int>>& memberships) {
  if (samples.size() != memberships.size()) {
    throw ShapeError("purity: " + std::to_string(samples.size()) + " samples vs " +
                     std::to_string(memberships.size()) + " membership rows");
  }
  if (samples.empty()) throw DataError("purity: empty split");
  double total = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    Tape tape(false);
    auto fwd = model.forward(tape, samples[i].sys);
    if (fwd.scores.empty()) throw ConfigError("purity: model has no pooling level");
    total += cluster_purity(fwd.scores.back(), memberships[i]);
  }
  return total / static_cast<double>(samples.size());
}

EghnConfig model_config_for(const RunConfig& run) {
  EghnConfig mc = run.model;
  if (run.model_kind == "egnn-baseline") {
    // Pure stack of egnn-relaxed external layers; no pooling, no
    // connectivity term.
    mc.levels = 0;
    mc.clusters.clear();
    mc.external_mode = EmmpMode::EgnnRelaxed;
    mc.encoder_layers = 4;
    mc.lambda_connectivity = 0.0;
  }
  if (run.ablation == "no-equivariance") {
    mc.external_mode = EmmpMode::Plain;
    mc.internal_mode = EmmpMode::Plain;
  } else if (run.ablation == "no-connectivity") {
    mc.lambda_connectivity = 0.0;
  } else if (run.ablation == "global-only") {
    mc.internal_adjacency = AdjacencyKind::Global;
  } else if (run.ablation == "local-only") {
    mc.external_adjacency = AdjacencyKind::Local;
  }
  mc.validate();
  return mc;
}

TrainResult train_model(const RunConfig& cfg, const Dataset& dataset) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.record.config_json = cfg.to_json();
  result.record.model_kind = cfg.model_kind;
  result.record.ablation = cfg.ablation;
  result.record.seed = cfg.seed;

  if (cfg.model_kind == "linear") {
    result.record.test_mse = linear_baseline_mse(dataset.test, dataset.manifest.horizon());
    result.record.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

  const EghnConfig mc = model_config_for(cfg);
  result.model = std::make_unique<EghnModel>(mc, cfg.seed);
  EghnModel& model = *result.model;
  auto params = model.parameters();
  Adam adam(params, {mc.learning_rate, 0.9, 0.999, 1e-8, mc.weight_decay});

  const auto train_set = prepare_samples(dataset.train, mc.global_threshold);
  const auto val_set = prepare_samples(dataset.val, mc.global_threshold);
  const auto test_set = prepare_samples(dataset.test, mc.global_threshold);
  if (train_set.empty() || val_set.empty() || test_set.empty()) throw DataError("training: empty split");

  Rng shuffle_rng = Rng(cfg.seed).split(0x7368756666ULL);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  int best_epoch = -1;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto order = shuffled_indices(static_cast<int>(train_set.size()), shuffle_rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(mc.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(mc.batch_size));
      Tape tape;
      Tensor batch_loss;
      for (size_t k = start; k < end; ++k) {
        const auto& sample = train_set[static_cast<size_t>(order[k])];
        auto fwd = model.forward(tape, sample.sys);
        Tensor li = model.loss(tape, fwd, sample.target_positions, &sample.target_velocities);
        batch_loss = batch_loss.defined() ? tape.add(batch_loss, li) : li;
      }
      batch_loss = tape.scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double loss_value = batch_loss.value();
      if (!std::isfinite(loss_value)) {
        throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start));
      }
      epoch_loss += loss_value * static_cast<double>(end - start);
      GradMap grads = tape.backward(batch_loss);
      clip_gradients(grads, params, mc.gradient_clip);
      adam.step(grads);
    }
    result.record.train_losses.push_back(epoch_loss / static_cast<double>(train_set.size()));
    const double val_mse = evaluate_model_mse(model, val_set);
    result.record.val_losses.push_back(val_mse);
    if (val_mse < best_val) {
      best_val = val_mse;
      best_epoch = epoch;
      best_params.clear();
      for (const auto* p : params) best_params.push_back(p->value.data());
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }

  if (best_epoch >= 0) {
    for (size_t k = 0; k < params.size(); ++k) params[k]->value.mutable_data() = best_params[k];
  }
  result.record.best_epoch = best_epoch;
  result.record.test_mse = evaluate_model_mse(model, test_set);
  result.record.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<TrainResult> run_ablation(const std::string& which, const RunConfig& base, const Dataset& dataset) {
  std::vector<TrainResult> out;
  if (which == "K-sweep") {
    std::vector<int> ks = base.k_sweep;
    if (ks.empty()) ks = {2, 3, 5};
    for (int k : ks) {
      RunConfig cfg = base;
      cfg.model.clusters.assign(static_cast<size_t>(std::max(cfg.model.levels, 1)), k);
      out.push_back(train_model(cfg, dataset));
    }
    return out;
  }
  RunConfig cfg = base;
  cfg.ablation = which;
  cfg.validate();
  out.push_back(train_model(cfg, dataset));
  return out;
}

PoolingReport pooling_report(const EghnModel& model, const ModelSample& sample, double global_threshold) {
  Tape tape(false);
  SystemGraph sys = build_system(sample, global_threshold);
  auto fwd = model.forward(tape, sys);
  if (fwd.scores.empty()) throw ConfigError("pooling report: model has no pooling level");
  PoolingReport report;
  report.S = fwd.scores.back();
  report.assignments = hard_assignments(report.S);
  report.positions = sample.positions;
  return report;
}

}  // namespace eghn
