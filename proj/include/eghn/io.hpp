#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eghn/eghn.hpp"
#include "eghn/simulator.hpp"
#include "eghn/system.hpp"

namespace eghn {

inline constexpr int kDatasetSchemaVersion = 1;

struct RecordMeta {
  std::vector<int> membership;
  uint64_t seed = 0;
  int steps = 0;
  double dt = 0.0;
};

// One (input, target) pair as stored on disk, including the `_meta` block
// that model code must never see.
struct DatasetRecord {
  int schema_version = kDatasetSchemaVersion;
  std::string system_id;
  std::vector<std::array<double, 3>> positions, velocities;
  std::vector<double> charges;
  std::vector<std::pair<int, int>> sticks;
  std::vector<std::vector<double>> extra_node_features;
  std::vector<std::array<double, 3>> target_positions, target_velocities;
  RecordMeta meta;
  int num_nodes() const { return static_cast<int>(positions.size()); }
};

// Model-facing view of a record. Deliberately has no membership / meta
// fields; the ingestion API can only hand these to the model.
struct ModelSample {
  std::vector<std::array<double, 3>> positions, velocities;
  std::vector<double> charges;
  std::vector<std::pair<int, int>> sticks;
  std::vector<std::vector<double>> extra_node_features;
  std::vector<std::array<double, 3>> target_positions, target_velocities;
  int num_nodes() const { return static_cast<int>(positions.size()); }
};

ModelSample to_model_sample(const DatasetRecord& rec);

std::string record_to_json_line(const DatasetRecord& rec);
DatasetRecord record_from_json_line(const std::string& line);

void write_jsonl_records(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_jsonl_records(const std::string& path);

struct DatasetManifest {
  int schema_version = kDatasetSchemaVersion;
  DatasetCounts counts;
  int num_complexes = 0;
  double avg_size = 0.0;
  int num_systems = 0;
  int steps = 0;
  double dt = 0.0;
  uint64_t seed = 0;
  std::vector<std::string> shape_signatures;
  double horizon() const { return steps * dt; }
};

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

// Model-facing dataset: records stripped of `_meta`.
struct Dataset {
  std::vector<ModelSample> train, val, test;
  DatasetManifest manifest;
};
Dataset load_dataset(const std::string& dir);
// Evaluation-only accessor for the ground-truth complex memberships.
std::vector<std::vector<int>> load_memberships(const std::string& dir, const std::string& split);

// Builds the level-0 system graph: Z = [position, velocity], h = |v| plus any
// extra node features, A_local from sticks, A_global by distance threshold,
// edge attributes {c_i * c_j, stick indicator}.
SystemGraph build_system(const ModelSample& sample, double global_threshold);
Tensor target_positions_tensor(const ModelSample& sample);
Tensor target_velocities_tensor(const ModelSample& sample);

// ---------------------------------------------------------------------------

struct RunConfig {
  std::string dataset_dir;
  std::string dataset_name = "(3,3,1)";
  std::string model_kind = "eghn";  // eghn | egnn-baseline | linear
  std::string out_dir = ".";
  std::string ablation = "none";  // none | no-equivariance | no-connectivity | global-only | local-only
  uint64_t seed = 0;
  int max_epochs = 200;
  int patience = 50;
  std::vector<int> k_sweep;
  EghnConfig model;

  void validate() const;
  std::string to_json() const;
};

// Flag-level overrides; unset fields fall through to the config file and
// then to the per-dataset defaults.
struct RunOverrides {
  std::optional<std::string> dataset_dir, dataset_name, model_kind, out_dir, ablation, pool_features;
  std::optional<uint64_t> seed;
  std::optional<int> max_epochs, patience, batch_size, hidden_dim, feature_dim;
  std::optional<int> levels, encoder_layers, decoder_layers;
  std::optional<double> learning_rate, weight_decay, lambda, global_threshold, gradient_clip;
  std::optional<std::vector<int>> clusters;
  std::optional<bool> recursive, supervise_velocity;
};

// Per-dataset default hyper-parameters (learning rate, lambda, weight decay,
// encoder/decoder depth, batch size, cluster count).
RunConfig run_config_defaults(const std::string& dataset_name);

// Precedence: flags > config file > defaults. Unknown file keys are
// rejected. `config_path` may be empty.
RunConfig resolve_run_config(const std::string& config_path, const RunOverrides& flags);

}  // namespace eghn
