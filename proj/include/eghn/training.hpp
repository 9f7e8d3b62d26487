#pragma once

#include <memory>
#include <string>
#include <vector>

#include "eghn/io.hpp"

namespace eghn {

// One training/evaluation run. Test MSE is computed exactly once, on the
// parameters with the best validation loss.
struct RunRecord {
  int schema_version = 1;
  std::string config_json;
  std::string model_kind;
  std::string ablation = "none";
  uint64_t seed = 0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  int best_epoch = -1;
  double test_mse = 0.0;
  double final_pool_purity = -1.0;  // mean over the test split; -1 when not applicable
  double wall_clock_seconds = 0.0;
  std::string checkpoint_path;
};

std::string run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);
void save_run_record(const RunRecord& record, const std::string& path);
RunRecord load_run_record(const std::string& path);
std::string losses_csv(const RunRecord& record);

// Sample with precomputed graph and target tensors.
struct PreparedSample {
  SystemGraph sys;
  Tensor target_positions;
  Tensor target_velocities;
};
std::vector<PreparedSample> prepare_samples(const std::vector<ModelSample>& samples, double global_threshold);

// Mean squared error over all scalar position entries, nodes and samples.
double evaluate_model_mse(const EghnModel& model, const std::vector<PreparedSample>& samples);
// Per-sample MSE plus per-node mean squared errors (3 coordinates each).
struct SampleErrors {
  double mse = 0.0;
  std::vector<double> per_node;
};
std::vector<SampleErrors> evaluate_per_sample(const EghnModel& model, const std::vector<PreparedSample>& samples);

// Closed-form x0 + v0 * horizon baseline; no trainable state.
double linear_baseline_mse(const std::vector<ModelSample>& samples, double horizon);

// Fraction of nodes whose hard cluster's majority ground-truth label matches
// their own. Argmax ties resolve to the lowest cluster index.
double cluster_purity(const Tensor& S, const std::vector<int>& membership);
std::vector<int> hard_assignments(const Tensor& S);
double mean_final_pool_purity(const EghnModel& model, const std::vector<PreparedSample>& samples,
                              const std::vector<std::vector<int>>& memberships);

// Model configuration derived from run kind + ablation switches.
EghnConfig model_config_for(const RunConfig& run);

struct TrainResult {
  RunRecord record;
  std::unique_ptr<EghnModel> model;  // null for the linear baseline
};

// Adam on the Eq.-level loss with early stopping on validation MSE. The
// linear baseline skips training and only fills in test_mse.
TrainResult train_model(const RunConfig& cfg, const Dataset& dataset);

// Ablation sweeps: every returned record keeps the variant's switches in its
// config snapshot.
std::vector<TrainResult> run_ablation(const std::string& which, const RunConfig& base, const Dataset& dataset);

struct PoolingReport {
  Tensor S;
  std::vector<int> assignments;
  std::vector<std::array<double, 3>> positions;
};
PoolingReport pooling_report(const EghnModel& model, const ModelSample& sample, double global_threshold);

}  // namespace eghn
