#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eghn/rng.hpp"
#include "eghn/tensor.hpp"

namespace eghn {

struct Parameter {
  std::string name;
  Tensor value;
};

enum class OutputActivation { Identity, SoftmaxRows };

// Multi-layer perceptron with SiLU hidden activations. Rows of the input are
// independent samples (nodes or edges).
class Mlp {
 public:
  Mlp() = default;
  // widths = {in, hidden..., out}. last_layer_scale shrinks the init of the
  // final layer (used by the cluster-score head for a near-uniform start).
  Mlp(const std::string& name, std::vector<int> widths, Rng& rng,
      OutputActivation out_act = OutputActivation::Identity, double last_layer_scale = 1.0);

  Tensor forward(Tape& tape, const Tensor& x) const;

  void collect(std::vector<Parameter*>& out);
  const std::vector<int>& widths() const { return widths_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  int64_t parameter_count() const;

  const std::vector<Parameter>& weights() const { return weights_; }
  const std::vector<Parameter>& biases() const { return biases_; }
  std::vector<Parameter>& weights() { return weights_; }
  std::vector<Parameter>& biases() { return biases_; }

 private:
  std::vector<int> widths_;
  std::vector<Parameter> weights_;  // widths[l] x widths[l+1]
  std::vector<Parameter> biases_;   // 1 x widths[l+1]
  OutputActivation out_act_ = OutputActivation::Identity;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Adam with decoupled weight decay. Parameters without a gradient entry are
// treated as zero-gradient (decay still applies).
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const AdamConfig& cfg);
  void step(const GradMap& grads);
  int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// Weight checkpoints: a versioned JSON container mapping parameter names to
// shape + flat values. Strict on load: names, shapes and version must match.
inline constexpr int kCheckpointFormatVersion = 1;
std::string checkpoint_to_string(const std::vector<Parameter*>& params, const std::string& model_config_json);
void save_checkpoint(const std::vector<Parameter*>& params, const std::string& model_config_json,
                     const std::string& path);
// Returns the embedded model-config JSON text.
std::string peek_checkpoint_config(const std::string& path);
void load_checkpoint(std::vector<Parameter*>& params, const std::string& path);

}  // namespace eghn
