#include "eghn/nn.hpp"

#include <cmath>
#include <fstream>

#include "eghn/errors.hpp"
#include "json.hpp"

namespace eghn {

Mlp::Mlp(const std::string& name, std::vector<int> widths, Rng& rng, OutputActivation out_act,
         double last_layer_scale)
    : widths_(std::move(widths)), out_act_(out_act) {
  if (widths_.size() < 2) throw ConfigError("mlp " + name + ": needs at least two widths");
  for (int w : widths_) {
    if (w <= 0) throw ConfigError("mlp " + name + ": non-positive width");
  }
  const size_t layers = widths_.size() - 1;
  for (size_t l = 0; l < layers; ++l) {
    const int fan_in = widths_[l];
    const int fan_out = widths_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const double s = (l + 1 == layers) ? last_layer_scale : 1.0;
    Tensor w(fan_in, fan_out);
    for (auto& v : w.mutable_data()) v = s * rng.uniform(-bound, bound);
    Tensor b(1, fan_out);
    for (auto& v : b.mutable_data()) v = s * rng.uniform(-bound, bound);
    weights_.push_back({name + ".w" + std::to_string(l), std::move(w)});
    biases_.push_back({name + ".b" + std::to_string(l), std::move(b)});
  }
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  if (x.cols() != widths_.front()) {
    throw ShapeError("mlp " + weights_.front().name + ": input " + x.shape_str() + " vs width " +
                     std::to_string(widths_.front()));
  }
  Tensor h = x;
  for (size_t l = 0; l < weights_.size(); ++l) {
    h = tape.add_rowvec(tape.matmul(h, tape.var(weights_[l].value)), tape.var(biases_[l].value));
    if (l + 1 < weights_.size()) h = tape.silu(h);
  }
  if (out_act_ == OutputActivation::SoftmaxRows) h = tape.softmax_rows(h);
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
}

int64_t Mlp::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : weights_) n += p.value.size();
  for (const auto& p : biases_) n += p.value.size();
  return n;
}

Adam::Adam(std::vector<Parameter*> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step(const GradMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.mutable_data();
    const std::vector<double>* g = nullptr;
    auto it = grads.find(params_[k]->value.storage().get());
    if (it != grads.end()) {
      if (it->second.size() != static_cast<int>(value.size())) {
        throw ShapeError("adam: gradient " + it->second.shape_str() + " vs parameter " +
                         params_[k]->value.shape_str());
      }
      g = &it->second.data();
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < value.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      if (cfg_.weight_decay != 0.0) value[i] -= cfg_.lr * cfg_.weight_decay * value[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::string checkpoint_to_string(const std::vector<Parameter*>& params, const std::string& model_config_json) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  if (!model_config_json.empty()) {
    doc["model_config"] = nlohmann::ordered_json::parse(model_config_json);
  }
  nlohmann::ordered_json ps = nlohmann::ordered_json::object();
  for (const auto* p : params) {
    nlohmann::ordered_json entry;
    entry["shape"] = {p->value.rows(), p->value.cols()};
    entry["data"] = p->value.data();
    ps[p->name] = std::move(entry);
  }
  doc["params"] = std::move(ps);
  return doc.dump();
}

void save_checkpoint(const std::vector<Parameter*>& params, const std::string& model_config_json,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_string(params, model_config_json) << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

namespace {

nlohmann::json read_checkpoint_doc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
  if (!doc.contains("format_version") || !doc["format_version"].is_number_integer()) {
    throw DataError("checkpoint " + path + ": missing format_version");
  }
  const int version = doc["format_version"].get<int>();
  if (version != kCheckpointFormatVersion) {
    throw DataError("checkpoint " + path + ": format_version " + std::to_string(version) +
                    " not supported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  return doc;
}

}  // namespace

std::string peek_checkpoint_config(const std::string& path) {
  nlohmann::json doc = read_checkpoint_doc(path);
  if (!doc.contains("model_config")) throw DataError("checkpoint " + path + ": missing model_config");
  return doc["model_config"].dump();
}

void load_checkpoint(std::vector<Parameter*>& params, const std::string& path) {
  nlohmann::json doc = read_checkpoint_doc(path);
  if (!doc.contains("params") || !doc["params"].is_object()) {
    throw DataError("checkpoint " + path + ": missing params");
  }
  const auto& ps = doc["params"];
  for (auto* p : params) {
    if (!ps.contains(p->name)) throw DataError("checkpoint " + path + ": missing parameter " + p->name);
    const auto& entry = ps[p->name];
    const auto shape = entry["shape"].get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
      throw DataError("checkpoint " + path + ": parameter " + p->name + " shape mismatch");
    }
    auto values = entry["data"].get<std::vector<double>>();
    if (values.size() != p->value.data().size()) {
      throw DataError("checkpoint " + path + ": parameter " + p->name + " size mismatch");
    }
    p->value.mutable_data() = std::move(values);
  }
  if (ps.size() != params.size()) {
    throw DataError("checkpoint " + path + ": parameter count mismatch (" + std::to_string(ps.size()) +
                    " stored, " + std::to_string(params.size()) + " expected)");
  }
}

}  // namespace eghn
