#include "eghn/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eghn/errors.hpp"
#include "json.hpp"

namespace eghn {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::array<double, 3>> parse_vec3_list(const nlohmann::json& j, const std::string& what) {
  std::vector<std::array<double, 3>> out;
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != 3) throw DataError(what + ": expected length-3 rows");
    out.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
  }
  return out;
}

ordered_json dump_vec3_list(const std::vector<std::array<double, 3>>& v) {
  ordered_json out = ordered_json::array();
  for (const auto& row : v) out.push_back({row[0], row[1], row[2]});
  return out;
}

}  // namespace

ModelSample to_model_sample(const DatasetRecord& rec) {
  ModelSample s;
  s.positions = rec.positions;
  s.velocities = rec.velocities;
  s.charges = rec.charges;
  s.sticks = rec.sticks;
  s.extra_node_features = rec.extra_node_features;
  s.target_positions = rec.target_positions;
  s.target_velocities = rec.target_velocities;
  return s;
}

std::string record_to_json_line(const DatasetRecord& rec) {
  ordered_json j;
  j["schema_version"] = rec.schema_version;
  j["system_id"] = rec.system_id;
  ordered_json input;
  input["positions"] = dump_vec3_list(rec.positions);
  input["velocities"] = dump_vec3_list(rec.velocities);
  input["charges"] = rec.charges;
  ordered_json sticks = ordered_json::array();
  for (const auto& [a, b] : rec.sticks) sticks.push_back({a, b});
  input["sticks"] = std::move(sticks);
  input["extra_node_features"] = rec.extra_node_features;
  j["input"] = std::move(input);
  ordered_json target;
  target["positions"] = dump_vec3_list(rec.target_positions);
  target["velocities"] = dump_vec3_list(rec.target_velocities);
  j["target"] = std::move(target);
  ordered_json meta;
  meta["membership"] = rec.meta.membership;
  meta["seed"] = rec.meta.seed;
  meta["T"] = rec.meta.steps;
  meta["dt"] = rec.meta.dt;
  j["_meta"] = std::move(meta);
  return j.dump();
}

DatasetRecord record_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset record: ") + e.what());
  }
  DatasetRecord rec;
  try {
    rec.schema_version = j.at("schema_version").get<int>();
    if (rec.schema_version > kDatasetSchemaVersion) {
      throw DataError("dataset record has schema_version " + std::to_string(rec.schema_version) +
                      ", this build supports up to " + std::to_string(kDatasetSchemaVersion));
    }
    rec.system_id = j.at("system_id").get<std::string>();
    const auto& input = j.at("input");
    rec.positions = parse_vec3_list(input.at("positions"), "positions");
    rec.velocities = parse_vec3_list(input.at("velocities"), "velocities");
    rec.charges = input.at("charges").get<std::vector<double>>();
    for (const auto& e : input.at("sticks")) {
      if (!e.is_array() || e.size() != 2) throw DataError("sticks: expected [i,j] pairs");
      rec.sticks.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    rec.extra_node_features = input.at("extra_node_features").get<std::vector<std::vector<double>>>();
    const auto& target = j.at("target");
    rec.target_positions = parse_vec3_list(target.at("positions"), "target positions");
    rec.target_velocities = parse_vec3_list(target.at("velocities"), "target velocities");
    const auto& meta = j.at("_meta");
    rec.meta.membership = meta.at("membership").get<std::vector<int>>();
    rec.meta.seed = meta.at("seed").get<uint64_t>();
    rec.meta.steps = meta.at("T").get<int>();
    rec.meta.dt = meta.at("dt").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset record: ") + e.what());
  }
  const int n = rec.num_nodes();
  if (static_cast<int>(rec.velocities.size()) != n || static_cast<int>(rec.charges.size()) != n ||
      static_cast<int>(rec.target_positions.size()) != n || static_cast<int>(rec.target_velocities.size()) != n) {
    throw DataError("dataset record " + rec.system_id + ": inconsistent node counts");
  }
  for (const auto& [a, b] : rec.sticks) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) {
      throw DataError("dataset record " + rec.system_id + ": invalid stick indices");
    }
  }
  return rec;
}

void write_jsonl_records(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& rec : records) out << record_to_json_line(rec) << "\n";
  if (!out) throw IoError("failed writing: " + path);
}

std::vector<DatasetRecord> read_jsonl_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json_line(line));
  }
  return out;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  ordered_json j;
  j["schema_version"] = manifest.schema_version;
  j["counts"] = {{"train", manifest.counts.train}, {"val", manifest.counts.val}, {"test", manifest.counts.test}};
  ordered_json gen;
  gen["m"] = manifest.num_complexes;
  gen["avg_size"] = manifest.avg_size;
  gen["j"] = manifest.num_systems;
  gen["t"] = manifest.steps;
  gen["dt"] = manifest.dt;
  gen["seed"] = manifest.seed;
  gen["shape_signatures"] = manifest.shape_signatures;
  j["generation"] = std::move(gen);
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version > kDatasetSchemaVersion) {
      throw DataError("manifest schema_version " + std::to_string(m.schema_version) + " not supported");
    }
    m.counts.train = j.at("counts").at("train").get<int>();
    m.counts.val = j.at("counts").at("val").get<int>();
    m.counts.test = j.at("counts").at("test").get<int>();
    const auto& gen = j.at("generation");
    m.num_complexes = gen.at("m").get<int>();
    m.avg_size = gen.at("avg_size").get<double>();
    m.num_systems = gen.at("j").get<int>();
    m.steps = gen.at("t").get<int>();
    m.dt = gen.at("dt").get<double>();
    m.seed = gen.at("seed").get<uint64_t>();
    m.shape_signatures = gen.at("shape_signatures").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return m;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir + "/manifest.json");
  auto load_split = [&dir](const char* split) {
    std::vector<ModelSample> out;
    for (auto& rec : read_jsonl_records(dir + "/" + split + ".jsonl")) out.push_back(to_model_sample(rec));
    return out;
  };
  ds.train = load_split("train");
  ds.val = load_split("val");
  ds.test = load_split("test");
  return ds;
}

std::vector<std::vector<int>> load_memberships(const std::string& dir, const std::string& split) {
  std::vector<std::vector<int>> out;
  for (auto& rec : read_jsonl_records(dir + "/" + split + ".jsonl")) out.push_back(rec.meta.membership);
  return out;
}

SystemGraph build_system(const ModelSample& sample, double global_threshold) {
  const int n = sample.num_nodes();
  if (n == 0) throw DataError("build_system: empty sample");
  SystemGraph sys;
  sys.num_nodes = n;
  sys.spatial_dims = 3;
  sys.roles = {ChannelRole::Position, ChannelRole::Velocity};
  sys.Z = Tensor(n * 3, 2);
  Tensor positions(n, 3);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      sys.Z.at(i * 3 + d, 0) = sample.positions[static_cast<size_t>(i)][static_cast<size_t>(d)];
      sys.Z.at(i * 3 + d, 1) = sample.velocities[static_cast<size_t>(i)][static_cast<size_t>(d)];
      positions.at(i, d) = sample.positions[static_cast<size_t>(i)][static_cast<size_t>(d)];
    }
  }
  const int extra = sample.extra_node_features.empty()
                        ? 0
                        : static_cast<int>(sample.extra_node_features.front().size());
  sys.h = Tensor(n, 1 + extra);
  for (int i = 0; i < n; ++i) {
    const auto& v = sample.velocities[static_cast<size_t>(i)];
    sys.h.at(i, 0) = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (int e = 0; e < extra; ++e) sys.h.at(i, 1 + e) = sample.extra_node_features[static_cast<size_t>(i)][static_cast<size_t>(e)];
  }
  sys.A_local = Tensor(n, n);
  Tensor stick_attr(n, n);
  for (const auto& [a, b] : sample.sticks) {
    sys.A_local.at(a, b) = 1.0;
    sys.A_local.at(b, a) = 1.0;
    stick_attr.at(a, b) = 1.0;
    stick_attr.at(b, a) = 1.0;
  }
  sys.A_global = build_global_adjacency(positions, global_threshold);
  Tensor charge_attr(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) charge_attr.at(i, j) = sample.charges[static_cast<size_t>(i)] * sample.charges[static_cast<size_t>(j)];
  sys.edge_attrs = {charge_attr, stick_attr};
  sys.validate();
  return sys;
}

Tensor target_positions_tensor(const ModelSample& sample) {
  const int n = sample.num_nodes();
  Tensor t(n * 3, 1);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) t.at(i * 3 + d, 0) = sample.target_positions[static_cast<size_t>(i)][static_cast<size_t>(d)];
  return t;
}

Tensor target_velocities_tensor(const ModelSample& sample) {
  const int n = sample.num_nodes();
  Tensor t(n * 3, 1);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) t.at(i * 3 + d, 0) = sample.target_velocities[static_cast<size_t>(i)][static_cast<size_t>(d)];
  return t;
}

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (model_kind != "eghn" && model_kind != "egnn-baseline" && model_kind != "linear") {
    throw ConfigError("config: unknown model kind '" + model_kind + "'");
  }
  if (ablation != "none" && ablation != "no-equivariance" && ablation != "no-connectivity" &&
      ablation != "global-only" && ablation != "local-only") {
    throw ConfigError("config: unknown ablation '" + ablation + "'");
  }
  if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("config: patience must be >= 1");
  model.validate();
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["dataset_dir"] = dataset_dir;
  j["dataset_name"] = dataset_name;
  j["model"] = model_kind;
  j["out_dir"] = out_dir;
  j["ablation"] = ablation;
  j["seed"] = seed;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["k_sweep"] = k_sweep;
  j["model_config"] = nlohmann::ordered_json::parse(model.to_json());
  return j.dump();
}

RunConfig run_config_defaults(const std::string& dataset_name) {
  RunConfig cfg;
  cfg.dataset_name = dataset_name;
  // Catalogue rows: learning rate, lambda, weight decay, encoder EMMP depth,
  // decoder EMMP depth, and per-dataset batch size / cluster count.
  struct Row {
    const char* name;
    double lr, lambda, wd;
    int enc, dec, batch, clusters;
  };
  static const Row rows[] = {
      {"(3,3,1)", 5e-4, 4.0, 1e-4, 4, 2, 50, 3},
      {"(3,3,5)", 1e-3, 4.0, 1e-4, 4, 2, 50, 3},
      {"(5,5,1)", 3e-4, 2.0, 1e-6, 4, 2, 50, 5},
      {"(5,5,5)", 1e-3, 0.1, 1e-12, 4, 2, 50, 5},
      {"(5,10,1)", 1e-4, 4.0, 1e-4, 2, 2, 50, 5},
      {"(5,10,5)", 5e-4, 4.0, 1e-4, 4, 2, 50, 5},
      {"(10,10,1)", 5e-4, 2.0, 1e-6, 4, 2, 50, 10},
      {"(10,10,5)", 3e-4, 1.0, 1e-8, 4, 2, 50, 10},
      {"mocap_walk", 4e-4, 1.0, 1e-6, 2, 2, 12, 5},
      {"mocap_run", 3e-4, 1.0, 1e-6, 4, 1, 12, 5},
      {"md", 2e-4, 0.5, 1e-4, 3, 2, 8, 15},
  };
  for (const auto& row : rows) {
    if (dataset_name == row.name) {
      cfg.model.learning_rate = row.lr;
      cfg.model.lambda_connectivity = row.lambda;
      cfg.model.weight_decay = row.wd;
      cfg.model.encoder_layers = row.enc;
      cfg.model.decoder_layers = row.dec;
      cfg.model.batch_size = row.batch;
      cfg.model.levels = 1;
      cfg.model.clusters = {row.clusters};
      return cfg;
    }
  }
  throw ConfigError("no default hyper-parameters for dataset '" + dataset_name + "'");
}

RunConfig resolve_run_config(const std::string& config_path, const RunOverrides& flags) {
  nlohmann::json file = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config: " + config_path);
    try {
      in >> file;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (!file.is_object()) throw ConfigError("config: expected a JSON object");
  }

  static const char* known_keys[] = {
      "dataset_dir", "dataset_name", "model",          "out_dir",        "ablation",
      "seed",        "max_epochs",   "patience",       "k_sweep",        "learning_rate",
      "weight_decay", "lambda",      "batch_size",     "hidden_dim",     "feature_dim",    "gradient_clip",
      "levels",      "clusters",     "encoder_layers", "decoder_layers", "recursive",
      "supervise_velocity", "pool_features", "global_threshold"};
  for (auto it = file.begin(); it != file.end(); ++it) {
    bool ok = false;
    for (const char* k : known_keys) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
  }

  std::string dataset_name = "(3,3,1)";
  if (file.contains("dataset_name")) dataset_name = file["dataset_name"].get<std::string>();
  if (flags.dataset_name) dataset_name = *flags.dataset_name;
  RunConfig cfg = run_config_defaults(dataset_name);

  try {
    if (file.contains("dataset_dir")) cfg.dataset_dir = file["dataset_dir"].get<std::string>();
    if (file.contains("model")) cfg.model_kind = file["model"].get<std::string>();
    if (file.contains("out_dir")) cfg.out_dir = file["out_dir"].get<std::string>();
    if (file.contains("ablation")) cfg.ablation = file["ablation"].get<std::string>();
    if (file.contains("seed")) cfg.seed = file["seed"].get<uint64_t>();
    if (file.contains("max_epochs")) cfg.max_epochs = file["max_epochs"].get<int>();
    if (file.contains("patience")) cfg.patience = file["patience"].get<int>();
    if (file.contains("k_sweep")) cfg.k_sweep = file["k_sweep"].get<std::vector<int>>();
    if (file.contains("learning_rate")) cfg.model.learning_rate = file["learning_rate"].get<double>();
    if (file.contains("weight_decay")) cfg.model.weight_decay = file["weight_decay"].get<double>();
    if (file.contains("gradient_clip")) cfg.model.gradient_clip = file["gradient_clip"].get<double>();
    if (file.contains("lambda")) cfg.model.lambda_connectivity = file["lambda"].get<double>();
    if (file.contains("batch_size")) cfg.model.batch_size = file["batch_size"].get<int>();
    if (file.contains("hidden_dim")) cfg.model.hidden_dim = file["hidden_dim"].get<int>();
    if (file.contains("feature_dim")) cfg.model.feature_dim = file["feature_dim"].get<int>();
    if (file.contains("levels")) cfg.model.levels = file["levels"].get<int>();
    if (file.contains("clusters")) cfg.model.clusters = file["clusters"].get<std::vector<int>>();
    if (file.contains("encoder_layers")) cfg.model.encoder_layers = file["encoder_layers"].get<int>();
    if (file.contains("decoder_layers")) cfg.model.decoder_layers = file["decoder_layers"].get<int>();
    if (file.contains("recursive")) cfg.model.recursive = file["recursive"].get<bool>();
    if (file.contains("supervise_velocity")) cfg.model.supervise_velocity = file["supervise_velocity"].get<bool>();
    if (file.contains("pool_features")) cfg.model.pool_features = file["pool_features"].get<std::string>();
    if (file.contains("global_threshold")) {
      cfg.model.global_threshold = file["global_threshold"].is_null()
                                       ? std::numeric_limits<double>::infinity()
                                       : file["global_threshold"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (flags.dataset_dir) cfg.dataset_dir = *flags.dataset_dir;
  if (flags.model_kind) cfg.model_kind = *flags.model_kind;
  if (flags.out_dir) cfg.out_dir = *flags.out_dir;
  if (flags.ablation) cfg.ablation = *flags.ablation;
  if (flags.pool_features) cfg.model.pool_features = *flags.pool_features;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.max_epochs) cfg.max_epochs = *flags.max_epochs;
  if (flags.patience) cfg.patience = *flags.patience;
  if (flags.batch_size) cfg.model.batch_size = *flags.batch_size;
  if (flags.hidden_dim) cfg.model.hidden_dim = *flags.hidden_dim;
  if (flags.feature_dim) cfg.model.feature_dim = *flags.feature_dim;
  if (flags.levels) cfg.model.levels = *flags.levels;
  if (flags.encoder_layers) cfg.model.encoder_layers = *flags.encoder_layers;
  if (flags.decoder_layers) cfg.model.decoder_layers = *flags.decoder_layers;
  if (flags.learning_rate) cfg.model.learning_rate = *flags.learning_rate;
  if (flags.weight_decay) cfg.model.weight_decay = *flags.weight_decay;
  if (flags.gradient_clip) cfg.model.gradient_clip = *flags.gradient_clip;
  if (flags.lambda) cfg.model.lambda_connectivity = *flags.lambda;
  if (flags.global_threshold) cfg.model.global_threshold = *flags.global_threshold;
  if (flags.clusters) cfg.model.clusters = *flags.clusters;
  if (flags.recursive) cfg.model.recursive = *flags.recursive;
  if (flags.supervise_velocity) cfg.model.supervise_velocity = *flags.supervise_velocity;

  if (static_cast<int>(cfg.model.clusters.size()) != cfg.model.levels) {
    cfg.model.clusters.resize(static_cast<size_t>(std::max(cfg.model.levels, 0)),
                              cfg.model.clusters.empty() ? 2 : cfg.model.clusters.back());
  }
  cfg.validate();
  return cfg;
}

}  // namespace eghn
