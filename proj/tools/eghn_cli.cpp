#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "eghn/errors.hpp"
#include "eghn/io.hpp"
#include "eghn/simulator.hpp"
#include "eghn/svg.hpp"
#include "eghn/training.hpp"
#include "json.hpp"

namespace {

using namespace eghn;

struct GenerateArgs {
  int m = 3;
  double avg_size = 3.0;
  int j = 1;
  int t = 1500;
  double dt = 1e-3;
  std::string counts = "500,100,100";
  uint64_t seed = 0;
  std::string out = "data";
};

DatasetCounts parse_counts(const std::string& text) {
  DatasetCounts c;
  std::stringstream ss(text);
  std::string part;
  int values[3];
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ',')) throw ConfigError("--counts expects train,val,test");
    try {
      values[i] = std::stoi(part);
    } catch (const std::exception&) {
      throw ConfigError("--counts expects integers, got '" + part + "'");
    }
  }
  c.train = values[0];
  c.val = values[1];
  c.test = values[2];
  return c;
}

int cmd_generate(const GenerateArgs& args) {
  DatasetSpec spec;
  spec.num_complexes = args.m;
  spec.avg_size = args.avg_size;
  spec.num_systems = args.j;
  spec.steps = args.t;
  spec.dt = args.dt;
  spec.counts = parse_counts(args.counts);
  spec.seed = args.seed;
  make_dataset(spec, args.out);
  std::cout << "wrote " << spec.counts.train << "/" << spec.counts.val << "/" << spec.counts.test
            << " trajectories to " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, dataset, model, out, ablation, pool_features;
  std::optional<uint64_t> seed;
  std::optional<int> max_epochs, patience, batch_size, hidden_dim, feature_dim, levels, encoder_layers,
      decoder_layers;
  std::optional<double> lr, wd, lambda, threshold, gradient_clip;
  std::string dataset_name;
  std::vector<int> clusters;
};

RunConfig resolve_from_args(const TrainArgs& args) {
  RunOverrides flags;
  if (!args.dataset.empty()) flags.dataset_dir = args.dataset;
  if (!args.dataset_name.empty()) flags.dataset_name = args.dataset_name;
  if (!args.model.empty()) flags.model_kind = args.model;
  if (!args.out.empty()) flags.out_dir = args.out;
  if (!args.ablation.empty()) flags.ablation = args.ablation;
  if (!args.pool_features.empty()) flags.pool_features = args.pool_features;
  flags.seed = args.seed;
  flags.max_epochs = args.max_epochs;
  flags.patience = args.patience;
  flags.batch_size = args.batch_size;
  flags.hidden_dim = args.hidden_dim;
  flags.feature_dim = args.feature_dim;
  flags.levels = args.levels;
  flags.encoder_layers = args.encoder_layers;
  flags.decoder_layers = args.decoder_layers;
  flags.learning_rate = args.lr;
  flags.weight_decay = args.wd;
  flags.gradient_clip = args.gradient_clip;
  flags.lambda = args.lambda;
  flags.global_threshold = args.threshold;
  if (!args.clusters.empty()) flags.clusters = args.clusters;
  return resolve_run_config(args.config, flags);
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = resolve_from_args(args);
  if (cfg.dataset_dir.empty()) throw ConfigError("train: --dataset (or dataset_dir in the config) is required");
  Dataset dataset = load_dataset(cfg.dataset_dir);
  TrainResult result = train_model(cfg, dataset);
  std::filesystem::create_directories(cfg.out_dir);
  if (result.model) {
    result.record.checkpoint_path = cfg.out_dir + "/checkpoint.json";
    result.model->save(result.record.checkpoint_path);
    if (result.model->config().levels > 0) {
      auto test_set = prepare_samples(dataset.test, result.model->config().global_threshold);
      result.record.final_pool_purity =
          mean_final_pool_purity(*result.model, test_set, load_memberships(cfg.dataset_dir, "test"));
    }
  }
  save_run_record(result.record, cfg.out_dir + "/run_record.json");
  write_text_file(cfg.out_dir + "/losses.csv", losses_csv(result.record));
  std::cout << "model " << cfg.model_kind << " seed " << cfg.seed << "\n";
  std::cout << "test MSE " << result.record.test_mse << " (x1e-2: " << 100.0 * result.record.test_mse << ")\n";
  if (result.record.final_pool_purity >= 0.0) {
    std::cout << "final pool purity " << result.record.final_pool_purity << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "test", out;
};

int cmd_eval(const EvalArgs& args) {
  EghnModel model = EghnModel::load(args.checkpoint);
  Dataset dataset = load_dataset(args.dataset);
  const std::vector<ModelSample>* split = &dataset.test;
  if (args.split == "train") split = &dataset.train;
  else if (args.split == "val") split = &dataset.val;
  else if (args.split != "test") throw ConfigError("eval: unknown split '" + args.split + "'");
  auto prepared = prepare_samples(*split, model.config().global_threshold);
  const double mse = evaluate_model_mse(model, prepared);
  auto detail = evaluate_per_sample(model, prepared);
  std::cout << "split " << args.split << " MSE " << mse << " (x1e-2: " << 100.0 * mse << ")\n";
  if (!args.out.empty()) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["split"] = args.split;
    j["mse"] = mse;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (size_t i = 0; i < detail.size(); ++i) {
      samples.push_back({{"sample", i}, {"mse", detail[i].mse}, {"per_node", detail[i].per_node}});
    }
    j["samples"] = std::move(samples);
    write_text_file(args.out, j.dump(2) + "\n");
  }
  return 0;
}

struct ReportArgs {
  std::string checkpoint, dataset, split = "test", out = "pooling_report.json";
  int index = 0;
};

int cmd_pooling_report(const ReportArgs& args) {
  EghnModel model = EghnModel::load(args.checkpoint);
  Dataset dataset = load_dataset(args.dataset);
  const std::vector<ModelSample>* split = &dataset.test;
  if (args.split == "train") split = &dataset.train;
  else if (args.split == "val") split = &dataset.val;
  else if (args.split != "test") throw ConfigError("pooling-report: unknown split '" + args.split + "'");
  if (args.index < 0 || args.index >= static_cast<int>(split->size())) {
    throw DataError("pooling-report: sample index " + std::to_string(args.index) + " out of range");
  }
  auto report = pooling_report(model, (*split)[static_cast<size_t>(args.index)], model.config().global_threshold);
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["split"] = args.split;
  j["sample"] = args.index;
  j["assignments"] = report.assignments;
  nlohmann::ordered_json scores = nlohmann::ordered_json::array();
  for (int i = 0; i < report.S.rows(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int k = 0; k < report.S.cols(); ++k) row.push_back(report.S.at(i, k));
    scores.push_back(std::move(row));
  }
  j["scores"] = std::move(scores);
  nlohmann::ordered_json pos = nlohmann::ordered_json::array();
  for (const auto& p : report.positions) pos.push_back({p[0], p[1], p[2]});
  j["positions"] = std::move(pos);
  write_text_file(args.out, j.dump(2) + "\n");
  std::cout << "wrote " << args.out << " (" << report.assignments.size() << " nodes)\n";
  return 0;
}

struct PlotArgs {
  std::string pooling_report, run_record, out = ".";
};

int cmd_plot_export(const PlotArgs& args) {
  if (args.pooling_report.empty() && args.run_record.empty()) {
    throw ConfigError("plot-export: need --pooling-report and/or --run-record");
  }
  std::filesystem::create_directories(args.out);
  if (!args.pooling_report.empty()) {
    std::ifstream in(args.pooling_report);
    if (!in) throw IoError("cannot open: " + args.pooling_report);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed pooling report: ") + e.what());
    }
    std::vector<double> xs, ys;
    std::vector<int> ids;
    try {
      for (const auto& p : j.at("positions")) {
        xs.push_back(p.at(0).get<double>());
        ys.push_back(p.at(1).get<double>());
      }
      ids = j.at("assignments").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("pooling report: ") + e.what());
    }
    write_text_file(args.out + "/clusters.svg", scatter_svg(xs, ys, ids, "pooling clusters (xy projection)"));
    std::cout << "wrote " << args.out << "/clusters.svg\n";
  }
  if (!args.run_record.empty()) {
    RunRecord record = load_run_record(args.run_record);
    write_text_file(args.out + "/loss_curves.svg",
                    loss_curves_svg(record.train_losses, record.val_losses, "training curves"));
    std::cout << "wrote " << args.out << "/loss_curves.svg\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EGHN: equivariant hierarchy-based graph network for multi-body dynamics"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "simulate an M-complex dataset");
  generate->add_option("--m", gen.m, "number of complexes per system");
  generate->add_option("--avg-size", gen.avg_size, "average complex size");
  generate->add_option("--j", gen.j, "number of distinct systems");
  generate->add_option("--t", gen.t, "simulation steps per trajectory");
  generate->add_option("--dt", gen.dt, "integrator time step");
  generate->add_option("--counts", gen.counts, "train,val,test trajectory counts");
  generate->add_option("--seed", gen.seed, "base seed");
  generate->add_option("--out", gen.out, "output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train a model and write checkpoint + run record");
  train->add_option("--config", tr.config, "JSON config file");
  train->add_option("--dataset", tr.dataset, "dataset directory");
  train->add_option("--dataset-name", tr.dataset_name, "named default hyper-parameter row");
  train->add_option("--model", tr.model, "eghn | egnn-baseline | linear");
  train->add_option("--out", tr.out, "output directory");
  train->add_option("--ablation", tr.ablation, "none | no-equivariance | no-connectivity | global-only | local-only");
  train->add_option("--pool-features", tr.pool_features, "input | updated");
  train->add_option("--seed", tr.seed, "training seed");
  train->add_option("--max-epochs", tr.max_epochs, "epoch cap");
  train->add_option("--patience", tr.patience, "early-stopping patience");
  train->add_option("--batch-size", tr.batch_size, "batch size");
  train->add_option("--hidden-dim", tr.hidden_dim, "MLP hidden width");
  train->add_option("--feature-dim", tr.feature_dim, "node feature width");
  train->add_option("--levels", tr.levels, "pooling levels");
  train->add_option("--encoder-layers", tr.encoder_layers, "external EMMPs per encoder level");
  train->add_option("--decoder-layers", tr.decoder_layers, "external EMMPs per decoder level");
  train->add_option("--lr", tr.lr, "learning rate");
  train->add_option("--weight-decay", tr.wd, "decoupled weight decay");
  train->add_option("--gradient-clip", tr.gradient_clip, "global-norm gradient clip (0 = off)");
  train->add_option("--lambda", tr.lambda, "connectivity loss weight");
  train->add_option("--global-threshold", tr.threshold, "distance threshold for A_global");
  train->add_option("--clusters", tr.clusters, "cluster counts per level");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  eval->add_option("--dataset", ev.dataset, "dataset directory")->required();
  eval->add_option("--split", ev.split, "train | val | test");
  eval->add_option("--out", ev.out, "JSON output path");

  ReportArgs rep;
  auto* report = app.add_subcommand("pooling-report", "per-node cluster assignments of the final E-Pool");
  report->add_option("--checkpoint", rep.checkpoint, "checkpoint path")->required();
  report->add_option("--dataset", rep.dataset, "dataset directory")->required();
  report->add_option("--split", rep.split, "train | val | test");
  report->add_option("--index", rep.index, "sample index");
  report->add_option("--out", rep.out, "JSON output path");

  PlotArgs plot;
  auto* plot_export = app.add_subcommand("plot-export", "SVG cluster scatter / loss curves");
  plot_export->add_option("--pooling-report", plot.pooling_report, "pooling report JSON");
  plot_export->add_option("--run-record", plot.run_record, "run record JSON");
  plot_export->add_option("--out", plot.out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return cmd_generate(gen);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*report) return cmd_pooling_report(rep);
    if (*plot_export) return cmd_plot_export(plot);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ConfigError::exit_code;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return DataError::exit_code;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return NumericError::exit_code;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return IoError::exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
