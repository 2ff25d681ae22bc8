// latentadv: command-line driver for training, single attacks and the
// experiment suite. Every subcommand prints one JSON document on success; on
// failure a JSON error document goes to stderr and the exit code is nonzero.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latentadv/errors.hpp"
#include "latentadv/experiment.hpp"
#include "latentadv/logging.hpp"

using namespace latentadv;
using nlohmann::json;

namespace {

struct Flags {
  ExperimentConfig exp;
  std::string mode = "untargeted";
  std::optional<std::size_t> target;
  std::string distance = "l2";
  std::string init = "donor";
  std::string snapshot_iters;
  std::string develop_iters;
  std::string network = "standard";
  std::size_t image = 0;
  std::string data_dir;
  std::string checkpoint;
  std::string output_dir;
  std::string log_level;
};

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      require(used == item.size(), ErrorCode::invalid_argument, "");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_argument, "--" + flag + ": '" + item + "' is not a non-negative integer");
    }
  }
  return out;
}

void add_attack_flags(CLI::App* app, Flags& f) {
  AttackConfig& a = f.exp.attack;
  app->add_option("--max_iter", a.max_iter, "Outer iterations");
  app->add_option("--alpha", a.alpha, "Normalized gradient step on f");
  app->add_option("--beta0", a.beta0, "Initial bounce-away step");
  app->add_option("--beta_decay", a.beta_decay, "Bounce-away decay per iteration");
  app->add_option("--delta", a.delta, "Projection acceptance width");
  app->add_option("--mode", f.mode, "targeted | untargeted")->check(CLI::IsMember({"targeted", "untargeted"}));
  app->add_option("--target", f.target, "Target class (default: the original's drawn target)");
  app->add_option("--distance", f.distance, "Objective: l2 | sinkhorn")->check(CLI::IsMember({"l2", "sinkhorn"}));
  app->add_option("--sinkhorn_lambda", a.distance.sinkhorn.lambda, "Entropic regularization of the objective");
  app->add_option("--sinkhorn_max_iters", a.distance.sinkhorn.max_iters, "Sinkhorn iterations of the objective");
  app->add_option("--sinkhorn_tol", a.distance.sinkhorn.tol, "Sinkhorn marginal tolerance of the objective");
  app->add_option("--init", f.init, "donor | random_search")->check(CLI::IsMember({"donor", "random_search"}));
  app->add_option("--init_trials", a.init_trials, "Random-search trials");
  app->add_option("--init_radius_step", a.init_radius_step, "Random-search radius increment");
  app->add_option("--donor_margin", a.donor_margin, "Required donor margin");
  app->add_flag("--literal_untargeted", a.literal_untargeted, "Untargeted constraint at the running argmax");
  app->add_option("--snapshot_iters", f.snapshot_iters, "Comma-separated iterations to snapshot");
}

void add_experiment_flags(CLI::App* app, Flags& f) {
  ExperimentConfig& e = f.exp;
  app->add_option("--seed", e.seed, "Experiment seed");
  app->add_option("--split_index", e.split_index, "Decoder layer receiving the perturbation");
  app->add_option("--images_per_cell", e.images_per_cell, "Originals per suite cell");
  app->add_option("--min_confidence", e.min_confidence, "Required original confidence");
  app->add_option("--metric_lambda", e.metric.lambda, "Regularization of the reported Wasserstein metric");
  app->add_option("--metric_max_iters", e.metric.max_iters, "Sinkhorn iterations of the metric");
  app->add_option("--metric_tol", e.metric.tol, "Sinkhorn tolerance of the metric");
  app->add_option("--train_per_class", e.train_per_class, "Training images per class");
  app->add_option("--test_per_class", e.test_per_class, "Test images per class");
  app->add_option("--data_dir", f.data_dir, "Directory with MNIST IDX files (else $LATENTADV_DATA_DIR)");
  app->add_option("--checkpoint", f.checkpoint, "Model checkpoint: loaded if present, written after training");
  app->add_option("--ae_epochs", e.autoencoder_training.epochs, "Autoencoder epochs");
  app->add_option("--classifier_epochs", e.classifier_training.epochs, "Classifier epochs");
  app->add_option("--learning_rate", e.classifier_training.learning_rate, "Classifier learning rate");
  app->add_option("--robust_epsilon", e.robust_training.epsilon, "PGD strength of adversarial training");
  app->add_option("--pgd_steps", e.robust_training.steps, "PGD steps of adversarial training");
  app->add_flag("--pixel_baseline", e.pixel_baseline, "Run the pixel-space baseline cells");
  app->add_flag("--check_bound", e.check_bound, "Record the bisection bound with an estimated Lipschitz slope");
  app->add_option("--lipschitz_samples", e.lipschitz_samples, "Segments for the Lipschitz estimate");
  app->add_option("--sweep_images", e.sweep_images, "Originals in the layer sweep");
  app->add_option("--develop_iters", f.develop_iters, "Comma-separated snapshot iterations of the development strip");
  app->add_option("--output_dir", f.output_dir, "Artifact directory");
  app->add_flag("--write_images", e.write_images, "Write PGM artifacts");
  app->add_option("--log_level", f.log_level, "quiet | warning | info | debug")
      ->check(CLI::IsMember({"quiet", "warning", "info", "debug"}));
}

void finalize(Flags& f) {
  AttackConfig& a = f.exp.attack;
  a.mode = f.mode == "targeted" ? AttackMode::targeted(f.target.value_or(0)) : AttackMode::untargeted();
  a.distance.kind = distance_kind_from_string(f.distance);
  a.init = init_strategy_from_string(f.init);
  if (!f.snapshot_iters.empty()) a.snapshot_iters = parse_list(f.snapshot_iters, "snapshot_iters");
  if (!f.develop_iters.empty()) f.exp.develop_iters = parse_list(f.develop_iters, "develop_iters");
  if (!f.data_dir.empty()) f.exp.data_dir = f.data_dir;
  if (!f.checkpoint.empty()) f.exp.checkpoint = f.checkpoint;
  if (!f.output_dir.empty()) f.exp.output_dir = f.output_dir;
  if (f.log_level == "quiet") set_log_level(LogLevel::quiet);
  else if (f.log_level == "warning") set_log_level(LogLevel::warning);
  else if (f.log_level == "info") set_log_level(LogLevel::info);
  else if (f.log_level == "debug") set_log_level(LogLevel::debug);
}

// Flat JSON object → "--key=value" tokens.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "config file " + path + ": " + e.what());
  }
  require(doc.is_object(), ErrorCode::invalid_argument, "config file " + path + " must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : doc.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& item : value) text += (text.empty() ? "" : ",") + (item.is_string() ? item.get<std::string>() : item.dump());
    } else if (value.is_primitive() && !value.is_null()) {
      text = value.dump();
    } else {
      throw Error(ErrorCode::invalid_argument, "config key '" + key + "' must be a scalar or a list");
    }
    out.push_back("--" + key + "=" + text);
  }
  return out;
}

// Moves `--config FILE` out of argv and splices the file's flags in right
// after the subcommand, so later command-line flags override them.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!file) return args;
  const auto tokens = config_tokens(*file);
  const auto verb = std::find_if(args.begin(), args.end(), [](const std::string& a) { return a.rfind("-", 0) != 0; });
  require(verb != args.end(), ErrorCode::invalid_argument, "--config needs a subcommand");
  args.insert(verb + 1, tokens.begin(), tokens.end());
  return args;
}

json record_json(const AttackRecord& r) {
  return {{"network", to_string(r.network)},
          {"space", to_string(r.space)},
          {"mode", to_string(r.mode)},
          {"objective", to_string(r.objective)},
          {"image", r.image},
          {"label", r.label},
          {"target", r.target},
          {"split", r.split},
          {"success", r.success},
          {"l2", r.l2},
          {"wasserstein", r.wasserstein},
          {"objective_value", r.objective_value},
          {"initial_objective", r.initial_objective},
          {"lsb_change_rate", r.lsb_change_rate},
          {"iterations", r.iterations},
          {"projections", r.projections},
          {"bisections_max", r.bisections_max},
          {"bound_violations", r.bound_violations},
          {"max_trace_g", r.max_trace_g}};
}

json models_json(const PreparedModels& m) {
  return {{"clean_accuracy", m.clean_accuracy},
          {"robust_clean_accuracy", m.robust_clean_accuracy},
          {"robust_pgd_accuracy", m.robust_pgd_accuracy},
          {"reconstruction_error", m.reconstruction_error},
          {"loaded_from_checkpoint", m.loaded_from_checkpoint},
          {"data", m.data.train.provenance}};
}

json aggregates_json(const ExperimentReport& report) {
  json cells = json::array();
  for (const auto& a : report.aggregates)
    cells.push_back({{"network", to_string(a.network)},
                     {"space", to_string(a.space)},
                     {"mode", to_string(a.mode)},
                     {"objective", to_string(a.objective)},
                     {"attacked", a.attacked},
                     {"succeeded", a.succeeded},
                     {"mean_l2", a.mean_l2},
                     {"mean_wasserstein", a.mean_wasserstein},
                     {"mean_lsb_change_rate", a.mean_lsb_change_rate}});
  return cells;
}

void print_error(std::string_view code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial images from intermediate decoder layers"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Flags f;
  json output;
  std::string verb;

  auto* train = app.add_subcommand("train", "Train (or load) the autoencoder and both classifiers");
  add_attack_flags(train, f);  // accepted so that one config file serves every verb
  add_experiment_flags(train, f);
  train->callback([&] {
    require(!f.checkpoint.empty(), ErrorCode::invalid_argument, "train needs --checkpoint");
    finalize(f);
    output = models_json(prepare_models(f.exp));
    output["checkpoint"] = f.checkpoint;
  });

  auto single = [&](Space space) {
    finalize(f);
    const PreparedModels models = prepare_models(f.exp);
    const SingleAttack run = run_single_attack(f.exp, models, network_from_string(f.network), space, f.image, f.target);
    output = record_json(run.record);
    output["predicted_class"] = run.result.predicted_class;
  };

  auto* attack = app.add_subcommand("attack", "Attack one image at the intermediate layer");
  add_attack_flags(attack, f);
  add_experiment_flags(attack, f);
  attack->add_option("--image", f.image, "Index into the seeded selection of originals");
  attack->add_option("--network", f.network, "standard | robust")->check(CLI::IsMember({"standard", "robust"}));
  attack->callback([&] { single(Space::intermediate); });

  auto* baseline = app.add_subcommand("baseline", "Attack one image in pixel space");
  add_attack_flags(baseline, f);
  add_experiment_flags(baseline, f);
  baseline->add_option("--image", f.image, "Index into the seeded selection of originals");
  baseline->add_option("--network", f.network, "standard | robust")->check(CLI::IsMember({"standard", "robust"}));
  baseline->callback([&] { single(Space::pixel); });

  auto* lsb_cmd = app.add_subcommand("lsb", "LSB comparison of the intermediate and pixel attacks on one image");
  add_attack_flags(lsb_cmd, f);
  add_experiment_flags(lsb_cmd, f);
  lsb_cmd->add_option("--image", f.image, "Index into the seeded selection of originals");
  lsb_cmd->add_option("--network", f.network, "standard | robust")->check(CLI::IsMember({"standard", "robust"}));
  lsb_cmd->callback([&] {
    finalize(f);
    const PreparedModels models = prepare_models(f.exp);
    const Network net = network_from_string(f.network);
    const SingleAttack inner = run_single_attack(f.exp, models, net, Space::intermediate, f.image, f.target);
    const SingleAttack pixel = run_single_attack(f.exp, models, net, Space::pixel, f.image, f.target);
    output = {{"intermediate", record_json(inner.record)}, {"pixel", record_json(pixel.record)}};
  });

  auto* suite = app.add_subcommand("suite", "Suite over both networks, modes and objectives");
  add_attack_flags(suite, f);
  add_experiment_flags(suite, f);
  suite->callback([&] {
    finalize(f);
    const PreparedModels models = prepare_models(f.exp);
    const ExperimentReport report = run_experiment_suite(f.exp, models);
    output = {{"models", models_json(models)}, {"cells", aggregates_json(report)}};
  });

  auto* sweep = app.add_subcommand("sweep-layer", "Strip of adversarial images for every split");
  add_attack_flags(sweep, f);
  add_experiment_flags(sweep, f);
  sweep->callback([&] {
    finalize(f);
    require(!f.exp.output_dir.empty(), ErrorCode::invalid_argument, "sweep-layer needs --output_dir");
    json paths = json::array();
    for (const auto& p : run_layer_sweep(f.exp, prepare_models(f.exp))) paths.push_back(p.string());
    output = {{"strips", paths}};
  });

  auto* develop = app.add_subcommand("develop", "Strip of iterate snapshots of one attack");
  add_attack_flags(develop, f);
  add_experiment_flags(develop, f);
  develop->add_option("--image", f.image, "Index into the selection of originals");
  develop->callback([&] {
    finalize(f);
    require(!f.exp.output_dir.empty(), ErrorCode::invalid_argument, "develop needs --output_dir");
    output = {{"strip", run_development(f.exp, prepare_models(f.exp), f.image).string()}};
  });

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  std::cout << output.dump(2) << '\n';
  return 0;
}
