#include "latentadv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "latentadv/errors.hpp"
#include "latentadv/image_io.hpp"
#include "latentadv/logging.hpp"
#include "latentadv/steganalysis.hpp"

namespace latentadv {

std::string_view to_string(Network network) { return network == Network::standard ? "standard" : "robust"; }
std::string_view to_string(Space space) { return space == Space::intermediate ? "intermediate" : "pixel"; }

Network network_from_string(std::string_view s) {
  if (s == "standard") return Network::standard;
  if (s == "robust") return Network::robust;
  throw Error(ErrorCode::invalid_argument, "unknown network '" + std::string(s) + "'");
}

Space space_from_string(std::string_view s) {
  if (s == "intermediate") return Space::intermediate;
  if (s == "pixel") return Space::pixel;
  throw Error(ErrorCode::invalid_argument, "unknown space '" + std::string(s) + "'");
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_config(const ExperimentConfig& c) {
  require(c.images_per_cell >= 1, ErrorCode::invalid_argument, "images_per_cell must be at least 1");
  require(c.min_confidence >= 0 && c.min_confidence < 1, ErrorCode::invalid_argument,
          "min_confidence must lie in [0, 1)");
  require(c.train_per_class >= 1 && c.test_per_class >= 1, ErrorCode::invalid_argument,
          "dataset sizes must be positive");
  c.attack.validate();
}

}  // namespace

// ---------------------------------------------------------------------------
// Models

PreparedModels prepare_models(const ExperimentConfig& config) {
  check_config(config);
  PreparedModels out;
  out.data = load_data(config.seed, config.train_per_class, config.test_per_class, config.data_dir);
  const Architecture arch;

  if (config.checkpoint && std::filesystem::exists(*config.checkpoint)) {
    out.bundle = load_checkpoint(*config.checkpoint);
    require(out.bundle.robust_classifier.has_value(), ErrorCode::invalid_argument,
            "checkpoint " + config.checkpoint->string() + " has no robust classifier");
    out.loaded_from_checkpoint = true;
    log_info("loaded models from " + config.checkpoint->string());
  } else {
    TrainOptions ae = config.autoencoder_training;
    ae.seed = mix(config.seed, 1);
    TrainOptions clf = config.classifier_training;
    clf.seed = mix(config.seed, 2);
    TrainOptions rob = config.classifier_training;
    rob.seed = mix(config.seed, 3);

    log_info("training autoencoder on " + std::to_string(out.data.train.size()) + " images (" +
             out.data.train.provenance + ")");
    AutoencoderTraining autoenc = train_autoencoder(out.data.train, ae, arch);
    log_info("training classifier");
    ClassifierTraining plain = train_classifier(out.data.train, clf, arch);
    log_info("training robust classifier (PGD eps " + std::to_string(config.robust_training.epsilon) + ")");
    ClassifierTraining robust = adversarial_train(out.data.train, rob, config.robust_training, arch);

    out.bundle.encoder = std::move(autoenc.encoder);
    out.bundle.decoder = std::move(autoenc.decoder);
    out.bundle.latent_mean = std::move(autoenc.latent_mean);
    out.bundle.latent_std = std::move(autoenc.latent_std);
    out.bundle.classifier = std::move(plain.model);
    out.bundle.robust_classifier = std::move(robust.model);
    out.bundle.seed = config.seed;
    out.bundle.split_index = config.split_index;
    out.bundle.data_provenance = out.data.train.provenance;
    if (config.checkpoint) {
      if (config.checkpoint->has_parent_path()) std::filesystem::create_directories(config.checkpoint->parent_path());
      save_checkpoint(out.bundle, *config.checkpoint);
    }
  }

  out.clean_accuracy = accuracy(out.bundle.classifier, out.data.test);
  out.robust_clean_accuracy = accuracy(*out.bundle.robust_classifier, out.data.test);
  out.robust_pgd_accuracy =
      robust_accuracy(*out.bundle.robust_classifier, out.data.test, config.robust_training, mix(config.seed, 4));
  out.reconstruction_error = reconstruction_error(out.bundle.encoder, out.bundle.decoder, out.data.test);
  log_info("test accuracy " + std::to_string(out.clean_accuracy) + ", robust model " +
           std::to_string(out.robust_clean_accuracy) + " clean / " + std::to_string(out.robust_pgd_accuracy) +
           " under PGD");
  if (out.clean_accuracy < 0.95) log_warning("classifier test accuracy is below 95%");
  return out;
}

std::vector<Original> select_originals(const ModelBundle& bundle, std::span<const Classifier* const> classifiers,
                                       std::size_t count, double min_confidence, std::uint64_t seed,
                                       std::size_t max_draws) {
  require(!classifiers.empty(), ErrorCode::invalid_argument, "need at least one classifier");
  const std::size_t dim = bundle.latent_mean.size();
  require(bundle.latent_std.size() == dim && bundle.decoder.in_dim() == dim, ErrorCode::shape_mismatch,
          "latent moments do not match the decoder");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t classes = classifiers.front()->class_count();
  std::uniform_int_distribution<std::size_t> other(0, classes - 2);

  std::vector<Original> out;
  constexpr std::size_t kBatch = 256;
  std::size_t drawn = 0;
  while (out.size() < count) {
    require(drawn < max_draws, ErrorCode::no_feasible_init,
            "only " + std::to_string(out.size()) + " of " + std::to_string(count) + " originals reach confidence " +
                std::to_string(min_confidence) + " after " + std::to_string(drawn) + " draws");
    Tensor z({kBatch, dim});
    for (std::size_t r = 0; r < kBatch; ++r)
      for (std::size_t j = 0; j < dim; ++j)
        z.data()[r * dim + j] = bundle.latent_mean[j] + bundle.latent_std[j] * normal(rng);
    drawn += kBatch;
    const Tensor images = bundle.decoder.forward(z);
    std::vector<Tensor> probs;
    for (const Classifier* c : classifiers) probs.push_back(c->classify(images));
    for (std::size_t r = 0; r < kBatch && out.size() < count; ++r) {
      std::size_t label = classes;
      bool ok = true;
      for (const Tensor& p : probs) {
        std::span<const double> row(p.data().data() + r * classes, classes);
        const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (row[top] < min_confidence || (label != classes && label != top)) ok = false;
        label = top;
      }
      if (!ok) continue;
      std::size_t target = other(rng);
      if (target >= label) ++target;
      std::vector<double> code(z.data().begin() + static_cast<std::ptrdiff_t>(r * dim),
                               z.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
      out.push_back({Tensor::vector(std::move(code)), label, target});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records and aggregates

namespace {

AttackRecord summarize(const AttackResult& result, const ConstraintContext& ctx, double delta,
                       std::optional<double> lipschitz) {
  AttackRecord r;
  r.init_ok = true;
  r.success = result.success;
  r.l2 = result.l2;
  r.wasserstein = result.wasserstein;
  r.objective_value = result.objective;
  r.initial_objective = result.initial_objective;
  r.lsb_change_rate = lsb_change_rate(ctx.x0(), result.image);
  r.iterations = result.iterations;
  r.lipschitz = lipschitz.value_or(0.0);
  r.max_trace_g = -std::numeric_limits<double>::infinity();
  for (const auto& it : result.trace) {
    r.max_trace_g = std::max(r.max_trace_g, it.g);
    if (!(it.g < 0)) ++r.infeasible_iterates;
    if (it.bounced) ++r.bounces;
    if (!it.projected) continue;
    ++r.projections;
    r.bisections_total += it.bisections;
    r.bisections_max = std::max(r.bisections_max, it.bisections);
    if (it.bound >= 0 && it.bisections > static_cast<std::size_t>(it.bound)) ++r.bound_violations;
    if (!(it.g >= -delta && it.g <= 0)) ++r.contract_violations;
  }
  if (result.trace.empty()) r.max_trace_g = result.g;
  return r;
}

struct CellKey {
  Network network;
  Space space;
  AttackMode::Kind mode;
  DistanceKind objective;
  auto operator<=>(const CellKey&) const = default;
};

}  // namespace

std::vector<CellAggregate> aggregate(const std::vector<AttackRecord>& records) {
  std::map<CellKey, CellAggregate> cells;
  for (const auto& r : records) {
    const CellKey key{r.network, r.space, r.mode, r.objective};
    auto [it, inserted] = cells.try_emplace(key);
    CellAggregate& a = it->second;
    if (inserted) {
      a.network = r.network;
      a.space = r.space;
      a.mode = r.mode;
      a.objective = r.objective;
    }
    if (!r.init_ok) continue;
    ++a.attacked;
    a.succeeded += r.success;
    a.mean_l2 += r.l2;
    a.mean_wasserstein += r.wasserstein;
    a.mean_lsb_change_rate += r.lsb_change_rate;
  }
  std::vector<CellAggregate> out;
  for (auto& [key, a] : cells) {
    if (a.attacked) {
      const double n = static_cast<double>(a.attacked);
      a.mean_l2 /= n;
      a.mean_wasserstein /= n;
      a.mean_lsb_change_rate /= n;
    }
    out.push_back(a);
  }
  return out;
}

const CellAggregate* ExperimentReport::find(Network network, Space space, AttackMode::Kind mode,
                                            DistanceKind objective) const {
  for (const auto& a : aggregates)
    if (a.network == network && a.space == space && a.mode == mode && a.objective == objective) return &a;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Suite

namespace {

constexpr std::size_t kRows = kImageRows;
constexpr std::size_t kCols = kImageCols;

std::string cell_name(Network net, Space space, AttackMode::Kind mode, DistanceKind objective) {
  return std::string(to_string(net)) + "_" + std::string(to_string(space)) + "_" + std::string(to_string(mode)) +
         "_" + std::string(to_string(objective));
}

void write_attack_images(const std::filesystem::path& dir, const std::string& stem, const Tensor& x0,
                         const Tensor& x) {
  write_pgm(x0, kRows, kCols, dir / (stem + "_original.pgm"));
  write_pgm(x, kRows, kCols, dir / (stem + "_adversarial.pgm"));
  write_pgm(diff_map(x0, x), kRows, kCols, dir / (stem + "_diff.pgm"));
  write_pgm(lsb(x), kRows, kCols, dir / (stem + "_lsb.pgm"));
}

std::string format_index(std::size_t i) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

struct NetworkSetup {
  Network network;
  std::shared_ptr<const Classifier> classifier;
};

std::vector<NetworkSetup> networks(const ModelBundle& bundle) {
  require(bundle.robust_classifier.has_value(), ErrorCode::invalid_argument, "models lack a robust classifier");
  return {{Network::standard, std::make_shared<const Classifier>(bundle.classifier)},
          {Network::robust, std::make_shared<const Classifier>(*bundle.robust_classifier)}};
}

std::vector<Original> suite_originals(const ExperimentConfig& config, const ModelBundle& bundle, std::size_t count) {
  const Classifier* cls[] = {&bundle.classifier, &*bundle.robust_classifier};
  return select_originals(bundle, cls, count, config.min_confidence, mix(config.seed, 5), config.max_selection_draws);
}

ContextOptions context_options(const ExperimentConfig& config) {
  ContextOptions o;
  o.literal_untargeted = config.attack.literal_untargeted;
  o.min_confidence = config.min_confidence;
  o.metric = config.metric;
  return o;
}

}  // namespace

ExperimentReport run_experiment_suite(const ExperimentConfig& config) {
  return run_experiment_suite(config, prepare_models(config));
}

ExperimentReport run_experiment_suite(const ExperimentConfig& config, const PreparedModels& models) {
  check_config(config);
  const ModelBundle& bundle = models.bundle;
  const SplitDecoder decoder(bundle.decoder, config.split_index);
  const std::size_t pixel_split = decoder.layer_count();
  const DonorPool donors{&models.data.test, &bundle.encoder};
  const auto kernel = std::make_shared<const GibbsKernel>(cost_matrix(kRows, kCols), config.metric.lambda);
  const ContextOptions options = context_options(config);

  std::filesystem::path image_dir;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    if (config.write_images) {
      image_dir = config.output_dir / "images";
      std::filesystem::create_directories(image_dir);
    }
  }

  const std::vector<Original> originals = suite_originals(config, bundle, config.images_per_cell);
  ExperimentReport report;
  report.seed = config.seed;
  report.clean_accuracy = models.clean_accuracy;
  report.robust_clean_accuracy = models.robust_clean_accuracy;
  report.robust_pgd_accuracy = models.robust_pgd_accuracy;
  report.reconstruction_error = models.reconstruction_error;
  report.data_provenance = models.data.train.provenance;

  const DistanceKind objectives[] = {DistanceKind::l2, DistanceKind::sinkhorn};
  for (const NetworkSetup& net : networks(bundle)) {
    for (const AttackMode::Kind kind : {AttackMode::Kind::targeted, AttackMode::Kind::untargeted}) {
      log_info("cell " + std::string(to_string(net.network)) + "/" + std::string(to_string(kind)));
      for (std::size_t i = 0; i < originals.size(); ++i) {
        const Original& orig = originals[i];
        const AttackMode mode = kind == AttackMode::Kind::targeted ? AttackMode::targeted(orig.target)
                                                                   : AttackMode::untargeted();
        AttackConfig acfg = config.attack;
        acfg.mode = mode;
        acfg.seed = mix(config.seed, 100 + i);

        auto base_record = [&](Space space, DistanceKind objective, std::size_t split) {
          AttackRecord r;
          r.network = net.network;
          r.space = space;
          r.mode = kind;
          r.objective = objective;
          r.image = i;
          r.label = orig.label;
          r.target = kind == AttackMode::Kind::targeted ? orig.target : orig.label;
          r.split = split;
          return r;
        };

        auto run_space = [&](Space space, std::size_t split, std::span<const DistanceKind> objs) {
          const ConstraintContext ctx(net.classifier, decoder.with_split(split), orig.z0, mode, DistanceSpec{},
                                      options, kernel);
          Tensor p_init;
          std::string init_error;
          try {
            p_init = find_feasible_init(ctx, acfg, donors);
          } catch (const Error& e) {
            init_error = e.what();
          }
          std::optional<double> lipschitz;
          if (init_error.empty() && config.check_bound)
            lipschitz = 2.0 * estimate_lipschitz(ctx, p_init, acfg.alpha, config.lipschitz_samples,
                                                 mix(acfg.seed, static_cast<std::uint64_t>(space)));
          for (const DistanceKind objective : objs) {
            AttackRecord base = base_record(space, objective, split);
            if (!init_error.empty()) {
              base.error = init_error;
              report.records.push_back(base);
              continue;
            }
            AttackConfig run_cfg = acfg;
            run_cfg.distance.kind = objective;
            run_cfg.lipschitz = lipschitz;
            const ConstraintContext octx = ctx.with_distance(run_cfg.distance);
            const AttackResult result = run_attack(octx, run_cfg, p_init);
            AttackRecord rec = summarize(result, octx, run_cfg.delta, lipschitz);
            rec.network = base.network;
            rec.space = base.space;
            rec.mode = base.mode;
            rec.objective = base.objective;
            rec.image = base.image;
            rec.label = base.label;
            rec.target = base.target;
            rec.split = base.split;
            report.records.push_back(rec);
            if (!image_dir.empty())
              write_attack_images(image_dir, cell_name(net.network, space, kind, objective) + "_" + format_index(i),
                                  octx.x0(), result.image);
          }
        };

        run_space(Space::intermediate, config.split_index, objectives);
        if (config.pixel_baseline) run_space(Space::pixel, pixel_split, config.baseline_objectives);
      }
    }
  }
  report.aggregates = aggregate(report.records);

  if (!config.output_dir.empty()) {
    write_report(report, config.output_dir / "report.csv", config.output_dir / "report.json");
    if (config.write_images) {
      run_layer_sweep(config, models);
      run_development(config, models);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report I/O

namespace {

const char* kCsvHeader =
    "network,space,mode,objective,image,label,target,split,init_ok,success,l2,wasserstein,objective_value,"
    "initial_objective,lsb_change_rate,iterations,projections,bisections_total,bisections_max,bounces,lipschitz,"
    "bound_violations,contract_violations,infeasible_iterates,max_trace_g,error";

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

nlohmann::json aggregate_json(const CellAggregate& a) {
  return {{"network", to_string(a.network)},
          {"space", to_string(a.space)},
          {"mode", to_string(a.mode)},
          {"objective", to_string(a.objective)},
          {"attacked", a.attacked},
          {"succeeded", a.succeeded},
          {"mean_l2", a.mean_l2},
          {"mean_wasserstein", a.mean_wasserstein},
          {"mean_lsb_change_rate", a.mean_lsb_change_rate}};
}

}  // namespace

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << kCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : report.records) {
    out << to_string(r.network) << ',' << to_string(r.space) << ',' << to_string(r.mode) << ','
        << to_string(r.objective) << ',' << r.image << ',' << r.label << ',' << r.target << ',' << r.split << ','
        << int(r.init_ok) << ',' << int(r.success) << ',' << r.l2 << ',' << r.wasserstein << ',' << r.objective_value
        << ',' << r.initial_objective << ',' << r.lsb_change_rate << ',' << r.iterations << ',' << r.projections << ','
        << r.bisections_total << ',' << r.bisections_max << ',' << r.bounces << ',' << r.lipschitz << ','
        << r.bound_violations << ',' << r.contract_violations << ',' << r.infeasible_iterates << ','
        << r.max_trace_g << ',' << csv_escape(r.error) << '\n';
  }
  return out.str();
}

void write_report(const ExperimentReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path) {
  {
    std::ofstream out(csv_path);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + csv_path.string());
    out << report_csv(report);
    require(static_cast<bool>(out), ErrorCode::io, "failed writing " + csv_path.string());
  }
  nlohmann::json j;
  j["seed"] = report.seed;
  j["data_provenance"] = report.data_provenance;
  j["models"] = {{"clean_accuracy", report.clean_accuracy},
                 {"robust_clean_accuracy", report.robust_clean_accuracy},
                 {"robust_pgd_accuracy", report.robust_pgd_accuracy},
                 {"reconstruction_error", report.reconstruction_error}};
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : report.aggregates) j["aggregates"].push_back(aggregate_json(a));
  j["table"] = nlohmann::json::array();
  for (const Network net : {Network::standard, Network::robust})
    for (const AttackMode::Kind mode : {AttackMode::Kind::targeted, AttackMode::Kind::untargeted}) {
      nlohmann::json row = {{"network", to_string(net)}, {"mode", to_string(mode)}};
      for (const DistanceKind obj : {DistanceKind::l2, DistanceKind::sinkhorn})
        if (const CellAggregate* a = report.find(net, Space::intermediate, mode, obj))
          row[std::string(to_string(obj)) + "_objective"] = {{"mean_l2", a->mean_l2},
                                                             {"mean_wasserstein", a->mean_wasserstein}};
      j["table"].push_back(row);
    }
  std::ofstream out(json_path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + json_path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + json_path.string());
}

std::vector<AttackRecord> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kCsvHeader, ErrorCode::bad_magic,
          path.string() + " does not start with the report header");
  std::vector<AttackRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    require(f.size() == 26, ErrorCode::truncated, "report row has " + std::to_string(f.size()) + " fields");
    AttackRecord r;
    r.network = network_from_string(f[0]);
    r.space = space_from_string(f[1]);
    r.mode = attack_kind_from_string(f[2]);
    r.objective = distance_kind_from_string(f[3]);
    r.image = std::stoul(f[4]);
    r.label = std::stoul(f[5]);
    r.target = std::stoul(f[6]);
    r.split = std::stoul(f[7]);
    r.init_ok = f[8] == "1";
    r.success = f[9] == "1";
    r.l2 = std::stod(f[10]);
    r.wasserstein = std::stod(f[11]);
    r.objective_value = std::stod(f[12]);
    r.initial_objective = std::stod(f[13]);
    r.lsb_change_rate = std::stod(f[14]);
    r.iterations = std::stoul(f[15]);
    r.projections = std::stoul(f[16]);
    r.bisections_total = std::stoul(f[17]);
    r.bisections_max = std::stoul(f[18]);
    r.bounces = std::stoul(f[19]);
    r.lipschitz = std::stod(f[20]);
    r.bound_violations = std::stoul(f[21]);
    r.contract_violations = std::stoul(f[22]);
    r.infeasible_iterates = std::stoul(f[23]);
    r.max_trace_g = std::stod(f[24]);
    r.error = f[25];
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Single attacks

SingleAttack run_single_attack(const ExperimentConfig& config, const PreparedModels& models, Network network,
                               Space space, std::size_t image, std::optional<std::size_t> target) {
  check_config(config);
  const ModelBundle& bundle = models.bundle;
  std::shared_ptr<const Classifier> classifier;
  for (const NetworkSetup& net : networks(bundle))
    if (net.network == network) classifier = net.classifier;
  const SplitDecoder decoder(bundle.decoder, config.split_index);
  const std::size_t split = space == Space::pixel ? decoder.layer_count() : config.split_index;

  SingleAttack out;
  out.original = suite_originals(config, bundle, image + 1).at(image);
  const AttackMode::Kind kind = config.attack.mode.kind();
  out.config = config.attack;
  out.config.mode = kind == AttackMode::Kind::targeted ? AttackMode::targeted(target.value_or(out.original.target))
                                                       : AttackMode::untargeted();
  out.config.seed = mix(config.seed, 100 + image);

  const auto kernel = std::make_shared<const GibbsKernel>(cost_matrix(kRows, kCols), config.metric.lambda);
  const ConstraintContext ctx(classifier, decoder.with_split(split), out.original.z0, out.config.mode,
                              out.config.distance, context_options(config), kernel);
  out.x0 = ctx.x0();
  const Tensor p_init = find_feasible_init(ctx, out.config, {&models.data.test, &bundle.encoder});
  if (config.check_bound)
    out.config.lipschitz = 2.0 * estimate_lipschitz(ctx, p_init, out.config.alpha, config.lipschitz_samples,
                                                    mix(out.config.seed, static_cast<std::uint64_t>(space)));
  out.result = run_attack(ctx, out.config, p_init);
  out.record = summarize(out.result, ctx, out.config.delta, out.config.lipschitz);
  out.record.network = network;
  out.record.space = space;
  out.record.mode = kind;
  out.record.objective = out.config.distance.kind;
  out.record.image = image;
  out.record.label = out.original.label;
  out.record.target = out.config.mode.is_targeted() ? out.config.mode.target() : out.original.label;
  out.record.split = split;

  if (!config.output_dir.empty()) {
    const auto dir = config.output_dir / "single";
    std::filesystem::create_directories(dir);
    const std::string stem = cell_name(network, space, kind, out.config.distance.kind) + "_" + format_index(image);
    if (config.write_images) write_attack_images(dir, stem, out.x0, out.result.image);
    write_trace_csv(out.result, dir / (stem + "_trace.csv"));
    write_result_json(out.result, out.config, dir / (stem + "_result.json"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strips

std::vector<std::filesystem::path> run_layer_sweep(const ExperimentConfig& config, const PreparedModels& models) {
  require(!config.output_dir.empty(), ErrorCode::invalid_argument, "layer sweep needs an output directory");
  const auto dir = config.output_dir / "strips";
  std::filesystem::create_directories(dir);
  const ModelBundle& bundle = models.bundle;
  const auto classifier = std::make_shared<const Classifier>(bundle.classifier);
  const SplitDecoder decoder(bundle.decoder, 0);
  const DonorPool donors{&models.data.test, &bundle.encoder};
  const Classifier* cls[] = {&bundle.classifier};
  const auto originals = select_originals(bundle, cls, config.sweep_images, config.min_confidence,
                                          mix(config.seed, 6), config.max_selection_draws);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    AttackConfig acfg = config.attack;
    acfg.mode = config.attack.mode.is_targeted() ? AttackMode::targeted(originals[i].target) : AttackMode::untargeted();
    acfg.seed = mix(config.seed, 200 + i);
    acfg.lipschitz.reset();
    acfg.snapshot_iters.clear();
    std::vector<Tensor> frames;
    for (std::size_t split = 0; split <= decoder.layer_count(); ++split) {
      const ConstraintContext ctx(classifier, decoder.with_split(split), originals[i].z0, acfg.mode, acfg.distance,
                                  context_options(config));
      if (split == 0) frames.push_back(ctx.x0());
      frames.push_back(run_attack(ctx, acfg, find_feasible_init(ctx, acfg, donors)).image);
    }
    const GrayImage strip = compose_strip(frames, kRows, kCols);
    paths.push_back(dir / ("layer_sweep_" + format_index(i) + ".pgm"));
    write_pgm(strip.pixels, strip.rows, strip.cols, paths.back());
  }
  return paths;
}

std::filesystem::path run_development(const ExperimentConfig& config, const PreparedModels& models,
                                      std::size_t image) {
  require(!config.output_dir.empty(), ErrorCode::invalid_argument, "development strip needs an output directory");
  const auto dir = config.output_dir / "strips";
  std::filesystem::create_directories(dir);
  const ModelBundle& bundle = models.bundle;
  const auto classifier = std::make_shared<const Classifier>(bundle.classifier);
  const Classifier* cls[] = {&bundle.classifier};
  const auto originals = select_originals(bundle, cls, image + 1, config.min_confidence, mix(config.seed, 7),
                                          config.max_selection_draws);
  const Original& orig = originals[image];
  AttackConfig acfg = config.attack;
  acfg.mode = config.attack.mode.is_targeted() ? AttackMode::targeted(orig.target) : AttackMode::untargeted();
  acfg.seed = mix(config.seed, 300 + image);
  acfg.lipschitz.reset();
  acfg.snapshot_iters.clear();
  for (std::size_t it : config.develop_iters)
    if (it <= acfg.max_iter) acfg.snapshot_iters.push_back(it);
  const ConstraintContext ctx(classifier, SplitDecoder(bundle.decoder, config.split_index), orig.z0, acfg.mode,
                              acfg.distance, context_options(config));
  const AttackResult result = run_attack(ctx, acfg, find_feasible_init(ctx, acfg, {&models.data.test, &bundle.encoder}));
  std::vector<Tensor> frames;
  for (const auto& snap : result.snapshots) frames.push_back(snap.image);
  frames.push_back(ctx.x0());
  const GrayImage strip = compose_strip(frames, kRows, kCols);
  const auto path = dir / ("development_" + format_index(image) + ".pgm");
  write_pgm(strip.pixels, strip.rows, strip.cols, path);
  return path;
}

}  // namespace latentadv
