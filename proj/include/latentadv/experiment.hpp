#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentadv/attack.hpp"
#include "latentadv/checkpoint.hpp"
#include "latentadv/dataset.hpp"
#include "latentadv/training.hpp"

namespace latentadv {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t images_per_cell = 90;
  std::size_t split_index = 2;  // decoder layer receiving the perturbation
  AttackConfig attack;          // mode, distance and seed are set per cell
  SinkhornOptions metric;       // solver of the reported Wasserstein distance
  double min_confidence = 0.99;
  std::size_t max_selection_draws = 200000;

  // Models.
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> checkpoint;  // loaded when present, else written after training
  TrainOptions autoencoder_training{.epochs = 30};
  TrainOptions classifier_training{.epochs = 15};
  PgdOptions robust_training;

  // Suite extras.
  bool pixel_baseline = true;
  std::vector<DistanceKind> baseline_objectives{DistanceKind::l2};
  bool check_bound = true;
  std::size_t lipschitz_samples = 10000;
  std::size_t sweep_images = 3;
  std::vector<std::size_t> develop_iters{0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};

  std::filesystem::path output_dir;  // empty: nothing is written
  bool write_images = true;
};

struct PreparedModels {
  ModelBundle bundle;
  DataSplit data;
  double clean_accuracy = 0.0;
  double robust_clean_accuracy = 0.0;
  double robust_pgd_accuracy = 0.0;
  double reconstruction_error = 0.0;
  bool loaded_from_checkpoint = false;
};

// Trains (or loads) the autoencoder and both classifiers for `config.seed`.
PreparedModels prepare_models(const ExperimentConfig& config);

struct Original {
  Tensor z0;
  std::size_t label = 0;
  std::size_t target = 0;  // random class ≠ label, used by targeted cells
};

// Latent draws z = μ + σ⊙ε whose decoding every listed classifier assigns to
// the same class with probability ≥ min_confidence.
std::vector<Original> select_originals(const ModelBundle& bundle, std::span<const Classifier* const> classifiers,
                                       std::size_t count, double min_confidence, std::uint64_t seed,
                                       std::size_t max_draws);

enum class Network { standard, robust };
enum class Space { intermediate, pixel };

std::string_view to_string(Network network);
std::string_view to_string(Space space);

struct AttackRecord {
  Network network = Network::standard;
  Space space = Space::intermediate;
  AttackMode::Kind mode = AttackMode::Kind::untargeted;
  DistanceKind objective = DistanceKind::l2;
  std::size_t image = 0;
  std::size_t label = 0;
  std::size_t target = 0;
  std::size_t split = 0;
  bool init_ok = false;
  bool success = false;
  double l2 = 0.0;
  double wasserstein = 0.0;
  double objective_value = 0.0;
  double initial_objective = 0.0;
  double lsb_change_rate = 0.0;
  std::size_t iterations = 0;
  std::size_t projections = 0;
  std::size_t bisections_total = 0;
  std::size_t bisections_max = 0;
  std::size_t bounces = 0;
  double lipschitz = 0.0;  // L̂ used for the bound (already doubled), 0 if unchecked
  std::size_t bound_violations = 0;
  std::size_t contract_violations = 0;  // projected iterates with ĝ ∉ [−δ, 0]
  std::size_t infeasible_iterates = 0;  // traced iterates with ĝ ≥ 0
  double max_trace_g = 0.0;
  std::string error;
};

struct CellAggregate {
  Network network = Network::standard;
  Space space = Space::intermediate;
  AttackMode::Kind mode = AttackMode::Kind::untargeted;
  DistanceKind objective = DistanceKind::l2;
  std::size_t attacked = 0;  // records with a feasible init
  std::size_t succeeded = 0;
  double mean_l2 = 0.0;
  double mean_wasserstein = 0.0;
  double mean_lsb_change_rate = 0.0;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::vector<AttackRecord> records;
  std::vector<CellAggregate> aggregates;
  double clean_accuracy = 0.0;
  double robust_clean_accuracy = 0.0;
  double robust_pgd_accuracy = 0.0;
  double reconstruction_error = 0.0;
  std::string data_provenance;

  const CellAggregate* find(Network network, Space space, AttackMode::Kind mode, DistanceKind objective) const;
};

// Means over records with a feasible init, grouped by cell, in a fixed order.
std::vector<CellAggregate> aggregate(const std::vector<AttackRecord>& records);

ExperimentReport run_experiment_suite(const ExperimentConfig& config);
ExperimentReport run_experiment_suite(const ExperimentConfig& config, const PreparedModels& models);

// Records as CSV; aggregates, per-row distance view and model metrics as JSON.
void write_report(const ExperimentReport& report, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path);
std::vector<AttackRecord> read_report_csv(const std::filesystem::path& path);
std::string report_csv(const ExperimentReport& report);

struct SingleAttack {
  Original original;
  AttackConfig config;  // mode and seed as run
  AttackResult result;
  AttackRecord record;
  Tensor x0;
};

// Image `image` of the suite's selection attacked with config.attack in one
// network and space; same seeds as the suite. Targeted runs use `target`, or
// the original's drawn target when absent. With an output directory, writes
// PGMs, the trace CSV and the result JSON under `single/`.
SingleAttack run_single_attack(const ExperimentConfig& config, const PreparedModels& models, Network network,
                               Space space, std::size_t image, std::optional<std::size_t> target = {});

Network network_from_string(std::string_view tag);
Space space_from_string(std::string_view tag);

// Layer-sweep strip: original followed by the adversarial image for each
// split 0..L, for the first `config.sweep_images` originals.
std::vector<std::filesystem::path> run_layer_sweep(const ExperimentConfig& config, const PreparedModels& models);
// Development strip: snapshots of one attack at config.develop_iters.
std::filesystem::path run_development(const ExperimentConfig& config, const PreparedModels& models,
                                      std::size_t image = 0);

}  // namespace latentadv
