#pragma once

// Training loop, validation-driven checkpoint selection, evaluation and the
// three experiment protocols.

#include "esfpnet/data.hpp"
#include "esfpnet/loss.hpp"
#include "esfpnet/metrics.hpp"
#include "esfpnet/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace esfp {

using Model = EsfpNet<float>;

struct TrainConfig {
  std::string variant = "B0";
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double drop_path_rate = 0.1;
  std::uint64_t seed = 1;
  int input_size = 352;
  bool train_encoder = true;  // false: encoder frozen, decoder-only training
  bool balanced_sampling = true;
  AugmentConfig augment;
  std::string checkpoint_dir;  // empty: keep the best weights in memory only
  std::string pretrained;      // optional encoder weights archive
  long max_iterations = 0;     // > 0 stops early (after the current epoch's validation)
  int iterations_per_epoch = 0;  // 0: ceil(train size / batch size)

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct TrainLogRecord {
  int epoch = 0;
  long iteration = 0;  // iterations completed at the end of this epoch
  double loss_iou = 0, loss_bce = 0, loss_total = 0;  // epoch means
  double val_mdice = 0;  // NaN when there is no validation subset
  double wall_seconds = 0;
  bool improved = false;
  std::string checkpoint;  // path written for this epoch, if any

  std::string format() const;  // one line of "key=value" fields
};

struct IterationRecord {
  int epoch = 0;
  long iteration = 0;
  LossTerms<float> loss;
  std::vector<std::string> batch_ids;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  int best_epoch = 0;
  double best_val_mdice = 0;
  std::string best_checkpoint;
};

/// Thrown when the loss becomes NaN or infinite; carries the failing batch.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(IterationRecord r, const std::string& what)
      : std::runtime_error(what), record(std::move(r)) {}
  IterationRecord record;
};

struct TrainHooks {
  std::ostream* log = nullptr;                             // receives TrainLogRecord lines
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Trains `model` in place. Each epoch draws balanced batches with
/// replacement, augments, steps AdamW, then scores validation mDice. The
/// weights with the best validation mDice (first epoch on ties) are restored
/// into `model` on return; without validation samples the last epoch wins.
TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& validation_set, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Builds the configured variant (seeded init, drop-path rate) and loads
/// the optional pretrained encoder weights.
Model make_model(const TrainConfig& cfg);

PreprocessConfig preprocess_config(const Model& model, int input_size);

/// Probability map at the sample's own resolution: logits are resized
/// bilinearly to the mask size before the sigmoid.
ProbMap predict_probability(const Model& model, const Sample& s, const PreprocessConfig& pre);

MetricsReport evaluate(const Model& model, const std::vector<Sample>& samples, int input_size,
                       const MetricsConfig& mcfg = {});

// ---------------------------------------------------------------------------
// Protocols.

using Corpus = std::map<std::string, std::vector<Sample>>;

class MissingDatasetError : public std::runtime_error {
 public:
  MissingDatasetError(std::vector<std::string> names, const std::string& what)
      : std::runtime_error(what), missing(std::move(names)) {}
  std::vector<std::string> missing;
};

/// Where each public dataset can be obtained; used in missing-data errors.
std::string download_hint(const std::string& dataset);

/// Loads <root>/<name> for every name; throws MissingDatasetError listing
/// every absent directory before loading anything.
Corpus load_corpus(const std::filesystem::path& root, const std::vector<std::string>& names,
                   const LoadOptions& opts = {});

/// Throws MissingDatasetError when the corpus lacks datasets the protocol needs.
void require_datasets(Protocol p, const Corpus& corpus);

/// Samples named by a manifest subset, in manifest order.
std::vector<Sample> resolve(const SplitManifest& m, Subset s, const Corpus& corpus,
                            const std::string& dataset = "");

struct ReportRow {
  std::string trained_on;  // training data of the model that produced the row
  std::string dataset;
  Subset subset = Subset::test;
  MetricsReport metrics;
};

struct ExperimentReport {
  Protocol protocol = Protocol::learning_ability;
  std::string variant;
  SplitManifest manifest;
  std::vector<ReportRow> rows;
  std::map<std::string, TrainResult> training;  // keyed by trained_on

  /// Table with columns mDice, mIoU, S_alpha, E_phi^max, MAE per row.
  std::string format() const;
  /// Tab-separated form of the same table.
  void write_tsv(std::ostream& out) const;
};

ExperimentReport run_protocol(Protocol p, const Corpus& corpus, const TrainConfig& cfg,
                              const TrainHooks& hooks = {});

}  // namespace esfp
