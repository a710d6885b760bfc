#pragma once

// Overfit sanity check shared by the trainer tests and the acceptance runner.

#include "esfpnet/trainer.hpp"

#include <vector>

namespace esfp::test {

inline std::vector<Sample> blob_set(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s = synthetic_sample(size, size, true, rng);
    s.dataset = "blobs";
    s.frame_id = s.case_id = "blob" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

inline TrainConfig overfit_config(long iterations) {
  TrainConfig cfg;
  cfg.variant = "B0";
  cfg.input_size = 64;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-3;
  cfg.drop_path_rate = 0.0;
  cfg.augment = AugmentConfig::none();
  cfg.iterations_per_epoch = 25;
  cfg.epochs = int((iterations + 24) / 25);
  cfg.max_iterations = iterations;
  cfg.seed = 1;
  return cfg;
}

struct OverfitResult {
  double train_dice = 0;
  long iterations = 0;
  double first_loss = 0, last_loss = 0;
};

/// Tiny variant on 8 synthetic blob images, no augmentation, no validation.
inline OverfitResult overfit(long iterations = 200) {
  const auto samples = blob_set(8, 64, 17);
  const TrainConfig cfg = overfit_config(iterations);
  Model model = make_model(cfg);
  OverfitResult r;
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationRecord& it) {
    if (r.iterations == 0) r.first_loss = it.loss.total;
    r.last_loss = it.loss.total;
    r.iterations = it.iteration;
  };
  train(model, samples, {}, cfg, hooks);
  r.train_dice = evaluate(model, samples, cfg.input_size).m_dice;
  return r;
}

}  // namespace esfp::test
