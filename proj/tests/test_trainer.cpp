#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "training_suite.hpp"

#include "esfpnet/serialize.hpp"

#include <filesystem>
#include <numeric>
#include <sstream>

using namespace esfp;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig cfg = test::overfit_config(10);
  cfg.batch_size = 4;
  cfg.iterations_per_epoch = 5;
  cfg.epochs = 2;
  cfg.max_iterations = 0;
  return cfg;
}

std::vector<double> losses(const TrainConfig& cfg, const std::vector<Sample>& data) {
  Model model = make_model(cfg);
  std::vector<double> out;
  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationRecord& r) { out.push_back(r.loss.total); };
  train(model, data, {}, cfg, hooks);
  return out;
}

}  // namespace

TEST_CASE("configuration errors name the field") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epochs"), ConfigError);
  cfg = {};
  cfg.input_size = 100;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("input_size"), ConfigError);
  cfg = {};
  cfg.variant = "B2";
  Model b0 = build<float>("B0");
  CHECK_THROWS_AS(train(b0, test::blob_set(2, 64, 1), {}, cfg), ConfigError);
  CHECK_THROWS_AS(train(b0, {}, {}, small_config()), ConfigError);
}

TEST_CASE("same seed gives identical loss curves") {
  const auto data = test::blob_set(6, 64, 2);
  const auto a = losses(small_config(), data);
  const auto b = losses(small_config(), data);
  CHECK(a.size() == 10);
  CHECK(a == b);
  TrainConfig other = small_config();
  other.seed = 2;
  CHECK(losses(other, data) != a);
}

TEST_CASE("loss decreases over the first 50 iterations") {
  TrainConfig cfg = test::overfit_config(50);
  const auto y = losses(cfg, test::blob_set(8, 64, 3));
  REQUIRE(y.size() == 50);
  const double n = double(y.size()), mx = (n - 1) / 2;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += (double(i) - mx) * (y[i] - my);
    den += (double(i) - mx) * (double(i) - mx);
  }
  CHECK(num / den < 0);
}

TEST_CASE("zero head gives probability one half everywhere") {
  Model model = build<float>("B0");
  model.decoder.head.weight.value.setZero();
  model.decoder.head.bias.value.setZero();
  const auto data = test::blob_set(3, 64, 4);
  const auto rep = evaluate(model, data, 64);
  CHECK(rep.mae == doctest::Approx(0.5));
  CHECK(rep.m_dice == 0.0);
  const ProbMap p = predict_probability(model, data[0], preprocess_config(model, 64));
  CHECK(p.rows() == 64);
  CHECK((p == 0.5).all());
}

TEST_CASE("best checkpoint follows validation mDice") {
  const fs::path dir = fs::temp_directory_path() / "esfpnet_test_trainer_ckpt";
  fs::remove_all(dir);
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.checkpoint_dir = dir.string();
  const auto train_set = test::blob_set(6, 64, 5), val_set = test::blob_set(3, 64, 6);
  Model model = make_model(cfg);
  std::ostringstream log;
  TrainHooks hooks;
  hooks.log = &log;
  const auto result = train(model, train_set, val_set, cfg, hooks);
  REQUIRE(result.log.size() == 4);
  int best = 0;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    CHECK(result.log[i].epoch == int(i) + 1);
    if (result.log[i].val_mdice > result.log[std::size_t(best)].val_mdice) best = int(i);
  }
  CHECK(result.best_epoch == best + 1);
  CHECK(result.best_val_mdice == result.log[std::size_t(best)].val_mdice);
  REQUIRE(fs::exists(result.best_checkpoint));
  auto saved = load_model<float>(result.best_checkpoint);
  const auto x = Tensor<float>(1, 3, 64, 64);
  CHECK((saved.forward(x).array() == model.forward(x).array()).all());
  CHECK(evaluate(model, val_set, 64).m_dice == doctest::Approx(result.best_val_mdice));
  CHECK(log.str().find("epoch=1 ") != std::string::npos);
}

TEST_CASE("non-finite loss aborts with the failing batch") {
  TrainConfig cfg = small_config();
  Model model = make_model(cfg);
  model.decoder.head.bias.value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, test::blob_set(4, 64, 7), {}, cfg);
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.record.iteration == 1);
    CHECK(e.record.batch_ids.size() == 4);
  }
}

TEST_CASE("learning-ability protocol on a toy corpus") {
  Corpus corpus;
  for (auto& [name, samples] : toy_corpus(3, 64)) corpus[name] = samples;
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.iterations_per_epoch = 2;
  const auto rep = run_protocol(Protocol::learning_ability, corpus, cfg);
  CHECK(rep.rows.size() == 15);  // 5 datasets x train/validation/test
  CHECK(rep.training.size() == 5);
  std::ostringstream tsv;
  rep.write_tsv(tsv);
  for (const char* col : {"\tmDice", "\tmIoU", "\tS_alpha", "\tE_phi_max", "\tMAE"})
    CHECK(tsv.str().find(col) != std::string::npos);
  CHECK(!rep.format().empty());
  Corpus partial{{"Kvasir", corpus["Kvasir"]}};
  CHECK_THROWS_AS(run_protocol(Protocol::generalizability, partial, cfg), MissingDatasetError);
}

TEST_CASE("missing datasets are all listed") {
  const fs::path root = fs::temp_directory_path() / "esfpnet_test_trainer_missing";
  fs::remove_all(root);
  fs::create_directories(root / "Kvasir" / "images");
  fs::create_directories(root / "Kvasir" / "masks");
  try {
    load_corpus(root, required_datasets(Protocol::power_balance));
    FAIL("expected MissingDatasetError");
  } catch (const MissingDatasetError& e) {
    CHECK(e.missing.size() == 4);
    CHECK(std::string(e.what()).find("CVC-ColonDB") != std::string::npos);
  }
}
