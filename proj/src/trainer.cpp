#include "esfpnet/trainer.hpp"

#include "esfpnet/optim.hpp"
#include "esfpnet/serialize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;

namespace esfp {

void TrainConfig::validate() const {
  (void)esfp::variant(variant);  // throws on unknown ids
  if (epochs < 1) throw ConfigError("epochs must be >= 1 (got " + std::to_string(epochs) + ")");
  if (batch_size < 1)
    throw ConfigError("batch_size must be >= 1 (got " + std::to_string(batch_size) + ")");
  if (!(learning_rate > 0))
    throw ConfigError("learning_rate must be > 0 (got " + std::to_string(learning_rate) + ")");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (drop_path_rate < 0 || drop_path_rate >= 1) throw ConfigError("drop_path_rate must be in [0, 1)");
  if (input_size < 32 || input_size % 32 != 0)
    throw ConfigError("input_size must be a positive multiple of 32 (got " +
                      std::to_string(input_size) + ")");
  if (iterations_per_epoch < 0 || max_iterations < 0)
    throw ConfigError("iteration limits must be >= 0");
}

std::string TrainLogRecord::format() const {
  std::ostringstream out;
  out << "epoch=" << epoch << " iter=" << iteration << std::setprecision(6)
      << " loss=" << loss_total << " loss_iou=" << loss_iou << " loss_bce=" << loss_bce
      << " val_mdice=";
  if (std::isnan(val_mdice))
    out << "na";
  else
    out << val_mdice;
  out << " wall_s=" << std::setprecision(4) << wall_seconds << " improved=" << (improved ? 1 : 0);
  if (!checkpoint.empty()) out << " checkpoint=" << checkpoint;
  return out.str();
}

Model make_model(const TrainConfig& cfg) {
  Model m = build<float>(cfg.variant, ModelOptions{cfg.seed, cfg.drop_path_rate});
  if (!cfg.pretrained.empty()) {
    const LoadManifest lm = load_pretrained(m, fs::path(cfg.pretrained));
    if (lm.loaded.empty()) throw ConfigError("pretrained archive matched no encoder tensors: " + cfg.pretrained);
  }
  return m;
}

PreprocessConfig preprocess_config(const Model& model, int input_size) {
  PreprocessConfig p;
  p.size = input_size;
  p.mean = model.spec.mean;
  p.std = model.spec.std;
  return p;
}

ProbMap predict_probability(const Model& model, const Sample& s, const PreprocessConfig& pre) {
  Tensor<float> image(Shape{1, 3, pre.size, pre.size});
  preprocess_image_into(s.image, pre, image.sample(0));
  Tensor<float> logits = model.forward(image);
  if (logits.h() != s.mask.rows || logits.w() != s.mask.cols)
    logits = resize_bilinear(logits, s.mask.rows, s.mask.cols);
  ProbMap p(s.mask.rows, s.mask.cols);
  const auto ch = logits.channel(0, 0);
  for (Index y = 0; y < p.rows(); ++y)
    for (Index x = 0; x < p.cols(); ++x) p(y, x) = double(sigmoid(ch(y, x)));
  return p;
}

namespace {

Mask mask_of(const cv::Mat& m) {
  Mask out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) out(y, x) = row[x] != 0;
  }
  return out;
}

}  // namespace

MetricsReport evaluate(const Model& model, const std::vector<Sample>& samples, int input_size,
                       const MetricsConfig& mcfg) {
  const PreprocessConfig pre = preprocess_config(model, input_size);
  std::vector<ImageMetrics> images;
  images.reserve(samples.size());
  for (const auto& s : samples)
    images.push_back(evaluate_image(s.dataset + "/" + s.frame_id, predict_probability(model, s, pre),
                                    mask_of(s.mask), mcfg));
  return aggregate(std::move(images));
}

// ---------------------------------------------------------------------------

TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& validation_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (model.spec.id != cfg.variant)
    throw ConfigError("model variant " + model.spec.id + " does not match config variant " +
                      cfg.variant);
  if (train_set.empty()) throw ConfigError("training set is empty");
  for (const auto& s : train_set) validate_sample(s);

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  Rng rng(cfg.seed);
  const PreprocessConfig pre = preprocess_config(model, cfg.input_size);

  std::vector<FrameLabel> labels;
  for (const auto& s : train_set) labels.push_back(s.label);
  const BalancedSampler sampler(cfg.balanced_sampling
                                    ? labels
                                    : std::vector<FrameLabel>(labels.size(), FrameLabel::normal));

  AdamWConfig ocfg;
  ocfg.lr = cfg.learning_rate;
  ocfg.weight_decay = cfg.weight_decay;
  ParameterList<float> params = model.parameters();
  if (!cfg.train_encoder) {
    params.erase(std::remove_if(params.begin(), params.end(),
                                [](const auto& p) { return p.name.rfind("backbone.", 0) == 0; }),
                 params.end());
  }
  AdamW<float> opt(params, ocfg);

  const long per_epoch =
      cfg.iterations_per_epoch > 0
          ? cfg.iterations_per_epoch
          : long((train_set.size() + std::size_t(cfg.batch_size) - 1) / std::size_t(cfg.batch_size));

  std::vector<Parameter<float>::Array> best;
  auto snapshot = [&] {
    best.clear();
    for (auto& p : model.parameters()) best.push_back(p.param->value);
  };

  TrainResult result;
  result.best_val_mdice = -1;
  long iteration = 0;
  typename Model::Cache cache;
  Tensor<float> grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_iou = 0, sum_bce = 0;
    for (long it = 0; it < per_epoch; ++it) {
      IterationRecord rec;
      rec.epoch = epoch;
      rec.iteration = ++iteration;
      std::vector<Sample> batch;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = train_set[sampler.draw(rng)];
        batch.push_back(augment(s, cfg.augment, rng));
        rec.batch_ids.push_back(s.dataset + "/" + s.frame_id);
      }
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      auto [images, masks] = make_batch(ptrs, pre);

      opt.zero_grad();
      const Tensor<float> logits = model.forward(images, cache, &rng);
      if (!logits.array().isFinite().all()) {
        rec.loss.total = std::numeric_limits<float>::quiet_NaN();
        throw NonFiniteLossError(rec, "non-finite logits at iteration " + std::to_string(iteration));
      }
      rec.loss = total_loss(logits, masks, &grad);
      if (!std::isfinite(rec.loss.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " iteration " << iteration
            << " (iou=" << rec.loss.iou << ", bce=" << rec.loss.bce << "); batch:";
        for (const auto& id : rec.batch_ids) msg << ' ' << id;
        throw NonFiniteLossError(rec, msg.str());
      }
      model.backward(grad, cache, cfg.train_encoder);
      opt.step();
      sum_iou += rec.loss.iou;
      sum_bce += rec.loss.bce;
      if (hooks.on_iteration) hooks.on_iteration(rec);
      if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) break;
    }
    const long done = iteration - long(epoch - 1) * per_epoch;

    TrainLogRecord r;
    r.epoch = epoch;
    r.iteration = iteration;
    r.loss_iou = sum_iou / double(done);
    r.loss_bce = sum_bce / double(done);
    r.loss_total = r.loss_iou + r.loss_bce;
    if (validation_set.empty()) {
      r.val_mdice = std::numeric_limits<double>::quiet_NaN();
      r.improved = true;  // last epoch wins
    } else {
      r.val_mdice = evaluate(model, validation_set, cfg.input_size).m_dice;
      r.improved = r.val_mdice > result.best_val_mdice;
    }
    if (r.improved) {
      snapshot();
      result.best_epoch = epoch;
      result.best_val_mdice = r.val_mdice;
      if (!cfg.checkpoint_dir.empty()) {
        fs::create_directories(cfg.checkpoint_dir);
        r.checkpoint = (fs::path(cfg.checkpoint_dir) / "best.esfp").string();
        save_model(model, r.checkpoint);
        result.best_checkpoint = r.checkpoint;
      }
    }
    r.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (hooks.log) *hooks.log << r.format() << '\n' << std::flush;
    result.log.push_back(r);
    if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) break;
  }

  auto ps = model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].param->value = best[i];
  return result;
}

// ---------------------------------------------------------------------------

std::string download_hint(const std::string& d) {
  if (d == "Kvasir") return "Kvasir-SEG, https://datasets.simula.no/kvasir-seg/";
  if (d == "CVC-ClinicDB") return "CVC-ClinicDB, https://polyp.grand-challenge.org/CVCClinicDB/";
  if (d == "CVC-ColonDB" || d == "ETIS-LaribPolypDB" || d == "CVC-300")
    return d + ", part of the polyp benchmark TestDataset distributed with PraNet "
               "(https://github.com/DengPingFan/PraNet)";
  return d + ", not a public dataset known to this tool";
}

namespace {

[[noreturn]] void throw_missing(const std::vector<std::string>& missing, const std::string& where) {
  std::ostringstream msg;
  msg << "missing dataset(s) " << where << "; nothing was run. Provide <root>/<name>/{images,masks}:";
  for (const auto& m : missing) msg << "\n  " << m << ": " << download_hint(m);
  throw MissingDatasetError(missing, msg.str());
}

}  // namespace

Corpus load_corpus(const fs::path& root, const std::vector<std::string>& names,
                   const LoadOptions& opts) {
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!fs::is_directory(root / n / "images") || !fs::is_directory(root / n / "masks"))
      missing.push_back(n);
  if (!missing.empty()) throw_missing(missing, "under " + root.string());
  Corpus c;
  for (const auto& n : names) {
    LoadOptions o = opts;
    o.dataset_name = n;
    c[n] = load_dataset(root / n, o);
  }
  return c;
}

void require_datasets(Protocol p, const Corpus& corpus) {
  std::vector<std::string> missing;
  for (const auto& n : required_datasets(p))
    if (!corpus.count(n) || corpus.at(n).empty()) missing.push_back(n);
  if (!missing.empty()) throw_missing(missing, std::string("for protocol ") + to_string(p));
}

std::vector<Sample> resolve(const SplitManifest& m, Subset s, const Corpus& corpus,
                            const std::string& dataset) {
  std::map<std::pair<std::string, std::string>, const Sample*> by_id;
  for (const auto& [name, samples] : corpus)
    for (const auto& smp : samples) by_id[{name, smp.frame_id}] = &smp;
  std::vector<Sample> out;
  for (const auto& e : m.subset(s, dataset)) {
    const auto it = by_id.find({e.dataset, e.id});
    if (it == by_id.end())
      throw ValidationError("manifest names " + e.dataset + "/" + e.id + " which is not loaded");
    out.push_back(*it->second);
  }
  return out;
}

std::string ExperimentReport::format() const {
  std::ostringstream out;
  out << "protocol " << to_string(protocol) << "  variant " << variant;
  try {
    out << " (" << esfp::variant(variant).name << ")";
  } catch (const ConfigError&) {
  }
  out << "  seed " << manifest.seed << "  dataset_hash " << manifest.dataset_hash << '\n';
  out << std::left << std::setw(26) << "trained_on" << std::setw(20) << "dataset" << std::setw(11)
      << "subset" << std::right << std::setw(5) << "n" << std::setw(8) << "mDice" << std::setw(8)
      << "mIoU" << std::setw(8) << "S_a" << std::setw(8) << "E_max" << std::setw(8) << "MAE"
      << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& r : rows)
    out << std::left << std::setw(26) << r.trained_on << std::setw(20) << r.dataset
        << std::setw(11) << to_string(r.subset) << std::right << std::setw(5)
        << r.metrics.images.size() << std::setw(8) << r.metrics.m_dice << std::setw(8)
        << r.metrics.m_iou << std::setw(8) << r.metrics.s_alpha << std::setw(8)
        << r.metrics.e_phi_max << std::setw(8) << r.metrics.mae << '\n';
  return out.str();
}

void ExperimentReport::write_tsv(std::ostream& out) const {
  out << "trained_on\tdataset\tsubset\tn\tmDice\tmIoU\tS_alpha\tE_phi_max\tMAE\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.trained_on << '\t' << r.dataset << '\t' << to_string(r.subset) << '\t'
        << r.metrics.images.size() << '\t' << r.metrics.m_dice << '\t' << r.metrics.m_iou << '\t'
        << r.metrics.s_alpha << '\t' << r.metrics.e_phi_max << '\t' << r.metrics.mae << '\n';
}

ExperimentReport run_protocol(Protocol p, const Corpus& corpus, const TrainConfig& cfg,
                              const TrainHooks& hooks) {
  cfg.validate();
  require_datasets(p, corpus);

  std::vector<std::string> names;
  if (p == Protocol::learning_ability) {
    names = required_datasets(p);
    for (const auto& [n, s] : corpus)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  } else {
    names = required_datasets(p);
  }
  std::vector<DatasetIndex> indexes;
  for (const auto& n : names) indexes.push_back(index_of(n, corpus.at(n)));

  ExperimentReport rep;
  rep.protocol = p;
  rep.variant = cfg.variant;
  rep.manifest = make_split(p, indexes, cfg.seed);
  validate_split(rep.manifest, indexes);

  auto fit = [&](const std::string& tag, const std::vector<Sample>& tr,
                 const std::vector<Sample>& va) {
    TrainConfig c = cfg;
    if (!c.checkpoint_dir.empty()) c.checkpoint_dir = (fs::path(c.checkpoint_dir) / tag).string();
    if (hooks.log) *hooks.log << "# train " << tag << ": " << tr.size() << " train, " << va.size()
                              << " validation\n";
    Model m = make_model(c);
    rep.training[tag] = train(m, tr, va, c, hooks);
    return m;
  };
  auto row = [&](const Model& m, const std::string& tag, const std::string& dataset, Subset s,
                 const std::vector<Sample>& samples) {
    rep.rows.push_back({tag, dataset, s, evaluate(m, samples, cfg.input_size)});
  };

  if (p == Protocol::learning_ability) {
    for (const auto& n : names) {
      const auto tr = resolve(rep.manifest, Subset::train, corpus, n);
      const auto va = resolve(rep.manifest, Subset::validation, corpus, n);
      const auto te = resolve(rep.manifest, Subset::test, corpus, n);
      const Model m = fit(n, tr, va);
      row(m, n, n, Subset::train, tr);
      row(m, n, n, Subset::validation, va);
      row(m, n, n, Subset::test, te);
    }
  } else {
    std::string tag;
    for (const auto& n : seen_datasets()) tag += (tag.empty() ? "" : "+") + n;
    const auto tr = resolve(rep.manifest, Subset::train, corpus);
    const auto va = resolve(rep.manifest, Subset::validation, corpus);
    const Model m = fit(tag, tr, va);
    if (p == Protocol::generalizability) row(m, tag, tag, Subset::validation, va);
    for (const auto& n : names)
      if (!rep.manifest.subset(Subset::test, n).empty())
        row(m, tag, n, Subset::test, resolve(rep.manifest, Subset::test, corpus, n));
  }
  return rep;
}

}  // namespace esfp
