// esfpnet command-line entry point: train, eval, bench, stream, split, toy.
//
// Settings come from an optional INI/TOML file (--config) and from flags;
// flags win. The data root defaults to $ESFPNET_DATA. Every artifact starts
// with a provenance header holding the merged configuration and its hash.

#include "esfpnet/accounting.hpp"
#include "esfpnet/archive.hpp"
#include "esfpnet/data.hpp"
#include "esfpnet/serialize.hpp"
#include "esfpnet/stream.hpp"
#include "esfpnet/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace esfp;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Provenance {
  std::string subcommand, variant, config;
  std::uint64_t seed = 0;

  std::string hash() const {
    std::ostringstream h;
    h << std::hex << std::setw(16) << std::setfill('0')
      << fnv1a(reinterpret_cast<const unsigned char*>(config.data()), config.size());
    return h.str();
  }

  /// '#'-prefixed header; the config lines reproduce the run.
  std::string header() const {
    std::ostringstream out;
    out << "# esfpnet " << kVersion << " subcommand=" << subcommand << " variant=" << variant
        << " seed=" << seed << " config_hash=" << hash() << '\n';
    std::istringstream cfg(config);
    for (std::string line; std::getline(cfg, line);)
      if (!line.empty()) out << "#   " << line << '\n';
    return out.str();
  }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string x; std::getline(in, x, ',');)
    if (!x.empty()) out.push_back(x);
  return out;
}

std::vector<std::string> datasets_under(const fs::path& root) {
  std::vector<std::string> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& e : fs::directory_iterator(root))
    if (fs::is_directory(e.path() / "images")) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ESFPNet: segmentation training, evaluation, complexity accounting and "
               "frame-stream inference"};
  app.set_config("--config", "", "INI/TOML settings file; command-line flags override it");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // ---- train ----------------------------------------------------------
  TrainConfig tc;
  std::string protocol = "learning-ability", data_root, out_dir = "runs/train";
  auto* train = app.add_subcommand("train", "run an experiment protocol end to end");
  train->add_option("--variant", tc.variant, "B0 | B2 | B4")->capture_default_str();
  train->add_option("--protocol", protocol,
                    "learning-ability | generalizability | power-balance")
      ->capture_default_str();
  train->add_option("--seed", tc.seed, "seed for init, sampling, augmentation and splits")
      ->capture_default_str();
  train->add_option("--data", data_root, "root holding one directory per dataset")
      ->envname("ESFPNET_DATA");
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.learning_rate, "AdamW learning rate")->capture_default_str();
  train->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  train->add_option("--drop-path", tc.drop_path_rate, "stochastic depth rate")->capture_default_str();
  train->add_option("--input-size", tc.input_size, "square network input, multiple of 32")
      ->capture_default_str();
  train->add_option("--iterations-per-epoch", tc.iterations_per_epoch,
                    "0 = ceil(train size / batch size)")
      ->capture_default_str();
  train->add_option("--pretrained", tc.pretrained, "encoder weights archive (optional)");
  train->add_flag("!--freeze-encoder", tc.train_encoder, "train the decoder only");
  train->add_option("--p-flip", tc.augment.p_hflip, "probability of each flip")->capture_default_str();
  train->add_option("--p-rotate", tc.augment.p_rotate)->capture_default_str();
  train->add_option("--max-degrees", tc.augment.max_degrees)->capture_default_str();
  train->add_option("--p-brightness", tc.augment.p_brightness)->capture_default_str();
  train->add_option("--out", out_dir, "output directory")->capture_default_str();

  // ---- eval -----------------------------------------------------------
  std::string model_path, eval_datasets, manifest_path, subset = "test", report_path;
  int eval_size = 352;
  MetricsConfig mcfg;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on datasets or a manifest subset");
  eval->add_option("--model", model_path, "checkpoint archive")->required();
  eval->add_option("--data", data_root, "dataset root")->envname("ESFPNET_DATA");
  eval->add_option("--datasets", eval_datasets, "comma-separated dataset names (default: all)");
  eval->add_option("--manifest", manifest_path, "restrict to a split manifest subset");
  eval->add_option("--subset", subset, "train | validation | test")->capture_default_str();
  eval->add_option("--input-size", eval_size)->capture_default_str();
  eval->add_option("--threshold", mcfg.threshold, "binarisation threshold")->capture_default_str();
  eval->add_option("--min-area", mcfg.min_area_fraction,
                   "lesion-frame area fraction of the scan region")
      ->capture_default_str();
  eval->add_option("--out", report_path, "machine-readable report file");

  // ---- bench ----------------------------------------------------------
  std::string bench_variant = "all";
  int bench_size = 352, bench_runs = 0;
  auto* bench = app.add_subcommand("bench", "parameter and FLOP counts (optional latency)");
  bench->add_option("--variant", bench_variant, "B0 | B2 | B4 | all")->capture_default_str();
  bench->add_option("--input-size", bench_size)->capture_default_str();
  bench->add_option("--time", bench_runs, "time this many forward passes");
  bench->add_option("--out", report_path, "report file");

  // ---- stream ---------------------------------------------------------
  StreamConfig sc;
  std::string source, stream_out, stream_variant = "B0";
  bool sequential = false, no_overlay = false;
  auto* stream = app.add_subcommand("stream", "segment a frame directory, video or synthetic stream");
  stream->add_option("--model", model_path, "checkpoint archive (default: untrained --variant)");
  stream->add_option("--variant", stream_variant, "used when no --model is given")
      ->capture_default_str();
  stream->add_option("--source", source, "frames directory, video file or synthetic:<frames>")
      ->required();
  stream->add_option("--out", stream_out, "directory for overlays, masks and the report");
  stream->add_option("--overlay-alpha", sc.overlay_alpha)->capture_default_str();
  stream->add_option("--threshold", sc.threshold)->capture_default_str();
  stream->add_option("--input-size", sc.input_size)->capture_default_str();
  stream->add_option("--queue", sc.queue_capacity, "bounded queue capacity")->capture_default_str();
  stream->add_flag("--sequential", sequential, "disable stage pipelining");
  stream->add_flag("--no-overlay", no_overlay, "write masks only");
  std::uint64_t stream_seed = 0;
  stream->add_option("--seed", stream_seed, "seed for synthetic sources and untrained models")
      ->capture_default_str();

  // ---- split ----------------------------------------------------------
  std::uint64_t split_seed = 1;
  std::string manifest_out;
  auto* split = app.add_subcommand("split", "write a protocol split manifest");
  split->add_option("--protocol", protocol)->capture_default_str();
  split->add_option("--seed", split_seed)->capture_default_str();
  split->add_option("--data", data_root, "dataset root")->envname("ESFPNET_DATA");
  split->add_option("--out", manifest_out, "manifest file (default: stdout)");

  // ---- toy ------------------------------------------------------------
  std::uint64_t toy_seed = 1;
  int toy_size = 64;
  std::string toy_out;
  auto* toy = app.add_subcommand("toy", "write the 30-frame synthetic toy corpus");
  toy->add_option("--out", toy_out, "destination root")->required();
  toy->add_option("--seed", toy_seed)->capture_default_str();
  toy->add_option("--size", toy_size, "frame side in pixels")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  Provenance prov;
  CLI::App* invoked = app.get_subcommands().front();
  prov.config = invoked->get_name() + "\n" + invoked->config_to_str(true, false);

  try {
    if (*train) {
      prov.subcommand = "train";
      prov.variant = tc.variant;
      prov.seed = tc.seed;
      const Protocol p = parse_protocol(protocol);
      tc.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();
      tc.validate();
      if (data_root.empty()) throw ConfigError("no data root: pass --data or set ESFPNET_DATA");
      const Corpus corpus = load_corpus(data_root, required_datasets(p));
      auto log = open_out(fs::path(out_dir) / "log.txt");
      log << prov.header();
      TrainHooks hooks;
      hooks.log = &log;
      const ExperimentReport rep = run_protocol(p, corpus, tc, hooks);
      auto man = open_out(fs::path(out_dir) / "manifest.tsv");
      man << prov.header();
      write_manifest(man, rep.manifest);
      auto tsv = open_out(fs::path(out_dir) / "report.tsv");
      tsv << prov.header();
      rep.write_tsv(tsv);
      auto txt = open_out(fs::path(out_dir) / "report.txt");
      txt << prov.header() << rep.format();
      std::cout << rep.format();
      return 0;
    }

    if (*eval) {
      Model m = load_model<float>(model_path);
      prov.subcommand = "eval";
      prov.variant = m.spec.id;
      if (data_root.empty()) throw ConfigError("no data root: pass --data or set ESFPNET_DATA");
      std::vector<std::string> names =
          eval_datasets.empty() ? datasets_under(data_root) : split_list(eval_datasets);
      const Corpus corpus = load_corpus(data_root, names);
      std::vector<Sample> samples;
      if (!manifest_path.empty()) {
        std::ifstream in(manifest_path);
        if (!in) throw ConfigError("cannot read manifest " + manifest_path);
        samples = resolve(read_manifest(in), parse_subset(subset), corpus);
      } else {
        for (const auto& [n, s] : corpus) samples.insert(samples.end(), s.begin(), s.end());
      }
      const MetricsReport rep = evaluate(m, samples, eval_size, mcfg);
      std::cout << format_report_table(rep, "eval " + model_path);
      if (!report_path.empty()) {
        auto out = open_out(report_path);
        out << prov.header();
        write_report(out, rep);
      }
      return 0;
    }

    if (*bench) {
      prov.subcommand = "bench";
      prov.variant = bench_variant;
      std::vector<std::string> ids =
          bench_variant == "all" ? variant_ids() : std::vector<std::string>{bench_variant};
      std::ostringstream text;
      for (const auto& id : ids) {
        const Model m = build<float>(id);
        const Shape in{1, 3, bench_size, bench_size};
        const ComplexityReport r = count_flops(m, in);
        text << m.spec.name << " (" << id << ")  input " << to_string(in) << '\n'
             << "  parameters " << r.param_count << " (" << std::fixed << std::setprecision(2)
             << double(r.param_count) / 1e6 << "M)  GFLOPs " << r.gflops << '\n';
        for (const auto& mod : r.modules)
          text << "    " << std::left << std::setw(16) << mod.name << std::right << std::setw(12)
               << mod.params << " params " << std::setw(9) << std::setprecision(3)
               << mod.macs / 1e9 << " GFLOPs\n";
        if (bench_runs > 0) {
          Tensor<float> x(in);
          const auto t0 = std::chrono::steady_clock::now();
          for (int i = 0; i < bench_runs; ++i) (void)m.forward(x);
          const double ms =
              std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count() /
              bench_runs;
          text << "  forward " << std::setprecision(1) << ms << " ms/frame (" << 1000.0 / ms
               << " FPS, single thread)\n";
        }
        text.unsetf(std::ios::floatfield);
      }
      text << "convention: " << ComplexityReport{}.convention << '\n';
      std::cout << text.str();
      if (!report_path.empty()) open_out(report_path) << prov.header() << text.str();
      return 0;
    }

    if (*stream) {
      Model m = model_path.empty()
                    ? build<float>(stream_variant, ModelOptions{stream_seed, 0.0})
                    : load_model<float>(model_path);
      prov.subcommand = "stream";
      prov.variant = m.spec.id;
      prov.seed = stream_seed;
      sc.pipelined = !sequential;
      std::unique_ptr<FrameSource> src;
      if (source.rfind("synthetic:", 0) == 0)
        src = std::make_unique<SyntheticSource>(std::stoul(source.substr(10)), 352, 352,
                                                stream_seed);
      else
        src = open_source(source);
      std::unique_ptr<FrameSink> sink;
      if (stream_out.empty())
        sink = std::make_unique<NullSink>();
      else
        sink = std::make_unique<FileSink>(stream_out, !no_overlay, true);
      if (model_path.empty())
        std::cerr << "note: no --model given, running an untrained " << m.spec.id << '\n';
      const ThroughputReport rep = run_stream(*src, m, *sink, sc);
      std::cout << rep.format() << "reference: 27 FPS reported for the paper's hardware "
                                   "(not comparable across machines)\n";
      if (!stream_out.empty()) {
        auto out = open_out(fs::path(stream_out) / "throughput.tsv");
        out << prov.header();
        rep.write(out);
      }
      return 0;
    }

    if (*split) {
      prov.subcommand = "split";
      prov.seed = split_seed;
      const Protocol p = parse_protocol(protocol);
      if (data_root.empty()) throw ConfigError("no data root: pass --data or set ESFPNET_DATA");
      std::vector<std::string> names = required_datasets(p);
      if (p == Protocol::learning_ability)
        for (const auto& n : datasets_under(data_root))
          if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
      const Corpus corpus = load_corpus(data_root, names);
      std::vector<DatasetIndex> idx;
      for (const auto& n : names) idx.push_back(index_of(n, corpus.at(n)));
      const SplitManifest man = make_split(p, idx, split_seed);
      validate_split(man, idx);
      std::ostringstream text;
      text << prov.header();
      write_manifest(text, man);
      if (manifest_out.empty())
        std::cout << text.str();
      else
        open_out(manifest_out) << text.str();
      return 0;
    }

    if (*toy) {
      for (const auto& [name, samples] : toy_corpus(toy_seed, toy_size))
        save_dataset(fs::path(toy_out) / name, samples);
      std::cout << "wrote toy corpus to " << toy_out << '\n';
      return 0;
    }
  } catch (const MissingDatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
