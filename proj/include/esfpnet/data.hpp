#pragma once

// Dataset ingestion, preprocessing, paired augmentation, class-balanced
// sampling and experiment splits.
//
// On-disk layout per dataset: <root>/images/<stem>.{png,jpg,...} and
// <root>/masks/<stem>.{png,...}. An optional <root>/cases.tsv maps
// "<stem>\t<case id>" so that frames of one case stay in one subset;
// without it every frame is its own case.

#include "esfpnet/metrics.hpp"
#include "esfpnet/tensor.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace esfp {

using Rng = std::mt19937_64;

/// Portable draws (the std distributions are implementation-defined).
inline double uniform01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  // Lemire-free rejection sampling; n > 0.
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t r;
  do r = rng(); while (r >= limit);
  return r % n;
}
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

struct Sample {
  cv::Mat image;  // H x W, CV_8UC3, RGB order
  cv::Mat mask;   // H x W, CV_8UC1, values {0, 1}
  FrameLabel label = FrameLabel::normal;
  std::string dataset;
  std::string case_id;
  std::string frame_id;
};

/// Throws ValidationError when the sample breaks its invariants.
void validate_sample(const Sample& s);

// ---------------------------------------------------------------------------
// Ingestion.

struct IngestIssue {
  std::string stem;
  std::string problem;
};

struct IngestReport {
  std::string root;
  std::size_t images = 0, masks = 0, loaded = 0;
  std::vector<IngestIssue> issues;

  std::string format() const;
};

class IngestError : public std::runtime_error {
 public:
  explicit IngestError(IngestReport r);
  IngestReport report;
};

struct LoadOptions {
  bool strict = true;  // any issue aborts; otherwise bad stems are skipped and reported
  std::string dataset_name;  // default: directory name of the root
};

std::vector<Sample> load_dataset(const std::filesystem::path& root, const LoadOptions& opts = {},
                                 IngestReport* report = nullptr);

/// Writes a dataset in the layout above (PNG files). Used for toy corpora.
void save_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);

// ---------------------------------------------------------------------------
// Preprocessing.

struct PreprocessConfig {
  int size = 352;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// Bilinear image resize + per-channel normalisation into `image` (3 x size
/// x size, CHW), nearest-neighbour mask resize into `mask` (size x size).
void preprocess_into(const Sample& s, const PreprocessConfig& cfg, float* image, float* mask);

/// Frame-only variant used by stream inference.
void preprocess_image_into(const cv::Mat& rgb, const PreprocessConfig& cfg, float* image);

/// Stacks samples into a (B,3,S,S) image batch and (B,1,S,S) mask batch.
std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<const Sample*>& samples,
                                                   const PreprocessConfig& cfg);

// ---------------------------------------------------------------------------
// Augmentation.

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rotate = 0.5;
  double max_degrees = 15.0;
  double p_brightness = 0.5;
  double brightness_lo = 0.8;
  double brightness_hi = 1.2;

  static AugmentConfig none() { return {0, 0, 0, 15.0, 0, 0.8, 1.2}; }
};

/// One realisation of the random transform. Every field is always drawn,
/// in a fixed order, so the rng stream does not depend on the probabilities.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  double degrees = 0.0;     // 0 = no rotation
  double brightness = 1.0;  // 1 = unchanged
};

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng);
Sample apply_augment(const Sample& s, const AugmentDraw& d);
inline Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(s, draw_augment(cfg, rng));
}

// ---------------------------------------------------------------------------
// Class-balanced sampling.

/// Draws indices with replacement, each class weighted by the inverse of its
/// frequency so the expected lesion fraction of a batch is 1/2. With a
/// single class present the weights are uniform.
class BalancedSampler {
 public:
  explicit BalancedSampler(const std::vector<FrameLabel>& labels);

  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  std::size_t draw(Rng& rng) const;
  std::vector<std::size_t> draw(std::size_t n, Rng& rng) const;

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

// ---------------------------------------------------------------------------
// Experiment splits.

enum class Protocol { learning_ability, generalizability, power_balance };
enum class Subset { train, validation, test };

const char* to_string(Protocol p);
const char* to_string(Subset s);
Protocol parse_protocol(const std::string& s);
Subset parse_subset(const std::string& s);

inline const std::vector<std::string>& seen_datasets() {
  static const std::vector<std::string> v{"Kvasir", "CVC-ClinicDB"};
  return v;
}
/// Datasets a protocol needs, in report order.
std::vector<std::string> required_datasets(Protocol p);

struct ItemRef {
  std::string id;
  std::string case_id;
};

struct DatasetIndex {
  std::string name;
  std::vector<ItemRef> items;
};

DatasetIndex index_of(const std::string& name, const std::vector<Sample>& samples);

struct SplitEntry {
  Subset subset;
  std::string dataset;
  std::string id;
  bool operator==(const SplitEntry&) const = default;
};

struct SplitManifest {
  Protocol protocol = Protocol::learning_ability;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  std::vector<SplitEntry> entries;

  std::vector<SplitEntry> subset(Subset s, const std::string& dataset = "") const;
  std::vector<std::string> datasets(Subset s) const;
  bool operator==(const SplitManifest&) const = default;
};

/// FNV-1a over the sorted (dataset, id, case) triples, hex encoded.
std::string dataset_hash(const std::vector<DatasetIndex>& datasets);

/// learning-ability: every dataset split 80/10/10 on its own.
/// generalizability: 90% of each seen dataset is train and the remaining 10%
///   validation; every other dataset is test in full.
/// power-balance: same 90% train; the remaining 10% of each seen dataset and
///   every other dataset are test; no validation subset.
/// Subset sizes are floor(0.8 n), floor(0.1 n) (resp. floor(0.9 n)) counted
/// in frames; whole cases are assigned greedily, so with multi-frame cases
/// the sizes are approximate.
SplitManifest make_split(Protocol protocol, const std::vector<DatasetIndex>& datasets,
                         std::uint64_t seed);

/// Throws ValidationError when lists overlap or a case spans two subsets.
void validate_split(const SplitManifest& m, const std::vector<DatasetIndex>& datasets);

void write_manifest(std::ostream& out, const SplitManifest& m);
SplitManifest read_manifest(std::istream& in);

// ---------------------------------------------------------------------------
// Lesion size stratification, as a fraction of the scan area.

struct LesionSizeReport {
  std::size_t lesion_frames = 0, normal_frames = 0;
  double min_fraction = 0, max_fraction = 0, mean_fraction = 0;
  std::vector<double> bin_edges;        // upper edges
  std::vector<std::size_t> bin_counts;  // lesion frames per bin

  std::string format() const;
};

LesionSizeReport lesion_size_report(const std::vector<Sample>& samples,
                                    ScanRegion region = ScanRegion::circular,
                                    std::vector<double> bin_edges = {0.01, 0.05, 0.1, 0.25, 1.0});

// ---------------------------------------------------------------------------
// Synthetic data.

/// RGB frame with smooth background texture; lesion frames carry one or two
/// reddish elliptical blobs whose union is the mask.
Sample synthetic_sample(int height, int width, bool lesion, Rng& rng);

/// Five toy datasets named like the public polyp sets. Default sizes give 30
/// frames: Kvasir 10, CVC-ClinicDB 10, CVC-300 3, CVC-ColonDB 4, ETIS 3.
std::vector<std::pair<std::string, std::vector<Sample>>> toy_corpus(
    std::uint64_t seed, int size = 64, std::vector<int> counts = {10, 10, 3, 4, 3});

}  // namespace esfp
