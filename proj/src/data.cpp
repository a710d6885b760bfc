#include "esfpnet/data.hpp"

#include "esfpnet/archive.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace esfp {

void validate_sample(const Sample& s) {
  if (s.image.empty() || s.image.type() != CV_8UC3)
    throw ValidationError("sample " + s.frame_id + ": image must be 8-bit 3-channel");
  if (s.mask.type() != CV_8UC1)
    throw ValidationError("sample " + s.frame_id + ": mask must be 8-bit single channel");
  if (s.image.size() != s.mask.size())
    throw ValidationError("sample " + s.frame_id + ": image and mask sizes differ");
  double lo, hi;
  cv::minMaxLoc(s.mask, &lo, &hi);
  if (hi > 1) throw ValidationError("sample " + s.frame_id + ": mask is not binary");
  const bool lesion = cv::countNonZero(s.mask) > 0;
  if (lesion != (s.label == FrameLabel::lesion))
    throw ValidationError("sample " + s.frame_id + ": label disagrees with mask");
}

// ---------------------------------------------------------------------------

std::string IngestReport::format() const {
  std::ostringstream out;
  out << "ingest " << root << ": " << images << " images, " << masks << " masks, " << loaded
      << " loaded, " << issues.size() << " issue(s)\n";
  for (const auto& i : issues) out << "  " << i.stem << ": " << i.problem << '\n';
  return out.str();
}

IngestError::IngestError(IngestReport r)
    : std::runtime_error(r.format()), report(std::move(r)) {}

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> ext{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext.count(e) > 0;
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir, IngestReport& rep) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_image_file(e.path())) continue;
    const std::string stem = e.path().stem().string();
    if (!out.emplace(stem, e.path()).second)
      rep.issues.push_back({stem, "duplicate stem in " + dir.filename().string()});
  }
  return out;
}

std::map<std::string, std::string> read_cases(const fs::path& file) {
  std::map<std::string, std::string> cases;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    cases[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return cases;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root, const LoadOptions& opts,
                                 IngestReport* report) {
  IngestReport rep;
  rep.root = root.string();
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "masks")) {
    rep.issues.push_back({"-", "expected images/ and masks/ under " + root.string()});
    throw IngestError(rep);
  }
  const auto images = files_by_stem(root / "images", rep);
  const auto masks = files_by_stem(root / "masks", rep);
  rep.images = images.size();
  rep.masks = masks.size();
  const auto cases = read_cases(root / "cases.tsv");
  std::string name = opts.dataset_name;
  if (name.empty()) {
    fs::path abs = fs::absolute(root).lexically_normal();
    if (abs.filename().empty()) abs = abs.parent_path();
    name = abs.filename().string();
  }

  std::vector<Sample> out;
  for (const auto& [stem, ipath] : images) {
    const auto m = masks.find(stem);
    if (m == masks.end()) {
      rep.issues.push_back({stem, "image has no mask"});
      continue;
    }
    cv::Mat bgr = cv::imread(ipath.string(), cv::IMREAD_COLOR);
    cv::Mat gray = cv::imread(m->second.string(), cv::IMREAD_GRAYSCALE);
    if (bgr.empty()) {
      rep.issues.push_back({stem, "cannot decode image " + ipath.filename().string()});
      continue;
    }
    if (gray.empty()) {
      rep.issues.push_back({stem, "cannot decode mask " + m->second.filename().string()});
      continue;
    }
    if (bgr.size() != gray.size()) {
      std::ostringstream msg;
      msg << "size mismatch: image " << bgr.cols << "x" << bgr.rows << ", mask " << gray.cols
          << "x" << gray.rows;
      rep.issues.push_back({stem, msg.str()});
      continue;
    }
    Sample s;
    cv::cvtColor(bgr, s.image, cv::COLOR_BGR2RGB);
    cv::threshold(gray, s.mask, 127, 1, cv::THRESH_BINARY);  // >= 128 is foreground
    s.label = cv::countNonZero(s.mask) > 0 ? FrameLabel::lesion : FrameLabel::normal;
    s.dataset = name;
    s.frame_id = stem;
    const auto c = cases.find(stem);
    s.case_id = c == cases.end() ? stem : c->second;
    out.push_back(std::move(s));
  }
  for (const auto& [stem, path] : masks)
    if (!images.count(stem)) rep.issues.push_back({stem, "mask has no image"});
  rep.loaded = out.size();
  if (report) *report = rep;
  if (opts.strict && !rep.issues.empty()) throw IngestError(rep);
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream cases(root / "cases.tsv");
  for (const auto& s : samples) {
    cv::Mat bgr, mask;
    cv::cvtColor(s.image, bgr, cv::COLOR_RGB2BGR);
    s.mask.convertTo(mask, CV_8U, 255);
    cv::imwrite((root / "images" / (s.frame_id + ".png")).string(), bgr);
    cv::imwrite((root / "masks" / (s.frame_id + ".png")).string(), mask);
    cases << s.frame_id << '\t' << s.case_id << '\n';
  }
}

// ---------------------------------------------------------------------------

void preprocess_image_into(const cv::Mat& rgb, const PreprocessConfig& cfg, float* image) {
  cv::Mat resized;
  if (rgb.rows == cfg.size && rgb.cols == cfg.size)
    resized = rgb;
  else
    cv::resize(rgb, resized, cv::Size(cfg.size, cfg.size), 0, 0, cv::INTER_LINEAR);
  const std::size_t plane = std::size_t(cfg.size) * std::size_t(cfg.size);
  std::array<float, 3> scale, shift;
  for (int c = 0; c < 3; ++c) {
    scale[c] = float(1.0 / (255.0 * cfg.std[c]));
    shift[c] = float(-cfg.mean[c] / cfg.std[c]);
  }
  for (int y = 0; y < cfg.size; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < cfg.size; ++x) {
      const std::size_t i = std::size_t(y) * std::size_t(cfg.size) + std::size_t(x);
      for (int c = 0; c < 3; ++c) image[std::size_t(c) * plane + i] = float(row[x][c]) * scale[c] + shift[c];
    }
  }
}

void preprocess_into(const Sample& s, const PreprocessConfig& cfg, float* image, float* mask) {
  preprocess_image_into(s.image, cfg, image);
  cv::Mat m;
  if (s.mask.rows == cfg.size && s.mask.cols == cfg.size)
    m = s.mask;
  else
    cv::resize(s.mask, m, cv::Size(cfg.size, cfg.size), 0, 0, cv::INTER_NEAREST);
  for (int y = 0; y < cfg.size; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < cfg.size; ++x) mask[std::size_t(y) * std::size_t(cfg.size) + std::size_t(x)] = row[x] ? 1.f : 0.f;
  }
}

std::pair<Tensor<float>, Tensor<float>> make_batch(const std::vector<const Sample*>& samples,
                                                   const PreprocessConfig& cfg) {
  const Index n = Index(samples.size());
  Tensor<float> images(Shape{n, 3, cfg.size, cfg.size});
  Tensor<float> masks(Shape{n, 1, cfg.size, cfg.size});
  for (Index b = 0; b < n; ++b) preprocess_into(*samples[std::size_t(b)], cfg, images.sample(b), masks.sample(b));
  return {std::move(images), std::move(masks)};
}

// ---------------------------------------------------------------------------

AugmentDraw draw_augment(const AugmentConfig& cfg, Rng& rng) {
  const double u_h = uniform01(rng), u_v = uniform01(rng);
  const double u_r = uniform01(rng), angle = uniform(rng, -cfg.max_degrees, cfg.max_degrees);
  const double u_b = uniform01(rng), gain = uniform(rng, cfg.brightness_lo, cfg.brightness_hi);
  AugmentDraw d;
  d.hflip = u_h < cfg.p_hflip;
  d.vflip = u_v < cfg.p_vflip;
  d.degrees = u_r < cfg.p_rotate ? angle : 0.0;
  d.brightness = u_b < cfg.p_brightness ? gain : 1.0;
  return d;
}

Sample apply_augment(const Sample& s, const AugmentDraw& d) {
  Sample out = s;
  out.image = s.image.clone();
  out.mask = s.mask.clone();
  if (d.hflip) {
    cv::flip(out.image, out.image, 1);
    cv::flip(out.mask, out.mask, 1);
  }
  if (d.vflip) {
    cv::flip(out.image, out.image, 0);
    cv::flip(out.mask, out.mask, 0);
  }
  if (d.degrees != 0.0) {
    const cv::Point2f centre(float(out.image.cols - 1) / 2.f, float(out.image.rows - 1) / 2.f);
    const cv::Mat rot = cv::getRotationMatrix2D(centre, d.degrees, 1.0);
    cv::Mat img, mask;
    cv::warpAffine(out.image, img, rot, out.image.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT);
    cv::warpAffine(out.mask, mask, rot, out.mask.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT);
    out.image = img;
    out.mask = mask;
  }
  if (d.brightness != 1.0) out.image.convertTo(out.image, CV_8UC3, d.brightness);
  // Rotation may push a small lesion out of view.
  out.label = cv::countNonZero(out.mask) > 0 ? FrameLabel::lesion : FrameLabel::normal;
  return out;
}

// ---------------------------------------------------------------------------

BalancedSampler::BalancedSampler(const std::vector<FrameLabel>& labels) {
  if (labels.empty()) throw ConfigError("balanced sampler needs at least one sample");
  const auto lesions = std::size_t(std::count(labels.begin(), labels.end(), FrameLabel::lesion));
  const auto normals = labels.size() - lesions;
  weights_.reserve(labels.size());
  for (auto l : labels) {
    if (lesions == 0 || normals == 0)
      weights_.push_back(1.0);
    else
      weights_.push_back(l == FrameLabel::lesion ? 1.0 / double(lesions) : 1.0 / double(normals));
  }
  cumulative_.resize(weights_.size());
  double acc = 0;
  for (std::size_t i = 0; i < weights_.size(); ++i) cumulative_[i] = acc += weights_[i];
}

std::size_t BalancedSampler::draw(Rng& rng) const {
  const double u = uniform01(rng) * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(std::size_t(it - cumulative_.begin()), cumulative_.size() - 1);
}

std::vector<std::size_t> BalancedSampler::draw(std::size_t n, Rng& rng) const {
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = draw(rng);
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::learning_ability: return "learning-ability";
    case Protocol::generalizability: return "generalizability";
    case Protocol::power_balance: return "power-balance";
  }
  return "?";
}

const char* to_string(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::validation: return "validation";
    case Subset::test: return "test";
  }
  return "?";
}

Protocol parse_protocol(const std::string& s) {
  for (auto p : {Protocol::learning_ability, Protocol::generalizability, Protocol::power_balance})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown protocol '" + s +
                    "' (expected learning-ability, generalizability or power-balance)");
}

Subset parse_subset(const std::string& s) {
  for (auto v : {Subset::train, Subset::validation, Subset::test})
    if (s == to_string(v)) return v;
  throw FormatError("unknown subset '" + s + "'");
}

std::vector<std::string> required_datasets(Protocol p) {
  switch (p) {
    case Protocol::learning_ability: return {"Kvasir", "CVC-ClinicDB"};
    case Protocol::generalizability:
      return {"Kvasir", "CVC-ClinicDB", "CVC-ColonDB", "ETIS-LaribPolypDB"};
    case Protocol::power_balance:
      return {"Kvasir", "CVC-ClinicDB", "CVC-300", "CVC-ColonDB", "ETIS-LaribPolypDB"};
  }
  return {};
}

DatasetIndex index_of(const std::string& name, const std::vector<Sample>& samples) {
  DatasetIndex d{name, {}};
  for (const auto& s : samples) d.items.push_back({s.frame_id, s.case_id});
  return d;
}

std::vector<SplitEntry> SplitManifest::subset(Subset s, const std::string& dataset) const {
  std::vector<SplitEntry> out;
  for (const auto& e : entries)
    if (e.subset == s && (dataset.empty() || e.dataset == dataset)) out.push_back(e);
  return out;
}

std::vector<std::string> SplitManifest::datasets(Subset s) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.subset == s && std::find(out.begin(), out.end(), e.dataset) == out.end())
      out.push_back(e.dataset);
  return out;
}

std::string dataset_hash(const std::vector<DatasetIndex>& datasets) {
  std::vector<std::string> lines;
  for (const auto& d : datasets)
    for (const auto& it : d.items) lines.push_back(d.name + '\t' + it.id + '\t' + it.case_id + '\n');
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l;
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0')
      << fnv1a(reinterpret_cast<const std::uint8_t*>(all.data()), all.size());
  return hex.str();
}

namespace {

struct Case {
  std::string dataset, case_id;
  std::vector<std::string> ids;
};

/// Cases of the given datasets in a canonical order (dataset order, then case
/// id), so the shuffle below depends only on content and seed.
std::vector<Case> cases_of(const std::vector<const DatasetIndex*>& ds) {
  std::vector<Case> out;
  for (const auto* d : ds) {
    std::map<std::string, std::vector<std::string>> by_case;
    for (const auto& it : d->items) by_case[it.case_id].push_back(it.id);
    for (auto& [c, ids] : by_case) {
      std::sort(ids.begin(), ids.end());
      out.push_back({d->name, c, std::move(ids)});
    }
  }
  return out;
}

/// Assigns shuffled cases to subsets: the first until `counts[0]` frames are
/// reached, then the second, and so on; the last subset takes the rest.
void assign(std::vector<Case> cases, const std::vector<std::pair<Subset, std::size_t>>& quota,
            Subset rest, Rng& rng, std::vector<SplitEntry>& out) {
  shuffle(cases, rng);
  std::size_t q = 0, filled = 0;
  for (const auto& c : cases) {
    while (q < quota.size() && filled >= quota[q].second) {
      ++q;
      filled = 0;
    }
    const Subset s = q < quota.size() ? quota[q].first : rest;
    for (const auto& id : c.ids) out.push_back({s, c.dataset, id});
    filled += c.ids.size();
  }
}

}  // namespace

SplitManifest make_split(Protocol protocol, const std::vector<DatasetIndex>& datasets,
                         std::uint64_t seed) {
  SplitManifest m;
  m.protocol = protocol;
  m.seed = seed;
  m.dataset_hash = dataset_hash(datasets);
  Rng rng(seed);
  const auto& seen = seen_datasets();
  auto is_seen = [&](const std::string& n) {
    return std::find(seen.begin(), seen.end(), n) != seen.end();
  };

  if (protocol == Protocol::learning_ability) {
    for (const auto& d : datasets) {
      const std::size_t n = d.items.size();
      assign(cases_of({&d}), {{Subset::train, n * 8 / 10}, {Subset::validation, n / 10}},
             Subset::test, rng, m.entries);
    }
  } else {
    // 90% of each seen dataset (900 Kvasir + 550 CVC-ClinicDB = 1450 frames
    // at full size), so every seen dataset keeps a held-out tenth.
    const Subset held = protocol == Protocol::generalizability ? Subset::validation : Subset::test;
    for (const auto& d : datasets)
      if (is_seen(d.name))
        assign(cases_of({&d}), {{Subset::train, d.items.size() * 9 / 10}}, held, rng, m.entries);
    for (const auto& d : datasets)
      if (!is_seen(d.name))
        for (const auto& it : d.items) m.entries.push_back({Subset::test, d.name, it.id});
  }
  return m;
}

void validate_split(const SplitManifest& m, const std::vector<DatasetIndex>& datasets) {
  std::map<std::pair<std::string, std::string>, Subset> where;
  for (const auto& e : m.entries)
    if (!where.emplace(std::make_pair(e.dataset, e.id), e.subset).second)
      throw ValidationError("split lists " + e.dataset + "/" + e.id + " more than once");
  for (const auto& d : datasets) {
    std::map<std::string, Subset> case_subset;
    for (const auto& it : d.items) {
      const auto w = where.find({d.name, it.id});
      if (w == where.end()) continue;
      const auto [c, inserted] = case_subset.emplace(it.case_id, w->second);
      if (!inserted && c->second != w->second)
        throw ValidationError("case " + d.name + "/" + it.case_id + " spans " +
                              to_string(c->second) + " and " + to_string(w->second));
    }
  }
}

void write_manifest(std::ostream& out, const SplitManifest& m) {
  out << "protocol\t" << to_string(m.protocol) << '\n'
      << "seed\t" << m.seed << '\n'
      << "dataset_hash\t" << m.dataset_hash << '\n';
  for (const auto& e : m.entries) out << to_string(e.subset) << '\t' << e.dataset << '\t' << e.id << '\n';
}

SplitManifest read_manifest(std::istream& in) {
  SplitManifest m;
  std::string line;
  bool have_protocol = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string x; std::getline(ss, x, '\t');) f.push_back(x);
    if (f.size() == 2 && f[0] == "protocol") {
      m.protocol = parse_protocol(f[1]);
      have_protocol = true;
    } else if (f.size() == 2 && f[0] == "seed") {
      m.seed = std::stoull(f[1]);
    } else if (f.size() == 2 && f[0] == "dataset_hash") {
      m.dataset_hash = f[1];
    } else if (f.size() == 3) {
      m.entries.push_back({parse_subset(f[0]), f[1], f[2]});
    } else {
      throw FormatError("bad manifest line: " + line);
    }
  }
  if (!have_protocol) throw FormatError("manifest has no protocol line");
  return m;
}

// ---------------------------------------------------------------------------

std::string LesionSizeReport::format() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "lesion frames " << lesion_frames << ", normal frames " << normal_frames << '\n';
  if (lesion_frames)
    out << "lesion size " << 100 * min_fraction << "% - " << 100 * max_fraction << "% (mean "
        << 100 * mean_fraction << "%)\n";
  double lo = 0;
  for (std::size_t i = 0; i < bin_edges.size(); ++i) {
    out << "  (" << 100 * lo << "%, " << 100 * bin_edges[i] << "%]  " << bin_counts[i] << '\n';
    lo = bin_edges[i];
  }
  return out.str();
}

LesionSizeReport lesion_size_report(const std::vector<Sample>& samples, ScanRegion region,
                                    std::vector<double> bin_edges) {
  LesionSizeReport r;
  r.bin_edges = std::move(bin_edges);
  r.bin_counts.assign(r.bin_edges.size(), 0);
  double sum = 0;
  for (const auto& s : samples) {
    const int area = cv::countNonZero(s.mask);
    if (area == 0) {
      ++r.normal_frames;
      continue;
    }
    const double f = double(area) / scan_area(s.mask.rows, s.mask.cols, region);
    r.min_fraction = r.lesion_frames ? std::min(r.min_fraction, f) : f;
    r.max_fraction = r.lesion_frames ? std::max(r.max_fraction, f) : f;
    sum += f;
    ++r.lesion_frames;
    for (std::size_t i = 0; i < r.bin_edges.size(); ++i)
      if (f <= r.bin_edges[i] || i + 1 == r.bin_edges.size()) {
        ++r.bin_counts[i];
        break;
      }
  }
  if (r.lesion_frames) r.mean_fraction = sum / double(r.lesion_frames);
  return r;
}

// ---------------------------------------------------------------------------

Sample synthetic_sample(int height, int width, bool lesion, Rng& rng) {
  Sample s;
  s.image.create(height, width, CV_8UC3);
  s.mask = cv::Mat::zeros(height, width, CV_8UC1);
  // Greenish tissue with a low-frequency shading pattern.
  const double fx = uniform(rng, 0.5, 2.0), fy = uniform(rng, 0.5, 2.0), ph = uniform(rng, 0, 6.28);
  const double base = uniform(rng, 90, 140);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double shade =
          20 * std::sin(fx * 6.28 * x / width + ph) * std::cos(fy * 6.28 * y / height);
      s.image.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<std::uint8_t>(0.4 * base + shade),
                                              cv::saturate_cast<std::uint8_t>(base + shade),
                                              cv::saturate_cast<std::uint8_t>(0.5 * base + shade));
    }
  if (lesion) {
    const int blobs = 1 + int(uniform_index(rng, 2));
    for (int i = 0; i < blobs; ++i) {
      const double cx = uniform(rng, 0.25, 0.75) * width, cy = uniform(rng, 0.25, 0.75) * height;
      const double ax = uniform(rng, 0.08, 0.2) * width, ay = uniform(rng, 0.08, 0.2) * height;
      const double angle = uniform(rng, 0, 180);
      cv::ellipse(s.mask, cv::Point(int(cx), int(cy)), cv::Size(int(ax), int(ay)), angle, 0, 360,
                  cv::Scalar(1), cv::FILLED);
    }
    const cv::Vec3b red(cv::saturate_cast<std::uint8_t>(uniform(rng, 170, 220)),
                        cv::saturate_cast<std::uint8_t>(uniform(rng, 60, 90)),
                        cv::saturate_cast<std::uint8_t>(uniform(rng, 40, 70)));
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (s.mask.at<std::uint8_t>(y, x)) s.image.at<cv::Vec3b>(y, x) = red;
  }
  s.label = cv::countNonZero(s.mask) > 0 ? FrameLabel::lesion : FrameLabel::normal;
  return s;
}

std::vector<std::pair<std::string, std::vector<Sample>>> toy_corpus(std::uint64_t seed, int size,
                                                                    std::vector<int> counts) {
  static const char* names[] = {"Kvasir", "CVC-ClinicDB", "CVC-300", "CVC-ColonDB",
                                "ETIS-LaribPolypDB"};
  if (counts.size() != 5) throw ConfigError("toy corpus takes five dataset sizes");
  Rng rng(seed);
  std::vector<std::pair<std::string, std::vector<Sample>>> out;
  for (std::size_t d = 0; d < 5; ++d) {
    std::vector<Sample> samples;
    for (int i = 0; i < counts[d]; ++i) {
      Sample s = synthetic_sample(size, size, i % 5 != 4, rng);  // every fifth frame normal
      s.dataset = names[d];
      std::ostringstream id;
      id << "frame" << std::setw(3) << std::setfill('0') << i;
      s.frame_id = id.str();
      s.case_id = s.frame_id;
      samples.push_back(std::move(s));
    }
    out.emplace_back(names[d], std::move(samples));
  }
  return out;
}

}  // namespace esfp
