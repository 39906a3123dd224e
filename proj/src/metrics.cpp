#include "mindcine/metrics.hpp"

#include <algorithm>
#include <optional>
#include <cmath>
#include <numeric>
#include <set>

namespace mindcine::metrics {

using json = nlohmann::json;

// ---- N-way-top-K -----------------------------------------------------------------------------

namespace {

void check_nway(const Vector& logits, int gt_class, int n, int k) {
  const auto classes = static_cast<int>(logits.size());
  if (gt_class < 0 || gt_class >= classes) {
    throw ValidationError("nway: GT class " + std::to_string(gt_class) + " outside [0, " + std::to_string(classes) + ")");
  }
  if (n < 2 || n > classes) {
    throw ConfigError("nway: N = " + std::to_string(n) + " must lie in [2, " + std::to_string(classes) + "]");
  }
  if (k < 1 || k >= n) throw ConfigError("nway: K must satisfy 1 <= K < N");
  if (!logits.allFinite()) throw NumericError("nway: non-finite logits");
}

double log_choose(int n, int r) {
  if (r < 0 || r > n) return -std::numeric_limits<double>::infinity();
  return std::lgamma(n + 1.0) - std::lgamma(r + 1.0) - std::lgamma(n - r + 1.0);
}

/// Exact binomial coefficient; nullopt when it does not fit in 64 bits.
std::optional<std::uint64_t> choose(int n, int r) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  unsigned __int128 acc = 1;
  for (int i = 1; i <= r; ++i) {
    acc = acc * static_cast<unsigned>(n - r + i) / static_cast<unsigned>(i);
    if (acc > std::numeric_limits<std::uint64_t>::max()) return std::nullopt;
  }
  return static_cast<std::uint64_t>(acc);
}

}  // namespace

double nway_topk(const Vector& logits, int gt_class, const NwayConfig& cfg) {
  check_nway(logits, gt_class, cfg.n, cfg.k);
  if (cfg.repeats < 1) throw ConfigError("nway: repeats must be >= 1");
  std::vector<int> others;
  for (int c = 0; c < logits.size(); ++c) {
    if (c != gt_class) others.push_back(c);
  }
  const double gt = logits(gt_class);
  std::mt19937_64 rng(cfg.seed);
  int hits = 0;
  for (int trial = 0; trial < cfg.repeats; ++trial) {
    int above = 0;
    for (int i = 0; i < cfg.n - 1; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), others.size() - 1);
      std::swap(others[static_cast<std::size_t>(i)], others[pick(rng)]);
      if (logits(others[static_cast<std::size_t>(i)]) > gt) ++above;
    }
    if (above < cfg.k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cfg.repeats);
}

double nway_topk_expected(const Vector& logits, int gt_class, int n, int k) {
  check_nway(logits, gt_class, n, k);
  const int total = static_cast<int>(logits.size()) - 1;
  int above = 0;
  for (int c = 0; c < logits.size(); ++c) {
    if (c != gt_class && logits(c) > logits(gt_class)) ++above;
  }
  // Integer counts when they fit, so equal rationals round to the same double.
  if (const auto denom = choose(total, n - 1)) {
    unsigned __int128 num = 0;
    bool exact = true;
    for (int x = 0; x < k && exact; ++x) {
      const auto a = choose(above, x), b = choose(total - above, n - 1 - x);
      exact = a && b;
      if (exact) num += static_cast<unsigned __int128>(*a) * *b;
    }
    if (exact && num <= std::numeric_limits<std::uint64_t>::max()) {
      return static_cast<double>(static_cast<std::uint64_t>(num)) / static_cast<double>(*denom);
    }
  }
  const double denom = log_choose(total, n - 1);
  double p = 0.0;
  for (int x = 0; x < k; ++x) {
    const double term = log_choose(above, x) + log_choose(total - above, n - 1 - x) - denom;
    if (std::isfinite(term)) p += std::exp(term);
  }
  return std::min(1.0, p);
}

// ---- pixel metrics ---------------------------------------------------------------------------

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": image shapes differ (" + shape_str(a) + " vs " + shape_str(b) + ")");
  }
  if (a.cols() % 3 != 0 || a.size() == 0) throw ShapeError(std::string(what) + ": expected H x (W*3) RGB data");
  if (!a.allFinite() || !b.allFinite()) throw NumericError(std::string(what) + ": non-finite pixels");
}

Vector gaussian_window(int size, double sigma) {
  Vector w(size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) w(i) = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
  return w / w.sum();
}

/// Valid-mode separable filtering with kernel w along both axes.
Matrix filter_valid(const Matrix& x, const Vector& w) {
  const Index k = w.size();
  const Index h = x.rows() - k + 1, wd = x.cols() - k + 1;
  Matrix tmp = Matrix::Zero(h, x.cols());
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < k; ++j) tmp.row(i) += w(j) * x.row(i + j);
  }
  Matrix out = Matrix::Zero(h, wd);
  for (Index c = 0; c < wd; ++c) {
    for (Index j = 0; j < k; ++j) out.col(c) += w(j) * tmp.col(c + j);
  }
  return out;
}

}  // namespace

Matrix luma(const Image& rgb) {
  if (rgb.cols() % 3 != 0) throw ShapeError("luma: expected H x (W*3) RGB data");
  const Index w = rgb.cols() / 3;
  Matrix y(rgb.rows(), w);
  for (Index r = 0; r < rgb.rows(); ++r) {
    for (Index c = 0; c < w; ++c) {
      y(r, c) = 0.299 * rgb(r, 3 * c) + 0.587 * rgb(r, 3 * c + 1) + 0.114 * rgb(r, 3 * c + 2);
    }
  }
  return y;
}

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
  check_pair(a, b, "ssim");
  if (a.rows() < cfg.window || a.cols() / 3 < cfg.window) {
    throw ShapeError("ssim: image " + shape_str(a.rows(), a.cols() / 3) + " is smaller than the " +
                     std::to_string(cfg.window) + "x" + std::to_string(cfg.window) + " window");
  }
  const Matrix ya = luma(a), yb = luma(b);
  const Vector w = gaussian_window(cfg.window, cfg.sigma);
  const double c1 = cfg.k1 * cfg.k1, c2 = cfg.k2 * cfg.k2;
  const Matrix mu_a = filter_valid(ya, w), mu_b = filter_valid(yb, w);
  const Matrix e_aa = filter_valid(ya.cwiseProduct(ya), w);
  const Matrix e_bb = filter_valid(yb.cwiseProduct(yb), w);
  const Matrix e_ab = filter_valid(ya.cwiseProduct(yb), w);
  double total = 0.0;
  for (Index i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data()[i], mb = mu_b.data()[i];
    const double va = e_aa.data()[i] - ma * ma, vb = e_bb.data()[i] - mb * mb;
    const double cov = e_ab.data()[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double psnr(const Image& a, const Image& b) {
  check_pair(a, b, "psnr");
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

Hsv rgb_to_hsv(const Image& rgb) {
  if (rgb.cols() % 3 != 0) throw ShapeError("rgb_to_hsv: expected H x (W*3) RGB data");
  const Index w = rgb.cols() / 3;
  Hsv out{Matrix(rgb.rows(), w), Matrix(rgb.rows(), w), Matrix(rgb.rows(), w)};
  for (Index r = 0; r < rgb.rows(); ++r) {
    for (Index c = 0; c < w; ++c) {
      const double R = rgb(r, 3 * c), G = rgb(r, 3 * c + 1), B = rgb(r, 3 * c + 2);
      const double mx = std::max({R, G, B}), mn = std::min({R, G, B});
      const double chroma = mx - mn;
      double h = 0.0;
      if (chroma > 0.0) {
        if (mx == R) {
          h = (G - B) / chroma;
        } else if (mx == G) {
          h = (B - R) / chroma + 2.0;
        } else {
          h = (R - G) / chroma + 4.0;
        }
        h /= 6.0;
        if (h < 0.0) h += 1.0;
        if (h >= 1.0) h -= 1.0;
      }
      out.h(r, c) = h;
      out.s(r, c) = mx > 0.0 ? chroma / mx : 0.0;
      out.v(r, c) = mx;
    }
  }
  return out;
}

double hue_pcc(const Image& a, const Image& b, double threshold) {
  check_pair(a, b, "hue_pcc");
  const Hsv ha = rgb_to_hsv(a), hb = rgb_to_hsv(b);
  std::vector<double> xa, xb;
  for (Index i = 0; i < ha.h.size(); ++i) {
    if (ha.s.data()[i] * ha.v.data()[i] < threshold || hb.s.data()[i] * hb.v.data()[i] < threshold) continue;
    xa.push_back(ha.h.data()[i]);
    xb.push_back(hb.h.data()[i]);
  }
  if (xa.size() < 2) throw UndefinedResultError("hue_pcc: fewer than 2 chromatic pixels");
  const auto n = static_cast<double>(xa.size());
  const double ma = std::accumulate(xa.begin(), xa.end(), 0.0) / n;
  const double mb = std::accumulate(xb.begin(), xb.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    saa += (xa[i] - ma) * (xa[i] - ma);
    sbb += (xb[i] - mb) * (xb[i] - mb);
    sab += (xa[i] - ma) * (xb[i] - mb);
  }
  const auto [amin, amax] = std::minmax_element(xa.begin(), xa.end());
  const auto [bmin, bmax] = std::minmax_element(xb.begin(), xb.end());
  if (*amin == *amax || *bmin == *bmax || saa == 0.0 || sbb == 0.0) throw UndefinedResultError("hue_pcc: hue has zero variance in one image");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---- classifiers -----------------------------------------------------------------------------

Vector OracleClassifier::predict_logits(const ClipInput& clip) const {
  if (clip.label < 0 || clip.label >= classes_) throw ValidationError("oracle classifier: clip has no valid label");
  Vector v = Vector::Zero(classes_);
  v(clip.label) = 1.0;
  return v;
}

Vector RandomClassifier::predict_logits(const ClipInput& clip) const {
  std::mt19937_64 rng(derive_seed(seed_, "random-classifier:" + clip.clip_id));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(classes_);
  for (Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  return v;
}

Matrix ridge_fit(const Matrix& x, const Matrix& y, double lambda) {
  if (x.rows() != y.rows() || x.rows() == 0) throw ShapeError("ridge_fit: sample counts differ or are zero");
  if (!(lambda > 0.0)) throw ConfigError("ridge_fit: lambda must be positive");
  const RowVector mx = x.colwise().mean(), my = y.colwise().mean();
  const Matrix xc = x.rowwise() - mx, yc = y.rowwise() - my;
  Matrix w;
  if (x.cols() <= x.rows()) {
    Matrix a = xc.transpose() * xc;
    a.diagonal().array() += lambda;
    w = a.ldlt().solve(xc.transpose() * yc);
  } else {
    Matrix k = xc * xc.transpose();
    k.diagonal().array() += lambda;
    w = xc.transpose() * k.ldlt().solve(yc);
  }
  Matrix out(x.cols() + 1, y.cols());
  out.topRows(x.cols()) = w;
  out.row(x.cols()) = my - mx * w;
  return out;
}

RowVector RidgeProbe::feature(const std::vector<Image>& frames, Index frame) const {
  const Index px = frames.front().size();
  if (mode_ == ProbeMode::Frame) return Eigen::Map<const RowVector>(frames[static_cast<size_t>(frame)].data(), px);
  RowVector f(px * static_cast<Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) f.segment(static_cast<Index>(i) * px, px) = Eigen::Map<const RowVector>(frames[i].data(), px);
  return f;
}

void RidgeProbe::fit(const std::vector<std::vector<Image>>& clips, const std::vector<int>& labels) {
  if (clips.empty() || clips.size() != labels.size()) throw ShapeError("ridge probe: need one label per clip");
  const auto per_clip = static_cast<Index>(mode_ == ProbeMode::Frame ? clips.front().size() : 1);
  const Index dim = feature(clips.front(), 0).size();
  Matrix x(static_cast<Index>(clips.size()) * per_clip, dim);
  Matrix y = Matrix::Zero(x.rows(), classes_);
  for (std::size_t c = 0; c < clips.size(); ++c) {
    if (labels[c] < 0 || labels[c] >= classes_) throw ValidationError("ridge probe: label out of range");
    if (clips[c].size() != clips.front().size()) throw ShapeError("ridge probe: clips differ in frame count");
    for (Index f = 0; f < per_clip; ++f) {
      const Index r = static_cast<Index>(c) * per_clip + f;
      x.row(r) = feature(clips[c], f);
      y(r, labels[c]) = 1.0;
    }
  }
  weights_ = ridge_fit(x, y, lambda_);
}

Vector RidgeProbe::predict_logits(const ClipInput& clip) const {
  if (!fitted()) throw ValidationError("ridge probe: not fitted");
  if (!clip.frames || clip.frames->empty()) throw EmptyInputError("ridge probe: clip has no frames");
  const auto& frames = *clip.frames;
  const Index d = weights_.rows() - 1;
  const Index n = mode_ == ProbeMode::Frame ? static_cast<Index>(frames.size()) : 1;
  Vector logits = Vector::Zero(classes_);
  for (Index f = 0; f < n; ++f) {
    const RowVector x = feature(frames, f);
    if (x.size() != d) throw ShapeError("ridge probe: feature size " + std::to_string(x.size()) + " != " + std::to_string(d));
    logits += (x * weights_.topRows(d) + weights_.row(d)).transpose();
  }
  return logits / static_cast<double>(n);
}

// ---- report ----------------------------------------------------------------------------------

json to_json(const EvalConfig& c) {
  return {{"ways", c.ways},
          {"k", c.k},
          {"repeats", c.repeats},
          {"seed", c.seed},
          {"hue_threshold", c.hue_threshold},
          {"psnr_cap", c.psnr_cap},
          {"ridge_lambda", c.ridge_lambda},
          {"classifier", c.classifier}};
}

std::vector<std::string> metric_columns(const EvalConfig& cfg) {
  std::vector<std::string> cols;
  for (int n : cfg.ways) cols.push_back(std::to_string(n) + "-way-V");
  for (int n : cfg.ways) cols.push_back(std::to_string(n) + "-way-F");
  cols.insert(cols.end(), {"SSIM", "PSNR", "Hue-pcc"});
  return cols;
}

namespace {

json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "inf") return std::numeric_limits<double>::infinity();
    if (j == "-inf") return -std::numeric_limits<double>::infinity();
    throw IngestError("report: unexpected string value '" + j.get<std::string>() + "'");
  }
  return j.get<double>();
}

MetricSummary mean_std(const std::vector<double>& v) {
  MetricSummary s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

std::map<std::string, MetricSummary> summarize(const std::vector<MetricRow>& rows,
                                               const std::vector<std::string>& columns, double psnr_cap) {
  std::map<std::string, MetricSummary> out;
  for (const auto& col : columns) {
    std::map<int, std::vector<double>> by_subject;
    for (const auto& r : rows) {
      auto it = r.values.find(col);
      if (it == r.values.end()) continue;
      double v = it->second;
      if (col == "PSNR") v = std::min(v, psnr_cap);
      by_subject[r.subject].push_back(v);
    }
    if (by_subject.size() <= 1) {
      out[col] = mean_std(by_subject.empty() ? std::vector<double>{} : by_subject.begin()->second);
    } else {
      std::vector<double> means;
      for (const auto& [s, v] : by_subject) means.push_back(mean_std(v).mean);
      out[col] = mean_std(means);
    }
  }
  return out;
}

json to_json(const MetricsReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json values = json::object();
    for (const auto& [k, v] : row.values) values[k] = number_to_json(v);
    rows.push_back({{"clip_id", row.clip_id}, {"subject", row.subject}, {"label", row.label}, {"values", values}});
  }
  json summary = json::object();
  for (const auto& [k, s] : r.summary) summary[k] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
  return {{"schema_version", r.schema_version}, {"config_hash", r.config_hash}, {"aggregation", r.aggregation},
          {"columns", r.columns},               {"rows", rows},               {"summary", summary},
          {"missing", r.missing},               {"meta", r.meta}};
}

MetricsReport report_from_json(const json& j) {
  const std::string version = j.value("schema_version", "");
  if (version != kReportSchema) {
    throw ValidationError("report: schema version '" + version + "' is not " + kReportSchema +
                          "; regenerate the report with this build");
  }
  MetricsReport r;
  r.schema_version = version;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.aggregation = j.at("aggregation").get<std::string>();
  r.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& row : j.at("rows")) {
    MetricRow m;
    m.clip_id = row.at("clip_id").get<std::string>();
    m.subject = row.at("subject").get<int>();
    m.label = row.at("label").get<int>();
    for (const auto& [k, v] : row.at("values").items()) m.values[k] = number_from_json(v);
    r.rows.push_back(std::move(m));
  }
  for (const auto& [k, v] : j.at("summary").items()) {
    r.summary[k] = MetricSummary{v.at("mean").get<double>(), v.at("std").get<double>(), v.at("count").get<int>()};
  }
  r.missing = j.at("missing").get<std::vector<std::string>>();
  r.meta = j.value("meta", json::object());
  return r;
}

bool MetricsReport::operator==(const MetricsReport& o) const { return to_json(*this) == to_json(o); }

ClassifierSet make_classifiers(const data::DatasetManifest& manifest, const inf::Renderer& renderer,
                               const EvalConfig& cfg) {
  ClassifierSet set;
  if (cfg.classifier == "oracle") {
    set.frame = std::make_unique<OracleClassifier>(manifest.concepts);
    set.video = std::make_unique<OracleClassifier>(manifest.concepts);
  } else if (cfg.classifier == "random") {
    set.frame = std::make_unique<RandomClassifier>(manifest.concepts, derive_seed(cfg.seed, "frame"));
    set.video = std::make_unique<RandomClassifier>(manifest.concepts, derive_seed(cfg.seed, "video"));
  } else if (cfg.classifier == "ridge") {
    std::vector<std::vector<Image>> clips;
    std::vector<int> labels;
    for (auto i : manifest.indices(data::Split::Train)) {
      clips.push_back(renderer.render_clip(manifest.records[i].gt_latents));
      labels.push_back(manifest.records[i].concept_label);
    }
    if (clips.empty()) throw EmptyInputError("ridge classifiers: no training clips");
    auto frame = std::make_unique<RidgeProbe>(ProbeMode::Frame, manifest.concepts, cfg.ridge_lambda);
    auto video = std::make_unique<RidgeProbe>(ProbeMode::Video, manifest.concepts, cfg.ridge_lambda);
    frame->fit(clips, labels);
    video->fit(clips, labels);
    set.frame = std::move(frame);
    set.video = std::move(video);
  } else {
    throw ConfigError("unknown classifier '" + cfg.classifier + "' (expected ridge, oracle or random)");
  }
  return set;
}

MetricsReport evaluate_split(const std::map<std::string, Matrix>& recon, const data::DatasetManifest& manifest,
                             data::Split split, const ClassifierPair& classifiers, const inf::Renderer& renderer,
                             const EvalConfig& cfg, const std::string& config_hash) {
  if (!classifiers.frame || !classifiers.video) throw ConfigError("evaluate_split: classifiers missing");
  for (int n : cfg.ways) {
    if (n < 2 || n > classifiers.video->classes()) throw ConfigError("evaluate_split: N = " + std::to_string(n) + " invalid");
  }
  MetricsReport report;
  report.config_hash = config_hash;
  report.columns = metric_columns(cfg);
  report.meta = {{"split", split == data::Split::Train ? "train" : "test"},
                 {"classifiers", {{"frame", classifiers.frame->name()}, {"video", classifiers.video->name()}}},
                 {"psnr_cap", cfg.psnr_cap},
                 {"psnr_clip_value", "mean of per-frame PSNR; inf only if every frame is identical"},
                 {"hue_clip_value", "mean over frames with a defined value"},
                 {"std", "sample standard deviation"}};

  std::vector<const data::ClipRecord*> clips;
  for (auto i : manifest.indices(split)) clips.push_back(&manifest.records[i]);
  std::sort(clips.begin(), clips.end(), [](auto* a, auto* b) { return a->clip_id < b->clip_id; });

  for (const auto* rec : clips) {
    auto it = recon.find(rec->clip_id);
    if (it == recon.end() || it->second.rows() != rec->gt_latents.rows() ||
        it->second.cols() != rec->gt_latents.cols()) {
      report.missing.push_back(rec->clip_id);
      continue;
    }
    const auto gt_frames = renderer.render_clip(rec->gt_latents);
    const auto rc_frames = renderer.render_clip(it->second);
    MetricRow row;
    row.clip_id = rec->clip_id;
    row.subject = rec->subject;
    row.label = rec->concept_label;
    const ClipInput input{rec->clip_id, &rc_frames, rec->concept_label};
    const Vector logits_v = classifiers.video->predict_logits(input);
    const Vector logits_f = classifiers.frame->predict_logits(input);
    for (int n : cfg.ways) {
      NwayConfig nc{n, cfg.k, cfg.repeats, derive_seed(cfg.seed, rec->clip_id + "/V/" + std::to_string(n))};
      row.values[std::to_string(n) + "-way-V"] = nway_topk(logits_v, rec->concept_label, nc);
      nc.seed = derive_seed(cfg.seed, rec->clip_id + "/F/" + std::to_string(n));
      row.values[std::to_string(n) + "-way-F"] = nway_topk(logits_f, rec->concept_label, nc);
    }
    double ssim_sum = 0.0, psnr_sum = 0.0, hue_sum = 0.0;
    int hue_n = 0;
    bool all_identical = true;
    for (std::size_t f = 0; f < gt_frames.size(); ++f) {
      ssim_sum += ssim(rc_frames[f], gt_frames[f]);
      const double p = psnr(rc_frames[f], gt_frames[f]);
      all_identical = all_identical && std::isinf(p);
      psnr_sum += std::min(p, cfg.psnr_cap);
      try {
        hue_sum += hue_pcc(rc_frames[f], gt_frames[f], cfg.hue_threshold);
        ++hue_n;
      } catch (const UndefinedResultError&) {
      }
    }
    const auto nf = static_cast<double>(gt_frames.size());
    row.values["SSIM"] = ssim_sum / nf;
    row.values["PSNR"] = all_identical ? std::numeric_limits<double>::infinity() : psnr_sum / nf;
    if (hue_n > 0) row.values["Hue-pcc"] = hue_sum / hue_n;
    report.rows.push_back(std::move(row));
  }
  report.summary = summarize(report.rows, report.columns, cfg.psnr_cap);
  return report;
}

}  // namespace mindcine::metrics
