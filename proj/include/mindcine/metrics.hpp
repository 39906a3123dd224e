#pragma once

// Evaluation: N-way-top-K classification success, SSIM, PSNR and hue Pearson
// correlation on rendered frames, stand-in classifiers, and the per-split
// metrics report.

#include "mindcine/dataset.hpp"
#include "mindcine/inference.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mindcine::metrics {

using inf::Image;

struct NwayConfig {
  int n = 2;
  int k = 1;
  int repeats = 100;
  std::uint64_t seed = 0;
};

/// Monte-Carlo N-way-top-K: each trial samples N-1 distinct distractor classes
/// plus the GT class and succeeds if fewer than K sampled classes have a logit
/// strictly above the GT logit. Returns the mean over trials.
double nway_topk(const Vector& logits, int gt_class, const NwayConfig& cfg);

/// Exact expectation of nway_topk over all distractor subsets (hypergeometric).
double nway_topk_expected(const Vector& logits, int gt_class, int n, int k);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// H x W luma (BT.601) of an interleaved RGB image.
Matrix luma(const Image& rgb);

/// Mean SSIM over all valid window positions of the luma channel, dynamic range 1.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

/// 10 log10(1 / MSE); +inf for identical images.
double psnr(const Image& a, const Image& b);

/// Cap applied to +inf PSNR values when averaging.
inline constexpr double kPsnrCap = 100.0;

/// (h, s, v) per pixel, each H x W, h in [0, 1).
struct Hsv {
  Matrix h, s, v;
};
Hsv rgb_to_hsv(const Image& rgb);

/// Pearson correlation of per-pixel hue over pixels where s·v >= threshold in
/// both images. Throws UndefinedResultError for fewer than 2 such pixels or a
/// zero-variance operand.
double hue_pcc(const Image& a, const Image& b, double threshold = 0.05);

// ---- classifiers -----------------------------------------------------------------------------

struct ClipInput {
  std::string clip_id;
  const std::vector<Image>* frames = nullptr;
  int label = -1;  // only the oracle reads this
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string name() const = 0;
  virtual int classes() const = 0;
  /// Logits over all classes for one clip.
  virtual Vector predict_logits(const ClipInput& clip) const = 0;
};

/// One-hot logits of the GT label.
class OracleClassifier final : public Classifier {
 public:
  explicit OracleClassifier(int classes) : classes_(classes) {}
  std::string name() const override { return "oracle"; }
  int classes() const override { return classes_; }
  Vector predict_logits(const ClipInput& clip) const override;

 private:
  int classes_;
};

/// I.i.d. standard-normal logits seeded by (seed, clip_id): chance-level by construction.
class RandomClassifier final : public Classifier {
 public:
  RandomClassifier(int classes, std::uint64_t seed) : classes_(classes), seed_(seed) {}
  std::string name() const override { return "random"; }
  int classes() const override { return classes_; }
  Vector predict_logits(const ClipInput& clip) const override;

 private:
  int classes_;
  std::uint64_t seed_;
};

enum class ProbeMode { Frame, Video };

/// Ridge-regression linear probe onto one-hot labels, fitted on GT frames.
/// Frame mode scores every frame and averages the logits; video mode scores
/// the concatenation of all frames of the clip.
class RidgeProbe final : public Classifier {
 public:
  RidgeProbe(ProbeMode mode, int classes, double lambda = 1.0) : mode_(mode), classes_(classes), lambda_(lambda) {}
  void fit(const std::vector<std::vector<Image>>& clips, const std::vector<int>& labels);

  std::string name() const override { return mode_ == ProbeMode::Frame ? "ridge-frame" : "ridge-video"; }
  int classes() const override { return classes_; }
  Vector predict_logits(const ClipInput& clip) const override;
  bool fitted() const { return weights_.size() > 0; }

 private:
  RowVector feature(const std::vector<Image>& frames, Index frame) const;

  ProbeMode mode_;
  int classes_;
  double lambda_;
  Matrix weights_;  // (features + 1) x classes
};

/// Ridge solution W of min ||[X 1] W - Y||² + lambda ||W||², primal or dual form.
Matrix ridge_fit(const Matrix& x, const Matrix& y, double lambda);

// ---- report ----------------------------------------------------------------------------------

struct EvalConfig {
  std::vector<int> ways{2, 40};
  int k = 1;
  int repeats = 100;
  std::uint64_t seed = 0;
  double hue_threshold = 0.05;
  double psnr_cap = kPsnrCap;
  double ridge_lambda = 1.0;
  std::string classifier = "ridge";  // ridge | oracle | random

  bool operator==(const EvalConfig&) const = default;
};

nlohmann::json to_json(const EvalConfig& c);

inline constexpr const char* kReportSchema = "mindcine.metrics/1";

struct MetricRow {
  std::string clip_id;
  int subject = 0;
  int label = 0;
  /// Metric name -> value; absent when undefined for this clip.
  std::map<std::string, double> values;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

struct MetricsReport {
  std::string schema_version = kReportSchema;
  std::string config_hash;
  std::string aggregation = "clip-then-subject";
  std::vector<std::string> columns;
  std::vector<MetricRow> rows;
  std::map<std::string, MetricSummary> summary;
  std::vector<std::string> missing;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const MetricsReport&) const;
};

nlohmann::json to_json(const MetricsReport& r);
/// Throws ValidationError on a schema-version mismatch.
MetricsReport report_from_json(const nlohmann::json& j);

/// Column names, e.g. "2-way-V", "40-way-F", "SSIM", "PSNR", "Hue-pcc".
std::vector<std::string> metric_columns(const EvalConfig& cfg);

/// Mean ± sample std per column: per-subject means over clips, then across
/// subjects (plain across clips when only one subject is present). PSNR values
/// are capped before averaging.
std::map<std::string, MetricSummary> summarize(const std::vector<MetricRow>& rows,
                                               const std::vector<std::string>& columns, double psnr_cap);

struct ClassifierPair {
  const Classifier* frame = nullptr;
  const Classifier* video = nullptr;
};

/// Builds the configured classifiers, fitting ridge probes on rendered GT frames of the training split.
struct ClassifierSet {
  std::unique_ptr<Classifier> frame, video;
  ClassifierPair pair() const { return {frame.get(), video.get()}; }
};
ClassifierSet make_classifiers(const data::DatasetManifest& manifest, const inf::Renderer& renderer,
                               const EvalConfig& cfg);

/// Scores reconstructions (clip_id -> latents) against the GT of a split.
/// Clips without a reconstruction are listed in `missing` and excluded.
MetricsReport evaluate_split(const std::map<std::string, Matrix>& recon, const data::DatasetManifest& manifest,
                             data::Split split, const ClassifierPair& classifiers, const inf::Renderer& renderer,
                             const EvalConfig& cfg, const std::string& config_hash = "");

}  // namespace mindcine::metrics
