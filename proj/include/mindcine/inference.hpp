#pragma once

// Generation: adversarial guidance over a pluggable score estimator, a toy
// conditional latent diffusion model, a fixed latent-to-image renderer, and
// the end-to-end EEG -> video-latent reconstruction pipeline.

#include "mindcine/dataset.hpp"
#include "mindcine/encoders.hpp"
#include "mindcine/nn.hpp"
#include "mindcine/perceptual.hpp"
#include "mindcine/semantic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mindcine::inf {

/// Condition of one clip: the semantic text condition (1 x tokens*cond_dim)
/// and the per-frame perceptual latents (frames x latent_dim).
struct Condition {
  Matrix semantic;
  Matrix perceptual;

  bool operator==(const Condition&) const = default;
};

/// All-zero condition with the given shapes.
Condition zero_condition(Index semantic_dim, Index frames, Index latent_dim);

/// Predicts the noise in z_t (frames x latent_dim) at diffusion step `step`.
class ScoreEstimator {
 public:
  virtual ~ScoreEstimator() = default;
  virtual Matrix estimate(const Matrix& z_t, const Condition& c, int step) const = 0;
};

/// Wraps a callable as an estimator.
class FunctionEstimator final : public ScoreEstimator {
 public:
  using Fn = std::function<Matrix(const Matrix&, const Condition&, int)>;
  explicit FunctionEstimator(Fn fn) : fn_(std::move(fn)) {}
  Matrix estimate(const Matrix& z_t, const Condition& c, int step) const override { return fn_(z_t, c, step); }

 private:
  Fn fn_;
};

struct GuidanceConfig {
  double scale = 7.5;
  /// Negative condition; the zero condition when empty.
  std::optional<Condition> negative;
};

/// ε(z_t, c̄) + s·(ε(z_t, c) − ε(z_t, c̄)).
Matrix guided_score(const ScoreEstimator& est, const Matrix& z_t, const Condition& c, const Condition& c_bar, double s,
                    int step = 0);

struct DiffusionConfig {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  Index hidden = 128;
  int epochs = 150;
  int batch_size = 40;
  double lr = 1e-3;
  /// Independent drop probability of each condition part during training.
  double cond_dropout = 0.2;
  /// Std of Gaussian noise added to the perceptual condition during training.
  double cond_noise = 0.1;
  /// DDIM stochasticity; 0 is deterministic.
  double eta = 0.0;
  /// Bound for predicted clean latents during sampling (0 disables clipping).
  double clip_x0 = 0.0;

  bool operator==(const DiffusionConfig&) const = default;
};

nlohmann::json to_json(const DiffusionConfig& c);

/// DDPM noise schedule with the usual betas scaled to the step count.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  int steps() const { return static_cast<int>(betas.size()); }
};

/// Two-layer per-frame denoiser over [z_t frame, semantic condition, perceptual
/// frame, step features, frame position].
class ToyDiffusion final : public ScoreEstimator {
 public:
  ToyDiffusion(const DiffusionConfig& cfg, Index frames, Index latent_dim, Index semantic_dim, std::mt19937_64& rng);

  Matrix estimate(const Matrix& z_t, const Condition& c, int step) const override;
  /// Batched estimate: z_t stacked (B*frames) x latent_dim, conditions per clip.
  ad::Var estimate(ad::Graph& g, const Matrix& z_t, const std::vector<const Condition*>& c,
                   const std::vector<int>& steps) const;

  /// DDIM sampling from seeded noise with guidance.
  Matrix sample(const Condition& c, const GuidanceConfig& guidance, std::uint64_t seed) const;

  nn::ParamList parameters();
  const DiffusionConfig& config() const { return cfg_; }
  DiffusionConfig& mutable_config() { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  Index frames() const { return frames_; }
  Index latent_dim() const { return latent_dim_; }
  Index semantic_dim() const { return semantic_dim_; }

 private:
  Matrix features(const Matrix& z_t, const std::vector<const Condition*>& c, const std::vector<int>& steps) const;

  DiffusionConfig cfg_;
  NoiseSchedule schedule_;
  Index frames_, latent_dim_, semantic_dim_;
  mutable nn::Linear layer1_, layer2_;
};

struct DiffusionEpoch {
  int epoch = 0;
  double loss = 0.0;
};

/// Trains the denoiser on training-split GT latents with GT conditions.
/// Also sets clip_x0 from the data range when it is 0.
std::vector<DiffusionEpoch> train_diffusion(const data::DatasetManifest& manifest, ToyDiffusion& model,
                                            std::uint64_t seed);

// ---- rendering -------------------------------------------------------------------------------

/// H x (W*3) matrix, RGB interleaved per pixel, values in [0, 1].
using Image = Matrix;

/// Fixed linear latent-to-image map followed by a sigmoid. Each latent
/// dimension drives a smooth low-frequency colour pattern.
class Renderer {
 public:
  explicit Renderer(Index latent_dim, Index height = 16, Index width = 16, std::uint64_t seed = 0x5eedULL);
  Image render(const RowVector& latent) const;
  std::vector<Image> render_clip(const Matrix& latents) const;
  Index height() const { return height_; }
  Index width() const { return width_; }

 private:
  Index latent_dim_, height_, width_;
  Matrix map_;  // latent_dim x (H*W*3)
  RowVector bias_;
};

// ---- pipeline --------------------------------------------------------------------------------

/// Trained components of the pipeline. Either branch may be absent when bypassed.
struct PipelineModels {
  enc::SemanticEncoder* encoder = nullptr;
  sem::SemanticPredictor* predictor = nullptr;
  enc::EmbedNet* embednet = nullptr;
  perc::CausalSeqModel* causalseq = nullptr;
  const ToyDiffusion* diffusion = nullptr;
  bool use_semantic = true;
  bool use_perception = true;
};

struct Reconstruction {
  std::string clip_id;
  Matrix latents;        // frames x latent_dim
  Matrix z0_hat;         // perceptual prediction (zeros when bypassed)
  Matrix semantic_hat;   // 1 x tokens*cond_dim (zeros when bypassed)
  std::uint64_t seed = 0;
};

/// Checks that every present model agrees with the dims; throws ConfigError.
void check_compatible(const PipelineModels& m, const data::Dims& dims);

Reconstruction reconstruct(const data::EegSegment& eeg, const data::Dims& dims, PipelineModels& m,
                           const GuidanceConfig& g, std::uint64_t seed);

struct BatchResult {
  std::vector<Reconstruction> reconstructions;  // sorted by clip_id
  std::map<std::string, std::string> failures;   // clip_id -> message
  nlohmann::json provenance = nlohmann::json::object();

  bool ok() const { return failures.empty(); }
};

/// Reconstructs every clip of a split; the seed of each clip is derived from
/// (seed, clip_id). Per-clip failures are collected, not thrown.
BatchResult batch_reconstruct(const data::DatasetManifest& manifest, data::Split split, PipelineModels& m,
                              const GuidanceConfig& g, std::uint64_t seed, const nlohmann::json& provenance = {});

void save_reconstructions(const BatchResult& r, const data::Dims& dims, const Renderer& renderer,
                          const std::filesystem::path& dir);
/// clip_id -> latents.
std::map<std::string, Matrix> load_reconstructions(const std::filesystem::path& dir);

}  // namespace mindcine::inf
