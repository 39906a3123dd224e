#pragma once

// Semantic decoding: SoftCLIP contrastive alignment of EEG embeddings with the
// image/text/depth spaces, the text-projection and predictor-alignment MSE
// terms, their weighted combination, and the training loop.

#include "mindcine/dataset.hpp"
#include "mindcine/encoders.hpp"
#include "mindcine/nn.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mindcine::sem {

using ad::Graph;
using ad::Var;

/// Batch reduction. Mean divides by the batch size B; Sum is the literal
/// double sum over the batch.
enum class Reduction { Mean, Sum };

/// Learned temperature, stored as log(1/tau) so tau stays positive.
struct SoftClipParams {
  ad::Parameter log_scale;
  bool bidirectional = true;

  SoftClipParams() : SoftClipParams(0.07) {}
  explicit SoftClipParams(double tau, bool bidirectional_ = true, const std::string& name = "softclip.log_scale");
  double tau() const;
  void set_tau(double tau);
};

/// SoftCLIP loss. Soft targets p = softmax(target·targetᵀ / tau) row-wise,
/// predictions q = softmax(pred·targetᵀ / tau) row-wise, loss = -Σ p log q.
/// Rows are L2-normalized first. With `bidirectional`, the transposed
/// direction softmax(targetᵀ... ) is averaged in. `log_scale` is a 1x1 node
/// holding log(1/tau).
Var softclip_loss(const Var& pred, const Var& target, const Var& log_scale, bool bidirectional,
                  Reduction reduction = Reduction::Mean);

/// Value-only convenience overload.
double softclip_loss(const Matrix& pred, const Matrix& target, double tau, bool bidirectional,
                     Reduction reduction = Reduction::Mean);

struct JointLossWeights {
  double alpha1 = 1.0 / 3.0;  // image
  double alpha2 = 1.0 / 3.0;  // text
  double alpha3 = 1.0 / 3.0;  // depth

  bool operator==(const JointLossWeights&) const = default;
};

/// Temperatures for the (image, text, depth) pairs; all three may be the same node.
struct PairTemperatures {
  Var image, text, depth;
};

/// alpha1·L(e_s, v) + alpha2·L(e_s, t) + alpha3·L(e_s, d). Zero-weight terms are skipped.
Var joint_loss(const Var& e_s, const Var& v, const Var& t, const Var& d, const JointLossWeights& w,
               const PairTemperatures& temps, bool bidirectional, Reduction reduction = Reduction::Mean);

/// ‖e_s − t‖² summed over features, reduced over the batch.
Var projection_loss(const Var& e_s, const Var& t, Reduction reduction = Reduction::Mean);

/// Linear map joint_dim -> tokens*cond_dim; row b of the output is the flattened
/// (tokens x cond_dim) text condition predicted for sample b.
class SemanticPredictor {
 public:
  SemanticPredictor(Index joint_dim, Index tokens, Index cond_dim, std::mt19937_64& rng);

  Var forward(Graph& g, const Var& e_s);
  /// tokens x cond_dim prediction for a single embedding.
  Matrix predict(const data::Embedding& e_s);
  nn::ParamList parameters();
  Index tokens() const { return tokens_; }
  Index cond_dim() const { return cond_dim_; }
  nn::Linear& linear() { return linear_; }

 private:
  Index tokens_;
  Index cond_dim_;
  nn::Linear linear_;
};

/// ‖predictor(e_s) − e_t‖² with e_t given as B x (tokens*cond_dim).
Var alignment_loss(SemanticPredictor& predictor, Graph& g, const Var& e_s, const Var& e_t,
                   Reduction reduction = Reduction::Mean);

struct SemanticLossWeights {
  double lambda = 0.01;
  double mu = 0.5;

  bool operator==(const SemanticLossWeights&) const = default;
};

struct LossParts {
  double projection = 0.0;
  double joint = 0.0;
  double alignment = 0.0;
};

/// projection + lambda·joint + mu·alignment.
double semantic_total_loss(const LossParts& parts, const SemanticLossWeights& w);
Var semantic_total_loss(const Var& projection, const Var& joint, const Var& alignment, const SemanticLossWeights& w);

struct SemanticTrainConfig {
  int epochs = 30;
  int batch_size = 40;
  double lr = 3e-5;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  JointLossWeights alpha;
  SemanticLossWeights weights;
  double tau_init = 0.07;
  bool learn_tau = true;
  bool bidirectional = true;
  bool shared_tau = true;
  /// Fraction of each concept's training clips held out for best-epoch selection.
  double val_fraction = 0.1;

  bool operator==(const SemanticTrainConfig&) const = default;
};

struct SemanticEpoch {
  int epoch = 0;
  double projection = 0.0;
  double joint = 0.0;
  double alignment = 0.0;
  double total = 0.0;
  double val_total = 0.0;
};

/// Thrown when a loss becomes non-finite; carries the offending position.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& stage, int epoch, int batch);
  int epoch;
  int batch;
};

/// Temperatures owned by a training run (one shared or one per pair).
struct TemperatureSet {
  std::vector<SoftClipParams> params;  // size 1 (shared) or 3
  nn::ParamList parameters();
  PairTemperatures bind(Graph& g);
};

TemperatureSet make_temperatures(const SemanticTrainConfig& cfg);

struct TrainedSemanticState {
  std::vector<SemanticEpoch> curve;
  int best_epoch = -1;
  double best_val_total = 0.0;
  /// Parameter values after the final epoch (encoder, predictor, temperatures).
  std::vector<Matrix> final_params;
  /// Parameter values at best_epoch; the models are left holding these.
  std::vector<Matrix> best_params;
};

/// Trains encoder, predictor and temperatures on the manifest's training split.
TrainedSemanticState train_semantic(const data::DatasetManifest& manifest, enc::SemanticEncoder& encoder,
                                    SemanticPredictor& predictor, TemperatureSet& temps,
                                    const SemanticTrainConfig& cfg);

/// Per-clip loss parts over a set of records, evaluated in fixed batches.
LossParts evaluate_semantic(const std::vector<const data::ClipRecord*>& clips, enc::SemanticEncoder& encoder,
                            SemanticPredictor& predictor, TemperatureSet& temps, const SemanticTrainConfig& cfg);

/// Deterministic stratified hold-out of training clips: returns (fit, validation) manifest indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(const data::DatasetManifest& m,
                                                                                 double fraction,
                                                                                 std::uint64_t seed);

}  // namespace mindcine::sem
