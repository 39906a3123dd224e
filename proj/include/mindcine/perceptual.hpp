#pragma once

// Perceptual decoding: the CausalSeq encoder-decoder transformer that maps
// per-window EEG embeddings to per-frame video latents, and its training loop.

#include "mindcine/dataset.hpp"
#include "mindcine/encoders.hpp"
#include "mindcine/nn.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mindcine::perc {

using ad::Graph;
using ad::Mask;
using ad::Var;

/// mask(i, j) is true (allowed) iff j <= i.
Mask causal_mask(Index t);

struct AttentionResult {
  Var output;      // tq x dv
  Matrix weights;  // tq x tk, rows sum to 1
};

/// Scaled dot-product attention for one head. With `qk_norm`, queries and keys
/// are layer-normalized per vector (then scaled by the optional 1 x d gains)
/// before the dot product. Masked cells get exactly zero weight.
AttentionResult attention(const Var& q, const Var& k, const Var& v, const Mask* mask, bool qk_norm,
                          const Var* q_gain = nullptr, const Var* k_gain = nullptr);

enum class PositionalKind { None, Sinusoidal, Learned };
enum class DecoderMode { Autoregressive, Parallel };

std::string to_string(PositionalKind k);
std::string to_string(DecoderMode m);
PositionalKind positional_from_string(const std::string& s);
DecoderMode decoder_mode_from_string(const std::string& s);

/// Fixed sinusoidal table, frames x dim.
Matrix sinusoidal_table(Index frames, Index dim);

struct CausalSeqConfig {
  Index frames = 6;
  Index input_dim = 64;
  Index latent_dim = 16;
  Index d_model = 64;
  Index heads = 4;
  Index layers = 2;
  Index ffn = 128;
  bool qk_norm = true;
  PositionalKind positional = PositionalKind::Sinusoidal;
  DecoderMode decoder = DecoderMode::Autoregressive;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Index d_model, Index heads, bool qk_norm, std::mt19937_64& rng);

  /// xq: (B*tq) x d, xkv: (B*tk) x d; attention never crosses clip boundaries.
  /// Per-(clip, head) weight matrices are appended to `weights` when given.
  Var forward(Graph& g, const Var& xq, const Var& xkv, Index batch, const Mask* mask,
              std::vector<Matrix>* weights = nullptr);
  void collect(nn::ParamList& out);

 private:
  Index heads_ = 1;
  bool qk_norm_ = true;
  nn::Linear q_, k_, v_, o_;
  ad::Parameter q_gain_, k_gain_;
};

struct FeedForward {
  nn::Linear up, down;
  FeedForward() = default;
  FeedForward(const std::string& name, Index d_model, Index hidden, std::mt19937_64& rng);
  Var forward(Graph& g, const Var& x);
  void collect(nn::ParamList& out);
};

struct EncoderLayer {
  nn::LayerNorm ln_attn, ln_ffn;
  MultiHeadAttention self_attn;
  FeedForward ffn;
};

struct DecoderLayer {
  nn::LayerNorm ln_self, ln_cross, ln_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
};

/// Encoder-decoder transformer with a causal decoder self-attention mask.
class CausalSeqModel {
 public:
  CausalSeqModel(const CausalSeqConfig& cfg, std::mt19937_64& rng);
  CausalSeqModel(const CausalSeqModel&) = delete;
  CausalSeqModel& operator=(const CausalSeqModel&) = delete;

  /// (B*t) x input_dim -> encoder memory (B*t) x d_model.
  Var encode(Graph& g, const Var& e_p, Index batch, std::vector<Matrix>* weights = nullptr);
  /// Decoder over already-embedded inputs (B*t) x d_model -> (B*t) x latent_dim.
  Var decode(Graph& g, const Var& memory, const Var& decoder_inputs, Index batch,
             std::vector<Matrix>* weights = nullptr);
  /// Teacher-forced decoder inputs: [start, proj(z_0), ..., proj(z_{t-2})] + PE.
  Var teacher_inputs(Graph& g, const Matrix& gt_latents, Index batch);
  /// Decoder inputs in parallel mode: start token + PE at every position.
  Var parallel_inputs(Graph& g, Index batch);

  /// Training forward: teacher forcing (autoregressive mode) or parallel queries.
  Var forward_train(Graph& g, const Var& e_p, const Matrix& gt_latents, Index batch);
  /// Inference forward: autoregressive self-feeding or parallel queries. (B*t) x latent_dim.
  Matrix generate(const Matrix& e_p, Index batch);
  /// Inference for a single clip from its perceptual embeddings.
  Matrix causalseq_forward(const std::vector<data::Embedding>& e_p);

  nn::ParamList parameters();
  const CausalSeqConfig& config() const { return cfg_; }

 private:
  Var add_positional(Graph& g, const Var& x, Index batch);

  CausalSeqConfig cfg_;
  nn::Linear in_proj_;
  nn::Linear latent_in_;
  ad::Parameter start_token_;
  ad::Parameter pe_table_;  // learned table (frames x d_model), unused otherwise
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm final_ln_;
  nn::Linear out_proj_;
};

/// Σ over frames and latent dims of the squared error, reduced over the batch
/// (mean over clips). pred/gt: (B*t) x latent_dim.
Var perception_loss(const Var& pred, const Var& gt, Index batch);
double perception_loss(const Matrix& pred, const Matrix& gt, Index batch);

struct PerceptualTrainConfig {
  int epochs = 40;
  int batch_size = 40;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;

  bool operator==(const PerceptualTrainConfig&) const = default;
};

struct PerceptualEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainedPerceptualState {
  std::vector<PerceptualEpoch> curve;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<Matrix> final_params;
  std::vector<Matrix> best_params;
};

/// Windows every clip, then trains EmbedNet and CausalSeq jointly on the training split.
TrainedPerceptualState train_perceptual(const data::DatasetManifest& manifest, enc::EmbedNet& embednet,
                                        CausalSeqModel& model, const PerceptualTrainConfig& cfg);

/// ẑ_0 for one EEG segment: window, embed, decode. t x latent_dim.
Matrix predict_latents(const data::EegSegment& eeg, Index frames, Index window, enc::EmbedNet& embednet,
                       CausalSeqModel& model);

/// Mean over frames of cos(pred row, gt row).
double mean_frame_cosine(const Matrix& pred, const Matrix& gt);

}  // namespace mindcine::perc
