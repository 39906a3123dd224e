#pragma once

// EEG encoders: the semantic encoder family (MLP baseline and a head-tuned
// adapter over precomputed foundation-model embeddings) and EmbedNet, the
// per-window temporal-spatial convolutional feature extractor.

#include "mindcine/dataset.hpp"
#include "mindcine/nn.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mindcine::enc {

using ad::Graph;
using ad::Var;

/// Maps EEG segments into the EEG-semantic embedding space.
class SemanticEncoder {
 public:
  virtual ~SemanticEncoder() = default;

  virtual std::string kind() const = 0;
  virtual Index output_dim() const = 0;
  /// B x output_dim, one row per segment.
  virtual Var encode(Graph& g, std::span<const data::EegSegment* const> batch) = 0;
  virtual nn::ParamList parameters() = 0;

  data::Embedding encode_one(const data::EegSegment& segment);
  Index param_count() { return nn::count_parameters(parameters()); }
};

struct MlpConfig {
  Index channels = 62;
  Index samples = 400;
  std::vector<Index> hidden{256, 256};
  Index joint_dim = 64;
};

/// Flattened channels x samples -> hidden GELU layers -> joint_dim.
class MlpEncoder final : public SemanticEncoder {
 public:
  MlpEncoder(const MlpConfig& cfg, std::mt19937_64& rng);

  std::string kind() const override { return "mlp"; }
  Index output_dim() const override { return cfg_.joint_dim; }
  Var encode(Graph& g, std::span<const data::EegSegment* const> batch) override;
  nn::ParamList parameters() override;

  const MlpConfig& config() const { return cfg_; }
  std::vector<nn::Linear>& layers() { return layers_; }

 private:
  MlpConfig cfg_;
  std::vector<nn::Linear> layers_;
};

/// Per-clip vectors produced by an external EEG foundation model.
using EmbeddingTable = std::map<std::string, Vector>;

void save_embedding_table(const EmbeddingTable& table, const std::filesystem::path& dir);
EmbeddingTable load_embedding_table(const std::filesystem::path& dir);

/// Stored embedding -> trainable linear head. Only the head is trained.
class PretrainedAdapter final : public SemanticEncoder {
 public:
  PretrainedAdapter(EmbeddingTable table, Index joint_dim, std::mt19937_64& rng);

  std::string kind() const override { return "adapter"; }
  Index output_dim() const override { return head_.out_features(); }
  Var encode(Graph& g, std::span<const data::EegSegment* const> batch) override;
  nn::ParamList parameters() override;

  /// Head applied to the stored vector of `clip_id`; throws LookupError if absent.
  data::Embedding adapter_encode(const std::string& clip_id);
  nn::Linear& head() { return head_; }
  Index source_dim() const { return head_.in_features(); }

 private:
  const Vector& lookup(const std::string& clip_id) const;

  EmbeddingTable table_;
  nn::Linear head_;
};

struct EmbedNetConfig {
  Index channels = 62;
  Index window = 150;
  Index temporal_filters = 4;
  Index temporal_kernel = 25;
  Index spatial_filters = 8;
  Index pool = 25;
  Index embed_dim = 64;
};

/// One window (channels x window) -> one embed_dim vector. Windows never mix.
class EmbedNet {
 public:
  EmbedNet(const EmbedNetConfig& cfg, std::mt19937_64& rng);

  /// stacked: (N*channels) x window, N windows on top of each other -> N x embed_dim.
  Var forward(Graph& g, const Var& stacked);
  /// t x embed_dim for one windowed segment.
  Var extract(Graph& g, const data::WindowedSegment& windows);
  /// Eval-mode helper returning one perceptual embedding per window.
  std::vector<data::Embedding> embednet_extract(const data::WindowedSegment& windows);

  nn::ParamList parameters();
  const EmbedNetConfig& config() const { return cfg_; }
  Index pooled_length() const;

  ad::Parameter temporal;  // filters x kernel
  ad::Parameter spatial;   // spatial_filters x (filters*channels)
  ad::Parameter spatial_bias;  // spatial_filters x 1
  nn::Linear projection;

 private:
  EmbedNetConfig cfg_;
};

/// Stacks windows (each channels x w) into one (N*channels) x w matrix.
Matrix stack_windows(const std::vector<Matrix>& windows);

}  // namespace mindcine::enc
