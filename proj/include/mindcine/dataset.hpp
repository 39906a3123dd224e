#pragma once

// Paired EEG/video-latent data: synthetic generation with a known forward
// model, manifest persistence, and sliding-window segmentation.

#include "mindcine/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mindcine::data {

enum class Modality { EegSemantic, Image, Text, Depth, TextCondition, Perceptual };

std::string to_string(Modality m);

/// A vector living in one modality space.
struct Embedding {
  Modality space = Modality::EegSemantic;
  Vector values;

  Index dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

/// Shape constants shared by every record of a manifest.
struct Dims {
  Index channels = 62;
  Index samples = 400;
  double sample_rate_hz = 200.0;
  Index frames = 6;
  Index window = 150;
  Index joint_dim = 64;
  Index latent_dim = 16;
  Index cond_tokens = 8;
  Index cond_dim = 64;

  bool operator==(const Dims&) const = default;
  double clip_duration_s() const { return static_cast<double>(samples) / sample_rate_hz; }
};

/// One multichannel clip, channels x samples.
struct EegSegment {
  Matrix data;
  double sample_rate_hz = 200.0;
  std::string clip_id;

  Index channels() const { return data.rows(); }
  Index samples() const { return data.cols(); }
  double duration_s() const { return static_cast<double>(samples()) / sample_rate_hz; }
  bool operator==(const EegSegment&) const = default;
};

struct WindowedSegment {
  std::vector<Matrix> windows;  // each channels x window_len
  std::vector<Index> offsets;
  Index window_len = 0;
  Index stride = 0;

  Index count() const { return static_cast<Index>(windows.size()); }
};

struct ClipRecord {
  std::string clip_id;
  int subject = 0;
  EegSegment eeg;
  Matrix gt_latents;  // frames x latent_dim
  Embedding text;
  Embedding image;
  Embedding depth;
  Matrix text_condition;  // cond_tokens x cond_dim
  int concept_label = 0;
  int block_id = 1;

  bool operator==(const ClipRecord&) const = default;
};

enum class Split { Train, Test };

/// Generator knobs. Every field is part of the manifest's identity.
struct SyntheticConfig {
  Dims dims;
  int concepts = 40;
  int blocks = 7;
  int clips_per_block = 200;
  int subjects = 1;
  /// Gaussian noise added to EEG and to the modality embeddings.
  double noise_sigma = 0.0;
  /// Scale of the clip-specific (non-concept) latent trajectory.
  double within_class = 0.6;
  /// Dimensionality of the hidden concept code.
  int code_dim = 48;
  /// Rank of the text-space projection of the concept code (coarse captions).
  int text_rank = 4;
  /// Number of lagged mixing matrices in the EEG forward model.
  int mix_lags = 3;

  bool operator==(const SyntheticConfig&) const = default;
};

nlohmann::json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Dims& d);
Dims dims_from_json(const nlohmann::json& j);

struct DatasetManifest {
  std::vector<ClipRecord> records;
  std::map<int, Split> split;
  std::uint64_t seed = 0;
  Dims dims;
  int concepts = 40;
  int blocks = 7;
  /// Free-form provenance, e.g. which frame produced the image embedding.
  nlohmann::json metadata = nlohmann::json::object();

  std::vector<std::size_t> indices(Split which) const;
  Split split_of(const ClipRecord& r) const;
  const ClipRecord& find(const std::string& clip_id) const;
  bool operator==(const DatasetManifest&) const = default;
};

/// Blocks 1..blocks-1 train, the last block tests.
std::map<int, Split> default_split(int blocks);

/// Checks every invariant of a manifest (shapes, label/block ranges, split
/// coverage, class balance, unique ids); throws ValidationError.
void validate(const DatasetManifest& m);

DatasetManifest generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Cuts `segment` into `frames` windows of length `window` with a uniform stride
/// (T - w) / (t - 1); the last window ends at sample T.
WindowedSegment slice_windows(const EegSegment& segment, Index frames, Index window);

/// Closest window length w' to `window` with (samples - w') divisible by (frames - 1).
Index closest_valid_window(Index samples, Index frames, Index window);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

/// Flattened channels*samples row vector of a segment.
RowVector flatten(const EegSegment& s);

}  // namespace mindcine::data
