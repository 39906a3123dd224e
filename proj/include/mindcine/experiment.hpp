#pragma once

// Experiment orchestration: the resolved run configuration and its hash,
// checkpoint containers, cached pipeline stages, the ablation matrix, and
// report rendering.

#include "mindcine/dataset.hpp"
#include "mindcine/encoders.hpp"
#include "mindcine/inference.hpp"
#include "mindcine/metrics.hpp"
#include "mindcine/perceptual.hpp"
#include "mindcine/semantic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mindcine::exp {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Build revision baked in at configure time ("unknown" outside a git checkout).
std::string revision();

struct SemanticSection {
  std::string encoder = "mlp";  // mlp | adapter
  std::vector<Index> hidden{256, 256};
  std::string adapter_table;    // directory of an embedding table (adapter only)
  sem::SemanticTrainConfig train;

  bool operator==(const SemanticSection&) const = default;
};

struct PerceptualSection {
  Index temporal_filters = 4;
  Index temporal_kernel = 25;
  Index spatial_filters = 8;
  Index pool = 25;
  Index embed_dim = 64;
  perc::CausalSeqConfig causalseq;  // frames/input_dim/latent_dim follow the data dims
  perc::PerceptualTrainConfig train;

  bool operator==(const PerceptualSection&) const;
};

struct PipelineSection {
  bool use_semantic = true;
  bool use_perception = true;
  double guidance_scale = 7.5;

  bool operator==(const PipelineSection&) const = default;
};

/// Every knob of one run. Stage seeds are derived from `seed`.
struct TrainConfig {
  data::SyntheticConfig data;
  SemanticSection semantic;
  PerceptualSection perceptual;
  inf::DiffusionConfig diffusion;
  PipelineSection pipeline;
  metrics::EvalConfig metrics;
  std::uint64_t seed = 0;
  bool deterministic = true;

  enc::EmbedNetConfig embednet_config() const;
  perc::CausalSeqConfig causalseq_config() const;
  enc::MlpConfig mlp_config() const;
};

/// Fully resolved JSON form (every key present).
json to_json(const TrainConfig& c);
/// Parses a (possibly partial) config; missing keys keep their defaults,
/// unknown keys throw ConfigError naming the key path.
TrainConfig config_from_json(const json& j);
TrainConfig load_config(const fs::path& path);
/// Applies "a.b.c=value" overrides; value is parsed as JSON, else taken as a string.
json apply_overrides(json j, const std::vector<std::string>& overrides);
/// Range and consistency checks; throws ConfigError.
void validate(const TrainConfig& c);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string hash_json(const json& j);
std::string config_hash(const TrainConfig& c);

/// Dotted key paths whose values differ between two JSON documents.
std::vector<std::string> json_diff(const json& a, const json& b);

// ---- checkpoints -----------------------------------------------------------------------------

struct SemanticModels {
  std::unique_ptr<enc::SemanticEncoder> encoder;
  std::unique_ptr<sem::SemanticPredictor> predictor;
  sem::TemperatureSet temps;
  json header;
};

struct PerceptualModels {
  std::unique_ptr<enc::EmbedNet> embednet;
  std::unique_ptr<perc::CausalSeqModel> causalseq;
  json header;
};

struct DiffusionModel {
  std::unique_ptr<inf::ToyDiffusion> diffusion;
  json header;
};

SemanticModels build_semantic(const TrainConfig& c, std::uint64_t seed);
PerceptualModels build_perceptual(const TrainConfig& c, std::uint64_t seed);
DiffusionModel build_diffusion(const TrainConfig& c, std::uint64_t seed);

/// Header echoes the config and carries stage metadata; arrays are the
/// parameters by name, stored as 64-bit floats.
void save_checkpoint(const fs::path& dir, const std::string& kind, const json& header, const nn::ParamList& params);
json read_checkpoint_header(const fs::path& dir);
/// Restores parameters by name; throws IngestError on a missing or misshapen array.
void load_params(const fs::path& dir, const nn::ParamList& params);

SemanticModels load_semantic(const fs::path& dir);
PerceptualModels load_perceptual(const fs::path& dir);
DiffusionModel load_diffusion(const fs::path& dir);

// ---- stages ----------------------------------------------------------------------------------

data::DatasetManifest run_gen(const TrainConfig& c);
/// Each trains from scratch and writes a checkpoint to `out`.
json run_train_semantic(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out);
json run_train_perceptual(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out);
json run_train_diffusion(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out);

/// Pipeline view over loaded checkpoints; bypassed branches may be null.
inf::PipelineModels pipeline_of(SemanticModels* s, PerceptualModels* p, const DiffusionModel& d);

struct ExperimentResult {
  fs::path run_dir;
  std::string config_hash;
  metrics::MetricsReport report;
  std::map<std::string, std::string> stage_hashes;
  std::vector<std::string> computed;  // stages run (not served from cache)
  std::vector<std::string> failed_clips;
  bool partial() const { return !failed_clips.empty(); }
};

/// Root for cached artifacts: $MINDCINE_CACHE, else ./mindcine-cache.
fs::path cache_root();

/// gen -> train-semantic -> train-perceptual -> train-diffusion -> reconstruct
/// -> eval, each cached under <root>/<stage>/<input hash>.
ExperimentResult run_experiment(const TrainConfig& c, const fs::path& root);

struct AblationVariant {
  std::string name;
  json delta;  // overrides applied to the base config
};

/// full, w/o-semantic, w/o-perception, text, text+depth, text+image.
std::vector<AblationVariant> default_ablation_plan();

struct AblationResult {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> columns;
  /// variant -> per-seed reports (same order as seeds)
  std::map<std::string, std::vector<metrics::MetricsReport>> reports;
  std::map<std::string, std::string> hashes;  // "variant/seed" -> config hash
  bool partial = false;
};

/// Runs every variant under every seed; throws ConfigError if two variants
/// resolve to the same config or a variant changes keys outside its delta.
AblationResult run_ablation(const std::vector<AblationVariant>& plan, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, const fs::path& root);

json to_json(const AblationResult& r);

// ---- rendering -------------------------------------------------------------------------------

struct TableRow {
  std::string name;
  std::map<std::string, metrics::MetricSummary> values;
};

/// Markdown table, one row per entry, "mean ± std" cells with 3 decimals.
std::string render_table(const std::vector<TableRow>& rows, const std::vector<std::string>& columns);
std::string render_report(const metrics::MetricsReport& report, const std::string& name = "mindcine");
/// Per-clip rows as CSV (clip_id, subject, label, then every column).
std::string render_csv(const metrics::MetricsReport& report);
/// Per-variant table: mean ± std across seeds of each seed's summary mean.
std::string render_ablation(const AblationResult& r);

}  // namespace mindcine::exp
