#include "mindcine/experiment.hpp"

#include "mindcine/array_io.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#ifndef MINDCINE_REVISION
#define MINDCINE_REVISION "unknown"
#endif

namespace mindcine::exp {

std::string revision() { return MINDCINE_REVISION; }

bool PerceptualSection::operator==(const PerceptualSection& o) const {
  const auto& a = causalseq;
  const auto& b = o.causalseq;
  return temporal_filters == o.temporal_filters && temporal_kernel == o.temporal_kernel &&
         spatial_filters == o.spatial_filters && pool == o.pool && embed_dim == o.embed_dim && a.d_model == b.d_model &&
         a.heads == b.heads && a.layers == b.layers && a.ffn == b.ffn && a.qk_norm == b.qk_norm &&
         a.positional == b.positional && a.decoder == b.decoder && train == o.train;
}

enc::EmbedNetConfig TrainConfig::embednet_config() const {
  enc::EmbedNetConfig e;
  e.channels = data.dims.channels;
  e.window = data.dims.window;
  e.temporal_filters = perceptual.temporal_filters;
  e.temporal_kernel = perceptual.temporal_kernel;
  e.spatial_filters = perceptual.spatial_filters;
  e.pool = perceptual.pool;
  e.embed_dim = perceptual.embed_dim;
  return e;
}

perc::CausalSeqConfig TrainConfig::causalseq_config() const {
  perc::CausalSeqConfig c = perceptual.causalseq;
  c.frames = data.dims.frames;
  c.input_dim = perceptual.embed_dim;
  c.latent_dim = data.dims.latent_dim;
  return c;
}

enc::MlpConfig TrainConfig::mlp_config() const {
  enc::MlpConfig m;
  m.channels = data.dims.channels;
  m.samples = data.dims.samples;
  m.hidden = semantic.hidden;
  m.joint_dim = data.dims.joint_dim;
  return m;
}

// ---- config JSON -----------------------------------------------------------------------------

json to_json(const TrainConfig& c) {
  const auto& st = c.semantic.train;
  const auto& cs = c.perceptual.causalseq;
  const auto& pt = c.perceptual.train;
  json metrics = metrics::to_json(c.metrics);
  metrics.erase("seed");
  return {
      {"seed", c.seed},
      {"deterministic", c.deterministic},
      {"data", data::to_json(c.data)},
      {"semantic",
       {{"encoder", c.semantic.encoder},
        {"hidden", c.semantic.hidden},
        {"adapter_table", c.semantic.adapter_table},
        {"epochs", st.epochs},
        {"batch_size", st.batch_size},
        {"lr", st.lr},
        {"weight_decay", st.weight_decay},
        {"alpha", {st.alpha.alpha1, st.alpha.alpha2, st.alpha.alpha3}},
        {"lambda", st.weights.lambda},
        {"mu", st.weights.mu},
        {"tau_init", st.tau_init},
        {"learn_tau", st.learn_tau},
        {"bidirectional", st.bidirectional},
        {"shared_tau", st.shared_tau},
        {"val_fraction", st.val_fraction}}},
      {"perceptual",
       {{"temporal_filters", c.perceptual.temporal_filters},
        {"temporal_kernel", c.perceptual.temporal_kernel},
        {"spatial_filters", c.perceptual.spatial_filters},
        {"pool", c.perceptual.pool},
        {"embed_dim", c.perceptual.embed_dim},
        {"d_model", cs.d_model},
        {"heads", cs.heads},
        {"layers", cs.layers},
        {"ffn", cs.ffn},
        {"qk_norm", cs.qk_norm},
        {"positional", perc::to_string(cs.positional)},
        {"decoder", perc::to_string(cs.decoder)},
        {"epochs", pt.epochs},
        {"batch_size", pt.batch_size},
        {"lr", pt.lr},
        {"weight_decay", pt.weight_decay},
        {"val_fraction", pt.val_fraction}}},
      {"diffusion", inf::to_json(c.diffusion)},
      {"pipeline",
       {{"use_semantic", c.pipeline.use_semantic},
        {"use_perception", c.pipeline.use_perception},
        {"guidance_scale", c.pipeline.guidance_scale}}},
      {"metrics", metrics},
  };
}

namespace {

/// Reads keys of one JSON object into typed fields and rejects leftovers.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + prefix() + key + "': " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string prefix() const { return path_.empty() ? "" : path_ + "."; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + prefix() + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  Reader top(j, "");
  top.get("seed", c.seed);
  top.get("deterministic", c.deterministic);
  if (const json* d = top.child("data")) {
    Reader r(*d, "data");
    auto& dims = c.data.dims;
    r.get("channels", dims.channels);
    r.get("samples", dims.samples);
    r.get("sample_rate_hz", dims.sample_rate_hz);
    r.get("frames", dims.frames);
    r.get("window", dims.window);
    r.get("joint_dim", dims.joint_dim);
    r.get("latent_dim", dims.latent_dim);
    r.get("cond_tokens", dims.cond_tokens);
    r.get("cond_dim", dims.cond_dim);
    r.get("concepts", c.data.concepts);
    r.get("blocks", c.data.blocks);
    r.get("clips_per_block", c.data.clips_per_block);
    r.get("subjects", c.data.subjects);
    r.get("noise_sigma", c.data.noise_sigma);
    r.get("within_class", c.data.within_class);
    r.get("code_dim", c.data.code_dim);
    r.get("text_rank", c.data.text_rank);
    r.get("mix_lags", c.data.mix_lags);
    r.finish();
  }
  if (const json* s = top.child("semantic")) {
    Reader r(*s, "semantic");
    auto& t = c.semantic.train;
    r.get("encoder", c.semantic.encoder);
    r.get("hidden", c.semantic.hidden);
    r.get("adapter_table", c.semantic.adapter_table);
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("lr", t.lr);
    r.get("weight_decay", t.weight_decay);
    std::vector<double> alpha{t.alpha.alpha1, t.alpha.alpha2, t.alpha.alpha3};
    r.get("alpha", alpha);
    if (alpha.size() != 3) throw ConfigError("config: semantic.alpha needs 3 entries (image, text, depth)");
    t.alpha = {alpha[0], alpha[1], alpha[2]};
    r.get("lambda", t.weights.lambda);
    r.get("mu", t.weights.mu);
    r.get("tau_init", t.tau_init);
    r.get("learn_tau", t.learn_tau);
    r.get("bidirectional", t.bidirectional);
    r.get("shared_tau", t.shared_tau);
    r.get("val_fraction", t.val_fraction);
    r.finish();
  }
  if (const json* p = top.child("perceptual")) {
    Reader r(*p, "perceptual");
    auto& ps = c.perceptual;
    r.get("temporal_filters", ps.temporal_filters);
    r.get("temporal_kernel", ps.temporal_kernel);
    r.get("spatial_filters", ps.spatial_filters);
    r.get("pool", ps.pool);
    r.get("embed_dim", ps.embed_dim);
    r.get("d_model", ps.causalseq.d_model);
    r.get("heads", ps.causalseq.heads);
    r.get("layers", ps.causalseq.layers);
    r.get("ffn", ps.causalseq.ffn);
    r.get("qk_norm", ps.causalseq.qk_norm);
    std::string positional = perc::to_string(ps.causalseq.positional);
    std::string decoder = perc::to_string(ps.causalseq.decoder);
    r.get("positional", positional);
    r.get("decoder", decoder);
    ps.causalseq.positional = perc::positional_from_string(positional);
    ps.causalseq.decoder = perc::decoder_mode_from_string(decoder);
    r.get("epochs", ps.train.epochs);
    r.get("batch_size", ps.train.batch_size);
    r.get("lr", ps.train.lr);
    r.get("weight_decay", ps.train.weight_decay);
    r.get("val_fraction", ps.train.val_fraction);
    r.finish();
  }
  if (const json* d = top.child("diffusion")) {
    Reader r(*d, "diffusion");
    auto& df = c.diffusion;
    r.get("steps", df.steps);
    r.get("beta_start", df.beta_start);
    r.get("beta_end", df.beta_end);
    r.get("hidden", df.hidden);
    r.get("epochs", df.epochs);
    r.get("batch_size", df.batch_size);
    r.get("lr", df.lr);
    r.get("cond_dropout", df.cond_dropout);
    r.get("cond_noise", df.cond_noise);
    r.get("eta", df.eta);
    r.get("clip_x0", df.clip_x0);
    r.finish();
  }
  if (const json* p = top.child("pipeline")) {
    Reader r(*p, "pipeline");
    r.get("use_semantic", c.pipeline.use_semantic);
    r.get("use_perception", c.pipeline.use_perception);
    r.get("guidance_scale", c.pipeline.guidance_scale);
    r.finish();
  }
  if (const json* m = top.child("metrics")) {
    Reader r(*m, "metrics");
    r.get("ways", c.metrics.ways);
    r.get("k", c.metrics.k);
    r.get("repeats", c.metrics.repeats);
    r.get("hue_threshold", c.metrics.hue_threshold);
    r.get("psnr_cap", c.metrics.psnr_cap);
    r.get("ridge_lambda", c.metrics.ridge_lambda);
    r.get("classifier", c.metrics.classifier);
    r.finish();
  }
  top.finish();
  c.metrics.seed = derive_seed(c.seed, "metrics");
  return c;
}

TrainConfig load_config(const fs::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const json::exception& e) {
    throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &j;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->is_object()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not a section");
      node = &(*node)[parts[i]];
      if (node->is_null()) *node = json::object();
    }
    (*node)[parts.back()] = value;
  }
  return j;
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  const auto& d = c.data.dims;
  require(d.channels >= 1 && d.samples >= 2 && d.sample_rate_hz > 0.0, "data dims must be positive");
  require(d.frames >= 1 && d.window >= 1 && d.window <= d.samples, "data.window must lie in [1, samples]");
  if (d.frames > 1 && (d.samples - d.window) % (d.frames - 1) != 0) {
    throw ConfigError("config: data.window " + std::to_string(d.window) + " gives a fractional stride; closest valid is " +
                      std::to_string(data::closest_valid_window(d.samples, d.frames, d.window)));
  }
  require(d.joint_dim >= 1 && d.latent_dim >= 1 && d.cond_tokens >= 1 && d.cond_dim >= 1, "embedding dims must be >= 1");
  require(c.data.concepts >= 2 && c.data.blocks >= 2 && c.data.subjects >= 1, "need >= 2 concepts, >= 2 blocks, >= 1 subject");
  require(c.data.clips_per_block >= 1 && c.data.clips_per_block % c.data.concepts == 0,
          "clips_per_block must be a positive multiple of concepts");
  require(c.data.noise_sigma >= 0.0, "data.noise_sigma must be >= 0");
  require(c.data.within_class >= 0.0 && c.data.code_dim >= 1 && c.data.text_rank >= 1 && c.data.mix_lags >= 1,
          "generator knobs out of range");

  const auto& st = c.semantic.train;
  require(c.semantic.encoder == "mlp" || c.semantic.encoder == "adapter", "semantic.encoder must be mlp or adapter");
  require(c.semantic.encoder != "adapter" || !c.semantic.adapter_table.empty(), "adapter encoder needs adapter_table");
  for (Index h : c.semantic.hidden) require(h >= 1, "semantic.hidden widths must be >= 1");
  require(st.epochs >= 0 && st.batch_size >= 1 && st.lr >= 0.0 && st.weight_decay >= 0.0, "semantic optimizer settings");
  require(st.alpha.alpha1 >= 0.0 && st.alpha.alpha2 >= 0.0 && st.alpha.alpha3 >= 0.0, "semantic.alpha must be >= 0");
  require(st.weights.lambda >= 0.0, "semantic.lambda must be >= 0");
  require(st.weights.mu >= 0.0, "semantic.mu must be >= 0");
  require(st.tau_init > 0.0, "semantic.tau_init must be > 0");
  require(st.val_fraction >= 0.0 && st.val_fraction < 1.0, "semantic.val_fraction must lie in [0, 1)");

  const auto& ps = c.perceptual;
  require(ps.temporal_filters >= 1 && ps.spatial_filters >= 1 && ps.embed_dim >= 1, "perceptual sizes must be >= 1");
  require(ps.temporal_kernel >= 1 && ps.temporal_kernel <= d.window, "perceptual.temporal_kernel must lie in [1, window]");
  require(ps.pool >= 1 && ps.pool <= d.window - ps.temporal_kernel + 1, "perceptual.pool too large for the window");
  require(ps.causalseq.d_model >= 1 && ps.causalseq.heads >= 1 && ps.causalseq.d_model % ps.causalseq.heads == 0,
          "perceptual.d_model must be divisible by heads");
  require(ps.causalseq.layers >= 0 && ps.causalseq.ffn >= 1, "perceptual.layers/ffn out of range");
  require(ps.train.epochs >= 0 && ps.train.batch_size >= 1 && ps.train.lr >= 0.0 && ps.train.weight_decay >= 0.0,
          "perceptual optimizer settings");
  require(ps.train.val_fraction >= 0.0 && ps.train.val_fraction < 1.0, "perceptual.val_fraction must lie in [0, 1)");

  const auto& df = c.diffusion;
  require(df.steps >= 1 && df.steps <= 50, "diffusion.steps must lie in [1, 50]");
  require(df.beta_start > 0.0 && df.beta_end >= df.beta_start, "diffusion betas");
  require(df.hidden >= 1 && df.epochs >= 0 && df.batch_size >= 1 && df.lr >= 0.0, "diffusion optimizer settings");
  require(df.cond_dropout >= 0.0 && df.cond_dropout <= 1.0 && df.cond_noise >= 0.0 && df.eta >= 0.0 && df.clip_x0 >= 0.0,
          "diffusion regularization settings");
  require(std::isfinite(c.pipeline.guidance_scale), "pipeline.guidance_scale must be finite");

  const auto& m = c.metrics;
  require(!m.ways.empty(), "metrics.ways must not be empty");
  for (int n : m.ways) require(n >= 2 && n <= c.data.concepts, "metrics.ways entries must lie in [2, concepts]");
  for (int n : m.ways) require(m.k < n, "metrics.k must be < every N");
  require(m.k >= 1 && m.repeats >= 1, "metrics.k and metrics.repeats must be >= 1");
  require(m.hue_threshold >= 0.0 && m.psnr_cap > 0.0 && m.ridge_lambda > 0.0, "metrics thresholds");
  require(m.classifier == "ridge" || m.classifier == "oracle" || m.classifier == "random",
          "metrics.classifier must be ridge, oracle or random");
}

std::string hash_json(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::string config_hash(const TrainConfig& c) { return hash_json(to_json(c)); }

namespace {

void diff_into(const json& a, const json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      const std::string p = path.empty() ? k : path + "." + k;
      if (!a.contains(k) || !b.contains(k)) {
        out.push_back(p);
      } else {
        diff_into(a.at(k), b.at(k), p, out);
      }
    }
  } else if (a != b) {
    out.push_back(path);
  }
}

}  // namespace

std::vector<std::string> json_diff(const json& a, const json& b) {
  std::vector<std::string> out;
  diff_into(a, b, "", out);
  return out;
}

// ---- checkpoints -----------------------------------------------------------------------------

SemanticModels build_semantic(const TrainConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "semantic-init"));
  SemanticModels m;
  if (c.semantic.encoder == "adapter") {
    m.encoder = std::make_unique<enc::PretrainedAdapter>(enc::load_embedding_table(c.semantic.adapter_table),
                                                         c.data.dims.joint_dim, rng);
  } else {
    m.encoder = std::make_unique<enc::MlpEncoder>(c.mlp_config(), rng);
  }
  m.predictor = std::make_unique<sem::SemanticPredictor>(c.data.dims.joint_dim, c.data.dims.cond_tokens,
                                                         c.data.dims.cond_dim, rng);
  m.temps = sem::make_temperatures(c.semantic.train);
  return m;
}

PerceptualModels build_perceptual(const TrainConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "perceptual-init"));
  PerceptualModels m;
  m.embednet = std::make_unique<enc::EmbedNet>(c.embednet_config(), rng);
  m.causalseq = std::make_unique<perc::CausalSeqModel>(c.causalseq_config(), rng);
  return m;
}

DiffusionModel build_diffusion(const TrainConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "diffusion-init"));
  const auto& d = c.data.dims;
  DiffusionModel m;
  m.diffusion = std::make_unique<inf::ToyDiffusion>(c.diffusion, d.frames, d.latent_dim, d.cond_tokens * d.cond_dim, rng);
  return m;
}

namespace {

constexpr const char* kCheckpointHeader = "checkpoint.json";

nn::ParamList semantic_params(SemanticModels& m) {
  nn::ParamList p = m.encoder->parameters();
  for (auto* q : m.predictor->parameters()) p.push_back(q);
  for (auto* q : m.temps.parameters()) p.push_back(q);
  return p;
}

nn::ParamList perceptual_params(PerceptualModels& m) {
  nn::ParamList p = m.embednet->parameters();
  for (auto* q : m.causalseq->parameters()) p.push_back(q);
  return p;
}

/// The run config with dims taken from the manifest the stage trains on.
TrainConfig with_manifest_dims(const TrainConfig& c, const data::DatasetManifest& m) {
  TrainConfig out = c;
  out.data.dims = m.dims;
  out.data.concepts = m.concepts;
  out.data.blocks = m.blocks;
  return out;
}

json curve_to_json(const std::vector<sem::SemanticEpoch>& curve) {
  json j = json::array();
  for (const auto& e : curve) {
    j.push_back({{"epoch", e.epoch},
                 {"projection", e.projection},
                 {"joint", e.joint},
                 {"alignment", e.alignment},
                 {"total", e.total},
                 {"val_total", e.val_total}});
  }
  return j;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const std::string& kind, const json& header, const nn::ParamList& params) {
  io::Bundle b;
  b.header = header;
  b.header["kind"] = kind;
  b.header["schema"] = "mindcine.checkpoint/1";
  b.header["revision"] = revision();
  json names = json::array();
  for (const auto* p : params) {
    if (b.arrays.count(p->name)) throw Error("checkpoint: duplicate parameter name " + p->name);
    b.arrays[p->name] = p->value;
    names.push_back(p->name);
  }
  b.header["parameters"] = names;
  io::save_bundle(dir, b, io::DType::F64, kCheckpointHeader);
}

json read_checkpoint_header(const fs::path& dir) {
  const fs::path p = dir / kCheckpointHeader;
  if (!fs::exists(p)) throw IngestError("checkpoint: " + p.string() + " not found");
  json h = io::read_json(p);
  if (h.value("schema", "") != "mindcine.checkpoint/1") throw IngestError("checkpoint: unexpected schema in " + dir.string());
  return h;
}

void load_params(const fs::path& dir, const nn::ParamList& params) {
  io::Bundle b = io::load_bundle(dir, kCheckpointHeader);
  for (auto* p : params) {
    auto it = b.arrays.find(p->name);
    if (it == b.arrays.end()) throw IngestError("checkpoint " + dir.string() + ": missing parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw IngestError("checkpoint " + dir.string() + ": parameter " + p->name + " is " + shape_str(it->second) +
                        ", model expects " + shape_str(p->value));
    }
    p->value = it->second;
    p->zero_grad();
  }
}

namespace {

json expect_kind(const fs::path& dir, const std::string& kind) {
  json h = read_checkpoint_header(dir);
  if (h.value("kind", "") != kind) {
    throw ConfigError("checkpoint " + dir.string() + " holds a '" + h.value("kind", "") + "' model, expected '" + kind + "'");
  }
  return h;
}

}  // namespace

SemanticModels load_semantic(const fs::path& dir) {
  json h = expect_kind(dir, "semantic");
  SemanticModels m = build_semantic(config_from_json(h.at("config")), 0);
  load_params(dir, semantic_params(m));
  m.header = h;
  return m;
}

PerceptualModels load_perceptual(const fs::path& dir) {
  json h = expect_kind(dir, "perceptual");
  PerceptualModels m = build_perceptual(config_from_json(h.at("config")), 0);
  load_params(dir, perceptual_params(m));
  m.header = h;
  return m;
}

DiffusionModel load_diffusion(const fs::path& dir) {
  json h = expect_kind(dir, "diffusion");
  DiffusionModel m = build_diffusion(config_from_json(h.at("config")), 0);
  load_params(dir, m.diffusion->parameters());
  m.header = h;
  return m;
}

// ---- stages ----------------------------------------------------------------------------------

data::DatasetManifest run_gen(const TrainConfig& c) { return data::generate_synthetic(c.data, c.seed); }

json run_train_semantic(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out) {
  const TrainConfig cc = with_manifest_dims(c, m);
  SemanticModels models = build_semantic(cc, cc.seed);
  sem::SemanticTrainConfig tc = cc.semantic.train;
  tc.seed = derive_seed(cc.seed, "semantic");
  const auto state = sem::train_semantic(m, *models.encoder, *models.predictor, models.temps, tc);
  json h = {{"config", to_json(cc)},
            {"config_hash", config_hash(cc)},
            {"curve", curve_to_json(state.curve)},
            {"best_epoch", state.best_epoch},
            {"best_val_total", state.best_val_total},
            {"train_seed", tc.seed}};
  save_checkpoint(out, "semantic", h, semantic_params(models));
  return h;
}

json run_train_perceptual(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out) {
  const TrainConfig cc = with_manifest_dims(c, m);
  PerceptualModels models = build_perceptual(cc, cc.seed);
  perc::PerceptualTrainConfig tc = cc.perceptual.train;
  tc.seed = derive_seed(cc.seed, "perceptual");
  const auto state = perc::train_perceptual(m, *models.embednet, *models.causalseq, tc);
  json curve = json::array();
  for (const auto& e : state.curve) curve.push_back({{"epoch", e.epoch}, {"train", e.train_loss}, {"val", e.val_loss}});
  json h = {{"config", to_json(cc)},
            {"config_hash", config_hash(cc)},
            {"curve", curve},
            {"best_epoch", state.best_epoch},
            {"best_val_loss", state.best_val_loss},
            {"train_seed", tc.seed}};
  save_checkpoint(out, "perceptual", h, perceptual_params(models));
  return h;
}

json run_train_diffusion(const data::DatasetManifest& m, const TrainConfig& c, const fs::path& out) {
  TrainConfig cc = with_manifest_dims(c, m);
  DiffusionModel model = build_diffusion(cc, cc.seed);
  const std::uint64_t seed = derive_seed(cc.seed, "diffusion");
  const auto curve = inf::train_diffusion(m, *model.diffusion, seed);
  json hash_src = to_json(cc);
  cc.diffusion = model.diffusion->config();  // echo the effective clip bound
  json jc = json::array();
  for (const auto& e : curve) jc.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
  json h = {{"config", to_json(cc)}, {"config_hash", hash_json(hash_src)}, {"curve", jc}, {"train_seed", seed}};
  save_checkpoint(out, "diffusion", h, model.diffusion->parameters());
  return h;
}

inf::PipelineModels pipeline_of(SemanticModels* s, PerceptualModels* p, const DiffusionModel& d) {
  inf::PipelineModels m;
  m.diffusion = d.diffusion.get();
  m.use_semantic = s != nullptr;
  m.use_perception = p != nullptr;
  if (s) {
    m.encoder = s->encoder.get();
    m.predictor = s->predictor.get();
  }
  if (p) {
    m.embednet = p->embednet.get();
    m.causalseq = p->causalseq.get();
  }
  return m;
}

fs::path cache_root() {
  if (const char* env = std::getenv("MINDCINE_CACHE"); env && *env) return fs::path(env);
  return fs::path("mindcine-cache");
}

namespace {

/// Runs `fn` into a temporary directory unless <root>/<stage>/<hash> is complete,
/// then publishes it atomically. Returns the final directory.
template <class Fn>
fs::path cached_stage(const fs::path& root, const std::string& stage, const std::string& hash, const json& inputs,
                      const std::string& run_hash, ExperimentResult& result, Fn&& fn) {
  const fs::path dir = root / stage / hash;
  result.stage_hashes[stage] = hash;
  if (fs::exists(dir / "_complete")) return dir;
  const fs::path tmp = root / stage / (hash + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fn(tmp);
  io::write_json(tmp / "stage.json", {{"stage", stage},
                                      {"hash", hash},
                                      {"config_hash", run_hash},
                                      {"revision", revision()},
                                      {"inputs", inputs}});
  std::ofstream(tmp / "_complete") << hash << "\n";
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  result.computed.push_back(stage);
  return dir;
}

json section(const TrainConfig& c, const char* name) { return to_json(c).at(name); }

}  // namespace

ExperimentResult run_experiment(const TrainConfig& c, const fs::path& root) {
  validate(c);
  if (c.deterministic) Eigen::setNbThreads(1);
  ExperimentResult result;
  result.config_hash = config_hash(c);

  const json data_in = {{"stage", "data"}, {"data", section(c, "data")}, {"seed", c.seed}};
  const std::string data_h = hash_json(data_in);
  const fs::path data_dir = cached_stage(root, "data", data_h, data_in, result.config_hash, result,
                                         [&](const fs::path& out) { data::save_manifest(run_gen(c), out); });
  const data::DatasetManifest manifest = data::load_manifest(data_dir);

  json sem_h = nullptr, perc_h = nullptr;
  fs::path sem_dir, perc_dir;
  if (c.pipeline.use_semantic) {
    const json in = {{"stage", "semantic"}, {"data", data_h}, {"semantic", section(c, "semantic")}, {"seed", c.seed}};
    sem_h = hash_json(in);
    sem_dir = cached_stage(root, "semantic", sem_h, in, result.config_hash, result,
                           [&](const fs::path& out) { run_train_semantic(manifest, c, out); });
  }
  if (c.pipeline.use_perception) {
    const json in = {{"stage", "perceptual"}, {"data", data_h}, {"perceptual", section(c, "perceptual")}, {"seed", c.seed}};
    perc_h = hash_json(in);
    perc_dir = cached_stage(root, "perceptual", perc_h, in, result.config_hash, result,
                            [&](const fs::path& out) { run_train_perceptual(manifest, c, out); });
  }
  const json diff_in = {{"stage", "diffusion"}, {"data", data_h}, {"diffusion", section(c, "diffusion")}, {"seed", c.seed}};
  const std::string diff_h = hash_json(diff_in);
  const fs::path diff_dir = cached_stage(root, "diffusion", diff_h, diff_in, result.config_hash, result,
                                         [&](const fs::path& out) { run_train_diffusion(manifest, c, out); });

  const json recon_in = {{"stage", "reconstruct"}, {"semantic", sem_h},           {"perceptual", perc_h},
                         {"diffusion", diff_h},    {"pipeline", section(c, "pipeline")}, {"seed", c.seed}};
  const std::string recon_h = hash_json(recon_in);
  const inf::Renderer renderer(manifest.dims.latent_dim);
  const fs::path recon_dir = cached_stage(root, "reconstruct", recon_h, recon_in, result.config_hash, result,
                                          [&](const fs::path& out) {
                                            std::optional<SemanticModels> sm;
                                            std::optional<PerceptualModels> pm;
                                            if (c.pipeline.use_semantic) sm = load_semantic(sem_dir);
                                            if (c.pipeline.use_perception) pm = load_perceptual(perc_dir);
                                            DiffusionModel dm = load_diffusion(diff_dir);
                                            inf::PipelineModels models =
                                                pipeline_of(sm ? &*sm : nullptr, pm ? &*pm : nullptr, dm);
                                            inf::GuidanceConfig g{c.pipeline.guidance_scale, std::nullopt};
                                            json prov = {{"stage_hashes", recon_in}, {"config_hash", result.config_hash}};
                                            const auto batch = inf::batch_reconstruct(
                                                manifest, data::Split::Test, models, g,
                                                derive_seed(c.seed, "reconstruct"), prov);
                                            inf::save_reconstructions(batch, manifest.dims, renderer, out);
                                          });
  const json recon_header = io::read_json(recon_dir / "reconstructions.json");
  for (const auto& [clip, msg] : recon_header.at("failures").items()) result.failed_clips.push_back(clip);

  const json eval_in = {{"stage", "eval"}, {"reconstruct", recon_h}, {"data", data_h}, {"metrics", section(c, "metrics")},
                        {"seed", c.seed}};
  const std::string eval_h = hash_json(eval_in);
  const fs::path eval_dir = cached_stage(root, "eval", eval_h, eval_in, result.config_hash, result,
                                         [&](const fs::path& out) {
                                           const auto recon = inf::load_reconstructions(recon_dir);
                                           const auto cls = metrics::make_classifiers(manifest, renderer, c.metrics);
                                           auto rep = metrics::evaluate_split(recon, manifest, data::Split::Test,
                                                                              cls.pair(), renderer, c.metrics, eval_h);
                                           io::write_json(out / "report.json", metrics::to_json(rep));
                                         });
  result.report = metrics::report_from_json(io::read_json(eval_dir / "report.json"));
  result.report.config_hash = result.config_hash;
  result.report.meta["revision"] = revision();
  result.report.meta["stage_hashes"] = result.stage_hashes;

  result.run_dir = root / "runs" / result.config_hash;
  fs::create_directories(result.run_dir);
  io::write_json(result.run_dir / "config.json", to_json(c));
  io::write_json(result.run_dir / "report.json", metrics::to_json(result.report));
  io::write_json(result.run_dir / "stages.json",
                 {{"config_hash", result.config_hash}, {"revision", revision()}, {"stages", result.stage_hashes}});
  return result;
}

// ---- ablation --------------------------------------------------------------------------------

std::vector<AblationVariant> default_ablation_plan() {
  return {
      {"full", json::object()},
      {"w/o-semantic", {{"pipeline.use_semantic", false}}},
      {"w/o-perception", {{"pipeline.use_perception", false}}},
      {"text", {{"semantic.alpha", {0.0, 1.0, 0.0}}}},
      {"text+depth", {{"semantic.alpha", {0.0, 0.5, 0.5}}}},
      {"text+image", {{"semantic.alpha", {0.5, 0.5, 0.0}}}},
  };
}

namespace {

json apply_delta(json base, const json& delta) {
  std::vector<std::string> overrides;
  for (const auto& [k, v] : delta.items()) overrides.push_back(k + "=" + v.dump());
  return apply_overrides(std::move(base), overrides);
}

}  // namespace

AblationResult run_ablation(const std::vector<AblationVariant>& plan, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, const fs::path& root) {
  validate(base);
  if (plan.empty() || seeds.empty()) throw ConfigError("ablation: plan and seed list must be non-empty");
  AblationResult result;
  result.seeds = seeds;
  result.columns = metrics::metric_columns(base.metrics);
  std::vector<std::vector<TrainConfig>> configs(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    TrainConfig seeded = base;
    seeded.seed = seeds[s];
    const json base_json = to_json(seeded);
    std::map<std::string, std::string> seen;
    for (const auto& v : plan) {
      const json vj = apply_delta(base_json, v.delta);
      TrainConfig vc = config_from_json(vj);
      validate(vc);
      const json resolved = to_json(vc);
      for (const auto& key : json_diff(base_json, resolved)) {
        if (!v.delta.contains(key)) {
          throw ConfigError("ablation: variant '" + v.name + "' changes '" + key + "' outside its documented delta");
        }
      }
      const std::string h = hash_json(resolved);
      if (auto it = seen.find(h); it != seen.end()) {
        throw ConfigError("ablation: variants '" + it->second + "' and '" + v.name + "' resolve to the same config " + h);
      }
      seen[h] = v.name;
      result.hashes[v.name + "/" + std::to_string(seeds[s])] = h;
      configs[s].push_back(vc);
    }
  }
  for (const auto& v : plan) result.variants.push_back(v.name);
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t i = 0; i < plan.size(); ++i) {
      ExperimentResult r = run_experiment(configs[s][i], root);
      result.partial = result.partial || r.partial();
      result.reports[plan[i].name].push_back(std::move(r.report));
    }
  }
  return result;
}

namespace {

metrics::MetricSummary across(const std::vector<double>& v) {
  metrics::MetricSummary s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::vector<TableRow> ablation_rows(const AblationResult& r) {
  std::vector<TableRow> rows;
  for (const auto& name : r.variants) {
    TableRow row{name, {}};
    const auto& reports = r.reports.at(name);
    for (const auto& col : r.columns) {
      std::vector<double> means;
      for (const auto& rep : reports) {
        auto it = rep.summary.find(col);
        if (it != rep.summary.end() && it->second.count > 0) means.push_back(it->second.mean);
      }
      if (!means.empty()) row.values[col] = across(means);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

json to_json(const AblationResult& r) {
  json variants = json::object();
  for (const auto& name : r.variants) {
    json reps = json::array();
    for (const auto& rep : r.reports.at(name)) reps.push_back(metrics::to_json(rep));
    variants[name] = reps;
  }
  json summary = json::object();
  for (const auto& row : ablation_rows(r)) {
    json cells = json::object();
    for (const auto& [col, s] : row.values) cells[col] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
    summary[row.name] = cells;
  }
  return {{"schema_version", "mindcine.ablation/1"},
          {"variants", r.variants},
          {"seeds", r.seeds},
          {"columns", r.columns},
          {"hashes", r.hashes},
          {"summary", summary},
          {"reports", variants},
          {"partial", r.partial}};
}

// ---- rendering -------------------------------------------------------------------------------

std::string render_table(const std::vector<TableRow>& rows, const std::vector<std::string>& columns) {
  std::ostringstream os;
  os << "| Method |";
  for (const auto& c : columns) os << ' ' << c << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& row : rows) {
    os << "| " << row.name << " |";
    for (const auto& c : columns) {
      auto it = row.values.find(c);
      if (it == row.values.end() || it->second.count == 0) {
        os << " n/a |";
        continue;
      }
      char cell[64];
      std::snprintf(cell, sizeof cell, " %.3f \xC2\xB1 %.3f |", it->second.mean, it->second.std);
      os << cell;
    }
    os << '\n';
  }
  return os.str();
}

std::string render_report(const metrics::MetricsReport& report, const std::string& name) {
  if (report.schema_version != metrics::kReportSchema) {
    throw ValidationError("report: schema version '" + report.schema_version + "' is not " + metrics::kReportSchema);
  }
  std::vector<TableRow> rows;
  if (!report.rows.empty()) rows.push_back({name, report.summary});
  return render_table(rows, report.columns);
}

std::string render_csv(const metrics::MetricsReport& report) {
  std::ostringstream os;
  os << "clip_id,subject,label";
  for (const auto& c : report.columns) os << ',' << c;
  os << '\n';
  os << std::setprecision(17);
  for (const auto& row : report.rows) {
    os << row.clip_id << ',' << row.subject << ',' << row.label;
    for (const auto& c : report.columns) {
      os << ',';
      auto it = row.values.find(c);
      if (it != row.values.end()) os << it->second;
    }
    os << '\n';
  }
  return os.str();
}

std::string render_ablation(const AblationResult& r) { return render_table(ablation_rows(r), r.columns); }

}  // namespace mindcine::exp
