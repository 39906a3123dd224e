#include "mindcine/dataset.hpp"

#include "mindcine/array_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

namespace mindcine::data {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::EegSemantic: return "eeg_semantic";
    case Modality::Image: return "image";
    case Modality::Text: return "text";
    case Modality::Depth: return "depth";
    case Modality::TextCondition: return "text_condition";
    case Modality::Perceptual: return "perceptual";
  }
  return "unknown";
}

json to_json(const Dims& d) {
  return {{"channels", d.channels},     {"samples", d.samples},     {"sample_rate_hz", d.sample_rate_hz},
          {"frames", d.frames},         {"window", d.window},       {"joint_dim", d.joint_dim},
          {"latent_dim", d.latent_dim}, {"cond_tokens", d.cond_tokens}, {"cond_dim", d.cond_dim}};
}

Dims dims_from_json(const json& j) {
  Dims d;
  d.channels = j.at("channels").get<Index>();
  d.samples = j.at("samples").get<Index>();
  d.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  d.frames = j.at("frames").get<Index>();
  d.window = j.at("window").get<Index>();
  d.joint_dim = j.at("joint_dim").get<Index>();
  d.latent_dim = j.at("latent_dim").get<Index>();
  d.cond_tokens = j.at("cond_tokens").get<Index>();
  d.cond_dim = j.at("cond_dim").get<Index>();
  return d;
}

json to_json(const SyntheticConfig& c) {
  json j = to_json(c.dims);
  j["concepts"] = c.concepts;
  j["blocks"] = c.blocks;
  j["clips_per_block"] = c.clips_per_block;
  j["subjects"] = c.subjects;
  j["noise_sigma"] = c.noise_sigma;
  j["within_class"] = c.within_class;
  j["code_dim"] = c.code_dim;
  j["text_rank"] = c.text_rank;
  j["mix_lags"] = c.mix_lags;
  return j;
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  c.dims = dims_from_json(j);
  c.concepts = j.at("concepts").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.clips_per_block = j.at("clips_per_block").get<int>();
  c.subjects = j.at("subjects").get<int>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.within_class = j.at("within_class").get<double>();
  c.code_dim = j.at("code_dim").get<int>();
  c.text_rank = j.at("text_rank").get<int>();
  c.mix_lags = j.at("mix_lags").get<int>();
  return c;
}

std::vector<std::size_t> DatasetManifest::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (split_of(records[i]) == which) out.push_back(i);
  }
  return out;
}

Split DatasetManifest::split_of(const ClipRecord& r) const {
  auto it = split.find(r.block_id);
  if (it == split.end()) throw ValidationError("block " + std::to_string(r.block_id) + " has no split assignment");
  return it->second;
}

const ClipRecord& DatasetManifest::find(const std::string& clip_id) const {
  for (const auto& r : records) {
    if (r.clip_id == clip_id) return r;
  }
  throw LookupError("clip '" + clip_id + "' not in manifest");
}

std::map<int, Split> default_split(int blocks) {
  std::map<int, Split> s;
  for (int b = 1; b <= blocks; ++b) s[b] = b == blocks ? Split::Test : Split::Train;
  return s;
}

namespace {

void check_shape(const ClipRecord& r, const char* what, Index rows, Index cols, Index want_rows, Index want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ValidationError("record " + r.clip_id + ": " + what + " is " + shape_str(rows, cols) + ", expected " +
                          shape_str(want_rows, want_cols));
  }
}

}  // namespace

void validate(const DatasetManifest& m) {
  const Dims& d = m.dims;
  if (d.channels < 1 || d.samples < 2) throw ValidationError("dims: need channels >= 1 and samples >= 2");
  if (d.frames < 1 || d.window < 1 || d.window > d.samples) throw ValidationError("dims: invalid frames/window");
  if (m.concepts < 1 || m.blocks < 1) throw ValidationError("manifest: concepts and blocks must be positive");
  for (int b = 1; b <= m.blocks; ++b) {
    if (!m.split.count(b)) throw ValidationError("split: block " + std::to_string(b) + " unassigned");
  }
  for (const auto& [b, s] : m.split) {
    if (b < 1 || b > m.blocks) throw ValidationError("split: block " + std::to_string(b) + " out of range");
  }
  std::set<std::string> ids;
  std::map<std::pair<Split, int>, int> per_concept;
  for (const auto& r : m.records) {
    if (!ids.insert(r.clip_id).second) throw ValidationError("duplicate clip_id " + r.clip_id);
    if (r.block_id < 1 || r.block_id > m.blocks) {
      throw ValidationError("record " + r.clip_id + ": block_id " + std::to_string(r.block_id) + " outside [1, " +
                            std::to_string(m.blocks) + "]");
    }
    if (r.concept_label < 0 || r.concept_label >= m.concepts) {
      throw ValidationError("record " + r.clip_id + ": concept_label " + std::to_string(r.concept_label) +
                            " outside [0, " + std::to_string(m.concepts) + ")");
    }
    check_shape(r, "eeg", r.eeg.data.rows(), r.eeg.data.cols(), d.channels, d.samples);
    check_shape(r, "gt_latents", r.gt_latents.rows(), r.gt_latents.cols(), d.frames, d.latent_dim);
    check_shape(r, "text", r.text.dim(), 1, d.joint_dim, 1);
    check_shape(r, "image", r.image.dim(), 1, d.joint_dim, 1);
    check_shape(r, "depth", r.depth.dim(), 1, d.joint_dim, 1);
    check_shape(r, "text_condition", r.text_condition.rows(), r.text_condition.cols(), d.cond_tokens, d.cond_dim);
    if (std::abs(r.eeg.duration_s() - d.clip_duration_s()) > 1e-9) {
      throw ValidationError("record " + r.clip_id + ": duration mismatch");
    }
    if (!r.eeg.data.allFinite() || !r.gt_latents.allFinite()) {
      throw ValidationError("record " + r.clip_id + ": non-finite values");
    }
    per_concept[{m.split_of(r), r.concept_label}]++;
  }
  for (Split s : {Split::Train, Split::Test}) {
    int expected = -1;
    for (int k = 0; k < m.concepts; ++k) {
      auto it = per_concept.find({s, k});
      const int n = it == per_concept.end() ? 0 : it->second;
      if (expected < 0) expected = n;
      if (n != expected) {
        throw ValidationError(std::string("class imbalance in ") + (s == Split::Train ? "train" : "test") +
                              " split: concept " + std::to_string(k) + " has " + std::to_string(n) + " clips, concept 0 has " +
                              std::to_string(expected));
      }
    }
  }
}

// ---- synthetic generation --------------------------------------------------------------------

namespace {

Matrix gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Vector normalized(const Vector& v) {
  const double n = v.norm();
  return n > 0 ? Vector(v / n) : v;
}

/// Hidden state of the simulated world: concept codes, projections into every
/// target space, and one EEG forward model per subject.
struct World {
  Matrix codes;                   // concepts x code_dim
  Matrix traj0, traj1;            // latent_dim x code_dim
  Matrix proj_image, proj_text, proj_depth;  // joint_dim x code_dim
  Matrix proj_cond;               // (tokens*cond_dim) x code_dim
  std::vector<std::vector<Matrix>> mixing;  // subject -> lag -> channels x latent_dim
};

World build_world(const SyntheticConfig& c, std::uint64_t seed) {
  const Dims& d = c.dims;
  World w;
  std::mt19937_64 rng(derive_seed(seed, "world"));
  const double code_scale = 1.0 / std::sqrt(static_cast<double>(c.code_dim));
  w.codes = gaussian(c.concepts, c.code_dim, 1.0, rng);
  w.traj0 = gaussian(d.latent_dim, c.code_dim, code_scale, rng);
  w.traj1 = gaussian(d.latent_dim, c.code_dim, code_scale, rng);
  w.proj_image = gaussian(d.joint_dim, c.code_dim, code_scale, rng);
  w.proj_depth = gaussian(d.joint_dim, c.code_dim, code_scale, rng);
  const int rank = std::clamp(c.text_rank, 1, c.code_dim);
  w.proj_text = gaussian(d.joint_dim, rank, 1.0 / std::sqrt(static_cast<double>(rank)), rng) *
                gaussian(rank, c.code_dim, code_scale, rng);
  w.proj_cond = gaussian(d.cond_tokens * d.cond_dim, c.code_dim, code_scale, rng);
  for (int s = 0; s < c.subjects; ++s) {
    std::mt19937_64 srng(derive_seed(seed, "subject:" + std::to_string(s)));
    std::vector<Matrix> lags;
    const double mix_scale = 1.0 / std::sqrt(static_cast<double>(d.latent_dim * c.mix_lags));
    for (int l = 0; l < c.mix_lags; ++l) lags.push_back(gaussian(d.channels, d.latent_dim, mix_scale, srng));
    w.mixing.push_back(std::move(lags));
  }
  return w;
}

double frame_phase(Index f, Index frames) {
  return frames > 1 ? 0.5 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(frames - 1) : 0.0;
}

/// Latent trajectory of one stimulus: concept prototype plus a smooth clip-specific path.
Matrix stimulus_latents(const SyntheticConfig& c, const World& w, int concept_id, std::mt19937_64& rng) {
  const Dims& d = c.dims;
  const Vector q = w.codes.row(concept_id).transpose();
  const Vector u = gaussian(d.latent_dim, 1, 1.0, rng).col(0);
  const Vector u2 = gaussian(d.latent_dim, 1, 1.0, rng).col(0);
  Matrix z(d.frames, d.latent_dim);
  for (Index f = 0; f < d.frames; ++f) {
    const double th = frame_phase(f, d.frames);
    const Vector proto = std::cos(th) * (w.traj0 * q) + std::sin(th) * (w.traj1 * q);
    // Clip-specific path on the second harmonic, linearly separable from the prototype.
    z.row(f) = (proto + c.within_class * (std::cos(2.0 * th) * u + std::sin(2.0 * th) * u2)).transpose();
  }
  round_to_f32(z);
  return z;
}

/// Piecewise-linear upsampling of frame latents to the EEG sample grid: latent_dim x samples.
Matrix latent_sources(const Matrix& z, Index samples) {
  const Index frames = z.rows();
  Matrix s(z.cols(), samples);
  for (Index tau = 0; tau < samples; ++tau) {
    double pos = (static_cast<double>(tau) + 0.5) * static_cast<double>(frames) / static_cast<double>(samples) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(frames - 1));
    const auto lo = static_cast<Index>(std::floor(pos));
    const Index hi = std::min(lo + 1, frames - 1);
    const double a = pos - static_cast<double>(lo);
    s.col(tau) = ((1.0 - a) * z.row(lo) + a * z.row(hi)).transpose();
  }
  return s;
}

Matrix forward_eeg(const Matrix& sources, const std::vector<Matrix>& lags) {
  const Index samples = sources.cols();
  Matrix x = Matrix::Zero(lags.front().rows(), samples);
  for (std::size_t l = 0; l < lags.size(); ++l) {
    const auto lag = static_cast<Index>(l);
    if (lag >= samples) break;
    x.rightCols(samples - lag) += lags[l] * sources.leftCols(samples - lag);
  }
  return x;
}

std::string make_clip_id(int subject, int block, int concept_id, int rep) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%02d_b%d_c%02d_r%02d", subject, block, concept_id, rep);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticConfig& c, std::uint64_t seed) {
  const Dims& d = c.dims;
  if (c.noise_sigma < 0.0 || !std::isfinite(c.noise_sigma)) {
    throw ConfigError("noise_sigma must be finite and >= 0, got " + std::to_string(c.noise_sigma));
  }
  if (c.concepts < 1 || c.blocks < 1 || c.subjects < 1 || c.clips_per_block < 1) {
    throw ConfigError("concepts, blocks, subjects and clips_per_block must be positive");
  }
  if (c.clips_per_block % c.concepts != 0) {
    throw ConfigError("clips_per_block (" + std::to_string(c.clips_per_block) + ") is not divisible by concepts (" +
                      std::to_string(c.concepts) + "); classes would be unbalanced");
  }
  if (c.code_dim < 1 || c.mix_lags < 1 || c.within_class < 0.0) throw ConfigError("invalid generator knobs");
  if (d.channels < 1 || d.samples < 2 || d.frames < 1 || d.latent_dim < 1 || d.joint_dim < 1) {
    throw ConfigError("invalid dims");
  }
  // Fail early on an unusable window geometry.
  (void)closest_valid_window(d.samples, d.frames, d.window);
  if (d.frames > 1 && (d.samples - d.window) % (d.frames - 1) != 0) {
    throw ConfigError("window " + std::to_string(d.window) + " does not tile " + std::to_string(d.samples) +
                      " samples into " + std::to_string(d.frames) + " frames; closest valid window is " +
                      std::to_string(closest_valid_window(d.samples, d.frames, d.window)));
  }

  const World w = build_world(c, seed);
  const int reps = c.clips_per_block / c.concepts;

  DatasetManifest m;
  m.seed = seed;
  m.dims = d;
  m.concepts = c.concepts;
  m.blocks = c.blocks;
  m.split = default_split(c.blocks);
  m.metadata = {{"generator", "synthetic-linear-convolutional"},
                {"image_embedding_source", "concept prototype projection"},
                {"config", to_json(c)}};

  struct Slot {
    int subject, block, concept_id, rep;
  };
  std::vector<Slot> slots;
  for (int s = 0; s < c.subjects; ++s)
    for (int b = 1; b <= c.blocks; ++b)
      for (int k = 0; k < c.concepts; ++k)
        for (int r = 0; r < reps; ++r) slots.push_back({s, b, k, r});

  m.records.resize(slots.size());
  // Every clip draws from RNG streams keyed by its own id, so the loop order
  // (and any parallel partitioning) cannot change the result.
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot& sl = slots[i];
    ClipRecord& r = m.records[i];
    r.clip_id = make_clip_id(sl.subject, sl.block, sl.concept_id, sl.rep);
    r.subject = sl.subject;
    r.block_id = sl.block;
    r.concept_label = sl.concept_id;

    // The stimulus (video) is shared by all subjects.
    std::mt19937_64 stim_rng(derive_seed(seed, "stimulus:" + make_clip_id(0, sl.block, sl.concept_id, sl.rep)));
    r.gt_latents = stimulus_latents(c, w, sl.concept_id, stim_rng);

    std::mt19937_64 rng(derive_seed(seed, "clip:" + r.clip_id));
    Matrix eeg = forward_eeg(latent_sources(r.gt_latents, d.samples), w.mixing[static_cast<size_t>(sl.subject)]);
    if (c.noise_sigma > 0.0) eeg += gaussian(eeg.rows(), eeg.cols(), c.noise_sigma, rng);
    round_to_f32(eeg);
    r.eeg = EegSegment{std::move(eeg), d.sample_rate_hz, r.clip_id};

    const Vector q = w.codes.row(sl.concept_id).transpose();
    auto embed = [&](const Matrix& proj, Modality space) {
      Vector v = proj * q;
      if (c.noise_sigma > 0.0) v += gaussian(v.size(), 1, c.noise_sigma, rng).col(0);
      Matrix tmp = normalized(v);
      round_to_f32(tmp);
      return Embedding{space, tmp.col(0)};
    };
    r.image = embed(w.proj_image, Modality::Image);
    r.text = embed(w.proj_text, Modality::Text);
    r.depth = embed(w.proj_depth, Modality::Depth);

    Vector cond = normalized(w.proj_cond * q);
    Matrix cm = Eigen::Map<const Matrix>(cond.data(), d.cond_tokens, d.cond_dim);
    round_to_f32(cm);
    r.text_condition = cm;
  }
  validate(m);
  return m;
}

// ---- windowing ---------------------------------------------------------------------------------

Index closest_valid_window(Index samples, Index frames, Index window) {
  if (frames <= 1) return samples;
  Index best = -1;
  for (Index w = 1; w <= samples; ++w) {
    if ((samples - w) % (frames - 1) != 0) continue;
    if (best < 0 || std::abs(w - window) < std::abs(best - window)) best = w;
  }
  return best;
}

WindowedSegment slice_windows(const EegSegment& segment, Index frames, Index window) {
  const Index samples = segment.samples();
  if (frames < 1) throw ConfigError("slice_windows: frame count must be >= 1");
  if (window < 1 || window > samples) {
    throw ShapeError("slice_windows: window " + std::to_string(window) + " exceeds segment length " +
                     std::to_string(samples));
  }
  WindowedSegment out;
  out.window_len = window;
  if (frames == 1) {
    out.stride = 0;
  } else {
    if ((samples - window) % (frames - 1) != 0) {
      throw ConfigError("slice_windows: (T - w) = " + std::to_string(samples - window) + " is not divisible by (t - 1) = " +
                        std::to_string(frames - 1) + "; closest valid window is " +
                        std::to_string(closest_valid_window(samples, frames, window)));
    }
    out.stride = (samples - window) / (frames - 1);
  }
  for (Index i = 0; i < frames; ++i) {
    const Index start = i * out.stride;
    out.offsets.push_back(start);
    out.windows.emplace_back(segment.data.middleCols(start, window));
  }
  return out;
}

RowVector flatten(const EegSegment& s) {
  return Eigen::Map<const RowVector>(s.data.data(), s.data.size());
}

// ---- persistence -------------------------------------------------------------------------------

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kSchema = "mindcine.manifest/1";

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw IngestError("unknown split '" + s + "'");
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  validate(m);
  fs::create_directories(dir / "arrays");
  json j;
  j["schema"] = kSchema;
  j["seed"] = m.seed;
  j["dims"] = to_json(m.dims);
  j["concepts"] = m.concepts;
  j["blocks"] = m.blocks;
  json split = json::object();
  for (const auto& [b, s] : m.split) split[std::to_string(b)] = split_name(s);
  j["split"] = split;
  j["metadata"] = m.metadata;
  json recs = json::array();
  for (const auto& r : m.records) {
    const std::string base = "arrays/" + r.clip_id;
    auto put = [&](const std::string& name, const Matrix& a) {
      const std::string file = base + "." + name + ".f32";
      io::write_array(dir / file, a, io::DType::F32);
      return file;
    };
    json rec;
    rec["clip_id"] = r.clip_id;
    rec["subject"] = r.subject;
    rec["concept_id"] = r.concept_label;
    rec["block"] = r.block_id;
    rec["arrays"] = {{"eeg", put("eeg", r.eeg.data)},
                     {"latents", put("latents", r.gt_latents)},
                     {"text", put("text", r.text.values.transpose())},
                     {"image", put("image", r.image.values.transpose())},
                     {"depth", put("depth", r.depth.values.transpose())},
                     {"text_condition", put("cond", r.text_condition)}};
    recs.push_back(rec);
  }
  j["records"] = recs;
  io::write_json(dir / kManifestFile, j);
}

DatasetManifest load_manifest(const fs::path& dir) {
  const json j = io::read_json(dir / kManifestFile);
  if (j.value("schema", "") != kSchema) throw IngestError("manifest: unsupported schema '" + j.value("schema", "") + "'");
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dims = dims_from_json(j.at("dims"));
    m.concepts = j.at("concepts").get<int>();
    m.blocks = j.at("blocks").get<int>();
    for (const auto& [k, v] : j.at("split").items()) m.split[std::stoi(k)] = parse_split(v.get<std::string>());
    m.metadata = j.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw IngestError(std::string("manifest header: ") + e.what());
  }
  const Dims& d = m.dims;
  for (const auto& rj : j.at("records")) {
    ClipRecord r;
    r.clip_id = rj.at("clip_id").get<std::string>();
    r.subject = rj.value("subject", 0);
    r.concept_label = rj.at("concept_id").get<int>();
    r.block_id = rj.at("block").get<int>();
    const json& a = rj.at("arrays");
    const std::string what = "record " + r.clip_id;
    auto get = [&](const char* key, Index rows, Index cols) {
      return io::read_array(dir / a.at(key).get<std::string>(), rows, cols, io::DType::F32, what + " (" + key + ")");
    };
    r.eeg = EegSegment{get("eeg", d.channels, d.samples), d.sample_rate_hz, r.clip_id};
    r.gt_latents = get("latents", d.frames, d.latent_dim);
    r.text = Embedding{Modality::Text, get("text", 1, d.joint_dim).row(0).transpose()};
    r.image = Embedding{Modality::Image, get("image", 1, d.joint_dim).row(0).transpose()};
    r.depth = Embedding{Modality::Depth, get("depth", 1, d.joint_dim).row(0).transpose()};
    r.text_condition = get("text_condition", d.cond_tokens, d.cond_dim);
    m.records.push_back(std::move(r));
  }
  validate(m);
  return m;
}

}  // namespace mindcine::data
