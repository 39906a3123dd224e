#include "mindcine/inference.hpp"

#include "mindcine/array_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mindcine::inf {

using json = nlohmann::json;

Condition zero_condition(Index semantic_dim, Index frames, Index latent_dim) {
  return {Matrix::Zero(1, semantic_dim), Matrix::Zero(frames, latent_dim)};
}

Matrix guided_score(const ScoreEstimator& est, const Matrix& z_t, const Condition& c, const Condition& c_bar, double s,
                    int step) {
  if (c.semantic.rows() != c_bar.semantic.rows() || c.semantic.cols() != c_bar.semantic.cols() ||
      c.perceptual.rows() != c_bar.perceptual.rows() || c.perceptual.cols() != c_bar.perceptual.cols()) {
    throw ShapeError("guided_score: condition and negative condition differ in shape");
  }
  const Matrix e_neg = est.estimate(z_t, c_bar, step);
  const Matrix e_pos = est.estimate(z_t, c, step);
  if (e_neg.rows() != z_t.rows() || e_neg.cols() != z_t.cols() || e_pos.rows() != z_t.rows() ||
      e_pos.cols() != z_t.cols()) {
    throw ShapeError("guided_score: estimator output does not match z_t " + shape_str(z_t));
  }
  return e_neg + s * (e_pos - e_neg);
}

json to_json(const DiffusionConfig& c) {
  return {{"steps", c.steps},         {"beta_start", c.beta_start}, {"beta_end", c.beta_end},
          {"hidden", c.hidden},       {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},               {"cond_dropout", c.cond_dropout}, {"cond_noise", c.cond_noise},
          {"eta", c.eta},             {"clip_x0", c.clip_x0}};
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion: steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end >= beta_start)) throw ConfigError("diffusion: need 0 < beta_start <= beta_end");
  // Betas are given for a 1000-step chain; shorter chains rescale them.
  const double factor = 1000.0 / static_cast<double>(steps);
  NoiseSchedule s;
  double ab = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double beta = std::min(0.999, factor * (beta_start + frac * (beta_end - beta_start)));
    ab *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alpha_bars.push_back(ab);
  }
  return s;
}

// ---- toy diffusion ---------------------------------------------------------------------------

namespace {

constexpr Index kStepFeatures = 16;
constexpr Index kFrameFeatures = 8;

void sinusoid(double pos, Index dim, double max_period, Eigen::Ref<RowVector> out) {
  for (Index i = 0; i < dim / 2; ++i) {
    const double rate = std::pow(max_period, -static_cast<double>(i) / static_cast<double>(dim / 2));
    out(2 * i) = std::sin(pos * rate);
    out(2 * i + 1) = std::cos(pos * rate);
  }
}

}  // namespace

ToyDiffusion::ToyDiffusion(const DiffusionConfig& cfg, Index frames, Index latent_dim, Index semantic_dim,
                           std::mt19937_64& rng)
    : cfg_(cfg),
      schedule_(NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)),
      frames_(frames),
      latent_dim_(latent_dim),
      semantic_dim_(semantic_dim) {
  if (frames < 1 || latent_dim < 1 || semantic_dim < 1 || cfg.hidden < 1) throw ConfigError("diffusion: invalid dims");
  if (cfg.steps > 50) throw ConfigError("diffusion: at most 50 steps");
  if (cfg.eta < 0.0 || cfg.cond_dropout < 0.0 || cfg.cond_dropout > 1.0 || cfg.cond_noise < 0.0 || cfg.clip_x0 < 0.0) {
    throw ConfigError("diffusion: eta, cond_noise, clip_x0 must be >= 0 and cond_dropout in [0, 1]");
  }
  const Index in = 2 * latent_dim + semantic_dim + kStepFeatures + kFrameFeatures;
  layer1_ = nn::Linear("diffusion.layer1", in, cfg.hidden, rng);
  layer2_ = nn::Linear("diffusion.layer2", cfg.hidden, latent_dim, rng, 0.1);
}

Matrix ToyDiffusion::features(const Matrix& z_t, const std::vector<const Condition*>& c,
                              const std::vector<int>& steps) const {
  const auto batch = static_cast<Index>(c.size());
  if (z_t.rows() != batch * frames_ || z_t.cols() != latent_dim_) {
    throw ShapeError("diffusion: z_t " + shape_str(z_t) + ", expected " + shape_str(batch * frames_, latent_dim_));
  }
  if (steps.size() != c.size()) throw ShapeError("diffusion: one step per clip required");
  const Index in = layer1_.in_features();
  Matrix x(batch * frames_, in);
  for (Index b = 0; b < batch; ++b) {
    const Condition& cb = *c[static_cast<size_t>(b)];
    if (cb.semantic.rows() != 1 || cb.semantic.cols() != semantic_dim_ || cb.perceptual.rows() != frames_ ||
        cb.perceptual.cols() != latent_dim_) {
      throw ShapeError("diffusion: condition shapes " + shape_str(cb.semantic) + " / " + shape_str(cb.perceptual) +
                       " do not match the model");
    }
    const int step = steps[static_cast<size_t>(b)];
    if (step < 0 || step >= schedule_.steps()) throw ShapeError("diffusion: step out of range");
    for (Index f = 0; f < frames_; ++f) {
      const Index r = b * frames_ + f;
      Index col = 0;
      x.row(r).segment(col, latent_dim_) = z_t.row(r);
      col += latent_dim_;
      x.row(r).segment(col, semantic_dim_) = cb.semantic.row(0);
      col += semantic_dim_;
      x.row(r).segment(col, latent_dim_) = cb.perceptual.row(f);
      col += latent_dim_;
      sinusoid(static_cast<double>(step), kStepFeatures, 100.0, x.row(r).segment(col, kStepFeatures));
      col += kStepFeatures;
      sinusoid(static_cast<double>(f), kFrameFeatures, 20.0, x.row(r).segment(col, kFrameFeatures));
    }
  }
  return x;
}

ad::Var ToyDiffusion::estimate(ad::Graph& g, const Matrix& z_t, const std::vector<const Condition*>& c,
                               const std::vector<int>& steps) const {
  ad::Var h = ad::gelu(layer1_.forward(g, g.constant(features(z_t, c, steps))));
  return layer2_.forward(g, h);
}

Matrix ToyDiffusion::estimate(const Matrix& z_t, const Condition& c, int step) const {
  ad::Graph g;
  return estimate(g, z_t, {&c}, {step}).value();
}

Matrix ToyDiffusion::sample(const Condition& c, const GuidanceConfig& guidance, std::uint64_t seed) const {
  const Condition c_bar =
      guidance.negative ? *guidance.negative : zero_condition(semantic_dim_, frames_, latent_dim_);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise = [&] {
    Matrix m(frames_, latent_dim_);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  Matrix x = noise();
  for (int i = schedule_.steps() - 1; i >= 0; --i) {
    const double ab = schedule_.alpha_bars[static_cast<size_t>(i)];
    Matrix eps = guided_score(*this, x, c, c_bar, guidance.scale, i);
    Matrix x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    if (cfg_.clip_x0 > 0.0) {
      x0 = x0.cwiseMax(-cfg_.clip_x0).cwiseMin(cfg_.clip_x0);
      eps = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    }
    if (i == 0) {
      x = x0;
      break;
    }
    const double ab_prev = schedule_.alpha_bars[static_cast<size_t>(i - 1)];
    const double sigma = cfg_.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    x = std::sqrt(ab_prev) * x0 + std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)) * eps;
    if (sigma > 0.0) x += sigma * noise();
  }
  return x;
}

nn::ParamList ToyDiffusion::parameters() {
  nn::ParamList out;
  layer1_.collect(out);
  layer2_.collect(out);
  return out;
}

std::vector<DiffusionEpoch> train_diffusion(const data::DatasetManifest& manifest, ToyDiffusion& model,
                                            std::uint64_t seed) {
  DiffusionConfig& cfg = model.mutable_config();
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.lr < 0.0) throw ConfigError("diffusion: invalid training config");
  const data::Dims& d = manifest.dims;
  if (d.frames != model.frames() || d.latent_dim != model.latent_dim() ||
      d.cond_tokens * d.cond_dim != model.semantic_dim()) {
    throw ShapeError("train_diffusion: model dims do not match the manifest");
  }
  const std::vector<std::size_t> train = manifest.indices(data::Split::Train);
  if (train.empty()) throw EmptyInputError("train_diffusion: no training clips");
  if (cfg.clip_x0 == 0.0) {
    double m = 0.0;
    for (auto i : train) m = std::max(m, manifest.records[i].gt_latents.cwiseAbs().maxCoeff());
    cfg.clip_x0 = 1.5 * m;
  }
  const NoiseSchedule& sched = model.schedule();
  nn::ParamList params = model.parameters();
  nn::Adam opt(params, nn::AdamConfig{cfg.lr});
  std::mt19937_64 rng(derive_seed(seed, "diffusion-train"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> step_dist(0, sched.steps() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index t = d.frames, l = d.latent_dim;

  std::vector<DiffusionEpoch> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train;
    std::shuffle(order.begin(), order.end(), rng);
    DiffusionEpoch rec{epoch, 0.0};
    double seen = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto b = static_cast<Index>(end - start);
      Matrix z_t(b * t, l), eps(b * t, l);
      std::vector<Condition> conds(static_cast<size_t>(b));
      std::vector<int> steps(static_cast<size_t>(b));
      for (Index i = 0; i < b; ++i) {
        const auto& r = manifest.records[order[start + static_cast<std::size_t>(i)]];
        const int step = step_dist(rng);
        const double ab = sched.alpha_bars[static_cast<size_t>(step)];
        for (Index k = 0; k < t * l; ++k) eps.data()[i * t * l + k] = normal(rng);
        z_t.middleRows(i * t, t) = std::sqrt(ab) * r.gt_latents + std::sqrt(1.0 - ab) * eps.middleRows(i * t, t);
        Condition& c = conds[static_cast<size_t>(i)];
        c.semantic = Eigen::Map<const Matrix>(r.text_condition.data(), 1, r.text_condition.size());
        c.perceptual = r.gt_latents;
        for (Index k = 0; k < c.perceptual.size(); ++k) c.perceptual.data()[k] += cfg.cond_noise * normal(rng);
        if (unit(rng) < cfg.cond_dropout) c.semantic.setZero();
        if (unit(rng) < cfg.cond_dropout) c.perceptual.setZero();
        steps[static_cast<size_t>(i)] = step;
      }
      std::vector<const Condition*> cptr;
      for (const auto& c : conds) cptr.push_back(&c);
      ad::Graph g;
      opt.zero_grad();
      ad::Var pred = model.estimate(g, z_t, cptr, steps);
      ad::Var loss = ad::scale(ad::sum_squares(ad::sub(pred, g.constant(eps))), 1.0 / static_cast<double>(eps.size()));
      if (!std::isfinite(loss.scalar())) throw sem::DivergenceError("train_diffusion", epoch, -1);
      g.backward(loss);
      opt.step();
      rec.loss += loss.scalar() * static_cast<double>(b);
      seen += static_cast<double>(b);
    }
    rec.loss /= seen;
    curve.push_back(rec);
  }
  return curve;
}

// ---- rendering -------------------------------------------------------------------------------

Renderer::Renderer(Index latent_dim, Index height, Index width, std::uint64_t seed)
    : latent_dim_(latent_dim), height_(height), width_(width) {
  if (latent_dim < 1 || height < 1 || width < 1) throw ConfigError("renderer: invalid dims");
  constexpr int kFreq = 3;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  map_ = Matrix::Zero(latent_dim, height * width * 3);
  const double gain = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (Index k = 0; k < latent_dim; ++k) {
    for (Index ch = 0; ch < 3; ++ch) {
      for (int a = 0; a < kFreq; ++a) {
        for (int b = 0; b < kFreq; ++b) {
          const double coef = gain * normal(rng);
          for (Index y = 0; y < height; ++y) {
            const double cy = std::cos(std::numbers::pi * a * (static_cast<double>(y) + 0.5) / static_cast<double>(height));
            for (Index x = 0; x < width; ++x) {
              const double cx =
                  std::cos(std::numbers::pi * b * (static_cast<double>(x) + 0.5) / static_cast<double>(width));
              map_(k, (y * width + x) * 3 + ch) += coef * cy * cx;
            }
          }
        }
      }
    }
  }
  bias_ = RowVector::Zero(height * width * 3);
}

Image Renderer::render(const RowVector& latent) const {
  if (latent.size() != latent_dim_) throw ShapeError("render: latent has " + std::to_string(latent.size()) + " dims");
  const RowVector pre = latent * map_ + bias_;
  Image img(height_, width_ * 3);
  for (Index i = 0; i < pre.size(); ++i) img.data()[i] = 1.0 / (1.0 + std::exp(-pre(i)));
  return img;
}

std::vector<Image> Renderer::render_clip(const Matrix& latents) const {
  std::vector<Image> out;
  for (Index f = 0; f < latents.rows(); ++f) out.push_back(render(latents.row(f)));
  return out;
}

// ---- pipeline --------------------------------------------------------------------------------

void check_compatible(const PipelineModels& m, const data::Dims& dims) {
  if (!m.diffusion) throw ConfigError("reconstruct: no diffusion model");
  if (m.diffusion->frames() != dims.frames || m.diffusion->latent_dim() != dims.latent_dim ||
      m.diffusion->semantic_dim() != dims.cond_tokens * dims.cond_dim) {
    throw ConfigError("reconstruct: diffusion model dims do not match the data");
  }
  if (m.use_semantic) {
    if (!m.encoder || !m.predictor) throw ConfigError("reconstruct: semantic branch enabled without its checkpoint");
    if (m.encoder->output_dim() != m.predictor->linear().in_features()) {
      throw ConfigError("reconstruct: encoder output dim does not match the predictor");
    }
    if (m.predictor->tokens() != dims.cond_tokens || m.predictor->cond_dim() != dims.cond_dim) {
      throw ConfigError("reconstruct: predictor condition shape does not match the data");
    }
    if (auto* mlp = dynamic_cast<enc::MlpEncoder*>(m.encoder)) {
      if (mlp->config().channels != dims.channels || mlp->config().samples != dims.samples) {
        throw ConfigError("reconstruct: semantic encoder expects " +
                          shape_str(mlp->config().channels, mlp->config().samples) + " EEG, data is " +
                          shape_str(dims.channels, dims.samples));
      }
    }
  }
  if (m.use_perception) {
    if (!m.embednet || !m.causalseq) throw ConfigError("reconstruct: perceptual branch enabled without its checkpoint");
    if (m.embednet->config().channels != dims.channels || m.embednet->config().window != dims.window) {
      throw ConfigError("reconstruct: EmbedNet window shape does not match the data");
    }
    const auto& cs = m.causalseq->config();
    if (cs.frames != dims.frames || cs.latent_dim != dims.latent_dim || cs.input_dim != m.embednet->config().embed_dim) {
      throw ConfigError("reconstruct: CausalSeq dims do not match the data or EmbedNet");
    }
  }
}

Reconstruction reconstruct(const data::EegSegment& eeg, const data::Dims& dims, PipelineModels& m,
                           const GuidanceConfig& g, std::uint64_t seed) {
  check_compatible(m, dims);
  if (eeg.channels() != dims.channels || eeg.samples() != dims.samples) {
    throw ShapeError("reconstruct: EEG " + shape_str(eeg.data) + ", expected " + shape_str(dims.channels, dims.samples));
  }
  Reconstruction r;
  r.clip_id = eeg.clip_id;
  r.seed = seed;
  const Index sd = dims.cond_tokens * dims.cond_dim;
  Condition c = zero_condition(sd, dims.frames, dims.latent_dim);
  if (m.use_semantic) {
    const Matrix e_t = m.predictor->predict(m.encoder->encode_one(eeg));
    c.semantic = Eigen::Map<const Matrix>(e_t.data(), 1, sd);
  }
  if (m.use_perception) {
    c.perceptual = perc::predict_latents(eeg, dims.frames, dims.window, *m.embednet, *m.causalseq);
  }
  r.semantic_hat = c.semantic;
  r.z0_hat = c.perceptual;
  r.latents = m.diffusion->sample(c, g, seed);
  return r;
}

BatchResult batch_reconstruct(const data::DatasetManifest& manifest, data::Split split, PipelineModels& m,
                              const GuidanceConfig& g, std::uint64_t seed, const json& provenance) {
  BatchResult out;
  out.provenance = provenance.is_object() ? provenance : json::object();
  out.provenance["seed"] = seed;
  out.provenance["guidance_scale"] = g.scale;
  out.provenance["negative_condition"] = g.negative ? "explicit" : "zero";
  out.provenance["use_semantic"] = m.use_semantic;
  out.provenance["use_perception"] = m.use_perception;
  std::vector<const data::ClipRecord*> clips;
  for (auto i : manifest.indices(split)) clips.push_back(&manifest.records[i]);
  std::sort(clips.begin(), clips.end(), [](auto* a, auto* b) { return a->clip_id < b->clip_id; });
  json seeds = json::object();
  if (!clips.empty()) check_compatible(m, manifest.dims);
  for (const auto* r : clips) {
    const std::uint64_t clip_seed = derive_seed(seed, r->clip_id);
    seeds[r->clip_id] = clip_seed;
    try {
      out.reconstructions.push_back(reconstruct(r->eeg, manifest.dims, m, g, clip_seed));
    } catch (const Error& e) {
      out.failures[r->clip_id] = e.what();
    }
  }
  out.provenance["clip_seeds"] = seeds;
  out.provenance["failures"] = out.failures;
  return out;
}

void save_reconstructions(const BatchResult& r, const data::Dims& dims, const Renderer& renderer,
                          const std::filesystem::path& dir) {
  io::Bundle b;
  json clips = json::array();
  for (const auto& rec : r.reconstructions) {
    clips.push_back(rec.clip_id);
    b.arrays[rec.clip_id + ".latents"] = rec.latents;
    b.arrays[rec.clip_id + ".z0_hat"] = rec.z0_hat;
    b.arrays[rec.clip_id + ".semantic_hat"] = rec.semantic_hat;
    Matrix frames(dims.frames * renderer.height(), renderer.width() * 3);
    const auto imgs = renderer.render_clip(rec.latents);
    for (Index f = 0; f < dims.frames; ++f) frames.middleRows(f * renderer.height(), renderer.height()) = imgs[static_cast<size_t>(f)];
    b.arrays[rec.clip_id + ".frames"] = frames;
  }
  b.header["schema"] = "mindcine.reconstructions/1";
  b.header["clips"] = clips;
  b.header["frames"] = dims.frames;
  b.header["latent_dim"] = dims.latent_dim;
  b.header["image"] = {{"height", renderer.height()}, {"width", renderer.width()}, {"channels", 3}};
  b.header["provenance"] = r.provenance;
  b.header["failures"] = r.failures;
  io::save_bundle(dir, b, io::DType::F64, "reconstructions.json");
}

std::map<std::string, Matrix> load_reconstructions(const std::filesystem::path& dir) {
  io::Bundle b = io::load_bundle(dir, "reconstructions.json");
  if (b.header.value("schema", "") != "mindcine.reconstructions/1") {
    throw IngestError("reconstructions: unexpected schema in " + dir.string());
  }
  std::map<std::string, Matrix> out;
  for (const auto& id : b.header.at("clips")) {
    const std::string key = id.get<std::string>() + ".latents";
    auto it = b.arrays.find(key);
    if (it == b.arrays.end()) throw IngestError("reconstructions: missing array " + key);
    out[id.get<std::string>()] = it->second;
  }
  return out;
}

}  // namespace mindcine::inf
