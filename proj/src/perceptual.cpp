#include "mindcine/perceptual.hpp"

#include "mindcine/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mindcine::perc {

Mask causal_mask(Index t) {
  if (t < 1) throw ConfigError("causal_mask: t must be >= 1");
  Mask m(t, t);
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < t; ++j) m(i, j) = j <= i;
  return m;
}

constexpr double kQkNormEps = 1e-12;

AttentionResult attention(const Var& q, const Var& k, const Var& v, const Mask* mask, bool qk_norm, const Var* q_gain,
                          const Var* k_gain) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query dim " + std::to_string(q.cols()) + " vs key dim " +
                                             std::to_string(k.cols()));
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value length mismatch");
  Var qn = q, kn = k;
  if (qk_norm) {
    qn = ad::layer_norm_rows(q, kQkNormEps);
    kn = ad::layer_norm_rows(k, kQkNormEps);
    if (q_gain) qn = ad::mul_row(qn, *q_gain);
    if (k_gain) kn = ad::mul_row(kn, *k_gain);
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var scores = ad::scale(ad::matmul(qn, ad::transpose(kn)), inv_sqrt_d);
  Var weights = ad::row_softmax(scores, mask);
  return {ad::matmul(weights, v), weights.value()};
}

std::string to_string(PositionalKind k) {
  switch (k) {
    case PositionalKind::None: return "none";
    case PositionalKind::Sinusoidal: return "sinusoidal";
    case PositionalKind::Learned: return "learned";
  }
  return "none";
}

std::string to_string(DecoderMode m) { return m == DecoderMode::Autoregressive ? "autoregressive" : "parallel"; }

PositionalKind positional_from_string(const std::string& s) {
  if (s == "none") return PositionalKind::None;
  if (s == "sinusoidal") return PositionalKind::Sinusoidal;
  if (s == "learned") return PositionalKind::Learned;
  throw ConfigError("unknown positional embedding kind '" + s + "'");
}

DecoderMode decoder_mode_from_string(const std::string& s) {
  if (s == "autoregressive") return DecoderMode::Autoregressive;
  if (s == "parallel") return DecoderMode::Parallel;
  throw ConfigError("unknown decoder mode '" + s + "'");
}

Matrix sinusoidal_table(Index frames, Index dim) {
  Matrix pe(frames, dim);
  for (Index pos = 0; pos < frames; ++pos) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

// ---- attention blocks --------------------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(const std::string& name, Index d_model, Index heads, bool qk_norm,
                                       std::mt19937_64& rng)
    : heads_(heads),
      qk_norm_(qk_norm),
      q_(name + ".q", d_model, d_model, rng),
      k_(name + ".k", d_model, d_model, rng),
      v_(name + ".v", d_model, d_model, rng),
      o_(name + ".o", d_model, d_model, rng) {
  if (heads < 1 || d_model % heads != 0) throw ConfigError(name + ": d_model must be divisible by heads");
  const Index dh = d_model / heads;
  q_gain_ = ad::Parameter(name + ".q_gain", Matrix::Ones(1, dh));
  k_gain_ = ad::Parameter(name + ".k_gain", Matrix::Ones(1, dh));
}

Var MultiHeadAttention::forward(Graph& g, const Var& xq, const Var& xkv, Index batch, const Mask* mask,
                                std::vector<Matrix>* weights) {
  if (batch < 1 || xq.rows() % batch != 0 || xkv.rows() % batch != 0) {
    throw ShapeError("attention: rows not divisible by batch size");
  }
  const Index tq = xq.rows() / batch, tk = xkv.rows() / batch;
  const Index dh = q_.out_features() / heads_;
  Var q = q_.forward(g, xq), k = k_.forward(g, xkv), v = v_.forward(g, xkv);
  Var qg, kg;
  if (qk_norm_) {
    qg = g.param(q_gain_);
    kg = g.param(k_gain_);
  }
  std::vector<Var> clips;
  clips.reserve(static_cast<size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    Var qb = ad::slice_rows(q, b * tq, tq), kb = ad::slice_rows(k, b * tk, tk), vb = ad::slice_rows(v, b * tk, tk);
    std::vector<Var> heads;
    for (Index h = 0; h < heads_; ++h) {
      AttentionResult r = attention(ad::slice_cols(qb, h * dh, dh), ad::slice_cols(kb, h * dh, dh),
                                    ad::slice_cols(vb, h * dh, dh), mask, qk_norm_, qk_norm_ ? &qg : nullptr,
                                    qk_norm_ ? &kg : nullptr);
      if (weights) weights->push_back(r.weights);
      heads.push_back(r.output);
    }
    clips.push_back(heads.size() == 1 ? heads.front() : ad::concat_cols(heads));
  }
  Var merged = clips.size() == 1 ? clips.front() : ad::concat_rows(clips);
  return o_.forward(g, merged);
}

void MultiHeadAttention::collect(nn::ParamList& out) {
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  o_.collect(out);
  if (qk_norm_) {
    out.push_back(&q_gain_);
    out.push_back(&k_gain_);
  }
}

FeedForward::FeedForward(const std::string& name, Index d_model, Index hidden, std::mt19937_64& rng)
    : up(name + ".up", d_model, hidden, rng), down(name + ".down", hidden, d_model, rng) {}

Var FeedForward::forward(Graph& g, const Var& x) { return down.forward(g, ad::gelu(up.forward(g, x))); }

void FeedForward::collect(nn::ParamList& out) {
  up.collect(out);
  down.collect(out);
}

// ---- CausalSeq ---------------------------------------------------------------------------------

CausalSeqModel::CausalSeqModel(const CausalSeqConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.frames < 1 || cfg.input_dim < 1 || cfg.latent_dim < 1 || cfg.d_model < 1 || cfg.layers < 0 || cfg.ffn < 1) {
    throw ConfigError("causalseq: invalid sizes");
  }
  in_proj_ = nn::Linear("causalseq.in_proj", cfg.input_dim, cfg.d_model, rng);
  latent_in_ = nn::Linear("causalseq.latent_in", cfg.latent_dim, cfg.d_model, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix start(1, cfg.d_model);
  for (Index i = 0; i < start.size(); ++i) start.data()[i] = normal(rng);
  start_token_ = ad::Parameter("causalseq.start_token", start);
  Matrix table = cfg.positional == PositionalKind::Learned ? Matrix(sinusoidal_table(cfg.frames, cfg.d_model))
                                                           : Matrix::Zero(cfg.frames, cfg.d_model);
  pe_table_ = ad::Parameter("causalseq.pe_table", table);
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string e = "causalseq.enc" + std::to_string(l);
    EncoderLayer el;
    el.ln_attn = nn::LayerNorm(e + ".ln_attn", cfg.d_model);
    el.ln_ffn = nn::LayerNorm(e + ".ln_ffn", cfg.d_model);
    el.self_attn = MultiHeadAttention(e + ".self", cfg.d_model, cfg.heads, cfg.qk_norm, rng);
    el.ffn = FeedForward(e + ".ffn", cfg.d_model, cfg.ffn, rng);
    encoder_.push_back(std::move(el));
  }
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string d = "causalseq.dec" + std::to_string(l);
    DecoderLayer dl;
    dl.ln_self = nn::LayerNorm(d + ".ln_self", cfg.d_model);
    dl.ln_cross = nn::LayerNorm(d + ".ln_cross", cfg.d_model);
    dl.ln_ffn = nn::LayerNorm(d + ".ln_ffn", cfg.d_model);
    dl.self_attn = MultiHeadAttention(d + ".self", cfg.d_model, cfg.heads, cfg.qk_norm, rng);
    dl.cross_attn = MultiHeadAttention(d + ".cross", cfg.d_model, cfg.heads, cfg.qk_norm, rng);
    dl.ffn = FeedForward(d + ".ffn", cfg.d_model, cfg.ffn, rng);
    decoder_.push_back(std::move(dl));
  }
  final_ln_ = nn::LayerNorm("causalseq.final_ln", cfg.d_model);
  out_proj_ = nn::Linear("causalseq.out_proj", cfg.d_model, cfg.latent_dim, rng);
}

Var CausalSeqModel::add_positional(Graph& g, const Var& x, Index batch) {
  const Index t = cfg_.frames;
  switch (cfg_.positional) {
    case PositionalKind::None: return x;
    case PositionalKind::Sinusoidal: {
      const Matrix table = sinusoidal_table(t, cfg_.d_model);
      Matrix tiled(batch * t, cfg_.d_model);
      for (Index b = 0; b < batch; ++b) tiled.middleRows(b * t, t) = table;
      return ad::add_const(x, tiled);
    }
    case PositionalKind::Learned: {
      Var table = g.param(pe_table_);
      std::vector<Var> copies(static_cast<size_t>(batch), table);
      return ad::add(x, batch == 1 ? table : ad::concat_rows(copies));
    }
  }
  return x;
}

Var CausalSeqModel::encode(Graph& g, const Var& e_p, Index batch, std::vector<Matrix>* weights) {
  if (batch < 1 || e_p.rows() != batch * cfg_.frames) {
    throw ShapeError("causalseq: expected " + std::to_string(batch * cfg_.frames) + " embedding rows (" +
                     std::to_string(cfg_.frames) + " per clip), got " + std::to_string(e_p.rows()));
  }
  if (e_p.cols() != cfg_.input_dim) {
    throw ShapeError("causalseq: embedding dim " + std::to_string(e_p.cols()) + " != " + std::to_string(cfg_.input_dim));
  }
  Var x = add_positional(g, in_proj_.forward(g, e_p), batch);
  for (auto& layer : encoder_) {
    Var h = layer.ln_attn.forward(g, x);
    x = ad::add(x, layer.self_attn.forward(g, h, h, batch, nullptr, weights));
    x = ad::add(x, layer.ffn.forward(g, layer.ln_ffn.forward(g, x)));
  }
  return x;
}

Var CausalSeqModel::decode(Graph& g, const Var& memory, const Var& decoder_inputs, Index batch,
                           std::vector<Matrix>* weights) {
  if (decoder_inputs.rows() != batch * cfg_.frames || decoder_inputs.cols() != cfg_.d_model) {
    throw ShapeError("causalseq: decoder inputs " + shape_str(decoder_inputs.value()) + ", expected " +
                     shape_str(batch * cfg_.frames, cfg_.d_model));
  }
  const Mask mask = causal_mask(cfg_.frames);
  Var y = decoder_inputs;
  for (auto& layer : decoder_) {
    Var h = layer.ln_self.forward(g, y);
    y = ad::add(y, layer.self_attn.forward(g, h, h, batch, &mask, weights));
    y = ad::add(y, layer.cross_attn.forward(g, layer.ln_cross.forward(g, y), memory, batch, nullptr, weights));
    y = ad::add(y, layer.ffn.forward(g, layer.ln_ffn.forward(g, y)));
  }
  return out_proj_.forward(g, final_ln_.forward(g, y));
}

Var CausalSeqModel::teacher_inputs(Graph& g, const Matrix& gt_latents, Index batch) {
  const Index t = cfg_.frames;
  if (gt_latents.rows() != batch * t || gt_latents.cols() != cfg_.latent_dim) {
    throw ShapeError("causalseq: latents " + shape_str(gt_latents) + ", expected " + shape_str(batch * t, cfg_.latent_dim));
  }
  Var start = g.param(start_token_);
  std::vector<Var> rows;
  if (t == 1) {
    rows.assign(static_cast<size_t>(batch), start);
  } else {
    Matrix prev(batch * (t - 1), cfg_.latent_dim);
    for (Index b = 0; b < batch; ++b) prev.middleRows(b * (t - 1), t - 1) = gt_latents.middleRows(b * t, t - 1);
    Var projected = latent_in_.forward(g, g.constant(std::move(prev)));
    for (Index b = 0; b < batch; ++b) {
      rows.push_back(start);
      rows.push_back(ad::slice_rows(projected, b * (t - 1), t - 1));
    }
  }
  Var inputs = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  return add_positional(g, inputs, batch);
}

Var CausalSeqModel::parallel_inputs(Graph& g, Index batch) {
  Var start = g.param(start_token_);
  std::vector<Var> rows(static_cast<size_t>(batch * cfg_.frames), start);
  Var inputs = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  return add_positional(g, inputs, batch);
}

Var CausalSeqModel::forward_train(Graph& g, const Var& e_p, const Matrix& gt_latents, Index batch) {
  Var memory = encode(g, e_p, batch);
  Var inputs = cfg_.decoder == DecoderMode::Autoregressive ? teacher_inputs(g, gt_latents, batch)
                                                           : parallel_inputs(g, batch);
  return decode(g, memory, inputs, batch);
}

Matrix CausalSeqModel::generate(const Matrix& e_p, Index batch) {
  const Index t = cfg_.frames;
  if (cfg_.decoder == DecoderMode::Parallel) {
    Graph g;
    Var memory = encode(g, g.constant(e_p), batch);
    return decode(g, memory, parallel_inputs(g, batch), batch).value();
  }
  Matrix generated = Matrix::Zero(batch * t, cfg_.latent_dim);
  Matrix memory_value;
  {
    Graph g;
    memory_value = encode(g, g.constant(e_p), batch).value();
  }
  for (Index step = 0; step < t; ++step) {
    // Positions > step hold placeholders; the causal mask keeps them out of positions <= step.
    Graph g;
    Var out = decode(g, g.constant(memory_value), teacher_inputs(g, generated, batch), batch);
    for (Index b = 0; b < batch; ++b) generated.row(b * t + step) = out.value().row(b * t + step);
  }
  return generated;
}

Matrix CausalSeqModel::causalseq_forward(const std::vector<data::Embedding>& e_p) {
  if (static_cast<Index>(e_p.size()) != cfg_.frames) {
    throw ShapeError("causalseq_forward: sequence length " + std::to_string(e_p.size()) + " != configured t " +
                     std::to_string(cfg_.frames));
  }
  Matrix x(cfg_.frames, cfg_.input_dim);
  for (Index i = 0; i < cfg_.frames; ++i) {
    if (e_p[static_cast<size_t>(i)].dim() != cfg_.input_dim) throw ShapeError("causalseq_forward: embedding dim mismatch");
    x.row(i) = e_p[static_cast<size_t>(i)].values.transpose();
  }
  return generate(x, 1);
}

nn::ParamList CausalSeqModel::parameters() {
  nn::ParamList out;
  in_proj_.collect(out);
  latent_in_.collect(out);
  out.push_back(&start_token_);
  if (cfg_.positional == PositionalKind::Learned) out.push_back(&pe_table_);
  for (auto& l : encoder_) {
    l.ln_attn.collect(out);
    l.self_attn.collect(out);
    l.ln_ffn.collect(out);
    l.ffn.collect(out);
  }
  for (auto& l : decoder_) {
    l.ln_self.collect(out);
    l.self_attn.collect(out);
    l.ln_cross.collect(out);
    l.cross_attn.collect(out);
    l.ln_ffn.collect(out);
    l.ffn.collect(out);
  }
  final_ln_.collect(out);
  out_proj_.collect(out);
  return out;
}

// ---- loss and training ------------------------------------------------------------------------

Var perception_loss(const Var& pred, const Var& gt, Index batch) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ShapeError("perception_loss: pred " + shape_str(pred.value()) + " vs gt " + shape_str(gt.value()));
  }
  if (batch < 1) throw EmptyInputError("perception_loss: empty batch");
  return ad::scale(ad::sum_squares(ad::sub(pred, gt)), 1.0 / static_cast<double>(batch));
}

double perception_loss(const Matrix& pred, const Matrix& gt, Index batch) {
  Graph g;
  return perception_loss(g.constant(pred), g.constant(gt), batch).scalar();
}

namespace {

struct PerceptualBatch {
  Matrix windows;  // (B*t*C) x w
  Matrix latents;  // (B*t) x latent_dim
  Index size = 0;
};

PerceptualBatch gather(const std::vector<const data::ClipRecord*>& clips, Index frames, Index window) {
  PerceptualBatch b;
  b.size = static_cast<Index>(clips.size());
  const Index c = clips.front()->eeg.channels();
  const Index l = clips.front()->gt_latents.cols();
  b.windows.resize(b.size * frames * c, window);
  b.latents.resize(b.size * frames, l);
  for (Index i = 0; i < b.size; ++i) {
    const auto& r = *clips[static_cast<size_t>(i)];
    const data::WindowedSegment ws = data::slice_windows(r.eeg, frames, window);
    for (Index f = 0; f < frames; ++f) b.windows.middleRows((i * frames + f) * c, c) = ws.windows[static_cast<size_t>(f)];
    b.latents.middleRows(i * frames, frames) = r.gt_latents;
  }
  return b;
}

double eval_loss(const std::vector<const data::ClipRecord*>& clips, enc::EmbedNet& embednet, CausalSeqModel& model,
                 Index window, int batch_size) {
  const Index frames = model.config().frames;
  double total = 0.0;
  for (std::size_t i = 0; i < clips.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<const data::ClipRecord*> chunk(
        clips.begin() + static_cast<std::ptrdiff_t>(i),
        clips.begin() + static_cast<std::ptrdiff_t>(std::min(clips.size(), i + static_cast<std::size_t>(batch_size))));
    PerceptualBatch b = gather(chunk, frames, window);
    Matrix e_p;
    {
      Graph g;
      e_p = embednet.forward(g, g.constant(b.windows)).value();
    }
    const Matrix pred = model.generate(e_p, b.size);
    total += perception_loss(pred, b.latents, b.size) * static_cast<double>(b.size);
  }
  return total / static_cast<double>(clips.size());
}

}  // namespace

TrainedPerceptualState train_perceptual(const data::DatasetManifest& manifest, enc::EmbedNet& embednet,
                                        CausalSeqModel& model, const PerceptualTrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.lr < 0.0) throw ConfigError("perceptual: invalid training config");
  validate(manifest);
  const data::Dims& d = manifest.dims;
  if (model.config().frames != d.frames || model.config().latent_dim != d.latent_dim) {
    throw ShapeError("train_perceptual: model frames/latent_dim do not match the manifest");
  }
  if (embednet.config().channels != d.channels || embednet.config().window != d.window) {
    throw ShapeError("train_perceptual: EmbedNet window shape does not match the manifest");
  }

  nn::ParamList params = embednet.parameters();
  for (auto* p : model.parameters()) params.push_back(p);
  nn::Adam opt(params, nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  const auto [fit_idx, val_idx] = sem::split_validation(manifest, cfg.val_fraction, cfg.seed);
  if (fit_idx.empty()) throw EmptyInputError("train_perceptual: no training clips");
  std::vector<const data::ClipRecord*> fit, val;
  for (auto i : fit_idx) fit.push_back(&manifest.records[i]);
  for (auto i : val_idx) val.push_back(&manifest.records[i]);

  TrainedPerceptualState state;
  state.best_params = nn::snapshot(params);
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<const data::ClipRecord*> order = fit;
    std::mt19937_64 rng(derive_seed(cfg.seed, "perceptual-epoch:" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    PerceptualEpoch rec;
    rec.epoch = epoch;
    double seen = 0.0;
    int batch_no = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const data::ClipRecord*> chunk(
          order.begin() + static_cast<std::ptrdiff_t>(i),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size))));
      PerceptualBatch b = gather(chunk, d.frames, d.window);
      Graph g;
      opt.zero_grad();
      Var e_p = embednet.forward(g, g.constant(b.windows));
      Var pred = model.forward_train(g, e_p, b.latents, b.size);
      Var loss = perception_loss(pred, g.constant(b.latents), b.size);
      if (!std::isfinite(loss.scalar())) throw sem::DivergenceError("train_perceptual", epoch, batch_no);
      g.backward(loss);
      opt.step();
      rec.train_loss += loss.scalar() * static_cast<double>(b.size);
      seen += static_cast<double>(b.size);
      ++batch_no;
    }
    rec.train_loss /= seen;
    rec.val_loss = val.empty() ? rec.train_loss : eval_loss(val, embednet, model, d.window, cfg.batch_size);
    if (!std::isfinite(rec.val_loss)) throw sem::DivergenceError("train_perceptual(validation)", epoch, -1);
    state.curve.push_back(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      state.best_epoch = epoch;
      state.best_val_loss = rec.val_loss;
      state.best_params = nn::snapshot(params);
    }
  }
  state.final_params = nn::snapshot(params);
  nn::restore(params, state.best_params);
  return state;
}

Matrix predict_latents(const data::EegSegment& eeg, Index frames, Index window, enc::EmbedNet& embednet,
                       CausalSeqModel& model) {
  const data::WindowedSegment ws = data::slice_windows(eeg, frames, window);
  return model.causalseq_forward(embednet.embednet_extract(ws));
}

double mean_frame_cosine(const Matrix& pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.rows() == 0) {
    throw ShapeError("mean_frame_cosine: shape mismatch");
  }
  double total = 0.0;
  for (Index f = 0; f < pred.rows(); ++f) {
    const double denom = pred.row(f).norm() * gt.row(f).norm();
    total += denom > 0.0 ? pred.row(f).dot(gt.row(f)) / denom : 0.0;
  }
  return total / static_cast<double>(pred.rows());
}

}  // namespace mindcine::perc
