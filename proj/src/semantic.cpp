#include "mindcine/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mindcine::sem {

SoftClipParams::SoftClipParams(double tau, bool bidirectional_, const std::string& name)
    : log_scale(name, Matrix::Constant(1, 1, 0.0)), bidirectional(bidirectional_) {
  set_tau(tau);
}

double SoftClipParams::tau() const { return std::exp(-log_scale.value(0, 0)); }

void SoftClipParams::set_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("softclip: tau must be positive, got " + std::to_string(tau));
  log_scale.value(0, 0) = -std::log(tau);
}

namespace {

Var reduce(const Var& total, Index batch, Reduction r) {
  return r == Reduction::Mean ? ad::scale(total, 1.0 / static_cast<double>(batch)) : total;
}

}  // namespace

Var softclip_loss(const Var& pred, const Var& target, const Var& log_scale, bool bidirectional, Reduction reduction) {
  const Index batch = pred.rows();
  if (batch == 0) throw EmptyInputError("softclip_loss: empty batch");
  if (target.rows() != batch || target.cols() != pred.cols()) {
    throw ShapeError("softclip_loss: pred " + shape_str(pred.value()) + " vs target " + shape_str(target.value()));
  }
  Var scale = ad::exp(log_scale);
  Var pn = ad::l2_normalize_rows(pred);
  Var tn = ad::l2_normalize_rows(target);
  Var tnt = ad::transpose(tn);
  Var s_tt = ad::scale_by(ad::matmul(tn, tnt), scale);
  Var s_pt = ad::scale_by(ad::matmul(pn, tnt), scale);
  if (!s_tt.value().allFinite() || !s_pt.value().allFinite()) throw NumericError("softclip_loss: non-finite similarity");
  Var p = ad::row_softmax(s_tt);
  Var forward = ad::scale(ad::sum(ad::hadamard(p, ad::row_log_softmax(s_pt))), -1.0);
  Var total = forward;
  if (bidirectional) {
    // Soft targets are symmetric (target·targetᵀ), so the reverse direction
    // reuses p against the transposed prediction logits.
    Var backward = ad::scale(ad::sum(ad::hadamard(p, ad::row_log_softmax(ad::transpose(s_pt)))), -1.0);
    total = ad::scale(ad::add(forward, backward), 0.5);
  }
  return reduce(total, batch, reduction);
}

double softclip_loss(const Matrix& pred, const Matrix& target, double tau, bool bidirectional, Reduction reduction) {
  if (!(tau > 0.0)) throw ConfigError("softclip_loss: tau must be positive");
  Graph g;
  Var ls = g.constant(Matrix::Constant(1, 1, -std::log(tau)));
  return softclip_loss(g.constant(pred), g.constant(target), ls, bidirectional, reduction).scalar();
}

Var joint_loss(const Var& e_s, const Var& v, const Var& t, const Var& d, const JointLossWeights& w,
               const PairTemperatures& temps, bool bidirectional, Reduction reduction) {
  const Index batch = e_s.rows();
  for (const Var* m : {&v, &t, &d}) {
    if (m->rows() != batch) {
      throw ShapeError("joint_loss: batch sizes differ (" + std::to_string(batch) + " vs " + std::to_string(m->rows()) +
                       ")");
    }
  }
  if (w.alpha1 < 0 || w.alpha2 < 0 || w.alpha3 < 0) throw ConfigError("joint_loss: alpha weights must be >= 0");
  Graph& g = *e_s.graph();
  Var total;
  auto add_term = [&](double alpha, const Var& target, const Var& temp) {
    if (alpha == 0.0) return;
    Var term = ad::scale(softclip_loss(e_s, target, temp, bidirectional, reduction), alpha);
    total = total.valid() ? ad::add(total, term) : term;
  };
  add_term(w.alpha1, v, temps.image);
  add_term(w.alpha2, t, temps.text);
  add_term(w.alpha3, d, temps.depth);
  if (!total.valid()) total = g.constant(Matrix::Zero(1, 1));
  return total;
}

Var projection_loss(const Var& e_s, const Var& t, Reduction reduction) {
  if (e_s.rows() != t.rows() || e_s.cols() != t.cols()) {
    throw ShapeError("projection_loss: e_s " + shape_str(e_s.value()) + " vs t " + shape_str(t.value()));
  }
  if (e_s.rows() == 0) throw EmptyInputError("projection_loss: empty batch");
  return reduce(ad::sum_squares(ad::sub(e_s, t)), e_s.rows(), reduction);
}

SemanticPredictor::SemanticPredictor(Index joint_dim, Index tokens, Index cond_dim, std::mt19937_64& rng)
    : tokens_(tokens), cond_dim_(cond_dim), linear_("predictor", joint_dim, tokens * cond_dim, rng) {
  if (tokens < 1 || cond_dim < 1) throw ConfigError("predictor: tokens and cond_dim must be positive");
}

Var SemanticPredictor::forward(Graph& g, const Var& e_s) { return linear_.forward(g, e_s); }

Matrix SemanticPredictor::predict(const data::Embedding& e_s) {
  Graph g;
  Var out = forward(g, g.constant(e_s.values.transpose()));
  return Eigen::Map<const Matrix>(out.value().data(), tokens_, cond_dim_);
}

nn::ParamList SemanticPredictor::parameters() {
  nn::ParamList out;
  linear_.collect(out);
  return out;
}

Var alignment_loss(SemanticPredictor& predictor, Graph& g, const Var& e_s, const Var& e_t, Reduction reduction) {
  Var pred = predictor.forward(g, e_s);
  if (pred.rows() != e_t.rows() || pred.cols() != e_t.cols()) {
    throw ShapeError("alignment_loss: predictor output " + shape_str(pred.value()) + " vs target " +
                     shape_str(e_t.value()));
  }
  return reduce(ad::sum_squares(ad::sub(pred, e_t)), pred.rows(), reduction);
}

double semantic_total_loss(const LossParts& parts, const SemanticLossWeights& w) {
  const double total = parts.projection + w.lambda * parts.joint + w.mu * parts.alignment;
  if (!std::isfinite(total)) throw NumericError("semantic_total_loss: non-finite result");
  return total;
}

Var semantic_total_loss(const Var& projection, const Var& joint, const Var& alignment, const SemanticLossWeights& w) {
  return ad::add(ad::add(projection, ad::scale(joint, w.lambda)), ad::scale(alignment, w.mu));
}

DivergenceError::DivergenceError(const std::string& stage, int epoch_, int batch_)
    : NumericError(stage + ": non-finite loss at epoch " + std::to_string(epoch_) + ", batch " + std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

nn::ParamList TemperatureSet::parameters() {
  nn::ParamList out;
  for (auto& p : params) out.push_back(&p.log_scale);
  return out;
}

PairTemperatures TemperatureSet::bind(Graph& g) {
  if (params.size() == 1) {
    Var shared = g.param(params[0].log_scale);
    return {shared, shared, shared};
  }
  return {g.param(params[0].log_scale), g.param(params[1].log_scale), g.param(params[2].log_scale)};
}

TemperatureSet make_temperatures(const SemanticTrainConfig& cfg) {
  TemperatureSet t;
  if (cfg.shared_tau) {
    t.params.emplace_back(cfg.tau_init, cfg.bidirectional, "softclip.log_scale");
  } else {
    for (const char* pair : {"image", "text", "depth"}) {
      t.params.emplace_back(cfg.tau_init, cfg.bidirectional, std::string("softclip.") + pair + ".log_scale");
    }
  }
  return t;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(const data::DatasetManifest& m,
                                                                                 double fraction,
                                                                                 std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
  std::map<int, std::vector<std::size_t>> by_concept;
  for (std::size_t i : m.indices(data::Split::Train)) by_concept[m.records[i].concept_label].push_back(i);
  std::vector<std::size_t> fit, val;
  std::mt19937_64 rng(derive_seed(seed, "validation-split"));
  for (auto& [k, idx] : by_concept) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit.insert(fit.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
  return {fit, val};
}

namespace {

struct BatchTensors {
  Matrix v, t, d, cond;
  std::vector<const data::EegSegment*> eeg;
};

BatchTensors gather(const std::vector<const data::ClipRecord*>& clips) {
  BatchTensors b;
  const auto n = static_cast<Index>(clips.size());
  const Index jd = clips.front()->text.dim();
  const Index cd = clips.front()->text_condition.size();
  b.v.resize(n, jd);
  b.t.resize(n, jd);
  b.d.resize(n, jd);
  b.cond.resize(n, cd);
  for (Index i = 0; i < n; ++i) {
    const auto& r = *clips[static_cast<size_t>(i)];
    b.v.row(i) = r.image.values.transpose();
    b.t.row(i) = r.text.values.transpose();
    b.d.row(i) = r.depth.values.transpose();
    b.cond.row(i) = Eigen::Map<const RowVector>(r.text_condition.data(), cd);
    b.eeg.push_back(&r.eeg);
  }
  return b;
}

struct BatchLoss {
  Var projection, joint, alignment, total;
};

BatchLoss batch_loss(Graph& g, const BatchTensors& b, enc::SemanticEncoder& encoder, SemanticPredictor& predictor,
                     TemperatureSet& temps, const SemanticTrainConfig& cfg) {
  Var e_s = encoder.encode(g, b.eeg);
  Var v = g.constant(b.v), t = g.constant(b.t), d = g.constant(b.d), cond = g.constant(b.cond);
  BatchLoss out;
  out.projection = projection_loss(e_s, t);
  out.joint = joint_loss(e_s, v, t, d, cfg.alpha, temps.bind(g), cfg.bidirectional);
  out.alignment = alignment_loss(predictor, g, e_s, cond);
  out.total = semantic_total_loss(out.projection, out.joint, out.alignment, cfg.weights);
  return out;
}

std::vector<std::vector<const data::ClipRecord*>> make_batches(const std::vector<const data::ClipRecord*>& clips,
                                                               int batch_size) {
  std::vector<std::vector<const data::ClipRecord*>> out;
  for (std::size_t i = 0; i < clips.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(clips.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(clips.begin() + static_cast<std::ptrdiff_t>(i), clips.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void validate_config(const SemanticTrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("semantic: epochs >= 0 and batch_size >= 1 required");
  if (cfg.lr < 0.0) throw ConfigError("semantic: lr must be >= 0");
  if (cfg.weights.lambda < 0.0 || cfg.weights.mu < 0.0) throw ConfigError("semantic: lambda and mu must be >= 0");
  if (cfg.alpha.alpha1 < 0.0 || cfg.alpha.alpha2 < 0.0 || cfg.alpha.alpha3 < 0.0) {
    throw ConfigError("semantic: alpha weights must be >= 0");
  }
}

}  // namespace

LossParts evaluate_semantic(const std::vector<const data::ClipRecord*>& clips, enc::SemanticEncoder& encoder,
                            SemanticPredictor& predictor, TemperatureSet& temps, const SemanticTrainConfig& cfg) {
  LossParts parts;
  if (clips.empty()) return parts;
  double n = 0.0;
  for (const auto& batch : make_batches(clips, cfg.batch_size)) {
    Graph g;
    BatchLoss l = batch_loss(g, gather(batch), encoder, predictor, temps, cfg);
    const auto w = static_cast<double>(batch.size());
    parts.projection += l.projection.scalar() * w;
    parts.joint += l.joint.scalar() * w;
    parts.alignment += l.alignment.scalar() * w;
    n += w;
  }
  parts.projection /= n;
  parts.joint /= n;
  parts.alignment /= n;
  return parts;
}

TrainedSemanticState train_semantic(const data::DatasetManifest& manifest, enc::SemanticEncoder& encoder,
                                    SemanticPredictor& predictor, TemperatureSet& temps,
                                    const SemanticTrainConfig& cfg) {
  validate_config(cfg);
  validate(manifest);
  if (encoder.output_dim() != manifest.dims.joint_dim) {
    throw ShapeError("train_semantic: encoder output " + std::to_string(encoder.output_dim()) + " != joint_dim " +
                     std::to_string(manifest.dims.joint_dim));
  }
  if (predictor.tokens() != manifest.dims.cond_tokens || predictor.cond_dim() != manifest.dims.cond_dim) {
    throw ShapeError("train_semantic: predictor shape does not match the manifest's text condition");
  }

  nn::ParamList params = encoder.parameters();
  for (auto* p : predictor.parameters()) params.push_back(p);
  nn::ParamList trainable = params;
  for (auto* p : temps.parameters()) {
    params.push_back(p);
    if (cfg.learn_tau) trainable.push_back(p);
  }
  nn::Adam opt(trainable, nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  const auto [fit_idx, val_idx] = split_validation(manifest, cfg.val_fraction, cfg.seed);
  if (fit_idx.empty()) throw EmptyInputError("train_semantic: no training clips");
  std::vector<const data::ClipRecord*> fit, val;
  for (auto i : fit_idx) fit.push_back(&manifest.records[i]);
  for (auto i : val_idx) val.push_back(&manifest.records[i]);

  TrainedSemanticState state;
  state.best_params = nn::snapshot(params);
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<const data::ClipRecord*> order = fit;
    std::mt19937_64 rng(derive_seed(cfg.seed, "semantic-epoch:" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    SemanticEpoch rec;
    rec.epoch = epoch;
    double seen = 0.0;
    int batch_no = 0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      Graph g;
      opt.zero_grad();
      BatchLoss l = batch_loss(g, gather(batch), encoder, predictor, temps, cfg);
      if (!std::isfinite(l.total.scalar())) throw DivergenceError("train_semantic", epoch, batch_no);
      g.backward(l.total);
      opt.step();
      const auto w = static_cast<double>(batch.size());
      rec.projection += l.projection.scalar() * w;
      rec.joint += l.joint.scalar() * w;
      rec.alignment += l.alignment.scalar() * w;
      seen += w;
      ++batch_no;
    }
    rec.projection /= seen;
    rec.joint /= seen;
    rec.alignment /= seen;
    rec.total = semantic_total_loss({rec.projection, rec.joint, rec.alignment}, cfg.weights);
    if (!val.empty()) {
      rec.val_total = semantic_total_loss(evaluate_semantic(val, encoder, predictor, temps, cfg), cfg.weights);
    } else {
      rec.val_total = rec.total;
    }
    if (!std::isfinite(rec.val_total)) throw DivergenceError("train_semantic(validation)", epoch, -1);
    state.curve.push_back(rec);
    if (rec.val_total < best) {
      best = rec.val_total;
      state.best_epoch = epoch;
      state.best_val_total = rec.val_total;
      state.best_params = nn::snapshot(params);
    }
  }
  state.final_params = nn::snapshot(params);
  nn::restore(params, state.best_params);
  return state;
}

}  // namespace mindcine::sem
