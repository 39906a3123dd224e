#include "mindcine/nn.hpp"

#include <cmath>

namespace mindcine::nn {

Matrix init_weight(Index fan_in, Index fan_out, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  return w;
}

Linear::Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, double gain)
    : weight(name + ".weight", init_weight(in, out, rng, gain)), bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::forward(Graph& g, const Var& x) {
  if (x.cols() != weight.value.rows()) {
    throw ShapeError(weight.name + ": input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(weight.value.rows()));
  }
  return ad::add_row(ad::matmul(x, g.param(weight)), g.param(bias));
}

LayerNorm::LayerNorm(const std::string& name, Index dim)
    : gain(name + ".gain", Matrix::Ones(1, dim)), bias(name + ".bias", Matrix::Zero(1, dim)) {}

Var LayerNorm::forward(Graph& g, const Var& x) {
  return ad::add_row(ad::mul_row(ad::layer_norm_rows(x), g.param(gain)), g.param(bias));
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Matrix g = p.grad;
    if (cfg_.weight_decay > 0.0) g += cfg_.weight_decay * p.value;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double lr = cfg_.lr;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

Index count_parameters(const ParamList& params) {
  Index n = 0;
  for (const Parameter* p : params) n += p->size();
  return n;
}

std::vector<Matrix> snapshot(const ParamList& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const ParamList& params, const std::vector<Matrix>& values) {
  if (values.size() != params.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace mindcine::nn
