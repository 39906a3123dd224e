#pragma once

#include "mindcine/dataset.hpp"
#include "mindcine/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace mindcine::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Matrix uniform_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

using LossFn = std::function<ad::Var(ad::Graph&)>;

/// Max over every parameter entry of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// numeric from central differences with step h.
inline double gradient_check(const LossFn& loss, const nn::ParamList& params, double h = 1e-5, double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Graph g;
    ad::Var l = loss(g);
    g.backward(l);
  }
  double worst = 0.0;
  for (auto* p : params) {
    const Matrix analytic = p->grad;
    for (Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      double up, down;
      {
        ad::Graph g;
        up = loss(g).scalar();
      }
      p->value.data()[i] = keep - h;
      {
        ad::Graph g;
        down = loss(g).scalar();
      }
      p->value.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto* p : params) p->zero_grad();
  return worst;
}

/// Small synthetic config that generates in well under a second.
inline data::SyntheticConfig tiny_data_config() {
  data::SyntheticConfig c;
  c.dims.channels = 4;
  c.dims.samples = 40;
  c.dims.frames = 3;
  c.dims.window = 20;
  c.dims.joint_dim = 8;
  c.dims.latent_dim = 4;
  c.dims.cond_tokens = 2;
  c.dims.cond_dim = 4;
  c.concepts = 4;
  c.blocks = 3;
  c.clips_per_block = 8;
  c.code_dim = 6;
  c.text_rank = 2;
  return c;
}

}  // namespace mindcine::testing
