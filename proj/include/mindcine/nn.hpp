#pragma once

// Small trainable building blocks on top of the autodiff graph, plus Adam.

#include "mindcine/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace mindcine::nn {

using ad::Graph;
using ad::Parameter;
using ad::Var;

using ParamList = std::vector<Parameter*>;

/// Gaussian init scaled by 1/sqrt(fan_in).
Matrix init_weight(Index fan_in, Index fan_out, std::mt19937_64& rng, double gain = 1.0);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, double gain = 1.0);

  Var forward(Graph& g, const Var& x);
  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }
  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Per-row layer normalization with learnable gain and bias.
struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim);
  Var forward(Graph& g, const Var& x);
  void collect(ParamList& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);
  void zero_grad();
  void step();
  const AdamConfig& config() const { return cfg_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
};

Index count_parameters(const ParamList& params);

/// Copies parameter values (used for best-epoch snapshots).
std::vector<Matrix> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<Matrix>& values);

}  // namespace mindcine::nn
