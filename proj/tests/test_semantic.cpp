#include "mindcine/semantic.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mindcine;
using namespace mindcine::sem;
using mindcine::testing::gradient_check;
using mindcine::testing::random_matrix;

namespace {

// Literal double-sum recomputation with explicit loops.
double softclip_oracle(const Matrix& pred, const Matrix& target, double tau, bool bidirectional, bool mean) {
  const Index b = pred.rows();
  auto unit = [](const Matrix& m) {
    Matrix out = m;
    for (Index i = 0; i < m.rows(); ++i) {
      double n = 0.0;
      for (Index k = 0; k < m.cols(); ++k) n += m(i, k) * m(i, k);
      n = std::sqrt(n);
      for (Index k = 0; k < m.cols(); ++k) out(i, k) = m(i, k) / n;
    }
    return out;
  };
  const Matrix p_ = unit(pred), t_ = unit(target);
  auto dot = [&](const Matrix& a, Index i, const Matrix& c, Index j) {
    double s = 0.0;
    for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * c(j, k);
    return s / tau;
  };
  double fwd = 0.0, bwd = 0.0;
  for (Index i = 0; i < b; ++i) {
    double zp = 0.0, zq = 0.0, zr = 0.0;
    for (Index j = 0; j < b; ++j) {
      zp += std::exp(dot(t_, i, t_, j));
      zq += std::exp(dot(p_, i, t_, j));
      zr += std::exp(dot(p_, j, t_, i));
    }
    for (Index j = 0; j < b; ++j) {
      const double p = std::exp(dot(t_, i, t_, j)) / zp;
      fwd -= p * std::log(std::exp(dot(p_, i, t_, j)) / zq);
      bwd -= p * std::log(std::exp(dot(p_, j, t_, i)) / zr);
    }
  }
  double total = bidirectional ? 0.5 * (fwd + bwd) : fwd;
  return mean ? total / static_cast<double>(b) : total;
}

double softmax_entropy_1_0() {
  const double a = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double c = 1.0 - a;
  return -(a * std::log(a) + c * std::log(c));
}

}  // namespace

TEST_CASE("SoftCLIP degenerate and hand-derived cases", "[semantic]") {
  std::mt19937_64 rng(1);
  SECTION("B = 1 is exactly zero") {
    const Matrix e = random_matrix(1, 4, rng);
    CHECK(softclip_loss(random_matrix(1, 4, rng), e, 0.07, true) == 0.0);
    CHECK(softclip_loss(random_matrix(1, 4, rng), e, 0.5, false, Reduction::Sum) == 0.0);
  }
  SECTION("B = 2 orthonormal targets, pred = target, tau = 1") {
    const Matrix id = Matrix::Identity(2, 2);
    const double oracle_sum = softclip_oracle(id, id, 1.0, false, false);
    CHECK(oracle_sum == Catch::Approx(2.0 * softmax_entropy_1_0()).margin(1e-12));
    CHECK(oracle_sum == Catch::Approx(1.1644).margin(1e-4));
    CHECK(std::abs(softclip_loss(id, id, 1.0, false, Reduction::Sum) - oracle_sum) < 1e-12);
    CHECK(std::abs(softclip_loss(id, id, 1.0, true, Reduction::Sum) - oracle_sum) < 1e-12);
    CHECK(std::abs(softclip_loss(id, id, 1.0, true, Reduction::Mean) - oracle_sum / 2.0) < 1e-12);
  }
  SECTION("random batches agree with the loop oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix p = random_matrix(4, 6, rng), t = random_matrix(4, 6, rng);
      const double tau = 0.05 + 0.2 * trial / 20.0;
      for (bool bi : {false, true}) {
        CHECK(softclip_loss(p, t, tau, bi) == Catch::Approx(softclip_oracle(p, t, tau, bi, true)).epsilon(1e-10));
        CHECK(softclip_loss(p, t, tau, bi, Reduction::Sum) ==
              Catch::Approx(softclip_oracle(p, t, tau, bi, false)).epsilon(1e-10));
      }
    }
  }
  SECTION("input validation") {
    CHECK_THROWS_AS(softclip_loss(Matrix(0, 3), Matrix(0, 3), 1.0, true), EmptyInputError);
    CHECK_THROWS_AS(softclip_loss(Matrix::Ones(2, 3), Matrix::Ones(3, 3), 1.0, true), ShapeError);
    CHECK_THROWS_AS(softclip_loss(Matrix::Ones(2, 3), Matrix::Ones(2, 3), 0.0, true), ConfigError);
  }
}

TEST_CASE("SoftCLIP Gibbs bound and non-negativity", "[semantic][property]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix e = random_matrix(4, 5, rng);
    const Matrix other = random_matrix(4, 5, rng);
    for (bool bi : {false, true}) {
      const double self = softclip_loss(e, e, 0.1, bi);
      const double cross = softclip_loss(other, e, 0.1, bi);
      CHECK(self <= cross + 1e-12);
      CHECK(self >= 0.0);
    }
  }
}

TEST_CASE("row softmax is shift invariant", "[semantic][property]") {
  std::mt19937_64 rng(3);
  const Matrix logits = random_matrix(3, 4, rng);
  Matrix shifted = logits;
  shifted.row(1).array() += 17.25;
  ad::Graph g;
  const Matrix a = ad::row_softmax(g.constant(logits)).value();
  const Matrix b = ad::row_softmax(g.constant(shifted)).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("joint loss weights", "[semantic]") {
  std::mt19937_64 rng(4);
  const Matrix e = random_matrix(3, 4, rng), v = random_matrix(3, 4, rng), t = random_matrix(3, 4, rng),
               d = random_matrix(3, 4, rng);
  auto run = [&](JointLossWeights w) {
    Graph g;
    Var ls = g.constant(Matrix::Constant(1, 1, std::log(1.0 / 0.2)));
    return joint_loss(g.constant(e), g.constant(v), g.constant(t), g.constant(d), w, {ls, ls, ls}, true).scalar();
  };
  CHECK(JointLossWeights{}.alpha1 == 1.0 / 3.0);
  CHECK(JointLossWeights{}.alpha3 == 1.0 / 3.0);
  CHECK(run({0, 0, 0}) == 0.0);
  CHECK(run({1, 0, 0}) == softclip_loss(e, v, 0.2, true));
  CHECK(run({0, 1, 0}) == softclip_loss(e, t, 0.2, true));
  const double mean3 = (softclip_oracle(e, v, 0.2, true, true) + softclip_oracle(e, t, 0.2, true, true) +
                        softclip_oracle(e, d, 0.2, true, true)) /
                       3.0;
  CHECK(run({}) == Catch::Approx(mean3).epsilon(1e-10));
  CHECK_THROWS_AS(run({-1, 0, 0}), ConfigError);
}

TEST_CASE("projection and alignment losses", "[semantic]") {
  std::mt19937_64 rng(5);
  SECTION("projection") {
    Graph g;
    const Matrix t = random_matrix(3, 4, rng);
    CHECK(projection_loss(g.constant(t), g.constant(t)).scalar() == 0.0);
    const Matrix ones_diff = t.topRows(1) + Matrix::Ones(1, 4);
    CHECK(projection_loss(g.constant(ones_diff), g.constant(t.topRows(1))).scalar() == Catch::Approx(4.0).margin(1e-12));
    const Matrix e = random_matrix(3, 4, rng);
    double oracle = 0.0;
    for (Index i = 0; i < 3; ++i)
      for (Index k = 0; k < 4; ++k) oracle += (e(i, k) - t(i, k)) * (e(i, k) - t(i, k));
    CHECK(projection_loss(g.constant(e), g.constant(t), Reduction::Sum).scalar() ==
          Catch::Approx(oracle).epsilon(1e-14));
    CHECK(projection_loss(g.constant(e), g.constant(t)).scalar() == Catch::Approx(oracle / 3).epsilon(1e-14));
    CHECK_THROWS_AS(projection_loss(g.constant(e), g.constant(t.leftCols(3))), ShapeError);
  }
  SECTION("alignment") {
    SemanticPredictor pred(4, 2, 3, rng);
    Graph g;
    const Matrix e_s = random_matrix(2, 4, rng);
    Matrix e_t = random_matrix(2, 6, rng);
    e_t.row(0).normalize();
    e_t.row(1).normalize();
    pred.linear().weight.value.setZero();
    pred.linear().bias.value.setZero();
    CHECK(alignment_loss(pred, g, g.constant(e_s), g.constant(e_t)).scalar() == Catch::Approx(1.0).margin(1e-12));
    pred.linear().bias.value = e_t.row(0);
    CHECK(alignment_loss(pred, g, g.constant(e_s.topRows(1)), g.constant(e_t.topRows(1))).scalar() == 0.0);
    const Matrix shaped = pred.predict(data::Embedding{data::Modality::EegSemantic, e_s.row(0).transpose()});
    CHECK(shaped.rows() == 2);
    CHECK(shaped.cols() == 3);
    CHECK(shaped(1, 2) == Catch::Approx(e_t(0, 5)));
  }
}

TEST_CASE("total semantic loss", "[semantic]") {
  const SemanticLossWeights w;
  CHECK(w.lambda == 0.01);
  CHECK(w.mu == 0.5);
  CHECK(semantic_total_loss({1.0, 2.0, 3.0}, w) == Catch::Approx(2.52).margin(1e-12));
  CHECK(semantic_total_loss({1.5, 2.0, 3.0}, {0.0, 0.0}) == 1.5);
  Graph g;
  auto c = [&](double x) { return g.constant(Matrix::Constant(1, 1, x)); };
  CHECK(semantic_total_loss(c(1.0), c(2.0), c(3.0), w).scalar() == Catch::Approx(2.52).margin(1e-12));
}

TEST_CASE("semantic losses match central differences", "[semantic][gradient]") {
  std::mt19937_64 rng(6);
  ad::Parameter e_s("e_s", random_matrix(4, 6, rng));
  ad::Parameter v("v", random_matrix(4, 6, rng));
  ad::Parameter t("t", random_matrix(4, 6, rng));
  ad::Parameter d("d", random_matrix(4, 6, rng));
  ad::Parameter ls("ls", Matrix::Constant(1, 1, std::log(1.0 / 0.3)));
  for (bool bi : {false, true}) {
    for (auto red : {Reduction::Mean, Reduction::Sum}) {
      CHECK(gradient_check([&](Graph& g) { return softclip_loss(g.param(e_s), g.param(v), g.param(ls), bi, red); },
                           {&e_s, &v, &ls}) < 1e-4);
    }
  }
  CHECK(gradient_check(
            [&](Graph& g) {
              Var l = g.param(ls);
              return joint_loss(g.param(e_s), g.param(v), g.param(t), g.param(d), {0.2, 0.5, 0.3}, {l, l, l}, true);
            },
            {&e_s, &v, &t, &d, &ls}) < 1e-4);
  CHECK(gradient_check([&](Graph& g) { return projection_loss(g.param(e_s), g.param(t)); }, {&e_s, &t}) < 1e-4);

  SemanticPredictor pred(6, 2, 4, rng);
  const Matrix e_t = random_matrix(4, 8, rng);
  auto params = pred.parameters();
  params.push_back(&e_s);
  CHECK(gradient_check([&](Graph& g) { return alignment_loss(pred, g, g.param(e_s), g.constant(e_t)); }, params) <
        1e-4);

  CHECK(gradient_check(
            [&](Graph& g) {
              Var es = g.param(e_s);
              Var l = g.param(ls);
              return semantic_total_loss(projection_loss(es, g.param(t)),
                                         joint_loss(es, g.param(v), g.param(t), g.param(d), {}, {l, l, l}, true),
                                         alignment_loss(pred, g, es, g.constant(e_t)), {});
            },
            {&e_s, &v, &t, &d, &ls}) < 1e-4);
}

TEST_CASE("temperature parameterization", "[semantic]") {
  SoftClipParams p(0.07);
  CHECK(p.tau() == Catch::Approx(0.07).epsilon(1e-12));
  CHECK(p.log_scale.value(0, 0) == Catch::Approx(std::log(1.0 / 0.07)));
  CHECK_THROWS_AS(p.set_tau(-1.0), ConfigError);
  SemanticTrainConfig cfg;
  CHECK(make_temperatures(cfg).params.size() == 1);
  cfg.shared_tau = false;
  CHECK(make_temperatures(cfg).params.size() == 3);
}

TEST_CASE("semantic training loop", "[semantic][training]") {
  const auto m = data::generate_synthetic(testing::tiny_data_config(), 5);
  const auto& d = m.dims;
  auto make = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto enc = std::make_unique<enc::MlpEncoder>(
        enc::MlpConfig{.channels = d.channels, .samples = d.samples, .hidden = {16, 16}, .joint_dim = d.joint_dim},
        rng);
    auto pred = std::make_unique<SemanticPredictor>(d.joint_dim, d.cond_tokens, d.cond_dim, rng);
    return std::make_pair(std::move(enc), std::move(pred));
  };
  SemanticTrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.val_fraction = 0.25;

  SECTION("loss falls over the first epochs") {
    auto [enc, pred] = make(1);
    auto temps = make_temperatures(cfg);
    const auto st = train_semantic(m, *enc, *pred, temps, cfg);
    REQUIRE(st.curve.size() == 8);
    CHECK(st.curve[5].total < st.curve[0].total);
    int rises = 0;
    for (int e = 1; e <= 5; ++e) rises += st.curve[static_cast<size_t>(e)].total > st.curve[static_cast<size_t>(e - 1)].total;
    CHECK(rises <= 1);
    CHECK(st.best_epoch >= 0);
  }
  SECTION("zero learning rate leaves parameters unchanged") {
    auto [enc, pred] = make(2);
    auto temps = make_temperatures(cfg);
    nn::ParamList all = enc->parameters();
    for (auto* p : pred->parameters()) all.push_back(p);
    for (auto* p : temps.parameters()) all.push_back(p);
    const auto before = nn::snapshot(all);
    auto zero = cfg;
    zero.lr = 0.0;
    zero.epochs = 2;
    train_semantic(m, *enc, *pred, temps, zero);
    for (size_t i = 0; i < all.size(); ++i) CHECK(all[i]->value == before[i]);
  }
  SECTION("same seed twice gives identical curves") {
    auto short_cfg = cfg;
    short_cfg.epochs = 3;
    auto [e1, p1] = make(3);
    auto t1 = make_temperatures(short_cfg);
    const auto a = train_semantic(m, *e1, *p1, t1, short_cfg);
    auto [e2, p2] = make(3);
    auto t2 = make_temperatures(short_cfg);
    const auto b = train_semantic(m, *e2, *p2, t2, short_cfg);
    for (size_t i = 0; i < a.curve.size(); ++i) {
      CHECK(a.curve[i].total == b.curve[i].total);
      CHECK(a.curve[i].val_total == b.curve[i].val_total);
    }
    REQUIRE(a.final_params.size() == b.final_params.size());
    for (size_t i = 0; i < a.final_params.size(); ++i) CHECK(a.final_params[i] == b.final_params[i]);
  }
  SECTION("stratified hold-out") {
    const auto [fit, val] = split_validation(m, 0.25, 9);
    CHECK(fit.size() + val.size() == m.indices(data::Split::Train).size());
    std::map<int, int> per_class;
    for (auto i : val) per_class[m.records[i].concept_label]++;
    CHECK(per_class.size() == static_cast<size_t>(m.concepts));
    for (const auto& [k, n] : per_class) CHECK(n == per_class.begin()->second);
  }
}
