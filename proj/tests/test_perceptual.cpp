#include "mindcine/perceptual.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace mindcine;
using namespace mindcine::perc;
using mindcine::testing::gradient_check;
using mindcine::testing::random_matrix;

namespace {

CausalSeqConfig small_config(Index frames, PositionalKind pe = PositionalKind::Sinusoidal) {
  return {.frames = frames, .input_dim = 5, .latent_dim = 3, .d_model = 8, .heads = 2, .layers = 2, .ffn = 12,
          .qk_norm = true, .positional = pe, .decoder = DecoderMode::Autoregressive};
}

Matrix permute_rows(const Matrix& m, const std::vector<Index>& order) {
  Matrix out(m.rows(), m.cols());
  for (size_t i = 0; i < order.size(); ++i) out.row(static_cast<Index>(i)) = m.row(order[i]);
  return out;
}

}  // namespace

TEST_CASE("causal mask", "[perceptual]") {
  CHECK(causal_mask(1)(0, 0));
  const Mask m3 = causal_mask(3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(m3(i, j) == (j <= i));
  for (Index t = 1; t <= 16; ++t) {
    Index allowed = 0;
    const Mask m = causal_mask(t);
    for (Index i = 0; i < t; ++i)
      for (Index j = 0; j < t; ++j) allowed += m(i, j) ? 1 : 0;
    CHECK(allowed == t * (t + 1) / 2);
  }
}

TEST_CASE("single-head attention", "[perceptual]") {
  std::mt19937_64 rng(1);
  SECTION("one position returns v with weight 1") {
    Graph g;
    const Matrix v = random_matrix(1, 3, rng);
    const auto r = attention(g.constant(random_matrix(1, 4, rng)), g.constant(random_matrix(1, 4, rng)),
                             g.constant(v), nullptr, true);
    CHECK(r.weights(0, 0) == 1.0);
    CHECK(r.output.value() == v);
  }
  SECTION("t = 2, d = 2 against a hand softmax") {
    Matrix q(2, 2), k(2, 2), v(2, 2);
    q << 0.3, -1.2, 0.8, 0.5;
    k << 1.0, 0.2, -0.4, 0.9;
    v << 1.0, 2.0, 3.0, 4.0;
    Graph g;
    const auto r = attention(g.constant(q), g.constant(k), g.constant(v), nullptr, false);
    const double s = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < 2; ++i) {
      const double a = std::exp(s * (q(i, 0) * k(0, 0) + q(i, 1) * k(0, 1)));
      const double b = std::exp(s * (q(i, 0) * k(1, 0) + q(i, 1) * k(1, 1)));
      CHECK(std::abs(r.weights(i, 0) - a / (a + b)) < 1e-10);
      CHECK(std::abs(r.weights(i, 1) - b / (a + b)) < 1e-10);
      CHECK(std::abs(r.output.value()(i, 1) - (2.0 * a + 4.0 * b) / (a + b)) < 1e-10);
    }
    const Mask m = causal_mask(2);
    const auto rm = attention(g.constant(q), g.constant(k), g.constant(v), &m, false);
    CHECK(rm.weights(0, 1) == 0.0);
    CHECK(rm.weights(0, 0) == 1.0);
  }
  SECTION("qk norm removes positive rescaling of queries and keys") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix q = random_matrix(5, 6, rng), k = random_matrix(5, 6, rng), v = random_matrix(5, 2, rng);
      Graph g;
      const Mask m = causal_mask(5);
      const auto base = attention(g.constant(q), g.constant(k), g.constant(v), &m, true);
      const auto sq = attention(g.constant(3.0 * q), g.constant(k), g.constant(v), &m, true);
      const auto sk = attention(g.constant(q), g.constant(0.25 * k), g.constant(v), &m, true);
      CHECK((base.weights - sq.weights).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((base.weights - sk.weights).cwiseAbs().maxCoeff() < 1e-6);
      for (Index i = 0; i < 5; ++i) {
        CHECK(std::abs(base.weights.row(i).sum() - 1.0) < 1e-6);
        CHECK(base.weights.row(i).minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("decoder outputs before j ignore inputs at and after j", "[perceptual][causality]") {
  std::mt19937_64 rng(2);
  for (Index t = 1; t <= 8; ++t) {
    for (Index layers = 1; layers <= 3; ++layers) {
      auto cfg = small_config(t);
      cfg.layers = layers;
      CausalSeqModel model(cfg, rng);
      const Index batch = 2;
      const Matrix memory = random_matrix(batch * t, cfg.d_model, rng);
      const Matrix inputs = random_matrix(batch * t, cfg.d_model, rng);
      Matrix base;
      std::vector<Matrix> weights;
      {
        Graph g;
        base = model.decode(g, g.constant(memory), g.constant(inputs), batch, &weights).value();
      }
      for (const auto& w : weights) {
        for (Index i = 0; i < w.rows(); ++i) {
          CHECK(std::abs(w.row(i).sum() - 1.0) < 1e-6);
          CHECK(w.row(i).minCoeff() >= 0.0);
        }
      }
      for (Index j = 1; j < t; ++j) {
        for (int trial = 0; trial < 3; ++trial) {
          Matrix perturbed = inputs;
          for (Index b = 0; b < batch; ++b)
            for (Index p = j; p < t; ++p) perturbed.row(b * t + p) += random_matrix(1, cfg.d_model, rng, 5.0);
          Graph g;
          const Matrix out = model.decode(g, g.constant(memory), g.constant(perturbed), batch).value();
          for (Index b = 0; b < batch; ++b) {
            CHECK(out.middleRows(b * t, j) == base.middleRows(b * t, j));
            CHECK(out.row(b * t + j) != base.row(b * t + j));
          }
        }
      }
    }
  }
}

TEST_CASE("masked self-attention weights are exactly zero above the diagonal", "[perceptual][causality]") {
  std::mt19937_64 rng(3);
  const Index t = 6;
  auto cfg = small_config(t);
  cfg.layers = 1;
  CausalSeqModel model(cfg, rng);
  std::vector<Matrix> weights;
  Graph g;
  model.decode(g, g.constant(random_matrix(t, cfg.d_model, rng)), g.constant(random_matrix(t, cfg.d_model, rng)), 1,
               &weights);
  // One layer, two heads: self-attention (2 matrices) then cross-attention (2 matrices).
  REQUIRE(weights.size() == 4);
  for (int h = 0; h < 2; ++h) {
    for (Index i = 0; i < t; ++i)
      for (Index j = i + 1; j < t; ++j) CHECK(weights[static_cast<size_t>(h)](i, j) == 0.0);
  }
  CHECK(weights[2](0, t - 1) > 0.0);
}

TEST_CASE("autoregressive generation only looks backwards", "[perceptual][causality]") {
  std::mt19937_64 rng(4);
  const Index t = 5;
  CausalSeqModel model(small_config(t), rng);
  const Matrix e_p = random_matrix(t, 5, rng);
  const Matrix z = model.generate(e_p, 1);
  CHECK(z.rows() == t);
  CHECK(z.cols() == 3);

  // Feeding the generated sequence back with teacher forcing reproduces it exactly.
  Graph g;
  const Matrix tf = model.forward_train(g, g.constant(e_p), z, 1).value();
  CHECK((tf - z).cwiseAbs().maxCoeff() < 1e-12);

  SECTION("t = 1") {
    CausalSeqModel one(small_config(1), rng);
    std::vector<data::Embedding> seq{{data::Modality::Perceptual, random_matrix(5, 1, rng).col(0)}};
    CHECK(one.causalseq_forward(seq).rows() == 1);
  }
  SECTION("sequence length is checked") {
    std::vector<data::Embedding> seq(3, {data::Modality::Perceptual, Vector::Zero(5)});
    CHECK_THROWS_AS(model.causalseq_forward(seq), ShapeError);
  }
}

TEST_CASE("positional encoding breaks permutation equivariance", "[perceptual]") {
  std::mt19937_64 rng(5);
  const Index t = 6;
  const std::vector<Index> order{3, 0, 5, 1, 4, 2};
  const Matrix e_p = random_matrix(t, 5, rng);
  const Matrix e_perm = permute_rows(e_p, order);

  std::mt19937_64 r1(9), r2(9);
  CausalSeqModel plain(small_config(t, PositionalKind::None), r1);
  CausalSeqModel with_pe(small_config(t, PositionalKind::Sinusoidal), r2);

  Graph g;
  const Matrix enc = plain.encode(g, g.constant(e_p), 1).value();
  const Matrix enc_perm = plain.encode(g, g.constant(e_perm), 1).value();
  CHECK((permute_rows(enc, order) - enc_perm).cwiseAbs().maxCoeff() < 1e-12);

  const Matrix pe = with_pe.encode(g, g.constant(e_p), 1).value();
  const Matrix pe_perm = with_pe.encode(g, g.constant(e_perm), 1).value();
  CHECK((permute_rows(pe, order) - pe_perm).cwiseAbs().maxCoeff() > 1e-3);

  // Mean over positions of the encoder memory: invariant without PE only.
  CHECK((enc.colwise().mean() - enc_perm.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((pe.colwise().mean() - pe_perm.colwise().mean()).cwiseAbs().maxCoeff() > 1e-3);

  const Matrix table = sinusoidal_table(4, 6);
  CHECK(table(0, 0) == 0.0);
  CHECK(table(0, 1) == 1.0);
  CHECK(table(2, 0) == Catch::Approx(std::sin(2.0)));
  CHECK(table(3, 3) == Catch::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 6.0))));
}

TEST_CASE("perception loss", "[perceptual]") {
  std::mt19937_64 rng(6);
  const Matrix gt = random_matrix(2, 3, rng);
  CHECK(perception_loss(gt, gt, 1) == 0.0);
  CHECK(perception_loss(gt + Matrix::Ones(2, 3), gt, 1) == Catch::Approx(6.0).margin(1e-12));
  const Matrix a = random_matrix(8, 3, rng), b = random_matrix(8, 3, rng);
  double oracle = 0.0;
  for (Index i = 0; i < 8; ++i)
    for (Index k = 0; k < 3; ++k) oracle += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
  CHECK(perception_loss(a, b, 2) == Catch::Approx(oracle / 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(perception_loss(a, b.topRows(4), 2), ShapeError);
}

TEST_CASE("CausalSeq gradients match central differences", "[perceptual][gradient]") {
  std::mt19937_64 rng(7);
  for (auto pe : {PositionalKind::Sinusoidal, PositionalKind::Learned}) {
    for (auto mode : {DecoderMode::Autoregressive, DecoderMode::Parallel}) {
      auto cfg = small_config(3, pe);
      cfg.decoder = mode;
      CausalSeqModel model(cfg, rng);
      const Index batch = 2;
      const Matrix e_p = random_matrix(batch * 3, 5, rng);
      const Matrix gt = random_matrix(batch * 3, 3, rng);
      const Matrix w = random_matrix(batch * 3, 3, rng);
      const double err = gradient_check(
          [&](Graph& g) {
            return ad::sum(ad::hadamard(model.forward_train(g, g.constant(e_p), gt, batch), g.constant(w)));
          },
          model.parameters());
      CHECK(err < 1e-3);
      const double loss_err = gradient_check(
          [&](Graph& g) {
            return perception_loss(model.forward_train(g, g.constant(e_p), gt, batch), g.constant(gt), batch);
          },
          model.parameters());
      CHECK(loss_err < 1e-3);
    }
  }
}

TEST_CASE("perceptual training", "[perceptual][training]") {
  const auto m = data::generate_synthetic(testing::tiny_data_config(), 5);
  const auto& d = m.dims;
  const enc::EmbedNetConfig ecfg{.channels = d.channels, .window = d.window, .temporal_filters = 2,
                                 .temporal_kernel = 5, .spatial_filters = 4, .pool = 4, .embed_dim = 8};
  const CausalSeqConfig ccfg{.frames = d.frames, .input_dim = 8, .latent_dim = d.latent_dim, .d_model = 16,
                             .heads = 2, .layers = 1, .ffn = 32};
  PerceptualTrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 4;
  cfg.lr = 3e-3;
  cfg.val_fraction = 0.25;

  SECTION("training loss drops below a tenth of its first-epoch value") {
    std::mt19937_64 rng(1);
    enc::EmbedNet net(ecfg, rng);
    CausalSeqModel model(ccfg, rng);
    const auto st = train_perceptual(m, net, model, cfg);
    REQUIRE(st.curve.size() == 60);
    double best = st.curve.front().train_loss;
    for (const auto& e : st.curve) best = std::min(best, e.train_loss);
    CHECK(best < 0.1 * st.curve.front().train_loss);
  }
  SECTION("zero learning rate leaves parameters unchanged") {
    std::mt19937_64 rng(2);
    enc::EmbedNet net(ecfg, rng);
    CausalSeqModel model(ccfg, rng);
    nn::ParamList all = net.parameters();
    for (auto* p : model.parameters()) all.push_back(p);
    const auto before = nn::snapshot(all);
    auto zero = cfg;
    zero.lr = 0.0;
    zero.epochs = 2;
    train_perceptual(m, net, model, zero);
    for (size_t i = 0; i < all.size(); ++i) CHECK(all[i]->value == before[i]);
  }
  SECTION("same seed twice gives identical curves") {
    auto short_cfg = cfg;
    short_cfg.epochs = 3;
    std::mt19937_64 r1(3), r2(3);
    enc::EmbedNet n1(ecfg, r1), n2(ecfg, r2);
    CausalSeqModel m1(ccfg, r1), m2(ccfg, r2);
    const auto a = train_perceptual(m, n1, m1, short_cfg);
    const auto b = train_perceptual(m, n2, m2, short_cfg);
    for (size_t i = 0; i < a.curve.size(); ++i) {
      CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
      CHECK(a.curve[i].val_loss == b.curve[i].val_loss);
    }
  }
  SECTION("frame cosine") {
    const Matrix a = Matrix::Identity(2, 3);
    CHECK(mean_frame_cosine(a, a) == Catch::Approx(1.0));
    CHECK(mean_frame_cosine(a, -a) == Catch::Approx(-1.0));
  }
}
