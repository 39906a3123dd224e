#include "mindcine/inference.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace mindcine;
using namespace mindcine::inf;
using mindcine::testing::random_matrix;

namespace {

// Multiples of 1/64 in [-4, 4]: sums, differences and products by small dyadic
// scales stay exactly representable.
Matrix dyadic_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(-256, 256);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng) / 64.0;
  return m;
}

// Estimator whose output depends on the condition through a fixed table lookup.
struct TableEstimator {
  std::map<double, Matrix> by_key;
  Matrix operator()(const Matrix&, const Condition& c, int) const { return by_key.at(c.semantic(0, 0)); }
};

Condition tagged(double key, Index frames, Index latent) {
  Condition c = zero_condition(3, frames, latent);
  c.semantic(0, 0) = key;
  return c;
}

struct TinyPipeline {
  data::DatasetManifest manifest;
  std::unique_ptr<enc::MlpEncoder> encoder;
  std::unique_ptr<sem::SemanticPredictor> predictor;
  std::unique_ptr<enc::EmbedNet> embednet;
  std::unique_ptr<perc::CausalSeqModel> causalseq;
  std::unique_ptr<ToyDiffusion> diffusion;

  explicit TinyPipeline(int steps = 10) {
    manifest = data::generate_synthetic(testing::tiny_data_config(), 4);
    const auto& d = manifest.dims;
    std::mt19937_64 rng(21);
    encoder = std::make_unique<enc::MlpEncoder>(
        enc::MlpConfig{.channels = d.channels, .samples = d.samples, .hidden = {8}, .joint_dim = d.joint_dim}, rng);
    predictor = std::make_unique<sem::SemanticPredictor>(d.joint_dim, d.cond_tokens, d.cond_dim, rng);
    embednet = std::make_unique<enc::EmbedNet>(
        enc::EmbedNetConfig{.channels = d.channels, .window = d.window, .temporal_filters = 2, .temporal_kernel = 5,
                            .spatial_filters = 3, .pool = 4, .embed_dim = 6},
        rng);
    causalseq = std::make_unique<perc::CausalSeqModel>(
        perc::CausalSeqConfig{.frames = d.frames, .input_dim = 6, .latent_dim = d.latent_dim, .d_model = 8,
                              .heads = 2, .layers = 1, .ffn = 8},
        rng);
    DiffusionConfig dc;
    dc.steps = steps;
    dc.hidden = 16;
    diffusion = std::make_unique<ToyDiffusion>(dc, d.frames, d.latent_dim, d.cond_tokens * d.cond_dim, rng);
  }

  PipelineModels models(bool sem = true, bool perc = true) {
    return {encoder.get(), predictor.get(), embednet.get(), causalseq.get(), diffusion.get(), sem, perc};
  }
};

}  // namespace

TEST_CASE("guidance combinator identities", "[inference][guidance]") {
  std::mt19937_64 rng(1);
  const Index frames = 3, latent = 4;
  for (int trial = 0; trial < 50; ++trial) {
    TableEstimator table;
    table.by_key[0.0] = dyadic_matrix(frames, latent, rng);
    table.by_key[1.0] = dyadic_matrix(frames, latent, rng);
    const FunctionEstimator est(table);
    const Condition c = tagged(1.0, frames, latent), c_bar = tagged(0.0, frames, latent);
    const Matrix z = random_matrix(frames, latent, rng);

    CHECK(guided_score(est, z, c, c_bar, 1.0) == table.by_key[1.0]);
    for (double s : {-2.0, 0.0, 0.5, 3.0, 7.5}) CHECK(guided_score(est, z, c_bar, c_bar, s) == table.by_key[0.0]);
    CHECK(guided_score(est, z, c, c_bar, 0.0) == table.by_key[0.0]);

    const Matrix g0 = guided_score(est, z, c, c_bar, 0.0);
    const Matrix g1 = guided_score(est, z, c, c_bar, 1.0);
    for (double s : {0.25, 2.0, 7.5, -1.5}) {
      CHECK(guided_score(est, z, c, c_bar, s) == Matrix(g0 + s * (g1 - g0)));
    }
    const Matrix ga = guided_score(est, z, c, c_bar, 1.5), gb = guided_score(est, z, c, c_bar, 3.5);
    CHECK(Matrix(0.5 * (ga + gb)) == guided_score(est, z, c, c_bar, 2.5));
  }
}

TEST_CASE("guidance on a scalar estimator", "[inference][guidance]") {
  const FunctionEstimator est([](const Matrix&, const Condition& c, int) {
    return Matrix::Constant(1, 1, c.semantic(0, 0) == 0.0 ? 0.2 : 0.6);
  });
  const Condition c = tagged(1.0, 1, 1), c_bar = tagged(0.0, 1, 1);
  CHECK(guided_score(est, Matrix::Zero(1, 1), c, c_bar, 2.0)(0, 0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(GuidanceConfig{}.scale == 7.5);
  CHECK_THROWS_AS(guided_score(est, Matrix::Zero(1, 1), zero_condition(2, 1, 1), c_bar, 1.0), ShapeError);
}

TEST_CASE("guidance never silently drops the condition", "[inference][guidance][property]") {
  std::mt19937_64 rng(2);
  TinyPipeline tiny;
  const auto& d = tiny.manifest.dims;
  const Index sd = d.cond_tokens * d.cond_dim;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(d.frames, d.latent_dim, rng);
    const Condition c{random_matrix(1, sd, rng), random_matrix(d.frames, d.latent_dim, rng)};
    const Condition c_bar = zero_condition(sd, d.frames, d.latent_dim);
    const int step = trial % tiny.diffusion->schedule().steps();
    const Matrix cond = tiny.diffusion->estimate(z, c, step), uncond = tiny.diffusion->estimate(z, c_bar, step);
    REQUIRE(cond != uncond);
    for (double s : {1.5, 3.0, 7.5}) CHECK(guided_score(*tiny.diffusion, z, c, c_bar, s, step) != uncond);
  }
}

TEST_CASE("noise schedule", "[inference]") {
  const auto s = NoiseSchedule::linear(50, 1e-4, 0.02);
  CHECK(s.steps() == 50);
  for (int i = 1; i < 50; ++i) CHECK(s.alpha_bars[static_cast<size_t>(i)] < s.alpha_bars[static_cast<size_t>(i - 1)]);
  CHECK(s.alpha_bars.front() == Catch::Approx(1.0 - s.betas.front()));
  CHECK_THROWS_AS(NoiseSchedule::linear(0, 1e-4, 0.02), ConfigError);
  std::mt19937_64 rng(3);
  DiffusionConfig dc;
  dc.steps = 51;
  CHECK_THROWS_AS(ToyDiffusion(dc, 2, 2, 2, rng), ConfigError);
}

TEST_CASE("toy diffusion sampling", "[inference]") {
  TinyPipeline tiny(1);
  const auto& d = tiny.manifest.dims;
  const Index sd = d.cond_tokens * d.cond_dim;
  std::mt19937_64 rng(4);
  const Condition c{random_matrix(1, sd, rng), random_matrix(d.frames, d.latent_dim, rng)};

  SECTION("one step returns the predicted clean latent") {
    const GuidanceConfig g{2.0, std::nullopt};
    std::mt19937_64 noise_rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(d.frames, d.latent_dim);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(noise_rng);
    const double ab = tiny.diffusion->schedule().alpha_bars[0];
    const Matrix eps = guided_score(*tiny.diffusion, x, c, zero_condition(sd, d.frames, d.latent_dim), 2.0, 0);
    const Matrix expect = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    CHECK((tiny.diffusion->sample(c, g, 5) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("s = 0 ignores the condition") {
    TinyPipeline multi(8);
    const Condition other{random_matrix(1, sd, rng), random_matrix(d.frames, d.latent_dim, rng)};
    const GuidanceConfig g{0.0, std::nullopt};
    CHECK(multi.diffusion->sample(c, g, 9) == multi.diffusion->sample(other, g, 9));
    const GuidanceConfig g2{2.0, std::nullopt};
    CHECK(multi.diffusion->sample(c, g2, 9) != multi.diffusion->sample(other, g2, 9));
  }
  SECTION("explicit negative condition is used") {
    TinyPipeline multi(8);
    const Condition neg{random_matrix(1, sd, rng), random_matrix(d.frames, d.latent_dim, rng)};
    const GuidanceConfig zero_neg{3.0, std::nullopt}, explicit_neg{3.0, neg};
    CHECK(multi.diffusion->sample(c, zero_neg, 1) != multi.diffusion->sample(c, explicit_neg, 1));
    // With c = c̄ every scale collapses to the unconditional sampler.
    CHECK(multi.diffusion->sample(neg, {3.0, neg}, 1) == multi.diffusion->sample(neg, {0.0, neg}, 1));
  }
}

TEST_CASE("diffusion training reduces the denoising loss", "[inference][training]") {
  TinyPipeline tiny(20);
  tiny.diffusion->mutable_config().epochs = 40;
  tiny.diffusion->mutable_config().batch_size = 8;
  tiny.diffusion->mutable_config().lr = 3e-3;
  const auto curve = train_diffusion(tiny.manifest, *tiny.diffusion, 3);
  REQUIRE(curve.size() == 40);
  double tail = 0.0;
  for (size_t i = 30; i < 40; ++i) tail += curve[i].loss / 10.0;
  CHECK(tail < curve.front().loss);
  CHECK(tiny.diffusion->config().clip_x0 > 0.0);
}

TEST_CASE("renderer", "[inference]") {
  const Renderer r(4);
  std::mt19937_64 rng(6);
  const RowVector z = random_matrix(1, 4, rng);
  const Image img = r.render(z);
  CHECK(img.rows() == 16);
  CHECK(img.cols() == 48);
  CHECK(img.minCoeff() > 0.0);
  CHECK(img.maxCoeff() < 1.0);
  CHECK(Renderer(4).render(z) == img);
  CHECK(r.render(z + RowVector::Constant(4, 0.5)) != img);
  CHECK(r.render_clip(random_matrix(3, 4, rng)).size() == 3);
  CHECK_THROWS_AS(r.render(RowVector::Zero(5)), ShapeError);
}

TEST_CASE("end-to-end reconstruction contract", "[inference][pipeline]") {
  TinyPipeline tiny;
  const auto& m = tiny.manifest;
  auto models = tiny.models();
  const auto& rec = m.records.back();

  const auto a = reconstruct(rec.eeg, m.dims, models, {}, 17);
  CHECK(a.latents.rows() == rec.gt_latents.rows());
  CHECK(a.latents.cols() == rec.gt_latents.cols());
  CHECK(a.z0_hat.rows() == m.dims.frames);
  CHECK(a.semantic_hat.cols() == m.dims.cond_tokens * m.dims.cond_dim);
  const auto b = reconstruct(rec.eeg, m.dims, models, {}, 17);
  CHECK(a.latents == b.latents);
  CHECK(reconstruct(rec.eeg, m.dims, models, {}, 18).latents != a.latents);

  SECTION("bypassed branches feed zero conditions") {
    auto no_sem = tiny.models(false, true);
    no_sem.encoder = nullptr;
    no_sem.predictor = nullptr;
    const auto r = reconstruct(rec.eeg, m.dims, no_sem, {}, 17);
    CHECK(r.semantic_hat.isZero(0.0));
    CHECK(r.z0_hat == a.z0_hat);
    auto no_perc = tiny.models(true, false);
    no_perc.causalseq = nullptr;
    CHECK(reconstruct(rec.eeg, m.dims, no_perc, {}, 17).z0_hat.isZero(0.0));
  }
  SECTION("incompatible or missing models are configuration errors") {
    auto missing = tiny.models();
    missing.embednet = nullptr;
    CHECK_THROWS_AS(check_compatible(missing, m.dims), ConfigError);
    auto dims = m.dims;
    dims.latent_dim += 1;
    CHECK_THROWS_AS(check_compatible(models, dims), ConfigError);
    data::EegSegment bad{Matrix::Zero(m.dims.channels + 1, m.dims.samples), 200.0, "bad"};
    CHECK_THROWS_AS(reconstruct(bad, m.dims, models, {}, 1), ShapeError);
  }
}

TEST_CASE("batch reconstruction", "[inference][pipeline]") {
  TinyPipeline tiny;
  auto models = tiny.models();
  const auto batch = batch_reconstruct(tiny.manifest, data::Split::Test, models, {}, 5);
  REQUIRE(batch.ok());
  CHECK(batch.reconstructions.size() == tiny.manifest.indices(data::Split::Test).size());
  for (size_t i = 1; i < batch.reconstructions.size(); ++i) {
    CHECK(batch.reconstructions[i - 1].clip_id < batch.reconstructions[i].clip_id);
  }
  const auto& first = batch.reconstructions.front();
  CHECK(batch.provenance.at("clip_seeds").at(first.clip_id).get<std::uint64_t>() == derive_seed(5, first.clip_id));
  CHECK(first.seed == derive_seed(5, first.clip_id));

  const auto again = batch_reconstruct(tiny.manifest, data::Split::Test, models, {}, 5);
  for (size_t i = 0; i < batch.reconstructions.size(); ++i) {
    CHECK(again.reconstructions[i].latents == batch.reconstructions[i].latents);
  }

  SECTION("empty split") {
    auto m = tiny.manifest;
    for (auto& [block, s] : m.split) s = data::Split::Train;
    const auto empty = batch_reconstruct(m, data::Split::Test, models, {}, 5);
    CHECK(empty.ok());
    CHECK(empty.reconstructions.empty());
  }
  SECTION("round-trip through the array container") {
    const auto dir = std::filesystem::temp_directory_path() / "mindcine_test_recon";
    std::filesystem::remove_all(dir);
    save_reconstructions(batch, tiny.manifest.dims, Renderer(tiny.manifest.dims.latent_dim), dir);
    const auto loaded = load_reconstructions(dir);
    REQUIRE(loaded.size() == batch.reconstructions.size());
    for (const auto& r : batch.reconstructions) CHECK(loaded.at(r.clip_id) == r.latents);
  }
}
