#include "mindcine/encoders.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace mindcine;
using namespace mindcine::enc;
using mindcine::testing::gradient_check;
using mindcine::testing::random_matrix;

namespace {

data::EegSegment random_segment(Index channels, Index samples, std::mt19937_64& rng, const std::string& id) {
  return {random_matrix(channels, samples, rng), 200.0, id};
}

Var weighted_sum(Graph& g, const Var& x) {
  std::mt19937_64 rng(77);
  return ad::sum(ad::hadamard(x, g.constant(random_matrix(x.rows(), x.cols(), rng))));
}

// Shared conformance suite for every SemanticEncoder.
void check_conformance(SemanticEncoder& enc, const std::vector<data::EegSegment>& segs, double fd_tol) {
  std::vector<const data::EegSegment*> batch;
  for (const auto& s : segs) batch.push_back(&s);

  Graph g;
  Var out = enc.encode(g, batch);
  CHECK(out.rows() == static_cast<Index>(segs.size()));
  CHECK(out.cols() == enc.output_dim());
  CHECK(out.value().allFinite());

  const auto a = enc.encode_one(segs[0]);
  const auto b = enc.encode_one(segs[0]);
  CHECK(a == b);
  CHECK(a.dim() == enc.output_dim());

  Index independent = 0;
  for (auto* p : enc.parameters()) independent += p->value.rows() * p->value.cols();
  CHECK(enc.param_count() == independent);

  CHECK(gradient_check([&](Graph& gg) { return weighted_sum(gg, enc.encode(gg, batch)); }, enc.parameters()) < 1e-4);
  (void)fd_tol;
}

}  // namespace

TEST_CASE("MLP encoder conformance", "[encoders]") {
  std::mt19937_64 rng(1);
  MlpEncoder mlp({.channels = 2, .samples = 4, .hidden = {5, 6}, .joint_dim = 3}, rng);
  std::vector<data::EegSegment> segs;
  for (int i = 0; i < 3; ++i) segs.push_back(random_segment(2, 4, rng, "c" + std::to_string(i)));
  check_conformance(mlp, segs, 1e-4);
  CHECK(mlp.param_count() == (8 * 5 + 5) + (5 * 6 + 6) + (6 * 3 + 3));

  SECTION("zero final layer gives a zero embedding") {
    mlp.layers().back().weight.value.setZero();
    mlp.layers().back().bias.value.setZero();
    CHECK(mlp.encode_one(segs[1]).values.isZero(0.0));
  }
  SECTION("wrong segment shape is rejected") {
    std::mt19937_64 r2(2);
    const auto bad = random_segment(3, 4, r2, "bad");
    const data::EegSegment* p = &bad;
    Graph g;
    CHECK_THROWS_AS(mlp.encode(g, std::span<const data::EegSegment* const>(&p, 1)), ShapeError);
  }
}

TEST_CASE("pretrained adapter conformance and lookups", "[encoders]") {
  std::mt19937_64 rng(3);
  EmbeddingTable table;
  std::vector<data::EegSegment> segs;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "clip" + std::to_string(i);
    table[id] = random_matrix(5, 1, rng).col(0);
    segs.push_back(random_segment(2, 4, rng, id));
  }
  PretrainedAdapter adapter(table, 4, rng);
  check_conformance(adapter, segs, 1e-4);
  CHECK(adapter.source_dim() == 5);

  SECTION("identity head returns the stored vector") {
    PretrainedAdapter id(table, 5, rng);
    id.head().weight.value = Matrix::Identity(5, 5);
    id.head().bias.value.setZero();
    CHECK(id.adapter_encode("clip1").values == table["clip1"]);
  }
  SECTION("zero head returns zero") {
    adapter.head().weight.value.setZero();
    adapter.head().bias.value.setZero();
    CHECK(adapter.adapter_encode("clip2").values.isZero(0.0));
  }
  SECTION("unknown clip is a lookup error") { CHECK_THROWS_AS(adapter.adapter_encode("nope"), LookupError); }
  SECTION("table round-trips through the array container") {
    const auto dir = std::filesystem::temp_directory_path() / "mindcine_test_table";
    std::filesystem::remove_all(dir);
    save_embedding_table(table, dir);
    const auto back = load_embedding_table(dir);
    REQUIRE(back.size() == table.size());
    for (const auto& [k, v] : table) CHECK((back.at(k) - v).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("EmbedNet applies one shared network per window", "[encoders]") {
  std::mt19937_64 rng(4);
  const EmbedNetConfig cfg{.channels = 2, .window = 8, .temporal_filters = 2, .temporal_kernel = 3,
                           .spatial_filters = 3, .pool = 2, .embed_dim = 4};
  EmbedNet net(cfg, rng);
  CHECK(net.pooled_length() == 3);

  data::WindowedSegment ws;
  for (int i = 0; i < 6; ++i) ws.windows.push_back(random_matrix(2, 8, rng));
  ws.windows[4] = ws.windows[1];
  const auto emb = net.embednet_extract(ws);
  REQUIRE(emb.size() == 6);
  CHECK(emb[4] == emb[1]);
  CHECK(emb[0].space == data::Modality::Perceptual);

  SECTION("output i depends only on window i") {
    auto changed = ws;
    changed.windows[3] = random_matrix(2, 8, rng);
    const auto e2 = net.embednet_extract(changed);
    for (int i = 0; i < 6; ++i) {
      if (i == 3) CHECK(e2[3] != emb[3]);
      else CHECK(e2[static_cast<size_t>(i)] == emb[static_cast<size_t>(i)]);
    }
  }
  SECTION("permuting windows permutes embeddings") {
    data::WindowedSegment perm;
    const std::vector<int> order{5, 2, 0, 4, 1, 3};
    for (int i : order) perm.windows.push_back(ws.windows[static_cast<size_t>(i)]);
    const auto ep = net.embednet_extract(perm);
    for (size_t k = 0; k < order.size(); ++k) CHECK(ep[k] == emb[static_cast<size_t>(order[k])]);
  }
  SECTION("gradients match central differences") {
    auto params = net.parameters();
    Index independent = 0;
    for (auto* p : params) independent += p->size();
    CHECK(nn::count_parameters(params) == independent);
    const Matrix stacked = stack_windows({ws.windows[0], ws.windows[2]});
    CHECK(gradient_check([&](Graph& g) { return weighted_sum(g, net.forward(g, g.constant(stacked))); }, params) <
          1e-4);
  }
  SECTION("empty and misshapen input") {
    CHECK_THROWS_AS(net.embednet_extract(data::WindowedSegment{}), EmptyInputError);
    Graph g;
    CHECK_THROWS_AS(net.forward(g, g.constant(Matrix::Zero(3, 8))), ShapeError);
  }
}

TEST_CASE("EmbedNet config validation", "[encoders]") {
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(EmbedNet({.channels = 2, .window = 8, .temporal_kernel = 9}, rng), ConfigError);
  CHECK_THROWS_AS(EmbedNet({.channels = 2, .window = 8, .temporal_kernel = 3, .pool = 7}, rng), ConfigError);
}
