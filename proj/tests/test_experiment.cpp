#include "mindcine/array_io.hpp"
#include "mindcine/experiment.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace mindcine;
using namespace mindcine::exp;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.data = testing::tiny_data_config();
  c.semantic.hidden = {8};
  c.semantic.train.epochs = 2;
  c.semantic.train.batch_size = 8;
  c.perceptual.temporal_filters = 2;
  c.perceptual.temporal_kernel = 5;
  c.perceptual.spatial_filters = 2;
  c.perceptual.pool = 4;
  c.perceptual.embed_dim = 8;
  c.perceptual.causalseq.d_model = 8;
  c.perceptual.causalseq.heads = 2;
  c.perceptual.causalseq.layers = 1;
  c.perceptual.causalseq.ffn = 16;
  c.perceptual.train.epochs = 2;
  c.perceptual.train.batch_size = 8;
  c.diffusion.steps = 5;
  c.diffusion.hidden = 8;
  c.diffusion.epochs = 2;
  c.diffusion.batch_size = 8;
  c.metrics.ways = {2, 4};
  c.metrics.repeats = 10;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mindcine_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MINDCINE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing and validation", "[experiment][config]") {
  const TrainConfig def;
  CHECK(config_from_json(json::object()).data == def.data);
  CHECK(config_hash(config_from_json(to_json(def))) == config_hash(def));

  SECTION("unknown keys name their path") {
    try {
      config_from_json({{"semantic", {{"epochz", 3}}}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("semantic.epochz") != std::string::npos);
    }
  }
  SECTION("negative loss weights are rejected") {
    auto c = def;
    c.semantic.train.weights.lambda = -1.0;
    CHECK_THROWS_AS(validate(c), ConfigError);
    auto d = def;
    d.semantic.train.alpha.alpha2 = -0.1;
    CHECK_THROWS_AS(validate(d), ConfigError);
  }
  SECTION("hash is stable and sensitive") {
    CHECK(config_hash(def) == config_hash(TrainConfig{}));
    CHECK(config_hash(def).size() == 16);
    auto c = def;
    c.seed = 1;
    CHECK(config_hash(c) != config_hash(def));
  }
  SECTION("dotted overrides") {
    const json j = apply_overrides(to_json(def), {"semantic.epochs=5", "pipeline.guidance_scale=2.5"});
    const auto c = config_from_json(j);
    CHECK(c.semantic.train.epochs == 5);
    CHECK(c.pipeline.guidance_scale == 2.5);
    const auto diff = json_diff(to_json(def), j);
    CHECK(diff == std::vector<std::string>{"pipeline.guidance_scale", "semantic.epochs"});
  }
}

TEST_CASE("cached experiment runs are idempotent", "[experiment][cache]") {
  const auto root = fresh_dir("cache");
  const auto cfg = tiny_config();
  validate(cfg);
  const auto first = run_experiment(cfg, root);
  CHECK(first.computed.size() == 6);
  CHECK_FALSE(first.partial());
  CHECK(!first.report.rows.empty());

  const auto second = run_experiment(cfg, root);
  CHECK(second.computed.empty());
  CHECK(second.report == first.report);
  CHECK(second.run_dir == first.run_dir);

  SECTION("changing only the guidance scale reuses the trained stages") {
    auto c2 = cfg;
    c2.pipeline.guidance_scale = 3.0;
    const auto third = run_experiment(c2, root);
    CHECK(third.computed == std::vector<std::string>{"reconstruct", "eval"});
  }
  SECTION("a fresh cache reproduces the report exactly") {
    const auto other = run_experiment(cfg, fresh_dir("cache_b"));
    CHECK(other.report == first.report);
  }
}

TEST_CASE("ablation matrix", "[experiment][ablation]") {
  const auto cfg = tiny_config();
  SECTION("identical variants are rejected") {
    const std::vector<AblationVariant> plan{{"a", json::object()}, {"b", {{"pipeline.guidance_scale", 7.5}}}};
    CHECK_THROWS_AS(run_ablation(plan, cfg, {0}, fresh_dir("abl_dup")), ConfigError);
  }
  SECTION("default plan shape and rendering") {
    const auto plan = default_ablation_plan();
    REQUIRE(plan.size() == 6);
    CHECK(plan[0].name == "full");
    const auto r = run_ablation({plan[0], plan[1]}, cfg, {0, 1}, fresh_dir("abl"));
    CHECK(r.variants == std::vector<std::string>{"full", "w/o-semantic"});
    CHECK(r.reports.at("full").size() == 2);
    CHECK(r.hashes.size() == 4);
    const auto table = render_ablation(r);
    CHECK(table.find("w/o-semantic") != std::string::npos);
    CHECK(to_json(r).contains("summary"));
  }
}

TEST_CASE("report rendering", "[experiment][report]") {
  metrics::MetricsReport empty;
  empty.columns = {"SSIM"};
  const auto csv = render_csv(empty);
  CHECK(csv == "clip_id,subject,label,SSIM\n");
  const auto md = render_report(empty);
  CHECK(md == render_report(empty));

  metrics::MetricSummary s{0.5, 0.25, 3};
  const auto table = render_table({{"x", {{"SSIM", s}}}}, {"SSIM"});
  CHECK(table.find("0.500 ± 0.250") != std::string::npos);
}

TEST_CASE("command-line exit codes", "[experiment][cli]") {
  const auto dir = fresh_dir("cli");
  CHECK(run_cli("") == 1);
  CHECK(run_cli("nosuchcommand") == 1);
  CHECK(run_cli("gen") == 1);

  {
    std::ofstream(dir / "bad.json") << R"({"semantic": {"epochz": 1}})";
  }
  CHECK(run_cli("gen --config " + (dir / "bad.json").string() + " --out " + (dir / "m").string()) == 1);
  CHECK(run_cli("gen --set semantic.lambda=-1 --out " + (dir / "m").string()) == 1);
  CHECK(run_cli("train-semantic --manifest " + (dir / "missing").string() + " --out " + (dir / "c").string()) == 2);
  CHECK(run_cli("report --report " + (dir / "missing.json").string()) == 2);

  io::write_json(dir / "tiny.json", to_json(tiny_config()));
  CHECK(run_cli("gen --config " + (dir / "tiny.json").string() + " --out " + (dir / "m").string()) == 0);
  CHECK(fs::exists(dir / "m"));
}
