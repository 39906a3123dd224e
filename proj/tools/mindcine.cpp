// mindcine command-line driver.

#include "mindcine/array_io.hpp"
#include "mindcine/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace mindcine;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kPartial = 3;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
  cmd->add_option("--config", c.config, "JSON config file (partial configs keep defaults)");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set semantic.epochs=5");
  if (with_seed) cmd->add_option("--seed", c.seed, "Global seed");
}

exp::TrainConfig resolve(const Common& c) {
  nlohmann::json j = c.config.empty() ? nlohmann::json::object() : io::read_json(c.config);
  j = exp::apply_overrides(j, c.overrides);
  if (c.seed) j["seed"] = *c.seed;
  exp::TrainConfig cfg = exp::config_from_json(j);
  exp::validate(cfg);
  return cfg;
}

void log(const std::string& msg) { std::cerr << "[mindcine] " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + item + "' is not an unsigned integer");
    }
  }
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-to-video decoding: data generation, training, reconstruction and evaluation"};
  app.require_subcommand(1);

  Common gen_c, sem_c, perc_c, diff_c, rec_c, eval_c, abl_c, run_c;
  std::string out, manifest, semantic_ckpt, perceptual_ckpt, diffusion_ckpt, recon_dir, report_path, csv_path, seeds;
  std::string split_name = "test";
  std::optional<double> scale;
  bool table = false;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset manifest");
  add_common(gen, gen_c);
  gen->add_option("--out", out, "Output manifest directory")->required();

  auto* tsem = app.add_subcommand("train-semantic", "Train the semantic encoder and predictor");
  add_common(tsem, sem_c);
  tsem->add_option("--manifest", manifest, "Manifest directory")->required();
  tsem->add_option("--out", out, "Checkpoint directory")->required();

  auto* tperc = app.add_subcommand("train-perceptual", "Train EmbedNet and CausalSeq");
  add_common(tperc, perc_c);
  tperc->add_option("--manifest", manifest, "Manifest directory")->required();
  tperc->add_option("--out", out, "Checkpoint directory")->required();

  auto* tdiff = app.add_subcommand("train-diffusion", "Train the toy conditional diffusion model");
  add_common(tdiff, diff_c);
  tdiff->add_option("--manifest", manifest, "Manifest directory")->required();
  tdiff->add_option("--out", out, "Checkpoint directory")->required();

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct video latents for a split");
  add_common(rec, rec_c);
  rec->add_option("--manifest", manifest, "Manifest directory")->required();
  rec->add_option("--semantic", semantic_ckpt, "Semantic checkpoint (omit to bypass the semantic branch)");
  rec->add_option("--perceptual", perceptual_ckpt, "Perceptual checkpoint (omit to bypass the perceptual branch)");
  rec->add_option("--diffusion", diffusion_ckpt, "Diffusion checkpoint (trained from the manifest if omitted)");
  rec->add_option("--scale", scale, "Guidance scale");
  rec->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));
  rec->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Score reconstructions against the ground truth");
  add_common(ev, eval_c);
  ev->add_option("--recon", recon_dir, "Reconstruction directory")->required();
  ev->add_option("--manifest", manifest, "Manifest directory")->required();
  ev->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--out", out, "Report JSON path")->required();
  ev->add_flag("--table", table, "Print the summary table");
  ev->add_option("--csv", csv_path, "Also write per-clip rows as CSV");

  auto* abl = app.add_subcommand("ablate", "Run the ablation matrix over several seeds");
  add_common(abl, abl_c, false);
  abl->add_option("--seeds", seeds, "Comma-separated seeds")->default_val("0,1,2");
  abl->add_option("--out", out, "Ablation report JSON path")->required();
  abl->add_option("--csv", csv_path, "Also write the summary table as CSV");

  auto* rep = app.add_subcommand("report", "Render a metrics report as a table");
  rep->add_option("--report", report_path, "Report JSON")->required();
  rep->add_option("--csv", csv_path, "Also write per-clip rows as CSV");

  auto* run = app.add_subcommand("run", "Run every stage with caching under $MINDCINE_CACHE");
  add_common(run, run_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c);
      const auto m = exp::run_gen(cfg);
      data::save_manifest(m, out);
      log("wrote " + std::to_string(m.records.size()) + " clips to " + out);
      return kOk;
    }
    if (*tsem || *tperc || *tdiff) {
      const Common& c = *tsem ? sem_c : *tperc ? perc_c : diff_c;
      const auto cfg = resolve(c);
      const auto m = data::load_manifest(manifest);
      data::validate(m);
      nlohmann::json h;
      if (*tsem) h = exp::run_train_semantic(m, cfg, out);
      if (*tperc) h = exp::run_train_perceptual(m, cfg, out);
      if (*tdiff) h = exp::run_train_diffusion(m, cfg, out);
      log("checkpoint written to " + out + " (config " + h.value("config_hash", "") + ")");
      return kOk;
    }
    if (*rec) {
      auto cfg = resolve(rec_c);
      if (scale) cfg.pipeline.guidance_scale = *scale;
      const auto m = data::load_manifest(manifest);
      data::validate(m);
      std::optional<exp::SemanticModels> sm;
      std::optional<exp::PerceptualModels> pm;
      if (!semantic_ckpt.empty()) sm = exp::load_semantic(semantic_ckpt);
      if (!perceptual_ckpt.empty()) pm = exp::load_perceptual(perceptual_ckpt);
      exp::DiffusionModel dm;
      if (!diffusion_ckpt.empty()) {
        dm = exp::load_diffusion(diffusion_ckpt);
      } else {
        log("no --diffusion given; training the toy diffusion model on the training split");
        const fs::path tmp = fs::path(out) / "diffusion";
        exp::run_train_diffusion(m, cfg, tmp);
        dm = exp::load_diffusion(tmp);
      }
      auto models = exp::pipeline_of(sm ? &*sm : nullptr, pm ? &*pm : nullptr, dm);
      nlohmann::json prov = {{"semantic", sm ? sm->header.value("config_hash", "") : ""},
                             {"perceptual", pm ? pm->header.value("config_hash", "") : ""},
                             {"diffusion", dm.header.value("config_hash", "")},
                             {"config_hash", exp::config_hash(cfg)},
                             {"revision", exp::revision()}};
      const auto split = split_name == "train" ? data::Split::Train : data::Split::Test;
      const auto batch = inf::batch_reconstruct(m, split, models, {cfg.pipeline.guidance_scale, std::nullopt},
                                                cfg.seed, prov);
      inf::save_reconstructions(batch, m.dims, inf::Renderer(m.dims.latent_dim), out);
      log("reconstructed " + std::to_string(batch.reconstructions.size()) + " clips, " +
          std::to_string(batch.failures.size()) + " failures");
      for (const auto& [clip, msg] : batch.failures) log("  " + clip + ": " + msg);
      return batch.ok() ? kOk : kPartial;
    }
    if (*ev) {
      const auto cfg = resolve(eval_c);
      const auto m = data::load_manifest(manifest);
      const auto recon = inf::load_reconstructions(recon_dir);
      const inf::Renderer renderer(m.dims.latent_dim);
      const auto cls = metrics::make_classifiers(m, renderer, cfg.metrics);
      const auto split = split_name == "train" ? data::Split::Train : data::Split::Test;
      auto report = metrics::evaluate_split(recon, m, split, cls.pair(), renderer, cfg.metrics, exp::config_hash(cfg));
      io::write_json(out, metrics::to_json(report));
      if (table) std::cout << exp::render_report(report);
      if (!csv_path.empty()) write_text(csv_path, exp::render_csv(report));
      if (!report.missing.empty()) {
        log(std::to_string(report.missing.size()) + " clips have no reconstruction");
        return kPartial;
      }
      return kOk;
    }
    if (*abl) {
      const auto cfg = resolve(abl_c);
      const auto result = exp::run_ablation(exp::default_ablation_plan(), cfg, parse_seeds(seeds), exp::cache_root());
      io::write_json(out, exp::to_json(result));
      const std::string tbl = exp::render_ablation(result);
      std::cout << tbl;
      if (!csv_path.empty()) {
        std::ostringstream csv;
        csv << "variant,metric,mean,std,count\n";
        const auto j = exp::to_json(result);
        for (const auto& [variant, cells] : j.at("summary").items()) {
          for (const auto& [metric, s] : cells.items()) {
            csv << variant << ',' << metric << ',' << s.at("mean").dump() << ',' << s.at("std").dump() << ','
                << s.at("count").dump() << '\n';
          }
        }
        write_text(csv_path, csv.str());
      }
      return result.partial ? kPartial : kOk;
    }
    if (*rep) {
      const auto report = metrics::report_from_json(io::read_json(report_path));
      std::cout << exp::render_report(report);
      if (!csv_path.empty()) write_text(csv_path, exp::render_csv(report));
      return kOk;
    }
    if (*run) {
      const auto cfg = resolve(run_c);
      const auto result = exp::run_experiment(cfg, exp::cache_root());
      std::cout << exp::render_report(result.report);
      log("run directory: " + result.run_dir.string());
      return result.partial() ? kPartial : kOk;
    }
  } catch (const ValidationError& e) {
    log(std::string("validation error: ") + e.what());
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    log(std::string("malformed JSON: ") + e.what());
    return kValidation;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kRuntime;
  }
  return kOk;
}
