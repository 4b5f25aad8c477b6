#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cgseg/error.hpp"
#include "cgseg/experiment.hpp"
#include "cgseg/gradsuite.hpp"
#include "cgseg/io_util.hpp"
#include "cgseg/lod1.hpp"

using namespace cgseg;
namespace fs = std::filesystem;

namespace {

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::map<std::string, std::optional<std::string>> params;  // config key -> flag value

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) apply_config_text(cfg, read_text(config_file));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [key, v] : params)
      if (v) set_config_value(cfg, key, *v);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();
    return cfg;
  }
};

std::string flag_for(const std::string& key) {
  std::string name = key.substr(key.rfind('.') + 1);
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config_file, "Config file of key = value lines")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override one config key (key=value); repeatable");
  app->add_option("--seed", c.seed, "Global seed for every random stream");
  app->add_option("--threads", c.threads, "Worker threads (computation is single-threaded)");
  auto* out = app->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  for (const auto& key : config_keys()) {
    if (key == "seed" || key == "threads") continue;
    app->add_option(flag_for(key), c.params[key], "Config key " + key)->group("Parameters");
  }
}

void prepare_out(const fs::path& out, const RunConfig& cfg) {
  fs::create_directories(out);
  write_text(out / "config.txt", format_config(cfg));
}

// ---- Stages ------------------------------------------------------------------

void gen_scene(const RunConfig& cfg, const fs::path& out) {
  prepare_out(out, cfg);
  const Scene scene = generate_scene(cfg.scene_spec());
  save_dem(scene.dem, out / "dem.asc");
  save_footprints(scene.footprints, out / "footprints.json");
  std::cout << "scene: " << scene.footprints.size() << " buildings, " << scene.dem.ncols << "x" << scene.dem.nrows
            << " cells -> " << out.string() << "\n";
}

void build_dataset_dir(const RunConfig& cfg, const fs::path& scene_dir, const fs::path& out) {
  prepare_out(out, cfg);
  Scene scene{load_dem(scene_dir / "dem.asc"), load_footprints(scene_dir / "footprints.json")};
  Dataset ds = build_dataset(scene, cfg.dataset_params());
  save_dataset(ds, out);
  const Experiment exp = prepare_experiment(ds, {}, cfg.train_config());
  std::string csv = "id,row0,col0,size,split\n";
  const auto rows = [&](const std::vector<Sample>& v, const char* split) {
    for (const auto& s : v) {
      csv += s.id + "," + std::to_string(s.row0) + "," + std::to_string(s.col0) + "," + std::to_string(s.size) + "," +
             split + "\n";
    }
  };
  rows(exp.split.train, "train");
  rows(exp.split.test, "test");
  write_text(out / "patches.csv", csv);
  std::string log;
  for (const auto& id : exp.patches.dropped) log += id + ",no_patch\n";
  for (const auto& id : ds.excluded) log += id + ",not_elevated\n";
  for (const auto& id : ds.filtered) log += id + ",intensity_filter\n";
  write_text(out / "dropped.csv", "id,reason\n" + log);
  std::cout << "dataset: " << ds.gt.masks.size() << " buildings, " << exp.split.train.size() << " train / "
            << exp.split.test.size() << " test samples (" << exp.patches.dropped.size() << " without a patch, "
            << exp.split.dropped << " on the split border) -> " << out.string() << "\n";
}

void inject_error(const RunConfig& cfg, const fs::path& data, const fs::path& out) {
  prepare_out(out, cfg);
  const Dataset ds = load_dataset(data);
  const InjectedErrors e = apply_offsets(ds.cbf, cfg.offset_model());
  fs::remove_all(out / "cbfe");
  save_mask_dir(e.masks, out / "cbfe");
  write_text(out / "offsets.csv", format_offsets_csv(e, ds.frame));
  std::cout << "cbfe: " << e.offsets.size() << " shifted footprints (" << e.masks.flagged.size()
            << " flagged) -> " << out.string() << "\n";
}

Experiment load_experiment(const RunConfig& cfg, const fs::path& data, const std::string& cbfe_dir) {
  Dataset ds = load_dataset(data);
  MaskStack cbfe;
  if (!cbfe_dir.empty()) cbfe = load_mask_dir(fs::path(cbfe_dir) / "cbfe", ds.frame);
  return prepare_experiment(std::move(ds), std::move(cbfe), cfg.train_config());
}

void train_cmd(const RunConfig& cfg, const Experiment& exp, ModelKind kind, GisKind gis, const fs::path& out) {
  prepare_out(out, cfg);
  Trained t = train_model(exp, kind, gis, cfg);
  write_text(out / "train_log.csv", format_train_log(t.result));
  const nlohmann::json meta = {{"model", to_string(kind)},
                               {"gis", to_string(gis)},
                               {"seed", cfg.seed},
                               {"epochs", t.result.log.size()},
                               {"steps", t.result.steps},
                               {"aborted", t.result.aborted},
                               {"patch", cfg.train.patch},
                               {"stride", cfg.train.stride},
                               {"train_fraction", cfg.train.train_fraction}};
  save_checkpoint(t.model, meta, out / "model.ckpt");
  if (t.result.aborted) throw Error("training aborted: " + t.result.abort_reason + " (last good parameters saved)");
  std::cout << "train " << to_string(kind) << "/" << to_string(gis) << ": " << t.result.log.size()
            << " epochs, final loss " << (t.result.log.empty() ? 0.0 : t.result.log.back().loss) << " -> "
            << out.string() << "\n";
}

// Applies the window settings a checkpoint was trained with.
RunConfig with_checkpoint_windows(RunConfig cfg, const nlohmann::json& meta) {
  if (meta.contains("patch")) cfg.train.patch = meta.at("patch").get<int>();
  if (meta.contains("stride")) cfg.train.stride = meta.at("stride").get<int>();
  if (meta.contains("train_fraction")) cfg.train.train_fraction = meta.at("train_fraction").get<double>();
  return cfg;
}

void predict_cmd(Model<float>& model, const Experiment& exp, GisKind gis, const std::string& split,
                 const fs::path& out) {
  std::vector<Sample> samples;
  if (split == "test" || split == "all") samples.insert(samples.end(), exp.split.test.begin(), exp.split.test.end());
  if (split == "train" || split == "all") samples.insert(samples.end(), exp.split.train.begin(), exp.split.train.end());
  samples = samples_with(exp, samples, gis);
  const MaskStack pred = predict_all(model, samples, exp.ds.frame);
  save_predictions(pred, samples, out / "pred");
  std::cout << "predict: " << pred.masks.size() << " masks (" << pred.flagged.size() << " empty) -> "
            << (out / "pred").string() << "\n";
}

EvalReport eval_cmd(const Dataset& ds, const fs::path& pred_dir, const fs::path& out) {
  const LoadedPredictions lp = load_predictions(pred_dir, ds.frame);
  const EvalReport r = evaluate(lp.pred, ds.gt, lp.windows);
  write_text(out / "metrics.csv", format_metrics_csv(r));
  write_text(out / "metrics.json", metrics_json(r).dump(2) + "\n");
  std::cout << "eval: " << r.buildings.size() << " buildings, macro F1 " << r.macro.f1 << ", micro F1 " << r.micro.f1
            << " -> " << out.string() << "\n";
  return r;
}

void lod1_cmd(const Dataset& ds, const std::string& pred_dir, const fs::path& out) {
  const MaskStack pred = pred_dir.empty() ? ds.gt : load_predictions(pred_dir, ds.frame).pred;
  const auto est = estimate_heights(pred, ds.cbf, ds.footprints);
  std::vector<Mesh> meshes;
  for (const auto& e : est) {
    const int k = find_footprint(ds.footprints, e.id);
    if (k >= 0) meshes.push_back(extrude_lod1(ds.footprints[static_cast<std::size_t>(k)], e.h));
  }
  save_obj(meshes, out / "lod1.obj");
  write_text(out / "heights.csv", format_heights_csv(est));
  const HeightErrorStats s = height_error_stats(est);
  write_text(out / "height_hist.csv", format_hist_csv(s));
  std::cout << "lod1: " << est.size() << " buildings, mean absolute height error " << s.mean_abs << " m -> "
            << out.string() << "\n";
}

bool gradcheck_cmd(const RunConfig& cfg, const std::string& out) {
  const auto suite = run_grad_suite(cfg.seed);
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : suite) {
    std::cout << (e.passed ? "ok   " : "FAIL ") << e.name << ": max rel error " << e.report.max_rel_error << " over "
              << e.report.checked << " coordinates (" << e.report.skipped << " skipped)\n";
    ok &= e.passed;
    j.push_back({{"name", e.name},
                 {"max_rel_error", e.report.max_rel_error},
                 {"checked", e.report.checked},
                 {"skipped", e.report.skipped},
                 {"worst", e.report.worst},
                 {"passed", e.passed}});
  }
  if (!out.empty()) {
    prepare_out(out, cfg);
    write_text(fs::path(out) / "gradcheck.json", j.dump(2) + "\n");
  }
  return ok;
}

void repro_cmd(const RunConfig& cfg, const fs::path& out) {
  prepare_out(out, cfg);
  gen_scene(cfg, out / "scene");
  build_dataset_dir(cfg, out / "scene", out / "dataset");
  inject_error(cfg, out / "dataset", out / "cbfe");
  const Experiment exp = load_experiment(cfg, out / "dataset", (out / "cbfe").string());
  struct Run {
    const char* name;
    ModelKind model;
    GisKind train_gis, test_gis;
  };
  const Run runs[] = {{"cgnet_cbf", ModelKind::kCgNet, GisKind::kCbf, GisKind::kCbf},
                      {"baseline_cbf", ModelKind::kBaseline, GisKind::kCbf, GisKind::kCbf},
                      {"cgnet_svs", ModelKind::kCgNet, GisKind::kSvs, GisKind::kSvs},
                      {"cgnet_cbfe", ModelKind::kCgNet, GisKind::kCbfe, GisKind::kCbf}};
  nlohmann::json summary = nlohmann::json::object();
  for (const Run& r : runs) {
    const fs::path dir = out / "runs" / r.name;
    train_cmd(cfg, exp, r.model, r.train_gis, dir);
    Checkpoint ck = load_checkpoint(dir / "model.ckpt");
    predict_cmd(ck.model, exp, r.test_gis, "test", dir);
    const EvalReport rep = eval_cmd(exp.ds, dir / "pred", dir);
    summary[r.name] = {{"macro_f1", rep.macro.f1}, {"micro_f1", rep.micro.f1}, {"macro_iou", rep.macro.iou}};
  }
  fs::create_directories(out / "lod1");
  lod1_cmd(exp.ds, (out / "runs" / "cgnet_cbf" / "pred").string(), out / "lod1");
  fs::create_directories(out / "lod1_gt");
  lod1_cmd(exp.ds, "", out / "lod1_gt");
  write_text(out / "metrics.json", summary.dump(2) + "\n");
  std::cout << "repro: summary -> " << (out / "metrics.json").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Building segmentation in simulated SAR scenes with GIS footprints"};
  app.require_subcommand(1);

  Common c_gen, c_build, c_inject, c_train, c_predict, c_eval, c_lod1, c_grad, c_repro;
  std::string scene_dir, data_dir, cbfe_dir, ckpt, pred_dir, model = "cgnet", gis = "cbf", split = "test";

  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic DEM and footprints");
  add_common(gen, c_gen);

  auto* build = app.add_subcommand("build-dataset", "Point cloud, visibility, masks, image and patches");
  add_common(build, c_build);
  build->add_option("--scene", scene_dir, "Directory with dem.asc and footprints.json")->required();

  auto* inject = app.add_subcommand("inject-error", "Shift CBF masks by random positioning errors");
  add_common(inject, c_inject);
  inject->add_option("--data", data_dir, "Dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model on the training region");
  add_common(tr, c_train);
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--model", model, "cgnet or baseline")->check(CLI::IsMember({"cgnet", "baseline"}));
  tr->add_option("--gis", gis, "cbf, svs or cbfe")->check(CLI::IsMember({"cbf", "svs", "cbfe"}));
  tr->add_option("--cbfe", cbfe_dir, "inject-error output directory (for --gis cbfe)");

  auto* pr = app.add_subcommand("predict", "Predict per-building masks");
  add_common(pr, c_predict);
  pr->add_option("--data", data_dir, "Dataset directory")->required();
  pr->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pr->add_option("--gis", gis, "cbf, svs or cbfe")->check(CLI::IsMember({"cbf", "svs", "cbfe"}));
  pr->add_option("--cbfe", cbfe_dir, "inject-error output directory (for --gis cbfe)");
  pr->add_option("--split", split, "test, train or all")->check(CLI::IsMember({"test", "train", "all"}));

  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  add_common(ev, c_eval);
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--pred", pred_dir, "Prediction directory")->required();

  auto* lo = app.add_subcommand("lod1", "Heights from layover and LoD1 prisms");
  add_common(lo, c_lod1);
  lo->add_option("--data", data_dir, "Dataset directory")->required();
  lo->add_option("--pred", pred_dir, "Prediction directory (ground truth masks when omitted)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks; nonzero exit on failure");
  add_common(gc, c_grad, false);

  auto* rp = app.add_subcommand("repro", "Run the whole pipeline end to end");
  add_common(rp, c_repro);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gen_scene(c_gen.resolve(), c_gen.out);
    } else if (*build) {
      build_dataset_dir(c_build.resolve(), scene_dir, c_build.out);
    } else if (*inject) {
      inject_error(c_inject.resolve(), data_dir, c_inject.out);
    } else if (*tr) {
      const RunConfig cfg = c_train.resolve();
      const GisKind g = parse_gis_kind(gis);
      if (g == GisKind::kCbfe && cbfe_dir.empty()) throw ConfigError("--gis cbfe needs --cbfe <inject-error output>");
      train_cmd(cfg, load_experiment(cfg, data_dir, cbfe_dir), parse_model_kind(model), g, c_train.out);
    } else if (*pr) {
      Checkpoint ck = load_checkpoint(ckpt);
      const RunConfig cfg = with_checkpoint_windows(c_predict.resolve(), ck.meta);
      const GisKind g = parse_gis_kind(gis);
      if (g == GisKind::kCbfe && cbfe_dir.empty()) throw ConfigError("--gis cbfe needs --cbfe <inject-error output>");
      prepare_out(c_predict.out, cfg);
      predict_cmd(ck.model, load_experiment(cfg, data_dir, cbfe_dir), g, split, c_predict.out);
    } else if (*ev) {
      const RunConfig cfg = c_eval.resolve();
      prepare_out(c_eval.out, cfg);
      eval_cmd(load_dataset(data_dir), pred_dir, c_eval.out);
    } else if (*lo) {
      const RunConfig cfg = c_lod1.resolve();
      prepare_out(c_lod1.out, cfg);
      lod1_cmd(load_dataset(data_dir), pred_dir, c_lod1.out);
    } else if (*gc) {
      return gradcheck_cmd(c_grad.resolve(), c_grad.out) ? 0 : 1;
    } else if (*rp) {
      repro_cmd(c_repro.resolve(), c_repro.out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
