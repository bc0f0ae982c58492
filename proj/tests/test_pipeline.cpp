#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <masdt/config.hpp>
#include <masdt/pipeline.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

using namespace masdt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_out(const std::string& tag) {
  const fs::path dir =
      fs::temp_directory_path() / ("masdt_pipe_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

RunConfig tiny_config(const fs::path& out) {
  std::vector<std::pair<std::string, std::string>> overrides = {
      {"out", out.string()},
      {"synth.clips", "16"},
      {"synth.frames", "3"},
      {"split.train", "0.5"},
      {"split.val", "0.25"},
      {"split.test", "0.25"},
      {"pretrain.epochs", "1"},
      {"pretrain.batch_size", "8"},
      {"train.epochs", "1"},
      {"train.batch_size", "8"},
      {"flow.iterations", "30"},
      {"flow.levels", "2"},
      {"mae.decoder_dim", "16"},
      {"mae.decoder_depth", "1"},
  };
  for (const std::string branch : {"vit_spatial", "vit_temporal"}) {
    overrides.emplace_back(branch + ".patch_size", "8");
    overrides.emplace_back(branch + ".embed_dim", "32");
    overrides.emplace_back(branch + ".depth", "2");
    overrides.emplace_back(branch + ".num_heads", "4");
    overrides.emplace_back(branch + ".drop_path_rate", "0.0");
  }
  return parse_config("", overrides);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("the full chain runs on a small workspace") {
  const fs::path out = fresh_out("chain");
  const RunConfig cfg = tiny_config(out);
  CliOptions opt;

  // synth
  run_synth(cfg, opt);
  const fs::path manifest_path = fs::path(cfg.data_dir()) / "manifest.json";
  REQUIRE(fs::exists(manifest_path));
  const nlohmann::json manifest = nlohmann::json::parse(slurp(manifest_path));
  REQUIRE(manifest.contains("clips"));
  REQUIRE(manifest["clips"].size() == 16);
  std::size_t fakes = 0, train = 0, val = 0, test = 0;
  for (const auto& entry : manifest["clips"]) {
    const std::string label = entry["label"].get<std::string>();
    const std::string split = entry["split"].get<std::string>();
    if (label == "fake") ++fakes;
    if (split == "train") ++train;
    if (split == "val") ++val;
    if (split == "test") ++test;
    const fs::path clip_dir = out / entry["path"].get<std::string>();
    CHECK(fs::exists(clip_dir / "frame_000.png"));
    CHECK(fs::exists(clip_dir / "label.txt"));
    if (label == "fake") {
      CHECK(fs::exists(clip_dir / "meta.json"));
      CHECK(fs::exists(clip_dir / "region.pgm"));
    }
  }
  CHECK(fakes == 8);
  CHECK(train == 8);
  CHECK(val == 4);
  CHECK(test == 4);

  // rerunning without --force refuses, with --force reproduces bitwise
  const fs::path probe = out / manifest["clips"][0]["path"].get<std::string>() / "frame_001.png";
  const std::string before = slurp(probe);
  const std::string msg = thrown_message([&] { run_synth(cfg, opt); });
  CHECK(msg.find("--force") != std::string::npos);
  CliOptions forced;
  forced.force = true;
  run_synth(cfg, forced);
  CHECK(slurp(probe) == before);

  // flow
  run_flow(cfg, opt);
  std::size_t flow_files = 0;
  for (const auto& e : fs::directory_iterator(cfg.flow_dir())) {
    if (e.path().extension() == ".mflw") ++flow_files;
  }
  CHECK(flow_files == 16 * 2);

  // pretrain both branches
  CHECK_THROWS_AS(run_pretrain(cfg, opt), std::exception);  // needs --branch
  CliOptions spatial_opt;
  spatial_opt.branch = "spatial";
  run_pretrain(cfg, spatial_opt);
  CliOptions temporal_opt;
  temporal_opt.branch = "temporal";
  run_pretrain(cfg, temporal_opt);
  const fs::path ckpts(cfg.checkpoint_dir());
  CHECK(fs::exists(ckpts / "mae_spatial.ckpt"));
  CHECK(fs::exists(ckpts / "mae_temporal.ckpt"));
  const std::string mae_loss = slurp(ckpts / "mae_spatial_loss.csv");
  CHECK(mae_loss.rfind("epoch,loss", 0) == 0);
  CHECK(line_count(mae_loss) == 2);  // header + 1 epoch

  // finetune both branches plus the fusion head
  run_finetune(cfg, opt);
  CHECK(fs::exists(ckpts / "branch_spatial.ckpt"));
  CHECK(fs::exists(ckpts / "branch_temporal.ckpt"));
  CHECK(fs::exists(ckpts / "fusion_head.ckpt"));
  CHECK(fs::exists(ckpts / "branch_spatial_loss.csv"));
  CHECK(fs::exists(ckpts / "fusion_head_loss.csv"));

  // evaluate in score mode with traces
  CliOptions trace_opt;
  trace_opt.trace = true;
  run_evaluate(cfg, trace_opt);
  const fs::path report(cfg.report_dir());
  const std::string preds = slurp(report / "predictions.csv");
  CHECK(preds.rfind("clip_id,spatial_score,temporal_score,fused_score,label", 0) == 0);
  CHECK(line_count(preds) == 1 + 4);  // header + test clips
  const nlohmann::json metrics = nlohmann::json::parse(slurp(report / "metrics.json"));
  CHECK(metrics.contains("test"));
  CHECK(metrics["test"].contains("accuracy"));
  CHECK(metrics["test"].contains("auc"));
  const double auc_val = metrics["test"]["auc"].get<double>();
  CHECK(auc_val >= 0.0);
  CHECK(auc_val <= 1.0);
  CHECK(fs::exists(report / "roc.csv"));
  const std::string trace = slurp(report / "trace.csv");
  CHECK(trace.rfind("clip_id,frame,spatial_score,temporal_score,fused_score", 0) == 0);
  CHECK(line_count(trace) == 1 + 4 * 3);  // header + frames of 4 test clips

  // evaluate refuses to clobber
  CHECK_THROWS_AS(run_evaluate(cfg, opt), std::exception);

  // alpha sweep over the validation split
  run_alpha_sweep(cfg, opt);
  const std::string sweep = slurp(report / "alpha_sweep.csv");
  CHECK(sweep.rfind("alpha,auc", 0) == 0);
  CHECK(line_count(sweep) == 1 + 11);

  // ablation table over the test split
  run_ablate(cfg, opt);
  const std::string ablation = slurp(report / "ablation.csv");
  CHECK(ablation.rfind("mode,accuracy,auc", 0) == 0);
  CHECK(line_count(ablation) == 1 + 4);

  // saliency for test fakes, spatial branch by default
  run_gradcam(cfg, opt);
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(report / "saliency")) {
    if (e.path().extension() == ".pgm") ++maps;
  }
  CHECK(maps == 2);  // half the 4 test clips are fake

  // spatial-only evaluation keeps working with the temporal side destroyed
  fs::remove(ckpts / "branch_temporal.ckpt");
  fs::remove(ckpts / "fusion_head.ckpt");
  fs::remove_all(cfg.flow_dir());
  RunConfig spatial_cfg = cfg;
  spatial_cfg.fusion_mode = "spatial_only";
  run_evaluate(spatial_cfg, forced);
  const std::string solo = slurp(report / "predictions.csv");
  CHECK(line_count(solo) == 1 + 4);
  std::istringstream rows(solo);
  std::string row;
  std::getline(rows, row);  // header
  while (std::getline(rows, row)) {
    CHECK(row.find("nan") != std::string::npos);  // temporal column is empty
  }

  fs::remove_all(out);
}

TEST_CASE("stages demand their inputs in order") {
  const fs::path out = fresh_out("order");
  const RunConfig cfg = tiny_config(out);
  CliOptions opt;

  std::string msg = thrown_message([&] { run_flow(cfg, opt); });
  CHECK(msg.find("synth") != std::string::npos);

  msg = thrown_message([&] { run_evaluate(cfg, opt); });
  CHECK(msg.find("synth") != std::string::npos);

  run_synth(cfg, opt);

  CliOptions spatial_opt;
  spatial_opt.branch = "spatial";
  msg = thrown_message([&] { run_finetune(cfg, spatial_opt); });
  CHECK(msg.find("from-scratch") != std::string::npos);

  CliOptions temporal_opt;
  temporal_opt.branch = "temporal";
  msg = thrown_message([&] { run_pretrain(cfg, temporal_opt); });
  CHECK(msg.find("flow") != std::string::npos);

  msg = thrown_message([&] { run_evaluate(cfg, opt); });
  CHECK(msg.find("finetune") != std::string::npos);

  fs::remove_all(out);
}

TEST_CASE("from-scratch fine-tuning skips the pretraining checkpoint") {
  const fs::path out = fresh_out("scratch");
  RunConfig cfg = tiny_config(out);
  cfg.fusion_mode = "spatial_only";
  CliOptions opt;
  run_synth(cfg, opt);

  CliOptions scratch;
  scratch.branch = "spatial";
  scratch.from_scratch = true;
  run_finetune(cfg, scratch);
  CHECK(fs::exists(fs::path(cfg.checkpoint_dir()) / "branch_spatial.ckpt"));
  CHECK_FALSE(fs::exists(fs::path(cfg.checkpoint_dir()) / "mae_spatial.ckpt"));

  // no temporal checkpoint, no flow cache, still evaluates
  run_evaluate(cfg, opt);
  CHECK(fs::exists(fs::path(cfg.report_dir()) / "metrics.json"));

  fs::remove_all(out);
}

TEST_CASE("dispatch maps names to stages and errors to exit codes") {
  const std::vector<std::string>& names = subcommands();
  CHECK(names.size() == 8);
  CHECK(std::find(names.begin(), names.end(), "synth") != names.end());
  CHECK(std::find(names.begin(), names.end(), "alpha-sweep") != names.end());

  const fs::path out = fresh_out("dispatch");
  const RunConfig cfg = tiny_config(out);
  CliOptions opt;
  CHECK(dispatch("no-such-stage", cfg, opt) == 2);
  CHECK(dispatch("synth", cfg, opt) == 0);
  CHECK(dispatch("synth", cfg, opt) == 1);  // refused overwrite surfaces as exit 1
  CHECK(dispatch("flow", cfg, opt) == 0);
  fs::remove_all(out);
}
