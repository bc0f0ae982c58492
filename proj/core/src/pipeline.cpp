#include "masdt/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "masdt/checkpoint.hpp"
#include "masdt/data.hpp"
#include "masdt/detect.hpp"
#include "masdt/eval.hpp"
#include "masdt/flow.hpp"
#include "masdt/image_io.hpp"
#include "masdt/mae.hpp"
#include "masdt/rng.hpp"
#include "masdt/utils.hpp"
#include "masdt/vit.hpp"

namespace masdt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSynthStream = 0x73796e74;   // clip seeds
constexpr std::uint64_t kSplitStream = 7;
constexpr std::uint64_t kBranchInitStream = 21;      // +1 for temporal
constexpr std::uint64_t kPretrainStream = 11;        // +1 for temporal
constexpr std::uint64_t kFinetuneStream = 31;        // +1 for temporal
constexpr std::uint64_t kFusionInitStream = 41;
constexpr std::uint64_t kFusionTrainStream = 42;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error(message);
}

// Refuses to clobber prior output unless --force, then clears the way.
void claim_dir(const fs::path& dir, bool force, const std::string& stage) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_empty(dir, ec)) {
    require(force, stage + ": " + dir.string() + " already has output, pass --force to overwrite");
    fs::remove_all(dir, ec);
    require(!ec, stage + ": cannot clear " + dir.string() + ": " + ec.message());
  }
  fs::create_directories(dir, ec);
  require(!ec, stage + ": cannot create " + dir.string() + ": " + ec.message());
}

void claim_file(const fs::path& path, bool force, const std::string& stage) {
  require(force || !fs::exists(path),
          stage + ": " + path.string() + " already exists, pass --force to overwrite");
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  require(!ec, stage + ": cannot create " + path.parent_path().string() + ": " + ec.message());
}

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the output root
  bool fake = false;
  std::string split;
};

fs::path manifest_path(const RunConfig& cfg) { return fs::path(cfg.data_dir()) / "manifest.json"; }

std::vector<ManifestEntry> read_manifest(const RunConfig& cfg) {
  const fs::path path = manifest_path(cfg);
  require(fs::exists(path), "no dataset manifest at " + path.string() + "; run synth first");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest " + path.string() + ": " + std::string(e.what()));
  }
  std::vector<ManifestEntry> entries;
  for (const json& c : j.at("clips")) {
    ManifestEntry e;
    e.id = c.at("id").get<std::string>();
    e.path = c.at("path").get<std::string>();
    e.fake = c.at("label").get<std::string>() == "fake";
    e.split = c.at("split").get<std::string>();
    entries.push_back(std::move(e));
  }
  require(!entries.empty(), "manifest " + path.string() + " lists no clips");
  return entries;
}

std::vector<ManifestEntry> split_entries(const std::vector<ManifestEntry>& all,
                                         const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : all) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

std::vector<Tensor> frames_of(const RunConfig& cfg, const ManifestEntry& entry) {
  Clip clip = load_frames((fs::path(cfg.out) / entry.path).string());
  require(clip.fake == entry.fake,
          "clip " + entry.id + ": label.txt disagrees with the manifest");
  return std::move(clip.frames);
}

fs::path flow_path(const RunConfig& cfg, const std::string& id, std::size_t t) {
  return fs::path(cfg.flow_dir()) / (id + "_" + std::to_string(t) + ".mflw");
}

std::vector<Tensor> flow_images_of(const RunConfig& cfg, const std::string& id,
                                   std::size_t num_frames) {
  std::vector<Tensor> images;
  images.reserve(num_frames - 1);
  for (std::size_t t = 0; t + 1 < num_frames; ++t) {
    const fs::path path = flow_path(cfg, id, t);
    require(fs::exists(path), "no flow cache at " + path.string() + "; run flow first");
    images.push_back(flow_to_image(load_flow(path.string()), cfg.flow.max_displacement));
  }
  return images;
}

BranchKind branch_kind_from_name(const std::string& name) {
  if (name == "spatial") return BranchKind::kSpatial;
  if (name == "temporal") return BranchKind::kTemporal;
  throw std::runtime_error("unknown branch \"" + name + "\" (spatial or temporal)");
}

const ViTConfig& vit_for(const RunConfig& cfg, BranchKind kind) {
  return kind == BranchKind::kSpatial ? cfg.vit_spatial : cfg.vit_temporal;
}

std::uint64_t branch_offset(BranchKind kind) { return kind == BranchKind::kSpatial ? 0 : 1; }

fs::path mae_ckpt_path(const RunConfig& cfg, BranchKind kind) {
  return fs::path(cfg.checkpoint_dir()) / ("mae_" + branch_name(kind) + ".ckpt");
}

fs::path branch_ckpt_path(const RunConfig& cfg, BranchKind kind) {
  return fs::path(cfg.checkpoint_dir()) / ("branch_" + branch_name(kind) + ".ckpt");
}

fs::path fusion_ckpt_path(const RunConfig& cfg) {
  return fs::path(cfg.checkpoint_dir()) / "fusion_head.ckpt";
}

std::string fusion_fingerprint(const RunConfig& cfg) {
  return to_hex(fnv1a64(vit_fingerprint(cfg.vit_spatial) + vit_fingerprint(cfg.vit_temporal)));
}

// Trained branch, ready to score.
BranchModel load_branch(const RunConfig& cfg, BranchKind kind) {
  const fs::path path = branch_ckpt_path(cfg, kind);
  require(fs::exists(path), "no " + branch_name(kind) + " checkpoint at " + path.string() +
                                "; run finetune first");
  BranchModel model(kind, vit_for(cfg, kind), mix64(cfg.seed, kBranchInitStream + branch_offset(kind)));
  Checkpoint ckpt = load_checkpoint(path.string());
  require(ckpt.kind == "branch_" + branch_name(kind),
          path.string() + " holds a \"" + ckpt.kind + "\" checkpoint");
  check_fingerprint(ckpt, vit_fingerprint(vit_for(cfg, kind)), true);
  model.load_tensors(ckpt);
  return model;
}

ClassifierHead load_fusion_head(const RunConfig& cfg) {
  const fs::path path = fusion_ckpt_path(cfg);
  require(fs::exists(path),
          "no fusion head checkpoint at " + path.string() + "; run finetune first");
  Rng rng(mix64(cfg.seed, kFusionInitStream));
  ClassifierHead head(cfg.vit_spatial.embed_dim + cfg.vit_temporal.embed_dim, rng);
  Checkpoint ckpt = load_checkpoint(path.string());
  require(ckpt.kind == "fusion_head", path.string() + " holds a \"" + ckpt.kind + "\" checkpoint");
  check_fingerprint(ckpt, fusion_fingerprint(cfg), true);
  std::vector<Parameter> params = head.named_params("fusion_head.", 0);
  const auto loaded = load_matching(ckpt, params);
  require(loaded.size() == params.size(), path.string() + " is missing fusion head tensors");
  return head;
}

std::string loss_csv(const std::vector<double>& losses) {
  std::string csv = "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(losses[i]) + "\n";
  }
  return csv;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// Raw per-frame and per-pair branch scores for one clip; fusion variants are
// derived afterwards without rescoring.
struct ClipScores {
  std::string id;
  bool fake = false;
  std::vector<double> spatial;   // per frame
  std::vector<double> temporal;  // per pair
  std::vector<double> feature;   // per pair, only when a head is supplied
};

ClipScores score_clip(const RunConfig& cfg, const ManifestEntry& entry, const BranchModel* spatial,
                      const BranchModel* temporal, const ClassifierHead* head) {
  ClipScores scores;
  scores.id = entry.id;
  scores.fake = entry.fake;
  const std::vector<Tensor> frames = frames_of(cfg, entry);
  if (spatial) {
    for (const Tensor& f : frames) scores.spatial.push_back(spatial->score(f));
  }
  if (temporal) {
    const std::vector<Tensor> flows = flow_images_of(cfg, entry.id, frames.size());
    for (const Tensor& f : flows) scores.temporal.push_back(temporal->score(f));
    if (head) {
      Rng rng(0);
      for (std::size_t t = 0; t < flows.size(); ++t) {
        Tensor es = spatial->embedding_for(frames[t], Mode::kEval, rng);
        Tensor et = temporal->embedding_for(flows[t], Mode::kEval, rng);
        const double z = fuse_features(es, et, *head).item();
        scores.feature.push_back(1.0 / (1.0 + std::exp(-std::max(std::min(z, 500.0), -500.0))));
      }
    }
  }
  return scores;
}

std::vector<ClipScores> score_clips(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                                    const BranchModel* spatial, const BranchModel* temporal,
                                    const ClassifierHead* head) {
  std::vector<ClipScores> scores(entries.size());
  parallel_for(entries.size(), static_cast<int>(cfg.jobs), [&](std::size_t i) {
    scores[i] = score_clip(cfg, entries[i], spatial, temporal, head);
  });
  return scores;
}

// Video-level fused score for one clip under a fusion rule.
double video_score(const ClipScores& s, FusionConfig::Mode mode, double alpha) {
  switch (mode) {
    case FusionConfig::Mode::kSpatialOnly:
      return mean_of(s.spatial);
    case FusionConfig::Mode::kFeature:
      return mean_of(s.feature);
    case FusionConfig::Mode::kScore: {
      std::vector<double> fused;
      fused.reserve(s.temporal.size());
      for (std::size_t t = 0; t < s.temporal.size(); ++t) {
        fused.push_back(fuse_scores(s.spatial[t], s.temporal[t], alpha));
      }
      return mean_of(fused);
    }
  }
  throw std::logic_error("bad fusion mode");
}

struct Metric {
  double accuracy = 0.0;
  double auc = 0.0;
};

Metric metric_of(const std::vector<double>& scores, const std::vector<int>& labels) {
  Metric m;
  m.accuracy = accuracy(scores, labels);
  m.auc = auc(roc_curve(scores, labels));
  return m;
}

std::vector<int> labels_of(const std::vector<ClipScores>& scores) {
  std::vector<int> labels;
  labels.reserve(scores.size());
  for (const auto& s : scores) labels.push_back(s.fake ? 1 : 0);
  return labels;
}

std::string zero_pad(std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
  return buf;
}

}  // namespace

void run_synth(const RunConfig& cfg, const CliOptions& opt) {
  const fs::path data_dir(cfg.data_dir());
  claim_dir(data_dir, opt.force, "synth");

  const std::size_t n = cfg.synth.clips;
  const auto n_fake = static_cast<std::size_t>(
      std::lround(cfg.synth.fake_fraction * static_cast<double>(n)));
  const std::size_t n_real = n - n_fake;
  const ArtifactKind cycle[3] = {ArtifactKind::kSpatial, ArtifactKind::kTemporal,
                                 ArtifactKind::kBoth};

  struct Plan {
    std::string id;
    std::uint64_t seed;
    bool fake;
    ArtifactKind kind;
  };
  std::vector<Plan> plans;
  plans.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Plan p;
    p.seed = mix64(mix64(cfg.seed, kSynthStream), i);
    p.fake = i >= n_real;
    p.kind = p.fake ? cycle[(i - n_real) % 3] : ArtifactKind::kSpatial;
    p.id = "c" + zero_pad(i, 4) + "_" + (p.fake ? artifact_kind_name(p.kind) : "real");
    plans.push_back(std::move(p));
  }

  std::vector<Clip> clips(n);
  parallel_for(n, static_cast<int>(cfg.jobs), [&](std::size_t i) {
    const Plan& p = plans[i];
    Clip clip = generate_synthetic_clip(p.seed, p.fake, p.kind, cfg.synth.frames, cfg.synth.height,
                                        cfg.synth.width);
    clip.clip_id = p.id;
    const fs::path dir = data_dir / p.id;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("synth: cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      write_png_rgb((dir / ("frame_" + zero_pad(t, 3) + ".png")).string(), clip.frames[t]);
    }
    write_file_atomic(dir / "label.txt", clip.fake ? "fake\n" : "real\n");
    if (clip.artifact_meta.has_value()) {
      const ArtifactMeta& meta = *clip.artifact_meta;
      json mj = {{"kind", artifact_kind_name(meta.kind)}, {"magnitude", meta.magnitude}};
      write_file_atomic(dir / "meta.json", mj.dump(2) + "\n");
      write_pgm((dir / "region.pgm").string(), meta.region);
    }
    clips[i] = std::move(clip);
  });

  const DatasetSplits splits = split_dataset(clips, cfg.split_spec(mix64(cfg.seed, kSplitStream)));
  std::map<std::string, std::string> split_of;
  for (const Clip& c : splits.train) split_of[c.clip_id] = "train";
  for (const Clip& c : splits.val) split_of[c.clip_id] = "val";
  for (const Clip& c : splits.test) split_of[c.clip_id] = "test";

  json manifest;
  manifest["clips"] = json::array();
  for (const Plan& p : plans) {
    manifest["clips"].push_back({{"id", p.id},
                                 {"path", (fs::path(cfg.paths.data) / p.id).generic_string()},
                                 {"label", p.fake ? "fake" : "real"},
                                 {"split", split_of.at(p.id)}});
  }
  write_file_atomic(manifest_path(cfg), manifest.dump(2) + "\n");
  std::cout << "[masdt] synth wrote " << n << " clips (" << splits.train.size() << " train, "
            << splits.val.size() << " val, " << splits.test.size() << " test) under "
            << data_dir.string() << "\n";
}

void run_flow(const RunConfig& cfg, const CliOptions& opt) {
  const std::vector<ManifestEntry> entries = read_manifest(cfg);
  const fs::path flow_dir(cfg.flow_dir());
  claim_dir(flow_dir, opt.force, "flow");

  parallel_for(entries.size(), static_cast<int>(cfg.jobs), [&](std::size_t i) {
    const std::vector<Tensor> frames = frames_of(cfg, entries[i]);
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
      const FlowField field =
          estimate_flow(grayscale(frames[t]), grayscale(frames[t + 1]), cfg.flow);
      save_flow(field, flow_path(cfg, entries[i].id, t).string());
    }
  });
  std::cout << "[masdt] flow cached fields for " << entries.size() << " clips under "
            << flow_dir.string() << "\n";
}

void run_pretrain(const RunConfig& cfg, const CliOptions& opt) {
  require(!opt.branch.empty(), "pretrain: pass --branch spatial or --branch temporal");
  const BranchKind kind = branch_kind_from_name(opt.branch);
  const std::vector<ManifestEntry> train = split_entries(read_manifest(cfg), "train");
  require(!train.empty(), "pretrain: train split is empty");

  const fs::path ckpt_path = mae_ckpt_path(cfg, kind);
  claim_file(ckpt_path, opt.force, "pretrain");

  std::vector<Tensor> images;
  for (const auto& entry : train) {
    if (kind == BranchKind::kSpatial) {
      for (Tensor& f : frames_of(cfg, entry)) images.push_back(std::move(f));
    } else {
      const std::size_t num_frames = frames_of(cfg, entry).size();
      for (Tensor& f : flow_images_of(cfg, entry.id, num_frames)) images.push_back(std::move(f));
    }
  }
  std::cout << "[masdt] pretrain " << branch_name(kind) << " on " << images.size() << " images\n";

  const ViTConfig& vit = vit_for(cfg, kind);
  PretrainResult result =
      pretrain(images, cfg.mae_config(vit), cfg.pretrain_config(),
               mix64(cfg.seed, kPretrainStream + branch_offset(kind)), vit_fingerprint(vit));
  result.checkpoint.kind = "mae_" + branch_name(kind);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    std::cout << "[masdt]   epoch " << e << " loss " << format_double(result.epoch_losses[e])
              << "\n";
  }
  save_checkpoint(result.checkpoint, ckpt_path.string());
  write_file_atomic(fs::path(cfg.checkpoint_dir()) / ("mae_" + branch_name(kind) + "_loss.csv"),
                    loss_csv(result.epoch_losses));
  std::cout << "[masdt] pretrain wrote " << ckpt_path.string() << "\n";
}

namespace {

void finetune_branch(const RunConfig& cfg, const CliOptions& opt, BranchKind kind,
                     const std::vector<ManifestEntry>& train) {
  const fs::path ckpt_path = branch_ckpt_path(cfg, kind);
  claim_file(ckpt_path, opt.force, "finetune");

  const ViTConfig& vit = vit_for(cfg, kind);
  BranchModel model(kind, vit, mix64(cfg.seed, kBranchInitStream + branch_offset(kind)));

  if (!opt.from_scratch) {
    const fs::path mae_path = mae_ckpt_path(cfg, kind);
    require(fs::exists(mae_path), "finetune: no pretraining checkpoint at " + mae_path.string() +
                                      "; run pretrain or pass --from-scratch");
    Checkpoint ckpt = load_checkpoint(mae_path.string());
    require(ckpt.kind == "mae_" + branch_name(kind),
            mae_path.string() + " holds a \"" + ckpt.kind + "\" checkpoint");
    check_fingerprint(ckpt, vit_fingerprint(vit), true);
    model.load_encoder_tensors(ckpt);
  }

  std::vector<Sample> samples;
  for (const auto& entry : train) {
    const double label = entry.fake ? 1.0 : 0.0;
    if (kind == BranchKind::kSpatial) {
      for (Tensor& f : frames_of(cfg, entry)) samples.push_back({std::move(f), label});
    } else {
      const std::size_t num_frames = frames_of(cfg, entry).size();
      for (Tensor& f : flow_images_of(cfg, entry.id, num_frames)) {
        samples.push_back({std::move(f), label});
      }
    }
  }
  std::cout << "[masdt] finetune " << branch_name(kind) << " on " << samples.size()
            << " samples\n";

  FinetuneResult result =
      finetune(model, samples, cfg.train_config(mix64(cfg.seed, kFinetuneStream + branch_offset(kind))),
               vit_fingerprint(vit));
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    std::cout << "[masdt]   epoch " << e << " loss " << format_double(result.epoch_losses[e])
              << "\n";
  }
  save_checkpoint(result.checkpoint, ckpt_path.string());
  write_file_atomic(fs::path(cfg.checkpoint_dir()) / ("branch_" + branch_name(kind) + "_loss.csv"),
                    loss_csv(result.epoch_losses));
  std::cout << "[masdt] finetune wrote " << ckpt_path.string() << "\n";
}

void finetune_fusion_head(const RunConfig& cfg, const CliOptions& opt,
                          const std::vector<ManifestEntry>& train) {
  const fs::path ckpt_path = fusion_ckpt_path(cfg);
  claim_file(ckpt_path, opt.force, "finetune");

  const BranchModel spatial = load_branch(cfg, BranchKind::kSpatial);
  const BranchModel temporal = load_branch(cfg, BranchKind::kTemporal);

  std::vector<EmbeddingPair> pairs;
  Rng rng(0);
  for (const auto& entry : train) {
    const std::vector<Tensor> frames = frames_of(cfg, entry);
    const std::vector<Tensor> flows = flow_images_of(cfg, entry.id, frames.size());
    for (std::size_t t = 0; t < flows.size(); ++t) {
      EmbeddingPair pair;
      pair.spatial = spatial.embedding_for(frames[t], Mode::kEval, rng).detach();
      pair.temporal = temporal.embedding_for(flows[t], Mode::kEval, rng).detach();
      pair.label = entry.fake ? 1.0 : 0.0;
      pairs.push_back(std::move(pair));
    }
  }
  std::cout << "[masdt] finetune fusion head on " << pairs.size() << " embedding pairs\n";

  Rng init_rng(mix64(cfg.seed, kFusionInitStream));
  ClassifierHead head(cfg.vit_spatial.embed_dim + cfg.vit_temporal.embed_dim, init_rng);
  TrainConfig tc = cfg.train_config(mix64(cfg.seed, kFusionTrainStream));
  FinetuneResult result = train_fusion_head(head, pairs, tc, fusion_fingerprint(cfg));
  save_checkpoint(result.checkpoint, ckpt_path.string());
  write_file_atomic(fs::path(cfg.checkpoint_dir()) / "fusion_head_loss.csv",
                    loss_csv(result.epoch_losses));
  std::cout << "[masdt] finetune wrote " << ckpt_path.string() << "\n";
}

}  // namespace

void run_finetune(const RunConfig& cfg, const CliOptions& opt) {
  const std::vector<ManifestEntry> train = split_entries(read_manifest(cfg), "train");
  require(!train.empty(), "finetune: train split is empty");

  if (!opt.branch.empty()) {
    finetune_branch(cfg, opt, branch_kind_from_name(opt.branch), train);
    return;
  }
  finetune_branch(cfg, opt, BranchKind::kSpatial, train);
  finetune_branch(cfg, opt, BranchKind::kTemporal, train);
  finetune_fusion_head(cfg, opt, train);
}

void run_evaluate(const RunConfig& cfg, const CliOptions& opt) {
  const FusionConfig fusion = cfg.fusion_config();
  const std::vector<ManifestEntry> test = split_entries(read_manifest(cfg), "test");
  require(!test.empty(), "evaluate: test split is empty");

  const fs::path report_dir(cfg.report_dir());
  claim_file(report_dir / "predictions.csv", opt.force, "evaluate");
  claim_file(report_dir / "metrics.json", opt.force, "evaluate");
  claim_file(report_dir / "roc.csv", opt.force, "evaluate");
  if (opt.trace) claim_file(report_dir / "trace.csv", opt.force, "evaluate");

  const BranchModel spatial = load_branch(cfg, BranchKind::kSpatial);
  // spatial_only must stay runnable with no temporal artifacts on disk, so
  // the temporal checkpoint, fusion head, and flow cache are only touched in
  // the other modes
  std::optional<BranchModel> temporal;
  std::optional<ClassifierHead> head;
  if (fusion.mode != FusionConfig::Mode::kSpatialOnly) {
    temporal.emplace(load_branch(cfg, BranchKind::kTemporal));
    if (fusion.mode == FusionConfig::Mode::kFeature) head.emplace(load_fusion_head(cfg));
  }

  const std::vector<ClipScores> scores =
      score_clips(cfg, test, &spatial, temporal ? &*temporal : nullptr, head ? &*head : nullptr);
  const std::vector<int> labels = labels_of(scores);

  std::vector<double> fused, spatial_video, temporal_video;
  for (const auto& s : scores) {
    fused.push_back(video_score(s, fusion.mode, fusion.alpha));
    spatial_video.push_back(mean_of(s.spatial));
    if (temporal) temporal_video.push_back(mean_of(s.temporal));
  }

  std::string pred_csv = "clip_id,spatial_score,temporal_score,fused_score,label\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    pred_csv += scores[i].id + "," + format_double(spatial_video[i]) + "," +
                format_double(temporal ? temporal_video[i]
                                       : std::numeric_limits<double>::quiet_NaN()) +
                "," + format_double(fused[i]) + "," + (scores[i].fake ? "1" : "0") + "\n";
  }
  write_file_atomic(report_dir / "predictions.csv", pred_csv);

  ReportData report;
  const Metric fused_metric = metric_of(fused, labels);
  auto& section = report.metrics["test"];
  section["accuracy"] = fused_metric.accuracy;
  section["auc"] = fused_metric.auc;
  section["auc_spatial"] = metric_of(spatial_video, labels).auc;
  if (temporal) section["auc_temporal"] = metric_of(temporal_video, labels).auc;
  report.roc = roc_curve(fused, labels);
  emit_report(report, report_dir.string());

  if (opt.trace) {
    std::string trace_csv = "clip_id,frame,spatial_score,temporal_score,fused_score\n";
    for (const auto& s : scores) {
      for (std::size_t t = 0; t < s.spatial.size(); ++t) {
        const bool pair = t < s.temporal.size();
        double frame_fused = std::numeric_limits<double>::quiet_NaN();
        if (fusion.mode == FusionConfig::Mode::kSpatialOnly) {
          frame_fused = s.spatial[t];
        } else if (pair) {
          frame_fused = fusion.mode == FusionConfig::Mode::kFeature
                            ? s.feature[t]
                            : fuse_scores(s.spatial[t], s.temporal[t], fusion.alpha);
        }
        trace_csv += s.id + "," + std::to_string(t) + "," + format_double(s.spatial[t]) + "," +
                     format_double(pair ? s.temporal[t]
                                        : std::numeric_limits<double>::quiet_NaN()) +
                     "," + format_double(frame_fused) + "\n";
      }
    }
    write_file_atomic(report_dir / "trace.csv", trace_csv);
  }

  std::cout << "[masdt] evaluate mode=" << fusion_mode_name(fusion.mode) << " test accuracy "
            << format_double(fused_metric.accuracy) << " auc " << format_double(fused_metric.auc)
            << "\n";
}

void run_gradcam(const RunConfig& cfg, const CliOptions& opt) {
  const BranchKind kind = opt.branch.empty() ? BranchKind::kSpatial
                                             : branch_kind_from_name(opt.branch);
  const std::vector<ManifestEntry> test = split_entries(read_manifest(cfg), "test");
  std::vector<ManifestEntry> fakes;
  for (const auto& e : test) {
    if (e.fake) fakes.push_back(e);
  }
  require(!fakes.empty(), "gradcam: no fake clips in the test split");

  const fs::path sal_dir = fs::path(cfg.report_dir()) / "saliency";
  claim_dir(sal_dir, opt.force, "gradcam");

  const BranchModel model = load_branch(cfg, kind);
  parallel_for(fakes.size(), static_cast<int>(cfg.jobs), [&](std::size_t i) {
    const ManifestEntry& entry = fakes[i];
    const std::vector<Tensor> frames = frames_of(cfg, entry);
    Tensor input;
    if (kind == BranchKind::kSpatial) {
      input = frames[frames.size() / 2];
    } else {
      const std::vector<Tensor> flows = flow_images_of(cfg, entry.id, frames.size());
      input = flows[flows.size() / 2];
    }
    const SaliencyMap sal = grad_cam(model, input);
    write_pgm((sal_dir / (entry.id + ".pgm")).string(), sal.map);
  });
  std::cout << "[masdt] gradcam wrote " << fakes.size() << " maps under " << sal_dir.string()
            << "\n";
}

void run_alpha_sweep(const RunConfig& cfg, const CliOptions& opt) {
  const std::vector<ManifestEntry> val = split_entries(read_manifest(cfg), "val");
  require(!val.empty(), "alpha-sweep: validation split is empty");

  const fs::path out_path = fs::path(cfg.report_dir()) / "alpha_sweep.csv";
  claim_file(out_path, opt.force, "alpha-sweep");

  const BranchModel spatial = load_branch(cfg, BranchKind::kSpatial);
  const BranchModel temporal = load_branch(cfg, BranchKind::kTemporal);
  const std::vector<ClipScores> scores = score_clips(cfg, val, &spatial, &temporal, nullptr);
  const std::vector<int> labels = labels_of(scores);

  std::string csv = "alpha,auc\n";
  for (int step = 0; step <= 10; ++step) {
    const double alpha = static_cast<double>(step) / 10.0;
    std::vector<double> fused;
    fused.reserve(scores.size());
    for (const auto& s : scores) fused.push_back(video_score(s, FusionConfig::Mode::kScore, alpha));
    csv += format_double(alpha) + "," + format_double(auc(roc_curve(fused, labels))) + "\n";
  }
  write_file_atomic(out_path, csv);
  std::cout << "[masdt] alpha-sweep wrote " << out_path.string() << "\n";
}

void run_ablate(const RunConfig& cfg, const CliOptions& opt) {
  const std::vector<ManifestEntry> test = split_entries(read_manifest(cfg), "test");
  require(!test.empty(), "ablate: test split is empty");

  const fs::path out_path = fs::path(cfg.report_dir()) / "ablation.csv";
  claim_file(out_path, opt.force, "ablate");

  const BranchModel spatial = load_branch(cfg, BranchKind::kSpatial);
  const BranchModel temporal = load_branch(cfg, BranchKind::kTemporal);
  const ClassifierHead head = load_fusion_head(cfg);
  const std::vector<ClipScores> scores = score_clips(cfg, test, &spatial, &temporal, &head);
  const std::vector<int> labels = labels_of(scores);

  const auto row = [&](FusionConfig::Mode mode, double alpha) {
    std::vector<double> fused;
    fused.reserve(scores.size());
    for (const auto& s : scores) fused.push_back(video_score(s, mode, alpha));
    return metric_of(fused, labels);
  };

  std::string csv = "mode,accuracy,auc\n";
  const Metric score_fusion = row(FusionConfig::Mode::kScore, cfg.fusion_alpha);
  const Metric feature_fusion = row(FusionConfig::Mode::kFeature, cfg.fusion_alpha);
  const Metric spatial_only = row(FusionConfig::Mode::kSpatialOnly, cfg.fusion_alpha);
  const Metric temporal_only = row(FusionConfig::Mode::kScore, 0.0);
  csv += "score_fusion," + format_double(score_fusion.accuracy) + "," +
         format_double(score_fusion.auc) + "\n";
  csv += "feature_fusion," + format_double(feature_fusion.accuracy) + "," +
         format_double(feature_fusion.auc) + "\n";
  csv += "spatial_only," + format_double(spatial_only.accuracy) + "," +
         format_double(spatial_only.auc) + "\n";
  csv += "temporal_only," + format_double(temporal_only.accuracy) + "," +
         format_double(temporal_only.auc) + "\n";
  write_file_atomic(out_path, csv);
  std::cout << "[masdt] ablate wrote " << out_path.string() << "\n";
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"synth",     "flow",    "pretrain",
                                                 "finetune",  "evaluate", "gradcam",
                                                 "alpha-sweep", "ablate"};
  return names;
}

int dispatch(const std::string& subcommand, const RunConfig& cfg, const CliOptions& opt) {
  using Stage = void (*)(const RunConfig&, const CliOptions&);
  static const std::map<std::string, Stage> stages = {
      {"synth", run_synth},         {"flow", run_flow},
      {"pretrain", run_pretrain},   {"finetune", run_finetune},
      {"evaluate", run_evaluate},   {"gradcam", run_gradcam},
      {"alpha-sweep", run_alpha_sweep}, {"ablate", run_ablate}};
  const auto it = stages.find(subcommand);
  if (it == stages.end()) {
    std::cerr << "unknown subcommand: " << subcommand << "\n";
    return 2;
  }
  std::cout << "[masdt] " << subcommand << " seed=" << cfg.seed
            << " config=" << config_fingerprint(cfg) << "\n";
  try {
    it->second(cfg, opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace masdt
