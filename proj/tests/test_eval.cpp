#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <masdt/detect.hpp>
#include <masdt/eval.hpp>
#include <masdt/rng.hpp>
#include <masdt/vit.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

using namespace masdt;
namespace fs = std::filesystem;

namespace {

// P(score_fake > score_real) + 0.5 P(equal), counted over every pair.
double pair_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  REQUIRE(pairs > 0);
  return wins / static_cast<double>(pairs);
}

ViTConfig tiny_vit() {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 32;
  cfg.depth = 2;
  cfg.num_heads = 4;
  cfg.mlp_ratio = 4.0;
  cfg.drop_path_rate = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("accuracy basics and the tie rule") {
  CHECK(accuracy({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == 1.0);
  CHECK(accuracy({0.1, 0.2, 0.9, 0.8}, {1, 1, 0, 0}) == 0.0);
  // score >= threshold counts positive, so a 0.5 score calls everything fake
  CHECK(accuracy({0.5, 0.5, 0.5, 0.5}, {1, 1, 1, 0}) == 0.75);
  CHECK(accuracy({0.5, 0.5}, {0, 0}) == 0.0);
  // inverted scores flip every verdict when nothing sits on the threshold
  const std::vector<double> s{0.9, 0.3, 0.6, 0.2};
  const std::vector<int> y{1, 0, 0, 1};
  std::vector<double> inv(s.size());
  std::transform(s.begin(), s.end(), inv.begin(), [](double v) { return 1.0 - v; });
  CHECK(accuracy(s, y) + accuracy(inv, y) == 1.0);
}

TEST_CASE("accuracy input validation") {
  CHECK_THROWS_AS((void)accuracy({}, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)accuracy({0.5}, {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS((void)accuracy({0.5}, {2}), std::invalid_argument);
  CHECK_THROWS_AS((void)accuracy({std::numeric_limits<double>::quiet_NaN()}, {1}),
                  std::invalid_argument);
}

TEST_CASE("roc endpoints and perfect separation") {
  const RocCurve curve = roc_curve({0.9, 0.1}, {1, 0});
  REQUIRE(curve.points.size() >= 3);
  CHECK(curve.points.front() == std::pair<double, double>(0.0, 0.0));
  CHECK(curve.points.back() == std::pair<double, double>(1.0, 1.0));
  const bool hits_corner =
      std::any_of(curve.points.begin(), curve.points.end(),
                  [](const std::pair<double, double>& p) { return p.first == 0.0 && p.second == 1.0; });
  CHECK(hits_corner);
  CHECK(auc(curve) == 1.0);
  CHECK(curve.thresholds.front() == std::numeric_limits<double>::infinity());
  CHECK(curve.thresholds.back() == -std::numeric_limits<double>::infinity());
}

TEST_CASE("all-equal scores collapse to the diagonal") {
  const RocCurve curve = roc_curve({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0});
  CHECK(curve.points.front() == std::pair<double, double>(0.0, 0.0));
  CHECK(curve.points.back() == std::pair<double, double>(1.0, 1.0));
  CHECK(curve.thresholds.size() == 3);  // +inf, the one score, -inf
  CHECK(auc(curve) == 0.5);
}

TEST_CASE("roc matches an exhaustive threshold sweep") {
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) {
      // quantized scores so ties actually occur
      scores.push_back(std::floor(rng.uniform() * 8.0) / 8.0);
      labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;

    std::set<double, std::greater<double>> distinct(scores.begin(), scores.end());
    std::vector<double> thresholds{std::numeric_limits<double>::infinity()};
    thresholds.insert(thresholds.end(), distinct.begin(), distinct.end());
    thresholds.push_back(-std::numeric_limits<double>::infinity());

    const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double neg = static_cast<double>(labels.size()) - pos;
    std::vector<std::pair<double, double>> expect;
    for (double th : thresholds) {
      double tp = 0.0, fp = 0.0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= th) (labels[i] == 1 ? tp : fp) += 1.0;
      }
      expect.emplace_back(fp / neg, tp / pos);
    }

    const RocCurve curve = roc_curve(scores, labels);
    REQUIRE(curve.points.size() == expect.size());
    REQUIRE(curve.thresholds.size() == thresholds.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(curve.points[i].first == doctest::Approx(expect[i].first).epsilon(1e-12));
      CHECK(curve.points[i].second == doctest::Approx(expect[i].second).epsilon(1e-12));
      CHECK(curve.thresholds[i] == thresholds[i]);
    }
  }
}

TEST_CASE("roc rejects single-class input") {
  CHECK_THROWS_AS((void)roc_curve({0.1, 0.9}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS((void)roc_curve({0.1, 0.9}, {0, 0}), std::invalid_argument);
}

TEST_CASE("auc equals the all-pairs oracle") {
  Rng rng(777);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(rng.uniform() * 195.0);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const bool tie_prone = rng.uniform() < 0.5;
      scores.push_back(tie_prone ? std::floor(rng.uniform() * 4.0) / 4.0 : rng.uniform());
      labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[n / 2] = 0;

    const double got = auc(roc_curve(scores, labels));
    const double want = pair_auc(scores, labels);
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("auc ignores any strictly increasing rescoring") {
  Rng rng(31);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) {
    scores.push_back(rng.normal());
    labels.push_back(i % 3 == 0 ? 1 : 0);
  }
  const double base = auc(roc_curve(scores, labels));

  std::vector<double> exp_scores(scores.size()), affine(scores.size());
  std::transform(scores.begin(), scores.end(), exp_scores.begin(),
                 [](double v) { return std::exp(v); });
  std::transform(scores.begin(), scores.end(), affine.begin(),
                 [](double v) { return 3.0 * v + 1.0; });
  CHECK(std::abs(auc(roc_curve(exp_scores, labels)) - base) < 1e-12);
  CHECK(std::abs(auc(roc_curve(affine, labels)) - base) < 1e-12);

  std::vector<int> flipped(labels.size());
  std::transform(labels.begin(), labels.end(), flipped.begin(), [](int l) { return 1 - l; });
  CHECK(std::abs(auc(roc_curve(scores, flipped)) + base - 1.0) < 1e-12);
}

TEST_CASE("auc rejects malformed curves") {
  RocCurve degenerate;
  degenerate.points = {{0.0, 0.0}};
  CHECK_THROWS_AS((void)auc(degenerate), std::invalid_argument);

  RocCurve backwards;
  backwards.points = {{0.0, 0.0}, {0.5, 0.8}, {0.3, 0.9}, {1.0, 1.0}};
  CHECK_THROWS_AS((void)auc(backwards), std::invalid_argument);
}

TEST_CASE("saliency maps sit on the patch grid in [0,1]") {
  const BranchModel branch(BranchKind::kSpatial, tiny_vit(), 512);
  Rng rng(6);
  std::vector<double> data(3 * 16 * 16);
  for (double& v : data) v = rng.uniform();
  const Tensor image = Tensor::from_data({3, 16, 16}, data);

  const SaliencyMap sal = grad_cam(branch, image);
  CHECK(sal.rows() == 4);
  CHECK(sal.cols() == 4);
  double peak = 0.0;
  for (std::size_t i = 0; i < sal.map.numel(); ++i) {
    CHECK(sal.map.values()[i] >= 0.0);
    CHECK(sal.map.values()[i] <= 1.0);
    peak = std::max(peak, sal.map.values()[i]);
  }
  const bool normalized = peak == 1.0 || peak == 0.0;
  CHECK(normalized);

  const SaliencyMap again = grad_cam(branch, image);
  for (std::size_t i = 0; i < sal.map.numel(); ++i) {
    CHECK(sal.map.values()[i] == again.map.values()[i]);
  }
}

TEST_CASE("grad_cam refuses poisoned parameters") {
  BranchModel branch(BranchKind::kSpatial, tiny_vit(), 512);
  const Tensor image = Tensor::full({3, 16, 16}, 0.5);
  CHECK_NOTHROW((void)grad_cam(branch, image));
  auto params = branch.named_params();
  REQUIRE_FALSE(params.empty());
  params.front().tensor.values_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)grad_cam(branch, image), std::runtime_error);
}

namespace {

fs::path fresh_report_dir(const std::string& tag) {
  fs::path dir =
      fs::temp_directory_path() / ("masdt_eval_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("empty report writes an empty metrics map and no roc") {
  const fs::path dir = fresh_report_dir("empty");
  emit_report(ReportData{}, dir.string());
  const nlohmann::json metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
  CHECK(metrics.is_object());
  CHECK(metrics.empty());
  CHECK_FALSE(fs::exists(dir / "roc.csv"));
  fs::remove_all(dir);
}

TEST_CASE("report files carry the metrics, curve, and saliency") {
  const fs::path dir = fresh_report_dir("full");
  ReportData data;
  data.metrics["test"]["accuracy"] = 0.875;
  data.metrics["test"]["auc"] = 0.9375;
  data.roc = roc_curve({0.9, 0.7, 0.7, 0.2, 0.1}, {1, 1, 0, 0, 0});

  SaliencyMap sal;
  sal.map = Tensor::from_data({2, 2}, {0.0, 0.25, 0.5, 1.0});
  data.saliency.emplace_back("clipA", sal);

  emit_report(data, dir.string());

  const nlohmann::json metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
  CHECK(metrics["test"]["accuracy"].get<double>() == 0.875);
  CHECK(metrics["test"]["auc"].get<double>() == 0.9375);

  const std::string roc = slurp(dir / "roc.csv");
  std::size_t lines = static_cast<std::size_t>(std::count(roc.begin(), roc.end(), '\n'));
  CHECK(roc.rfind("fpr,tpr,threshold", 0) == 0);
  // header + one row per threshold: +inf, 4 distinct scores, -inf
  CHECK(lines == 1 + data.roc->thresholds.size());

  const std::string pgm = slurp(dir / "saliency" / "clipA.pgm");
  CHECK(pgm.rfind("P5", 0) == 0);
  CHECK(pgm.find("255") != std::string::npos);
  // 4 payload bytes after the header for a 2x2 map
  const std::size_t header_end = pgm.find("255\n");
  REQUIRE(header_end != std::string::npos);
  CHECK(pgm.size() == header_end + 4 + 4);
  CHECK(static_cast<unsigned char>(pgm.back()) == 255);
  fs::remove_all(dir);
}
