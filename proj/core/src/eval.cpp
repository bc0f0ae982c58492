#include "masdt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "masdt/image_io.hpp"
#include <json.hpp>

#include "masdt/utils.hpp"

namespace masdt {

namespace {

void check_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) throw std::invalid_argument("metrics: empty input");
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("metrics: non-finite score");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("metrics: labels must be 0 or 1");
  }
}

}  // namespace

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold) {
  check_pairs(scores, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int call = scores[i] >= threshold ? 1 : 0;
    if (call == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_pairs(scores, labels);
  std::size_t pos = 0;
  for (int l : labels) pos += static_cast<std::size_t>(l);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("roc_curve: needs both classes, got " + std::to_string(pos) +
                                " positive of " + std::to_string(labels.size()));
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  curve.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    // one threshold per distinct score; tied scores flip together
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    curve.thresholds.push_back(s);
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos));
  }
  curve.thresholds.push_back(-std::numeric_limits<double>::infinity());
  curve.points.emplace_back(1.0, 1.0);
  return curve;
}

double auc(const RocCurve& curve) {
  if (curve.points.size() < 2) throw std::invalid_argument("auc: degenerate curve");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& [fa, ta] = curve.points[i - 1];
    const auto& [fb, tb] = curve.points[i];
    if (fb < fa || tb < ta) throw std::invalid_argument("auc: curve not monotone");
    area += (fb - fa) * (ta + tb) * 0.5;
  }
  return area;
}

SaliencyMap grad_cam(const BranchModel& branch, const Tensor& image) {
  for (const auto& p : branch.named_params()) {
    p.tensor.assert_finite("grad_cam: parameter " + p.name);
  }
  Rng rng(0);
  BranchModel::Trace trace = branch.logit_traced(image, Mode::kEval, rng);
  trace.logit.assert_finite("grad_cam: logit");

  Gradients grads;
  backward_into(trace.logit, grads);
  const Tensor grad = grads.wrt(trace.last_block);

  const std::size_t dim = trace.last_block.dim(1);
  const std::size_t first = trace.has_cls ? 1 : 0;
  const std::size_t n = trace.last_block.dim(0) - first;
  const std::size_t gs = branch.config().grid_side();
  if (n != gs * gs) {
    throw std::logic_error("grad_cam: " + std::to_string(n) + " patch tokens for a " +
                           std::to_string(gs) + "-wide grid");
  }
  const auto& gv = grad.values();
  const auto& av = trace.last_block.values();
  std::vector<double> map(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = (first + i) * dim;
    double gsum = 0.0, asum = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      gsum += gv[row + c];
      asum += av[row + c];
    }
    map[i] = std::max(0.0, gsum / static_cast<double>(dim) * asum);
    if (!std::isfinite(map[i])) throw std::runtime_error("grad_cam: non-finite saliency");
    peak = std::max(peak, map[i]);
  }
  if (peak > 0.0) {
    for (double& v : map) v /= peak;
  }
  SaliencyMap out;
  out.map = Tensor::from_data({gs, gs}, std::move(map));
  return out;
}

void emit_report(const ReportData& results, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create " + out_dir + ": " + ec.message());

  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [section, values] : results.metrics) {
    nlohmann::json block = nlohmann::json::object();
    for (const auto& [name, value] : values) block[name] = value;
    metrics[section] = std::move(block);
  }
  write_file_atomic((fs::path(out_dir) / "metrics.json").string(), metrics.dump(2) + "\n");

  if (results.roc.has_value()) {
    const RocCurve& curve = *results.roc;
    std::string csv = "fpr,tpr,threshold\n";
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      csv += format_double(curve.points[i].first) + "," + format_double(curve.points[i].second) +
             "," + format_double(curve.thresholds[i]) + "\n";
    }
    write_file_atomic((fs::path(out_dir) / "roc.csv").string(), csv);
  }

  if (!results.saliency.empty()) {
    const fs::path sal_dir = fs::path(out_dir) / "saliency";
    fs::create_directories(sal_dir, ec);
    if (ec) {
      throw std::runtime_error("emit_report: cannot create " + sal_dir.string() + ": " + ec.message());
    }
    for (const auto& [id, sal] : results.saliency) {
      write_pgm((sal_dir / (id + ".pgm")).string(), sal.map);
    }
  }
}

}  // namespace masdt
