#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "masdt/detect.hpp"
#include "masdt/tensor.hpp"

namespace masdt {

// score >= threshold counts as a positive call; ties go to fake.
double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold = 0.5);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
  std::vector<double> thresholds;                 // +inf, distinct scores desc, -inf
};

// Threshold sweep over all distinct scores; needs both classes present.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Trapezoid area under the curve.
double auc(const RocCurve& curve);

struct SaliencyMap {
  Tensor map;  // [rows x cols] in [0,1]; max is 1 unless the map is all zero
  std::size_t rows() const { return map.dim(0); }
  std::size_t cols() const { return map.dim(1); }
};

// Gradient of the fake logit against the final block's token activations.
// Per token, weight = channel-mean gradient; the map is ReLU(weight times the
// token's channel sum) on the patch grid (CLS dropped), max-normalized.
SaliencyMap grad_cam(const BranchModel& branch, const Tensor& image);

struct ReportData {
  // metrics.json content: section -> metric name -> value
  std::map<std::string, std::map<std::string, double>> metrics;
  std::optional<RocCurve> roc;
  std::vector<std::pair<std::string, SaliencyMap>> saliency;  // clip id -> map
};

// Writes metrics.json, roc.csv (when a curve is present), saliency/<id>.pgm.
void emit_report(const ReportData& results, const std::string& out_dir);

}  // namespace masdt
