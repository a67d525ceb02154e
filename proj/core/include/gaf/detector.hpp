#pragma once

// Minimal anchor-free 1-D action analyzer.
//
// Every frame of the enhanced feature map predicts class logits (class 0 is
// background) and two non-negative offsets to the enclosing interval's
// boundaries. Pooled action / non-action features share the class head.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gaf/attention.hpp"
#include "gaf/nn.hpp"
#include "gaf/synthgen.hpp"
#include "gaf/tensor.hpp"

namespace gaf {

struct DetectorConfig {
  std::size_t input_dim = 16;
  int num_classes = 5;  // K; the class head has K + 1 outputs
  // Offsets are regressed in units of this many frames.
  double offset_scale = 16.0;
};

struct DetectorModel {
  DetectorConfig config;
  Linear clf_head;  // D -> K + 1
  Linear reg_head;  // D -> 2, softplus

  DetectorModel() = default;
  DetectorModel(const DetectorConfig& config, Rng& rng);

  // Paths are prefixed "detector.".
  ParamList parameters() const;
};

// -log p(c | f_ai)
Tensor clf_loss_action(const DetectorModel& model, const Tensor& f_ai, int class_id);
// -log p(0 | f_nai)
Tensor clf_loss_non_action(const DetectorModel& model, const Tensor& f_nai);
Tensor clf_loss(const DetectorModel& model, const Tensor& f_ai, const Tensor& f_nai, int class_id);

// T x 2 predicted (d_start, d_end) in frames.
Tensor predict_offsets(const DetectorModel& model, const Tensor& enhanced);

struct RegressionTerms {
  Tensor action;      // sum over interval frames of lambda_t * smooth_l1(offset residual) / T
  Tensor non_action;  // sum over background frames of (1 - lambda_t) * smooth_l1(offset) / T
  Tensor total() const { return add(action, non_action); }
};

// Residuals are measured in units of offset_scale frames.
RegressionTerms offset_regression_terms(const Tensor& offsets, const AttentionMap& lam,
                                        std::span<const ActionInterval> intervals,
                                        double offset_scale);

Tensor reg_loss(const DetectorModel& model, const Tensor& enhanced, const AttentionMap& lam,
                std::span<const ActionInterval> intervals);

Tensor detector_loss(const Tensor& clf, const Tensor& reg, double alpha, double beta_reg);

// ---- inference and evaluation ---------------------------------------------

struct Proposal {
  double start = 0.0;
  double end = 0.0;
  int class_id = 1;
  double score = 0.0;
};

struct DetectionResult {
  std::string seq_id;
  std::vector<Proposal> proposals;  // descending score
};

double temporal_iou(double a_start, double a_end, double b_start, double b_end);
double iou(const Proposal& a, const Proposal& b);
double iou(const ActionInterval& a, const ActionInterval& b);

// Greedy class-wise suppression; survivors sorted by descending score.
std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold);

// One candidate per frame with lambda_t >= score_thresh, then NMS.
DetectionResult decode_detections(const DetectorModel& model, const Tensor& enhanced,
                                  const AttentionMap& lam,
                                  double score_thresh, double nms_iou, std::string seq_id = {});

inline const std::vector<double> kDefaultIouThresholds{0.3, 0.4, 0.5, 0.6, 0.7};

struct EvalReport {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> ap;  // class -> AP per threshold (classes with ground truth)
  std::vector<double> map;                // per threshold
  double avg_map = 0.0;

  double map_at(double threshold) const;
};

// All-point interpolated average precision from per-detection TP flags
// (already in rank order) and the ground-truth count.
double average_precision(const std::vector<bool>& true_positive, std::size_t num_ground_truth);

EvalReport evaluate_map(std::span<const DetectionResult> results,
                        std::span<const FeatureSequence> truth,
                        std::span<const double> iou_thresholds);

std::string threshold_key(double threshold);
std::string eval_report_to_json(const EvalReport& report);

}  // namespace gaf
