#include "gaf/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gaf/errors.hpp"

namespace gaf {

DetectorModel::DetectorModel(const DetectorConfig& cfg, Rng& rng)
    : config(cfg),
      clf_head(cfg.input_dim, static_cast<std::size_t>(cfg.num_classes) + 1, rng),
      reg_head(cfg.input_dim, 2, rng) {}

ParamList DetectorModel::parameters() const {
  ParamList out;
  clf_head.collect(out, "detector.clf_head");
  reg_head.collect(out, "detector.reg_head");
  return out;
}

namespace {

Tensor negative_log_likelihood(const DetectorModel& model, const Tensor& pooled, int class_id) {
  if (pooled.rank() != 2 || pooled.dim(0) != 1) {
    throw DimensionError("pooled feature must be 1 x D, got " + to_string(pooled.shape()));
  }
  return neg(element(log_softmax_rows(model.clf_head(pooled)), static_cast<std::size_t>(class_id)));
}

}  // namespace

Tensor clf_loss_action(const DetectorModel& model, const Tensor& f_ai, int class_id) {
  if (class_id < 1 || class_id > model.config.num_classes) {
    throw ContractError(fmt::format("action-instance class must be in 1..{}, got {}",
                                    model.config.num_classes, class_id));
  }
  return negative_log_likelihood(model, f_ai, class_id);
}

Tensor clf_loss_non_action(const DetectorModel& model, const Tensor& f_nai) {
  return negative_log_likelihood(model, f_nai, 0);
}

Tensor clf_loss(const DetectorModel& model, const Tensor& f_ai, const Tensor& f_nai, int class_id) {
  return add(clf_loss_action(model, f_ai, class_id), clf_loss_non_action(model, f_nai));
}

Tensor predict_offsets(const DetectorModel& model, const Tensor& enhanced) {
  return scale(softplus(model.reg_head(enhanced)), model.config.offset_scale);
}

RegressionTerms offset_regression_terms(const Tensor& offsets, const AttentionMap& lam,
                                        std::span<const ActionInterval> intervals,
                                        double offset_scale) {
  const std::size_t T = lam.size();
  if (offsets.shape() != Shape{T, 2}) {
    throw DimensionError(fmt::format("offsets {} do not match T={} x 2", to_string(offsets.shape()), T));
  }
  std::vector<double> target(T * 2, 0.0);
  std::vector<double> inside(T, 0.0);
  for (const auto& iv : intervals) {
    if (iv.start < 0 || iv.end > static_cast<int>(T) || iv.start >= iv.end) {
      throw ContractError(fmt::format("interval [{}, {}) outside sequence of length {}", iv.start,
                                      iv.end, T));
    }
    for (int t = iv.start; t < iv.end; ++t) {
      inside[t] = 1.0;
      target[2 * t] = t - iv.start;
      target[2 * t + 1] = iv.end - t;
    }
  }
  std::vector<double> outside(T);
  std::transform(inside.begin(), inside.end(), outside.begin(), [](double v) { return 1.0 - v; });

  const Tensor residual =
      scale(sub(offsets, Tensor::from({T, 2}, std::move(target))), 1.0 / offset_scale);
  const Tensor per_frame = sum_cols(smooth_l1(residual));  // T x 1
  const Tensor w_action = mul(lam.tensor(), Tensor::from({T, 1}, std::move(inside)));
  const Tensor w_non_action = mul(lam.complement(), Tensor::from({T, 1}, std::move(outside)));
  const double inv_t = 1.0 / static_cast<double>(T);
  return {scale(sum(mul(w_action, per_frame)), inv_t),
          scale(sum(mul(w_non_action, per_frame)), inv_t)};
}

Tensor reg_loss(const DetectorModel& model, const Tensor& enhanced, const AttentionMap& lam,
                std::span<const ActionInterval> intervals) {
  return offset_regression_terms(predict_offsets(model, enhanced), lam, intervals,
                                 model.config.offset_scale)
      .total();
}

Tensor detector_loss(const Tensor& clf, const Tensor& reg, double alpha, double beta_reg) {
  if (!(alpha >= 0.0) || !(beta_reg >= 0.0)) {
    throw ContractError("detector_loss: alpha and beta_reg must be non-negative");
  }
  return add(scale(clf, alpha), scale(reg, beta_reg));
}

// ---------------------------------------------------------------------------

double temporal_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou(const Proposal& a, const Proposal& b) { return temporal_iou(a.start, a.end, b.start, b.end); }

double iou(const ActionInterval& a, const ActionInterval& b) {
  return temporal_iou(a.start, a.end, b.start, b.end);
}

namespace {

bool ranks_before(const Proposal& a, const Proposal& b) {
  return std::tie(b.score, a.start, a.end, a.class_id) < std::tie(a.score, b.start, b.end, b.class_id);
}

}  // namespace

std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold) {
  std::stable_sort(proposals.begin(), proposals.end(), ranks_before);
  std::vector<Proposal> kept;
  for (const auto& p : proposals) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Proposal& k) {
      return k.class_id == p.class_id && iou(k, p) > iou_threshold;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

DetectionResult decode_detections(const DetectorModel& model, const Tensor& enhanced,
                                  const AttentionMap& lam,
                                  double score_thresh, double nms_iou, std::string seq_id) {
  if (score_thresh < 0.0 || score_thresh > 1.0 || nms_iou < 0.0 || nms_iou > 1.0) {
    throw ContractError("decode: thresholds must lie in [0, 1]");
  }
  const std::size_t T = lam.size();
  const Tensor probs = exp(log_softmax_rows(model.clf_head(enhanced.detach())));
  const Tensor offsets = predict_offsets(model, enhanced.detach());
  const std::size_t C = probs.dim(1);
  auto pv = probs.data();
  auto ov = offsets.data();
  auto lv = lam.values();

  std::vector<Proposal> candidates;
  for (std::size_t t = 0; t < T; ++t) {
    if (lv[t] < score_thresh) continue;
    const double start = std::max(0.0, static_cast<double>(t) - ov[2 * t]);
    const double end = std::min(static_cast<double>(T), static_cast<double>(t) + ov[2 * t + 1]);
    if (!(end > start)) continue;
    std::size_t best = 1;
    for (std::size_t c = 2; c < C; ++c) {
      if (pv[t * C + c] > pv[t * C + best]) best = c;
    }
    candidates.push_back({start, end, static_cast<int>(best), lv[t] * pv[t * C + best]});
  }
  return {std::move(seq_id), nms(std::move(candidates), nms_iou)};
}

// ---------------------------------------------------------------------------

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == threshold) return map[i];
  }
  throw ContractError(fmt::format("report has no threshold {}", threshold));
}

double average_precision(const std::vector<bool>& true_positive, std::size_t num_ground_truth) {
  if (num_ground_truth == 0 || true_positive.empty()) return 0.0;
  const std::size_t n = true_positive.size();
  std::vector<double> mrec(n + 2), mprec(n + 2);
  mrec[0] = 0.0;
  mprec[0] = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += true_positive[i] ? 1 : 0;
    mrec[i + 1] = static_cast<double>(tp) / static_cast<double>(num_ground_truth);
    mprec[i + 1] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  mrec[n + 1] = 1.0;
  mprec[n + 1] = 0.0;
  for (std::size_t i = n + 1; i-- > 0;) mprec[i] = std::max(mprec[i], mprec[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < n + 2; ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mprec[i];
  }
  return ap;
}

EvalReport evaluate_map(std::span<const DetectionResult> results,
                        std::span<const FeatureSequence> truth,
                        std::span<const double> iou_thresholds) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < truth.size(); ++i) index.emplace(truth[i].seq_id, i);

  struct Ranked {
    Proposal p;
    std::size_t seq;
  };
  std::map<int, std::vector<Ranked>> by_class;
  for (const auto& r : results) {
    auto it = index.find(r.seq_id);
    if (it == index.end()) throw AlignmentError("no ground truth for sequence '" + r.seq_id + "'");
    for (const auto& p : r.proposals) by_class[p.class_id].push_back({p, it->second});
  }
  std::map<int, std::size_t> gt_count;
  for (const auto& seq : truth)
    for (const auto& iv : seq.intervals) ++gt_count[iv.class_id];

  EvalReport report;
  report.thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  report.map.assign(iou_thresholds.size(), 0.0);

  for (const auto& [cls, count] : gt_count) {
    auto& preds = by_class[cls];
    std::stable_sort(preds.begin(), preds.end(), [](const Ranked& a, const Ranked& b) {
      if (a.p.score != b.p.score) return a.p.score > b.p.score;
      if (a.seq != b.seq) return a.seq < b.seq;
      return std::tie(a.p.start, a.p.end) < std::tie(b.p.start, b.p.end);
    });
    std::vector<double> per_threshold;
    for (double thr : iou_thresholds) {
      std::vector<std::vector<bool>> used(truth.size());
      for (std::size_t s = 0; s < truth.size(); ++s) used[s].assign(truth[s].intervals.size(), false);
      std::vector<bool> tp_flags;
      tp_flags.reserve(preds.size());
      for (const auto& r : preds) {
        const auto& gts = truth[r.seq].intervals;
        double best_iou = -1.0;
        std::size_t best = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (gts[g].class_id != cls || used[r.seq][g]) continue;
          const double o = temporal_iou(r.p.start, r.p.end, gts[g].start, gts[g].end);
          if (o >= thr && o > best_iou) {
            best_iou = o;
            best = g;
          }
        }
        if (best < gts.size()) used[r.seq][best] = true;
        tp_flags.push_back(best < gts.size());
      }
      per_threshold.push_back(average_precision(tp_flags, count));
    }
    report.ap[cls] = std::move(per_threshold);
  }

  if (!report.ap.empty()) {
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      double s = 0.0;
      for (const auto& [cls, aps] : report.ap) s += aps[i];
      report.map[i] = s / static_cast<double>(report.ap.size());
    }
  }
  if (!report.map.empty()) {
    report.avg_map = std::accumulate(report.map.begin(), report.map.end(), 0.0) /
                     static_cast<double>(report.map.size());
  }
  return report;
}

std::string threshold_key(double threshold) { return fmt::format("{}", threshold); }

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json map = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < report.thresholds.size(); ++i)
    map[threshold_key(report.thresholds[i])] = report.map[i];
  j["map"] = std::move(map);
  j["avg_map"] = report.avg_map;
  nlohmann::ordered_json ap = nlohmann::ordered_json::object();
  for (const auto& [cls, values] : report.ap) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < report.thresholds.size(); ++i)
      row[threshold_key(report.thresholds[i])] = values[i];
    ap[fmt::format("class_{}", cls)] = std::move(row);
  }
  j["ap"] = std::move(ap);
  return j.dump(2);
}

}  // namespace gaf
