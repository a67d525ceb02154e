#pragma once

// Alternating two-stage optimization.
//
//   stage 1: Frame-GAF <- L_CVAE, conditioned on the ground-truth
//            foreground mask (the Segment-GAF is frozen and unused)
//   stage 2: Segment-GAF + detector <- alpha L_clf + beta_reg L_reg + L_R,
//            with the Frame-GAF frozen
//
// Odd epochs run stage 1, even epochs stage 2.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaf/detector.hpp"
#include "gaf/frame_gaf.hpp"
#include "gaf/nn.hpp"
#include "gaf/segment_gaf.hpp"
#include "gaf/synthgen.hpp"

namespace gaf {

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Decoupled weight decay: p <- p (1 - lr wd), then the bias-corrected Adam
// delta. Gradients are read from each parameter's grad buffer. Throws
// NumericalError, before touching anything, if a gradient is non-finite.
void adam_step(AdamState& state, ParamList& params, double lr, double weight_decay);

// ---- models ----------------------------------------------------------------

struct ModelConfig {
  std::size_t input_dim = 16;
  int num_classes = 5;
  std::size_t reduced_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t latent_dim = 16;
  std::size_t attention_hidden = 16;
  std::size_t attention_kernel = 7;
  double offset_scale = 16.0;

  // D from the features, K from the largest class id present.
  static ModelConfig for_data(std::span<const FeatureSequence> data);
};

struct GafModels {
  ModelConfig config;
  CvaeModel frame;
  SegmentModel segment;
  DetectorModel detector;

  static GafModels create(const ModelConfig& config, std::uint64_t seed);
  ParamList parameters() const;  // frame, segment, detector in that order
  ParamList stage2_parameters() const;
};

// ---- configuration ---------------------------------------------------------

struct TrainConfig {
  std::string preset = "desk";
  int epochs = 20;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double beta_kl = 0.1;
  double alpha = 1.0;
  double beta_reg = 1.0;
  std::string schedule = "epoch";  // "epoch" or "steps:<k>"
  std::uint64_t seed = 0;
  std::string train_data;
  std::string eval_data;
  std::string checkpoint;

  static TrainConfig desk();
  static TrainConfig paper();
  void validate() const;
  // 0 for per-epoch alternation.
  std::size_t steps_per_switch() const;
};

// Unknown keys are rejected; missing keys come from the named preset.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

/// Which stage-2 terms are active. The defaults give the full model.
struct LossTerms {
  bool action = true;          // L_clf_ai + L_reg_ai
  bool non_action = true;      // L_clf_n-ai + L_reg_n-ai
  bool reconstruction = true;  // L_R through the frozen Frame-GAF

  static LossTerms basic() { return {true, false, false}; }
  static LossTerms with_non_action() { return {true, true, false}; }
  static LossTerms full() { return {true, true, true}; }
};

inline constexpr double kContextFraction = 0.25;

// [start - ceil(0.25 len), end + ceil(0.25 len)) clipped to [0, T).
std::pair<std::size_t, std::size_t> pooling_window(const ActionInterval& iv, std::size_t T);

struct Stage2Loss {
  Tensor clf_action;
  Tensor clf_non_action;
  Tensor reg_action;
  Tensor reg_non_action;
  Tensor reconstruction;
  Tensor total;
};

// eps is only read when terms.reconstruction is set.
Stage2Loss stage2_loss(const GafModels& models, const FeatureSequence& seq, double alpha,
                       double beta_reg, const LossTerms& terms, const Tensor& eps);

// ---- training --------------------------------------------------------------

struct StageResult {
  double mean_loss = 0.0;
  double min_kl = 0.0;  // stage 1 only
  std::size_t steps = 0;
};

struct Stage1Options {
  bool oracle_attention = false;  // lambda = fg_mask instead of the Segment-GAF
};

struct EpochRecord {
  int epoch = 0;
  std::string stage;  // "frame", "segment" or "alternating"
  double loss = 0.0;
  double lambda_fg_mean = 0.0;
  double lambda_bg_mean = 0.0;
  std::optional<EvalReport> eval;
};

struct FreezeAudit {
  int epoch = 0;
  std::string frozen;  // "segment+detector" in stage 1, "frame" in stage 2
  std::uint64_t before = 0;
  std::uint64_t after = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::vector<FreezeAudit> audits;
};

class Trainer {
 public:
  Trainer(GafModels& models, TrainConfig config, LossTerms terms = {});

  StageResult train_stage1(std::span<const FeatureSequence> data, const Stage1Options& opts = {});
  StageResult train_stage2(std::span<const FeatureSequence> data);

  // Runs cfg.epochs epochs, stage 1 with oracle attention; evaluates attention statistics on `eval` (or
  // `train` when empty) each epoch and mAP every fifth epoch. Writes the
  // checkpoint when cfg.checkpoint is set.
  TrainHistory train_alternating(std::span<const FeatureSequence> train,
                                 std::span<const FeatureSequence> eval);

  const AdamState& frame_optimizer() const { return frame_opt_; }

 private:
  std::vector<std::size_t> shuffled(std::size_t n);

  GafModels& models_;
  TrainConfig cfg_;
  LossTerms terms_;
  AdamState frame_opt_;
  AdamState segment_opt_;
  Rng shuffle_rng_;
  Rng noise_rng_;
  int epoch_ = 0;
};

// ---- evaluation helpers ----------------------------------------------------

struct AttentionStats {
  double fg_mean = 0.0;
  double bg_mean = 0.0;
  double separation() const { return fg_mean - bg_mean; }
};

AttentionStats attention_stats(const SegmentModel& model, std::span<const FeatureSequence> data);

// P(score_fg > score_bg) + 0.5 P(tie) over every (foreground, background) pair.
double pairwise_auc(std::span<const double> fg_scores, std::span<const double> bg_scores);
double attention_auc(const SegmentModel& model, std::span<const FeatureSequence> data);

inline constexpr double kDefaultScoreThreshold = 0.5;
inline constexpr double kDefaultNmsIou = 0.5;

std::vector<DetectionResult> detect_all(const GafModels& models,
                                        std::span<const FeatureSequence> data,
                                        double score_thresh = kDefaultScoreThreshold,
                                        double nms_iou = kDefaultNmsIou);

EvalReport evaluate_models(const GafModels& models, std::span<const FeatureSequence> data,
                           std::span<const double> thresholds = kDefaultIouThresholds);

std::string epoch_record_to_json(const EpochRecord& record);
EpochRecord epoch_record_from_json(const std::string& line);

}  // namespace gaf
