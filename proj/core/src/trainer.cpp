#include "gaf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gaf/checkpoint.hpp"
#include "gaf/errors.hpp"

namespace gaf {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Adam

void adam_step(AdamState& state, ParamList& params, double lr, double weight_decay) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericalError(fmt::format("non-finite gradient {} at {}[{}]", g[i], p.path, i));
      }
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed between steps");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) throw ContractError("adam_step: moment shape mismatch");
    const bool has_grad = params[k].tensor.has_grad();
    std::span<const double> g = has_grad ? params[k].tensor.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] = values[i] * decay - lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Models

ModelConfig ModelConfig::for_data(std::span<const FeatureSequence> data) {
  if (data.empty()) throw ContractError("cannot size models from an empty dataset");
  ModelConfig cfg;
  cfg.input_dim = data.front().D;
  int k = 1;
  for (const auto& seq : data)
    for (const auto& iv : seq.intervals) k = std::max(k, iv.class_id);
  cfg.num_classes = k;
  return cfg;
}

GafModels GafModels::create(const ModelConfig& cfg, std::uint64_t seed) {
  GafModels m;
  m.config = cfg;
  Rng frame_rng = make_rng(seed, Stream::kFrameInit);
  Rng seg_rng = make_rng(seed, Stream::kSegmentInit);
  Rng det_rng = make_rng(seed, Stream::kDetectorInit);
  m.frame = CvaeModel({cfg.input_dim, cfg.reduced_dim, cfg.hidden_dim, cfg.latent_dim}, frame_rng);
  m.segment = SegmentModel({cfg.input_dim, cfg.attention_hidden, cfg.attention_kernel}, seg_rng);
  m.detector = DetectorModel({cfg.input_dim, cfg.num_classes, cfg.offset_scale}, det_rng);
  return m;
}

ParamList GafModels::parameters() const {
  ParamList out = frame.parameters();
  for (auto& p : stage2_parameters()) out.push_back(std::move(p));
  return out;
}

ParamList GafModels::stage2_parameters() const {
  ParamList out = segment.parameters();
  for (auto& p : detector.parameters()) out.push_back(std::move(p));
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig cfg;
  cfg.preset = "paper";
  cfg.epochs = 20;
  cfg.lr = 1e-5;
  cfg.weight_decay = 1e-3;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (!(lr > 0.0)) throw ContractError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be non-negative");
  if (!(beta_kl >= 0.0) || !(alpha >= 0.0) || !(beta_reg >= 0.0)) {
    throw ContractError("alpha, beta_reg and beta_kl must be non-negative");
  }
  steps_per_switch();
}

std::size_t TrainConfig::steps_per_switch() const {
  if (schedule == "epoch") return 0;
  if (schedule.rfind("steps:", 0) == 0) {
    try {
      const long k = std::stol(schedule.substr(6));
      if (k > 0) return static_cast<std::size_t>(k);
    } catch (const std::exception&) {
    }
  }
  throw ContractError("schedule must be 'epoch' or 'steps:<k>' with k > 0, got '" + schedule + "'");
}

TrainConfig train_config_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), 1);
  }
  if (!j.is_object()) throw ContractError("train config must be a JSON object");
  TrainConfig cfg;
  if (j.contains("preset")) {
    const auto preset = j["preset"].get<std::string>();
    if (preset == "paper") cfg = TrainConfig::paper();
    else if (preset != "desk") throw ContractError("unknown preset '" + preset + "'");
  }
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "preset") continue;
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "beta_kl") cfg.beta_kl = value.get<double>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "beta_reg") cfg.beta_reg = value.get<double>();
      else if (key == "schedule") cfg.schedule = value.get<std::string>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "train_data") cfg.train_data = value.get<std::string>();
      else if (key == "eval_data") cfg.eval_data = value.get<std::string>();
      else if (key == "checkpoint") cfg.checkpoint = value.get<std::string>();
      else throw ContractError("unknown train config field '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ContractError("train config field '" + key + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  ojson j;
  j["preset"] = cfg.preset;
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["beta_kl"] = cfg.beta_kl;
  j["alpha"] = cfg.alpha;
  j["beta_reg"] = cfg.beta_reg;
  j["schedule"] = cfg.schedule;
  j["seed"] = cfg.seed;
  j["train_data"] = cfg.train_data;
  j["eval_data"] = cfg.eval_data;
  j["checkpoint"] = cfg.checkpoint;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Stage-2 objective

std::pair<std::size_t, std::size_t> pooling_window(const ActionInterval& iv, std::size_t T) {
  const auto context = static_cast<int>(std::ceil(kContextFraction * iv.length()));
  const int lo = std::max(0, iv.start - context);
  const int hi = std::min(static_cast<int>(T), iv.end + context);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

Stage2Loss stage2_loss(const GafModels& models, const FeatureSequence& seq, double alpha,
                       double beta_reg, const LossTerms& terms, const Tensor& eps) {
  const Tensor f = seq.feature_tensor();
  const AttentionMap lam = attention_forward(models.segment, f);
  const Tensor enhanced = enhance(models.segment, f, lam);
  const Tensor& lam_t = lam.tensor();
  const Tensor one_minus = lam.complement();

  Stage2Loss out;
  out.clf_action = Tensor::scalar(0.0);
  out.clf_non_action = Tensor::scalar(0.0);
  if (terms.action && !seq.intervals.empty()) {
    const double inv_n = 1.0 / static_cast<double>(seq.intervals.size());
    for (const auto& iv : seq.intervals) {
      const auto [lo, hi] = pooling_window(iv, seq.T);
      const Tensor f_ai =
          weighted_pool_or_mean(slice_rows(enhanced, lo, hi), slice_rows(lam_t, lo, hi));
      out.clf_action =
          add(out.clf_action, scale(clf_loss_action(models.detector, f_ai, iv.class_id), inv_n));
    }
  }
  // The non-action instance is everything outside the actions, so it is
  // pooled over the whole sequence. Without any background frame there is
  // nothing to separate and the term is skipped.
  const bool has_background =
      std::any_of(seq.fg_mask.begin(), seq.fg_mask.end(), [](int m) { return m == 0; });
  if (terms.non_action && has_background) {
    out.clf_non_action =
        clf_loss_non_action(models.detector, weighted_pool_or_mean(enhanced, one_minus));
  }

  // The regression weights are treated as constants: differentiated, the
  // (1 - lambda) and lambda weights would pull attention towards 1 on
  // background and 0 on foreground.
  const RegressionTerms reg =
      offset_regression_terms(predict_offsets(models.detector, enhanced), lam.detach(), seq.intervals,
                              models.detector.config.offset_scale);
  out.reg_action = reg.action;
  out.reg_non_action = reg.non_action;

  Tensor clf = Tensor::scalar(0.0);
  Tensor regression = Tensor::scalar(0.0);
  if (terms.action) {
    clf = out.clf_action;
    regression = out.reg_action;
  }
  if (terms.non_action) {
    clf = add(clf, out.clf_non_action);
    regression = add(regression, out.reg_non_action);
  }
  out.total = detector_loss(clf, regression, alpha, beta_reg);
  if (terms.reconstruction) {
    out.reconstruction = fuse(models.frame, f, lam, eps);
    out.total = add(out.total, out.reconstruction);
  } else {
    out.reconstruction = Tensor::scalar(0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(GafModels& models, TrainConfig config, LossTerms terms)
    : models_(models),
      cfg_(std::move(config)),
      terms_(terms),
      shuffle_rng_(make_rng(cfg_.seed, Stream::kShuffle)),
      noise_rng_(make_rng(cfg_.seed, Stream::kNoise)) {}

std::vector<std::size_t> Trainer::shuffled(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(shuffle_rng_)]);
  }
  return order;
}

StageResult Trainer::train_stage1(std::span<const FeatureSequence> data, const Stage1Options& opts) {
  ParamList frame_params = models_.frame.parameters();
  FreezeGuard frozen(models_.stage2_parameters());
  set_requires_grad(frame_params, true);

  StageResult result;
  result.min_kl = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t idx : shuffled(data.size())) {
    const FeatureSequence& seq = data[idx];
    const Tensor f = seq.feature_tensor();
    const AttentionMap lam = opts.oracle_attention ? AttentionMap::from_mask(seq.fg_mask)
                                                   : attention_forward(models_.segment, f);
    const Tensor eps = standard_normal(seq.T, models_.frame.config.latent_dim, noise_rng_);
    const CvaeLoss loss = cvae_loss(models_.frame, f, lam, cfg_.beta_kl, eps);
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      throw NumericalError(fmt::format("stage 1 loss is {} at epoch {}, step {}", value, epoch_,
                                       result.steps));
    }
    loss.total.backward();
    adam_step(frame_opt_, frame_params, cfg_.lr, cfg_.weight_decay);
    zero_grad(frame_params);
    total += value;
    result.min_kl = std::min(result.min_kl, loss.kl.item());
    ++result.steps;
  }
  result.mean_loss = result.steps ? total / static_cast<double>(result.steps) : 0.0;
  return result;
}

StageResult Trainer::train_stage2(std::span<const FeatureSequence> data) {
  ParamList params = models_.stage2_parameters();
  ParamList frame_params = models_.frame.parameters();
  FreezeGuard frozen(frame_params);
  set_requires_grad(params, true);

  StageResult result;
  double total = 0.0;
  for (std::size_t idx : shuffled(data.size())) {
    const FeatureSequence& seq = data[idx];
    Tensor eps;
    if (terms_.reconstruction) {
      eps = standard_normal(seq.T, models_.frame.config.latent_dim, noise_rng_);
    }
    const Stage2Loss loss = stage2_loss(models_, seq, cfg_.alpha, cfg_.beta_reg, terms_, eps);
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      throw NumericalError(fmt::format("stage 2 loss is {} at epoch {}, step {}", value, epoch_,
                                       result.steps));
    }
    if (loss.total.requires_grad()) loss.total.backward();
    if (!all_grads_zero(frame_params)) {
      throw ContractError(fmt::format("frozen Frame-GAF received gradient at epoch {}, step {}",
                                      epoch_, result.steps));
    }
    adam_step(segment_opt_, params, cfg_.lr, cfg_.weight_decay);
    zero_grad(params);
    total += value;
    ++result.steps;
  }
  result.mean_loss = result.steps ? total / static_cast<double>(result.steps) : 0.0;
  return result;
}

TrainHistory Trainer::train_alternating(std::span<const FeatureSequence> train,
                                        std::span<const FeatureSequence> eval) {
  cfg_.validate();
  if (train.empty()) throw ContractError("training set is empty");
  const auto monitor = eval.empty() ? train : eval;
  const std::size_t chunk = cfg_.steps_per_switch();

  TrainHistory history;
  for (int e = 1; e <= cfg_.epochs; ++e) {
    epoch_ = e;
    EpochRecord rec;
    rec.epoch = e;
    const auto frame_sum = [&] { return checksum(models_.frame.parameters()); };
    const auto seg_sum = [&] { return checksum(models_.stage2_parameters()); };

    if (chunk == 0) {
      if (e % 2 == 1) {
        const auto before = seg_sum();
        rec.stage = "frame";
        rec.loss = train_stage1(train, {true}).mean_loss;
        history.audits.push_back({e, "segment+detector", before, seg_sum()});
      } else {
        const auto before = frame_sum();
        rec.stage = "segment";
        rec.loss = train_stage2(train).mean_loss;
        history.audits.push_back({e, "frame", before, frame_sum()});
      }
    } else {
      rec.stage = "alternating";
      double total = 0.0;
      std::size_t steps = 0;
      for (std::size_t lo = 0; lo < train.size(); lo += chunk) {
        const auto block = train.subspan(lo, std::min(chunk, train.size() - lo));
        auto before = seg_sum();
        train_stage1(block);
        history.audits.push_back({e, "segment+detector", before, seg_sum()});
        before = frame_sum();
        const StageResult r = train_stage2(block);
        history.audits.push_back({e, "frame", before, frame_sum()});
        total += r.mean_loss * static_cast<double>(r.steps);
        steps += r.steps;
      }
      rec.loss = steps ? total / static_cast<double>(steps) : 0.0;
    }
    const auto& audit = history.audits.back();
    if (audit.before != audit.after) {
      throw ContractError(fmt::format("frozen {} parameters changed in epoch {}", audit.frozen, e));
    }

    const AttentionStats stats = attention_stats(models_.segment, monitor);
    rec.lambda_fg_mean = stats.fg_mean;
    rec.lambda_bg_mean = stats.bg_mean;
    if (e % 5 == 0) rec.eval = evaluate_models(models_, monitor);
    spdlog::debug("epoch {} [{}] loss {:.6f} lambda fg {:.3f} bg {:.3f}", e, rec.stage, rec.loss,
                  rec.lambda_fg_mean, rec.lambda_bg_mean);
    history.records.push_back(std::move(rec));
  }
  for (const auto& a : history.audits) {
    if (a.before != a.after) {
      throw ContractError(fmt::format("frozen {} parameters changed in epoch {}", a.frozen, a.epoch));
    }
  }
  if (!cfg_.checkpoint.empty()) save_checkpoint(cfg_.checkpoint, models_);
  return history;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

AttentionStats attention_stats(const SegmentModel& model, std::span<const FeatureSequence> data) {
  double fg = 0.0, bg = 0.0;
  std::size_t nfg = 0, nbg = 0;
  for (const auto& seq : data) {
    const AttentionMap lam = attention_forward(model, seq.feature_tensor());
    auto v = lam.values();
    for (std::size_t t = 0; t < seq.T; ++t) {
      if (seq.fg_mask[t]) {
        fg += v[t];
        ++nfg;
      } else {
        bg += v[t];
        ++nbg;
      }
    }
  }
  return {nfg ? fg / static_cast<double>(nfg) : 0.0, nbg ? bg / static_cast<double>(nbg) : 0.0};
}

double pairwise_auc(std::span<const double> fg_scores, std::span<const double> bg_scores) {
  if (fg_scores.empty() || bg_scores.empty()) {
    throw ContractError("AUC needs at least one positive and one negative");
  }
  double wins = 0.0;
  for (double p : fg_scores)
    for (double n : bg_scores) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(fg_scores.size()) * static_cast<double>(bg_scores.size()));
}

double attention_auc(const SegmentModel& model, std::span<const FeatureSequence> data) {
  std::vector<double> fg, bg;
  for (const auto& seq : data) {
    const AttentionMap lam = attention_forward(model, seq.feature_tensor());
    auto v = lam.values();
    for (std::size_t t = 0; t < seq.T; ++t) (seq.fg_mask[t] ? fg : bg).push_back(v[t]);
  }
  return pairwise_auc(fg, bg);
}

std::vector<DetectionResult> detect_all(const GafModels& models,
                                        std::span<const FeatureSequence> data, double score_thresh,
                                        double nms_iou) {
  std::vector<DetectionResult> out;
  out.reserve(data.size());
  for (const auto& seq : data) {
    const Tensor f = seq.feature_tensor();
    const AttentionMap lam = attention_forward(models.segment, f);
    const Tensor enhanced = enhance(models.segment, f, lam);
    out.push_back(
        decode_detections(models.detector, enhanced, lam, score_thresh, nms_iou, seq.seq_id));
  }
  return out;
}

EvalReport evaluate_models(const GafModels& models, std::span<const FeatureSequence> data,
                           std::span<const double> thresholds) {
  const auto results = detect_all(models, data);
  return evaluate_map(results, data, thresholds);
}

std::string epoch_record_to_json(const EpochRecord& record) {
  ojson j;
  j["epoch"] = record.epoch;
  j["stage"] = record.stage;
  j["loss"] = record.loss;
  j["lambda_fg_mean"] = record.lambda_fg_mean;
  j["lambda_bg_mean"] = record.lambda_bg_mean;
  if (record.eval) {
    ojson map = ojson::object();
    for (std::size_t i = 0; i < record.eval->thresholds.size(); ++i)
      map[threshold_key(record.eval->thresholds[i])] = record.eval->map[i];
    j["map"] = std::move(map);
  }
  return j.dump();
}

EpochRecord epoch_record_from_json(const std::string& line) {
  const auto j = ojson::parse(line);
  EpochRecord rec;
  rec.epoch = j.at("epoch").get<int>();
  rec.stage = j.at("stage").get<std::string>();
  rec.loss = j.at("loss").get<double>();
  rec.lambda_fg_mean = j.at("lambda_fg_mean").get<double>();
  rec.lambda_bg_mean = j.at("lambda_bg_mean").get<double>();
  if (j.contains("map")) {
    EvalReport report;
    for (const auto& [key, value] : j["map"].items()) {
      report.thresholds.push_back(std::stod(key));
      report.map.push_back(value.get<double>());
    }
    rec.eval = std::move(report);
  }
  return rec;
}

}  // namespace gaf
