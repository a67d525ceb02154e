#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "gaf/errors.hpp"
#include "gaf/trainer.hpp"
#include "gradcheck.hpp"

namespace gaf {
namespace {

using testing::uniform;

// ---- Adam -----------------------------------------------------------------

// Straight-line reference: one parameter vector, explicit moments.
struct RefAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g, double lr, double wd) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      p[i] = p[i] * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

ParamList single(Tensor t) { return {{"p", std::move(t)}}; }

TEST(Adam, ZeroGradientZeroDecayIsFixedPoint) {
  Rng rng = make_rng(0, 0);
  ParamList params = single(uniform({3, 2}, rng));
  const auto before = checksum(params);
  AdamState s;
  for (int i = 0; i < 3; ++i) adam_step(s, params, 0.1, 0.0);
  EXPECT_EQ(checksum(params), before);
  EXPECT_EQ(s.step, 3u);
}

TEST(Adam, FirstStepHandValue) {
  ParamList params = single(Tensor::scalar(0.0, true));
  params[0].tensor.mutable_grad()[0] = 1.0;
  AdamState s;
  adam_step(s, params, 0.1, 0.0);
  // m_hat = 1, v_hat = 1: delta = -0.1 / (1 + 1e-8)
  EXPECT_NEAR(params[0].tensor.item(), -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticBowlConverges) {
  ParamList params = single(Tensor::scalar(3.0, true));
  AdamState s;
  for (int i = 0; i < 500; ++i) {
    zero_grad(params);
    square(params[0].tensor).backward();
    adam_step(s, params, 0.05, 0.0);
  }
  EXPECT_LT(std::abs(params[0].tensor.item()), 0.01);
}

TEST(Adam, MatchesReference) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 80);
    ParamList params{{"a", uniform({4, 3}, rng)}, {"b", uniform({5}, rng)}};
    std::vector<std::vector<double>> ref;
    for (const auto& p : params) ref.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    std::vector<RefAdam> ref_opt(2);
    AdamState s;
    for (int step = 0; step < 25; ++step) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto g = params[k].tensor.mutable_grad();
        std::vector<double> gv(g.size());
        for (auto& x : gv) x = std::normal_distribution<double>(0, 1)(rng);
        std::copy(gv.begin(), gv.end(), g.begin());
        ref_opt[k].step(ref[k], gv, 0.01, 0.1);
      }
      adam_step(s, params, 0.01, 0.1);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < ref[k].size(); ++i) {
        EXPECT_NEAR(params[k].tensor.data()[i], ref[k][i], 1e-12);
      }
    }
  }
}

TEST(Adam, NonFiniteGradientAbortsUntouched) {
  Rng rng = make_rng(1, 0);
  ParamList params{{"ok", uniform({2}, rng)}, {"segment.bad", uniform({3}, rng)}};
  params[1].tensor.mutable_grad()[2] = std::numeric_limits<double>::quiet_NaN();
  const auto before = checksum(params);
  AdamState s;
  try {
    adam_step(s, params, 0.1, 0.0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("segment.bad"), std::string::npos) << e.what();
  }
  EXPECT_EQ(checksum(params), before);
  EXPECT_EQ(s.step, 0u);
}

// ---- configuration --------------------------------------------------------

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig::desk().validate());
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.alpha = -1;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.schedule = "steps:0";
  EXPECT_THROW(c.validate(), ContractError);
  c.schedule = "steps:7";
  EXPECT_EQ(c.steps_per_switch(), 7u);
}

TEST(TrainConfig, PaperPreset) {
  const TrainConfig p = TrainConfig::paper();
  EXPECT_EQ(p.preset, "paper");
  EXPECT_EQ(p.lr, 1e-5);
  EXPECT_EQ(p.weight_decay, 1e-3);
  EXPECT_EQ(p.epochs, 20);
  EXPECT_EQ(train_config_from_json(R"({"preset": "paper"})").lr, 1e-5);
  EXPECT_EQ(train_config_from_json(R"({"preset": "paper", "lr": 0.5})").lr, 0.5);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.epochs = 7;
  c.alpha = 2.5;
  c.schedule = "steps:3";
  c.train_data = "data/train.jsonl";
  const std::string text = train_config_to_json(c);
  EXPECT_EQ(train_config_to_json(train_config_from_json(text)), text);
  EXPECT_THROW(train_config_from_json(R"({"learning_rate": 1})"), ContractError);
  EXPECT_THROW(train_config_from_json("{"), ParseError);
}

// ---- stage-2 loss pieces ---------------------------------------------------

TEST(PoolingWindow, ContextAndClipping) {
  EXPECT_EQ(pooling_window({10, 18, 1}, 128), (std::pair<std::size_t, std::size_t>{8, 20}));
  EXPECT_EQ(pooling_window({10, 19, 1}, 128), (std::pair<std::size_t, std::size_t>{7, 22}));
  EXPECT_EQ(pooling_window({1, 9, 1}, 10), (std::pair<std::size_t, std::size_t>{0, 10}));
}

TEST(PairwiseAuc, HandValues) {
  const std::vector<double> fg{0.9, 0.8}, bg{0.1, 0.8};
  // pairs: (0.9,0.1)=1 (0.9,0.8)=1 (0.8,0.1)=1 (0.8,0.8)=0.5
  EXPECT_DOUBLE_EQ(pairwise_auc(fg, bg), 3.5 / 4.0);
  EXPECT_DOUBLE_EQ(pairwise_auc(bg, std::vector<double>{2.0}), 0.0);
}

TEST(EpochRecord, JsonRoundTrip) {
  EpochRecord r;
  r.epoch = 5;
  r.stage = "frame";
  r.loss = 0.1 + 0.2;
  r.lambda_fg_mean = 2.0 / 3.0;
  r.lambda_bg_mean = 1e-17;
  EvalReport ev;
  ev.thresholds = {0.3, 0.5};
  ev.map = {0.25, 1.0 / 7.0};
  ev.avg_map = 0.5 * (0.25 + 1.0 / 7.0);
  r.eval = ev;
  const std::string line = epoch_record_to_json(r);
  const EpochRecord back = epoch_record_from_json(line);
  EXPECT_EQ(back.epoch, 5);
  EXPECT_EQ(back.stage, "frame");
  EXPECT_EQ(back.loss, r.loss);
  EXPECT_EQ(back.lambda_fg_mean, r.lambda_fg_mean);
  EXPECT_EQ(back.lambda_bg_mean, r.lambda_bg_mean);
  ASSERT_TRUE(back.eval.has_value());
  EXPECT_EQ(back.eval->map_at(0.5), 1.0 / 7.0);
  EXPECT_EQ(epoch_record_to_json(back), line);
}

// ---- stages ----------------------------------------------------------------

class SmallRun : public ::testing::Test {
 protected:
  void SetUp() override {
    DatasetSpec spec;
    spec.num_sequences = 12;
    spec.num_eval = 4;
    spec.T = 64;
    spec.max_length = 16;
    spec.seed = 3;
    data_ = generate(spec);
    train_.assign(data_.begin(), data_.begin() + 8);
    eval_.assign(data_.begin() + 8, data_.end());
    config_ = ModelConfig::for_data(train_);
  }
  std::vector<FeatureSequence> data_, train_, eval_;
  ModelConfig config_;
};

TEST_F(SmallRun, ZeroLearningRateLeavesParametersBitIdentical) {
  GafModels m = GafModels::create(config_, 0);
  TrainConfig c;
  c.lr = 0.0;
  c.weight_decay = 0.0;
  Trainer t(m, c);
  const auto before = checksum(m.parameters());
  t.train_stage1(train_);
  t.train_stage2(train_);
  EXPECT_EQ(checksum(m.parameters()), before);
}

TEST_F(SmallRun, StagesRespectFreezeContracts) {
  GafModels m = GafModels::create(config_, 0);
  Trainer t(m, TrainConfig{});
  auto seg = checksum(m.stage2_parameters());
  auto frame = checksum(m.frame.parameters());
  t.train_stage1(train_);
  EXPECT_EQ(checksum(m.stage2_parameters()), seg);
  EXPECT_NE(checksum(m.frame.parameters()), frame);
  frame = checksum(m.frame.parameters());
  t.train_stage2(train_);
  EXPECT_EQ(checksum(m.frame.parameters()), frame);
  EXPECT_NE(checksum(m.stage2_parameters()), seg);
  for (const auto& p : m.parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.path;
}

TEST_F(SmallRun, IdenticalSeedsIdenticalCurves) {
  auto curve = [&] {
    GafModels m = GafModels::create(config_, 5);
    TrainConfig c;
    c.seed = 5;
    Trainer t(m, c);
    std::vector<double> out;
    for (int e = 0; e < 3; ++e) out.push_back(t.train_stage1(train_).mean_loss);
    out.push_back(t.train_stage2(train_).mean_loss);
    return out;
  };
  EXPECT_EQ(curve(), curve());
}

TEST_F(SmallRun, KlStaysNonNegative) {
  GafModels m = GafModels::create(config_, 0);
  Trainer t(m, TrainConfig{});
  for (int e = 0; e < 3; ++e) EXPECT_GE(t.train_stage1(train_, {true}).min_kl, 0.0);
}

TEST_F(SmallRun, ZeroDetectorWeightsReduceToReconstructionOnly) {
  auto curve = [&](double alpha, double beta, LossTerms terms) {
    GafModels m = GafModels::create(config_, 1);
    TrainConfig c;
    c.alpha = alpha;
    c.beta_reg = beta;
    Trainer t(m, c, terms);
    std::vector<double> out;
    for (int e = 0; e < 3; ++e) out.push_back(t.train_stage2(train_).mean_loss);
    out.push_back(static_cast<double>(checksum(m.stage2_parameters())));
    return out;
  };
  EXPECT_EQ(curve(0.0, 0.0, LossTerms::full()), curve(1.0, 1.0, LossTerms{false, false, true}));
}

TEST_F(SmallRun, NonActionTermsVanishWithoutBackground) {
  std::vector<FeatureSequence> full_fg;
  for (auto seq : train_) {
    seq.intervals = {{0, static_cast<int>(seq.T), seq.intervals.empty() ? 1 : seq.intervals[0].class_id}};
    std::fill(seq.fg_mask.begin(), seq.fg_mask.end(), 1);
    full_fg.push_back(seq);
  }
  GafModels m = GafModels::create(config_, 0);
  const Tensor eps = Tensor::zeros({full_fg[0].T, config_.latent_dim});
  const auto basic = stage2_loss(m, full_fg[0], 1.0, 1.0, LossTerms::basic(), eps);
  const auto with_nai = stage2_loss(m, full_fg[0], 1.0, 1.0, LossTerms::with_non_action(), eps);
  EXPECT_EQ(basic.total.item(), with_nai.total.item());
}

TEST_F(SmallRun, AlternatingSchedule) {
  GafModels m = GafModels::create(config_, 0);
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(Trainer(m, c).train_alternating(train_, eval_), ContractError);
  c.epochs = 2;
  const TrainHistory h = Trainer(m, c).train_alternating(train_, eval_);
  ASSERT_EQ(h.records.size(), 2u);
  EXPECT_EQ(h.records[0].stage, "frame");
  EXPECT_EQ(h.records[1].stage, "segment");
  ASSERT_EQ(h.audits.size(), 2u);
  for (const auto& a : h.audits) EXPECT_EQ(a.before, a.after);
}

TEST_F(SmallRun, StepSchedule) {
  GafModels m = GafModels::create(config_, 0);
  TrainConfig c;
  c.epochs = 1;
  c.schedule = "steps:3";
  const TrainHistory h = Trainer(m, c).train_alternating(train_, eval_);
  ASSERT_EQ(h.records.size(), 1u);
  EXPECT_EQ(h.records[0].stage, "alternating");
  EXPECT_EQ(h.audits.size(), 6u);  // 3 blocks of 3, 3, 2 sequences
}

TEST(Stage2, LossFallsBelowSeventyPercent) {
  const auto data = generate(DatasetSpec{});
  const std::vector<FeatureSequence> train(data.begin(), data.begin() + 200);
  GafModels m = GafModels::create(ModelConfig::for_data(train), 0);
  Trainer t(m, TrainConfig{});
  // L_R is only meaningful against a fitted Frame-GAF.
  for (int e = 0; e < 5; ++e) t.train_stage1(train, {true});
  const double first = t.train_stage2(train).mean_loss;
  double last = first;
  for (int e = 1; e < 20; ++e) last = t.train_stage2(train).mean_loss;
  EXPECT_LT(last, 0.7 * first);
}

}  // namespace
}  // namespace gaf
