#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "oracles/toy_policy.hpp"
#include "srfc/synth.hpp"
#include "srfc/training.hpp"

using namespace srfc;

namespace {

Dataset tiny_dataset(int items = 120, int categories = 4, std::uint64_t seed = 5) {
  SynthConfig sc;
  sc.n_items = items;
  sc.n_categories = categories;
  sc.n_attributes = 12;
  sc.pool_size = 6;
  sc.feature_dim = 6;
  auto corp = generate_synthetic_corpus(sc, seed);
  LabeledCorpus lc{corp.items, corp.attributes, corp.categories};
  return assemble_dataset(lc, {0.7, 0.15, 0.15}, seed, 1);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.embed_dim = c.hidden_dim = c.attention_dim = c.attr_hidden = 8;
  c.samples = 3;
  c.batch_size = 8;
  c.lr = 5e-3;
  c.max_len = 12;
  c.phase1_max_epochs = 2;
  c.phase2_max_epochs = 1;
  return c;
}

TextCnnClassifier tiny_classifier(const Dataset& ds) {
  ClassifierTrainConfig cc;
  cc.embed_dim = 6;
  cc.filters = 4;
  cc.epochs = 1;
  return pretrain_classifier(ds, cc);
}

CaptionerConfig toy_config(int vocab) {
  CaptionerConfig c;
  c.vocab_size = vocab;
  c.feature_dim = 3;
  c.n_attributes = 4;
  c.embed_dim = c.hidden_dim = c.attention_dim = c.attr_hidden = 3;
  c.init_range = 0.5;
  return c;
}

}  // namespace

TEST(MleLoss, UniformModelIsTLogK) {
  Captioner m(toy_config(9));
  Tensor w = m.p("dec.out.w");  // shares storage
  for (auto& v : w.data()) v = 0.0;
  Tape tape(false);
  const IdSeq ids = {Vocab::kBos, 4, 5, 6, 7, Vocab::kEos};
  const Tensor x({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6});
  // 4 words plus EOS.
  EXPECT_NEAR(mle_loss(tape, m, x, ids).item(), 5.0 * std::log(9.0), 1e-12);
}

TEST(MleLoss, NeedsATarget) {
  Captioner m(toy_config(9));
  Tape tape(false);
  EXPECT_THROW(mle_loss(tape, m, Tensor({1, 3}, {0, 0, 0}), IdSeq{Vocab::kBos}),
               std::invalid_argument);
}

TEST(AttributeLoss, Examples) {
  Tape tape(false);
  const std::vector<double> labels = {1, 0, 1, 0};
  EXPECT_NEAR(attribute_loss(tape, Tensor::row({0.5, 0.5, 0.5, 0.5}), labels).item(),
              std::log(2.0), 1e-15);
  EXPECT_LE(attribute_loss(tape, Tensor::row({1, 0, 1, 0}), labels).item(), 1.1e-12);
  EXPECT_THROW(attribute_loss(tape, Tensor::row({0.5, 0.5}), labels), std::invalid_argument);
  const std::vector<double> bad = {0.5, 0, 1, 0};
  EXPECT_THROW(attribute_loss(tape, Tensor::row({0.5, 0.5, 0.5, 0.5}), bad),
               std::invalid_argument);
}

TEST(AttributeLoss, LabelsFromItem) {
  Item it;
  it.attributes = {0, 3};
  EXPECT_EQ(attribute_labels(it, 5), (std::vector<double>{1, 0, 0, 1, 0}));
}

TEST(Advantages, WorkedExample) {
  const auto a = compute_advantages({1, 0, 0, 0, 0}, BaselineNormalization::kSampleMean);
  EXPECT_DOUBLE_EQ(a.baseline, 0.2);
  const std::vector<double> want = {0.8, -0.2, -0.2, -0.2, -0.2};
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(a.advantages[j], want[j], 1e-15);
  EXPECT_DOUBLE_EQ(a.scale, 0.2);
  EXPECT_DOUBLE_EQ(compute_advantages({1, 0, 0, 0, 0}, BaselineNormalization::kUnbiased).scale, 0.25);
}

TEST(Advantages, NeedTwoSamples) {
  EXPECT_THROW(compute_advantages({1.0}, BaselineNormalization::kUnbiased), std::invalid_argument);
  EXPECT_EQ(baseline_normalization_from("sample_mean"), BaselineNormalization::kSampleMean);
  EXPECT_THROW(baseline_normalization_from("mean"), std::invalid_argument);
}

TEST(Reinforce, EqualRewardsGiveExactlyZeroGradient) {
  toy::Policy p(toy::kPolicySeed);
  toy::RewardTable flat;
  for (auto& row : flat) row.fill(0.7);
  const auto g = toy::estimated_gradient(p, flat, 200, 5, BaselineNormalization::kUnbiased, 3);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Reinforce, TranslationInvariant) {
  toy::Policy p(toy::kPolicySeed);
  auto r = toy::default_rewards();
  auto shifted = r;
  for (auto& row : shifted)
    for (auto& v : row) v += 0.5;
  const auto a = toy::estimated_gradient(p, r, 500, 5, BaselineNormalization::kUnbiased, 4);
  const auto b = toy::estimated_gradient(p, shifted, 500, 5, BaselineNormalization::kUnbiased, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Reinforce, UnbiasedAgainstEnumeration) {
  toy::Policy p(toy::kPolicySeed);
  const auto r = toy::default_rewards();
  const auto exact = toy::exact_gradient(p, r);
  const auto est = toy::estimated_gradient(p, r, 100000, 5, BaselineNormalization::kUnbiased, 11);
  for (std::size_t i = 0; i < exact.size(); ++i)
    EXPECT_LT(std::abs(est[i] - exact[i]) / std::abs(exact[i]), 0.05) << "coordinate " << i;
}

TEST(Reinforce, SampleMeanNormalizationIsShrunk) {
  toy::Policy p(toy::kPolicySeed);
  const auto r = toy::default_rewards();
  const auto exact = toy::exact_gradient(p, r);
  const auto est = toy::estimated_gradient(p, r, 100000, 5, BaselineNormalization::kSampleMean, 11);
  for (std::size_t i = 0; i < exact.size(); ++i)
    EXPECT_LT(std::abs(est[i] - 0.8 * exact[i]) / std::abs(0.8 * exact[i]), 0.05) << "coordinate " << i;
}

TEST(Reinforce, CaptionerSamplesAreScored) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  TrainConfig tc = tiny_config();
  Captioner m(captioner_config(tc, ds));
  const SemanticReward scorer(ds.vocab, ds.attributes, clf, tc.reward);
  const Item& item = *ds.train().front();
  Tape tape;
  const Tensor x = item.features.tensor();
  const auto enc = m.encode(tape, x);
  const auto attr = m.predict_attributes(tape, x);
  Rng rng(8);
  const auto res = reinforce(tape, m, enc, attr.z, item, scorer, 4, tc.max_len, rng);
  ASSERT_EQ(res.samples.size(), 4u);
  double mean = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto again = scorer.score(res.samples[j].words(), item.caption, item.category);
    EXPECT_EQ(again.r, res.rewards[j].r);
    mean += again.r / 4.0;
    EXPECT_LE(res.samples[j].words().size(), static_cast<std::size_t>(tc.max_len));
  }
  EXPECT_NEAR(res.mean_reward(), mean, 1e-15);
  EXPECT_NEAR(res.advantages.baseline, mean, 1e-15);
}

TEST(Schedule, AnnealEveryTwoEpochs) {
  EXPECT_DOUBLE_EQ(annealed_lr(1e-3, 0.9, 2, 0), 1e-3);
  EXPECT_DOUBLE_EQ(annealed_lr(1e-3, 0.9, 2, 1), 1e-3);
  EXPECT_NEAR(annealed_lr(1e-3, 0.9, 2, 4), 0.81e-3, 1e-18);
}

TEST(Config, JsonRoundTripAndErrors) {
  TrainConfig c = tiny_config();
  c.baseline = BaselineNormalization::kSampleMean;
  c.reward.alpha_als = 0.0;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(nlohmann::json({{"lamda_rl", 1}}).get<TrainConfig>(), std::invalid_argument);
  EXPECT_THROW(nlohmann::json({{"samples", "five"}}).get<TrainConfig>(), std::invalid_argument);
  TrainConfig bad;
  bad.samples = 1;
  EXPECT_THROW(validate(bad), std::invalid_argument);
  bad = TrainConfig{};
  bad.lambda_rl = -1;
  EXPECT_THROW(validate(bad), std::invalid_argument);
}

TEST(Trainer, EmptyTrainingSplitThrows) {
  Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  ds.split.train.clear();
  Captioner m(captioner_config(tiny_config(), ds));
  EXPECT_THROW(Trainer(m, ds, clf, tiny_config()), std::invalid_argument);
}

TEST(Trainer, SameSeedSameLog) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  auto run = [&] {
    Captioner m(captioner_config(tiny_config(), ds));
    Trainer tr(m, ds, clf, tiny_config());
    std::vector<std::string> rows;
    for (const auto& e : tr.run().log) rows.push_back(metrics_csv_row(e));
    return std::make_pair(rows, m.params().snapshot());
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.first.size(), 3u);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Trainer, ZeroRlWeightReducesToPhaseOne) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  TrainConfig tc = tiny_config();
  tc.lambda_rl = 0.0;
  Captioner a(captioner_config(tc, ds)), b(captioner_config(tc, ds));
  Trainer ta(a, ds, clf, tc), tb(b, ds, clf, tc);
  Adam adam_a(a.params()), adam_b(b.params());
  for (int epoch = 0; epoch < 2; ++epoch) {
    const EpochLog la = ta.run_epoch(1, epoch, adam_a);
    const EpochLog lb = tb.run_epoch(2, epoch, adam_b);
    EXPECT_EQ(la.l_mle, lb.l_mle);
    EXPECT_EQ(la.l_a, lb.l_a);
    EXPECT_NE(lb.l_r, 0.0);  // the RL term was still sampled
  }
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
}

TEST(Trainer, PhaseOneStopsOnPatienceAndRestoresBest) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  TrainConfig tc = tiny_config();
  tc.lr = 0.05;  // large enough to overshoot
  tc.phase1_max_epochs = 12;
  tc.patience = 2;
  tc.run_phase2 = false;
  Captioner m(captioner_config(tc, ds));
  Trainer tr(m, ds, clf, tc);
  const auto res = tr.run();
  ASSERT_EQ(static_cast<int>(res.log.size()), res.phase1_epochs);
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (const auto& e : res.log) {
    if (e.val.mle < best) {
      best = e.val.mle;
      stale = 0;
    } else {
      ++stale;
    }
  }
  if (res.phase1_epochs < tc.phase1_max_epochs) {
    EXPECT_EQ(stale, tc.patience);
  }
  EXPECT_EQ(m.params().snapshot(), res.phase1_params);
  EXPECT_NEAR(mean_mle(m, ds.val(), ds.vocab), best, 1e-9);
}

TEST(Trainer, WritesCheckpoints) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  const auto dir = std::filesystem::temp_directory_path() / "srfc_test_ckpt";
  std::filesystem::remove_all(dir);
  Captioner m(captioner_config(tiny_config(), ds));
  Trainer tr(m, ds, clf, tiny_config());
  tr.checkpoint_dir = dir;
  const auto res = tr.run();
  for (const char* f : {"epoch_000.ckpt", "epoch_001.ckpt", "epoch_002.ckpt", "phase1.ckpt", "final.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  Captioner reload(captioner_config(tiny_config(), ds));
  load_checkpoint(reload.params(), (dir / "final.ckpt").string());
  EXPECT_EQ(reload.params().snapshot(), m.params().snapshot());
  EXPECT_EQ(res.log[0].lr, tiny_config().lr);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, PhaseTwoRestartsLrSchedule) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  TrainConfig tc = tiny_config();
  tc.anneal_every = 1;
  tc.anneal_factor = 0.5;
  tc.patience = 5;
  tc.phase2_max_epochs = 2;
  tc.phase2_patience = 5;
  Captioner m(captioner_config(tc, ds));
  const auto res = Trainer(m, ds, clf, tc).run();
  ASSERT_EQ(res.log.size(), 4u);
  EXPECT_EQ(res.log[1].phase, 1);
  EXPECT_DOUBLE_EQ(res.log[1].lr, tc.lr * 0.5);
  EXPECT_EQ(res.log[2].phase, 2);
  EXPECT_EQ(res.log[2].epoch, 2);
  EXPECT_DOUBLE_EQ(res.log[2].lr, tc.lr);
  EXPECT_DOUBLE_EQ(res.log[3].lr, tc.lr * 0.5);
}

TEST(Metrics, CsvHasOneFieldPerColumn) {
  EpochLog e;
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(count(metrics_csv_header()), count(metrics_csv_row(e)));
}

TEST(Classifier, SingleCategoryThrows) {
  Dataset ds = tiny_dataset(60, 1);
  EXPECT_THROW(pretrain_classifier(ds, ClassifierTrainConfig{}), std::invalid_argument);
}

TEST(Classifier, FirstBatchLossNearLogC) {
  const Dataset ds = tiny_dataset(400, 20, 6);
  ASSERT_EQ(ds.categories.size(), 20);
  ClassifierTrainConfig cc;
  cc.epochs = 1;
  ClassifierReport rep;
  pretrain_classifier(ds, cc, &rep);
  EXPECT_NEAR(rep.first_batch_loss, std::log(20.0), 0.05);
}

TEST(Classifier, SaveLoadRoundTrip) {
  const Dataset ds = tiny_dataset();
  const auto clf = tiny_classifier(ds);
  const auto path = (std::filesystem::temp_directory_path() / "srfc_test_clf.ckpt").string();
  save_classifier(clf, ds, path);
  const auto back = load_classifier(path);
  EXPECT_EQ(back.model.params().snapshot(), clf.params().snapshot());
  EXPECT_EQ(back.vocab, ds.vocab);
  EXPECT_EQ(back.categories, ds.categories.names());
  std::filesystem::remove(path);
}
