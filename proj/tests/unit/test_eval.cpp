#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "can/data/synthetic.hpp"
#include "can/error.hpp"
#include "can/eval/eval.hpp"

using namespace can;
using namespace can::eval;

namespace {

using Labels = std::vector<std::uint8_t>;

// Direct count over every (positive, negative) pair, in integer halves.
double pair_auc(const std::vector<double>& s, const Labels& y) {
  std::uint64_t half_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      ++pairs;
      half_wins += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  return static_cast<double>(half_wins) / (2.0 * static_cast<double>(pairs));
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg = default_experiment();
  cfg.data.n_train = 2000;
  cfg.data.n_test = 2000;
  cfg.data.seq_len = 3;
  cfg.train.epochs = 1;
  cfg.model.repr_dim = 4;
  cfg.model.head_hidden = {8};
  cfg.seeds = {1, 2};
  return cfg;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.1}, Labels{1, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, Labels{1, 0, 0, 1}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.2, 0.8, 0.4, 0.6}, Labels{0, 1, 1, 0}), 0.75);
}

TEST(Auc, Errors) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, Labels{1, 1}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, Labels{0, 0}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{}, Labels{}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, Labels{1}), DimensionError);
  EXPECT_THROW(auc(std::vector<double>{0.1, std::nan("")}, Labels{1, 0}), MetricError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, Labels{1, 2}), MetricError);
}

TEST(Auc, NegationAndMonotoneInvariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t size = 20 + static_cast<std::size_t>(trial) * 7;
    std::vector<double> s(size), neg(size), ex(size), aff(size);
    Labels y(size);
    for (std::size_t i = 0; i < size; ++i) {
      // Coarse rounding forces ties.
      s[i] = std::round(n(rng) * 4.0) / 4.0;
      y[i] = static_cast<std::uint8_t>(i % 3 == 0 || n(rng) > 0.5);
      neg[i] = -s[i];
      ex[i] = std::exp(s[i]);
      aff[i] = 3.0 * s[i] - 7.0;
    }
    const double a = auc(s, y);
    EXPECT_NEAR(a + auc(neg, y), 1.0, 1e-12);
    EXPECT_EQ(auc(ex, y), a);
    EXPECT_EQ(auc(aff, y), a);
  }
}

TEST(Auc, EqualsPairCountingExactly) {
  std::mt19937_64 rng(17);
  for (std::size_t size = 2; size <= 500; size += size < 40 ? 1 : 23) {
    for (int levels : {3, 50, 0}) {
      std::vector<double> s(size);
      Labels y(size);
      std::uniform_int_distribution<int> lv(0, std::max(levels, 1) - 1);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t i = 0; i < size; ++i) {
        s[i] = levels ? lv(rng) / static_cast<double>(levels) : u(rng);
        y[i] = static_cast<std::uint8_t>(u(rng) < 0.4);
      }
      y[0] = 1;
      y[size - 1] = 0;
      ASSERT_EQ(auc(s, y), pair_auc(s, y)) << "n=" << size << " levels=" << levels;
    }
  }
}

TEST(UnaryScorer, SmoothedLogOdds) {
  const data::Schema schema({{"user", data::Side::User, data::Kind::Scalar, 3, 1},
                             {"item", data::Side::Item, data::Kind::Scalar, 2, 1}});
  data::Dataset train{schema, {}};
  auto add = [&](int label, std::int32_t u, std::int32_t i) {
    data::Example ex;
    ex.label = static_cast<std::uint8_t>(label);
    ex.values = {{u}, {i}};
    train.examples.push_back(ex);
  };
  add(1, 0, 0);
  add(1, 0, 1);
  add(0, 1, 0);
  const UnaryScorer s(train);
  data::Example q;
  q.values = {{0}, {0}};
  // user 0: 2 clicks of 2 -> log(3/1); item 0: 1 of 2 -> log(2/2).
  EXPECT_NEAR(s.score(q), std::log(3.0), 1e-12);
  q.values = {{2}, {1}};
  // Unseen user contributes nothing; item 1: 1 of 1 -> log(2/1).
  EXPECT_NEAR(s.score(q), std::log(2.0), 1e-12);
}

TEST(UnaryScorer, NoSignalOnDefaultSyntheticData) {
  const auto synth = data::generate_synthetic(data::SyntheticSpec{});
  const double a = auc(UnaryScorer(synth.train).score(synth.test), labels_of(synth.test));
  EXPECT_GE(a, 0.48);
  EXPECT_LE(a, 0.52);
}

TEST(Summarize, SampleStdAndFailures) {
  std::vector<CellResult> cells = {{"can", 1, "test", 0.7, false, {}},
                                   {"can", 2, "test", 0.9, false, {}},
                                   {"can", 3, "test", 0.0, true, "boom"},
                                   {"can", 1, "unseen", 0.1, false, {}},
                                   {"other", 1, "test", 0.3, false, {}}};
  const EvalReport r = summarize("can", "test", cells);
  EXPECT_EQ(r.n_seeds, 2u);
  EXPECT_EQ(r.failures, 1u);
  EXPECT_NEAR(r.mean, 0.8, 1e-12);
  EXPECT_NEAR(r.std, std::sqrt(0.02), 1e-12);
  ASSERT_EQ(r.per_seed.size(), 2u);
  EXPECT_EQ(r.per_seed[1].first, 2u);
  EXPECT_TRUE(std::isnan(summarize("none", "test", cells).mean));
}

TEST(Report, CsvLayout) {
  ExperimentResult r;
  r.cells = {{"can", 1, "test", 0.75, false, {}}, {"can", 2, "test", 0.0, true, "x"}};
  r.reports = {summarize("can", "test", r.cells)};
  std::ostringstream os;
  write_report_csv(os, r);
  EXPECT_EQ(os.str(),
            "variant,split,seed,auc\ncan,test,1,0.750000\ncan,test,2,failed\n\n"
            "variant,split,mean,std\ncan,test,0.750000,0.000000\n");
}

TEST(Experiment, RejectsBadConfigs) {
  ExperimentConfig cfg = small_experiment();
  cfg.seeds = {1};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
  cfg.seeds = {1, 2};
  cfg.variants = {"nope"};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(Experiment, PlainDnnOnNoSignalDataIsChance) {
  ExperimentConfig cfg = small_experiment();
  cfg.data.beta = 0.0;
  cfg.data.n_test = 10000;
  cfg.variants = {"plain"};
  const ExperimentResult r = run_experiment(cfg);
  EXPECT_EQ(r.bayes_auc, 0.5);
  const EvalReport* rep = find_report(r, "plain", kTestSplit);
  ASSERT_NE(rep, nullptr);
  EXPECT_EQ(rep->n_seeds, 2u);
  EXPECT_GE(rep->mean, 0.48);
  EXPECT_LE(rep->mean, 0.52);
}

TEST(Experiment, IdenticalRunsGiveIdenticalReports) {
  ExperimentConfig cfg = small_experiment();
  cfg.variants = {kUnaryVariant, "can"};
  std::ostringstream a, b;
  write_report_csv(a, run_experiment(cfg));
  write_report_csv(b, run_experiment(cfg));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("can,unseen,2,"), std::string::npos);
}

TEST(Experiment, FailedCellIsRecordedAndRunContinues) {
  ExperimentConfig cfg = small_experiment();
  cfg.variants = {"cartesian", kUnaryVariant};
  cfg.model.cartesian_cap = 10;
  std::vector<std::string> seen;
  const ExperimentResult r = run_experiment(cfg, [&](const CellResult& c) { seen.push_back(c.variant); });
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_EQ(find_report(r, "cartesian", kTestSplit)->failures, 2u);
  EXPECT_EQ(find_report(r, "cartesian", kUnseenSplit)->failures, 2u);
  EXPECT_EQ(find_report(r, kUnaryVariant, kTestSplit)->n_seeds, 2u);
  std::ostringstream table;
  write_report_table(table, r);
  EXPECT_NE(table.str().find("bayes-optimal AUC 0.952574"), std::string::npos) << table.str();
}
