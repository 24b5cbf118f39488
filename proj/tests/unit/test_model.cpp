#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <random>
#include <set>

#include "can/coaction/coaction.hpp"
#include "can/data/synthetic.hpp"
#include "can/error.hpp"
#include "can/model/gradcheck.hpp"
#include "can/model/model.hpp"
#include "can/numerics/finite_diff.hpp"

using namespace can;
using namespace can::model;
using data::Example;

namespace {

data::Schema small_schema() {
  return data::Schema({{"user", data::Side::User, data::Kind::Scalar, 3, 1},
                       {"hist", data::Side::User, data::Kind::Sequence, 4, 3},
                       {"item", data::Side::Item, data::Kind::Scalar, 4, 1}});
}

// Small CAN with both independence levels, as used for gradient checks.
ModelConfig small_config() {
  ModelConfig cfg;
  cfg.schema = small_schema();
  cfg.repr_dim = 2;
  cfg.mlp = coaction::MlpCanSpec::chain({2, 2, 2});
  cfg.orders = 2;
  cfg.combination_independent = true;
  cfg.order_independent = true;
  cfg.head_hidden = {8};
  cfg.combinations = {{"item", "user"}, {"item", "hist"}};
  return cfg;
}

// The configuration the planted-interaction experiment trains.
ModelConfig synthetic_config(const data::Schema& schema) {
  ModelConfig cfg;
  cfg.schema = schema;
  cfg.mlp = coaction::MlpCanSpec::chain({4, 4});
  cfg.combinations = {{"item", "user"}, {"item", "hist"}};
  return cfg;
}

std::vector<std::vector<double>> snapshot(const emb::ParameterStore& s) {
  std::vector<std::vector<double>> out;
  for (const auto* p : s.all()) out.push_back(p->value.values());
  return out;
}

}  // namespace

TEST(Loss, Examples) {
  EXPECT_NEAR(loss(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(0.5, 1), 0.6931471805599453, 1e-15);
  EXPECT_NEAR(loss(0.9, 0), 2.302585092994046, 1e-12);
  EXPECT_LT(loss(1.0 - 1e-15, 1), 1e-11);
  EXPECT_LT(loss(1e-15, 0), 1e-11);
  EXPECT_TRUE(std::isfinite(loss(0.0, 1)));
  EXPECT_THROW(loss(1.5, 1), NumericError);
  EXPECT_THROW(loss(std::nan(""), 1), NumericError);
}

TEST(CartesianId, ExamplesAndBijectivity) {
  EXPECT_EQ(cartesian_id(3, 2, 10), 32);
  EXPECT_EQ(cartesian_id(0, 0, 99), 0);
  std::set<std::int64_t> ids;
  for (int u = 0; u < 7; ++u)
    for (int m = 0; m < 5; ++m) ids.insert(cartesian_id(u, m, 5, 7));
  EXPECT_EQ(ids.size(), 35u);
  EXPECT_EQ(*ids.rbegin(), 34);
  EXPECT_THROW(cartesian_id(0, 5, 5), IndexError);
  EXPECT_THROW(cartesian_id(7, 0, 5, 7), IndexError);
  EXPECT_THROW(cartesian_id(-1, 0, 5), IndexError);
}

TEST(InnerProduct, Examples) {
  EXPECT_EQ(inner_product_interaction(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_EQ(inner_product_interaction(std::vector<double>{0, 1, 0}, std::vector<double>{0, 1, 0}), 1.0);
  EXPECT_EQ(inner_product_interaction(std::vector<double>{1, 2}, std::vector<double>{3, -1}), 1.0);
  EXPECT_THROW(inner_product_interaction(std::vector<double>{1}, std::vector<double>{1, 2}), DimensionError);
}

TEST(Config, ValidationErrors) {
  ModelConfig cfg = small_config();
  cfg.combinations = {{"item", "nope"}};
  EXPECT_THROW(cfg.validate(), SchemaError);
  cfg.combinations = {{"hist", "user"}};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.combinations.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.variant = Variant::PlainDNN;
  EXPECT_NO_THROW(cfg.validate());
  cfg = small_config();
  cfg.variant = Variant::Cartesian;
  cfg.cartesian_cap = 11;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.cartesian_cap = 16;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(parse_variant("dien"), ConfigError);
}

TEST(Config, DefaultCombinationsPairItemWithUserFields) {
  EXPECT_EQ(default_combinations(small_schema()),
            (std::vector<Combination>{{"item", "user"}, {"item", "hist"}}));
}

TEST(Config, TextRoundTrip) {
  ModelConfig cfg = small_config();
  cfg.variant = Variant::CANCartesian;
  cfg.mlp.activation = num::Activation::Identity;
  cfg.init_std = 0.0125;
  ModelConfig back;
  back.schema = cfg.schema;
  std::istringstream in(format_model_config(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    ASSERT_TRUE(apply_model_key(back, line.substr(0, eq), line.substr(eq + 3))) << line;
  }
  EXPECT_EQ(format_model_config(back), format_model_config(cfg));
  EXPECT_EQ(back.mlp, cfg.mlp);
  EXPECT_EQ(back.combinations, cfg.combinations);
  EXPECT_FALSE(apply_model_key(back, "bogus", "1"));
}

TEST(Plan, VariantWidthContainment) {
  ModelConfig can = small_config();
  ModelConfig plain = can;
  plain.variant = Variant::PlainDNN;
  ModelConfig cart = can;
  cart.variant = Variant::Cartesian;
  ModelConfig ip = can;
  ip.variant = Variant::InnerProduct;
  const std::size_t k = can.combinations.size();
  EXPECT_EQ(plain.head_input_width() + k * can.mlp.output_dim(), can.head_input_width());
  EXPECT_EQ(plain.head_input_width() + k * can.repr_dim, cart.head_input_width());
  EXPECT_EQ(plain.head_input_width() + k, ip.head_input_width());
  for (const ModelConfig* c : {&can, &plain, &cart, &ip}) {
    const auto plan = plan_parameters(*c);
    const auto w0 = std::find_if(plan.begin(), plan.end(), [](const ParamShape& p) { return p.name == "dnn.w0"; });
    ASSERT_NE(w0, plan.end());
    EXPECT_EQ(w0->shape[1], c->head_input_width());
    EXPECT_EQ(plan.back().shape, (num::Shape{2}));
  }
}

TEST(Plan, TableShapesFollowIndependence) {
  const auto plan = plan_parameters(small_config());
  std::map<std::string, num::Shape> shapes;
  for (const auto& p : plan) shapes[p.name] = p.shape;
  // T = (2*2+2)*2 = 12, times N=2 input fields, times C=2 orders.
  EXPECT_EQ(shapes["can.w.item"], (num::Shape{4, 48}));
  EXPECT_EQ(shapes["can.u.user"], (num::Shape{3, 2}));  // M = 1 weight field
  EXPECT_EQ(shapes["can.u.hist"], (num::Shape{4, 2}));
  EXPECT_EQ(shapes["emb.hist"], (num::Shape{4, 2}));
  ModelConfig cart = small_config();
  cart.variant = Variant::Cartesian;
  std::map<std::string, num::Shape> cs;
  for (const auto& p : plan_parameters(cart)) cs[p.name] = p.shape;
  EXPECT_EQ(cs["cart.item.user"], (num::Shape{12, 2}));
  EXPECT_EQ(cs["cart.item.hist"], (num::Shape{16, 2}));
  EXPECT_FALSE(cs.count("can.w.item"));
}

TEST(Forward, ZeroHeadGivesHalf) {
  CanModel m(small_config(), 1);
  m.store().get("dnn.w1").value.fill(0.0);
  m.store().get("dnn.b1").value.fill(0.0);
  for (const Example& ex : random_dataset(small_schema(), 20, 2).examples) EXPECT_EQ(m.forward(ex), 0.5);
}

TEST(Forward, SchemaMismatchNamesField) {
  CanModel m(small_config(), 1);
  Example ex = random_dataset(small_schema(), 1, 3).examples[0];
  ex.values[2] = {9};
  try {
    m.forward(ex);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("'item'"), std::string::npos) << e.what();
  }
}

TEST(Forward, MatchesScriptedCompositionOfOracles) {
  data::SyntheticSpec spec;
  spec.n_train = 5;
  spec.n_test = 1;
  const auto synth = data::generate_synthetic(spec);
  ModelConfig cfg = synthetic_config(synth.train.schema);
  cfg.mlp = coaction::MlpCanSpec::uniform(8, 4);
  cfg.head_hidden = {200, 100};
  CanModel m(cfg, 3);
  // Larger weights so every stage matters numerically.
  std::mt19937_64 rng(3);
  for (auto* p : m.store().all()) emb::init_normal(*p, rng, 0.5);
  const emb::ParameterStore& s = m.store();
  for (const Example& ex : synth.train.examples) {
    const std::int32_t u = ex.values[0][0], m_id = ex.values[2][0];
    const auto& hist = ex.values[1];
    std::vector<double> x;
    auto append = [&](std::span<const double> v) { x.insert(x.end(), v.begin(), v.end()); };
    append(emb::lookup(s.get("emb.user"), u));
    std::vector<double> pooled(16, 0.0);
    for (std::int32_t h : hist)
      for (std::size_t d = 0; d < 16; ++d) pooled[d] += emb::lookup(s.get("emb.hist"), h)[d];
    append(pooled);
    append(emb::lookup(s.get("emb.item"), m_id));
    const auto p_item = emb::lookup(s.get("can.w.item"), m_id);
    append(coaction::coaction_shared(p_item, emb::lookup(s.get("can.u.user"), u), cfg.mlp, 2));
    std::vector<std::span<const double>> seq;
    for (std::int32_t h : hist) seq.push_back(emb::lookup(s.get("can.u.hist"), h));
    append(coaction::coaction_sequence(p_item, seq, cfg.mlp, 2));
    num::Tensor h({x.size()}, x);
    for (int i = 0; i < 3; ++i) {
      h = num::affine(h, s.get("dnn.w" + std::to_string(i)).value, s.get("dnn.b" + std::to_string(i)).value);
      if (i < 2) h = num::activate(num::Activation::SeLU, h);
    }
    const double e0 = std::exp(h[0]), e1 = std::exp(h[1]);
    const double expected = e1 / (e0 + e1);
    EXPECT_NEAR(m.forward(ex), expected, 1e-12);
    EXPECT_NEAR(e0 / (e0 + e1) + expected, 1.0, 1e-12);
  }
}

TEST(Forward, BatchEqualsPerExample) {
  CanModel m(small_config(), 4);
  std::mt19937_64 rng(4);
  for (auto* p : m.store().all()) emb::init_normal(*p, rng, 0.7);
  const auto ds = random_dataset(small_schema(), 30, 5);
  const auto batched = m.predict(ds, 7);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(batched[i], m.forward(ds.examples[i]), 1e-14);
}

TEST(Gradient, EndToEndMatchesFiniteDifferences) {
  double worst = 0.0;
  for (Variant v : {Variant::CAN, Variant::CANCartesian, Variant::InnerProduct}) {
    for (int trial = 0; trial < 20; ++trial) {
      ModelConfig cfg = small_config();
      cfg.variant = v;
      CanModel m(cfg, static_cast<std::uint64_t>(trial));
      std::mt19937_64 rng(100 + trial);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (auto* p : m.store().all())
        for (double& x : p->value.data()) x = u(rng);
      const auto ds = random_dataset(small_schema(), 1, 200 + trial);
      const Example* batch[] = {&ds.examples[0]};
      auto params = m.store().all();
      num::Tape tape;
      const auto analytic = num::grad(m.batch_loss(tape, batch), params);
      const auto numeric = num::finite_difference_grad(
          [&] {
            num::Tape t;
            return m.batch_loss(t, batch).value()[0];
          },
          params);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const double err = num::max_relative_error(analytic[k], numeric[k]);
        worst = std::max(worst, err);
        EXPECT_LT(err, 1e-4) << params[k]->name << " trial " << trial;
      }
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Gradient, LibraryCheckOnSmallConfig) {
  const ModelConfig cfg = gradcheck_config();
  EXPECT_EQ(format_model_config(cfg), format_model_config(small_config()));
  const GradCheckReport r = gradient_check(cfg, 20, 1);
  EXPECT_EQ(r.trials, 20u);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter << " trial " << r.worst_trial;
  EXPECT_FALSE(r.worst_parameter.empty());
  EXPECT_THROW(gradient_check(cfg, 0, 1), ConfigError);
}

TEST(Train, OneEpochOf128IsOneStep) {
  ModelConfig cfg = small_config();
  CanModel m(cfg, 1);
  const auto ds = random_dataset(small_schema(), 128, 6);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 128;
  const TrainLog log = train(m, ds, tc);
  EXPECT_EQ(log.steps, 1u);
  EXPECT_EQ(log.epoch_loss.size(), 1u);
  TrainConfig two = tc;
  two.batch_size = 100;
  CanModel m2(cfg, 1);
  EXPECT_EQ(train(m2, ds, two).steps, 2u);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  CanModel m(small_config(), 2);
  const auto before = snapshot(m.store());
  const auto ds = random_dataset(small_schema(), 50, 7);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.adam.lr = 0.0;
  const TrainLog log = train(m, ds, tc);
  EXPECT_EQ(snapshot(m.store()), before);
  ASSERT_EQ(log.epoch_loss.size(), 3u);
  for (double l : log.epoch_loss) EXPECT_NEAR(l, log.initial_loss, 1e-12);
}

TEST(Train, IsDeterministicGivenSeed) {
  const auto ds = random_dataset(small_schema(), 80, 8);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.seed = 5;
  CanModel a(small_config(), 9), b(small_config(), 9);
  const auto la = train(a, ds, tc);
  const auto lb = train(b, ds, tc);
  EXPECT_EQ(la.epoch_loss, lb.epoch_loss);
  const auto sa = snapshot(a.store()), sb = snapshot(b.store());
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i)
    for (std::size_t j = 0; j < sa[i].size(); ++j)
      ASSERT_EQ(std::bit_cast<std::uint64_t>(sa[i][j]), std::bit_cast<std::uint64_t>(sb[i][j]));
  tc.seed = 6;
  CanModel c(small_config(), 9);
  train(c, ds, tc);
  EXPECT_NE(snapshot(c.store()), sa);
}

TEST(Train, NonFiniteLossReportsCoordinates) {
  CanModel m(small_config(), 1);
  m.store().get("dnn.b1").value[0] = std::nan("");
  const auto ds = random_dataset(small_schema(), 20, 9);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  try {
    train(m, ds, tc);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train(m, data::Dataset{small_schema(), {}}, tc), UsageError);
}

TEST(Train, CoactionUpdatesNeverTouchRepresentationEmbeddings) {
  CanModel m(small_config(), 3);
  const auto ds = random_dataset(small_schema(), 16, 10);
  std::vector<const Example*> batch;
  for (const auto& ex : ds.examples) batch.push_back(&ex);
  auto params = m.store().all();
  for (auto* p : params) p->zero_grad();
  num::Tape tape;
  tape.backward(m.batch_loss(tape, batch));
  // Keep only the co-action gradients, then step everything.
  for (auto* p : params)
    if (m.store().group_of(*p) != emb::Group::CoAction) p->grad.fill(0.0);
  std::map<std::string, std::vector<double>> before;
  for (auto* p : params) before[p->name] = p->value.values();
  num::Adam adam;
  adam.step(params);
  bool coaction_moved = false;
  for (auto* p : params) {
    if (m.store().group_of(*p) == emb::Group::CoAction) coaction_moved |= p->value.values() != before[p->name];
    else EXPECT_EQ(p->value.values(), before[p->name]) << p->name;
  }
  EXPECT_TRUE(coaction_moved);
  std::set<std::string> names;
  for (auto* p : params) EXPECT_TRUE(names.insert(p->name).second);
}

TEST(Train, PlantedDataLossDropsTwentyPercentInTwoEpochs) {
  const auto synth = data::generate_synthetic(data::SyntheticSpec{});
  CanModel m(synthetic_config(synth.train.schema), 1);
  TrainConfig tc;
  tc.epochs = 2;
  const TrainLog log = train(m, synth.train, tc);
  // Full-data loss after training, measured the same way as the initial loss.
  const double final_loss = dataset_loss(m, synth.train);
  const double drop = 1.0 - final_loss / log.initial_loss;
  RecordProperty("initial_loss", std::to_string(log.initial_loss));
  RecordProperty("final_loss", std::to_string(final_loss));
  std::cout << std::setprecision(17) << "initial " << log.initial_loss << " final " << final_loss << " drop " << drop
            << "\n";
  EXPECT_GE(drop, 0.20);
  // Regression fixture from the first measured run (seed 1).
  EXPECT_NEAR(final_loss, 0.45674458505690679, 1e-9);
}

TEST(Checkpoint, SaveLoadReproducesPredictions) {
  ModelConfig cfg = small_config();
  cfg.variant = Variant::CANCartesian;
  CanModel m(cfg, 11);
  const auto ds = random_dataset(small_schema(), 40, 12);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  train(m, ds, tc);
  const auto dir = (std::filesystem::temp_directory_path() / "can_test_model_ckpt").string();
  std::filesystem::remove_all(dir);
  save_model(dir, m);
  const auto loaded = load_model(dir);
  EXPECT_EQ(format_model_config(loaded->config()), format_model_config(cfg));
  EXPECT_EQ(loaded->config().schema, cfg.schema);
  EXPECT_EQ(loaded->predict(ds), m.predict(ds));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_model(dir), IoError);
}
