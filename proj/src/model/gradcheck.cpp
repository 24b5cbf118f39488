#include "can/model/gradcheck.hpp"

#include <random>

#include "can/error.hpp"
#include "can/numerics/finite_diff.hpp"

namespace can::model {

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.schema = data::Schema({{"user", data::Side::User, data::Kind::Scalar, 3, 1},
                             {"hist", data::Side::User, data::Kind::Sequence, 4, 3},
                             {"item", data::Side::Item, data::Kind::Scalar, 4, 1}});
  cfg.repr_dim = 2;
  cfg.mlp = coaction::MlpCanSpec::chain({2, 2, 2});
  cfg.orders = 2;
  cfg.combination_independent = true;
  cfg.order_independent = true;
  cfg.head_hidden = {8};
  cfg.combinations = {{"item", "user"}, {"item", "hist"}};
  return cfg;
}

data::Dataset random_dataset(const data::Schema& schema, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  data::Dataset ds{schema, {}};
  for (std::size_t i = 0; i < n; ++i) {
    data::Example ex;
    ex.label = static_cast<std::uint8_t>(rng() % 2);
    for (const auto& f : schema.fields()) {
      std::vector<std::int32_t> v;
      const std::uint64_t len = f.kind == data::Kind::Scalar ? 1 : rng() % static_cast<std::uint64_t>(f.max_len + 1);
      for (std::uint64_t k = 0; k < len; ++k)
        v.push_back(static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(f.cardinality)));
      ex.values.push_back(std::move(v));
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

GradCheckReport gradient_check(const ModelConfig& cfg, std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("gradcheck: trials must be >= 1");
  GradCheckReport r;
  r.trials = trials;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = seed + trial;
    CanModel m(cfg, s);
    std::mt19937_64 rng(s ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<num::Parameter*> params = m.store().all();
    for (num::Parameter* p : params)
      for (double& x : p->value.data()) x = u(rng);
    const data::Dataset ds = random_dataset(cfg.schema, 1, s);
    const data::Example* batch[] = {&ds.examples[0]};
    num::Tape tape;
    const std::vector<num::Tensor> analytic = num::grad(m.batch_loss(tape, batch), params);
    const std::vector<num::Tensor> numeric = num::finite_difference_grad(
        [&] {
          num::Tape t;
          return m.batch_loss(t, batch).value()[0];
        },
        params);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double err = num::max_relative_error(analytic[k], numeric[k]);
      if (r.worst_parameter.empty() || err > r.max_relative_error) {
        r.max_relative_error = err;
        r.worst_parameter = params[k]->name;
        r.worst_trial = trial;
      }
    }
  }
  return r;
}

}  // namespace can::model
