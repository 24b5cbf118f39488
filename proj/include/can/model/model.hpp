#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "can/coaction/mlp_spec.hpp"
#include "can/data/dataset.hpp"
#include "can/embeddings/embeddings.hpp"
#include "can/numerics/adam.hpp"
#include "can/numerics/tape.hpp"

namespace can::model {

enum class Variant { PlainDNN, CAN, Cartesian, InnerProduct, CANCartesian };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);
bool uses_coaction(Variant v);
bool uses_cartesian(Variant v);

// (weight-side field, input-side field); by default item field, user field.
struct Combination {
  std::string weight_field;
  std::string input_field;

  bool operator==(const Combination&) const = default;
};

// Every scalar item field paired with every user field, in schema order.
std::vector<Combination> default_combinations(const data::Schema& schema);

struct ModelConfig {
  data::Schema schema;
  Variant variant = Variant::CAN;
  std::size_t repr_dim = 16;
  coaction::MlpCanSpec mlp = coaction::MlpCanSpec::uniform(8, 4);
  int orders = 2;
  bool combination_independent = false;
  bool order_independent = false;
  std::vector<std::size_t> head_hidden = {200, 100};
  std::vector<Combination> combinations;
  std::uint64_t cartesian_cap = 10'000'000;
  double init_std = emb::kInitStddev;

  // Throws ConfigError (or SchemaError for unknown fields).
  void validate() const;
  // Weight-side fields (M) and input-side fields (N) in schema order.
  std::vector<std::string> weight_fields() const;
  std::vector<std::string> input_fields() const;
  emb::IndependenceConfig independence() const;
  // Width of the vector fed to the head.
  std::size_t head_input_width() const;
};

struct ParamShape {
  std::string name;
  emb::Group group;
  num::Shape shape;
  bool row_sparse = false;
};

// Every trainable tensor of a model, derived from the config alone.
std::vector<ParamShape> plan_parameters(const ModelConfig& cfg);

std::int64_t cartesian_id(std::int64_t u, std::int64_t m, std::int64_t item_cardinality,
                          std::int64_t user_cardinality = -1);
double inner_product_interaction(std::span<const double> a, std::span<const double> b);

// Binary cross entropy with the probability clamped to [1e-12, 1 - 1e-12].
double loss(double y_hat, int y);

class CanModel {
 public:
  // Parameters N(0, init_std) from `seed`.
  CanModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  emb::ParameterStore& store() { return store_; }
  const emb::ParameterStore& store() const { return store_; }

  // [batch, 2] logits recorded on `tape`.
  num::Var logits(num::Tape& tape, std::span<const data::Example* const> batch);
  // Mean cross entropy of a batch, recorded on `tape`.
  num::Var batch_loss(num::Tape& tape, std::span<const data::Example* const> batch);

  double forward(const data::Example& ex);
  std::vector<double> predict(const data::Dataset& ds, std::size_t chunk = 1024);

 private:
  num::Var field_embedding(num::Tape& tape, std::size_t field, std::span<const data::Example* const> batch);
  num::Var coaction_feature(num::Tape& tape, const Combination& c, std::span<const data::Example* const> batch);
  num::Var cartesian_feature(num::Tape& tape, const Combination& c, std::span<const data::Example* const> batch);

  ModelConfig cfg_;
  emb::ParameterStore store_;
};

struct TrainConfig {
  std::size_t epochs = 2;
  std::size_t batch_size = 128;
  num::AdamConfig adam;
  std::uint64_t seed = 1;
};

struct TrainLog {
  double initial_loss = 0.0;          // full-data loss before the first update
  std::vector<double> epoch_loss;     // example-weighted mean minibatch loss per epoch
  std::size_t steps = 0;
};

// Minibatch Adam over a seeded shuffle. NumericError on a non-finite loss,
// naming the epoch and batch.
TrainLog train(CanModel& model, const data::Dataset& ds, const TrainConfig& tc,
               const std::function<void(std::size_t epoch, double loss)>& on_epoch = {});

double dataset_loss(CanModel& model, const data::Dataset& ds);

// `key = value` lines describing a ModelConfig (schema excluded).
std::string format_model_config(const ModelConfig& cfg);
// Applies recognised keys to `cfg`; returns false for a key it does not own.
bool apply_model_key(ModelConfig& cfg, std::string_view key, std::string_view value);
std::vector<std::string> model_config_keys();

// Directory with schema.txt, model.txt, manifest.txt and one .bin per tensor.
void save_model(const std::string& dir, const CanModel& model);
std::unique_ptr<CanModel> load_model(const std::string& dir);

}  // namespace can::model
