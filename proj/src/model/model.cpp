#include "can/model/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "can/coaction/coaction.hpp"
#include "can/embeddings/checkpoint.hpp"
#include "can/error.hpp"

namespace can::model {

namespace {

using data::Example;
using data::Kind;

std::string emb_name(const std::string& field) { return "emb." + field; }
std::string can_w_name(const std::string& field) { return "can.w." + field; }
std::string can_u_name(const std::string& field) { return "can.u." + field; }
std::string cart_name(const Combination& c) { return "cart." + c.weight_field + "." + c.input_field; }

std::size_t position(const std::vector<std::string>& v, const std::string& x) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ' && ch != '\t') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + std::string(value) + "' for key '" + std::string(key) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

std::vector<std::size_t> parse_dims(std::string_view key, std::string_view value) {
  std::vector<std::size_t> dims;
  if (value.empty() || value == "none") return dims;
  for (const std::string& part : split(value, ',')) dims.push_back(parse_number<std::size_t>(key, part));
  return dims;
}

std::string join_dims(const std::vector<std::size_t>& dims) {
  if (dims.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? "," : "") + std::to_string(dims[i]);
  return out;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::PlainDNN:
      return "plain";
    case Variant::CAN:
      return "can";
    case Variant::Cartesian:
      return "cartesian";
    case Variant::InnerProduct:
      return "inner_product";
    case Variant::CANCartesian:
      return "can_cartesian";
  }
  return "can";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::PlainDNN, Variant::CAN, Variant::Cartesian, Variant::InnerProduct,
                    Variant::CANCartesian}) {
    if (variant_name(v) == text) return v;
  }
  throw ConfigError("unknown variant '" + std::string(text) +
                    "' (use plain, can, cartesian, inner_product or can_cartesian)");
}

bool uses_coaction(Variant v) { return v == Variant::CAN || v == Variant::CANCartesian; }
bool uses_cartesian(Variant v) { return v == Variant::Cartesian || v == Variant::CANCartesian; }

std::vector<Combination> default_combinations(const data::Schema& schema) {
  std::vector<Combination> out;
  for (const auto& w : schema.fields()) {
    if (w.side != data::Side::Item || w.kind != Kind::Scalar) continue;
    for (const auto& u : schema.fields())
      if (u.side == data::Side::User) out.push_back({w.name, u.name});
  }
  return out;
}

void ModelConfig::validate() const {
  if (schema.size() == 0) throw ConfigError("model: schema has no fields");
  if (repr_dim < 1) throw ConfigError("model: repr_dim must be >= 1");
  if (orders < 1) throw ConfigError("model: orders must be >= 1");
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) throw ConfigError("model: init_std must be finite and >= 0");
  for (std::size_t h : head_hidden)
    if (h < 1) throw ConfigError("model: head layer widths must be >= 1");
  mlp.validate();
  if (variant != Variant::PlainDNN && combinations.empty()) {
    throw ConfigError("model: variant '" + std::string(variant_name(variant)) + "' needs at least one combination");
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const Combination& c : combinations) {
    const auto& w = schema[schema.index(c.weight_field)];
    const auto& u = schema[schema.index(c.input_field)];
    if (c.weight_field == c.input_field) throw ConfigError("model: combination pairs '" + w.name + "' with itself");
    if (w.kind != Kind::Scalar) {
      throw ConfigError("model: weight-side field '" + w.name + "' must be scalar");
    }
    if (!seen.insert({c.weight_field, c.input_field}).second) {
      throw ConfigError("model: duplicate combination " + c.weight_field + ":" + c.input_field);
    }
    if (uses_cartesian(variant)) {
      const auto rows = static_cast<std::uint64_t>(w.cardinality) * static_cast<std::uint64_t>(u.cardinality);
      if (rows > cartesian_cap) {
        throw ConfigError("model: cartesian table " + w.name + " x " + u.name + " needs " + std::to_string(rows) +
                          " rows, above the cap of " + std::to_string(cartesian_cap));
      }
    }
  }
}

std::vector<std::string> ModelConfig::weight_fields() const {
  std::vector<std::string> out;
  for (const auto& f : schema.fields())
    for (const Combination& c : combinations)
      if (c.weight_field == f.name && position(out, f.name) == out.size()) out.push_back(f.name);
  return out;
}

std::vector<std::string> ModelConfig::input_fields() const {
  std::vector<std::string> out;
  for (const auto& f : schema.fields())
    for (const Combination& c : combinations)
      if (c.input_field == f.name && position(out, f.name) == out.size()) out.push_back(f.name);
  return out;
}

emb::IndependenceConfig ModelConfig::independence() const {
  emb::IndependenceConfig ind;
  ind.combination_independent = combination_independent;
  ind.order_independent = order_independent;
  ind.M = std::max<std::size_t>(1, weight_fields().size());
  ind.N = std::max<std::size_t>(1, input_fields().size());
  ind.C = orders;
  return ind;
}

std::size_t ModelConfig::head_input_width() const {
  std::size_t w = schema.size() * repr_dim;
  const std::size_t k = variant == Variant::PlainDNN ? 0 : combinations.size();
  if (uses_coaction(variant)) w += k * mlp.output_dim();
  if (uses_cartesian(variant)) w += k * repr_dim;
  if (variant == Variant::InnerProduct) w += k;
  return w;
}

std::vector<ParamShape> plan_parameters(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamShape> out;
  for (const auto& f : cfg.schema.fields()) {
    out.push_back({emb_name(f.name), emb::Group::Embedding, {static_cast<std::size_t>(f.cardinality), cfg.repr_dim},
                   true});
  }
  if (uses_coaction(cfg.variant)) {
    const auto dims = emb::coaction_param_dims(cfg.mlp, cfg.independence());
    for (const std::string& w : cfg.weight_fields()) {
      const auto card = static_cast<std::size_t>(cfg.schema[cfg.schema.index(w)].cardinality);
      out.push_back({can_w_name(w), emb::Group::CoAction, {card, dims.weight_side_width}, true});
    }
    for (const std::string& u : cfg.input_fields()) {
      const auto card = static_cast<std::size_t>(cfg.schema[cfg.schema.index(u)].cardinality);
      out.push_back({can_u_name(u), emb::Group::CoAction, {card, dims.input_side_width}, true});
    }
  }
  if (uses_cartesian(cfg.variant)) {
    for (const Combination& c : cfg.combinations) {
      const auto rows = static_cast<std::size_t>(cfg.schema[cfg.schema.index(c.weight_field)].cardinality *
                                                 cfg.schema[cfg.schema.index(c.input_field)].cardinality);
      out.push_back({cart_name(c), emb::Group::Cartesian, {rows, cfg.repr_dim}, true});
    }
  }
  std::size_t in = cfg.head_input_width();
  std::vector<std::size_t> widths = cfg.head_hidden;
  widths.push_back(2);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    out.push_back({"dnn.w" + std::to_string(i), emb::Group::Dnn, {widths[i], in}, false});
    out.push_back({"dnn.b" + std::to_string(i), emb::Group::Dnn, {widths[i]}, false});
    in = widths[i];
  }
  return out;
}

std::int64_t cartesian_id(std::int64_t u, std::int64_t m, std::int64_t item_cardinality,
                          std::int64_t user_cardinality) {
  if (item_cardinality < 1) throw IndexError("cartesian_id: item cardinality must be >= 1");
  if (m < 0 || m >= item_cardinality) {
    throw IndexError("cartesian_id: item id " + std::to_string(m) + " outside [0, " +
                     std::to_string(item_cardinality) + ")");
  }
  if (u < 0 || (user_cardinality >= 0 && u >= user_cardinality)) {
    throw IndexError("cartesian_id: user id " + std::to_string(u) + " out of range");
  }
  return u * item_cardinality + m;
}

double inner_product_interaction(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("inner_product_interaction: dims " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double loss(double y_hat, int y) {
  if (!(y_hat >= 0.0 && y_hat <= 1.0)) {
    throw NumericError("loss: prediction " + std::to_string(y_hat) + " is not a probability");
  }
  if (y != 0 && y != 1) throw NumericError("loss: label must be 0 or 1");
  const double p = std::clamp(y_hat, 1e-12, 1.0 - 1e-12);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

CanModel::CanModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  std::mt19937_64 rng(seed);
  for (ParamShape& ps : plan_parameters(cfg_)) {
    num::Parameter& p = store_.add(ps.name, ps.group, ps.shape, ps.row_sparse);
    emb::init_normal(p, rng, cfg_.init_std);
  }
}

num::Var CanModel::field_embedding(num::Tape& tape, std::size_t field, std::span<const Example* const> batch) {
  num::Parameter& table = store_.get(emb_name(cfg_.schema[field].name));
  if (cfg_.schema[field].kind == Kind::Scalar) {
    std::vector<std::int32_t> ids(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) ids[b] = batch[b]->scalar(field);
    return num::gather(tape, table, ids);
  }
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> offsets = {0};
  for (const Example* ex : batch) {
    ids.insert(ids.end(), ex->values[field].begin(), ex->values[field].end());
    offsets.push_back(ids.size());
  }
  return num::segment_sum(num::gather(tape, table, ids), offsets);
}

num::Var CanModel::coaction_feature(num::Tape& tape, const Combination& c, std::span<const Example* const> batch) {
  const std::size_t wf = cfg_.schema.index(c.weight_field);
  const std::size_t uf = cfg_.schema.index(c.input_field);
  const emb::IndependenceConfig ind = cfg_.independence();
  const std::size_t w_off = emb::weight_segment_offset(cfg_.mlp, ind, position(cfg_.input_fields(), c.input_field));
  const std::size_t u_off = emb::input_segment_offset(cfg_.mlp, ind, position(cfg_.weight_fields(), c.weight_field));
  num::Parameter& wt = store_.get(can_w_name(c.weight_field));
  num::Parameter& ut = store_.get(can_u_name(c.input_field));
  const std::size_t d = cfg_.mlp.input_dim();

  std::vector<std::int32_t> w_ids, u_ids;
  std::vector<std::size_t> offsets = {0};
  const bool seq = cfg_.schema[uf].kind == Kind::Sequence;
  for (const Example* ex : batch) {
    for (std::int32_t u : ex->values[uf]) {
      w_ids.push_back(ex->scalar(wf));
      u_ids.push_back(u);
    }
    offsets.push_back(u_ids.size());
  }
  num::Var inputs = num::gather(tape, ut, u_ids);
  if (ut.cols() != d) inputs = num::slice_cols(inputs, u_off, d);
  num::Var h = coaction::coaction_rows(num::gather(tape, wt, w_ids), w_off, inputs, cfg_.mlp, cfg_.orders,
                                       cfg_.order_independent);
  return seq ? num::segment_sum(h, offsets) : h;
}

num::Var CanModel::cartesian_feature(num::Tape& tape, const Combination& c, std::span<const Example* const> batch) {
  const std::size_t wf = cfg_.schema.index(c.weight_field);
  const std::size_t uf = cfg_.schema.index(c.input_field);
  const std::int64_t w_card = cfg_.schema[wf].cardinality;
  const std::int64_t u_card = cfg_.schema[uf].cardinality;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> offsets = {0};
  for (const Example* ex : batch) {
    for (std::int32_t u : ex->values[uf]) {
      ids.push_back(static_cast<std::int32_t>(cartesian_id(u, ex->scalar(wf), w_card, u_card)));
    }
    offsets.push_back(ids.size());
  }
  num::Var e = num::gather(tape, store_.get(cart_name(c)), ids);
  return cfg_.schema[uf].kind == Kind::Sequence ? num::segment_sum(e, offsets) : e;
}

num::Var CanModel::logits(num::Tape& tape, std::span<const Example* const> batch) {
  if (batch.empty()) throw UsageError("forward: empty batch");
  for (const Example* ex : batch) data::validate_example(cfg_.schema, *ex);
  std::vector<num::Var> parts;
  std::vector<num::Var> field_vars;
  for (std::size_t f = 0; f < cfg_.schema.size(); ++f) field_vars.push_back(field_embedding(tape, f, batch));
  parts = field_vars;
  if (cfg_.variant != Variant::PlainDNN) {
    for (const Combination& c : cfg_.combinations) {
      if (uses_coaction(cfg_.variant)) parts.push_back(coaction_feature(tape, c, batch));
      if (uses_cartesian(cfg_.variant)) parts.push_back(cartesian_feature(tape, c, batch));
      if (cfg_.variant == Variant::InnerProduct) {
        parts.push_back(num::rowwise_dot(field_vars[cfg_.schema.index(c.weight_field)],
                                         field_vars[cfg_.schema.index(c.input_field)]));
      }
    }
  }
  num::Var h = num::concat_cols(parts);
  const std::size_t layers = cfg_.head_hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    h = num::affine(h, num::parameter(tape, store_.get("dnn.w" + std::to_string(i))),
                    num::parameter(tape, store_.get("dnn.b" + std::to_string(i))));
    if (i + 1 < layers) h = num::activate(num::Activation::SeLU, h);
  }
  return h;
}

num::Var CanModel::batch_loss(num::Tape& tape, std::span<const Example* const> batch) {
  std::vector<std::uint8_t> labels(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) labels[b] = batch[b]->label;
  return num::softmax_cross_entropy(logits(tape, batch), labels);
}

double CanModel::forward(const Example& ex) {
  num::Tape tape;
  const Example* one[] = {&ex};
  return num::softmax_click_prob(logits(tape, one).value())[0];
}

std::vector<double> CanModel::predict(const data::Dataset& ds, std::size_t chunk) {
  std::vector<double> out;
  out.reserve(ds.size());
  std::vector<const Example*> batch;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    batch.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) batch.push_back(&ds.examples[i]);
    num::Tape tape;
    const auto p = num::softmax_click_prob(logits(tape, batch).value());
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double dataset_loss(CanModel& model, const data::Dataset& ds) {
  const auto p = model.predict(ds);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += loss(p[i], ds.examples[i].label);
  return total / static_cast<double>(p.size());
}

TrainLog train(CanModel& model, const data::Dataset& ds, const TrainConfig& tc,
               const std::function<void(std::size_t, double)>& on_epoch) {
  if (ds.empty()) throw UsageError("train: dataset is empty");
  if (tc.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(tc.adam.lr >= 0.0) || !std::isfinite(tc.adam.lr)) throw ConfigError("train: lr must be finite and >= 0");
  if (ds.schema != model.config().schema) throw SchemaError("train: dataset schema does not match the model");
  TrainLog log;
  try {
    log.initial_loss = dataset_loss(model, ds);
  } catch (const NumericError&) {
    // Left as NaN; the first batch reports the coordinates.
    log.initial_loss = std::nan("");
  }
  std::vector<num::Parameter*> params = model.store().all();
  num::Adam adam(tc.adam);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(ds.size());
  std::vector<const Example*> batch;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t b_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++b_index) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + tc.batch_size); ++i) {
        batch.push_back(&ds.examples[order[i]]);
      }
      for (num::Parameter* p : params) p->zero_grad();
      num::Tape tape;
      const num::Var l = model.batch_loss(tape, batch);
      const double lv = l.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b_index + 1));
      }
      tape.backward(l);
      adam.step(params);
      ++log.steps;
      total += lv * static_cast<double>(batch.size());
    }
    log.epoch_loss.push_back(total / static_cast<double>(ds.size()));
    if (on_epoch) on_epoch(epoch + 1, log.epoch_loss.back());
  }
  return log;
}

std::vector<std::string> model_config_keys() {
  return {"variant",       "repr_dim",          "mlp",  "mlp_activation", "orders",  "combination_independent",
          "order_independent", "head",          "combinations", "cartesian_cap", "init_std"};
}

bool apply_model_key(ModelConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "variant") {
    cfg.variant = parse_variant(value);
  } else if (key == "repr_dim") {
    cfg.repr_dim = parse_number<std::size_t>(key, value);
  } else if (key == "mlp") {
    const auto dims = parse_dims(key, value);
    if (dims.size() < 2) throw ConfigError("key 'mlp' needs at least two dims (in,out[,out...])");
    cfg.mlp.layers = coaction::MlpCanSpec::chain(dims).layers;
  } else if (key == "mlp_activation") {
    if (value == "auto") cfg.mlp.activation.reset();
    else cfg.mlp.activation = num::parse_activation(value);
  } else if (key == "orders") {
    cfg.orders = parse_number<int>(key, value);
  } else if (key == "combination_independent") {
    cfg.combination_independent = parse_bool(key, value);
  } else if (key == "order_independent") {
    cfg.order_independent = parse_bool(key, value);
  } else if (key == "head") {
    cfg.head_hidden = parse_dims(key, value);
  } else if (key == "combinations") {
    cfg.combinations.clear();
    if (!value.empty() && value != "none") {
      for (const std::string& pair : split(value, ',')) {
        const auto lr = split(pair, ':');
        if (lr.size() != 2 || lr[0].empty() || lr[1].empty()) {
          throw ConfigError("bad combination '" + pair + "' (expected weight_field:input_field)");
        }
        cfg.combinations.push_back({lr[0], lr[1]});
      }
    }
  } else if (key == "cartesian_cap") {
    cfg.cartesian_cap = parse_number<std::uint64_t>(key, value);
  } else if (key == "init_std") {
    cfg.init_std = parse_number<double>(key, value);
  } else {
    return false;
  }
  return true;
}

std::string format_model_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  std::vector<std::size_t> mlp_dims = {cfg.mlp.input_dim()};
  for (const auto& l : cfg.mlp.layers) mlp_dims.push_back(l.out);
  std::string combos;
  for (std::size_t i = 0; i < cfg.combinations.size(); ++i) {
    combos += (i ? "," : "") + cfg.combinations[i].weight_field + ":" + cfg.combinations[i].input_field;
  }
  out << "variant = " << variant_name(cfg.variant) << '\n'
      << "repr_dim = " << cfg.repr_dim << '\n'
      << "mlp = " << join_dims(mlp_dims) << '\n'
      << "mlp_activation = " << (cfg.mlp.activation ? num::activation_name(*cfg.mlp.activation) : "auto") << '\n'
      << "orders = " << cfg.orders << '\n'
      << "combination_independent = " << (cfg.combination_independent ? "true" : "false") << '\n'
      << "order_independent = " << (cfg.order_independent ? "true" : "false") << '\n'
      << "head = " << join_dims(cfg.head_hidden) << '\n'
      << "combinations = " << (combos.empty() ? "none" : combos) << '\n'
      << "cartesian_cap = " << cfg.cartesian_cap << '\n'
      << "init_std = " << cfg.init_std << '\n';
  return out.str();
}

void save_model(const std::string& dir, const CanModel& model) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir + "': " + ec.message());
  data::save_schema(dir + "/schema.txt", model.config().schema);
  std::ofstream out(dir + "/model.txt");
  if (!out) throw IoError("cannot write '" + dir + "/model.txt'");
  out << format_model_config(model.config());
  out.close();
  if (!out) throw IoError("failed writing '" + dir + "/model.txt'");
  emb::save_checkpoint(dir, model.store());
}

std::unique_ptr<CanModel> load_model(const std::string& dir) {
  ModelConfig cfg;
  cfg.schema = data::load_schema(dir + "/schema.txt");
  std::ifstream in(dir + "/model.txt");
  if (!in) throw IoError("cannot open '" + dir + "/model.txt'");
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!apply_model_key(cfg, key, value)) throw ConfigError("unknown key '" + key + "' in " + dir + "/model.txt");
  }
  auto model = std::make_unique<CanModel>(std::move(cfg), 0);
  emb::load_checkpoint(dir, model->store());
  return model;
}

}  // namespace can::model
