#include "can/embeddings/embeddings.hpp"

#include "can/error.hpp"

namespace can::emb {

void IndependenceConfig::validate() const {
  if (M < 1 || N < 1) throw ConfigError("independence: M and N must be >= 1");
  if (C < 1) throw ConfigError("independence: order count must be >= 1");
}

CoActionDims coaction_param_dims(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind) {
  spec.validate();
  ind.validate();
  const std::size_t base = spec.param_count();
  CoActionDims dims;
  dims.weight_side_width = base * (ind.combination_independent ? ind.N : 1) *
                           (ind.order_independent ? static_cast<std::size_t>(ind.C) : 1);
  dims.input_side_width = spec.input_dim() * (ind.combination_independent ? ind.M : 1);
  return dims;
}

std::size_t weight_segment_offset(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind,
                                  std::size_t input_field, int order) {
  const std::size_t orders = ind.order_independent ? static_cast<std::size_t>(ind.C) : 1;
  const std::size_t combo = ind.combination_independent ? input_field : 0;
  const std::size_t c = ind.order_independent ? static_cast<std::size_t>(order) : 0;
  if (ind.combination_independent && input_field >= ind.N) throw IndexError("input field index exceeds N");
  if (ind.order_independent && (order < 0 || order >= ind.C)) throw IndexError("order index exceeds C");
  return (combo * orders + c) * spec.param_count();
}

std::size_t input_segment_offset(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind,
                                 std::size_t weight_field) {
  if (!ind.combination_independent) return 0;
  if (weight_field >= ind.M) throw IndexError("weight field index exceeds M");
  return weight_field * spec.input_dim();
}

std::uint64_t parameter_scale(std::uint64_t n_ids, std::uint64_t dim, ScaleMode mode) {
  return mode == ScaleMode::Cartesian ? n_ids * n_ids * dim : n_ids * dim;
}

void init_normal(num::Parameter& p, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.value.data()) v = dist(rng);
}

std::span<const double> lookup(const num::Parameter& table, std::int64_t id) {
  if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
    throw IndexError("lookup in '" + table.name + "': id " + std::to_string(id) + " outside [0, " +
                     std::to_string(table.rows()) + ")");
  }
  return table.value.row(static_cast<std::size_t>(id));
}

num::Var lookup(num::Tape& tape, num::Parameter& table, std::span<const std::int32_t> ids) {
  return num::gather(tape, table, ids);
}

std::string_view group_name(Group g) {
  switch (g) {
    case Group::Embedding:
      return "embedding";
    case Group::CoAction:
      return "coaction";
    case Group::Cartesian:
      return "cartesian";
    case Group::Dnn:
      return "dnn";
  }
  return "embedding";
}

num::Parameter& ParameterStore::add(std::string name, Group group, num::Shape shape, bool row_sparse) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  params_.emplace_back(std::move(name), num::Tensor(std::move(shape), 0.0), row_sparse);
  groups_.push_back(group);
  return params_.back();
}

num::Parameter& ParameterStore::get(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

const num::Parameter& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::contains(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::vector<num::Parameter*> ParameterStore::all() {
  std::vector<num::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const num::Parameter*> ParameterStore::all() const {
  std::vector<const num::Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<num::Parameter*> ParameterStore::group(Group g) {
  std::vector<num::Parameter*> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (groups_[i] == g) out.push_back(&params_[i]);
  return out;
}

Group ParameterStore::group_of(const num::Parameter& p) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (&params_[i] == &p) return groups_[i];
  throw ConfigError("parameter '" + p.name + "' is not owned by this store");
}

std::uint64_t ParameterStore::count(Group g) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (groups_[i] == g) n += params_[i].value.size();
  return n;
}

std::uint64_t ParameterStore::count() const {
  std::uint64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

}  // namespace can::emb
