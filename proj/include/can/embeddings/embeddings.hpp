#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "can/coaction/mlp_spec.hpp"
#include "can/numerics/parameter.hpp"
#include "can/numerics/tape.hpp"

namespace can::emb {

// Independence levels of the co-action tables. M counts weight-side fields,
// N input-side fields, C the orders.
struct IndependenceConfig {
  bool combination_independent = false;
  bool order_independent = false;
  std::size_t M = 1;
  std::size_t N = 1;
  int C = 1;

  void validate() const;
};

struct CoActionDims {
  std::size_t weight_side_width = 0;
  std::size_t input_side_width = 0;

  bool operator==(const CoActionDims&) const = default;
};

CoActionDims coaction_param_dims(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind);

// Column offsets inside a table row. Weight-side rows are laid out
// combination-major, order-minor: segment (input field j, order c) starts at
// (j * orders + c) * T. Input-side rows hold one in_0 block per weight field.
std::size_t weight_segment_offset(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind,
                                  std::size_t input_field, int order = 0);
std::size_t input_segment_offset(const coaction::MlpCanSpec& spec, const IndependenceConfig& ind,
                                 std::size_t weight_field);

enum class ScaleMode { Cartesian, CoAction };

// Parameters needed to represent every pair of two n_ids vocabularies:
// cartesian n^2 * dim, co-action n * dim.
std::uint64_t parameter_scale(std::uint64_t n_ids, std::uint64_t dim, ScaleMode mode);

inline constexpr double kInitStddev = 0.01;

void init_normal(num::Parameter& p, std::mt19937_64& rng, double stddev = kInitStddev);

// Row view of a table; throws IndexError naming the table and the id.
std::span<const double> lookup(const num::Parameter& table, std::int64_t id);
// Tape-registered lookup of several ids; gradient flows to those rows only.
num::Var lookup(num::Tape& tape, num::Parameter& table, std::span<const std::int32_t> ids);

enum class Group { Embedding, CoAction, Cartesian, Dnn };
std::string_view group_name(Group g);

// Owns every trainable parameter of a model, tagged by group. Addresses are
// stable for the lifetime of the store.
class ParameterStore {
 public:
  num::Parameter& add(std::string name, Group group, num::Shape shape, bool row_sparse);

  num::Parameter& get(std::string_view name);
  const num::Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<num::Parameter*> all();
  std::vector<const num::Parameter*> all() const;
  std::vector<num::Parameter*> group(Group g);
  Group group_of(const num::Parameter& p) const;
  std::uint64_t count(Group g) const;
  std::uint64_t count() const;
  std::size_t size() const { return params_.size(); }

 private:
  std::deque<num::Parameter> params_;
  std::vector<Group> groups_;
};

}  // namespace can::emb
