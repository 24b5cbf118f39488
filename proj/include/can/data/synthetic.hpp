#pragma once

#include <cstdint>
#include <vector>

#include "can/data/dataset.hpp"

namespace can::data {

// Planted-interaction generator: users and items fall into `buckets` groups by
// id modulo buckets, and the click probability of (user, item) is
// sigmoid(beta * R[user bucket, item bucket]) for a balanced sign table R.
struct SyntheticSpec {
  std::int64_t n_users = 2000;
  std::int64_t n_items = 1000;
  std::int64_t buckets = 8;
  double beta = 3.0;
  std::int64_t n_train = 50000;
  std::int64_t n_test = 10000;
  // Length of each user's click history; 0 disables the `hist` field.
  std::int64_t seq_len = 10;
  std::uint64_t seed = 1;

  void validate() const;
  Schema schema() const;
};

// Ground truth of a generated dataset.
class BayesOracle {
 public:
  BayesOracle(std::vector<std::int8_t> table, std::int64_t buckets, double beta, std::int64_t n_users,
              std::int64_t n_items);

  std::int64_t buckets() const { return buckets_; }
  double beta() const { return beta_; }
  std::int8_t sign(std::int64_t user_bucket, std::int64_t item_bucket) const {
    return table_[static_cast<std::size_t>(user_bucket * buckets_ + item_bucket)];
  }
  const std::vector<std::int8_t>& table() const { return table_; }

  double click_probability(std::int64_t user, std::int64_t item) const;
  // Expected click rate over uniform users and items.
  double global_mean() const;
  // Exact AUC of scoring each example by its true click probability, for
  // examples drawn from the generating distribution.
  double bayes_auc() const;

 private:
  double positive_mass() const;

  std::vector<std::int8_t> table_;
  std::int64_t buckets_;
  double beta_;
  std::int64_t n_users_;
  std::int64_t n_items_;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  BayesOracle oracle;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Field names used by the generator.
inline constexpr const char* kUserField = "user";
inline constexpr const char* kHistoryField = "hist";
inline constexpr const char* kItemField = "item";

}  // namespace can::data
