#include "can/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "can/error.hpp"

namespace can::data {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Balanced +-1 table: every row and every column holds buckets/2 positives.
// Starts from a cyclic pattern and randomizes it with checkerboard flips, which
// preserve all row and column sums.
std::vector<std::int8_t> draw_balanced_table(std::int64_t g, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(g);
  std::vector<std::int8_t> r(n * n);
  if (g == 1) {
    r[0] = 1;
    return r;
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) r[a * n + b] = ((a + b) % n < n / 2) ? 1 : -1;

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t flips = 20 * n * n;
  for (std::size_t k = 0; k < flips; ++k) {
    const std::size_t a1 = pick(rng), a2 = pick(rng), b1 = pick(rng), b2 = pick(rng);
    if (a1 == a2 || b1 == b2) continue;
    std::int8_t& p = r[a1 * n + b1];
    std::int8_t& q = r[a1 * n + b2];
    std::int8_t& s = r[a2 * n + b1];
    std::int8_t& t = r[a2 * n + b2];
    if (p == t && q == s && p != q) {
      p = static_cast<std::int8_t>(-p);
      t = static_cast<std::int8_t>(-t);
      q = static_cast<std::int8_t>(-q);
      s = static_cast<std::int8_t>(-s);
    }
  }
  std::vector<std::size_t> rows(n), cols(n);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::shuffle(cols.begin(), cols.end(), rng);
  std::vector<std::int8_t> out(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) out[a * n + b] = r[rows[a] * n + cols[b]];
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_users < 1 || n_items < 1) throw ConfigError("synthetic: n_users and n_items must be positive");
  if (buckets < 1 || buckets > std::min(n_users, n_items)) {
    throw ConfigError("synthetic: buckets must lie in [1, min(n_users, n_items)]");
  }
  if (buckets > 1 && buckets % 2 != 0) throw ConfigError("synthetic: buckets must be 1 or even");
  if (n_users % buckets != 0 || n_items % buckets != 0) {
    throw ConfigError("synthetic: n_users and n_items must be multiples of buckets");
  }
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("synthetic: beta must be finite and >= 0");
  if (n_train < 1 || n_test < 1) throw ConfigError("synthetic: n_train and n_test must be positive");
  if (seq_len < 0) throw ConfigError("synthetic: seq_len must be >= 0");
  if (n_users > INT32_MAX || n_items > INT32_MAX) throw ConfigError("synthetic: id space exceeds 32 bits");
}

Schema SyntheticSpec::schema() const {
  std::vector<FieldSpec> fields;
  fields.push_back({kUserField, Side::User, Kind::Scalar, n_users, 1});
  if (seq_len > 0) fields.push_back({kHistoryField, Side::User, Kind::Sequence, n_items, seq_len});
  fields.push_back({kItemField, Side::Item, Kind::Scalar, n_items, 1});
  return Schema(std::move(fields));
}

BayesOracle::BayesOracle(std::vector<std::int8_t> table, std::int64_t buckets, double beta, std::int64_t n_users,
                         std::int64_t n_items)
    : table_(std::move(table)), buckets_(buckets), beta_(beta), n_users_(n_users), n_items_(n_items) {
  if (static_cast<std::int64_t>(table_.size()) != buckets_ * buckets_) {
    throw ConfigError("oracle: table size does not match bucket count");
  }
}

double BayesOracle::click_probability(std::int64_t user, std::int64_t item) const {
  return sigmoid(beta_ * sign(user % buckets_, item % buckets_));
}

namespace {

// Share of ids in [0, n) that fall into bucket b under id mod g.
double bucket_mass(std::int64_t n, std::int64_t g, std::int64_t b) {
  const std::int64_t count = n / g + (b < n % g ? 1 : 0);
  return static_cast<double>(count) / static_cast<double>(n);
}

}  // namespace

double BayesOracle::positive_mass() const {
  double q = 0.0;
  for (std::int64_t a = 0; a < buckets_; ++a)
    for (std::int64_t b = 0; b < buckets_; ++b)
      if (sign(a, b) > 0) q += bucket_mass(n_users_, buckets_, a) * bucket_mass(n_items_, buckets_, b);
  return q;
}

double BayesOracle::global_mean() const {
  const double q = positive_mass();
  return q * sigmoid(beta_) + (1.0 - q) * sigmoid(-beta_);
}

double BayesOracle::bayes_auc() const {
  const double q = positive_mass();
  const double hi = sigmoid(beta_);
  const double lo = sigmoid(-beta_);
  // Every example carries one of two scores; with a single effective score
  // all pairs tie.
  if (hi == lo || q <= 0.0 || q >= 1.0) return 0.5;
  const double pos_hi = q * hi, pos_lo = (1.0 - q) * lo;
  const double neg_hi = q * lo, neg_lo = (1.0 - q) * hi;
  const double pos = pos_hi + pos_lo, neg = neg_hi + neg_lo;
  return (pos_hi * neg_lo + 0.5 * (pos_hi * neg_hi + pos_lo * neg_lo)) / (pos * neg);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::int64_t g = spec.buckets;
  BayesOracle oracle(draw_balanced_table(g, rng), g, spec.beta, spec.n_users, spec.n_items);
  const Schema schema = spec.schema();

  // Each user's click history is drawn from the item buckets it likes.
  std::vector<std::vector<std::int32_t>> history(static_cast<std::size_t>(spec.n_users));
  if (spec.seq_len > 0) {
    std::uniform_int_distribution<std::int64_t> within(0, spec.n_items / g - 1);
    for (std::int64_t u = 0; u < spec.n_users; ++u) {
      std::vector<std::int64_t> liked;
      for (std::int64_t b = 0; b < g; ++b)
        if (oracle.sign(u % g, b) > 0) liked.push_back(b);
      std::uniform_int_distribution<std::size_t> pick(0, liked.size() - 1);
      auto& h = history[static_cast<std::size_t>(u)];
      for (std::int64_t s = 0; s < spec.seq_len; ++s) {
        const std::int64_t b = liked[pick(rng)];
        h.push_back(static_cast<std::int32_t>(b + g * within(rng)));
      }
    }
  }

  std::uniform_int_distribution<std::int64_t> user_dist(0, spec.n_users - 1);
  std::uniform_int_distribution<std::int64_t> item_dist(0, spec.n_items - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](std::int64_t n) {
    Dataset ds{schema, {}};
    ds.examples.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
      const std::int64_t u = user_dist(rng);
      const std::int64_t m = item_dist(rng);
      const double p = oracle.click_probability(u, m);
      Example ex;
      ex.label = unit(rng) < p ? 1 : 0;
      ex.values.push_back({static_cast<std::int32_t>(u)});
      if (spec.seq_len > 0) ex.values.push_back(history[static_cast<std::size_t>(u)]);
      ex.values.push_back({static_cast<std::int32_t>(m)});
      ds.examples.push_back(std::move(ex));
    }
    return ds;
  };
  Dataset train = draw(spec.n_train);
  Dataset test = draw(spec.n_test);
  return SyntheticData{std::move(train), std::move(test), std::move(oracle)};
}

}  // namespace can::data
