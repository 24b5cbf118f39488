#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "can/data/dataset.hpp"
#include "can/data/synthetic.hpp"
#include "can/model/model.hpp"

namespace can::eval {

// Mann-Whitney AUC with ties counted one half. O(n log n); MetricError when
// either class is missing.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> labels_of(const data::Dataset& ds);

// Additive per-id log-odds over the scalar fields, estimated from train with
// add-one smoothing. It has no access to any pairwise term.
class UnaryScorer {
 public:
  explicit UnaryScorer(const data::Dataset& train);
  double score(const data::Example& ex) const;
  std::vector<double> score(const data::Dataset& ds) const;

 private:
  data::Schema schema_;
  std::vector<std::unordered_map<std::int32_t, double>> log_odds_;
};

inline constexpr const char* kUnaryVariant = "unary";

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  std::string split;
  double auc = 0.0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::string variant;
  std::string split;
  double mean = 0.0;
  double std = 0.0;  // sample std over the successful seeds
  std::size_t n_seeds = 0;
  std::vector<std::pair<std::uint64_t, double>> per_seed;
  std::size_t failures = 0;
};

struct ExperimentConfig {
  data::SyntheticSpec data;
  model::ModelConfig model;  // schema is replaced by the generated one
  model::TrainConfig train;
  std::vector<std::string> variants = {kUnaryVariant, "can", "cartesian"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::vector<EvalReport> reports;
  double bayes_auc = 0.0;
  std::size_t n_test = 0;
  std::size_t n_unseen = 0;
};

// The tuned setup for the synthetic benchmark: one 4->4 micro-MLP layer, the
// item field acting on both the user id and the history, six epochs.
ExperimentConfig default_experiment();

inline constexpr const char* kTestSplit = "test";
inline constexpr const char* kUnseenSplit = "unseen";

// Generates the data once, then for every variant x seed trains a model whose
// initialization and shuffle come from the seed, and scores the full test set
// and the unseen-combination subset. A failing cell is recorded and skipped.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const CellResult&)>& on_cell = {});

EvalReport summarize(const std::string& variant, const std::string& split, const std::vector<CellResult>& cells);
const EvalReport* find_report(const ExperimentResult& r, const std::string& variant, const std::string& split);

// `variant,split,seed,auc` rows, a blank line, then `variant,split,mean,std`.
void write_report_csv(std::ostream& out, const ExperimentResult& r);
void write_report_table(std::ostream& out, const ExperimentResult& r);

}  // namespace can::eval
