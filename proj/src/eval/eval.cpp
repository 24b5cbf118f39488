#include "can/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <new>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "can/data/split.hpp"
#include "can/error.hpp"

namespace can::eval {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  }
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw MetricError("auc: NaN score at index " + std::to_string(i));
    if (labels[i] > 1) throw MetricError("auc: labels must be 0 or 1");
    n_pos += labels[i];
  }
  const std::uint64_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc: undefined with a single class present");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives, with tied groups at their mean rank, so
  // everything stays in integers.
  std::uint64_t rank2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) pos += labels[idx[j++]];
    rank2 += pos * static_cast<std::uint64_t>(i + j + 1);  // 2 * mean rank (1-based) of [i, j)
    i = j;
  }
  const std::uint64_t u2 = rank2 - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<std::uint8_t> labels_of(const data::Dataset& ds) {
  std::vector<std::uint8_t> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[i] = ds.examples[i].label;
  return out;
}

UnaryScorer::UnaryScorer(const data::Dataset& train) : schema_(train.schema), log_odds_(train.schema.size()) {
  std::vector<std::unordered_map<std::int32_t, std::pair<double, double>>> counts(schema_.size());
  for (const data::Example& ex : train.examples) {
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (schema_[f].kind != data::Kind::Scalar) continue;
      auto& c = counts[f][ex.scalar(f)];
      c.first += ex.label;
      c.second += 1.0;
    }
  }
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    for (const auto& [id, c] : counts[f]) log_odds_[f][id] = std::log((c.first + 1.0) / (c.second - c.first + 1.0));
  }
}

double UnaryScorer::score(const data::Example& ex) const {
  double s = 0.0;
  for (std::size_t f = 0; f < schema_.size(); ++f) {
    if (schema_[f].kind != data::Kind::Scalar) continue;
    const auto it = log_odds_[f].find(ex.scalar(f));
    if (it != log_odds_[f].end()) s += it->second;
  }
  return s;
}

std::vector<double> UnaryScorer::score(const data::Dataset& ds) const {
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[i] = score(ds.examples[i]);
  return out;
}

EvalReport summarize(const std::string& variant, const std::string& split, const std::vector<CellResult>& cells) {
  EvalReport r;
  r.variant = variant;
  r.split = split;
  for (const CellResult& c : cells) {
    if (c.variant != variant || c.split != split) continue;
    if (c.failed) {
      ++r.failures;
      continue;
    }
    r.per_seed.push_back({c.seed, c.auc});
  }
  r.n_seeds = r.per_seed.size();
  if (r.n_seeds == 0) {
    r.mean = r.std = std::nan("");
    return r;
  }
  double sum = 0.0;
  for (const auto& [s, a] : r.per_seed) sum += a;
  r.mean = sum / static_cast<double>(r.n_seeds);
  double ss = 0.0;
  for (const auto& [s, a] : r.per_seed) ss += (a - r.mean) * (a - r.mean);
  r.std = r.n_seeds > 1 ? std::sqrt(ss / static_cast<double>(r.n_seeds - 1)) : 0.0;
  return r;
}

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.model.mlp = coaction::MlpCanSpec::chain({4, 4});
  cfg.model.combinations = {{data::kItemField, data::kUserField}, {data::kItemField, data::kHistoryField}};
  cfg.train.epochs = 6;
  return cfg;
}

const EvalReport* find_report(const ExperimentResult& r, const std::string& variant, const std::string& split) {
  for (const EvalReport& rep : r.reports)
    if (rep.variant == variant && rep.split == split) return &rep;
  return nullptr;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::function<void(const CellResult&)>& on_cell) {
  if (cfg.seeds.size() < 2) throw ConfigError("experiment: at least two seeds are needed for a std");
  if (cfg.variants.empty()) throw ConfigError("experiment: no variants listed");
  for (const std::string& v : cfg.variants)
    if (v != kUnaryVariant) model::parse_variant(v);

  const data::SyntheticData synth = data::generate_synthetic(cfg.data);
  const auto split = data::split_generalization(synth.train, synth.test, data::kUserField, data::kItemField);
  const std::vector<std::uint8_t> test_labels = labels_of(synth.test);
  ExperimentResult result;
  result.bayes_auc = synth.oracle.bayes_auc();
  result.n_test = synth.test.size();
  result.n_unseen = split.unseen.size();

  // Unseen examples by position within the full test set, so one prediction
  // pass serves both splits.
  std::vector<std::size_t> unseen_idx;
  {
    std::size_t u = 0;
    for (std::size_t i = 0; i < synth.test.size() && u < split.unseen.size(); ++i) {
      if (synth.test.examples[i] == split.unseen.examples[u]) {
        unseen_idx.push_back(i);
        ++u;
      }
    }
  }
  std::vector<std::uint8_t> unseen_labels;
  for (std::size_t i : unseen_idx) unseen_labels.push_back(test_labels[i]);

  auto record = [&](CellResult c) {
    if (on_cell) on_cell(c);
    result.cells.push_back(std::move(c));
  };
  auto score_both = [&](const std::string& variant, std::uint64_t seed, const std::vector<double>& scores) {
    std::vector<double> unseen_scores;
    for (std::size_t i : unseen_idx) unseen_scores.push_back(scores[i]);
    using Split = std::tuple<const char*, const std::vector<double>*, const std::vector<std::uint8_t>*>;
    for (const auto& [name, s, l] : {Split{kTestSplit, &scores, &test_labels}, Split{kUnseenSplit, &unseen_scores, &unseen_labels}}) {
      CellResult c{variant, seed, name, 0.0, false, {}};
      try {
        c.auc = auc(*s, *l);
      } catch (const Error& e) {
        c.failed = true;
        c.error = e.what();
      }
      record(std::move(c));
    }
  };

  for (const std::string& variant : cfg.variants) {
    for (std::uint64_t seed : cfg.seeds) {
      try {
        std::vector<double> scores;
        if (variant == kUnaryVariant) {
          scores = UnaryScorer(synth.train).score(synth.test);
        } else {
          model::ModelConfig mc = cfg.model;
          mc.schema = synth.train.schema;
          mc.variant = model::parse_variant(variant);
          model::CanModel m(mc, seed);
          model::TrainConfig tc = cfg.train;
          tc.seed = seed;
          model::train(m, synth.train, tc);
          scores = m.predict(synth.test);
        }
        score_both(variant, seed, scores);
      } catch (const std::exception& e) {
        for (const char* name : {kTestSplit, kUnseenSplit}) record(CellResult{variant, seed, name, 0.0, true, e.what()});
      }
    }
  }
  for (const std::string& variant : cfg.variants)
    for (const char* name : {kTestSplit, kUnseenSplit}) result.reports.push_back(summarize(variant, name, result.cells));
  return result;
}

void write_report_csv(std::ostream& out, const ExperimentResult& r) {
  out << "variant,split,seed,auc\n";
  for (const CellResult& c : r.cells) {
    out << c.variant << ',' << c.split << ',' << c.seed << ',' << (c.failed ? std::string("failed") : fmt(c.auc))
        << '\n';
  }
  out << "\nvariant,split,mean,std\n";
  for (const EvalReport& rep : r.reports) {
    out << rep.variant << ',' << rep.split << ',' << fmt(rep.mean) << ',' << fmt(rep.std) << '\n';
  }
}

void write_report_table(std::ostream& out, const ExperimentResult& r) {
  out << "bayes-optimal AUC " << fmt(r.bayes_auc) << "; test " << r.n_test << " examples, unseen " << r.n_unseen
      << "\n\n";
  out << std::left << std::setw(16) << "variant" << std::setw(8) << "split" << std::right << std::setw(10) << "mean"
      << std::setw(10) << "std" << std::setw(7) << "seeds" << std::setw(8) << "failed" << '\n';
  for (const EvalReport& rep : r.reports) {
    out << std::left << std::setw(16) << rep.variant << std::setw(8) << rep.split << std::right << std::setw(10)
        << fmt(rep.mean) << std::setw(10) << fmt(rep.std) << std::setw(7) << rep.n_seeds << std::setw(8)
        << rep.failures << '\n';
  }
}

}  // namespace can::eval
