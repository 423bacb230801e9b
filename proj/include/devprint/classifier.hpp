// Vendor classifier: one-hot encoding of categorical slots, a CART random
// forest, the evaluation metrics, class balancing, stratified folds,
// randomized hyperparameter search and the "unknown" threshold.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "devprint/features.hpp"
#include "devprint/rng.hpp"

namespace devprint {

inline constexpr std::string_view kUnknown = "unknown";

struct Sample {
  Ipv4Address target;
  FeatureVector vector;
  std::string label;
};

// Keeps vectors that have a label; the rest are returned through `unlabeled`.
std::vector<Sample> join_labels(const std::vector<LabeledVector>& rows,
                                const std::map<Ipv4Address, std::string>& labels,
                                std::size_t* unlabeled = nullptr);

// --- one-hot encoding ---------------------------------------------------------

class OheVocabulary {
 public:
  OheVocabulary() = default;
  // Slots come from the first vector; every vector must have the same slots.
  static OheVocabulary fit(const std::vector<const FeatureVector*>& vectors);
  static OheVocabulary fit(const std::vector<Sample>& samples);

  std::size_t width() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t slot_count() const { return slots_.size(); }
  const std::vector<std::string>& slots() const { return slots_; }
  const std::vector<std::string>& values(std::size_t slot) const { return values_[slot]; }
  // Column range of a slot is [offset(s), offset(s + 1)).
  std::size_t offset(std::size_t slot) const { return offsets_[slot]; }
  // (slot, value index) of a column.
  std::pair<std::size_t, std::size_t> column(std::size_t col) const;
  std::string column_name(std::size_t col) const;  // "slot=value"

  // Per slot: index of the value, or -1 when unseen. Throws SchemaError when
  // the slots differ.
  std::vector<int> codes(const FeatureVector& v) const;
  std::vector<std::uint8_t> transform(const FeatureVector& v) const;

  bool operator==(const OheVocabulary&) const = default;

 private:
  friend class RandomForest;
  std::vector<std::string> slots_;
  std::vector<std::vector<std::string>> values_;  // sorted
  std::vector<std::size_t> offsets_;              // slot_count + 1 entries
};

// --- forest -------------------------------------------------------------------

enum class Criterion { gini, entropy };

struct MaxFeatures {
  enum class Kind { sqrt, log2, fraction, all };
  Kind kind = Kind::sqrt;
  double fraction = 1.0;

  std::size_t resolve(std::size_t width) const;
  std::string to_string() const;  // "sqrt", "log2", "all", "0.3"
  static MaxFeatures parse(const std::string& text);
  bool operator==(const MaxFeatures&) const = default;
};

struct Hyperparams {
  int n_trees = 100;
  std::optional<int> max_depth;
  MaxFeatures max_features;
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  bool bootstrap = true;
  Criterion criterion = Criterion::gini;
  std::uint64_t seed = 1;

  void validate() const;  // throws UsageError
  bool operator==(const Hyperparams&) const = default;
};

struct TreeNode {
  int column = -1;  // -1 for a leaf
  int left = -1;    // column value 0
  int right = -1;   // column value 1
  std::vector<double> proportions;  // leaves only
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // root first
  bool operator==(const DecisionTree&) const = default;
};

class RandomForest {
 public:
  // Fits the vocabulary on `train` and grows the trees. Throws DataError for
  // fewer than two classes.
  static RandomForest train(const std::vector<Sample>& train, const Hyperparams& params);

  const std::vector<std::string>& classes() const { return classes_; }
  const OheVocabulary& vocabulary() const { return vocab_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const std::vector<double>& importances() const { return importances_; }
  const Hyperparams& params() const { return params_; }
  std::optional<double> unknown_threshold() const { return threshold_; }
  void set_unknown_threshold(std::optional<double> t) { threshold_ = t; }

  std::vector<double> predict_proba(const FeatureVector& v) const;
  // Throws SchemaError on a width mismatch.
  std::vector<double> predict_proba_row(const std::vector<std::uint8_t>& row) const;
  std::vector<double> predict_proba_codes(const std::vector<int>& codes) const;
  // Argmax, lowest class index on ties; "unknown" below the threshold.
  std::string predict(const FeatureVector& v) const;
  std::string label_for(const std::vector<double>& proba) const;

  std::string to_json() const;
  static RandomForest from_json(const std::string& text, const std::string& origin = "model.json");
  void save(const std::string& path) const;
  static RandomForest load(const std::string& path);

  bool operator==(const RandomForest&) const = default;

 private:
  std::vector<std::string> classes_;
  OheVocabulary vocab_;
  Hyperparams params_;
  std::vector<DecisionTree> trees_;
  std::vector<double> importances_;  // per column
  std::optional<double> threshold_;
};

// --- metrics ------------------------------------------------------------------

// Mean per-class recall over classes present in y_true.
double balanced_accuracy(const std::vector<std::string>& y_true,
                         const std::vector<std::string>& y_pred);
// Pooled counts; an "unknown" prediction is a false negative only.
double micro_f1(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred);
double accuracy(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred);
// One-vs-rest AUC per class from rank sums (ties get mid-ranks), averaged over
// classes with both positives and negatives.
double roc_auc_ovr(const std::vector<std::string>& y_true,
                   const std::vector<std::vector<double>>& probas,
                   const std::vector<std::string>& classes);

struct Confusion {
  std::vector<std::string> labels;            // true classes then any extra predicted labels
  std::vector<std::vector<std::size_t>> counts;  // [true][predicted]
};
Confusion confusion_matrix(const std::vector<std::string>& y_true,
                           const std::vector<std::string>& y_pred);

// --- data handling ------------------------------------------------------------

// Indices kept after capping every class at `cap` (uniform, without
// replacement), in input order.
std::vector<std::size_t> balance_indices(const std::vector<std::string>& labels, std::size_t cap,
                                         Rng& rng);
std::vector<Sample> balance_classes(const std::vector<Sample>& samples, std::size_t cap, Rng& rng);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Throws DataError when a class has fewer than k samples.
std::vector<Fold> stratified_kfold(const std::vector<std::string>& labels, std::size_t k, Rng& rng);

// Held-out split preserving class proportions; `fraction` goes to the second part.
Fold stratified_split(const std::vector<std::string>& labels, double fraction, Rng& rng);

// --- model selection ----------------------------------------------------------

struct SearchSpace {
  int trees_min = 50, trees_max = 500;
  int depth_min = 8, depth_max = 32;  // plus "no limit"
  std::vector<MaxFeatures> max_features = {
      {MaxFeatures::Kind::sqrt}, {MaxFeatures::Kind::log2},
      {MaxFeatures::Kind::fraction, 0.1}, {MaxFeatures::Kind::fraction, 0.2},
      {MaxFeatures::Kind::fraction, 0.3}, {MaxFeatures::Kind::fraction, 0.4},
      {MaxFeatures::Kind::fraction, 0.5}, {MaxFeatures::Kind::fraction, 0.6},
      {MaxFeatures::Kind::fraction, 0.7}, {MaxFeatures::Kind::fraction, 0.8},
      {MaxFeatures::Kind::fraction, 0.9}, {MaxFeatures::Kind::all}};
  int split_min = 2, split_max = 10;
  int leaf_min = 1, leaf_max = 5;

  Hyperparams draw(Rng& rng) const;
};

struct LeaderboardRow {
  std::size_t index = 0;
  Hyperparams params;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0;
};

struct SearchResult {
  Hyperparams best;
  std::size_t best_index = 0;
  std::vector<LeaderboardRow> leaderboard;
};

SearchResult random_search(const std::vector<Sample>& samples, const SearchSpace& space,
                           std::size_t n_configs, std::size_t inner_k, std::uint64_t seed);
void write_leaderboard(std::ostream& out, const std::vector<LeaderboardRow>& rows);

struct MetricsReport {
  std::vector<double> balanced_accuracy, roc_auc, micro_f1;  // per fold
  double mean_balanced_accuracy = 0, mean_roc_auc = 0, mean_micro_f1 = 0;
  Confusion confusion;  // pooled over folds
};

MetricsReport evaluate_final(const std::vector<Sample>& samples, const Hyperparams& params,
                             std::size_t outer_k, std::uint64_t seed);

struct FeatureImportance {
  std::string feature;
  double importance = 0;
};

// Column importances summed to slots, then to features; descending, ties in
// feature-table order.
std::vector<FeatureImportance> feature_importance_report(const RandomForest& model);

struct ThresholdChoice {
  double threshold = 0;
  double micro_f1 = 0;
};

// Sweeps 0 and every distinct max probability; best micro F1, lowest
// threshold on ties. Throws UsageError on an empty validation set.
ThresholdChoice select_unknown_threshold(const RandomForest& model,
                                         const std::vector<Sample>& validation);

std::string hyperparams_to_json(const Hyperparams& p);

}  // namespace devprint
