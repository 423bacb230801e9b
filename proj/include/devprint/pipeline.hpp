// Stage compositions shared by the C API and the end-to-end run: banner
// labeling with the combined rule set, model training with search, held-out
// threshold selection, and the full synthetic pipeline.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "devprint/banner.hpp"
#include "devprint/classifier.hpp"
#include "devprint/scan.hpp"
#include "devprint/world.hpp"

namespace devprint {

// --- training -----------------------------------------------------------------

struct TrainParams {
  std::size_t cap = 17000;
  std::size_t configs = 50;  // 0 skips the search and uses `fixed`
  std::size_t inner_k = 3;
  std::size_t outer_k = 5;   // 0 skips the final cross-validation
  double validation = 0.2;   // held out for the unknown threshold; 0 disables it
  SearchSpace space;
  Hyperparams fixed;
  std::uint64_t seed = 1;

  void validate() const;  // throws UsageError
};

struct TrainOutcome {
  RandomForest model;  // fit on the non-validation part, threshold set
  std::optional<SearchResult> search;
  std::optional<MetricsReport> metrics;
  std::optional<ThresholdChoice> threshold;
  std::map<std::string, std::size_t> class_counts;  // after balancing
  std::size_t balanced_from = 0;
};

// Balances, searches, cross-validates, then fits the model and picks its
// unknown threshold on a stratified held-out split.
TrainOutcome train_pipeline(const std::vector<Sample>& samples, const TrainParams& params);

// --- end to end ---------------------------------------------------------------

struct E2eParams {
  WorldParams world;
  std::uint64_t seed = 7;  // world, scan, balancing, search and folds derive from it
  std::size_t k = 11;
  TrainParams train;       // its seed is replaced by one derived from `seed`
  ScanConfig scan;         // likewise rng_seed
  std::string final_set = "nmap+topicmp";
  std::vector<std::string> compare_sets = {"nmap", "icmp"};
  std::string out_dir;     // artifacts are written here when non-empty
};

struct FeatureSetScore {
  std::string name;
  std::size_t slots = 0;
  std::size_t columns = 0;
  MetricsReport metrics;
};

struct E2eResult {
  std::string summary_json;
  std::vector<FeatureSetScore> sets;  // final set first
  std::size_t devices = 0;            // after dealiasing and the vendor filter
  std::size_t classes = 0;
};

E2eResult run_e2e(const E2eParams& params);

// Rule set used by the synthetic pipeline: the vendor-name table followed by
// the reviewed simulator rules.
std::vector<FingerprintRule> default_rule_set();

}  // namespace devprint
