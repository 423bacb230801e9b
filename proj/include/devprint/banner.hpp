// Banner-based labeling: vendor-name matching, edit-distance clustering of
// banner samples, common-substring mining, and fingerprint rules.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "devprint/packet.hpp"
#include "devprint/rng.hpp"

namespace devprint {

enum class BannerProtocol { ssh, telnet, snmp };

std::string_view to_string(BannerProtocol p);
// "ssh" / "SSH" ... ; throws DataError.
BannerProtocol parse_protocol(std::string_view text);

struct BannerRecord {
  Ipv4Address ip;
  BannerProtocol protocol = BannerProtocol::ssh;
  std::string text;  // raw bytes, control characters kept
  bool operator==(const BannerRecord&) const = default;
};

// banners.jsonl: {"ip", "protocol", "text": base64}
void write_banners(std::ostream& out, const std::vector<BannerRecord>& banners);
// Throws ParseError; also rejects a repeated (ip, protocol).
std::vector<BannerRecord> read_banners(std::istream& in, const std::string& origin = "<stream>");
void save_banners(const std::string& path, const std::vector<BannerRecord>& banners);
std::vector<BannerRecord> load_banners(const std::string& path);

std::string base64_encode(std::string_view bytes);
// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);

// --- vendor name matching ----------------------------------------------------

struct VendorPattern {
  std::string vendor;
  std::string pattern;  // case-insensitive regex
};

// The 40-vendor name table.
const std::vector<VendorPattern>& vendor_name_table();
std::vector<VendorPattern> parse_vendor_table(const std::string& text,
                                              const std::string& origin = "vendor-regex.tsv");
std::string format_vendor_table(const std::vector<VendorPattern>& table);

class VendorMatcher {
 public:
  explicit VendorMatcher(const std::vector<VendorPattern>& table = vendor_name_table());
  std::set<std::string> match(std::string_view text) const;

 private:
  std::vector<std::pair<std::string, std::regex>> patterns_;
};

std::set<std::string> regex_match_vendor(const BannerRecord& banner, const VendorMatcher& matcher);

struct NameMatchResult {
  std::map<Ipv4Address, std::string> labels;
  std::map<Ipv4Address, std::set<std::string>> conflicts;  // IPs naming >1 vendor
};

// All banners of an IP are pooled before deciding.
NameMatchResult label_by_vendor_name(const std::vector<BannerRecord>& corpus,
                                     const VendorMatcher& matcher);

// --- edit distance -----------------------------------------------------------

int levenshtein(std::string_view a, std::string_view b);

// Minimum Levenshtein distance between the shorter string and every
// same-length substring of the longer one.
int substring_min_levenshtein(std::string_view a, std::string_view b);

struct DistanceMatrix {
  std::vector<std::size_t> sample;  // corpus indices of the rows
  std::size_t size = 0;
  std::vector<int> d;  // row-major size x size

  int at(std::size_t i, std::size_t j) const { return d[i * size + j]; }
};

// Throws UsageError above `max_size` texts.
DistanceMatrix pairwise_distance_matrix(const std::vector<std::string>& texts,
                                        std::size_t max_size = 1000);

// --- clustering ---------------------------------------------------------------

struct MinedSubstring {
  std::string text;
  std::size_t frequency = 0;
  bool operator==(const MinedSubstring&) const = default;
};

struct Cluster {
  std::vector<std::size_t> members;  // matrix row indices, ascending
  bool is_noise = false;
  std::vector<MinedSubstring> mined;
};

struct ClusterParams {
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 5;
  // Lets the whole sample form one cluster when nothing splits off; members
  // are then the points that persist to the densest level.
  bool allow_single_cluster = false;
};

// HDBSCAN* over a precomputed matrix. Non-noise clusters come first, ordered
// by their smallest member; unclustered points form one trailing noise cluster.
std::vector<Cluster> cluster_banners(const DistanceMatrix& matrix, const ClusterParams& params = {});

// Common character runs of at least `min_len` between every pair of texts,
// counted over pairs; sorted by frequency, then length, then text.
std::vector<MinedSubstring> mine_frequent_substrings(const std::vector<std::string>& texts,
                                                     std::size_t min_len = 8);

// --- fingerprint rules --------------------------------------------------------

struct FingerprintRule {
  std::string id;
  std::string pattern;  // case-insensitive ECMAScript regex
  std::string vendor;   // empty for blacklist rules
  int priority = 0;     // higher supersedes
  bool blacklist = false;
  std::string provenance;
  bool operator==(const FingerprintRule&) const = default;
};

// Throws ConfigError for duplicate ids, bad regexes, vendorless non-blacklist rules.
std::vector<FingerprintRule> rules_from_json(const std::string& text,
                                             const std::string& origin = "rules.json");
std::string rules_to_json(const std::vector<FingerprintRule>& rules);
std::vector<FingerprintRule> load_rules(const std::string& path);
void save_rules(const std::string& path, const std::vector<FingerprintRule>& rules);

class RuleSet {
 public:
  explicit RuleSet(std::vector<FingerprintRule> rules);
  const std::vector<FingerprintRule>& rules() const { return rules_; }
  // Indices of rules whose pattern occurs in `text`.
  std::vector<std::size_t> fire(std::string_view text) const;

 private:
  std::vector<FingerprintRule> rules_;
  std::vector<std::regex> compiled_;
};

struct LabelAssignment {
  std::string vendor;  // empty when conflicted
  std::set<std::string> rule_ids;
  bool conflicted = false;
  bool operator==(const LabelAssignment&) const = default;
};

struct LabelResult {
  std::map<Ipv4Address, LabelAssignment> assignments;  // IPs some vendor rule fired on
  std::set<Ipv4Address> blacklisted;

  std::map<Ipv4Address, std::string> labels() const;  // unconflicted only
};

LabelResult apply_rules(const std::vector<BannerRecord>& corpus, const RuleSet& rules);

struct RuleAudit {
  std::string rule_id;
  std::string vendor;
  std::size_t fires = 0;  // IPs
  std::map<std::string, std::size_t> co_fires;  // other vendor -> shared IPs
  bool flagged = false;               // conflicts with more than one vendor
  bool precedence_candidate = false;  // conflicts with exactly one
};

std::vector<RuleAudit> audit_rules(const std::vector<BannerRecord>& corpus, const RuleSet& rules);

// --- iterative discovery ------------------------------------------------------

struct Candidate {
  int round = 0;
  BannerProtocol protocol = BannerProtocol::ssh;
  std::string digest;  // stable id of the member set
  std::size_t size = 0;
  std::vector<std::string> examples;
  std::vector<MinedSubstring> top;
};

void write_candidates(std::ostream& out, const std::vector<Candidate>& candidates);

struct RoundLog {
  int round = 0;
  BannerProtocol protocol = BannerProtocol::ssh;
  std::size_t unlabeled_before = 0;
  std::size_t sampled = 0;
  std::size_t clusters = 0;
  std::size_t candidates = 0;
  std::size_t unlabeled_after = 0;
};

struct IterateParams {
  std::size_t sample_size = 1000;  // M
  int rounds = 1;
  ClusterParams cluster;
  std::size_t min_len = 8;
  std::size_t top_k = 5;
  std::uint64_t seed = 1;
};

// Called with each protocol's candidates in a round; returns rules to adopt.
using Reviewer = std::function<std::vector<FingerprintRule>(const std::vector<Candidate>&)>;

struct IterateResult {
  std::vector<RoundLog> log;
  std::vector<Candidate> candidates;
  std::vector<FingerprintRule> rules;  // input rules plus adopted ones
  LabelResult labels;
};

IterateResult iterate_labeling(const std::vector<BannerRecord>& corpus,
                               std::vector<FingerprintRule> rules, const IterateParams& params,
                               const Reviewer& reviewer = {});

// ECMAScript-escapes a literal so it can be used as a rule pattern.
std::string regex_escape(std::string_view literal);

}  // namespace devprint
