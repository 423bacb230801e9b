// Categorical feature extraction. Every (feature, probe) pair that applies to
// a probe set becomes a slot named "feature@PROBE"; the slot list for a probe
// set is fixed, so vectors from one probe set always have the same length.

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "devprint/probes.hpp"
#include "devprint/scan.hpp"

namespace devprint {

inline constexpr int kSchemaVersion = 1;

inline constexpr std::string_view kAbsent = "ABSENT";  // probe unanswered
inline constexpr std::string_view kNotApplicable = "NA";  // field missing in the reply

struct FeatureInfo {
  std::string_view name;
  std::string_view description;
  std::string_view alphabet;  // human-readable value domain
};

// The 22 features, in the order slots are laid out within a probe.
const std::vector<FeatureInfo>& feature_table();

struct Slot {
  std::string feature;
  ProbeId probe;
  std::string name() const { return feature + "@" + probe.to_string(); }
};

std::vector<Slot> schema_slots(const ProbeSet& probeset);

// "ip_df@TCP1" -> "ip_df"
std::string_view slot_feature(std::string_view slot_name);

struct FeatureVector {
  std::vector<std::pair<std::string, std::string>> values;  // slot name -> value

  const std::string* get(std::string_view slot) const;
  bool operator==(const FeatureVector&) const = default;
};

std::optional<int> initial_ttl(int observed_ttl, int sent_ttl, std::optional<int> quoted_ttl);
// Smallest of {32, 64, 128, 256} not below `observed_ttl`.
int initial_ttl_guess(int observed_ttl);

// Sent packets are rebuilt from (target, scan_port, ids). Throws SchemaError
// when the record lacks a probe of the set.
FeatureVector extract_features(const FingerprintRecord& record, const ProbeSet& probeset,
                               const StaticIds& ids = {});

// schema.json for a probe set.
std::string schema_json(const ProbeSet& probeset);

struct LabeledVector {
  Ipv4Address target;
  FeatureVector vector;
};

// features.jsonl: {"target": ..., "vector": {slot: value, ...}}
void write_feature_vectors(std::ostream& out, const std::vector<LabeledVector>& rows);
std::vector<LabeledVector> read_feature_vectors(std::istream& in,
                                                const std::string& origin = "<stream>");
void save_feature_vectors(const std::string& path, const std::vector<LabeledVector>& rows);
std::vector<LabeledVector> load_feature_vectors(const std::string& path);

}  // namespace devprint
