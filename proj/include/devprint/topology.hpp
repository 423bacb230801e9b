// Router-level views of the data: ITDK-style alias sets, device dealiasing,
// traceroute annotation with predicted vendors, and vendor prevalence per
// (source country, destination continent).

#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "devprint/classifier.hpp"
#include "devprint/scan.hpp"

namespace devprint {

struct AliasMap {
  std::map<std::string, std::vector<Ipv4Address>> nodes;  // node id -> addresses, file order
  std::map<Ipv4Address, std::string> node_of;

  // Throws DataError when `ip` already belongs to another node.
  void add(const std::string& node, Ipv4Address ip);
};

// `node N<id>: <ip> <ip> ...`; '#' lines and blank lines are skipped.
// Throws ParseError (malformed line, or an address listed under two nodes).
AliasMap parse_itdk_nodes(const std::string& text, const std::string& origin = "nodes.txt");
AliasMap load_itdk_nodes(const std::string& path);
std::string format_itdk_nodes(const AliasMap& aliases);

struct DealiasConflict {
  std::string node;
  std::map<Ipv4Address, std::string> labels;  // the disagreeing members
};

struct DealiasResult {
  std::vector<FingerprintRecord> records;      // one per device, by representative address
  std::map<Ipv4Address, std::string> labels;   // keyed by representative
  std::map<Ipv4Address, std::string> device;   // representative -> node id ("" if unaliased)
  std::vector<DealiasConflict> conflicts;      // dropped devices
  std::size_t merged = 0;                      // records folded into another
};

// Groups records by node (unaliased addresses are their own device) and keeps
// the record with the most responses, lowest address on ties. A device's
// label is the one label its members agree on; unlabeled members do not vote.
DealiasResult dealias(const std::vector<FingerprintRecord>& records,
                      const std::map<Ipv4Address, std::string>& labels, const AliasMap& aliases);

struct VendorFilter {
  std::map<Ipv4Address, std::string> labels;
  std::vector<std::string> kept;               // by count, descending
  std::map<std::string, std::size_t> removed;  // vendor -> labels dropped
  bool short_of_k = false;                     // fewer than k classes existed
};

// Keeps the k most frequent vendors; ties go to the lexicographically smaller name.
VendorFilter filter_top_vendors(const std::map<Ipv4Address, std::string>& labels, std::size_t k = 11);

// --- traceroutes -------------------------------------------------------------

struct TracerouteRecord {
  std::string source_id;
  std::string source_country;
  Ipv4Address dst;
  std::vector<std::optional<Ipv4Address>> hops;  // nullopt: no reply at that hop

  bool operator==(const TracerouteRecord&) const = default;
};

// traces.jsonl: {"source_id", "source_country", "dst", "hops": ["a.b.c.d" | null, ...]}
void write_traces(std::ostream& out, const std::vector<TracerouteRecord>& traces);
std::vector<TracerouteRecord> read_traces(std::istream& in, const std::string& origin = "<stream>");
void save_traces(const std::string& path, const std::vector<TracerouteRecord>& traces);
std::vector<TracerouteRecord> load_traces(const std::string& path);

inline constexpr std::string_view kUnresponsive = "unresponsive";
inline constexpr std::string_view kNoContinent = "??";

class GeoTable {
 public:
  // Throws DataError for a bad prefix, a bad continent code or a repeated prefix.
  void add(Ipv4Address network, int prefix_len, const std::string& continent);
  // Longest matching prefix, "??" when nothing matches.
  std::string lookup(Ipv4Address ip) const;
  std::size_t size() const;

  // geo.csv: header `prefix,continent`, rows like `10.1.0.0/16,EU`.
  static GeoTable parse(const std::string& text, const std::string& origin = "geo.csv");
  static GeoTable load(const std::string& path);

 private:
  std::map<std::uint32_t, std::string> by_len_[33];  // masked network -> continent
};

struct AnnotatedTrace {
  TracerouteRecord trace;
  std::vector<std::string> vendors;  // per hop: class, "unknown" or "unresponsive"
};

// Hops without a fingerprint, or whose fingerprint has no responses, are
// "unresponsive"; the rest get the model's label under its threshold.
// Throws SchemaError when a fingerprint does not fit the model.
std::vector<AnnotatedTrace> annotate_traceroutes(
    const std::vector<TracerouteRecord>& traces, const RandomForest& model,
    const std::map<Ipv4Address, FingerprintRecord>& fingerprints, const ProbeSet& probeset,
    const StaticIds& ids = {});

struct PrevalenceRow {
  std::string source;     // source country
  std::string continent;  // destination continent, or "ALL"
  std::string vendor;
  double probability = 0;
  std::size_t traces = 0;  // group size
};

// Share of a group's traceroutes with at least one hop of each vendor.
// "unknown" and "unresponsive" hops are not vendors and get no rows. Rows are
// sorted by source, continent, vendor.
std::vector<PrevalenceRow> prevalence(const std::vector<AnnotatedTrace>& traces, const GeoTable& geo);
// prevalence.csv: source,continent,vendor,probability,n
void write_prevalence(std::ostream& out, const std::vector<PrevalenceRow>& rows);

}  // namespace devprint
