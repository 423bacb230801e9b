// Probe construction: the six Nmap closed-port probes, the ICMP type/code
// fuzz sweep, and the timestamp / address-mask pair added by the final model.

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devprint/packet.hpp"

namespace devprint {

enum class ProbeKind : std::uint8_t {
  udp1,
  icmp_echo1,
  icmp_echo2,
  tcp1,
  tcp2,
  tcp3,
  icmp_timestamp,
  icmp_addrmask,
  fuzz,
};

struct ProbeId {
  ProbeKind kind = ProbeKind::udp1;
  std::uint8_t icmp_type = 0;  // fuzz only
  std::uint8_t icmp_code = 0;  // fuzz only

  static ProbeId fuzz(std::uint8_t type, std::uint8_t code) {
    return {ProbeKind::fuzz, type, code};
  }

  // "UDP1", "TCP2", "ICMP_ADDRMASK", "FUZZ_13_0", ...
  std::string to_string() const;
  static ProbeId parse(std::string_view text);

  bool is_tcp() const;
  bool is_udp() const { return kind == ProbeKind::udp1; }
  bool is_icmp() const { return !is_tcp() && !is_udp(); }

  friend auto operator<=>(const ProbeId&, const ProbeId&) = default;
};

// Fixed header values so replies can be matched back to probes. Nmap
// randomizes these; the scanner pins them.
struct StaticIds {
  std::uint16_t ip_id = 0x4A17;
  std::uint16_t icmp_id = 0xBEEF;
  std::uint16_t src_port = 0xA1B0;   // TCP probes use src_port+0..2, UDP uses +3
  std::uint32_t tcp_seq = 0x5EED1000;
  std::uint32_t tcp_ack = 0x0ACC5000;
  Ipv4Address source{192, 0, 2, 1};
  std::uint8_t sent_ttl = 64;
};

struct ProbeSpec {
  ProbeId id;
  Ipv4Address target;
  std::optional<std::uint16_t> dst_port;  // TCP/UDP only
  RawPacket packet;
  std::uint8_t sent_ttl = 64;
};

// What each fuzz (type, code) pair gets as a message body.
enum class FuzzBody { echo, timestamp, info, mask, error, plain };

struct IcmpCatalogEntry {
  std::uint8_t type = 0;
  std::uint8_t code = 0;
  FuzzBody body = FuzzBody::plain;

  friend auto operator<=>(const IcmpCatalogEntry&, const IcmpCatalogEntry&) = default;
};

std::string_view to_string(FuzzBody body);
FuzzBody parse_fuzz_body(std::string_view text);

// IANA-assigned ICMPv4 types and codes as of 2024.
const std::vector<IcmpCatalogEntry>& standard_icmp_catalog();

// Tab-separated `type code body-kind` rows; '#' comments. Throws ConfigError.
std::vector<IcmpCatalogEntry> parse_icmp_catalog(std::string_view tsv,
                                                 const std::string& origin = "icmp-catalog.tsv");
std::vector<IcmpCatalogEntry> load_icmp_catalog(const std::string& path);
std::string format_icmp_catalog(std::span<const IcmpCatalogEntry> catalog);

std::vector<ProbeSpec> nmap_closed_port_probes(Ipv4Address target, std::uint16_t port,
                                               const StaticIds& ids = {});

// One message per entry. `originate_ms` fills timestamp-request bodies.
std::vector<ProbeSpec> icmp_fuzz_probes(Ipv4Address target,
                                        std::span<const IcmpCatalogEntry> catalog,
                                        const StaticIds& ids = {},
                                        std::uint32_t originate_ms = 0);

// Resolves each pair against standard_icmp_catalog(); an unknown type or
// code throws ConfigError.
std::vector<ProbeSpec> icmp_fuzz_probes(
    Ipv4Address target, std::span<const std::pair<std::uint8_t, std::uint8_t>> pairs,
    const StaticIds& ids = {}, std::uint32_t originate_ms = 0);

std::vector<ProbeSpec> top_icmp_probes(Ipv4Address target, const StaticIds& ids = {},
                                       std::uint32_t originate_ms = 0);

// Milliseconds since midnight UTC for a Unix-epoch millisecond clock value.
std::uint32_t ms_since_midnight_utc(std::int64_t unix_ms);

// A named, target-independent probe list. Names combine with '+':
// "nmap", "topicmp", "icmp" (full fuzz catalog).
class ProbeSet {
 public:
  ProbeSet() = default;
  ProbeSet(std::string name, std::vector<ProbeId> ids,
           std::vector<IcmpCatalogEntry> fuzz_catalog = standard_icmp_catalog());

  static ProbeSet named(std::string_view name,
                        const std::vector<IcmpCatalogEntry>& fuzz_catalog = standard_icmp_catalog());

  const std::string& name() const { return name_; }
  const std::vector<ProbeId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(const ProbeId& id) const;
  bool needs_port() const;

  // Builds the concrete packets for one target, in ids() order.
  std::vector<ProbeSpec> materialize(Ipv4Address target, std::uint16_t port,
                                     const StaticIds& ids = {},
                                     std::uint32_t originate_ms = 0) const;

  // Subset view keeping this set's order.
  ProbeSet restricted_to(const ProbeSet& other) const;

 private:
  std::string name_;
  std::vector<ProbeId> ids_;
  std::vector<IcmpCatalogEntry> catalog_;
};

}  // namespace devprint
