// Scan engine: sends a ProbeSet to many targets over a Transport, retries
// unanswered probes, matches replies to probes and collects FingerprintRecords.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "devprint/error.hpp"
#include "devprint/packet.hpp"
#include "devprint/probes.hpp"

namespace devprint {

struct ScanConfig {
  int retries = 3;          // attempts per probe, first send included
  int timeout_ms = 1000;    // per attempt
  int max_in_flight = 256;  // targets probed at once
  std::uint16_t port_lo = 49152;
  std::uint16_t port_hi = 65535;
  std::uint64_t rng_seed = 1;
  StaticIds ids;

  // Throws UsageError.
  void validate() const;
};

struct ProbeResponse {
  RawPacket packet;
  int observed_ttl = 0;
  double rtt_ms = 0;

  bool operator==(const ProbeResponse&) const = default;
};

struct FingerprintRecord {
  Ipv4Address target;
  std::uint16_t scan_port = 0;
  // Probe-set order; nullopt = no reply after every attempt.
  std::vector<std::pair<ProbeId, std::optional<ProbeResponse>>> responses;
  std::int64_t timestamp_ms = 0;  // Unix epoch, UTC

  const std::optional<ProbeResponse>* find(const ProbeId& id) const;
  std::size_t response_count() const;

  bool operator==(const FingerprintRecord&) const = default;
};

struct Received {
  Ipv4Address source;
  RawPacket packet;
  std::int64_t at_ms = 0;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const ProbeSpec& probe) = 0;
  // Waits until at least one packet arrives or the clock reaches `deadline_ms`,
  // and returns everything that arrived.
  virtual std::vector<Received> poll(std::int64_t deadline_ms) = 0;
  // Milliseconds since the Unix epoch on the transport's clock.
  virtual std::int64_t now_ms() = 0;
};

// A transport failure mid-scan; carries the records finished before it.
class ScanError : public Error {
 public:
  ScanError(const std::string& what, std::vector<FingerprintRecord> partial)
      : Error(ErrorKind::data, what), partial_(std::move(partial)) {}

  const std::vector<FingerprintRecord>& partial() const noexcept { return partial_; }

 private:
  std::vector<FingerprintRecord> partial_;
};

// One draw per scan; every target is probed on this port.
std::uint16_t choose_high_port(std::uint64_t seed, std::uint16_t lo, std::uint16_t hi);

// True when `reply` answers `probe` under the matching rules of the engine.
// `weak` additionally accepts ICMP replies where one of identifier and
// sequence was zeroed and the other still matches.
bool response_matches(const ProbeSpec& probe, const Packet& reply, bool weak = false);

// Records come back in target order. Throws UsageError for an empty target
// list or bad config, ScanError when the transport throws.
std::vector<FingerprintRecord> run_scan(const std::vector<Ipv4Address>& targets,
                                        const ProbeSet& probeset, Transport& transport,
                                        const ScanConfig& config);

struct DropResult {
  std::vector<FingerprintRecord> kept;
  std::size_t removed = 0;
};

DropResult drop_unresponsive(std::vector<FingerprintRecord> records);

// histogram[k] = records with exactly k non-null responses, k = 0..probes.
std::vector<std::size_t> response_histogram(const std::vector<FingerprintRecord>& records,
                                            std::size_t probe_count);

// JSON lines, one record per line.
void write_fingerprints(std::ostream& out, const std::vector<FingerprintRecord>& records);
std::vector<FingerprintRecord> read_fingerprints(std::istream& in,
                                                 const std::string& origin = "<stream>");
void save_fingerprints(const std::string& path, const std::vector<FingerprintRecord>& records);
std::vector<FingerprintRecord> load_fingerprints(const std::string& path);

// "2020-05-27T00:00:00.000Z" and back.
std::string format_utc_ms(std::int64_t unix_ms);
std::optional<std::int64_t> parse_utc_ms(std::string_view text);

}  // namespace devprint
