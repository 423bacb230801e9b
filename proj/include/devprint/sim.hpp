// Deterministic vendor-stack simulator. Profiles are synthetic stand-ins, not
// measurements of real firmware; each knob drives one or more response
// features so the whole pipeline can be exercised offline.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "devprint/packet.hpp"
#include "devprint/probes.hpp"
#include "devprint/rng.hpp"
#include "devprint/scan.hpp"

namespace devprint {

enum class EchoCode { echo_back, zero };
enum class FieldEcho { echo, zero };
enum class ReturnedIpId { same, zero, other };
// Response value relative to the counterpart field of the probe.
enum class NumberCmp { zero, same, plus_one, other };

struct StackQuirks {
  bool nonzero_reserved = false;
  bool urg_ptr_when_no_urg = false;
  bool operator==(const StackQuirks&) const = default;
};

struct StackProfile {
  std::string vendor;
  int initial_ttl = 64;
  // Keyed by fixed probe id; missing ids respond. Fuzz probes use fuzz_replies.
  std::map<std::string, bool> responds;
  std::set<int> fuzz_replies;  // request types answered during the fuzz sweep
  bool df_bit = false;

  EchoCode echo_code_behavior = EchoCode::echo_back;
  FieldEcho icmp_id_behavior = FieldEcho::echo;
  FieldEcho icmp_seq_behavior = FieldEcho::echo;
  int echo_reply_type = 0;  // 8 reflects the request type back
  bool timestamp_reply = true;  // false: administratively-prohibited error instead
  int info_reply_code = 0;      // code on timestamp/mask/info replies
  std::optional<std::array<std::uint8_t, 4>> addrmask_reply;

  // UDP1 port unreachable
  bool udp_checksum_integrity = true;
  bool udp_data_integrity = true;
  ReturnedIpId returned_ip_id = ReturnedIpId::same;
  bool quoted_unused_nonzero = false;
  int udp_quote_bytes = 308;  // bytes of the probe's UDP datagram quoted back

  // TCP resets
  std::string tcp_flags = "AR";  // "AR" or "R"
  int tcp_window = 0;
  std::string tcp_options_reply;  // option signature, e.g. "M1460,N,W0"
  NumberCmp seq_behavior = NumberCmp::zero;
  NumberCmp ack_behavior = NumberCmp::plus_one;
  bool rst_has_data = false;
  StackQuirks quirks;

  bool answers(const ProbeId& id) const;
  // Throws ConfigError on impossible settings.
  void validate() const;

  bool operator==(const StackProfile&) const = default;
};

// The 11-vendor synthetic pack.
const std::vector<StackProfile>& default_profiles();

std::string profiles_to_json(const std::vector<StackProfile>& profiles);
std::vector<StackProfile> profiles_from_json(const std::string& text,
                                             const std::string& origin = "profiles.json");
std::vector<StackProfile> load_profiles(const std::string& path);

struct SimHost {
  Ipv4Address address;
  std::size_t profile = 0;  // index into SimNetwork::profiles
  int hops = 1;             // 1-30
  bool operator==(const SimHost&) const = default;
};

struct SimNetwork {
  std::vector<StackProfile> profiles;
  std::vector<SimHost> hosts;
  double loss = 0;      // per attempt
  double acl_drop = 0;  // per (host, probe): filtered for every attempt
  std::uint64_t rng_seed = 1;

  const SimHost* host(Ipv4Address a) const;
  void validate() const;
};

// `per_vendor` hosts for each profile with hops uniform in 1..20. Addresses are
// 10.<profile>.<i/250>.<i%250+1>.
SimNetwork make_network(std::vector<StackProfile> profiles, std::size_t per_vendor,
                        std::uint64_t seed, double loss = 0, double acl_drop = 0);

std::string network_to_json(const SimNetwork& network);  // profiles by vendor name
SimNetwork network_from_json(const std::string& text, const std::vector<StackProfile>& profiles,
                             const std::string& origin = "network.json");

// Reply of a stack to one probe; nullopt when the profile ignores it.
std::optional<RawPacket> respond(const StackProfile& profile, int hops, const ProbeSpec& probe,
                                 Rng& rng);

inline constexpr std::int64_t kSimEpochMs = 1590537600000;  // 2020-05-27T00:00:00Z

// Discrete-event transport over a SimNetwork with a virtual clock.
class SimTransport : public Transport {
 public:
  explicit SimTransport(SimNetwork network, std::int64_t start_ms = kSimEpochMs);

  void send(const ProbeSpec& probe) override;
  std::vector<Received> poll(std::int64_t deadline_ms) override;
  std::int64_t now_ms() override;

  std::size_t sends() const;
  // Attempts seen for one (target, probe) pair.
  int attempts(Ipv4Address target, const ProbeId& id) const;

 private:
  struct Pending {
    std::int64_t at;
    std::uint64_t order;
    Received packet;
    bool operator>(const Pending& o) const {
      return at != o.at ? at > o.at : order > o.order;
    }
  };

  SimNetwork network_;
  std::map<std::uint32_t, std::size_t> index_;
  std::int64_t clock_;
  std::uint64_t order_ = 0;
  std::size_t sends_ = 0;
  std::map<std::pair<std::uint32_t, std::string>, int> attempts_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue_;
  mutable std::mutex mu_;
};

struct Dataset {
  std::vector<FingerprintRecord> records;
  std::map<Ipv4Address, std::string> labels;
};

Dataset synthesize_dataset(const SimNetwork& network, const ProbeSet& probeset,
                           const ScanConfig& config);

// labels.csv: `ip,vendor` with a header row.
void save_labels(const std::string& path, const std::map<Ipv4Address, std::string>& labels);
std::map<Ipv4Address, std::string> load_labels(const std::string& path);
std::map<Ipv4Address, std::string> parse_labels(const std::string& text,
                                                const std::string& origin = "labels.csv");

}  // namespace devprint
