#include "devprint/scan.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "devprint/rng.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

std::uint16_t read16(const Bytes& b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint8_t reply_type_for(std::uint8_t request) {
  switch (request) {
    case icmptype::echo_request: return icmptype::echo_reply;
    case icmptype::timestamp_request: return icmptype::timestamp_reply;
    case icmptype::info_request: return icmptype::info_reply;
    case icmptype::mask_request: return icmptype::mask_reply;
    case 42: return 43;  // extended echo
    default: return request;
  }
}

// Does an ICMP error's quoted datagram identify `probe`? The quote is compared
// as raw bytes since a quoted TCP header is often cut short.
bool quote_matches(const ProbeSpec& probe, const Bytes& quoted) {
  if (quoted.size() < 20 || (quoted[0] >> 4) != 4) return false;
  const std::size_t ihl = std::size_t{quoted[0] & 0x0Fu} * 4;
  const Bytes& sent = probe.packet.bytes;
  const std::uint32_t qdst = (std::uint32_t{quoted[16]} << 24) | (std::uint32_t{quoted[17]} << 16) |
                             (std::uint32_t{quoted[18]} << 8) | quoted[19];
  if (qdst != probe.target.value() || quoted[9] != sent[9]) return false;

  const std::size_t t = ihl;
  if (probe.id.is_icmp()) {
    // type, code, identifier, sequence
    if (quoted.size() >= t + 8) {
      return quoted[t] == sent[20] && quoted[t + 1] == sent[21] &&
             std::equal(sent.begin() + 24, sent.begin() + 28, quoted.begin() + t + 4);
    }
  } else if (quoted.size() >= t + 4) {
    return std::equal(sent.begin() + 20, sent.begin() + 24, quoted.begin() + t);
  }
  // Transport header missing from the quote: fall back to the IP ID.
  return read16(quoted, 4) == read16(sent, 4);
}

struct ProbeState {
  ProbeSpec spec;
  int attempts = 0;
  std::int64_t sent_at = 0;
  std::int64_t deadline = 0;
  bool done = false;
  std::optional<ProbeResponse> response;
};

struct TargetState {
  std::size_t index = 0;  // position in the target list
  std::int64_t started = 0;
  std::vector<ProbeState> probes;
  std::size_t outstanding = 0;
};

}  // namespace

void ScanConfig::validate() const {
  if (retries < 1) throw UsageError("retries must be at least 1");
  if (timeout_ms < 1) throw UsageError("timeout must be positive");
  if (max_in_flight < 1) throw UsageError("max in flight must be at least 1");
  if (port_lo <= 1024) throw UsageError("port range must start above 1024");
  if (port_lo > port_hi) throw UsageError("port range is empty");
}

const std::optional<ProbeResponse>* FingerprintRecord::find(const ProbeId& id) const {
  for (const auto& [pid, resp] : responses) {
    if (pid == id) return &resp;
  }
  return nullptr;
}

std::size_t FingerprintRecord::response_count() const {
  return static_cast<std::size_t>(std::count_if(
      responses.begin(), responses.end(), [](const auto& r) { return r.second.has_value(); }));
}

std::uint16_t choose_high_port(std::uint64_t seed, std::uint16_t lo, std::uint16_t hi) {
  if (lo > hi) throw UsageError("port range is empty");
  Rng rng(derive_seed({seed, 0x706F7274}));
  return static_cast<std::uint16_t>(rng.between(lo, hi));
}

bool response_matches(const ProbeSpec& probe, const Packet& reply, bool weak) {
  const Packet& sent = probe.packet.parsed;
  if (const auto* tcp = reply.tcp()) {
    const auto* st = sent.tcp();
    return st && reply.ip.src == probe.target && tcp->src_port == st->dst_port &&
           tcp->dst_port == st->src_port;
  }
  const auto* icmp = reply.icmp();
  if (!icmp) return false;
  if (const auto* err = std::get_if<IcmpError>(&icmp->body)) {
    // Errors are tied to probes through the datagram they quote.
    return quote_matches(probe, err->quoted);
  }
  const auto* si = sent.icmp();
  if (!si || reply.ip.src != probe.target) return false;
  if (icmp_body_kind(si->type) == IcmpBodyKind::error) return false;
  const bool type_ok = icmp->type == reply_type_for(si->type) || icmp->type == si->type;
  if (!type_ok) return false;
  if (icmp->identifier == si->identifier && icmp->sequence == si->sequence) return true;
  if (!weak) return false;
  return (icmp->identifier == 0 && icmp->sequence == si->sequence) ||
         (icmp->sequence == 0 && icmp->identifier == si->identifier);
}

std::vector<FingerprintRecord> run_scan(const std::vector<Ipv4Address>& targets,
                                        const ProbeSet& probeset, Transport& transport,
                                        const ScanConfig& config) {
  config.validate();
  if (targets.empty()) throw UsageError("no targets to scan");
  if (probeset.size() == 0) throw UsageError("probe set is empty");

  const std::uint16_t port = choose_high_port(config.rng_seed, config.port_lo, config.port_hi);
  std::vector<std::optional<FingerprintRecord>> results(targets.size());
  std::vector<FingerprintRecord> finished;  // completion order, for partial results

  std::size_t next_target = 0;
  std::deque<TargetState> active;
  std::map<std::uint32_t, std::vector<TargetState*>> by_address;

  auto rebuild_index = [&] {
    by_address.clear();
    for (auto& t : active) by_address[targets[t.index].value()].push_back(&t);
  };

  auto send = [&](ProbeState& p, std::int64_t now) {
    transport.send(p.spec);
    ++p.attempts;
    p.sent_at = now;
    p.deadline = now + config.timeout_ms;
  };

  auto finish = [&](TargetState& t) {
    FingerprintRecord rec;
    rec.target = targets[t.index];
    rec.scan_port = port;
    rec.timestamp_ms = t.started;
    for (auto& p : t.probes) rec.responses.emplace_back(p.spec.id, std::move(p.response));
    finished.push_back(rec);
    results[t.index] = std::move(rec);
  };

  auto fail = [&](const std::exception& e) -> ScanError {
    return ScanError(std::string("transport failure: ") + e.what(), finished);
  };

  try {
    while (next_target < targets.size() || !active.empty()) {
      bool added = false;
      while (next_target < targets.size() &&
             active.size() < static_cast<std::size_t>(config.max_in_flight)) {
        TargetState t;
        t.index = next_target++;
        const std::int64_t now = transport.now_ms();
        t.started = now;
        const std::uint32_t originate = ms_since_midnight_utc(now);
        for (auto& spec : probeset.materialize(targets[t.index], port, config.ids, originate)) {
          t.probes.emplace_back().spec = std::move(spec);
        }
        t.outstanding = t.probes.size();
        active.push_back(std::move(t));
        for (auto& p : active.back().probes) send(p, transport.now_ms());
        added = true;
      }
      if (added) rebuild_index();

      std::int64_t deadline = std::numeric_limits<std::int64_t>::max();
      for (const auto& t : active) {
        for (const auto& p : t.probes) {
          if (!p.done) deadline = std::min(deadline, p.deadline);
        }
      }

      for (Received& r : transport.poll(deadline)) {
        const auto it = by_address.find(r.source.value());
        std::vector<TargetState*> candidates;
        if (it != by_address.end()) candidates = it->second;
        // ICMP errors may come from a router in front of the target.
        if (const auto* icmp = r.packet.parsed.icmp();
            icmp && std::holds_alternative<IcmpError>(icmp->body)) {
          for (auto& t : active) {
            if (std::find(candidates.begin(), candidates.end(), &t) == candidates.end()) {
              candidates.push_back(&t);
            }
          }
        }
        ProbeState* hit = nullptr;
        for (bool weak : {false, true}) {
          for (TargetState* t : candidates) {
            for (auto& p : t->probes) {
              if (!p.done && response_matches(p.spec, r.packet.parsed, weak)) {
                hit = &p;
                break;
              }
            }
            if (hit) {
              hit->done = true;
              const int ttl = r.packet.parsed.ip.ttl;
              hit->response = ProbeResponse{std::move(r.packet), ttl,
                                            static_cast<double>(r.at_ms - hit->sent_at)};
              --t->outstanding;
              break;
            }
          }
          if (hit) break;
        }
      }

      const std::int64_t now = transport.now_ms();
      for (auto& t : active) {
        for (auto& p : t.probes) {
          if (p.done || now < p.deadline) continue;
          if (p.attempts < config.retries) {
            send(p, now);
          } else {
            p.done = true;
            --t.outstanding;
          }
        }
      }

      bool removed = false;
      for (auto it = active.begin(); it != active.end();) {
        if (it->outstanding == 0) {
          finish(*it);
          it = active.erase(it);
          removed = true;
        } else {
          ++it;
        }
      }
      if (removed) rebuild_index();
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e);
  }

  std::vector<FingerprintRecord> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

DropResult drop_unresponsive(std::vector<FingerprintRecord> records) {
  DropResult result;
  for (auto& r : records) {
    if (r.response_count() == 0) {
      ++result.removed;
    } else {
      result.kept.push_back(std::move(r));
    }
  }
  return result;
}

std::vector<std::size_t> response_histogram(const std::vector<FingerprintRecord>& records,
                                            std::size_t probe_count) {
  std::vector<std::size_t> hist(probe_count + 1, 0);
  for (const auto& r : records) {
    const std::size_t n = r.response_count();
    if (n >= hist.size()) hist.resize(n + 1, 0);
    ++hist[n];
  }
  return hist;
}

// --- persistence ------------------------------------------------------------

std::string format_utc_ms(std::int64_t unix_ms) {
  std::int64_t secs = unix_ms / 1000;
  std::int64_t ms = unix_ms % 1000;
  if (ms < 0) {
    ms += 1000;
    --secs;
  }
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::optional<std::int64_t> parse_utc_ms(std::string_view text) {
  std::tm tm{};
  int ms = 0;
  char z = 0;
  const std::string s(text);
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3d%c", &tm.tm_year, &tm.tm_mon,
                            &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms, &z);
  if (n != 8 || z != 'Z' || s.size() != 24) return std::nullopt;
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return static_cast<std::int64_t>(secs) * 1000 + ms;
}

namespace {

ojson record_to_json(const FingerprintRecord& r) {
  ojson j;
  j["target"] = r.target.to_string();
  j["scan_port"] = r.scan_port;
  j["timestamp"] = format_utc_ms(r.timestamp_ms);
  ojson responses = ojson::object();
  for (const auto& [id, resp] : r.responses) {
    if (!resp) {
      responses[id.to_string()] = nullptr;
      continue;
    }
    ojson jr;
    jr["packet"] = to_hex(resp->packet.bytes);
    jr["observed_ttl"] = resp->observed_ttl;
    jr["rtt_ms"] = resp->rtt_ms;
    responses[id.to_string()] = std::move(jr);
  }
  j["responses"] = std::move(responses);
  return j;
}

FingerprintRecord record_from_json(const ojson& j) {
  FingerprintRecord r;
  r.target = Ipv4Address::parse(j.at("target").get<std::string>());
  r.scan_port = j.at("scan_port").get<std::uint16_t>();
  const auto ts = parse_utc_ms(j.at("timestamp").get<std::string>());
  if (!ts) throw DataError("bad timestamp");
  r.timestamp_ms = *ts;
  for (const auto& [key, value] : j.at("responses").items()) {
    const ProbeId id = ProbeId::parse(key);
    if (value.is_null()) {
      r.responses.emplace_back(id, std::nullopt);
      continue;
    }
    ProbeResponse resp;
    resp.packet = decode_packet(from_hex(value.at("packet").get<std::string>()));
    resp.observed_ttl = value.at("observed_ttl").get<int>();
    resp.rtt_ms = value.at("rtt_ms").get<double>();
    r.responses.emplace_back(id, std::move(resp));
  }
  return r;
}

}  // namespace

void write_fingerprints(std::ostream& out, const std::vector<FingerprintRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<FingerprintRecord> read_fingerprints(std::istream& in, const std::string& origin) {
  std::vector<FingerprintRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(ojson::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  return out;
}

void save_fingerprints(const std::string& path, const std::vector<FingerprintRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_fingerprints(out, records);
}

std::vector<FingerprintRecord> load_fingerprints(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_fingerprints(in, path);
}

}  // namespace devprint
