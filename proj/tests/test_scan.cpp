#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "devprint/error.hpp"
#include "devprint/scan.hpp"
#include "devprint/sim.hpp"
#include "doctest.h"

using namespace devprint;

namespace {

const ProbeSet kNmapTop = ProbeSet::named("nmap+topicmp");

StackProfile profile_named(const std::string& vendor) {
  for (const auto& p : default_profiles()) {
    if (p.vendor == vendor) return p;
  }
  throw std::runtime_error("no profile " + vendor);
}

SimNetwork one_host(const StackProfile& p, Ipv4Address a, int hops = 4) {
  SimNetwork net;
  net.profiles = {p};
  net.hosts = {{a, 0, hops}};
  return net;
}

// Scripted transport: replies come from `reply`, delivered `delay` ms after the
// send, on a virtual clock.
class ScriptedTransport : public Transport {
 public:
  std::function<std::optional<Received>(const ProbeSpec&, int attempt)> reply;
  std::function<void(const ProbeSpec&)> on_send;
  std::int64_t delay = 3;
  std::int64_t clock = 1'000'000;
  std::map<std::string, int> attempts;
  std::vector<Received> pending;

  void send(const ProbeSpec& p) override {
    if (on_send) on_send(p);
    const int n = ++attempts[p.target.to_string() + "/" + p.id.to_string()];
    if (!reply) return;
    if (auto r = reply(p, n)) {
      r->at_ms = clock + delay;
      pending.push_back(std::move(*r));
    }
  }
  std::vector<Received> poll(std::int64_t deadline) override {
    std::vector<Received> out;
    std::int64_t first = deadline;
    for (const auto& r : pending) first = std::min(first, r.at_ms);
    clock = std::max(clock, first);
    for (auto it = pending.begin(); it != pending.end();) {
      if (it->at_ms <= clock) {
        out.push_back(std::move(*it));
        it = pending.erase(it);
      } else {
        ++it;
      }
    }
    return out;
  }
  std::int64_t now_ms() override { return clock; }
};

}  // namespace

TEST_CASE("choose_high_port stays in range, is seeded, and handles a single port") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = choose_high_port(seed, 49152, 65535);
    CHECK(p >= 49152);
    CHECK(p <= 65535);
  }
  CHECK(choose_high_port(1, 49152, 65535) == choose_high_port(1, 49152, 65535));
  CHECK(choose_high_port(1, 50000, 50000) == 50000);
  bool differs = false;
  for (std::uint64_t seed = 2; seed < 10; ++seed) {
    differs |= choose_high_port(seed, 49152, 65535) != choose_high_port(1, 49152, 65535);
  }
  CHECK(differs);
}

TEST_CASE("scan config validation") {
  ScanConfig c;
  CHECK_NOTHROW(c.validate());
  c.retries = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.port_lo = 1024;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = {};
  c.port_lo = 60000;
  c.port_hi = 50000;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("one target answering everything yields 8 responses") {
  const Ipv4Address a(10, 0, 0, 1);
  SimTransport t(one_host(profile_named("Mikrotik"), a));
  const auto recs = run_scan({a}, kNmapTop, t, ScanConfig{});
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].responses.size() == 8);
  CHECK(recs[0].response_count() == 8);
  CHECK(t.sends() == 8);
  for (const auto& [id, r] : recs[0].responses) {
    REQUIRE(r.has_value());
    CHECK(r->observed_ttl == 60);
    CHECK(r->rtt_ms > 0);
  }
}

TEST_CASE("a probe that is never answered is sent exactly three times") {
  const Ipv4Address a(10, 0, 0, 2);
  SimTransport t(one_host(profile_named("Cisco"), a));
  const auto recs = run_scan({a}, kNmapTop, t, ScanConfig{});
  REQUIRE(recs.size() == 1);
  const auto& rec = recs[0];
  const ProbeId mask{ProbeKind::icmp_addrmask};
  REQUIRE(rec.find(mask) != nullptr);
  CHECK_FALSE(rec.find(mask)->has_value());
  CHECK(rec.response_count() == 7);
  CHECK(t.attempts(a, mask) == 3);
  for (const auto& id : kNmapTop.ids()) {
    if (id != mask) CHECK(t.attempts(a, id) == 1);
  }
}

TEST_CASE("retries follow the configured count") {
  const Ipv4Address a(10, 0, 0, 3);
  ScanConfig c;
  c.retries = 5;
  SimTransport t(one_host(profile_named("Cisco"), a));
  run_scan({a}, kNmapTop, t, c);
  CHECK(t.attempts(a, ProbeId{ProbeKind::icmp_addrmask}) == 5);
}

TEST_CASE("a reply lost on the first attempt is recovered by a retry") {
  const Ipv4Address a(10, 0, 0, 4);
  ScriptedTransport t;
  const auto profile = profile_named("Mikrotik");
  t.reply = [&](const ProbeSpec& p, int attempt) -> std::optional<Received> {
    if (p.id.kind == ProbeKind::tcp2 && attempt < 2) return std::nullopt;
    Rng rng(7);
    auto r = respond(profile, 3, p, rng);
    if (!r) return std::nullopt;
    return Received{p.target, *r, 0};
  };
  const auto recs = run_scan({a}, kNmapTop, t, ScanConfig{});
  CHECK(recs[0].response_count() == 8);
  CHECK(t.attempts["10.0.0.4/TCP2"] == 2);
  // The RTT is measured from the attempt that was answered.
  CHECK(recs[0].find(ProbeId{ProbeKind::tcp2})->value().rtt_ms == doctest::Approx(3));
}

TEST_CASE("all records of one scan share the scan port and keep target order") {
  auto net = make_network({profile_named("Juniper")}, 5, 11);
  std::vector<Ipv4Address> targets;
  for (auto it = net.hosts.rbegin(); it != net.hosts.rend(); ++it) targets.push_back(it->address);
  SimTransport t(net);
  ScanConfig c;
  c.max_in_flight = 2;
  const auto recs = run_scan(targets, kNmapTop, t, c);
  REQUIRE(recs.size() == 5);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].target == targets[i]);
    CHECK(recs[i].scan_port == recs[0].scan_port);
    CHECK(recs[i].responses.size() == 8);
  }
  CHECK(recs[0].scan_port == choose_high_port(c.rng_seed, c.port_lo, c.port_hi));
}

TEST_CASE("never more than max_in_flight targets are active") {
  ScriptedTransport t;
  std::map<std::uint32_t, int> first_seen;
  std::set<std::uint32_t> open;
  std::size_t peak = 0;
  // Nothing answers: a target stays active until its last retry times out.
  std::int64_t last_clock = -1;
  t.on_send = [&](const ProbeSpec& p) {
    if (t.clock != last_clock) {
      // Targets whose first send was more than retries*timeout ago are done.
      for (auto it = open.begin(); it != open.end();) {
        if (t.clock - first_seen[*it] >= 3000) it = open.erase(it);
        else ++it;
      }
      last_clock = t.clock;
    }
    if (!first_seen.count(p.target.value())) first_seen[p.target.value()] = static_cast<int>(t.clock);
    open.insert(p.target.value());
    peak = std::max(peak, open.size());
  };
  std::vector<Ipv4Address> targets;
  for (int i = 1; i <= 10; ++i) targets.push_back(Ipv4Address(192, 0, 2, static_cast<std::uint8_t>(i)));
  ScanConfig c;
  c.max_in_flight = 3;
  const auto recs = run_scan(targets, kNmapTop, t, c);
  CHECK(recs.size() == 10);
  CHECK(peak == 3);
  for (const auto& r : recs) CHECK(r.response_count() == 0);
}

TEST_CASE("replies with the wrong ports are ignored") {
  const Ipv4Address a(10, 0, 0, 5);
  const auto profile = profile_named("Mikrotik");
  ScriptedTransport t;
  t.reply = [&](const ProbeSpec& p, int) -> std::optional<Received> {
    if (p.id.kind != ProbeKind::tcp1) return std::nullopt;
    Rng rng(1);
    auto r = respond(profile, 2, p, rng);
    Packet bad = r->parsed;
    std::get<TcpHeader>(bad.transport).dst_port ^= 0x100;
    return Received{p.target, encode_packet(bad), 0};
  };
  const auto recs = run_scan({a}, kNmapTop, t, ScanConfig{});
  CHECK(recs[0].response_count() == 0);
  CHECK(t.attempts["10.0.0.5/TCP1"] == 3);
}

TEST_CASE("response matching") {
  const Ipv4Address a(203, 0, 113, 9);
  const auto probes = kNmapTop.materialize(a, 55555);
  auto spec = [&](ProbeKind k) -> const ProbeSpec& {
    for (const auto& p : probes) {
      if (p.id.kind == k) return p;
    }
    throw std::runtime_error("missing");
  };
  Rng rng(3);

  SUBCASE("tcp reset answers its own probe only") {
    const auto r = respond(profile_named("Juniper"), 3, spec(ProbeKind::tcp2), rng);
    CHECK(response_matches(spec(ProbeKind::tcp2), r->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::tcp1), r->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::udp1), r->parsed));
  }
  SUBCASE("port unreachable is tied to UDP1 by its quote") {
    const auto r = respond(profile_named("Cisco"), 3, spec(ProbeKind::udp1), rng);
    CHECK(response_matches(spec(ProbeKind::udp1), r->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::tcp1), r->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_echo1), r->parsed));
  }
  SUBCASE("echo replies are told apart by id and sequence") {
    const auto r1 = respond(profile_named("Cisco"), 3, spec(ProbeKind::icmp_echo1), rng);
    CHECK(response_matches(spec(ProbeKind::icmp_echo1), r1->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_echo2), r1->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_echo2), r1->parsed, true));
  }
  SUBCASE("zeroed identifiers only match weakly") {
    const auto r = respond(profile_named("Juniper"), 3, spec(ProbeKind::icmp_timestamp), rng);
    REQUIRE(r->parsed.icmp()->identifier == 0);
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_timestamp), r->parsed));
    CHECK(response_matches(spec(ProbeKind::icmp_timestamp), r->parsed, true));
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_addrmask), r->parsed, true));
  }
  SUBCASE("a prohibited timestamp is tied back through the quote") {
    const auto r = respond(profile_named("H3C"), 3, spec(ProbeKind::icmp_timestamp), rng);
    REQUIRE(r->parsed.icmp()->type == 3);
    CHECK(response_matches(spec(ProbeKind::icmp_timestamp), r->parsed));
    CHECK_FALSE(response_matches(spec(ProbeKind::icmp_echo1), r->parsed));
  }
  SUBCASE("replies for another target never match") {
    const auto other = kNmapTop.materialize(Ipv4Address(203, 0, 113, 10), 55555);
    const auto r = respond(profile_named("Cisco"), 3, other[0], rng);
    CHECK_FALSE(response_matches(spec(ProbeKind::udp1), r->parsed));
  }
}

TEST_CASE("a record never holds responses to probes it was not sent") {
  auto net = make_network({profile_named("Huawei"), profile_named("Mikrotik")}, 3, 5);
  SimTransport t(net);
  std::vector<Ipv4Address> targets;
  for (const auto& h : net.hosts) targets.push_back(h.address);
  const auto set = ProbeSet::named("nmap");
  for (const auto& r : run_scan(targets, set, t, ScanConfig{})) {
    REQUIRE(r.responses.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) CHECK(r.responses[i].first == set.ids()[i]);
  }
}

TEST_CASE("transport failure surfaces as a scan error with partial results") {
  const auto profile = profile_named("Mikrotik");
  ScriptedTransport t;
  int sends = 0;
  t.reply = [&](const ProbeSpec& p, int) -> std::optional<Received> {
    if (++sends > 16) throw std::runtime_error("socket closed");
    Rng rng(1);
    return Received{p.target, *respond(profile, 2, p, rng), 0};
  };
  ScanConfig c;
  c.max_in_flight = 1;
  const std::vector<Ipv4Address> targets = {Ipv4Address(10, 1, 0, 1), Ipv4Address(10, 1, 0, 2),
                                            Ipv4Address(10, 1, 0, 3)};
  try {
    run_scan(targets, kNmapTop, t, c);
    FAIL("expected ScanError");
  } catch (const ScanError& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("socket closed") != std::string::npos);
    REQUIRE(e.partial().size() == 2);
    CHECK(e.partial()[0].target == targets[0]);
    CHECK(e.partial()[1].response_count() == 8);
  }
}

TEST_CASE("run_scan rejects an empty target list") {
  ScriptedTransport t;
  CHECK_THROWS_AS(run_scan({}, kNmapTop, t, ScanConfig{}), UsageError);
}

TEST_CASE("sim scans are stable across runs") {
  auto net = make_network(default_profiles(), 4, 99, 0.2, 0.05);
  std::vector<Ipv4Address> targets;
  for (const auto& h : net.hosts) targets.push_back(h.address);
  auto once = [&] {
    SimTransport t(net);
    std::ostringstream out;
    write_fingerprints(out, run_scan(targets, kNmapTop, t, ScanConfig{}));
    return out.str();
  };
  CHECK(once() == once());
}

TEST_CASE("drop_unresponsive") {
  FingerprintRecord silent{Ipv4Address(10, 0, 0, 1), 50000, {}, 0};
  FingerprintRecord one{Ipv4Address(10, 0, 0, 2), 50000, {}, 0};
  for (const auto& id : kNmapTop.ids()) {
    silent.responses.emplace_back(id, std::nullopt);
    one.responses.emplace_back(id, std::nullopt);
  }
  one.responses[3].second = ProbeResponse{encode_packet(Packet{}), 64, 1};

  auto r = drop_unresponsive({silent, one});
  CHECK(r.removed == 1);
  REQUIRE(r.kept.size() == 1);
  CHECK(r.kept[0].target == one.target);

  auto empty = drop_unresponsive({});
  CHECK(empty.kept.empty());
  CHECK(empty.removed == 0);

  const auto h = response_histogram({silent, one, one}, 8);
  REQUIRE(h.size() == 9);
  CHECK(h[0] == 1);
  CHECK(h[1] == 2);
}

TEST_CASE("fingerprints round trip through JSON lines") {
  auto net = make_network({profile_named("Cisco"), profile_named("H3C")}, 1, 2);
  net.hosts.push_back({Ipv4Address(10, 9, 9, 9), 0, 3});
  SimTransport t(net);
  std::vector<Ipv4Address> targets = {net.hosts[0].address, net.hosts[1].address,
                                      Ipv4Address(10, 200, 0, 1)};
  const auto recs = run_scan(targets, kNmapTop, t, ScanConfig{});
  REQUIRE(recs.size() == 3);
  CHECK(recs[2].response_count() == 0);

  std::stringstream ss;
  write_fingerprints(ss, recs);
  const std::string text = ss.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find("\"ICMP_ADDRMASK\":null") != std::string::npos);
  CHECK(text.find("\"timestamp\":\"2020-05-27T00:00:00.000Z\"") != std::string::npos);
  CHECK(read_fingerprints(ss) == recs);

  const auto path = std::filesystem::temp_directory_path() / "devprint-test-fp.jsonl";
  save_fingerprints(path.string(), recs);
  CHECK(load_fingerprints(path.string()) == recs);
  std::filesystem::remove(path);
}

TEST_CASE("a truncated last line is reported with its line number") {
  auto net = make_network({profile_named("Cisco")}, 3, 2);
  SimTransport t(net);
  std::vector<Ipv4Address> targets;
  for (const auto& h : net.hosts) targets.push_back(h.address);
  std::stringstream ss;
  write_fingerprints(ss, run_scan(targets, kNmapTop, t, ScanConfig{}));
  std::string text = ss.str();
  text.resize(text.size() - 40);
  std::istringstream in(text);
  try {
    read_fingerprints(in, "fp.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("fp.jsonl:3") != std::string::npos);
  }
}

TEST_CASE("records with undecodable packets are rejected") {
  std::istringstream in(
      R"({"target":"10.0.0.1","scan_port":50000,"timestamp":"2020-05-27T00:00:00.000Z",)"
      R"("responses":{"UDP1":{"packet":"4500","observed_ttl":60,"rtt_ms":1.0}}})"
      "\n");
  CHECK_THROWS_AS(read_fingerprints(in), ParseError);
}

TEST_CASE("UTC timestamps") {
  CHECK(format_utc_ms(kSimEpochMs) == "2020-05-27T00:00:00.000Z");
  CHECK(format_utc_ms(kSimEpochMs + 3'723'004) == "2020-05-27T01:02:03.004Z");
  CHECK(parse_utc_ms("2020-05-27T01:02:03.004Z") == kSimEpochMs + 3'723'004);
  CHECK_FALSE(parse_utc_ms("2020-05-27 01:02:03").has_value());
  for (std::int64_t ms : {std::int64_t{0}, kSimEpochMs, std::int64_t{4102444799999}}) {
    CHECK(parse_utc_ms(format_utc_ms(ms)) == ms);
  }
}
