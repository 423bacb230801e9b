#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "devprint/error.hpp"
#include "devprint/features.hpp"
#include "devprint/sim.hpp"
#include "doctest.h"

using namespace devprint;

namespace {

const Ipv4Address kTarget(10, 20, 30, 40);

StackProfile profile_named(const std::string& vendor) {
  for (const auto& p : default_profiles()) {
    if (p.vendor == vendor) return p;
  }
  throw std::runtime_error("no profile " + vendor);
}

const ProbeSpec& spec_of(const std::vector<ProbeSpec>& probes, ProbeKind kind) {
  for (const auto& p : probes) {
    if (p.id.kind == kind) return p;
  }
  throw std::runtime_error("missing probe");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Record built straight from respond(), without the scan engine.
FingerprintRecord direct_record(const StackProfile& profile, int hops, const ProbeSet& set) {
  FingerprintRecord rec{kTarget, 50123, {}, kSimEpochMs};
  Rng rng(42);
  for (const auto& spec : set.materialize(kTarget, 50123)) {
    auto r = respond(profile, hops, spec, rng);
    if (!r) {
      rec.responses.emplace_back(spec.id, std::nullopt);
      continue;
    }
    const int ttl = r->parsed.ip.ttl;
    rec.responses.emplace_back(spec.id, ProbeResponse{std::move(*r), ttl, 1.0});
  }
  return rec;
}

FeatureVector vector_of(const StackProfile& profile, const ProbeSet& set, int hops = 7) {
  return extract_features(direct_record(profile, hops, set), set);
}

// Features whose slots differ between two vectors of one schema.
std::set<std::string> differing_features(const FeatureVector& a, const FeatureVector& b) {
  std::set<std::string> out;
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    REQUIRE(a.values[i].first == b.values[i].first);
    if (a.values[i].second != b.values[i].second) {
      out.insert(std::string(slot_feature(a.values[i].first)));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("reply TTL is the initial TTL less the hops") {
  StackProfile p = profile_named("Cisco");
  REQUIRE(p.initial_ttl == 255);
  Rng rng(1);
  const auto probes = ProbeSet::named("nmap").materialize(kTarget, 50000);
  const auto r = respond(p, 5, spec_of(probes, ProbeKind::icmp_echo1), rng);
  REQUIRE(r);
  CHECK(r->parsed.ip.ttl == 250);
}

TEST_CASE("echo code behavior") {
  Rng rng(1);
  const auto probes = ProbeSet::named("nmap").materialize(kTarget, 50000);
  const auto& echo1 = spec_of(probes, ProbeKind::icmp_echo1);
  StackProfile p = profile_named("Juniper");
  p.echo_code_behavior = EchoCode::echo_back;
  CHECK(respond(p, 3, echo1, rng)->parsed.icmp()->code == 9);
  p.echo_code_behavior = EchoCode::zero;
  CHECK(respond(p, 3, echo1, rng)->parsed.icmp()->code == 0);
}

TEST_CASE("an unanswered probe id yields no reply") {
  Rng rng(1);
  const auto probes = ProbeSet::named("nmap+topicmp").materialize(kTarget, 50000);
  StackProfile p = profile_named("Mikrotik");
  CHECK(respond(p, 3, spec_of(probes, ProbeKind::icmp_addrmask), rng));
  p.responds["ICMP_ADDRMASK"] = false;
  CHECK_FALSE(respond(p, 3, spec_of(probes, ProbeKind::icmp_addrmask), rng));
}

TEST_CASE("every reply of every profile decodes and has valid checksums") {
  const auto set = ProbeSet::named("nmap+topicmp+icmp");
  Rng rng(9);
  for (const auto& p : default_profiles()) {
    for (int hops : {1, 7, 20, 30}) {
      for (const auto& spec : set.materialize(kTarget, 61000, {}, 12345)) {
        const auto r = respond(p, hops, spec, rng);
        if (!r) continue;
        CHECK(checksums_valid(r->bytes));
        CHECK(decode_packet(r->bytes) == *r);
        CHECK(r->parsed.ip.ttl == p.initial_ttl - hops);
        CHECK(r->parsed.ip.src == kTarget);
      }
    }
  }
}

TEST_CASE("port unreachable realizes the UDP knobs") {
  Rng rng(1);
  const auto probes = ProbeSet::named("nmap").materialize(kTarget, 50000);
  const auto& udp = spec_of(probes, ProbeKind::udp1);
  StackProfile p = profile_named("Juniper");
  p.returned_ip_id = ReturnedIpId::zero;
  p.udp_quote_bytes = 8;
  p.quoted_unused_nonzero = true;
  const auto r = respond(p, 4, udp, rng);
  const auto* m = r->parsed.icmp();
  REQUIRE(m);
  CHECK(m->type == 3);
  CHECK(m->code == 3);
  const auto& err = std::get<IcmpError>(m->body);
  CHECK(err.quoted.size() == 28);
  CHECK(err.quoted[4] == 0);
  CHECK(err.quoted[5] == 0);
  CHECK(err.quoted[8] == 60);  // probe TTL 64 after 4 hops
  CHECK(err.unused != std::array<std::uint8_t, 4>{});
  CHECK(r->parsed.ip.total_length == 20 + 8 + 28);
}

TEST_CASE("tcp resets realize the seq/ack knobs") {
  Rng rng(1);
  const auto probes = ProbeSet::named("nmap").materialize(kTarget, 50000);
  const auto& tcp1 = spec_of(probes, ProbeKind::tcp1);
  const auto& sent = *tcp1.packet.parsed.tcp();
  StackProfile p = profile_named("Juniper");
  auto t = *respond(p, 3, tcp1, rng)->parsed.tcp();
  CHECK(t.flags == (tcpflag::rst | tcpflag::ack));
  CHECK(t.ack == sent.seq + 1);
  CHECK(t.seq == 0);
  p.tcp_flags = "R";
  p.seq_behavior = NumberCmp::same;
  p.ack_behavior = NumberCmp::other;
  t = *respond(p, 3, tcp1, rng)->parsed.tcp();
  CHECK(t.flags == tcpflag::rst);
  CHECK(t.seq == sent.ack);
  CHECK(t.ack != 0);
  CHECK(t.ack != sent.seq);
  CHECK(t.ack != sent.seq + 1);
}

TEST_CASE("the default pack has 11 valid, distinct vendors") {
  const auto& pack = default_profiles();
  CHECK(pack.size() == 11);
  std::set<std::string> names;
  for (const auto& p : pack) {
    CHECK_NOTHROW(p.validate());
    names.insert(p.vendor);
  }
  CHECK(names == std::set<std::string>{"Cisco", "Mikrotik", "Huawei", "H3C", "NEC", "Lancom",
                                       "Juniper", "Adtran", "ZTE", "Ubiquoss", "Dell"});
}

// Every feature can tell at least two shipped profiles apart.
TEST_CASE("each feature separates some pair of shipped profiles") {
  const auto set = ProbeSet::named("nmap+topicmp+icmp");
  std::vector<FeatureVector> vectors;
  for (const auto& p : default_profiles()) vectors.push_back(vector_of(p, set));
  std::set<std::string> separated;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      for (const auto& f : differing_features(vectors[i], vectors[j])) separated.insert(f);
    }
  }
  for (const auto& f : feature_table()) {
    INFO(f.name);
    CHECK(separated.count(std::string(f.name)) == 1);
  }
}

// Every feature can be changed on its own: a shipped profile and a copy with
// one knob turned differ in that feature and nothing else.
TEST_CASE("each feature is realizable in isolation") {
  using Edit = std::function<void(StackProfile&)>;
  struct Case {
    std::string feature;
    std::string base;
    Edit edit;
  };
  const std::vector<Case> cases = {
      {"ip_initial_ttl", "Cisco", [](StackProfile& p) { p.initial_ttl = 128; }},
      {"ip_initial_ttl_guess", "Adtran", [](StackProfile& p) { p.initial_ttl = 128; }},
      {"resp", "Mikrotik", [](StackProfile& p) { p.responds["ICMP_ECHO2"] = false; }},
      {"udp_checksum_integrity", "Juniper", [](StackProfile& p) { p.udp_checksum_integrity = false; }},
      {"tcp_rst_data", "Juniper", [](StackProfile& p) { p.rst_has_data = true; }},
      {"tcp_flags", "Juniper", [](StackProfile& p) { p.tcp_flags = "R"; }},
      {"icmp_seq", "Cisco", [](StackProfile& p) { p.icmp_seq_behavior = FieldEcho::zero; }},
      {"icmp_addr_mask", "Mikrotik",
       [](StackProfile& p) { p.addrmask_reply = std::array<std::uint8_t, 4>{255, 255, 0, 0}; }},
      {"icmp_id", "Mikrotik", [](StackProfile& p) { p.icmp_id_behavior = FieldEcho::zero; }},
      {"returned_ip_id", "Juniper", [](StackProfile& p) { p.returned_ip_id = ReturnedIpId::zero; }},
      {"icmp_code", "Mikrotik", [](StackProfile& p) { p.info_reply_code = 1; }},
      {"tcp_window", "Juniper", [](StackProfile& p) { p.tcp_window = 1024; }},
      {"tcp_ack_cmp", "Juniper", [](StackProfile& p) { p.ack_behavior = NumberCmp::zero; }},
      {"icmp_echo_code", "Juniper", [](StackProfile& p) { p.echo_code_behavior = EchoCode::zero; }},
      {"tcp_options", "Juniper", [](StackProfile& p) { p.tcp_options_reply = "M1460"; }},
      {"ip_df", "Juniper", [](StackProfile& p) { p.df_bit = false; }},
      {"tcp_seq_cmp", "Juniper", [](StackProfile& p) { p.seq_behavior = NumberCmp::same; }},
      {"ip_total_length", "Juniper", [](StackProfile& p) { p.udp_quote_bytes = 200; }},
      {"icmp_unused_nonzero", "Juniper", [](StackProfile& p) { p.quoted_unused_nonzero = true; }},
      {"udp_data_integrity", "Juniper", [](StackProfile& p) { p.udp_data_integrity = false; }},
      {"icmp_type", "Mikrotik", [](StackProfile& p) { p.echo_reply_type = 8; }},
      {"tcp_quirks", "Juniper", [](StackProfile& p) { p.quirks.nonzero_reserved = true; }},
  };
  REQUIRE(cases.size() == feature_table().size());

  const auto set = ProbeSet::named("nmap+topicmp+icmp");
  for (const auto& c : cases) {
    INFO(c.feature);
    const StackProfile base = profile_named(c.base);
    StackProfile variant = base;
    c.edit(variant);
    REQUIRE(variant != base);
    variant.validate();
    const auto a = vector_of(base, set);
    const auto b = vector_of(variant, set);
    const auto diff = differing_features(a, b);
    if (c.feature == "resp") {
      // Losing a reply blanks the rest of that probe's slots.
      CHECK(diff.count("resp") == 1);
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i].second == b.values[i].second) continue;
        const auto& slot = a.values[i].first;
        CHECK((slot_feature(slot) == "resp" || b.values[i].second == kAbsent));
        CHECK(slot.ends_with("@ICMP_ECHO2"));
      }
    } else {
      CHECK(diff == std::set<std::string>{c.feature});
    }
  }
}

TEST_CASE("profiles round trip through JSON and match the shipped data file") {
  const std::string text = profiles_to_json(default_profiles());
  CHECK(profiles_from_json(text) == default_profiles());
  CHECK(read_text(DEVPRINT_DATA_DIR "/profiles.json") == text);
  CHECK(load_profiles(DEVPRINT_DATA_DIR "/profiles.json") == default_profiles());
}

TEST_CASE("profile JSON is validated") {
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","colour":"red"}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","initial_ttl":100}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","responds":{"TCP9":true}}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","fuzz_replies":[3]}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","seq_behavior":"S++"}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","tcp_options_reply":"Q"}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X","tcp_options_reply":"M1460,N"}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"([{"vendor":"X"},{"vendor":"X"}])"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json(R"({"vendor":"X"})"), ConfigError);
  CHECK_THROWS_AS(profiles_from_json("[{"), ConfigError);
  const auto minimal = profiles_from_json(R"([{"vendor":"X"}])");
  REQUIRE(minimal.size() == 1);
  CHECK(minimal[0].initial_ttl == 64);
  try {
    profiles_from_json(R"([{"vendor":"X","colour":"red"}])", "p.json");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("p.json") == 0);
    CHECK(std::string(e.what()).find("colour") != std::string::npos);
  }
}

TEST_CASE("make_network lays out addresses and hop counts") {
  const auto net = make_network(default_profiles(), 300, 5);
  CHECK(net.hosts.size() == 3300);
  CHECK(net.hosts[0].address == Ipv4Address(10, 0, 0, 1));
  CHECK(net.hosts[250].address == Ipv4Address(10, 0, 1, 1));
  CHECK(net.hosts[300].address == Ipv4Address(10, 1, 0, 1));
  std::set<int> hops;
  for (const auto& h : net.hosts) {
    CHECK(h.hops >= 1);
    CHECK(h.hops <= 20);
    hops.insert(h.hops);
  }
  CHECK(hops.size() == 20);
  CHECK(make_network(default_profiles(), 300, 5).hosts == net.hosts);
}

TEST_CASE("network JSON round trip and validation") {
  auto net = make_network(default_profiles(), 3, 8, 0.1, 0.02);
  const auto back = network_from_json(network_to_json(net), default_profiles());
  CHECK(back.hosts == net.hosts);
  CHECK(back.loss == net.loss);
  CHECK(back.acl_drop == net.acl_drop);
  CHECK(back.rng_seed == net.rng_seed);
  CHECK_THROWS_AS(network_from_json(R"({"hosts":[{"ip":"10.0.0.1","vendor":"Nobody","hops":3}]})",
                                    default_profiles()),
                  ConfigError);
  CHECK_THROWS_AS(network_from_json(R"({"hosts":[{"ip":"10.0.0.1","vendor":"Cisco","hops":31}]})",
                                    default_profiles()),
                  ConfigError);
  CHECK_THROWS_AS(network_from_json(R"({"loss":1.0,"hosts":[]})", default_profiles()), ConfigError);
}

TEST_CASE("synthesize_dataset: 11 x 200, no loss") {
  const auto net = make_network(default_profiles(), 200, 3);
  const auto ds = synthesize_dataset(net, ProbeSet::named("nmap+topicmp"), ScanConfig{});
  CHECK(ds.records.size() == 2200);
  std::map<std::string, int> hist;
  for (const auto& [ip, v] : ds.labels) ++hist[v];
  CHECK(hist.size() == 11);
  for (const auto& [v, n] : hist) CHECK(n == 200);
  for (const auto& r : ds.records) CHECK(r.response_count() > 0);
  CHECK(drop_unresponsive(ds.records).removed == 0);
}

TEST_CASE("synthesize_dataset is deterministic and loss is applied per attempt") {
  const auto net = make_network(default_profiles(), 20, 4, 0.3, 0.0);
  const auto set = ProbeSet::named("nmap+topicmp");
  auto text = [&] {
    std::ostringstream out;
    write_fingerprints(out, synthesize_dataset(net, set, ScanConfig{}).records);
    return out.str();
  };
  const std::string first = text();
  CHECK(first == text());

  // With 30% loss per attempt, three attempts lose a reply 2.7% of the time.
  const auto ds = synthesize_dataset(net, set, ScanConfig{});
  std::size_t answered = 0;
  std::size_t expected = 0;
  for (const auto& r : ds.records) {
    const auto& p = net.profiles[net.host(r.target)->profile];
    for (const auto& [id, resp] : r.responses) {
      if (p.answers(id)) ++expected;
      if (resp) ++answered;
    }
  }
  const double kept = static_cast<double>(answered) / static_cast<double>(expected);
  CHECK(kept > 0.94);
  CHECK(kept < 0.995);
}

TEST_CASE("labels.csv") {
  const auto path = (std::filesystem::temp_directory_path() / "devprint-labels.csv").string();
  std::map<Ipv4Address, std::string> labels = {{Ipv4Address(10, 0, 0, 1), "Cisco"},
                                               {Ipv4Address(10, 0, 0, 2), "Juniper"}};
  save_labels(path, labels);
  CHECK(read_text(path) == "ip,vendor\n10.0.0.1,Cisco\n10.0.0.2,Juniper\n");
  CHECK(load_labels(path) == labels);
  std::filesystem::remove(path);
  try {
    parse_labels("ip,vendor\n10.0.0.1,Cisco\n10.0.0.300,Juniper\n", "l.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_labels("10.0.0.1,A\n10.0.0.1,B\n"), ParseError);
}
