#include <fstream>
#include <set>
#include <sstream>

#include "devprint/error.hpp"
#include "devprint/features.hpp"
#include "devprint/sim.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace devprint;

namespace {

const Ipv4Address kTarget(172, 16, 5, 9);
const ProbeSet kFinal = ProbeSet::named("nmap+topicmp");

StackProfile profile_named(const std::string& vendor) {
  for (const auto& p : default_profiles()) {
    if (p.vendor == vendor) return p;
  }
  throw std::runtime_error("no profile " + vendor);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

FingerprintRecord record_for(const StackProfile& profile, int hops, const ProbeSet& set = kFinal,
                             std::uint64_t seed = 42) {
  FingerprintRecord rec{kTarget, 50123, {}, kSimEpochMs};
  Rng rng(seed);
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

void set_response(FingerprintRecord& rec, ProbeKind kind, Packet reply) {
  for (auto& [id, r] : rec.responses) {
    if (id.kind == kind) {
      const int ttl = reply.ip.ttl;
      r = ProbeResponse{encode_packet(reply), ttl, 1.0};
      return;
    }
  }
  throw std::runtime_error("no such probe");
}

FingerprintRecord silent_record(const ProbeSet& set = kFinal) {
  FingerprintRecord rec{kTarget, 50123, {}, kSimEpochMs};
  for (const auto& id : set.ids()) rec.responses.emplace_back(id, std::nullopt);
  return rec;
}

const ProbeSpec& sent(ProbeKind kind) {
  static const auto probes = kFinal.materialize(kTarget, 50123);
  for (const auto& p : probes) {
    if (p.id.kind == kind) return p;
  }
  throw std::runtime_error("missing");
}

Packet reply_base() {
  Packet p;
  p.ip.src = kTarget;
  p.ip.dst = sent(ProbeKind::tcp1).packet.parsed.ip.src;
  p.ip.ttl = 57;
  return p;
}

}  // namespace

TEST_CASE("initial_ttl") {
  CHECK(initial_ttl(59, 64, 59) == 64);
  CHECK(initial_ttl(250, 64, 59) == 255);
  CHECK_FALSE(initial_ttl(250, 64, std::nullopt).has_value());
}

TEST_CASE("initial_ttl_guess") {
  CHECK(initial_ttl_guess(57) == 64);
  CHECK(initial_ttl_guess(128) == 128);
  CHECK(initial_ttl_guess(200) == 256);
  CHECK(initial_ttl_guess(1) == 32);
  CHECK(initial_ttl_guess(255) == 256);
  int prev = 0;
  for (int t = 1; t <= 255; ++t) {
    const int g = initial_ttl_guess(t);
    CHECK(g >= prev);
    CHECK(g >= t);
    prev = g;
  }
  for (int v : {32, 64, 128}) CHECK(initial_ttl_guess(v) == v);
  CHECK(initial_ttl_guess(initial_ttl_guess(200) - 1) == 256);
}

TEST_CASE("ack after probe sequence + 1 is S+") {
  auto rec = silent_record();
  Packet p = reply_base();
  TcpHeader t;
  const auto& probe = *sent(ProbeKind::tcp1).packet.parsed.tcp();
  t.src_port = probe.dst_port;
  t.dst_port = probe.src_port;
  t.flags = tcpflag::rst | tcpflag::ack;
  t.ack = probe.seq + 1;
  p.transport = t;
  set_response(rec, ProbeKind::tcp1, p);
  const auto v = extract_features(rec, kFinal);
  CHECK(*v.get("tcp_ack_cmp@TCP1") == "S+");
  CHECK(*v.get("tcp_seq_cmp@TCP1") == "Z");
  CHECK(*v.get("tcp_flags@TCP1") == "AR");
  CHECK(*v.get("tcp_options@TCP1") == "none");
  CHECK(*v.get("tcp_quirks@TCP1") == "none");
  CHECK(*v.get("tcp_rst_data@TCP1") == "N");
  // Nothing quotes a probe, so the initial TTL is guessed.
  CHECK(*v.get("ip_initial_ttl@TCP1") == "NA");
  CHECK(*v.get("ip_initial_ttl_guess@TCP1") == "64");
}

TEST_CASE("comparison categories") {
  const auto& probe = *sent(ProbeKind::tcp2).packet.parsed.tcp();
  auto encode = [&](std::uint32_t seq, std::uint32_t ack) {
    auto rec = silent_record();
    Packet p = reply_base();
    TcpHeader t;
    t.src_port = probe.dst_port;
    t.dst_port = probe.src_port;
    t.flags = tcpflag::rst;
    t.seq = seq;
    t.ack = ack;
    p.transport = t;
    set_response(rec, ProbeKind::tcp2, p);
    const auto v = extract_features(rec, kFinal);
    return std::make_pair(*v.get("tcp_seq_cmp@TCP2"), *v.get("tcp_ack_cmp@TCP2"));
  };
  CHECK(encode(0, 0) == std::make_pair(std::string("Z"), std::string("Z")));
  CHECK(encode(probe.ack, probe.seq) == std::make_pair(std::string("S"), std::string("S")));
  CHECK(encode(probe.ack + 1, probe.seq + 1) == std::make_pair(std::string("S+"), std::string("S+")));
  CHECK(encode(probe.ack + 2, 7) == std::make_pair(std::string("O"), std::string("O")));
}

TEST_CASE("flags, options and quirks encodings") {
  const auto& probe = *sent(ProbeKind::tcp3).packet.parsed.tcp();
  auto rec = silent_record();
  Packet p = reply_base();
  TcpHeader t;
  t.src_port = probe.dst_port;
  t.dst_port = probe.src_port;
  t.flags = tcpflag::ece | tcpflag::ack | tcpflag::rst | tcpflag::fin;
  t.reserved = 2;
  t.urgent_ptr = 9;
  t.window = 1234;
  t.options = {TcpOption::wscale(10), TcpOption::nop(), TcpOption::mss(265),
               TcpOption::timestamp(1, 2), TcpOption::sack_permitted()};
  p.transport = t;
  p.payload = {'x'};
  set_response(rec, ProbeKind::tcp3, p);
  const auto v = extract_features(rec, kFinal);
  CHECK(*v.get("tcp_flags@TCP3") == "EARF");
  CHECK(*v.get("tcp_options@TCP3") == "W10,N,M265,T,S");
  CHECK(*v.get("tcp_quirks@TCP3") == "RU");
  CHECK(*v.get("tcp_window@TCP3") == "1234");
  CHECK(*v.get("tcp_rst_data@TCP3") == "Y");
}

TEST_CASE("address mask reply is written as a dotted quad") {
  auto rec = silent_record();
  Packet p = reply_base();
  IcmpMessage m;
  m.type = icmptype::mask_reply;
  m.identifier = sent(ProbeKind::icmp_addrmask).packet.parsed.icmp()->identifier;
  m.sequence = 298;
  m.body = IcmpAddressMask{{255, 255, 255, 0}};
  p.transport = m;
  set_response(rec, ProbeKind::icmp_addrmask, p);
  const auto v = extract_features(rec, kFinal);
  CHECK(*v.get("icmp_addr_mask@ICMP_ADDRMASK") == "255.255.255.0");
  CHECK(*v.get("icmp_type@ICMP_ADDRMASK") == "18");
  CHECK(*v.get("icmp_seq@ICMP_ADDRMASK") == "298");
  CHECK(*v.get("resp@ICMP_ADDRMASK") == "Y");
}

TEST_CASE("an unanswered timestamp probe is N then ABSENT") {
  auto rec = record_for(profile_named("Mikrotik"), 3);
  for (auto& [id, r] : rec.responses) {
    if (id.kind == ProbeKind::icmp_timestamp) r.reset();
  }
  const auto v = extract_features(rec, kFinal);
  int slots = 0;
  for (const auto& [k, val] : v.values) {
    if (!k.ends_with("@ICMP_TIMESTAMP")) continue;
    ++slots;
    CHECK(val == (k == "resp@ICMP_TIMESTAMP" ? "N" : "ABSENT"));
  }
  CHECK(slots == 8);
}

TEST_CASE("missing probe in a record is a schema error") {
  auto rec = record_for(profile_named("Mikrotik"), 3);
  rec.responses.pop_back();
  CHECK_THROWS_AS(extract_features(rec, kFinal), SchemaError);
}

TEST_CASE("a quoting error fixes the initial TTL for every probe") {
  const auto v = extract_features(record_for(profile_named("Cisco"), 9), kFinal);
  for (const auto& [k, val] : v.values) {
    if (slot_feature(k) == "ip_initial_ttl" && !k.ends_with("ADDRMASK")) CHECK(val == "255");
    if (slot_feature(k) == "ip_initial_ttl_guess" && !k.ends_with("ADDRMASK")) CHECK(val == "NA");
  }
}

TEST_CASE("schema is total") {
  const std::vector<std::string> sets = {"nmap", "topicmp", "icmp", "nmap+topicmp",
                                         "nmap+topicmp+icmp"};
  for (const auto& name : sets) {
    const auto set = ProbeSet::named(name);
    const auto slots = schema_slots(set);
    std::set<std::string> names;
    for (const auto& s : slots) names.insert(s.name());
    CHECK(names.size() == slots.size());
    auto expect_layout = [&](const FeatureVector& v) {
      REQUIRE(v.values.size() == slots.size());
      for (std::size_t i = 0; i < slots.size(); ++i) CHECK(v.values[i].first == slots[i].name());
    };
    expect_layout(extract_features(silent_record(set), set));
    for (const auto& p : default_profiles()) {
      for (int hops : {1, 13}) expect_layout(extract_features(record_for(p, hops, set), set));
    }
  }
  CHECK(schema_slots(kFinal).size() == 77);
}

TEST_CASE("every feature has at least one slot in the full probe set") {
  std::set<std::string> seen;
  for (const auto& s : schema_slots(ProbeSet::named("nmap+topicmp+icmp"))) seen.insert(s.feature);
  CHECK(seen.size() == 22);
  CHECK(feature_table().size() == 22);
}

TEST_CASE("extraction is deterministic") {
  const auto set = ProbeSet::named("nmap+topicmp+icmp");
  for (const auto& p : default_profiles()) {
    const auto rec = record_for(p, 5, set);
    CHECK(extract_features(rec, set) == extract_features(rec, set));
  }
}

TEST_CASE("shipped profiles produce their golden vectors") {
  const auto doc = nlohmann::ordered_json::parse(
      read_text(DEVPRINT_TEST_DIR "/golden/profile_vectors.json"));
  REQUIRE(doc.at("probeset") == kFinal.name());
  const int hops = doc.at("hops").get<int>();
  const auto& golden = doc.at("vectors");
  REQUIRE(golden.size() == default_profiles().size());
  for (const auto& p : default_profiles()) {
    INFO(p.vendor);
    REQUIRE(golden.contains(p.vendor));
    FeatureVector expected;
    for (const auto& [k, v] : golden.at(p.vendor).items()) expected.values.emplace_back(k, v);
    // Same vector whatever the reply randomness.
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto got = extract_features(record_for(p, hops, kFinal, seed), kFinal);
      CHECK(got == expected);
      if (got != expected) {
        for (std::size_t i = 0; i < std::min(got.values.size(), expected.values.size()); ++i) {
          if (got.values[i] != expected.values[i]) {
            MESSAGE(got.values[i].first << ": got " << got.values[i].second << ", expected "
                                        << expected.values[i].second);
          }
        }
      }
    }
  }
}

TEST_CASE("schema.json") {
  const auto j = nlohmann::ordered_json::parse(schema_json(kFinal));
  CHECK(j.at("version") == kSchemaVersion);
  CHECK(j.at("probeset") == "nmap+topicmp");
  CHECK(j.at("features").size() == 22);
  CHECK(j.at("features")[0].at("name") == "ip_initial_ttl");
  CHECK(j.at("features")[21].at("rank") == 22);
  CHECK(j.at("slots").size() == 77);
  CHECK(read_text(DEVPRINT_DATA_DIR "/schema.json") == schema_json(kFinal));
}

TEST_CASE("features.jsonl round trip") {
  std::vector<LabeledVector> rows;
  for (const auto& p : default_profiles()) {
    rows.push_back({kTarget, extract_features(record_for(p, 4), kFinal)});
  }
  std::stringstream ss;
  write_feature_vectors(ss, rows);
  const auto back = read_feature_vectors(ss);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].target == rows[i].target);
    CHECK(back[i].vector == rows[i].vector);
  }
  std::istringstream bad("{\"target\":\"1.2.3.4\",\"vector\":{\"resp@UDP1\":1}}\n");
  CHECK_THROWS_AS(read_feature_vectors(bad), ParseError);
}
