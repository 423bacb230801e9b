#include "devprint/sim.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "devprint/error.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::array<std::uint8_t, 4> kUnusedNonzero = {0x00, 0x00, 0x05, 0xDC};
const char kRstText[] = "connection refused";

std::uint64_t text_hash(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint16_t rd16(const Bytes& b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

void wr16(Bytes& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v >> 8);
  b[at + 1] = static_cast<std::uint8_t>(v);
}

std::uint32_t apply_cmp(NumberCmp cmp, std::uint32_t counterpart, Rng& rng) {
  switch (cmp) {
    case NumberCmp::zero: return 0;
    case NumberCmp::same: return counterpart;
    case NumberCmp::plus_one: return counterpart + 1;
    case NumberCmp::other: break;
  }
  std::uint32_t v = static_cast<std::uint32_t>(rng.next());
  while (v == 0 || v == counterpart || v == counterpart + 1) ++v;
  return v;
}

Ipv4Header reply_ip(const StackProfile& profile, int hops, const ProbeSpec& probe, Rng& rng) {
  Ipv4Header ip;
  ip.src = probe.target;
  ip.dst = probe.packet.parsed.ip.src;
  ip.ttl = static_cast<std::uint8_t>(std::max(1, profile.initial_ttl - hops));
  ip.df = profile.df_bit;
  ip.identification = static_cast<std::uint16_t>(rng.next());
  return ip;
}

// The probe as it reached the target: TTL spent by `hops` routers.
Bytes arrived(const ProbeSpec& probe, int hops) {
  Bytes b = probe.packet.bytes;
  b[8] = static_cast<std::uint8_t>(std::max(1, int{probe.sent_ttl} - hops));
  wr16(b, 10, 0);
  wr16(b, 10, inet_checksum(ByteView(b).first(20)));
  return b;
}

IcmpMessage error_about(const ProbeSpec& probe, int hops, std::uint8_t type, std::uint8_t code,
                        std::size_t quote_transport_bytes) {
  Bytes quote = arrived(probe, hops);
  quote.resize(std::min(quote.size(), 20 + quote_transport_bytes));
  IcmpMessage m;
  m.type = type;
  m.code = code;
  m.body = IcmpError{{}, std::move(quote), nullptr};
  return m;
}

void reply_ids(const StackProfile& profile, const IcmpMessage& req, IcmpMessage& reply) {
  reply.identifier = profile.icmp_id_behavior == FieldEcho::echo ? req.identifier : 0;
  reply.sequence = profile.icmp_seq_behavior == FieldEcho::echo ? req.sequence : 0;
}

std::optional<IcmpMessage> icmp_reply(const StackProfile& profile, int hops,
                                      const ProbeSpec& probe) {
  const IcmpMessage& req = *probe.packet.parsed.icmp();
  IcmpMessage m;
  switch (req.type) {
    case icmptype::echo_request: {
      m.type = static_cast<std::uint8_t>(profile.echo_reply_type);
      m.code = profile.echo_code_behavior == EchoCode::echo_back ? req.code : 0;
      reply_ids(profile, req, m);
      m.body = std::get<IcmpEcho>(req.body);
      return m;
    }
    case icmptype::timestamp_request: {
      if (!profile.timestamp_reply) return error_about(probe, hops, 3, 13, 8);
      const auto& ts = std::get<IcmpTimestamps>(req.body);
      m.type = icmptype::timestamp_reply;
      m.code = static_cast<std::uint8_t>(profile.info_reply_code);
      reply_ids(profile, req, m);
      const std::uint32_t now = (ts.originate + static_cast<std::uint32_t>(hops)) % 86'400'000;
      m.body = IcmpTimestamps{ts.originate, now, now};
      return m;
    }
    case icmptype::mask_request:
      m.type = icmptype::mask_reply;
      m.code = static_cast<std::uint8_t>(profile.info_reply_code);
      reply_ids(profile, req, m);
      m.body = IcmpAddressMask{profile.addrmask_reply.value_or(std::array<std::uint8_t, 4>{})};
      return m;
    case icmptype::info_request:
      m.type = icmptype::info_reply;
      m.code = static_cast<std::uint8_t>(profile.info_reply_code);
      reply_ids(profile, req, m);
      m.body = IcmpInfo{};
      return m;
    case 42: {
      m.type = 43;
      reply_ids(profile, req, m);
      m.body = IcmpOpaque{{static_cast<std::uint8_t>(m.identifier >> 8),
                           static_cast<std::uint8_t>(m.identifier),
                           static_cast<std::uint8_t>(m.sequence >> 8),
                           static_cast<std::uint8_t>(m.sequence)},
                          {}};
      return m;
    }
    default:
      return std::nullopt;
  }
}

IcmpMessage port_unreachable(const StackProfile& profile, int hops, const ProbeSpec& probe) {
  Bytes quote = arrived(probe, hops);
  switch (profile.returned_ip_id) {
    case ReturnedIpId::same: break;
    case ReturnedIpId::zero: wr16(quote, 4, 0); break;
    case ReturnedIpId::other: wr16(quote, 4, rd16(quote, 4) ^ 0x8000); break;
  }
  if (!profile.udp_checksum_integrity) wr16(quote, 26, rd16(quote, 26) ^ 0x5555);
  if (!profile.udp_data_integrity && quote.size() > 28) quote[28] ^= 0xFF;
  quote.resize(std::min(quote.size(), 20 + static_cast<std::size_t>(profile.udp_quote_bytes)));
  IcmpMessage m;
  m.type = icmptype::dest_unreachable;
  m.code = 3;
  IcmpError err;
  if (profile.quoted_unused_nonzero) err.unused = kUnusedNonzero;
  err.quoted = std::move(quote);
  m.body = std::move(err);
  return m;
}

TcpHeader tcp_reset(const StackProfile& profile, const ProbeSpec& probe, Rng& rng) {
  const TcpHeader& req = *probe.packet.parsed.tcp();
  TcpHeader t;
  t.src_port = req.dst_port;
  t.dst_port = req.src_port;
  t.flags = tcpflag::rst | (profile.tcp_flags == "AR" ? tcpflag::ack : 0);
  t.seq = apply_cmp(profile.seq_behavior, req.ack, rng);
  t.ack = apply_cmp(profile.ack_behavior, req.seq, rng);
  t.window = static_cast<std::uint16_t>(profile.tcp_window);
  t.options = parse_tcp_option_signature(profile.tcp_options_reply);
  for (auto& o : t.options) {
    if (o.kind == tcpopt::timestamp) o = TcpOption::timestamp(static_cast<std::uint32_t>(rng.next()), 0xFFFFFFFF);
  }
  if (profile.quirks.nonzero_reserved) t.reserved = 0x1;
  if (profile.quirks.urg_ptr_when_no_urg) t.urgent_ptr = 0x1234;
  return t;
}

// --- JSON -------------------------------------------------------------------

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<EchoCode> kEchoCodes[] = {{EchoCode::echo_back, "echo_back"},
                                             {EchoCode::zero, "zero"}};
constexpr EnumName<FieldEcho> kFieldEchoes[] = {{FieldEcho::echo, "echo"},
                                                {FieldEcho::zero, "zero"}};
constexpr EnumName<ReturnedIpId> kIpIds[] = {{ReturnedIpId::same, "same"},
                                             {ReturnedIpId::zero, "zero"},
                                             {ReturnedIpId::other, "other"}};
constexpr EnumName<NumberCmp> kCmps[] = {{NumberCmp::zero, "Z"},
                                         {NumberCmp::same, "S"},
                                         {NumberCmp::plus_one, "S+"},
                                         {NumberCmp::other, "O"}};

template <typename E, std::size_t N>
const char* enum_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E enum_value(const EnumName<E> (&table)[N], const std::string& s, const char* field) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  throw ConfigError(std::string(field) + ": unknown value '" + s + "'");
}

std::string mask_text(const std::array<std::uint8_t, 4>& m) {
  return Ipv4Address(m[0], m[1], m[2], m[3]).to_string();
}

std::array<std::uint8_t, 4> mask_bytes(const std::string& text) {
  const std::uint32_t v = Ipv4Address::parse(text).value();
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

ojson profile_json(const StackProfile& p) {
  ojson j;
  j["vendor"] = p.vendor;
  j["initial_ttl"] = p.initial_ttl;
  j["responds"] = ojson::object();
  for (const auto& [k, v] : p.responds) j["responds"][k] = v;
  j["fuzz_replies"] = p.fuzz_replies;
  j["df_bit"] = p.df_bit;
  j["echo_code_behavior"] = enum_name(kEchoCodes, p.echo_code_behavior);
  j["icmp_id_behavior"] = enum_name(kFieldEchoes, p.icmp_id_behavior);
  j["icmp_seq_behavior"] = enum_name(kFieldEchoes, p.icmp_seq_behavior);
  j["echo_reply_type"] = p.echo_reply_type;
  j["timestamp_reply"] = p.timestamp_reply;
  j["info_reply_code"] = p.info_reply_code;
  j["addrmask_reply"] = p.addrmask_reply ? ojson(mask_text(*p.addrmask_reply)) : ojson(nullptr);
  j["udp_checksum_integrity"] = p.udp_checksum_integrity;
  j["udp_data_integrity"] = p.udp_data_integrity;
  j["returned_ip_id"] = enum_name(kIpIds, p.returned_ip_id);
  j["quoted_unused_nonzero"] = p.quoted_unused_nonzero;
  j["udp_quote_bytes"] = p.udp_quote_bytes;
  j["tcp_flags"] = p.tcp_flags;
  j["tcp_window"] = p.tcp_window;
  j["tcp_options_reply"] = p.tcp_options_reply;
  j["seq_behavior"] = enum_name(kCmps, p.seq_behavior);
  j["ack_behavior"] = enum_name(kCmps, p.ack_behavior);
  j["rst_has_data"] = p.rst_has_data;
  j["quirks"] = {{"nonzero_reserved", p.quirks.nonzero_reserved},
                 {"urg_ptr_when_no_urg", p.quirks.urg_ptr_when_no_urg}};
  return j;
}

StackProfile profile_from(const ojson& j) {
  static const std::set<std::string> known = {
      "vendor", "initial_ttl", "responds", "fuzz_replies", "df_bit", "echo_code_behavior",
      "icmp_id_behavior", "icmp_seq_behavior", "echo_reply_type", "timestamp_reply",
      "info_reply_code", "addrmask_reply", "udp_checksum_integrity", "udp_data_integrity",
      "returned_ip_id", "quoted_unused_nonzero", "udp_quote_bytes", "tcp_flags", "tcp_window",
      "tcp_options_reply", "seq_behavior", "ack_behavior", "rst_has_data", "quirks"};
  if (!j.is_object()) throw ConfigError("profile must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown profile field '" + k + "'");
  }
  StackProfile p;
  p.vendor = j.at("vendor").get<std::string>();
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  auto opt_enum = [&](const char* key, auto& field, const auto& table) {
    if (j.contains(key)) field = enum_value(table, j.at(key).get<std::string>(), key);
  };
  opt("initial_ttl", p.initial_ttl);
  opt("responds", p.responds);
  opt("fuzz_replies", p.fuzz_replies);
  opt("df_bit", p.df_bit);
  opt_enum("echo_code_behavior", p.echo_code_behavior, kEchoCodes);
  opt_enum("icmp_id_behavior", p.icmp_id_behavior, kFieldEchoes);
  opt_enum("icmp_seq_behavior", p.icmp_seq_behavior, kFieldEchoes);
  opt("echo_reply_type", p.echo_reply_type);
  opt("timestamp_reply", p.timestamp_reply);
  opt("info_reply_code", p.info_reply_code);
  if (j.contains("addrmask_reply") && !j.at("addrmask_reply").is_null()) {
    p.addrmask_reply = mask_bytes(j.at("addrmask_reply").get<std::string>());
  }
  opt("udp_checksum_integrity", p.udp_checksum_integrity);
  opt("udp_data_integrity", p.udp_data_integrity);
  opt_enum("returned_ip_id", p.returned_ip_id, kIpIds);
  opt("quoted_unused_nonzero", p.quoted_unused_nonzero);
  opt("udp_quote_bytes", p.udp_quote_bytes);
  opt("tcp_flags", p.tcp_flags);
  opt("tcp_window", p.tcp_window);
  opt("tcp_options_reply", p.tcp_options_reply);
  opt_enum("seq_behavior", p.seq_behavior, kCmps);
  opt_enum("ack_behavior", p.ack_behavior, kCmps);
  opt("rst_has_data", p.rst_has_data);
  if (j.contains("quirks")) {
    const auto& q = j.at("quirks");
    if (q.contains("nonzero_reserved")) p.quirks.nonzero_reserved = q.at("nonzero_reserved").get<bool>();
    if (q.contains("urg_ptr_when_no_urg")) {
      p.quirks.urg_ptr_when_no_urg = q.at("urg_ptr_when_no_urg").get<bool>();
    }
  }
  p.validate();
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- profiles ---------------------------------------------------------------

bool StackProfile::answers(const ProbeId& id) const {
  if (id.kind == ProbeKind::fuzz) return fuzz_replies.count(id.icmp_type) > 0;
  const auto it = responds.find(id.to_string());
  return it == responds.end() || it->second;
}

void StackProfile::validate() const {
  const std::string where = "profile '" + vendor + "': ";
  if (vendor.empty()) throw ConfigError("profile without vendor name");
  if (initial_ttl != 32 && initial_ttl != 64 && initial_ttl != 128 && initial_ttl != 255) {
    throw ConfigError(where + "initial_ttl must be one of 32, 64, 128, 255");
  }
  for (const auto& [k, v] : responds) {
    ProbeId id;
    try {
      id = ProbeId::parse(k);
    } catch (const DataError&) {
      throw ConfigError(where + "responds names unknown probe '" + k + "'");
    }
    if (id.kind == ProbeKind::fuzz) throw ConfigError(where + "fuzz probes are set via fuzz_replies");
  }
  for (int t : fuzz_replies) {
    if (t != 8 && t != 13 && t != 15 && t != 17 && t != 42) {
      throw ConfigError(where + "no reply is modeled for ICMP type " + std::to_string(t));
    }
  }
  if (echo_reply_type != 0 && echo_reply_type != 8) {
    throw ConfigError(where + "echo_reply_type must be 0 or 8");
  }
  if (info_reply_code < 0 || info_reply_code > 255) throw ConfigError(where + "info_reply_code out of range");
  if (udp_quote_bytes < 0 || udp_quote_bytes > 308) {
    throw ConfigError(where + "udp_quote_bytes must be within 0..308");
  }
  if (tcp_flags != "AR" && tcp_flags != "R") throw ConfigError(where + "tcp_flags must be AR or R");
  if (tcp_window < 0 || tcp_window > 0xFFFF) throw ConfigError(where + "tcp_window out of range");
  std::size_t option_bytes = 0;
  for (const auto& o : parse_tcp_option_signature(tcp_options_reply)) option_bytes += o.wire_size();
  if (option_bytes > 40) throw ConfigError(where + "TCP options exceed 40 bytes");
  // Unaligned templates would pick up padding on the wire.
  if (option_bytes % 4 != 0) {
    throw ConfigError(where + "TCP option template must fill whole 4-byte words");
  }
}

const std::vector<StackProfile>& default_profiles() {
  static const std::vector<StackProfile> pack = [] {
    // ICMP behavior groups; members agree on everything the ICMP sweep sees.
    StackProfile a;
    a.initial_ttl = 255;
    a.responds = {{"ICMP_ADDRMASK", false}};
    a.fuzz_replies = {8, 13};

    StackProfile b;
    b.initial_ttl = 64;
    b.echo_code_behavior = EchoCode::zero;
    b.icmp_seq_behavior = FieldEcho::zero;
    b.addrmask_reply = std::array<std::uint8_t, 4>{0, 0, 0, 0};
    b.fuzz_replies = {8, 13, 17};

    StackProfile c;
    c.initial_ttl = 64;
    c.df_bit = true;
    c.icmp_id_behavior = FieldEcho::zero;
    c.responds = {{"ICMP_ADDRMASK", false}};
    c.fuzz_replies = {8, 13, 15};

    // Same echo behavior as c; timestamp and mask requests are where they part.
    StackProfile d = c;
    d.timestamp_reply = false;
    d.responds = {};
    d.addrmask_reply = std::array<std::uint8_t, 4>{255, 255, 255, 0};
    d.fuzz_replies = {8, 13, 15, 17};

    std::vector<StackProfile> v;

    StackProfile cisco = a;
    cisco.vendor = "Cisco";
    cisco.udp_quote_bytes = 8;
    v.push_back(cisco);

    StackProfile mikrotik = b;
    mikrotik.vendor = "Mikrotik";
    v.push_back(mikrotik);

    StackProfile huawei = c;
    huawei.vendor = "Huawei";
    huawei.tcp_window = 8192;
    huawei.tcp_options_reply = "M1460,S,T,N,W0";
    huawei.returned_ip_id = ReturnedIpId::zero;
    v.push_back(huawei);

    StackProfile h3c = d;
    h3c.vendor = "H3C";
    h3c.tcp_window = huawei.tcp_window;
    h3c.tcp_options_reply = huawei.tcp_options_reply;
    h3c.returned_ip_id = huawei.returned_ip_id;
    v.push_back(h3c);

    StackProfile nec = c;
    nec.vendor = "NEC";
    nec.tcp_flags = "R";
    nec.tcp_window = 4096;
    nec.seq_behavior = NumberCmp::same;
    nec.ack_behavior = NumberCmp::other;
    nec.rst_has_data = true;
    nec.udp_checksum_integrity = false;
    nec.quirks.urg_ptr_when_no_urg = true;
    v.push_back(nec);

    StackProfile lancom = d;
    lancom.vendor = "Lancom";
    lancom.tcp_flags = nec.tcp_flags;
    lancom.tcp_window = nec.tcp_window;
    lancom.seq_behavior = nec.seq_behavior;
    lancom.ack_behavior = nec.ack_behavior;
    lancom.rst_has_data = nec.rst_has_data;
    lancom.udp_checksum_integrity = nec.udp_checksum_integrity;
    lancom.quirks = nec.quirks;
    v.push_back(lancom);

    StackProfile juniper = c;
    juniper.vendor = "Juniper";
    v.push_back(juniper);

    StackProfile adtran = b;
    adtran.vendor = "Adtran";
    adtran.responds = {{"UDP1", false}};
    adtran.tcp_flags = "R";
    adtran.seq_behavior = NumberCmp::same;
    adtran.ack_behavior = NumberCmp::zero;
    adtran.quirks.nonzero_reserved = true;
    v.push_back(adtran);

    StackProfile zte = a;
    zte.vendor = "ZTE";
    zte.returned_ip_id = ReturnedIpId::zero;
    v.push_back(zte);

    StackProfile ubiquoss = b;
    ubiquoss.vendor = "Ubiquoss";
    ubiquoss.tcp_window = 14600;
    ubiquoss.tcp_options_reply = "M1460";
    ubiquoss.udp_data_integrity = false;
    ubiquoss.udp_quote_bytes = 64;
    v.push_back(ubiquoss);

    StackProfile dell = a;
    dell.vendor = "Dell";
    dell.tcp_flags = "R";
    dell.seq_behavior = NumberCmp::same;
    dell.ack_behavior = NumberCmp::zero;
    dell.quoted_unused_nonzero = true;
    dell.udp_quote_bytes = 8;
    v.push_back(dell);

    for (const auto& p : v) p.validate();
    return v;
  }();
  return pack;
}

std::string profiles_to_json(const std::vector<StackProfile>& profiles) {
  ojson arr = ojson::array();
  for (const auto& p : profiles) arr.push_back(profile_json(p));
  return arr.dump(2) + "\n";
}

std::vector<StackProfile> profiles_from_json(const std::string& text, const std::string& origin) {
  try {
    const ojson j = ojson::parse(text);
    if (!j.is_array()) throw ConfigError("expected an array of profiles");
    std::vector<StackProfile> out;
    std::set<std::string> seen;
    for (const auto& item : j) {
      out.push_back(profile_from(item));
      if (!seen.insert(out.back().vendor).second) {
        throw ConfigError("duplicate vendor '" + out.back().vendor + "'");
      }
    }
    return out;
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

std::vector<StackProfile> load_profiles(const std::string& path) {
  return profiles_from_json(read_file(path), path);
}

// --- network ----------------------------------------------------------------

const SimHost* SimNetwork::host(Ipv4Address a) const {
  for (const auto& h : hosts) {
    if (h.address == a) return &h;
  }
  return nullptr;
}

void SimNetwork::validate() const {
  if (loss < 0 || loss >= 1) throw ConfigError("loss must be in [0, 1)");
  if (acl_drop < 0 || acl_drop >= 1) throw ConfigError("acl_drop must be in [0, 1)");
  std::set<Ipv4Address> seen;
  for (const auto& h : hosts) {
    if (h.profile >= profiles.size()) throw ConfigError("host " + h.address.to_string() + " has no profile");
    if (h.hops < 1 || h.hops > 30) throw ConfigError("host " + h.address.to_string() + " hops outside 1..30");
    if (!seen.insert(h.address).second) throw ConfigError("duplicate host " + h.address.to_string());
  }
}

SimNetwork make_network(std::vector<StackProfile> profiles, std::size_t per_vendor,
                        std::uint64_t seed, double loss, double acl_drop) {
  if (profiles.size() > 255) throw UsageError("at most 255 profiles");
  if (per_vendor > 250 * 256) throw UsageError("too many hosts per vendor");
  SimNetwork net;
  net.profiles = std::move(profiles);
  net.loss = loss;
  net.acl_drop = acl_drop;
  net.rng_seed = seed;
  Rng rng(derive_seed({seed, 0x686F7073}));
  for (std::size_t p = 0; p < net.profiles.size(); ++p) {
    for (std::size_t i = 0; i < per_vendor; ++i) {
      SimHost h;
      h.address = Ipv4Address(10, static_cast<std::uint8_t>(p), static_cast<std::uint8_t>(i / 250),
                              static_cast<std::uint8_t>(i % 250 + 1));
      h.profile = p;
      h.hops = static_cast<int>(rng.between(1, 20));
      net.hosts.push_back(h);
    }
  }
  net.validate();
  return net;
}

std::string network_to_json(const SimNetwork& network) {
  ojson j;
  j["seed"] = network.rng_seed;
  j["loss"] = network.loss;
  j["acl_drop"] = network.acl_drop;
  j["hosts"] = ojson::array();
  for (const auto& h : network.hosts) {
    j["hosts"].push_back({{"ip", h.address.to_string()},
                          {"vendor", network.profiles[h.profile].vendor},
                          {"hops", h.hops}});
  }
  return j.dump(1) + "\n";
}

SimNetwork network_from_json(const std::string& text, const std::vector<StackProfile>& profiles,
                             const std::string& origin) {
  try {
    const ojson j = ojson::parse(text);
    SimNetwork net;
    net.profiles = profiles;
    net.rng_seed = j.value("seed", std::uint64_t{1});
    net.loss = j.value("loss", 0.0);
    net.acl_drop = j.value("acl_drop", 0.0);
    for (const auto& h : j.at("hosts")) {
      SimHost host;
      host.address = Ipv4Address::parse(h.at("ip").get<std::string>());
      const std::string vendor = h.at("vendor").get<std::string>();
      const auto it = std::find_if(profiles.begin(), profiles.end(),
                                   [&](const StackProfile& p) { return p.vendor == vendor; });
      if (it == profiles.end()) throw ConfigError("no profile for vendor '" + vendor + "'");
      host.profile = static_cast<std::size_t>(it - profiles.begin());
      host.hops = h.at("hops").get<int>();
      net.hosts.push_back(host);
    }
    net.validate();
    return net;
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

// --- respond ----------------------------------------------------------------

std::optional<RawPacket> respond(const StackProfile& profile, int hops, const ProbeSpec& probe,
                                 Rng& rng) {
  if (!profile.answers(probe.id)) return std::nullopt;
  Packet reply;
  reply.ip = reply_ip(profile, hops, probe, rng);
  const Packet& sent = probe.packet.parsed;
  if (sent.tcp()) {
    reply.transport = tcp_reset(profile, probe, rng);
    if (profile.rst_has_data) reply.payload.assign(kRstText, kRstText + sizeof kRstText - 1);
  } else if (sent.udp()) {
    reply.transport = port_unreachable(profile, hops, probe);
  } else if (sent.icmp()) {
    auto m = icmp_reply(profile, hops, probe);
    if (!m) return std::nullopt;
    reply.transport = std::move(*m);
  } else {
    return std::nullopt;
  }
  return encode_packet(reply);
}

// --- transport --------------------------------------------------------------

SimTransport::SimTransport(SimNetwork network, std::int64_t start_ms)
    : network_(std::move(network)), clock_(start_ms) {
  network_.validate();
  for (std::size_t i = 0; i < network_.hosts.size(); ++i) {
    index_[network_.hosts[i].address.value()] = i;
  }
}

void SimTransport::send(const ProbeSpec& probe) {
  std::lock_guard lock(mu_);
  ++sends_;
  const std::string pid = probe.id.to_string();
  const int attempt = ++attempts_[{probe.target.value(), pid}];
  const auto it = index_.find(probe.target.value());
  if (it == index_.end()) return;
  const SimHost& host = network_.hosts[it->second];
  const std::uint64_t seed = network_.rng_seed;
  const std::uint64_t pkey = text_hash(pid);
  const std::uint64_t target = probe.target.value();

  if (Rng(derive_seed({seed, target, pkey, 0xAC1})).chance(network_.acl_drop)) return;
  if (Rng(derive_seed({seed, target, pkey, static_cast<std::uint64_t>(attempt), 0x1055}))
          .chance(network_.loss)) {
    return;
  }
  Rng rng(derive_seed({seed, target, pkey, static_cast<std::uint64_t>(attempt)}));
  auto reply = respond(network_.profiles[host.profile], host.hops, probe, rng);
  if (!reply) return;
  const std::int64_t at = clock_ + 2 * host.hops + 1 + static_cast<std::int64_t>(rng.below(5));
  queue_.push({at, order_++, Received{probe.target, std::move(*reply), at}});
}

std::vector<Received> SimTransport::poll(std::int64_t deadline_ms) {
  std::lock_guard lock(mu_);
  std::vector<Received> out;
  if (queue_.empty() || queue_.top().at > deadline_ms) {
    if (deadline_ms != std::numeric_limits<std::int64_t>::max()) {
      clock_ = std::max(clock_, deadline_ms);
    }
    return out;
  }
  clock_ = std::max(clock_, queue_.top().at);
  while (!queue_.empty() && queue_.top().at <= clock_) {
    out.push_back(queue_.top().packet);
    queue_.pop();
  }
  return out;
}

std::int64_t SimTransport::now_ms() {
  std::lock_guard lock(mu_);
  return clock_;
}

std::size_t SimTransport::sends() const {
  std::lock_guard lock(mu_);
  return sends_;
}

int SimTransport::attempts(Ipv4Address target, const ProbeId& id) const {
  std::lock_guard lock(mu_);
  const auto it = attempts_.find({target.value(), id.to_string()});
  return it == attempts_.end() ? 0 : it->second;
}

// --- datasets ---------------------------------------------------------------

Dataset synthesize_dataset(const SimNetwork& network, const ProbeSet& probeset,
                           const ScanConfig& config) {
  SimTransport transport(network);
  std::vector<Ipv4Address> targets;
  Dataset ds;
  for (const auto& h : network.hosts) {
    targets.push_back(h.address);
    ds.labels[h.address] = network.profiles[h.profile].vendor;
  }
  ds.records = run_scan(targets, probeset, transport, config);
  return ds;
}

void save_labels(const std::string& path, const std::map<Ipv4Address, std::string>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "ip,vendor\n";
  for (const auto& [ip, vendor] : labels) out << ip.to_string() << ',' << vendor << '\n';
}

std::map<Ipv4Address, std::string> parse_labels(const std::string& text, const std::string& origin) {
  std::map<Ipv4Address, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line == "ip,vendor")) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(origin, lineno, "expected 'ip,vendor'");
    const auto ip = Ipv4Address::try_parse(line.substr(0, comma));
    const std::string vendor = line.substr(comma + 1);
    if (!ip || vendor.empty()) throw ParseError(origin, lineno, "expected 'ip,vendor'");
    if (!out.emplace(*ip, vendor).second) {
      throw ParseError(origin, lineno, "duplicate label for " + ip->to_string());
    }
  }
  return out;
}

std::map<Ipv4Address, std::string> load_labels(const std::string& path) {
  return parse_labels(read_file(path), path);
}

}  // namespace devprint
