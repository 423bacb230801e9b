#include "devprint/probes.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "devprint/error.hpp"

namespace devprint {

namespace {

constexpr std::uint16_t kEcho1Sequence = 295;
constexpr std::uint16_t kUdpIpId = 0x1042;
constexpr std::size_t kUdpPayloadLen = 300;
constexpr std::uint16_t kFuzzIdOffset = 16;

struct KindName {
  ProbeKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {ProbeKind::udp1, "UDP1"},
    {ProbeKind::icmp_echo1, "ICMP_ECHO1"},
    {ProbeKind::icmp_echo2, "ICMP_ECHO2"},
    {ProbeKind::tcp1, "TCP1"},
    {ProbeKind::tcp2, "TCP2"},
    {ProbeKind::tcp3, "TCP3"},
    {ProbeKind::icmp_timestamp, "ICMP_TIMESTAMP"},
    {ProbeKind::icmp_addrmask, "ICMP_ADDRMASK"},
};

// Offsets from StaticIds::ip_id, one per fixed probe.
std::uint16_t ip_id_offset(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::icmp_echo1: return 0;
    case ProbeKind::icmp_echo2: return 1;
    case ProbeKind::tcp1: return 2;
    case ProbeKind::tcp2: return 3;
    case ProbeKind::tcp3: return 4;
    case ProbeKind::icmp_timestamp: return 5;
    case ProbeKind::icmp_addrmask: return 6;
    default: return 7;
  }
}

std::vector<TcpOption> nmap_tcp_options(std::uint8_t wscale) {
  return {TcpOption::wscale(wscale), TcpOption::nop(), TcpOption::mss(265),
          TcpOption::timestamp(0xFFFFFFFF, 0), TcpOption::sack_permitted()};
}

Ipv4Header base_ip(const StaticIds& ids, Ipv4Address target, std::uint16_t ip_id) {
  Ipv4Header ip;
  ip.identification = ip_id;
  ip.ttl = ids.sent_ttl;
  ip.src = ids.source;
  ip.dst = target;
  return ip;
}

ProbeSpec make_spec(ProbeId id, Ipv4Address target, std::optional<std::uint16_t> port,
                    const Packet& packet, const StaticIds& ids) {
  return {id, target, port, encode_packet(packet), ids.sent_ttl};
}

ProbeSpec icmp_echo(ProbeKind kind, Ipv4Address target, const StaticIds& ids) {
  const bool first = kind == ProbeKind::icmp_echo1;
  Packet p;
  p.ip = base_ip(ids, target, static_cast<std::uint16_t>(ids.ip_id + ip_id_offset(kind)));
  p.ip.tos = first ? 0 : 4;
  p.ip.df = first;
  IcmpMessage m;
  m.type = icmptype::echo_request;
  m.code = first ? 9 : 0;
  m.identifier = static_cast<std::uint16_t>(ids.icmp_id + (first ? 0 : 1));
  m.sequence = static_cast<std::uint16_t>(kEcho1Sequence + (first ? 0 : 1));
  m.body = IcmpEcho{Bytes(first ? 120 : 150, 0x00)};
  p.transport = m;
  return make_spec({kind}, target, std::nullopt, p, ids);
}

ProbeSpec udp1(Ipv4Address target, std::uint16_t port, const StaticIds& ids) {
  Packet p;
  p.ip = base_ip(ids, target, kUdpIpId);
  UdpHeader u;
  u.src_port = static_cast<std::uint16_t>(ids.src_port + 3);
  u.dst_port = port;
  p.transport = u;
  p.payload.assign(kUdpPayloadLen, 'C');
  return make_spec({ProbeKind::udp1}, target, port, p, ids);
}

ProbeSpec tcp(ProbeKind kind, Ipv4Address target, std::uint16_t port, const StaticIds& ids) {
  const int index = static_cast<int>(kind) - static_cast<int>(ProbeKind::tcp1);
  Packet p;
  p.ip = base_ip(ids, target, static_cast<std::uint16_t>(ids.ip_id + ip_id_offset(kind)));
  TcpHeader t;
  t.src_port = static_cast<std::uint16_t>(ids.src_port + index);
  t.dst_port = port;
  t.seq = ids.tcp_seq + static_cast<std::uint32_t>(index);
  t.ack = ids.tcp_ack;
  switch (kind) {
    case ProbeKind::tcp1:
      t.flags = tcpflag::syn;
      t.window = 31337;
      t.options = nmap_tcp_options(10);
      break;
    case ProbeKind::tcp2:
      t.flags = tcpflag::ack;
      t.window = 32768;
      t.options = nmap_tcp_options(10);
      p.ip.df = true;
      break;
    default:
      t.flags = tcpflag::fin | tcpflag::psh | tcpflag::urg;
      t.window = 65535;
      t.options = nmap_tcp_options(15);
      break;
  }
  p.transport = std::move(t);
  return make_spec({kind}, target, port, p, ids);
}

// Minimal datagram for error-type fuzz messages to quote: 20-byte IPv4 header
// plus an 8-byte UDP header, as if the target had sent it to us.
Bytes synthetic_quote(Ipv4Address target, const StaticIds& ids) {
  Packet q;
  q.ip = base_ip(ids, ids.source, ids.ip_id);
  q.ip.src = target;
  UdpHeader u;
  u.src_port = 33434;
  u.dst_port = static_cast<std::uint16_t>(ids.src_port + 3);
  q.transport = u;
  return encode_packet(q).bytes;
}

IcmpMessage fuzz_message(const IcmpCatalogEntry& e, std::uint16_t identifier,
                         std::uint16_t sequence, Ipv4Address target, const StaticIds& ids,
                         std::uint32_t originate_ms) {
  IcmpMessage m;
  m.type = e.type;
  m.code = e.code;
  m.identifier = identifier;
  m.sequence = sequence;
  switch (e.body) {
    case FuzzBody::echo:
      m.body = IcmpEcho{Bytes(56, 0x00)};
      break;
    case FuzzBody::timestamp:
      m.body = IcmpTimestamps{originate_ms, 0, 0};
      break;
    case FuzzBody::info:
      m.body = IcmpInfo{};
      break;
    case FuzzBody::mask:
      m.body = IcmpAddressMask{};
      break;
    case FuzzBody::error:
      m.body = IcmpError{{}, synthetic_quote(target, ids), nullptr};
      break;
    case FuzzBody::plain:
      m.body = IcmpOpaque{{static_cast<std::uint8_t>(identifier >> 8),
                           static_cast<std::uint8_t>(identifier),
                           static_cast<std::uint8_t>(sequence >> 8),
                           static_cast<std::uint8_t>(sequence)},
                          {}};
      break;
  }
  return m;
}

// The body shape a type must carry for the codec to decode it back the same way.
bool body_fits_type(FuzzBody body, std::uint8_t type) {
  switch (icmp_body_kind(type)) {
    case IcmpBodyKind::echo: return body == FuzzBody::echo;
    case IcmpBodyKind::timestamp: return body == FuzzBody::timestamp;
    case IcmpBodyKind::info: return body == FuzzBody::info;
    case IcmpBodyKind::mask: return body == FuzzBody::mask;
    case IcmpBodyKind::error: return body == FuzzBody::error;
    case IcmpBodyKind::opaque: return body == FuzzBody::plain;
  }
  return false;
}

}  // namespace

// --- ProbeId ----------------------------------------------------------------

std::string ProbeId::to_string() const {
  if (kind == ProbeKind::fuzz) {
    return "FUZZ_" + std::to_string(icmp_type) + "_" + std::to_string(icmp_code);
  }
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return std::string(kn.name);
  }
  return "?";
}

ProbeId ProbeId::parse(std::string_view text) {
  for (const auto& kn : kKindNames) {
    if (kn.name == text) return {kn.kind};
  }
  if (text.starts_with("FUZZ_")) {
    std::string_view rest = text.substr(5);
    const auto sep = rest.find('_');
    unsigned type = 0, code = 0;
    if (sep != std::string_view::npos) {
      auto [p1, e1] = std::from_chars(rest.data(), rest.data() + sep, type);
      auto [p2, e2] =
          std::from_chars(rest.data() + sep + 1, rest.data() + rest.size(), code);
      if (e1 == std::errc{} && e2 == std::errc{} && p1 == rest.data() + sep &&
          p2 == rest.data() + rest.size() && type <= 255 && code <= 255) {
        return fuzz(static_cast<std::uint8_t>(type), static_cast<std::uint8_t>(code));
      }
    }
  }
  throw DataError("unknown probe id '" + std::string(text) + "'");
}

bool ProbeId::is_tcp() const {
  return kind == ProbeKind::tcp1 || kind == ProbeKind::tcp2 || kind == ProbeKind::tcp3;
}

// --- catalog ----------------------------------------------------------------

std::string_view to_string(FuzzBody body) {
  switch (body) {
    case FuzzBody::echo: return "echo";
    case FuzzBody::timestamp: return "timestamp";
    case FuzzBody::info: return "info";
    case FuzzBody::mask: return "mask";
    case FuzzBody::error: return "error";
    case FuzzBody::plain: return "plain";
  }
  return "?";
}

FuzzBody parse_fuzz_body(std::string_view text) {
  for (FuzzBody b : {FuzzBody::echo, FuzzBody::timestamp, FuzzBody::info, FuzzBody::mask,
                     FuzzBody::error, FuzzBody::plain}) {
    if (to_string(b) == text) return b;
  }
  throw ConfigError("unknown ICMP body kind '" + std::string(text) + "'");
}

const std::vector<IcmpCatalogEntry>& standard_icmp_catalog() {
  static const std::vector<IcmpCatalogEntry> catalog = [] {
    std::vector<IcmpCatalogEntry> c;
    auto add = [&](int type, std::initializer_list<int> codes, FuzzBody body) {
      for (int code : codes) {
        c.push_back({static_cast<std::uint8_t>(type), static_cast<std::uint8_t>(code), body});
      }
    };
    add(0, {0}, FuzzBody::echo);
    add(3, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, FuzzBody::error);
    add(4, {0}, FuzzBody::error);
    add(5, {0, 1, 2, 3}, FuzzBody::error);
    add(6, {0}, FuzzBody::plain);
    add(8, {0}, FuzzBody::echo);
    add(9, {0, 16}, FuzzBody::plain);
    add(10, {0}, FuzzBody::plain);
    add(11, {0, 1}, FuzzBody::error);
    add(12, {0, 1, 2}, FuzzBody::error);
    add(13, {0}, FuzzBody::timestamp);
    add(14, {0}, FuzzBody::timestamp);
    add(15, {0}, FuzzBody::info);
    add(16, {0}, FuzzBody::info);
    add(17, {0}, FuzzBody::mask);
    add(18, {0}, FuzzBody::mask);
    for (int type = 30; type <= 39; ++type) add(type, {0}, FuzzBody::plain);
    add(40, {0, 1, 2, 3, 4, 5}, FuzzBody::plain);
    add(41, {0}, FuzzBody::plain);
    add(42, {0}, FuzzBody::plain);
    add(43, {0, 1, 2, 3, 4}, FuzzBody::plain);
    add(253, {0}, FuzzBody::plain);
    add(254, {0}, FuzzBody::plain);
    return c;
  }();
  return catalog;
}

std::vector<IcmpCatalogEntry> parse_icmp_catalog(std::string_view tsv, const std::string& origin) {
  std::vector<IcmpCatalogEntry> out;
  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    int type = -1, code = -1;
    std::string body;
    if (!(fields >> type >> code >> body) || type < 0 || type > 255 || code < 0 || code > 255) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'type<TAB>code<TAB>body-kind'");
    }
    IcmpCatalogEntry e{static_cast<std::uint8_t>(type), static_cast<std::uint8_t>(code),
                       FuzzBody::plain};
    try {
      e.body = parse_fuzz_body(body);
    } catch (const ConfigError& err) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + err.what());
    }
    if (!body_fits_type(e.body, e.type)) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": body kind '" + body +
                        "' does not fit ICMP type " + std::to_string(type));
    }
    out.push_back(e);
  }
  return out;
}

std::vector<IcmpCatalogEntry> load_icmp_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ICMP catalog " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_icmp_catalog(ss.str(), path);
}

std::string format_icmp_catalog(std::span<const IcmpCatalogEntry> catalog) {
  std::string out = "# type\tcode\tbody-kind\n";
  for (const auto& e : catalog) {
    out += std::to_string(e.type) + "\t" + std::to_string(e.code) + "\t" +
           std::string(to_string(e.body)) + "\n";
  }
  return out;
}

// --- builders ---------------------------------------------------------------

std::vector<ProbeSpec> nmap_closed_port_probes(Ipv4Address target, std::uint16_t port,
                                               const StaticIds& ids) {
  std::vector<ProbeSpec> out;
  out.push_back(udp1(target, port, ids));
  out.push_back(icmp_echo(ProbeKind::icmp_echo1, target, ids));
  out.push_back(icmp_echo(ProbeKind::icmp_echo2, target, ids));
  out.push_back(tcp(ProbeKind::tcp1, target, port, ids));
  out.push_back(tcp(ProbeKind::tcp2, target, port, ids));
  out.push_back(tcp(ProbeKind::tcp3, target, port, ids));
  return out;
}

std::vector<ProbeSpec> icmp_fuzz_probes(Ipv4Address target,
                                        std::span<const IcmpCatalogEntry> catalog,
                                        const StaticIds& ids, std::uint32_t originate_ms) {
  std::vector<ProbeSpec> out;
  out.reserve(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto& e = catalog[i];
    if (!body_fits_type(e.body, e.type)) {
      throw ConfigError("catalog entry " + std::to_string(e.type) + "/" + std::to_string(e.code) +
                        " has body kind '" + std::string(to_string(e.body)) +
                        "' that does not fit its type");
    }
    Packet p;
    p.ip = base_ip(ids, target, static_cast<std::uint16_t>(ids.ip_id + 7 + i));
    // Identifier and sequence both differ per entry, so a reply that zeroes
    // one of them still names its probe.
    const auto id = static_cast<std::uint16_t>(ids.icmp_id + kFuzzIdOffset + i);
    p.transport = fuzz_message(e, id, static_cast<std::uint16_t>(i + 1), target, ids, originate_ms);
    out.push_back(make_spec(ProbeId::fuzz(e.type, e.code), target, std::nullopt, p, ids));
  }
  return out;
}

std::vector<ProbeSpec> icmp_fuzz_probes(
    Ipv4Address target, std::span<const std::pair<std::uint8_t, std::uint8_t>> pairs,
    const StaticIds& ids, std::uint32_t originate_ms) {
  const auto& standard = standard_icmp_catalog();
  std::vector<IcmpCatalogEntry> resolved;
  for (const auto& [type, code] : pairs) {
    auto it = std::find_if(standard.begin(), standard.end(), [&](const IcmpCatalogEntry& e) {
      return e.type == type && e.code == code;
    });
    if (it == standard.end()) {
      throw ConfigError("ICMP type " + std::to_string(type) + " code " + std::to_string(code) +
                        " is not in the standardized catalog");
    }
    resolved.push_back(*it);
  }
  return icmp_fuzz_probes(target, resolved, ids, originate_ms);
}

std::vector<ProbeSpec> top_icmp_probes(Ipv4Address target, const StaticIds& ids,
                                       std::uint32_t originate_ms) {
  std::vector<ProbeSpec> out;
  for (ProbeKind kind : {ProbeKind::icmp_timestamp, ProbeKind::icmp_addrmask}) {
    const bool ts = kind == ProbeKind::icmp_timestamp;
    Packet p;
    p.ip = base_ip(ids, target, static_cast<std::uint16_t>(ids.ip_id + ip_id_offset(kind)));
    IcmpMessage m;
    m.type = ts ? icmptype::timestamp_request : icmptype::mask_request;
    m.identifier = static_cast<std::uint16_t>(ids.icmp_id + (ts ? 2 : 3));
    m.sequence = static_cast<std::uint16_t>(kEcho1Sequence + (ts ? 2 : 3));
    if (ts) {
      m.body = IcmpTimestamps{originate_ms, 0, 0};
    } else {
      m.body = IcmpAddressMask{};
    }
    p.transport = m;
    out.push_back(make_spec({kind}, target, std::nullopt, p, ids));
  }
  return out;
}

std::uint32_t ms_since_midnight_utc(std::int64_t unix_ms) {
  constexpr std::int64_t day = 86'400'000;
  return static_cast<std::uint32_t>(((unix_ms % day) + day) % day);
}

// --- ProbeSet ---------------------------------------------------------------

ProbeSet::ProbeSet(std::string name, std::vector<ProbeId> ids,
                   std::vector<IcmpCatalogEntry> fuzz_catalog)
    : name_(std::move(name)), ids_(std::move(ids)), catalog_(std::move(fuzz_catalog)) {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    for (std::size_t j = i + 1; j < ids_.size(); ++j) {
      if (ids_[i] == ids_[j]) {
        throw ConfigError("probe set '" + name_ + "' lists " + ids_[i].to_string() + " twice");
      }
    }
    if (ids_[i].kind == ProbeKind::fuzz) {
      const bool known = std::any_of(catalog_.begin(), catalog_.end(), [&](const auto& e) {
        return e.type == ids_[i].icmp_type && e.code == ids_[i].icmp_code;
      });
      if (!known) throw ConfigError("probe " + ids_[i].to_string() + " is not in the ICMP catalog");
    }
  }
}

ProbeSet ProbeSet::named(std::string_view name, const std::vector<IcmpCatalogEntry>& fuzz_catalog) {
  std::vector<ProbeId> ids;
  auto add = [&](ProbeId id) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  };
  std::size_t start = 0;
  while (start <= name.size()) {
    const auto end = std::min(name.find('+', start), name.size());
    const std::string_view part = name.substr(start, end - start);
    if (part == "nmap") {
      for (auto k : {ProbeKind::udp1, ProbeKind::icmp_echo1, ProbeKind::icmp_echo2,
                     ProbeKind::tcp1, ProbeKind::tcp2, ProbeKind::tcp3}) {
        add({k});
      }
    } else if (part == "topicmp") {
      add({ProbeKind::icmp_timestamp});
      add({ProbeKind::icmp_addrmask});
    } else if (part == "icmp") {
      for (const auto& e : fuzz_catalog) add(ProbeId::fuzz(e.type, e.code));
    } else {
      throw UsageError("unknown probe set component '" + std::string(part) +
                       "' (expected nmap, topicmp or icmp)");
    }
    start = end + 1;
  }
  return ProbeSet(std::string(name), std::move(ids), fuzz_catalog);
}

bool ProbeSet::contains(const ProbeId& id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

bool ProbeSet::needs_port() const {
  return std::any_of(ids_.begin(), ids_.end(), [](const ProbeId& id) { return !id.is_icmp(); });
}

std::vector<ProbeSpec> ProbeSet::materialize(Ipv4Address target, std::uint16_t port,
                                             const StaticIds& ids,
                                             std::uint32_t originate_ms) const {
  std::vector<ProbeSpec> nmap;
  std::vector<ProbeSpec> top;
  std::vector<ProbeSpec> out;
  out.reserve(ids_.size());

  std::vector<IcmpCatalogEntry> fuzz_entries;
  for (const auto& id : ids_) {
    if (id.kind != ProbeKind::fuzz) continue;
    fuzz_entries.push_back(*std::find_if(catalog_.begin(), catalog_.end(), [&](const auto& e) {
      return e.type == id.icmp_type && e.code == id.icmp_code;
    }));
  }
  // Fuzz sequence numbers follow catalog position, so build against the full
  // catalog and pick; a subset then yields the same packets as the full sweep.
  std::vector<ProbeSpec> fuzz;
  if (!fuzz_entries.empty()) fuzz = icmp_fuzz_probes(target, catalog_, ids, originate_ms);

  for (const auto& id : ids_) {
    const std::vector<ProbeSpec>* pool = nullptr;
    if (id.kind == ProbeKind::fuzz) {
      pool = &fuzz;
    } else if (id.kind == ProbeKind::icmp_timestamp || id.kind == ProbeKind::icmp_addrmask) {
      if (top.empty()) top = top_icmp_probes(target, ids, originate_ms);
      pool = &top;
    } else {
      if (nmap.empty()) nmap = nmap_closed_port_probes(target, port, ids);
      pool = &nmap;
    }
    out.push_back(*std::find_if(pool->begin(), pool->end(),
                                [&](const ProbeSpec& s) { return s.id == id; }));
  }
  return out;
}

ProbeSet ProbeSet::restricted_to(const ProbeSet& other) const {
  std::vector<ProbeId> kept;
  for (const auto& id : ids_) {
    if (other.contains(id)) kept.push_back(id);
  }
  return ProbeSet(other.name(), std::move(kept), catalog_);
}

}  // namespace devprint
