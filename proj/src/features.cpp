#include "devprint/features.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "devprint/error.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::string_view kYesNo = "Y | N | NA | ABSENT";
constexpr std::string_view kCmp = "Z | S | S+ | O | NA | ABSENT";

std::string yn(bool b) { return b ? "Y" : "N"; }

std::string cmp_code(std::uint32_t value, std::uint32_t counterpart) {
  if (value == 0) return "Z";
  if (value == counterpart) return "S";
  if (value == counterpart + 1) return "S+";
  return "O";
}

// Nmap's flag order.
std::string flag_letters(std::uint8_t flags) {
  static constexpr std::pair<std::uint8_t, char> order[] = {
      {tcpflag::ece, 'E'}, {tcpflag::urg, 'U'}, {tcpflag::ack, 'A'}, {tcpflag::psh, 'P'},
      {tcpflag::rst, 'R'}, {tcpflag::syn, 'S'}, {tcpflag::fin, 'F'}, {tcpflag::cwr, 'C'}};
  std::string out;
  for (auto [bit, c] : order) {
    if (flags & bit) out += c;
  }
  return out.empty() ? "none" : out;
}

bool applies(std::string_view feature, const ProbeId& probe) {
  const bool udp = probe.is_udp();
  const bool tcp = probe.is_tcp();
  const bool icmp = probe.is_icmp();
  const bool echo = probe.kind == ProbeKind::icmp_echo1 || probe.kind == ProbeKind::icmp_echo2;
  if (feature == "ip_initial_ttl" || feature == "ip_initial_ttl_guess" || feature == "resp" ||
      feature == "ip_df") {
    return true;
  }
  if (feature == "udp_checksum_integrity" || feature == "returned_ip_id" ||
      feature == "ip_total_length" || feature == "icmp_unused_nonzero" ||
      feature == "udp_data_integrity") {
    return udp;
  }
  if (feature.starts_with("tcp_")) return tcp;
  if (feature == "icmp_type") return udp || icmp;
  if (feature == "icmp_code") return udp || (icmp && !echo);
  if (feature == "icmp_echo_code") return echo;
  if (feature == "icmp_id" || feature == "icmp_seq") return icmp;
  if (feature == "icmp_addr_mask") {
    return probe.kind == ProbeKind::icmp_addrmask ||
           (probe.kind == ProbeKind::fuzz && (probe.icmp_type == 17 || probe.icmp_type == 18));
  }
  return false;
}

// Hop count implied by the first ICMP error that quotes one of our probes,
// looking at UDP1 first.
std::optional<int> hops_from_quotes(const FingerprintRecord& record,
                                    const std::vector<ProbeSpec>& sent) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < sent.size(); ++i) {
    if (sent[i].id.is_udp()) order.insert(order.begin(), i);
    else order.push_back(i);
  }
  for (std::size_t i : order) {
    const auto* resp = record.find(sent[i].id);
    if (!resp || !*resp) continue;
    const auto* icmp = (*resp)->packet.parsed.icmp();
    if (!icmp) continue;
    const auto* err = std::get_if<IcmpError>(&icmp->body);
    if (!err || err->quoted.size() < 20) continue;
    const int hops = int{sent[i].sent_ttl} - int{err->quoted[8]};
    if (hops >= 0) return hops;
  }
  return std::nullopt;
}

struct Context {
  const ProbeSpec& sent;
  const ProbeResponse& resp;
  std::optional<int> hops;
};

std::string udp_value(std::string_view feature, const Context& c) {
  const Packet& reply = c.resp.packet.parsed;
  if (feature == "ip_total_length") return std::to_string(reply.ip.total_length);
  const auto* icmp = reply.icmp();
  const IcmpError* err = icmp ? std::get_if<IcmpError>(&icmp->body) : nullptr;
  if (!err) return std::string(kNotApplicable);
  if (feature == "icmp_unused_nonzero") {
    return yn(std::any_of(err->unused.begin(), err->unused.end(), [](auto b) { return b != 0; }));
  }
  const Bytes& q = err->quoted;
  const Bytes& s = c.sent.packet.bytes;
  if (q.size() < 20) return std::string(kNotApplicable);
  const std::size_t ihl = std::size_t{q[0] & 0x0Fu} * 4;
  if (feature == "returned_ip_id") return yn(q[4] == s[4] && q[5] == s[5]);
  if (feature == "udp_checksum_integrity") {
    if (q.size() < ihl + 8) return std::string(kNotApplicable);
    return yn(q[ihl + 6] == s[26] && q[ihl + 7] == s[27]);
  }
  if (feature == "udp_data_integrity") {
    if (q.size() <= ihl + 8) return std::string(kNotApplicable);
    const std::size_t n = std::min(q.size() - ihl - 8, s.size() - 28);
    return yn(std::equal(q.begin() + static_cast<long>(ihl + 8),
                         q.begin() + static_cast<long>(ihl + 8 + n), s.begin() + 28));
  }
  return std::string(kNotApplicable);
}

std::string tcp_value(std::string_view feature, const Context& c) {
  const auto* t = c.resp.packet.parsed.tcp();
  const auto* st = c.sent.packet.parsed.tcp();
  if (!t || !st) return std::string(kNotApplicable);
  if (feature == "tcp_rst_data") return yn(t->has(tcpflag::rst) && !c.resp.packet.parsed.payload.empty());
  if (feature == "tcp_flags") return flag_letters(t->flags);
  if (feature == "tcp_window") return std::to_string(t->window);
  if (feature == "tcp_ack_cmp") return cmp_code(t->ack, st->seq);
  if (feature == "tcp_seq_cmp") return cmp_code(t->seq, st->ack);
  if (feature == "tcp_options") {
    const std::string sig = tcp_option_signature(t->options);
    return sig.empty() ? "none" : sig;
  }
  if (feature == "tcp_quirks") {
    std::string q;
    if (t->reserved != 0) q += 'R';
    if (!t->has(tcpflag::urg) && t->urgent_ptr != 0) q += 'U';
    return q.empty() ? "none" : q;
  }
  return std::string(kNotApplicable);
}

std::string icmp_value(std::string_view feature, const Context& c) {
  const auto* m = c.resp.packet.parsed.icmp();
  if (!m) return std::string(kNotApplicable);
  if (feature == "icmp_type") return std::to_string(m->type);
  if (feature == "icmp_code" || feature == "icmp_echo_code") return std::to_string(m->code);
  // Bytes 4..7 of an error are not an id/seq pair.
  if (std::holds_alternative<IcmpError>(m->body)) return std::string(kNotApplicable);
  if (feature == "icmp_id") return std::to_string(m->identifier);
  if (feature == "icmp_seq") return std::to_string(m->sequence);
  if (feature == "icmp_addr_mask") {
    const auto* mask = std::get_if<IcmpAddressMask>(&m->body);
    if (!mask) return std::string(kNotApplicable);
    return Ipv4Address(mask->mask[0], mask->mask[1], mask->mask[2], mask->mask[3]).to_string();
  }
  return std::string(kNotApplicable);
}

std::string slot_value(std::string_view feature, const Context& c) {
  const Packet& reply = c.resp.packet.parsed;
  if (feature == "resp") return "Y";
  if (feature == "ip_df") return yn(reply.ip.df);
  if (feature == "ip_initial_ttl") {
    const auto v = initial_ttl(c.resp.observed_ttl, c.sent.sent_ttl,
                               c.hops ? std::optional<int>(c.sent.sent_ttl - *c.hops) : std::nullopt);
    return v ? std::to_string(*v) : std::string(kNotApplicable);
  }
  if (feature == "ip_initial_ttl_guess") {
    if (c.hops) return std::string(kNotApplicable);
    return std::to_string(initial_ttl_guess(c.resp.observed_ttl));
  }
  if (feature.starts_with("tcp_")) return tcp_value(feature, c);
  if (feature == "udp_checksum_integrity" || feature == "returned_ip_id" ||
      feature == "ip_total_length" || feature == "icmp_unused_nonzero" ||
      feature == "udp_data_integrity") {
    return udp_value(feature, c);
  }
  return icmp_value(feature, c);
}

}  // namespace

const std::vector<FeatureInfo>& feature_table() {
  static const std::vector<FeatureInfo> table = {
      {"ip_initial_ttl", "Initial TTL of the reply, from the hop count implied by a quoted probe",
       "integer | NA | ABSENT"},
      {"ip_initial_ttl_guess", "Closest initial TTL not below the observed one, when it cannot be calculated",
       "32 | 64 | 128 | 256 | NA | ABSENT"},
      {"resp", "Was the probe answered", "Y | N"},
      {"udp_checksum_integrity", "Quoted UDP checksum returned as sent", kYesNo},
      {"tcp_rst_data", "Reset carries data", kYesNo},
      {"tcp_flags", "Flags of the TCP reply, Nmap order", "letters of EUAPRSFC | none | NA | ABSENT"},
      {"icmp_seq", "ICMP sequence number in the reply", "integer | NA | ABSENT"},
      {"icmp_addr_mask", "Address mask in the reply", "dotted quad | NA | ABSENT"},
      {"icmp_id", "ICMP identifier in the reply", "integer | NA | ABSENT"},
      {"returned_ip_id", "Quoted IP ID returned as sent", kYesNo},
      {"icmp_code", "ICMP code of the reply", "integer | NA | ABSENT"},
      {"tcp_window", "TCP window of the reply", "integer | NA | ABSENT"},
      {"tcp_ack_cmp", "Reply acknowledgment number against the probe sequence number", kCmp},
      {"icmp_echo_code", "ICMP code of the reply to an Nmap echo probe", "integer | NA | ABSENT"},
      {"tcp_options", "TCP option signature of the reply, order preserved",
       "signature | none | NA | ABSENT"},
      {"ip_df", "Don't-fragment bit of the reply", "Y | N | ABSENT"},
      {"tcp_seq_cmp", "Reply sequence number against the probe acknowledgment number", kCmp},
      {"ip_total_length", "IP total length of the reply to UDP1", "integer | ABSENT"},
      {"icmp_unused_nonzero", "Unused field of the port unreachable is set", kYesNo},
      {"udp_data_integrity", "Quoted UDP payload returned as sent", kYesNo},
      {"icmp_type", "ICMP type of the reply", "integer | NA | ABSENT"},
      {"tcp_quirks", "R: reserved bits set, U: urgent pointer without URG",
       "R | U | RU | none | NA | ABSENT"},
  };
  return table;
}

std::vector<Slot> schema_slots(const ProbeSet& probeset) {
  std::vector<Slot> slots;
  for (const auto& id : probeset.ids()) {
    for (const auto& f : feature_table()) {
      if (applies(f.name, id)) slots.push_back({std::string(f.name), id});
    }
  }
  return slots;
}

std::string_view slot_feature(std::string_view slot_name) {
  return slot_name.substr(0, slot_name.find('@'));
}

const std::string* FeatureVector::get(std::string_view slot) const {
  for (const auto& [k, v] : values) {
    if (k == slot) return &v;
  }
  return nullptr;
}

std::optional<int> initial_ttl(int observed_ttl, int sent_ttl, std::optional<int> quoted_ttl) {
  if (!quoted_ttl) return std::nullopt;
  return observed_ttl + (sent_ttl - *quoted_ttl);
}

int initial_ttl_guess(int observed_ttl) {
  for (int v : {32, 64, 128}) {
    if (observed_ttl <= v) return v;
  }
  return 256;
}

FeatureVector extract_features(const FingerprintRecord& record, const ProbeSet& probeset,
                               const StaticIds& ids) {
  for (const auto& id : probeset.ids()) {
    if (!record.find(id)) {
      throw SchemaError("record for " + record.target.to_string() + " has no entry for probe " +
                        id.to_string());
    }
  }
  const auto sent = probeset.materialize(record.target, record.scan_port, ids);
  const auto hops = hops_from_quotes(record, sent);

  FeatureVector out;
  for (const auto& spec : sent) {
    const auto& resp = *record.find(spec.id);
    const std::string probe = spec.id.to_string();
    for (const auto& f : feature_table()) {
      if (!applies(f.name, spec.id)) continue;
      std::string name = std::string(f.name) + "@" + probe;
      if (!resp) {
        out.values.emplace_back(std::move(name), f.name == "resp" ? "N" : std::string(kAbsent));
        continue;
      }
      out.values.emplace_back(std::move(name), slot_value(f.name, Context{spec, *resp, hops}));
    }
  }
  return out;
}

std::string schema_json(const ProbeSet& probeset) {
  ojson j;
  j["version"] = kSchemaVersion;
  j["probeset"] = probeset.name();
  j["features"] = ojson::array();
  int rank = 1;
  for (const auto& f : feature_table()) {
    j["features"].push_back({{"name", f.name},
                             {"rank", rank++},
                             {"description", f.description},
                             {"alphabet", f.alphabet}});
  }
  j["slots"] = ojson::array();
  for (const auto& s : schema_slots(probeset)) j["slots"].push_back(s.name());
  return j.dump(2) + "\n";
}

void write_feature_vectors(std::ostream& out, const std::vector<LabeledVector>& rows) {
  for (const auto& r : rows) {
    ojson j;
    j["target"] = r.target.to_string();
    ojson v = ojson::object();
    for (const auto& [k, val] : r.vector.values) v[k] = val;
    j["vector"] = std::move(v);
    out << j.dump() << '\n';
  }
}

std::vector<LabeledVector> read_feature_vectors(std::istream& in, const std::string& origin) {
  std::vector<LabeledVector> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const ojson j = ojson::parse(line);
      LabeledVector r;
      r.target = Ipv4Address::parse(j.at("target").get<std::string>());
      for (const auto& [k, v] : j.at("vector").items()) {
        r.vector.values.emplace_back(k, v.get<std::string>());
      }
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  return rows;
}

void save_feature_vectors(const std::string& path, const std::vector<LabeledVector>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_feature_vectors(out, rows);
}

std::vector<LabeledVector> load_feature_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_feature_vectors(in, path);
}

}  // namespace devprint
