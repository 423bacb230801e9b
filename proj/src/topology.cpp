#include "devprint/topology.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "devprint/error.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const auto start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::uint32_t mask_of(int len) {
  return len == 0 ? 0 : ~std::uint32_t{0} << (32 - len);
}

}  // namespace

// --- aliases ------------------------------------------------------------------

void AliasMap::add(const std::string& node, Ipv4Address ip) {
  const auto [it, fresh] = node_of.emplace(ip, node);
  if (!fresh) {
    if (it->second == node) return;
    throw DataError(ip.to_string() + " listed under both " + it->second + " and " + node);
  }
  nodes[node].push_back(ip);
}

AliasMap parse_itdk_nodes(const std::string& text, const std::string& origin) {
  AliasMap out;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto colon = line.find(':');
    const auto head = split_ws(line.substr(0, colon == std::string_view::npos ? 0 : colon));
    if (colon == std::string_view::npos || head.size() != 2 || head[0] != "node" ||
        head[1].size() < 2 || head[1][0] != 'N') {
      throw ParseError(origin, lineno, "expected 'node N<id>: <ip> ...'");
    }
    const std::string node(head[1]);
    const auto addrs = split_ws(line.substr(colon + 1));
    if (addrs.empty()) throw ParseError(origin, lineno, node + " has no addresses");
    for (auto a : addrs) {
      const auto ip = Ipv4Address::try_parse(a);
      if (!ip) throw ParseError(origin, lineno, "bad address '" + std::string(a) + "'");
      try {
        out.add(node, *ip);
      } catch (const DataError& e) {
        throw ParseError(origin, lineno, e.what());
      }
    }
  }
  return out;
}

AliasMap load_itdk_nodes(const std::string& path) { return parse_itdk_nodes(read_file(path), path); }

std::string format_itdk_nodes(const AliasMap& aliases) {
  std::string out;
  for (const auto& [node, ips] : aliases.nodes) {
    out += "node " + node + ":";
    for (auto ip : ips) out += "  " + ip.to_string();
    out += '\n';
  }
  return out;
}

DealiasResult dealias(const std::vector<FingerprintRecord>& records,
                      const std::map<Ipv4Address, std::string>& labels, const AliasMap& aliases) {
  // Device key: node id, or the address itself for unaliased records.
  std::map<std::string, std::vector<const FingerprintRecord*>> devices;
  std::set<Ipv4Address> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.target).second) {
      throw DataError("duplicate fingerprint for " + r.target.to_string());
    }
    const auto it = aliases.node_of.find(r.target);
    devices[it == aliases.node_of.end() ? "@" + r.target.to_string() : it->second].push_back(&r);
  }

  DealiasResult out;
  std::vector<std::pair<const FingerprintRecord*, std::string>> reps;
  for (const auto& [key, members] : devices) {
    const FingerprintRecord* rep = members.front();
    std::map<Ipv4Address, std::string> member_labels;
    std::set<std::string> vendors;
    for (const auto* m : members) {
      const auto c = m->response_count(), best = rep->response_count();
      if (c > best || (c == best && m->target < rep->target)) rep = m;
      if (const auto l = labels.find(m->target); l != labels.end()) {
        member_labels.emplace(m->target, l->second);
        vendors.insert(l->second);
      }
    }
    const bool aliased = key.front() != '@';
    if (vendors.size() > 1) {
      out.conflicts.push_back({key, std::move(member_labels)});
      continue;
    }
    out.merged += members.size() - 1;
    if (!vendors.empty()) out.labels.emplace(rep->target, *vendors.begin());
    out.device.emplace(rep->target, aliased ? key : "");
    reps.emplace_back(rep, key);
  }
  std::sort(reps.begin(), reps.end(),
            [](const auto& a, const auto& b) { return a.first->target < b.first->target; });
  for (const auto& [rep, key] : reps) out.records.push_back(*rep);
  return out;
}

VendorFilter filter_top_vendors(const std::map<Ipv4Address, std::string>& labels, std::size_t k) {
  if (k == 0) throw UsageError("vendor count k must be at least 1");
  std::map<std::string, std::size_t> hist;
  for (const auto& [ip, v] : labels) ++hist[v];
  std::vector<std::pair<std::string, std::size_t>> order(hist.begin(), hist.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  VendorFilter out;
  out.short_of_k = order.size() < k;
  std::set<std::string> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < k) {
      keep.insert(order[i].first);
      out.kept.push_back(order[i].first);
    } else {
      out.removed[order[i].first] = order[i].second;
    }
  }
  for (const auto& [ip, v] : labels) {
    if (keep.count(v)) out.labels.emplace(ip, v);
  }
  return out;
}

// --- traceroutes --------------------------------------------------------------

void write_traces(std::ostream& out, const std::vector<TracerouteRecord>& traces) {
  for (const auto& t : traces) {
    ojson j;
    j["source_id"] = t.source_id;
    j["source_country"] = t.source_country;
    j["dst"] = t.dst.to_string();
    j["hops"] = ojson::array();
    for (const auto& h : t.hops) j["hops"].push_back(h ? ojson(h->to_string()) : ojson(nullptr));
    out << j.dump() << '\n';
  }
}

std::vector<TracerouteRecord> read_traces(std::istream& in, const std::string& origin) {
  std::vector<TracerouteRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = ojson::parse(line);
      for (const auto& [key, v] : j.items()) {
        if (key != "source_id" && key != "source_country" && key != "dst" && key != "hops") {
          throw DataError("unknown field '" + key + "'");
        }
      }
      TracerouteRecord t;
      t.source_id = j.at("source_id").get<std::string>();
      t.source_country = j.at("source_country").get<std::string>();
      t.dst = Ipv4Address::parse(j.at("dst").get<std::string>());
      for (const auto& h : j.at("hops")) {
        t.hops.push_back(h.is_null() ? std::nullopt
                                     : std::optional(Ipv4Address::parse(h.get<std::string>())));
      }
      if (t.hops.empty()) throw DataError("a traceroute needs at least one hop");
      out.push_back(std::move(t));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  return out;
}

void save_traces(const std::string& path, const std::vector<TracerouteRecord>& traces) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_traces(out, traces);
}

std::vector<TracerouteRecord> load_traces(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_traces(in, path);
}

// --- geo ----------------------------------------------------------------------

void GeoTable::add(Ipv4Address network, int prefix_len, const std::string& continent) {
  if (prefix_len < 0 || prefix_len > 32) {
    throw DataError("prefix length " + std::to_string(prefix_len) + " out of range");
  }
  if (continent.size() != 2 || !std::all_of(continent.begin(), continent.end(),
                                            [](char c) { return c >= 'A' && c <= 'Z'; })) {
    throw DataError("continent code must be two capital letters, got '" + continent + "'");
  }
  const auto m = mask_of(prefix_len);
  if ((network.value() & ~m) != 0) {
    throw DataError(network.to_string() + "/" + std::to_string(prefix_len) + " has host bits set");
  }
  if (!by_len_[prefix_len].emplace(network.value(), continent).second) {
    throw DataError("prefix " + network.to_string() + "/" + std::to_string(prefix_len) + " repeated");
  }
}

std::string GeoTable::lookup(Ipv4Address ip) const {
  for (int len = 32; len >= 0; --len) {
    if (by_len_[len].empty()) continue;
    const auto it = by_len_[len].find(ip.value() & mask_of(len));
    if (it != by_len_[len].end()) return it->second;
  }
  return std::string(kNoContinent);
}

std::size_t GeoTable::size() const {
  std::size_t n = 0;
  for (const auto& m : by_len_) n += m.size();
  return n;
}

GeoTable GeoTable::parse(const std::string& text, const std::string& origin) {
  GeoTable g;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "prefix,continent") throw ParseError(origin, lineno, "expected header 'prefix,continent'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    const auto slash = line.find('/');
    if (comma == std::string_view::npos || slash == std::string_view::npos || slash > comma) {
      throw ParseError(origin, lineno, "expected '<a.b.c.d>/<len>,<continent>'");
    }
    const auto ip = Ipv4Address::try_parse(line.substr(0, slash));
    int len = -1;
    const auto lenv = line.substr(slash + 1, comma - slash - 1);
    const auto r = std::from_chars(lenv.data(), lenv.data() + lenv.size(), len);
    if (!ip || r.ec != std::errc() || r.ptr != lenv.data() + lenv.size()) {
      throw ParseError(origin, lineno, "bad prefix '" + std::string(line.substr(0, comma)) + "'");
    }
    try {
      g.add(*ip, len, std::string(trim(line.substr(comma + 1))));
    } catch (const DataError& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  if (!header) throw ParseError(origin, lineno, "missing header 'prefix,continent'");
  return g;
}

GeoTable GeoTable::load(const std::string& path) { return parse(read_file(path), path); }

// --- annotation and prevalence ------------------------------------------------

std::vector<AnnotatedTrace> annotate_traceroutes(
    const std::vector<TracerouteRecord>& traces, const RandomForest& model,
    const std::map<Ipv4Address, FingerprintRecord>& fingerprints, const ProbeSet& probeset,
    const StaticIds& ids) {
  std::map<Ipv4Address, std::string> cache;
  auto label_of = [&](Ipv4Address ip) -> const std::string& {
    auto it = cache.find(ip);
    if (it != cache.end()) return it->second;
    std::string label(kUnresponsive);
    const auto fp = fingerprints.find(ip);
    if (fp != fingerprints.end() && fp->second.response_count() > 0) {
      label = model.predict(extract_features(fp->second, probeset, ids));
    }
    return cache.emplace(ip, std::move(label)).first->second;
  };
  std::vector<AnnotatedTrace> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    AnnotatedTrace a{t, {}};
    for (const auto& h : t.hops) a.vendors.push_back(h ? label_of(*h) : std::string(kUnresponsive));
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<PrevalenceRow> prevalence(const std::vector<AnnotatedTrace>& traces, const GeoTable& geo) {
  struct Group {
    std::size_t n = 0;
    std::map<std::string, std::size_t> with;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  for (const auto& a : traces) {
    std::set<std::string> vendors;
    for (const auto& v : a.vendors) {
      if (v != kUnresponsive && v != kUnknown) vendors.insert(v);
    }
    for (const auto& cont : {geo.lookup(a.trace.dst), std::string("ALL")}) {
      auto& g = groups[{a.trace.source_country, cont}];
      ++g.n;
      for (const auto& v : vendors) ++g.with[v];
    }
  }
  std::vector<PrevalenceRow> out;
  for (const auto& [key, g] : groups) {
    for (const auto& [vendor, count] : g.with) {
      out.push_back({key.first, key.second, vendor, static_cast<double>(count) / g.n, g.n});
    }
  }
  return out;
}

void write_prevalence(std::ostream& out, const std::vector<PrevalenceRow>& rows) {
  out << "source,continent,vendor,probability,n\n";
  for (const auto& r : rows) {
    out << r.source << ',' << r.continent << ',' << r.vendor << ',' << fmt_double(r.probability) << ','
        << r.traces << '\n';
  }
}

}  // namespace devprint
