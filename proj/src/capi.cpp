#include "devprint.h"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "devprint/error.hpp"
#include "devprint/features.hpp"
#include "devprint/live.hpp"
#include "devprint/pipeline.hpp"
#include "devprint/topology.hpp"
#include "json.hpp"

using namespace devprint;
using ojson = nlohmann::ordered_json;

struct dp_context {
  std::string error;
  std::string error_json;
  std::string report;
  std::string scratch;
};

struct dp_model {
  RandomForest forest;
};

namespace {

// Reads stage options and rejects keys the stage never asked for.
class Options {
 public:
  Options(const char* text, std::string stage) : stage_(std::move(stage)) {
    if (!text || !*text) text = "{}";
    try {
      j_ = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(stage_ + ": options are not valid JSON: " + e.what());
    }
    if (!j_.is_object()) throw UsageError(stage_ + ": options must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_[key].get<T>();
    } catch (const nlohmann::json::exception&) {
      throw UsageError(stage_ + ": option '" + key + "' has the wrong type");
    }
  }

  template <typename T>
  T required(const std::string& key) {
    if (!has(key)) throw UsageError(stage_ + ": missing option '" + key + "'");
    return get<T>(key, T{});
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (has(key) && !(j_[key].is_number_unsigned() || (j_[key].is_number_integer() && j_[key].get<long long>() >= 0))) {
      throw UsageError(stage_ + ": option '" + key + "' must be a non-negative integer");
    }
    return get<std::size_t>(key, fallback);
  }

  // An input file. Its existence is checked by done(), after every option
  // problem has been reported, and before any work starts.
  std::string input(const std::string& key, bool required_key = true) {
    if (!has(key)) {
      if (required_key) throw UsageError(stage_ + ": missing option '" + key + "'");
      return {};
    }
    auto path = get<std::string>(key, "");
    inputs_.push_back(path);
    return path;
  }

  void done() {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw UsageError(stage_ + ": unknown option '" + k + "'");
    }
    for (const auto& path : inputs_) {
      std::error_code ec;
      if (!std::filesystem::is_regular_file(path, ec)) throw DataError(path + ": no such file");
    }
  }

 private:
  nlohmann::json j_;
  std::string stage_;
  std::set<std::string> seen_;
  std::vector<std::string> inputs_;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// "-" is stdout.
void write_to(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  fn(out);
  if (!out) throw DataError(path + ": write failed");
}

void write_text(const std::string& path, const std::string& text) {
  write_to(path, [&](std::ostream& o) { o << text; });
}

void set_error(dp_context* ctx, dp_status status, const std::string& message,
               const ParseError* parse = nullptr) {
  static const char* kinds[] = {"ok", "usage", "data", "internal"};
  ctx->error = message;
  ojson j;
  j["status"] = static_cast<int>(status);
  j["kind"] = kinds[status];
  j["message"] = message;
  if (parse) {
    j["path"] = parse->path();
    j["line"] = parse->line();
  }
  ctx->error_json = j.dump();
}

dp_status run(dp_context* ctx, const std::function<ojson()>& fn) {
  if (!ctx) return DP_USAGE;
  ctx->error.clear();
  ctx->error_json.clear();
  ctx->report.clear();
  try {
    ctx->report = fn().dump();
    return DP_OK;
  } catch (const ParseError& e) {
    set_error(ctx, DP_DATA, e.what(), &e);
    return DP_DATA;
  } catch (const ScanError& e) {
    set_error(ctx, DP_DATA, e.what());
    return DP_DATA;
  } catch (const Error& e) {
    const auto s = static_cast<dp_status>(static_cast<int>(e.kind()));
    set_error(ctx, s, e.what());
    return s;
  } catch (const std::bad_alloc&) {
    set_error(ctx, DP_INTERNAL, "out of memory");
    return DP_INTERNAL;
  } catch (const std::exception& e) {
    set_error(ctx, DP_INTERNAL, std::string("internal error: ") + e.what());
    return DP_INTERNAL;
  } catch (...) {
    set_error(ctx, DP_INTERNAL, "internal error");
    return DP_INTERNAL;
  }
}

ProbeSet probeset_of(Options& o, const char* fallback = "nmap+topicmp") {
  return ProbeSet::named(o.get<std::string>("probeset", fallback));
}

// One address per line, or the first column of a CSV whose header starts
// with "ip". Blank lines and '#' comments are skipped.
std::vector<Ipv4Address> load_targets(const std::string& path) {
  std::istringstream in(read_text(path));
  std::vector<Ipv4Address> out;
  std::set<Ipv4Address> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto field = line.substr(0, line.find(','));
    if (n == 1 && field == "ip") continue;
    const auto ip = Ipv4Address::try_parse(field);
    if (!ip) throw ParseError(path, n, "not an IPv4 address: '" + field + "'");
    if (seen.insert(*ip).second) out.push_back(*ip);
  }
  return out;
}

std::vector<StackProfile> profiles_from(const std::string& path) {
  return path.empty() ? world_profiles() : load_profiles(path);
}

ScanConfig scan_config(Options& o) {
  ScanConfig c;
  c.retries = o.get<int>("retries", c.retries);
  c.timeout_ms = o.get<int>("timeout_ms", c.timeout_ms);
  c.max_in_flight = o.get<int>("max_in_flight", c.max_in_flight);
  c.rng_seed = o.get<std::uint64_t>("seed", c.rng_seed);
  if (o.has("port_range")) {
    static const std::regex re(R"((\d{1,5}):(\d{1,5}))");
    const auto text = o.get<std::string>("port_range", "");
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw UsageError("port range must look like lo:hi");
    const auto lo = std::stoul(m[1]), hi = std::stoul(m[2]);
    if (lo == 0 || hi > 65535 || lo > hi) throw UsageError("bad port range " + text);
    c.port_lo = static_cast<std::uint16_t>(lo);
    c.port_hi = static_cast<std::uint16_t>(hi);
  }
  if (o.has("source")) {
    const auto s = o.get<std::string>("source", "");
    const auto ip = Ipv4Address::try_parse(s);
    if (!ip) throw UsageError("bad source address " + s);
    c.ids.source = *ip;
  }
  c.validate();
  return c;
}

// Rule options are read before done(); the file is loaded after it.
struct RuleSource {
  bool names = true;
  std::string path;

  std::vector<FingerprintRule> load() const {
    std::vector<FingerprintRule> rules;
    if (names) rules = rules_from_vendor_table(vendor_name_table());
    if (!path.empty()) {
      const auto more = load_rules(path);
      rules.insert(rules.end(), more.begin(), more.end());
    }
    return rules;
  }
};

RuleSource rule_source(Options& o) {
  RuleSource r{o.get<bool>("names", true), o.input("rules", false)};
  if (!r.names && r.path.empty()) {
    throw UsageError("no rules: give a rules file or keep the vendor-name rules");
  }
  return r;
}

Hyperparams fixed_params(Options& o) {
  Hyperparams h;
  h.n_trees = o.get<int>("n_trees", h.n_trees);
  if (o.has("max_depth")) h.max_depth = o.get<int>("max_depth", 0);
  if (o.has("max_features")) h.max_features = MaxFeatures::parse(o.get<std::string>("max_features", ""));
  h.min_samples_split = o.get<int>("min_samples_split", h.min_samples_split);
  h.min_samples_leaf = o.get<int>("min_samples_leaf", h.min_samples_leaf);
  h.bootstrap = o.get<bool>("bootstrap", h.bootstrap);
  const auto crit = o.get<std::string>("criterion", "gini");
  if (crit == "gini") h.criterion = Criterion::gini;
  else if (crit == "entropy") h.criterion = Criterion::entropy;
  else throw UsageError("criterion must be gini or entropy");
  return h;
}

ojson label_counts(const std::map<Ipv4Address, std::string>& labels) {
  std::map<std::string, std::size_t> n;
  for (const auto& [ip, v] : labels) ++n[v];
  return n;
}

std::map<Ipv4Address, FingerprintRecord> by_target(std::vector<FingerprintRecord> records) {
  std::map<Ipv4Address, FingerprintRecord> out;
  for (auto& r : records) {
    const auto ip = r.target;
    if (!out.emplace(ip, std::move(r)).second) {
      throw DataError("fingerprints list " + ip.to_string() + " twice");
    }
  }
  return out;
}

// --- stages -------------------------------------------------------------------

ojson probes_dump(Options& o) {
  const auto set = probeset_of(o);
  const auto target = Ipv4Address::parse(o.required<std::string>("target"));
  const auto port = o.get<int>("port", 49152);
  if (port < 1 || port > 65535) throw UsageError("port must be in 1..65535");
  const auto out = o.get<std::string>("out", "-");
  const auto format = o.get<std::string>("format", "jsonl");
  if (format != "jsonl" && format != "hexdump") throw UsageError("format must be jsonl or hexdump");
  StaticIds ids;
  if (o.has("source")) ids.source = Ipv4Address::parse(o.get<std::string>("source", ""));
  const auto originate = o.get<std::uint32_t>("originate_ms", 0);
  o.done();
  const auto probes = set.materialize(target, static_cast<std::uint16_t>(port), ids, originate);
  write_to(out, [&](std::ostream& s) {
    for (const auto& p : probes) {
      if (format == "hexdump") {
        s << "# " << p.id.to_string() << "\n" << hex_dump(p.packet.bytes) << "\n";
        continue;
      }
      ojson j;
      j["probe"] = p.id.to_string();
      j["target"] = p.target.to_string();
      j["port"] = p.dst_port ? ojson(*p.dst_port) : ojson(nullptr);
      j["ttl"] = p.sent_ttl;
      j["bytes"] = to_hex(p.packet.bytes);
      s << j.dump() << "\n";
    }
  });
  return {{"probeset", set.name()}, {"probes", probes.size()}};
}

ojson sim_make_dataset(Options& o) {
  const auto world_dir = o.get<std::string>("world_dir", "");
  if (!world_dir.empty()) {
    WorldParams w;
    w.per_vendor = o.count("per_vendor", w.per_vendor);
    w.minor_devices = o.count("minor_devices", w.minor_devices);
    w.decoys = o.count("decoys", w.decoys);
    w.traces = o.count("traces", w.traces);
    w.multi_interface = o.get<double>("multi_interface", w.multi_interface);
    w.loss = o.get<double>("loss", w.loss);
    w.acl_drop = o.get<double>("acl_drop", w.acl_drop);
    w.seed = o.get<std::uint64_t>("seed", w.seed);
    o.done();
    const auto world = make_world(w);
    const std::filesystem::path d(world_dir);
    std::error_code ec;
    std::filesystem::create_directories(d, ec);
    if (ec) throw DataError("cannot create " + world_dir + ": " + ec.message());
    save_banners((d / "banners.jsonl").string(), world.banners);
    write_text((d / "nodes.txt").string(), format_itdk_nodes(world.aliases));
    save_traces((d / "traces.jsonl").string(), world.traces);
    write_text((d / "geo.csv").string(), world_geo_csv());
    write_text((d / "network.json").string(), network_to_json(world.network));
    save_labels((d / "truth.csv").string(), world.truth);
    save_rules((d / "sim-rules.json").string(), sim_rules());
    return {{"world_dir", world_dir},
            {"hosts", world.network.hosts.size()},
            {"devices", world.aliases.nodes.size()},
            {"banners", world.banners.size()},
            {"traces", world.traces.size()}};
  }
  const auto profiles_path = o.input("profiles", false);
  const auto per_vendor = o.count("per_vendor", 200);
  const auto seed = o.get<std::uint64_t>("seed", 1);
  const auto loss = o.get<double>("loss", 0.0);
  const auto acl = o.get<double>("acl_drop", 0.0);
  const auto set = probeset_of(o);
  auto config = scan_config(o);
  const auto out = o.required<std::string>("out");
  const auto labels = o.required<std::string>("labels");
  const auto network_path = o.get<std::string>("network", "");
  o.done();
  const auto net = make_network(profiles_from(profiles_path), per_vendor, seed, loss, acl);
  const auto ds = synthesize_dataset(net, set, config);
  save_fingerprints(out, ds.records);
  save_labels(labels, ds.labels);
  if (!network_path.empty()) write_text(network_path, network_to_json(net));
  return {{"hosts", net.hosts.size()},
          {"records", ds.records.size()},
          {"probeset", set.name()},
          {"labels", label_counts(ds.labels)}};
}

ojson scan(Options& o) {
  const auto set = probeset_of(o);
  const auto transport_kind = o.get<std::string>("transport", "sim");
  const auto targets_path = o.input("targets", transport_kind == "live");
  std::string network_path, profiles_path;
  if (transport_kind == "sim") {
    network_path = o.input("network");
    profiles_path = o.input("profiles", false);
  } else if (transport_kind != "live") {
    throw UsageError("transport must be sim or live");
  }
  if (transport_kind == "live" && !o.has("source")) {
    throw UsageError("live scans need a source address");
  }
  const auto config = scan_config(o);
  const auto out = o.required<std::string>("out");
  o.done();

  std::vector<Ipv4Address> targets;
  std::unique_ptr<Transport> transport;
  if (transport_kind == "sim") {
    auto net = network_from_json(read_text(network_path), profiles_from(profiles_path), network_path);
    if (targets_path.empty()) {
      for (const auto& h : net.hosts) targets.push_back(h.address);
    }
    transport = std::make_unique<SimTransport>(std::move(net));
  }
  if (!targets_path.empty()) targets = load_targets(targets_path);
  if (!transport) transport = open_live_transport();

  std::vector<FingerprintRecord> records;
  try {
    records = run_scan(targets, set, *transport, config);
  } catch (const ScanError& e) {
    save_fingerprints(out, e.partial());
    throw;
  }
  save_fingerprints(out, records);
  const auto hist = response_histogram(records, set.size());
  std::size_t silent = hist.empty() ? 0 : hist[0];
  return {{"targets", targets.size()},
          {"probes", set.size()},
          {"port", records.empty() ? 0 : records.front().scan_port},
          {"unresponsive", silent},
          {"transport", transport_kind}};
}

ojson extract(Options& o) {
  const auto in = o.input("fingerprints");
  const auto set = probeset_of(o);
  const auto out = o.required<std::string>("out");
  const auto schema = o.get<std::string>("schema", "");
  const auto keep_silent = o.get<bool>("keep_unresponsive", false);
  o.done();
  auto records = load_fingerprints(in);
  std::size_t removed = 0;
  if (!keep_silent) {
    auto d = drop_unresponsive(std::move(records));
    records = std::move(d.kept);
    removed = d.removed;
  }
  std::vector<LabeledVector> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back({r.target, extract_features(r, set)});
  save_feature_vectors(out, rows);
  if (!schema.empty()) write_text(schema, schema_json(set));
  return {{"vectors", rows.size()},
          {"unresponsive_removed", removed},
          {"slots", schema_slots(set).size()},
          {"probeset", set.name()}};
}

ojson label(Options& o) {
  const auto mode = o.required<std::string>("mode");
  if (mode == "regex") {
    const auto banners = o.input("banners");
    const auto table_path = o.input("vendor_table", false);
    const auto out = o.required<std::string>("out");
    const auto conflicts_out = o.get<std::string>("conflicts", "");
    o.done();
    const auto corpus = load_banners(banners);
    const auto table = table_path.empty() ? vendor_name_table()
                                          : parse_vendor_table(read_text(table_path), table_path);
    const auto r = label_by_vendor_name(corpus, VendorMatcher(table));
    save_labels(out, r.labels);
    if (!conflicts_out.empty()) {
      write_to(conflicts_out, [&](std::ostream& s) {
        for (const auto& [ip, vs] : r.conflicts) {
          s << ojson{{"ip", ip.to_string()}, {"vendors", vs}}.dump() << "\n";
        }
      });
    }
    return {{"mode", mode}, {"labeled", r.labels.size()}, {"conflicted", r.conflicts.size()},
            {"per_vendor", label_counts(r.labels)}};
  }
  if (mode == "cluster") {
    const auto banners = o.input("banners");
    const auto source = rule_source(o);
    IterateParams p;
    p.sample_size = o.count("sample_size", p.sample_size);
    p.rounds = o.get<int>("rounds", p.rounds);
    p.cluster.min_cluster_size = o.count("min_cluster_size", p.cluster.min_cluster_size);
    p.cluster.min_samples = o.count("min_samples", p.cluster.min_samples);
    p.min_len = o.count("min_len", p.min_len);
    p.top_k = o.count("top_k", p.top_k);
    p.seed = o.get<std::uint64_t>("seed", p.seed);
    const auto out = o.required<std::string>("out");
    o.done();
    if (p.rounds < 1) throw UsageError("rounds must be at least 1");
    const auto r = iterate_labeling(load_banners(banners), source.load(), p);
    write_to(out, [&](std::ostream& s) { write_candidates(s, r.candidates); });
    ojson log = ojson::array();
    for (const auto& l : r.log) {
      log.push_back({{"round", l.round},
                     {"protocol", std::string(to_string(l.protocol))},
                     {"unlabeled_before", l.unlabeled_before},
                     {"sampled", l.sampled},
                     {"clusters", l.clusters},
                     {"candidates", l.candidates},
                     {"unlabeled_after", l.unlabeled_after}});
    }
    return {{"mode", mode}, {"candidates", r.candidates.size()}, {"log", log}};
  }
  if (mode == "mine") {
    const auto banners = o.input("banners");
    const auto protocol = o.get<std::string>("protocol", "");
    const auto match = o.get<std::string>("match", "");
    const auto limit = o.count("limit", 20);
    const auto min_len = o.count("min_len", 8);
    const auto out = o.get<std::string>("out", "-");
    o.done();
    const auto corpus = load_banners(banners);
    std::optional<BannerProtocol> proto;
    if (!protocol.empty()) proto = parse_protocol(protocol);
    std::regex re;
    try {
      re = std::regex(match, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw UsageError("bad match pattern: " + std::string(e.what()));
    }
    std::vector<std::string> texts;
    for (const auto& b : corpus) {
      if (proto && b.protocol != *proto) continue;
      if (!match.empty() && !std::regex_search(b.text, re)) continue;
      texts.push_back(b.text);
    }
    auto mined = mine_frequent_substrings(texts, min_len);
    if (mined.size() > limit) mined.resize(limit);
    write_to(out, [&](std::ostream& s) {
      for (const auto& m : mined) s << ojson{{"text", m.text}, {"frequency", m.frequency}}.dump() << "\n";
    });
    return {{"mode", mode}, {"banners", texts.size()}, {"substrings", mined.size()}};
  }
  if (mode == "apply") {
    const auto banners = o.input("banners");
    const auto source = rule_source(o);
    const auto out = o.required<std::string>("out");
    const auto assignments_out = o.get<std::string>("assignments", "");
    o.done();
    const auto corpus = load_banners(banners);
    const auto rules = source.load();
    const auto r = apply_rules(corpus, RuleSet(rules));
    const auto labels = r.labels();
    save_labels(out, labels);
    std::size_t conflicted = 0;
    for (const auto& [ip, a] : r.assignments) conflicted += a.conflicted;
    if (!assignments_out.empty()) {
      write_to(assignments_out, [&](std::ostream& s) {
        for (const auto& [ip, a] : r.assignments) {
          s << ojson{{"ip", ip.to_string()},
                     {"vendor", a.conflicted ? ojson(nullptr) : ojson(a.vendor)},
                     {"rules", a.rule_ids},
                     {"conflicted", a.conflicted}}
                   .dump()
            << "\n";
        }
        for (const auto& ip : r.blacklisted) {
          s << ojson{{"ip", ip.to_string()}, {"blacklisted", true}}.dump() << "\n";
        }
      });
    }
    return {{"mode", mode},
            {"rules", rules.size()},
            {"labeled", labels.size()},
            {"conflicted", conflicted},
            {"blacklisted", r.blacklisted.size()},
            {"per_vendor", label_counts(labels)}};
  }
  if (mode == "audit") {
    const auto banners = o.input("banners");
    const auto source = rule_source(o);
    const auto out = o.get<std::string>("out", "-");
    o.done();
    const auto corpus = load_banners(banners);
    const auto rules = source.load();
    const auto audits = audit_rules(corpus, RuleSet(rules));
    std::size_t flagged = 0;
    write_to(out, [&](std::ostream& s) {
      for (const auto& a : audits) {
        flagged += a.flagged;
        s << ojson{{"rule", a.rule_id},
                   {"vendor", a.vendor},
                   {"fires", a.fires},
                   {"co_fires", a.co_fires},
                   {"flagged", a.flagged},
                   {"precedence_candidate", a.precedence_candidate}}
                 .dump()
          << "\n";
      }
    });
    return {{"mode", mode}, {"rules", audits.size()}, {"flagged", flagged}};
  }
  throw UsageError("label mode must be regex, cluster, mine, apply or audit");
}

ojson dealias_stage(Options& o) {
  const auto fp = o.input("fingerprints");
  const auto lb = o.input("labels");
  const auto nodes = o.input("nodes");
  const auto k = o.count("k", 11);
  const auto out = o.required<std::string>("out");
  const auto out_labels = o.required<std::string>("out_labels");
  const auto conflicts_out = o.get<std::string>("conflicts", "");
  o.done();
  if (k == 0) throw UsageError("k must be positive");
  auto dropped = drop_unresponsive(load_fingerprints(fp));
  const auto labels = load_labels(lb);
  const auto aliases = load_itdk_nodes(nodes);
  const auto d = dealias(dropped.kept, labels, aliases);
  const auto f = filter_top_vendors(d.labels, k);
  std::vector<FingerprintRecord> kept;
  for (const auto& r : d.records) {
    if (f.labels.count(r.target)) kept.push_back(r);
  }
  save_fingerprints(out, kept);
  save_labels(out_labels, f.labels);
  if (!conflicts_out.empty()) {
    write_to(conflicts_out, [&](std::ostream& s) {
      for (const auto& c : d.conflicts) {
        ojson m;
        for (const auto& [ip, v] : c.labels) m[ip.to_string()] = v;
        s << ojson{{"node", c.node}, {"labels", m}}.dump() << "\n";
      }
    });
  }
  return {{"unresponsive_removed", dropped.removed},
          {"devices", d.records.size()},
          {"merged", d.merged},
          {"conflicts", d.conflicts.size()},
          {"kept", f.kept},
          {"removed", f.removed},
          {"short_of_k", f.short_of_k},
          {"records", kept.size()}};
}

ojson train(Options& o) {
  const auto features = o.input("features");
  const auto labels_path = o.input("labels");
  TrainParams p;
  p.cap = o.count("cap", p.cap);
  p.configs = o.count("search", p.configs);
  p.inner_k = o.count("inner_k", p.inner_k);
  p.outer_k = o.count("outer_k", p.outer_k);
  p.validation = o.get<double>("validation", p.validation);
  p.seed = o.get<std::uint64_t>("seed", p.seed);
  p.fixed = fixed_params(o);
  p.fixed.seed = p.seed;
  const auto out = o.required<std::string>("out");
  const auto leaderboard = o.get<std::string>("leaderboard", "");
  const auto metrics = o.get<std::string>("metrics", "");
  o.done();
  p.validate();
  std::size_t unlabeled = 0;
  const auto samples = join_labels(load_feature_vectors(features), load_labels(labels_path), &unlabeled);
  const auto t = train_pipeline(samples, p);
  t.model.save(out);
  if (!leaderboard.empty() && t.search) {
    write_to(leaderboard, [&](std::ostream& s) { write_leaderboard(s, t.search->leaderboard); });
  }
  ojson report;
  report["samples"] = samples.size();
  report["unlabeled_skipped"] = unlabeled;
  report["per_class"] = t.class_counts;
  report["params"] = ojson::parse(hyperparams_to_json(t.model.params()));
  if (t.search) {
    report["best_index"] = t.search->best_index;
    report["best_mean_accuracy"] = t.search->leaderboard[t.search->best_index].mean_accuracy;
  }
  if (t.metrics) {
    report["metrics"] = {{"balanced_accuracy", t.metrics->mean_balanced_accuracy},
                         {"roc_auc", t.metrics->mean_roc_auc},
                         {"micro_f1", t.metrics->mean_micro_f1},
                         {"folds", {{"balanced_accuracy", t.metrics->balanced_accuracy},
                                    {"roc_auc", t.metrics->roc_auc},
                                    {"micro_f1", t.metrics->micro_f1}}},
                         {"confusion", {{"labels", t.metrics->confusion.labels},
                                        {"counts", t.metrics->confusion.counts}}}};
  }
  report["threshold"] = t.threshold ? ojson(t.threshold->threshold) : ojson(nullptr);
  ojson imp = ojson::array();
  for (const auto& fi : feature_importance_report(t.model)) {
    imp.push_back({{"feature", fi.feature}, {"importance", fi.importance}});
  }
  report["importances"] = imp;
  if (!metrics.empty()) write_text(metrics, report.dump(2) + "\n");
  return report;
}

// nullopt means "use the model's own threshold".
std::optional<std::optional<double>> threshold_option(Options& o) {
  if (!o.has("threshold")) return std::nullopt;
  std::string text;
  try {
    text = o.get<std::string>("threshold", "auto");
  } catch (const UsageError&) {
    const auto v = o.get<double>("threshold", 0);
    if (v < 0 || v > 1) throw UsageError("threshold must be in [0,1]");
    return std::optional<double>(v);
  }
  if (text == "auto") return std::nullopt;
  if (text == "none") return std::optional<double>();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && v >= 0 && v <= 1) return std::optional<double>(v);
  } catch (const std::exception&) {
  }
  throw UsageError("threshold must be auto, none or a number in [0,1]");
}

ojson predict(Options& o) {
  const auto model_path = o.input("model");
  const auto features = o.input("features");
  const auto chosen = threshold_option(o);
  const auto out = o.get<std::string>("out", "-");
  o.done();
  auto model = RandomForest::load(model_path);
  const auto threshold = chosen ? *chosen : model.unknown_threshold();
  model.set_unknown_threshold(threshold);
  const auto rows = load_feature_vectors(features);
  std::map<std::string, std::size_t> counts;
  std::vector<std::tuple<std::string, std::string, double>> lines;
  for (const auto& r : rows) {
    const auto proba = model.predict_proba(r.vector);
    const auto label = model.label_for(proba);
    ++counts[label];
    lines.emplace_back(r.target.to_string(), label, *std::max_element(proba.begin(), proba.end()));
  }
  write_to(out, [&](std::ostream& s) {
    s << "# threshold=" << (threshold ? ojson(*threshold).dump() : "none") << "\n";
    s << "ip,vendor,probability\n";
    for (const auto& [ip, v, p] : lines) s << ip << "," << v << "," << ojson(p).dump() << "\n";
  });
  return {{"vectors", rows.size()},
          {"threshold", threshold ? ojson(*threshold) : ojson(nullptr)},
          {"predicted", counts}};
}

ojson insights(Options& o) {
  const auto model_path = o.input("model");
  const auto traces_path = o.input("traces");
  const auto fp_path = o.input("fingerprints");
  const auto geo_path = o.input("geo");
  const auto set = probeset_of(o);
  const auto out = o.get<std::string>("out", "-");
  const auto annotated_out = o.get<std::string>("annotated", "");
  o.done();
  const auto model = RandomForest::load(model_path);
  const auto traces = load_traces(traces_path);
  const auto fps = by_target(load_fingerprints(fp_path));
  const auto geo = GeoTable::load(geo_path);
  const auto annotated = annotate_traceroutes(traces, model, fps, set);
  const auto rows = prevalence(annotated, geo);
  write_to(out, [&](std::ostream& s) { write_prevalence(s, rows); });
  std::map<std::string, std::size_t> tags;
  for (const auto& a : annotated) {
    for (const auto& v : a.vendors) ++tags[v];
  }
  if (!annotated_out.empty()) {
    write_to(annotated_out, [&](std::ostream& s) {
      for (const auto& a : annotated) {
        ojson hops = ojson::array();
        for (std::size_t i = 0; i < a.trace.hops.size(); ++i) {
          const auto& h = a.trace.hops[i];
          hops.push_back({{"ip", h ? ojson(h->to_string()) : ojson(nullptr)}, {"vendor", a.vendors[i]}});
        }
        s << ojson{{"source_id", a.trace.source_id},
                   {"source_country", a.trace.source_country},
                   {"dst", a.trace.dst.to_string()},
                   {"continent", geo.lookup(a.trace.dst)},
                   {"hops", hops}}
                 .dump()
          << "\n";
      }
    });
  }
  return {{"traces", annotated.size()}, {"hop_labels", tags}, {"rows", rows.size()}};
}

ojson e2e(Options& o) {
  if (!o.get<bool>("sim", false)) {
    throw UsageError("e2e runs only on the simulator; pass sim=true (--sim)");
  }
  E2eParams p;
  p.seed = o.get<std::uint64_t>("seed", p.seed);
  p.world.per_vendor = o.count("per_vendor", p.world.per_vendor);
  p.world.minor_devices = o.count("minor_devices", p.world.minor_devices);
  p.world.decoys = o.count("decoys", p.world.decoys);
  p.world.traces = o.count("traces", p.world.traces);
  p.world.multi_interface = o.get<double>("multi_interface", p.world.multi_interface);
  p.world.loss = o.get<double>("loss", p.world.loss);
  p.world.acl_drop = o.get<double>("acl_drop", p.world.acl_drop);
  p.train.configs = o.count("configs", p.train.configs);
  p.train.inner_k = o.count("inner_k", p.train.inner_k);
  p.train.outer_k = o.count("outer_k", p.train.outer_k);
  p.train.cap = o.count("cap", p.train.cap);
  p.train.validation = o.get<double>("validation", p.train.validation);
  p.k = o.count("k", p.k);
  p.scan.retries = o.get<int>("retries", p.scan.retries);
  p.out_dir = o.get<std::string>("out", "");
  o.done();
  p.world.validate();
  const auto r = run_e2e(p);
  return ojson::parse(r.summary_json);
}

}  // namespace

extern "C" {

const char* dp_version(void) { return DEVPRINT_VERSION; }

dp_status dp_context_new(dp_context** out) {
  if (!out) return DP_USAGE;
  *out = new (std::nothrow) dp_context();
  return *out ? DP_OK : DP_INTERNAL;
}

void dp_context_free(dp_context* ctx) { delete ctx; }

const char* dp_last_error(const dp_context* ctx) { return ctx ? ctx->error.c_str() : ""; }
const char* dp_last_error_json(const dp_context* ctx) { return ctx ? ctx->error_json.c_str() : ""; }
const char* dp_last_report(const dp_context* ctx) { return ctx ? ctx->report.c_str() : ""; }

#define DP_STAGE(fn, impl, name)                                   \
  dp_status fn(dp_context* ctx, const char* options_json) {       \
    return run(ctx, [&] {                                          \
      Options o(options_json, name);                               \
      return impl(o);                                              \
    });                                                            \
  }

DP_STAGE(dp_probes_dump, probes_dump, "probes dump")
DP_STAGE(dp_sim_make_dataset, sim_make_dataset, "sim make-dataset")
DP_STAGE(dp_scan, scan, "scan")
DP_STAGE(dp_extract, extract, "extract")
DP_STAGE(dp_label, label, "label")
DP_STAGE(dp_dealias, dealias_stage, "dealias")
DP_STAGE(dp_train, train, "train")
DP_STAGE(dp_predict, predict, "predict")
DP_STAGE(dp_insights, insights, "insights")
DP_STAGE(dp_e2e, e2e, "e2e")

#undef DP_STAGE

dp_status dp_model_load(dp_context* ctx, const char* path, dp_model** out) {
  return run(ctx, [&] {
    if (!path || !out) throw UsageError("model path and output handle are required");
    *out = nullptr;
    auto m = std::make_unique<dp_model>(dp_model{RandomForest::load(path)});
    *out = m.release();
    return ojson{{"classes", (*out)->forest.classes().size()}};
  });
}

void dp_model_free(dp_model* model) { delete model; }

size_t dp_model_class_count(const dp_model* model) { return model ? model->forest.classes().size() : 0; }

const char* dp_model_class(const dp_model* model, size_t index) {
  if (!model || index >= model->forest.classes().size()) return nullptr;
  return model->forest.classes()[index].c_str();
}

double dp_model_threshold(const dp_model* model) {
  if (!model || !model->forest.unknown_threshold()) return -1;
  return *model->forest.unknown_threshold();
}

void dp_model_set_threshold(dp_model* model, double threshold) {
  if (!model) return;
  if (threshold < 0) model->forest.set_unknown_threshold(std::nullopt);
  else model->forest.set_unknown_threshold(threshold);
}

dp_status dp_model_predict(dp_context* ctx, const dp_model* model, const char* vector_json,
                           const char** label) {
  return run(ctx, [&] {
    if (!model || !vector_json || !label) throw UsageError("model, vector and label are required");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(vector_json);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("vector is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("vector must be a JSON object of slot values");
    const auto& vocab = model->forest.vocabulary();
    if (j.size() != vocab.slot_count()) {
      throw SchemaError("vector has " + std::to_string(j.size()) + " slots, model expects " +
                        std::to_string(vocab.slot_count()));
    }
    FeatureVector v;
    for (const auto& slot : vocab.slots()) {
      if (!j.contains(slot) || !j[slot].is_string()) throw SchemaError("vector lacks slot " + slot);
      v.values.emplace_back(slot, j[slot].get<std::string>());
    }
    const auto proba = model->forest.predict_proba(v);
    ctx->scratch = model->forest.label_for(proba);
    *label = ctx->scratch.c_str();
    return ojson{{"label", ctx->scratch},
                 {"probability", *std::max_element(proba.begin(), proba.end())}};
  });
}

}  // extern "C"
