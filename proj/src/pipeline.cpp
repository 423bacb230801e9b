#include "devprint/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "devprint/error.hpp"
#include "devprint/features.hpp"
#include "devprint/topology.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::string> labels_of(const std::vector<Sample>& s) {
  std::vector<std::string> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.label);
  return out;
}

std::vector<Sample> pick(const std::vector<Sample>& s, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(s[i]);
  return out;
}

ojson metrics_json(const MetricsReport& m) {
  ojson j;
  j["balanced_accuracy"] = m.mean_balanced_accuracy;
  j["roc_auc"] = m.mean_roc_auc;
  j["micro_f1"] = m.mean_micro_f1;
  j["folds"] = {{"balanced_accuracy", m.balanced_accuracy},
                {"roc_auc", m.roc_auc},
                {"micro_f1", m.micro_f1}};
  return j;
}

ojson confusion_json(const Confusion& c) {
  return {{"labels", c.labels}, {"counts", c.counts}};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

// Named by the 4-byte tag so the stages draw from unrelated streams.
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t tag) { return derive_seed({seed, tag}); }

}  // namespace

void TrainParams::validate() const {
  if (cap == 0) throw UsageError("cap must be positive");
  if (configs > 0 && inner_k < 2) throw UsageError("inner-k must be at least 2");
  if (outer_k == 1) throw UsageError("outer-k must be 0 or at least 2");
  if (!(validation >= 0 && validation < 1)) throw UsageError("validation fraction must be in [0,1)");
  fixed.validate();
}

TrainOutcome train_pipeline(const std::vector<Sample>& samples, const TrainParams& params) {
  params.validate();
  if (samples.empty()) throw DataError("no labeled feature vectors to train on");
  TrainOutcome out;
  out.balanced_from = samples.size();
  Rng balance_rng(stage_seed(params.seed, 0x62616C));
  const auto data = balance_classes(samples, params.cap, balance_rng);
  for (const auto& s : data) ++out.class_counts[s.label];
  if (out.class_counts.size() < 2) throw DataError("training needs at least two vendor classes");

  Hyperparams hp = params.fixed;
  if (params.configs > 0) {
    out.search = random_search(data, params.space, params.configs, params.inner_k,
                               stage_seed(params.seed, 0x736561));
    hp = out.search->best;
  }
  if (params.outer_k > 0) {
    out.metrics = evaluate_final(data, hp, params.outer_k, stage_seed(params.seed, 0x657661));
  }
  if (params.validation > 0) {
    Rng split_rng(stage_seed(params.seed, 0x76616C));
    const auto split = stratified_split(labels_of(data), params.validation, split_rng);
    out.model = RandomForest::train(pick(data, split.train), hp);
    const auto validation = pick(data, split.test);
    if (!validation.empty()) {
      out.threshold = select_unknown_threshold(out.model, validation);
      out.model.set_unknown_threshold(out.threshold->threshold);
    }
  } else {
    out.model = RandomForest::train(data, hp);
  }
  return out;
}

std::vector<FingerprintRule> default_rule_set() {
  auto rules = rules_from_vendor_table(vendor_name_table());
  const auto& extra = sim_rules();
  rules.insert(rules.end(), extra.begin(), extra.end());
  return rules;
}

E2eResult run_e2e(const E2eParams& params) {
  E2eParams p = params;
  p.world.seed = stage_seed(params.seed, 0x776F72);
  p.scan.rng_seed = stage_seed(params.seed, 0x736361);
  p.train.seed = stage_seed(params.seed, 0x747261);
  p.train.validate();
  p.scan.validate();
  if (p.k == 0) throw UsageError("k must be positive");
  const auto final_set = ProbeSet::named(p.final_set);
  std::vector<ProbeSet> compare;
  for (const auto& name : p.compare_sets) compare.push_back(ProbeSet::named(name));
  // Union of the sets' components, in first-seen order.
  std::vector<std::string> parts;
  for (const auto& name : [&] {
         auto v = p.compare_sets;
         v.insert(v.begin(), p.final_set);
         return v;
       }()) {
    std::size_t start = 0;
    while (start <= name.size()) {
      const auto end = std::min(name.find('+', start), name.size());
      const auto part = name.substr(start, end - start);
      if (std::find(parts.begin(), parts.end(), part) == parts.end()) parts.push_back(part);
      start = end + 1;
    }
  }
  std::string all_name;
  for (const auto& part : parts) all_name += (all_name.empty() ? "" : "+") + part;
  const auto scan_set = ProbeSet::named(all_name);

  std::filesystem::path dir;
  if (!p.out_dir.empty()) {
    dir = p.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  }
  const bool write = !dir.empty();

  ojson summary;
  summary["format"] = "devprint-summary";
  summary["schema_version"] = 1;
  summary["seed"] = params.seed;
  summary["config"] = {{"per_vendor", p.world.per_vendor},
                       {"minor_devices", p.world.minor_devices},
                       {"multi_interface", p.world.multi_interface},
                       {"decoys", p.world.decoys},
                       {"traces", p.world.traces},
                       {"loss", p.world.loss},
                       {"acl_drop", p.world.acl_drop},
                       {"k", p.k},
                       {"cap", p.train.cap},
                       {"configs", p.train.configs},
                       {"inner_k", p.train.inner_k},
                       {"outer_k", p.train.outer_k},
                       {"validation", p.train.validation},
                       {"retries", p.scan.retries},
                       {"probeset", scan_set.name()}};

  // 1. world and banners
  const auto world = make_world(p.world);
  if (write) {
    save_banners((dir / "banners.jsonl").string(), world.banners);
    write_text(dir / "nodes.txt", format_itdk_nodes(world.aliases));
    save_traces((dir / "traces.jsonl").string(), world.traces);
    write_text(dir / "geo.csv", world_geo_csv());
    write_text(dir / "network.json", network_to_json(world.network));
  }

  // 2. labels
  const auto rules = default_rule_set();
  const RuleSet ruleset(rules);
  const auto labeled = apply_rules(world.banners, ruleset);
  const auto labels = labeled.labels();
  {
    std::size_t conflicted = 0;
    std::map<std::string, std::size_t> per_vendor;
    for (const auto& [ip, a] : labeled.assignments) {
      if (a.conflicted) ++conflicted;
      else ++per_vendor[a.vendor];
    }
    std::set<Ipv4Address> ips;
    for (const auto& b : world.banners) ips.insert(b.ip);
    summary["labeling"] = {{"banners", world.banners.size()},
                           {"ips", ips.size()},
                           {"rules", rules.size()},
                           {"labeled", labels.size()},
                           {"conflicted", conflicted},
                           {"blacklisted", labeled.blacklisted.size()},
                           {"per_vendor", per_vendor}};
  }
  if (write) {
    save_rules((dir / "rules.json").string(), rules);
    save_labels((dir / "labels.csv").string(), labels);
  }

  // 3. scan the labeled addresses
  std::vector<Ipv4Address> targets;
  for (const auto& [ip, v] : labels) targets.push_back(ip);
  std::vector<FingerprintRecord> records;
  {
    SimTransport transport(world.network);
    records = run_scan(targets, scan_set, transport, p.scan);
  }
  const auto hist = response_histogram(records, scan_set.size());
  auto dropped = drop_unresponsive(records);
  summary["scan"] = {{"targets", targets.size()},
                     {"probes", scan_set.size()},
                     {"port", records.empty() ? 0 : records.front().scan_port},
                     {"unresponsive_removed", dropped.removed},
                     {"response_histogram", [&] {
                        ojson h = ojson::object();
                        for (std::size_t i = 0; i < hist.size(); ++i) {
                          if (hist[i]) h[std::to_string(i)] = hist[i];
                        }
                        return h;
                      }()}};
  if (write) save_fingerprints((dir / "fingerprints.jsonl").string(), records);

  // 4. dealias and keep the top-k vendors
  const auto devices = dealias(dropped.kept, labels, world.aliases);
  ojson conflicts = ojson::array();
  for (const auto& c : devices.conflicts) {
    ojson m;
    for (const auto& [ip, v] : c.labels) m[ip.to_string()] = v;
    conflicts.push_back({{"node", c.node}, {"labels", m}});
  }
  summary["dealias"] = {{"devices", devices.records.size()},
                        {"merged", devices.merged},
                        {"conflicts", conflicts}};
  const auto filtered = filter_top_vendors(devices.labels, p.k);
  summary["filter"] = {{"k", p.k}, {"kept", filtered.kept}, {"removed", filtered.removed}};

  // 5. features per set
  auto samples_for = [&](const ProbeSet& set, std::vector<LabeledVector>* rows_out) {
    std::vector<LabeledVector> rows;
    for (const auto& r : devices.records) {
      if (filtered.labels.count(r.target)) rows.push_back({r.target, extract_features(r, set)});
    }
    auto s = join_labels(rows, filtered.labels);
    if (rows_out) *rows_out = std::move(rows);
    return s;
  };
  std::vector<LabeledVector> final_rows;
  const auto final_samples = samples_for(final_set, &final_rows);
  if (write) {
    save_feature_vectors((dir / "features.jsonl").string(), final_rows);
    save_labels((dir / "device-labels.csv").string(), filtered.labels);
  }

  // 6. search once on the final set, reuse its parameters everywhere
  TrainParams tp = p.train;
  tp.outer_k = 0;
  const auto trained = train_pipeline(final_samples, tp);
  const Hyperparams best = trained.search ? trained.search->best : tp.fixed;
  if (trained.search) {
    const auto& lb = trained.search->leaderboard;
    summary["search"] = {{"configs", lb.size()},
                         {"inner_k", p.train.inner_k},
                         {"best_index", trained.search->best_index},
                         {"best_mean_accuracy", lb[trained.search->best_index].mean_accuracy},
                         {"best", ojson::parse(hyperparams_to_json(best))}};
    if (write) {
      std::ofstream out(dir / "leaderboard.csv", std::ios::binary);
      write_leaderboard(out, lb);
    }
  }
  summary["balance"] = {{"cap", p.train.cap}, {"per_class", trained.class_counts}};

  E2eResult result;
  result.devices = final_samples.size();
  result.classes = trained.class_counts.size();
  ojson sets = ojson::array();
  std::vector<const ProbeSet*> order = {&final_set};
  for (const auto& s : compare) order.push_back(&s);
  for (const auto* set : order) {
    const auto samples = set == &final_set ? final_samples : samples_for(*set, nullptr);
    Rng balance_rng(stage_seed(p.train.seed, 0x62616C));
    const auto data = balance_classes(samples, p.train.cap, balance_rng);
    FeatureSetScore score;
    score.name = set->name();
    score.slots = schema_slots(*set).size();
    std::vector<const FeatureVector*> vs;
    for (const auto& s : data) vs.push_back(&s.vector);
    score.columns = OheVocabulary::fit(vs).width();
    const auto outer = p.train.outer_k == 0 ? 5 : p.train.outer_k;
    score.metrics = evaluate_final(data, best, outer, stage_seed(p.train.seed, 0x657661));
    ojson j;
    j["name"] = score.name;
    j["slots"] = score.slots;
    j["columns"] = score.columns;
    j["samples"] = data.size();
    j.update(metrics_json(score.metrics));
    if (set == &final_set) j["confusion"] = confusion_json(score.metrics.confusion);
    sets.push_back(j);
    result.sets.push_back(std::move(score));
  }
  summary["feature_sets"] = sets;
  bool ordered = true;
  for (std::size_t i = 1; i < result.sets.size(); ++i) {
    ordered = ordered && result.sets[i - 1].metrics.mean_micro_f1 > result.sets[i].metrics.mean_micro_f1;
  }
  summary["ordering_holds"] = ordered;

  // 7. final model, threshold and importances
  const auto& model = trained.model;
  ojson importances = ojson::array();
  for (const auto& fi : feature_importance_report(model)) {
    importances.push_back({{"feature", fi.feature}, {"importance", fi.importance}});
  }
  summary["final_model"] = {{"feature_set", final_set.name()},
                            {"classes", model.classes()},
                            {"columns", model.vocabulary().width()},
                            {"threshold", trained.threshold ? ojson(trained.threshold->threshold) : ojson(nullptr)},
                            {"validation_micro_f1",
                             trained.threshold ? ojson(trained.threshold->micro_f1) : ojson(nullptr)},
                            {"importances", importances}};
  if (write) model.save((dir / "model.json").string());

  // 8. traceroutes: fingerprint hop addresses not scanned yet, annotate, tally
  std::map<Ipv4Address, FingerprintRecord> fps;
  for (const auto& r : records) fps.emplace(r.target, r);
  std::set<Ipv4Address> missing;
  for (const auto& t : world.traces) {
    for (const auto& h : t.hops) {
      if (h && !fps.count(*h)) missing.insert(*h);
    }
  }
  std::size_t hop_scanned = 0;
  if (!missing.empty()) {
    SimTransport transport(world.network);
    ScanConfig hop_config = p.scan;
    hop_config.rng_seed = stage_seed(params.seed, 0x686F70);
    auto more = run_scan({missing.begin(), missing.end()}, scan_set, transport, hop_config);
    hop_scanned = more.size();
    for (auto& r : more) fps.emplace(r.target, std::move(r));
  }
  const auto annotated = annotate_traceroutes(world.traces, model, fps, final_set);
  const auto geo = GeoTable::parse(world_geo_csv());
  const auto rows = prevalence(annotated, geo);
  std::map<std::string, std::size_t> hop_tags;
  std::size_t hops = 0;
  for (const auto& a : annotated) {
    for (const auto& v : a.vendors) ++hop_tags[v], ++hops;
  }
  ojson prev = ojson::array();
  for (const auto& r : rows) {
    prev.push_back({{"source", r.source},
                    {"continent", r.continent},
                    {"vendor", r.vendor},
                    {"probability", r.probability},
                    {"n", r.traces}});
  }
  summary["insights"] = {{"traces", annotated.size()},
                         {"hops", hops},
                         {"hop_addresses_scanned", hop_scanned},
                         {"hop_labels", hop_tags},
                         {"prevalence", prev}};
  if (write) {
    std::ofstream out(dir / "prevalence.csv", std::ios::binary);
    write_prevalence(out, rows);
  }

  result.summary_json = summary.dump(2) + "\n";
  if (write) write_text(dir / "summary.json", result.summary_json);
  return result;
}

}  // namespace devprint
