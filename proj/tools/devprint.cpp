// devprint command line. Talks to the library only through devprint.h.

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "devprint.h"
#include "json.hpp"

namespace {

using json = nlohmann::ordered_json;

// One subcommand's options, turned into the stage's JSON options. Only
// options given on the command line or in the config file are passed; the
// library supplies the defaults.
class Stage {
 public:
  explicit Stage(CLI::App* app) : app_(app) {}

  CLI::App* app() const { return app_; }

  Stage& text(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<std::string>();
    auto* o = app_->add_option(flag, *v, help);
    fields_.push_back({key, o, [v](json& j, const std::string& k) { j[k] = *v; }});
    return *this;
  }

  Stage& integer(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<long long>();
    auto* o = app_->add_option(flag, *v, help);
    fields_.push_back({key, o, [v](json& j, const std::string& k) { j[k] = *v; }});
    return *this;
  }

  Stage& real(const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<double>();
    auto* o = app_->add_option(flag, *v, help);
    fields_.push_back({key, o, [v](json& j, const std::string& k) { j[k] = *v; }});
    return *this;
  }

  // --name / --no-name
  Stage& boolean(const std::string& name, const std::string& key, const std::string& help) {
    auto v = std::make_shared<bool>();
    auto* o = app_->add_flag("--" + name + ",!--no-" + name, *v, help);
    fields_.push_back({key, o, [v](json& j, const std::string& k) { j[k] = *v; }});
    return *this;
  }

  Stage& fixed(const std::string& key, json value) {
    fixed_.push_back({key, std::move(value)});
    return *this;
  }

  std::string options() const {
    json j = json::object();
    for (const auto& [k, v] : fixed_) j[k] = v;
    for (const auto& f : fields_) {
      if (f.option->count() > 0) f.put(j, f.key);
    }
    return j.dump();
  }

 private:
  struct Field {
    std::string key;
    CLI::Option* option;
    std::function<void(json&, const std::string&)> put;
  };
  CLI::App* app_;
  std::vector<Field> fields_;
  std::vector<std::pair<std::string, json>> fixed_;
};

using StageFn = dp_status (*)(dp_context*, const char*);

struct Command {
  std::unique_ptr<Stage> stage;
  StageFn fn;
};

void scan_options(Stage& s) {
  s.text("--port-range", "port_range", "High-port range lo:hi for TCP/UDP probes")
      .integer("--retries", "retries", "Attempts per probe, first send included")
      .integer("--timeout-ms", "timeout_ms", "Wait per attempt")
      .integer("--max-in-flight", "max_in_flight", "Targets probed at once")
      .integer("--seed", "seed", "Seed for the port choice");
}

void rule_options(Stage& s) {
  s.text("--rules", "rules", "Rules file (JSON)")
      .boolean("names", "names", "Prepend the vendor-name rules (default on)");
}

void hyper_options(Stage& s) {
  s.integer("--n-trees", "n_trees", "Trees when --search 0")
      .integer("--max-depth", "max_depth", "Depth limit when --search 0")
      .text("--max-features", "max_features", "sqrt, log2, all or a fraction")
      .integer("--min-samples-split", "min_samples_split", "")
      .integer("--min-samples-leaf", "min_samples_leaf", "")
      .boolean("bootstrap", "bootstrap", "")
      .text("--criterion", "criterion", "gini or entropy");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Router vendor fingerprinting from closed-port and ICMP probe replies", "devprint");
  app.set_config("--config", "", "TOML-style config file; [section] per subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);
  bool json_errors = false, quiet = false;
  app.add_flag("--json-errors", json_errors, "Print errors as JSON on stderr");
  app.add_flag("-q,--quiet", quiet, "Do not print the stage report");
  app.set_version_flag("--version", std::string(dp_version()));

  std::vector<Command> commands;
  auto add = [&](CLI::App* sub, StageFn fn) -> Stage& {
    commands.push_back({std::make_unique<Stage>(sub), fn});
    return *commands.back().stage;
  };

  auto* probes = app.add_subcommand("probes", "Probe catalog");
  probes->require_subcommand(1);
  add(probes->add_subcommand("dump", "Print a probe set's packets for one target"), dp_probes_dump)
      .text("--probeset", "probeset", "Probe set, e.g. nmap+topicmp")
      .text("--target", "target", "Target address")
      .integer("--port", "port", "Destination port of the TCP/UDP probes")
      .text("--source", "source", "Source address written into the packets")
      .integer("--originate-ms", "originate_ms", "Timestamp-request originate field")
      .text("--format", "format", "jsonl or hexdump")
      .text("--out", "out", "Output file, - for stdout");

  auto* sim = app.add_subcommand("sim", "Simulated routers");
  sim->require_subcommand(1);
  {
    auto& s = add(sim->add_subcommand("make-dataset", "Scan a simulated network, or build a world"),
                  dp_sim_make_dataset);
    s.text("--profiles", "profiles", "Stack profiles JSON (default: built-in)")
        .integer("--per-vendor", "per_vendor", "Hosts or devices per vendor")
        .real("--loss", "loss", "Per-attempt loss")
        .real("--acl-drop", "acl_drop", "Per (host, probe) filtering")
        .text("--probeset", "probeset", "Probe set")
        .text("--out", "out", "fingerprints.jsonl")
        .text("--labels", "labels", "labels.csv with the true vendors")
        .text("--network", "network", "Also write network.json")
        .text("--world-dir", "world_dir", "Build a full world (banners, aliases, traces) here instead")
        .integer("--minor-devices", "minor_devices", "World: devices of the small extra vendor")
        .integer("--decoys", "decoys", "World: decoy hosts per kind")
        .integer("--traces", "traces", "World: traceroutes")
        .real("--multi-interface", "multi_interface", "World: share of multi-interface devices");
    scan_options(s);
  }

  {
    auto& s = add(app.add_subcommand("scan", "Probe targets and record fingerprints"), dp_scan);
    s.text("--targets", "targets", "Addresses, one per line or first CSV column")
        .text("--network", "network", "Simulated network.json (sim transport)")
        .text("--profiles", "profiles", "Stack profiles for network.json")
        .text("--probeset", "probeset", "Probe set")
        .text("--transport", "transport", "sim or live")
        .text("--source", "source", "Our address (required for live)")
        .text("--out", "out", "fingerprints.jsonl");
    scan_options(s);
  }

  add(app.add_subcommand("extract", "Turn fingerprints into feature vectors"), dp_extract)
      .text("--fingerprints", "fingerprints", "fingerprints.jsonl")
      .text("--probeset", "probeset", "Probe set whose slots are extracted")
      .text("--out", "out", "features.jsonl")
      .text("--schema", "schema", "Also write schema.json")
      .boolean("keep-unresponsive", "keep_unresponsive", "Keep records without any reply");

  auto* label = app.add_subcommand("label", "Label IPs from service banners");
  label->require_subcommand(1);
  add(label->add_subcommand("regex", "Vendor-name regexes"), dp_label)
      .fixed("mode", "regex")
      .text("--banners", "banners", "banners.jsonl")
      .text("--vendor-table", "vendor_table", "vendor<TAB>regex table (default: built-in)")
      .text("--out", "out", "labels.csv")
      .text("--conflicts", "conflicts", "IPs naming several vendors (JSON lines)");
  {
    auto& s = add(label->add_subcommand("cluster", "Cluster unlabeled banners into rule candidates"),
                  dp_label);
    s.fixed("mode", "cluster")
        .text("--banners", "banners", "banners.jsonl")
        .integer("--sample-size", "sample_size", "Banners clustered per protocol and round")
        .integer("--rounds", "rounds", "")
        .integer("--min-cluster-size", "min_cluster_size", "")
        .integer("--min-samples", "min_samples", "")
        .integer("--min-len", "min_len", "Shortest mined substring")
        .integer("--top-k", "top_k", "Substrings kept per candidate")
        .integer("--seed", "seed", "")
        .text("--out", "out", "candidates.jsonl");
    rule_options(s);
  }
  add(label->add_subcommand("mine", "Frequent substrings of matching banners"), dp_label)
      .fixed("mode", "mine")
      .text("--banners", "banners", "banners.jsonl")
      .text("--protocol", "protocol", "ssh, telnet or snmp")
      .text("--match", "match", "Only banners matching this regex")
      .integer("--limit", "limit", "")
      .integer("--min-len", "min_len", "")
      .text("--out", "out", "Output, - for stdout");
  {
    auto& s = add(label->add_subcommand("apply", "Apply fingerprint rules"), dp_label);
    s.fixed("mode", "apply")
        .text("--banners", "banners", "banners.jsonl")
        .text("--out", "out", "labels.csv")
        .text("--assignments", "assignments", "Per-IP rule hits (JSON lines)");
    rule_options(s);
  }
  {
    auto& s = add(label->add_subcommand("audit", "Report rules that fire with other vendors"), dp_label);
    s.fixed("mode", "audit").text("--banners", "banners", "banners.jsonl").text("--out", "out", "");
    rule_options(s);
  }

  add(app.add_subcommand("dealias", "Merge interfaces into devices and keep the top vendors"),
      dp_dealias)
      .text("--fingerprints", "fingerprints", "fingerprints.jsonl")
      .text("--labels", "labels", "labels.csv")
      .text("--nodes", "nodes", "ITDK nodes file")
      .integer("--k", "k", "Vendors kept")
      .text("--out", "out", "Device fingerprints")
      .text("--out-labels", "out_labels", "Device labels")
      .text("--conflicts", "conflicts", "Dropped devices (JSON lines)");

  {
    auto& s = add(app.add_subcommand("train", "Balance, search, evaluate and fit a model"), dp_train);
    s.text("--features", "features", "features.jsonl")
        .text("--labels", "labels", "labels.csv")
        .integer("--cap", "cap", "Samples kept per class")
        .integer("--search", "search", "Random-search configurations, 0 for fixed parameters")
        .integer("--inner-k", "inner_k", "")
        .integer("--outer-k", "outer_k", "0 skips cross-validation")
        .real("--validation", "validation", "Held-out share for the unknown threshold")
        .integer("--seed", "seed", "")
        .text("--out", "out", "model.json")
        .text("--leaderboard", "leaderboard", "leaderboard.csv")
        .text("--metrics", "metrics", "Write the report here as well");
    hyper_options(s);
  }

  add(app.add_subcommand("predict", "Label feature vectors with a model"), dp_predict)
      .text("--model", "model", "model.json")
      .text("--features", "features", "features.jsonl")
      .text("--threshold", "threshold", "auto, none or a probability")
      .text("--out", "out", "predictions.csv, - for stdout");

  add(app.add_subcommand("insights", "Vendor prevalence along traceroutes"), dp_insights)
      .text("--model", "model", "model.json")
      .text("--traces", "traces", "traces.jsonl")
      .text("--fingerprints", "fingerprints", "Fingerprints of the hop addresses")
      .text("--geo", "geo", "geo.csv")
      .text("--probeset", "probeset", "The model's probe set")
      .text("--out", "out", "prevalence.csv, - for stdout")
      .text("--annotated", "annotated", "Per-hop labels (JSON lines)");

  add(app.add_subcommand("e2e", "Run the whole pipeline on a simulated Internet"), dp_e2e)
      .boolean("sim", "sim", "Use the simulator (required)")
      .integer("--seed", "seed", "")
      .integer("--per-vendor", "per_vendor", "")
      .integer("--minor-devices", "minor_devices", "")
      .integer("--decoys", "decoys", "")
      .integer("--traces", "traces", "")
      .real("--multi-interface", "multi_interface", "")
      .real("--loss", "loss", "")
      .real("--acl-drop", "acl_drop", "")
      .integer("--configs", "configs", "Random-search configurations")
      .integer("--inner-k", "inner_k", "")
      .integer("--outer-k", "outer_k", "")
      .integer("--cap", "cap", "")
      .real("--validation", "validation", "")
      .integer("--k", "k", "")
      .integer("--retries", "retries", "")
      .text("--out", "out", "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (json_errors) {
      std::cerr << json{{"status", 1}, {"kind", "usage"}, {"message", e.what()}}.dump() << "\n";
    } else {
      app.exit(e);
    }
    return DP_USAGE;
  }

  const Command* chosen = nullptr;
  for (const auto& c : commands) {
    if (c.stage->app()->parsed()) chosen = &c;
  }
  if (!chosen) return DP_USAGE;

  dp_context* ctx = nullptr;
  if (dp_context_new(&ctx) != DP_OK) return DP_INTERNAL;
  const auto status = chosen->fn(ctx, chosen->stage->options().c_str());
  if (status != DP_OK) {
    if (json_errors) std::cerr << dp_last_error_json(ctx) << "\n";
    else std::cerr << "devprint: " << dp_last_error(ctx) << "\n";
  } else if (!quiet) {
    std::cerr << dp_last_report(ctx) << "\n";
  }
  dp_context_free(ctx);
  return status;
}
