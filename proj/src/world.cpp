#include "devprint/world.hpp"

#include <algorithm>

#include "devprint/error.hpp"

namespace devprint {

namespace {

struct Template {
  BannerProtocol protocol;
  const char* text;  // '#' becomes a random digit
  bool labels;       // some rule names the right vendor
};

using P = BannerProtocol;

// Indexed like world_profiles().
const std::vector<std::vector<Template>>& vendor_templates() {
  static const std::vector<std::vector<Template>> t = {
      {  // Cisco
       {P::ssh, "SSH-2.0-Cisco-1.25", true},
       {P::telnet, "\r\n\r\nUser Access Verification\r\n\r\nUsername: ", false},
       {P::snmp,
        "Cisco IOS Software, ASR1000 Software (X86_64_LINUX_IOSD-UNIVERSALK9-M), Version 16.#.#, "
        "RELEASE SOFTWARE (fc#)",
        true}},
      {  // Mikrotik
       {P::ssh, "SSH-2.0-ROSSSH", true},
       {P::telnet, "\r\n\r\nMikroTik v6.4#.# (stable)\r\nLogin: ", true},
       {P::snmp, "RouterOS CCR10##-7G-1C-1S+", true}},
      {  // Huawei
       {P::ssh, "SSH-2.0-HUAWEI-1.5", true},
       {P::telnet, "\r\n\r\nUser Access Verification\r\n\r\nUsername: ", false},
       {P::snmp,
        "Huawei Versatile Routing Platform Software\r\nVRP (R) software, Version 8.1## "
        "(NE40E V800R0##C10SPC###)",
        true}},
      {  // H3C
       {P::ssh, "SSH-2.0-Comware-7.1.0##", true},
       {P::telnet,
        "\r\n**********************************************************************\r\n"
        "* Copyright (c) 2004-20## New H3C Technologies Co., Ltd. All rights reserved.*\r\n"
        "* Without the owner's prior written consent,                         *\r\n"
        "* no decompiling or reverse-engineering shall be allowed.            *\r\n"
        "**********************************************************************\r\n\r\nLogin: ",
        true},
       {P::snmp,
        "H3C Comware Platform Software, Software Version 5.20, Release 2##P0#\r\n"
        "Copyright (c) 2004-2010 Hangzhou H3C Tech. Co., Ltd. (formerly Huawei-3Com)",
        true}},
      {  // NEC
       {P::ssh, "SSH-2.0-OpenSSH_7.#", false},
       {P::telnet,
        "\r\nNEC Portable Internetwork Core Operating System Software\r\n"
        "IX Series IX2##6 (magellan-sec) Software, Version 10.#.##\r\nlogin: ",
        true}},
      {  // Lancom
       {P::ssh, "SSH-2.0-lancom", true},
       {P::telnet,
        "\r\n| LANCOM 1781VA-4G\r\n| Ver. 10.##.0###RU# / ##.07.2020\r\n| SN.  4#######\r\n"
        "| Copyright (c) LANCOM Systems\r\n\r\nLogin: ",
        true}},
      {  // Juniper
       {P::ssh, "SSH-2.0-OpenSSH_7.5", false},
       {P::telnet, "\r\n\r\nrtr-### (ttyp0)\r\n\r\nlogin: ", false},
       {P::snmp,
        "Juniper Networks, Inc. mx480 internet router, kernel JUNOS 18.#R#-S#, "
        "Build date: 2020-0#-1# UTC",
        true}},
      {  // Adtran
       {P::telnet, "\r\n\r\nlogin as: ", false},
       {P::snmp, "NetVanta 34##, Version: R13.#.#, Date: Mon Jun 1# 2019, ADTRAN, Inc.", true}},
      {  // ZTE
       {P::ssh, "SSH-2.0-ZTE_SSH.2.0", true},
       {P::telnet,
        "\r\n******************************************\r\nWelcome to ZXR10 M6000-#S Carrier-Class "
        "Router\r\n******************************************\r\nUsername:",
        true}},
      {  // Ubiquoss
       {P::ssh, "SSH-2.0-OpenSSH_6.#", false},
       {P::telnet, "\r\nUbiQuoss E#### Switch\r\nlogin: ", true}},
      {  // Dell
       {P::ssh, "SSH-2.0-OpenSSH_7.4", false},
       {P::telnet, "\r\nForce10 Networks Operating System\r\nlogin: ", true},
       {P::snmp,
        "Dell EMC Networking OS10 Enterprise.\r\nCopyright (c) 1999-2020 by Dell Inc. All Rights "
        "Reserved.\r\nOS Version: 10.#.#.#",
        true}},
      {  // Extreme
       {P::ssh, "SSH-2.0-OpenSSH_7.#", false},
       {P::snmp, "ExtremeXOS (X440G2-48p-10G4) version 30.#.#.# by release-manager", true}},
  };
  return t;
}

// Decoy hosts: plain servers, blacklisted consumer gear, banners naming two
// vendors, and the "extreme consequences" false positive.
const std::vector<Template>& decoy_templates() {
  static const std::vector<Template> t = {
      {P::ssh, "SSH-2.0-OpenSSH_8.#p1 Ubuntu-4ubuntu0.#", false},
      {P::telnet, "TP-LINK Wireless Router WR8##N\r\nLogin: ", false},
      {P::snmp, "Interop lab switch, cisco and juniper compatible, unit ##", false},
      {P::telnet, "WARNING: extreme consequences for unauthorized connections. Host ###\r\nlogin: ", false},
  };
  return t;
}

std::string fill(const char* text, Rng& rng) {
  std::string out(text);
  for (auto& c : out) {
    if (c == '#') c = static_cast<char>('0' + rng.below(10));
  }
  return out;
}

struct Source {
  const char* id;
  const char* country;
  std::vector<std::size_t> favored;  // profile indices
};

struct Region {
  Ipv4Address base;
  std::vector<std::size_t> favored;
};

}  // namespace

void WorldParams::validate() const {
  if (per_vendor == 0 || per_vendor > 10000) throw UsageError("per_vendor must be in 1..10000");
  if (minor_devices > per_vendor) throw UsageError("minor_devices must not exceed per_vendor");
  if (!(multi_interface >= 0 && multi_interface <= 1)) throw UsageError("multi_interface must be in [0,1]");
  if (decoys > 60000) throw UsageError("too many decoys");
  if (!(loss >= 0 && loss < 1) || !(acl_drop >= 0 && acl_drop < 1)) {
    throw UsageError("loss and acl_drop must be in [0,1)");
  }
}

std::vector<StackProfile> world_profiles() {
  auto out = default_profiles();
  StackProfile extreme = out[10];
  extreme.vendor = "Extreme";
  extreme.initial_ttl = 64;
  extreme.tcp_window = 16384;
  out.push_back(extreme);
  return out;
}

World make_world(const WorldParams& params) {
  params.validate();
  World w;
  const auto profiles = world_profiles();
  const std::size_t minor = profiles.size() - 1;
  Rng rng(derive_seed({params.seed, 0x776F726C64}));

  w.network = make_network(profiles, params.per_vendor, derive_seed({params.seed, 0x6E6574}),
                           params.loss, params.acl_drop);
  std::size_t minor_seen = 0;
  std::erase_if(w.network.hosts, [&](const SimHost& h) {
    return h.profile == minor && minor_seen++ >= params.minor_devices;
  });

  // Extra interfaces live in 10.<profile>.128.0/17.
  std::vector<std::vector<Ipv4Address>> devices;
  std::vector<std::size_t> device_profile;
  std::vector<std::size_t> extra_count(profiles.size(), 0);
  std::vector<SimHost> extra;
  for (const auto& h : w.network.hosts) {
    std::vector<Ipv4Address> ifaces = {h.address};
    if (rng.chance(params.multi_interface)) {
      const auto n = rng.between(1, 3);
      for (std::int64_t i = 0; i < n; ++i) {
        const auto j = extra_count[h.profile]++;
        SimHost e = h;
        e.address = Ipv4Address(10, static_cast<std::uint8_t>(h.profile), static_cast<std::uint8_t>(128 + j / 250),
                                static_cast<std::uint8_t>(j % 250 + 1));
        extra.push_back(e);
        ifaces.push_back(e.address);
      }
    }
    devices.push_back(std::move(ifaces));
    device_profile.push_back(h.profile);
  }
  w.network.hosts.insert(w.network.hosts.end(), extra.begin(), extra.end());
  std::sort(w.network.hosts.begin(), w.network.hosts.end(),
            [](const SimHost& a, const SimHost& b) { return a.address < b.address; });
  w.network.validate();
  for (const auto& h : w.network.hosts) w.truth.emplace(h.address, profiles[h.profile].vendor);

  for (std::size_t d = 0; d < devices.size(); ++d) {
    const auto node = "N" + std::to_string(d + 1);
    for (auto a : devices[d]) w.aliases.add(node, a);
  }

  // Banners: each template with probability 0.6, at least one that labels,
  // each on a random interface of the device.
  std::map<std::pair<Ipv4Address, int>, std::size_t> used;
  auto put = [&](Ipv4Address ip, BannerProtocol p, std::string text) {
    if (used.emplace(std::pair{ip, static_cast<int>(p)}, w.banners.size()).second) {
      w.banners.push_back({ip, p, std::move(text)});
      return true;
    }
    return false;
  };
  const auto& templates = vendor_templates();
  for (std::size_t d = 0; d < devices.size(); ++d) {
    const auto& ts = templates[device_profile[d]];
    std::vector<const Template*> chosen;
    for (const auto& t : ts) {
      if (rng.chance(0.6)) chosen.push_back(&t);
    }
    if (std::none_of(chosen.begin(), chosen.end(), [](const Template* t) { return t->labels; })) {
      std::vector<const Template*> labeling;
      for (const auto& t : ts) {
        if (t.labels) labeling.push_back(&t);
      }
      chosen.push_back(labeling[rng.below(labeling.size())]);
    }
    for (const auto* t : chosen) {
      put(devices[d][rng.below(devices[d].size())], t->protocol, fill(t->text, rng));
    }
    // A few multi-interface devices carry another vendor's banner on one
    // interface, as after an address reassignment.
    if (devices[d].size() > 1 && rng.chance(0.02)) {
      const auto other = (device_profile[d] + 1 + rng.below(templates.size() - 2)) % (templates.size() - 1);
      for (const auto& t : templates[other]) {
        if (t.labels && put(devices[d].back(), t.protocol, fill(t.text, rng))) break;
      }
    }
  }
  const auto& decoys = decoy_templates();
  for (std::size_t k = 0; k < decoys.size(); ++k) {
    for (std::size_t i = 0; i < params.decoys; ++i) {
      put(Ipv4Address(172, static_cast<std::uint8_t>(16 + k), static_cast<std::uint8_t>(i / 250),
                      static_cast<std::uint8_t>(i % 250 + 1)),
          decoys[k].protocol, fill(decoys[k].text, rng));
    }
  }
  std::sort(w.banners.begin(), w.banners.end(), [](const BannerRecord& a, const BannerRecord& b) {
    return std::pair(a.ip, a.protocol) < std::pair(b.ip, b.protocol);
  });

  // Traceroutes: hop vendors skewed by vantage point and destination region.
  const std::vector<Source> sources = {
      {"ark-us1", "US", {0, 6}}, {"ark-de1", "DE", {5, 0}}, {"ark-jp1", "JP", {4, 0}}, {"ark-br1", "BR", {1, 2}}};
  const std::vector<Region> regions = {{Ipv4Address(20, 0, 0, 0), {0, 6}},
                                       {Ipv4Address(30, 0, 0, 0), {2, 5}},
                                       {Ipv4Address(30, 128, 0, 0), {2, 8}},
                                       {Ipv4Address(40, 0, 0, 0), {2, 3, 8}},
                                       {Ipv4Address(50, 0, 0, 0), {1, 9}}};
  std::vector<std::vector<std::size_t>> by_vendor(minor);
  for (std::size_t d = 0; d < devices.size(); ++d) {
    if (device_profile[d] < minor) by_vendor[device_profile[d]].push_back(d);
  }
  for (std::size_t i = 0; i < params.traces; ++i) {
    const auto& src = sources[rng.below(sources.size())];
    const auto& reg = regions[rng.below(regions.size())];
    std::vector<double> weight(minor, 1.0);
    for (auto v : src.favored) weight[v] += 3;
    for (auto v : reg.favored) weight[v] += 3;
    double total = 0;
    for (double x : weight) total += x;

    TracerouteRecord t;
    t.source_id = src.id;
    t.source_country = src.country;
    t.dst = Ipv4Address(reg.base.value() | static_cast<std::uint32_t>(rng.between(1, 0x7FFFFE)));
    const auto hops = rng.between(3, 9);
    for (std::int64_t h = 0; h < hops; ++h) {
      if (rng.chance(0.1)) {
        t.hops.push_back(std::nullopt);
        continue;
      }
      double x = rng.unit() * total;
      std::size_t v = 0;
      while (v + 1 < minor && x >= weight[v]) x -= weight[v++];
      const auto& pool = by_vendor[v];
      const auto& ifaces = devices[pool[rng.below(pool.size())]];
      t.hops.push_back(ifaces[rng.below(ifaces.size())]);
    }
    t.hops.push_back(t.dst);
    w.traces.push_back(std::move(t));
  }
  return w;
}

const std::vector<FingerprintRule>& sim_rules() {
  static const std::vector<FingerprintRule> rules = [] {
    const std::string why = "reviewed cluster candidate in the simulated corpus";
    return std::vector<FingerprintRule>{
        {"mikrotik-rossh", "^SSH-2\\.0-ROSSSH", "mikrotik", 2, false, why},
        {"mikrotik-routeros", "routeros ccr", "mikrotik", 2, false, why},
        {"h3c-comware", "comware", "h3c", 2, false, why},
        {"h3c-over-huawei", "h3c", "h3c", 2, false, "H3C banners also credit Huawei-3Com; H3C supersedes"},
        {"nec-ix", "nec portable internetwork core", "nec", 2, false, why},
        {"zte-zxr10", "welcome to zxr10", "zte", 2, false, why},
        {"ubiquoss-switch", "ubiquoss", "ubiquoss", 2, false, why},
        {"dell-force10", "force10 networks", "dell", 2, false, why},
        {"consumer-wireless", "wireless router", "", 0, true, "consumer gear, not a network device"},
    };
  }();
  return rules;
}

std::vector<FingerprintRule> rules_from_vendor_table(const std::vector<VendorPattern>& table) {
  std::vector<FingerprintRule> out;
  std::map<std::string, int> seen;
  for (const auto& p : table) {
    const int n = ++seen[p.vendor];
    out.push_back({"name-" + p.vendor + "-" + std::to_string(n), p.pattern, p.vendor, 1, false,
                   "vendor name table"});
  }
  return out;
}

const std::string& world_geo_csv() {
  static const std::string csv =
      "prefix,continent\n"
      "20.0.0.0/8,NA\n"
      "30.0.0.0/8,EU\n"
      "30.128.0.0/9,AF\n"
      "40.0.0.0/8,AS\n"
      "50.0.0.0/8,SA\n";
  return csv;
}

}  // namespace devprint
