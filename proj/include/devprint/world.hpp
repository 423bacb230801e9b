// A synthetic Internet for the end-to-end pipeline: simulated routers with
// several interfaces each, their service banners, ITDK-style alias sets,
// traceroutes from a few vantage points, and a toy geolocation table.
//
// Banners are written so that labeling needs both the vendor-name table and a
// set of reviewed rules (sim_rules()), and so that some IPs are conflicted,
// blacklisted, or name a vendor the scan cannot reach.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "devprint/banner.hpp"
#include "devprint/sim.hpp"
#include "devprint/topology.hpp"

namespace devprint {

struct WorldParams {
  std::size_t per_vendor = 200;     // devices per default profile
  std::size_t minor_devices = 25;   // devices of a 12th, small vendor
  double multi_interface = 0.3;     // share of devices with extra interfaces
  std::size_t decoys = 40;          // non-router banner hosts of each decoy kind
  std::size_t traces = 400;
  double loss = 0.01;
  double acl_drop = 0.02;
  std::uint64_t seed = 7;

  void validate() const;  // throws UsageError
};

struct World {
  SimNetwork network;                      // every interface is a host
  std::vector<BannerRecord> banners;       // sorted by (ip, protocol)
  AliasMap aliases;                        // one node per device
  std::vector<TracerouteRecord> traces;
  std::map<Ipv4Address, std::string> truth;  // interface -> profile vendor
};

// The 11 default profiles plus "Extreme".
std::vector<StackProfile> world_profiles();

World make_world(const WorldParams& params);

// Reviewed rules for the world's banners (shipped as data/sim-rules.json).
const std::vector<FingerprintRule>& sim_rules();

// The vendor-name table as priority-1 rules with ids "name-<vendor>-<n>".
std::vector<FingerprintRule> rules_from_vendor_table(const std::vector<VendorPattern>& table);

// Continents for the traceroute destinations (shipped as data/geo.csv).
const std::string& world_geo_csv();

}  // namespace devprint
