#include <algorithm>
#include <fstream>
#include <sstream>

#include "devprint/banner.hpp"
#include "devprint/error.hpp"
#include "doctest.h"

using namespace devprint;

namespace {

// Textbook full-table Levenshtein.
int dp_levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) t[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) t[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = std::min({t[i - 1][j] + 1, t[i][j - 1] + 1,
                          t[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return t[a.size()][b.size()];
}

int brute_substring_min(std::string a, std::string b) {
  if (a.size() > b.size()) std::swap(a, b);
  if (a.empty()) return 0;
  int best = 1 << 30;
  for (std::size_t s = 0; s + a.size() <= b.size(); ++s) {
    best = std::min(best, dp_levenshtein(a, b.substr(s, a.size())));
  }
  return best;
}

std::string random_text(Rng& rng, std::size_t len, const std::string& alphabet) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

std::string jitter_digits(Rng& rng, std::string s) {
  for (auto& c : s) {
    if (c >= '0' && c <= '9') c = static_cast<char>('0' + rng.below(10));
  }
  return s;
}

const std::vector<std::string> kTemplates = {
    "SSH-2.0-ROSSSH routeros ccr1009 build 6.45.9 node 4411",
    "welcome to zxr10 series router 2981 unit 77 login",
    "\r\n\r\nUser Access Verification 5512 hpvrp-9 \r\n\r\nPassword: ",
};

struct Planted {
  std::vector<std::string> texts;
  std::vector<int> origin;  // template index, -1 for random
};

Planted planted(std::uint64_t seed) {
  Rng rng(seed);
  Planted p;
  for (int t = 0; t < 3; ++t) {
    for (int k = 0; k < 20; ++k) {
      p.texts.push_back(jitter_digits(rng, kTemplates[static_cast<std::size_t>(t)]));
      p.origin.push_back(t);
    }
  }
  for (int k = 0; k < 10; ++k) {
    p.texts.push_back(random_text(rng, 20 + rng.below(30), "abcdefghijklmnopqrstuvwxyz0123456789 "));
    p.origin.push_back(-1);
  }
  return p;
}

BannerRecord banner(const std::string& ip, BannerProtocol proto, std::string text) {
  return {Ipv4Address::parse(ip), proto, std::move(text)};
}

FingerprintRule rule(std::string id, std::string pattern, std::string vendor, int priority = 0,
                     bool blacklist = false) {
  return {std::move(id), std::move(pattern), std::move(vendor), priority, blacklist, ""};
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("vendor name matching") {
  const VendorMatcher m;
  CHECK(m.match("Cisco IOS Software") == std::set<std::string>{"cisco"});
  CHECK(m.match("c i s c o  systems") == std::set<std::string>{"cisco"});
  CHECK(m.match("extreme consequences for unauthorized connections") ==
        std::set<std::string>{"extreme"});
  CHECK(m.match("JUNOS 18.2R1") == std::set<std::string>{"juniper"});
  CHECK(m.match("Hewlett-Packard ProCurve").count("hpe"));
  CHECK(m.match("plain openssh").empty());
  CHECK(m.match("Huawei and Cisco").size() == 2);
}

TEST_CASE("vendor table file matches the built-in table") {
  const auto table = parse_vendor_table(read_text(DEVPRINT_DATA_DIR "/vendor-regex.tsv"));
  REQUIRE(table.size() == vendor_name_table().size());
  std::set<std::string> vendors;
  for (std::size_t i = 0; i < table.size(); ++i) {
    CHECK(table[i].vendor == vendor_name_table()[i].vendor);
    CHECK(table[i].pattern == vendor_name_table()[i].pattern);
    vendors.insert(table[i].vendor);
  }
  CHECK(vendors.size() == 40);
  CHECK(format_vendor_table(table) == read_text(DEVPRINT_DATA_DIR "/vendor-regex.tsv"));
  CHECK_THROWS_AS(parse_vendor_table("cisco\n"), ParseError);
  CHECK_THROWS_AS(parse_vendor_table("x\t(\n"), ParseError);
}

TEST_CASE("label by vendor name pools an IP's banners") {
  const std::vector<BannerRecord> corpus = {
      banner("10.0.0.1", BannerProtocol::ssh, "SSH-2.0-Cisco-1.25"),
      banner("10.0.0.1", BannerProtocol::telnet, "User Access Verification"),
      banner("10.0.0.2", BannerProtocol::ssh, "SSH-2.0-HUAWEI-1.5"),
      banner("10.0.0.2", BannerProtocol::snmp, "Cisco IOS"),
      banner("10.0.0.3", BannerProtocol::ssh, "SSH-2.0-dropbear"),
  };
  const auto r = label_by_vendor_name(corpus, VendorMatcher());
  CHECK(r.labels.size() == 1);
  CHECK(r.labels.at(Ipv4Address::parse("10.0.0.1")) == "cisco");
  CHECK(r.conflicts.at(Ipv4Address::parse("10.0.0.2")) == std::set<std::string>{"cisco", "huawei"});
}

TEST_CASE("base64 and banners.jsonl") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_decode("Zm9vYg==") == "foob");
  CHECK(base64_decode("Zm8=") == "fo");
  CHECK_THROWS_AS(base64_decode("Zm9"), DataError);
  CHECK_THROWS_AS(base64_decode("Zm9*"), DataError);

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string bytes;
    const auto len = rng.below(40);
    for (std::size_t k = 0; k < len; ++k) bytes += static_cast<char>(rng.below(256));
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }

  const std::vector<BannerRecord> corpus = {
      banner("10.0.0.1", BannerProtocol::telnet, std::string("\xff\xfb\x01\r\nlogin: \0", 12)),
      banner("10.0.0.1", BannerProtocol::ssh, ""),
  };
  std::stringstream ss;
  write_banners(ss, corpus);
  CHECK(read_banners(ss) == corpus);

  std::istringstream dup(
      "{\"ip\":\"1.2.3.4\",\"protocol\":\"ssh\",\"text\":\"\"}\n"
      "{\"ip\":\"1.2.3.4\",\"protocol\":\"SSH\",\"text\":\"\"}\n");
  try {
    read_banners(dup, "b.jsonl");
    FAIL("duplicate accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("substring minimum edit distance examples") {
  CHECK(substring_min_levenshtein("abc", "xxabcxx") == 0);
  CHECK(substring_min_levenshtein("abc", "abc") == 0);
  CHECK(substring_min_levenshtein("", "abc") == 0);
  CHECK(substring_min_levenshtein("kitten", "sitting") == brute_substring_min("kitten", "sitting"));
  CHECK(substring_min_levenshtein("kitten", "sitting") == 2);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(substring_min_levenshtein("sitting", "kitten") == 2);
  // Windows have the shorter string's length, so one inserted character can
  // cost two edits inside every window.
  CHECK(levenshtein("abcd", "abxcd") == 1);
  CHECK(substring_min_levenshtein("abcd", "abxcd") == 2);
  CHECK(brute_substring_min("abcd", "abxcd") == 2);
}

TEST_CASE("substring minimum edit distance against the brute-force oracle") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::string alphabet = i % 2 ? "ab" : "abcdefgh";
    const auto a = random_text(rng, rng.below(12), alphabet);
    const auto b = random_text(rng, rng.below(20), alphabet);
    REQUIRE(substring_min_levenshtein(a, b) == brute_substring_min(a, b));
    REQUIRE(levenshtein(a, b) == dp_levenshtein(a, b));
    CHECK(substring_min_levenshtein(a, b) <= 2 * levenshtein(a, b));
    CHECK(substring_min_levenshtein(a, b) == substring_min_levenshtein(b, a));
  }
}

TEST_CASE("substring minimum edit distance across word boundaries") {
  Rng rng(12);
  for (int i = 0; i < 40; ++i) {
    const std::string alphabet = "abcd\r\n";
    const auto a = random_text(rng, 60 + rng.below(150), alphabet);
    const auto b = random_text(rng, a.size() + rng.below(40), alphabet);
    REQUIRE(substring_min_levenshtein(a, b) == brute_substring_min(a, b));
  }
}

TEST_CASE("distance matrix") {
  const std::vector<std::string> same(3, "SSH-2.0-OpenSSH");
  const auto z = pairwise_distance_matrix(same);
  CHECK(std::all_of(z.d.begin(), z.d.end(), [](int v) { return v == 0; }));

  Rng rng(13);
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back(random_text(rng, rng.below(25), "abcxyz "));
  const auto m = pairwise_distance_matrix(texts);
  REQUIRE(m.size == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(m.at(i, i) == 0);
    for (std::size_t j = 0; j < 10; ++j) {
      CHECK(m.at(i, j) == m.at(j, i));
      CHECK(m.at(i, j) == brute_substring_min(texts[i], texts[j]));
    }
  }
  CHECK_THROWS_AS(pairwise_distance_matrix(std::vector<std::string>(1001, "x")), UsageError);
}

TEST_CASE("clustering recovers planted templates") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto p = planted(seed);
    const auto clusters = cluster_banners(pairwise_distance_matrix(p.texts));
    std::size_t real = 0;
    std::set<int> origins;
    for (const auto& c : clusters) {
      if (c.is_noise) continue;
      ++real;
      CHECK(c.members.size() >= 5);
      std::map<int, std::size_t> count;
      for (auto m : c.members) ++count[p.origin[m]];
      std::size_t top = 0;
      int top_origin = -1;
      for (auto [o, n] : count) {
        if (n > top) top = n, top_origin = o;
      }
      CHECK(top_origin >= 0);
      CHECK(static_cast<double>(top) / static_cast<double>(c.members.size()) >= 0.95);
      origins.insert(top_origin);

      std::vector<std::string> members;
      for (auto m : c.members) members.push_back(p.texts[m]);
      const auto mined = mine_frequent_substrings(members);
      REQUIRE(mined.size() >= 1);
      // One of the top substrings is a stretch of the template between digits.
      bool found = false;
      for (std::size_t k = 0; k < std::min<std::size_t>(3, mined.size()); ++k) {
        found = found || kTemplates[static_cast<std::size_t>(top_origin)].find(mined[k].text) !=
                             std::string::npos;
      }
      CHECK(found);
    }
    CHECK(real >= 3);
    CHECK(origins.size() == 3);
    REQUIRE(clusters.back().is_noise);
    for (std::size_t i = 60; i < 70; ++i) {
      CHECK(std::count(clusters.back().members.begin(), clusters.back().members.end(), i) == 1);
    }
  }
}

TEST_CASE("clusters partition the sample") {
  const auto p = planted(4);
  const auto clusters = cluster_banners(pairwise_distance_matrix(p.texts));
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    CHECK(std::is_sorted(clusters[i].members.begin(), clusters[i].members.end()));
    CHECK(clusters[i].is_noise == (i + 1 == clusters.size() && clusters[i].is_noise));
    all.insert(all.end(), clusters[i].members.begin(), clusters[i].members.end());
  }
  std::sort(all.begin(), all.end());
  CHECK(all.size() == p.texts.size());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("a single dense group needs allow_single_cluster") {
  Rng rng(8);
  std::vector<std::string> texts;
  for (int i = 0; i < 20; ++i) texts.push_back(jitter_digits(rng, "SSH-2.0-Comware-7.1.064 r1"));
  for (int i = 0; i < 20; ++i) texts.push_back(random_text(rng, 30, "abcdefghijklmnopqrstuvwxyz "));
  const auto m = pairwise_distance_matrix(texts);
  const auto plain = cluster_banners(m);
  REQUIRE(plain.size() == 1);
  CHECK(plain[0].is_noise);

  ClusterParams single;
  single.allow_single_cluster = true;
  const auto one = cluster_banners(m, single);
  REQUIRE(one.size() == 2);
  CHECK(!one[0].is_noise);
  CHECK(one[0].members.size() >= 5);
  for (auto i : one[0].members) CHECK(i < 20);
}

TEST_CASE("small samples are all noise") {
  const std::vector<std::string> texts = {"alpha", "bravo", "charlie", "delta"};
  const auto clusters = cluster_banners(pairwise_distance_matrix(texts));
  REQUIRE(clusters.size() == 1);
  CHECK(clusters[0].is_noise);
  CHECK(clusters[0].members == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(cluster_banners(pairwise_distance_matrix({})).empty());
}

TEST_CASE("cluster membership is invariant under permutation") {
  auto canonical = [](const std::vector<Cluster>& clusters, const std::vector<std::size_t>& index) {
    std::set<std::pair<bool, std::set<std::size_t>>> out;
    for (const auto& c : clusters) {
      std::set<std::size_t> s;
      for (auto m : c.members) s.insert(index[m]);
      out.insert({c.is_noise, s});
    }
    return out;
  };
  for (std::uint64_t seed : {5, 6}) {
    const auto p = planted(seed);
    std::vector<std::size_t> identity(p.texts.size());
    std::iota(identity.begin(), identity.end(), 0);
    const auto base = canonical(cluster_banners(pairwise_distance_matrix(p.texts)), identity);
    Rng rng(seed);
    for (int trial = 0; trial < 3; ++trial) {
      auto perm = identity;
      rng.shuffle(perm);
      std::vector<std::string> shuffled;
      for (auto i : perm) shuffled.push_back(p.texts[i]);
      CHECK(canonical(cluster_banners(pairwise_distance_matrix(shuffled)), perm) == base);
    }
  }
  // Many exact ties.
  std::vector<std::string> ties;
  for (int i = 0; i < 12; ++i) ties.push_back(i % 2 ? "aaaa" : "bbbb");
  std::vector<std::size_t> identity(ties.size());
  std::iota(identity.begin(), identity.end(), 0);
  const auto base = canonical(cluster_banners(pairwise_distance_matrix(ties)), identity);
  CHECK(base.size() == 2);
  auto perm = identity;
  std::reverse(perm.begin(), perm.end());
  std::vector<std::string> shuffled;
  for (auto i : perm) shuffled.push_back(ties[i]);
  CHECK(canonical(cluster_banners(pairwise_distance_matrix(shuffled)), perm) == base);
}

TEST_CASE("substring mining") {
  auto zxr = mine_frequent_substrings({"welcome to zxr10 29", "welcome to zxr10 81"});
  REQUIRE(!zxr.empty());
  CHECK(zxr[0].text.find("welcome to zxr") != std::string::npos);
  CHECK(zxr[0].frequency == 1);

  auto ros = mine_frequent_substrings({"routeros ccr1009", "routeros ccr1016"});
  REQUIRE(!ros.empty());
  CHECK(ros[0].text.find("routeros ccr1") != std::string::npos);

  CHECK(mine_frequent_substrings({"aaaaaaaaaaaa", "bbbbbbbbbbbb"}).empty());
  CHECK(mine_frequent_substrings({"login: x", "login: y"}).empty());

  // Frequency counts pairs; ties fall to length then text.
  auto three = mine_frequent_substrings(
      {"header-one 1 tail-part-A", "header-one 2 tail-part-B", "header-one 3 other-stuff"});
  REQUIRE(three.size() == 2);
  CHECK(three[0] == MinedSubstring{"header-one ", 3});
  CHECK(three[1] == MinedSubstring{" tail-part-", 1});

  auto blocks = mine_frequent_substrings({"prefix-AAAA-12345678", "prefix-AAAA-x-12345678"}, 4);
  std::set<std::string> texts;
  for (const auto& m : blocks) texts.insert(m.text);
  CHECK(texts == std::set<std::string>{"prefix-AAAA-", "12345678"});
}

TEST_CASE("rule application") {
  const std::vector<FingerprintRule> rules = {
      rule("cisco-1", "cisco ios", "cisco"),
      rule("huawei-1", "huawei", "huawei", 1),
      rule("h3c-1", "h3c comware", "h3c", 2),
      rule("bl-1", "dd-wrt", "", 0, true),
      rule("juniper-1", "junos", "juniper"),
      rule("mikrotik-1", "routeros", "mikrotik"),
  };
  const std::vector<BannerRecord> corpus = {
      banner("10.0.0.1", BannerProtocol::snmp, "Cisco IOS Software, C2900"),
      banner("10.0.0.2", BannerProtocol::snmp, "H3C Comware Platform Software, Huawei"),
      banner("10.0.0.3", BannerProtocol::telnet, "DD-WRT v24 cisco ios lookalike"),
      banner("10.0.0.4", BannerProtocol::ssh, "JUNOS"),
      banner("10.0.0.4", BannerProtocol::telnet, "RouterOS"),
      banner("10.0.0.5", BannerProtocol::ssh, "SSH-2.0-dropbear"),
  };
  const RuleSet set(rules);
  const auto r = apply_rules(corpus, set);
  CHECK(r.labels() == std::map<Ipv4Address, std::string>{
                          {Ipv4Address::parse("10.0.0.1"), "cisco"},
                          {Ipv4Address::parse("10.0.0.2"), "h3c"}});
  CHECK(r.assignments.at(Ipv4Address::parse("10.0.0.2")).rule_ids == std::set<std::string>{"h3c-1"});
  CHECK(r.blacklisted == std::set<Ipv4Address>{Ipv4Address::parse("10.0.0.3")});
  CHECK(!r.assignments.count(Ipv4Address::parse("10.0.0.3")));
  const auto& conflicted = r.assignments.at(Ipv4Address::parse("10.0.0.4"));
  CHECK(conflicted.conflicted);
  CHECK(conflicted.vendor.empty());
  CHECK(!r.assignments.count(Ipv4Address::parse("10.0.0.5")));

  // Idempotent and independent of rule order.
  const auto again = apply_rules(corpus, set);
  CHECK(again.assignments == r.assignments);
  auto reversed = rules;
  std::reverse(reversed.begin(), reversed.end());
  const auto rr = apply_rules(corpus, RuleSet(reversed));
  CHECK(rr.assignments == r.assignments);
  CHECK(rr.blacklisted == r.blacklisted);
  for (const auto& [ip, vendor] : r.labels()) {
    for (const auto& b : corpus) {
      if (b.ip != ip) continue;
      for (auto i : set.fire(b.text)) CHECK(!rules[i].blacklist);
    }
  }
}

TEST_CASE("rules file") {
  const std::vector<FingerprintRule> rules = {
      {"a", "x\\d+", "cisco", 3, false, "seen on vendor site"},
      {"b", "dd-wrt", "", 0, true, ""},
  };
  CHECK(rules_from_json(rules_to_json(rules)) == rules);
  CHECK_THROWS_AS(rules_from_json(R"([{"id":"a","pattern":"(","vendor":"x"}])"), ConfigError);
  CHECK_THROWS_AS(rules_from_json(R"([{"id":"a","pattern":"x","vendor":"x"},{"id":"a","pattern":"y","vendor":"y"}])"),
                  ConfigError);
  CHECK_THROWS_AS(rules_from_json(R"([{"id":"a","pattern":"x"}])"), ConfigError);
  CHECK_THROWS_AS(rules_from_json(R"([{"id":"a","pattern":"x","vendor":"v","prio":1}])"), ConfigError);
  CHECK_THROWS_AS(rules_from_json("{}"), ConfigError);
  CHECK(rules_from_json(R"([{"id":"a","pattern":"x","vendor":"v"}])")[0].priority == 0);
}

TEST_CASE("rule audit") {
  std::vector<FingerprintRule> rules = {
      rule("uav", "user access verification[\\s\\S]*username", "cisco"),
      rule("hw", "huawei", "huawei"),
      rule("jn", "junos", "juniper"),
      rule("zx", "zxr10", "zte"),
      rule("h3", "comware", "h3c"),
      rule("mt", "mikrotik", "mikrotik"),
      rule("only", "only-me", "dell"),
      rule("pair-a", "pair-a", "nokia"),
      rule("pair-b", "pair-b", "ericsson"),
  };
  std::vector<BannerRecord> corpus;
  const std::vector<std::string> others = {"huawei", "junos", "zxr10", "comware"};
  for (std::size_t i = 0; i < others.size(); ++i) {
    corpus.push_back(banner("10.1.0." + std::to_string(i + 1), BannerProtocol::telnet,
                            "User Access Verification\r\nUsername: " + others[i]));
  }
  for (int i = 0; i < 1000; ++i) {
    corpus.push_back(banner("10.2." + std::to_string(i / 200) + "." + std::to_string(i % 200 + 1),
                            BannerProtocol::ssh, "only-me"));
  }
  corpus.push_back(banner("10.3.0.1", BannerProtocol::ssh, "pair-a pair-b"));
  const auto audit = audit_rules(corpus, RuleSet(rules));
  REQUIRE(audit.size() == rules.size());
  CHECK(audit[0].fires == 4);
  CHECK(audit[0].co_fires.size() == 4);
  CHECK(audit[0].flagged);
  CHECK(!audit[1].flagged);
  CHECK(audit[1].precedence_candidate);
  CHECK(audit[6].fires == 1000);
  CHECK(!audit[6].flagged);
  CHECK(!audit[6].precedence_candidate);
  CHECK(audit[7].precedence_candidate);
  CHECK(audit[7].co_fires == std::map<std::string, std::size_t>{{"ericsson", 1}});
  CHECK(!audit[5].flagged);
  CHECK(audit[5].fires == 0);
}

TEST_CASE("regex escape round trip") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    std::string lit;
    const auto len = 1 + rng.below(20);
    for (std::size_t k = 0; k < len; ++k) lit += static_cast<char>(1 + rng.below(126));
    const std::regex re(regex_escape(lit), std::regex::ECMAScript);
    CHECK(std::regex_search(lit, re));
    CHECK(std::regex_match(lit, re));
  }
}

TEST_CASE("iterative labeling with an adopted rule") {
  Rng rng(31);
  std::vector<BannerRecord> corpus;
  for (int i = 0; i < 50; ++i) {
    corpus.push_back(banner("10.9.0." + std::to_string(i + 1), BannerProtocol::ssh,
                            jitter_digits(rng, "SSH-2.0-Comware-7.1.064 node 0000 ready")));
  }
  for (int i = 0; i < 150; ++i) {
    corpus.push_back(banner("10.9.1." + std::to_string(i + 1), BannerProtocol::ssh,
                            random_text(rng, 20 + rng.below(30), "abcdefghijklmnopqrstuvwxyz-. ")));
  }
  corpus.push_back(banner("10.9.2.1", BannerProtocol::telnet, "cisco ios"));

  IterateParams params;
  params.sample_size = 120;
  params.rounds = 1;
  params.cluster.allow_single_cluster = true;
  std::size_t reviews = 0;
  auto reviewer = [&](const std::vector<Candidate>& cands) {
    ++reviews;
    std::vector<FingerprintRule> adopted;
    const auto& top = cands.front().top.front().text;
    adopted.push_back(rule("adopted-1", regex_escape(top), "h3c"));
    return adopted;
  };
  const auto result =
      iterate_labeling(corpus, {rule("cisco-1", "cisco", "cisco")}, params, reviewer);
  CHECK(reviews == 1);
  REQUIRE(result.log.size() == 3);
  CHECK(result.log[0].unlabeled_before == 200);
  CHECK(result.log[0].sampled == 120);
  CHECK(result.log[0].candidates >= 1);
  CHECK(result.log[0].unlabeled_after <= 150);
  CHECK(result.log[1].unlabeled_before == 0);
  CHECK(result.rules.size() == 2);
  std::size_t h3c = 0;
  for (const auto& [ip, v] : result.labels.labels()) h3c += v == "h3c";
  CHECK(h3c >= 50);
  for (const auto& c : result.candidates) CHECK(c.size >= 5);
  std::ostringstream out;
  write_candidates(out, result.candidates);
  const auto text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(result.candidates.size()));
}

TEST_CASE("iterative labeling of a fully labeled corpus finds nothing") {
  std::vector<BannerRecord> corpus;
  for (int i = 0; i < 30; ++i) {
    corpus.push_back(banner("10.8.0." + std::to_string(i + 1), BannerProtocol::ssh,
                            "SSH-2.0-Cisco-1.25 " + std::to_string(i)));
  }
  IterateParams params;
  params.rounds = 3;
  const auto result = iterate_labeling(corpus, {rule("c", "cisco", "cisco")}, params);
  CHECK(result.candidates.empty());
  std::ostringstream out;
  write_candidates(out, result.candidates);
  CHECK(out.str().empty());
  CHECK(result.log.size() == 3);  // one round, then the pool stopped shrinking
  CHECK_THROWS_AS(iterate_labeling(corpus, {}, IterateParams{1001}), UsageError);
}

TEST_CASE("sampling is without replacement and seeded") {
  std::vector<BannerRecord> corpus;
  for (int i = 0; i < 40; ++i) {
    corpus.push_back(banner("10.7.0." + std::to_string(i + 1), BannerProtocol::telnet,
                            "banner number " + std::to_string(i * 7919)));
  }
  IterateParams params;
  params.sample_size = 40;
  std::vector<std::size_t> seen;
  const auto result = iterate_labeling(corpus, {}, params, [&](const std::vector<Candidate>& c) {
    for (const auto& cand : c) seen.push_back(cand.size);
    return std::vector<FingerprintRule>{};
  });
  CHECK(result.log[1].sampled == 40);
  std::size_t total = 0;
  for (auto s : seen) total += s;
  CHECK(total <= 40);
  const auto again = iterate_labeling(corpus, {}, params);
  REQUIRE(again.candidates.size() == result.candidates.size());
  for (std::size_t i = 0; i < again.candidates.size(); ++i) {
    CHECK(again.candidates[i].digest == result.candidates[i].digest);
  }
}
