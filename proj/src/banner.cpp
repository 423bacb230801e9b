#include "devprint/banner.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "devprint/error.hpp"
#include "json.hpp"

namespace devprint {

namespace {

using ojson = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::regex compile(const std::string& pattern) {
  return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
}

bool search(const std::regex& re, std::string_view text) {
  return std::regex_search(text.begin(), text.end(), re);
}

// Banner text may hold arbitrary bytes; invalid UTF-8 is replaced for display.
std::string dump_line(const ojson& j) {
  return j.dump(-1, ' ', false, ojson::error_handler_t::replace);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

// --- banners -------------------------------------------------------------------

std::string_view to_string(BannerProtocol p) {
  switch (p) {
    case BannerProtocol::ssh: return "ssh";
    case BannerProtocol::telnet: return "telnet";
    case BannerProtocol::snmp: return "snmp";
  }
  return "?";
}

BannerProtocol parse_protocol(std::string_view text) {
  const std::string t = lower(text);
  if (t == "ssh") return BannerProtocol::ssh;
  if (t == "telnet") return BannerProtocol::telnet;
  if (t == "snmp") return BannerProtocol::snmp;
  throw DataError("unknown banner protocol '" + std::string(text) + "'");
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw DataError("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/' ||
                    (c == '=' && i >= text.size() - 2);
    if (!ok) throw DataError("invalid base64 character");
  }
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw DataError("invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  if (text.back() == '=') --len;
  if (text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

void write_banners(std::ostream& out, const std::vector<BannerRecord>& banners) {
  for (const auto& b : banners) {
    ojson j;
    j["ip"] = b.ip.to_string();
    j["protocol"] = to_string(b.protocol);
    j["text"] = base64_encode(b.text);
    out << j.dump() << '\n';
  }
}

std::vector<BannerRecord> read_banners(std::istream& in, const std::string& origin) {
  std::vector<BannerRecord> out;
  std::set<std::pair<Ipv4Address, BannerProtocol>> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const ojson j = ojson::parse(line);
      BannerRecord b;
      b.ip = Ipv4Address::parse(j.at("ip").get<std::string>());
      b.protocol = parse_protocol(j.at("protocol").get<std::string>());
      b.text = base64_decode(j.at("text").get<std::string>());
      if (!seen.insert({b.ip, b.protocol}).second) {
        throw DataError("second " + std::string(to_string(b.protocol)) + " banner for " +
                        b.ip.to_string());
      }
      out.push_back(std::move(b));
    } catch (const std::exception& e) {
      throw ParseError(origin, lineno, e.what());
    }
  }
  return out;
}

void save_banners(const std::string& path, const std::vector<BannerRecord>& banners) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_banners(out, banners);
}

std::vector<BannerRecord> load_banners(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_banners(in, path);
}

// --- vendor names ----------------------------------------------------------------

const std::vector<VendorPattern>& vendor_name_table() {
  static const std::vector<VendorPattern> table = {
      {"adtran", "adtran"},       {"aerohive", "aerohive"},     {"alaxala", "alaxala"},
      {"allied", "allied"},       {"alcatel", "alcatel"},       {"aruba", "aruba"},
      {"asus", "asus"},           {"avaya", "avaya"},           {"avm", "avm"},
      {"brocade", "brocade"},     {"calix", "calix"},           {"cisco", "cisco"},
      {"cisco", "c i s c o"},     {"dell", "dell"},             {"draytek", "draytek"},
      {"d-link", "d-link"},       {"enterasys", "enterasys"},   {"ericsson", "ericsson"},
      {"extreme", "extreme"},     {"fortinet", "fortinet"},     {"h3c", "h3c"},
      {"hpe", "hpe"},             {"hpe", "hewlett"},           {"huawei", "huawei"},
      {"juniper", "juniper"},     {"juniper", "junos"},         {"lancom", "lancom"},
      {"linksys", "linksys"},     {"meraki", "meraki"},         {"mikrotik", "mikrotik"},
      {"netgear", "netgear"},     {"nokia", "nokia"},           {"openmesh", "open mesh"},
      {"ruckus", "ruckus"},       {"sierra", "sierra"},         {"technicolor", "technicolor"},
      {"tp-link", "tp-link"},     {"tp-link", "tplink"},        {"trendnet", "trendnet"},
      {"ubiquiti", "ubiquiti"},   {"xirrus", "xirrus"},         {"yamaha", "yamaha"},
      {"zyxel", "zyxel"},         {"zte", "zte"},               {"zte", "zhongxing"},
  };
  return table;
}

std::vector<VendorPattern> parse_vendor_table(const std::string& text, const std::string& origin) {
  std::vector<VendorPattern> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ParseError(origin, lineno, "expected 'vendor<TAB>pattern'");
    }
    VendorPattern p{line.substr(0, tab), line.substr(tab + 1)};
    try {
      compile(p.pattern);
    } catch (const std::regex_error& e) {
      throw ParseError(origin, lineno, std::string("bad pattern: ") + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string format_vendor_table(const std::vector<VendorPattern>& table) {
  std::string out = "# vendor\tpattern\n";
  for (const auto& p : table) out += p.vendor + "\t" + p.pattern + "\n";
  return out;
}

VendorMatcher::VendorMatcher(const std::vector<VendorPattern>& table) {
  for (const auto& p : table) patterns_.emplace_back(p.vendor, compile(p.pattern));
}

std::set<std::string> VendorMatcher::match(std::string_view text) const {
  std::set<std::string> out;
  for (const auto& [vendor, re] : patterns_) {
    if (!out.count(vendor) && search(re, text)) out.insert(vendor);
  }
  return out;
}

std::set<std::string> regex_match_vendor(const BannerRecord& banner, const VendorMatcher& matcher) {
  return matcher.match(banner.text);
}

NameMatchResult label_by_vendor_name(const std::vector<BannerRecord>& corpus,
                                     const VendorMatcher& matcher) {
  std::map<Ipv4Address, std::set<std::string>> hits;
  for (const auto& b : corpus) {
    auto v = matcher.match(b.text);
    if (!v.empty()) hits[b.ip].insert(v.begin(), v.end());
  }
  NameMatchResult r;
  for (auto& [ip, vendors] : hits) {
    if (vendors.size() == 1) r.labels[ip] = *vendors.begin();
    else r.conflicts[ip] = std::move(vendors);
  }
  return r;
}

// --- edit distance ---------------------------------------------------------------

int levenshtein(std::string_view a, std::string_view b) {
  std::vector<int> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

namespace {

// Bit-parallel global edit distance (Myers 1999, Hyyro's block form) of one
// pattern against many equal-length texts.
class MyersPattern {
 public:
  explicit MyersPattern(std::string_view p)
      : m_(p.size()), blocks_((p.size() + 63) / 64), peq_(256 * blocks_, 0),
        pv_(blocks_), mv_(blocks_) {
    for (std::size_t i = 0; i < m_; ++i) {
      peq_[static_cast<unsigned char>(p[i]) * blocks_ + i / 64] |= std::uint64_t{1} << (i % 64);
    }
    last_bit_ = std::uint64_t{1} << ((m_ - 1) % 64);
  }

  int distance(std::string_view text) {
    std::fill(pv_.begin(), pv_.end(), ~std::uint64_t{0});
    std::fill(mv_.begin(), mv_.end(), 0);
    int score = static_cast<int>(m_);
    for (unsigned char c : text) {
      int hin = 1;  // top row grows by one per column
      const std::uint64_t* eqs = &peq_[c * blocks_];
      for (std::size_t b = 0; b < blocks_; ++b) {
        std::uint64_t eq = eqs[b];
        const std::uint64_t pv = pv_[b];
        const std::uint64_t mv = mv_[b];
        const std::uint64_t xv = eq | mv;
        if (hin < 0) eq |= 1;
        const std::uint64_t xh = (((eq & pv) + pv) ^ pv) | eq;
        std::uint64_t ph = mv | ~(xh | pv);
        std::uint64_t mh = pv & xh;
        const std::uint64_t hi = b + 1 == blocks_ ? last_bit_ : std::uint64_t{1} << 63;
        const int hout = (ph & hi) ? 1 : (mh & hi) ? -1 : 0;
        ph <<= 1;
        mh <<= 1;
        if (hin < 0) mh |= 1;
        else if (hin > 0) ph |= 1;
        pv_[b] = mh | ~(xv | ph);
        mv_[b] = ph & xv;
        hin = hout;
      }
      score += hin;
    }
    return score;
  }

 private:
  std::size_t m_;
  std::size_t blocks_;
  std::vector<std::uint64_t> peq_;
  std::vector<std::uint64_t> pv_, mv_;
  std::uint64_t last_bit_ = 0;
};

}  // namespace

int substring_min_levenshtein(std::string_view a, std::string_view b) {
  if (a.size() > b.size()) std::swap(a, b);
  if (a.empty()) return 0;
  if (b.find(a) != std::string_view::npos) return 0;
  MyersPattern pattern(a);
  int best = std::numeric_limits<int>::max();
  for (std::size_t s = 0; s + a.size() <= b.size() && best > 0; ++s) {
    best = std::min(best, pattern.distance(b.substr(s, a.size())));
  }
  return best;
}

DistanceMatrix pairwise_distance_matrix(const std::vector<std::string>& texts, std::size_t max_size) {
  if (texts.size() > max_size) {
    throw UsageError("distance matrix limited to " + std::to_string(max_size) + " banners, got " +
                     std::to_string(texts.size()));
  }
  DistanceMatrix m;
  m.size = texts.size();
  m.sample.resize(m.size);
  std::iota(m.sample.begin(), m.sample.end(), 0);
  m.d.assign(m.size * m.size, 0);
  for (std::size_t i = 0; i < m.size; ++i) {
    for (std::size_t j = i + 1; j < m.size; ++j) {
      const int d = substring_min_levenshtein(texts[i], texts[j]);
      m.d[i * m.size + j] = d;
      m.d[j * m.size + i] = d;
    }
  }
  return m;
}

// --- HDBSCAN* ----------------------------------------------------------------------

namespace {

struct TreeNode {
  double weight = 0;  // merge distance; 0 for points
  std::vector<std::size_t> children;
  std::size_t size = 1;
};

// Lambda = 1/distance. Distances are integers, so a zero distance gets a
// lambda above every positive one instead of infinity.
double lambda_of(double w) { return w > 0 ? 1.0 / w : 2.0; }

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
};

// Single-linkage hierarchy over the mutual-reachability MST. Edges of equal
// weight merge in one multiway node so the result does not depend on point
// order.
std::vector<TreeNode> linkage_tree(const std::vector<std::tuple<double, std::size_t, std::size_t>>& mst,
                                   std::size_t n) {
  std::vector<TreeNode> nodes(n);
  DisjointSets points(n);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);

  for (std::size_t i = 0; i < mst.size();) {
    std::size_t j = i;
    while (j < mst.size() && std::get<0>(mst[j]) == std::get<0>(mst[i])) ++j;
    const double w = std::get<0>(mst[i]);
    // Group the current components joined at this level.
    std::map<std::size_t, std::size_t> local_parent;
    auto local_find = [&](std::size_t x) {
      if (!local_parent.count(x)) local_parent[x] = x;
      while (local_parent[x] != x) x = local_parent[x];
      return x;
    };
    for (std::size_t e = i; e < j; ++e) {
      const auto ra = points.find(std::get<1>(mst[e]));
      const auto rb = points.find(std::get<2>(mst[e]));
      const auto la = local_find(ra);
      const auto lb = local_find(rb);
      if (la != lb) local_parent[std::max(la, lb)] = std::min(la, lb);
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (const auto& [root, unused] : local_parent) groups[local_find(root)].push_back(root);
    for (const auto& [head, roots] : groups) {
      if (roots.size() < 2) continue;
      TreeNode node;
      node.weight = w;
      node.size = 0;
      for (std::size_t r : roots) {
        node.children.push_back(node_of[r]);
        node.size += nodes[node_of[r]].size;
      }
      const std::size_t id = nodes.size();
      nodes.push_back(std::move(node));
      for (std::size_t r : roots) points.parent[r] = head;
      node_of[head] = id;
    }
    i = j;
  }
  return nodes;
}

void collect_points(const std::vector<TreeNode>& nodes, std::size_t n, std::size_t root,
                    std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack = {root};
  while (!stack.empty()) {
    const std::size_t x = stack.back();
    stack.pop_back();
    if (x < n) {
      out.push_back(x);
    } else {
      for (std::size_t c : nodes[x].children) stack.push_back(c);
    }
  }
}

}  // namespace

std::vector<Cluster> cluster_banners(const DistanceMatrix& matrix, const ClusterParams& params) {
  const std::size_t n = matrix.size;
  if (params.min_cluster_size < 2 || params.min_samples < 1) {
    throw UsageError("min_cluster_size must be at least 2 and min_samples at least 1");
  }
  std::vector<Cluster> out;
  auto all_noise = [&] {
    Cluster noise;
    noise.is_noise = true;
    noise.members.resize(n);
    std::iota(noise.members.begin(), noise.members.end(), 0);
    if (n > 0) out.push_back(std::move(noise));
    return out;
  };
  if (n < params.min_cluster_size) return all_noise();

  // Core distance: distance to the min_samples-th nearest other point.
  std::vector<double> core(n);
  std::vector<int> row(n - 1);
  const std::size_t k = std::min(params.min_samples, n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) row[c++] = matrix.at(i, j);
    }
    std::nth_element(row.begin(), row.begin() + static_cast<long>(k - 1), row.end());
    core[i] = row[k - 1];
  }
  auto reach = [&](std::size_t i, std::size_t j) {
    return std::max({core[i], core[j], static_cast<double>(matrix.at(i, j))});
  };

  // Prim's MST over the complete mutual-reachability graph.
  std::vector<std::tuple<double, std::size_t, std::size_t>> mst;
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<bool> in_tree(n, false);
  std::size_t cur = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double r = reach(cur, j);
      if (r < best[j]) {
        best[j] = r;
        from[j] = cur;
      }
    }
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    mst.emplace_back(best[next], from[next], next);
    in_tree[next] = true;
    cur = next;
  }
  std::sort(mst.begin(), mst.end());
  const auto nodes = linkage_tree(mst, n);

  // Condensed tree.
  struct Condensed {
    double birth = 0;
    std::size_t parent = 0;
    std::vector<std::size_t> children;
    double stability = 0;
    std::vector<std::pair<std::size_t, double>> points;  // points leaving, with lambda
  };
  std::vector<Condensed> clusters(1);
  std::vector<std::pair<std::size_t, std::size_t>> work = {{nodes.size() - 1, 0}};
  std::vector<std::size_t> scratch;
  const std::size_t mcs = params.min_cluster_size;
  while (!work.empty()) {
    auto [x, c] = work.back();
    work.pop_back();
    if (x < n) {
      clusters[c].points.emplace_back(x, clusters[c].birth);
      continue;
    }
    const double lam = lambda_of(nodes[x].weight);
    std::vector<std::size_t> big;
    for (std::size_t ch : nodes[x].children) {
      if (nodes[ch].size >= mcs) big.push_back(ch);
    }
    auto fall_out = [&](std::size_t ch) {
      scratch.clear();
      collect_points(nodes, n, ch, scratch);
      for (std::size_t p : scratch) clusters[c].points.emplace_back(p, lam);
      clusters[c].stability += static_cast<double>(scratch.size()) * (lam - clusters[c].birth);
    };
    for (std::size_t ch : nodes[x].children) {
      if (nodes[ch].size < mcs) fall_out(ch);
    }
    if (big.size() >= 2) {
      for (std::size_t ch : big) {
        clusters[c].stability += static_cast<double>(nodes[ch].size) * (lam - clusters[c].birth);
        Condensed cc;
        cc.birth = lam;
        cc.parent = c;
        clusters.push_back(std::move(cc));
        const std::size_t id = clusters.size() - 1;
        clusters[c].children.push_back(id);
        work.emplace_back(ch, id);
      }
    } else if (big.size() == 1) {
      work.emplace_back(big[0], c);
    }
  }

  // Excess of mass, bottom-up. The root is only eligible with
  // allow_single_cluster.
  std::vector<double> value(clusters.size());
  std::vector<bool> selected(clusters.size(), false);
  const std::size_t lowest = params.allow_single_cluster ? 0 : 1;
  for (std::size_t c = clusters.size(); c-- > lowest;) {
    double children = 0;
    for (std::size_t ch : clusters[c].children) children += value[ch];
    if (!clusters[c].children.empty() && children > clusters[c].stability) {
      value[c] = children;
    } else {
      value[c] = clusters[c].stability;
      selected[c] = true;
      std::vector<std::size_t> stack(clusters[c].children.begin(), clusters[c].children.end());
      while (!stack.empty()) {
        const std::size_t d = stack.back();
        stack.pop_back();
        selected[d] = false;
        for (std::size_t g : clusters[d].children) stack.push_back(g);
      }
    }
  }

  std::vector<bool> assigned(n, false);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (!selected[c]) continue;
    Cluster cl;
    std::vector<std::size_t> stack = {c};
    while (!stack.empty()) {
      const std::size_t d = stack.back();
      stack.pop_back();
      if (d == 0) {
        // The root holds every point; keep those that stay to its densest level.
        double top = 0;
        for (const auto& [p, lam] : clusters[0].points) top = std::max(top, lam);
        for (const auto& [p, lam] : clusters[0].points) {
          if (lam >= top) cl.members.push_back(p);
        }
      } else {
        for (const auto& [p, lam] : clusters[d].points) cl.members.push_back(p);
      }
      for (std::size_t g : clusters[d].children) stack.push_back(g);
    }
    if (cl.members.size() < params.min_cluster_size) continue;
    std::sort(cl.members.begin(), cl.members.end());
    for (std::size_t p : cl.members) assigned[p] = true;
    out.push_back(std::move(cl));
  }
  std::sort(out.begin(), out.end(),
            [](const Cluster& a, const Cluster& b) { return a.members.front() < b.members.front(); });
  Cluster noise;
  noise.is_noise = true;
  for (std::size_t p = 0; p < n; ++p) {
    if (!assigned[p]) noise.members.push_back(p);
  }
  if (!noise.members.empty()) out.push_back(std::move(noise));
  return out;
}

// --- mining ---------------------------------------------------------------------------

namespace {

// Longest common substring of a[alo,ahi) and b[blo,bhi); earliest in a, then b.
std::tuple<std::size_t, std::size_t, std::size_t> longest_match(std::string_view a, std::string_view b,
                                                                std::size_t alo, std::size_t ahi,
                                                                std::size_t blo, std::size_t bhi) {
  std::size_t bi = alo, bj = blo, bk = 0;
  std::vector<std::size_t> prev(bhi - blo + 1, 0), cur(bhi - blo + 1, 0);
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      const std::size_t x = j - blo + 1;
      cur[x] = a[i] == b[j] ? prev[x - 1] + 1 : 0;
      if (cur[x] > bk) {
        bk = cur[x];
        bi = i + 1 - bk;
        bj = j + 1 - bk;
      }
    }
    std::swap(prev, cur);
  }
  return {bi, bj, bk};
}

// Matching blocks in the manner of a sequence matcher: the longest match,
// then recursively the parts to its left and right.
void matching_blocks(std::string_view a, std::string_view b, std::size_t min_len,
                     std::set<std::string>& out) {
  std::vector<std::array<std::size_t, 4>> todo = {{0, a.size(), 0, b.size()}};
  while (!todo.empty()) {
    const auto [alo, ahi, blo, bhi] = todo.back();
    todo.pop_back();
    if (ahi - alo < min_len || bhi - blo < min_len) continue;
    const auto [i, j, k] = longest_match(a, b, alo, ahi, blo, bhi);
    if (k < min_len) continue;
    out.insert(std::string(a.substr(i, k)));
    todo.push_back({alo, i, blo, j});
    todo.push_back({i + k, ahi, j + k, bhi});
  }
}

}  // namespace

std::vector<MinedSubstring> mine_frequent_substrings(const std::vector<std::string>& texts,
                                                     std::size_t min_len) {
  if (min_len == 0) throw UsageError("min_len must be positive");
  std::map<std::string, std::size_t> tally;
  std::set<std::string> blocks;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = i + 1; j < texts.size(); ++j) {
      blocks.clear();
      matching_blocks(texts[i], texts[j], min_len, blocks);
      for (const auto& s : blocks) ++tally[s];
    }
  }
  std::vector<MinedSubstring> out;
  for (auto& [s, f] : tally) out.push_back({s, f});
  std::sort(out.begin(), out.end(), [](const MinedSubstring& x, const MinedSubstring& y) {
    if (x.frequency != y.frequency) return x.frequency > y.frequency;
    if (x.text.size() != y.text.size()) return x.text.size() > y.text.size();
    return x.text < y.text;
  });
  return out;
}

// --- rules ------------------------------------------------------------------------------

std::vector<FingerprintRule> rules_from_json(const std::string& text, const std::string& origin) {
  static const std::set<std::string> known = {"id",       "pattern",   "vendor",
                                              "priority", "blacklist", "provenance"};
  try {
    const ojson j = ojson::parse(text);
    if (!j.is_array()) throw ConfigError("expected an array of rules");
    std::vector<FingerprintRule> rules;
    std::set<std::string> ids;
    for (const auto& item : j) {
      for (const auto& [k, v] : item.items()) {
        if (!known.count(k)) throw ConfigError("unknown rule field '" + k + "'");
      }
      FingerprintRule r;
      r.id = item.at("id").get<std::string>();
      r.pattern = item.at("pattern").get<std::string>();
      if (item.contains("vendor") && !item.at("vendor").is_null()) {
        r.vendor = item.at("vendor").get<std::string>();
      }
      r.priority = item.value("priority", 0);
      r.blacklist = item.value("blacklist", false);
      r.provenance = item.value("provenance", std::string());
      if (r.id.empty()) throw ConfigError("rule without id");
      if (!ids.insert(r.id).second) throw ConfigError("duplicate rule id '" + r.id + "'");
      if (!r.blacklist && r.vendor.empty()) throw ConfigError("rule '" + r.id + "' names no vendor");
      try {
        compile(r.pattern);
      } catch (const std::regex_error& e) {
        throw ConfigError("rule '" + r.id + "': bad pattern: " + e.what());
      }
      rules.push_back(std::move(r));
    }
    return rules;
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

std::string rules_to_json(const std::vector<FingerprintRule>& rules) {
  ojson arr = ojson::array();
  for (const auto& r : rules) {
    ojson j;
    j["id"] = r.id;
    j["pattern"] = r.pattern;
    j["vendor"] = r.vendor.empty() ? ojson(nullptr) : ojson(r.vendor);
    j["priority"] = r.priority;
    j["blacklist"] = r.blacklist;
    j["provenance"] = r.provenance;
    arr.push_back(std::move(j));
  }
  return arr.dump(2, ' ', false, ojson::error_handler_t::replace) + "\n";
}

std::vector<FingerprintRule> load_rules(const std::string& path) {
  return rules_from_json(read_file(path), path);
}

void save_rules(const std::string& path, const std::vector<FingerprintRule>& rules) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << rules_to_json(rules);
}

RuleSet::RuleSet(std::vector<FingerprintRule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    try {
      compiled_.push_back(compile(r.pattern));
    } catch (const std::regex_error& e) {
      throw ConfigError("rule '" + r.id + "': bad pattern: " + e.what());
    }
  }
}

std::vector<std::size_t> RuleSet::fire(std::string_view text) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < compiled_.size(); ++i) {
    if (search(compiled_[i], text)) out.push_back(i);
  }
  return out;
}

std::map<Ipv4Address, std::string> LabelResult::labels() const {
  std::map<Ipv4Address, std::string> out;
  for (const auto& [ip, a] : assignments) {
    if (!a.conflicted) out[ip] = a.vendor;
  }
  return out;
}

namespace {

// Rules fired per IP, over all of its banners.
std::map<Ipv4Address, std::set<std::size_t>> fired_by_ip(const std::vector<BannerRecord>& corpus,
                                                         const RuleSet& rules) {
  std::map<Ipv4Address, std::set<std::size_t>> out;
  for (const auto& b : corpus) {
    auto fired = rules.fire(b.text);
    if (!fired.empty()) out[b.ip].insert(fired.begin(), fired.end());
  }
  return out;
}

}  // namespace

LabelResult apply_rules(const std::vector<BannerRecord>& corpus, const RuleSet& rules) {
  LabelResult result;
  const auto& rs = rules.rules();
  for (const auto& [ip, fired] : fired_by_ip(corpus, rules)) {
    if (std::any_of(fired.begin(), fired.end(), [&](std::size_t i) { return rs[i].blacklist; })) {
      result.blacklisted.insert(ip);
      continue;
    }
    int top = std::numeric_limits<int>::min();
    for (std::size_t i : fired) top = std::max(top, rs[i].priority);
    LabelAssignment a;
    std::set<std::string> vendors;
    for (std::size_t i : fired) {
      if (rs[i].priority != top) continue;
      vendors.insert(rs[i].vendor);
      a.rule_ids.insert(rs[i].id);
    }
    if (vendors.size() == 1) a.vendor = *vendors.begin();
    else a.conflicted = true;
    result.assignments[ip] = std::move(a);
  }
  return result;
}

std::vector<RuleAudit> audit_rules(const std::vector<BannerRecord>& corpus, const RuleSet& rules) {
  const auto& rs = rules.rules();
  std::vector<RuleAudit> out(rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    out[i].rule_id = rs[i].id;
    out[i].vendor = rs[i].vendor;
  }
  for (const auto& [ip, fired] : fired_by_ip(corpus, rules)) {
    for (std::size_t i : fired) {
      ++out[i].fires;
      if (rs[i].blacklist) continue;
      std::set<std::string> others;
      for (std::size_t j : fired) {
        if (!rs[j].blacklist && rs[j].vendor != rs[i].vendor) others.insert(rs[j].vendor);
      }
      for (const auto& v : others) ++out[i].co_fires[v];
    }
  }
  for (auto& a : out) {
    a.flagged = a.co_fires.size() > 1;
    a.precedence_candidate = a.co_fires.size() == 1;
  }
  return out;
}

// --- iteration -----------------------------------------------------------------------------

void write_candidates(std::ostream& out, const std::vector<Candidate>& candidates) {
  for (const auto& c : candidates) {
    ojson j;
    j["round"] = c.round;
    j["protocol"] = to_string(c.protocol);
    j["digest"] = c.digest;
    j["size"] = c.size;
    j["examples"] = c.examples;
    j["top"] = ojson::array();
    for (const auto& m : c.top) j["top"].push_back({{"text", m.text}, {"frequency", m.frequency}});
    out << dump_line(j) << '\n';
  }
}

std::string regex_escape(std::string_view literal) {
  static const std::string special = R"(\^$.|?*+()[]{}/-)";
  std::string out;
  for (char c : literal) {
    const auto u = static_cast<unsigned char>(c);
    if (special.find(c) != std::string::npos) {
      out += '\\';
      out += c;
    } else if (u < 0x20 || u == 0x7F) {
      static const char hex[] = "0123456789abcdef";
      out += "\\x";
      out += hex[u >> 4];
      out += hex[u & 15];
    } else {
      out += c;
    }
  }
  return out;
}

IterateResult iterate_labeling(const std::vector<BannerRecord>& corpus,
                               std::vector<FingerprintRule> rules, const IterateParams& params,
                               const Reviewer& reviewer) {
  if (params.sample_size == 0 || params.sample_size > 1000) {
    throw UsageError("sample size must be within 1..1000");
  }
  IterateResult result;
  Rng rng(derive_seed({params.seed, 0x6C6162656C}));
  result.labels = apply_rules(corpus, RuleSet(rules));

  auto unlabeled = [&](BannerProtocol proto) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& b = corpus[i];
      // An empty banner is at distance zero from everything.
      if (b.protocol != proto || b.text.empty()) continue;
      if (result.labels.blacklisted.count(b.ip)) continue;
      const auto it = result.labels.assignments.find(b.ip);
      if (it != result.labels.assignments.end() && !it->second.conflicted) continue;
      pool.push_back(i);
    }
    return pool;
  };
  auto total_unlabeled = [&] {
    std::size_t n = 0;
    for (auto p : {BannerProtocol::ssh, BannerProtocol::telnet, BannerProtocol::snmp}) {
      n += unlabeled(p).size();
    }
    return n;
  };

  for (int round = 1; round <= params.rounds; ++round) {
    const std::size_t before_round = total_unlabeled();
    for (auto proto : {BannerProtocol::ssh, BannerProtocol::telnet, BannerProtocol::snmp}) {
      RoundLog log;
      log.round = round;
      log.protocol = proto;
      auto pool = unlabeled(proto);
      log.unlabeled_before = pool.size();
      std::vector<std::size_t> picked;
      for (std::size_t k : rng.sample(pool.size(), params.sample_size)) picked.push_back(pool[k]);
      log.sampled = picked.size();
      std::vector<Candidate> found;
      if (picked.size() >= params.cluster.min_cluster_size) {
        std::vector<std::string> texts;
        for (std::size_t i : picked) texts.push_back(corpus[i].text);
        const auto clusters = cluster_banners(pairwise_distance_matrix(texts), params.cluster);
        for (const auto& cl : clusters) {
          if (cl.is_noise) continue;
          ++log.clusters;
          std::vector<std::string> members;
          for (std::size_t m : cl.members) members.push_back(texts[m]);
          Candidate c;
          c.round = round;
          c.protocol = proto;
          c.size = members.size();
          auto mined = mine_frequent_substrings(members, params.min_len);
          if (mined.size() > params.top_k) mined.resize(params.top_k);
          c.top = std::move(mined);
          auto sorted = members;
          std::sort(sorted.begin(), sorted.end());
          std::uint64_t h = 0xCBF29CE484222325ull;
          for (const auto& s : sorted) h = fnv1a(s, fnv1a("\n", h));
          std::ostringstream hex;
          hex << std::hex << h;
          c.digest = hex.str();
          for (std::size_t e = 0; e < std::min<std::size_t>(3, members.size()); ++e) {
            c.examples.push_back(members[e]);
          }
          found.push_back(std::move(c));
        }
      }
      log.candidates = found.size();
      if (reviewer && !found.empty()) {
        auto adopted = reviewer(found);
        if (!adopted.empty()) {
          rules.insert(rules.end(), adopted.begin(), adopted.end());
          // Validates ids and patterns as a whole.
          rules = rules_from_json(rules_to_json(rules), "adopted rules");
          result.labels = apply_rules(corpus, RuleSet(rules));
        }
      }
      log.unlabeled_after = unlabeled(proto).size();
      result.candidates.insert(result.candidates.end(), found.begin(), found.end());
      result.log.push_back(log);
    }
    if (total_unlabeled() >= before_round) break;
  }
  result.rules = std::move(rules);
  return result;
}

}  // namespace devprint
