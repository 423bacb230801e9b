#include "devprint/classifier.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
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

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<Sample> join_labels(const std::vector<LabeledVector>& rows,
                                const std::map<Ipv4Address, std::string>& labels,
                                std::size_t* unlabeled) {
  std::vector<Sample> out;
  std::size_t missing = 0;
  for (const auto& r : rows) {
    const auto it = labels.find(r.target);
    if (it == labels.end()) {
      ++missing;
      continue;
    }
    out.push_back({r.target, r.vector, it->second});
  }
  if (unlabeled) *unlabeled = missing;
  return out;
}

// --- one-hot encoding -----------------------------------------------------------------

OheVocabulary OheVocabulary::fit(const std::vector<const FeatureVector*>& vectors) {
  OheVocabulary v;
  if (vectors.empty()) return v;
  for (const auto& [slot, value] : vectors.front()->values) v.slots_.push_back(slot);
  std::vector<std::set<std::string>> seen(v.slots_.size());
  for (const FeatureVector* fv : vectors) {
    if (fv->values.size() != v.slots_.size()) {
      throw SchemaError("feature vectors have different slot counts");
    }
    for (std::size_t s = 0; s < v.slots_.size(); ++s) {
      if (fv->values[s].first != v.slots_[s]) {
        throw SchemaError("slot '" + fv->values[s].first + "' where '" + v.slots_[s] + "' was expected");
      }
      seen[s].insert(fv->values[s].second);
    }
  }
  v.offsets_.push_back(0);
  for (auto& s : seen) {
    v.values_.emplace_back(s.begin(), s.end());
    v.offsets_.push_back(v.offsets_.back() + s.size());
  }
  return v;
}

OheVocabulary OheVocabulary::fit(const std::vector<Sample>& samples) {
  std::vector<const FeatureVector*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s.vector);
  return fit(ptrs);
}

std::pair<std::size_t, std::size_t> OheVocabulary::column(std::size_t col) const {
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), col);
  const auto slot = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {slot, col - offsets_[slot]};
}

std::string OheVocabulary::column_name(std::size_t col) const {
  const auto [s, v] = column(col);
  return slots_[s] + "=" + values_[s][v];
}

std::vector<int> OheVocabulary::codes(const FeatureVector& fv) const {
  if (fv.values.size() != slots_.size()) {
    throw SchemaError("vector has " + std::to_string(fv.values.size()) + " slots, vocabulary has " +
                      std::to_string(slots_.size()));
  }
  std::vector<int> out(slots_.size());
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    if (fv.values[s].first != slots_[s]) {
      throw SchemaError("slot '" + fv.values[s].first + "' where '" + slots_[s] + "' was expected");
    }
    const auto& vals = values_[s];
    const auto it = std::lower_bound(vals.begin(), vals.end(), fv.values[s].second);
    out[s] = it != vals.end() && *it == fv.values[s].second ? static_cast<int>(it - vals.begin()) : -1;
  }
  return out;
}

std::vector<std::uint8_t> OheVocabulary::transform(const FeatureVector& fv) const {
  const auto c = codes(fv);
  std::vector<std::uint8_t> row(width(), 0);
  for (std::size_t s = 0; s < c.size(); ++s) {
    if (c[s] >= 0) row[offsets_[s] + static_cast<std::size_t>(c[s])] = 1;
  }
  return row;
}

// --- hyperparameters ------------------------------------------------------------------------

std::size_t MaxFeatures::resolve(std::size_t width) const {
  const double w = static_cast<double>(width);
  std::size_t k = width;
  switch (kind) {
    case Kind::sqrt: k = static_cast<std::size_t>(std::sqrt(w)); break;
    case Kind::log2: k = static_cast<std::size_t>(std::log2(std::max(w, 1.0))); break;
    case Kind::fraction: k = static_cast<std::size_t>(fraction * w); break;
    case Kind::all: break;
  }
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(width, 1));
}

std::string MaxFeatures::to_string() const {
  switch (kind) {
    case Kind::sqrt: return "sqrt";
    case Kind::log2: return "log2";
    case Kind::all: return "all";
    case Kind::fraction: return fmt_double(fraction);
  }
  return "?";
}

MaxFeatures MaxFeatures::parse(const std::string& text) {
  if (text == "sqrt") return {Kind::sqrt};
  if (text == "log2") return {Kind::log2};
  if (text == "all") return {Kind::all};
  double f = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), f);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !(f > 0 && f <= 1)) {
    throw UsageError("max_features must be sqrt, log2, all or a fraction in (0,1], got '" + text + "'");
  }
  return {Kind::fraction, f};
}

void Hyperparams::validate() const {
  if (n_trees < 1) throw UsageError("n_trees must be positive");
  if (max_depth && *max_depth < 1) throw UsageError("max_depth must be positive");
  if (min_samples_split < 2) throw UsageError("min_samples_split must be at least 2");
  if (min_samples_leaf < 1) throw UsageError("min_samples_leaf must be positive");
  if (max_features.kind == MaxFeatures::Kind::fraction &&
      !(max_features.fraction > 0 && max_features.fraction <= 1)) {
    throw UsageError("max_features fraction must be in (0,1]");
  }
}

namespace {

ojson params_json(const Hyperparams& p) {
  ojson j;
  j["n_trees"] = p.n_trees;
  j["max_depth"] = p.max_depth ? ojson(*p.max_depth) : ojson(nullptr);
  j["max_features"] = p.max_features.to_string();
  j["min_samples_split"] = p.min_samples_split;
  j["min_samples_leaf"] = p.min_samples_leaf;
  j["bootstrap"] = p.bootstrap;
  j["criterion"] = p.criterion == Criterion::gini ? "gini" : "entropy";
  j["seed"] = p.seed;
  return j;
}

Hyperparams params_from(const ojson& j) {
  Hyperparams p;
  p.n_trees = j.at("n_trees").get<int>();
  if (!j.at("max_depth").is_null()) p.max_depth = j.at("max_depth").get<int>();
  p.max_features = MaxFeatures::parse(j.at("max_features").get<std::string>());
  p.min_samples_split = j.at("min_samples_split").get<int>();
  p.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  p.bootstrap = j.at("bootstrap").get<bool>();
  const auto c = j.at("criterion").get<std::string>();
  if (c != "gini" && c != "entropy") throw DataError("unknown criterion '" + c + "'");
  p.criterion = c == "gini" ? Criterion::gini : Criterion::entropy;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.validate();
  return p;
}

}  // namespace

std::string hyperparams_to_json(const Hyperparams& p) { return params_json(p).dump(); }

// --- tree growing -------------------------------------------------------------------------------

namespace {

struct Encoded {
  std::size_t rows = 0;
  std::size_t slots = 0;
  std::vector<int> codes;  // column-major: codes[slot * rows + row]
  std::vector<int> y;

  int code(std::size_t row, std::size_t slot) const { return codes[slot * rows + row]; }
};

double impurity(const double* counts, std::size_t classes, double total, Criterion c) {
  if (total <= 0) return 0;
  double acc = 0;
  if (c == Criterion::gini) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = counts[k] / total;
      acc += p * p;
    }
    return 1 - acc;
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (counts[k] > 0) {
      const double p = counts[k] / total;
      acc -= p * std::log2(p);
    }
  }
  return acc;
}

class TreeGrower {
 public:
  TreeGrower(const Encoded& data, const OheVocabulary& vocab, std::size_t classes,
             const Hyperparams& params, std::uint64_t seed)
      : d_(data), vocab_(vocab), classes_(classes), p_(params), rng_(seed),
        width_(vocab.width()), k_(params.max_features.resolve(vocab.width())),
        importance_(vocab.width(), 0) {}

  DecisionTree grow() {
    weight_.assign(d_.rows, 0);
    if (p_.bootstrap) {
      for (std::size_t i = 0; i < d_.rows; ++i) ++weight_[rng_.below(d_.rows)];
    } else {
      std::fill(weight_.begin(), weight_.end(), 1);
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d_.rows; ++i) {
      if (weight_[i] > 0) rows.push_back(i);
    }
    total_ = static_cast<double>(std::accumulate(weight_.begin(), weight_.end(), 0));
    build(std::move(rows), 0);
    return std::move(tree_);
  }

  const std::vector<double>& importance() const { return importance_; }

 private:
  int build(std::vector<std::size_t> rows, int depth) {
    std::vector<double> counts(classes_, 0);
    double n = 0;
    for (auto r : rows) {
      counts[static_cast<std::size_t>(d_.y[r])] += weight_[r];
      n += weight_[r];
    }
    const double imp = impurity(counts.data(), classes_, n, p_.criterion);
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    auto make_leaf = [&] {
      auto& leaf = tree_.nodes[static_cast<std::size_t>(id)];
      leaf.proportions.resize(classes_);
      for (std::size_t k = 0; k < classes_; ++k) leaf.proportions[k] = counts[k] / n;
      return id;
    };
    const double leaf_min = p_.min_samples_leaf;
    if (imp <= 1e-12 || n < p_.min_samples_split || n < 2 * leaf_min ||
        (p_.max_depth && depth >= *p_.max_depth)) {
      return make_leaf();
    }

    // Per-slot value x class tables, filled on first use.
    std::map<std::size_t, std::vector<double>> tables;
    auto table = [&](std::size_t slot) -> const std::vector<double>& {
      auto it = tables.find(slot);
      if (it != tables.end()) return it->second;
      const std::size_t card = vocab_.values(slot).size();
      std::vector<double> t(card * classes_, 0);
      const int* col = &d_.codes[slot * d_.rows];
      for (auto r : rows) {
        t[static_cast<std::size_t>(col[r]) * classes_ + static_cast<std::size_t>(d_.y[r])] += weight_[r];
      }
      return tables.emplace(slot, std::move(t)).first->second;
    };

    // Columns in random order until k non-constant ones were tried.
    perm_.resize(width_);
    std::iota(perm_.begin(), perm_.end(), 0);
    std::vector<double> right(classes_), left(classes_);
    double best_child = std::numeric_limits<double>::infinity();
    std::size_t best_col = width_;
    std::size_t tried = 0;
    for (std::size_t i = 0; i < width_ && tried < k_; ++i) {
      std::swap(perm_[i], perm_[i + rng_.below(width_ - i)]);
      const std::size_t col = perm_[i];
      const auto [slot, value] = vocab_.column(col);
      const auto& t = table(slot);
      double nr = 0;
      for (std::size_t k = 0; k < classes_; ++k) {
        right[k] = t[value * classes_ + k];
        nr += right[k];
      }
      if (nr <= 0 || nr >= n) continue;  // constant within the node
      ++tried;
      const double nl = n - nr;
      if (nr < leaf_min || nl < leaf_min) continue;
      for (std::size_t k = 0; k < classes_; ++k) left[k] = counts[k] - right[k];
      const double child = (nl * impurity(left.data(), classes_, nl, p_.criterion) +
                            nr * impurity(right.data(), classes_, nr, p_.criterion)) / n;
      if (child < best_child) {
        best_child = child;
        best_col = col;
      }
    }
    if (best_col == width_ || imp - best_child <= 1e-12) return make_leaf();

    importance_[best_col] += n / total_ * (imp - best_child);
    const auto [slot, value] = vocab_.column(best_col);
    std::vector<std::size_t> lrows, rrows;
    for (auto r : rows) {
      (d_.code(r, slot) == static_cast<int>(value) ? rrows : lrows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(lrows), depth + 1);
    const int r = build(std::move(rrows), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.column = static_cast<int>(best_col);
    node.left = l;
    node.right = r;
    return id;
  }

  const Encoded& d_;
  const OheVocabulary& vocab_;
  std::size_t classes_;
  const Hyperparams& p_;
  Rng rng_;
  std::size_t width_;
  std::size_t k_;
  std::vector<double> importance_;
  std::vector<int> weight_;
  std::vector<std::size_t> perm_;
  double total_ = 0;
  DecisionTree tree_;
};

}  // namespace

RandomForest RandomForest::train(const std::vector<Sample>& train, const Hyperparams& params) {
  params.validate();
  RandomForest f;
  f.params_ = params;
  std::set<std::string> labels;
  for (const auto& s : train) labels.insert(s.label);
  if (labels.size() < 2) throw DataError("training needs at least two classes");
  f.classes_.assign(labels.begin(), labels.end());
  f.vocab_ = OheVocabulary::fit(train);

  Encoded d;
  d.rows = train.size();
  d.slots = f.vocab_.slot_count();
  d.codes.resize(d.rows * d.slots);
  d.y.resize(d.rows);
  for (std::size_t r = 0; r < d.rows; ++r) {
    const auto c = f.vocab_.codes(train[r].vector);
    for (std::size_t s = 0; s < d.slots; ++s) d.codes[s * d.rows + r] = c[s];
    d.y[r] = static_cast<int>(std::lower_bound(f.classes_.begin(), f.classes_.end(), train[r].label) -
                              f.classes_.begin());
  }

  f.importances_.assign(f.vocab_.width(), 0);
  for (int t = 0; t < params.n_trees; ++t) {
    TreeGrower g(d, f.vocab_, f.classes_.size(), params,
                 derive_seed({params.seed, static_cast<std::uint64_t>(t)}));
    f.trees_.push_back(g.grow());
    const auto& imp = g.importance();
    const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (sum > 0) {
      for (std::size_t c = 0; c < imp.size(); ++c) f.importances_[c] += imp[c] / sum;
    }
  }
  const double sum = std::accumulate(f.importances_.begin(), f.importances_.end(), 0.0);
  if (sum > 0) {
    for (auto& v : f.importances_) v /= sum;
  }
  return f;
}

std::vector<double> RandomForest::predict_proba_codes(const std::vector<int>& codes) const {
  std::vector<double> out(classes_.size(), 0);
  for (const auto& tree : trees_) {
    std::size_t i = 0;
    while (tree.nodes[i].column >= 0) {
      const auto [slot, value] = vocab_.column(static_cast<std::size_t>(tree.nodes[i].column));
      i = static_cast<std::size_t>(codes[slot] == static_cast<int>(value) ? tree.nodes[i].right
                                                                          : tree.nodes[i].left);
    }
    const auto& p = tree.nodes[i].proportions;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += p[k];
  }
  for (auto& v : out) v /= static_cast<double>(trees_.size());
  return out;
}

std::vector<double> RandomForest::predict_proba(const FeatureVector& v) const {
  return predict_proba_codes(vocab_.codes(v));
}

std::vector<double> RandomForest::predict_proba_row(const std::vector<std::uint8_t>& row) const {
  if (row.size() != vocab_.width()) {
    throw SchemaError("row width " + std::to_string(row.size()) + " does not match model width " +
                      std::to_string(vocab_.width()));
  }
  std::vector<int> codes(vocab_.slot_count(), -1);
  for (std::size_t s = 0; s < codes.size(); ++s) {
    for (std::size_t c = vocab_.offset(s); c < vocab_.offset(s + 1); ++c) {
      if (row[c]) {
        if (codes[s] >= 0) throw SchemaError("more than one value set for slot " + vocab_.slots()[s]);
        codes[s] = static_cast<int>(c - vocab_.offset(s));
      }
    }
  }
  return predict_proba_codes(codes);
}

std::string RandomForest::label_for(const std::vector<double>& proba) const {
  const std::size_t k = argmax(proba);
  if (threshold_ && proba[k] < *threshold_) return std::string(kUnknown);
  return classes_[k];
}

std::string RandomForest::predict(const FeatureVector& v) const { return label_for(predict_proba(v)); }

std::string RandomForest::to_json() const {
  ojson j;
  j["format"] = "devprint-forest";
  j["schema_version"] = kSchemaVersion;
  j["classes"] = classes_;
  ojson vocab = ojson::array();
  for (std::size_t s = 0; s < vocab_.slot_count(); ++s) {
    vocab.push_back({{"slot", vocab_.slots()[s]}, {"values", vocab_.values(s)}});
  }
  j["vocabulary"] = std::move(vocab);
  j["hyperparams"] = params_json(params_);
  j["unknown_threshold"] = threshold_ ? ojson(*threshold_) : ojson(nullptr);
  j["importances"] = importances_;
  ojson trees = ojson::array();
  for (const auto& t : trees_) {
    ojson nodes = ojson::array();
    for (const auto& n : t.nodes) {
      if (n.column < 0) nodes.push_back({{"leaf", n.proportions}});
      else nodes.push_back({{"column", n.column}, {"left", n.left}, {"right", n.right}});
    }
    trees.push_back(std::move(nodes));
  }
  j["trees"] = std::move(trees);
  return j.dump() + "\n";
}

RandomForest RandomForest::from_json(const std::string& text, const std::string& origin) {
  try {
    const ojson j = ojson::parse(text);
    if (j.at("format") != "devprint-forest") throw DataError("not a devprint model");
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw SchemaError("model schema version " + j.at("schema_version").dump() + ", expected " +
                        std::to_string(kSchemaVersion));
    }
    RandomForest f;
    f.classes_ = j.at("classes").get<std::vector<std::string>>();
    if (f.classes_.size() < 2 || !std::is_sorted(f.classes_.begin(), f.classes_.end())) {
      throw DataError("classes must be sorted and at least two");
    }
    f.vocab_.offsets_.push_back(0);
    for (const auto& s : j.at("vocabulary")) {
      f.vocab_.slots_.push_back(s.at("slot").get<std::string>());
      auto values = s.at("values").get<std::vector<std::string>>();
      if (!std::is_sorted(values.begin(), values.end())) throw DataError("vocabulary values not sorted");
      f.vocab_.offsets_.push_back(f.vocab_.offsets_.back() + values.size());
      f.vocab_.values_.push_back(std::move(values));
    }
    f.params_ = params_from(j.at("hyperparams"));
    if (!j.at("unknown_threshold").is_null()) f.threshold_ = j.at("unknown_threshold").get<double>();
    f.importances_ = j.at("importances").get<std::vector<double>>();
    if (f.importances_.size() != f.vocab_.width()) throw DataError("importances do not match width");
    const int width = static_cast<int>(f.vocab_.width());
    for (const auto& t : j.at("trees")) {
      DecisionTree tree;
      for (const auto& n : t) {
        TreeNode node;
        if (n.contains("leaf")) {
          node.proportions = n.at("leaf").get<std::vector<double>>();
          if (node.proportions.size() != f.classes_.size()) throw DataError("leaf size mismatch");
        } else {
          node.column = n.at("column").get<int>();
          node.left = n.at("left").get<int>();
          node.right = n.at("right").get<int>();
        }
        tree.nodes.push_back(std::move(node));
      }
      const int count = static_cast<int>(tree.nodes.size());
      for (int i = 0; i < count; ++i) {
        const auto& node = tree.nodes[static_cast<std::size_t>(i)];
        if (node.column < 0) continue;
        // Children come after their parent, so walks always terminate.
        if (node.column >= width || node.left <= i || node.right <= i || node.left >= count ||
            node.right >= count) {
          throw DataError("malformed tree node " + std::to_string(i));
        }
      }
      if (tree.nodes.empty()) throw DataError("empty tree");
      f.trees_.push_back(std::move(tree));
    }
    if (f.trees_.empty()) throw DataError("model has no trees");
    return f;
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(origin + ": " + e.what());
  }
}

void RandomForest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << to_json();
}

RandomForest RandomForest::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path);
}

// --- metrics ---------------------------------------------------------------------------------------

namespace {
void same_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size()) throw UsageError("label vectors differ in length");
}
}  // namespace

double balanced_accuracy(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
  same_length(y_true, y_pred);
  std::map<std::string, std::pair<std::size_t, std::size_t>> per;  // correct, total
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    auto& [c, t] = per[y_true[i]];
    ++t;
    if (y_pred[i] == y_true[i]) ++c;
  }
  if (per.empty()) return 0;
  double sum = 0;
  for (const auto& [label, ct] : per) sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
  return sum / static_cast<double>(per.size());
}

double micro_f1(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
  same_length(y_true, y_pred);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_pred[i] == y_true[i]) {
      ++tp;
      continue;
    }
    ++fn;
    if (y_pred[i] != kUnknown) ++fp;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double accuracy(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
  same_length(y_true, y_pred);
  if (y_true.empty()) return 0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) ok += y_true[i] == y_pred[i];
  return static_cast<double>(ok) / static_cast<double>(y_true.size());
}

double roc_auc_ovr(const std::vector<std::string>& y_true, const std::vector<std::vector<double>>& probas,
                   const std::vector<std::string>& classes) {
  if (probas.size() != y_true.size()) throw UsageError("probabilities and labels differ in length");
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return probas[a].at(c) < probas[b].at(c);
    });
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && probas[order[j]][c] == probas[order[i]][c]) ++j;
      const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
      for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
      i = j;
    }
    double rpos = 0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y_true[i] == classes[c]) {
        rpos += rank[i];
        ++pos;
      }
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    const double p = static_cast<double>(pos);
    sum += (rpos - p * (p + 1) / 2) / (p * static_cast<double>(neg));
    ++used;
  }
  return used == 0 ? 0 : sum / static_cast<double>(used);
}

Confusion confusion_matrix(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
  same_length(y_true, y_pred);
  Confusion c;
  std::set<std::string> truth(y_true.begin(), y_true.end());
  c.labels.assign(truth.begin(), truth.end());
  std::set<std::string> extra;
  for (const auto& p : y_pred) {
    if (!truth.count(p)) extra.insert(p);
  }
  c.labels.insert(c.labels.end(), extra.begin(), extra.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < c.labels.size(); ++i) index[c.labels[i]] = i;
  c.counts.assign(truth.size(), std::vector<std::size_t>(c.labels.size(), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) ++c.counts[index[y_true[i]]][index[y_pred[i]]];
  return c;
}

// --- data handling ------------------------------------------------------------------------------------

namespace {
std::map<std::string, std::vector<std::size_t>> by_class(const std::vector<std::string>& labels) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

std::vector<std::string> labels_of(const std::vector<Sample>& samples) {
  std::vector<std::string> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}
}  // namespace

std::vector<std::size_t> balance_indices(const std::vector<std::string>& labels, std::size_t cap, Rng& rng) {
  if (cap == 0) throw UsageError("cap must be positive");
  std::vector<std::size_t> keep;
  for (const auto& [label, idx] : by_class(labels)) {
    if (idx.size() <= cap) {
      keep.insert(keep.end(), idx.begin(), idx.end());
    } else {
      for (auto k : rng.sample(idx.size(), cap)) keep.push_back(idx[k]);
    }
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

std::vector<Sample> balance_classes(const std::vector<Sample>& samples, std::size_t cap, Rng& rng) {
  return pick(samples, balance_indices(labels_of(samples), cap, rng));
}

std::vector<Fold> stratified_kfold(const std::vector<std::string>& labels, std::size_t k, Rng& rng) {
  if (k < 2) throw UsageError("k must be at least 2");
  std::vector<std::vector<std::size_t>> tests(k);
  std::size_t offset = 0;
  for (auto& [label, idx] : by_class(labels)) {
    if (idx.size() < k) {
      throw DataError("class '" + label + "' has " + std::to_string(idx.size()) + " samples, fewer than " +
                      std::to_string(k) + " folds");
    }
    rng.shuffle(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) tests[(offset + j) % k].push_back(idx[j]);
    offset += idx.size();
  }
  std::vector<Fold> folds(k);
  std::vector<std::size_t> fold_of(labels.size());
  for (std::size_t f = 0; f < k; ++f) {
    for (auto i : tests[f]) fold_of[i] = f;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

Fold stratified_split(const std::vector<std::string>& labels, double fraction, Rng& rng) {
  if (!(fraction > 0 && fraction < 1)) throw UsageError("split fraction must be in (0,1)");
  std::vector<bool> held(labels.size(), false);
  for (auto& [label, idx] : by_class(labels)) {
    rng.shuffle(idx);
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
    for (std::size_t j = 0; j < n; ++j) held[idx[j]] = true;
  }
  Fold f;
  for (std::size_t i = 0; i < labels.size(); ++i) (held[i] ? f.test : f.train).push_back(i);
  return f;
}

// --- model selection --------------------------------------------------------------------------------

Hyperparams SearchSpace::draw(Rng& rng) const {
  Hyperparams p;
  p.n_trees = static_cast<int>(rng.between(trees_min, trees_max));
  const auto depth = rng.between(depth_min - 1, depth_max);
  if (depth >= depth_min) p.max_depth = static_cast<int>(depth);
  p.max_features = max_features.at(rng.below(max_features.size()));
  p.min_samples_split = static_cast<int>(rng.between(split_min, split_max));
  p.min_samples_leaf = static_cast<int>(rng.between(leaf_min, leaf_max));
  p.bootstrap = rng.chance(0.5);
  p.criterion = rng.chance(0.5) ? Criterion::gini : Criterion::entropy;
  p.seed = rng.next();
  return p;
}

namespace {
std::vector<std::string> predict_all(const RandomForest& f, const std::vector<Sample>& test,
                                     std::vector<std::vector<double>>* probas = nullptr) {
  std::vector<std::string> out;
  for (const auto& s : test) {
    auto p = f.predict_proba(s.vector);
    out.push_back(f.label_for(p));
    if (probas) probas->push_back(std::move(p));
  }
  return out;
}
}  // namespace

SearchResult random_search(const std::vector<Sample>& samples, const SearchSpace& space,
                           std::size_t n_configs, std::size_t inner_k, std::uint64_t seed) {
  if (n_configs == 0) throw UsageError("search needs at least one configuration");
  const auto labels = labels_of(samples);
  Rng fold_rng(derive_seed({seed, 0x666F6C64}));
  const auto folds = stratified_kfold(labels, inner_k, fold_rng);
  Rng draw_rng(derive_seed({seed, 0x64726177}));
  SearchResult result;
  for (std::size_t i = 0; i < n_configs; ++i) {
    LeaderboardRow row;
    row.index = i;
    row.params = space.draw(draw_rng);
    for (const auto& f : folds) {
      const auto model = RandomForest::train(pick(samples, f.train), row.params);
      const auto test = pick(samples, f.test);
      row.fold_accuracy.push_back(accuracy(pick(labels, f.test), predict_all(model, test)));
    }
    row.mean_accuracy = std::accumulate(row.fold_accuracy.begin(), row.fold_accuracy.end(), 0.0) /
                        static_cast<double>(row.fold_accuracy.size());
    if (i == 0 || row.mean_accuracy > result.leaderboard[result.best_index].mean_accuracy) {
      result.best_index = i;
    }
    result.leaderboard.push_back(std::move(row));
  }
  result.best = result.leaderboard[result.best_index].params;
  return result;
}

void write_leaderboard(std::ostream& out, const std::vector<LeaderboardRow>& rows) {
  out << "index,n_trees,max_depth,max_features,min_samples_split,min_samples_leaf,bootstrap,criterion,seed";
  const std::size_t k = rows.empty() ? 0 : rows.front().fold_accuracy.size();
  for (std::size_t f = 0; f < k; ++f) out << ",fold" << f + 1;
  out << ",mean_accuracy\n";
  for (const auto& r : rows) {
    const auto& p = r.params;
    out << r.index << ',' << p.n_trees << ',' << (p.max_depth ? std::to_string(*p.max_depth) : "none") << ','
        << p.max_features.to_string() << ',' << p.min_samples_split << ',' << p.min_samples_leaf << ','
        << (p.bootstrap ? "true" : "false") << ',' << (p.criterion == Criterion::gini ? "gini" : "entropy")
        << ',' << p.seed;
    for (double a : r.fold_accuracy) out << ',' << fmt_double(a);
    out << ',' << fmt_double(r.mean_accuracy) << '\n';
  }
}

MetricsReport evaluate_final(const std::vector<Sample>& samples, const Hyperparams& params,
                             std::size_t outer_k, std::uint64_t seed) {
  const auto labels = labels_of(samples);
  Rng fold_rng(derive_seed({seed, 0x6F75746572}));
  const auto folds = stratified_kfold(labels, outer_k, fold_rng);
  MetricsReport rep;
  std::vector<std::string> all_true, all_pred;
  for (const auto& f : folds) {
    const auto model = RandomForest::train(pick(samples, f.train), params);
    std::vector<std::vector<double>> probas;
    const auto truth = pick(labels, f.test);
    const auto pred = predict_all(model, pick(samples, f.test), &probas);
    rep.balanced_accuracy.push_back(balanced_accuracy(truth, pred));
    rep.roc_auc.push_back(roc_auc_ovr(truth, probas, model.classes()));
    rep.micro_f1.push_back(micro_f1(truth, pred));
    all_true.insert(all_true.end(), truth.begin(), truth.end());
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  rep.mean_balanced_accuracy = mean(rep.balanced_accuracy);
  rep.mean_roc_auc = mean(rep.roc_auc);
  rep.mean_micro_f1 = mean(rep.micro_f1);
  rep.confusion = confusion_matrix(all_true, all_pred);
  return rep;
}

std::vector<FeatureImportance> feature_importance_report(const RandomForest& model) {
  const auto& vocab = model.vocabulary();
  std::map<std::string, double> sums;
  for (std::size_t s = 0; s < vocab.slot_count(); ++s) {
    const auto feature = std::string(slot_feature(vocab.slots()[s]));
    double v = 0;
    for (std::size_t c = vocab.offset(s); c < vocab.offset(s + 1); ++c) v += model.importances()[c];
    sums[feature] += v;
  }
  std::vector<FeatureImportance> out;
  for (const auto& info : feature_table()) {
    const auto it = sums.find(std::string(info.name));
    if (it != sums.end()) out.push_back({it->first, it->second});
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureImportance& a, const FeatureImportance& b) {
    return a.importance > b.importance;
  });
  return out;
}

ThresholdChoice select_unknown_threshold(const RandomForest& model, const std::vector<Sample>& validation) {
  if (validation.empty()) throw UsageError("threshold selection needs a validation set");
  std::vector<double> maxp;
  std::vector<std::string> top, truth;
  for (const auto& s : validation) {
    const auto p = model.predict_proba(s.vector);
    const auto k = argmax(p);
    maxp.push_back(p[k]);
    top.push_back(model.classes()[k]);
    truth.push_back(s.label);
  }
  std::vector<double> candidates = maxp;
  candidates.push_back(0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  ThresholdChoice best{0, -1};
  std::vector<std::string> pred(truth.size());
  for (double t : candidates) {
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = maxp[i] < t ? std::string(kUnknown) : top[i];
    const double f = micro_f1(truth, pred);
    if (f > best.micro_f1) best = {t, f};
  }
  return best;
}

}  // namespace devprint
