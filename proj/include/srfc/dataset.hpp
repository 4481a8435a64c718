#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfc/rng.hpp"
#include "srfc/tensor.hpp"
#include "srfc/text.hpp"

namespace srfc {

// B x D grid of image features, row-major.
struct FeatureGrid {
  std::size_t cells = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  bool empty() const { return cells == 0; }
  Tensor tensor() const { return Tensor({cells, dim}, values); }
  bool operator==(const FeatureGrid&) const = default;
};

struct Item {
  std::string id;
  TokenSeq title;
  TokenSeq caption;
  TokenSeq meta;
  TokenSeq color;
  FeatureGrid features;
  int category = -1;
  std::vector<int> attributes;  // sorted ids into the AttributeVocab
};

// 1- and 2-token attribute phrases with dense ids.
class AttributeVocab {
 public:
  AttributeVocab() = default;
  explicit AttributeVocab(std::vector<TokenSeq> phrases) {
    for (auto& p : phrases) add(std::move(p));
  }

  int add(TokenSeq phrase) {
    if (phrase.empty() || phrase.size() > 2)
      throw std::invalid_argument("AttributeVocab: phrase must have 1 or 2 tokens, got '" +
                                  join(phrase) + "'");
    const std::string key = join(phrase);
    if (index_.count(key)) throw std::invalid_argument("AttributeVocab: duplicate '" + key + "'");
    const int id = size();
    index_.emplace(key, id);
    if (phrase.size() == 1) unigrams_.insert(phrase[0]);
    else bigrams_.insert(key);
    phrases_.push_back(std::move(phrase));
    return id;
  }

  int size() const { return static_cast<int>(phrases_.size()); }
  const TokenSeq& phrase(int id) const { return phrases_.at(static_cast<std::size_t>(id)); }
  const std::vector<TokenSeq>& phrases() const { return phrases_; }

  // -1 when absent.
  int id(const TokenSeq& phrase) const {
    auto it = index_.find(join(phrase));
    return it == index_.end() ? -1 : it->second;
  }

  bool is_unigram(const std::string& token) const { return unigrams_.count(token) != 0; }
  bool is_bigram(const std::string& a, const std::string& b) const {
    return bigrams_.count(a + " " + b) != 0;
  }

 private:
  std::vector<TokenSeq> phrases_;
  std::unordered_map<std::string, int> index_;
  std::set<std::string> unigrams_;
  std::set<std::string> bigrams_;
};

class CategorySet {
 public:
  int add(const std::string& name, std::int64_t item_count = 0) {
    if (index_.count(name)) throw std::invalid_argument("CategorySet: duplicate '" + name + "'");
    index_.emplace(name, size());
    names_.push_back(name);
    counts_.push_back(item_count);
    return size() - 1;
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::int64_t item_count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  void set_item_count(int id, std::int64_t n) { counts_.at(static_cast<std::size_t>(id)) = n; }
  const std::vector<std::string>& names() const { return names_; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, int> index_;
};

enum class PosTag { kNoun, kAdjective, kOther };

// token -> part of speech; stands in for a full tagger.
class PosLexicon {
 public:
  void set(const std::string& token, PosTag tag) { tags_[token] = tag; }

  PosTag tag(const std::string& token) const {
    auto it = tags_.find(token);
    return it == tags_.end() ? PosTag::kOther : it->second;
  }

  bool is_noun_or_adjective(const std::string& token) const {
    const PosTag t = tag(token);
    return t == PosTag::kNoun || t == PosTag::kAdjective;
  }

  const std::map<std::string, PosTag>& entries() const { return tags_; }

  // "token<TAB>noun|adj|other" per line.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("PosLexicon::save: cannot open " + path);
    for (const auto& [tok, tag] : tags_)
      out << tok << '\t' << (tag == PosTag::kNoun ? "noun" : tag == PosTag::kAdjective ? "adj" : "other")
          << '\n';
  }

  static PosLexicon load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("PosLexicon::load: cannot open " + path);
    PosLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected token<TAB>tag");
      const std::string tok = line.substr(0, tab), tag = line.substr(tab + 1);
      if (tag == "noun") lex.set(tok, PosTag::kNoun);
      else if (tag == "adj" || tag == "adjective") lex.set(tok, PosTag::kAdjective);
      else if (tag == "other") lex.set(tok, PosTag::kOther);
      else throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown tag '" + tag + "'");
    }
    return lex;
  }

 private:
  std::map<std::string, PosTag> tags_;
};

// ---- labeling ------------------------------------------------------------

inline std::string derive_category(const TokenSeq& title) {
  if (title.empty()) throw std::invalid_argument("derive_category: empty title");
  return title.back();
}

inline bool contains_bigram(const TokenSeq& seq, const std::string& a, const std::string& b) {
  for (std::size_t i = 0; i + 1 < seq.size(); ++i)
    if (seq[i] == a && seq[i + 1] == b) return true;
  return false;
}

inline bool contains_phrase(const TokenSeq& seq, const TokenSeq& phrase) {
  if (phrase.empty() || phrase.size() > seq.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= seq.size(); ++i)
    if (std::equal(phrase.begin(), phrase.end(), seq.begin() + static_cast<std::ptrdiff_t>(i)))
      return true;
  return false;
}

// Title nouns/adjectives that also occur in both the caption and the meta
// tokens. Two such tokens adjacent in the title that are also adjacent (same
// order) in the caption merge into one 2-token phrase. Result is sorted.
inline std::vector<TokenSeq> extract_attributes(const Item& item, const PosLexicon& lexicon) {
  const std::set<std::string> caption(item.caption.begin(), item.caption.end());
  const std::set<std::string> meta(item.meta.begin(), item.meta.end());
  std::vector<bool> hit(item.title.size(), false);
  for (std::size_t i = 0; i < item.title.size(); ++i) {
    const auto& t = item.title[i];
    hit[i] = lexicon.is_noun_or_adjective(t) && caption.count(t) && meta.count(t);
  }
  std::set<TokenSeq> out;
  for (std::size_t i = 0; i < item.title.size(); ++i) {
    if (!hit[i]) continue;
    if (i + 1 < item.title.size() && hit[i + 1] &&
        contains_bigram(item.caption, item.title[i], item.title[i + 1])) {
      out.insert({item.title[i], item.title[i + 1]});
      ++i;
      continue;
    }
    out.insert({item.title[i]});
  }
  return {out.begin(), out.end()};
}

// Keeps phrases found in at least min_item_count distinct items. Ids go by
// item count descending, then lexicographic.
inline AttributeVocab build_attribute_vocab(const std::vector<std::vector<TokenSeq>>& per_item,
                                            int min_item_count) {
  if (min_item_count < 1)
    throw std::invalid_argument("build_attribute_vocab: min_item_count must be >= 1");
  std::map<TokenSeq, std::int64_t> counts;
  for (const auto& phrases : per_item) {
    const std::set<TokenSeq> distinct(phrases.begin(), phrases.end());
    for (const auto& p : distinct) ++counts[p];
  }
  std::vector<std::pair<TokenSeq, std::int64_t>> kept;
  for (auto& [p, n] : counts)
    if (n >= min_item_count) kept.emplace_back(p, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  AttributeVocab vocab;
  for (auto& [p, n] : kept) vocab.add(p);
  return vocab;
}

struct LabelingConfig {
  int min_attribute_items = 10;
  int min_category_items = 200;
  // Editorial merges: category token -> canonical category token.
  std::map<std::string, std::string> category_aliases;
};

struct LabeledCorpus {
  std::vector<Item> items;  // only items whose category survived the threshold
  AttributeVocab attributes;
  CategorySet categories;
};

// Category from the last title word (after aliasing), attributes by
// extraction, then both label spaces thresholded. Items in dropped
// categories are removed; dropped attributes are removed from items.
inline LabeledCorpus label_items(std::vector<Item> items, const PosLexicon& lexicon,
                                 const LabelingConfig& config) {
  std::vector<std::string> cat_names;
  std::map<std::string, std::int64_t> cat_counts;
  std::vector<std::vector<TokenSeq>> extracted;
  for (const auto& item : items) {
    if (item.title.empty())
      throw std::invalid_argument("label_items: item '" + item.id + "' has an empty title");
    std::string cat = derive_category(item.title);
    if (auto it = config.category_aliases.find(cat); it != config.category_aliases.end())
      cat = it->second;
    ++cat_counts[cat];
    cat_names.push_back(cat);
    extracted.push_back(extract_attributes(item, lexicon));
  }
  LabeledCorpus out;
  // Category ids by item count descending, then name.
  std::vector<std::pair<std::string, std::int64_t>> cats(cat_counts.begin(), cat_counts.end());
  std::stable_sort(cats.begin(), cats.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [name, n] : cats)
    if (n >= config.min_category_items) out.categories.add(name, n);

  std::vector<std::vector<TokenSeq>> kept_extracted;
  std::vector<std::size_t> kept_index;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (out.categories.id(cat_names[i]) < 0) continue;
    kept_index.push_back(i);
    kept_extracted.push_back(extracted[i]);
  }
  out.attributes = build_attribute_vocab(kept_extracted, config.min_attribute_items);
  for (std::size_t k = 0; k < kept_index.size(); ++k) {
    Item item = std::move(items[kept_index[k]]);
    item.category = out.categories.id(cat_names[kept_index[k]]);
    item.attributes.clear();
    for (const auto& p : kept_extracted[k])
      if (int id = out.attributes.id(p); id >= 0) item.attributes.push_back(id);
    std::sort(item.attributes.begin(), item.attributes.end());
    out.items.push_back(std::move(item));
  }
  return out;
}

// ---- splits --------------------------------------------------------------

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

// Items sharing a caption form one group; groups are shuffled with the seed
// and each goes to the split currently furthest below its target size.
inline DatasetSplit split_dataset(const std::vector<Item>& items, std::array<double, 3> fractions,
                                  std::uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("split_dataset: empty dataset");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split_dataset: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions must sum to 1");

  std::map<std::string, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string key = join(items[i].caption);
    auto [it, fresh] = group_of.emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  const double n = static_cast<double>(items.size());
  std::array<double, 3> filled{0, 0, 0};
  DatasetSplit split;
  std::array<std::vector<std::string>*, 3> dst{&split.train, &split.val, &split.test};
  for (std::size_t g : order) {
    std::size_t best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < 3; ++s) {
      if (fractions[s] == 0.0) continue;
      const double deficit = fractions[s] * n - filled[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    for (std::size_t i : groups[g]) dst[best]->push_back(items[i].id);
    filled[best] += static_cast<double>(groups[g].size());
  }
  return split;
}

inline nlohmann::json split_to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
  DatasetSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

// ---- JSON-lines I/O --------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline TokenSeq text_field(const nlohmann::json& j, const char* key, bool required,
                           const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw ParseError(where + ": missing field '" + key + "'");
    return {};
  }
  const auto& v = j[key];
  if (v.is_string()) return tokenize(v.get<std::string>());
  if (v.is_array()) {
    TokenSeq out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ParseError(where + ": field '" + key + "' must hold strings");
      for (auto& t : tokenize(e.get<std::string>())) out.push_back(std::move(t));
    }
    return out;
  }
  throw ParseError(where + ": field '" + key + "' must be a string or array of strings");
}

inline FeatureGrid feature_field(const nlohmann::json& j, const std::string& where) {
  FeatureGrid g;
  if (!j.contains("features") || j["features"].is_null()) return g;
  const auto& rows = j["features"];
  if (!rows.is_array() || rows.empty())
    throw ParseError(where + ": field 'features' must be a non-empty B x D array");
  for (const auto& row : rows) {
    if (!row.is_array() || row.empty())
      throw ParseError(where + ": field 'features' rows must be non-empty arrays");
    if (g.cells == 0) g.dim = row.size();
    if (row.size() != g.dim)
      throw ParseError(where + ": field 'features' row " + std::to_string(g.cells) + " has " +
                       std::to_string(row.size()) + " values, expected " + std::to_string(g.dim));
    for (const auto& v : row) {
      if (!v.is_number()) throw ParseError(where + ": field 'features' must hold numbers");
      g.values.push_back(v.get<double>());
    }
    ++g.cells;
  }
  return g;
}
}  // namespace detail

// Parses one raw record: id, title, description, meta, color, features.
inline Item item_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
  Item item;
  if (!j.contains("id")) throw ParseError(where + ": missing field 'id'");
  item.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  item.title = detail::text_field(j, "title", true, where);
  item.caption = detail::text_field(j, "description", true, where);
  item.meta = detail::text_field(j, "meta", false, where);
  item.color = detail::text_field(j, "color", false, where);
  item.features = detail::feature_field(j, where);
  return item;
}

inline std::vector<Item> read_items_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Item> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON: " + e.what());
    }
    items.push_back(item_from_json(j, where));
  }
  return items;
}

// Processed record: the raw fields plus category name and attribute phrases.
inline nlohmann::json item_to_json(const Item& item, const AttributeVocab* attrs = nullptr,
                                   const CategorySet* cats = nullptr) {
  nlohmann::json j;
  j["id"] = item.id;
  j["title"] = join(item.title);
  j["description"] = join(item.caption);
  j["meta"] = join(item.meta);
  j["color"] = join(item.color);
  if (!item.features.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < item.features.cells; ++r)
      rows.push_back(std::vector<double>(
          item.features.values.begin() + static_cast<std::ptrdiff_t>(r * item.features.dim),
          item.features.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * item.features.dim)));
    j["features"] = rows;
  }
  if (cats && item.category >= 0) j["category"] = cats->name(item.category);
  if (attrs) {
    nlohmann::json a = nlohmann::json::array();
    for (int id : item.attributes) a.push_back(join(attrs->phrase(id)));
    j["attributes"] = a;
  }
  return j;
}

inline void write_items_jsonl(const std::vector<Item>& items, const std::string& path,
                              const AttributeVocab* attrs = nullptr,
                              const CategorySet* cats = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& item : items) out << item_to_json(item, attrs, cats).dump() << '\n';
}

inline void save_attribute_vocab(const AttributeVocab& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& p : v.phrases()) out << join(p) << '\n';
}

inline AttributeVocab load_attribute_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  AttributeVocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    try {
      v.add(std::move(toks));
    } catch (const std::invalid_argument& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return v;
}

// "name<TAB>item_count" per line.
inline void save_category_set(const CategorySet& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (int i = 0; i < c.size(); ++i) out << c.name(i) << '\t' << c.item_count(i) << '\n';
}

inline CategorySet load_category_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  CategorySet c;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) c.add(line);
    else c.add(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
  }
  return c;
}

// ---- processed dataset directory -----------------------------------------

// On-disk layout shared by ingest/synth (writers) and training (reader):
//   items.jsonl  labeled records     attributes.txt  one phrase per line
//   categories.txt name<TAB>count    vocab.txt       word vocabulary
//   split.json   train/val/test ids
struct Dataset {
  std::vector<Item> items;
  AttributeVocab attributes;
  CategorySet categories;
  Vocab vocab;
  DatasetSplit split;

  std::vector<const Item*> subset(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, const Item*> by_id;
    for (const auto& it : items) by_id.emplace(it.id, &it);
    std::vector<const Item*> out;
    for (const auto& id : ids) {
      auto f = by_id.find(id);
      if (f == by_id.end()) throw std::runtime_error("dataset: split names unknown item '" + id + "'");
      out.push_back(f->second);
    }
    return out;
  }
  std::vector<const Item*> train() const { return subset(split.train); }
  std::vector<const Item*> val() const { return subset(split.val); }
  std::vector<const Item*> test() const { return subset(split.test); }
};

// Vocab over the training captions, then the split-independent files.
inline Dataset assemble_dataset(LabeledCorpus corpus, std::array<double, 3> fractions,
                                std::uint64_t seed, int vocab_min_count) {
  Dataset ds;
  ds.split = split_dataset(corpus.items, fractions, seed);
  ds.items = std::move(corpus.items);
  ds.attributes = std::move(corpus.attributes);
  ds.categories = std::move(corpus.categories);
  std::vector<TokenSeq> captions;
  for (const Item* it : ds.train()) captions.push_back(it->caption);
  ds.vocab = build_vocab(captions, vocab_min_count);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_items_jsonl(ds.items, (dir / "items.jsonl").string(), &ds.attributes, &ds.categories);
  save_attribute_vocab(ds.attributes, (dir / "attributes.txt").string());
  save_category_set(ds.categories, (dir / "categories.txt").string());
  save_vocab(ds.vocab, (dir / "vocab.txt").string());
  std::ofstream out(dir / "split.json", std::ios::binary);
  out << split_to_json(ds.split).dump(1) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.attributes = load_attribute_vocab((dir / "attributes.txt").string());
  ds.categories = load_category_set((dir / "categories.txt").string());
  ds.vocab = load_vocab((dir / "vocab.txt").string());
  const std::string items_path = (dir / "items.jsonl").string();
  std::ifstream in(items_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + items_path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = items_path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON: " + e.what());
    }
    Item item = item_from_json(j, where);
    if (!j.contains("category")) throw ParseError(where + ": missing field 'category'");
    item.category = ds.categories.id(j["category"].get<std::string>());
    if (item.category < 0)
      throw ParseError(where + ": unknown category '" + j["category"].get<std::string>() + "'");
    for (const auto& a : j.value("attributes", nlohmann::json::array())) {
      const int id = ds.attributes.id(tokenize(a.get<std::string>()));
      if (id < 0) throw ParseError(where + ": unknown attribute '" + a.get<std::string>() + "'");
      item.attributes.push_back(id);
    }
    std::sort(item.attributes.begin(), item.attributes.end());
    if (item.features.empty()) throw ParseError(where + ": missing field 'features'");
    ds.items.push_back(std::move(item));
  }
  std::ifstream sin(dir / "split.json", std::ios::binary);
  if (!sin) throw std::runtime_error("cannot open " + (dir / "split.json").string());
  ds.split = split_from_json(nlohmann::json::parse(sin));
  return ds;
}

}  // namespace srfc
