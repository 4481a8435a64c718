#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "srfc/dataset.hpp"
#include "srfc/rng.hpp"

namespace srfc {

// Desk-scale stand-in for a crawled fashion corpus. Every label is known by
// construction, so downstream metrics have exact oracles.
struct SynthConfig {
  int n_items = 2000;
  int n_categories = 20;
  int n_attributes = 60;
  int attributes_per_item = 3;
  int pool_size = 10;                // attributes available to one category
  double two_token_fraction = 0.2;   // share of attributes that are 2-token phrases
  int grid_cells = 4;                // B
  int feature_dim = 32;              // D
  double feature_noise = 0.0;        // stddev of additive Gaussian noise
  int images_per_caption = 1;        // grids sharing one caption (split grouping)
  // {C} category word, {A} attribute phrases joined by connectors, {F} a
  // random filler word; anything else is copied literally.
  std::vector<std::string> templates = {
      "{F} {A} {C} {F} {F}",
      "this {C} features {A} for {F}",
      "{A} {C} with {F} {F}",
  };
};

struct SynthCorpus {
  std::vector<Item> items;
  AttributeVocab attributes;
  CategorySet categories;
  PosLexicon lexicon;
};

namespace synth_words {
inline const std::vector<std::string> kCategories = {
    "dress",    "coat",    "jacket",   "skirt",  "shirt",    "sweater", "jeans",  "shorts",
    "blouse",   "boots",   "sneakers", "sandals", "hat",     "scarf",   "bag",    "belt",
    "vest",     "hoodie",  "cardigan", "pants",  "blazer",   "jumpsuit", "romper", "tote",
    "loafers",  "pumps",   "parka",    "leggings", "tunic",  "kimono"};
inline const std::vector<std::string> kAttributeWords = {
    "pink",     "lace",      "floral",     "cotton",     "silk",       "wool",      "leather",
    "denim",    "striped",   "pleated",    "ruffled",    "belted",     "cropped",   "fitted",
    "relaxed",  "oversized", "slim",       "sleeveless", "quilted",    "ribbed",    "knit",
    "velvet",   "satin",     "linen",      "suede",      "plaid",      "checked",   "embroidered",
    "beaded",   "sequined",  "metallic",   "ivory",      "black",      "navy",      "crimson",
    "olive",    "camel",     "blush",      "mint",       "lavender",   "tan",       "burgundy",
    "charcoal", "taupe",     "cream",      "sheer",      "lined",      "padded",    "hooded",
    "zippered", "buttoned",  "wrapped",    "tiered",     "draped",     "asymmetric", "fringed",
    "distressed", "washed",  "faded",      "stretch",    "organic",    "recycled",  "vintage",
    "classic",  "minimalist", "graphic",   "textured",   "smocked",    "crochet",   "mesh",
    "chiffon",  "tweed",     "cashmere",   "jersey",     "canvas",     "nylon",     "corduroy",
    "fleece",   "shearling", "mohair",     "houndstooth", "paisley",   "gingham",   "tulle"};
inline const std::vector<std::string> kModifiers = {
    "notched", "side",  "ruffle", "scoop", "button", "patch",  "split", "high",  "drop",
    "cap",     "puff",  "flutter", "mock", "raw",    "contrast", "back", "front", "wide",
    "tapered", "square"};
inline const std::vector<std::string> kParts = {
    "lapel", "slit",  "hem",    "neck",  "cuff", "pocket", "waist",   "sleeve", "collar", "shoulder",
    "seam",  "strap", "placket", "trim", "yoke", "vent",   "tab",     "closure", "lining", "rise"};
inline const std::vector<std::string> kFillers = {
    "perfect", "look",    "style",   "finish",   "detail",  "season",  "day",    "night",
    "weekend", "layering", "comfort", "wear",    "piece",   "staple",  "update", "touch",
    "polish",  "ease",    "shape",   "flair",    "charm",   "edge",    "mood",   "vibe",
    "favorite", "essential", "choice", "moment", "outing",  "travel"};
inline const std::vector<std::string> kConnectors = {"and", "with", "plus"};
inline const std::vector<std::string> kMetaWords = {
    "imported", "dry", "clean", "machine", "wash", "cold", "true", "to", "size", "fits",
    "model",    "wears", "care", "hand",   "lay",  "flat"};
inline const std::vector<std::string> kColors = {"white", "red",    "green",  "blue",   "yellow",
                                                 "brown", "gray",   "orange", "purple", "beige"};

inline std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

inline std::string numbered(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", stem, i);
  return buf;
}
}  // namespace synth_words

inline SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed) {
  namespace w = synth_words;
  if (cfg.n_items < 1 || cfg.n_categories < 1 || cfg.n_attributes < 0)
    throw std::invalid_argument("synth: item/category counts must be positive");
  if (cfg.attributes_per_item < 0 || cfg.pool_size < 0)
    throw std::invalid_argument("synth: attribute counts must be nonnegative");
  if (cfg.pool_size > cfg.n_attributes)
    throw std::invalid_argument("synth: pool_size " + std::to_string(cfg.pool_size) +
                                " exceeds n_attributes " + std::to_string(cfg.n_attributes));
  if (cfg.attributes_per_item > cfg.pool_size)
    throw std::invalid_argument("synth: attributes_per_item " +
                                std::to_string(cfg.attributes_per_item) + " exceeds pool_size " +
                                std::to_string(cfg.pool_size));
  if (cfg.grid_cells < 1 || cfg.feature_dim < 1)
    throw std::invalid_argument("synth: grid_cells and feature_dim must be >= 1");
  if (cfg.images_per_caption < 1) throw std::invalid_argument("synth: images_per_caption must be >= 1");
  if (cfg.templates.empty()) throw std::invalid_argument("synth: no caption templates");
  if (cfg.two_token_fraction < 0.0 || cfg.two_token_fraction > 1.0)
    throw std::invalid_argument("synth: two_token_fraction must be in [0, 1]");

  Rng rng(seed);
  SynthCorpus out;

  for (int c = 0; c < cfg.n_categories; ++c) {
    const std::string name = c < static_cast<int>(w::kCategories.size())
                                 ? w::kCategories[static_cast<std::size_t>(c)]
                                 : w::numbered("category", c);
    out.categories.add(name);
    out.lexicon.set(name, PosTag::kNoun);
  }

  const int n_two = std::min<int>(static_cast<int>(cfg.two_token_fraction * cfg.n_attributes + 0.5),
                                  static_cast<int>(w::kModifiers.size()));
  int next_word = 0, next_pair = 0;
  for (int a = 0; a < cfg.n_attributes; ++a) {
    if (cfg.n_attributes > 0 && (a + 1) * n_two / cfg.n_attributes > a * n_two / cfg.n_attributes) {
      const auto k = static_cast<std::size_t>(next_pair++);
      out.attributes.add({w::kModifiers[k], w::kParts[k]});
      out.lexicon.set(w::kModifiers[k], PosTag::kAdjective);
      out.lexicon.set(w::kParts[k], PosTag::kNoun);
    } else {
      const std::string word = next_word < static_cast<int>(w::kAttributeWords.size())
                                   ? w::kAttributeWords[static_cast<std::size_t>(next_word)]
                                   : w::numbered("attr", next_word);
      ++next_word;
      out.attributes.add({word});
      out.lexicon.set(word, PosTag::kAdjective);
    }
  }
  for (const auto* list : {&w::kFillers, &w::kConnectors, &w::kMetaWords, &w::kColors})
    for (const auto& word : *list) out.lexicon.set(word, PosTag::kOther);

  // Category-specific pools; with n_categories * pool_size > n_attributes the
  // pools overlap, so related categories share attributes.
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(cfg.n_categories));
  for (auto& pool : pools) {
    std::vector<int> all(static_cast<std::size_t>(cfg.n_attributes));
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    pool.assign(all.begin(), all.begin() + cfg.pool_size);
    std::sort(pool.begin(), pool.end());
  }

  const auto dim = static_cast<std::size_t>(cfg.feature_dim);
  auto random_vector = [&]() {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  std::vector<std::vector<double>> cat_embed, attr_embed;
  for (int c = 0; c < cfg.n_categories; ++c) cat_embed.push_back(random_vector());
  for (int a = 0; a < cfg.n_attributes; ++a) attr_embed.push_back(random_vector());

  const int n_captions = (cfg.n_items + cfg.images_per_caption - 1) / cfg.images_per_caption;
  int made = 0;
  for (int k = 0; k < n_captions; ++k) {
    const int cat = static_cast<int>(rng.below(static_cast<std::size_t>(cfg.n_categories)));
    std::vector<int> pool = pools[static_cast<std::size_t>(cat)];
    rng.shuffle(pool);
    std::vector<int> attrs(pool.begin(), pool.begin() + cfg.attributes_per_item);
    std::sort(attrs.begin(), attrs.end());
    const std::string& cat_word = out.categories.name(cat);

    TokenSeq title, meta;
    for (int a : attrs)
      for (const auto& t : out.attributes.phrase(a)) title.push_back(t);
    title.push_back(cat_word);

    // Caption: attributes in shuffled order, separated by connectors so that
    // single-token attributes never form a spurious bigram phrase.
    std::vector<int> order = attrs;
    rng.shuffle(order);
    TokenSeq attr_tokens;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i) attr_tokens.push_back(w::kConnectors[rng.below(w::kConnectors.size())]);
      for (const auto& t : out.attributes.phrase(order[i])) attr_tokens.push_back(t);
    }
    const auto& tmpl = cfg.templates[rng.below(cfg.templates.size())];
    TokenSeq caption;
    for (const auto& slot : w::split_whitespace(tmpl)) {
      if (slot == "{C}") caption.push_back(cat_word);
      else if (slot == "{A}") caption.insert(caption.end(), attr_tokens.begin(), attr_tokens.end());
      else if (slot == "{F}") caption.push_back(w::kFillers[rng.below(w::kFillers.size())]);
      else caption.push_back(slot);
    }

    std::vector<std::string> meta_src = w::kMetaWords;
    rng.shuffle(meta_src);
    meta.assign(meta_src.begin(), meta_src.begin() + 4);
    for (int a : attrs)
      for (const auto& t : out.attributes.phrase(a)) meta.push_back(t);
    const TokenSeq color{w::kColors[rng.below(w::kColors.size())]};

    for (int img = 0; img < cfg.images_per_caption && made < cfg.n_items; ++img, ++made) {
      Item item;
      char id[32];
      std::snprintf(id, sizeof id, "syn-%06d", made);
      item.id = id;
      item.title = title;
      item.caption = caption;
      item.meta = meta;
      item.color = color;
      item.category = cat;
      item.attributes = attrs;
      FeatureGrid& g = item.features;
      g.cells = static_cast<std::size_t>(cfg.grid_cells);
      g.dim = dim;
      g.values.assign(g.cells * dim, 0.0);
      auto place = [&](const std::vector<double>& v) {
        const std::size_t cell = rng.below(g.cells);
        for (std::size_t d = 0; d < dim; ++d) g.values[cell * dim + d] += v[d];
      };
      place(cat_embed[static_cast<std::size_t>(cat)]);
      for (int a : attrs) place(attr_embed[static_cast<std::size_t>(a)]);
      if (cfg.feature_noise > 0.0)
        for (auto& x : g.values) x += rng.normal(0.0, cfg.feature_noise);
      out.items.push_back(std::move(item));
    }
  }
  for (const auto& item : out.items)
    out.categories.set_item_count(item.category, out.categories.item_count(item.category) + 1);
  return out;
}

}  // namespace srfc
