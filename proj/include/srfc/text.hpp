#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace srfc {

using TokenSeq = std::vector<std::string>;
using IdSeq = std::vector<int>;

namespace detail {
inline bool is_alnum(unsigned char c) { return std::isalnum(c) != 0; }
}  // namespace detail

// Whitespace split, trim non-alphanumerics from both ends of each fragment,
// drop fragments with no alphanumeric character left, lowercase the rest.
// Internal punctuation (a-line, women's) survives.
inline TokenSeq tokenize(std::string_view raw) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t j = i;
    while (j < raw.size() && !std::isspace(static_cast<unsigned char>(raw[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && !detail::is_alnum(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && !detail::is_alnum(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b < e) {
      std::string tok(raw.substr(b, e - b));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

inline std::string join(const TokenSeq& tokens, std::string_view sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += sep;
    s += tokens[i];
  }
  return s;
}

// Word vocabulary. Ids 0..3 are reserved; retained tokens follow in
// frequency-descending order with lexicographic tiebreak.
class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;
  static constexpr int kNumReserved = 4;
  static constexpr std::string_view kReservedNames[kNumReserved] = {"<bos>", "<eos>", "<unk>",
                                                                      "<pad>"};

  Vocab() {
    for (auto name : kReservedNames) token_of_.emplace_back(name);
  }

  // Builds a vocab from tokens already in id order (ids start at kNumReserved).
  static Vocab from_ordered(const TokenSeq& tokens) {
    Vocab v;
    for (const auto& t : tokens) {
      if (t.empty()) throw std::invalid_argument("Vocab: empty token");
      if (v.id_of_.count(t)) throw std::invalid_argument("Vocab: duplicate token '" + t + "'");
      v.id_of_.emplace(t, static_cast<int>(v.token_of_.size()));
      v.token_of_.push_back(t);
    }
    return v;
  }

  int size() const { return static_cast<int>(token_of_.size()); }

  bool contains(const std::string& token) const { return id_of_.count(token) != 0; }

  int id(const std::string& token) const {
    auto it = id_of_.find(token);
    return it == id_of_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw std::out_of_range("Vocab: id " + std::to_string(id) + " outside [0, " +
                              std::to_string(size()) + ")");
    return token_of_[static_cast<std::size_t>(id)];
  }

  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

  // Retained tokens only, in id order.
  TokenSeq words() const { return TokenSeq(token_of_.begin() + kNumReserved, token_of_.end()); }

  bool operator==(const Vocab& o) const { return token_of_ == o.token_of_; }

 private:
  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> token_of_;
};

inline Vocab build_vocab(const std::vector<TokenSeq>& captions, int min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  std::map<std::string, std::int64_t> counts;
  for (const auto& cap : captions)
    for (const auto& t : cap) ++counts[t];
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  TokenSeq ordered;
  ordered.reserve(kept.size());
  for (auto& kv : kept) ordered.push_back(kv.first);
  return Vocab::from_ordered(ordered);
}

inline IdSeq encode(const TokenSeq& tokens, const Vocab& vocab) {
  IdSeq ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(Vocab::kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  ids.push_back(Vocab::kEos);
  return ids;
}

// Drops BOS/EOS/PAD; UNK decodes to "<unk>".
inline TokenSeq decode(const IdSeq& ids, const Vocab& vocab) {
  TokenSeq out;
  for (int id : ids) {
    const auto& tok = vocab.token(id);
    if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
    out.push_back(tok);
  }
  return out;
}

// One token per line; the four reserved names first.
inline void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_vocab: cannot open " + path);
  for (int i = 0; i < vocab.size(); ++i) out << vocab.token(i) << '\n';
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
  TokenSeq lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < Vocab::kNumReserved)
    throw std::runtime_error("load_vocab: " + path + " is missing reserved tokens");
  for (int i = 0; i < Vocab::kNumReserved; ++i)
    if (lines[static_cast<std::size_t>(i)] != Vocab::kReservedNames[i])
      throw std::runtime_error("load_vocab: " + path + " line " + std::to_string(i + 1) +
                               " should be " + std::string(Vocab::kReservedNames[i]));
  return Vocab::from_ordered(TokenSeq(lines.begin() + Vocab::kNumReserved, lines.end()));
}

}  // namespace srfc
