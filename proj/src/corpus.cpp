#include "sdtt/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace sdtt {
namespace {

constexpr std::string_view kDatasetMagic = "SDTTDS1";

// Splits UTF-8 text into code-point strings.
std::vector<std::string_view> split_utf8(std::string_view text) {
  std::vector<std::string_view> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    if (lead < 0x80) {
      len = 1;
    } else if ((lead >> 5) == 0x6) {
      len = 2;
    } else if ((lead >> 4) == 0xE) {
      len = 3;
    } else if ((lead >> 3) == 0x1E) {
      len = 4;
    } else {
      throw InputError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + len > text.size()) throw InputError("truncated UTF-8 sequence");
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) {
        throw InputError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      }
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string_view> split_symbols(std::string_view text, TokenizerMode mode) {
  if (mode == TokenizerMode::Char) return split_utf8(text);
  std::vector<std::string_view> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) out.push_back(text.substr(i, 1));
  return out;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens, TokenizerMode mode)
    : tokens_(std::move(tokens)), mode_(mode) {
  if (tokens_.size() < 2) throw InputError("vocabulary needs at least one symbol plus MASK");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw InputError("duplicate vocabulary token");
    }
  }
  if (tokens_.back() != kMaskToken) throw InputError("MASK must be the last vocabulary token");
}

std::vector<std::int32_t> Vocab::tokenize(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (auto sym : split_symbols(text, mode_)) {
    auto it = index_.find(std::string(sym));
    // MASK is multi-byte, so a single symbol can only collide with it in byte
    // mode, where it never matches either.
    if (it == index_.end() || it->second == mask_index()) {
      throw InputError("symbol not in vocabulary");
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocab::detokenize(const std::int32_t* ids, std::size_t n) const {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += token(ids[i]);
  return out;
}

Vocab build_vocab(std::string_view corpus_text, TokenizerMode mode) {
  if (corpus_text.empty()) throw InputError("empty corpus");
  std::vector<std::string> tokens;
  if (mode == TokenizerMode::Byte) {
    for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
  } else {
    std::set<std::string_view> symbols;
    for (auto sym : split_utf8(corpus_text)) symbols.insert(sym);
    for (auto sym : symbols) tokens.emplace_back(sym);
  }
  tokens.emplace_back(Vocab::kMaskToken);
  return Vocab(std::move(tokens), mode);
}

PackedDataset pack_sequences(std::string_view corpus_text, const Vocab& vocab, int L) {
  if (L <= 0) throw InputError("context length must be positive");
  const auto ids = vocab.tokenize(corpus_text);
  if (ids.size() < static_cast<std::size_t>(L)) {
    throw InputError("corpus has " + std::to_string(ids.size()) + " tokens, fewer than L=" +
                     std::to_string(L));
  }
  const auto n_rows = static_cast<Eigen::Index>(ids.size() / static_cast<std::size_t>(L));
  PackedDataset ds;
  ds.L = L;
  ds.rows = Eigen::Map<const Tokens>(ids.data(), n_rows, L);
  return ds;
}

DatasetSplit split_heldout(const PackedDataset& dataset) {
  const int n = dataset.num_rows();
  int n_heldout = n / 10;
  if (n >= 2 && n_heldout == 0) n_heldout = 1;
  DatasetSplit split;
  split.train.L = split.heldout.L = dataset.L;
  split.train.rows = dataset.rows.topRows(n - n_heldout);
  split.heldout.rows = dataset.rows.bottomRows(n_heldout);
  return split;
}

ClozeSet build_cloze_set(const PackedDataset& rows, int suffix_len, int n_items,
                         std::uint64_t seed) {
  if (suffix_len <= 0 || suffix_len >= rows.L) {
    throw InputError("suffix length must lie in [1, L)");
  }
  if (n_items <= 0) throw InputError("n_items must be positive");
  if (n_items > rows.num_rows()) {
    throw InputError("requested " + std::to_string(n_items) + " cloze items but only " +
                     std::to_string(rows.num_rows()) + " rows are available");
  }
  std::vector<int> order(static_cast<std::size_t>(rows.num_rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with our own uniform draw so the order is library-independent.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  ClozeSet set;
  const int split = rows.L - suffix_len;
  for (int k = 0; k < n_items; ++k) {
    const auto row = rows.rows.row(order[static_cast<std::size_t>(k)]);
    ClozeItem item;
    item.context.assign(row.data(), row.data() + split);
    item.suffix.assign(row.data() + split, row.data() + rows.L);
    set.items.push_back(std::move(item));
  }
  return set;
}

void write_dataset(const std::filesystem::path& path, const Vocab& vocab,
                   const PackedDataset& dataset) {
  io::Writer w;
  w.put_bytes(kDatasetMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(vocab.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dataset.L));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(dataset.num_rows()));
  w.put<std::uint8_t>(vocab.mode() == TokenizerMode::Char ? 0 : 1);
  for (const auto& tok : vocab.tokens()) w.put_string(tok);
  w.put_array(dataset.rows.data(), static_cast<std::size_t>(dataset.rows.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  io::Reader r(bytes);
  if (r.get_bytes(kDatasetMagic.size()) != kDatasetMagic) {
    throw DataError(path.string() + ": not a dataset file");
  }
  const auto K = r.get<std::uint32_t>();
  const auto L = r.get<std::uint32_t>();
  const auto n_rows = r.get<std::uint64_t>();
  const auto mode = r.get<std::uint8_t>() == 0 ? TokenizerMode::Char : TokenizerMode::Byte;
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < K; ++i) tokens.push_back(r.get_string());
  if (r.remaining() != n_rows * L * sizeof(std::int32_t)) {
    throw DataError(path.string() + ": row payload size mismatch");
  }
  DatasetFile file{Vocab(std::move(tokens), mode), {}};
  file.dataset.L = static_cast<int>(L);
  file.dataset.rows.resize(static_cast<Eigen::Index>(n_rows), L);
  r.get_array(file.dataset.rows.data(), static_cast<std::size_t>(file.dataset.rows.size()));
  if (file.dataset.rows.size() > 0 &&
      ((file.dataset.rows.array() < 0).any() ||
       (file.dataset.rows.array() >= file.vocab.mask_index()).any())) {
    throw DataError(path.string() + ": token id out of range");
  }
  return file;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string generate_toy_corpus(std::size_t min_chars, std::uint64_t seed) {
  static const std::array<std::string_view, 4> kDet = {"the", "a", "one", "every"};
  static const std::array<std::string_view, 6> kAdj = {"red", "small", "old",
                                                       "quiet", "happy", "green"};
  static const std::array<std::string_view, 8> kNoun = {"cat", "dog", "bird", "house",
                                                        "tree", "ball", "river", "king"};
  static const std::array<std::string_view, 6> kVerb = {"sees", "chased", "finds",
                                                        "likes", "built", "holds"};
  static const std::array<std::string_view, 4> kPrep = {"near", "under", "behind", "over"};

  Rng rng(seed);
  auto pick = [&rng](const auto& words) {
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(words.size()));
    return words[std::min(i, words.size() - 1)];
  };
  auto noun_phrase = [&](std::string& out) {
    out += pick(kDet);
    out += ' ';
    if (uniform01(rng) < 0.5) {
      out += pick(kAdj);
      out += ' ';
    }
    out += pick(kNoun);
  };

  std::string text;
  while (text.size() < min_chars) {
    noun_phrase(text);
    text += ' ';
    text += pick(kVerb);
    text += ' ';
    noun_phrase(text);
    if (uniform01(rng) < 0.4) {
      text += ' ';
      text += pick(kPrep);
      text += ' ';
      noun_phrase(text);
    }
    text += ". ";
  }
  return text;
}

}  // namespace sdtt
