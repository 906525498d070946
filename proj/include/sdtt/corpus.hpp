#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sdtt/common.hpp"

namespace sdtt {

enum class TokenizerMode { Char, Byte };

/// Token inventory. The MASK token is always the last entry.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens, TokenizerMode mode);

  int size() const { return static_cast<int>(tokens_.size()); }
  int mask_index() const { return size() - 1; }
  TokenizerMode mode() const { return mode_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  /// Throws InputError on symbols outside the vocabulary.
  std::vector<std::int32_t> tokenize(std::string_view text) const;
  /// MASK renders as its token string.
  std::string detokenize(const std::int32_t* ids, std::size_t n) const;
  std::string detokenize(const std::vector<std::int32_t>& ids) const {
    return detokenize(ids.data(), ids.size());
  }

  static constexpr std::string_view kMaskToken = "[MASK]";

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  TokenizerMode mode_ = TokenizerMode::Char;
};

/// Fixed-length training rows; no row contains MASK.
struct PackedDataset {
  Tokens rows;
  int L = 0;

  int num_rows() const { return static_cast<int>(rows.rows()); }
};

struct ClozeItem {
  std::vector<std::int32_t> context;
  std::vector<std::int32_t> suffix;
};

struct ClozeSet {
  std::vector<ClozeItem> items;
};

Vocab build_vocab(std::string_view corpus_text, TokenizerMode mode);

/// Non-overlapping windows of length L; the trailing remainder is dropped.
PackedDataset pack_sequences(std::string_view corpus_text, const Vocab& vocab, int L);

/// Train/held-out split: the last 10% of rows (at least one when there are
/// two or more rows) are held out.
struct DatasetSplit {
  PackedDataset train;
  PackedDataset heldout;
};
DatasetSplit split_heldout(const PackedDataset& dataset);

/// Splits `n_items` distinct rows (chosen under `seed`) at L - suffix_len.
/// Pass the held-out split.
ClozeSet build_cloze_set(const PackedDataset& rows, int suffix_len, int n_items,
                         std::uint64_t seed);

// Dataset file: "SDTTDS1", u32 K, u32 L, u64 rows, u8 mode, vocab listing
// (u32 length + bytes per token), then row-major little-endian int32 ids.
void write_dataset(const std::filesystem::path& path, const Vocab& vocab,
                   const PackedDataset& dataset);
struct DatasetFile {
  Vocab vocab;
  PackedDataset dataset;
};
DatasetFile read_dataset(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Sentences from a small fixed grammar, for desk-scale experiments.
std::string generate_toy_corpus(std::size_t min_chars, std::uint64_t seed);

}  // namespace sdtt
