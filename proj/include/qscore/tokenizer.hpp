#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qscore {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::size_t kMaxSequenceLength = 512;

/// Token <-> id table. Ids are dense zero-based line indices of the
/// vocabulary file, compatible with the published BERT vocab.txt files.
class Vocabulary {
 public:
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId pad_id() const { return pad_; }
  TokenId unk_id() const { return unk_; }
  TokenId cls_id() const { return cls_; }
  TokenId sep_id() const { return sep_; }
  bool is_special(TokenId id) const { return id == pad_ || id == unk_ || id == cls_ || id == sep_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0;
};

Vocabulary parse_vocab(std::string_view text);
Vocabulary load_vocab(const std::filesystem::path& path);

/// Lowercase, split on whitespace, and isolate each ASCII punctuation
/// character as its own token. Control characters are dropped.
std::vector<std::string> pre_tokenize(std::string_view text);

/// Greedy longest-match-first WordPiece over one pre-tokenized word. If any
/// position fails to match, or the word exceeds 100 characters, the result is
/// a single UNK.
std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab);

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);

struct TokenizedInput {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t length() const { return token_ids.size(); }
  bool operator==(const TokenizedInput&) const = default;
};

/// CLS title SEP body SEP, truncated longest-segment-first from the end
/// (ties trim the body) until it fits in max_len, then PAD-filled.
TokenizedInput encode_pair(std::string_view title, std::string_view body, const Vocabulary& vocab,
                           std::size_t max_len);

}  // namespace qscore
