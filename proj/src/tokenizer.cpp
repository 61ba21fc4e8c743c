#include "qscore/tokenizer.hpp"

#include <fstream>
#include <sstream>

#include "qscore/error.hpp"
#include "qscore/utf8.hpp"

namespace qscore {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

bool is_control(char32_t cp) {
  if (cp == U'\t' || cp == U'\n' || cp == U'\r') return false;
  return cp == 0 || cp == 0xFFFD || cp < 0x20 || (cp >= 0x7F && cp < 0xA0);
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.ids_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::kDuplicateToken, "'" + v.tokens_[i] + "' at line " + std::to_string(i + 1));
    }
  }
  auto special = [&](std::string_view name) {
    const auto id = v.find(name);
    if (!id) throw Error(ErrorCode::kMissingSpecialToken, std::string(name));
    return *id;
  };
  v.pad_ = special(kPadToken);
  v.unk_ = special(kUnkToken);
  v.cls_ = special(kClsToken);
  v.sep_ = special(kSepToken);
  return v;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Vocabulary parse_vocab(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    tokens.emplace_back(line);
    pos = eol + 1;
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_vocab(buf.str());
}

std::vector<std::string> pre_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_whitespace(cp)) {
      flush();
    } else if (is_control(cp)) {
      continue;
    } else if (utf8::is_ascii_punct(cp)) {
      flush();
      out.emplace_back(1, static_cast<char>(cp));
    } else {
      utf8::append(current, utf8::to_lower(cp));
    }
  }
  flush();
  return out;
}

std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab) {
  const auto cps = utf8::decode(word);
  if (cps.empty()) return {};
  if (cps.size() > kMaxCharsPerWord) return {vocab.unk_id()};

  std::vector<TokenId> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < cps.size()) {
    std::optional<TokenId> match;
    std::size_t end = cps.size();
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate = kContinuationPrefix;
      for (std::size_t i = start; i < end; ++i) utf8::append(candidate, cps[i]);
      match = vocab.find(candidate);
      if (match) break;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& word : pre_tokenize(text)) {
    const auto pieces = wordpiece(word, vocab);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return ids;
}

TokenizedInput encode_pair(std::string_view title, std::string_view body, const Vocabulary& vocab,
                           std::size_t max_len) {
  if (max_len < 3 || max_len > kMaxSequenceLength) {
    throw Error(ErrorCode::kInvalidConfig, "max_len must lie in [3, 512], got " + std::to_string(max_len));
  }
  auto a = tokenize(title, vocab);
  auto b = tokenize(body, vocab);
  const std::size_t budget = max_len - 3;
  while (a.size() + b.size() > budget) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }

  TokenizedInput in;
  in.token_ids.reserve(max_len);
  in.token_ids.push_back(vocab.cls_id());
  in.token_ids.insert(in.token_ids.end(), a.begin(), a.end());
  in.token_ids.push_back(vocab.sep_id());
  in.segment_ids.assign(in.token_ids.size(), 0);
  in.token_ids.insert(in.token_ids.end(), b.begin(), b.end());
  in.token_ids.push_back(vocab.sep_id());
  in.segment_ids.resize(in.token_ids.size(), 1);
  in.attention_mask.assign(in.token_ids.size(), 1);

  in.token_ids.resize(max_len, vocab.pad_id());
  in.segment_ids.resize(max_len, 0);
  in.attention_mask.resize(max_len, 0);
  return in;
}

}  // namespace qscore
