#include "qscore/synthetic.hpp"

#include <algorithm>
#include <array>

#include "qscore/csv.hpp"
#include "qscore/error.hpp"
#include "qscore/rng.hpp"
#include "qscore/textfeat.hpp"

namespace qscore {

namespace {

constexpr std::array<std::string_view, 32> kFiller = {
    "the",    "a",      "is",     "to",     "of",   "and",   "in",     "it",
    "my",     "this",   "that",   "with",   "for",  "on",    "when",   "using",
    "code",   "file",   "system", "server", "error", "value", "method", "data",
    "should", "would",  "could",  "there",  "some", "any",   "because", "however",
};
constexpr std::array<std::string_view, 6> kTitleStarts = {"how", "why", "what", "can", "is", "which"};

std::string keyword(std::size_t k) { return "kw" + std::to_string(k); }

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.keywords < 2 || spec.rows < 2) {
    throw Error(ErrorCode::kInvalidConfig, "synthetic corpus needs >= 2 keywords and >= 2 rows");
  }
  SyntheticData out;
  out.vocab_tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", ".", "?", ","};
  for (auto w : kTitleStarts) out.vocab_tokens.emplace_back(w);
  for (auto w : kFiller) {
    // "however" is left to WordPiece as how + ##ever.
    if (w != "however" && std::find(out.vocab_tokens.begin(), out.vocab_tokens.end(), w) == out.vocab_tokens.end()) {
      out.vocab_tokens.emplace_back(w);
    }
  }
  out.vocab_tokens.emplace_back("##ever");
  for (std::size_t k = 0; k < spec.keywords; ++k) out.vocab_tokens.push_back(keyword(k));
  out.vocab = Vocabulary::from_tokens(out.vocab_tokens);

  Rng rng(spec.seed);
  out.permutations.resize(kNumTargets);
  for (std::size_t t = 0; t < kNumTargets; ++t) {
    auto& p = out.permutations[t];
    p.resize(spec.keywords);
    for (std::size_t k = 0; k < spec.keywords; ++k) p[k] = k;
    if (t > 0) rng.shuffle(p);
  }

  const double top = static_cast<double>(spec.keywords - 1);
  out.corpus.source = "synthetic:" + std::to_string(spec.seed);
  for (std::size_t i = 0; i < spec.rows; ++i) {
    const auto k = static_cast<std::size_t>(rng.index(spec.keywords));

    std::vector<std::string> words;
    for (std::size_t w = 0; w < spec.filler_words; ++w) words.emplace_back(kFiller[rng.index(kFiller.size())]);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.index(words.size() + 1)), keyword(k));
    std::string body;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) body += (rng.index(8) == 0) ? ", " : " ";
      body += words[w];
    }
    body += ".";

    std::string title(kTitleStarts[rng.index(kTitleStarts.size())]);
    for (int w = 0; w < 2; ++w) title += " " + std::string(kFiller[rng.index(kFiller.size())]);
    title += "?";

    Example ex;
    ex.record.qa_id = "syn" + std::to_string(i);
    ex.record.title = std::move(title);
    ex.record.body = std::move(body);
    ex.record.category = static_cast<Category>(i % 5);
    ex.record.host = "site" + std::to_string(i % 7) + ".example.com";
    for (std::size_t t = 0; t < kNumTargets; ++t) {
      ex.targets[t] = static_cast<double>(out.permutations[t][k]) / top;
    }
    out.corpus.rows.push_back(std::move(ex));
    out.planted.push_back(k);
  }
  return out;
}

std::string corpus_to_csv(const Corpus& corpus) {
  csv::Row header = {"qa_id", "question_title", "question_body", "category", "host"};
  for (auto name : kTargetNames) header.push_back("question_" + std::string(name));
  std::string out = csv::join(header) + "\n";
  for (const auto& ex : corpus.rows) {
    csv::Row row = {ex.record.qa_id, ex.record.title, ex.record.body, std::string(to_string(ex.record.category)),
                    ex.record.host};
    for (double v : ex.targets.values) row.push_back(format_real(v));
    out += csv::join(row) + "\n";
  }
  return out;
}

}  // namespace qscore
