// Writes the planted-keyword synthetic corpus and its vocabulary, for trying
// the CLI without the real dataset.
//
//   make_fixture --out DIR [--rows N] [--seed S] [--keywords K] [--filler-words F]

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "qscore/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus + vocabulary generator"};
  std::string out_dir;
  qscore::SyntheticSpec spec;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--rows", spec.rows, "number of rows");
  app.add_option("--seed", spec.seed, "generator seed");
  app.add_option("--keywords", spec.keywords, "distinct planted keywords");
  app.add_option("--filler-words", spec.filler_words, "filler words per body");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto data = qscore::make_synthetic(spec);
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "corpus.csv", std::ios::binary) << qscore::corpus_to_csv(data.corpus);
    std::ofstream vocab(std::filesystem::path(out_dir) / "vocab.txt", std::ios::binary);
    for (const auto& t : data.vocab_tokens) vocab << t << '\n';
    std::cout << out_dir << ": " << data.corpus.size() << " rows, " << data.vocab_tokens.size() << " tokens\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
