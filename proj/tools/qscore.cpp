// qscore: question-quality scoring pipeline.
//
//   qscore eda|train|sweep|evaluate|predict|serve [--config file.json] [flags]
//
// Flags override the config file, which overrides built-in defaults.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qscore/app.hpp"
#include "qscore/error.hpp"

namespace {

struct Flags {
  std::string config, corpus, vocab, lexicon, weights, output_dir, preset;
  std::string split, group_key;
  double lr = 0, holdout = 0, weight_decay = 0, dropout = 0;
  std::size_t epochs = 0, batch_size = 0, max_len = 0, folds = 0;
  std::uint64_t seed = 0;
  std::vector<double> lrs;
  bool lenient = false, raw_mse = false;
  std::string host;
  int port = 0;
  std::string title, body;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--corpus", f.corpus, "corpus CSV");
  cmd->add_option("--vocab", f.vocab, "WordPiece vocabulary (one token per line)");
  cmd->add_option("--lexicon", f.lexicon, "sentiment lexicon (word<TAB>polarity<TAB>subjectivity)");
  cmd->add_option("--weights", f.weights, "weight archive path");
  cmd->add_option("--output-dir", f.output_dir, "directory for reports, manifests and archives");
  cmd->add_option("--preset", f.preset, "model preset")->check(CLI::IsMember({"tiny", "base"}));
  cmd->add_option("--dropout", f.dropout, "dropout rate override");
  cmd->add_flag("--lenient", f.lenient, "skip invalid corpus rows instead of failing");
}

void add_training(CLI::App* cmd, Flags& f) {
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "batch size");
  cmd->add_option("--max-len", f.max_len, "maximum sequence length (<= 512)");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--split", f.split, "split kind")->check(CLI::IsMember({"holdout", "group_kfold"}));
  cmd->add_option("--holdout-fraction", f.holdout, "validation fraction for holdout");
  cmd->add_option("--folds", f.folds, "number of folds for group_kfold");
  cmd->add_option("--group-key", f.group_key, "grouping key")->check(CLI::IsMember({"body_hash", "qa_id"}));
  cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay");
  cmd->add_flag("--raw-mse", f.raw_mse, "also report MSE on the original target scale");
}

qscore::AppConfig build_config(CLI::App* cmd, const Flags& f) {
  qscore::AppConfig c;
  if (!f.config.empty()) c = qscore::load_app_config(f.config);
  auto given = [&](const char* name) { return cmd->get_option_no_throw(name) && cmd->count(name) > 0; };
  if (given("--corpus")) c.corpus = f.corpus;
  if (given("--vocab")) c.vocab = f.vocab;
  if (given("--lexicon")) c.lexicon = f.lexicon;
  if (given("--weights")) c.weights = f.weights;
  if (given("--output-dir")) c.output_dir = f.output_dir;
  if (given("--preset")) c.preset = f.preset;
  if (given("--dropout")) c.dropout = f.dropout;
  if (given("--lenient")) c.column_policy = qscore::ColumnPolicy::kLenient;
  if (given("--lr")) c.train.learning_rate = f.lr;
  if (given("--epochs")) c.train.epochs = f.epochs;
  if (given("--batch-size")) c.train.batch_size = f.batch_size;
  if (given("--max-len")) c.train.max_len = f.max_len;
  if (given("--seed")) c.train.seed = f.seed;
  if (given("--split")) c.train.split.kind = qscore::parse_split_kind(f.split);
  if (given("--holdout-fraction")) c.train.split.holdout_fraction = f.holdout;
  if (given("--folds")) c.train.split.n_folds = f.folds;
  if (given("--group-key")) c.train.split.group_key = qscore::parse_group_key(f.group_key);
  if (given("--weight-decay")) c.train.optimizer.weight_decay = f.weight_decay;
  if (given("--raw-mse")) c.train.report_raw_mse = true;
  if (given("--lrs")) c.learning_rates = f.lrs;
  if (given("--host")) c.host = f.host;
  if (given("--port")) c.port = f.port;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qscore: predict subjective quality aspects of QA-site questions"};
  app.require_subcommand(1);
  Flags f;

  auto* eda = app.add_subcommand("eda", "corpus statistics: histograms, correlations, sentiment");
  add_common(eda, f);

  auto* train = app.add_subcommand("train", "fine-tune the encoder and write a weight archive");
  add_common(train, f);
  add_training(train, f);

  auto* sweep = app.add_subcommand("sweep", "learning-rate x epoch validation MSE grid");
  add_common(sweep, f);
  add_training(sweep, f);
  sweep->add_option("--lrs", f.lrs, "learning rates to sweep")->delimiter(',');

  auto* evaluate = app.add_subcommand("evaluate", "validation MSE of a weight archive");
  add_common(evaluate, f);
  add_training(evaluate, f);

  auto* predict = app.add_subcommand("predict", "score one question");
  add_common(predict, f);
  predict->add_option("--max-len", f.max_len, "maximum sequence length (<= 512)");
  predict->add_option("--title", f.title, "question title")->required();
  predict->add_option("--body", f.body, "question body")->required();

  auto* serve = app.add_subcommand("serve", "HTTP scoring endpoint (POST /v1/score, GET /v1/health)");
  add_common(serve, f);
  serve->add_option("--max-len", f.max_len, "maximum sequence length (<= 512)");
  serve->add_option("--host", f.host, "bind address");
  serve->add_option("--port", f.port, "bind port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (eda->parsed()) {
      std::cout << qscore::cmd_eda(build_config(eda, f), &std::cerr).dump(2) << '\n';
    } else if (train->parsed()) {
      std::cout << qscore::cmd_train(build_config(train, f), &std::cerr).dump(2) << '\n';
    } else if (sweep->parsed()) {
      std::cout << qscore::cmd_sweep(build_config(sweep, f), &std::cerr).dump(2) << '\n';
    } else if (evaluate->parsed()) {
      std::cout << qscore::cmd_evaluate(build_config(evaluate, f)).dump(2) << '\n';
    } else if (predict->parsed()) {
      std::cout << qscore::cmd_predict(build_config(predict, f), f.title, f.body).dump(2) << '\n';
    } else if (serve->parsed()) {
      qscore::cmd_serve(build_config(serve, f), &std::cerr);
    }
  } catch (const qscore::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
