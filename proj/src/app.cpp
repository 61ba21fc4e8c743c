#include "qscore/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "qscore/archive.hpp"
#include "qscore/error.hpp"
#include "qscore/sentiment.hpp"
#include "qscore/service.hpp"
#include "qscore/textfeat.hpp"
#include "qscore/tokenizer.hpp"

#ifndef QSCORE_DATA_DIR
#define QSCORE_DATA_DIR "data"
#endif

namespace qscore {

namespace {

void require_file(const std::filesystem::path& p, std::string_view what) {
  if (p.empty()) throw Error(ErrorCode::kInvalidConfig, "no " + std::string(what) + " path configured");
  if (!std::filesystem::is_regular_file(p)) {
    throw Error(ErrorCode::kIo, std::string(what) + " not found: " + p.string());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

std::filesystem::path weights_path(const AppConfig& c) {
  return c.weights.empty() ? c.output_dir / "model.qsw" : c.weights;
}

// Manifests compare equal across identical runs once "timing" is removed.
std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

AppConfig AppConfig::from_json(const nlohmann::json& j, AppConfig c) {
  try {
    if (j.contains("corpus")) c.corpus = j.at("corpus").get<std::string>();
    if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::string>();
    if (j.contains("lexicon")) c.lexicon = j.at("lexicon").get<std::string>();
    if (j.contains("weights")) c.weights = j.at("weights").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("preset")) c.preset = j.at("preset").get<std::string>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("column_policy")) {
      const auto p = j.at("column_policy").get<std::string>();
      if (p == "strict") {
        c.column_policy = ColumnPolicy::kStrict;
      } else if (p == "lenient") {
        c.column_policy = ColumnPolicy::kLenient;
      } else {
        throw Error(ErrorCode::kInvalidConfig, "column_policy must be strict or lenient");
      }
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"), c.train);
    if (j.contains("learning_rates")) c.learning_rates = j.at("learning_rates").get<std::vector<double>>();
    if (j.contains("serve")) {
      const auto& s = j.at("serve");
      c.host = s.value("host", c.host);
      c.port = s.value("port", c.port);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json AppConfig::to_json() const {
  nlohmann::json j{{"corpus", corpus.string()},
                   {"vocab", vocab.string()},
                   {"lexicon", lexicon.string()},
                   {"weights", weights.string()},
                   {"output_dir", output_dir.string()},
                   {"preset", preset},
                   {"column_policy", column_policy == ColumnPolicy::kStrict ? "strict" : "lenient"},
                   {"train", train.to_json()},
                   {"learning_rates", learning_rates},
                   {"serve", {{"host", host}, {"port", port}}}};
  if (dropout) j["dropout"] = *dropout;
  return j;
}

AppConfig load_app_config(const std::filesystem::path& path, AppConfig defaults) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  return AppConfig::from_json(j, std::move(defaults));
}

std::filesystem::path default_lexicon_path() { return std::filesystem::path(QSCORE_DATA_DIR) / "sentiment_lexicon.tsv"; }

ModelConfig model_config_for(const AppConfig& config, std::size_t vocab_size) {
  ModelConfig m = ModelConfig::preset(config.preset);
  m.vocab_size = vocab_size;
  if (config.dropout) m.dropout = *config.dropout;
  m.validate();
  return m;
}

nlohmann::json cmd_eda(const AppConfig& config, std::ostream* log) {
  require_file(config.corpus, "corpus");
  const auto lexicon_path = config.lexicon.empty() ? default_lexicon_path() : config.lexicon;
  require_file(lexicon_path, "lexicon");

  ValidationReport report;
  const Corpus corpus = load_corpus(config.corpus, config.column_policy, &report, log);
  std::vector<std::string> lex_warnings;
  const auto lexicon = load_lexicon(lexicon_path, &lex_warnings);
  if (log) {
    for (const auto& w : lex_warnings) *log << "lexicon " << w << '\n';
  }

  const auto& dir = config.output_dir;
  nlohmann::json files = nlohmann::json::array();
  nlohmann::json totals = nlohmann::json::object();
  for (auto name : kTargetNames) {
    const auto h = histogram_targets(corpus, name);
    write_report(dir, "histogram", name, to_json(h, name), to_csv(h));
    files.push_back("histogram_" + std::string(name));
    totals[std::string(name)] = h.total();
  }
  const auto tt = correlation_matrix(corpus, CorrelationRows::kTargets);
  write_report(dir, "correlation", "targets", to_json(tt), to_csv(tt));
  files.push_back("correlation_targets");
  const auto ft = correlation_matrix(corpus, CorrelationRows::kFeatures);
  write_report(dir, "correlation", "features", to_json(ft), to_csv(ft));
  files.push_back("correlation_features");

  const auto sentiment = sentiment_report(corpus, lexicon);
  write_text(dir / "sentiment_scatter.csv", sentiment.to_csv());
  files.push_back("sentiment_scatter");

  double fmin = 0.0;
  double fmax = 0.0;
  bool any = false;
  for (double v : ft.values) {
    if (std::isnan(v)) continue;
    fmin = any ? std::min(fmin, v) : v;
    fmax = any ? std::max(fmax, v) : v;
    any = true;
  }

  nlohmann::json summary{{"corpus", config.corpus.string()},
                         {"rows", corpus.size()},
                         {"validation", report.to_json()},
                         {"histogram_totals", totals},
                         {"feature_target_correlation_range",
                          any ? nlohmann::json{fmin, fmax} : nlohmann::json(nullptr)},
                         {"sentiment",
                          {{"lexicon", lexicon_path.string()},
                           {"mean_polarity", sentiment.mean_polarity},
                           {"mean_subjectivity", sentiment.mean_subjectivity}}},
                         {"files", files}};
  write_text(dir / "eda_summary.json", dump(summary));
  return summary;
}

nlohmann::json cmd_train(const AppConfig& config, std::ostream* log) {
  require_file(config.corpus, "corpus");
  require_file(config.vocab, "vocabulary");
  config.train.validate();
  const Vocabulary vocab = load_vocab(config.vocab);
  const ModelConfig model = model_config_for(config, vocab.size());
  const Corpus corpus = load_corpus(config.corpus, config.column_policy, nullptr, log);

  const TrainResult result = train_run(corpus, vocab, model, config.train, TrainHooks{log});
  const auto archive = weights_path(config);
  save_weights(result.weights, archive);
  nlohmann::json manifest = run_manifest(model, config.train, result);
  manifest["weights"] = {{"path", archive.string()}, {"fingerprint", archive_fingerprint(archive)}};
  write_text(config.output_dir / "train_manifest.json", dump(manifest));
  return manifest;
}

nlohmann::json cmd_sweep(const AppConfig& config, std::ostream* log) {
  require_file(config.corpus, "corpus");
  require_file(config.vocab, "vocabulary");
  config.train.validate();
  for (double lr : config.learning_rates) {
    TrainConfig probe = config.train;
    probe.learning_rate = lr;
    probe.validate();
  }
  const Vocabulary vocab = load_vocab(config.vocab);
  const ModelConfig model = model_config_for(config, vocab.size());
  const Corpus corpus = load_corpus(config.corpus, config.column_policy, nullptr, log);

  nlohmann::json manifests = nlohmann::json::array();
  const EvalGrid grid =
      lr_sweep(corpus, vocab, model, config.train, config.learning_rates, TrainHooks{log},
               [&](double lr, const TrainResult& r) {
                 TrainConfig c = config.train;
                 c.learning_rate = lr;
                 const std::string name = "sweep_manifest_lr=" + format_real(lr) + ".json";
                 write_text(config.output_dir / name, dump(run_manifest(model, c, r)));
                 manifests.push_back(name);
               });
  write_text(config.output_dir / "sweep_grid.json", dump(grid.to_json()));
  write_text(config.output_dir / "sweep_grid.csv", grid.to_csv());
  nlohmann::json out = grid.to_json();
  out["manifests"] = manifests;
  return out;
}

nlohmann::json cmd_evaluate(const AppConfig& config) {
  require_file(config.corpus, "corpus");
  require_file(config.vocab, "vocabulary");
  const auto archive = weights_path(config);
  require_file(archive, "weight archive");
  const Vocabulary vocab = load_vocab(config.vocab);
  const auto weights = load_weights(archive);
  const Corpus corpus = load_corpus(config.corpus, config.column_policy);
  const Evaluation ev = evaluate(corpus, vocab, weights, config.train);
  nlohmann::json out{{"mse", ev.mse}, {"validation_rows", ev.rows}, {"split", to_json(config.train.split)},
                     {"weights", archive_fingerprint(archive)}};
  if (ev.mse_raw) out["mse_raw"] = *ev.mse_raw;
  return out;
}

namespace {
ScoringService make_service(const AppConfig& config) {
  require_file(config.vocab, "vocabulary");
  const auto archive = weights_path(config);
  require_file(archive, "weight archive");
  Vocabulary vocab = load_vocab(config.vocab);
  auto weights = load_weights(archive);
  if (weights.config.vocab_size != vocab.size()) {
    throw Error(ErrorCode::kInvalidConfig, "archive vocab_size differs from the vocabulary");
  }
  const std::size_t max_len = std::min(config.train.max_len, weights.config.max_positions);
  return ScoringService(std::move(weights), std::move(vocab), max_len, archive_fingerprint(archive));
}
}  // namespace

nlohmann::json cmd_predict(const AppConfig& config, const std::string& title, const std::string& body) {
  return make_service(config).score(title, body);
}

void cmd_serve(const AppConfig& config, std::ostream* log) {
  const ScoringService service = make_service(config);
  HttpServer server(service);
  const int port = server.bind(config.host, config.port);
  if (port < 0) throw Error(ErrorCode::kIo, "cannot bind " + config.host + ":" + std::to_string(config.port));
  if (log) *log << "serving on http://" << config.host << ":" << port << '\n' << std::flush;
  server.listen();
}

}  // namespace qscore
