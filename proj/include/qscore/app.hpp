#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscore/corpus.hpp"
#include "qscore/model.hpp"
#include "qscore/train.hpp"

namespace qscore {

/// Everything a CLI invocation needs. Precedence when building one:
/// command-line flags > JSON config file > these defaults.
struct AppConfig {
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path lexicon;
  std::filesystem::path weights;
  std::filesystem::path output_dir = "qscore_out";
  std::string preset = "tiny";
  std::optional<double> dropout;
  ColumnPolicy column_policy = ColumnPolicy::kStrict;
  TrainConfig train;
  std::vector<double> learning_rates = kDefaultLearningRates;
  std::string host = "127.0.0.1";
  int port = 8080;

  /// Overlays keys present in `j` onto `defaults`.
  static AppConfig from_json(const nlohmann::json& j, AppConfig defaults);
  static AppConfig from_json(const nlohmann::json& j) { return from_json(j, AppConfig()); }
  nlohmann::json to_json() const;
};

AppConfig load_app_config(const std::filesystem::path& path, AppConfig defaults = {});

/// Default lexicon shipped with the sources.
std::filesystem::path default_lexicon_path();

/// Preset shape with vocab size taken from the vocabulary and any dropout
/// override applied.
ModelConfig model_config_for(const AppConfig& config, std::size_t vocab_size);

/// Writes histograms, correlation matrices, the sentiment scatter and
/// eda_summary.json under output_dir. Returns the summary.
nlohmann::json cmd_eda(const AppConfig& config, std::ostream* log = nullptr);

/// Trains, writes the weight archive (config.weights, or
/// output_dir/model.qsw) and output_dir/train_manifest.json.
nlohmann::json cmd_train(const AppConfig& config, std::ostream* log = nullptr);

/// Writes sweep_grid.json, sweep_grid.csv and one manifest per learning rate.
nlohmann::json cmd_sweep(const AppConfig& config, std::ostream* log = nullptr);

/// Loads the archive and reports MSE on the configured validation split.
nlohmann::json cmd_evaluate(const AppConfig& config);

/// {target name: score} for one question.
nlohmann::json cmd_predict(const AppConfig& config, const std::string& title, const std::string& body);

/// Blocks serving HTTP until the process is stopped.
void cmd_serve(const AppConfig& config, std::ostream* log = nullptr);

}  // namespace qscore
