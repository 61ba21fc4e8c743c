#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "qscore/app.hpp"
#include "qscore/archive.hpp"
#include "qscore/error.hpp"
#include "qscore/service.hpp"
#include "qscore/synthetic.hpp"

using namespace qscore;
namespace fs = std::filesystem;

namespace {

ScoringService tiny_service(std::uint64_t seed = 1) {
  const auto data = make_synthetic({20, 4, 4, 3});
  auto c = ModelConfig::preset("tiny");
  c.vocab_size = data.vocab.size();
  c.max_positions = 32;
  return ScoringService(init_weights(c, seed), data.vocab, 32, "feedface00000000");
}

nlohmann::json body_of(const ScoringService::Response& r) { return nlohmann::json::parse(r.body); }

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

// A small synthetic corpus and vocabulary on disk plus a config pointing at them.
struct Fixture {
  fs::path dir;
  AppConfig config;

  explicit Fixture(const std::string& name, std::size_t rows = 60) {
    dir = fs::temp_directory_path() / ("qscore_service_" + name);
    fs::remove_all(dir);
    const auto data = make_synthetic({rows, 4, 5, 9});
    write_file(dir / "corpus.csv", corpus_to_csv(data.corpus));
    std::string vocab;
    for (const auto& t : data.vocab_tokens) vocab += t + "\n";
    write_file(dir / "vocab.txt", vocab);
    config.corpus = dir / "corpus.csv";
    config.vocab = dir / "vocab.txt";
    config.output_dir = dir / "out";
    config.train.epochs = 2;
    config.train.max_len = 32;
    config.train.learning_rate = 1e-3;
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST(ServiceTest, NoModelAnswers503) {
  const ScoringService s;
  EXPECT_FALSE(s.loaded());
  EXPECT_EQ(s.handle_score(R"({"title":"a","body":"b"})").status, 503);
  const auto h = s.handle_health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(body_of(h).at("model_loaded"), false);
}

TEST(ServiceTest, RequestValidation) {
  const auto s = tiny_service();
  EXPECT_EQ(s.handle_score("{not json").status, 400);
  EXPECT_EQ(s.handle_score("[1,2]").status, 400);
  EXPECT_EQ(s.handle_score(R"({"title":"a"})").status, 422);
  EXPECT_EQ(s.handle_score(R"({"body":"a"})").status, 422);
  EXPECT_EQ(s.handle_score(R"({"title":"a","body":3})").status, 422);
  EXPECT_TRUE(body_of(s.handle_score(R"({"title":"a"})")).contains("error"));
}

TEST(ServiceTest, ScoresAreDeterministicAndBounded) {
  const auto s = tiny_service();
  const auto r = s.handle_score(R"({"title":"why kw1 ?","body":"the kw2 thing"})");
  ASSERT_EQ(r.status, 200);
  const auto j = body_of(r);
  EXPECT_EQ(j.at("model"), "feedface00000000");
  const auto& scores = j.at("scores");
  ASSERT_EQ(scores.size(), kNumTargets);
  for (auto name : kTargetNames) {
    const double v = scores.at(std::string(name)).get<double>();
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(s.handle_score(R"({"title":"why kw1 ?","body":"the kw2 thing"})").body, r.body);
  EXPECT_EQ(body_of(s.handle_health()).at("model_loaded"), true);
}

TEST(ServiceTest, HttpRoundTrip) {
  const auto s = tiny_service();
  HttpServer server(s);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto ok = client.Post("/v1/score", R"({"title":"t","body":"b"})", "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  EXPECT_EQ(ok->body, s.handle_score(R"({"title":"t","body":"b"})").body);
  const auto bad = client.Post("/v1/score", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  server.stop();
  t.join();
}

TEST(AppConfigTest, JsonOverlaysDefaults) {
  AppConfig defaults;
  defaults.preset = "base";
  defaults.train.epochs = 9;
  const auto c = AppConfig::from_json({{"train", {{"learning_rate", 5e-5}}}, {"serve", {{"port", 9000}}}}, defaults);
  EXPECT_EQ(c.preset, "base");
  EXPECT_EQ(c.train.epochs, 9u);
  EXPECT_EQ(c.train.learning_rate, 5e-5);
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.host, "127.0.0.1");
  const auto back = AppConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  try {
    AppConfig::from_json({{"column_policy", "loose"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(AppConfigTest, LoadFromFile) {
  const auto path = fs::temp_directory_path() / "qscore_app_config.json";
  write_file(path, R"({"preset":"tiny","dropout":0.0,"column_policy":"lenient","learning_rates":[1e-4]})");
  const auto c = load_app_config(path);
  EXPECT_EQ(c.dropout, 0.0);
  EXPECT_EQ(c.column_policy, ColumnPolicy::kLenient);
  EXPECT_EQ(c.learning_rates, std::vector<double>{1e-4});
  EXPECT_EQ(model_config_for(c, 77).vocab_size, 77u);
  EXPECT_EQ(model_config_for(c, 77).dropout, 0.0);
  write_file(path, "{oops");
  try {
    load_app_config(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
  fs::remove(path);
}

TEST(CommandTest, TrainEvaluatePredict) {
  Fixture fx("train");
  const auto manifest = cmd_train(fx.config);
  const auto archive = fx.config.output_dir / "model.qsw";
  ASSERT_TRUE(fs::exists(archive));
  ASSERT_TRUE(fs::exists(fx.config.output_dir / "train_manifest.json"));
  EXPECT_EQ(manifest.at("weights").at("fingerprint"), archive_fingerprint(archive));
  EXPECT_EQ(manifest.at("val_mse").size(), 2u);

  const auto ev = cmd_evaluate(fx.config);
  EXPECT_NEAR(ev.at("mse").get<double>(), manifest.at("val_mse").back().get<double>(), 1e-12);
  EXPECT_EQ(ev.at("validation_rows"), 12);

  const auto p = cmd_predict(fx.config, "kw0 question", "body kw1");
  EXPECT_EQ(p.size(), kNumTargets);
  EXPECT_EQ(cmd_predict(fx.config, "kw0 question", "body kw1"), p);
}

TEST(CommandTest, SweepWritesGridAndManifests) {
  Fixture fx("sweep", 30);
  fx.config.learning_rates = {1e-3};
  fx.config.train.epochs = 1;
  const auto out = cmd_sweep(fx.config);
  EXPECT_EQ(out.at("mse").size(), 1u);
  EXPECT_TRUE(fs::exists(fx.config.output_dir / "sweep_grid.csv"));
  EXPECT_TRUE(fs::exists(fx.config.output_dir / "sweep_grid.json"));
  EXPECT_TRUE(fs::exists(fx.config.output_dir / out.at("manifests")[0].get<std::string>()));

  fx.config.learning_rates = {1e-3, 0.5};
  try {
    cmd_sweep(fx.config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig);
  }
}

TEST(CommandTest, EdaWritesReports) {
  Fixture fx("eda", 40);
  const auto summary = cmd_eda(fx.config);
  EXPECT_EQ(summary.at("rows"), 40);
  EXPECT_EQ(summary.at("histogram_totals").at("fact_seeking"), 40);
  for (const char* f : {"eda_summary.json", "histogram_fact_seeking.csv", "correlation_targets.json",
                        "correlation_features.csv", "sentiment_scatter.csv"}) {
    EXPECT_TRUE(fs::exists(fx.config.output_dir / f)) << f;
  }
}

TEST(CommandTest, EdaOnOneRowIsUndefined) {
  Fixture fx("eda1", 2);
  auto data = make_synthetic({2, 4, 5, 9});
  data.corpus.rows.resize(1);
  write_file(fx.config.corpus, corpus_to_csv(data.corpus));
  const auto summary = cmd_eda(fx.config);
  EXPECT_EQ(summary.at("rows"), 1);
  EXPECT_TRUE(summary.at("feature_target_correlation_range").is_null());
}

TEST(CommandTest, MissingInputsAreIoErrors) {
  AppConfig c;
  c.corpus = "/nonexistent/corpus.csv";
  c.vocab = "/nonexistent/vocab.txt";
  for (auto fn : std::vector<std::function<void()>>{[&] { cmd_train(c); }, [&] { cmd_eda(c); },
                                                     [&] { cmd_evaluate(c); }, [&] { cmd_predict(c, "a", "b"); }}) {
    try {
      fn();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kIo);
    }
  }
}
