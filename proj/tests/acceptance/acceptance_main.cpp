// Acceptance suite: one line per criterion, nonzero exit on any failure.
//
//   [PASS|FAIL|SKIP] <n> <name>: <detail>
//
// Criterion 6 reads the real corpus from $QSCORE_CORPUS or data/train.csv and
// is skipped when neither exists.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "qscore/app.hpp"
#include "qscore/archive.hpp"
#include "qscore/error.hpp"
#include "qscore/synthetic.hpp"
#include "qscore/textfeat.hpp"
#include "qscore/train.hpp"
#include "support/archive_tools.hpp"
#include "support/oracle.hpp"

using namespace qscore;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::kPass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::kFail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Status::kPass : Status::kFail, std::move(d)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Tiny preset over a small vocabulary, as produced by a small vocab file.
ModelConfig tiny(std::size_t vocab_size) {
  auto c = ModelConfig::preset("tiny");
  c.vocab_size = vocab_size;
  return c;
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = tiny(16);
  c.dropout = 0.0;
  const auto w = oracle::random_weights(c, 1);
  Rng rng(2);
  const std::vector<TokenizedInput> inputs = {oracle::random_input(rng, c.vocab_size, 7, 2),
                                              oracle::random_input(rng, c.vocab_size, 5, 1)};
  std::vector<std::vector<double>> targets(inputs.size(), std::vector<double>(c.n_outputs));
  for (auto& t : targets) {
    for (auto& v : t) v = rng.uniform();
  }
  const auto r = oracle::grad_check(w, inputs, targets, 1e-4, 1e-5);
  const double secs = seconds_since(t0);
  const bool all = r.checked == parameter_count(c);
  return check(all && r.max_rel_error < 1e-3 && secs < 300.0,
               std::to_string(r.checked) + "/" + std::to_string(parameter_count(c)) +
                   " parameters, max rel error " + fmt("%.3g", r.max_rel_error) + " at " + r.worst_tensor + "[" +
                   std::to_string(r.worst_index) + "], " + fmt("%.1f", secs) + " s");
}

Outcome forward_oracle() {
  const auto c = tiny(100);
  const auto wd = oracle::random_weights(c, 3);
  const auto wf = cast_weights<float>(wd);
  // The oracle runs on exactly the float weights the library sees.
  const auto wfd = cast_weights<double>(wf);
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto in = oracle::random_input(rng, c.vocab_size, 3 + rng.index(30), rng.index(8));
    const auto got = forward<float>(wf, in);
    const auto want = oracle::naive_forward(wfd, in);
    for (std::size_t k = 0; k < want.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
  }
  return check(worst <= 1e-5, "20 inputs, max |diff| " + fmt("%.3g", worst));
}

std::vector<double> rank_oracle(const std::vector<double>& xs) {
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), xs[i]) - sorted.begin();
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), xs[i]) - sorted.begin();
    r[i] = static_cast<double>(lo + 1 + hi) / 2.0;
  }
  const double mn = *std::min_element(r.begin(), r.end());
  const double mx = *std::max_element(r.begin(), r.end());
  for (auto& v : r) v = mx == mn ? 0.5 : (v - mn) / (mx - mn);
  return r;
}

Outcome rank_transform() {
  Rng rng(5);
  std::size_t mismatches = 0, monotone_failures = 0, values = 0;
  for (int col = 0; col < 100; ++col) {
    const std::size_t n = 2 + rng.index(300);
    const std::size_t levels = 2 + rng.index(12);
    std::vector<double> xs(n);
    for (auto& x : xs) x = static_cast<double>(rng.index(levels)) / static_cast<double>(levels - 1);
    const auto t = ColumnTransform::fit(xs);
    const auto want = rank_oracle(xs);
    std::vector<double> ge(n), ga(n);
    for (std::size_t i = 0; i < n; ++i) {
      ge[i] = std::exp(xs[i]);
      ga[i] = 3.0 * xs[i] + 1.0;
    }
    const auto te = ColumnTransform::fit(ge);
    const auto ta = ColumnTransform::fit(ga);
    for (std::size_t i = 0; i < n; ++i) {
      const double got = t.apply(xs[i]);
      mismatches += got != want[i];
      monotone_failures += te.apply(ge[i]) != got || ta.apply(ga[i]) != got;
      ++values;
    }
  }
  return check(mismatches == 0 && monotone_failures == 0,
               std::to_string(values) + " values in 100 columns, " + std::to_string(mismatches) +
                   " oracle mismatches, " + std::to_string(monotone_failures) + " monotone-invariance failures");
}

Outcome split_integrity() {
  Rng rng(6);
  std::size_t straddles = 0, coverage_errors = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 20 + rng.index(300);
    const std::size_t n_groups = 5 + rng.index(60);
    const std::size_t folds = 2 + rng.index(4);
    std::vector<std::string> groups(rows);
    for (auto& g : groups) g = "g" + std::to_string(rng.index(n_groups));
    if (std::set<std::string>(groups.begin(), groups.end()).size() < folds) continue;
    const auto plan = group_kfold(groups, folds, rng.next_u64());
    std::vector<std::size_t> seen_in_validation(rows, 0);
    for (const auto& f : plan) {
      std::set<std::string> train_groups;
      for (std::size_t i : f.train) train_groups.insert(groups[i]);
      for (std::size_t i : f.validation) {
        straddles += train_groups.count(groups[i]);
        ++seen_in_validation[i];
      }
      coverage_errors += f.train.size() + f.validation.size() != rows;
    }
    for (std::size_t v : seen_in_validation) coverage_errors += v != 1;
  }
  const auto holdout = holdout_split(6079, 0.2, 42);
  const std::size_t val = holdout[0].validation.size();
  return check(straddles == 0 && coverage_errors == 0 && val == 1216 && holdout[0].train.size() == 4863,
               "200 plans, " + std::to_string(straddles) + " straddling rows, " + std::to_string(coverage_errors) +
                   " coverage errors; holdout 6079 -> " + std::to_string(val) + " validation rows");
}

Outcome learning_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = make_synthetic(SyntheticSpec{});
  const auto model = tiny(data.vocab.size());
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 3;
  cfg.batch_size = 6;
  cfg.max_len = 64;
  const auto r = train_run(data.corpus, data.vocab, model, cfg);
  const double secs = seconds_since(t0);
  const double final_mse = r.val_mse.back();
  std::string traj;
  for (double v : r.val_mse) traj += (traj.empty() ? "" : ", ") + fmt("%.4f", v);
  return check(final_mse < 0.02 && secs < 900.0,
               std::to_string(data.corpus.size()) + " rows, val MSE per epoch [" + traj + "], baseline " +
                   fmt("%.4f", r.folds[0].baseline_mse) + ", " + fmt("%.1f", secs) + " s");
}

Outcome real_corpus() {
  fs::path path;
  if (const char* env = std::getenv("QSCORE_CORPUS")) path = env;
  if (path.empty()) path = fs::path(QSCORE_SOURCE_DIR) / "data" / "train.csv";
  if (!fs::exists(path)) return {Status::kSkip, "no corpus at " + path.string() + " (set QSCORE_CORPUS)"};
  const auto corpus = load_corpus(path, ColumnPolicy::kStrict);
  std::size_t out_of_range = 0;
  for (const auto& ex : corpus.rows) {
    for (double v : ex.targets.values) out_of_range += v < 0.0 || v > 1.0;
  }
  const auto h = histogram_targets(corpus, "asker_intent_understanding");
  const double top3 = static_cast<double>(h.counts[7] + h.counts[8] + h.counts[9]) / static_cast<double>(h.total());
  const auto m = correlation_matrix(corpus, CorrelationRows::kFeatures);
  double lo = 0.0, hi = 0.0;
  for (double v : m.values) {
    if (std::isnan(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return check(corpus.size() == 6079 && out_of_range == 0 && top3 > 0.6 && lo >= -0.35 && hi <= 0.35,
               std::to_string(corpus.size()) + " rows, " + std::to_string(out_of_range) +
                   " targets outside [0,1], asker_intent top-3-bin mass " + fmt("%.3f", top3) +
                   ", feature correlations in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]");
}

Outcome loss_identities() {
  Matrix p(4, 20, 0.5), t(4, 20, 0.5);
  const double bce = bce_loss(p, t);
  Rng rng(7);
  Matrix x(5, 20);
  for (auto& v : x.data) v = rng.uniform();
  const double self = mse(x, x);

  const auto c = tiny(60);
  const auto w = cast_weights<float>(oracle::random_weights(c, 8));
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto base = oracle::random_input(rng, c.vocab_size, 3 + rng.index(20), 0);
    auto padded = base;
    for (std::size_t k = 1 + rng.index(40); k > 0; --k) {
      padded.token_ids.push_back(0);
      padded.segment_ids.push_back(0);
      padded.attention_mask.push_back(0);
    }
    const auto a = forward<float>(w, base);
    const auto b = forward<float>(w, padded);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, static_cast<double>(std::abs(a[k] - b[k])));
  }
  return check(std::abs(bce - std::log(2.0)) <= 1e-9 && self == 0.0 && worst <= 1e-6,
               "bce(0.5,0.5) - ln2 = " + fmt("%.3g", bce - std::log(2.0)) + ", mse(x,x) = " + fmt("%g", self) +
                   ", padding max |diff| " + fmt("%.3g", worst));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a qscore::Error");
}

Outcome archive_round_trip() {
  const auto c = ModelConfig::preset("tiny");
  const auto w = init_weights(c, 9);
  const auto dir = fs::temp_directory_path() / "qscore_acceptance_archive";
  fs::remove_all(dir);
  save_weights(w, dir / "m.qsw");
  const auto back = load_weights(dir / "m.qsw");
  bool exact = back.config == w.config;
  std::vector<const Tensor<float>*> a;
  w.visit([&](const std::string&, const Tensor<float>& t) { a.push_back(&t); });
  std::size_t i = 0;
  back.visit([&](const std::string&, const Tensor<float>& t) {
    exact = exact && t.shape == a[i]->shape &&
            std::memcmp(t.data.data(), a[i]->data.data(), t.size() * sizeof(float)) == 0;
    ++i;
  });

  const std::string bytes = serialize_weights(w);
  std::string corrupted = bytes;
  corrupted[bytes.size() / 2] ^= 0x10;
  const auto corrupt_code = code_of([&] { deserialize_weights(corrupted); });
  const auto truncated_code = code_of([&] { deserialize_weights(bytes.substr(0, bytes.size() - 1000)); });

  auto small = c;
  small.hidden = 32;
  small.ff_size = 64;
  small.vocab_size = 40;
  auto big = small;
  big.hidden = 64;
  big.ff_size = 128;
  // Header declares hidden 64 while the head kernel is stored as 32 x 20.
  auto parts = oracle::split_archive(serialize_weights(init_weights(big, 1)));
  for (auto& t : parts.header["tensors"]) {
    if (t["name"] == "head.kernel") {
      t["shape"] = {32, 20};
      t["length"] = 32 * 20 * 4;
    }
  }
  std::string shape_msg;
  ErrorCode shape_code = ErrorCode::kIo;
  try {
    deserialize_weights(oracle::assemble(parts.header, parts.payload));
  } catch (const Error& e) {
    shape_code = e.code();
    shape_msg = e.what();
  }
  fs::remove_all(dir);
  return check(exact && corrupt_code == ErrorCode::kCorruptArchive && truncated_code == ErrorCode::kCorruptArchive &&
                   shape_code == ErrorCode::kShapeMismatch && shape_msg.find("head.kernel") != std::string::npos,
               std::string(exact ? "bit-exact" : "NOT bit-exact") + " round trip of " +
                   std::to_string(w.parameter_count()) + " parameters; flipped byte -> " +
                   std::string(to_string(corrupt_code)) + ", truncated -> " + std::string(to_string(truncated_code)) +
                   ", shape-mismatched -> " + shape_msg);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "qscore_acceptance_sweep";
  fs::remove_all(root);
  const auto data = make_synthetic({200, 8, 8, 13});
  fs::create_directories(root);
  std::ofstream(root / "corpus.csv", std::ios::binary) << corpus_to_csv(data.corpus);
  {
    std::ofstream v(root / "vocab.txt", std::ios::binary);
    for (const auto& t : data.vocab_tokens) v << t << '\n';
  }
  AppConfig cfg;
  cfg.corpus = root / "corpus.csv";
  cfg.vocab = root / "vocab.txt";
  cfg.learning_rates = {5e-4, 1e-3};
  cfg.train.epochs = 2;
  cfg.train.max_len = 32;
  cfg.train.seed = 11;

  std::vector<fs::path> dirs = {root / "run1", root / "run2"};
  for (const auto& d : dirs) {
    cfg.output_dir = d;
    cmd_sweep(cfg);
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const auto name = entry.path().filename();
    std::string a = read_file(dirs[0] / name), b = read_file(dirs[1] / name);
    if (name.string().starts_with("sweep_manifest")) {
      auto ja = nlohmann::json::parse(a), jb = nlohmann::json::parse(b);
      ja.erase("timing");
      jb.erase("timing");
      a = ja.dump();
      b = jb.dump();
    }
    ++compared;
    differing += a != b;
  }
  fs::remove_all(root);
  return check(compared == 4 && differing == 0,
               std::to_string(compared) + " output files compared across two sweeps, " + std::to_string(differing) +
                   " differ");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_check", gradient_check},   {"forward_oracle", forward_oracle},
      {"rank_transform", rank_transform},   {"split_integrity", split_integrity},
      {"learning_check", learning_check},   {"real_corpus_statistics", real_corpus},
      {"loss_identities", loss_identities}, {"archive_round_trip", archive_round_trip},
      {"sweep_determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.status == Status::kPass ? "PASS" : o.status == Status::kFail ? "FAIL" : "SKIP";
    failures += o.status == Status::kFail;
    std::cout << "[" << tag << "] " << i + 1 << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
