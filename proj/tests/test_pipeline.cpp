#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "stereosed/checkpoint.hpp"
#include "stereosed/config.hpp"
#include "stereosed/feature_io.hpp"
#include "stereosed/pipeline.hpp"
#include "test_util.hpp"

using namespace stereosed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small two-context synthetic dataset shared by the pipeline tests.
fs::path dataset() {
  static const fs::path root = [] {
    const auto dir = testutil::scratch_dir("pipeline_data");
    ScenePlanOptions opt;
    opt.duration = 6.0;
    synth_dataset(dir, "home", 4, opt, default_class_signatures(), 1);
    synth_dataset(dir, "street", 4, opt, default_class_signatures(), 2);
    return dir;
  }();
  return root;
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.data_root = dataset();
  c.contexts = {"home", "street"};
  c.features = "mel_2;tdoa";
  c.folds = 2;
  c.output = out;
  c.training.hidden = {8};
  c.training.max_epochs = 6;
  c.training.patience = 100;
  return c;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(SEDTOOL_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  RunConfig c;
  c.contexts = {"a"};
  c.features = "mel_1;pitch3_1";
  c.combinations = {"mel_1", "mel_2;tdoa"};
  c.seed = 42;
  c.aggregation = Aggregation::Macro;
  c.extraction.mic_spacing_m = 0.15;
  c.training.hidden = {16, 16, 16};
  c.training.adam.learning_rate = 2e-3;
  c.training.patience = 7;
  const auto text = to_json_text(c);
  const auto back = run_config_from_json_text(text);
  CHECK(to_json_text(back) == text);
  CHECK(back.training.hidden == std::vector<int>{16, 16, 16});
  CHECK(back.training.seed == 42);
  CHECK(back.extraction.mic_spacing_m == 0.15);
  CHECK(back.aggregation == Aggregation::Macro);

  CHECK_THROWS_AS(run_config_from_json_text("{not json"), UsageError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({"folds": 0})").validate(), UsageError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({"features": "mel_9"})").validate(), UsageError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({"no_such_key": 1})"), UsageError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({"training": {"patiense": 3}})"), UsageError);
  CHECK_THROWS_AS(run_config_from_json_text(R"({"seed": "one"})"), UsageError);
  const auto partial = run_config_from_json_text(R"({"seed": 9, "training": {"max_epochs": 3}})");
  CHECK(partial.seed == 9);
  CHECK(partial.training.max_epochs == 3);
  CHECK(partial.training.patience == 100);

  const auto fc = feature_config_from_json_text(to_json_text(c.extraction));
  CHECK(to_json_text(fc) == to_json_text(c.extraction));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testutil::scratch_dir("ckpt");
  std::mt19937_64 rng(3);
  Checkpoint ck;
  ck.combination = "mel_1;tdoa";
  ck.extraction = to_json_text(FeatureConfig{});
  ck.layout = layout_for(ck.combination);
  ck.class_order = {"a", "b"};
  ck.scaler = {Eigen::VectorXd::Random(45), Eigen::VectorXd::Random(45).cwiseAbs()};
  ck.params = NetworkParams::random({45, 6, 2}, rng);
  write_checkpoint(dir / "a.sedm", ck);
  auto back = read_checkpoint(dir / "a.sedm");
  CHECK(back.combination == ck.combination);
  CHECK(back.layout == ck.layout);
  CHECK(back.class_order == ck.class_order);
  CHECK(back.scaler.mean == ck.scaler.mean);
  CHECK(back.params.flat() == ck.params.flat());
  CHECK(back.params.layer_sizes() == ck.params.layer_sizes());
  CHECK(!back.train_state);

  TrainState st;
  st.params = ck.params;
  st.best_params = ck.params;
  st.adam.m = Eigen::VectorXd::Random(ck.params.size());
  st.adam.v = st.adam.m.cwiseAbs();
  st.adam.step = 17;
  st.epoch = 20;
  st.best_epoch = 12;
  st.best_er = 0.25;
  st.epochs_since_improvement = 8;
  std::ostringstream rs;
  rs << rng;
  st.rng_state = rs.str();
  ck.train_state = st;
  write_checkpoint(dir / "b.sedm", ck);
  back = read_checkpoint(dir / "b.sedm");
  REQUIRE(back.train_state);
  CHECK(back.train_state->adam.m == st.adam.m);
  CHECK(back.train_state->adam.step == 17);
  CHECK(back.train_state->best_er == 0.25);
  CHECK(back.train_state->rng_state == st.rng_state);

  auto bytes = slurp(dir / "b.sedm");
  std::ofstream(dir / "c.sedm", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(read_checkpoint(dir / "c.sedm"), DataError);
}

TEST_CASE("extract writes containers and is idempotent") {
  const auto out = testutil::scratch_dir("pipe_extract");
  auto cfg = small_config(out);
  cfg.features = "mel_2";
  cmd_extract(cfg);
  const auto f = out / "features" / "home" / "mel_2";
  const auto fm = read_feature_matrix(f / "home_001.sedf");
  CHECK(fm.width() == 80);
  CHECK(read_event_roll(f / "home_001.roll").frame_count() == fm.frame_count());
  CHECK(run_config_from_json_text(slurp(out / "config.json")).features == "mel_2");
  const auto first = slurp(f / "home_002.sedf");
  cmd_extract(cfg);
  CHECK(slurp(f / "home_002.sedf") == first);
}

TEST_CASE("extract reports every problem before writing") {
  const auto root = testutil::scratch_dir("pipe_bad_data");
  ScenePlanOptions opt;
  opt.duration = 3.0;
  synth_dataset(root, "home", 3, opt, default_class_signatures(), 4);
  fs::remove(root / "meta" / "home" / "home_001.ann");
  fs::remove(root / "meta" / "home" / "home_003.ann");
  const auto out = testutil::scratch_dir("pipe_bad_out");
  auto cfg = small_config(out);
  cfg.data_root = root;
  cfg.contexts = {"home"};
  try {
    cmd_extract(cfg);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("home_001.ann") != std::string::npos);
    CHECK(msg.find("home_003.ann") != std::string::npos);
  }
  CHECK(!fs::exists(out / "features" / "home" / "mel_2+tdoa" / "home_002.sedf"));

  // Mono audio with a stereo-only feature.
  const auto mono_root = testutil::scratch_dir("pipe_mono");
  fs::create_directories(mono_root / "audio" / "home");
  fs::create_directories(mono_root / "meta" / "home");
  std::mt19937_64 rng(1);
  write_wav(mono_root / "audio" / "home" / "m.wav", AudioClip{{testutil::white_noise(16000, rng)}, 16000}, 16);
  std::ofstream(mono_root / "meta" / "home" / "m.ann") << "0.1\t0.5\tx\n";
  cfg.data_root = mono_root;
  cfg.features = "tdoa";
  CHECK_THROWS_AS(cmd_extract(cfg), DataError);
  CHECK(!fs::exists(out / "features" / "home" / "tdoa" / "m.sedf"));
  cfg.features = "mel_1";
  CHECK_NOTHROW(cmd_extract(cfg));
}

TEST_CASE("train, evaluate and detect") {
  const auto out = testutil::scratch_dir("pipe_train");
  const auto cfg = small_config(out);
  cmd_extract(cfg);
  const auto results = cmd_train(cfg);
  CHECK(results.size() == 4);
  const auto models = out / "models" / "home" / "mel_2+tdoa";
  for (int k : {1, 2}) {
    const auto stem = "fold" + std::to_string(k);
    CHECK(fs::exists(models / (stem + ".sedm")));
    CHECK(fs::exists(models / (stem + "_summary.json")));
    const auto log = slurp(models / (stem + "_log.csv"));
    CHECK(std::count(log.begin(), log.end(), '\n') == 7);
  }
  const auto row = cmd_evaluate(cfg);
  REQUIRE(row.contexts.size() == 2);
  CHECK(row.contexts[0].context == "home");
  CHECK(row.average_error_rate ==
        doctest::Approx((row.contexts[0].report.error_rate + row.contexts[1].report.error_rate) / 2));
  CHECK(fs::exists(out / "reports" / "mel_2+tdoa.txt"));
  // Same seed, same logs.
  const auto out2 = testutil::scratch_dir("pipe_train2");
  auto cfg2 = small_config(out2);
  cmd_extract(cfg2);
  cmd_train(cfg2);
  CHECK(slurp(out2 / "models" / "home" / "mel_2+tdoa" / "fold1_log.csv") == slurp(models / "fold1_log.csv"));
  CHECK(slurp(out2 / "models" / "street" / "mel_2+tdoa" / "fold2.sedm") ==
        slurp(out / "models" / "street" / "mel_2+tdoa" / "fold2.sedm"));

  const auto events = cmd_detect(models / "fold1.sedm", dataset() / "audio" / "home" / "home_001.wav");
  for (const auto& e : events.events) CHECK(e.onset < e.offset);

  // A checkpoint from another combination is rejected.
  auto other = cfg;
  other.features = "mel_1";
  cmd_extract(other);
  cmd_train(other);
  fs::copy_file(out / "models" / "home" / "mel_1" / "fold1.sedm", models / "fold1.sedm",
                fs::copy_options::overwrite_existing);
  CHECK_THROWS_AS(cmd_evaluate(cfg), DataError);
}

TEST_CASE("a zero-weight network scores ER 1") {
  const auto out = testutil::scratch_dir("pipe_zero");
  auto cfg = small_config(out);
  cfg.contexts = {"home"};
  cmd_extract(cfg);
  cmd_train(cfg);
  for (int k : {1, 2}) {
    const auto path = out / "models" / "home" / "mel_2+tdoa" / ("fold" + std::to_string(k) + ".sedm");
    auto ck = read_checkpoint(path);
    ck.params.flat().setZero();
    write_checkpoint(path, ck);
  }
  const auto row = cmd_evaluate(cfg);
  CHECK(row.contexts[0].report.totals.reference > 0);
  CHECK(row.contexts[0].report.error_rate == 1.0);
}

TEST_CASE("ablation rows") {
  const auto out = testutil::scratch_dir("pipe_ablate");
  auto cfg = small_config(out);
  cfg.contexts = {"home"};
  cfg.combinations = {"mel_2;tdoa"};
  const auto rows = cmd_ablate(cfg);
  REQUIRE(rows.size() == 1);
  const auto single = slurp(out / "reports" / "ablation.csv");
  const auto out_eval = testutil::scratch_dir("pipe_ablate_eval");
  auto ecfg = cfg;
  ecfg.output = out_eval;
  cmd_extract(ecfg);
  cmd_train(ecfg);
  const auto row = cmd_evaluate(ecfg);
  CHECK(format_csv({row}) == single);

  cfg.combinations = {};
  cfg.training.max_epochs = 1;
  const auto all = cmd_ablate(cfg);
  CHECK(all.size() == 14);
  for (const auto& r : all) CHECK(r.error.empty());
  const auto table = slurp(out / "reports" / "ablation.txt");
  const auto again = cmd_ablate(cfg);
  CHECK(slurp(out / "reports" / "ablation.txt") == table);
}

TEST_CASE("ablation keeps going after a failing row") {
  const auto out = testutil::scratch_dir("pipe_ablate_fail");
  auto cfg = small_config(out);
  cfg.contexts = {"home"};
  cfg.training.max_epochs = 1;
  cfg.combinations = {"mel_2", "mel_1"};
  cfg.folds = 5;  // more folds than recordings
  const auto rows = cmd_ablate(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(!rows[0].error.empty());
  CHECK(!rows[1].error.empty());
  CHECK(slurp(out / "reports" / "ablation.csv").find("recordings") != std::string::npos);
}

TEST_CASE("rerunning from the written config reproduces outputs") {
  const auto out = testutil::scratch_dir("pipe_rerun");
  auto cfg = small_config(out);
  cfg.contexts = {"street"};
  cmd_extract(cfg);
  cmd_train(cfg);
  cmd_evaluate(cfg);
  const auto report = slurp(out / "reports" / "mel_2+tdoa.csv");
  const auto model = slurp(out / "models" / "street" / "mel_2+tdoa" / "fold1.sedm");
  const auto reloaded = load_run_config(out / "config.json");
  fs::remove_all(out / "models");
  fs::remove_all(out / "reports");
  cmd_train(reloaded);
  cmd_evaluate(reloaded);
  CHECK(slurp(out / "reports" / "mel_2+tdoa.csv") == report);
  CHECK(slurp(out / "models" / "street" / "mel_2+tdoa" / "fold1.sedm") == model);
}

TEST_CASE("command-line exit codes") {
  const auto out = testutil::scratch_dir("cli");
  const std::string common = " --data-root " + dataset().string() + " --context home --out " + out.string() +
                             " --folds 2 --max-epochs 2";
  CHECK(run_tool("") == 1);
  CHECK(run_tool("train --no-such-flag") == 1);
  CHECK(run_tool("extract --features mel_7" + common) == 1);
  CHECK(run_tool("train --features mel_1" + common) == 2);  // nothing extracted yet
  CHECK(run_tool("extract --features mel_1" + common) == 0);
  CHECK(run_tool("train --features mel_1" + common) == 0);
  CHECK(run_tool("evaluate --features mel_1" + common) == 0);
  CHECK(run_tool("detect --checkpoint " + (out / "models/home/mel_1/fold1.sedm").string() + " " +
                 (dataset() / "audio/home/home_002.wav").string()) == 0);
  CHECK(fs::exists(out / "config.json"));
  std::ofstream(out / "diverge.json") << R"({"optimizer": {"learning_rate": 1e308, "grad_clip": 0}})";
  CHECK(run_tool("train --features mel_1 --config " + (out / "diverge.json").string() + common) == 3);
  const auto synth = testutil::scratch_dir("cli_synth");
  CHECK(run_tool("synth --data-root " + synth.string() + " --context x --recordings 2 --duration 3") == 0);
  CHECK(fs::exists(synth / "audio" / "x" / "x_002.wav"));
  CHECK(run_tool("extract --csv " + (out / "csv").string() + " --features mel_1" + common) == 0);
  CHECK(fs::exists(out / "csv" / "home" / "home_001.csv"));
}
