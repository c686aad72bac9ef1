// sedtool: extract / train / evaluate / detect / ablate / synth.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 training failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "stereosed/error.hpp"
#include "stereosed/feature_io.hpp"
#include "stereosed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stereosed;

namespace {

struct Overrides {
  std::string config;
  std::vector<std::string> contexts;
  std::string features;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::string out;
  std::string data_root;
  std::optional<double> threshold;
  std::optional<int> max_epochs;
  std::optional<int> patience;
  std::vector<std::string> combinations;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--context", o.contexts, "Context name (repeatable); replaces the configured list");
  cmd->add_option("--features", o.features, "Feature combination, e.g. \"mel_2;tdoa;pitch_2\"");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--folds", o.folds, "Cross-validation fold count");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--data-root", o.data_root, "Dataset root holding audio/ and meta/");
  cmd->add_option("--threshold", o.threshold, "Posterior threshold");
  cmd->add_option("--max-epochs", o.max_epochs, "Training epoch limit");
  cmd->add_option("--patience", o.patience, "Early-stopping patience in epochs");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.contexts.empty()) c.contexts = o.contexts;
  if (!o.features.empty()) c.features = o.features;
  if (o.seed) c.seed = *o.seed;
  if (o.folds) c.folds = *o.folds;
  if (!o.out.empty()) c.output = o.out;
  if (!o.data_root.empty()) c.data_root = o.data_root;
  if (o.threshold) c.training.threshold = *o.threshold;
  if (o.max_epochs) c.training.max_epochs = *o.max_epochs;
  if (o.patience) c.training.patience = *o.patience;
  if (!o.combinations.empty()) c.combinations = o.combinations;
  c.training.seed = c.seed;
  c.validate();
  return c;
}

void print_event_list(std::ostream& os, const EventList& events) {
  os << std::fixed << std::setprecision(3);
  for (const auto& e : events.events) os << e.onset << '\t' << e.offset << '\t' << e.label << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Polyphonic sound event detection with stereo spatial features"};
  app.require_subcommand(1);
  Overrides o;

  auto* extract = app.add_subcommand("extract", "Extract features and target rolls");
  add_common(extract, o);
  std::string csv_dir;
  extract->add_option("--csv", csv_dir, "Also export every feature matrix as CSV into this directory");

  auto* train = app.add_subcommand("train", "Train one network per fold");
  add_common(train, o);

  auto* evaluate = app.add_subcommand("evaluate", "Score fold checkpoints on their test recordings");
  add_common(evaluate, o);

  auto* detect_cmd = app.add_subcommand("detect", "Run a checkpoint on one audio file");
  std::string checkpoint, audio, events_out;
  double detect_threshold = 0.5;
  detect_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint (.sedm)")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("audio", audio, "WAV file")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--threshold", detect_threshold, "Posterior threshold");
  detect_cmd->add_option("--output", events_out, "Write the event list here instead of stdout");

  auto* ablate = app.add_subcommand("ablate", "extract + train + evaluate over feature combinations");
  add_common(ablate, o);
  ablate->add_option("--combination", o.combinations, "Combination to run (repeatable); default is all 14");

  auto* synth = app.add_subcommand("synth", "Generate synthetic stereo scenes");
  std::string synth_root = "data", synth_context = "synthetic", plan_path, synth_wav, synth_ann;
  int recordings = 8;
  double duration = 30.0;
  int sample_rate = 16000;
  std::uint64_t synth_seed = 1;
  synth->add_option("--data-root", synth_root, "Dataset root to write into");
  synth->add_option("--context", synth_context, "Context name");
  synth->add_option("--recordings", recordings, "Number of random scenes");
  synth->add_option("--duration", duration, "Scene length in seconds");
  synth->add_option("--sample-rate", sample_rate, "Sample rate in Hz");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--plan", plan_path, "Render one explicit scene plan instead")->check(CLI::ExistingFile);
  synth->add_option("--wav", synth_wav, "Output WAV for --plan");
  synth->add_option("--ann", synth_ann, "Output annotation for --plan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*extract) {
    const auto config = resolve(o);
    cmd_extract(config, &std::cerr);
    if (!csv_dir.empty()) {
      for (const auto& context : config.contexts) {
        for (const auto& rec : load_extracted(config, context)) {
          const auto path = fs::path(csv_dir) / context / (rec.id + ".csv");
          fs::create_directories(path.parent_path());
          std::ofstream os(path);
          write_feature_csv(os, rec.features);
          if (!os) throw DataError("cannot write " + path.string());
        }
      }
    }
  } else if (*train) {
    const auto results = cmd_train(resolve(o), &std::cerr);
    for (const auto& r : results)
      std::cout << r.context << "\tfold" << r.fold_index << "\tepochs " << r.epochs_run << "\tbest "
                << r.best_epoch << "\tvalidation ER " << r.best_validation_er << "\ttest ER "
                << r.test_counts.error_rate() << '\n';
  } else if (*evaluate) {
    const auto row = cmd_evaluate(resolve(o), &std::cerr);
    std::cout << format_table({row});
  } else if (*detect_cmd) {
    const auto events = cmd_detect(checkpoint, audio, detect_threshold);
    if (events_out.empty()) {
      print_event_list(std::cout, events);
    } else {
      write_annotations(events_out, events);
    }
  } else if (*ablate) {
    const auto rows = cmd_ablate(resolve(o), &std::cerr);
    std::cout << format_table(rows);
    for (const auto& r : rows)
      if (!r.error.empty()) return 2;
  } else if (*synth) {
    FeatureConfig extraction;
    if (!plan_path.empty()) {
      if (synth_wav.empty() || synth_ann.empty()) throw UsageError("synth --plan needs --wav and --ann");
      synth_scene_files(parse_scene_plan(plan_path), synth_wav, synth_ann, synth_seed, extraction);
    } else {
      ScenePlanOptions options;
      options.duration = duration;
      options.sample_rate = sample_rate;
      synth_dataset(synth_root, synth_context, recordings, options, default_class_signatures(), synth_seed,
                    extraction);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
