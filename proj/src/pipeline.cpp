#include "stereosed/pipeline.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "stereosed/checkpoint.hpp"
#include "stereosed/feature_io.hpp"

namespace stereosed {

namespace fs = std::filesystem;

namespace {

fs::path audio_dir(const RunConfig& c, const std::string& context) { return c.data_root / "audio" / context; }
fs::path meta_dir(const RunConfig& c, const std::string& context) { return c.data_root / "meta" / context; }
fs::path feature_dir(const RunConfig& c, const std::string& context) {
  return c.output / "features" / context / combination_slug(c.features);
}
fs::path model_dir(const RunConfig& c, const std::string& context) {
  return c.output / "models" / context / combination_slug(c.features);
}

bool needs_stereo(const std::string& combination) {
  for (const auto& t : parse_combination(combination))
    if (family_is_stereo_only(t.family) || t.channels == 2) return true;
  return false;
}

std::vector<std::string> sorted_stems(const fs::path& dir, const std::string& extension) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == extension)
      out.push_back(entry.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

void check_fold_labels(const FoldSplit& fold, const std::vector<LabelledRecording>& data,
                       const std::string& context) {
  const auto active_labels = [&](const std::vector<std::string>& ids) {
    std::set<std::string> labels;
    for (const auto& r : data) {
      if (std::find(ids.begin(), ids.end(), r.id) == ids.end()) continue;
      for (Eigen::Index c = 0; c < r.roll.activity.cols(); ++c)
        if (r.roll.activity.col(c).any()) labels.insert(r.roll.class_order[static_cast<std::size_t>(c)]);
    }
    return labels;
  };
  std::vector<std::string> training = fold.train;
  training.insert(training.end(), fold.validation.begin(), fold.validation.end());
  const auto train_labels = active_labels(training);
  for (const auto& l : active_labels(fold.test))
    if (!train_labels.count(l))
      throw DataError(context + " fold " + std::to_string(fold.fold_index) + ": test label '" + l +
                      "' never occurs in the training recordings");
}

std::vector<LabelledRecording> select(const std::vector<LabelledRecording>& data,
                                      const std::vector<std::string>& ids) {
  std::vector<LabelledRecording> out;
  for (const auto& id : ids) {
    const auto it = std::find_if(data.begin(), data.end(), [&](const auto& r) { return r.id == id; });
    if (it == data.end()) throw DataError("recording '" + id + "' has no extracted features");
    out.push_back(*it);
  }
  return out;
}

void extract_impl(const RunConfig& config, std::ostream* log) {
  const bool stereo = needs_stereo(config.features);
  for (const auto& context : config.contexts) {
    const auto ids = list_recordings(config, context);
    if (ids.empty()) throw DataError("no recordings found in " + audio_dir(config, context).string());

    std::vector<std::string> problems;
    std::vector<EventList> annotations;
    for (const auto& id : ids) {
      const auto ann = meta_dir(config, context) / (id + ".ann");
      if (!fs::exists(ann)) {
        problems.push_back("missing annotation " + ann.string());
        continue;
      }
      try {
        const auto info = probe_wav(audio_dir(config, context) / (id + ".wav"));
        if (stereo && info.channel_count != 2)
          problems.push_back(id + ": '" + config.features + "' requires stereo audio, file is mono");
        auto events = parse_annotations(ann);
        events.context = context;
        annotations.push_back(std::move(events));
      } catch (const DataError& e) {
        problems.push_back(e.what());
      }
    }
    if (!problems.empty()) {
      std::string msg = "cannot extract context '" + context + "':";
      for (const auto& p : problems) msg += "\n  " + p;
      throw DataError(msg);
    }

    const auto vocabulary = class_vocabulary(annotations);
    const auto dir = feature_dir(config, context);
    fs::create_directories(dir);
    std::string classes;
    for (const auto& c : vocabulary) classes += c + "\n";
    detail::write_file_atomic(dir / "classes.txt", classes);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto clip = decode_wav(audio_dir(config, context) / (ids[i] + ".wav"));
      const auto features = assemble_features(clip, config.features, config.extraction);
      const auto roll = rasterize(annotations[i], features.frame_count(), vocabulary,
                                  config.extraction.grid, clip.sample_rate);
      write_feature_matrix(dir / (ids[i] + ".sedf"), features);
      write_event_roll(dir / (ids[i] + ".roll"), roll);
      if (log)
        *log << "extract " << context << '/' << ids[i] << ": " << features.frame_count() << " frames x "
             << features.width() << '\n';
    }
  }
}

std::vector<FoldTrainResult> train_impl(const RunConfig& config, std::ostream* log) {
  std::vector<FoldTrainResult> results;
  for (std::size_t ci = 0; ci < config.contexts.size(); ++ci) {
    const auto& context = config.contexts[ci];
    const auto data = load_extracted(config, context);
    std::vector<std::string> ids;
    for (const auto& r : data) ids.push_back(r.id);
    const auto folds = make_folds(ids, config.folds, config.validation_fraction, config.seed);
    const auto dir = model_dir(config, context);
    fs::create_directories(dir);
    for (const auto& fold : folds) check_fold_labels(fold, data, context);

    for (const auto& fold : folds) {
      TrainConfig tc = config.training;
      tc.seed = fold_seed(config.seed, ci, fold.fold_index);
      const auto test = select(data, fold.test);
      Trainer trainer(select(data, fold.train), select(data, fold.validation), tc);
      trainer.run([&](const EpochLog& e) {
        if (log && (e.epoch % 25 == 0 || e.epoch == 1))
          *log << "train " << context << " fold " << fold.fold_index << " epoch " << e.epoch
               << " loss " << e.train_loss << " val ER " << e.validation_er << '\n';
      });
      const auto& state = trainer.state();

      Checkpoint ck;
      ck.combination = config.features;
      ck.extraction = to_json_text(config.extraction);
      ck.layout = trainer.layout();
      ck.class_order = trainer.class_order();
      ck.scaler = trainer.scaler();
      ck.params = state.best_params;
      ck.train_state = state;
      const std::string stem = "fold" + std::to_string(fold.fold_index);
      write_checkpoint(dir / (stem + ".sedm"), ck);
      detail::write_file_atomic(dir / (stem + "_log.csv"), format_training_log(trainer.log()));

      FoldTrainResult r;
      r.context = context;
      r.fold_index = fold.fold_index;
      r.epochs_run = state.epoch;
      r.best_epoch = state.best_epoch;
      r.best_validation_er = state.best_er;
      r.test_counts = trainer.evaluate(state.best_params, test);
      nlohmann::json summary = {
          {"context", context},
          {"fold", fold.fold_index},
          {"train", fold.train},
          {"validation", fold.validation},
          {"test", fold.test},
          {"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_validation_er", r.best_validation_er},
          {"test_er", r.test_counts.error_rate()},
          {"test_f", r.test_counts.f_score()},
      };
      detail::write_file_atomic(dir / (stem + "_summary.json"), summary.dump(2) + "\n");
      if (log)
        *log << "train " << context << " fold " << fold.fold_index << ": " << r.epochs_run
             << " epochs, best validation ER " << r.best_validation_er << " at epoch " << r.best_epoch
             << ", test ER " << r.test_counts.error_rate() << '\n';
      results.push_back(r);
    }
  }
  return results;
}

EvaluationRow evaluate_impl(const RunConfig& config, std::ostream* log) {
  EvaluationRow row;
  row.combination = config.features;
  for (const auto& context : config.contexts) {
    const auto data = load_extracted(config, context);
    std::vector<std::string> ids;
    for (const auto& r : data) ids.push_back(r.id);
    const auto folds = make_folds(ids, config.folds, config.validation_fraction, config.seed);
    std::vector<SegmentCounts> per_fold;
    for (const auto& fold : folds) {
      const auto path = model_dir(config, context) / ("fold" + std::to_string(fold.fold_index) + ".sedm");
      if (!fs::exists(path)) throw DataError("missing checkpoint " + path.string());
      const auto ck = read_checkpoint(path);
      if (ck.combination != config.features || !(ck.layout == data.front().features.layout))
        throw DataError(path.string() + ": checkpoint was trained on '" + ck.combination +
                        "', features are '" + config.features + "'");
      SegmentCounts counts;
      for (const auto& rec : select(data, fold.test)) {
        if (rec.roll.class_order != ck.class_order)
          throw DataError(path.string() + ": class order differs from " + rec.id);
        const auto sys = detect(ck.params, ck.scaler, rec.features, ck.class_order, config.training.threshold);
        EventRoll ref = rec.roll;
        ref.activity.conservativeResize(static_cast<Eigen::Index>(rec.features.frame_count()), Eigen::NoChange);
        counts += score(ref, sys, config.training.frames_per_segment);
      }
      per_fold.push_back(counts);
    }
    row.contexts.push_back({context, combine_folds(per_fold, config.aggregation)});
    if (log)
      *log << "evaluate " << context << ": ER " << row.contexts.back().report.error_rate << ", F "
           << row.contexts.back().report.f_score << "%\n";
  }
  row.compute_average();
  const auto reports = config.output / "reports";
  const std::string slug = combination_slug(config.features);
  detail::write_file_atomic(reports / (slug + ".txt"), format_table({row}));
  detail::write_file_atomic(reports / (slug + ".csv"), format_csv({row}));
  return row;
}

}  // namespace

std::string combination_slug(const std::string& combination) {
  std::string out;
  for (const auto& t : parse_combination(combination)) {
    if (!out.empty()) out += '+';
    out += family_name(t.family);
    if (t.channels) out += "_" + std::to_string(t.channels);
  }
  return out;
}

std::vector<std::string> list_recordings(const RunConfig& config, const std::string& context) {
  return sorted_stems(audio_dir(config, context), ".wav");
}

void write_resolved_config(const RunConfig& config) {
  detail::write_file_atomic(config.output / "config.json", to_json_text(config));
}

std::uint64_t fold_seed(std::uint64_t root, std::size_t context_index, int fold_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(context_index), static_cast<std::uint32_t>(fold_index)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void cmd_extract(const RunConfig& config, std::ostream* log) {
  config.validate();
  write_resolved_config(config);
  extract_impl(config, log);
}

std::vector<LabelledRecording> load_extracted(const RunConfig& config, const std::string& context) {
  const auto dir = feature_dir(config, context);
  const auto ids = sorted_stems(dir, ".sedf");
  if (ids.empty())
    throw DataError("no extracted features in " + dir.string() + "; run 'extract' first");
  std::vector<LabelledRecording> out;
  for (const auto& id : ids) {
    LabelledRecording r;
    r.id = id;
    r.features = read_feature_matrix(dir / (id + ".sedf"));
    r.roll = read_event_roll(dir / (id + ".roll"));
    if (r.roll.frame_count() != r.features.frame_count())
      throw DataError(id + ": roll and feature frame counts differ");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<FoldTrainResult> cmd_train(const RunConfig& config, std::ostream* log) {
  config.validate();
  write_resolved_config(config);
  return train_impl(config, log);
}

EvaluationRow cmd_evaluate(const RunConfig& config, std::ostream* log) {
  config.validate();
  write_resolved_config(config);
  return evaluate_impl(config, log);
}

EventList cmd_detect(const fs::path& checkpoint, const fs::path& audio, double threshold) {
  const auto ck = read_checkpoint(checkpoint);
  const auto extraction = feature_config_from_json_text(ck.extraction);
  const auto clip = decode_wav(audio);
  const auto features = assemble_features(clip, ck.combination, extraction);
  if (!(features.layout == ck.layout))
    throw DataError(checkpoint.string() + ": feature layout does not match the checkpoint");
  const auto roll = detect(ck.params, ck.scaler, features, ck.class_order, threshold);
  auto events = roll_to_events(roll, extraction.grid, clip.sample_rate);
  events.source = audio.stem().string();
  return events;
}

std::vector<EvaluationRow> cmd_ablate(const RunConfig& config, std::ostream* log) {
  config.validate();
  write_resolved_config(config);
  const auto& combos = config.combinations.empty() ? ablation_combinations() : config.combinations;
  std::vector<EvaluationRow> rows;
  for (const auto& combo : combos) {
    RunConfig c = config;
    c.features = combo;
    try {
      extract_impl(c, log);
      train_impl(c, log);
      rows.push_back(evaluate_impl(c, log));
    } catch (const std::exception& e) {
      EvaluationRow failed;
      failed.combination = combo;
      failed.error = e.what();
      if (log) *log << "ablate " << combo << " failed: " << e.what() << '\n';
      rows.push_back(std::move(failed));
    }
  }
  detail::write_file_atomic(config.output / "reports" / "ablation.txt", format_table(rows));
  detail::write_file_atomic(config.output / "reports" / "ablation.csv", format_csv(rows));
  return rows;
}

SyntheticScene synth_scene_files(const ScenePlan& plan, const fs::path& wav_path, const fs::path& ann_path,
                                 std::uint64_t seed, const FeatureConfig& extraction) {
  std::mt19937_64 rng(seed);
  auto scene = synthesize_scene(plan, rng, extraction);
  if (wav_path.has_parent_path()) fs::create_directories(wav_path.parent_path());
  auto tmp = wav_path;
  tmp += ".tmp";
  write_wav(tmp, scene.clip, 24);
  fs::rename(tmp, wav_path);
  write_annotations(ann_path, scene.truth);
  return scene;
}

void synth_dataset(const fs::path& data_root, const std::string& context, int count,
                   const ScenePlanOptions& options, const std::vector<ClassSignature>& classes,
                   std::uint64_t seed, const FeatureConfig& extraction) {
  if (count < 1) throw UsageError("synth: recording count must be positive");
  for (int i = 0; i < count; ++i) {
    std::ostringstream id;
    id << context << '_' << std::setw(3) << std::setfill('0') << i + 1;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    std::mt19937_64 plan_rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
    const auto plan = random_scene_plan(classes, options, plan_rng);
    detail::write_file_atomic(data_root / "plans" / context / (id.str() + ".plan"), format_scene_plan(plan));
    synth_scene_files(plan, data_root / "audio" / context / (id.str() + ".wav"),
                      data_root / "meta" / context / (id.str() + ".ann"), plan_rng(), extraction);
  }
}

}  // namespace stereosed
