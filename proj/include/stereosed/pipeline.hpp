#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "stereosed/config.hpp"
#include "stereosed/dataset.hpp"
#include "stereosed/metrics.hpp"
#include "stereosed/model.hpp"

namespace stereosed {

// On-disk layout, rooted at RunConfig::data_root and RunConfig::output:
//
//   <data_root>/audio/<context>/<id>.wav
//   <data_root>/meta/<context>/<id>.ann
//   <output>/config.json
//   <output>/features/<context>/<slug>/<id>.sedf, <id>.roll
//   <output>/models/<context>/<slug>/fold<k>.sedm, fold<k>_log.csv, fold<k>_summary.json
//   <output>/reports/<slug>.txt, <slug>.csv, ablation.txt, ablation.csv
//
// where <slug> is the combination with ';' replaced by '+'.

std::string combination_slug(const std::string& combination);

/// Recording ids (file stems) with audio in the context, sorted.
std::vector<std::string> list_recordings(const RunConfig& config, const std::string& context);

/// Writes <output>/config.json.
void write_resolved_config(const RunConfig& config);

/// Extracts features and targets for every recording of every context.
/// Missing annotations and mono audio (for stereo features) are reported
/// before any file is written.
void cmd_extract(const RunConfig& config, std::ostream* log = nullptr);

/// Features and targets of one context as written by cmd_extract.
std::vector<LabelledRecording> load_extracted(const RunConfig& config, const std::string& context);

struct FoldTrainResult {
  std::string context;
  int fold_index = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_validation_er = 0.0;
  SegmentCounts test_counts;
};

/// Seed of one (context, fold) training run derived from the root seed.
std::uint64_t fold_seed(std::uint64_t root, std::size_t context_index, int fold_index);

std::vector<FoldTrainResult> cmd_train(const RunConfig& config, std::ostream* log = nullptr);

/// Scores every fold's checkpoint on its test recordings and combines folds.
EvaluationRow cmd_evaluate(const RunConfig& config, std::ostream* log = nullptr);

/// Runs a checkpoint on one audio file.
EventList cmd_detect(const std::filesystem::path& checkpoint, const std::filesystem::path& audio,
                     double threshold = 0.5);

/// extract + train + evaluate for each combination (config.combinations, or the
/// full ablation table when empty). A failing row is recorded and the rest still run.
std::vector<EvaluationRow> cmd_ablate(const RunConfig& config, std::ostream* log = nullptr);

/// Renders a scene plan to <stem>.wav (24-bit) and <stem>.ann.
SyntheticScene synth_scene_files(const ScenePlan& plan, const std::filesystem::path& wav_path,
                                 const std::filesystem::path& ann_path, std::uint64_t seed,
                                 const FeatureConfig& extraction = {});

/// Generates `count` random scenes into <data_root>/audio|meta/<context>/.
void synth_dataset(const std::filesystem::path& data_root, const std::string& context, int count,
                   const ScenePlanOptions& options, const std::vector<ClassSignature>& classes,
                   std::uint64_t seed, const FeatureConfig& extraction = {});

}  // namespace stereosed
