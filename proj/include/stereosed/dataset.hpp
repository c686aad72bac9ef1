#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stereosed/audio.hpp"
#include "stereosed/features.hpp"

namespace stereosed {

// ---------------------------------------------------------------------------
// Annotations

struct Event {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset
  std::string label;

  bool operator==(const Event&) const = default;
};

struct EventList {
  std::vector<Event> events;
  std::string source;   // recording id
  std::string context;  // scene name
};

/// One event per line: onset, offset, label. Fields are tab separated (labels
/// may contain spaces) or, without tabs, whitespace separated with the label
/// taking the remaining tokens. Leading non-numeric columns (file, scene) are
/// skipped. Blank lines and '#' comments are ignored.
EventList parse_annotations_text(const std::string& text, const std::string& source = "<memory>");
EventList parse_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const EventList& events);

/// Sorted union of labels.
std::vector<std::string> class_vocabulary(const std::vector<EventList>& lists);

using RollMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary frames x classes activity on the feature grid.
struct EventRoll {
  RollMatrix activity;
  std::vector<std::string> class_order;

  std::size_t frame_count() const { return static_cast<std::size_t>(activity.rows()); }
  std::size_t class_count() const { return class_order.size(); }
};

/// activity(t, c) = 1 iff the centre of frame t lies in [onset, offset) of an
/// event labelled class_order[c]. Unknown labels are a DataError.
EventRoll rasterize(const EventList& events, std::size_t frame_count,
                    const std::vector<std::string>& class_order, const FrameGrid& grid,
                    int sample_rate);

/// Converts runs of active frames back to events spanning centre +- hop / 2.
EventList roll_to_events(const EventRoll& roll, const FrameGrid& grid, int sample_rate);

/// "SEDR" u32 version u32 frames u32 classes, class names (u32 length + bytes),
/// then frames x classes uint8, row-major. Little-endian.
void write_event_roll(const std::filesystem::path& path, const EventRoll& roll);
EventRoll read_event_roll(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldSplit {
  int fold_index = 1;  // 1-based
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Shuffles the recordings with `seed`, deals them into `fold_count` test sets,
/// and moves round(validation_fraction * |train|) random training recordings of
/// each fold into its validation set (at least one while two or more remain).
std::vector<FoldSplit> make_folds(const std::vector<std::string>& recordings, int fold_count,
                                  double validation_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic binaural scenes

enum class SourceKind { Noise, Harmonic };

/// One planted event. Bands index the TDOA mel filterbank (`tdoa_bands` bands
/// over the full spectrum); the source occupies the union of their supports.
struct PlannedEvent {
  std::string label;
  int band_lo = 0;
  int band_hi = 0;
  int delay = 0;  // samples; positive means the right channel lags
  double onset = 0.0;
  double offset = 0.0;
  SourceKind kind = SourceKind::Noise;
  double f0 = 0.0;    // Harmonic only
  double gain = 0.1;  // RMS of the rendered source
};

struct ScenePlan {
  double duration = 10.0;  // seconds
  int sample_rate = 16000;
  std::vector<PlannedEvent> events;
};

/// Plan file: '#' comments, "@duration <s>" and "@sample_rate <hz>" directives,
/// then one event per line:
///   label  band_lo-band_hi  delay  onset  offset  kind [gain]
/// where kind is "noise" or "harmonic:<f0>". Tab separated when tabs are present.
ScenePlan parse_scene_plan_text(const std::string& text, const std::string& source = "<memory>");
ScenePlan parse_scene_plan(const std::filesystem::path& path);
std::string format_scene_plan(const ScenePlan& plan);

struct SyntheticScene {
  AudioClip clip;     // stereo
  EventList truth;    // overlapping same-class events merged
  std::vector<PlannedEvent> events;
};

/// Frequency span [lo, hi] Hz covered by TDOA bands band_lo..band_hi.
std::pair<double, double> band_range_hz(int band_lo, int band_hi, int sample_rate,
                                        const FeatureConfig& config = {});

/// Renders every event into the left channel and, shifted by its delay, into
/// the right channel. Delays beyond +-2 tau_max are rejected.
SyntheticScene synthesize_scene(const ScenePlan& plan, std::mt19937_64& rng,
                                const FeatureConfig& config = {});

/// Fixed acoustic signature of a synthetic event class.
struct ClassSignature {
  std::string label;
  int band_lo = 0;
  int band_hi = 0;
  int delay = 0;
  SourceKind kind = SourceKind::Noise;
  double f0 = 0.0;
  double gain = 0.1;
};

/// Three classes separated in band, pitch and direction.
std::vector<ClassSignature> default_class_signatures();

/// Alternating gaps and events per class: gaps ~ U[min_gap, max_gap],
/// events ~ U[min_event, max_event] seconds. Classes overlap freely.
struct ScenePlanOptions {
  double duration = 30.0;
  int sample_rate = 16000;
  double min_event = 1.0;
  double max_event = 4.0;
  double min_gap = 0.5;
  double max_gap = 5.0;
};

ScenePlan random_scene_plan(const std::vector<ClassSignature>& classes,
                            const ScenePlanOptions& options, std::mt19937_64& rng);

}  // namespace stereosed
