#pragma once

#include <string>
#include <vector>

#include "stereosed/dataset.hpp"

namespace stereosed {

/// Segment-level confusion counts accumulated over segments (and folds).
struct SegmentCounts {
  long long segments = 0;
  long long reference = 0;  // N: active reference segment-classes
  long long tp = 0, fp = 0, fn = 0;
  long long substitutions = 0, deletions = 0, insertions = 0;

  SegmentCounts& operator+=(const SegmentCounts& other);
  bool operator==(const SegmentCounts&) const = default;

  /// (S + D + I) / N, 0 when N = 0.
  double error_rate() const;
  double precision() const;
  double recall() const;
  /// 2PR / (P + R) as a percentage, 0 when undefined.
  double f_score() const;
};

SegmentCounts operator+(SegmentCounts a, const SegmentCounts& b);

/// Number of frames per segment: segment length divided by the hop (50 for 1 s at 20 ms).
int frames_per_segment(const FrameGrid& grid, double segment_seconds = 1.0);

/// segments x classes; a class is active in a segment if any of its frames is.
/// A trailing partial segment counts as a full segment.
RollMatrix segmentize(const EventRoll& roll, int frames_per_segment);

/// Counts for one recording. Throws DataError on grid or class-order mismatch.
SegmentCounts score(const EventRoll& reference, const EventRoll& system, int frames_per_segment = 50);

struct MetricReport {
  double error_rate = 0.0;
  double f_score = 0.0;  // percent
  double precision = 0.0;
  double recall = 0.0;
  SegmentCounts totals;
};

MetricReport make_report(const SegmentCounts& counts);

enum class Aggregation { Micro, Macro };

/// Micro: sum raw counts across folds, then compute. Macro: mean of per-fold ER / F.
MetricReport combine_folds(const std::vector<SegmentCounts>& folds,
                           Aggregation aggregation = Aggregation::Micro);

struct ContextResult {
  std::string context;
  MetricReport report;
};

/// One row of the ablation table: per-context results plus their average.
struct EvaluationRow {
  std::string combination;
  std::vector<ContextResult> contexts;
  double average_error_rate = 0.0;
  double average_f_score = 0.0;
  std::string error;  // non-empty when the row failed

  void compute_average();
};

/// Aligned text table: combination, then ER / F (%) per context and on average.
std::string format_table(const std::vector<EvaluationRow>& rows);
std::string format_csv(const std::vector<EvaluationRow>& rows);

}  // namespace stereosed
