#include "stereosed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace stereosed {

SegmentCounts& SegmentCounts::operator+=(const SegmentCounts& o) {
  segments += o.segments;
  reference += o.reference;
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  return *this;
}

SegmentCounts operator+(SegmentCounts a, const SegmentCounts& b) { return a += b; }

double SegmentCounts::error_rate() const {
  if (reference == 0) return 0.0;
  return static_cast<double>(substitutions + deletions + insertions) / static_cast<double>(reference);
}

double SegmentCounts::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double SegmentCounts::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double SegmentCounts::f_score() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 100.0 * 2.0 * p * r / (p + r);
}

int frames_per_segment(const FrameGrid& grid, double segment_seconds) {
  return static_cast<int>(std::lround(segment_seconds * 1000.0 / grid.hop_length_ms));
}

RollMatrix segmentize(const EventRoll& roll, int frames_per_segment) {
  if (frames_per_segment < 1) throw UsageError("segment length must be at least one frame");
  const auto frames = roll.activity.rows();
  const auto segments = (frames + frames_per_segment - 1) / frames_per_segment;
  RollMatrix out = RollMatrix::Zero(segments, roll.activity.cols());
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index c = 0; c < roll.activity.cols(); ++c)
      if (roll.activity(t, c)) out(t / frames_per_segment, c) = 1;
  return out;
}

SegmentCounts score(const EventRoll& reference, const EventRoll& system, int frames_per_segment) {
  if (reference.class_order != system.class_order)
    throw DataError("score: reference and system use different class orders");
  if (reference.frame_count() != system.frame_count())
    throw DataError("score: reference has " + std::to_string(reference.frame_count()) +
                    " frames, system has " + std::to_string(system.frame_count()));
  const RollMatrix ref = segmentize(reference, frames_per_segment);
  const RollMatrix sys = segmentize(system, frames_per_segment);
  SegmentCounts total;
  for (Eigen::Index s = 0; s < ref.rows(); ++s) {
    long long n = 0, tp = 0, fp = 0, fn = 0;
    for (Eigen::Index c = 0; c < ref.cols(); ++c) {
      const bool r = ref(s, c) != 0, y = sys(s, c) != 0;
      n += r;
      tp += r && y;
      fp += !r && y;
      fn += r && !y;
    }
    total.segments += 1;
    total.reference += n;
    total.tp += tp;
    total.fp += fp;
    total.fn += fn;
    total.substitutions += std::min(fn, fp);
    total.deletions += std::max(0LL, fn - fp);
    total.insertions += std::max(0LL, fp - fn);
  }
  return total;
}

MetricReport make_report(const SegmentCounts& counts) {
  return {counts.error_rate(), counts.f_score(), counts.precision(), counts.recall(), counts};
}

MetricReport combine_folds(const std::vector<SegmentCounts>& folds, Aggregation aggregation) {
  if (folds.empty()) throw UsageError("combine_folds: no folds");
  SegmentCounts sum;
  for (const auto& f : folds) sum += f;
  MetricReport report = make_report(sum);
  if (aggregation == Aggregation::Macro) {
    double er = 0.0, f = 0.0, p = 0.0, r = 0.0;
    for (const auto& c : folds) {
      er += c.error_rate();
      f += c.f_score();
      p += c.precision();
      r += c.recall();
    }
    const auto n = static_cast<double>(folds.size());
    report.error_rate = er / n;
    report.f_score = f / n;
    report.precision = p / n;
    report.recall = r / n;
  }
  return report;
}

void EvaluationRow::compute_average() {
  average_error_rate = 0.0;
  average_f_score = 0.0;
  if (contexts.empty()) return;
  for (const auto& c : contexts) {
    average_error_rate += c.report.error_rate;
    average_f_score += c.report.f_score;
  }
  average_error_rate /= static_cast<double>(contexts.size());
  average_f_score /= static_cast<double>(contexts.size());
}

namespace {

std::vector<std::string> context_columns(const std::vector<EvaluationRow>& rows) {
  std::vector<std::string> names;
  for (const auto& row : rows)
    for (const auto& c : row.contexts)
      if (std::find(names.begin(), names.end(), c.context) == names.end()) names.push_back(c.context);
  return names;
}

const ContextResult* find_context(const EvaluationRow& row, const std::string& name) {
  for (const auto& c : row.contexts)
    if (c.context == name) return &c;
  return nullptr;
}

}  // namespace

std::string format_table(const std::vector<EvaluationRow>& rows) {
  const auto contexts = context_columns(rows);
  std::size_t name_width = std::string("Feature combination").size();
  for (const auto& r : rows) name_width = std::max(name_width, r.combination.size());
  std::size_t group_width = 14;
  for (const auto& c : contexts) group_width = std::max(group_width, c.size());

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width)) << "Feature combination";
  for (const auto& c : contexts) out << " | " << std::setw(static_cast<int>(group_width)) << c;
  out << " | " << std::setw(static_cast<int>(group_width)) << "Average" << '\n';
  out << std::setw(static_cast<int>(name_width)) << "";
  const auto sub = [&] {
    std::ostringstream s;
    s << std::left << std::setw(6) << "ER" << "F (%)";
    return s.str();
  }();
  for (std::size_t i = 0; i <= contexts.size(); ++i)
    out << " | " << std::setw(static_cast<int>(group_width)) << sub;
  out << '\n';
  out << std::string(name_width + (contexts.size() + 1) * (group_width + 3), '-') << '\n';

  out << std::fixed;
  const auto cell = [&](double er, double f) {
    std::ostringstream s;
    s << std::fixed << std::left << std::setprecision(2) << std::setw(6) << er << std::setprecision(1) << f;
    return s.str();
  };
  for (const auto& row : rows) {
    out << std::setw(static_cast<int>(name_width)) << row.combination;
    if (!row.error.empty()) {
      out << " | FAILED: " << row.error << '\n';
      continue;
    }
    for (const auto& c : contexts) {
      const auto* r = find_context(row, c);
      out << " | " << std::setw(static_cast<int>(group_width))
          << (r ? cell(r->report.error_rate, r->report.f_score) : std::string("-"));
    }
    out << " | " << std::setw(static_cast<int>(group_width))
        << cell(row.average_error_rate, row.average_f_score) << '\n';
  }
  return out.str();
}

std::string format_csv(const std::vector<EvaluationRow>& rows) {
  const auto contexts = context_columns(rows);
  std::ostringstream out;
  out << std::fixed << "combination";
  for (const auto& c : contexts) out << ',' << c << "_er," << c << "_f";
  out << ",average_er,average_f,error\n";
  for (const auto& row : rows) {
    out << row.combination;
    for (const auto& c : contexts) {
      const auto* r = find_context(row, c);
      if (r && row.error.empty())
        out << ',' << std::setprecision(4) << r->report.error_rate << ','
            << std::setprecision(1) << r->report.f_score;
      else
        out << ",,";
    }
    if (row.error.empty())
      out << ',' << std::setprecision(4) << row.average_error_rate << ',' << std::setprecision(1)
          << row.average_f_score << ",\n";
    else
      out << ",,," << std::quoted(row.error, '"', '"') << '\n';
  }
  return out.str();
}

}  // namespace stereosed
