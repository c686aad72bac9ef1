#include "stereosed/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "stereosed/fft.hpp"

namespace stereosed {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  if (line.find('\t') != std::string::npos) {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) {
      const auto b = f.find_first_not_of(" \r");
      const auto e = f.find_last_not_of(" \r");
      if (b != std::string::npos) out.push_back(f.substr(b, e - b + 1));
    }
  } else {
    std::stringstream ss(line);
    std::string f;
    while (ss >> f) out.push_back(f);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

bool parse_int(const std::string& s, int& out) {
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_blank_or_comment(const std::string& line) {
  const auto b = line.find_first_not_of(" \t\r");
  return b == std::string::npos || line[b] == '#';
}

}  // namespace

// ---------------------------------------------------------------------------
// Annotations

EventList parse_annotations_text(const std::string& text, const std::string& source) {
  EventList list;
  list.source = source;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) continue;
    const auto fields = split_fields(line);
    const std::string where = source + ":" + std::to_string(line_no);
    std::size_t i = 0;
    double onset = 0.0, offset = 0.0;
    for (; i + 1 < fields.size(); ++i)
      if (parse_double(fields[i], onset) && parse_double(fields[i + 1], offset)) break;
    if (i + 2 >= fields.size())
      throw DataError(where + ": malformed annotation line, expected 'onset offset label'");
    std::string label = fields[i + 2];
    for (std::size_t j = i + 3; j < fields.size(); ++j) label += " " + fields[j];
    if (onset < 0.0) throw DataError(where + ": negative onset");
    if (!(onset < offset)) throw DataError(where + ": onset must be before offset");
    list.events.push_back({onset, offset, label});
  }
  return list;
}

EventList parse_annotations(const std::filesystem::path& path) {
  auto list = parse_annotations_text(read_text(path), path.string());
  list.source = path.stem().string();
  return list;
}

void write_annotations(const std::filesystem::path& path, const EventList& events) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  for (const auto& e : events.events) out << e.onset << '\t' << e.offset << '\t' << e.label << '\n';
  detail::write_file_atomic(path, out.str());
}

std::vector<std::string> class_vocabulary(const std::vector<EventList>& lists) {
  std::set<std::string> labels;
  for (const auto& l : lists)
    for (const auto& e : l.events) labels.insert(e.label);
  return {labels.begin(), labels.end()};
}

EventRoll rasterize(const EventList& events, std::size_t frame_count,
                    const std::vector<std::string>& class_order, const FrameGrid& grid,
                    int sample_rate) {
  EventRoll roll;
  roll.class_order = class_order;
  roll.activity = RollMatrix::Zero(static_cast<Eigen::Index>(frame_count),
                                   static_cast<Eigen::Index>(class_order.size()));
  for (const auto& e : events.events) {
    const auto it = std::find(class_order.begin(), class_order.end(), e.label);
    if (it == class_order.end())
      throw DataError(events.source + ": label '" + e.label + "' is not in the class vocabulary");
    const auto c = static_cast<Eigen::Index>(it - class_order.begin());
    for (std::size_t t = 0; t < frame_count; ++t) {
      const double centre = grid.frame_center_seconds(t, sample_rate);
      if (centre >= e.onset && centre < e.offset) roll.activity(static_cast<Eigen::Index>(t), c) = 1;
    }
  }
  return roll;
}

EventList roll_to_events(const EventRoll& roll, const FrameGrid& grid, int sample_rate) {
  EventList list;
  const double half_hop = static_cast<double>(grid.hop_samples(sample_rate)) / sample_rate / 2.0;
  const auto frames = roll.activity.rows();
  for (Eigen::Index c = 0; c < roll.activity.cols(); ++c) {
    Eigen::Index t = 0;
    while (t < frames) {
      if (!roll.activity(t, c)) {
        ++t;
        continue;
      }
      const Eigen::Index start = t;
      while (t < frames && roll.activity(t, c)) ++t;
      list.events.push_back(
          {grid.frame_center_seconds(static_cast<std::size_t>(start), sample_rate) - half_hop,
           grid.frame_center_seconds(static_cast<std::size_t>(t - 1), sample_rate) + half_hop,
           roll.class_order[static_cast<std::size_t>(c)]});
    }
  }
  std::stable_sort(list.events.begin(), list.events.end(),
                   [](const Event& a, const Event& b) { return a.onset < b.onset; });
  return list;
}

void write_event_roll(const std::filesystem::path& path, const EventRoll& roll) {
  detail::ByteWriter w;
  w.raw("SEDR");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(roll.frame_count()));
  w.u32(static_cast<std::uint32_t>(roll.class_count()));
  for (const auto& name : roll.class_order) w.str(name);
  for (Eigen::Index t = 0; t < roll.activity.rows(); ++t)
    for (Eigen::Index c = 0; c < roll.activity.cols(); ++c) w.u8(roll.activity(t, c) ? 1 : 0);
  detail::write_file_atomic(path, w.bytes());
}

EventRoll read_event_roll(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path.string());
  r.expect_magic("SEDR");
  if (r.u32() != 1) throw DataError(path.string() + ": unsupported roll version");
  const std::uint32_t frames = r.u32();
  const std::uint32_t classes = r.u32();
  EventRoll roll;
  for (std::uint32_t i = 0; i < classes; ++i) roll.class_order.push_back(r.str());
  roll.activity.resize(frames, classes);
  for (Eigen::Index t = 0; t < roll.activity.rows(); ++t)
    for (Eigen::Index c = 0; c < roll.activity.cols(); ++c) {
      const auto v = r.u8();
      if (v > 1) throw DataError(path.string() + ": non-binary roll entry");
      roll.activity(t, c) = v;
    }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after roll data");
  return roll;
}

// ---------------------------------------------------------------------------
// Folds

std::vector<FoldSplit> make_folds(const std::vector<std::string>& recordings, int fold_count,
                                  double validation_fraction, std::uint64_t seed) {
  if (fold_count < 1) throw UsageError("fold count must be >= 1");
  if (recordings.size() < static_cast<std::size_t>(fold_count))
    throw DataError("need at least " + std::to_string(fold_count) + " recordings for " +
                    std::to_string(fold_count) + " folds, got " + std::to_string(recordings.size()));
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw UsageError("validation fraction must be in [0, 1)");
  if (std::set<std::string>(recordings.begin(), recordings.end()).size() != recordings.size())
    throw DataError("duplicate recording ids");

  std::vector<std::string> order = recordings;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FoldSplit> folds(static_cast<std::size_t>(fold_count));
  for (std::size_t i = 0; i < order.size(); ++i)
    folds[i % folds.size()].test.push_back(order[i]);

  for (std::size_t f = 0; f < folds.size(); ++f) {
    auto& fold = folds[f];
    fold.fold_index = static_cast<int>(f) + 1;
    std::sort(fold.test.begin(), fold.test.end());
    std::vector<std::string> train;
    for (const auto& r : recordings)
      if (std::find(fold.test.begin(), fold.test.end(), r) == fold.test.end()) train.push_back(r);
    auto n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(train.size())));
    if (n_val == 0 && validation_fraction > 0.0 && train.size() >= 2) n_val = 1;
    if (n_val >= train.size() && !train.empty()) n_val = train.size() - 1;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(f + 1)};
    std::mt19937_64 val_rng(seq);
    std::vector<std::string> shuffled = train;
    std::shuffle(shuffled.begin(), shuffled.end(), val_rng);
    fold.validation.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(fold.validation.begin(), fold.validation.end());
    for (const auto& r : train)
      if (!std::binary_search(fold.validation.begin(), fold.validation.end(), r)) fold.train.push_back(r);
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

std::string kind_string(const PlannedEvent& e) {
  if (e.kind == SourceKind::Noise) return "noise";
  std::ostringstream s;
  s << "harmonic:" << e.f0;
  return s.str();
}

std::vector<double> render_source(const PlannedEvent& e, std::size_t length, int rate, double f_lo,
                                  double f_hi, std::mt19937_64& rng) {
  std::vector<double> u(length, 0.0);
  if (e.kind == SourceKind::Noise) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : u) v = gauss(rng);
    auto spec = full_fft(u);
    for (std::size_t k = 0; k < length; ++k) {
      const double f = static_cast<double>(std::min(k, length - k)) * rate / static_cast<double>(length);
      if (f < f_lo || f > f_hi) spec[k] = 0.0;
    }
    u = full_ifft_real(spec);
  } else {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const double top = std::min(f_hi, 0.45 * rate);
    for (int h = 1; h * e.f0 <= top || h == 1; ++h) {
      const double f = h * e.f0;
      const double phi = phase(rng);
      for (std::size_t n = 0; n < length; ++n)
        u[n] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / rate + phi) / h;
    }
  }
  double energy = 0.0;
  for (double v : u) energy += v * v;
  if (energy > 0.0) {
    const double scale = e.gain / std::sqrt(energy / static_cast<double>(length));
    for (auto& v : u) v *= scale;
  }
  // Raised-cosine fades keep onsets click-free.
  const std::size_t fade = std::min(length / 2, static_cast<std::size_t>(0.01 * rate));
  for (std::size_t n = 0; n < fade; ++n) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n) / static_cast<double>(fade));
    u[n] *= g;
    u[length - 1 - n] *= g;
  }
  return u;
}

}  // namespace

ScenePlan parse_scene_plan_text(const std::string& text, const std::string& source) {
  ScenePlan plan;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto f = split_fields(line);
    if (f[0] == "@duration" || f[0] == "@sample_rate") {
      double v = 0.0;
      if (f.size() != 2 || !parse_double(f[1], v) || v <= 0.0)
        throw DataError(where + ": directive needs one positive value");
      if (f[0] == "@duration") plan.duration = v;
      else plan.sample_rate = static_cast<int>(v);
      continue;
    }
    if (f.size() != 6 && f.size() != 7)
      throw DataError(where + ": expected 'label band_lo-band_hi delay onset offset kind [gain]'");
    PlannedEvent e;
    e.label = f[0];
    const auto dash = f[1].find('-');
    if (dash == std::string::npos || !parse_int(f[1].substr(0, dash), e.band_lo) ||
        !parse_int(f[1].substr(dash + 1), e.band_hi))
      throw DataError(where + ": band range must look like '0-1'");
    if (!parse_int(f[2], e.delay)) throw DataError(where + ": delay must be an integer sample count");
    if (!parse_double(f[3], e.onset) || !parse_double(f[4], e.offset))
      throw DataError(where + ": onset/offset must be numbers");
    if (f[5] == "noise") {
      e.kind = SourceKind::Noise;
    } else if (f[5].rfind("harmonic:", 0) == 0 && parse_double(f[5].substr(9), e.f0) && e.f0 > 0.0) {
      e.kind = SourceKind::Harmonic;
    } else {
      throw DataError(where + ": kind must be 'noise' or 'harmonic:<f0>'");
    }
    if (f.size() == 7 && (!parse_double(f[6], e.gain) || e.gain < 0.0))
      throw DataError(where + ": gain must be a non-negative number");
    plan.events.push_back(e);
  }
  return plan;
}

ScenePlan parse_scene_plan(const std::filesystem::path& path) {
  return parse_scene_plan_text(read_text(path), path.string());
}

std::string format_scene_plan(const ScenePlan& plan) {
  std::ostringstream out;
  out << "@duration " << plan.duration << "\n@sample_rate " << plan.sample_rate << '\n';
  out.precision(10);
  for (const auto& e : plan.events)
    out << e.label << '\t' << e.band_lo << '-' << e.band_hi << '\t' << e.delay << '\t' << e.onset
        << '\t' << e.offset << '\t' << kind_string(e) << '\t' << e.gain << '\n';
  return out.str();
}

std::pair<double, double> band_range_hz(int band_lo, int band_hi, int sample_rate,
                                        const FeatureConfig& config) {
  const int bands = config.tdoa_bands;
  if (band_lo < 0 || band_hi < band_lo || band_hi >= bands)
    throw DataError("band range " + std::to_string(band_lo) + "-" + std::to_string(band_hi) +
                    " is outside 0-" + std::to_string(bands - 1));
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  const auto edge = [&](int i) { return mel_to_hz(mel_hi * i / (bands + 1)); };
  return {edge(band_lo), edge(band_hi + 2)};
}

SyntheticScene synthesize_scene(const ScenePlan& plan, std::mt19937_64& rng, const FeatureConfig& config) {
  if (plan.sample_rate <= 0 || plan.duration <= 0.0) throw DataError("scene plan needs a positive rate and duration");
  const int rate = plan.sample_rate;
  const auto total = static_cast<std::size_t>(std::llround(plan.duration * rate));
  const int max_lag = config.max_lag(rate);

  SyntheticScene scene;
  scene.clip.sample_rate = rate;
  scene.clip.channels.assign(2, std::vector<double>(total, 0.0));
  scene.events = plan.events;

  for (const auto& e : plan.events) {
    if (std::abs(e.delay) > max_lag)
      throw DataError("event '" + e.label + "': delay " + std::to_string(e.delay) +
                      " exceeds +-2 tau_max = " + std::to_string(max_lag));
    if (!(e.onset >= 0.0 && e.onset < e.offset && e.offset <= plan.duration + 1e-9))
      throw DataError("event '" + e.label + "': interval must lie inside the clip");
    const auto [f_lo, f_hi] = band_range_hz(e.band_lo, e.band_hi, rate, config);
    const auto start = static_cast<std::size_t>(std::llround(e.onset * rate));
    const auto stop = std::min(total, static_cast<std::size_t>(std::llround(e.offset * rate)));
    if (stop <= start) continue;
    const auto u = render_source(e, stop - start, rate, f_lo, f_hi, rng);
    for (std::size_t n = 0; n < u.size(); ++n) {
      scene.clip.channels[0][start + n] += u[n];
      const long j = static_cast<long>(start + n) + e.delay;
      if (j >= 0 && j < static_cast<long>(total)) scene.clip.channels[1][static_cast<std::size_t>(j)] += u[n];
    }
  }

  std::vector<Event> sorted;
  for (const auto& e : plan.events) sorted.push_back({e.onset, e.offset, e.label});
  std::sort(sorted.begin(), sorted.end(), [](const Event& a, const Event& b) {
    return a.label != b.label ? a.label < b.label : a.onset < b.onset;
  });
  for (const auto& e : sorted) {
    auto& out = scene.truth.events;
    if (!out.empty() && out.back().label == e.label && e.onset <= out.back().offset)
      out.back().offset = std::max(out.back().offset, e.offset);
    else
      out.push_back(e);
  }
  std::stable_sort(scene.truth.events.begin(), scene.truth.events.end(),
                   [](const Event& a, const Event& b) { return a.onset < b.onset; });
  return scene;
}

std::vector<ClassSignature> default_class_signatures() {
  return {
      {"engine", 0, 1, 8, SourceKind::Noise, 0.0, 0.1},
      {"alarm", 2, 3, -8, SourceKind::Harmonic, 700.0, 0.08},
      {"footsteps", 2, 4, 3, SourceKind::Noise, 0.0, 0.06},
  };
}

ScenePlan random_scene_plan(const std::vector<ClassSignature>& classes,
                            const ScenePlanOptions& options, std::mt19937_64& rng) {
  ScenePlan plan;
  plan.duration = options.duration;
  plan.sample_rate = options.sample_rate;
  std::uniform_real_distribution<double> event_len(options.min_event, options.max_event);
  std::uniform_real_distribution<double> gap(options.min_gap, options.max_gap);
  for (const auto& c : classes) {
    double t = std::uniform_real_distribution<double>(0.0, options.max_gap)(rng);
    while (t + options.min_event <= options.duration) {
      const double off = std::min(options.duration, t + event_len(rng));
      // Round to milliseconds so plans survive a text round trip exactly.
      const double on_ms = std::round(t * 1000.0) / 1000.0;
      const double off_ms = std::round(off * 1000.0) / 1000.0;
      plan.events.push_back({c.label, c.band_lo, c.band_hi, c.delay, on_ms, off_ms, c.kind, c.f0, c.gain});
      t = off + gap(rng);
    }
  }
  std::stable_sort(plan.events.begin(), plan.events.end(),
                   [](const PlannedEvent& a, const PlannedEvent& b) { return a.onset < b.onset; });
  return plan;
}

}  // namespace stereosed
