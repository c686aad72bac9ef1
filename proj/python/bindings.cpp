#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "stereosed/config.hpp"
#include "stereosed/dataset.hpp"
#include "stereosed/features.hpp"
#include "stereosed/metrics.hpp"
#include "stereosed/model.hpp"
#include "stereosed/pipeline.hpp"

namespace py = pybind11;
using namespace stereosed;

namespace {

using AudioArray = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// channels x samples <-> AudioClip
AudioClip to_clip(const AudioArray& samples, int sample_rate) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  for (Eigen::Index c = 0; c < samples.rows(); ++c)
    clip.channels.emplace_back(samples.row(c).data(), samples.row(c).data() + samples.cols());
  clip.validate();
  return clip;
}

AudioArray from_clip(const AudioClip& clip) {
  AudioArray out(clip.channel_count(), static_cast<Eigen::Index>(clip.num_samples()));
  for (int c = 0; c < clip.channel_count(); ++c)
    out.row(c) = Eigen::Map<const Eigen::RowVectorXd>(clip.channels[std::size_t(c)].data(), out.cols());
  return out;
}

py::dict counts_dict(const SegmentCounts& c) {
  py::dict d;
  d["segments"] = c.segments;
  d["reference"] = c.reference;
  d["tp"] = c.tp;
  d["fp"] = c.fp;
  d["fn"] = c.fn;
  d["substitutions"] = c.substitutions;
  d["deletions"] = c.deletions;
  d["insertions"] = c.insertions;
  d["error_rate"] = c.error_rate();
  d["f_score"] = c.f_score();
  return d;
}

SegmentCounts counts_from(const py::dict& d) {
  SegmentCounts c;
  c.segments = d["segments"].cast<long long>();
  c.reference = d["reference"].cast<long long>();
  c.tp = d["tp"].cast<long long>();
  c.fp = d["fp"].cast<long long>();
  c.fn = d["fn"].cast<long long>();
  c.substitutions = d["substitutions"].cast<long long>();
  c.deletions = d["deletions"].cast<long long>();
  c.insertions = d["insertions"].cast<long long>();
  return c;
}

py::dict row_dict(const EvaluationRow& row) {
  py::dict d;
  d["combination"] = row.combination;
  d["average_error_rate"] = row.average_error_rate;
  d["average_f_score"] = row.average_f_score;
  d["error"] = row.error;
  py::dict contexts;
  for (const auto& c : row.contexts) {
    auto r = counts_dict(c.report.totals);
    r["error_rate"] = c.report.error_rate;
    r["f_score"] = c.report.f_score;
    contexts[py::str(c.context)] = r;
  }
  d["contexts"] = contexts;
  return d;
}

EventRoll make_roll(const RollMatrix& activity, std::size_t classes) {
  EventRoll r;
  r.activity = activity;
  for (std::size_t c = 0; c < classes; ++c) r.class_order.push_back("c" + std::to_string(c));
  return r;
}

py::list events_list(const EventList& events) {
  py::list out;
  for (const auto& e : events.events) out.append(py::make_tuple(e.onset, e.offset, e.label));
  return out;
}

// Runs a pipeline stage, collecting its progress log into a string.
template <typename F>
auto with_log(F&& f, bool verbose) {
  std::ostringstream log;
  auto result = f(verbose ? &log : nullptr);
  if (verbose) py::print(log.str(), py::arg("end") = "");
  return result;
}

}  // namespace

PYBIND11_MODULE(_stereosed, m) {
  m.doc() = "Polyphonic sound event detection with spatial and harmonic features";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  // Audio
  m.def(
      "read_wav",
      [](const std::filesystem::path& path) {
        const auto clip = decode_wav(path);
        return py::make_tuple(from_clip(clip), clip.sample_rate);
      },
      py::arg("path"), "Decode a PCM WAV file to (channels x samples array, sample_rate).");
  m.def(
      "write_wav",
      [](const std::filesystem::path& path, const AudioArray& samples, int sample_rate, int bits) {
        write_wav(path, to_clip(samples, sample_rate), bits);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate"), py::arg("bits_per_sample") = 16);

  // Features
  m.def("ablation_combinations", &ablation_combinations);
  m.def(
      "combination_width", [](const std::string& c) { return layout_for(c).width(); }, py::arg("combination"));
  m.def(
      "tau_max", [](int sample_rate) { return FeatureConfig{}.tau_max(sample_rate); }, py::arg("sample_rate"));
  m.def(
      "extract_features",
      [](const AudioArray& samples, int sample_rate, const std::string& combination) {
        return assemble_features(to_clip(samples, sample_rate), combination).values;
      },
      py::arg("samples"), py::arg("sample_rate"), py::arg("combination"),
      "Frames x width feature matrix for a combination such as 'mel_2;tdoa;pitch_2'.");
  m.def(
      "extract_tdoa",
      [](const AudioArray& samples, int sample_rate, bool concatenated) {
        return extract_tdoa(to_clip(samples, sample_rate),
                            concatenated ? TdoaVariant::Concatenated : TdoaVariant::Median)
            .values;
      },
      py::arg("samples"), py::arg("sample_rate"), py::arg("concatenated") = false);
  m.def(
      "pitch_peaks",
      [](const Eigen::VectorXd& magnitude, std::size_t fft_size, int sample_rate, std::size_t top_k) {
        py::list out;
        for (const auto& p : pitch_peaks({magnitude.data(), std::size_t(magnitude.size())}, fft_size, sample_rate, top_k))
          out.append(py::make_tuple(p.frequency, p.periodicity));
        return out;
      },
      py::arg("magnitude"), py::arg("fft_size"), py::arg("sample_rate"), py::arg("top_k") = 1);

  // Annotations and rolls
  m.def(
      "read_annotations", [](const std::filesystem::path& p) { return events_list(parse_annotations(p)); },
      py::arg("path"));
  m.def(
      "rasterize",
      [](const std::vector<std::tuple<double, double, std::string>>& events, std::size_t frames,
         const std::vector<std::string>& classes, int sample_rate) {
        EventList list;
        for (const auto& [on, off, label] : events) list.events.push_back({on, off, label});
        return rasterize(list, frames, classes, FrameGrid{}, sample_rate).activity;
      },
      py::arg("events"), py::arg("frames"), py::arg("classes"), py::arg("sample_rate"));
  m.def(
      "make_folds",
      [](const std::vector<std::string>& ids, int folds, double validation_fraction, std::uint64_t seed) {
        py::list out;
        for (const auto& f : make_folds(ids, folds, validation_fraction, seed)) {
          py::dict d;
          d["fold"] = f.fold_index;
          d["train"] = f.train;
          d["validation"] = f.validation;
          d["test"] = f.test;
          out.append(d);
        }
        return out;
      },
      py::arg("recordings"), py::arg("folds"), py::arg("validation_fraction") = 0.2, py::arg("seed") = 1);

  // Metrics
  m.def(
      "score",
      [](const RollMatrix& reference, const RollMatrix& system, int frames_per_segment) {
        const auto classes = std::size_t(reference.cols());
        return counts_dict(score(make_roll(reference, classes), make_roll(system, std::size_t(system.cols())),
                                 frames_per_segment));
      },
      py::arg("reference"), py::arg("system"), py::arg("frames_per_segment") = 50,
      "Segment-based counts, error rate and F-score of two frames x classes binary rolls.");
  m.def(
      "combine_folds",
      [](const std::vector<py::dict>& folds, const std::string& aggregation) {
        std::vector<SegmentCounts> counts;
        for (const auto& f : folds) counts.push_back(counts_from(f));
        if (aggregation != "micro" && aggregation != "macro") throw UsageError("aggregation must be micro or macro");
        const auto r = combine_folds(counts, aggregation == "micro" ? Aggregation::Micro : Aggregation::Macro);
        auto d = counts_dict(r.totals);
        d["error_rate"] = r.error_rate;
        d["f_score"] = r.f_score;
        return d;
      },
      py::arg("folds"), py::arg("aggregation") = "micro");

  // Model
  m.def(
      "gradient_check",
      [](const std::vector<int>& layer_sizes, int steps, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const auto params = NetworkParams::random(layer_sizes, rng);
        std::normal_distribution<double> n;
        Sequence s;
        s.inputs = Eigen::MatrixXd::NullaryExpr(layer_sizes.front(), steps, [&] { return n(rng); });
        s.targets = Eigen::MatrixXd::NullaryExpr(layer_sizes.back(), steps, [&] { return n(rng) > 0 ? 1.0 : 0.0; });
        s.mask = Eigen::VectorXd::Ones(steps);
        const auto batch = make_batch(std::vector<Sequence>{s});
        const auto lg = backward(params, batch);
        Eigen::VectorXd numeric(params.size());
        auto probe = params;
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < params.size(); ++i) {
          probe.flat()(i) = params.flat()(i) + h;
          const double up = bce_loss(forward(probe, batch), batch.targets, batch.mask);
          probe.flat()(i) = params.flat()(i) - h;
          const double down = bce_loss(forward(probe, batch), batch.targets, batch.mask);
          probe.flat()(i) = params.flat()(i);
          numeric(i) = (up - down) / (2 * h);
        }
        return py::make_tuple(lg.gradient, numeric);
      },
      py::arg("layer_sizes"), py::arg("steps") = 5, py::arg("seed") = 1,
      "(analytic, central-difference) gradients of a random network on random data.");

  // Pipeline; configs are JSON text in the CLI's config.json format.
  m.def(
      "default_config", [] { return to_json_text(RunConfig{}); }, "Default run configuration as JSON text.");
  m.def(
      "extract",
      [](const std::string& config, bool verbose) {
        with_log([&](std::ostream* log) { cmd_extract(run_config_from_json_text(config), log); return 0; }, verbose);
      },
      py::arg("config"), py::arg("verbose") = false);
  m.def(
      "train",
      [](const std::string& config, bool verbose) {
        const auto results =
            with_log([&](std::ostream* log) { return cmd_train(run_config_from_json_text(config), log); }, verbose);
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["context"] = r.context;
          d["fold"] = r.fold_index;
          d["epochs"] = r.epochs_run;
          d["best_epoch"] = r.best_epoch;
          d["best_validation_er"] = r.best_validation_er;
          d["test"] = counts_dict(r.test_counts);
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("verbose") = false);
  m.def(
      "evaluate",
      [](const std::string& config, bool verbose) {
        return row_dict(
            with_log([&](std::ostream* log) { return cmd_evaluate(run_config_from_json_text(config), log); }, verbose));
      },
      py::arg("config"), py::arg("verbose") = false);
  m.def(
      "ablate",
      [](const std::string& config, bool verbose) {
        const auto rows =
            with_log([&](std::ostream* log) { return cmd_ablate(run_config_from_json_text(config), log); }, verbose);
        py::list out;
        for (const auto& r : rows) out.append(row_dict(r));
        return out;
      },
      py::arg("config"), py::arg("verbose") = false);
  m.def(
      "detect",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& audio, double threshold) {
        return events_list(cmd_detect(checkpoint, audio, threshold));
      },
      py::arg("checkpoint"), py::arg("audio"), py::arg("threshold") = 0.5);
  m.def(
      "synth_dataset",
      [](const std::filesystem::path& root, const std::string& context, int count, double duration,
         int sample_rate, std::uint64_t seed) {
        ScenePlanOptions options;
        options.duration = duration;
        options.sample_rate = sample_rate;
        synth_dataset(root, context, count, options, default_class_signatures(), seed);
      },
      py::arg("data_root"), py::arg("context"), py::arg("count"), py::arg("duration") = 30.0,
      py::arg("sample_rate") = 16000, py::arg("seed") = 1);
}
