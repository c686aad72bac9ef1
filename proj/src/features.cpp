#include "stereosed/features.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "stereosed/fft.hpp"

namespace stereosed {

int FeatureConfig::tau_max(int sample_rate) const {
  return static_cast<int>(std::ceil(mic_spacing_m / speed_of_sound * sample_rate - 1e-9));
}

// ---------------------------------------------------------------------------
// Mel filterbank

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank build_mel_filterbank(int band_count, std::size_t fft_size, int sample_rate,
                                   double f_min, double f_max) {
  if (band_count < 1) throw UsageError("mel filterbank: band count must be >= 1");
  if (sample_rate <= 0 || fft_size < 2) throw UsageError("mel filterbank: invalid fft size or rate");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw UsageError("mel filterbank: need 0 <= f_min < f_max <= sample_rate / 2");

  MelFilterbank fb;
  fb.fft_size = fft_size;
  fb.sample_rate = sample_rate;
  fb.f_min = f_min;
  fb.f_max = f_max;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  fb.edges_hz.resize(static_cast<std::size_t>(band_count) + 2);
  for (std::size_t i = 0; i < fb.edges_hz.size(); ++i)
    fb.edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                            static_cast<double>(band_count + 1));
  fb.edges_hz.front() = f_min;
  fb.edges_hz.back() = f_max;

  const std::size_t bins = fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_size);
  fb.weights = Matrix::Zero(band_count, static_cast<Eigen::Index>(bins));
  for (int b = 0; b < band_count; ++b) {
    const double lo = fb.edges_hz[static_cast<std::size_t>(b)];
    const double centre = fb.edges_hz[static_cast<std::size_t>(b) + 1];
    const double hi = fb.edges_hz[static_cast<std::size_t>(b) + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = std::max(0.0, std::min((f - lo) / (centre - lo), (hi - f) / (hi - centre)));
      if (w > 0.0) {
        fb.weights(b, static_cast<Eigen::Index>(k)) = w;
        any = true;
      }
    }
    if (!any) {
      const auto k = std::min<std::size_t>(bins - 1, static_cast<std::size_t>(std::llround(centre / bin_hz)));
      fb.weights(b, static_cast<Eigen::Index>(k)) = 1.0;
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Layout

int family_width(FeatureFamily family, const FeatureConfig& config) {
  switch (family) {
    case FeatureFamily::Mel: return config.mel_bands;
    case FeatureFamily::Pitch: return 2;
    case FeatureFamily::Pitch3: return 6;
    case FeatureFamily::Tdoa: return config.tdoa_bands;
    case FeatureFamily::Tdoa3:
      return config.tdoa_bands * static_cast<int>(config.tdoa_windows_ms.size());
  }
  return 0;
}

std::string family_name(FeatureFamily family) {
  switch (family) {
    case FeatureFamily::Mel: return "mel";
    case FeatureFamily::Pitch: return "pitch";
    case FeatureFamily::Pitch3: return "pitch3";
    case FeatureFamily::Tdoa: return "tdoa";
    case FeatureFamily::Tdoa3: return "tdoa3";
  }
  return {};
}

bool family_is_stereo_only(FeatureFamily family) {
  return family == FeatureFamily::Tdoa || family == FeatureFamily::Tdoa3;
}

int FeatureLayout::width() const {
  int w = 0;
  for (const auto& b : blocks) w += b.width;
  return w;
}

int FeatureLayout::offset(std::size_t i) const {
  int w = 0;
  for (std::size_t j = 0; j < i && j < blocks.size(); ++j) w += blocks[j].width;
  return w;
}

namespace {

std::optional<FeatureFamily> family_from_name(const std::string& name) {
  for (auto f : {FeatureFamily::Mel, FeatureFamily::Pitch, FeatureFamily::Pitch3,
                 FeatureFamily::Tdoa, FeatureFamily::Tdoa3})
    if (family_name(f) == name) return f;
  return std::nullopt;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<CombinationTerm> parse_combination(const std::string& combination) {
  std::vector<CombinationTerm> terms;
  std::stringstream ss(combination);
  std::string token;
  while (std::getline(ss, token, ';')) {
    token = trim(token);
    if (token.empty()) throw UsageError("feature combination '" + combination + "' has an empty term");
    std::string base = token;
    int channels = 0;
    if (const auto us = token.rfind('_'); us != std::string::npos) {
      base = token.substr(0, us);
      const std::string sub = token.substr(us + 1);
      if (sub == "1") channels = 1;
      else if (sub == "2") channels = 2;
      else throw UsageError("feature term '" + token + "' has an invalid channel subscript");
    }
    const auto family = family_from_name(base);
    if (!family) throw UsageError("unknown feature block '" + base + "' in '" + combination + "'");
    if (family_is_stereo_only(*family)) {
      if (channels != 0)
        throw UsageError("feature block '" + base + "' is inherently stereo and takes no subscript");
    } else if (channels == 0) {
      throw UsageError("feature block '" + base + "' needs a channel subscript (_1 or _2)");
    }
    terms.push_back({*family, channels});
  }
  if (terms.empty()) throw UsageError("empty feature combination");
  return terms;
}

FeatureLayout layout_for(const std::string& combination, const FeatureConfig& config) {
  FeatureLayout layout;
  for (const auto& term : parse_combination(combination)) {
    const std::string name = family_name(term.family);
    const int width = family_width(term.family, config);
    if (term.channels == 0) {
      layout.blocks.push_back({name, term.family, width});
    } else if (term.channels == 1) {
      layout.blocks.push_back({name + ".mono", term.family, width});
    } else {
      layout.blocks.push_back({name + ".left", term.family, width});
      layout.blocks.push_back({name + ".right", term.family, width});
    }
  }
  return layout;
}

const std::vector<std::string>& ablation_combinations() {
  static const std::vector<std::string> kCombinations{
      "mel_1",
      "mel_1;pitch_1",
      "mel_1;pitch3_1",
      "mel_1;tdoa",
      "mel_1;tdoa3",
      "mel_2",
      "mel_2;pitch_2",
      "mel_2;pitch3_2",
      "mel_2;tdoa",
      "mel_2;tdoa3",
      "mel_2;tdoa3;pitch_2",
      "mel_2;tdoa3;pitch3_2",
      "mel_2;tdoa;pitch_2",
      "mel_2;tdoa;pitch3_2",
  };
  return kCombinations;
}

// ---------------------------------------------------------------------------
// Log mel

FeatureMatrix extract_log_mel(const Spectrogram& spec, const MelFilterbank& fb, double log_floor) {
  if (fb.fft_size != spec.fft_size || fb.sample_rate != spec.sample_rate ||
      static_cast<std::size_t>(fb.weights.cols()) != spec.bin_count())
    throw UsageError("extract_log_mel: filterbank does not match the spectrogram");
  const Matrix power = spec.bins.cwiseAbs2();
  FeatureMatrix out;
  out.values = ((power * fb.weights.transpose()).array() + log_floor).log().matrix();
  out.layout.blocks.push_back({"mel", FeatureFamily::Mel, fb.band_count()});
  return out;
}

// ---------------------------------------------------------------------------
// Pitch

std::vector<PitchEstimate> pitch_peaks(std::span<const double> magnitude, std::size_t fft_size,
                                       int sample_rate, std::size_t top_k,
                                       const FeatureConfig& config) {
  std::vector<PitchEstimate> peaks;
  if (magnitude.size() < 3) return peaks;
  const double frame_max = *std::max_element(magnitude.begin(), magnitude.end());
  if (!(frame_max > 0.0)) return peaks;
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(fft_size);
  const double threshold = config.pitch_threshold * frame_max;

  struct Candidate {
    double frequency, magnitude;
  };
  std::vector<Candidate> candidates;
  // The range test applies to the interpolated frequency, with half a bin of
  // slack so tones right at the limits survive interpolation bias; the result
  // is then clamped into the range.
  const double lo = config.pitch_fmin - 0.5 * bin_hz, hi = config.pitch_fmax + 0.5 * bin_hz;
  for (std::size_t k = 1; k + 1 < magnitude.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < lo - bin_hz || f > hi + bin_hz) continue;
    const double m = magnitude[k];
    if (m < threshold || !(m > magnitude[k - 1]) || m < magnitude[k + 1]) continue;
    double shift = 0.0;
    double peak = m;
    if (magnitude[k - 1] > 0.0 && magnitude[k + 1] > 0.0) {
      // Vertex of the parabola through the three log magnitudes.
      const double a = std::log(magnitude[k - 1]);
      const double b = std::log(m);
      const double c = std::log(magnitude[k + 1]);
      const double denom = a - 2.0 * b + c;
      if (denom < 0.0) {
        shift = 0.5 * (a - c) / denom;
        peak = std::exp(b - 0.25 * (a - c) * shift);
      }
    }
    const double raw = (static_cast<double>(k) + shift) * bin_hz;
    if (raw < lo || raw > hi) continue;
    candidates.push_back({std::clamp(raw, config.pitch_fmin, config.pitch_fmax), peak});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& x, const Candidate& y) { return x.magnitude > y.magnitude; });
  for (std::size_t i = 0; i < candidates.size() && i < top_k; ++i)
    peaks.push_back({candidates[i].frequency, std::min(1.0, candidates[i].magnitude / frame_max)});
  return peaks;
}

FeatureMatrix extract_pitch(const Spectrogram& spec, int top_k, const FeatureConfig& config) {
  if (top_k != 1 && top_k != 3) throw UsageError("extract_pitch: top_k must be 1 or 3");
  if (spec.bin_count() != spec.fft_size / 2 + 1 || spec.sample_rate <= 0)
    throw UsageError("extract_pitch: malformed spectrogram");
  FeatureMatrix out;
  out.values = Matrix::Zero(static_cast<Eigen::Index>(spec.frame_count()), 2 * top_k);
  std::vector<double> mag(spec.bin_count());
  for (std::size_t t = 0; t < spec.frame_count(); ++t) {
    for (std::size_t k = 0; k < mag.size(); ++k)
      mag[k] = std::abs(spec.bins(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)));
    const auto peaks =
        pitch_peaks(mag, spec.fft_size, spec.sample_rate, static_cast<std::size_t>(top_k), config);
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      out.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * i)) = peaks[i].frequency;
      out.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(2 * i + 1)) =
          peaks[i].periodicity;
    }
  }
  out.layout.blocks.push_back({top_k == 1 ? "pitch" : "pitch3",
                               top_k == 1 ? FeatureFamily::Pitch : FeatureFamily::Pitch3,
                               2 * top_k});
  return out;
}

// ---------------------------------------------------------------------------
// GCC-PHAT

namespace {

/// Reusable buffers for the per-band inverse transforms of one FFT size.
class PhatCorrelator {
 public:
  explicit PhatCorrelator(std::size_t fft_size)
      : fft_(fft_size), cross_(fft_size / 2 + 1), band_(fft_size / 2 + 1), corr_(fft_size) {}

  std::vector<int> delays(std::span<const std::complex<double>> x1,
                          std::span<const std::complex<double>> x2, const MelFilterbank& fb,
                          int max_lag, double floor) {
    const std::size_t n = fft_.size();
    const int lag_limit = std::min(max_lag, static_cast<int>(n / 2) - 1);
    for (std::size_t k = 0; k < cross_.size(); ++k) {
      const double norm = std::abs(x1[k]) * std::abs(x2[k]);
      // X2 X1* puts the correlation peak at +d when channel 2 lags by d samples.
      cross_[k] = norm < floor ? std::complex<double>{} : x2[k] * std::conj(x1[k]) / norm;
    }
    std::vector<int> out(static_cast<std::size_t>(fb.band_count()), 0);
    for (int b = 0; b < fb.band_count(); ++b) {
      for (std::size_t k = 0; k < band_.size(); ++k)
        band_[k] = fb.weights(b, static_cast<Eigen::Index>(k)) * cross_[k];
      fft_.inverse(band_, corr_);
      const auto at = [&](int lag) {
        return std::abs(corr_[static_cast<std::size_t>((lag + static_cast<long>(n)) % static_cast<long>(n))]);
      };
      int best = 0;
      double best_mag = at(0);
      for (int d = 1; d <= lag_limit; ++d) {
        for (int lag : {-d, d}) {
          const double m = at(lag);
          if (m > best_mag) {
            best_mag = m;
            best = lag;
          }
        }
      }
      out[static_cast<std::size_t>(b)] = best;
    }
    return out;
  }

 private:
  RealFft fft_;
  std::vector<std::complex<double>> cross_;
  std::vector<std::complex<double>> band_;
  std::vector<double> corr_;
};

}  // namespace

std::vector<int> gcc_phat_frame(std::span<const std::complex<double>> x1,
                                std::span<const std::complex<double>> x2, const MelFilterbank& fb,
                                int max_lag, double phat_floor) {
  const std::size_t bins = fb.fft_size / 2 + 1;
  if (x1.size() != bins || x2.size() != bins)
    throw UsageError("gcc_phat: spectra do not match the filterbank");
  PhatCorrelator corr(fb.fft_size);
  return corr.delays(x1, x2, fb, max_lag, phat_floor);
}

int gcc_phat_band(const Spectrogram& spec1, const Spectrogram& spec2, const MelFilterbank& fb,
                  std::size_t frame, int band, int max_lag, double phat_floor) {
  if (spec1.fft_size != spec2.fft_size || spec1.frame_count() != spec2.frame_count() ||
      spec1.sample_rate != spec2.sample_rate)
    throw UsageError("gcc_phat_band: spectrograms are on different grids");
  if (fb.fft_size != spec1.fft_size) throw UsageError("gcc_phat_band: filterbank size mismatch");
  if (band < 0 || band >= fb.band_count()) throw UsageError("gcc_phat_band: band out of range");
  if (frame >= spec1.frame_count()) throw UsageError("gcc_phat_band: frame out of range");
  const auto row = static_cast<Eigen::Index>(frame);
  const std::span<const std::complex<double>> x1(spec1.bins.row(row).data(), spec1.bin_count());
  const std::span<const std::complex<double>> x2(spec2.bins.row(row).data(), spec2.bin_count());
  return gcc_phat_frame(x1, x2, fb, max_lag, phat_floor)[static_cast<std::size_t>(band)];
}

Matrix median_filter_columns(const Matrix& values, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw UsageError("median filter kernel must be odd and >= 1");
  const Eigen::Index rows = values.rows();
  const Eigen::Index half = kernel / 2;
  Matrix out(rows, values.cols());
  std::vector<double> window;
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    for (Eigen::Index t = 0; t < rows; ++t) {
      window.clear();
      for (Eigen::Index j = std::max<Eigen::Index>(0, t - half); j <= std::min(rows - 1, t + half); ++j)
        window.push_back(values(j, c));
      std::sort(window.begin(), window.end());
      const std::size_t m = window.size();
      out(t, c) = m % 2 == 1 ? window[m / 2] : 0.5 * (window[m / 2 - 1] + window[m / 2]);
    }
  }
  return out;
}

FeatureMatrix extract_tdoa(const AudioClip& clip, TdoaVariant variant, const FeatureConfig& config) {
  clip.validate();
  if (clip.channel_count() != 2) throw DataError("TDOA features require a stereo clip");
  if (config.tdoa_windows_ms.empty()) throw UsageError("extract_tdoa: no window lengths configured");
  const int rate = clip.sample_rate;
  const std::size_t frames = config.grid.frame_count(clip.num_samples(), rate);
  if (frames == 0) throw DataError("extract_tdoa: clip is shorter than one frame");
  const int bands = config.tdoa_bands;
  const std::size_t window_count = config.tdoa_windows_ms.size();
  const int max_lag = config.max_lag(rate);

  Matrix per_window(static_cast<Eigen::Index>(frames),
                    static_cast<Eigen::Index>(window_count) * bands);
  const auto& left = clip.channels[0];
  const auto& right = clip.channels[1];
  const auto n_samples = static_cast<long>(clip.num_samples());

  for (std::size_t w = 0; w < window_count; ++w) {
    const auto length =
        static_cast<std::size_t>(std::llround(config.tdoa_windows_ms[w] * rate / 1000.0));
    const std::size_t fft_size = next_pow2(length);
    const auto window = make_window(WindowType::Hamming, length);
    const auto fb = build_mel_filterbank(bands, fft_size, rate, 0.0, rate / 2.0);
    RealFft fft(fft_size);
    PhatCorrelator corr(fft_size);
    std::vector<double> b1(fft_size, 0.0), b2(fft_size, 0.0);
    std::vector<std::complex<double>> x1(fft_size / 2 + 1), x2(fft_size / 2 + 1);
    for (std::size_t t = 0; t < frames; ++t) {
      const double centre = config.grid.frame_center_seconds(t, rate) * rate;
      const long start = std::lround(centre - static_cast<double>(length) / 2.0);
      for (std::size_t n = 0; n < length; ++n) {
        const long i = start + static_cast<long>(n);
        const bool inside = i >= 0 && i < n_samples;
        b1[n] = inside ? left[static_cast<std::size_t>(i)] * window[n] : 0.0;
        b2[n] = inside ? right[static_cast<std::size_t>(i)] * window[n] : 0.0;
      }
      fft.forward(b1, x1);
      fft.forward(b2, x2);
      const auto d = corr.delays(x1, x2, fb, max_lag, config.phat_floor);
      for (int b = 0; b < bands; ++b)
        per_window(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(w) * bands + b) =
            d[static_cast<std::size_t>(b)];
    }
  }

  FeatureMatrix out;
  if (variant == TdoaVariant::Concatenated) {
    out.values = std::move(per_window);
    out.layout.blocks.push_back({"tdoa3", FeatureFamily::Tdoa3, out.width()});
    return out;
  }
  Matrix median(static_cast<Eigen::Index>(frames), bands);
  std::vector<double> vals(window_count);
  for (Eigen::Index t = 0; t < median.rows(); ++t) {
    for (int b = 0; b < bands; ++b) {
      for (std::size_t w = 0; w < window_count; ++w)
        vals[w] = per_window(t, static_cast<Eigen::Index>(w) * bands + b);
      std::sort(vals.begin(), vals.end());
      const std::size_t m = vals.size();
      median(t, b) = m % 2 == 1 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
    }
  }
  out.values = median_filter_columns(median, config.median_kernel);
  out.layout.blocks.push_back({"tdoa", FeatureFamily::Tdoa, bands});
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

FeatureMatrix assemble_features(const AudioClip& clip, const std::string& combination,
                                const FeatureConfig& config) {
  clip.validate();
  const auto terms = parse_combination(combination);
  const bool stereo = clip.channel_count() == 2;
  for (const auto& t : terms) {
    if (!stereo && (family_is_stereo_only(t.family) || t.channels == 2))
      throw DataError("feature '" + family_name(t.family) + "' in '" + combination +
                      "' requires stereo audio");
  }

  const int rate = clip.sample_rate;
  const std::size_t fft_size = config.fft_size != 0 ? config.fft_size : default_fft_size(config.grid, rate);
  const double fmax = config.mel_fmax > 0.0 ? config.mel_fmax : rate / 2.0;

  // Spectrograms are computed lazily and shared between blocks.
  std::optional<Spectrogram> mono_spec;
  std::optional<std::vector<Spectrogram>> stereo_spec;
  const auto mono = [&]() -> const Spectrogram& {
    if (!mono_spec) mono_spec = stft(stereo ? downmix_to_mono(clip) : clip, config.grid, fft_size).front();
    return *mono_spec;
  };
  const auto channel = [&](int c) -> const Spectrogram& {
    if (!stereo_spec) stereo_spec = stft(clip, config.grid, fft_size);
    return (*stereo_spec)[static_cast<std::size_t>(c)];
  };
  std::optional<MelFilterbank> fb;
  const auto mel_fb = [&]() -> const MelFilterbank& {
    if (!fb) fb = build_mel_filterbank(config.mel_bands, fft_size, rate, config.mel_fmin, fmax);
    return *fb;
  };

  struct Piece {
    FeatureBlock block;
    Matrix values;
  };
  std::vector<Piece> pieces;
  const auto add = [&](FeatureMatrix m, const std::string& name) {
    FeatureBlock block = m.layout.blocks.front();
    block.name = name;
    pieces.push_back({block, std::move(m.values)});
  };
  const auto per_channel = [&](const CombinationTerm& term, auto&& compute) {
    const std::string base = family_name(term.family);
    if (term.channels == 1) {
      add(compute(mono()), base + ".mono");
    } else {
      add(compute(channel(0)), base + ".left");
      add(compute(channel(1)), base + ".right");
    }
  };

  for (const auto& term : terms) {
    switch (term.family) {
      case FeatureFamily::Mel:
        per_channel(term, [&](const Spectrogram& s) { return extract_log_mel(s, mel_fb(), config.log_floor); });
        break;
      case FeatureFamily::Pitch:
        per_channel(term, [&](const Spectrogram& s) { return extract_pitch(s, 1, config); });
        break;
      case FeatureFamily::Pitch3:
        per_channel(term, [&](const Spectrogram& s) { return extract_pitch(s, 3, config); });
        break;
      case FeatureFamily::Tdoa:
        add(extract_tdoa(clip, TdoaVariant::Median, config), "tdoa");
        break;
      case FeatureFamily::Tdoa3:
        add(extract_tdoa(clip, TdoaVariant::Concatenated, config), "tdoa3");
        break;
    }
  }

  Eigen::Index frames = pieces.front().values.rows();
  for (const auto& p : pieces) frames = std::min(frames, p.values.rows());
  FeatureMatrix out;
  Eigen::Index width = 0;
  for (const auto& p : pieces) width += p.values.cols();
  out.values.resize(frames, width);
  Eigen::Index col = 0;
  for (auto& p : pieces) {
    out.values.block(0, col, frames, p.values.cols()) = p.values.topRows(frames);
    col += p.values.cols();
    out.layout.blocks.push_back(p.block);
  }
  return out;
}

}  // namespace stereosed
