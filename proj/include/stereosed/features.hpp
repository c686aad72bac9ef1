#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stereosed/audio.hpp"

namespace stereosed {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Configuration

struct FeatureConfig {
  FrameGrid grid;              // 40 ms Hamming frames, 20 ms hop
  std::size_t fft_size = 0;    // 0 selects next_pow2(frame length)

  int mel_bands = 40;
  double mel_fmin = 0.0;
  double mel_fmax = 0.0;       // 0 selects sample_rate / 2
  double log_floor = 1e-10;    // added to band power before the log

  double pitch_fmin = 100.0;
  double pitch_fmax = 4000.0;
  double pitch_threshold = 0.1;  // fraction of the frame's peak magnitude

  int tdoa_bands = 5;
  std::vector<double> tdoa_windows_ms{120.0, 240.0, 480.0};
  double mic_spacing_m = 0.20;
  double speed_of_sound = 343.0;
  double phat_floor = 1e-20;   // |X1||X2| below this contributes nothing
  int median_kernel = 3;

  /// Largest physical inter-microphone delay in samples: ceil(d / c * fs).
  int tau_max(int sample_rate) const;
  /// Search bound for the correlation peak: 2 * tau_max.
  int max_lag(int sample_rate) const { return 2 * tau_max(sample_rate); }
};

// ---------------------------------------------------------------------------
// Mel filterbank

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
  Matrix weights;                 // band_count x (fft_size / 2 + 1), triangular, peak 1
  std::vector<double> edges_hz;   // band_count + 2 mel-spaced corner frequencies
  std::size_t fft_size = 0;
  int sample_rate = 0;
  double f_min = 0.0;
  double f_max = 0.0;

  int band_count() const { return static_cast<int>(weights.rows()); }
};

/// Triangular bands with centres equally spaced in mel between f_min and f_max.
/// A band too narrow to touch any bin centre gets unit weight on its nearest bin.
MelFilterbank build_mel_filterbank(int band_count, std::size_t fft_size, int sample_rate,
                                   double f_min, double f_max);

// ---------------------------------------------------------------------------
// Feature layout

enum class FeatureFamily { Mel, Pitch, Pitch3, Tdoa, Tdoa3 };

/// Per-channel width of a family: mel 40, pitch 2, pitch3 6, tdoa 5, tdoa3 15.
int family_width(FeatureFamily family, const FeatureConfig& config = {});
std::string family_name(FeatureFamily family);
bool family_is_stereo_only(FeatureFamily family);

/// One named column block of a feature matrix.
struct FeatureBlock {
  std::string name;  // e.g. "mel.left", "pitch3.mono", "tdoa"
  FeatureFamily family = FeatureFamily::Mel;
  int width = 0;

  bool operator==(const FeatureBlock&) const = default;
};

struct FeatureLayout {
  std::vector<FeatureBlock> blocks;

  int width() const;
  /// Column offset of block `i`.
  int offset(std::size_t i) const;
  bool operator==(const FeatureLayout&) const = default;
};

struct FeatureMatrix {
  Matrix values;  // frames x width
  FeatureLayout layout;

  std::size_t frame_count() const { return static_cast<std::size_t>(values.rows()); }
  int width() const { return static_cast<int>(values.cols()); }
};

/// One term of a combination string such as "mel_2" or "tdoa3".
struct CombinationTerm {
  FeatureFamily family = FeatureFamily::Mel;
  int channels = 0;  // 1 = downmixed mono, 2 = left then right; 0 for stereo-only families

  bool operator==(const CombinationTerm&) const = default;
};

/// Parses "mel_2;tdoa;pitch_2". Throws UsageError on unknown names or subscripts.
std::vector<CombinationTerm> parse_combination(const std::string& combination);

/// Layout implied by a combination, without touching any audio.
FeatureLayout layout_for(const std::string& combination, const FeatureConfig& config = {});

/// The fourteen RNN feature combinations of the ablation table, in table order.
const std::vector<std::string>& ablation_combinations();

// ---------------------------------------------------------------------------
// Extractors

FeatureMatrix extract_log_mel(const Spectrogram& spec, const MelFilterbank& fb,
                              double log_floor = 1e-10);

struct PitchEstimate {
  double frequency = 0.0;    // Hz, 0 when absent
  double periodicity = 0.0;  // [0, 1]
};

/// Dominant peaks of one magnitude-spectrum frame, strongest first, at most `top_k`.
std::vector<PitchEstimate> pitch_peaks(std::span<const double> magnitude, std::size_t fft_size,
                                       int sample_rate, std::size_t top_k,
                                       const FeatureConfig& config = {});

/// (frequency, periodicity) pairs per frame; width 2 * top_k, missing peaks filled with zeros.
FeatureMatrix extract_pitch(const Spectrogram& spec, int top_k, const FeatureConfig& config = {});

/// Per-band GCC-PHAT delays of one frame pair. Positive delay means channel 2
/// lags channel 1. The search covers integer lags in [-max_lag, max_lag];
/// ties go to the smaller |lag|, then to the negative lag.
std::vector<int> gcc_phat_frame(std::span<const std::complex<double>> x1,
                                std::span<const std::complex<double>> x2, const MelFilterbank& fb,
                                int max_lag, double phat_floor = 1e-20);

int gcc_phat_band(const Spectrogram& spec1, const Spectrogram& spec2, const MelFilterbank& fb,
                  std::size_t frame, int band, int max_lag, double phat_floor = 1e-20);

/// Temporal median filter per column; the kernel is truncated at the edges.
Matrix median_filter_columns(const Matrix& values, int kernel);

enum class TdoaVariant { Median, Concatenated };

/// Multi-window TDOA on the feature grid. Windows are centred on each frame
/// centre of `config.grid` and zero-padded past the clip edges.
FeatureMatrix extract_tdoa(const AudioClip& clip, TdoaVariant variant,
                           const FeatureConfig& config = {});

/// Computes and concatenates every block of the combination on a shared frame grid.
FeatureMatrix assemble_features(const AudioClip& clip, const std::string& combination,
                                const FeatureConfig& config = {});

}  // namespace stereosed
