#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stereosed/error.hpp"

namespace stereosed {

/// Multichannel PCM audio with amplitudes in [-1, 1].
struct AudioClip {
  std::vector<std::vector<double>> channels;
  int sample_rate = 0;

  int channel_count() const { return static_cast<int>(channels.size()); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels.front().size(); }

  /// Throws DataError unless 1-2 equal-length channels and a positive rate.
  void validate() const;
};

/// Raised by the WAV reader. `kind` distinguishes the failure class.
class AudioError : public DataError {
 public:
  enum class Kind { Unreadable, Malformed, UnsupportedEncoding, Empty };
  AudioError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

AudioClip decode_wav(const std::filesystem::path& path);

struct WavInfo {
  int channel_count = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  std::size_t frames = 0;
};

/// Reads only the RIFF headers; raises the same errors as decode_wav.
WavInfo probe_wav(const std::filesystem::path& path);

/// Writes 16- or 24-bit little-endian PCM. Samples are rounded to the nearest
/// code and clipped, so decode(encode(decode(f))) is bit-identical.
void write_wav(const std::filesystem::path& path, const AudioClip& clip, int bits_per_sample);

AudioClip downmix_to_mono(const AudioClip& clip);

enum class WindowType { Hamming, Rectangular };

/// Periodic window of the given length.
std::vector<double> make_window(WindowType type, std::size_t length);

/// Frame layout shared by all extractors. Durations are in milliseconds and
/// converted to samples with the clip's own rate.
struct FrameGrid {
  double frame_length_ms = 40.0;
  double hop_length_ms = 20.0;
  WindowType window = WindowType::Hamming;

  std::size_t frame_samples(int sample_rate) const;
  std::size_t hop_samples(int sample_rate) const;
  /// floor((n - frame) / hop) + 1; zero when the clip is shorter than a frame.
  std::size_t frame_count(std::size_t num_samples, int sample_rate) const;
  /// Time in seconds of the centre of frame `t`.
  double frame_center_seconds(std::size_t t, int sample_rate) const;
};

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One channel's STFT: frames x (fft_size / 2 + 1) bins.
struct Spectrogram {
  ComplexMatrix bins;
  std::size_t fft_size = 0;
  int sample_rate = 0;
  FrameGrid grid;
  int channel_index = 0;

  std::size_t frame_count() const { return static_cast<std::size_t>(bins.rows()); }
  std::size_t bin_count() const { return static_cast<std::size_t>(bins.cols()); }
};

/// Smallest power of two >= n.
std::size_t next_pow2(std::size_t n);

/// Default FFT size for a grid: next power of two above the frame length.
std::size_t default_fft_size(const FrameGrid& grid, int sample_rate);

/// One spectrogram per channel. Each frame is windowed then zero-padded to
/// `fft_size`; the trailing partial frame is dropped.
std::vector<Spectrogram> stft(const AudioClip& clip, const FrameGrid& grid, std::size_t fft_size);

}  // namespace stereosed
