#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace stereosed {

/// Real-to-complex / complex-to-real FFT of one size backed by FFTW.
/// Plans use FFTW_ESTIMATE so results are reproducible run to run.
/// Not thread-safe: use one instance per thread.
class RealFft {
 public:
  explicit RealFft(std::size_t size);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return size_; }

  /// Forward transform of `size()` real samples into size()/2 + 1 bins (unnormalised).
  void forward(std::span<const double> in, std::span<std::complex<double>> out);

  /// Inverse of a Hermitian half-spectrum (unnormalised: forward then inverse scales by size()).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  std::size_t size_;
  double* real_ = nullptr;
  void* spectrum_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

/// Complex spectrum of an arbitrary-length real signal (all `n` bins).
std::vector<std::complex<double>> full_fft(std::span<const double> signal);

/// Real part of the inverse of an arbitrary-length full spectrum, scaled by 1/n.
std::vector<double> full_ifft_real(std::span<const std::complex<double>> spectrum);

}  // namespace stereosed
