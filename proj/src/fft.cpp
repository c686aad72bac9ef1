#include "stereosed/fft.hpp"

#include <algorithm>
#include <stdexcept>

#include <fftw3.h>

namespace stereosed {

RealFft::RealFft(std::size_t size) : size_(size) {
  if (size == 0) throw std::invalid_argument("RealFft: size must be positive");
  const int n = static_cast<int>(size);
  real_ = fftw_alloc_real(size);
  auto* spec = fftw_alloc_complex(size / 2 + 1);
  spectrum_ = spec;
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spec, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spec, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(real_);
  fftw_free(spectrum_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  if (in.size() != size_ || out.size() != size_ / 2 + 1)
    throw std::invalid_argument("RealFft::forward: size mismatch");
  std::copy(in.begin(), in.end(), real_);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  const auto* spec = static_cast<const fftw_complex*>(spectrum_);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = {spec[k][0], spec[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  if (in.size() != size_ / 2 + 1 || out.size() != size_)
    throw std::invalid_argument("RealFft::inverse: size mismatch");
  auto* spec = static_cast<fftw_complex*>(spectrum_);
  for (std::size_t k = 0; k < in.size(); ++k) {
    spec[k][0] = in[k].real();
    spec[k][1] = in[k].imag();
  }
  // c2r destroys its input, which is fine: the buffer is rewritten every call.
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  std::copy(real_, real_ + size_, out.begin());
}

std::vector<std::complex<double>> full_fft(std::span<const double> signal) {
  const std::size_t n = signal.size();
  std::vector<std::complex<double>> out(n);
  if (n == 0) return out;
  auto* in = fftw_alloc_complex(n);
  auto* res = fftw_alloc_complex(n);
  for (std::size_t i = 0; i < n; ++i) {
    in[i][0] = signal[i];
    in[i][1] = 0.0;
  }
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), in, res, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  for (std::size_t i = 0; i < n; ++i) out[i] = {res[i][0], res[i][1]};
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(res);
  return out;
}

std::vector<double> full_ifft_real(std::span<const std::complex<double>> spectrum) {
  const std::size_t n = spectrum.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  auto* in = fftw_alloc_complex(n);
  auto* res = fftw_alloc_complex(n);
  for (std::size_t i = 0; i < n; ++i) {
    in[i][0] = spectrum[i].real();
    in[i][1] = spectrum[i].imag();
  }
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), in, res, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  for (std::size_t i = 0; i < n; ++i) out[i] = res[i][0] / static_cast<double>(n);
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(res);
  return out;
}

}  // namespace stereosed
