#include "stereosed/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "stereosed/fft.hpp"

namespace stereosed {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

void AudioClip::validate() const {
  if (channels.empty() || channels.size() > 2)
    throw DataError("audio clip must have 1 or 2 channels, got " + std::to_string(channels.size()));
  if (sample_rate <= 0) throw DataError("audio clip sample rate must be positive");
  for (const auto& c : channels)
    if (c.size() != channels.front().size())
      throw DataError("audio clip channels differ in length");
}

AudioClip decode_wav(const std::filesystem::path& path) {
  using Kind = AudioError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(Kind::Unreadable, "cannot open audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw AudioError(Kind::Unreadable, "read failure on audio file: " + path.string());

  const auto malformed = [&](const std::string& why) {
    return AudioError(Kind::Malformed, path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw malformed("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw malformed("truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      block_align = read_u16(f + 12);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw malformed("truncated extensible fmt chunk");
        format = read_u16(f + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave the data size at 0xFFFFFFFF for streams; clamp to the file.
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw malformed("missing fmt chunk");
  if (data == nullptr) throw malformed("missing data chunk");
  if (format != kFormatPcm)
    throw AudioError(Kind::UnsupportedEncoding,
                     path.string() + ": unsupported encoding (format tag " + std::to_string(format) +
                         "), only integer PCM is supported");
  if (bits != 16 && bits != 24)
    throw AudioError(Kind::UnsupportedEncoding,
                     path.string() + ": unsupported bit depth " + std::to_string(bits));
  if (channels < 1 || channels > 2)
    throw AudioError(Kind::UnsupportedEncoding,
                     path.string() + ": unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw malformed("zero sample rate");
  const std::size_t bytes_per_sample = bits / 8;
  if (block_align != bytes_per_sample * channels) throw malformed("inconsistent block alignment");

  const std::size_t frames = data_size / block_align;
  if (frames == 0) throw AudioError(Kind::Empty, path.string() + ": audio has zero samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.channels.assign(channels, std::vector<double>(frames));
  const double scale = bits == 16 ? 32768.0 : 8388608.0;
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* s = data + i * block_align + c * bytes_per_sample;
      std::int32_t v;
      if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(s));
      } else {
        v = static_cast<std::int32_t>(s[0] | (s[1] << 8) | (s[2] << 16));
        if (v & 0x800000) v -= 0x1000000;
      }
      clip.channels[c][i] = v / scale;
    }
  }
  return clip;
}

WavInfo probe_wav(const std::filesystem::path& path) {
  using Kind = AudioError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(Kind::Unreadable, "cannot open audio file: " + path.string());
  const auto malformed = [&](const std::string& why) {
    return AudioError(Kind::Malformed, path.string() + ": " + why);
  };
  std::array<unsigned char, 12> riff{};
  if (!in.read(reinterpret_cast<char*>(riff.data()), 12) || std::memcmp(riff.data(), "RIFF", 4) != 0 ||
      std::memcmp(riff.data() + 8, "WAVE", 4) != 0)
    throw malformed("not a RIFF/WAVE file");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  std::size_t pos = 12;
  WavInfo info;
  std::uint16_t format = 0, block_align = 0;
  bool have_fmt = false;
  while (pos + 8 <= file_size) {
    std::array<unsigned char, 8> head{};
    in.seekg(static_cast<std::streamoff>(pos));
    if (!in.read(reinterpret_cast<char*>(head.data()), 8)) break;
    const std::uint32_t size = read_u32(head.data() + 4);
    if (std::memcmp(head.data(), "fmt ", 4) == 0) {
      if (size < 16 || pos + 8 + size > file_size) throw malformed("truncated fmt chunk");
      std::vector<unsigned char> f(std::min<std::uint32_t>(size, 40));
      in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size()));
      format = read_u16(f.data());
      info.channel_count = read_u16(f.data() + 2);
      info.sample_rate = static_cast<int>(read_u32(f.data() + 4));
      block_align = read_u16(f.data() + 12);
      info.bits_per_sample = read_u16(f.data() + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw malformed("truncated extensible fmt chunk");
        format = read_u16(f.data() + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(head.data(), "data", 4) == 0) {
      if (!have_fmt) throw malformed("data chunk precedes fmt chunk");
      if (format != kFormatPcm)
        throw AudioError(Kind::UnsupportedEncoding, path.string() + ": unsupported encoding (format tag " +
                                                        std::to_string(format) + ")");
      if (info.bits_per_sample != 16 && info.bits_per_sample != 24)
        throw AudioError(Kind::UnsupportedEncoding,
                         path.string() + ": unsupported bit depth " + std::to_string(info.bits_per_sample));
      if (info.channel_count < 1 || info.channel_count > 2)
        throw AudioError(Kind::UnsupportedEncoding,
                         path.string() + ": unsupported channel count " + std::to_string(info.channel_count));
      if (block_align == 0) throw malformed("zero block alignment");
      info.frames = std::min<std::size_t>(size, file_size - pos - 8) / block_align;
      if (info.frames == 0) throw AudioError(Kind::Empty, path.string() + ": audio has zero samples");
      return info;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!have_fmt) throw malformed("missing fmt chunk");
  throw malformed("missing data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, int bits_per_sample) {
  clip.validate();
  if (bits_per_sample != 16 && bits_per_sample != 24)
    throw UsageError("write_wav: only 16- and 24-bit PCM are supported");
  const std::size_t bytes_per_sample = static_cast<std::size_t>(bits_per_sample) / 8;
  const auto channels = static_cast<std::uint16_t>(clip.channel_count());
  const std::size_t frames = clip.num_samples();
  const std::size_t data_size = frames * channels * bytes_per_sample;
  const double scale = bits_per_sample == 16 ? 32768.0 : 8388608.0;
  const double lo = -scale, hi = scale - 1.0;

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, static_cast<std::uint32_t>(36 + data_size));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate * channels * bytes_per_sample));
  put_u16(out, static_cast<std::uint16_t>(channels * bytes_per_sample));
  put_u16(out, static_cast<std::uint16_t>(bits_per_sample));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, static_cast<std::uint32_t>(data_size));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double code = std::clamp(std::nearbyint(clip.channels[c][i] * scale), lo, hi);
      const auto v = static_cast<std::uint32_t>(static_cast<std::int32_t>(code));
      for (std::size_t b = 0; b < bytes_per_sample; ++b)
        out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFF));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write audio file: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failure on audio file: " + path.string());
}

AudioClip downmix_to_mono(const AudioClip& clip) {
  clip.validate();
  if (clip.channel_count() != 2) throw DataError("downmix_to_mono requires a stereo clip");
  AudioClip mono;
  mono.sample_rate = clip.sample_rate;
  const auto& l = clip.channels[0];
  const auto& r = clip.channels[1];
  std::vector<double> m(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) m[i] = (l[i] + r[i]) / 2.0;
  mono.channels.push_back(std::move(m));
  return mono;
}

std::vector<double> make_window(WindowType type, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (type == WindowType::Hamming) {
    for (std::size_t n = 0; n < length; ++n)
      w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                    static_cast<double>(length));
  }
  return w;
}

std::size_t FrameGrid::frame_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(frame_length_ms * sample_rate / 1000.0));
}

std::size_t FrameGrid::hop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(hop_length_ms * sample_rate / 1000.0));
}

std::size_t FrameGrid::frame_count(std::size_t num_samples, int sample_rate) const {
  const std::size_t frame = frame_samples(sample_rate);
  const std::size_t hop = hop_samples(sample_rate);
  if (num_samples < frame || hop == 0) return 0;
  return (num_samples - frame) / hop + 1;
}

double FrameGrid::frame_center_seconds(std::size_t t, int sample_rate) const {
  const double start = static_cast<double>(t * hop_samples(sample_rate));
  return (start + static_cast<double>(frame_samples(sample_rate)) / 2.0) / sample_rate;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::size_t default_fft_size(const FrameGrid& grid, int sample_rate) {
  return next_pow2(grid.frame_samples(sample_rate));
}

std::vector<Spectrogram> stft(const AudioClip& clip, const FrameGrid& grid, std::size_t fft_size) {
  clip.validate();
  const std::size_t frame = grid.frame_samples(clip.sample_rate);
  const std::size_t hop = grid.hop_samples(clip.sample_rate);
  if (frame == 0 || hop == 0) throw UsageError("stft: frame and hop must be at least one sample");
  if (hop > frame) throw UsageError("stft: hop length exceeds frame length");
  if (fft_size < frame || (fft_size & (fft_size - 1)) != 0)
    throw UsageError("stft: fft_size must be a power of two >= frame length");
  const std::size_t frames = grid.frame_count(clip.num_samples(), clip.sample_rate);
  if (frames == 0) throw DataError("stft: clip is shorter than one frame");

  const auto window = make_window(grid.window, frame);
  RealFft fft(fft_size);
  std::vector<double> buf(fft_size, 0.0);
  std::vector<std::complex<double>> spec(fft_size / 2 + 1);

  std::vector<Spectrogram> out;
  for (int c = 0; c < clip.channel_count(); ++c) {
    Spectrogram s;
    s.fft_size = fft_size;
    s.sample_rate = clip.sample_rate;
    s.grid = grid;
    s.channel_index = c;
    s.bins.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(fft_size / 2 + 1));
    const auto& x = clip.channels[static_cast<std::size_t>(c)];
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t start = t * hop;
      for (std::size_t n = 0; n < frame; ++n) buf[n] = x[start + n] * window[n];
      std::fill(buf.begin() + static_cast<std::ptrdiff_t>(frame), buf.end(), 0.0);
      fft.forward(buf, spec);
      for (std::size_t k = 0; k < spec.size(); ++k)
        s.bins(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = spec[k];
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace stereosed
