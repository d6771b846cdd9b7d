#include "tgavc/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "tgavc/errors.hpp"

namespace tgavc::dsp {
namespace {

constexpr int kSpectrumBins = kFftSize / 2 + 1;

std::uint32_t read_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t read_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

Eigen::VectorXd mel_edges() {
  Eigen::VectorXd edges(kMelBins + 2);
  const double lo = hz_to_mel(kMelFmin), hi = hz_to_mel(kMelFmax);
  for (int i = 0; i < kMelBins + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (kMelBins + 1));
  return edges;
}

const Eigen::VectorXd& hann_window() {
  static const Eigen::VectorXd w = [] {
    Eigen::VectorXd v(kWindowSize);
    for (int n = 0; n < kWindowSize; ++n) v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindowSize);
    return v;
  }();
  return w;
}

const Eigen::MatrixXd& mel_pinv() {
  static const Eigen::MatrixXd p = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(mel_filterbank()).pseudoInverse();
  return p;
}

// numpy-style "reflect" indexing, valid for any offset.
Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Eigen::Index frame_count(Eigen::Index samples) { return 1 + samples / kHopSize; }

Eigen::MatrixXcd stft_complex(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  const Eigen::Index frames = frame_count(n);
  const Eigen::VectorXd& win = hann_window();
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  Eigen::MatrixXcd out(kSpectrumBins, frames);
  std::vector<double> buf(kFftSize);
  std::vector<std::complex<double>> spec;
  const Eigen::Index pad = kFftSize / 2;
  for (Eigen::Index f = 0; f < frames; ++f) {
    const Eigen::Index start = f * kHopSize - pad;
    for (int k = 0; k < kFftSize; ++k) buf[k] = x[reflect_index(start + k, n)] * win[k];
    fft.fwd(spec, buf);
    for (int b = 0; b < kSpectrumBins; ++b) out(b, f) = spec[b];
  }
  return out;
}

Eigen::VectorXd istft(const Eigen::MatrixXcd& spec) {
  const Eigen::Index frames = spec.cols();
  const Eigen::VectorXd& win = hann_window();
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  const Eigen::Index total = kFftSize + kHopSize * (frames - 1);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(total);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(total);
  std::vector<std::complex<double>> half(kSpectrumBins);
  std::vector<double> frame;
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int b = 0; b < kSpectrumBins; ++b) half[b] = spec(b, f);
    fft.inv(frame, half, kFftSize);
    for (int k = 0; k < kFftSize; ++k) {
      acc[f * kHopSize + k] += frame[k] * win[k];
      norm[f * kHopSize + k] += win[k] * win[k];
    }
  }
  const Eigen::Index pad = kFftSize / 2;
  const Eigen::Index length = kHopSize * (frames - 1);
  Eigen::VectorXd out(length);
  for (Eigen::Index i = 0; i < length; ++i) {
    const double w = norm[i + pad];
    out[i] = w > 1e-11 ? acc[i + pad] / w : 0.0;
  }
  return out;
}

}  // namespace

// --- waveform I/O -------------------------------------------------------------

PcmAudio decode_wav(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DecodeError("not a RIFF/WAVE stream");
  }
  int format = -1, channels = 0, sample_rate = 0, bits = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // tolerate a truncated trailing data chunk, reject anything else
      if (std::memcmp(chunk, "data", 4) != 0) throw DecodeError("truncated WAVE chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw DecodeError("fmt chunk too short");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      sample_rate = static_cast<int>(read_u32(chunk + 12));
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE) {
        if (avail < 26) throw DecodeError("extensible fmt chunk too short");
        format = read_u16(chunk + 32);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (format < 0) throw DecodeError("missing fmt chunk");
  if (data == nullptr) throw DecodeError("missing data chunk");
  if (channels < 1 || sample_rate < 1) throw DecodeError("invalid channel count or sample rate");
  const bool is_float = format == 3;
  if (!is_float && format != 1) throw DecodeError("unsupported WAVE format tag " + std::to_string(format));
  if (is_float ? (bits != 32 && bits != 64) : (bits != 8 && bits != 16 && bits != 24 && bits != 32)) {
    throw DecodeError("unsupported sample width " + std::to_string(bits));
  }
  const std::size_t width = static_cast<std::size_t>(bits / 8);
  const std::size_t frames = data_size / (width * channels);
  PcmAudio out;
  out.sample_rate = sample_rate;
  out.channels.resize(static_cast<Eigen::Index>(frames), channels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (f * channels + c) * width;
      double v = 0.0;
      if (is_float && bits == 32) {
        float x;
        std::uint32_t u = read_u32(p);
        std::memcpy(&x, &u, 4);
        v = x;
      } else if (is_float) {
        std::uint64_t u = std::uint64_t(read_u32(p)) | (std::uint64_t(read_u32(p + 4)) << 32);
        double x;
        std::memcpy(&x, &u, 8);
        v = x;
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
      }
      if (!std::isfinite(v)) throw DecodeError("non-finite sample");
      out.channels(static_cast<Eigen::Index>(f), c) = v;
    }
  }
  return out;
}

PcmAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open audio file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Eigen::VectorXd& samples, int sample_rate) {
  std::vector<std::uint8_t> out;
  const auto n = static_cast<std::uint32_t>(samples.size());
  out.reserve(44 + 2 * n);
  put_tag(out, "RIFF");
  put_u32(out, 36 + 2 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, 2 * n);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(samples[i], -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::clamp(std::lround(v * 32768.0), -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(s));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write audio file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Eigen::VectorXd resample(const Eigen::VectorXd& x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ParameterError("resample: rates must be positive");
  if (from_rate == to_rate) return x;
  const Eigen::Index n = x.size();
  const auto n_out = static_cast<Eigen::Index>((static_cast<long long>(n) * to_rate + from_rate / 2) / from_rate);
  const double ratio = static_cast<double>(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio);
  constexpr double zero_crossings = 16.0;
  const double half_width = zero_crossings / cutoff;
  Eigen::VectorXd y(n_out);
  for (Eigen::Index m = 0; m < n_out; ++m) {
    const double center = m / ratio;
    const auto lo = static_cast<Eigen::Index>(std::ceil(center - half_width));
    const auto hi = static_cast<Eigen::Index>(std::floor(center + half_width));
    double acc = 0.0;
    for (Eigen::Index k = std::max<Eigen::Index>(lo, 0); k <= std::min<Eigen::Index>(hi, n - 1); ++k) {
      const double t = center - k;
      const double arg = cutoff * t;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / half_width);
      acc += x[k] * cutoff * sinc * win;
    }
    y[m] = acc;
  }
  return y;
}

Waveform to_waveform(const PcmAudio& audio) {
  if (audio.channels.rows() == 0) throw EmptyInputError("audio contains no samples");
  Eigen::VectorXd mono = audio.channels.rowwise().mean();
  Waveform w;
  w.samples = resample(mono, audio.sample_rate, kSampleRate);
  w.sample_rate = kSampleRate;
  const double peak = w.samples.size() ? w.samples.cwiseAbs().maxCoeff() : 0.0;
  if (peak > 1.0) w.samples /= peak;
  return w;
}

Waveform load_waveform(const std::filesystem::path& path) { return to_waveform(read_wav(path)); }

// --- analysis -------------------------------------------------------------------

Eigen::VectorXd mel_center_frequencies() { return mel_edges().segment(1, kMelBins); }

const Eigen::MatrixXd& mel_filterbank() {
  static const Eigen::MatrixXd fb = [] {
    const Eigen::VectorXd edges = mel_edges();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kMelBins, kSpectrumBins);
    for (int i = 0; i < kMelBins; ++i) {
      const double lower = edges[i], center = edges[i + 1], upper = edges[i + 2];
      const double enorm = 2.0 / (upper - lower);
      for (int k = 0; k < kSpectrumBins; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / kFftSize;
        const double rise = (f - lower) / (center - lower);
        const double fall = (upper - f) / (upper - center);
        m(i, k) = std::max(0.0, std::min(rise, fall)) * enorm;
      }
    }
    return m;
  }();
  return fb;
}

Eigen::MatrixXd stft_magnitude(const Eigen::VectorXd& samples) { return stft_complex(samples).cwiseAbs(); }

MelSpectrogram mel_spectrogram(const Waveform& w) {
  if (w.samples.size() < kHopSize) throw EmptyInputError("waveform shorter than one hop");
  if (!w.samples.allFinite()) throw ParameterError("waveform contains non-finite samples");
  const Eigen::MatrixXd mag = stft_magnitude(w.samples);
  const Eigen::MatrixXd mel = mel_filterbank() * mag;
  MelSpectrogram out;
  out.values = mel.transpose().cwiseMax(kLogFloor).array().log().matrix().cast<float>();
  return out;
}

Waveform griffin_lim(const MelSpectrogram& m, int iters, std::uint64_t phase_seed) {
  if (iters < 1) throw ParameterError("griffin_lim: iters must be >= 1");
  if (m.frames() < 1 || m.bins() != kMelBins) throw ParameterError("griffin_lim: invalid mel spectrogram");
  const Eigen::MatrixXd mel_mag = m.values.cast<double>().array().exp().matrix().transpose();
  const Eigen::MatrixXd target = (mel_pinv() * mel_mag).cwiseMax(0.0);

  std::mt19937_64 rng(phase_seed);
  Eigen::MatrixXcd angles(target.rows(), target.cols());
  for (Eigen::Index j = 0; j < angles.cols(); ++j) {
    for (Eigen::Index i = 0; i < angles.rows(); ++i) {
      const double phase = 2.0 * std::numbers::pi * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
      angles(i, j) = std::polar(1.0, phase);
    }
  }
  Eigen::VectorXd x;
  for (int it = 0; it < iters; ++it) {
    x = istft(target.cast<std::complex<double>>().cwiseProduct(angles));
    const Eigen::MatrixXcd rebuilt = stft_complex(x);
    for (Eigen::Index j = 0; j < angles.cols(); ++j) {
      for (Eigen::Index i = 0; i < angles.rows(); ++i) {
        const double mag = std::abs(rebuilt(i, j));
        angles(i, j) = mag > 1e-16 ? rebuilt(i, j) / mag : std::complex<double>(1.0, 0.0);
      }
    }
  }
  Waveform out;
  out.samples = istft(target.cast<std::complex<double>>().cwiseProduct(angles));
  out.sample_rate = m.sample_rate;
  return out;
}

MelCepstrum mel_cepstrum(const MelSpectrogram& m, int order) {
  if (order < 1 || order >= kMelBins) throw ParameterError("mel_cepstrum: order must be in [1, 80)");
  if (m.bins() != kMelBins) throw ParameterError("mel_cepstrum: expected 80 mel bins");
  Eigen::MatrixXd dct(order + 1, kMelBins);
  for (int k = 0; k <= order; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / kMelBins) : std::sqrt(2.0 / kMelBins);
    for (int n = 0; n < kMelBins; ++n) dct(k, n) = s * std::cos(std::numbers::pi * k * (2 * n + 1) / (2.0 * kMelBins));
  }
  MelCepstrum out;
  out.order = order;
  out.values = m.values.cast<double>() * dct.transpose();
  return out;
}

double mcd(const MelCepstrum& a, const MelCepstrum& b) {
  if (a.order != b.order || a.values.cols() != b.values.cols()) throw ParameterError("mcd: cepstral orders differ");
  if (a.frames() == 0 || b.frames() == 0) throw ParameterError("mcd: empty cepstrum");
  const Eigen::Index n = a.frames(), m = b.frames(), order = a.order;
  const double k = 10.0 / std::log(10.0);
  Eigen::MatrixXd local(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double sq = (a.values.row(i).segment(1, order) - b.values.row(j).segment(1, order)).squaredNorm();
      local(i, j) = k * std::sqrt(2.0 * sq);
    }
  }
  // cumulative (cost, path length), compared lexicographically so that the
  // chosen path and hence the mean is symmetric in (a, b)
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, m, inf);
  Eigen::MatrixXi len = Eigen::MatrixXi::Zero(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        cost(0, 0) = local(0, 0);
        len(0, 0) = 1;
        continue;
      }
      double best = inf;
      int best_len = 0;
      auto consider = [&](Eigen::Index pi, Eigen::Index pj) {
        if (pi < 0 || pj < 0) return;
        const double c = cost(pi, pj);
        const int l = len(pi, pj);
        if (c < best || (c == best && l < best_len)) {
          best = c;
          best_len = l;
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      cost(i, j) = best + local(i, j);
      len(i, j) = best_len + 1;
    }
  }
  return cost(n - 1, m - 1) / len(n - 1, m - 1);
}

// --- persistence ------------------------------------------------------------------

void save_mel(const std::filesystem::path& path, const MelSpectrogram& m) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(8 + 4 * static_cast<std::size_t>(m.values.size()));
  put_u32(bytes, static_cast<std::uint32_t>(m.frames()));
  put_u32(bytes, static_cast<std::uint32_t>(m.bins()));
  for (Eigen::Index r = 0; r < m.frames(); ++r) {
    for (Eigen::Index c = 0; c < m.bins(); ++c) put_u32(bytes, std::bit_cast<std::uint32_t>(m.values(r, c)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write mel file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream hdr(path.string() + ".hdr");
  if (!hdr) throw FileError("cannot write mel header: " + path.string() + ".hdr");
  hdr << "frames=" << m.frames() << "\nbins=" << m.bins() << "\nhop=" << m.hop << "\nsample_rate=" << m.sample_rate << "\n";
}

MelSpectrogram load_mel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open mel file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw DecodeError("mel file too short: " + path.string());
  const std::uint32_t frames = read_u32(bytes.data());
  const std::uint32_t bins = read_u32(bytes.data() + 4);
  if (bytes.size() != 8 + 4ull * frames * bins) throw DecodeError("mel file size does not match header: " + path.string());
  MelSpectrogram m;
  m.values.resize(frames, bins);
  const std::uint8_t* p = bytes.data() + 8;
  for (std::uint32_t r = 0; r < frames; ++r) {
    for (std::uint32_t c = 0; c < bins; ++c, p += 4) m.values(r, c) = std::bit_cast<float>(read_u32(p));
  }
  std::ifstream hdr(path.string() + ".hdr");
  std::string line;
  while (hdr && std::getline(hdr, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const int value = std::stoi(line.substr(eq + 1));
    if (key == "hop") m.hop = value;
    if (key == "sample_rate") m.sample_rate = value;
  }
  return m;
}

}  // namespace tgavc::dsp
