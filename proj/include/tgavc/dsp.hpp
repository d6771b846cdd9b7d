// Signal processing kernel: waveform I/O, log-mel analysis, Griffin-Lim
// inversion, mel-cepstra and DTW-aligned mel-cepstral distortion.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tgavc::dsp {

inline constexpr int kSampleRate = 22050;
inline constexpr int kFftSize = 1024;
inline constexpr int kWindowSize = 1024;
inline constexpr int kHopSize = 256;
inline constexpr int kMelBins = 80;
inline constexpr double kMelFmin = 90.0;
inline constexpr double kMelFmax = 7600.0;
inline constexpr double kLogFloor = 1e-5;
inline constexpr int kDefaultMcdOrder = 13;

struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = kSampleRate;

  Eigen::Index size() const { return samples.size(); }
};

/// frames x 80 log-mel magnitudes.
struct MelSpectrogram {
  Eigen::MatrixXf values;
  int hop = kHopSize;
  int sample_rate = kSampleRate;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index bins() const { return values.cols(); }
};

/// frames x (order + 1); column 0 is the energy term.
struct MelCepstrum {
  Eigen::MatrixXd values;
  int order = 0;

  Eigen::Index frames() const { return values.rows(); }
};

// --- waveform I/O -----------------------------------------------------------

/// Raw multi-channel PCM as decoded from a RIFF/WAVE file, channels interleaved
/// into columns (frames x channels), values in [-1, 1].
struct PcmAudio {
  Eigen::MatrixXd channels;
  int sample_rate = 0;
};

PcmAudio read_wav(const std::filesystem::path& path);
PcmAudio decode_wav(const std::vector<std::uint8_t>& bytes);

/// Writes mono 16-bit PCM. Samples outside [-1, 1] are clipped.
void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples, int sample_rate);
std::vector<std::uint8_t> encode_wav(const Eigen::VectorXd& samples, int sample_rate);

/// Windowed-sinc resampling to an arbitrary rate.
Eigen::VectorXd resample(const Eigen::VectorXd& x, int from_rate, int to_rate);

/// Decodes, downmixes to mono, resamples to 22050 Hz and scales down so that
/// the peak magnitude does not exceed 1.
Waveform load_waveform(const std::filesystem::path& path);
Waveform to_waveform(const PcmAudio& audio);

// --- analysis ---------------------------------------------------------------

/// Centre frequencies (Hz) of the 80 mel filters.
Eigen::VectorXd mel_center_frequencies();

/// 80 x (fft/2+1) triangular filterbank, area-normalized.
const Eigen::MatrixXd& mel_filterbank();

/// Magnitude STFT, reflection-padded by fft/2 on each side.
/// Returns (fft/2+1) x frames.
Eigen::MatrixXd stft_magnitude(const Eigen::VectorXd& samples);

MelSpectrogram mel_spectrogram(const Waveform& w);

/// Phase reconstruction from a log-mel spectrogram. The initial phase is drawn
/// from a fixed-seed generator so the output is deterministic.
Waveform griffin_lim(const MelSpectrogram& m, int iters, std::uint64_t phase_seed = 0);

MelCepstrum mel_cepstrum(const MelSpectrogram& m, int order = kDefaultMcdOrder);

/// DTW-aligned mel-cepstral distortion in dB, excluding the energy term.
double mcd(const MelCepstrum& a, const MelCepstrum& b);

// --- persistence --------------------------------------------------------------

/// Binary layout: int32 frames, int32 bins, then frames*bins float32 values in
/// row-major order, all little-endian. A text sidecar `<path>.hdr` records hop
/// and sample rate.
void save_mel(const std::filesystem::path& path, const MelSpectrogram& m);
MelSpectrogram load_mel(const std::filesystem::path& path);

}  // namespace tgavc::dsp
