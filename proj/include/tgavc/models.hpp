// The conversion networks: text encoder, content encoder, style encoder,
// decoder and speaker classifier, plus the bottleneck autoencoder baseline.
//
// Every network keeps a layout (tensor indices) next to a ParamStore and runs
// one unpadded sequence per call on a caller-owned tape. Helpers at the end
// run padded batches item by item so padding never reaches a network.
// Mel inputs and outputs are in normalized units (see normalize_mel).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgavc/autograd.hpp"
#include "tgavc/nn.hpp"

namespace tgavc::models {

using ag::Tape;
using ag::Var;

struct ModelConfig {
  int d_model = 64;
  int d_style = 32;
  int n_heads = 2;
  int n_enc_blocks = 4;
  int n_dec_blocks = 6;
  int d_ff = 128;
  int ffn_kernel = 3;
  int conv_kernel = 5;
  double dropout = 0.1;  // FFT blocks of text encoder and decoder, training only
  int style_hidden = 64;
  int classifier_hidden = 64;
  int num_speakers = 4;
  int vocab_size = 0;
  int n_mels = 80;
  int autovc_dim = 16;     // per direction
  int autovc_factor = 16;  // temporal downsampling
  double mel_mean = 0.0;
  double mel_std = 1.0;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

/// Default config for a corpus vocabulary and speaker count.
ModelConfig default_config(int num_speakers);

Eigen::MatrixXf normalize_mel(const ModelConfig& c, const Eigen::MatrixXf& mel);
Eigen::MatrixXf denormalize_mel(const ModelConfig& c, const Eigen::MatrixXf& mel);

/// Repeats row i of `seq` durations[i] times. Throws ContractError on a
/// length mismatch or a duration below 1.
template <typename S>
Var<S> length_regulate(Var<S> seq, const std::vector<int>& durations);
template <typename S>
Matrix<S> length_regulate(const Matrix<S>& seq, const std::vector<int>& durations);

// --- networks -----------------------------------------------------------------

struct TextEncoderLayout {
  nn::Embedding embed;
  std::vector<nn::FftBlock> blocks;
  nn::Linear proj;
  double dropout = 0.0;
};

template <typename S>
struct TextEncoder {
  TextEncoderLayout layout;
  ParamStore<S> params;

  static TextEncoder create(const ModelConfig& c, std::uint64_t seed);
  /// Phoneme-rate hidden sequence (before length regulation). A non-null
  /// `noise` enables dropout.
  Var<S> encode(Tape<S>& t, const std::vector<int>& tokens, bool trainable, Rng* noise = nullptr) const;
  /// Frame-rate desired content embedding, sum(durations) x d_model.
  Var<S> forward(Tape<S>& t, const std::vector<int>& tokens, const std::vector<int>& durations, bool trainable,
                 Rng* noise = nullptr) const;
};

struct ContentEncoderLayout {
  std::vector<nn::Conv1d> convs;
  nn::BiLstm rnn;
  nn::Linear proj;  // lifts the bounded BiLSTM range to that of the text embedding
};

template <typename S>
struct ContentEncoder {
  ContentEncoderLayout layout;
  ParamStore<S> params;

  static ContentEncoder create(const ModelConfig& c, std::uint64_t seed);
  /// frames x n_mels -> frames x d_model.
  Var<S> forward(Tape<S>& t, Var<S> mel, bool trainable) const;
};

struct StyleEncoderLayout {
  nn::Lstm rnn1, rnn2;
  nn::Linear fc;
};

template <typename S>
struct StyleEncoder {
  StyleEncoderLayout layout;
  ParamStore<S> params;

  static StyleEncoder create(const ModelConfig& c, std::uint64_t seed);
  /// frames x n_mels -> 1 x d_style, unit norm.
  Var<S> forward(Tape<S>& t, Var<S> mel, bool trainable) const;
};

struct DecoderLayout {
  nn::Linear in;
  std::vector<nn::FftBlock> blocks;
  nn::Linear out;
  int content_dim = 0;
  double dropout = 0.0;
};

template <typename S>
struct Decoder {
  DecoderLayout layout;
  ParamStore<S> params;

  static Decoder create(const ModelConfig& c, int content_dim, std::uint64_t seed);
  /// content frames x content_dim, style 1 x d_style -> frames x n_mels.
  Var<S> forward(Tape<S>& t, Var<S> content, Var<S> style, bool trainable, Rng* noise = nullptr) const;
};

struct SpeakerClassifierLayout {
  nn::Lstm rnn1, rnn2;
  nn::Linear fc;
};

template <typename S>
struct SpeakerClassifier {
  SpeakerClassifierLayout layout;
  ParamStore<S> params;

  static SpeakerClassifier create(const ModelConfig& c, int input_dim, std::uint64_t seed);
  /// 1 x K unnormalized scores.
  Var<S> logits(Tape<S>& t, Var<S> content, bool trainable) const;
  /// 1 x K log posterior.
  Var<S> log_posterior(Tape<S>& t, Var<S> content, bool trainable) const;
  /// Sets the output layer to zero (uniform posterior).
  void zero_output();
};

struct AutoVcEncoderLayout {
  std::vector<nn::Conv1d> convs;
  nn::BiLstm rnn1, rnn2;
  int factor = 1;
};

template <typename S>
struct AutoVcEncoder {
  AutoVcEncoderLayout layout;
  ParamStore<S> params;

  static AutoVcEncoder create(const ModelConfig& c, std::uint64_t seed);
  /// ceil(frames / factor) x 2*dim bottleneck codes. Code k takes the forward
  /// state at the end of its window and the backward state at its start.
  Var<S> codes(Tape<S>& t, Var<S> mel, Var<S> style, bool trainable) const;
};

/// Each code row repeated `factor` times, truncated to `frames`.
template <typename S>
Var<S> upsample_codes(Var<S> codes, int factor, Eigen::Index frames);

template <template <typename> class Net, typename To, typename From>
Net<To> cast_network(const Net<From>& n) {
  Net<To> out;
  out.layout = n.layout;
  out.params = n.params.template cast<To>();
  return out;
}

// --- bundles ------------------------------------------------------------------------

template <typename S>
struct TgavcModel {
  ModelConfig config;
  TextEncoder<S> text;
  ContentEncoder<S> content;
  StyleEncoder<S> style;
  Decoder<S> decoder;
  SpeakerClassifier<S> classifier;

  static TgavcModel create(const ModelConfig& c, std::uint64_t seed);

  template <typename T>
  TgavcModel<T> cast() const {
    return {config, cast_network<TextEncoder, T>(text), cast_network<ContentEncoder, T>(content),
            cast_network<StyleEncoder, T>(style), cast_network<Decoder, T>(decoder),
            cast_network<SpeakerClassifier, T>(classifier)};
  }
};

template <typename S>
struct AutoVcModel {
  ModelConfig config;
  AutoVcEncoder<S> encoder;
  Decoder<S> decoder;
  StyleEncoder<S> style;  // pretrained and frozen

  static AutoVcModel create(const ModelConfig& c, std::uint64_t seed);
};

// --- evaluation-mode helpers (no gradients) ----------------------------------------

template <typename S>
Matrix<S> encode_text(const TextEncoder<S>& net, const std::vector<int>& tokens, const std::vector<int>& durations);
template <typename S>
Matrix<S> encode_content(const ContentEncoder<S>& net, const Matrix<S>& mel);
template <typename S>
RowVector<S> encode_style(const StyleEncoder<S>& net, const Matrix<S>& mel);
template <typename S>
Matrix<S> decode(const Decoder<S>& net, const Matrix<S>& content, const RowVector<S>& style);
template <typename S>
RowVector<S> classify(const SpeakerClassifier<S>& net, const Matrix<S>& content);
/// (predicted mel, codes).
template <typename S>
std::pair<Matrix<S>, Matrix<S>> autovc_forward(const AutoVcModel<S>& m, const Matrix<S>& mel, const RowVector<S>& style);

/// Padded batch: `mels[b]` has at least lengths[b] rows; outputs are padded with
/// zero rows to the input row count.
template <typename S>
std::vector<Matrix<S>> encode_content_batch(const ContentEncoder<S>& net, const std::vector<Matrix<S>>& mels,
                                            const Eigen::VectorXi& lengths);
/// tokens/durations are batch x max_tokens padded with 0; output rows padded to
/// the largest total duration.
template <typename S>
std::vector<Matrix<S>> encode_text_batch(const TextEncoder<S>& net, const Eigen::MatrixXi& tokens,
                                         const Eigen::VectorXi& token_lengths, const Eigen::MatrixXi& durations);

}  // namespace tgavc::models
