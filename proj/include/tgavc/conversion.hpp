// Inference: style embeddings from reference audio and mel conversion with a
// trained checkpoint (joint, frozen-TTS or baseline).

#pragma once

#include <filesystem>
#include <vector>

#include "tgavc/dsp.hpp"
#include "tgavc/training.hpp"

namespace tgavc::conversion {

/// Crop length used for style references (2 s).
int style_crop_frames();

/// Centre crop of style_crop_frames(); shorter mels are returned whole.
Eigen::MatrixXf center_crop(const Eigen::MatrixXf& mel);

/// Mean of unit vectors, renormalized. Throws ParameterError on an empty list.
Eigen::RowVectorXf average_embeddings(const std::vector<Eigen::RowVectorXf>& embeddings);

/// Style embedding averaged over reference utterances.
Eigen::RowVectorXf compute_style_embedding(const models::StyleEncoder<float>& encoder, const models::ModelConfig& config,
                                           const std::vector<dsp::MelSpectrogram>& mels);

/// The checkpoint's style encoder (the frozen one for the baseline).
const models::StyleEncoder<float>& style_encoder(const training::TrainState& ckpt);
Eigen::RowVectorXf compute_style_embedding(const training::TrainState& ckpt, const std::vector<dsp::MelSpectrogram>& mels);

/// Decoder(content encoder(source), style) for joint and frozen-TTS checkpoints;
/// baseline checkpoints go through the bottleneck autoencoder. Output frames
/// equal source frames.
dsp::MelSpectrogram convert(const training::TrainState& ckpt, const dsp::MelSpectrogram& source, const Eigen::RowVectorXf& style);

struct ConversionRequest {
  std::filesystem::path source_audio;
  std::vector<std::filesystem::path> target_style_audios;
  std::filesystem::path checkpoint;
  std::filesystem::path output;
  int griffin_lim_iters = 60;
};

struct ConversionResult {
  dsp::MelSpectrogram mel;
  std::filesystem::path wav_path;
  std::filesystem::path mel_path;  // sidecar: output with extension ".mel"
};

/// File pipeline: decode, analyse, convert, invert with Griffin-Lim, write WAV
/// and sidecar mel. Errors carry the name of the failing stage.
ConversionResult convert_file(const ConversionRequest& request);
/// Same with an already loaded checkpoint.
ConversionResult convert_file(const ConversionRequest& request, const training::TrainState& ckpt);

}  // namespace tgavc::conversion
