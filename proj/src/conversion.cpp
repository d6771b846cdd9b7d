#include "tgavc/conversion.hpp"

#include "tgavc/data.hpp"
#include "tgavc/errors.hpp"

namespace tgavc::conversion {

int style_crop_frames() { return data::crop_frames(2.0); }

Eigen::MatrixXf center_crop(const Eigen::MatrixXf& mel) {
  const int frames = style_crop_frames();
  if (mel.rows() <= frames) return mel;
  return mel.middleRows((mel.rows() - frames) / 2, frames);
}

Eigen::RowVectorXf average_embeddings(const std::vector<Eigen::RowVectorXf>& embeddings) {
  if (embeddings.empty()) throw ParameterError("style embedding needs at least one reference utterance");
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(embeddings.front().size());
  for (const auto& e : embeddings) {
    if (e.size() != sum.size()) throw ContractError("style embeddings differ in width");
    sum += e.cast<double>();
  }
  const double norm = sum.norm();
  if (!(norm > 0)) throw ParameterError("style embeddings cancel out; their average has no direction");
  return (sum / norm).cast<float>();
}

Eigen::RowVectorXf compute_style_embedding(const models::StyleEncoder<float>& encoder, const models::ModelConfig& config,
                                           const std::vector<dsp::MelSpectrogram>& mels) {
  if (mels.empty()) throw ParameterError("style embedding needs at least one reference utterance");
  std::vector<Eigen::RowVectorXf> each;
  for (const auto& m : mels) {
    if (m.frames() < 1) throw EmptyInputError("style reference has no frames");
    each.push_back(models::encode_style(encoder, Eigen::MatrixXf(models::normalize_mel(config, center_crop(m.values)))));
  }
  return average_embeddings(each);
}

const models::StyleEncoder<float>& style_encoder(const training::TrainState& ckpt) {
  return ckpt.regime == training::Regime::autovc ? ckpt.baseline.style : ckpt.model.style;
}

Eigen::RowVectorXf compute_style_embedding(const training::TrainState& ckpt, const std::vector<dsp::MelSpectrogram>& mels) {
  return compute_style_embedding(style_encoder(ckpt), ckpt.model.config, mels);
}

dsp::MelSpectrogram convert(const training::TrainState& ckpt, const dsp::MelSpectrogram& source, const Eigen::RowVectorXf& style) {
  using training::Regime;
  if (source.frames() < 1) throw EmptyInputError("source mel has no frames");
  const auto& cfg = ckpt.model.config;
  if (style.size() != cfg.d_style)
    throw ContractError("style embedding has width " + std::to_string(style.size()) + ", model expects " + std::to_string(cfg.d_style));
  const Eigen::MatrixXf x = models::normalize_mel(cfg, source.values);
  Eigen::MatrixXf pred;
  switch (ckpt.regime) {
    case Regime::tgavc:
    case Regime::tgavcs:
      pred = models::decode(ckpt.model.decoder, models::encode_content(ckpt.model.content, x), style);
      break;
    case Regime::autovc:
      pred = models::autovc_forward(ckpt.baseline, x, style).first;
      break;
    default:
      throw CheckpointError("a '" + std::string(training::to_string(ckpt.regime)) + "' checkpoint cannot convert speech");
  }
  dsp::MelSpectrogram out;
  out.values = models::denormalize_mel(cfg, pred);
  out.hop = source.hop;
  out.sample_rate = source.sample_rate;
  return out;
}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    e.rethrow_with_context(name);
  }
  throw;  // not reached
}

dsp::MelSpectrogram analyse_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw FileError("file not found: " + p.string());
  return dsp::mel_spectrogram(dsp::load_waveform(p));
}

}  // namespace

ConversionResult convert_file(const ConversionRequest& request) {
  const training::TrainState ckpt = stage("loading checkpoint", [&] {
    if (!std::filesystem::exists(request.checkpoint)) throw FileError("file not found: " + request.checkpoint.string());
    return training::load_checkpoint(request.checkpoint);
  });
  return convert_file(request, ckpt);
}

ConversionResult convert_file(const ConversionRequest& request, const training::TrainState& ckpt) {
  if (request.target_style_audios.empty()) throw ParameterError("conversion request has no target style utterances");
  if (request.griffin_lim_iters < 1) throw ParameterError("griffin_lim_iters must be >= 1");
  const dsp::MelSpectrogram source = stage("reading source audio", [&] { return analyse_file(request.source_audio); });
  std::vector<dsp::MelSpectrogram> refs;
  for (const auto& p : request.target_style_audios)
    refs.push_back(stage("reading style reference", [&] { return analyse_file(p); }));
  const Eigen::RowVectorXf style = stage("computing style embedding", [&] { return compute_style_embedding(ckpt, refs); });
  ConversionResult r;
  r.mel = stage("converting", [&] { return convert(ckpt, source, style); });
  const dsp::Waveform wave = stage("phase reconstruction", [&] { return dsp::griffin_lim(r.mel, request.griffin_lim_iters); });
  r.wav_path = request.output;
  r.mel_path = std::filesystem::path(request.output).replace_extension(".mel");
  stage("writing output", [&] {
    if (r.wav_path.has_parent_path()) std::filesystem::create_directories(r.wav_path.parent_path());
    dsp::write_wav(r.wav_path, wave.samples, wave.sample_rate);
    dsp::save_mel(r.mel_path, r.mel);
    return 0;
  });
  return r;
}

}  // namespace tgavc::conversion
