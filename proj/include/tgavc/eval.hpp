// Objective evaluation: parallel-pair MCD, speaker probes on content
// embeddings, style-embedding separation and static plots.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tgavc/data.hpp"
#include "tgavc/dsp.hpp"
#include "tgavc/training.hpp"

namespace tgavc::eval {

struct McdPair {
  std::string source;
  std::string target;
  double mcd = 0.0;
};

struct McdReport {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<McdPair> pairs;
};

/// Pairwise dsp::mcd on mel-cepstra. Labels are optional (empty or one per pair).
McdReport evaluate_mcd(const std::vector<dsp::MelSpectrogram>& converted, const std::vector<dsp::MelSpectrogram>& reference,
                       const std::vector<std::string>& source_labels = {}, const std::vector<std::string>& target_labels = {});

/// One parallel conversion: source utterance converted to the target speaker
/// and compared with the target speaker's rendering of the same text.
struct ConversionPair {
  int source_record = -1;
  int target_record = -1;
  double mcd_converted = 0.0;  // MCD(converted, target)
  double mcd_source = 0.0;     // MCD(source, target)
};

struct ConversionProtocol {
  data::Split split = data::Split::test;
  int style_references = 10;  // per target speaker, taken from the training split
};

/// Style embedding of each speaker from up to `references` training utterances.
std::vector<Eigen::RowVectorXf> speaker_styles(const training::TrainState& ckpt, const data::Corpus& corpus, int references);

/// Every ordered pair of distinct speakers over utterances with identical text.
std::vector<ConversionPair> parallel_conversions(const training::TrainState& ckpt, const data::Corpus& corpus,
                                                 const ConversionProtocol& protocol = {});
McdReport summarize(const std::vector<ConversionPair>& pairs, const data::Corpus& corpus);

struct ProbeConfig {
  int steps = 300;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Trains a fresh classifier with the speaker-classifier topology on
/// `train_features` and returns its accuracy on `test_features`.
double probe_accuracy(const std::vector<Eigen::MatrixXf>& train_features, const std::vector<int>& train_labels,
                      const std::vector<Eigen::MatrixXf>& test_features, const std::vector<int>& test_labels,
                      const models::ModelConfig& config, const ProbeConfig& probe);

struct DisentanglementReport {
  double content_probe = 0.0;         // trained content encoder
  double raw_mel_probe = 0.0;         // leakage ceiling
  double random_encoder_probe = 0.0;  // untrained content encoder, context only
  double chance = 0.0;
};

/// Probes trained on the training split, scored on the test split. The
/// checkpoint is only read.
DisentanglementReport disentanglement_probe(const training::TrainState& ckpt, const data::Corpus& corpus, const ProbeConfig& probe);

struct StyleSeparation {
  std::optional<double> within;   // absent without two utterances of one speaker
  std::optional<double> between;  // absent with a single speaker
};

/// Mean pairwise cosine between embeddings of the same / different speakers.
StyleSeparation style_separation(const std::vector<Eigen::RowVectorXf>& embeddings, const std::vector<int>& speakers);
/// Embeddings of the centre crops of `records`.
StyleSeparation style_separation_report(const models::StyleEncoder<float>& encoder, const models::ModelConfig& config,
                                        const data::Corpus& corpus, const std::vector<int>& records);

struct SystemReport {
  std::string name;
  McdReport mcd;
  std::optional<DisentanglementReport> probe;
  StyleSeparation style;
  double fraction_improved = 0.0;  // pairs with MCD(converted) < MCD(source)
  std::string fingerprint;         // config of the evaluated checkpoint
};

std::string to_json(const SystemReport& r);
std::string to_json(const std::vector<SystemReport>& systems);

// --- plots ---------------------------------------------------------------------------

struct Triptych {
  std::string name;
  dsp::MelSpectrogram source, converted, target;
};

struct PlotResult {
  std::vector<std::filesystem::path> files;
  int skipped_lines = 0;
  bool empty_log = false;
};

/// Loss curves from a JSON-lines metrics log (one stacked panel per series),
/// mel heatmap triptychs and an MCD bar chart with standard-deviation whiskers.
PlotResult emit_plots(const std::optional<std::filesystem::path>& metrics_log, const std::vector<SystemReport>& reports,
                      const std::vector<Triptych>& triptychs, const std::filesystem::path& out_dir);

/// Width of each panel in a triptych image (one pixel per frame).
std::vector<int> triptych_panel_widths(const Triptych& t);

}  // namespace tgavc::eval
