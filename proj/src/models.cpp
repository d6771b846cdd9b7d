#include "tgavc/models.hpp"

#include <algorithm>

#include "json.hpp"
#include "tgavc/data.hpp"
#include "tgavc/errors.hpp"

namespace tgavc::models {

using nlohmann::json;

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  check(d_model >= 2 && d_model % 2 == 0, "d_model must be a positive even number");
  check(n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
  check(d_style >= 1, "d_style must be positive");
  check(n_enc_blocks >= 1 && n_dec_blocks >= 1, "block counts must be positive");
  check(d_ff >= 1, "d_ff must be positive");
  check(ffn_kernel >= 1 && ffn_kernel % 2 == 1, "ffn_kernel must be odd");
  check(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be odd");
  check(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  check(style_hidden >= 1 && classifier_hidden >= 1, "hidden sizes must be positive");
  check(num_speakers >= 2, "num_speakers must be at least 2");
  check(vocab_size >= 2, "vocab_size must be at least 2");
  check(n_mels >= 1, "n_mels must be positive");
  check(autovc_dim >= 1 && autovc_factor >= 1, "autovc bottleneck must be positive");
  check(mel_std > 0.0, "mel_std must be positive");
}

std::string ModelConfig::to_json() const {
  json j = {{"d_model", d_model},
            {"d_style", d_style},
            {"n_heads", n_heads},
            {"n_enc_blocks", n_enc_blocks},
            {"n_dec_blocks", n_dec_blocks},
            {"d_ff", d_ff},
            {"ffn_kernel", ffn_kernel},
            {"conv_kernel", conv_kernel},
            {"dropout", dropout},
            {"style_hidden", style_hidden},
            {"classifier_hidden", classifier_hidden},
            {"num_speakers", num_speakers},
            {"vocab_size", vocab_size},
            {"n_mels", n_mels},
            {"autovc_dim", autovc_dim},
            {"autovc_factor", autovc_factor},
            {"mel_mean", mel_mean},
            {"mel_std", mel_std}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    for (const auto& [key, _] : j.items()) {
      static const char* known[] = {"d_model",     "d_style",      "n_heads",      "n_enc_blocks",      "n_dec_blocks", "d_ff",
                                    "ffn_kernel",  "conv_kernel",  "dropout", "style_hidden", "classifier_hidden", "num_speakers", "vocab_size",
                                    "n_mels",      "autovc_dim",   "autovc_factor", "mel_mean",         "mel_std"};
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known))
        throw ConfigError("model config: unknown key '" + key + "'");
    }
    get("d_model", c.d_model);
    get("d_style", c.d_style);
    get("n_heads", c.n_heads);
    get("n_enc_blocks", c.n_enc_blocks);
    get("n_dec_blocks", c.n_dec_blocks);
    get("d_ff", c.d_ff);
    get("ffn_kernel", c.ffn_kernel);
    get("conv_kernel", c.conv_kernel);
    get("dropout", c.dropout);
    get("style_hidden", c.style_hidden);
    get("classifier_hidden", c.classifier_hidden);
    get("num_speakers", c.num_speakers);
    get("vocab_size", c.vocab_size);
    get("n_mels", c.n_mels);
    get("autovc_dim", c.autovc_dim);
    get("autovc_factor", c.autovc_factor);
    get("mel_mean", c.mel_mean);
    get("mel_std", c.mel_std);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig default_config(int num_speakers) {
  ModelConfig c;
  c.num_speakers = num_speakers;
  c.vocab_size = data::PinyinLexicon::standard().vocab_size();
  return c;
}

Eigen::MatrixXf normalize_mel(const ModelConfig& c, const Eigen::MatrixXf& mel) {
  return ((mel.array() - static_cast<float>(c.mel_mean)) / static_cast<float>(c.mel_std)).matrix();
}

Eigen::MatrixXf denormalize_mel(const ModelConfig& c, const Eigen::MatrixXf& mel) {
  return (mel.array() * static_cast<float>(c.mel_std) + static_cast<float>(c.mel_mean)).matrix();
}

namespace {

std::vector<int> regulator_index(Eigen::Index rows, const std::vector<int>& durations) {
  if (static_cast<Eigen::Index>(durations.size()) != rows)
    throw ContractError("length_regulate: " + std::to_string(durations.size()) + " durations for " + std::to_string(rows) + " rows");
  std::vector<int> index;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] < 1) throw ContractError("length_regulate: duration below 1 at position " + std::to_string(i));
    index.insert(index.end(), durations[i], static_cast<int>(i));
  }
  return index;
}

template <typename S>
nn::Binder<S> bind(Tape<S>& t, const ParamStore<S>& p, bool trainable, Rng* noise = nullptr, double dropout = 0.0) {
  return {&t, &p, trainable, noise, dropout};
}

template <typename S>
Var<S> last_row(Var<S> x) {
  return slice_rows(x, x.rows() - 1, 1);
}

}  // namespace

template <typename S>
Var<S> length_regulate(Var<S> seq, const std::vector<int>& durations) {
  return gather_rows(seq, regulator_index(seq.rows(), durations));
}

template <typename S>
Matrix<S> length_regulate(const Matrix<S>& seq, const std::vector<int>& durations) {
  const std::vector<int> index = regulator_index(seq.rows(), durations);
  Matrix<S> out(static_cast<Eigen::Index>(index.size()), seq.cols());
  for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = seq.row(index[i]);
  return out;
}

// --- text encoder ---------------------------------------------------------------------

template <typename S>
TextEncoder<S> TextEncoder<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  TextEncoder net;
  Rng rng(derive_seed(seed, {0x7e47}));
  net.layout.embed = nn::Embedding::create(net.params, rng, "embed", c.vocab_size, c.d_model);
  for (int i = 0; i < c.n_enc_blocks; ++i)
    net.layout.blocks.push_back(
        nn::FftBlock::create(net.params, rng, "blocks." + std::to_string(i), c.d_model, c.n_heads, c.d_ff, c.ffn_kernel));
  net.layout.proj = nn::Linear::create(net.params, rng, "proj", c.d_model, c.d_model);
  net.layout.dropout = c.dropout;
  return net;
}

template <typename S>
Var<S> TextEncoder<S>::encode(Tape<S>& t, const std::vector<int>& tokens, bool trainable, Rng* noise) const {
  if (tokens.empty()) throw ContractError("text encoder: empty phoneme sequence");
  for (int id : tokens)
    if (id < 0 || id >= layout.embed.vocab) throw ContractError("text encoder: token id " + std::to_string(id) + " out of range");
  const auto p = bind(t, params, trainable, noise, layout.dropout);
  Var<S> x = nn::add_positions(layout.embed(p, tokens));
  for (const auto& b : layout.blocks) x = b(p, x);
  return layout.proj(p, x);
}

template <typename S>
Var<S> TextEncoder<S>::forward(Tape<S>& t, const std::vector<int>& tokens, const std::vector<int>& durations,
                               bool trainable, Rng* noise) const {
  if (tokens.size() != durations.size())
    throw ContractError("text encoder: " + std::to_string(tokens.size()) + " phonemes but " + std::to_string(durations.size()) +
                        " durations");
  return length_regulate(encode(t, tokens, trainable, noise), durations);
}

// --- content encoder -------------------------------------------------------------------

template <typename S>
ContentEncoder<S> ContentEncoder<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ContentEncoder net;
  Rng rng(derive_seed(seed, {0xc047}));
  int in = c.n_mels;
  for (int i = 0; i < 3; ++i) {
    net.layout.convs.push_back(nn::Conv1d::create(net.params, rng, "convs." + std::to_string(i), in, c.d_model, c.conv_kernel));
    in = c.d_model;
  }
  net.layout.rnn = nn::BiLstm::create(net.params, rng, "rnn", c.d_model, c.d_model / 2);
  net.layout.proj = nn::Linear::create(net.params, rng, "proj", c.d_model, c.d_model);
  return net;
}

template <typename S>
Var<S> ContentEncoder<S>::forward(Tape<S>& t, Var<S> mel, bool trainable) const {
  if (mel.rows() < 1) throw ContractError("content encoder: empty mel");
  const auto p = bind(t, params, trainable);
  Var<S> x = mel;
  for (const auto& c : layout.convs) x = relu(c(p, x));
  return layout.proj(p, layout.rnn(p, x));
}

// --- style encoder ----------------------------------------------------------------------

template <typename S>
StyleEncoder<S> StyleEncoder<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  StyleEncoder net;
  Rng rng(derive_seed(seed, {0x5717}));
  net.layout.rnn1 = nn::Lstm::create(net.params, rng, "rnn1", c.n_mels, c.style_hidden);
  net.layout.rnn2 = nn::Lstm::create(net.params, rng, "rnn2", c.style_hidden, c.style_hidden);
  net.layout.fc = nn::Linear::create(net.params, rng, "fc", c.style_hidden, c.d_style);
  return net;
}

template <typename S>
Var<S> StyleEncoder<S>::forward(Tape<S>& t, Var<S> mel, bool trainable) const {
  if (mel.rows() < 1) throw ContractError("style encoder: empty mel");
  const auto p = bind(t, params, trainable);
  Var<S> h = layout.rnn2(p, layout.rnn1(p, mel));
  return l2_normalize_rows(layout.fc(p, last_row(h)));
}

// --- decoder ---------------------------------------------------------------------------------

template <typename S>
Decoder<S> Decoder<S>::create(const ModelConfig& c, int content_dim, std::uint64_t seed) {
  c.validate();
  Decoder net;
  Rng rng(derive_seed(seed, {0xdec0, static_cast<std::uint64_t>(content_dim)}));
  net.layout.dropout = c.dropout;
  net.layout.content_dim = content_dim;
  net.layout.in = nn::Linear::create(net.params, rng, "in", content_dim + c.d_style, c.d_model);
  for (int i = 0; i < c.n_dec_blocks; ++i)
    net.layout.blocks.push_back(
        nn::FftBlock::create(net.params, rng, "blocks." + std::to_string(i), c.d_model, c.n_heads, c.d_ff, c.ffn_kernel));
  net.layout.out = nn::Linear::create(net.params, rng, "out", c.d_model, c.n_mels);
  return net;
}

template <typename S>
Var<S> Decoder<S>::forward(Tape<S>& t, Var<S> content, Var<S> style, bool trainable, Rng* noise) const {
  if (content.rows() < 1) throw ContractError("decoder: empty content");
  if (content.cols() != layout.content_dim) throw ContractError("decoder: content width mismatch");
  if (style.rows() != 1) throw ContractError("decoder: style must be a single row");
  const auto p = bind(t, params, trainable, noise, layout.dropout);
  Var<S> x = concat_cols(content, broadcast_rows(style, content.rows()));
  x = nn::add_positions(layout.in(p, x));
  for (const auto& b : layout.blocks) x = b(p, x);
  return layout.out(p, x);
}

// --- speaker classifier -----------------------------------------------------------------------

template <typename S>
SpeakerClassifier<S> SpeakerClassifier<S>::create(const ModelConfig& c, int input_dim, std::uint64_t seed) {
  c.validate();
  SpeakerClassifier net;
  Rng rng(derive_seed(seed, {0xc1a5, static_cast<std::uint64_t>(input_dim)}));
  net.layout.rnn1 = nn::Lstm::create(net.params, rng, "rnn1", input_dim, c.classifier_hidden);
  net.layout.rnn2 = nn::Lstm::create(net.params, rng, "rnn2", c.classifier_hidden, c.classifier_hidden);
  net.layout.fc = nn::Linear::create(net.params, rng, "fc", c.classifier_hidden, c.num_speakers);
  return net;
}

template <typename S>
Var<S> SpeakerClassifier<S>::logits(Tape<S>& t, Var<S> content, bool trainable) const {
  if (content.rows() < 1) throw ContractError("speaker classifier: empty input");
  const auto p = bind(t, params, trainable);
  Var<S> h = layout.rnn2(p, layout.rnn1(p, content));
  return layout.fc(p, last_row(h));
}

template <typename S>
Var<S> SpeakerClassifier<S>::log_posterior(Tape<S>& t, Var<S> content, bool trainable) const {
  return log_softmax_rows(logits(t, content, trainable));
}

template <typename S>
void SpeakerClassifier<S>::zero_output() {
  params.value(layout.fc.weight).setZero();
  params.value(layout.fc.bias).setZero();
}

// --- bottleneck baseline ----------------------------------------------------------------------

template <typename S>
AutoVcEncoder<S> AutoVcEncoder<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  AutoVcEncoder net;
  Rng rng(derive_seed(seed, {0xa07c}));
  int in = c.n_mels + c.d_style;
  for (int i = 0; i < 3; ++i) {
    net.layout.convs.push_back(nn::Conv1d::create(net.params, rng, "convs." + std::to_string(i), in, c.d_model, c.conv_kernel));
    in = c.d_model;
  }
  net.layout.rnn1 = nn::BiLstm::create(net.params, rng, "rnn1", c.d_model, c.autovc_dim);
  net.layout.rnn2 = nn::BiLstm::create(net.params, rng, "rnn2", 2 * c.autovc_dim, c.autovc_dim);
  net.layout.factor = c.autovc_factor;
  return net;
}

template <typename S>
Var<S> AutoVcEncoder<S>::codes(Tape<S>& t, Var<S> mel, Var<S> style, bool trainable) const {
  if (mel.rows() < 1) throw ContractError("autovc encoder: empty mel");
  const auto p = bind(t, params, trainable);
  Var<S> x = concat_cols(mel, broadcast_rows(style, mel.rows()));
  for (const auto& c : layout.convs) x = relu(c(p, x));
  Var<S> h = layout.rnn2(p, layout.rnn1(p, x));
  const int frames = static_cast<int>(mel.rows()), f = layout.factor, dim = static_cast<int>(h.cols()) / 2;
  const int n = (frames + f - 1) / f;
  std::vector<int> fwd_idx, bwd_idx;
  for (int k = 0; k < n; ++k) {
    fwd_idx.push_back(std::min(k * f + f - 1, frames - 1));
    bwd_idx.push_back(k * f);
  }
  return concat_cols(gather_rows(slice_cols(h, 0, dim), fwd_idx), gather_rows(slice_cols(h, dim, dim), bwd_idx));
}

template <typename S>
Var<S> upsample_codes(Var<S> codes, int factor, Eigen::Index frames) {
  if (factor < 1) throw ContractError("upsample_codes: factor below 1");
  if (codes.rows() * factor < frames) throw ContractError("upsample_codes: too few codes for the frame count");
  std::vector<int> index(static_cast<std::size_t>(frames));
  for (Eigen::Index i = 0; i < frames; ++i) index[i] = static_cast<int>(i / factor);
  return gather_rows(codes, std::move(index));
}

// --- bundles ------------------------------------------------------------------------------------

template <typename S>
TgavcModel<S> TgavcModel<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  return {c,
          TextEncoder<S>::create(c, seed),
          ContentEncoder<S>::create(c, seed),
          StyleEncoder<S>::create(c, seed),
          Decoder<S>::create(c, c.d_model, seed),
          SpeakerClassifier<S>::create(c, c.d_model, seed)};
}

template <typename S>
AutoVcModel<S> AutoVcModel<S>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  return {c, AutoVcEncoder<S>::create(c, seed), Decoder<S>::create(c, 2 * c.autovc_dim, seed), StyleEncoder<S>::create(c, seed)};
}

// --- evaluation helpers ------------------------------------------------------------------------

template <typename S>
Matrix<S> encode_text(const TextEncoder<S>& net, const std::vector<int>& tokens, const std::vector<int>& durations) {
  Tape<S> t;
  return net.forward(t, tokens, durations, false).value();
}

template <typename S>
Matrix<S> encode_content(const ContentEncoder<S>& net, const Matrix<S>& mel) {
  Tape<S> t;
  return net.forward(t, t.constant(mel), false).value();
}

template <typename S>
RowVector<S> encode_style(const StyleEncoder<S>& net, const Matrix<S>& mel) {
  Tape<S> t;
  return net.forward(t, t.constant(mel), false).value().row(0);
}

template <typename S>
Matrix<S> decode(const Decoder<S>& net, const Matrix<S>& content, const RowVector<S>& style) {
  Tape<S> t;
  return net.forward(t, t.constant(content), t.constant(style), false).value();
}

template <typename S>
RowVector<S> classify(const SpeakerClassifier<S>& net, const Matrix<S>& content) {
  Tape<S> t;
  return softmax_rows(net.logits(t, t.constant(content), false)).value().row(0);
}

template <typename S>
std::pair<Matrix<S>, Matrix<S>> autovc_forward(const AutoVcModel<S>& m, const Matrix<S>& mel, const RowVector<S>& style) {
  Tape<S> t;
  Var<S> s = t.constant(style);
  Var<S> codes = m.encoder.codes(t, t.constant(mel), s, false);
  Var<S> pred = m.decoder.forward(t, upsample_codes(codes, m.encoder.layout.factor, mel.rows()), s, false);
  return {pred.value(), codes.value()};
}

template <typename S>
std::vector<Matrix<S>> encode_content_batch(const ContentEncoder<S>& net, const std::vector<Matrix<S>>& mels,
                                            const Eigen::VectorXi& lengths) {
  if (static_cast<Eigen::Index>(mels.size()) != lengths.size()) throw ContractError("content batch: lengths mismatch");
  std::vector<Matrix<S>> out;
  for (std::size_t b = 0; b < mels.size(); ++b) {
    const int n = lengths[static_cast<Eigen::Index>(b)];
    if (n < 1 || n > mels[b].rows()) throw ContractError("content batch: invalid length");
    Matrix<S> padded = Matrix<S>::Zero(mels[b].rows(), net.layout.rnn.forward.hidden * 2);
    padded.topRows(n) = encode_content(net, Matrix<S>(mels[b].topRows(n)));
    out.push_back(std::move(padded));
  }
  return out;
}

template <typename S>
std::vector<Matrix<S>> encode_text_batch(const TextEncoder<S>& net, const Eigen::MatrixXi& tokens,
                                         const Eigen::VectorXi& token_lengths, const Eigen::MatrixXi& durations) {
  if (tokens.rows() != token_lengths.size() || durations.rows() != tokens.rows() || durations.cols() != tokens.cols())
    throw ContractError("text batch: shape mismatch");
  std::vector<Matrix<S>> items;
  Eigen::Index max_frames = 0;
  for (Eigen::Index b = 0; b < tokens.rows(); ++b) {
    const int n = token_lengths[b];
    std::vector<int> ids(n), dur(n);
    for (int i = 0; i < n; ++i) {
      ids[i] = tokens(b, i);
      dur[i] = durations(b, i);
    }
    items.push_back(encode_text(net, ids, dur));
    max_frames = std::max(max_frames, items.back().rows());
  }
  for (auto& m : items) {
    Matrix<S> padded = Matrix<S>::Zero(max_frames, m.cols());
    padded.topRows(m.rows()) = m;
    m = std::move(padded);
  }
  return items;
}

#define TGAVC_INSTANTIATE(S)                                                                                              \
  template Var<S> length_regulate<S>(Var<S>, const std::vector<int>&);                                                   \
  template Matrix<S> length_regulate<S>(const Matrix<S>&, const std::vector<int>&);                                      \
  template struct TextEncoder<S>;                                                                                         \
  template struct ContentEncoder<S>;                                                                                      \
  template struct StyleEncoder<S>;                                                                                        \
  template struct Decoder<S>;                                                                                             \
  template struct SpeakerClassifier<S>;                                                                                   \
  template struct AutoVcEncoder<S>;                                                                                       \
  template Var<S> upsample_codes<S>(Var<S>, int, Eigen::Index);                                                          \
  template struct TgavcModel<S>;                                                                                          \
  template struct AutoVcModel<S>;                                                                                         \
  template Matrix<S> encode_text<S>(const TextEncoder<S>&, const std::vector<int>&, const std::vector<int>&);            \
  template Matrix<S> encode_content<S>(const ContentEncoder<S>&, const Matrix<S>&);                                      \
  template RowVector<S> encode_style<S>(const StyleEncoder<S>&, const Matrix<S>&);                                       \
  template Matrix<S> decode<S>(const Decoder<S>&, const Matrix<S>&, const RowVector<S>&);                                \
  template RowVector<S> classify<S>(const SpeakerClassifier<S>&, const Matrix<S>&);                                      \
  template std::pair<Matrix<S>, Matrix<S>> autovc_forward<S>(const AutoVcModel<S>&, const Matrix<S>&, const RowVector<S>&); \
  template std::vector<Matrix<S>> encode_content_batch<S>(const ContentEncoder<S>&, const std::vector<Matrix<S>>&,       \
                                                          const Eigen::VectorXi&);                                        \
  template std::vector<Matrix<S>> encode_text_batch<S>(const TextEncoder<S>&, const Eigen::MatrixXi&,                    \
                                                       const Eigen::VectorXi&, const Eigen::MatrixXi&);

TGAVC_INSTANTIATE(float)
TGAVC_INSTANTIATE(double)

}  // namespace tgavc::models
