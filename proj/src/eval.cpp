#include "tgavc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "png.hpp"
#include "tgavc/conversion.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/objectives.hpp"
#include "tgavc/optim.hpp"

namespace tgavc::eval {

using nlohmann::json;

McdReport evaluate_mcd(const std::vector<dsp::MelSpectrogram>& converted, const std::vector<dsp::MelSpectrogram>& reference,
                       const std::vector<std::string>& source_labels, const std::vector<std::string>& target_labels) {
  if (converted.size() != reference.size())
    throw ParameterError("evaluate_mcd: " + std::to_string(converted.size()) + " converted vs " + std::to_string(reference.size()) +
                         " reference utterances");
  if (converted.empty()) throw ParameterError("evaluate_mcd: no pairs");
  if ((!source_labels.empty() && source_labels.size() != converted.size()) ||
      (!target_labels.empty() && target_labels.size() != converted.size()))
    throw ParameterError("evaluate_mcd: label count does not match pair count");
  McdReport r;
  for (std::size_t i = 0; i < converted.size(); ++i) {
    McdPair p;
    p.source = source_labels.empty() ? std::to_string(i) : source_labels[i];
    p.target = target_labels.empty() ? std::to_string(i) : target_labels[i];
    p.mcd = dsp::mcd(dsp::mel_cepstrum(converted[i]), dsp::mel_cepstrum(reference[i]));
    r.pairs.push_back(std::move(p));
  }
  double sum = 0;
  for (const auto& p : r.pairs) sum += p.mcd;
  r.mean = sum / static_cast<double>(r.pairs.size());
  double var = 0;
  for (const auto& p : r.pairs) var += (p.mcd - r.mean) * (p.mcd - r.mean);
  r.std = std::sqrt(var / static_cast<double>(r.pairs.size()));
  return r;
}

std::vector<Eigen::RowVectorXf> speaker_styles(const training::TrainState& ckpt, const data::Corpus& corpus, int references) {
  if (references < 1) throw ParameterError("speaker_styles: need at least one reference per speaker");
  std::vector<std::vector<dsp::MelSpectrogram>> refs(corpus.num_speakers());
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& r = corpus.manifest.records[i];
      const bool train = r.split == data::Split::train;
      if ((pass == 0) != train) continue;
      auto& list = refs[r.speaker_id];
      // fall back to other splits only for speakers without training audio
      if (pass == 1 && !list.empty()) continue;
      if (static_cast<int>(list.size()) < references) list.push_back(corpus.mels[i]);
    }
  }
  std::vector<Eigen::RowVectorXf> styles;
  for (int k = 0; k < corpus.num_speakers(); ++k) {
    if (refs[k].empty()) throw ParameterError("speaker " + corpus.manifest.speakers[k] + " has no utterances");
    styles.push_back(conversion::compute_style_embedding(ckpt, refs[k]));
  }
  return styles;
}

std::vector<ConversionPair> parallel_conversions(const training::TrainState& ckpt, const data::Corpus& corpus,
                                                 const ConversionProtocol& protocol) {
  const std::vector<Eigen::RowVectorXf> styles = speaker_styles(ckpt, corpus, protocol.style_references);
  std::map<std::string, std::vector<int>> by_text;
  for (int i : corpus.indices(protocol.split)) by_text[corpus.manifest.records[i].pinyin].push_back(i);
  std::map<int, dsp::MelCepstrum> cepstra;
  auto cep = [&](int i) -> const dsp::MelCepstrum& {
    auto it = cepstra.find(i);
    if (it == cepstra.end()) it = cepstra.emplace(i, dsp::mel_cepstrum(corpus.mels[i])).first;
    return it->second;
  };
  std::vector<ConversionPair> pairs;
  for (const auto& [text, recs] : by_text) {
    for (int a : recs) {
      for (int b : recs) {
        const int sa = corpus.manifest.records[a].speaker_id, sb = corpus.manifest.records[b].speaker_id;
        if (sa == sb) continue;
        ConversionPair p;
        p.source_record = a;
        p.target_record = b;
        const dsp::MelSpectrogram converted = conversion::convert(ckpt, corpus.mels[a], styles[sb]);
        p.mcd_converted = dsp::mcd(dsp::mel_cepstrum(converted), cep(b));
        p.mcd_source = dsp::mcd(cep(a), cep(b));
        pairs.push_back(p);
      }
    }
  }
  return pairs;
}

McdReport summarize(const std::vector<ConversionPair>& pairs, const data::Corpus& corpus) {
  if (pairs.empty()) throw ParameterError("no parallel pairs to summarize");
  McdReport r;
  double sum = 0;
  for (const auto& p : pairs) {
    r.pairs.push_back({corpus.manifest.records[p.source_record].utterance_id, corpus.manifest.records[p.target_record].utterance_id,
                       p.mcd_converted});
    sum += p.mcd_converted;
  }
  r.mean = sum / static_cast<double>(pairs.size());
  double var = 0;
  for (const auto& p : pairs) var += (p.mcd_converted - r.mean) * (p.mcd_converted - r.mean);
  r.std = std::sqrt(var / static_cast<double>(pairs.size()));
  return r;
}

// --- probes ------------------------------------------------------------------------------

double probe_accuracy(const std::vector<Eigen::MatrixXf>& train_features, const std::vector<int>& train_labels,
                      const std::vector<Eigen::MatrixXf>& test_features, const std::vector<int>& test_labels,
                      const models::ModelConfig& config, const ProbeConfig& probe) {
  if (train_features.empty() || test_features.empty()) throw ParameterError("probe needs training and test features");
  if (train_features.size() != train_labels.size() || test_features.size() != test_labels.size())
    throw ParameterError("probe: feature and label counts differ");
  if (probe.steps < 0 || probe.batch_size < 1 || !(probe.lr > 0)) throw ParameterError("probe: invalid training settings");
  const int dim = static_cast<int>(train_features.front().cols());
  auto net = models::SpeakerClassifier<float>::create(config, dim, derive_seed(probe.seed, {0x9e0b}));
  optim::AdamState<float> state;
  const optim::AdamConfig adam{probe.lr, 0.9, 0.98, 1e-9, 1.0};
  const int n = static_cast<int>(train_features.size());
  std::vector<int> order;
  std::int64_t epoch = -1;
  for (int step = 0; step < probe.steps; ++step) {
    GradList<float> grads;
    for (int k = 0; k < probe.batch_size; ++k) {
      const std::int64_t flat = static_cast<std::int64_t>(step) * probe.batch_size + k;
      if (flat / n != epoch) {
        epoch = flat / n;
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        data::seeded_shuffle(order, derive_seed(probe.seed, {0x9e0c, static_cast<std::uint64_t>(epoch)}));
      }
      const int i = order[flat % n];
      ag::Tape<float> t;
      auto log_p = net.log_posterior(t, t.constant(train_features[i]), true);
      t.backward(objectives::adversarial_term(log_p, train_labels[i]), -1.0f / static_cast<float>(probe.batch_size));
      optim::accumulate(grads, t.gradients(net.params));
    }
    std::vector<GradList<float>*> lists = {&grads};
    optim::clip_global_norm<float>(lists, adam.clip_norm);
    optim::adam_step(net.params, grads, state, adam);
  }
  int correct = 0;
  for (std::size_t i = 0; i < test_features.size(); ++i) {
    const Eigen::RowVectorXf p = models::classify(net, test_features[i]);
    Eigen::Index best;
    p.maxCoeff(&best);
    correct += static_cast<int>(best) == test_labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_features.size());
}

DisentanglementReport disentanglement_probe(const training::TrainState& ckpt, const data::Corpus& corpus, const ProbeConfig& probe) {
  if (ckpt.regime != training::Regime::tgavc && ckpt.regime != training::Regime::tgavcs)
    throw ParameterError("disentanglement probe needs a checkpoint with a content encoder");
  const auto& cfg = ckpt.model.config;
  const std::vector<int> train = corpus.indices(data::Split::train), test = corpus.indices(data::Split::test);
  if (train.empty() || test.empty()) throw ParameterError("disentanglement probe needs training and test utterances");
  const auto random_encoder = models::ContentEncoder<float>::create(cfg, derive_seed(probe.seed, {0x7a4d}));

  auto features = [&](const std::vector<int>& recs, int kind) {
    std::vector<Eigen::MatrixXf> out;
    for (int i : recs) {
      const Eigen::MatrixXf x = models::normalize_mel(cfg, corpus.mels[i].values);
      if (kind == 0) out.push_back(models::encode_content(ckpt.model.content, x));
      if (kind == 1) out.push_back(x);
      if (kind == 2) out.push_back(models::encode_content(random_encoder, x));
    }
    return out;
  };
  auto labels = [&](const std::vector<int>& recs) {
    std::vector<int> out;
    for (int i : recs) out.push_back(corpus.manifest.records[i].speaker_id);
    return out;
  };
  const auto ytr = labels(train), yte = labels(test);
  DisentanglementReport r;
  r.chance = 1.0 / corpus.num_speakers();
  r.content_probe = probe_accuracy(features(train, 0), ytr, features(test, 0), yte, cfg, probe);
  r.raw_mel_probe = probe_accuracy(features(train, 1), ytr, features(test, 1), yte, cfg, probe);
  r.random_encoder_probe = probe_accuracy(features(train, 2), ytr, features(test, 2), yte, cfg, probe);
  return r;
}

// --- style separation -----------------------------------------------------------------------

StyleSeparation style_separation(const std::vector<Eigen::RowVectorXf>& embeddings, const std::vector<int>& speakers) {
  if (embeddings.size() != speakers.size()) throw ParameterError("style_separation: embedding and speaker counts differ");
  double within = 0, between = 0;
  long nw = 0, nb = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      const double denom = static_cast<double>(embeddings[i].norm()) * embeddings[j].norm();
      const double c = denom > 0 ? embeddings[i].cast<double>().dot(embeddings[j].cast<double>()) / denom : 0.0;
      if (speakers[i] == speakers[j]) {
        within += c;
        ++nw;
      } else {
        between += c;
        ++nb;
      }
    }
  }
  StyleSeparation s;
  if (nw) s.within = within / nw;
  if (nb) s.between = between / nb;
  return s;
}

StyleSeparation style_separation_report(const models::StyleEncoder<float>& encoder, const models::ModelConfig& config,
                                        const data::Corpus& corpus, const std::vector<int>& records) {
  std::vector<Eigen::RowVectorXf> embeddings;
  std::vector<int> speakers;
  for (int i : records) {
    embeddings.push_back(conversion::compute_style_embedding(encoder, config, {corpus.mels[i]}));
    speakers.push_back(corpus.manifest.records[i].speaker_id);
  }
  return style_separation(embeddings, speakers);
}

// --- reports ---------------------------------------------------------------------------------

namespace {

json report_json(const SystemReport& r) {
  json pairs = json::array();
  for (const auto& p : r.mcd.pairs) pairs.push_back({{"source", p.source}, {"target", p.target}, {"mcd", p.mcd}});
  json j = {{"name", r.name},
            {"mcd_mean", r.mcd.mean},
            {"mcd_std", r.mcd.std},
            {"pairs", pairs},
            {"fraction_improved", r.fraction_improved},
            {"config", r.fingerprint.empty() ? json(nullptr) : json::parse(r.fingerprint)}};
  if (r.probe) {
    j["probe_accuracy"] = r.probe->content_probe;
    j["raw_mel_probe_accuracy"] = r.probe->raw_mel_probe;
    j["random_encoder_probe_accuracy"] = r.probe->random_encoder_probe;
    j["chance"] = r.probe->chance;
  }
  j["style_within"] = r.style.within ? json(*r.style.within) : json(nullptr);
  j["style_between"] = r.style.between ? json(*r.style.between) : json(nullptr);
  return j;
}

}  // namespace

std::string to_json(const SystemReport& r) { return report_json(r).dump(2); }

std::string to_json(const std::vector<SystemReport>& systems) {
  json j = {{"systems", json::array()}};
  for (const auto& s : systems) j["systems"].push_back(report_json(s));
  if (systems.size() >= 2) {
    json cmp = json::array();
    for (std::size_t i = 1; i < systems.size(); ++i)
      cmp.push_back({{"system", systems[0].name},
                     {"baseline", systems[i].name},
                     {"mcd_difference", systems[i].mcd.mean - systems[0].mcd.mean},
                     {"system_lower", systems[0].mcd.mean < systems[i].mcd.mean}});
    j["comparison"] = cmp;
  }
  return j.dump(2);
}

// --- plots -----------------------------------------------------------------------------------------

namespace {

constexpr png::Rgb kBlack{0, 0, 0};
constexpr png::Rgb kGrey{200, 200, 200};

void plot_series(png::Image& img, int x0, int y0, int w, int h, const std::vector<std::pair<double, double>>& pts, png::Rgb colour) {
  img.frame(x0, y0, x0 + w, y0 + h, kBlack);
  if (pts.empty()) return;
  double xmin = pts.front().first, xmax = pts.front().first, ymin = pts.front().second, ymax = pts.front().second;
  for (const auto& [x, y] : pts) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  if (ymin < 0 && ymax > 0) {
    const int zero = y0 + h - 2 - static_cast<int>((0 - ymin) / (ymax - ymin) * (h - 4));
    img.line(x0 + 1, zero, x0 + w - 1, zero, kGrey);
  }
  auto px = [&](double x) { return x0 + 2 + static_cast<int>((x - xmin) / (xmax - xmin) * (w - 4)); };
  auto py = [&](double y) { return y0 + h - 2 - static_cast<int>((y - ymin) / (ymax - ymin) * (h - 4)); };
  for (std::size_t i = 1; i < pts.size(); ++i)
    img.line(px(pts[i - 1].first), py(pts[i - 1].second), px(pts[i].first), py(pts[i].second), colour);
  if (pts.size() == 1) img.set(px(pts[0].first), py(pts[0].second), colour);
}

}  // namespace

std::vector<int> triptych_panel_widths(const Triptych& t) {
  return {static_cast<int>(t.source.frames()), static_cast<int>(t.converted.frames()), static_cast<int>(t.target.frames())};
}

PlotResult emit_plots(const std::optional<std::filesystem::path>& metrics_log, const std::vector<SystemReport>& reports,
                      const std::vector<Triptych>& triptychs, const std::filesystem::path& out_dir) {
  PlotResult result;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  static const char* keys[] = {"recon", "content", "adv", "total_l1", "total_l2", "ge2e"};
  if (metrics_log) {
    std::ifstream f(*metrics_log);
    if (!f) throw FileError("cannot read metrics log: " + metrics_log->string());
    std::string line;
    int records = 0;
    while (std::getline(f, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        const double step = j.at("step").get<double>();
        for (const char* k : keys)
          if (j.contains(k) && j.at(k).is_number()) series[k].emplace_back(step, j.at(k).get<double>());
        ++records;
      } catch (const json::exception&) {
        ++result.skipped_lines;
      }
    }
    if (records == 0) {
      result.empty_log = true;
      return result;
    }
  }
  std::filesystem::create_directories(out_dir);

  // drop series that never left zero (terms the regime does not use)
  std::vector<std::string> used;
  for (const char* k : keys) {
    auto it = series.find(k);
    if (it == series.end()) continue;
    if (std::any_of(it->second.begin(), it->second.end(), [](const auto& p) { return p.second != 0.0; })) used.push_back(k);
  }
  if (!used.empty()) {
    const int w = 640, h = 140, pad = 10;
    png::Image img(w + 2 * pad, static_cast<int>(used.size()) * (h + pad) + pad);
    json legend = json::array();
    for (std::size_t i = 0; i < used.size(); ++i) {
      plot_series(img, pad, pad + static_cast<int>(i) * (h + pad), w, h, series[used[i]], png::palette(static_cast<int>(i)));
      const auto c = png::palette(static_cast<int>(i));
      legend.push_back({{"panel", i}, {"series", used[i]}, {"rgb", {c.r, c.g, c.b}}});
    }
    const auto path = out_dir / "loss_curves.png";
    img.write(path);
    std::ofstream(out_dir / "loss_curves.json") << legend.dump(2) << '\n';
    result.files.push_back(path);
  }

  for (const auto& t : triptychs) {
    const std::vector<int> widths = triptych_panel_widths(t);
    const dsp::MelSpectrogram* mels[3] = {&t.source, &t.converted, &t.target};
    float lo = mels[0]->values.minCoeff(), hi = mels[0]->values.maxCoeff();
    for (const auto* m : mels) {
      if (m->frames() < 1) throw ParameterError("triptych mel has no frames");
      lo = std::min(lo, m->values.minCoeff());
      hi = std::max(hi, m->values.maxCoeff());
    }
    const int gap = 4;
    const int bins = static_cast<int>(t.source.bins());
    png::Image img(widths[0] + widths[1] + widths[2] + 2 * gap, bins);
    int x0 = 0;
    for (int p = 0; p < 3; ++p) {
      for (int x = 0; x < widths[p]; ++x)
        for (int b = 0; b < bins; ++b)
          img.set(x0 + x, bins - 1 - b, png::colormap((mels[p]->values(x, b) - lo) / std::max(1e-6f, hi - lo)));
      x0 += widths[p] + gap;
    }
    const auto path = out_dir / ("triptych_" + t.name + ".png");
    img.write(path);
    result.files.push_back(path);
  }

  if (!reports.empty()) {
    double top = 0;
    for (const auto& r : reports) top = std::max(top, r.mcd.mean + r.mcd.std);
    if (top <= 0) top = 1;
    const int bar = 60, pad = 30, h = 240;
    png::Image img(pad + static_cast<int>(reports.size()) * (bar + pad), h + 2 * pad);
    img.line(pad / 2, pad + h, img.width() - pad / 2, pad + h, kBlack);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const int x = pad + static_cast<int>(i) * (bar + pad);
      auto y = [&](double v) { return pad + h - static_cast<int>(v / top * h); };
      img.rect(x, y(reports[i].mcd.mean), x + bar, pad + h, png::palette(static_cast<int>(i)));
      const int cx = x + bar / 2;
      img.line(cx, y(std::max(0.0, reports[i].mcd.mean - reports[i].mcd.std)), cx, y(reports[i].mcd.mean + reports[i].mcd.std), kBlack);
      img.line(cx - 8, y(reports[i].mcd.mean + reports[i].mcd.std), cx + 8, y(reports[i].mcd.mean + reports[i].mcd.std), kBlack);
    }
    const auto path = out_dir / "mcd_bars.png";
    img.write(path);
    json legend = json::array();
    for (std::size_t i = 0; i < reports.size(); ++i)
      legend.push_back({{"bar", i}, {"system", reports[i].name}, {"mcd_mean", reports[i].mcd.mean}, {"mcd_std", reports[i].mcd.std}});
    std::ofstream(out_dir / "mcd_bars.json") << legend.dump(2) << '\n';
    result.files.push_back(path);
  }
  return result;
}

}  // namespace tgavc::eval
