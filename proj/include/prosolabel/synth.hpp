#pragma once

// Seeded synthetic corpus with labels planted in known feature coordinates.
//
// Acoustic features are frame-level L_a x T x D_a tensors; linguistic features
// are phoneme-level L_l x P x D_l. ACC and HL are planted in one acoustic
// layer, BI and PAU in one linguistic layer. Each task owns a block of
// class_count coordinates and class c of a mora core adds `separation` to the
// c-th coordinate of its block. Every value also carries N(0, noise^2); the
// remaining layers are N(0, distractor^2) and carry no label information.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "prosolabel/corpus.hpp"
#include "prosolabel/dsp.hpp"
#include "prosolabel/error.hpp"
#include "prosolabel/features.hpp"
#include "prosolabel/manifest.hpp"
#include "prosolabel/random.hpp"
#include "prosolabel/wav.hpp"

namespace prosolabel {

inline constexpr std::string_view kSynthAcoustic = "synth-acoustic";
inline constexpr std::string_view kSynthLinguistic = "synth-linguistic";

enum class Side { Acoustic, Linguistic };

// Where a task's planted block lives.
struct PlantBlock {
  Side side = Side::Acoustic;
  std::size_t layer = 0;
  std::size_t offset = 0;
  std::size_t width = 0;
};

struct SynthPlant {
  std::size_t acoustic_layers = 4;
  std::size_t acoustic_dim = 16;
  std::size_t acoustic_signal_layer = 2;
  std::size_t linguistic_layers = 3;
  std::size_t linguistic_dim = 12;
  std::size_t linguistic_signal_layer = 1;
  double separation = 1.0;
  double noise = 0.1;
  double distractor = 0.1;
  int min_moras = 20;
  int max_moras = 40;
  int max_duration = 6;  // frames per phoneme, drawn from [1, max_duration]
  bool audio = false;    // also render a 16 kHz tone whose pitch follows HL

  PlantBlock block(Task task) const {
    switch (task) {
      case Task::Acc: return {Side::Acoustic, acoustic_signal_layer, 0, 6};
      case Task::Hl: return {Side::Acoustic, acoustic_signal_layer, 6, 2};
      case Task::Bi: return {Side::Linguistic, linguistic_signal_layer, 0, 6};
      case Task::Pau: return {Side::Linguistic, linguistic_signal_layer, 6, 2};
    }
    return {};
  }

  void validate() const {
    if (acoustic_signal_layer >= acoustic_layers || linguistic_signal_layer >= linguistic_layers) {
      fail(Errc::InvalidConfig, "signal layer out of range");
    }
    if (acoustic_dim < 8 || linguistic_dim < 8) {
      fail(Errc::InvalidConfig, "planted blocks need at least 8 dims per stream");
    }
    if (noise < 0.0 || distractor < 0.0) fail(Errc::InvalidConfig, "noise must be non-negative");
    if (min_moras < 1 || max_moras < min_moras || max_duration < 1) {
      fail(Errc::InvalidConfig, "bad synthetic length settings");
    }
  }

  nlohmann::json to_json() const {
    return {{"acoustic_layers", acoustic_layers},
            {"acoustic_dim", acoustic_dim},
            {"acoustic_signal_layer", acoustic_signal_layer},
            {"linguistic_layers", linguistic_layers},
            {"linguistic_dim", linguistic_dim},
            {"linguistic_signal_layer", linguistic_signal_layer},
            {"separation", separation},
            {"noise", noise},
            {"distractor", distractor},
            {"min_moras", min_moras},
            {"max_moras", max_moras},
            {"max_duration", max_duration},
            {"audio", audio}};
  }

  static SynthPlant from_json(const nlohmann::json& j) {
    SynthPlant p;
    p.acoustic_layers = j.value("acoustic_layers", p.acoustic_layers);
    p.acoustic_dim = j.value("acoustic_dim", p.acoustic_dim);
    p.acoustic_signal_layer = j.value("acoustic_signal_layer", p.acoustic_signal_layer);
    p.linguistic_layers = j.value("linguistic_layers", p.linguistic_layers);
    p.linguistic_dim = j.value("linguistic_dim", p.linguistic_dim);
    p.linguistic_signal_layer = j.value("linguistic_signal_layer", p.linguistic_signal_layer);
    p.separation = j.value("separation", p.separation);
    p.noise = j.value("noise", p.noise);
    p.distractor = j.value("distractor", p.distractor);
    p.min_moras = j.value("min_moras", p.min_moras);
    p.max_moras = j.value("max_moras", p.max_moras);
    p.max_duration = j.value("max_duration", p.max_duration);
    p.audio = j.value("audio", p.audio);
    return p;
  }
};

struct SynthCorpus {
  std::vector<Utterance> utterances;
  std::vector<StreamTensors> tensors;  // parallel to utterances
  std::vector<Waveform> audio;         // parallel to utterances when plant.audio
};

namespace detail {

// Mild label priors, roughly the skew of spontaneous speech.
inline constexpr std::array<double, 6> kAccPrior{0.55, 0.12, 0.12, 0.11, 0.05, 0.05};
inline constexpr std::array<double, 2> kHlPrior{0.5, 0.5};
inline constexpr std::array<double, 6> kBiPrior{0.45, 0.2, 0.15, 0.1, 0.05, 0.05};
inline constexpr std::array<double, 2> kPauPrior{0.8, 0.2};

template <std::size_t N>
int draw(Rng& rng, const std::array<double, N>& prior) {
  double u = uniform01(rng);
  for (std::size_t i = 0; i < N; ++i) {
    if (u < prior[i]) return static_cast<int>(i);
    u -= prior[i];
  }
  return static_cast<int>(N - 1);
}

inline const std::vector<std::string>& synth_consonants() {
  static const std::vector<std::string> c{"k", "g", "s", "sh", "z", "t", "ch", "ts", "d", "n",
                                          "h", "f", "b", "p", "m", "y", "r", "w", "ky", "ny"};
  return c;
}

inline const std::vector<std::string>& synth_vowels() {
  static const std::vector<std::string> v{"a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:"};
  return v;
}

inline Utterance synth_sequence(Rng& rng, const std::string& id, const SynthPlant& plant) {
  const auto& inv = default_inventory();
  Utterance utt;
  utt.id = id;
  std::vector<LabelBundle> labels;
  auto push = [&](const std::string& symbol, int duration) {
    utt.phonemes.push_back(inv.make_token(symbol, duration));
    LabelBundle b;
    if (utt.phonemes.back().mora_core) {
      b.acc = static_cast<AccLabel>(draw(rng, kAccPrior));
      b.hl = static_cast<HlLabel>(draw(rng, kHlPrior));
      b.bi = static_cast<BiLabel>(draw(rng, kBiPrior));
      b.pau = static_cast<PauLabel>(draw(rng, kPauPrior));
    }
    labels.push_back(b);
  };
  auto duration = [&] { return 1 + static_cast<int>(uniform_index(rng, plant.max_duration)); };

  push("sil", duration());
  const int moras =
      plant.min_moras + static_cast<int>(uniform_index(rng, plant.max_moras - plant.min_moras + 1));
  for (int m = 0; m < moras; ++m) {
    const double u = uniform01(rng);
    if (u < 0.7) {
      push(synth_consonants()[uniform_index(rng, synth_consonants().size())], duration());
      push(synth_vowels()[uniform_index(rng, synth_vowels().size())], duration());
    } else if (u < 0.85) {
      push(synth_vowels()[uniform_index(rng, synth_vowels().size())], duration());
    } else if (u < 0.95) {
      push(uniform01(rng) < 0.5 ? "N" : "Q", duration());
    } else {
      push("pau", duration());
    }
  }
  push("sil", duration());
  utt.labels = std::move(labels);
  return utt;
}

inline void plant(FeatureTensor& tensor, std::size_t layer, std::size_t row, const PlantBlock& block,
                  int cls, double separation) {
  tensor.at(layer, row, block.offset + static_cast<std::size_t>(cls)) += separation;
}

inline Waveform synth_audio(const Utterance& utt, int sample_rate) {
  const std::size_t hop = FrameGrid::canonical(sample_rate).hop;
  Waveform w;
  w.sample_rate = sample_rate;
  double phase = 0.0;
  for (std::size_t p = 0; p < utt.phonemes.size(); ++p) {
    double f0 = 180.0;
    if (utt.phonemes[p].mora_core && (*utt.labels)[p].hl) {
      f0 = *(*utt.labels)[p].hl == HlLabel::High ? 220.0 : 140.0;
    }
    const std::string& s = utt.phonemes[p].symbol;
    const bool silent = s == "sil" || s == "pau" || s == "Q";
    const std::size_t n = hop * static_cast<std::size_t>(utt.phonemes[p].duration);
    for (std::size_t i = 0; i < n; ++i) {
      w.samples.push_back(silent ? 0.0 : 0.5 * std::sin(phase));
      phase += 2.0 * std::numbers::pi * f0 / sample_rate;
    }
    phase = std::fmod(phase, 2.0 * std::numbers::pi);
  }
  return w;
}

}  // namespace detail

inline std::string synth_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "synth" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

inline SynthCorpus synth_corpus(std::uint64_t seed, std::size_t n_utts,
                                const SynthPlant& plant = {}) {
  plant.validate();
  if (n_utts < 1) fail(Errc::InvalidConfig, "synth corpus needs at least one utterance");
  Rng rng(seed);
  SynthCorpus corpus;
  for (std::size_t u = 0; u < n_utts; ++u) {
    Utterance utt = detail::synth_sequence(rng, synth_id(u), plant);
    const auto& labels = *utt.labels;
    const std::size_t frames = static_cast<std::size_t>(utt.total_frames());
    const std::size_t phonemes = utt.phonemes.size();

    FeatureTensor aco(plant.acoustic_layers, frames, plant.acoustic_dim, AxisKind::Frame);
    FeatureTensor ling(plant.linguistic_layers, phonemes, plant.linguistic_dim, AxisKind::Phoneme);
    auto fill = [&](FeatureTensor& t, std::size_t signal_layer) {
      for (std::size_t l = 0; l < t.layers(); ++l) {
        const double sd = l == signal_layer ? plant.noise : plant.distractor;
        for (std::size_t s = 0; s < t.steps(); ++s) {
          for (std::size_t d = 0; d < t.dim(); ++d) t.at(l, s, d) = sd * normal(rng);
        }
      }
    };
    fill(aco, plant.acoustic_signal_layer);
    fill(ling, plant.linguistic_signal_layer);

    std::size_t frame = 0;
    for (std::size_t p = 0; p < phonemes; ++p) {
      const auto dur = static_cast<std::size_t>(utt.phonemes[p].duration);
      if (utt.phonemes[p].mora_core) {
        for (Task task : kTasks) {
          const PlantBlock block = plant.block(task);
          const int cls = *class_index(labels[p], task);
          if (block.side == Side::Acoustic) {
            for (std::size_t f = frame; f < frame + dur; ++f) {
              detail::plant(aco, block.layer, f, block, cls, plant.separation);
            }
          } else {
            detail::plant(ling, block.layer, p, block, cls, plant.separation);
          }
        }
      }
      frame += dur;
    }

    utt.features[std::string(kSynthAcoustic)] = "features/" + utt.id + ".aco.pfe";
    utt.features[std::string(kSynthLinguistic)] = "features/" + utt.id + ".ling.pfe";
    if (plant.audio) {
      corpus.audio.push_back(detail::synth_audio(utt, 16000));
      utt.audio = "audio/" + utt.id + ".wav";
    }
    corpus.tensors.push_back({std::move(aco), std::move(ling)});
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

// Writes manifest.jsonl, features/ and (optionally) audio/ under `dir`. The
// manifest references are relative to `dir`.
inline std::filesystem::path write_synth_corpus(const SynthCorpus& corpus,
                                                const std::filesystem::path& dir,
                                                const std::string& manifest_name = "manifest.jsonl") {
  std::filesystem::create_directories(dir / "features");
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    const auto& utt = corpus.utterances[u];
    write_features(*corpus.tensors[u].acoustic, dir / utt.features.at(std::string(kSynthAcoustic)));
    write_features(*corpus.tensors[u].linguistic,
                   dir / utt.features.at(std::string(kSynthLinguistic)));
    if (utt.audio && u < corpus.audio.size()) {
      std::filesystem::create_directories(dir / "audio");
      write_wav(corpus.audio[u], dir / *utt.audio);
    }
  }
  const auto path = dir / manifest_name;
  write_manifest(path, corpus.utterances);
  return path;
}

inline StreamConfig synth_streams() {
  return {std::string(kSynthAcoustic), std::string(kSynthLinguistic)};
}

}  // namespace prosolabel
