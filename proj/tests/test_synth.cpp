#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "prosolabel/synth.hpp"
#include "test_util.hpp"

namespace prosolabel {
namespace {

namespace fs = std::filesystem;

std::map<std::string, std::string> slurp_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    out[fs::relative(entry.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

TEST(Synth, SameSeedGivesByteIdenticalCorpora) {
  SynthPlant plant;
  plant.noise = 0.3;
  plant.audio = true;
  const auto a = testing::scratch_dir("synth_a");
  const auto b = testing::scratch_dir("synth_b");
  write_synth_corpus(synth_corpus(7, 5, plant), a);
  write_synth_corpus(synth_corpus(7, 5, plant), b);
  const auto ta = slurp_tree(a);
  EXPECT_EQ(ta.size(), 1u + 5u * 3u);
  EXPECT_EQ(ta, slurp_tree(b));
  const auto c = testing::scratch_dir("synth_c");
  write_synth_corpus(synth_corpus(8, 5, plant), c);
  EXPECT_NE(ta, slurp_tree(c));
}

TEST(Synth, CorpusIsWellFormed) {
  const auto corpus = synth_corpus(3, 20);
  ASSERT_EQ(corpus.utterances.size(), 20u);
  for (std::size_t u = 0; u < 20; ++u) {
    const auto& utt = corpus.utterances[u];
    EXPECT_EQ(utt.id, synth_id(u));
    EXPECT_NO_THROW(validate(utt, default_inventory()));
    EXPECT_EQ(corpus.tensors[u].acoustic->steps(), static_cast<std::size_t>(utt.total_frames()));
    EXPECT_EQ(corpus.tensors[u].linguistic->steps(), utt.phonemes.size());
  }
  EXPECT_EQ(synth_id(12), "synth0012");
  EXPECT_EQ(synth_id(123456), "synth123456");
}

TEST(Synth, PlantValidation) {
  SynthPlant p;
  p.acoustic_signal_layer = 4;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.linguistic_dim = 7;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.noise = -1;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_THROW(synth_corpus(1, 0), Error);
  p = {};
  p.noise = 0.5;
  p.max_moras = 20;
  EXPECT_EQ(SynthPlant::from_json(p.to_json()).to_json(), p.to_json());
}

// Per-core block vectors of one task: the signal layer, restricted to the
// task's coordinates, averaged over the phoneme's frames on the acoustic side.
struct CoreSample {
  std::vector<double> x;
  int label;
  int frames;
};

std::vector<CoreSample> core_samples(const SynthCorpus& corpus, const SynthPlant& plant, Task task) {
  const PlantBlock block = plant.block(task);
  std::vector<CoreSample> out;
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    const auto& utt = corpus.utterances[u];
    const auto& t = corpus.tensors[u];
    std::size_t frame = 0;
    for (std::size_t p = 0; p < utt.phonemes.size(); ++p) {
      const auto dur = static_cast<std::size_t>(utt.phonemes[p].duration);
      if (utt.phonemes[p].mora_core) {
        CoreSample s{std::vector<double>(block.width, 0.0), *class_index((*utt.labels)[p], task),
                     static_cast<int>(dur)};
        for (std::size_t k = 0; k < block.width; ++k) {
          if (block.side == Side::Acoustic) {
            for (std::size_t f = frame; f < frame + dur; ++f) {
              s.x[k] += t.acoustic->at(block.layer, f, block.offset + k) / static_cast<double>(dur);
            }
          } else {
            s.x[k] = t.linguistic->at(block.layer, p, block.offset + k);
          }
        }
        out.push_back(std::move(s));
      }
      frame += dur;
    }
  }
  return out;
}

// Nearest-centroid accuracy with centroids estimated from the samples.
double nearest_centroid_accuracy(const std::vector<CoreSample>& samples, int classes) {
  const std::size_t width = samples.front().x.size();
  std::vector<std::vector<double>> centroid(static_cast<std::size_t>(classes),
                                            std::vector<double>(width, 0.0));
  std::vector<int> count(static_cast<std::size_t>(classes), 0);
  for (const auto& s : samples) {
    ++count[static_cast<std::size_t>(s.label)];
    for (std::size_t k = 0; k < width; ++k) centroid[static_cast<std::size_t>(s.label)][k] += s.x[k];
  }
  for (int c = 0; c < classes; ++c) {
    for (double& v : centroid[static_cast<std::size_t>(c)]) v /= std::max(1, count[static_cast<std::size_t>(c)]);
  }
  int correct = 0;
  for (const auto& s : samples) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < classes; ++c) {
      if (!count[static_cast<std::size_t>(c)]) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < width; ++k) {
        d += std::pow(s.x[k] - centroid[static_cast<std::size_t>(c)][k], 2);
      }
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    correct += best == s.label;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TEST(Synth, ZeroNoiseIsPerfectlySeparable) {
  SynthPlant plant;
  plant.noise = 0.0;
  const auto corpus = synth_corpus(5, 40, plant);
  for (Task task : kTasks) {
    EXPECT_EQ(nearest_centroid_accuracy(core_samples(corpus, plant, task), class_count(task)), 1.0)
        << task_name(task);
  }
}

// P(correct) for K classes at separation s, per-coordinate noise sd:
// the true coordinate must beat K-1 independent competitors,
// integral of phi(z) * Phi(z + s/sd)^(K-1) dz, by the trapezoid rule.
double correct_probability(int classes, double separation, double sd) {
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  const double h = 1e-3;
  double sum = 0.0;
  for (double z = -10.0; z <= 10.0; z += h) {
    sum += phi(z) * std::pow(cdf(z + separation / sd), classes - 1) * h;
  }
  return sum;
}

TEST(Synth, NoisyOracleMatchesIndependentEstimate) {
  SynthPlant plant;
  plant.noise = 0.9;
  const auto corpus = synth_corpus(9, 400, plant);
  for (Task task : kTasks) {
    const auto samples = core_samples(corpus, plant, task);
    std::map<int, double> by_frames;
    double expect = 0.0;
    for (const auto& s : samples) {
      const int frames = plant.block(task).side == Side::Acoustic ? s.frames : 1;
      auto it = by_frames.find(frames);
      if (it == by_frames.end()) {
        const double sd = plant.noise / std::sqrt(static_cast<double>(frames));
        it = by_frames.emplace(frames, correct_probability(class_count(task), plant.separation, sd)).first;
      }
      expect += it->second;
    }
    expect /= static_cast<double>(samples.size());
    const double got = nearest_centroid_accuracy(samples, class_count(task));
    EXPECT_NEAR(got, expect, 0.02) << task_name(task) << " over " << samples.size() << " cores";
    EXPECT_LT(got, 0.999);
  }
}

TEST(Synth, DistractorLayersCarryNoLabelInformation) {
  SynthPlant plant;
  plant.noise = 0.0;
  plant.distractor = 1.0;
  auto corpus = synth_corpus(4, 200, plant);
  SynthPlant probe = plant;
  probe.acoustic_signal_layer = 0;
  probe.linguistic_signal_layer = 0;
  for (Task task : kTasks) {
    const auto samples = core_samples(corpus, probe, task);
    // chance level for the majority class is the best a label-free layer can do
    EXPECT_LT(nearest_centroid_accuracy(samples, class_count(task)), 0.7) << task_name(task);
  }
}

TEST(Synth, AudioPitchFollowsHl) {
  SynthPlant plant;
  plant.audio = true;
  const auto corpus = synth_corpus(2, 2, plant);
  ASSERT_EQ(corpus.audio.size(), 2u);
  const auto& utt = corpus.utterances[0];
  const std::size_t hop = FrameGrid::canonical(16000).hop;
  EXPECT_EQ(corpus.audio[0].samples.size(), hop * static_cast<std::size_t>(utt.total_frames()));
  EXPECT_EQ(corpus.audio[0].sample_rate, 16000);
}

}  // namespace
}  // namespace prosolabel
