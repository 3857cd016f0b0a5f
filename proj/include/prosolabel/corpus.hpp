#pragma once

// Prosodic label taxonomies, phoneme inventory and the utterance data model.
//
// Labels live per phoneme. Mora-core phonemes (vowels, /Q/, /N/ by default)
// carry all four labels; every other phoneme carries none. The loss mask and
// the evaluation mask are both derived from that single rule.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prosolabel/error.hpp"

namespace prosolabel {

enum class AccLabel { Other, LowToHigh, HighToLow, BoundaryFall, BoundaryRiseFall, BoundaryRise };
enum class HlLabel { Low, High };
enum class BiLabel { B0, B1, B2, B3, Filled, Disfluency };
enum class PauLabel { No, Yes };

template <typename Label>
struct LabelTraits;

template <>
struct LabelTraits<AccLabel> {
  static constexpr std::array<std::string_view, 6> symbols{"*", "[", "]", "#", "%", "?"};
};
template <>
struct LabelTraits<HlLabel> {
  static constexpr std::array<std::string_view, 2> symbols{"L", "H"};
};
template <>
struct LabelTraits<BiLabel> {
  static constexpr std::array<std::string_view, 6> symbols{"0", "1", "2", "3", "F", "D"};
};
template <>
struct LabelTraits<PauLabel> {
  static constexpr std::array<std::string_view, 2> symbols{"N", "Y"};
};

template <typename Label>
constexpr std::size_t label_count() {
  return LabelTraits<Label>::symbols.size();
}

template <typename Label>
constexpr std::string_view render(Label label) {
  return LabelTraits<Label>::symbols[static_cast<std::size_t>(label)];
}

template <typename Label>
constexpr std::optional<Label> parse_label(std::string_view symbol) {
  const auto& symbols = LabelTraits<Label>::symbols;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] == symbol) return static_cast<Label>(i);
  }
  return std::nullopt;
}

// The four prediction tasks, in head order.
enum class Task { Acc, Hl, Bi, Pau };

inline constexpr std::array<Task, 4> kTasks{Task::Acc, Task::Hl, Task::Bi, Task::Pau};
inline constexpr std::array<int, 4> kTaskClassCount{6, 2, 6, 2};
inline constexpr std::array<std::string_view, 4> kTaskNames{"acc", "hl", "bi", "pau"};

constexpr std::size_t task_index(Task task) { return static_cast<std::size_t>(task); }
constexpr int class_count(Task task) { return kTaskClassCount[task_index(task)]; }
constexpr std::string_view task_name(Task task) { return kTaskNames[task_index(task)]; }

inline std::string_view class_symbol(Task task, int cls) {
  switch (task) {
    case Task::Acc: return LabelTraits<AccLabel>::symbols.at(static_cast<std::size_t>(cls));
    case Task::Hl: return LabelTraits<HlLabel>::symbols.at(static_cast<std::size_t>(cls));
    case Task::Bi: return LabelTraits<BiLabel>::symbols.at(static_cast<std::size_t>(cls));
    case Task::Pau: return LabelTraits<PauLabel>::symbols.at(static_cast<std::size_t>(cls));
  }
  return {};
}

inline std::optional<int> parse_class(Task task, std::string_view symbol) {
  for (int c = 0; c < class_count(task); ++c) {
    if (class_symbol(task, c) == symbol) return c;
  }
  return std::nullopt;
}

struct LabelBundle {
  std::optional<AccLabel> acc;
  std::optional<HlLabel> hl;
  std::optional<BiLabel> bi;
  std::optional<PauLabel> pau;

  bool all_present() const { return acc && hl && bi && pau; }
  bool all_absent() const { return !acc && !hl && !bi && !pau; }

  friend bool operator==(const LabelBundle&, const LabelBundle&) = default;
};

inline std::optional<int> class_index(const LabelBundle& bundle, Task task) {
  auto idx = [](const auto& opt) -> std::optional<int> {
    if (!opt) return std::nullopt;
    return static_cast<int>(*opt);
  };
  switch (task) {
    case Task::Acc: return idx(bundle.acc);
    case Task::Hl: return idx(bundle.hl);
    case Task::Bi: return idx(bundle.bi);
    case Task::Pau: return idx(bundle.pau);
  }
  return std::nullopt;
}

inline void set_class_index(LabelBundle& bundle, Task task, std::optional<int> cls) {
  switch (task) {
    case Task::Acc:
      bundle.acc = cls ? std::optional<AccLabel>(static_cast<AccLabel>(*cls)) : std::nullopt;
      break;
    case Task::Hl:
      bundle.hl = cls ? std::optional<HlLabel>(static_cast<HlLabel>(*cls)) : std::nullopt;
      break;
    case Task::Bi:
      bundle.bi = cls ? std::optional<BiLabel>(static_cast<BiLabel>(*cls)) : std::nullopt;
      break;
    case Task::Pau:
      bundle.pau = cls ? std::optional<PauLabel>(static_cast<PauLabel>(*cls)) : std::nullopt;
      break;
  }
}

struct PhonemeToken {
  std::string symbol;
  int duration = 0;  // frames at the canonical hop
  bool mora_core = false;

  friend bool operator==(const PhonemeToken&, const PhonemeToken&) = default;
};

// Closed phoneme set plus the subset treated as mora cores.
class PhonemeInventory {
 public:
  PhonemeInventory(std::vector<std::string> symbols, std::set<std::string> mora_cores)
      : symbols_(std::move(symbols)), mora_cores_(std::move(mora_cores)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], i).second) {
        fail(Errc::InvalidConfig, "duplicate phoneme symbol '" + symbols_[i] + "'");
      }
    }
    for (const auto& core : mora_cores_) {
      if (!index_.count(core)) {
        fail(Errc::UnknownSymbol, "mora-core symbol '" + core + "' not in inventory");
      }
    }
  }

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::set<std::string>& mora_cores() const { return mora_cores_; }

  bool contains(std::string_view symbol) const { return index_.count(std::string(symbol)) != 0; }

  std::size_t index_of(std::string_view symbol) const {
    auto it = index_.find(std::string(symbol));
    if (it == index_.end()) fail(Errc::UnknownSymbol, "phoneme '" + std::string(symbol) + "'");
    return it->second;
  }

  bool is_mora_core(std::string_view symbol) const {
    index_of(symbol);
    return mora_cores_.count(std::string(symbol)) != 0;
  }

  PhonemeToken make_token(std::string_view symbol, int duration) const {
    return PhonemeToken{std::string(symbol), duration, is_mora_core(symbol)};
  }

 private:
  std::vector<std::string> symbols_;
  std::set<std::string> mora_cores_;
  std::unordered_map<std::string, std::size_t> index_;
};

// CSJ-style 62-symbol inventory. The exact CSJ set is not public in enumerated
// form; devoiced vowels (A I U E O) are listed but not treated as mora cores.
inline const PhonemeInventory& default_inventory() {
  static const PhonemeInventory inventory(
      {
          // vowels, long vowels, devoiced vowels
          "a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:", "A", "I", "U", "E", "O",
          // moraic nasal and geminate
          "N", "Q",
          // consonants
          "k", "g", "s", "sh", "z", "j", "t", "ch", "ts", "d", "n", "h", "f", "b", "p", "m",
          "y", "r", "w",
          // palatalized consonants
          "ky", "gy", "ny", "hy", "by", "py", "my", "ry",
          // loanword consonants
          "ty", "dy", "v", "kw", "gw", "fy", "ng", "zy", "sy",
          // non-phonetic tokens
          "pau", "sil", "sp", "br", "<pad>", "<unk>", "<bos>", "<eos>", "<mask>",
      },
      {"a", "i", "u", "e", "o", "a:", "i:", "u:", "e:", "o:", "N", "Q"});
  return inventory;
}

inline bool is_mora_core(std::string_view symbol, const PhonemeInventory& inventory) {
  return inventory.is_mora_core(symbol);
}

struct Utterance {
  std::string id;
  std::vector<PhonemeToken> phonemes;
  std::optional<std::vector<LabelBundle>> labels;
  std::optional<std::string> audio;
  std::map<std::string, std::string> features;  // stream name -> feature file

  int total_frames() const {
    int total = 0;
    for (const auto& p : phonemes) total += p.duration;
    return total;
  }

  std::vector<bool> mora_mask() const {
    std::vector<bool> mask;
    mask.reserve(phonemes.size());
    for (const auto& p : phonemes) mask.push_back(p.mora_core);
    return mask;
  }

  std::vector<int> durations() const {
    std::vector<int> out;
    out.reserve(phonemes.size());
    for (const auto& p : phonemes) out.push_back(p.duration);
    return out;
  }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Checks every type invariant. Throws on the first violation.
inline void validate(const Utterance& utt, const PhonemeInventory& inventory) {
  for (std::size_t i = 0; i < utt.phonemes.size(); ++i) {
    const auto& p = utt.phonemes[i];
    if (p.duration < 0) {
      fail(Errc::MalformedRecord, utt.id + ": negative duration at position " + std::to_string(i));
    }
    if (inventory.is_mora_core(p.symbol) != p.mora_core) {
      fail(Errc::MalformedRecord,
           utt.id + ": mora_core flag disagrees with inventory for '" + p.symbol + "'");
    }
  }
  if (!utt.labels) return;
  if (utt.labels->size() != utt.phonemes.size()) {
    fail(Errc::AlignmentMismatch, utt.id + ": " + std::to_string(utt.labels->size()) +
                                      " label positions for " +
                                      std::to_string(utt.phonemes.size()) + " phonemes");
  }
  for (std::size_t i = 0; i < utt.phonemes.size(); ++i) {
    const auto& bundle = (*utt.labels)[i];
    if (utt.phonemes[i].mora_core && !bundle.all_present()) {
      fail(Errc::MalformedRecord, utt.id + ": mora-core phoneme '" + utt.phonemes[i].symbol +
                                      "' at position " + std::to_string(i) +
                                      " is missing labels");
    }
    if (!utt.phonemes[i].mora_core && !bundle.all_absent()) {
      fail(Errc::MalformedRecord, utt.id + ": non-core phoneme '" + utt.phonemes[i].symbol +
                                      "' at position " + std::to_string(i) + " carries labels");
    }
  }
}

// Per task, counts of each class over mora-core positions.
using ClassCounts = std::array<std::vector<std::size_t>, 4>;

inline ClassCounts class_counts(const std::vector<Utterance>& utterances) {
  ClassCounts counts;
  for (Task task : kTasks) counts[task_index(task)].assign(class_count(task), 0);
  for (const auto& utt : utterances) {
    if (!utt.labels) fail(Errc::UnlabeledUtterance, utt.id);
    for (std::size_t i = 0; i < utt.phonemes.size(); ++i) {
      if (!utt.phonemes[i].mora_core) continue;
      for (Task task : kTasks) {
        auto cls = class_index((*utt.labels)[i], task);
        if (!cls) fail(Errc::MalformedRecord, utt.id + ": missing label at mora core");
        ++counts[task_index(task)][static_cast<std::size_t>(*cls)];
      }
    }
  }
  return counts;
}

}  // namespace prosolabel
