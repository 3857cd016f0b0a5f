#pragma once

// JSON-lines manifest: one utterance per line.
//
//   {"id": str, "phonemes": [str], "durations": [int],
//    "labels": {"acc": [str|null], "hl": [...], "bi": [...], "pau": [...]} | null,
//    "audio": str|null, "features": {stream: path}}
//
// Only these keys are accepted. "labels", "audio" and "features" may be
// omitted. Label arrays run parallel to "phonemes"; entries are null at
// non-core phonemes and a symbol at mora cores.

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosolabel/corpus.hpp"
#include "prosolabel/error.hpp"

namespace prosolabel {

namespace detail {

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline Utterance parse_record(const nlohmann::json& rec, std::size_t line,
                              const PhonemeInventory& inventory) {
  using nlohmann::json;
  const std::string where = at_line(line);
  if (!rec.is_object()) fail(Errc::MalformedRecord, where + "record is not a JSON object");

  static const std::set<std::string> allowed{"id", "phonemes", "durations", "labels", "audio",
                                             "features"};
  for (const auto& [key, value] : rec.items()) {
    if (!allowed.count(key)) fail(Errc::MalformedRecord, where + "unexpected key '" + key + "'");
  }
  for (const char* required : {"id", "phonemes", "durations"}) {
    if (!rec.contains(required)) {
      fail(Errc::MalformedRecord, where + "missing key '" + std::string(required) + "'");
    }
  }

  Utterance utt;
  if (!rec["id"].is_string()) fail(Errc::MalformedRecord, where + "'id' must be a string");
  utt.id = rec["id"].get<std::string>();

  const json& phonemes = rec["phonemes"];
  const json& durations = rec["durations"];
  if (!phonemes.is_array() || !durations.is_array()) {
    fail(Errc::MalformedRecord, where + "'phonemes' and 'durations' must be arrays");
  }
  if (phonemes.size() != durations.size()) {
    fail(Errc::MalformedRecord, where + std::to_string(durations.size()) + " durations for " +
                                    std::to_string(phonemes.size()) + " phonemes");
  }
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    if (!phonemes[i].is_string()) {
      fail(Errc::MalformedRecord, where + "phoneme " + std::to_string(i) + " is not a string");
    }
    if (!durations[i].is_number_integer() || durations[i].get<long long>() < 0) {
      fail(Errc::MalformedRecord,
           where + "duration " + std::to_string(i) + " is not a non-negative integer");
    }
    const auto symbol = phonemes[i].get<std::string>();
    if (!inventory.contains(symbol)) {
      fail(Errc::UnknownSymbol, where + "phoneme '" + symbol + "'");
    }
    utt.phonemes.push_back(inventory.make_token(symbol, durations[i].get<int>()));
  }

  if (rec.contains("labels") && !rec["labels"].is_null()) {
    const json& labels = rec["labels"];
    if (!labels.is_object()) fail(Errc::MalformedRecord, where + "'labels' must be an object");
    for (const auto& [key, value] : labels.items()) {
      bool known = false;
      for (auto name : kTaskNames) known = known || key == name;
      if (!known) fail(Errc::MalformedRecord, where + "unexpected label tier '" + key + "'");
    }
    std::vector<LabelBundle> bundles(utt.phonemes.size());
    for (Task task : kTasks) {
      const std::string name(task_name(task));
      if (!labels.contains(name)) {
        fail(Errc::MalformedRecord, where + "missing label tier '" + name + "'");
      }
      const json& tier = labels[name];
      if (!tier.is_array()) fail(Errc::MalformedRecord, where + "tier '" + name + "' not an array");
      if (tier.size() != utt.phonemes.size()) {
        fail(Errc::AlignmentMismatch, where + "tier '" + name + "' has " +
                                          std::to_string(tier.size()) + " entries for " +
                                          std::to_string(utt.phonemes.size()) + " phonemes");
      }
      for (std::size_t i = 0; i < tier.size(); ++i) {
        if (tier[i].is_null()) continue;
        if (!tier[i].is_string()) {
          fail(Errc::MalformedRecord, where + "tier '" + name + "' entry is not a string");
        }
        const auto symbol = tier[i].get<std::string>();
        auto cls = parse_class(task, symbol);
        if (!cls) fail(Errc::UnknownSymbol, where + "label '" + symbol + "' in tier '" + name + "'");
        set_class_index(bundles[i], task, cls);
      }
    }
    utt.labels = std::move(bundles);
  }

  if (rec.contains("audio") && !rec["audio"].is_null()) {
    if (!rec["audio"].is_string()) fail(Errc::MalformedRecord, where + "'audio' must be a string");
    utt.audio = rec["audio"].get<std::string>();
  }
  if (rec.contains("features") && !rec["features"].is_null()) {
    if (!rec["features"].is_object()) {
      fail(Errc::MalformedRecord, where + "'features' must be an object");
    }
    for (const auto& [stream, path] : rec["features"].items()) {
      if (!path.is_string()) fail(Errc::MalformedRecord, where + "feature path must be a string");
      utt.features[stream] = path.get<std::string>();
    }
  }

  try {
    validate(utt, inventory);
  } catch (const Error& e) {
    fail(e.code(), where + e.what());
  }
  return utt;
}

}  // namespace detail

inline nlohmann::json to_json(const Utterance& utt) {
  using nlohmann::json;
  json rec = json::object();
  rec["id"] = utt.id;
  json phonemes = json::array();
  json durations = json::array();
  for (const auto& p : utt.phonemes) {
    phonemes.push_back(p.symbol);
    durations.push_back(p.duration);
  }
  rec["phonemes"] = std::move(phonemes);
  rec["durations"] = std::move(durations);
  if (utt.labels) {
    json labels = json::object();
    for (Task task : kTasks) {
      json tier = json::array();
      for (const auto& bundle : *utt.labels) {
        auto cls = class_index(bundle, task);
        if (cls) {
          tier.push_back(std::string(class_symbol(task, *cls)));
        } else {
          tier.push_back(nullptr);
        }
      }
      labels[std::string(task_name(task))] = std::move(tier);
    }
    rec["labels"] = std::move(labels);
  } else {
    rec["labels"] = nullptr;
  }
  rec["audio"] = utt.audio ? json(*utt.audio) : json(nullptr);
  json features = json::object();
  for (const auto& [stream, path] : utt.features) features[stream] = path;
  rec["features"] = std::move(features);
  return rec;
}

inline std::vector<Utterance> parse_manifest(std::istream& in,
                                             const PhonemeInventory& inventory = default_inventory()) {
  std::vector<Utterance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail(Errc::MalformedRecord, detail::at_line(line) + e.what());
    }
    out.push_back(detail::parse_record(rec, line, inventory));
  }
  return out;
}

inline std::vector<Utterance> parse_manifest(const std::filesystem::path& path,
                                             const PhonemeInventory& inventory = default_inventory()) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open manifest " + path.string());
  return parse_manifest(in, inventory);
}

inline void write_manifest(std::ostream& out, const std::vector<Utterance>& utterances) {
  for (const auto& utt : utterances) out << to_json(utt).dump() << '\n';
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<Utterance>& utterances) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(Errc::Io, "cannot write manifest " + path.string());
  write_manifest(out, utterances);
}

// Relative paths inside a manifest are relative to the manifest's directory.
inline std::filesystem::path resolve_path(const std::filesystem::path& manifest_dir,
                                          const std::string& ref) {
  std::filesystem::path p(ref);
  if (p.is_absolute() || manifest_dir.empty()) return p;
  return manifest_dir / p;
}

}  // namespace prosolabel
