#include "e2stn/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "e2stn/error.hpp"

namespace e2stn {

std::vector<std::string> canonical_class_names(std::size_t classes) {
  static const std::vector<std::string> kEmotions{"neutral", "sad", "happy", "fear"};
  if (classes == 3 || classes == 4) return {kEmotions.begin(), kEmotions.begin() + static_cast<std::ptrdiff_t>(classes)};
  std::vector<std::string> out;
  for (std::size_t k = 0; k < classes; ++k) out.push_back("class" + std::to_string(k));
  return out;
}

std::string canonical_emotion(const std::string& name) {
  std::string s;
  for (char ch : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  static const std::map<std::string, std::string> kAliases{
      {"joy", "happy"},     {"happiness", "happy"}, {"sadness", "sad"},
      {"neutrality", "neutral"}, {"fearful", "fear"},  {"afraid", "fear"},
      {"positive", "happy"},     {"negative", "sad"},
  };
  const auto it = kAliases.find(s);
  return it == kAliases.end() ? s : it->second;
}

namespace {

// dataset label -> protocol label, or -1 when the class is filtered out.
std::vector<int> label_map(const ProtocolSpec& spec, const DatasetManifest& m) {
  std::vector<int> map(m.classes(), -1);
  for (std::size_t want = 0; want < spec.classes.size(); ++want) {
    const std::string target = canonical_emotion(spec.classes[want]);
    bool found = false;
    for (std::size_t k = 0; k < m.classes(); ++k) {
      if (canonical_emotion(m.class_names[k]) == target) {
        map[k] = static_cast<int>(want);
        found = true;
      }
    }
    if (!found) throw ProtocolError("class '" + spec.classes[want] + "' is missing from dataset '" + m.name + "'");
  }
  return map;
}

}  // namespace

std::vector<Fold> build_protocol(const ProtocolSpec& spec, const Dataset& source, const Dataset& target) {
  if (spec.classes.size() < 2) throw ProtocolError("protocol needs at least two classes");
  if (source.manifest.channels() != target.manifest.channels() || source.manifest.bands() != target.manifest.bands()) {
    throw ProtocolError("source and target datasets have different channel x band shapes");
  }
  const auto src_map = label_map(spec, source.manifest);
  const auto tgt_map = label_map(spec, target.manifest);

  auto train = std::make_shared<std::vector<LabeledTrial>>();
  for (const auto& t : source.trials) {
    const int label = src_map.at(t.label);
    if (label < 0) continue;
    LabeledTrial copy = t;
    copy.label = static_cast<std::uint16_t>(label);
    copy.domain = Domain::Source;
    train->push_back(std::move(copy));
  }
  if (train->empty()) throw ProtocolError("no source trials left after class filtering");

  std::vector<std::uint32_t> subjects = target.manifest.subject_ids;
  if (spec.target_subject) {
    if (std::find(subjects.begin(), subjects.end(), *spec.target_subject) == subjects.end()) {
      throw ProtocolError("target subject " + std::to_string(*spec.target_subject) + " not in dataset '" +
                          target.manifest.name + "'");
    }
    subjects = {*spec.target_subject};
  }

  std::vector<Fold> folds;
  for (auto subject : subjects) {
    Fold f;
    f.target_subject = subject;
    f.source_train = train;
    f.class_names = spec.classes;
    f.channel_names = source.manifest.channel_names;
    std::vector<FeatureMatrix> pool;
    for (const auto& t : target.trials) {
      if (t.subject != subject) continue;
      const int label = tgt_map.at(t.label);
      if (label < 0) continue;
      LabeledTrial copy = t;
      copy.label = static_cast<std::uint16_t>(label);
      copy.domain = Domain::Target;
      pool.push_back(copy.features);
      f.target_test.push_back(std::move(copy));
    }
    if (f.target_test.empty()) continue;
    f.target_pool = TargetPool(std::move(pool));
    folds.push_back(std::move(f));
  }
  if (folds.empty()) throw ProtocolError("no target subject has trials in the selected classes");
  return folds;
}

}  // namespace e2stn
