#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "e2stn/dataset.hpp"

namespace e2stn {

/// Canonical emotion order shared by all datasets: neutral=0, sad=1,
/// happy=2, fear=3. Other counts fall back to "class<k>".
std::vector<std::string> canonical_class_names(std::size_t classes);

/// Lower-cases and maps aliases ("joy" -> "happy", "sadness" -> "sad", ...).
std::string canonical_emotion(const std::string& name);

struct ProtocolSpec {
  /// Canonical class list; a trial's label becomes its index here.
  std::vector<std::string> classes;
  /// Restrict to one target subject; all subjects when empty.
  std::optional<std::uint32_t> target_subject;

  static ProtocolSpec three_class() { return {{"neutral", "sad", "happy"}, std::nullopt}; }
  static ProtocolSpec four_class() { return {{"neutral", "sad", "happy", "fear"}, std::nullopt}; }
};

/// One leave-one-subject-as-target evaluation fold.
struct Fold {
  std::uint32_t target_subject = 0;
  /// All class-filtered source trials; shared by every fold.
  std::shared_ptr<const std::vector<LabeledTrial>> source_train;
  /// The target subject's trials with labels removed, for style transfer.
  TargetPool target_pool;
  /// The same trials with labels, used only for scoring.
  std::vector<LabeledTrial> target_test;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
};

std::vector<Fold> build_protocol(const ProtocolSpec& spec, const Dataset& source, const Dataset& target);

}  // namespace e2stn
