#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "e2stn/tensor.hpp"

namespace e2stn {

/// One trial's channels x bands feature array (row-major, C rows).
struct FeatureMatrix {
  std::size_t channels = 0;
  std::size_t bands = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t b) const { return values[c * bands + b]; }
};

enum class Domain : std::uint8_t { Source, Target };

struct LabeledTrial {
  FeatureMatrix features;
  std::uint16_t label = 0;
  std::uint32_t subject = 0;
  Domain domain = Domain::Source;
};

/// Target-domain features with labels withheld. Training code only ever
/// receives this type for the target side, so it cannot read labels.
class TargetPool {
 public:
  TargetPool() = default;
  explicit TargetPool(std::vector<FeatureMatrix> features) : features_(std::move(features)) {}

  std::size_t size() const noexcept { return features_.size(); }
  bool empty() const noexcept { return features_.empty(); }
  const FeatureMatrix& operator[](std::size_t i) const { return features_[i]; }

 private:
  std::vector<FeatureMatrix> features_;
};

/// Stacks selected matrices into an [N, C, B] tensor.
Tensor stack_features(const std::vector<const FeatureMatrix*>& rows);
Tensor stack_features(const std::vector<LabeledTrial>& trials, const std::vector<std::size_t>& indices);
Tensor stack_features(const TargetPool& pool, const std::vector<std::size_t>& indices);

struct DatasetManifest {
  std::string name;
  std::string data_file;  // relative to the manifest's directory
  std::vector<std::string> channel_names;
  std::vector<std::string> band_names;
  std::vector<std::string> class_names;
  std::vector<std::uint32_t> subject_ids;
  /// subject -> ordinals of that subject's trials in the data file
  std::map<std::uint32_t, std::vector<std::uint64_t>> trial_index;
  std::uint64_t trial_count = 0;

  std::size_t channels() const { return channel_names.size(); }
  std::size_t bands() const { return band_names.size(); }
  std::size_t classes() const { return class_names.size(); }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledTrial> trials;
};

inline constexpr char kTrialMagic[4] = {'E', 'E', 'G', 'F'};
inline constexpr std::uint16_t kTrialFormatVersion = 1;
/// magic + version + C + B
inline constexpr std::size_t kTrialHeaderBytes = 4 + 2 + 4 + 4;

/// Rebuilds subject_ids / trial_index / trial_count from the trials and
/// validates shapes and labels.
void refresh_manifest(Dataset& dataset);

/// Writes `<dir>/<stem>.eegf` and the sidecar `<dir>/<stem>.json`; returns
/// the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& stem);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);

/// Random-access reader over a trial file; records are decoded on demand
/// and validated against the manifest.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& manifest_path);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(manifest_.trial_count); }
  LabeledTrial read(std::size_t index);

 private:
  DatasetManifest manifest_;
  std::filesystem::path data_path_;
  std::ifstream in_;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// CSV with header `subject,label,c0b0,c0b1,...` (channel-major columns).
/// Labels are class indices or class names. Without `class_names`, indices
/// get "class<k>" names and names are taken in sorted order. Channel and
/// band names are synthesized.
Dataset import_csv(const std::filesystem::path& csv_path, const std::string& name,
                   std::vector<std::string> class_names = {});

}  // namespace e2stn
