#include "e2stn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <regex>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "e2stn/error.hpp"
#include "json.hpp"

namespace e2stn {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor stack_features(const std::vector<const FeatureMatrix*>& rows) {
  if (rows.empty()) throw ShapeError("stack_features: no rows selected");
  const std::size_t c = rows.front()->channels;
  const std::size_t b = rows.front()->bands;
  std::vector<double> v;
  v.reserve(rows.size() * c * b);
  for (const auto* r : rows) {
    if (r->channels != c || r->bands != b) throw ShapeError("stack_features: mixed trial shapes");
    v.insert(v.end(), r->values.begin(), r->values.end());
  }
  return Tensor::from({rows.size(), c, b}, std::move(v));
}

Tensor stack_features(const std::vector<LabeledTrial>& trials, const std::vector<std::size_t>& indices) {
  std::vector<const FeatureMatrix*> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(&trials.at(i).features);
  return stack_features(rows);
}

Tensor stack_features(const TargetPool& pool, const std::vector<std::size_t>& indices) {
  std::vector<const FeatureMatrix*> rows;
  rows.reserve(indices.size());
  for (auto i : indices) {
    if (i >= pool.size()) throw ShapeError("stack_features: target index out of range");
    rows.push_back(&pool[i]);
  }
  return stack_features(rows);
}

namespace {

void validate_trial(const LabeledTrial& t, const DatasetManifest& m, std::size_t index, const std::string& where) {
  if (t.features.channels != m.channels() || t.features.bands != m.bands() ||
      t.features.values.size() != m.channels() * m.bands()) {
    throw FormatError(where + ": trial " + std::to_string(index) + " has shape " +
                      std::to_string(t.features.channels) + "x" + std::to_string(t.features.bands) + ", expected " +
                      std::to_string(m.channels()) + "x" + std::to_string(m.bands()));
  }
  if (t.label >= m.classes()) {
    throw FormatError(where + ": trial " + std::to_string(index) + " has unknown label " + std::to_string(t.label) +
                      " (" + std::to_string(m.classes()) + " classes)");
  }
  for (double v : t.features.values) {
    if (!std::isfinite(v)) throw FormatError(where + ": trial " + std::to_string(index) + " contains a non-finite value");
  }
}

json manifest_to_json(const DatasetManifest& m) {
  json index = json::object();
  for (const auto& [subject, ordinals] : m.trial_index) index[std::to_string(subject)] = ordinals;
  return {
      {"name", m.name},
      {"format", "EEGF"},
      {"version", kTrialFormatVersion},
      {"data_file", m.data_file},
      {"channels", m.channel_names},
      {"bands", m.band_names},
      {"classes", m.class_names},
      {"subjects", m.subject_ids},
      {"trial_count", m.trial_count},
      {"trial_index", index},
  };
}

std::uint64_t record_bytes(const DatasetManifest& m) { return 4 + 2 + 8 * m.channels() * m.bands(); }

}  // namespace

void refresh_manifest(Dataset& dataset) {
  auto& m = dataset.manifest;
  if (m.channels() == 0 || m.bands() == 0 || m.classes() == 0) {
    throw FormatError("dataset '" + m.name + "' needs channel, band and class names");
  }
  m.trial_index.clear();
  std::set<std::uint32_t> subjects;
  for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
    const auto& t = dataset.trials[i];
    validate_trial(t, m, i, "dataset '" + m.name + "'");
    subjects.insert(t.subject);
    m.trial_index[t.subject].push_back(i);
  }
  m.subject_ids.assign(subjects.begin(), subjects.end());
  m.trial_count = dataset.trials.size();
}

fs::path write_dataset(const Dataset& dataset, const fs::path& dir, const std::string& stem) {
  Dataset copy = dataset;
  copy.manifest.data_file = stem + ".eegf";
  refresh_manifest(copy);
  const auto& m = copy.manifest;
  fs::create_directories(dir);
  const fs::path data_path = dir / m.data_file;
  {
    std::ofstream out(data_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + data_path.string() + "'");
    out.write(kTrialMagic, sizeof(kTrialMagic));
    detail::write_le<std::uint16_t>(out, kTrialFormatVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.channels()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.bands()));
    for (const auto& t : copy.trials) {
      detail::write_le<std::uint32_t>(out, t.subject);
      detail::write_le<std::uint16_t>(out, t.label);
      for (double v : t.features.values) detail::write_f64(out, v);
    }
    if (!out) throw IoError("write failed for '" + data_path.string() + "'");
  }
  const fs::path manifest_path = dir / (stem + ".json");
  std::ofstream mout(manifest_path, std::ios::trunc);
  if (!mout) throw IoError("cannot write '" + manifest_path.string() + "'");
  mout << manifest_to_json(m).dump(2) << '\n';
  return manifest_path;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read manifest '" + manifest_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.data_file = j.at("data_file").get<std::string>();
    m.channel_names = j.at("channels").get<std::vector<std::string>>();
    m.band_names = j.at("bands").get<std::vector<std::string>>();
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.subject_ids = j.at("subjects").get<std::vector<std::uint32_t>>();
    m.trial_count = j.at("trial_count").get<std::uint64_t>();
    for (const auto& [key, ordinals] : j.at("trial_index").items()) {
      m.trial_index[static_cast<std::uint32_t>(std::stoul(key))] = ordinals.get<std::vector<std::uint64_t>>();
    }
    if (j.value("format", std::string("EEGF")) != "EEGF") throw FormatError("unsupported format tag");
    return m;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError("manifest '" + manifest_path.string() + "' is malformed: " + e.what());
  }
}

DatasetReader::DatasetReader(const fs::path& manifest_path)
    : manifest_(read_manifest(manifest_path)), data_path_(manifest_path.parent_path() / manifest_.data_file) {
  in_.open(data_path_, std::ios::binary);
  if (!in_) throw IoError("cannot open trial file '" + data_path_.string() + "'");
  char magic[4];
  if (!in_.read(magic, 4) || std::memcmp(magic, kTrialMagic, 4) != 0) {
    throw FormatError("'" + data_path_.string() + "' is not an EEGF trial file (bad magic bytes)");
  }
  std::uint16_t version = 0;
  std::uint32_t c = 0;
  std::uint32_t b = 0;
  if (!detail::read_le(in_, version) || !detail::read_le(in_, c) || !detail::read_le(in_, b)) {
    throw FormatError("'" + data_path_.string() + "' has a truncated header");
  }
  if (version != kTrialFormatVersion) {
    throw FormatError("'" + data_path_.string() + "' has unsupported version " + std::to_string(version));
  }
  if (c != manifest_.channels() || b != manifest_.bands()) {
    throw FormatError("'" + data_path_.string() + "' stores " + std::to_string(c) + "x" + std::to_string(b) +
                      " trials but the manifest declares " + std::to_string(manifest_.channels()) + "x" +
                      std::to_string(manifest_.bands()));
  }
  const std::uint64_t expected = kTrialHeaderBytes + manifest_.trial_count * record_bytes(manifest_);
  const std::uint64_t actual = fs::file_size(data_path_);
  if (actual != expected) {
    throw FormatError("'" + data_path_.string() + "' holds " + std::to_string(actual) + " bytes; manifest trial count " +
                      std::to_string(manifest_.trial_count) + " implies " + std::to_string(expected));
  }
  std::uint64_t indexed = 0;
  for (const auto& [subject, ordinals] : manifest_.trial_index) indexed += ordinals.size();
  if (indexed != manifest_.trial_count) {
    throw FormatError("manifest for '" + manifest_.name + "' indexes " + std::to_string(indexed) +
                      " trials but declares " + std::to_string(manifest_.trial_count));
  }
}

LabeledTrial DatasetReader::read(std::size_t index) {
  if (index >= size()) throw FormatError("trial index " + std::to_string(index) + " out of range");
  const auto offset = static_cast<std::streamoff>(kTrialHeaderBytes + index * record_bytes(manifest_));
  in_.clear();
  in_.seekg(offset);
  LabeledTrial t;
  t.features.channels = manifest_.channels();
  t.features.bands = manifest_.bands();
  t.features.values.resize(t.features.channels * t.features.bands);
  bool ok = detail::read_le(in_, t.subject) && detail::read_le(in_, t.label);
  for (auto& v : t.features.values) ok = ok && detail::read_f64(in_, v);
  if (!ok) throw FormatError("'" + data_path_.string() + "': trial " + std::to_string(index) + " is truncated");
  validate_trial(t, manifest_, index, "'" + data_path_.string() + "'");
  return t;
}

Dataset load_dataset(const fs::path& manifest_path) {
  DatasetReader reader(manifest_path);
  Dataset d;
  d.manifest = reader.manifest();
  d.trials.reserve(reader.size());
  for (std::size_t i = 0; i < reader.size(); ++i) d.trials.push_back(reader.read(i));
  for (const auto& [subject, ordinals] : d.manifest.trial_index) {
    for (auto o : ordinals) {
      if (o >= d.trials.size() || d.trials[o].subject != subject) {
        throw FormatError("manifest trial index for subject " + std::to_string(subject) + " disagrees with trial " +
                          std::to_string(o));
      }
    }
  }
  return d;
}

Dataset import_csv(const fs::path& csv_path, const std::string& name, std::vector<std::string> class_names) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot read CSV '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV '" + csv_path.string() + "' is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      out.push_back(cell);
    }
    return out;
  };
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "subject" || header[1] != "label") {
    throw FormatError("CSV header must start with 'subject,label,c0b0'");
  }
  const std::regex cell_name(R"(c(\d+)b(\d+))");
  std::size_t channels = 0;
  std::size_t bands = 0;
  for (std::size_t i = 2; i < header.size(); ++i) {
    std::smatch m;
    if (!std::regex_match(header[i], m, cell_name)) throw FormatError("bad CSV column name '" + header[i] + "'");
    channels = std::max<std::size_t>(channels, std::stoul(m[1]) + 1);
    bands = std::max<std::size_t>(bands, std::stoul(m[2]) + 1);
  }
  if (channels * bands != header.size() - 2) throw FormatError("CSV columns do not form a full channel x band grid");
  for (std::size_t i = 2; i < header.size(); ++i) {
    const std::size_t k = i - 2;
    if (header[i] != "c" + std::to_string(k / bands) + "b" + std::to_string(k % bands)) {
      throw FormatError("CSV columns must be channel-major; expected c" + std::to_string(k / bands) + "b" +
                        std::to_string(k % bands) + " at column " + std::to_string(i));
    }
  }

  Dataset d;
  d.manifest.name = name;
  for (std::size_t c = 0; c < channels; ++c) d.manifest.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t b = 0; b < bands; ++b) d.manifest.band_names.push_back("band" + std::to_string(b));
  // Labels are either class indices or class names; a file may not mix them.
  std::vector<std::string> label_cells;
  bool numeric_labels = true;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw FormatError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    const bool numeric = !cells[1].empty() && cells[1].find_first_not_of("0123456789") == std::string::npos;
    if (row > 0 && numeric != numeric_labels) throw FormatError("CSV row " + std::to_string(row) + " mixes label kinds");
    numeric_labels = numeric;
    LabeledTrial t;
    try {
      t.subject = static_cast<std::uint32_t>(std::stoul(cells[0]));
      t.features.channels = channels;
      t.features.bands = bands;
      for (std::size_t i = 2; i < cells.size(); ++i) t.features.values.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw FormatError("CSV row " + std::to_string(row) + " has a non-numeric cell");
    }
    label_cells.push_back(cells[1]);
    d.trials.push_back(std::move(t));
    ++row;
  }
  if (numeric_labels) {
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < d.trials.size(); ++i) {
      const unsigned long v = std::stoul(label_cells[i]);
      if (v > 0xffff) throw FormatError("CSV row " + std::to_string(i) + " label out of range");
      d.trials[i].label = static_cast<std::uint16_t>(v);
      max_label = std::max<std::size_t>(max_label, v);
    }
    if (class_names.empty()) {
      for (std::size_t k = 0; k <= max_label; ++k) class_names.push_back("class" + std::to_string(k));
    }
  } else {
    if (class_names.empty()) {
      class_names = label_cells;
      std::sort(class_names.begin(), class_names.end());
      class_names.erase(std::unique(class_names.begin(), class_names.end()), class_names.end());
    }
    for (std::size_t i = 0; i < d.trials.size(); ++i) {
      const auto it = std::find(class_names.begin(), class_names.end(), label_cells[i]);
      if (it == class_names.end()) {
        throw FormatError("CSV row " + std::to_string(i) + " has unknown label '" + label_cells[i] + "'");
      }
      d.trials[i].label = static_cast<std::uint16_t>(it - class_names.begin());
    }
  }
  d.manifest.class_names = std::move(class_names);
  refresh_manifest(d);
  return d;
}

}  // namespace e2stn
