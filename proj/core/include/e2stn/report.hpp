#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "e2stn/config.hpp"
#include "e2stn/metrics.hpp"
#include "e2stn/training.hpp"

namespace e2stn {

struct FoldRecord {
  std::uint32_t target_subject = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<MetricRow> trace;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<std::string> class_names;
  std::vector<FoldRecord> folds;
};

/// Compiler, build type, library version and the source revision seen at
/// configure time.
std::string build_fingerprint();

/// Report JSON text. Deterministic: contains no wall-clock data. Loss traces
/// omit the transfer columns for ablation runs.
std::string report_json(const RunRecord& run);

/// `counts,<pred classes...>` rows followed by a blank line and the
/// row-normalized percentages.
std::string confusion_csv(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names);

/// Header `epoch,L,L_c,L_s,L_id,L_ce,val_acc`, round-trip doubles.
std::string metrics_csv(const std::vector<MetricRow>& trace);
std::vector<MetricRow> parse_metrics_csv(const std::string& text, const std::string& origin = "<memory>");

std::string format_double(double v);

/// Run directory layout:
///   run.json                      config and class names
///   fold-<subject>/metrics.csv    per-epoch losses
///   fold-<subject>/eval.json      accuracy and confusion counts
///   fold-<subject>/checkpoint.e2stn (written by the trainer)
///   report.json, confusion.csv    derived from the above
std::filesystem::path fold_dir(const std::filesystem::path& run_dir, std::uint32_t subject);
void write_fold_record(const std::filesystem::path& run_dir, const FoldRecord& fold);
void write_run_header(const std::filesystem::path& run_dir, const RunRecord& run);
/// Config, class names and fold subjects only; fold results left empty.
RunRecord read_run_header(const std::filesystem::path& run_dir);
RunRecord read_run_dir(const std::filesystem::path& run_dir);
/// Regenerates report.json and confusion.csv from the fold records.
void write_report(const std::filesystem::path& run_dir, const RunRecord& run);

ConfusionMatrix pooled_confusion(const RunRecord& run);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace e2stn
