#include "e2stn/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "e2stn/error.hpp"
#include "json.hpp"

#ifndef E2STN_VERSION
#define E2STN_VERSION "unknown"
#endif
#ifndef E2STN_GIT_REVISION
#define E2STN_GIT_REVISION "unknown"
#endif
#ifndef E2STN_BUILD_TYPE
#define E2STN_BUILD_TYPE "unknown"
#endif

namespace e2stn {

namespace {

using nlohmann::ordered_json;

constexpr const char* kMetricsHeader = "epoch,L,L_c,L_s,L_id,L_ce,val_acc";
constexpr const char* kCaveat =
    "t-tests run without a normality pre-test; treat p-values as approximate for few folds";

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(where + ": not a number: '" + s + "'");
  return v;
}

ordered_json confusion_json(const ConfusionMatrix& cm) {
  ordered_json counts = ordered_json::array();
  ordered_json pct = ordered_json::array();
  const auto percent = cm.row_percent();
  for (std::size_t r = 0; r < cm.classes; ++r) {
    ordered_json crow = ordered_json::array();
    ordered_json prow = ordered_json::array();
    for (std::size_t c = 0; c < cm.classes; ++c) {
      crow.push_back(cm.at(r, c));
      prow.push_back(percent[r * cm.classes + c]);
    }
    counts.push_back(crow);
    pct.push_back(prow);
  }
  return {{"counts", counts}, {"row_percent", pct}};
}

ConfusionMatrix confusion_from_json(const ordered_json& j, std::size_t classes, const std::string& where) {
  ConfusionMatrix cm(classes);
  const auto& counts = j.at("counts");
  if (counts.size() != classes) throw FormatError(where + ": confusion matrix has wrong row count");
  for (std::size_t r = 0; r < classes; ++r) {
    if (counts[r].size() != classes) throw FormatError(where + ": confusion matrix has wrong column count");
    for (std::size_t c = 0; c < classes; ++c) cm.at(r, c) = counts[r][c].get<std::uint64_t>();
  }
  return cm;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string build_fingerprint() {
#if defined(__clang__)
  const std::string compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = "gcc " __VERSION__;
#else
  const std::string compiler = "unknown";
#endif
  return std::string("e2stn ") + E2STN_VERSION + " (" + E2STN_GIT_REVISION + ", " + E2STN_BUILD_TYPE + ", " +
         compiler + ")";
}

ConfusionMatrix pooled_confusion(const RunRecord& run) {
  ConfusionMatrix total(run.class_names.size());
  for (const auto& f : run.folds) {
    if (f.confusion.classes != total.classes) throw ShapeError("pooled_confusion: class count differs between folds");
    for (std::size_t i = 0; i < total.counts.size(); ++i) total.counts[i] += f.confusion.counts[i];
  }
  return total;
}

std::string report_json(const RunRecord& run) {
  const bool ablation = run.config.train.ablation;
  ordered_json j;
  j["schema"] = "e2stn.report/1";
  j["mode"] = ablation ? "classifier-only" : "full";
  j["classes"] = run.class_names;
  std::vector<double> acc;
  ordered_json folds = ordered_json::array();
  for (const auto& f : run.folds) {
    acc.push_back(f.accuracy);
    ordered_json trace = ordered_json::array();
    for (const auto& r : f.trace) {
      ordered_json row;
      row["epoch"] = r.epoch;
      row["L"] = r.loss.total;
      if (!ablation) {
        row["L_c"] = r.loss.content;
        row["L_s"] = r.loss.style;
        row["L_id"] = r.loss.identity;
      }
      row["L_ce"] = r.loss.ce;
      row["val_acc"] = r.val_acc;
      trace.push_back(row);
    }
    folds.push_back({{"target_subject", f.target_subject},
                     {"accuracy", f.accuracy},
                     {"test_trials", f.confusion.total()},
                     {"confusion", confusion_json(f.confusion)},
                     {"loss_trace", trace}});
  }
  j["folds"] = folds;
  if (!acc.empty()) {
    const auto agg = aggregate(acc);
    j["summary"] = {{"mean_accuracy", agg.mean}, {"std_accuracy", agg.std}, {"std_convention", "population"},
                    {"fold_count", acc.size()}};
    j["confusion"] = confusion_json(pooled_confusion(run));
  }
  j["caveat"] = kCaveat;
  j["config"] = ordered_json::parse(to_json(run.config));
  j["build"] = build_fingerprint();
  return j.dump(2) + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  if (class_names.size() != cm.classes) throw ShapeError("confusion_csv: class name count mismatch");
  std::ostringstream os;
  auto header = [&](const char* kind) {
    os << kind;
    for (const auto& n : class_names) os << ',' << n;
    os << '\n';
  };
  header("counts");
  for (std::size_t r = 0; r < cm.classes; ++r) {
    os << class_names[r];
    for (std::size_t c = 0; c < cm.classes; ++c) os << ',' << cm.at(r, c);
    os << '\n';
  }
  os << '\n';
  header("row_percent");
  const auto pct = cm.row_percent();
  for (std::size_t r = 0; r < cm.classes; ++r) {
    os << class_names[r];
    for (std::size_t c = 0; c < cm.classes; ++c) os << ',' << format_double(pct[r * cm.classes + c]);
    os << '\n';
  }
  return os.str();
}

std::string metrics_csv(const std::vector<MetricRow>& trace) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : trace) {
    os << r.epoch << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.content) << ','
       << format_double(r.loss.style) << ',' << format_double(r.loss.identity) << ',' << format_double(r.loss.ce)
       << ',' << format_double(r.val_acc) << '\n';
  }
  return os.str();
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError(origin + ": missing metrics header");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (cells.size() != 7) throw FormatError(where + ": expected 7 columns");
    MetricRow r;
    r.epoch = static_cast<std::size_t>(parse_double(cells[0], where));
    r.loss.total = parse_double(cells[1], where);
    r.loss.content = parse_double(cells[2], where);
    r.loss.style = parse_double(cells[3], where);
    r.loss.identity = parse_double(cells[4], where);
    r.loss.ce = parse_double(cells[5], where);
    r.val_acc = parse_double(cells[6], where);
    rows.push_back(r);
  }
  return rows;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::filesystem::path fold_dir(const std::filesystem::path& run_dir, std::uint32_t subject) {
  return run_dir / ("fold-" + std::to_string(subject));
}

void write_fold_record(const std::filesystem::path& run_dir, const FoldRecord& fold) {
  const auto dir = fold_dir(run_dir, fold.target_subject);
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(fold.trace));
  ordered_json j;
  j["target_subject"] = fold.target_subject;
  j["accuracy"] = fold.accuracy;
  j["confusion"] = confusion_json(fold.confusion);
  write_text(dir / "eval.json", j.dump(2) + "\n");
}

void write_run_header(const std::filesystem::path& run_dir, const RunRecord& run) {
  std::filesystem::create_directories(run_dir);
  ordered_json j;
  j["config"] = ordered_json::parse(to_json(run.config));
  j["classes"] = run.class_names;
  ordered_json subjects = ordered_json::array();
  for (const auto& f : run.folds) subjects.push_back(f.target_subject);
  j["target_subjects"] = subjects;
  write_text(run_dir / "run.json", j.dump(2) + "\n");
}

RunRecord read_run_header(const std::filesystem::path& run_dir) {
  const auto header_path = run_dir / "run.json";
  RunRecord run;
  try {
    const auto header = ordered_json::parse(read_text(header_path));
    run.config = experiment_from_json(header.at("config").dump());
    run.class_names = header.at("classes").get<std::vector<std::string>>();
    for (const auto& s : header.at("target_subjects")) {
      FoldRecord f;
      f.target_subject = s.get<std::uint32_t>();
      f.confusion = ConfusionMatrix(run.class_names.size());
      run.folds.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  return run;
}

RunRecord read_run_dir(const std::filesystem::path& run_dir) {
  RunRecord run = read_run_header(run_dir);
  for (auto& f : run.folds) {
    const auto dir = fold_dir(run_dir, f.target_subject);
    const auto eval_path = dir / "eval.json";
    if (!std::filesystem::exists(eval_path)) throw IoError("missing " + eval_path.string() + "; run `eval` first");
    try {
      const auto ej = ordered_json::parse(read_text(eval_path));
      f.confusion = confusion_from_json(ej.at("confusion"), run.class_names.size(), eval_path.string());
      f.accuracy = ej.at("accuracy").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(eval_path.string() + ": " + e.what());
    }
    if (f.accuracy != f.confusion.accuracy()) {
      throw FormatError(eval_path.string() + ": accuracy disagrees with confusion matrix");
    }
    const auto metrics_path = dir / "metrics.csv";
    if (std::filesystem::exists(metrics_path)) f.trace = parse_metrics_csv(read_text(metrics_path), metrics_path.string());
  }
  return run;
}

void write_report(const std::filesystem::path& run_dir, const RunRecord& run) {
  write_text(run_dir / "report.json", report_json(run));
  write_text(run_dir / "confusion.csv", confusion_csv(pooled_confusion(run), run.class_names));
}

}  // namespace e2stn
