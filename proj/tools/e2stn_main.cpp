// e2stn command-line driver: synthetic data generation, training, evaluation,
// ablation, hyper-parameter sweeps and report regeneration.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "e2stn/checkpoint.hpp"
#include "e2stn/error.hpp"
#include "e2stn/experiment.hpp"
#include "e2stn/protocol.hpp"
#include "e2stn/report.hpp"
#include "e2stn/synthetic.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "e2stn-out";
  bool no_transfer = false;
  std::optional<double> lambda, nu, xi;
  std::string attn_scale;
  std::string freeze_eval_conv;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
};

struct DataOptions {
  std::string source = "data/source.json";
  std::string target = "data/target.json";
  std::size_t classes = 3;
  std::optional<std::uint32_t> target_subject;
};

bool parse_switch(const std::string& value, const char* flag) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw UsageError(std::string(flag) + " expects on|off, got '" + value + "'");
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Experiment config JSON");
  cmd->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_set = true; },
                                          "Random seed");
  cmd->add_option("--out-dir", o.out_dir, "Directory for all artifacts")->capture_default_str();
  cmd->add_flag("--no-transfer", o.no_transfer, "Classifier only, trained on source data");
  cmd->add_option_function<double>("--lambda", [&o](double v) { o.lambda = v; }, "Style loss weight");
  cmd->add_option_function<double>("--nu", [&o](double v) { o.nu = v; }, "Identity loss weight");
  cmd->add_option_function<double>("--xi", [&o](double v) { o.xi = v; }, "Classification loss weight");
  cmd->add_option("--attn-scale", o.attn_scale, "on|off: divide attention logits by sqrt(head_dim)");
  cmd->add_option("--freeze-eval-conv", o.freeze_eval_conv, "on|off: keep the evaluation conv stack fixed")
      ->expected(0, 1)
      ->default_str("on");
  cmd->add_option_function<std::size_t>("--epochs", [&o](std::size_t v) { o.epochs = v; }, "Training epochs");
  cmd->add_option_function<std::size_t>("--batch-size", [&o](std::size_t v) { o.batch_size = v; }, "Batch size");
  cmd->add_option_function<double>("--lr", [&o](double v) { o.learning_rate = v; }, "Adam learning rate");
}

void add_data(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--source", d.source, "Source dataset manifest")->capture_default_str();
  cmd->add_option("--target", d.target, "Target dataset manifest")->capture_default_str();
  cmd->add_option("--classes", d.classes, "3 (neutral,sad,happy) or 4 (+fear)")
      ->check(CLI::IsMember({3, 4}))
      ->capture_default_str();
  cmd->add_option_function<std::uint32_t>("--target-subject", [&d](std::uint32_t s) { d.target_subject = s; },
                                          "Run only this target subject's fold");
}

e2stn::ExperimentConfig resolve_config(const CommonOptions& o, bool freeze_flag_seen) {
  e2stn::ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    try {
      cfg = e2stn::load_experiment(o.config_path);
    } catch (const e2stn::Error& e) {
      throw UsageError("cannot use config " + o.config_path + ": " + e.what());
    }
  }
  if (o.seed_set) cfg.train.seed = o.seed;
  if (o.no_transfer) cfg.train.ablation = true;
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.nu) cfg.train.nu = *o.nu;
  if (o.xi) cfg.train.xi = *o.xi;
  if (!o.attn_scale.empty()) cfg.model.transfer.attn_scale = parse_switch(o.attn_scale, "--attn-scale");
  if (freeze_flag_seen) {
    cfg.model.eval.frozen = o.freeze_eval_conv.empty() ? true : parse_switch(o.freeze_eval_conv, "--freeze-eval-conv");
  }
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.learning_rate) cfg.train.adam.learning_rate = *o.learning_rate;
  try {
    cfg.validate();
  } catch (const e2stn::Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

struct LoadedProtocol {
  std::vector<e2stn::Fold> folds;
  std::vector<std::string> class_names;
};

LoadedProtocol load_protocol(const DataOptions& d) {
  const auto source = e2stn::load_dataset(d.source);
  const auto target = e2stn::load_dataset(d.target);
  auto spec = d.classes == 4 ? e2stn::ProtocolSpec::four_class() : e2stn::ProtocolSpec::three_class();
  spec.target_subject = d.target_subject;
  LoadedProtocol p;
  p.folds = e2stn::build_protocol(spec, source, target);
  p.class_names = spec.classes;
  return p;
}

void check_dims(const e2stn::ExperimentConfig& cfg, const LoadedProtocol& p) {
  const auto& first = p.folds.front().source_train->front().features;
  if (first.channels != cfg.model.channels || first.bands != cfg.model.bands ||
      p.class_names.size() != cfg.model.classes) {
    std::ostringstream os;
    os << "data is " << first.channels << "x" << first.bands << " with " << p.class_names.size()
       << " classes but the config expects " << cfg.model.channels << "x" << cfg.model.bands << " with "
       << cfg.model.classes << " classes";
    throw UsageError(os.str());
  }
}

e2stn::ContributionMap mean_contribution(const std::vector<e2stn::ContributionMap>& maps) {
  e2stn::ContributionMap out;
  out.channels = maps.front().channels;
  out.scores.assign(out.channels.size(), 0.0);
  for (const auto& m : maps) {
    for (std::size_t c = 0; c < out.scores.size(); ++c) out.scores[c] += m.scores[c] / static_cast<double>(maps.size());
  }
  const auto [lo, hi] = std::minmax_element(out.scores.begin(), out.scores.end());
  const double min = *lo, span = *hi - *lo;
  for (double& s : out.scores) s = span > 0 ? (s - min) / span : 1.0;
  return out;
}

void print_summary(const e2stn::RunRecord& run) {
  const bool ablation = run.config.train.ablation;
  std::printf("mode: %s\n", ablation ? "classifier-only" : "full");
  if (ablation) {
    std::printf("%-8s %-9s %-6s %-10s %-10s %-8s\n", "subject", "accuracy", "epoch", "L", "L_ce", "val_acc");
  } else {
    std::printf("%-8s %-9s %-6s %-10s %-10s %-10s %-10s %-10s %-8s\n", "subject", "accuracy", "epoch", "L", "L_c",
                "L_s", "L_id", "L_ce", "val_acc");
  }
  std::vector<double> acc;
  for (const auto& f : run.folds) {
    acc.push_back(f.accuracy);
    const e2stn::MetricRow last = f.trace.empty() ? e2stn::MetricRow{} : f.trace.back();
    if (ablation) {
      std::printf("%-8u %-9.4f %-6zu %-10.5g %-10.5g %-8.4f\n", f.target_subject, f.accuracy, last.epoch,
                  last.loss.total, last.loss.ce, last.val_acc);
    } else {
      std::printf("%-8u %-9.4f %-6zu %-10.5g %-10.5g %-10.5g %-10.5g %-10.5g %-8.4f\n", f.target_subject, f.accuracy,
                  last.epoch, last.loss.total, last.loss.content, last.loss.style, last.loss.identity, last.loss.ce,
                  last.val_acc);
    }
  }
  if (!acc.empty()) {
    const auto agg = e2stn::aggregate(acc);
    std::printf("ACC %.2f%%  STD %.2f%%  (%zu folds)\n", 100 * agg.mean, 100 * agg.std, acc.size());
  }
}

/// Trains every fold and writes the full run directory.
e2stn::RunRecord train_run(const e2stn::ExperimentConfig& cfg, const LoadedProtocol& p, const fs::path& out,
                           std::size_t threads, bool verbose) {
  fs::create_directories(out);
  e2stn::RunRecord run;
  run.config = cfg;
  run.class_names = p.class_names;
  run.folds.resize(p.folds.size());
  for (std::size_t i = 0; i < p.folds.size(); ++i) run.folds[i].target_subject = p.folds[i].target_subject;
  e2stn::write_run_header(out, run);

  std::vector<e2stn::ContributionMap> maps(p.folds.size());
  std::mutex log_mutex;
  e2stn::parallel_for(p.folds.size(), threads, [&](std::size_t i) {
    const auto subject = p.folds[i].target_subject;
    auto on_epoch = [&](const e2stn::MetricRow& r) {
      if (!verbose) return;
      std::lock_guard lock(log_mutex);
      std::fprintf(stderr, "[%s fold %u] epoch %zu L=%.5g L_ce=%.5g val_acc=%.4f\n", out.filename().c_str(), subject,
                   r.epoch, r.loss.total, r.loss.ce, r.val_acc);
    };
    auto result = e2stn::run_fold(cfg, p.folds[i], on_epoch);
    const auto dir = e2stn::fold_dir(out, subject);
    e2stn::write_fold_record(out, result.record);
    e2stn::write_text(dir / "checkpoint.e2stn", result.checkpoint);
    e2stn::write_text(dir / "contribution.json", result.contribution.to_json());
    maps[i] = std::move(result.contribution);
    run.folds[i] = std::move(result.record);
  });
  e2stn::write_report(out, run);
  e2stn::write_text(out / "contribution.json", mean_contribution(maps).to_json());
  return run;
}

std::vector<double> accuracies(const e2stn::RunRecord& run) {
  std::vector<double> a;
  for (const auto& f : run.folds) a.push_back(f.accuracy);
  return a;
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"EEG emotion style-transfer network: training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", e2stn::build_fingerprint());

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic source/target dataset pair");
  e2stn::SyntheticSpec syn;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out-dir", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--channels", syn.channels)->capture_default_str();
  gen->add_option("--bands", syn.bands)->capture_default_str();
  gen->add_option("--classes", syn.classes)->capture_default_str();
  gen->add_option("--subjects", syn.subjects_per_domain, "Subjects per domain")->capture_default_str();
  gen->add_option("--trials-per-class", syn.trials_per_class, "Trials per class per subject")->capture_default_str();
  gen->add_option("--noise", syn.noise_sigma)->capture_default_str();
  gen->add_option("--jitter", syn.subject_jitter)->capture_default_str();
  gen->add_option("--margin", syn.class_margin)->capture_default_str();
  gen->add_option("--pattern-scale", syn.pattern_scale)->capture_default_str();
  gen->add_option("--baseline-scale", syn.baseline_scale)->capture_default_str();
  gen->add_option("--band-coherence", syn.band_coherence)->capture_default_str();
  gen->add_option("--gain-min", syn.gain_min)->capture_default_str();
  gen->add_option("--gain-max", syn.gain_max)->capture_default_str();
  gen->add_option("--offset-min", syn.offset_min)->capture_default_str();
  gen->add_option("--offset-max", syn.offset_max)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train one model per target-subject fold and evaluate it");
  CommonOptions train_opt;
  DataOptions train_data;
  bool quiet = false;
  add_common(train, train_opt);
  add_data(train, train_data);
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  // eval
  auto* eval = app.add_subcommand("eval", "Re-score the checkpoints of a run directory");
  std::string eval_run;
  DataOptions eval_data;
  eval->add_option("--run-dir", eval_run, "Run directory written by train")->required();
  add_data(eval, eval_data);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Full model vs classifier-only over several seeds");
  CommonOptions ablate_opt;
  DataOptions ablate_data;
  std::size_t ablate_seeds = 5;
  add_common(ablate, ablate_opt);
  add_data(ablate, ablate_data);
  ablate->add_option("--seeds", ablate_seeds, "Number of consecutive seeds")->capture_default_str();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Grid over the loss weights");
  CommonOptions sweep_opt;
  DataOptions sweep_data;
  std::string lambdas = "1", nus = "1", xis = "1";
  add_common(sweep, sweep_opt);
  add_data(sweep, sweep_data);
  sweep->add_option("--lambda-values", lambdas, "Comma-separated list")->capture_default_str();
  sweep->add_option("--nu-values", nus, "Comma-separated list")->capture_default_str();
  sweep->add_option("--xi-values", xis, "Comma-separated list")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Regenerate report.json and confusion.csv for a run directory");
  std::string report_run;
  report->add_option("--run-dir", report_run, "Run directory")->required();

  // contribution
  auto* contrib = app.add_subcommand("contribution", "Per-channel contribution map from a checkpoint");
  std::string contrib_ckpt, contrib_data, contrib_out = "contribution.json";
  contrib->add_option("--checkpoint", contrib_ckpt)->required();
  contrib->add_option("--data", contrib_data, "Dataset manifest to score")->required();
  contrib->add_option("--out", contrib_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  const std::size_t threads = e2stn::default_thread_count();

  if (*gen) {
    const auto domains = e2stn::generate_synthetic(syn, gen_seed);
    const auto s = e2stn::write_dataset(domains.source, gen_out, "source");
    const auto t = e2stn::write_dataset(domains.target, gen_out, "target");
    std::printf("wrote %s (%zu trials)\nwrote %s (%zu trials)\n", s.string().c_str(), domains.source.trials.size(),
                t.string().c_str(), domains.target.trials.size());
    return 0;
  }

  if (*train) {
    const auto cfg = resolve_config(train_opt, train->count("--freeze-eval-conv") > 0);
    const auto p = load_protocol(train_data);
    check_dims(cfg, p);
    const auto run = train_run(cfg, p, train_opt.out_dir, threads, !quiet);
    print_summary(run);
    return 0;
  }

  if (*eval) {
    auto run = e2stn::read_run_header(eval_run);
    const auto p = load_protocol(eval_data);
    check_dims(run.config, p);
    if (p.class_names != run.class_names) throw UsageError("--classes does not match the run's class list");
    for (auto& f : run.folds) {
      const auto it = std::find_if(p.folds.begin(), p.folds.end(),
                                   [&](const e2stn::Fold& fold) { return fold.target_subject == f.target_subject; });
      if (it == p.folds.end()) {
        throw e2stn::ProtocolError("target subject " + std::to_string(f.target_subject) + " not in " + eval_data.target);
      }
      const auto ck = e2stn::load_checkpoint(e2stn::fold_dir(eval_run, f.target_subject) / "checkpoint.e2stn");
      const auto scored = e2stn::evaluate(ck.model, it->target_test, f.target_subject);
      f.accuracy = scored.accuracy;
      f.confusion = scored.confusion;
      const auto metrics_path = e2stn::fold_dir(eval_run, f.target_subject) / "metrics.csv";
      if (fs::exists(metrics_path)) f.trace = e2stn::parse_metrics_csv(e2stn::read_text(metrics_path), metrics_path.string());
      e2stn::write_fold_record(eval_run, f);
    }
    e2stn::write_report(eval_run, run);
    print_summary(run);
    return 0;
  }

  if (*ablate) {
    auto cfg = resolve_config(ablate_opt, ablate->count("--freeze-eval-conv") > 0);
    if (ablate_seeds < 2) throw UsageError("--seeds must be at least 2");
    const auto p = load_protocol(ablate_data);
    check_dims(cfg, p);
    const fs::path out = ablate_opt.out_dir;
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> full_acc, ablation_acc;
    ordered_json seeds = ordered_json::array();
    for (std::size_t k = 0; k < ablate_seeds; ++k) {
      auto full_cfg = cfg;
      full_cfg.train.seed = cfg.train.seed + k;
      full_cfg.train.ablation = false;
      auto abl_cfg = full_cfg;
      abl_cfg.train.ablation = true;
      const auto tag = "seed-" + std::to_string(full_cfg.train.seed);
      const auto full = train_run(full_cfg, p, out / ("full-" + tag), threads, false);
      const auto abl = train_run(abl_cfg, p, out / ("classifier-only-" + tag), threads, false);
      const auto fa = accuracies(full), aa = accuracies(abl);
      full_acc.insert(full_acc.end(), fa.begin(), fa.end());
      ablation_acc.insert(ablation_acc.end(), aa.begin(), aa.end());
      const auto fm = e2stn::aggregate(fa), am = e2stn::aggregate(aa);
      seeds.push_back({{"seed", full_cfg.train.seed}, {"full_mean", fm.mean}, {"classifier_only_mean", am.mean},
                       {"full", fa}, {"classifier_only", aa}});
      std::fprintf(stderr, "seed %llu: full %.4f classifier-only %.4f\n",
                   static_cast<unsigned long long>(full_cfg.train.seed), fm.mean, am.mean);
    }
    const auto t = e2stn::paired_t_test(full_acc, ablation_acc, e2stn::Alternative::Greater);
    const auto fm = e2stn::aggregate(full_acc), am = e2stn::aggregate(ablation_acc);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ordered_json j;
    j["pairs"] = "one (seed, target subject) fold per pair";
    j["full_mean"] = fm.mean;
    j["classifier_only_mean"] = am.mean;
    j["improvement"] = fm.mean - am.mean;
    j["t"] = t.t;
    j["df"] = t.df;
    j["p_one_sided"] = t.p;
    j["seeds"] = seeds;
    j["caveat"] = "no normality pre-test; the paired t-test runs unconditionally";
    e2stn::write_text(out / "ablation.json", j.dump(2) + "\n");
    std::printf("full %.2f%%  classifier-only %.2f%%  gain %.2f points  t=%.3f df=%.0f p(one-sided)=%.4g  (%.0f s)\n",
                100 * fm.mean, 100 * am.mean, 100 * (fm.mean - am.mean), t.t, t.df, t.p, seconds);
    return 0;
  }

  if (*sweep) {
    const auto base = resolve_config(sweep_opt, sweep->count("--freeze-eval-conv") > 0);
    const auto p = load_protocol(sweep_data);
    check_dims(base, p);
    std::vector<e2stn::ExperimentConfig> grid;
    for (double l : parse_list(lambdas, "--lambda-values")) {
      for (double n : parse_list(nus, "--nu-values")) {
        for (double x : parse_list(xis, "--xi-values")) {
          auto c = base;
          c.train.lambda = l, c.train.nu = n, c.train.xi = x;
          c.validate();
          grid.push_back(c);
        }
      }
    }
    // Each grid point gets its own directory; folds inside run sequentially
    // so the worker cap applies to the grid.
    std::vector<e2stn::Aggregate> results(grid.size());
    e2stn::parallel_for(grid.size(), threads, [&](std::size_t i) {
      std::ostringstream name;
      name << "lambda-" << e2stn::format_double(grid[i].train.lambda) << "_nu-"
           << e2stn::format_double(grid[i].train.nu) << "_xi-" << e2stn::format_double(grid[i].train.xi);
      const auto run = train_run(grid[i], p, fs::path(sweep_opt.out_dir) / name.str(), 1, false);
      results[i] = e2stn::aggregate(accuracies(run));
    });
    std::ostringstream csv;
    csv << "lambda,nu,xi,mean_acc,std_acc\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
      csv << e2stn::format_double(grid[i].train.lambda) << ',' << e2stn::format_double(grid[i].train.nu) << ','
          << e2stn::format_double(grid[i].train.xi) << ',' << e2stn::format_double(results[i].mean) << ','
          << e2stn::format_double(results[i].std) << '\n';
    }
    e2stn::write_text(fs::path(sweep_opt.out_dir) / "sweep.csv", csv.str());
    std::fputs(csv.str().c_str(), stdout);
    return 0;
  }

  if (*report) {
    const auto run = e2stn::read_run_dir(report_run);
    e2stn::write_report(report_run, run);
    print_summary(run);
    return 0;
  }

  if (*contrib) {
    auto ck = e2stn::load_checkpoint(contrib_ckpt);
    const auto data = e2stn::load_dataset(contrib_data);
    const auto map = e2stn::contribution_for(ck.model, data.trials, data.manifest.channel_names);
    e2stn::write_text(contrib_out, map.to_json());
    for (std::size_t c = 0; c < map.channels.size(); ++c) std::printf("%-8s %.4f\n", map.channels[c].c_str(), map.scores[c]);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: usage_error: %s\n", e.what());
    return 2;
  } catch (const e2stn::ConfigError& e) {
    std::fprintf(stderr, "error: config_error: %s\n", e.what());
    return 2;
  } catch (const e2stn::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e2stn::to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal_error: %s\n", e.what());
    return 1;
  }
}
