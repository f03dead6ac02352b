#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "e2stn/config.hpp"
#include "e2stn/metrics.hpp"
#include "e2stn/protocol.hpp"
#include "e2stn/report.hpp"
#include "e2stn/training.hpp"

namespace e2stn {

struct FoldRun {
  FoldRecord record;
  TrainResult train;
  /// Serialized final checkpoint.
  std::string checkpoint;
  /// Per-channel contribution of the trained graph features on the target test trials.
  ContributionMap contribution;
};

/// Builds a fresh model from `config`, trains on the fold's source trials
/// and unlabeled target pool, then scores the target test trials.
FoldRun run_fold(const ExperimentConfig& config, const Fold& fold,
                 const std::function<void(const MetricRow&)>& on_epoch = {});

/// Runs every fold, up to `threads` at a time; results keep fold order.
std::vector<FoldRun> run_protocol(const ExperimentConfig& config, const std::vector<Fold>& folds, std::size_t threads);

/// Worker cap: E2STN_THREADS if set and positive, else hardware concurrency.
std::size_t default_thread_count();

/// Runs `tasks` on up to `threads` workers; the first exception is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

/// Contribution map over graph features of `trials`.
ContributionMap contribution_for(const Model& model, const std::vector<LabeledTrial>& trials,
                                 const std::vector<std::string>& channel_names);

}  // namespace e2stn
