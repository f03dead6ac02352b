#include "e2stn/experiment.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "e2stn/checkpoint.hpp"
#include "e2stn/error.hpp"

namespace e2stn {

std::size_t default_thread_count() {
  if (const char* env = std::getenv("E2STN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

ContributionMap contribution_for(const Model& model, const std::vector<LabeledTrial>& trials,
                                 const std::vector<std::string>& channel_names) {
  std::vector<Tensor> features;
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < trials.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(trials.size(), start + chunk); ++i) idx.push_back(i);
    features.push_back(graph_features(stack_features(trials, idx), model.classifier, model.config.classifier));
  }
  return export_contribution(features, channel_names);
}

FoldRun run_fold(const ExperimentConfig& config, const Fold& fold,
                 const std::function<void(const MetricRow&)>& on_epoch) {
  config.validate();
  if (!fold.source_train || fold.source_train->empty()) throw ProtocolError("run_fold: fold has no source trials");
  const auto& first = fold.source_train->front().features;
  if (first.channels != config.model.channels || first.bands != config.model.bands ||
      fold.class_names.size() != config.model.classes) {
    throw ConfigError("run_fold: data is " + std::to_string(first.channels) + "x" + std::to_string(first.bands) +
                      " with " + std::to_string(fold.class_names.size()) + " classes, config expects " +
                      std::to_string(config.model.channels) + "x" + std::to_string(config.model.bands) + " with " +
                      std::to_string(config.model.classes));
  }
  Model model = make_model(config.model, config.train.ablation, config.train.seed);
  TrainState state{Adam(config.train.adam), Rng(config.train.seed).split(1000 + fold.target_subject), 0};

  FoldRun run;
  run.train = train(model, state, *fold.source_train, fold.target_pool, config.train, on_epoch);
  const auto scored = evaluate(model, fold.target_test, fold.target_subject);
  run.record.target_subject = fold.target_subject;
  run.record.accuracy = scored.accuracy;
  run.record.confusion = scored.confusion;
  run.record.trace = run.train.trace;
  run.checkpoint = encode_checkpoint(config, model, state);
  run.contribution = contribution_for(model, fold.target_test, fold.channel_names);
  return run;
}

std::vector<FoldRun> run_protocol(const ExperimentConfig& config, const std::vector<Fold>& folds, std::size_t threads) {
  std::vector<FoldRun> runs(folds.size());
  parallel_for(folds.size(), threads, [&](std::size_t i) { runs[i] = run_fold(config, folds[i]); });
  return runs;
}

}  // namespace e2stn
