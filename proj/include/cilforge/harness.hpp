#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cilforge/backbone.hpp"
#include "cilforge/datastream.hpp"
#include "cilforge/evaluator.hpp"
#include "cilforge/learners/learner.hpp"
#include "cilforge/memory.hpp"

namespace cilforge {

struct DatasetConfig {
  std::string name = "blobs";  // "blobs" or "clds"
  BlobSpec blobs;
  std::filesystem::path train_path;  // clds only
  std::filesystem::path test_path;
};

struct RunConfig {
  std::string model_name;
  int init_cls = 0;
  int increment = 0;
  std::string backbone_type;
  BackboneSpec backbone;  // input_dim is filled from the dataset
  std::uint64_t seed = 1993;
  MemoryPolicy memory;
  bool exemplar_keys_given = false;
  DatasetConfig dataset;
  OptimSettings optim;
  nlohmann::json model_specific = nlohmann::json::object();
  bool checkpoint = true;  // one checkpoint per task

  nlohmann::json source = nlohmann::json::object();  // the config as given
  std::vector<std::string> notices;  // non-fatal remarks made while parsing

  // FNV-1a over the canonical dump of `source`.
  std::string hash() const;
  LearnerConfig learner_config() const;
};

// `base_dir` resolves relative dataset paths.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig parse_config(const std::filesystem::path& path);

SplitDataset load_dataset(const DatasetConfig& config);

// Human-facing learner name used in report rows, e.g. "iCaRL".
std::string display_name(const RunConfig& config);

// Drives one learner through one stream. Each step: observe the task, evaluate
// on the cumulative test view, update memory, advance known classes.
class Runner {
 public:
  explicit Runner(RunConfig config);
  // Restores the state saved after some task; `config` must hash the same as
  // the one the checkpoint was written with.
  static std::unique_ptr<Runner> resume(const std::filesystem::path& checkpoint, RunConfig config);

  const RunConfig& config() const { return config_; }
  const DataManager& data() const { return *data_; }
  Learner& learner() { return *learner_; }
  const Learner& learner() const { return *learner_; }
  const ExemplarStore& store() const { return store_; }
  std::size_t num_tasks() const { return data_->num_tasks(); }
  std::size_t next_task() const { return next_task_; }
  bool finished() const { return next_task_ >= num_tasks(); }

  // Exemplar reads over the whole run, including before a resume.
  std::size_t store_reads() const { return reads_before_ + store_.access_count(); }

  TaskContext context(std::size_t task) const;
  const StageResult& step();
  // Predictions on a test set; chunked to bound memory.
  std::vector<int> predict(const Dataset& data) const;

  void save_checkpoint(const std::filesystem::path& path) const;

  RunReport report() const;
  const std::vector<StageResult>& stages() const { return stages_; }

 private:
  Runner(RunConfig config, std::optional<TinyTransformer> weights);

  RunConfig config_;
  std::unique_ptr<DataManager> data_;
  std::optional<FrozenBackbone> backbone_;
  std::unique_ptr<Learner> learner_;
  ExemplarStore store_;
  std::size_t next_task_ = 0;
  std::size_t reads_before_ = 0;
  std::vector<StageResult> stages_;
  double seconds_ = 0.0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::optional<std::filesystem::path> resume_from;
};

RunReport run(const RunConfig& config, const RunOptions& options = {});

// Design choices that hold for every run, listed in each report.
std::vector<std::string> harness_decisions(const RunConfig& config, bool uses_exemplars);

inline constexpr const char* kCheckpointHeader = "cilforge-ckpt v1";

}  // namespace cilforge
