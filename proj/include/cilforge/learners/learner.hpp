#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <functional>

#include <json.hpp>

#include "cilforge/backbone.hpp"
#include "cilforge/datastream.hpp"
#include "cilforge/errors.hpp"
#include "cilforge/memory.hpp"
#include "cilforge/optim.hpp"
#include "cilforge/state.hpp"

namespace cilforge {

struct OptimSettings {
  OptimKind optimizer = OptimKind::kSgdMomentum;
  std::size_t batch_size = 32;
  int epochs = 5;
  double lr = 0.01;
  double lr_decay = 0.1;
  double weight_decay = 0.0;
  std::vector<int> milestones;
  double temperature = 2.0;
  double momentum = 0.9;

  OptimConfig optim_config(double lr_override = -1.0) const;
};

struct LearnerConfig {
  std::string model_name;
  std::uint64_t seed = 1993;
  OptimSettings optim;
  MemoryPolicy memory;
  nlohmann::json model_specific = nlohmann::json::object();
};

// Everything a learner sees of one task.
struct TaskContext {
  std::size_t task = 0;
  std::size_t num_tasks = 1;
  int known_classes = 0;  // classes of tasks < task
  int total_classes = 0;  // classes of tasks <= task
  const Dataset* train = nullptr;       // current task, global labels
  const Dataset* full_train = nullptr;  // rows referenced by the exemplar store
  std::vector<std::size_t> train_rows;  // rows of `train` inside `full_train`
  ExemplarStore* store = nullptr;
};

// A named group of tensors; `frozen` means it was not updated during the most
// recent task and never will be again.
struct Component {
  std::string name;
  std::vector<Tensor> tensors;
  bool frozen = false;
};

// Strategy interface shared by every incremental algorithm. A task is learned
// as begin_task, then for each phase begin_phase + epochs of phase_loss
// minimisation, then end_task. The stepwise hooks are public so tests can
// gradient-check every composite loss.
class Learner {
 public:
  Learner(LearnerConfig config, FrozenBackbone backbone);
  virtual ~Learner() = default;
  Learner(const Learner&) = delete;
  Learner& operator=(const Learner&) = delete;

  const std::string& name() const { return config_.model_name; }
  const LearnerConfig& config() const { return config_; }
  const FrozenBackbone& backbone() const { return backbone_; }
  int known_classes() const { return known_classes_; }
  int total_classes() const { return total_classes_; }
  std::size_t tasks_seen() const { return tasks_seen_; }

  void observe(const TaskContext& ctx);
  // Validates the context and runs begin_task, leaving the learner ready for
  // begin_phase / phase_loss. observe() starts with this.
  void enter_task(const TaskContext& ctx);
  // Herding update of the exemplar store; a no-op without exemplars.
  void update_memory(const TaskContext& ctx);
  // known_classes := total_classes.
  void after_task();

  // Scores over the seen classes, [B x total_classes].
  virtual Tensor scores(const Tensor& inputs) const = 0;
  std::vector<int> classify(const Tensor& inputs) const;
  // Features used for herding and class means.
  virtual Tensor features(const Tensor& inputs) const = 0;
  virtual bool uses_exemplars() const = 0;

  virtual void begin_task(const TaskContext& ctx);
  virtual std::size_t num_phases(const TaskContext& ctx) const;
  virtual void begin_phase(std::size_t phase, const TaskContext& ctx);
  virtual void begin_epoch(std::size_t, int) {}
  virtual std::vector<Tensor> phase_params(std::size_t phase) const = 0;
  virtual Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) = 0;
  virtual void end_phase(std::size_t, const TaskContext&) {}
  virtual void end_task(const TaskContext&) {}
  virtual int phase_epochs(std::size_t phase) const;
  virtual double phase_lr(std::size_t phase) const;

  virtual std::vector<Component> components() const = 0;

  StateDict state() const;
  void load_state(const StateDict& state);

  // Design choices in effect for this learner, for the run report.
  virtual std::vector<std::string> decisions() const { return {}; }

  // Mean training loss per epoch of each phase, for the most recent task.
  const std::vector<std::vector<double>>& epoch_losses() const { return epoch_losses_; }

 protected:
  // Current-task data, plus stored exemplars for rehearsal learners.
  virtual Dataset training_data(const TaskContext& ctx) const;
  virtual void save(StateDict& state) const = 0;
  virtual void load(const StateDict& state) = 0;

  // Seed for a named random draw tied to a task.
  std::uint64_t seed_for(std::string_view what, std::size_t task = 0, std::size_t extra = 0) const;
  // Validates model_specific keys against `allowed`.
  void expect_keys(const std::set<std::string>& allowed) const;
  template <typename T>
  T option(const std::string& key, T fallback) const {
    const auto& ms = config_.model_specific;
    if (!ms.contains(key)) return fallback;
    try {
      return ms.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model_specific." + key, e.what());
    }
  }
  Tensor features_in_chunks(const Tensor& inputs,
                            const std::function<Tensor(const Tensor&)>& fn) const;

  LearnerConfig config_;
  FrozenBackbone backbone_;
  int known_classes_ = 0;
  int total_classes_ = 0;
  std::size_t tasks_seen_ = 0;
  std::size_t current_task_ = 0;
  std::vector<std::vector<double>> epoch_losses_;

 private:
  void train_phase(std::size_t phase, const Dataset& data, const TaskContext& ctx);
};

std::unique_ptr<Learner> get_learner(const std::string& model_name, const LearnerConfig& config,
                                     const FrozenBackbone& backbone);

// Canonical lower-case names accepted by get_learner.
const std::vector<std::string>& learner_names();

// Whether the named learner rehearses stored exemplars.
bool learner_uses_exemplars(const std::string& model_name);

}  // namespace cilforge
