#include "cilforge/learners/learner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <spdlog/spdlog.h>

#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/learners/heads.hpp"
#include "cilforge/ops.hpp"

namespace cilforge {

OptimConfig OptimSettings::optim_config(double lr_override) const {
  OptimConfig c;
  c.kind = optimizer;
  c.learning_rate = lr_override > 0.0 ? lr_override : lr;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  c.milestones = milestones;
  c.lr_decay = lr_decay;
  return c;
}

Learner::Learner(LearnerConfig config, FrozenBackbone backbone)
    : config_(std::move(config)), backbone_(std::move(backbone)) {}

void Learner::observe(const TaskContext& ctx) {
  enter_task(ctx);
  const std::size_t phases = num_phases(ctx);
  if (phases > 0) {
    const Dataset data = training_data(ctx);
    for (std::size_t phase = 0; phase < phases; ++phase) {
      begin_phase(phase, ctx);
      train_phase(phase, data, ctx);
      end_phase(phase, ctx);
    }
  }
  end_task(ctx);
  ++tasks_seen_;
}

void Learner::enter_task(const TaskContext& ctx) {
  if (ctx.train == nullptr || ctx.full_train == nullptr || ctx.store == nullptr) {
    throw ContractError("observe: task context is incomplete");
  }
  if (ctx.known_classes != known_classes_) {
    throw ContractError("observe: stream has " + std::to_string(ctx.known_classes) +
                        " known classes but the learner has " + std::to_string(known_classes_));
  }
  if (ctx.total_classes <= ctx.known_classes) throw ContractError("observe: task adds no classes");
  current_task_ = ctx.task;
  total_classes_ = ctx.total_classes;
  epoch_losses_.clear();
  begin_task(ctx);
}

void Learner::update_memory(const TaskContext& ctx) {
  if (!uses_exemplars()) return;
  const int q = quota(config_.memory, total_classes_);
  *ctx.store = reduce_exemplars(std::move(*ctx.store), q);
  for (int c = known_classes_; c < total_classes_; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ctx.train->size(); ++i) {
      if (ctx.train->labels[i] == c) rows.push_back(ctx.train_rows.at(i));
    }
    const int m = std::min<int>(q, static_cast<int>(rows.size()));
    std::vector<std::size_t> chosen;
    if (m > 0) {
      const Tensor f = features(ctx.full_train->batch(rows));
      for (std::size_t k : herding_select(f, m)) chosen.push_back(rows[k]);
    }
    ctx.store->set_class(c, std::move(chosen));
  }
}

void Learner::after_task() { known_classes_ = total_classes_; }

std::vector<int> Learner::classify(const Tensor& inputs) const {
  if (tasks_seen_ == 0) throw StateError(name() + ": classify before any task was observed");
  return argmax_rows(scores(inputs));
}

void Learner::begin_task(const TaskContext&) {}

std::size_t Learner::num_phases(const TaskContext&) const { return 1; }

void Learner::begin_phase(std::size_t, const TaskContext&) {}

int Learner::phase_epochs(std::size_t) const { return config_.optim.epochs; }

double Learner::phase_lr(std::size_t) const { return config_.optim.lr; }

Dataset Learner::training_data(const TaskContext& ctx) const {
  if (!uses_exemplars()) return *ctx.train;
  return rehearsal_dataset(*ctx.store, *ctx.train, *ctx.full_train);
}

void Learner::train_phase(std::size_t phase, const Dataset& data, const TaskContext& ctx) {
  if (epoch_losses_.size() <= phase) epoch_losses_.resize(phase + 1);
  const std::vector<Tensor> params = phase_params(phase);
  const int epochs = phase_epochs(phase);
  if (params.empty() || epochs <= 0 || data.empty()) return;
  Optimizer opt(config_.optim.optim_config(phase_lr(phase)), params);
  const std::uint64_t seed = seed_for("batches", phase);
  for (int e = 0; e < epochs; ++e) {
    opt.set_epoch(e);
    begin_epoch(phase, e);
    double total = 0.0;
    for (const auto& idx : batch_order(data.size(), config_.optim.batch_size, seed, ctx.task, e)) {
      const Tensor x = data.batch(idx);
      const std::vector<int> y = data.batch_labels(idx);
      opt.zero_grad();
      Tape tape;
      Tensor loss;
      {
        Tape::Scope scope(tape);
        loss = phase_loss(phase, x, y);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw FitError(name() + ": non-finite loss in task " + std::to_string(ctx.task) + ", phase " +
                       std::to_string(phase) + ", epoch " + std::to_string(e));
      }
      tape.backward(loss);
      opt.step();
      total += value * static_cast<double>(idx.size());
    }
    epoch_losses_[phase].push_back(total / static_cast<double>(data.size()));
    spdlog::debug("{} task {} phase {} epoch {} loss {:.6f}", name(), ctx.task, phase, e,
                  epoch_losses_[phase].back());
  }
}

StateDict Learner::state() const {
  StateDict sd;
  sd.meta()["model_name"] = name();
  sd.meta()["known_classes"] = known_classes_;
  sd.meta()["total_classes"] = total_classes_;
  sd.meta()["tasks_seen"] = tasks_seen_;
  save(sd);
  return sd;
}

void Learner::load_state(const StateDict& state) {
  const auto& meta = state.meta();
  if (meta.value("model_name", std::string()) != name()) {
    throw StateError("state belongs to '" + meta.value("model_name", std::string()) + "', not '" +
                     name() + "'");
  }
  known_classes_ = meta.at("known_classes").get<int>();
  total_classes_ = meta.at("total_classes").get<int>();
  tasks_seen_ = meta.at("tasks_seen").get<std::size_t>();
  load(state);
}

std::uint64_t Learner::seed_for(std::string_view what, std::size_t task, std::size_t extra) const {
  return derive_seed(config_.seed, tag(what), task, extra);
}

void Learner::expect_keys(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : config_.model_specific.items()) {
    if (allowed.count(key) != 0) continue;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("model_specific." + key,
                      "not used by " + name() + (list.empty() ? "" : " (accepted: " + list + ")"));
  }
}

Tensor Learner::features_in_chunks(const Tensor& inputs,
                                   const std::function<Tensor(const Tensor&)>& fn) const {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = inputs.dim(0);
  if (n <= kChunk) return fn(inputs);
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < n; start += kChunk) {
    parts.push_back(fn(ops::slice(inputs, 0, start, std::min(kChunk, n - start))));
  }
  return ops::concat(parts, 0);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& learner_names() {
  static const std::vector<std::string> names = {"finetune", "icarl",     "coil",     "der",
                                                 "foster",   "memo",      "simplecil", "l2p",
                                                 "dualprompt", "coda-prompt", "adam"};
  return names;
}

bool learner_uses_exemplars(const std::string& model_name) {
  std::string key = model_name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return key == "icarl" || key == "coil" || key == "der" || key == "foster" || key == "memo";
}

std::unique_ptr<Learner> get_learner(const std::string& model_name, const LearnerConfig& config,
                                     const FrozenBackbone& backbone) {
  std::string key = model_name;
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  LearnerConfig cfg = config;
  cfg.model_name = key;
  if (key == "finetune") return std::make_unique<FinetuneLearner>(cfg, backbone);
  if (key == "icarl") return std::make_unique<ICaRLLearner>(cfg, backbone);
  if (key == "coil") return std::make_unique<CoilLearner>(cfg, backbone);
  if (key == "der") return std::make_unique<DERLearner>(cfg, backbone);
  if (key == "foster") return std::make_unique<FosterLearner>(cfg, backbone);
  if (key == "memo") return std::make_unique<MemoLearner>(cfg, backbone);
  if (key == "simplecil") return std::make_unique<SimpleCILLearner>(cfg, backbone);
  if (key == "l2p") return std::make_unique<L2PLearner>(cfg, backbone);
  if (key == "dualprompt") return std::make_unique<DualPromptLearner>(cfg, backbone);
  if (key == "coda-prompt") return std::make_unique<CodaPromptLearner>(cfg, backbone);
  if (key == "adam") return std::make_unique<AdamLearner>(cfg, backbone);
  std::string list;
  for (const auto& n : learner_names()) list += (list.empty() ? "" : ", ") + n;
  throw FactoryError("unknown model_name '" + model_name + "'; valid names: " + list);
}

}  // namespace cilforge
