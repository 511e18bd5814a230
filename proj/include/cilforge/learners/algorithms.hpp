#pragma once

#include <optional>
#include <vector>

#include "cilforge/learners/heads.hpp"
#include "cilforge/learners/learner.hpp"
#include "cilforge/learners/prompts.hpp"

namespace cilforge {

// Trains the whole backbone and a growing linear head with cross-entropy on
// the current task only.
class FinetuneLearner : public Learner {
 public:
  FinetuneLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;

  const TinyTransformer& net() const { return net_; }
  const LinearHead& head() const { return head_; }

 protected:
  FinetuneLearner(LearnerConfig config, FrozenBackbone backbone, const std::set<std::string>& keys);
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  TinyTransformer net_;
  LinearHead head_;
};

// Rehearsal plus logit distillation from the previous model; nearest class
// mean classification.
class ICaRLLearner : public FinetuneLearner {
 public:
  using FinetuneLearner::FinetuneLearner;

  Tensor scores(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return true; }
  void begin_task(const TaskContext& ctx) override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  void end_task(const TaskContext& ctx) override;
  std::vector<std::string> decisions() const override;

  const Tensor& class_means() const { return class_means_; }

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  std::optional<TinyTransformer> old_net_;
  LinearHead old_head_;
  Tensor class_means_;  // [classes x d], means of normalized features
};

// Transport-based transfer between old and new class heads.
class CoilLearner : public FinetuneLearner {
 public:
  CoilLearner(LearnerConfig config, FrozenBackbone backbone);

  bool uses_exemplars() const override { return true; }
  void begin_task(const TaskContext& ctx) override;
  void begin_epoch(std::size_t phase, int epoch) override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<std::string> decisions() const override;

  const Tensor& plan() const { return plan_; }
  double backward_weight() const { return backward_weight_; }

 protected:
  std::optional<TinyTransformer> old_net_;
  LinearHead old_head_;
  Tensor plan_;          // [Ko x Kn]
  Tensor back_transfer_; // [Kn x Ko] = Ko * plan^T
  double backward_weight_ = 0.0;
};

// One backbone per task over a concatenated feature, plus an auxiliary head.
class DERLearner : public Learner {
 public:
  DERLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return true; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  std::size_t feature_dim() const;
  const std::vector<TinyTransformer>& nets() const { return nets_; }

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  std::vector<TinyTransformer> nets_;
  LinearHead head_;
  LinearHead aux_head_;
};

// Two-branch boosting, then distillation back into a single backbone.
class FosterLearner : public Learner {
 public:
  FosterLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return true; }
  void begin_task(const TaskContext& ctx) override;
  std::size_t num_phases(const TaskContext& ctx) const override;
  void begin_phase(std::size_t phase, const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  void end_phase(std::size_t phase, const TaskContext& ctx) override;
  int phase_epochs(std::size_t phase) const override;
  double phase_lr(std::size_t phase) const override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  std::size_t feature_dim() const { return net_.spec.embed_dim; }
  // Teacher logits for the current task's boosting model.
  Tensor teacher_logits(const Tensor& inputs) const;

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  TinyTransformer net_;
  LinearHead head_;
  // Boosting state, only alive during a task.
  std::optional<TinyTransformer> old_net_;
  std::optional<TinyTransformer> new_net_;
  LinearHead old_head_;
  LinearHead teacher_head_;  // [2d x total]
  LinearHead branch_head_;   // [d x total] on the new branch
  std::optional<TinyTransformer> student_;
  LinearHead student_head_;
  std::vector<double> class_weights_;
};

// Shared generalized blocks with per-task specialized suffix blocks.
class MemoLearner : public Learner {
 public:
  MemoLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return true; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  std::size_t specialized_depth() const { return split_; }
  std::size_t specialized_count() const { return specialized_.size(); }
  std::size_t parameter_count() const;

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  std::vector<Tensor> shared_parameters() const;
  std::vector<Tensor> specialized_parameters(std::size_t i) const;
  Tensor shared_tokens(const Tensor& inputs) const;
  Tensor branch_feature(std::size_t i, const Tensor& shared) const;

  std::size_t split_;
  TinyTransformer shared_;  // embedder, first L - s blocks, final norm
  std::vector<std::vector<TransformerBlock>> specialized_;
  LinearHead head_;
  LinearHead aux_head_;
};

// Cosine classification against class-mean prototypes of frozen features.
class SimpleCILLearner : public Learner {
 public:
  SimpleCILLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  std::size_t num_phases(const TaskContext&) const override { return 0; }
  std::vector<Tensor> phase_params(std::size_t) const override { return {}; }
  Tensor phase_loss(std::size_t, const Tensor&, std::span<const int>) override;
  void end_task(const TaskContext& ctx) override;
  std::vector<Component> components() const override;

  const PrototypeHead& prototypes() const { return prototypes_; }

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  PrototypeHead prototypes_;
};

// Shared key-matched prompt pool prepended at the first layer.
class L2PLearner : public Learner {
 public:
  L2PLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  const PromptPool& pool() const { return pool_; }

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;
  Tensor prompted_features(const Tensor& inputs, Tensor* pull_loss) const;

  PromptPool pool_;
  LinearHead head_;
  double pull_weight_;
  std::size_t layer_;
};

// General prompts shared by all tasks plus one expert prompt per task.
class DualPromptLearner : public Learner {
 public:
  DualPromptLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  // Expert prompt chosen per input by key match.
  std::vector<std::size_t> select_tasks(const Tensor& queries) const;
  // Feature with the expert prompt of `task_hint` for every input, or the
  // key-matched one when absent.
  Tensor forward(const Tensor& inputs, std::optional<std::size_t> task_hint) const;
  std::size_t expert_count() const { return e_keys_.size(); }

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  std::vector<std::size_t> g_layers_, e_layers_;
  std::size_t g_length_, e_length_;
  double pull_weight_;
  std::vector<Tensor> g_prompts_;               // one [g x d] per G layer
  std::vector<Tensor> e_keys_;                  // one [d] per task
  std::vector<std::vector<Tensor>> e_prompts_;  // per task, one [e x d] per E layer
  LinearHead head_;
};

// Prompts composed from attention-weighted components, with new components
// allocated per task and older ones frozen.
class CodaPromptLearner : public Learner {
 public:
  CodaPromptLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  struct Group {
    Tensor keys;       // [m x d]
    Tensor attention;  // [m x d]
    Tensor prompts;    // [m x p x d]
  };
  const std::vector<Group>& groups() const { return groups_; }
  ComposedPrompt compose(const Tensor& queries) const;
  Tensor ortho_penalty() const;

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;
  Tensor prompted_features(const Tensor& inputs) const;

  std::size_t pool_size_, length_;
  double ortho_weight_;
  std::vector<std::size_t> layers_;
  std::vector<Group> groups_;
  LinearHead head_;
};

// Parameter-efficient tuning on the first task, then prototypes over the
// concatenation of frozen and adapted features.
class AdamLearner : public Learner {
 public:
  AdamLearner(LearnerConfig config, FrozenBackbone backbone);

  Tensor scores(const Tensor& inputs) const override;
  Tensor features(const Tensor& inputs) const override;
  bool uses_exemplars() const override { return false; }
  std::size_t num_phases(const TaskContext& ctx) const override;
  void begin_task(const TaskContext& ctx) override;
  std::vector<Tensor> phase_params(std::size_t phase) const override;
  Tensor phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) override;
  void end_task(const TaskContext& ctx) override;
  std::vector<Component> components() const override;
  std::vector<std::string> decisions() const override;

  PetVariant variant() const { return pet_.config.variant; }
  const PETModule& pet() const { return pet_; }
  const PrototypeHead& prototypes() const { return prototypes_; }
  Tensor adapted_features(const Tensor& inputs) const;

 protected:
  void save(StateDict& state) const override;
  void load(const StateDict& state) override;

  PETModule pet_;
  LinearHead tune_head_;
  PrototypeHead prototypes_;
  bool pet_frozen_ = false;
};

}  // namespace cilforge
