#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {

SimpleCILLearner::SimpleCILLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({});
}

Tensor SimpleCILLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return encode(backbone_, x); });
}

Tensor SimpleCILLearner::scores(const Tensor& inputs) const {
  return prototypes_.scores(features(inputs));
}

Tensor SimpleCILLearner::phase_loss(std::size_t, const Tensor&, std::span<const int>) {
  throw ContractError("simplecil takes no gradient steps");
}

void SimpleCILLearner::end_task(const TaskContext& ctx) {
  prototypes_.fit(features(ctx.train->batch()), ctx.train->labels, ctx.known_classes, ctx.total_classes);
}

std::vector<Component> SimpleCILLearner::components() const {
  return {{"backbone", backbone_.model().parameters(), true}};
}

void SimpleCILLearner::save(StateDict& state) const {
  if (prototypes_.classes() > 0) state.put("prototypes", prototypes_.as_tensor());
}

void SimpleCILLearner::load(const StateDict& state) {
  prototypes_ = PrototypeHead{};
  if (state.contains("prototypes")) prototypes_.load(state.get("prototypes"));
}

// ---------------------------------------------------------------------------

namespace {

PetConfig pet_config(const nlohmann::json& ms) {
  PetConfig c;
  try {
    c.variant = parse_pet_variant(ms.value("pet_variant", std::string("adapter")));
    c.adapter_bottleneck = ms.value("adapter_bottleneck", c.adapter_bottleneck);
    c.vpt_tokens = ms.value("vpt_tokens", c.vpt_tokens);
    c.sites = ms.value("pet_sites", c.sites);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model_specific", e.what());
  }
  return c;
}

}  // namespace

AdamLearner::AdamLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"pet_variant", "adapter_bottleneck", "vpt_tokens", "pet_sites"});
  pet_ = PETModule::create(pet_config(config_.model_specific), backbone_.model(), seed_for("pet"));
}

Tensor AdamLearner::adapted_features(const Tensor& inputs) const {
  EncodeOptions opts;
  opts.pet = &pet_;
  return encode(backbone_, inputs, opts);
}

Tensor AdamLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) {
    return ops::concat({encode(backbone_, x), adapted_features(x)}, 1);
  });
}

Tensor AdamLearner::scores(const Tensor& inputs) const { return prototypes_.scores(features(inputs)); }

std::size_t AdamLearner::num_phases(const TaskContext& ctx) const {
  return ctx.known_classes == 0 ? 1 : 0;
}

void AdamLearner::begin_task(const TaskContext& ctx) {
  if (ctx.known_classes == 0) {
    tune_head_ = LinearHead::create(backbone_.feature_dim(), static_cast<std::size_t>(ctx.total_classes),
                                    seed_for("tune-head"));
  } else {
    pet_frozen_ = true;
  }
}

std::vector<Tensor> AdamLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params = trainable_params(pet_, backbone_);
  detail::append(params, detail::head_params(tune_head_));
  return params;
}

Tensor AdamLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  if (pet_frozen_) throw ContractError("adam: the tuned model is frozen after the first task");
  return ops::cross_entropy(tune_head_(adapted_features(inputs)), labels);
}

void AdamLearner::end_task(const TaskContext& ctx) {
  tune_head_ = LinearHead{};
  prototypes_.fit(features(ctx.train->batch()), ctx.train->labels, ctx.known_classes, ctx.total_classes);
}

std::vector<Component> AdamLearner::components() const {
  return {{"backbone", backbone_.model().parameters(), true},
          {"pet", detail::values_of(pet_.named_parameters()), pet_frozen_}};
}

std::vector<std::string> AdamLearner::decisions() const {
  return {"tuning variant " + to_string(pet_.config.variant) + ", trained on the first task only",
          "feature = concat(frozen, adapted); cosine prototypes of the concatenation"};
}

void AdamLearner::save(StateDict& state) const {
  state.meta()["pet_frozen"] = pet_frozen_;
  state.put_all("pet.", pet_.named_parameters());
  if (prototypes_.classes() > 0) state.put("prototypes", prototypes_.as_tensor());
}

void AdamLearner::load(const StateDict& state) {
  pet_ = PETModule::create(pet_config(config_.model_specific), backbone_.model(), seed_for("pet"));
  state.load_all("pet.", pet_.named_parameters());
  pet_frozen_ = state.meta().value("pet_frozen", false);
  prototypes_ = PrototypeHead{};
  if (state.contains("prototypes")) prototypes_.load(state.get("prototypes"));
}

}  // namespace cilforge
