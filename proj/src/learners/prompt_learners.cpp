#include <algorithm>
#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {
namespace {

void check_layers(const std::vector<std::size_t>& layers, std::size_t depth, const std::string& field) {
  for (std::size_t l : layers) {
    if (l >= depth) {
      throw ConfigError(field, "layer " + std::to_string(l) + " is outside a depth-" +
                                   std::to_string(depth) + " backbone");
    }
  }
}

Tensor frozen_query(const FrozenBackbone& backbone, const Tensor& inputs) {
  return encode(backbone, inputs).detach();
}

}  // namespace

// ---------------------------------------------------------------------------
// L2P

L2PLearner::L2PLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"prompt_pool", "pull_weight", "prompt_layer"});
  const nlohmann::json pool = option<nlohmann::json>("prompt_pool", nlohmann::json::object());
  std::size_t size = 10, length = 4, top_n = 2;
  try {
    size = pool.value("size", size);
    length = pool.value("length", length);
    top_n = pool.value("top_n", top_n);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model_specific.prompt_pool", e.what());
  }
  if (top_n == 0 || top_n > size) {
    throw ConfigError("model_specific.prompt_pool", "top_n must be in [1, size]");
  }
  pull_weight_ = option<double>("pull_weight", 0.5);
  layer_ = option<std::size_t>("prompt_layer", 0);
  check_layers({layer_}, backbone_.spec().depth, "model_specific.prompt_layer");
  pool_ = PromptPool::create(size, length, backbone_.feature_dim(), top_n, seed_for("prompt-pool"));
}

Tensor L2PLearner::prompted_features(const Tensor& inputs, Tensor* pull_loss) const {
  const PromptSelection sel = l2p_select(frozen_query(backbone_, inputs), pool_);
  const std::vector<PromptInjection> inj = {
      {InjectionMode::kPrepend, {{layer_, gather_prompts(pool_, sel)}}}};
  if (pull_loss != nullptr) *pull_loss = sel.pull_loss;
  return encode(backbone_, inputs, EncodeOptions{inj});
}

Tensor L2PLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return prompted_features(x, nullptr); });
}

Tensor L2PLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void L2PLearner::begin_task(const TaskContext& ctx) {
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  const std::uint64_t seed = seed_for("head", ctx.task);
  head_ = head_.empty() ? LinearHead::create(backbone_.feature_dim(), total, seed) : head_.grown(total, seed);
}

std::vector<Tensor> L2PLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params = pool_.parameters();
  detail::append(params, detail::head_params(head_));
  return params;
}

Tensor L2PLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  Tensor pull;
  const Tensor f = prompted_features(inputs, &pull);
  const Tensor ce = detail::local_cross_entropy(head_(f), labels, known_classes_, total_classes_);
  return ops::add(ce, ops::scale(pull, pull_weight_));
}

std::vector<Component> L2PLearner::components() const {
  return {{"backbone", backbone_.model().parameters(), true},
          {"prompt_pool", pool_.parameters(), false},
          {"head", detail::head_params(head_), false}};
}

std::vector<std::string> L2PLearner::decisions() const {
  return {"pool M=" + std::to_string(pool_.size()) + ", N=" + std::to_string(pool_.top_n) +
              ", prompts prepended at layer " + std::to_string(layer_),
          "pull loss weight " + std::to_string(pull_weight_) + ", gradient stops at the query",
          "cross-entropy restricted to the current task's classes"};
}

void L2PLearner::save(StateDict& state) const {
  state.put("pool.keys", pool_.keys);
  for (std::size_t m = 0; m < pool_.size(); ++m) state.put("pool.prompt." + std::to_string(m), pool_.prompts[m]);
  state.put_all("head.", head_.named_parameters(""));
}

void L2PLearner::load(const StateDict& state) {
  state.load_into("pool.keys", pool_.keys);
  for (std::size_t m = 0; m < pool_.size(); ++m) state.load_into("pool.prompt." + std::to_string(m), pool_.prompts[m]);
  head_ = detail::load_head(state, "head.");
}

// ---------------------------------------------------------------------------
// DualPrompt

DualPromptLearner::DualPromptLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"g_prompt_length", "e_prompt_length", "g_layers", "e_layers", "pull_weight"});
  g_layers_ = option<std::vector<std::size_t>>("g_layers", {0, 1});
  e_layers_ = option<std::vector<std::size_t>>("e_layers", {2});
  g_length_ = option<std::size_t>("g_prompt_length", 4);
  e_length_ = option<std::size_t>("e_prompt_length", 4);
  pull_weight_ = option<double>("pull_weight", 0.5);
  const std::size_t depth = backbone_.spec().depth;
  check_layers(g_layers_, depth, "model_specific.g_layers");
  check_layers(e_layers_, depth, "model_specific.e_layers");
  for (std::size_t l : g_layers_) {
    if (std::find(e_layers_.begin(), e_layers_.end(), l) != e_layers_.end()) {
      throw ConfigurationError("dualprompt: layer " + std::to_string(l) +
                               " is in both the general and the expert layer sets");
    }
  }
  if (g_length_ == 0 || e_length_ == 0) throw ConfigurationError("dualprompt: prompt lengths must be >= 1");
  SplitMix64 rng(seed_for("g-prompts"));
  for (std::size_t i = 0; i < g_layers_.size(); ++i) {
    g_prompts_.push_back(Tensor::randn({g_length_, backbone_.feature_dim()}, rng, 0.02, true));
  }
}

std::vector<std::size_t> DualPromptLearner::select_tasks(const Tensor& queries) const {
  if (e_keys_.empty()) throw StateError("dualprompt: no tasks learned yet");
  const Tensor keys = ops::stack(e_keys_);
  const std::vector<int> best = argmax_rows(ops::cosine_matrix(queries.detach(), keys.detach()));
  return {best.begin(), best.end()};
}

Tensor DualPromptLearner::forward(const Tensor& inputs, std::optional<std::size_t> task_hint) const {
  if (e_keys_.empty()) throw StateError("dualprompt: no tasks learned yet");
  PromptInjection inj{InjectionMode::kPrefixKV, {}};
  for (std::size_t i = 0; i < g_layers_.size(); ++i) inj.layers.push_back({g_layers_[i], g_prompts_[i]});
  if (task_hint) {
    for (std::size_t j = 0; j < e_layers_.size(); ++j) {
      inj.layers.push_back({e_layers_[j], e_prompts_.at(*task_hint)[j]});
    }
  } else {
    const auto tasks = select_tasks(frozen_query(backbone_, inputs));
    for (std::size_t j = 0; j < e_layers_.size(); ++j) {
      std::vector<Tensor> per_sample;
      for (std::size_t t : tasks) per_sample.push_back(e_prompts_[t][j]);
      inj.layers.push_back({e_layers_[j], ops::stack(per_sample)});
    }
  }
  const std::vector<PromptInjection> injections = {inj};
  return encode(backbone_, inputs, EncodeOptions{injections});
}

Tensor DualPromptLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return forward(x, std::nullopt); });
}

Tensor DualPromptLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void DualPromptLearner::begin_task(const TaskContext& ctx) {
  for (auto& k : e_keys_) k.set_requires_grad(false);
  for (auto& ps : e_prompts_) detail::set_trainable(ps, false);
  const std::size_t d = backbone_.feature_dim();
  SplitMix64 rng(seed_for("e-prompt", ctx.task));
  e_keys_.push_back(Tensor::randn({d}, rng, 0.02, true));
  std::vector<Tensor> prompts;
  for (std::size_t j = 0; j < e_layers_.size(); ++j) prompts.push_back(Tensor::randn({e_length_, d}, rng, 0.02, true));
  e_prompts_.push_back(std::move(prompts));
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  const std::uint64_t seed = seed_for("head", ctx.task);
  head_ = head_.empty() ? LinearHead::create(d, total, seed) : head_.grown(total, seed);
}

std::vector<Tensor> DualPromptLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params = g_prompts_;
  params.push_back(e_keys_.back());
  detail::append(params, e_prompts_.back());
  detail::append(params, detail::head_params(head_));
  return params;
}

Tensor DualPromptLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  const std::size_t task = e_keys_.size() - 1;
  const Tensor f = forward(inputs, task);
  const Tensor ce = detail::local_cross_entropy(head_(f), labels, known_classes_, total_classes_);
  const std::size_t d = backbone_.feature_dim();
  const Tensor cos = ops::cosine_matrix(frozen_query(backbone_, inputs), ops::reshape(e_keys_[task], {1, d}));
  const Tensor pull = ops::add_scalar(ops::scale(ops::mean(cos), -1.0), 1.0);
  return ops::add(ce, ops::scale(pull, pull_weight_));
}

std::vector<Component> DualPromptLearner::components() const {
  std::vector<Component> out = {{"backbone", backbone_.model().parameters(), true},
                                {"g_prompts", g_prompts_, false}};
  for (std::size_t t = 0; t < e_keys_.size(); ++t) {
    std::vector<Tensor> ts = {e_keys_[t]};
    detail::append(ts, e_prompts_[t]);
    out.push_back({"expert." + std::to_string(t), ts, t + 1 < e_keys_.size()});
  }
  out.push_back({"head", detail::head_params(head_), false});
  return out;
}

std::vector<std::string> DualPromptLearner::decisions() const {
  auto list = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t l : v) s += (s.empty() ? "" : ",") + std::to_string(l);
    return "{" + s + "}";
  };
  return {"general prompts at layers " + list(g_layers_) + ", expert prompts at " + list(e_layers_) +
              ", both as key/value prefixes",
          "expert prompt by task identity in training, by key match at inference",
          "cross-entropy restricted to the current task's classes"};
}

void DualPromptLearner::save(StateDict& state) const {
  state.meta()["experts"] = e_keys_.size();
  for (std::size_t i = 0; i < g_prompts_.size(); ++i) state.put("g." + std::to_string(i), g_prompts_[i]);
  for (std::size_t t = 0; t < e_keys_.size(); ++t) {
    state.put("e." + std::to_string(t) + ".key", e_keys_[t]);
    for (std::size_t j = 0; j < e_prompts_[t].size(); ++j) {
      state.put("e." + std::to_string(t) + ".prompt." + std::to_string(j), e_prompts_[t][j]);
    }
  }
  state.put_all("head.", head_.named_parameters(""));
}

void DualPromptLearner::load(const StateDict& state) {
  for (std::size_t i = 0; i < g_prompts_.size(); ++i) state.load_into("g." + std::to_string(i), g_prompts_[i]);
  const auto n = state.meta().at("experts").get<std::size_t>();
  e_keys_.clear();
  e_prompts_.clear();
  for (std::size_t t = 0; t < n; ++t) {
    e_keys_.push_back(state.get("e." + std::to_string(t) + ".key").detach().set_requires_grad(t + 1 == n));
    std::vector<Tensor> ps;
    for (std::size_t j = 0; j < e_layers_.size(); ++j) {
      ps.push_back(state.get("e." + std::to_string(t) + ".prompt." + std::to_string(j))
                       .detach()
                       .set_requires_grad(t + 1 == n));
    }
    e_prompts_.push_back(std::move(ps));
  }
  head_ = detail::load_head(state, "head.");
}

// ---------------------------------------------------------------------------
// CODA-Prompt

CodaPromptLearner::CodaPromptLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"prompt_param", "coda_layers"});
  pool_size_ = 12;
  length_ = 4;
  ortho_weight_ = 0.1;
  const nlohmann::json pp = option<nlohmann::json>("prompt_param", nlohmann::json::object());
  try {
    if (pp.is_array()) {
      if (pp.size() > 0) pool_size_ = pp.at(0).get<std::size_t>();
      if (pp.size() > 1) length_ = pp.at(1).get<std::size_t>();
      if (pp.size() > 2) ortho_weight_ = pp.at(2).get<double>();
    } else {
      pool_size_ = pp.value("pool_size", pool_size_);
      length_ = pp.value("prompt_length", length_);
      ortho_weight_ = pp.value("ortho_weight", ortho_weight_);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model_specific.prompt_param", e.what());
  }
  if (pool_size_ == 0 || length_ == 0) {
    throw ConfigError("model_specific.prompt_param", "pool size and prompt length must be >= 1");
  }
  layers_ = option<std::vector<std::size_t>>("coda_layers", {0, 1});
  check_layers(layers_, backbone_.spec().depth, "model_specific.coda_layers");
}

ComposedPrompt CodaPromptLearner::compose(const Tensor& queries) const {
  if (groups_.empty()) throw StateError("coda-prompt: no components allocated yet");
  std::vector<Tensor> k, a, p;
  for (const auto& g : groups_) {
    k.push_back(g.keys);
    a.push_back(g.attention);
    p.push_back(g.prompts);
  }
  if (groups_.size() == 1) return compose_prompt(queries, k[0], a[0], p[0]);
  return compose_prompt(queries, ops::concat(k, 0), ops::concat(a, 0), ops::concat(p, 0));
}

Tensor CodaPromptLearner::ortho_penalty() const {
  const Group& g = groups_.back();
  const Tensor sum = ops::add(ops::add(orthogonality(g.keys), orthogonality(g.attention)),
                              orthogonality(g.prompts));
  return ops::scale(sum, ortho_weight_);
}

Tensor CodaPromptLearner::prompted_features(const Tensor& inputs) const {
  const ComposedPrompt cp = compose(frozen_query(backbone_, inputs));
  PromptInjection inj{InjectionMode::kPrefixKV, {}};
  for (std::size_t l : layers_) inj.layers.push_back({l, cp.prompt});
  const std::vector<PromptInjection> injections = {inj};
  return encode(backbone_, inputs, EncodeOptions{injections});
}

Tensor CodaPromptLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return prompted_features(x); });
}

Tensor CodaPromptLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void CodaPromptLearner::begin_task(const TaskContext& ctx) {
  const std::size_t per_task = pool_size_ / ctx.num_tasks;
  if (per_task == 0) {
    throw ConfigError("model_specific.prompt_param", "pool size " + std::to_string(pool_size_) +
                                                         " is smaller than the " + std::to_string(ctx.num_tasks) +
                                                         " tasks of the stream");
  }
  for (auto& g : groups_) detail::set_trainable({g.keys, g.attention, g.prompts}, false);
  const std::size_t d = backbone_.feature_dim();
  SplitMix64 rng(seed_for("coda-components", ctx.task));
  Group g;
  g.keys = Tensor::randn({per_task, d}, rng, 1.0 / std::sqrt(double(d)), true);
  g.attention = Tensor::randn({per_task, d}, rng, 1.0 / std::sqrt(double(d)), true);
  g.prompts = Tensor::randn({per_task, length_, d}, rng, 0.02, true);
  groups_.push_back(g);
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  const std::uint64_t seed = seed_for("head", ctx.task);
  head_ = head_.empty() ? LinearHead::create(d, total, seed) : head_.grown(total, seed);
}

std::vector<Tensor> CodaPromptLearner::phase_params(std::size_t) const {
  const Group& g = groups_.back();
  std::vector<Tensor> params = {g.keys, g.attention, g.prompts};
  detail::append(params, detail::head_params(head_));
  return params;
}

Tensor CodaPromptLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  const Tensor f = prompted_features(inputs);
  const Tensor ce = detail::local_cross_entropy(head_(f), labels, known_classes_, total_classes_);
  return ops::add(ce, ortho_penalty());
}

std::vector<Component> CodaPromptLearner::components() const {
  std::vector<Component> out = {{"backbone", backbone_.model().parameters(), true}};
  for (std::size_t t = 0; t < groups_.size(); ++t) {
    out.push_back({"components." + std::to_string(t),
                   {groups_[t].keys, groups_[t].attention, groups_[t].prompts},
                   t + 1 < groups_.size()});
  }
  out.push_back({"head", detail::head_params(head_), false});
  return out;
}

std::vector<std::string> CodaPromptLearner::decisions() const {
  return {"components per task = pool size / task count; earlier components frozen",
          "orthogonality penalty over keys, attention vectors and flattened prompts of the current "
          "task's components, weight " + std::to_string(ortho_weight_),
          "composed prompt used as key/value prefix",
          "cross-entropy restricted to the current task's classes"};
}

void CodaPromptLearner::save(StateDict& state) const {
  state.meta()["groups"] = groups_.size();
  for (std::size_t t = 0; t < groups_.size(); ++t) {
    const std::string p = "components." + std::to_string(t) + ".";
    state.put(p + "keys", groups_[t].keys);
    state.put(p + "attention", groups_[t].attention);
    state.put(p + "prompts", groups_[t].prompts);
  }
  state.put_all("head.", head_.named_parameters(""));
}

void CodaPromptLearner::load(const StateDict& state) {
  const auto n = state.meta().at("groups").get<std::size_t>();
  groups_.clear();
  for (std::size_t t = 0; t < n; ++t) {
    const std::string p = "components." + std::to_string(t) + ".";
    const bool live = t + 1 == n;
    groups_.push_back({state.get(p + "keys").detach().set_requires_grad(live),
                       state.get(p + "attention").detach().set_requires_grad(live),
                       state.get(p + "prompts").detach().set_requires_grad(live)});
  }
  head_ = detail::load_head(state, "head.");
}

}  // namespace cilforge
