#include "fixture.hpp"

namespace cilforge::testing {

using nlohmann::json;

json default_model_specific(const std::string& model) {
  if (model == "dualprompt") return {{"g_layers", {0}}, {"e_layers", {1}}, {"g_prompt_length", 1}, {"e_prompt_length", 1}};
  if (model == "l2p") return {{"prompt_pool", {{"size", 6}, {"length", 1}, {"top_n", 2}}}};
  if (model == "coda-prompt") return {{"prompt_param", {6, 1, 0.1}}};
  if (model == "memo") return {{"memo_split", 1}};
  return json::object();
}

json small_config(const std::string& model, const json& model_specific) {
  json ms = default_model_specific(model);
  ms.update(model_specific);
  json c = {{"model_name", model},
            {"init_cls", 4},
            {"increment", 4},
            {"backbone_type", "frozen_pretrained_toy"},
            {"backbone_args",
             {{"embed_dim", 16},
              {"depth", 2},
              {"heads", 2},
              {"token_count", 4},
              {"mlp_ratio", 2},
              {"pretrain", {{"classes", 6}, {"train_per_class", 20}, {"epochs", 3}}}}},
            {"dataset",
             {{"name", "blobs"},
              {"num_classes", 12},
              {"train_per_class", 15},
              {"test_per_class", 5},
              {"dim", 16},
              {"spread", 0.1},
              {"seed", 3}}},
            {"optimization", {{"optimizer", "sgd"}, {"batch_size", 16}, {"epochs", 2}, {"lr", 0.01}}},
            {"checkpoint", false}};
  if (learner_uses_exemplars(model)) c["memory_size"] = 48;
  if (!ms.empty()) c["model_specific"] = ms;
  return c;
}

json tiny_config(const std::string& model, const json& model_specific) {
  json ms = default_model_specific(model);
  if (model == "coda-prompt") ms = {{"prompt_param", {4, 1, 0.1}}};
  ms.update(model_specific);
  json c = {{"model_name", model},
            {"init_cls", 2},
            {"increment", 2},
            {"backbone_type", "frozen_random"},
            {"backbone_args", {{"embed_dim", 8}, {"depth", 2}, {"heads", 2}, {"token_count", 2}, {"mlp_ratio", 2}}},
            {"dataset",
             {{"name", "blobs"},
              {"num_classes", 4},
              {"train_per_class", 6},
              {"test_per_class", 2},
              {"dim", 8},
              {"spread", 0.3},
              {"seed", 5}}},
            {"optimization", {{"optimizer", "sgd"}, {"batch_size", 4}, {"epochs", 1}, {"lr", 0.01}}},
            {"checkpoint", false}};
  if (learner_uses_exemplars(model)) c["memory_size"] = 8;
  if (!ms.empty()) c["model_specific"] = ms;
  return c;
}

std::vector<std::pair<std::string, std::uint64_t>> component_hashes(const Learner& learner) {
  std::vector<std::pair<std::string, std::uint64_t>> out;
  for (const auto& c : learner.components()) out.emplace_back(c.name, hash_tensors(c.tensors));
  return out;
}

}  // namespace cilforge::testing
