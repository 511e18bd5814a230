#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cilforge/tensor.hpp"

namespace cilforge {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Named tensors plus free-form metadata; the unit that learners and backbones
// serialize into checkpoints. Tensor payloads are stored as raw little-endian
// doubles so a save/load cycle is bit-exact.
class StateDict {
 public:
  void put(const std::string& name, const Tensor& t);
  void put_all(const std::string& prefix, const NamedTensors& tensors);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  // Copies the stored values into `dst`, which must have the same shape.
  void load_into(const std::string& name, Tensor& dst) const;
  void load_all(const std::string& prefix, const NamedTensors& tensors) const;

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  nlohmann::json to_json() const;
  static StateDict from_json(const nlohmann::json& j);

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
  nlohmann::json meta_ = nlohmann::json::object();
};

// FNV-1a over shapes and raw value bytes; used to assert that frozen
// components are bit-identical across tasks.
std::uint64_t hash_tensors(const std::vector<Tensor>& tensors);

}  // namespace cilforge
