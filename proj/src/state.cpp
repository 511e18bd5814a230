#include "cilforge/state.hpp"

#include <bit>
#include <cstring>

#include "cilforge/errors.hpp"

namespace cilforge {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume little-endian");

void StateDict::put(const std::string& name, const Tensor& t) { tensors_[name] = t.detach(); }

void StateDict::put_all(const std::string& prefix, const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors) put(prefix + name, t);
}

Tensor StateDict::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("state is missing tensor '" + name + "'");
  return it->second.detach();
}

void StateDict::load_into(const std::string& name, Tensor& dst) const {
  Tensor src = get(name);
  if (src.shape() != dst.shape()) {
    throw FormatError("tensor '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                      shape_str(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

void StateDict::load_all(const std::string& prefix, const NamedTensors& tensors) const {
  for (const auto& [name, t] : tensors) {
    Tensor dst = t;
    load_into(prefix + name, dst);
  }
}

nlohmann::json StateDict::to_json() const {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : tensors_) {
    std::vector<std::uint8_t> bytes(t.numel() * sizeof(double));
    std::memcpy(bytes.data(), t.data().data(), bytes.size());
    tensors[name] = {{"shape", t.shape()}, {"data", nlohmann::json::binary(std::move(bytes))}};
  }
  return {{"meta", meta_}, {"tensors", std::move(tensors)}};
}

StateDict StateDict::from_json(const nlohmann::json& j) {
  StateDict s;
  try {
    s.meta_ = j.at("meta");
    for (const auto& [name, entry] : j.at("tensors").items()) {
      Shape shape = entry.at("shape").get<Shape>();
      const auto& bytes = entry.at("data").get_binary();
      if (bytes.size() != cilforge::numel(shape) * sizeof(double)) {
        throw FormatError("tensor '" + name + "' payload size mismatch");
      }
      std::vector<double> v(cilforge::numel(shape));
      std::memcpy(v.data(), bytes.data(), bytes.size());
      s.tensors_[name] = Tensor(std::move(shape), std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed state: ") + e.what());
  }
  return s;
}

std::uint64_t hash_tensors(const std::vector<Tensor>& tensors) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const Tensor& t : tensors) {
    for (std::size_t d : t.shape()) feed(&d, sizeof d);
    feed(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

}  // namespace cilforge
