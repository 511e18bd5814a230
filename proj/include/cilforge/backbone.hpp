#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cilforge/datastream.hpp"
#include "cilforge/state.hpp"
#include "cilforge/tensor.hpp"

namespace cilforge {

enum class BackboneKind {
  kFrozenRandom,         // seeded random weights
  kFrozenPretrainedToy,  // pre-fit on an auxiliary task, then frozen
  kTinyTransformer,      // seeded random weights; the from-scratch setting
};

BackboneKind parse_backbone_kind(const std::string& name);
std::string to_string(BackboneKind kind);

// Auxiliary task used to pre-fit `frozen_pretrained_toy`. Its blobs come from
// a stream derived from the backbone seed, so its classes share nothing with
// any benchmark stream.
struct PretrainSpec {
  int classes = 12;
  int train_per_class = 40;
  int test_per_class = 20;
  double spread = 0.35;
  double center_scale = 1.0;
  int epochs = 6;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
};

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kFrozenPretrainedToy;
  std::size_t input_dim = 64;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t token_count = 16;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 1993;
  PretrainSpec pretrain;

  std::size_t patch_dim() const { return input_dim / token_count; }
  // Throws SpecError on an inconsistent spec.
  void validate() const;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const;
};

struct TransformerBlock {
  LayerNormParams ln1;
  Linear query, key, value, out;
  LayerNormParams ln2;
  Linear fc1, fc2;

  TransformerBlock copy(bool trainable) const;
};

struct TokenEmbedder {
  Linear patch;   // [patch_dim x d]
  Tensor cls;     // [1 x d]
  Tensor pos;     // [token_count x d]
};

// Pre-norm transformer over patchified flat inputs; the feature is the class
// token after the final norm.
struct TinyTransformer {
  BackboneSpec spec;
  TokenEmbedder embed;
  std::vector<TransformerBlock> blocks;
  LayerNormParams final_norm;

  static TinyTransformer initialize(const BackboneSpec& spec);

  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  // Deep copy with every parameter's requires_grad set to `trainable`.
  TinyTransformer copy(bool trainable) const;
  void set_trainable(bool trainable);
};

NamedTensors block_parameters(const TransformerBlock& block, const std::string& prefix);

// ---------------------------------------------------------------------------
// Prompt injection

enum class InjectionMode {
  kPrepend,   // prompt tokens are inserted after the class token
  kPrefixKV,  // prompt tokens extend keys/values only
};

struct LayerPrompt {
  std::size_t layer = 0;
  // [p x d] shared by the batch, or [B x p x d] per sample.
  Tensor prompts;
};

struct PromptInjection {
  InjectionMode mode = InjectionMode::kPrepend;
  std::vector<LayerPrompt> layers;
};

// ---------------------------------------------------------------------------
// Parameter-efficient tuning

enum class PetVariant { kAdapter, kSsf, kVptShallow, kVptDeep, kFull };

PetVariant parse_pet_variant(const std::string& name);
std::string to_string(PetVariant v);

struct PetConfig {
  PetVariant variant = PetVariant::kAdapter;
  std::size_t adapter_bottleneck = 8;
  // Blocks after which adapters / scale-shift apply; empty means every block.
  std::vector<std::size_t> sites;
  std::size_t vpt_tokens = 4;
};

struct Adapter {
  Linear down;  // [d x r]
  Linear up;    // [r x d], zero at init
};

struct ScaleShift {
  Tensor scale;  // [d], ones at init
  Tensor shift;  // [d], zeros at init
};

struct PETModule {
  PetConfig config;
  std::map<std::size_t, Adapter> adapters;
  std::map<std::size_t, ScaleShift> ssf;
  std::vector<Tensor> vpt;  // one [p x d] per layer (deep) or a single one (shallow)
  std::optional<TinyTransformer> full;

  static PETModule create(const PetConfig& config, const TinyTransformer& base, std::uint64_t seed);
  NamedTensors named_parameters() const;
};

// ---------------------------------------------------------------------------

// Immutable frozen extractor shared by learners.
class FrozenBackbone {
 public:
  explicit FrozenBackbone(TinyTransformer model);
  const TinyTransformer& model() const { return *model_; }
  const BackboneSpec& spec() const { return model_->spec; }
  std::size_t feature_dim() const { return model_->spec.embed_dim; }

 private:
  std::shared_ptr<const TinyTransformer> model_;
};

// Auxiliary blobs used for pre-fitting (train) and probing (test).
SplitDataset auxiliary_task(const BackboneSpec& spec);

// Deterministic from the spec; pre-fits when kind is frozen_pretrained_toy.
FrozenBackbone build_backbone(const BackboneSpec& spec);

// Sequence lengths seen by each block's attention in one forward pass.
struct ForwardTrace {
  std::vector<std::size_t> query_tokens;
  std::vector<std::size_t> key_tokens;
};

struct EncodeOptions {
  std::span<const PromptInjection> injections;
  const PETModule* pet = nullptr;
  ForwardTrace* trace = nullptr;
};

// Patchify + embed: [B x input_dim] -> [B x (1 + token_count) x d].
Tensor embed_tokens(const TinyTransformer& model, const Tensor& inputs);

// Runs blocks [first, first + blocks.size()) of a model over token states.
// `layer_offset` is the global index of blocks[0], used to match injections
// and PET sites. Returns token states plus the number of prepended prompt
// tokens currently in the sequence through `prompt_tokens`.
Tensor run_blocks(std::span<const TransformerBlock> blocks, std::size_t layer_offset,
                  std::size_t heads, const Tensor& tokens, const EncodeOptions& options,
                  std::size_t& prompt_tokens);

// Final norm on the class token: [B x T x d] -> [B x d].
Tensor class_feature(const LayerNormParams& norm, const Tensor& tokens);

// Full forward: [B x input_dim] -> [B x d]. A `full` PET module replaces the
// backbone weights with its own trainable copy.
Tensor encode(const TinyTransformer& model, const Tensor& inputs, const EncodeOptions& options = {});
Tensor encode(const FrozenBackbone& backbone, const Tensor& inputs,
              const EncodeOptions& options = {});

// Parameters that receive updates under the given PET module.
std::vector<Tensor> trainable_params(const PETModule& pet, const FrozenBackbone& backbone);

}  // namespace cilforge
