#include "cilforge/backbone.hpp"

#include <cmath>

#include "cilforge/datastream.hpp"
#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"
#include "cilforge/optim.hpp"
#include "cilforge/rng.hpp"

namespace cilforge {

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "frozen_random") return BackboneKind::kFrozenRandom;
  if (name == "frozen_pretrained_toy") return BackboneKind::kFrozenPretrainedToy;
  if (name == "tiny_transformer") return BackboneKind::kTinyTransformer;
  throw SpecError("unknown backbone_type '" + name +
                  "' (expected frozen_random, frozen_pretrained_toy or tiny_transformer)");
}

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kFrozenRandom: return "frozen_random";
    case BackboneKind::kFrozenPretrainedToy: return "frozen_pretrained_toy";
    case BackboneKind::kTinyTransformer: return "tiny_transformer";
  }
  return "?";
}

void BackboneSpec::validate() const {
  if (embed_dim == 0 || depth == 0 || heads == 0 || token_count == 0 || input_dim == 0 ||
      mlp_ratio == 0) {
    throw SpecError("backbone dimensions must be positive");
  }
  if (embed_dim % heads != 0) {
    throw SpecError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                    std::to_string(heads));
  }
  if (input_dim % token_count != 0) {
    throw SpecError("input_dim " + std::to_string(input_dim) + " is not divisible by token_count " +
                    std::to_string(token_count));
  }
}

Tensor Linear::operator()(const Tensor& x) const { return ops::add(ops::matmul(x, weight), bias); }

Tensor LayerNormParams::operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

namespace {

Linear make_linear(std::size_t in, std::size_t out, SplitMix64& rng, double gain = 1.0) {
  return Linear{Tensor::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))),
                Tensor::zeros({out})};
}

LayerNormParams make_norm(std::size_t d) {
  return LayerNormParams{Tensor::full({d}, 1.0), Tensor::zeros({d})};
}

void append(NamedTensors& out, const std::string& name, const Linear& l) {
  out.emplace_back(name + ".weight", l.weight);
  out.emplace_back(name + ".bias", l.bias);
}

void append(NamedTensors& out, const std::string& name, const LayerNormParams& n) {
  out.emplace_back(name + ".gamma", n.gamma);
  out.emplace_back(name + ".beta", n.beta);
}

Linear copy_linear(const Linear& l, bool trainable) {
  return Linear{l.weight.detach().set_requires_grad(trainable),
                l.bias.detach().set_requires_grad(trainable)};
}

LayerNormParams copy_norm(const LayerNormParams& n, bool trainable) {
  return LayerNormParams{n.gamma.detach().set_requires_grad(trainable),
                         n.beta.detach().set_requires_grad(trainable)};
}

Tensor as_batch(const Tensor& prompts, std::size_t batch, std::size_t d) {
  if (prompts.rank() == 2) {
    if (prompts.dim(1) != d) throw DimensionError("prompt width " + shape_str(prompts.shape()));
    const std::size_t p = prompts.dim(0);
    return ops::expand(ops::reshape(prompts, {1, p, d}), {batch, p, d});
  }
  if (prompts.rank() != 3 || prompts.dim(0) != batch || prompts.dim(2) != d) {
    throw DimensionError("prompts " + shape_str(prompts.shape()) + " do not match batch " +
                         std::to_string(batch) + " and width " + std::to_string(d));
  }
  return prompts;
}

}  // namespace

TinyTransformer TinyTransformer::initialize(const BackboneSpec& spec) {
  spec.validate();
  SplitMix64 rng(derive_seed(spec.seed, tag("backbone-init")));
  const std::size_t d = spec.embed_dim;
  TinyTransformer m;
  m.spec = spec;
  m.embed.patch = make_linear(spec.patch_dim(), d, rng);
  m.embed.cls = Tensor::randn({1, d}, rng, 0.1);
  m.embed.pos = Tensor::randn({spec.token_count, d}, rng, 0.1);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    TransformerBlock b;
    b.ln1 = make_norm(d);
    b.query = make_linear(d, d, rng);
    b.key = make_linear(d, d, rng);
    b.value = make_linear(d, d, rng);
    b.out = make_linear(d, d, rng, 0.5);
    b.ln2 = make_norm(d);
    b.fc1 = make_linear(d, d * spec.mlp_ratio, rng);
    b.fc2 = make_linear(d * spec.mlp_ratio, d, rng, 0.5);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = make_norm(d);
  return m;
}

NamedTensors block_parameters(const TransformerBlock& b, const std::string& prefix) {
  NamedTensors out;
  append(out, prefix + "ln1", b.ln1);
  append(out, prefix + "query", b.query);
  append(out, prefix + "key", b.key);
  append(out, prefix + "value", b.value);
  append(out, prefix + "out", b.out);
  append(out, prefix + "ln2", b.ln2);
  append(out, prefix + "fc1", b.fc1);
  append(out, prefix + "fc2", b.fc2);
  return out;
}

NamedTensors TinyTransformer::named_parameters() const {
  NamedTensors out;
  append(out, "embed.patch", embed.patch);
  out.emplace_back("embed.cls", embed.cls);
  out.emplace_back("embed.pos", embed.pos);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto b = block_parameters(blocks[l], "blocks." + std::to_string(l) + ".");
    out.insert(out.end(), b.begin(), b.end());
  }
  append(out, "final_norm", final_norm);
  return out;
}

std::vector<Tensor> TinyTransformer::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t TinyTransformer::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

TransformerBlock TransformerBlock::copy(bool trainable) const {
  TransformerBlock c;
  c.ln1 = copy_norm(ln1, trainable);
  c.query = copy_linear(query, trainable);
  c.key = copy_linear(key, trainable);
  c.value = copy_linear(value, trainable);
  c.out = copy_linear(out, trainable);
  c.ln2 = copy_norm(ln2, trainable);
  c.fc1 = copy_linear(fc1, trainable);
  c.fc2 = copy_linear(fc2, trainable);
  return c;
}

TinyTransformer TinyTransformer::copy(bool trainable) const {
  TinyTransformer m;
  m.spec = spec;
  m.embed.patch = copy_linear(embed.patch, trainable);
  m.embed.cls = embed.cls.detach().set_requires_grad(trainable);
  m.embed.pos = embed.pos.detach().set_requires_grad(trainable);
  for (const auto& b : blocks) m.blocks.push_back(b.copy(trainable));
  m.final_norm = copy_norm(final_norm, trainable);
  return m;
}

void TinyTransformer::set_trainable(bool trainable) {
  for (Tensor t : parameters()) t.set_requires_grad(trainable);
}

// ---------------------------------------------------------------------------

PetVariant parse_pet_variant(const std::string& name) {
  if (name == "adapter") return PetVariant::kAdapter;
  if (name == "ssf") return PetVariant::kSsf;
  if (name == "vpt_shallow") return PetVariant::kVptShallow;
  if (name == "vpt_deep") return PetVariant::kVptDeep;
  if (name == "full" || name == "finetune") return PetVariant::kFull;
  throw ConfigurationError("unknown tuning variant '" + name +
                           "' (expected adapter, ssf, vpt_shallow, vpt_deep or full)");
}

std::string to_string(PetVariant v) {
  switch (v) {
    case PetVariant::kAdapter: return "adapter";
    case PetVariant::kSsf: return "ssf";
    case PetVariant::kVptShallow: return "vpt_shallow";
    case PetVariant::kVptDeep: return "vpt_deep";
    case PetVariant::kFull: return "full";
  }
  return "?";
}

PETModule PETModule::create(const PetConfig& config, const TinyTransformer& base, std::uint64_t seed) {
  PETModule pet;
  pet.config = config;
  const std::size_t d = base.spec.embed_dim;
  const std::size_t depth = base.spec.depth;
  std::vector<std::size_t> sites = config.sites;
  if (sites.empty()) {
    for (std::size_t l = 0; l < depth; ++l) sites.push_back(l);
  }
  for (std::size_t s : sites) {
    if (s >= depth) {
      throw ConfigurationError("tuning site " + std::to_string(s) + " >= depth " + std::to_string(depth));
    }
  }
  SplitMix64 rng(derive_seed(seed, tag("pet")));
  switch (config.variant) {
    case PetVariant::kAdapter:
      if (config.adapter_bottleneck == 0) throw ConfigurationError("adapter bottleneck must be >= 1");
      for (std::size_t s : sites) {
        Adapter a;
        a.down = make_linear(d, config.adapter_bottleneck, rng);
        a.down.weight.set_requires_grad(true);
        a.down.bias.set_requires_grad(true);
        a.up = Linear{Tensor::zeros({config.adapter_bottleneck, d}, true), Tensor::zeros({d}, true)};
        pet.adapters.emplace(s, std::move(a));
      }
      break;
    case PetVariant::kSsf:
      for (std::size_t s : sites) {
        pet.ssf.emplace(s, ScaleShift{Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)});
      }
      break;
    case PetVariant::kVptShallow:
    case PetVariant::kVptDeep: {
      if (config.vpt_tokens == 0) throw ConfigurationError("vpt_tokens must be >= 1");
      const std::size_t layers = config.variant == PetVariant::kVptDeep ? depth : 1;
      for (std::size_t l = 0; l < layers; ++l) {
        pet.vpt.push_back(Tensor::randn({config.vpt_tokens, d}, rng, 0.1, true));
      }
      break;
    }
    case PetVariant::kFull:
      pet.full = base.copy(true);
      break;
  }
  return pet;
}

NamedTensors PETModule::named_parameters() const {
  NamedTensors out;
  for (const auto& [s, a] : adapters) {
    append(out, "adapter." + std::to_string(s) + ".down", a.down);
    append(out, "adapter." + std::to_string(s) + ".up", a.up);
  }
  for (const auto& [s, f] : ssf) {
    out.emplace_back("ssf." + std::to_string(s) + ".scale", f.scale);
    out.emplace_back("ssf." + std::to_string(s) + ".shift", f.shift);
  }
  for (std::size_t l = 0; l < vpt.size(); ++l) out.emplace_back("vpt." + std::to_string(l), vpt[l]);
  if (full) {
    for (auto& [name, t] : full->named_parameters()) out.emplace_back("full." + name, t);
  }
  return out;
}

// ---------------------------------------------------------------------------

FrozenBackbone::FrozenBackbone(TinyTransformer model)
    : model_(std::make_shared<const TinyTransformer>(model.copy(false))) {}

Tensor embed_tokens(const TinyTransformer& model, const Tensor& inputs) {
  const BackboneSpec& s = model.spec;
  if (inputs.rank() != 2 || inputs.dim(1) != s.input_dim) {
    throw DimensionError("backbone expects [B x " + std::to_string(s.input_dim) + "] inputs, got " +
                         shape_str(inputs.shape()));
  }
  const std::size_t batch = inputs.dim(0);
  const std::size_t d = s.embed_dim;
  Tensor patches = ops::reshape(inputs, {batch, s.token_count, s.patch_dim()});
  Tensor tokens = ops::add(model.embed.patch(patches), model.embed.pos);
  Tensor cls = ops::expand(ops::reshape(model.embed.cls, {1, 1, d}), {batch, 1, d});
  return ops::concat({cls, tokens}, 1);
}

Tensor run_blocks(std::span<const TransformerBlock> blocks, std::size_t layer_offset,
                  std::size_t heads, const Tensor& tokens, const EncodeOptions& options,
                  std::size_t& prompt_tokens) {
  Tensor x = tokens;
  const std::size_t batch = x.dim(0);
  const std::size_t d = x.dim(2);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const PETModule* pet = options.pet;

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::size_t layer = layer_offset + i;
    const TransformerBlock& b = blocks[i];

    std::vector<Tensor> prepend, prefix;
    for (const PromptInjection& inj : options.injections) {
      for (const LayerPrompt& lp : inj.layers) {
        if (lp.layer != layer) continue;
        (inj.mode == InjectionMode::kPrepend ? prepend : prefix).push_back(as_batch(lp.prompts, batch, d));
      }
    }
    if (!prepend.empty()) {
      const std::size_t seq = x.dim(1);
      Tensor p = prepend.size() == 1 ? prepend.front() : ops::concat(prepend, 1);
      std::vector<Tensor> parts = {ops::slice(x, 1, 0, 1), p};
      const std::size_t rest = seq - 1 - prompt_tokens;
      // Prompts from an earlier layer are replaced, not accumulated.
      if (rest > 0) parts.push_back(ops::slice(x, 1, 1 + prompt_tokens, rest));
      x = ops::concat(parts, 1);
      prompt_tokens = p.dim(1);
    }

    Tensor h = b.ln1(x);
    Tensor q = b.query(h);
    Tensor k = b.key(h);
    Tensor v = b.value(h);
    if (!prefix.empty()) {
      Tensor p = prefix.size() == 1 ? prefix.front() : ops::concat(prefix, 1);
      Tensor hp = b.ln1(p);
      k = ops::concat({b.key(hp), k}, 1);
      v = ops::concat({b.value(hp), v}, 1);
    }
    if (options.trace) {
      options.trace->query_tokens.push_back(q.dim(1));
      options.trace->key_tokens.push_back(k.dim(1));
    }
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor qh = heads == 1 ? q : ops::slice(q, 2, hd * dh, dh);
      Tensor kh = heads == 1 ? k : ops::slice(k, 2, hd * dh, dh);
      Tensor vh = heads == 1 ? v : ops::slice(v, 2, hd * dh, dh);
      Tensor att = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt));
      head_out.push_back(ops::matmul(att, vh));
    }
    Tensor attn = heads == 1 ? head_out.front() : ops::concat(head_out, 2);
    x = ops::add(x, b.out(attn));
    x = ops::add(x, b.fc2(ops::gelu(b.fc1(b.ln2(x)))));

    if (pet) {
      if (auto it = pet->adapters.find(layer); it != pet->adapters.end()) {
        x = ops::add(x, it->second.up(ops::relu(it->second.down(x))));
      }
      if (auto it = pet->ssf.find(layer); it != pet->ssf.end()) {
        x = ops::add(ops::mul(x, it->second.scale), it->second.shift);
      }
    }
  }
  (void)batch;
  return x;
}

Tensor class_feature(const LayerNormParams& norm, const Tensor& tokens) {
  const std::size_t batch = tokens.dim(0);
  const std::size_t d = tokens.dim(2);
  return norm(ops::reshape(ops::slice(tokens, 1, 0, 1), {batch, d}));
}

Tensor encode(const TinyTransformer& model, const Tensor& inputs, const EncodeOptions& options) {
  const PETModule* pet = options.pet;
  if (pet && pet->full) {
    EncodeOptions inner = options;
    inner.pet = nullptr;
    return encode(*pet->full, inputs, inner);
  }
  const std::size_t depth = model.spec.depth;
  std::vector<PromptInjection> injections(options.injections.begin(), options.injections.end());
  if (pet && !pet->vpt.empty()) {
    PromptInjection vpt{InjectionMode::kPrepend, {}};
    for (std::size_t l = 0; l < pet->vpt.size(); ++l) vpt.layers.push_back({l, pet->vpt[l]});
    injections.push_back(std::move(vpt));
  }
  for (const PromptInjection& inj : injections) {
    for (const LayerPrompt& lp : inj.layers) {
      if (lp.layer >= depth) {
        throw ConfigurationError("prompt injection at layer " + std::to_string(lp.layer) +
                                 " but backbone depth is " + std::to_string(depth));
      }
    }
  }
  EncodeOptions run = options;
  run.injections = injections;
  std::size_t prompt_tokens = 0;
  Tensor x = embed_tokens(model, inputs);
  x = run_blocks(model.blocks, 0, model.spec.heads, x, run, prompt_tokens);
  return class_feature(model.final_norm, x);
}

Tensor encode(const FrozenBackbone& backbone, const Tensor& inputs, const EncodeOptions& options) {
  return encode(backbone.model(), inputs, options);
}

std::vector<Tensor> trainable_params(const PETModule& pet, const FrozenBackbone&) {
  std::vector<Tensor> out;
  for (auto& [name, t] : pet.named_parameters()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------

SplitDataset auxiliary_task(const BackboneSpec& spec) {
  BlobSpec aux;
  aux.num_classes = spec.pretrain.classes;
  aux.train_per_class = spec.pretrain.train_per_class;
  aux.test_per_class = spec.pretrain.test_per_class;
  aux.dim = spec.input_dim;
  aux.spread = spec.pretrain.spread;
  aux.center_scale = spec.pretrain.center_scale;
  aux.seed = derive_seed(spec.seed, tag("auxiliary-task"));
  return synth_blobs(aux);
}

FrozenBackbone build_backbone(const BackboneSpec& spec) {
  TinyTransformer model = TinyTransformer::initialize(spec);
  if (spec.kind != BackboneKind::kFrozenPretrainedToy) return FrozenBackbone(std::move(model));

  const SplitDataset aux = auxiliary_task(spec);
  model.set_trainable(true);
  SplitMix64 rng(derive_seed(spec.seed, tag("auxiliary-head")));
  Linear head = make_linear(spec.embed_dim, static_cast<std::size_t>(spec.pretrain.classes), rng);
  head.weight.set_requires_grad(true);
  head.bias.set_requires_grad(true);
  std::vector<Tensor> params = model.parameters();
  params.push_back(head.weight);
  params.push_back(head.bias);
  OptimConfig cfg;
  cfg.learning_rate = spec.pretrain.learning_rate;
  Optimizer opt(cfg, params);
  const std::uint64_t batch_seed = derive_seed(spec.seed, tag("auxiliary-batches"));
  for (int epoch = 0; epoch < spec.pretrain.epochs; ++epoch) {
    for (const auto& idx : batch_order(aux.train.size(), spec.pretrain.batch_size, batch_seed, 0, epoch)) {
      opt.zero_grad();
      Tape tape;
      Tensor loss;
      {
        Tape::Scope scope(tape);
        const auto labels = aux.train.batch_labels(idx);
        loss = ops::cross_entropy(head(encode(model, aux.train.batch(idx))), labels);
      }
      tape.backward(loss);
      opt.step();
    }
  }
  return FrozenBackbone(std::move(model));
}

}  // namespace cilforge
