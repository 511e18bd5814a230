#include "cilforge/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <type_traits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cilforge/errors.hpp"
#include "cilforge/rng.hpp"

namespace cilforge {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <typename T>
T as(const json& v, const std::string& field) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError(field, "expected a non-negative integer");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(field, "expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(field, "expected a string");
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (!v.is_array()) throw ConfigError(field, "expected an array of integers");
    std::vector<int> out;
    for (const auto& e : v) out.push_back(as<int>(e, field));
    return out;
  }
  return v.get<T>();
}

// Object reader that tracks the key path and rejects unknown keys.
class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
    for (const auto& [key, _] : j.items()) {
      if (!allowed.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  template <typename T>
  T required(const std::string& key) const {
    if (!has(key)) throw ConfigError(field(key), "missing required key");
    return as<T>(j_.at(key), field(key));
  }
  template <typename T>
  T get(const std::string& key, T fallback) const {
    return has(key) ? as<T>(j_.at(key), field(key)) : fallback;
  }
  const json& at(const std::string& key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string path_;
};

template <typename T>
T positive(T v, const std::string& field) {
  if (v <= 0) throw ConfigError(field, "must be positive");
  return v;
}

DatasetConfig parse_dataset(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object() || !j.contains("name")) throw ConfigError("dataset.name", "missing required key");
  DatasetConfig out;
  out.name = lower(as<std::string>(j.at("name"), "dataset.name"));
  if (out.name == "blobs") {
    Section s(j, "dataset",
              {"name", "num_classes", "train_per_class", "test_per_class", "dim", "spread", "center_scale", "seed"});
    BlobSpec& b = out.blobs;
    b.num_classes = positive(s.get("num_classes", b.num_classes), "dataset.num_classes");
    b.train_per_class = positive(s.get("train_per_class", b.train_per_class), "dataset.train_per_class");
    b.test_per_class = positive(s.get("test_per_class", b.test_per_class), "dataset.test_per_class");
    b.dim = positive(s.get<std::size_t>("dim", b.dim), "dataset.dim");
    b.spread = s.get("spread", b.spread);
    b.center_scale = s.get("center_scale", b.center_scale);
    b.seed = s.get<std::uint64_t>("seed", b.seed);
  } else if (out.name == "clds") {
    Section s(j, "dataset", {"name", "train", "test"});
    auto resolve = [&](const std::string& key) {
      std::filesystem::path p = s.required<std::string>(key);
      return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    out.train_path = resolve("train");
    out.test_path = resolve("test");
  } else {
    throw ConfigError("dataset.name", "unknown dataset '" + out.name + "'; expected blobs or clds");
  }
  return out;
}

void parse_backbone(const json& j, BackboneSpec& spec) {
  Section s(j, "backbone_args", {"embed_dim", "depth", "heads", "token_count", "mlp_ratio", "seed", "pretrain"});
  spec.embed_dim = s.get("embed_dim", spec.embed_dim);
  spec.depth = s.get("depth", spec.depth);
  spec.heads = s.get("heads", spec.heads);
  spec.token_count = s.get("token_count", spec.token_count);
  spec.mlp_ratio = s.get("mlp_ratio", spec.mlp_ratio);
  spec.seed = s.get("seed", spec.seed);
  if (s.has("pretrain")) {
    Section p(s.at("pretrain"), "backbone_args.pretrain",
              {"classes", "train_per_class", "test_per_class", "spread", "center_scale", "epochs", "batch_size",
               "lr"});
    PretrainSpec& ps = spec.pretrain;
    ps.classes = p.get("classes", ps.classes);
    ps.train_per_class = p.get("train_per_class", ps.train_per_class);
    ps.test_per_class = p.get("test_per_class", ps.test_per_class);
    ps.spread = p.get("spread", ps.spread);
    ps.center_scale = p.get("center_scale", ps.center_scale);
    ps.epochs = p.get("epochs", ps.epochs);
    ps.batch_size = p.get("batch_size", ps.batch_size);
    ps.learning_rate = p.get("lr", ps.learning_rate);
  }
}

OptimSettings parse_optim(const json& j) {
  Section s(j, "optimization",
            {"optimizer", "batch_size", "epochs", "lr", "lr_decay", "weight_decay", "milestones", "temperature",
             "momentum"});
  OptimSettings o;
  if (s.has("optimizer")) {
    const std::string name = lower(as<std::string>(s.at("optimizer"), "optimization.optimizer"));
    if (name == "sgd") {
      o.optimizer = OptimKind::kSgdMomentum;
    } else if (name == "adam") {
      o.optimizer = OptimKind::kAdam;
    } else {
      throw ConfigError("optimization.optimizer", "unknown optimizer '" + name + "'; expected sgd or adam");
    }
  }
  o.batch_size = positive(s.get("batch_size", o.batch_size), "optimization.batch_size");
  o.epochs = s.get("epochs", o.epochs);
  if (o.epochs < 0) throw ConfigError("optimization.epochs", "must be non-negative");
  o.lr = positive(s.get("lr", o.lr), "optimization.lr");
  o.lr_decay = s.get("lr_decay", o.lr_decay);
  o.weight_decay = s.get("weight_decay", o.weight_decay);
  o.milestones = s.get("milestones", o.milestones);
  o.temperature = positive(s.get("temperature", o.temperature), "optimization.temperature");
  o.momentum = s.get("momentum", o.momentum);
  return o;
}

}  // namespace

std::string RunConfig::hash() const { return fmt::format("{:016x}", tag(source.dump())); }

LearnerConfig RunConfig::learner_config() const {
  LearnerConfig lc;
  lc.model_name = model_name;
  lc.seed = seed;
  lc.optim = optim;
  lc.memory = memory;
  lc.model_specific = model_specific;
  return lc;
}

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  Section s(j, "",
            {"model_name", "init_cls", "increment", "backbone_type", "backbone_args", "seed", "fixed_memory",
             "memory_size", "memory_per_class", "dataset", "optimization", "model_specific", "checkpoint", "note"});
  RunConfig c;
  c.source = j;

  c.model_name = lower(s.required<std::string>("model_name"));
  const auto& names = learner_names();
  if (std::find(names.begin(), names.end(), c.model_name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("model_name", "unknown learner '" + c.model_name + "'; expected one of " + list);
  }
  c.init_cls = positive(s.required<int>("init_cls"), "init_cls");
  c.increment = positive(s.required<int>("increment"), "increment");
  c.seed = s.get<std::uint64_t>("seed", c.seed);

  c.backbone_type = s.required<std::string>("backbone_type");
  try {
    c.backbone.kind = parse_backbone_kind(c.backbone_type);
  } catch (const Error& e) {
    throw ConfigError("backbone_type", e.what());
  }
  if (s.has("backbone_args")) parse_backbone(s.at("backbone_args"), c.backbone);

  c.memory.fixed_memory = s.get("fixed_memory", c.memory.fixed_memory);
  c.memory.memory_size = s.get("memory_size", c.memory.memory_size);
  c.memory.memory_per_class = s.get("memory_per_class", c.memory.memory_per_class);
  c.exemplar_keys_given = s.has("fixed_memory") || s.has("memory_size") || s.has("memory_per_class");
  if (c.memory.memory_size < 0) throw ConfigError("memory_size", "must be non-negative");
  if (c.memory.memory_per_class < 0) throw ConfigError("memory_per_class", "must be non-negative");

  if (!s.has("dataset")) throw ConfigError("dataset", "missing required key");
  c.dataset = parse_dataset(s.at("dataset"), base_dir);
  if (s.has("optimization")) c.optim = parse_optim(s.at("optimization"));
  if (s.has("model_specific")) {
    if (!s.at("model_specific").is_object()) throw ConfigError("model_specific", "expected an object");
    c.model_specific = s.at("model_specific");
  }
  c.checkpoint = s.get("checkpoint", c.checkpoint);

  if (c.exemplar_keys_given && !learner_uses_exemplars(c.model_name)) {
    c.notices.push_back("exemplar parameters are not used by " + c.model_name + "; ignoring them");
    spdlog::info("notice: {}", c.notices.back());
  }
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

SplitDataset load_dataset(const DatasetConfig& config) {
  if (config.name == "blobs") return synth_blobs(config.blobs);
  SplitDataset out;
  out.train = load_table_dataset(config.train_path);
  out.test = load_table_dataset(config.test_path);
  if (out.train.dim != out.test.dim) {
    throw FormatError("train and test CLDS files disagree on dim (" + std::to_string(out.train.dim) + " vs " +
                      std::to_string(out.test.dim) + ")");
  }
  return out;
}

std::string display_name(const RunConfig& config) {
  static const std::map<std::string, std::string> names = {
      {"finetune", "Finetune"}, {"icarl", "iCaRL"},         {"coil", "Coil"},
      {"der", "DER"},           {"foster", "FOSTER"},       {"memo", "MEMO"},
      {"simplecil", "SimpleCIL"}, {"l2p", "L2P"},           {"dualprompt", "DualPrompt"},
      {"coda-prompt", "CODA-Prompt"}, {"adam", "ADAM"}};
  std::string name = names.at(config.model_name);
  if (config.model_name == "adam") {
    std::string variant = "adapter";
    if (config.model_specific.contains("pet_variant") && config.model_specific.at("pet_variant").is_string()) {
      variant = config.model_specific.at("pet_variant").get<std::string>();
    }
    static const std::map<PetVariant, std::string> variants = {{PetVariant::kAdapter, "Adapter"},
                                                               {PetVariant::kSsf, "SSF"},
                                                               {PetVariant::kVptShallow, "VPT-Shallow"},
                                                               {PetVariant::kVptDeep, "VPT-Deep"},
                                                               {PetVariant::kFull, "Finetune"}};
    name += " w/ " + variants.at(parse_pet_variant(variant));
  }
  return name;
}

std::vector<std::string> harness_decisions(const RunConfig& config, bool uses_exemplars) {
  std::vector<std::string> d = {
      "class order: Fisher-Yates shuffle driven by SplitMix64 from the run seed",
      "labels remapped once through the class order; task t owns a contiguous label range",
      "mini-batch order derived from (seed, task, epoch)",
      "stage order: train, evaluate on all seen classes, update memory, checkpoint",
      "accuracy rounded half-up to two decimals; the average includes the first stage",
  };
  if (config.backbone.kind == BackboneKind::kFrozenPretrainedToy) {
    d.push_back("pre-trained backbone stand-in: tiny transformer pre-fit on a disjoint auxiliary blob task");
  }
  if (uses_exemplars) {
    d.push_back("exemplars chosen by herding on L2-normalized features of the post-task model");
    d.push_back(config.memory.fixed_memory ? "memory: fixed per-class quota"
                                           : "memory: shared budget split evenly; fewer slots than classes stores none");
  }
  return d;
}

// ---------------------------------------------------------------------------

Runner::Runner(RunConfig config) : Runner(std::move(config), std::nullopt) {}

Runner::Runner(RunConfig config, std::optional<TinyTransformer> weights) : config_(std::move(config)) {
  SplitDataset data = load_dataset(config_.dataset);
  config_.backbone.input_dim = data.train.dim;
  try {
    config_.backbone.validate();
  } catch (const SpecError& e) {
    throw ConfigError("backbone_args", e.what());
  }
  data_ = std::make_unique<DataManager>(std::move(data), config_.seed, config_.init_cls, config_.increment);
  if (weights) {
    backbone_.emplace(std::move(*weights));
  } else {
    backbone_.emplace(build_backbone(config_.backbone));
  }
  learner_ = get_learner(config_.model_name, config_.learner_config(), *backbone_);
}

TaskContext Runner::context(std::size_t task) const {
  TaskContext ctx;
  ctx.task = task;
  ctx.num_tasks = num_tasks();
  ctx.known_classes = data_->split().classes_before(task);
  ctx.total_classes = data_->split().classes_through(task);
  ctx.full_train = &data_->full_train();
  ctx.train_rows = data_->train_indices(task);
  return ctx;
}

std::vector<int> Runner::predict(const Dataset& data) const {
  constexpr std::size_t kChunk = 256;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) rows.push_back(i);
    const std::vector<int> p = learner_->classify(data.batch(rows));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

const StageResult& Runner::step() {
  if (finished()) throw StateError("all " + std::to_string(num_tasks()) + " tasks are done");
  const std::size_t t = next_task_;
  const auto started = std::chrono::steady_clock::now();
  StageResult stage;
  try {
    TaskContext ctx = context(t);
    const Dataset train = data_->full_train().select(ctx.train_rows);
    ctx.train = &train;
    ctx.store = &store_;
    learner_->observe(ctx);

    const Dataset test = data_->get_dataset(t, Source::kTest, Scope::kCumulative);
    const std::vector<int> pred = predict(test);
    stage.task = t;
    stage.seen_classes = ctx.total_classes;
    stage.accuracy = stage_accuracy(pred, test.labels);
    for (std::size_t j = 0; j <= t; ++j) {
      const int lo = data_->split().classes_before(j), hi = data_->split().classes_through(j);
      std::vector<int> p, y;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] >= lo && test.labels[i] < hi) {
          p.push_back(pred[i]);
          y.push_back(test.labels[i]);
        }
      }
      stage.per_task.push_back(stage_accuracy(p, y));
    }

    learner_->update_memory(ctx);
    learner_->after_task();
  } catch (const TaskError&) {
    throw;
  } catch (const Error& e) {
    spdlog::error("{} failed on task {}: {}", config_.model_name, t, e.what());
    throw TaskError(t, e.what());
  }
  seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  stages_.push_back(std::move(stage));
  ++next_task_;
  spdlog::info("{} task {}/{}: {} classes, accuracy {:.2f}", config_.model_name, t + 1, num_tasks(),
               stages_.back().seen_classes, stages_.back().accuracy);
  return stages_.back();
}

namespace {

json stages_json(const std::vector<StageResult>& stages) {
  json out = json::array();
  for (const auto& s : stages) {
    out.push_back({{"task", s.task}, {"seen_classes", s.seen_classes}, {"accuracy", s.accuracy}, {"per_task", s.per_task}});
  }
  return out;
}

}  // namespace

void Runner::save_checkpoint(const std::filesystem::path& path) const {
  StateDict weights;
  weights.put_all("", backbone_->model().named_parameters());
  const json body = {{"config_hash", config_.hash()},
                     {"config", config_.source},
                     {"next_task", next_task_},
                     {"learner", learner_->state().to_json()},
                     {"store", store_.to_json()},
                     {"store_reads", store_reads()},
                     {"stages", stages_json(stages_)},
                     {"seconds", seconds_},
                     {"rng", {{"generator", "splitmix64"}, {"seed", config_.seed}}},
                     {"backbone", weights.to_json()}};
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes = json::to_cbor(body);
  f << kCheckpointHeader << '\n';
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

std::unique_ptr<Runner> Runner::resume(const std::filesystem::path& checkpoint, RunConfig config) {
  std::ifstream f(checkpoint, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + checkpoint.string());
  std::string header;
  std::getline(f, header);
  if (header != kCheckpointHeader) {
    throw FormatError(checkpoint.string() + ": not a checkpoint (expected header '" + kCheckpointHeader + "')");
  }
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  json body;
  try {
    body = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw FormatError(checkpoint.string() + ": corrupt checkpoint: " + e.what());
  }
  if (body.at("config_hash").get<std::string>() != config.hash()) {
    throw ConfigError("config", "does not match the configuration stored in " + checkpoint.string());
  }

  BackboneSpec spec = config.backbone;
  spec.input_dim = load_dataset(config.dataset).train.dim;
  TinyTransformer model = TinyTransformer::initialize(spec);
  StateDict::from_json(body.at("backbone")).load_all("", model.named_parameters());

  std::unique_ptr<Runner> r(new Runner(std::move(config), std::move(model)));
  r->learner_->load_state(StateDict::from_json(body.at("learner")));
  r->store_ = ExemplarStore::from_json(body.at("store"));
  r->reads_before_ = body.at("store_reads").get<std::size_t>();
  r->next_task_ = body.at("next_task").get<std::size_t>();
  r->seconds_ = body.at("seconds").get<double>();
  for (const auto& s : body.at("stages")) {
    r->stages_.push_back({s.at("task").get<std::size_t>(), s.at("seen_classes").get<int>(),
                          s.at("accuracy").get<double>(), s.at("per_task").get<std::vector<double>>()});
  }
  return r;
}

RunReport Runner::report() const {
  RunReport r;
  r.model_name = config_.model_name;
  r.display_name = display_name(config_);
  r.config = config_.source;
  r.stages = stages_;
  if (!stages_.empty()) r.finalize();
  std::vector<std::string> decisions = harness_decisions(config_, learner_->uses_exemplars());
  for (auto& d : learner_->decisions()) decisions.push_back(std::move(d));
  r.provenance = {{"seed", config_.seed},
                  {"prng", "splitmix64"},
                  {"config_hash", config_.hash()},
                  {"class_order", data_->class_order().order},
                  {"exemplar_reads", store_reads()},
                  {"exemplars_stored", store_.total()},
                  {"notices", config_.notices},
                  {"decisions", decisions}};
  r.wall_clock_seconds = seconds_;
  return r;
}

RunReport run(const RunConfig& config, const RunOptions& options) {
  std::unique_ptr<Runner> runner =
      options.resume_from ? Runner::resume(*options.resume_from, config) : std::make_unique<Runner>(config);
  while (!runner->finished()) {
    const std::size_t t = runner->next_task();
    runner->step();
    if (config.checkpoint && !options.out_dir.empty()) {
      runner->save_checkpoint(options.out_dir / "checkpoints" / fmt::format("task_{}.ckpt", t));
    }
  }
  RunReport report = runner->report();
  if (!options.out_dir.empty()) emit_report(report, options.out_dir);
  return report;
}

}  // namespace cilforge
