// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 6-8 run the shipped 20-class example configs.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cilforge/errors.hpp"
#include "cilforge/evaluator.hpp"
#include "cilforge/harness.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/learners/prompts.hpp"
#include "cilforge/learners/transport.hpp"
#include "cilforge/memory.hpp"
#include "cilforge/ops.hpp"
#include "cilforge/rng.hpp"
#include "cilforge/state.hpp"
#include "fixture.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace cilforge;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kExps = fs::path(CILFORGE_SOURCE_DIR) / "exps";

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Collects failed checks; the first few are printed under the verdict line.
struct Verdict {
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

struct Variant {
  std::string model;
  json ms = json::object();
  std::string label() const {
    return ms.contains("pet_variant") ? model + "/" + ms["pet_variant"].get<std::string>() : model;
  }
};

std::vector<Variant> all_variants() {
  std::vector<Variant> v;
  for (const auto& n : learner_names()) {
    if (n != "adam") v.push_back({n});
  }
  for (const char* pet : {"adapter", "ssf", "vpt_shallow", "vpt_deep", "full"}) v.push_back({"adam", {{"pet_variant", pet}}});
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json without_clock(const RunReport& r) {
  json j = to_json(r);
  j.erase("wall_clock_seconds");
  return j;
}

std::vector<double> random_simplex(std::size_t n, SplitMix64& rng) {
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = rng.uniform(0.1, 1.0));
  for (double& x : v) x /= s;
  return v;
}

// ---------------------------------------------------------------------------

void numerical_core(Verdict& v) {
  const auto start = Clock::now();
  double worst = 0.0;
  for (const auto& c : testing::primitive_grad_cases()) {
    const double e = testing::gradcheck(c.params, c.loss).max_rel_error;
    worst = std::max(worst, e);
    v.require(e <= 1e-4, fmt::format("primitive {} rel error {:.3g}", c.name, e));
  }
  v.note(fmt::format("primitives max rel error {:.2g}", worst));

  worst = 0.0;
  for (const auto& var : all_variants()) {
    for (std::size_t task : {0u, 1u}) {
      const double e = testing::learner_loss_gradcheck(var.model, var.ms, task);
      worst = std::max(worst, e);
      v.require(e <= 1e-4, fmt::format("{} loss at task {} rel error {:.3g}", var.label(), task, e));
    }
  }
  v.note(fmt::format("learner losses max rel error {:.2g}", worst));

  double drift = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 rng(seed);
    const Tensor y = ops::softmax(Tensor::randn({6, 9}, rng, 40.0));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        v.require(y.at({r, j}) >= 0.0, "negative softmax output");
        s += y.at({r, j});
      }
      drift = std::max(drift, std::abs(s - 1.0));
    }
  }
  v.require(drift <= 1e-12, fmt::format("softmax rows sum off by {:.3g}", drift));
  const double secs = seconds_since(start);
  v.require(secs < 30.0, fmt::format("took {:.1f} s", secs));
  v.note(fmt::format("{:.1f} s", secs));
}

void oracle_equivalence(Verdict& v) {
  const auto start = Clock::now();
  SplitMix64 sizes(2718);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + sizes.next() % 12;
    const std::size_t m = std::min<std::size_t>(n, 1 + sizes.next() % 4);
    const std::size_t d = 1 + sizes.next() % 8;
    SplitMix64 rng(sizes.next());
    const Tensor f = Tensor::randn({n, d}, rng, 1.0);
    v.require(herding_select(f, static_cast<int>(m)) == testing::oracle_herding(testing::normalized_rows(f), m),
              fmt::format("herding instance {} (n={}, m={})", trial, n, m));
  }

  Runner r(parse_config(kExps / "simplecil.json"));
  while (!r.finished()) r.step();
  const auto& s = dynamic_cast<const SimpleCILLearner&>(r.learner());
  const Dataset& train = r.data().full_train();
  const Tensor f = encode(r.learner().backbone(), train.batch());
  const std::size_t d = f.dim(1);
  double gap = 0.0;
  for (int c = 0; c < r.data().num_classes(); ++c) {
    std::vector<double> mean(d, 0.0);
    int count = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.labels[i] != c) continue;
      ++count;
      for (std::size_t k = 0; k < d; ++k) mean[k] += f.data()[i * d + k];
    }
    double norm = 0.0;
    for (double& x : mean) {
      x /= count;
      norm += x * x;
    }
    norm = std::sqrt(norm) + 1e-12;
    for (std::size_t k = 0; k < d; ++k) gap = std::max(gap, std::abs(s.prototypes().prototypes[c][k] - mean[k] / norm));
  }
  v.require(gap <= 1e-12, fmt::format("SimpleCIL prototypes differ from class means by {:.3g}", gap));

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t pool_size = 2 + sizes.next() % 15, dim = 2 + sizes.next() % 10;
    const std::size_t top_n = 1 + sizes.next() % 5, batch = 1 + sizes.next() % 4;
    SplitMix64 rng(sizes.next());
    PromptPool pool = PromptPool::create(pool_size, 1, dim, top_n, rng.next());
    pool.keys = Tensor::randn({pool_size, dim}, rng, 1.0);
    const Tensor q = Tensor::randn({batch, dim}, rng, 1.0);
    v.require(l2p_select(q, pool).indices == testing::oracle_top_keys(q, pool.keys, top_n),
              fmt::format("l2p pool {} (M={}, N={})", trial, pool_size, top_n));
  }
  const double secs = seconds_since(start);
  v.require(secs < 30.0, fmt::format("took {:.1f} s", secs));
  v.note(fmt::format("prototype gap {:.2g}, {:.1f} s", gap, secs));
}

void sinkhorn_checks(Verdict& v) {
  SplitMix64 rng(31415);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.next() % 8, n = 1 + rng.next() % 8;
    std::vector<double> cost(m * n);
    for (double& x : cost) x = 2.0 * rng.uniform();
    const auto r = random_simplex(m, rng), c = random_simplex(n, rng);
    const Tensor plan = sinkhorn(Tensor({m, n}, cost), r, c);
    const double res = marginal_residual(plan, r, c);
    worst = std::max(worst, res);
    v.require(res <= 1e-6, fmt::format("cost {} residual {:.3g}", trial, res));
  }
  double gap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.next() % 8, n = 1 + rng.next() % 8;
    const auto r = random_simplex(m, rng), c = random_simplex(n, rng);
    const Tensor plan = sinkhorn(Tensor::zeros({m, n}), r, c);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gap = std::max(gap, std::abs(plan.at({i, j}) - r[i] * c[j]));
    }
  }
  v.require(gap <= 1e-10, fmt::format("zero-cost plan off outer(r, c) by {:.3g}", gap));
  v.note(fmt::format("max residual {:.2g}, zero-cost gap {:.2g}", worst, gap));
}

void protocol_conformance(Verdict& v) {
  const ClassOrder order = shuffle_class_order(100, 1993);
  const TaskSplit split = build_task_splits(100, 10, 10);
  v.require(split.num_tasks() == 10, "expected 10 tasks");
  std::set<int> seen_raw;
  for (const auto& task : split.tasks) {
    v.require(task.size() == 10, "task with other than 10 classes");
    for (int c : task) {
      v.require(c >= 0 && c < 100, "class outside [0, 100)");
      if (c >= 0 && c < 100) v.require(seen_raw.insert(order.order[c]).second, "class in two tasks");
    }
  }
  v.require(seen_raw.size() == 100, "tasks do not cover all classes");

  // The same through the data manager, on the training rows it hands out.
  BlobSpec blobs;
  blobs.num_classes = 100;
  blobs.train_per_class = 2;
  blobs.test_per_class = 1;
  blobs.dim = 4;
  const DataManager dm(synth_blobs(blobs), 1993, 10, 10);
  std::set<int> labels;
  for (std::size_t t = 0; t < dm.num_tasks(); ++t) {
    std::set<int> here;
    for (std::size_t row : dm.train_indices(t)) here.insert(dm.full_train().labels[row]);
    v.require(here.size() == 10, fmt::format("data manager task {} holds {} classes", t, here.size()));
    for (int c : here) v.require(labels.insert(c).second, "data manager reuses a class");
  }

  v.require(quota({false, 2000, 20}, 100) == 20, "quota(2000, 100) != 20");

  for (const auto& var : all_variants()) {
    Runner r(config_from_json(testing::small_config(var.model, var.ms)));
    for (std::size_t t = 0; t < r.num_tasks(); ++t) {
      r.step();
      const Learner& l = r.learner();
      v.require(l.known_classes() == l.total_classes() && l.total_classes() == r.data().split().classes_through(t),
                fmt::format("{} bookkeeping after task {}", var.label(), t));
    }
    if (!learner_uses_exemplars(var.model)) {
      v.require(r.store_reads() == 0, fmt::format("{} read the exemplar store {} times", var.label(), r.store_reads()));
      v.require(r.store().empty(), fmt::format("{} stored exemplars", var.label()));
    } else {
      v.require(r.store_reads() > 0, fmt::format("{} never replayed exemplars", var.label()));
    }
  }
}

void freeze_contracts(Verdict& v) {
  auto hash_of = [](const Learner& l, const std::string& name) -> std::uint64_t {
    for (const auto& c : l.components()) {
      if (c.name == name) return hash_tensors(c.tensors);
    }
    return 0;
  };
  auto is_frozen = [](const Learner& l, const std::string& name) {
    for (const auto& c : l.components()) {
      if (c.name == name) return c.frozen;
    }
    return false;
  };

  // Any component flagged frozen keeps its bytes through the next task.
  std::size_t compared = 0;
  for (const auto& var : all_variants()) {
    Runner r(config_from_json(testing::small_config(var.model, var.ms)));
    std::map<std::string, std::uint64_t> prev;
    while (!r.finished()) {
      r.step();
      std::map<std::string, std::uint64_t> now;
      for (const auto& c : r.learner().components()) {
        now[c.name] = hash_tensors(c.tensors);
        if (c.frozen && prev.count(c.name)) {
          ++compared;
          v.require(now[c.name] == prev[c.name], fmt::format("{}: frozen {} changed", var.label(), c.name));
        }
      }
      prev = now;
    }
  }

  // The specific components each method promises to freeze.
  {
    Runner r(config_from_json(testing::small_config("der")));
    r.step();
    const auto h = hash_of(r.learner(), "backbone.0");
    r.step();
    r.step();
    v.require(is_frozen(r.learner(), "backbone.0") && is_frozen(r.learner(), "backbone.1"), "DER old branches not frozen");
    v.require(hash_of(r.learner(), "backbone.0") == h, "DER first branch changed");
  }
  for (const char* m : {"l2p", "dualprompt", "coda-prompt", "simplecil"}) {
    Runner r(config_from_json(testing::small_config(m)));
    const auto before = hash_tensors(r.learner().backbone().model().parameters());
    while (!r.finished()) r.step();
    v.require(is_frozen(r.learner(), "backbone"), fmt::format("{} backbone not flagged frozen", m));
    v.require(hash_tensors(r.learner().backbone().model().parameters()) == before, fmt::format("{} backbone changed", m));
  }
  {
    Runner r(config_from_json(testing::small_config("memo")));
    r.step();
    const auto h = hash_of(r.learner(), "shared");
    r.step();
    r.step();
    v.require(is_frozen(r.learner(), "shared") && hash_of(r.learner(), "shared") == h, "MEMO shared blocks changed");
  }
  for (const char* pet : {"adapter", "ssf", "vpt_shallow", "vpt_deep", "full"}) {
    Runner r(config_from_json(testing::small_config("adam", {{"pet_variant", pet}})));
    r.step();
    std::map<std::string, std::uint64_t> after_first;
    for (const auto& c : r.learner().components()) after_first[c.name] = hash_tensors(c.tensors);
    r.step();
    r.step();
    for (const auto& c : r.learner().components()) {
      if (c.name == "head") continue;  // prototypes are appended, never rewritten
      v.require(c.frozen && after_first[c.name] == hash_tensors(c.tensors), fmt::format("ADAM/{}: {} changed", pet, c.name));
    }
  }
  v.note(fmt::format("{} frozen-component comparisons", compared));
}

void forgetting_ordering(Verdict& v) {
  std::map<std::string, RunReport> reports;
  for (const char* name : {"finetune", "icarl", "der", "foster", "simplecil"}) {
    const auto start = Clock::now();
    reports[name] = run(parse_config(kExps / (std::string(name) + ".json")));
    const double secs = seconds_since(start);
    v.require(secs < 60.0, fmt::format("{} took {:.1f} s", name, secs));
    v.note(fmt::format("{} {:.2f}/{:.2f} {:.1f}s", name, reports[name].average, reports[name].final, secs));
  }
  const double ft = reports["finetune"].final;
  for (const char* name : {"icarl", "der", "foster"}) {
    v.require(reports[name].final - ft >= 10.0,
              fmt::format("{} final {:.2f} is within 10 points of finetune {:.2f}", name, reports[name].final, ft));
  }
  v.require(reports["simplecil"].average >= 90.0, fmt::format("SimpleCIL average {:.2f} < 90", reports["simplecil"].average));
}

void determinism_and_resume(Verdict& v, const fs::path& work) {
  for (const char* name : {"finetune", "icarl", "coil", "der", "foster", "memo", "simplecil", "l2p", "dualprompt",
                           "coda_prompt", "adam_adapter"}) {
    RunConfig cfg = parse_config(kExps / (std::string(name) + ".json"));
    cfg.checkpoint = true;
    const fs::path a = work / name / "a", b = work / name / "b", c = work / name / "resumed";
    const RunReport ra = run(cfg, {a, std::nullopt});
    const RunReport rb = run(cfg, {b, std::nullopt});
    v.require(slurp(a / "results.csv") == slurp(b / "results.csv"), fmt::format("{}: results.csv differs", name));
    v.require(without_clock(ra) == without_clock(rb), fmt::format("{}: reports differ", name));

    const fs::path ckpt = a / "checkpoints" / "task_2.ckpt";
    const RunReport rc = run(cfg, {c, ckpt});
    v.require(slurp(a / "results.csv") == slurp(c / "results.csv"), fmt::format("{}: resumed results.csv differs", name));
    v.require(without_clock(ra) == without_clock(rc), fmt::format("{}: resumed report differs", name));

    // Prediction for prediction on the full test set after the final task.
    auto resumed = Runner::resume(ckpt, cfg);
    while (!resumed->finished()) resumed->step();
    Runner straight(cfg);
    while (!straight.finished()) straight.step();
    const Dataset& test = straight.data().full_test();
    v.require(resumed->predict(test) == straight.predict(test), fmt::format("{}: resumed predictions differ", name));
  }
}

// Checks a report written by the CLI against the results.json and
// results.csv layout. Returns the first problem found, or "".
std::string report_problem(const fs::path& dir, const RunConfig& cfg) {
  json j;
  try {
    j = json::parse(slurp(dir / "results.json"));
  } catch (const std::exception& e) {
    return std::string("results.json does not parse: ") + e.what();
  }
  for (const char* key : {"model_name", "display_name"}) {
    if (!j.contains(key) || !j[key].is_string()) return fmt::format("missing string {}", key);
  }
  for (const char* key : {"config", "provenance"}) {
    if (!j.contains(key) || !j[key].is_object()) return fmt::format("missing object {}", key);
  }
  for (const char* key : {"average_accuracy", "final_accuracy", "wall_clock_seconds"}) {
    if (!j.contains(key) || !j[key].is_number()) return fmt::format("missing number {}", key);
  }
  if (j["model_name"] != cfg.model_name) return "model_name does not echo the config";
  if (j["config"] != cfg.source) return "config echo differs from the input";
  const json& p = j["provenance"];
  if (!p.contains("seed") || p["seed"] != cfg.seed) return "provenance seed missing";
  if (!p.contains("prng") || !p["prng"].is_string()) return "provenance prng missing";
  if (!p.contains("decisions") || !p["decisions"].is_array() || p["decisions"].empty()) return "provenance decisions missing";
  if (!j.contains("stages") || !j["stages"].is_array()) return "missing stages";
  const json& stages = j["stages"];
  if (stages.size() != 5) return fmt::format("{} stages, expected 5", stages.size());
  std::vector<double> acc;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const json& st = stages[t];
    if (st.value("task", -1) != static_cast<int>(t)) return fmt::format("stage {} has the wrong task index", t);
    if (st.value("seen_classes", -1) != cfg.init_cls + static_cast<int>(t) * cfg.increment) return fmt::format("stage {} seen_classes", t);
    const double a = st.value("accuracy", -1.0);
    if (a < 0.0 || a > 100.0) return fmt::format("stage {} accuracy {}", t, a);
    if (!st.contains("per_task") || st["per_task"].size() != t + 1) return fmt::format("stage {} per_task size", t);
    for (const auto& e : st["per_task"]) {
      if (!e.is_number() || e.get<double>() < 0.0 || e.get<double>() > 100.0) return fmt::format("stage {} per_task entry", t);
    }
    acc.push_back(a);
  }
  const Summary s = summarize(acc);
  if (j["average_accuracy"].get<double>() != s.average) return "average_accuracy is not the stage mean";
  if (j["final_accuracy"].get<double>() != acc.back()) return "final_accuracy is not the last stage";

  std::istringstream csv(slurp(dir / "results.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(csv, line);) lines.push_back(line);
  if (lines.size() != 8 || lines[0] != "stage,seen_classes,accuracy") return "results.csv layout";
  for (std::size_t t = 0; t < 5; ++t) {
    if (lines[t + 1] != fmt::format("{},{},{:.2f}", t, cfg.init_cls + static_cast<int>(t) * cfg.increment, acc[t])) {
      return fmt::format("results.csv row {}", t);
    }
  }
  if (lines[6] != fmt::format("avg,{:.2f}", s.average) || lines[7] != fmt::format("final,{:.2f}", s.final)) {
    return "results.csv footer";
  }
  if (!fs::exists(dir / "curve.csv")) return "curve.csv missing";
  return "";
}

void cli_coverage(Verdict& v, const fs::path& work) {
  const auto start = Clock::now();
  std::set<std::string> models, pets;
  fs::create_directories(work);
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(kExps)) {
    if (e.path().extension() == ".json") configs.push_back(e.path());
  }
  std::sort(configs.begin(), configs.end());
  for (const auto& path : configs) {
    const RunConfig cfg = parse_config(path);
    if (cfg.dataset.name != "blobs" || cfg.dataset.blobs.num_classes != 20) continue;  // only the 5-task fixture
    const fs::path out = work / path.stem();
    const std::string cmd = fmt::format("'{}' --config '{}' --out '{}' --log-level warn > '{}' 2>&1", CILFORGE_CLI,
                                        path.string(), out.string(), (work / (path.stem().string() + ".log")).string());
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code != 0) {
      v.require(false, fmt::format("{} exited with {}", path.filename().string(), code));
      continue;
    }
    const std::string problem = report_problem(out, cfg);
    v.require(problem.empty(), fmt::format("{}: {}", path.filename().string(), problem));
    if (problem.empty()) {
      models.insert(cfg.model_name);
      if (cfg.model_name == "adam") pets.insert(cfg.model_specific.value("pet_variant", "adapter"));
    }
    v.note(fmt::format("{} {:.1f}s", path.stem().string(), seconds_since(t0)));
  }
  v.require(models.size() == learner_names().size(), fmt::format("{} of {} model names covered", models.size(), learner_names().size()));
  v.require(pets.size() == 5, fmt::format("{} of 5 ADAM variants covered", pets.size()));
  const double secs = seconds_since(start);
  v.note(fmt::format("total {:.1f}s", secs));
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const auto start = Clock::now();
  const fs::path work = fs::temp_directory_path() / "cilforge_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* title;
    std::function<void(Verdict&)> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "numerical core gradient checks", numerical_core},
      {2, "oracle equivalence", oracle_equivalence},
      {3, "sinkhorn marginals", sinkhorn_checks},
      {4, "protocol conformance", protocol_conformance},
      {5, "freeze contracts", freeze_contracts},
      {6, "forgetting ordering on the 20-class fixture", forgetting_ordering},
      {7, "determinism and resume", [&](Verdict& v) { determinism_and_resume(v, work / "c7"); }},
      {8, "CLI coverage of every learner", [&](Verdict& v) { cli_coverage(v, work / "c8"); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    Verdict v;
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const bool ok = v.failures.empty();
    failed += ok ? 0 : 1;
    std::string detail;
    for (const auto& n : v.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << fmt::format("criterion {}: {}  {}", c.id, ok ? "PASS" : "FAIL", c.title)
              << (detail.empty() ? "" : "  [" + detail + "]") << "\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(v.failures.size(), 5); ++i) std::cout << "    " << v.failures[i] << "\n";
    if (v.failures.size() > 5) std::cout << "    ... " << v.failures.size() - 5 << " more\n";
    std::cout.flush();
  }
  const double total = seconds_since(start);
  std::cout << fmt::format("acceptance: {} of {} criteria passed in {:.1f} s", criteria.size() - failed, criteria.size(), total)
            << "\n";
  if (total >= 900.0) {
    std::cout << "acceptance: suite exceeded 15 minutes\n";
    ++failed;
  }
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
