#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cilforge/backbone.hpp"
#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/learners/heads.hpp"
#include "cilforge/learners/prompts.hpp"
#include "cilforge/learners/transport.hpp"
#include "cilforge/ops.hpp"
#include "cilforge/rng.hpp"
#include "gradcheck.hpp"

using namespace cilforge;

namespace {

std::vector<double> softmax_row(std::vector<double> x, double t) {
  double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) z += (v = std::exp((v - mx) / t));
  for (double& v : x) v /= z;
  return x;
}

double ce_oracle(const std::vector<std::vector<double>>& logits, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s -= std::log(softmax_row(logits[i], 1.0)[y[i]]);
  return s / y.size();
}

Tensor rows(const std::vector<std::vector<double>>& r) {
  std::vector<double> flat;
  for (const auto& row : r) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor({r.size(), r.front().size()}, std::move(flat));
}

FrozenBackbone tiny_backbone() {
  BackboneSpec s;
  s.kind = BackboneKind::kFrozenRandom;
  s.input_dim = 8;
  s.embed_dim = 8;
  s.depth = 2;
  s.heads = 2;
  s.token_count = 2;
  s.mlp_ratio = 2;
  return build_backbone(s);
}

// Plain (non-log) Sinkhorn iterations; good enough for moderate eps.
std::vector<double> sinkhorn_oracle(const std::vector<double>& cost, std::size_t m, std::size_t n,
                                    const std::vector<double>& r, const std::vector<double>& c, double eps) {
  std::vector<double> k(m * n), u(m, 1.0), v(n, 1.0);
  for (std::size_t i = 0; i < m * n; ++i) k[i] = std::exp(-cost[i] / eps);
  for (int it = 0; it < 20000; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += k[i * n + j] * v[j];
      u[i] = r[i] / s;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += k[i * n + j] * u[i];
      v[j] = c[j] / s;
    }
  }
  std::vector<double> plan(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) plan[i * n + j] = u[i] * k[i * n + j] * v[j];
  return plan;
}

std::vector<double> random_simplex(std::size_t n, SplitMix64& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += (v = 0.05 + rng.uniform());
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Distillation and iCaRL loss

TEST_CASE("icarl_loss reduces to cross-entropy when old and new agree or no old model exists") {
  const auto logits = rows({{1.0, 2.0, 0.5}, {0.0, 1.0, -1.0}});
  const std::vector<int> y = {2, 1};
  const double ce = ce_oracle({{1.0, 2.0, 0.5}, {0.0, 1.0, -1.0}}, y);
  CHECK(icarl_loss(logits, y, Tensor(), 2.0).item() == doctest::Approx(ce).epsilon(1e-12));
  const auto same_old = rows({{1.0, 2.0}, {0.0, 1.0}});
  CHECK(icarl_loss(logits, y, same_old, 2.0).item() == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("icarl_loss T=1 two-by-two case matches the hand-expanded KL") {
  const std::vector<std::vector<double>> nl = {{0.3, -0.2, 1.0}, {1.5, 0.5, 0.0}};
  const std::vector<std::vector<double>> ol = {{1.0, 0.0}, {-0.5, 0.5}};
  const std::vector<int> y = {2, 0};
  double kl = 0.0;
  for (int b = 0; b < 2; ++b) {
    // KL(p || q) with p = softmax(old), q = softmax(new old-columns), written out for two classes.
    const double p0 = std::exp(ol[b][0]) / (std::exp(ol[b][0]) + std::exp(ol[b][1]));
    const double q0 = std::exp(nl[b][0]) / (std::exp(nl[b][0]) + std::exp(nl[b][1]));
    kl += p0 * std::log(p0 / q0) + (1 - p0) * std::log((1 - p0) / (1 - q0));
  }
  const double expected = ce_oracle(nl, y) + kl / 2.0;
  CHECK(icarl_loss(rows(nl), y, rows(ol), 1.0).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kd_loss scales with T squared and respects sample weights") {
  const auto s = rows({{0.1, 0.7, -0.3}, {1.0, -1.0, 0.2}});
  const auto t = rows({{0.4, 0.1, 0.0}, {0.3, 0.3, -0.9}});
  const double plain = kd_loss(s, t, 3.0).item();
  const std::vector<double> ones = {1.0, 1.0};
  CHECK(kd_loss(s, t, 3.0, ones).item() == doctest::Approx(plain).epsilon(1e-14));
  double manual = 0.0;
  for (int b = 0; b < 2; ++b) {
    std::vector<double> sr(s.data().begin() + 3 * b, s.data().begin() + 3 * b + 3);
    std::vector<double> tr(t.data().begin() + 3 * b, t.data().begin() + 3 * b + 3);
    const auto p = softmax_row(tr, 3.0), q = softmax_row(sr, 3.0);
    for (int k = 0; k < 3; ++k) manual += p[k] * std::log(p[k] / q[k]);
  }
  CHECK(plain == doctest::Approx(9.0 * manual / 2.0).epsilon(1e-12));
  const std::vector<double> w = {2.0, 0.0};
  CHECK(kd_loss(s, t, 3.0, w).item() > 0.0);
}

TEST_CASE("icarl_loss rejects old logits of the wrong width") {
  const auto logits = rows({{1.0, 2.0, 0.5}});
  const std::vector<int> y = {0};
  CHECK_THROWS_AS(icarl_loss(logits, y, rows({{1.0, 2.0, 3.0, 4.0}}), 2.0), ContractError);
  CHECK_THROWS_AS(icarl_loss(logits, y, rows({{1.0, 2.0}, {1.0, 1.0}}), 2.0), ContractError);
}

TEST_CASE("icarl_loss gradient check on a 4-sample batch") {
  SplitMix64 rng(11);
  Tensor nl = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor ol = Tensor::randn({4, 3}, rng, 1.0);
  const std::vector<int> y = {0, 4, 3, 1};
  const auto rep = testing::gradcheck({nl}, [&] { return icarl_loss(nl, y, ol, 2.0); });
  CHECK(rep.max_rel_error <= 1e-4);
}

// ---------------------------------------------------------------------------
// Nearest-mean classification

TEST_CASE("ncm examples") {
  const auto means = rows({{0.0, 0.0}, {1.0, 1.0}});
  CHECK(ncm_classify(rows({{0.9, 0.9}}), means) == std::vector<int>{1});
  const auto m2 = rows({{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}});
  CHECK(ncm_classify(rows({{0.0, 3.0}, {-2.0, 0.0}}), m2) == std::vector<int>{1, 2});
  CHECK(ncm_classify(rows({{1.0, 1.0}}), m2) == std::vector<int>{0});
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax_rows(rows({{1.0, 3.0, 3.0}, {2.0, 2.0, 2.0}})) == std::vector<int>{1, 0});
}

TEST_CASE("class_mean fails on an absent class") {
  const auto f = rows({{1.0, 2.0}, {3.0, 4.0}});
  const std::vector<int> y = {0, 0};
  CHECK(class_mean(f, y, 0) == std::vector<double>{2.0, 3.0});
  CHECK_THROWS_AS(class_mean(f, y, 1), FitError);
}

TEST_CASE("prototype head with one sample per class is that sample normalized") {
  PrototypeHead h;
  const std::vector<int> y = {0, 1};
  h.fit(rows({{3.0, 4.0}, {0.0, -2.0}}), y, 0, 2);
  CHECK(h.prototypes[0][0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(h.prototypes[0][1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(h.prototypes[1] == std::vector<double>{0.0, -1.0});
}

// ---------------------------------------------------------------------------
// Optimal transport

TEST_CASE("sinkhorn examples") {
  SUBCASE("zero cost gives the independent coupling") {
    const std::vector<double> r = {0.2, 0.5, 0.3}, c = {0.6, 0.4};
    const Tensor plan = sinkhorn(Tensor::zeros({3, 2}), r, c);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(plan.data()[i * 2 + j] - r[i] * c[j]) <= 1e-10);
  }
  SUBCASE("one by one") {
    const std::vector<double> one = {1.0};
    CHECK(sinkhorn(Tensor({1, 1}, {3.0}), one, one).data()[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("two by two closed form") {
    const std::vector<double> u = {0.5, 0.5};
    SinkhornOptions o;
    o.eps = 0.1;
    const Tensor plan = sinkhorn(Tensor({2, 2}, {0.0, 1.0, 1.0, 0.0}), u, u, o);
    // Symmetric scalings s: s^2 (1 + e^{-1/eps}) = 1/2.
    const double a = 0.5 / (1.0 + std::exp(-1.0 / 0.1));
    CHECK(plan.data()[0] == doctest::Approx(a).epsilon(1e-10));
    CHECK(plan.data()[1] == doctest::Approx(0.5 - a).epsilon(1e-6));
    CHECK(plan.data()[3] == doctest::Approx(a).epsilon(1e-10));
  }
}

TEST_CASE("sinkhorn matches plain scaling iterations on random problems") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + trial % 3, n = 3 + trial % 2;
    std::vector<double> cost(m * n);
    for (double& v : cost) v = rng.uniform();
    const auto r = random_simplex(m, rng), c = random_simplex(n, rng);
    SinkhornOptions o;
    o.eps = 0.5;
    const Tensor plan = sinkhorn(Tensor({m, n}, cost), r, c, o);
    const auto oracle = sinkhorn_oracle(cost, m, n, r, c, 0.5);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(plan.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-8));
  }
}

TEST_CASE("sinkhorn marginals hold on 100 random cost matrices") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.next() % 8, n = 1 + rng.next() % 8;
    std::vector<double> cost(m * n);
    for (double& v : cost) v = 2.0 * rng.uniform();
    const auto r = random_simplex(m, rng), c = random_simplex(n, rng);
    const Tensor plan = sinkhorn(Tensor({m, n}, cost), r, c);
    CHECK(marginal_residual(plan, r, c) <= 1e-6);
    for (double v : plan.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("sinkhorn errors") {
  const std::vector<double> u = {0.5, 0.5};
  CHECK_THROWS_AS(sinkhorn(Tensor({2, 2}, {0.0, NAN, 1.0, 0.0}), u, u), NumericInputError);
  const std::vector<double> neg = {1.5, -0.5}, short_sum = {0.5, 0.4};
  CHECK_THROWS_AS(sinkhorn(Tensor::zeros({2, 2}), neg, u), ContractError);
  CHECK_THROWS_AS(sinkhorn(Tensor::zeros({2, 2}), u, short_sum), ContractError);
  const std::vector<double> three = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(sinkhorn(Tensor::zeros({2, 2}), three, u), DimensionError);
  SinkhornOptions bad;
  bad.eps = 0.0;
  CHECK_THROWS_AS(sinkhorn(Tensor::zeros({2, 2}), u, u, bad), ContractError);

  SinkhornOptions tight;
  tight.eps = 1e-3;
  tight.max_iter = 1;
  const std::vector<double> r = {0.9, 0.1}, c = {0.1, 0.9};
  try {
    sinkhorn(Tensor({2, 2}, {0.0, 1.0, 1.0, 0.0}), r, c, tight);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > tight.tol);
  }
}

TEST_CASE("coil_transfer examples") {
  SplitMix64 rng(3);
  SUBCASE("one source class") {
    const Tensor w = Tensor::randn({1, 6}, rng, 1.0);
    const Tensor po = ops::normalize(Tensor::randn({1, 6}, rng, 1.0));
    const Tensor pn = ops::normalize(Tensor::randn({3, 6}, rng, 1.0));
    const Tensor out = coil_transfer(w, po, pn);
    const Tensor dir = ops::normalize(w);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 6; ++k) CHECK(out.data()[j * 6 + k] == doctest::Approx(dir.data()[k]).epsilon(1e-12));
  }
  SUBCASE("identical prototypes and small eps keep the old weights") {
    const Tensor w = Tensor::randn({4, 6}, rng, 1.0);
    const Tensor p = ops::normalize(Tensor::randn({4, 6}, rng, 1.0));
    SinkhornOptions o;
    o.eps = 0.01;
    o.max_iter = 20000;
    const Tensor plan = class_transport_plan(p, p, o);
    for (std::size_t i = 0; i < 4; ++i) CHECK(plan.data()[i * 4 + i] == doctest::Approx(0.25).epsilon(1e-3));
    const Tensor out = coil_transfer(w, p, p, o);
    const Tensor dir = ops::normalize(w);
    for (std::size_t i = 0; i < 24; ++i) CHECK(std::abs(out.data()[i] - dir.data()[i]) <= 1e-3);
  }
  SUBCASE("transported weights have unit norm") {
    const Tensor out = coil_transfer(Tensor::randn({5, 6}, rng, 2.0), ops::normalize(Tensor::randn({5, 6}, rng, 1.0)),
                                     ops::normalize(Tensor::randn({3, 6}, rng, 1.0)));
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += out.data()[j * 6 + k] * out.data()[j * 6 + k];
      CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

// ---------------------------------------------------------------------------
// Prompt pools

TEST_CASE("l2p_select examples") {
  PromptPool pool = PromptPool::create(3, 2, 3, 1, 1);
  pool.keys = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}).set_requires_grad(true);
  const Tensor e1({3}, {1.0, 0.0, 0.0});
  auto sel = l2p_select(e1, pool);
  CHECK(sel.indices.at(0) == std::vector<std::size_t>{0});
  CHECK(sel.pull_loss.item() == doctest::Approx(0.0).epsilon(1e-14));
  pool.top_n = 2;
  sel = l2p_select(e1, pool);
  CHECK(sel.indices.at(0) == std::vector<std::size_t>{0, 1});
  CHECK(sel.pull_loss.item() == doctest::Approx(0.5).epsilon(1e-14));
  pool.top_n = 5;
  sel = l2p_select(e1, pool);
  CHECK(sel.indices.at(0).size() == 3);
}

TEST_CASE("l2p_select equals a full sort on 100 random pools") {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 6;
    PromptPool pool = PromptPool::create(8, 1, d, 4, rng.next());
    pool.keys = Tensor::randn({8, d}, rng, 1.0);
    const Tensor q = Tensor::randn({2, d}, rng, 1.0);
    const auto sel = l2p_select(q, pool);
    double pull = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t m = 0; m < 8; ++m) {
        double dot = 0, nq = 0, nk = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double a = q.data()[b * d + k], c = pool.keys.data()[m * d + k];
          dot += a * c;
          nq += a * a;
          nk += c * c;
        }
        scored.push_back({-dot / std::sqrt(nq * nk), m});
      }
      std::sort(scored.begin(), scored.end());
      std::vector<std::size_t> expect;
      for (int k = 0; k < 4; ++k) {
        expect.push_back(scored[k].second);
        pull += (1.0 + scored[k].first) / 4.0;
      }
      CHECK(sel.indices[b] == expect);
    }
    CHECK(sel.pull_loss.item() == doctest::Approx(pull / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("l2p pull gradient reaches keys but not the query") {
  SplitMix64 rng(23);
  PromptPool pool = PromptPool::create(6, 2, 5, 2, 4);
  pool.keys = Tensor::randn({6, 5}, rng, 1.0, true);
  Tensor q = Tensor::randn({4, 5}, rng, 1.0, true);
  const auto rep = testing::gradcheck({pool.keys}, [&] { return l2p_select(q, pool).pull_loss; });
  CHECK(rep.max_rel_error <= 1e-4);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = l2p_select(q, pool).pull_loss;
  }
  tape.backward(loss);
  CHECK_FALSE(q.has_grad());
}

TEST_CASE("gather_prompts concatenates selected prompts") {
  PromptPool pool = PromptPool::create(4, 2, 3, 2, 9);
  PromptSelection sel;
  sel.indices = {{2, 0}};
  const Tensor g = gather_prompts(pool, sel);
  CHECK(g.shape() == Shape{1, 4, 3});
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(g.data()[k] == pool.prompts[2].data()[k]);
    CHECK(g.data()[6 + k] == pool.prompts[0].data()[k]);
  }
}

TEST_CASE("compose_prompt with orthonormal keys picks the matching component") {
  const std::size_t d = 4, m = 3, p = 2;
  const Tensor keys({m, d}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  const Tensor attention = Tensor::full({m, d}, 1.0);
  SplitMix64 rng(8);
  const Tensor prompts = Tensor::randn({m, p, d}, rng, 1.0);
  const Tensor q({1, d}, {1, 0, 0, 0});
  const ComposedPrompt c = compose_prompt(q, keys, attention, prompts);
  CHECK(c.weights.data()[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(c.weights.data()[1] == doctest::Approx(0.0));
  CHECK(c.weights.data()[2] == doctest::Approx(0.0));
  for (std::size_t k = 0; k < p * d; ++k) CHECK(c.prompt.data()[k] == doctest::Approx(prompts.data()[k]).epsilon(1e-14));
  CHECK(orthogonality(keys).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(orthogonality(Tensor({2, 2}, {1, 1, 0, 1})).item() == doctest::Approx(3.0));
}

TEST_CASE("compose_prompt and orthogonality gradient check") {
  SplitMix64 rng(31);
  const std::size_t d = 5, m = 3, p = 2;
  Tensor keys = Tensor::randn({m, d}, rng, 1.0, true);
  Tensor att = Tensor::randn({m, d}, rng, 1.0, true);
  Tensor prompts = Tensor::randn({m, p, d}, rng, 1.0, true);
  const Tensor q = Tensor::randn({4, d}, rng, 1.0);
  const Tensor probe = Tensor::randn({4, p, d}, rng, 1.0);
  const auto rep = testing::gradcheck({keys, att, prompts}, [&] {
    const ComposedPrompt c = compose_prompt(q, keys, att, prompts);
    const Tensor fit = ops::sum(ops::mul(c.prompt, probe));
    const Tensor ortho =
        ops::add(ops::add(orthogonality(keys), orthogonality(att)), orthogonality(ops::reshape(prompts, {m, p * d})));
    return ops::add(fit, ops::scale(ortho, 0.1));
  });
  CHECK(rep.max_rel_error <= 1e-4);
}

// ---------------------------------------------------------------------------
// Factory

TEST_CASE("factory maps names to learners") {
  const FrozenBackbone bb = tiny_backbone();
  LearnerConfig cfg;
  CHECK(dynamic_cast<SimpleCILLearner*>(get_learner("simplecil", cfg, bb).get()) != nullptr);
  cfg.model_specific = {{"pet_variant", "ssf"}};
  auto adam = get_learner("ADAM", cfg, bb);
  auto* a = dynamic_cast<AdamLearner*>(adam.get());
  REQUIRE(a != nullptr);
  CHECK(a->variant() == PetVariant::kSsf);
  CHECK(adam->name() == "adam");
  cfg.model_specific = nlohmann::json::object();
  try {
    get_learner("lwf", cfg, bb);
    FAIL("expected a factory error");
  } catch (const FactoryError& e) {
    const std::string msg = e.what();
    for (const auto& n : learner_names()) CHECK(msg.find(n) != std::string::npos);
  }
}

TEST_CASE("every learner name constructs and agrees on exemplar use") {
  const FrozenBackbone bb = tiny_backbone();
  CHECK(learner_names().size() == 11);
  for (const auto& n : learner_names()) {
    LearnerConfig cfg;
    if (n == "dualprompt") cfg.model_specific = {{"g_layers", {0}}, {"e_layers", {1}}};
    auto l = get_learner(n, cfg, bb);
    CHECK(l->name() == n);
    CHECK(l->uses_exemplars() == learner_uses_exemplars(n));
    CHECK_THROWS_AS(l->classify(Tensor::zeros({1, 8})), StateError);
  }
}

TEST_CASE("learner option validation") {
  const FrozenBackbone bb = tiny_backbone();
  LearnerConfig cfg;
  cfg.model_specific = {{"unknown_knob", 1}};
  CHECK_THROWS_AS(get_learner("icarl", cfg, bb), ConfigError);
  cfg.model_specific = {{"pet_variant", "lora"}};
  CHECK_THROWS_AS(get_learner("adam", cfg, bb), ConfigurationError);
  cfg.model_specific = {{"g_layers", {0, 1}}, {"e_layers", {1}}};
  CHECK_THROWS_AS(get_learner("dualprompt", cfg, bb), ConfigurationError);
  cfg.model_specific = {{"g_layers", {0}}, {"e_layers", {5}}};
  CHECK_THROWS_AS(get_learner("dualprompt", cfg, bb), ConfigError);
  cfg.model_specific = {{"memo_split", 2}};
  CHECK_THROWS_AS(get_learner("memo", cfg, bb), ConfigError);
  cfg.model_specific = {{"memo_split", 0}};
  CHECK_THROWS_AS(get_learner("memo", cfg, bb), ConfigError);
}
