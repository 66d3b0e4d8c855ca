#include <set>

#include "doctest.h"
#include "properties.hpp"
#include "workmem/reasoning.hpp"

using namespace workmem;
namespace wt = workmem::testing;

namespace {

RelationNetwork<double> random_relation(ParameterStore<double>& store, std::size_t width, bool f_phi, PairMode pairs,
                                        std::mt19937_64& rng) {
  RelationNetwork<double> net(store, "rn", RelationConfig{width, width, 6, 3, f_phi, pairs}, rng);
  for (auto& p : store.all()) p.tensor.mutable_value() = wt::random_tensor(p.tensor.shape(), rng, 0.5).value();
  return net;
}

// g over one concatenated pair, layer by layer with ReLU after each.
Matrix<double> g_ref(const ParameterStore<double>& store, const Matrix<double>& x, std::size_t layers) {
  Matrix<double> h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& W = store.find("rn.g" + std::to_string(l) + ".W")->tensor.value();
    const auto& b = store.find("rn.g" + std::to_string(l) + ".b")->tensor.value();
    h = ((h * W) + b).cwiseMax(0.0);
  }
  return h;
}

}  // namespace

TEST_CASE("pair evaluation counts for both reasoning paths") {
  for (std::uint64_t n : {1, 5, 30, 100}) {
    CHECK(count_pair_evals(ReasoningMode::full_rn, n, 4) == n * n);
    CHECK(count_pair_evals(ReasoningMode::wmemnn, n, 4) == 16);
    CHECK(count_pair_evals("full_rn", n, 4) == n * n);
  }
  CHECK(static_cast<double>(count_pair_evals(ReasoningMode::full_rn, 30, 4)) /
            static_cast<double>(count_pair_evals(ReasoningMode::wmemnn, 30, 4)) ==
        56.25);
  CHECK(pair_count(5, PairMode::unordered) == 15);
  CHECK_THROWS_AS(parse_reasoning_mode("rn"), ContractError);
}

TEST_CASE("pair counts equal the number of enumerated pairs") {
  for (std::uint64_t n = 1; n <= 12; ++n) {
    std::set<std::pair<std::uint64_t, std::uint64_t>> ordered, unordered;
    for (std::uint64_t i = 0; i < n; ++i) {
      for (std::uint64_t j = 0; j < n; ++j) {
        ordered.emplace(i, j);
        unordered.emplace(std::min(i, j), std::max(i, j));
      }
    }
    CHECK(pair_count(n, PairMode::ordered) == ordered.size());
    CHECK(pair_count(n, PairMode::unordered) == unordered.size());
  }
}

TEST_CASE("the instrumented counter records one evaluation per pair") {
  std::mt19937_64 rng(51);
  ParameterStore<double> store;
  auto net = random_relation(store, 3, false, PairMode::ordered, rng);
  const auto q = wt::random_tensor(Shape{1, 3}, rng);
  net.pool(wt::random_tensor(Shape{4, 3}, rng), q);
  CHECK(net.pair_evaluations() == 16);
  net.pool(wt::random_tensor(Shape{30, 3}, rng), q);
  CHECK(net.pair_evaluations() == 16 + 900);
  net.reset_counter();
  net.pool_batch({wt::random_tensor(Shape{4, 3}, rng), wt::random_tensor(Shape{4, 3}, rng)}, {q, q});
  CHECK(net.pair_evaluations() == 32);
}

TEST_CASE("pool is the sum of g over every ordered pair") {
  std::mt19937_64 rng(52);
  for (auto mode : {PairMode::ordered, PairMode::unordered}) {
    ParameterStore<double> store;
    auto net = random_relation(store, 2, false, mode, rng);
    const auto objects = wt::random_tensor(Shape{3, 2}, rng);
    const auto q = wt::random_tensor(Shape{1, 2}, rng);
    Matrix<double> want = Matrix<double>::Zero(1, 6);
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (Eigen::Index j = mode == PairMode::ordered ? 0 : i; j < 3; ++j) {
        Matrix<double> x(1, 6);
        x << objects.value().row(i), objects.value().row(j), q.value();
        want += g_ref(store, x, 3);
      }
    }
    CHECK((net.pool(objects, q).value() - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("batched pooling equals pooling each set") {
  std::mt19937_64 rng(53);
  ParameterStore<double> store;
  auto net = random_relation(store, 3, true, PairMode::ordered, rng);
  std::vector<Tensor<double>> sets, conds;
  for (int b = 0; b < 3; ++b) {
    sets.push_back(wt::random_tensor(Shape{4, 3}, rng));
    conds.push_back(wt::random_tensor(Shape{1, 3}, rng));
  }
  const auto batched = net.pool_batch(sets, conds).value();
  for (Eigen::Index b = 0; b < 3; ++b) {
    const auto single = net.pool(sets[static_cast<std::size_t>(b)], conds[static_cast<std::size_t>(b)]).value();
    CHECK((batched.row(b) - single).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(net.pool_batch({sets[0], wt::random_tensor(Shape{5, 3}, rng)}, {conds[0], conds[1]}), DimensionError);
}

TEST_CASE("relation pool is invariant to every reordering of four slots") {
  const auto r = wt::relation_permutation_invariance(120, 54);
  CHECK(r.instances >= 100);
  CHECK(r.ok);
  CHECK(r.worst <= 1e-9);
}

TEST_CASE("relation network gradients match central differences") {
  std::mt19937_64 rng(55);
  ParameterStore<double> store;
  auto net = random_relation(store, 2, true, PairMode::ordered, rng);
  auto objects = wt::random_tensor(Shape{3, 2}, rng, 1.0, true);
  auto q = wt::random_tensor(Shape{1, 2}, rng, 1.0, true);
  const auto w = wt::random_tensor(Shape{1, 6}, rng);
  auto params = store.all();
  params.push_back(Parameter<double>{"o", objects, false});
  params.push_back(Parameter<double>{"q", q, false});
  CHECK(grad_check<double>([&] { return sum(mul(net.pool(objects, q), w)); }, params, 1e-6) < 1e-5);
}

TEST_CASE("readout is a softmax over answers") {
  const auto V = Tensor<double>::from_values(Shape{2, 3}, {1, 0, 0, 0, 1, 0});
  const Readout<double> readout(V);
  const auto r = Tensor<double>::from_values(Shape{1, 3}, {std::log(3.0), 0.0, 5.0});
  const auto p = readout.predict(r).value();
  CHECK(p(0, 0) == doctest::Approx(0.75));
  CHECK(p(0, 1) == doctest::Approx(0.25));
  CHECK_THROWS_AS(readout.predict(Tensor<double>(Shape{1, 2})), DimensionError);
}

TEST_CASE("baseline relation network pools over all memories") {
  std::mt19937_64 rng(56);
  ParameterStore<double> store;
  auto net = random_relation(store, 2, false, PairMode::ordered, rng);
  const auto m = wt::random_tensor(Shape{5, 2}, rng);
  const auto q = wt::random_tensor(Shape{1, 2}, rng);
  CHECK(baseline_rn_full(m, q, net).value() == net.pool(m, q).value());
  CHECK(net.pair_evaluations() == 50);
}
