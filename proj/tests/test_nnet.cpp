#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <fstream>

#include "raydet/mlp.hpp"
#include "raydet/params.hpp"
#include "raydet/tape.hpp"
#include "support.hpp"

using namespace raydet;
using namespace raydet::nn;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("nnet") {

TEST_CASE("positional encoding with zero frequencies is the identity") {
  std::vector<double> x = {0.3, -1.2, 7.0};
  std::vector<double> enc = positional_encode(x, 0);
  CHECK(enc == x);
}

TEST_CASE("positional encoding of the zero vector") {
  std::vector<double> enc = positional_encode({0.0, 0.0}, 3);
  REQUIRE(int(enc.size()) == positional_width(2, 3));
  CHECK(enc[0] == 0.0);
  CHECK(enc[1] == 0.0);
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < 2; ++i) {
      CHECK(enc[2 + f * 4 + i * 2] == 0.0);      // sines
      CHECK(enc[2 + f * 4 + i * 2 + 1] == 1.0);  // cosines
    }
}

TEST_CASE("positional encoding matches direct evaluation") {
  Rng rng(20, streams::kTestData);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    int freqs = 5;
    std::vector<double> enc = positional_encode(x, freqs);
    int k = 3;
    for (int f = 0; f < freqs; ++f) {
      double scale = std::pow(2.0, f) * M_PI;
      for (int i = 0; i < 3; ++i) {
        CHECK(enc[k++] == doctest::Approx(std::sin(scale * x[i])).epsilon(1e-15));
        CHECK(enc[k++] == doctest::Approx(std::cos(scale * x[i])).epsilon(1e-15));
      }
    }
    // the batched variant agrees with the scalar one
    Tensor cols = positional_encode_cols(x.data(), 3, 1, freqs);
    for (std::size_t i = 0; i < enc.size(); ++i) CHECK(cols.data[i] == enc[i]);
  }
}

TEST_CASE("zero-weight heads produce their closed-form constants") {
  MlpConfig cfg;
  cfg.input_width = 7;
  cfg.hidden_widths = {8, 8};
  cfg.output_width = 4;
  cfg.output = OutputActivation::None;
  Mlp mlp("m", cfg);
  ParamStore store(0);
  mlp.ensure_params(store);
  for (auto& [name, t] : store.all_mutable()) t.fill(0.0);

  Rng rng(21, streams::kTestData);
  Tape tape;
  NodeId x = tape.input(random_tensor(7, 5, rng));
  NodeId y = mlp.apply(tape, store, x);
  const Tensor& yv = tape.value(y);
  for (double v : yv.data) CHECK(v == 0.0);

  // softplus(0) = ln 2, sigmoid(0) = 0.5, softmax uniform
  Tape t2;
  NodeId z = t2.input(Tensor(4, 3));
  const Tensor& sp = t2.value(t2.softplus(z));
  for (double v : sp.data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const Tensor& sg = t2.value(t2.sigmoid(z));
  for (double v : sg.data) CHECK(v == 0.5);
  const Tensor& sm = t2.value(t2.softmax_cols(z));
  for (double v : sm.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("pointwise maps are permutation equivariant over the batch") {
  MlpConfig cfg;
  cfg.input_width = 5;
  cfg.hidden_widths = {16};
  cfg.output_width = 3;
  cfg.output = OutputActivation::Sigmoid;
  Mlp mlp("perm", cfg);
  ParamStore store(99);
  mlp.ensure_params(store);
  Rng rng(22, streams::kTestData);
  Tensor batch = random_tensor(5, 8, rng);
  Tensor permuted(5, 8);
  std::vector<int> perm = {3, 1, 7, 0, 5, 2, 6, 4};
  for (int c = 0; c < 8; ++c)
    for (int r = 0; r < 5; ++r) permuted.at(r, c) = batch.at(r, perm[c]);

  Tape tape;
  const Tensor& ya = tape.value(mlp.apply(tape, store, tape.input(batch)));
  Tape tape2;
  const Tensor& yb = tape2.value(mlp.apply(tape2, store, tape2.input(permuted)));
  for (int c = 0; c < 8; ++c)
    for (int r = 0; r < 3; ++r) CHECK(yb.at(r, c) == ya.at(r, perm[c]));
}

TEST_CASE("softmax is invariant to a constant logit shift") {
  Rng rng(23, streams::kTestData);
  Tensor logits = random_tensor(6, 4, rng);
  Tensor shifted = logits;
  for (double& v : shifted.data) v += 11.5;
  Tape tape;
  const Tensor& a = tape.value(tape.softmax_cols(tape.input(logits)));
  const Tensor& b = tape.value(tape.softmax_cols(tape.input(shifted)));
  for (std::size_t k = 0; k < a.size(); ++k)
    CHECK(a.data[k] == doctest::Approx(b.data[k]).epsilon(1e-12));
}

TEST_CASE("sum of parameters has unit gradients") {
  ParamStore store(7);
  store.create_weight("p", 9, 1);
  Tape tape;
  NodeId p = tape.param(store.value("p"), &store.grad("p"));
  Tensor ones(9, 1);
  ones.fill(1.0);
  NodeId total = tape.linear(p, tape.input(std::move(ones)));
  store.zero_grads();
  tape.backward(total);
  for (double g : store.grad("p").data) CHECK(g == 1.0);
}

TEST_CASE("zero-weighted loss produces zero gradients") {
  ParamStore store(8);
  store.create_weight("p", 4, 2);
  Rng rng(24, streams::kTestData);
  Tape tape;
  NodeId p = tape.param(store.value("p"), &store.grad("p"));
  NodeId y = tape.relu(p);
  NodeId loss = tape.mse_loss(y, random_tensor(4, 2, rng));
  NodeId scaled = tape.weighted_sum_scalars({loss}, {0.0});
  store.zero_grads();
  tape.backward(scaled);
  for (double g : store.grad("p").data) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape tape;
  NodeId x = tape.input(Tensor(3, 2));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("mlp gradients match central finite differences") {
  MlpConfig cfg;
  cfg.input_width = 6;
  cfg.hidden_widths = {10, 10};
  cfg.output_width = 3;
  SUBCASE("softplus head") { cfg.output = OutputActivation::Softplus; }
  SUBCASE("sigmoid head") { cfg.output = OutputActivation::Sigmoid; }
  SUBCASE("softmax head") { cfg.output = OutputActivation::Softmax; }

  Mlp mlp("fd", cfg);
  ParamStore store(31);
  mlp.ensure_params(store);
  Rng rng(25, streams::kTestData);
  Tensor x = random_tensor(6, 4, rng);
  Tensor target = random_tensor(3, 4, rng, 0.05, 0.95);

  auto loss = [&](ParamStore& s) {
    Tape tape;
    NodeId y = mlp.apply(tape, s, tape.input(x));
    return tape.value(tape.mse_loss(y, target)).data[0];
  };
  auto grads = [&](ParamStore& s) {
    Tape tape;
    NodeId y = mlp.apply(tape, s, tape.input(x));
    tape.backward(tape.mse_loss(y, target));
  };
  auto res = test::finite_diff_check(store, loss, grads);
  CHECK(res.checked > 100);
  CHECK_MESSAGE(res.worst_rel <= 1e-4, res.worst_name);
}

TEST_CASE("the gradient checker flags a planted backward error") {
  MlpConfig cfg;
  cfg.input_width = 4;
  cfg.hidden_widths = {6};
  cfg.output_width = 2;
  cfg.output = OutputActivation::Sigmoid;
  Mlp mlp("nc", cfg);
  ParamStore store(12);
  mlp.ensure_params(store);
  Rng rng(28, streams::kTestData);
  Tensor x = random_tensor(4, 3, rng);
  Tensor target = random_tensor(2, 3, rng, 0.1, 0.9);

  auto loss = [&](ParamStore& s) {
    Tape tape;
    return tape.value(tape.mse_loss(mlp.apply(tape, s, tape.input(x)), target)).data[0];
  };
  auto broken_grads = [&](ParamStore& s) {
    Tape tape;
    tape.backward(tape.mse_loss(mlp.apply(tape, s, tape.input(x)), target));
    s.grad("nc.w0").data[3] += 1e-3;  // planted error
  };
  auto res = test::finite_diff_check(store, loss, broken_grads);
  CHECK(res.worst_rel > 1e-4);
  CHECK(res.worst_name == "nc.w0[3]");
}

TEST_CASE("identical seeds give bit-identical parameters, outputs, gradients") {
  MlpConfig cfg;
  cfg.input_width = 4;
  cfg.hidden_widths = {8};
  cfg.output_width = 2;
  cfg.output = OutputActivation::Softplus;
  Mlp mlp("det", cfg);

  ParamStore a(42), b(42);
  mlp.ensure_params(a);
  mlp.ensure_params(b);
  for (const auto& [name, t] : a.all()) {
    const Tensor& u = b.value(name);
    REQUIRE(t.size() == u.size());
    for (std::size_t k = 0; k < t.size(); ++k) CHECK(t.data[k] == u.data[k]);
  }

  Rng rng(26, streams::kTestData);
  Tensor x = random_tensor(4, 3, rng);
  Tensor target = random_tensor(2, 3, rng);
  auto run = [&](ParamStore& s, Tensor& out_grad) {
    Tape tape;
    NodeId y = mlp.apply(tape, s, tape.input(x));
    s.zero_grads();
    tape.backward(tape.mse_loss(y, target));
    out_grad = s.grad("det.w0");
    return tape.value(y);
  };
  Tensor ga, gb;
  Tensor ya = run(a, ga), yb = run(b, gb);
  for (std::size_t k = 0; k < ya.size(); ++k) CHECK(ya.data[k] == yb.data[k]);
  for (std::size_t k = 0; k < ga.size(); ++k) CHECK(ga.data[k] == gb.data[k]);
}

TEST_CASE("a small gradient step decreases a smooth loss") {
  MlpConfig cfg;
  cfg.input_width = 5;
  cfg.hidden_widths = {12};
  cfg.output_width = 2;
  cfg.output = OutputActivation::Sigmoid;
  Mlp mlp("gd", cfg);
  ParamStore store(17);
  mlp.ensure_params(store);
  Rng rng(27, streams::kTestData);
  Tensor x = random_tensor(5, 16, rng);
  Tensor target = random_tensor(2, 16, rng, 0.1, 0.9);

  auto eval = [&]() {
    Tape tape;
    NodeId y = mlp.apply(tape, store, tape.input(x));
    return tape.value(tape.mse_loss(y, target)).data[0];
  };
  double before = eval();
  {
    Tape tape;
    NodeId y = mlp.apply(tape, store, tape.input(x));
    store.zero_grads();
    tape.backward(tape.mse_loss(y, target));
  }
  SgdOptimizer opt(1e-3, 0.0);
  opt.step(store);
  CHECK(eval() < before);
}

TEST_CASE("checkpoint bytes round trip") {
  ParamStore store(5);
  store.create_weight("a.w", 3, 4);
  store.create_zeros("a.b", 4, 1);
  Checkpoint ck;
  ck.f64 = store.all();
  ck.u64["meta.iteration"] = {123};
  ck.u64["meta.rng"] = {0xdeadbeefULL, 77};

  std::string path = std::filesystem::temp_directory_path() / "raydet_ck_test.bin";
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  REQUIRE(back.f64.count("a.w") == 1);
  for (std::size_t k = 0; k < ck.f64["a.w"].size(); ++k)
    CHECK(back.f64["a.w"].data[k] == ck.f64["a.w"].data[k]);
  CHECK(back.u64["meta.iteration"][0] == 123);
  CHECK(back.u64["meta.rng"][1] == 77);

  // re-saving yields byte-identical files
  std::string path2 = std::filesystem::temp_directory_path() / "raydet_ck_test2.bin";
  back.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
}

}  // TEST_SUITE
