#include <doctest.h>

#include <functional>

#include "ate/diff/adam.hpp"
#include "ate/diff/grad_check.hpp"
#include "ate/diff/nn.hpp"
#include "ate/errors.hpp"

using namespace ate;
using namespace ate::diff;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

// Deterministic projection so vector-valued graphs reduce to a scalar.
Var project(Tape& tape, Var y, uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(random_matrix(rng, y.rows(), y.cols()))));
}

struct Mlp {
  std::vector<Dense> layers;
  static Mlp create(ParamStore& store, std::vector<Eigen::Index> widths) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      m.layers.push_back(Dense::create(store, "l" + std::to_string(i), widths[i], widths[i + 1]));
    }
    return m;
  }
  Var operator()(Tape& t, const ParamStore& s, Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](t, s, x);
      if (i + 1 < layers.size()) x = tanh(x);
    }
    return x;
  }
};

}  // namespace

TEST_CASE("forward: identity graph returns its input") {
  Tape tape;
  Matrix x(1, 3);
  x << 1, 2, 3;
  Var in = tape.variable(x);
  CHECK(in.value() == x);
  CHECK(tape.size() == 1);
}

TEST_CASE("forward: dense layer with zero weights outputs its bias") {
  ParamStore store(3);
  Dense d = Dense::create(store, "d", 4, 2);
  store.assign("d.w", Matrix::Zero(4, 2));
  Matrix bias(1, 2);
  bias << 0.5, -1.5;
  store.assign("d.b", bias);
  Rng rng(1);
  Tape tape;
  Var y = d(tape, store, tape.constant(random_matrix(rng, 3, 4)));
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(y.value().row(r) == bias);
}

TEST_CASE("forward: same seed reproduces a 2-layer MLP output exactly") {
  Rng rng(5);
  const Matrix x = random_matrix(rng, 4, 3);
  auto run = [&] {
    ParamStore store(42);
    Mlp m = Mlp::create(store, {3, 8, 2});
    Tape tape;
    return Matrix(m(tape, store, tape.constant(x)).value());
  };
  CHECK(run() == run());
}

TEST_CASE("forward: shape mismatch names the offending operation") {
  Tape tape;
  Var a = tape.variable(Matrix::Ones(2, 3));
  Var b = tape.variable(Matrix::Ones(2, 3));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  ParamStore store;
  Dense d = Dense::create(store, "proj", 4, 2);
  try {
    d(tape, store, a);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("proj") != std::string::npos);
  }
}

TEST_CASE("backward: identity passes the output gradient through") {
  Tape tape;
  Var x = tape.variable(Matrix::Ones(1, 2));
  Matrix g(1, 2);
  g << 0.25, -4.0;
  tape.backward(x, g);
  CHECK(tape.grad(x) == g);
}

TEST_CASE("backward: sum of squares at (1,2) gives (2,4)") {
  Tape tape;
  Matrix xv(1, 2);
  xv << 1, 2;
  Var x = tape.variable(xv);
  tape.backward(sum(square(x)));
  const Matrix g = tape.grad(x);
  CHECK(g(0, 0) == 2.0);
  CHECK(g(0, 1) == 4.0);
}

TEST_CASE("backward: a consumed tape refuses a second sweep") {
  Tape tape;
  Var x = tape.variable(Matrix::Ones(1, 1));
  Var y = square(x);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
  CHECK_THROWS_AS(tape.variable(Matrix::Ones(1, 1)), UsageError);
}

TEST_CASE("backward: output_grad shape must equal output shape") {
  Tape tape;
  Var x = tape.variable(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x, Matrix::Ones(1, 2)), DimensionError);
}

TEST_CASE("backward: random 3-layer net matches central differences") {
  ParamStore store(11);
  Mlp m = Mlp::create(store, {5, 7, 6, 3});
  Rng rng(12);
  const Matrix x = random_matrix(rng, 4, 5);
  ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) { return project(t, m(t, s, in), 99); };
  const auto r = grad_check(g, store, x, 1e-4);
  INFO("worst: " << r.worst);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("grad_check: linear map is exact") {
  ParamStore store(2);
  Dense d = Dense::create(store, "lin", 3, 2);
  Rng rng(3);
  const Matrix x = random_matrix(rng, 5, 3);
  ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) { return project(t, d(t, s, in), 4); };
  CHECK(grad_check(g, store, x, 1e-4).max_relative_error < 1e-8);
  CHECK_THROWS_AS(grad_check(g, store, x, 0.0), NumericDomainError);
}

TEST_CASE("grad_check: softmax attention block") {
  ParamStore store(21);
  EncoderBlock b = EncoderBlock::create(store, "enc", 8, 2, 16);
  Rng rng(22);
  const Matrix x = random_matrix(rng, 2 * 5, 8);
  ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) {
    return project(t, b(t, s, in, 2), 23);
  };
  const auto r = grad_check(g, store, x, 1e-4);
  INFO("worst: " << r.worst);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("grad_check: layer norm at a non-degenerate input") {
  ParamStore store(31);
  LayerNorm ln = LayerNorm::create(store, "ln", 6);
  Rng rng(32);
  store.assign("ln.gamma", random_matrix(rng, 1, 6));
  store.assign("ln.beta", random_matrix(rng, 1, 6));
  const Matrix x = random_matrix(rng, 4, 6);
  ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) { return project(t, ln(t, s, in), 33); };
  CHECK(grad_check(g, store, x, 1e-4).max_relative_error < 1e-4);
}

TEST_CASE("grad_check: cross-attention decoder block") {
  ParamStore store(41);
  DecoderBlock b = DecoderBlock::create(store, "dec", 8, 2, 12);
  Rng rng(42);
  const Matrix memory = random_matrix(rng, 2 * 3, 8);
  const Matrix x = random_matrix(rng, 2 * 4, 8);
  ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) {
    return project(t, b(t, s, in, t.constant(memory), 2), 43);
  };
  CHECK(grad_check(g, store, x, 1e-4).max_relative_error < 1e-4);
}

// Every primitive against finite differences on 100 random instances.
TEST_CASE("property: chain-rule soundness for each primitive") {
  using Unary = std::function<Var(Tape&, Var, Var)>;
  struct Case {
    const char* name;
    Eigen::Index rows, cols;
    Unary f;
  };
  const std::vector<Case> cases = {
      {"matmul", 3, 4, [](Tape&, Var x, Var w) { return matmul(x, reshape(w, 4, 3)); }},
      {"add_row", 3, 4, [](Tape&, Var x, Var w) { return add_row(x, slice_cols(reshape(w, 1, 12), 0, 4)); }},
      {"mul", 3, 4, [](Tape&, Var x, Var w) { return mul(x, w); }},
      {"mul_col", 3, 4,
       [](Tape&, Var x, Var w) { return mul_col(x, select_rows(reshape(w, 12, 1), {0, 5, 11})); }},
      {"silu", 3, 4, [](Tape&, Var x, Var) { return silu(x); }},
      {"tanh", 3, 4, [](Tape&, Var x, Var) { return tanh(x); }},
      {"exp", 3, 4, [](Tape&, Var x, Var) { return exp(scale(x, 0.5)); }},
      {"square", 3, 4, [](Tape&, Var x, Var) { return square(x); }},
      {"row_sum", 3, 4, [](Tape&, Var x, Var) { return row_sum(x); }},
      {"mean", 3, 4, [](Tape&, Var x, Var w) { return mean(mul(x, w)); }},
      {"select_rows", 3, 4, [](Tape&, Var x, Var) { return select_rows(x, {2, 0, 2, 1}); }},
      {"concat", 3, 4,
       [](Tape&, Var x, Var w) {
         std::vector<Var> c{x, w};
         std::vector<Var> r{x, w};
         return add(concat_cols(c), reshape(concat_rows(r), 3, 8));
       }},
      {"layer_norm", 3, 4,
       [](Tape& t, Var x, Var w) {
         return layer_norm(mul(x, w), t.constant(Matrix::Constant(1, 4, 1.3)),
                           t.constant(Matrix::Constant(1, 4, -0.2)));
       }},
      {"attention", 4, 4, [](Tape&, Var x, Var w) { return attention(x, w, add(x, w), 2, 2); }},
  };
  Rng rng(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      ParamStore store(static_cast<uint64_t>(trial));
      store.add("w", random_matrix(rng, c.rows, c.cols));
      const Matrix x = random_matrix(rng, c.rows, c.cols);
      const uint64_t proj_seed = rng.next_u64();
      ScalarGraph g = [&](Tape& t, const ParamStore& s, Var in) {
        return project(t, c.f(t, in, t.param(s, "w")), proj_seed);
      };
      worst = std::max(worst, grad_check(g, store, x, 1e-4).max_relative_error);
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("zero-grad: parameters off the loss path get exact zeros") {
  ParamStore store(5);
  Dense used = Dense::create(store, "used", 3, 2);
  Dense::create(store, "unused", 3, 2);
  Tape tape;
  Var y = used(tape, store, tape.constant(Matrix::Ones(2, 3)));
  tape.backward(sum(y));
  const Gradients g = tape.param_grads(store);
  CHECK(g.at("unused.w").isZero(0.0));
  CHECK(g.at("unused.b").isZero(0.0));
  CHECK_FALSE(g.at("used.w").isZero(0.0));
}

TEST_CASE("frozen parameters receive no gradient but inputs do") {
  ParamStore store(5);
  Dense d = Dense::create(store, "d", 3, 2);
  Tape tape;
  tape.set_params_frozen(true);
  Var x = tape.variable(Matrix::Ones(1, 3));
  tape.backward(sum(d(tape, store, x)));
  CHECK(tape.param_grads(store).at("d.w").isZero(0.0));
  CHECK(tape.grad(x).isApprox(store.at("d.w").rowwise().sum().transpose()));
}

TEST_CASE("determinism: same seed, config and data give identical parameters after training") {
  Rng data_rng(8);
  const Matrix x = random_matrix(data_rng, 16, 4);
  const Matrix y = random_matrix(data_rng, 16, 2);
  auto train = [&] {
    ParamStore store(77);
    Mlp m = Mlp::create(store, {4, 16, 2});
    Adam opt(store, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 1e-4, 0.0});
    for (int step = 0; step < 50; ++step) {
      Tape tape;
      Var loss = mean(square(sub(m(tape, store, tape.constant(x)), tape.constant(y))));
      tape.backward(loss);
      opt.step(store, tape.param_grads(store));
    }
    return store.checksum();
  };
  CHECK(train() == train());
}

TEST_CASE("param store: unique names, fixed shapes, seeded init") {
  ParamStore a(9), b(9);
  a.add_glorot("w", 3, 4);
  b.add_glorot("w", 3, 4);
  CHECK(a.at("w") == b.at("w"));
  CHECK_THROWS_AS(a.add_zeros("w", 1, 1), UsageError);
  CHECK_THROWS_AS(a.assign("w", Matrix::Zero(4, 3)), DimensionError);
  CHECK(a.checksum() == b.checksum());
}

TEST_CASE("adam reduces a quadratic") {
  ParamStore store(1);
  store.add("x", Matrix::Constant(1, 3, 5.0));
  Adam opt(store, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0, 0.0});
  for (int i = 0; i < 300; ++i) {
    Tape tape;
    tape.backward(sum(square(tape.param(store, "x"))));
    opt.step(store, tape.param_grads(store));
  }
  CHECK(store.at("x").cwiseAbs().maxCoeff() < 0.05);
}
