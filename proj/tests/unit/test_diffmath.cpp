#include <cmath>

#include "doctest.h"
#include "fd.hpp"
#include "hpm/diffmath/ops.hpp"
#include "hpm/diffmath/optim.hpp"
#include "hpm/error.hpp"

using namespace hpm;
using namespace hpm::diff;

namespace {

// Weighted sum so every output entry reaches the gradient.
Var weighted(Var y, const Tensor& w) { return sum(mul(y, y.tape().constant(w))); }

}  // namespace

TEST_CASE("tensor shape contract") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  Parameter p(t);
  CHECK(p.grad.shape() == p.value.shape());
}

TEST_CASE("matmul values and shape errors") {
  Tape tape(false);
  const Var eye = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Var m = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(matmul(eye, m).value() == m.value());
  const Var a = tape.constant(Tensor::matrix(1, 2, {1, 0}));
  const Var b = tape.constant(Tensor::matrix(2, 1, {0, 5}));
  CHECK(matmul(a, b).value()[0] == 0.0);
  try {
    matmul(tape.constant(Tensor({3, 4})), tape.constant(Tensor({3, 2})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3x4]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("finite differences agree with every backward rule") {
  Rng rng(17);
  struct Case {
    const char* name;
    std::vector<Shape> in;
    Shape out;
    std::function<Var(std::vector<Var>&)> f;
    double tol;
  };
  const std::vector<std::size_t> ids{1, 1, 0, 2};
  const std::vector<Case> cases{
      {"matmul", {{3, 4}, {4, 2}}, {3, 2}, [](auto& v) { return matmul(v[0], v[1]); }, 1e-6},
      {"add", {{2, 3}, {2, 3}}, {2, 3}, [](auto& v) { return add(v[0], v[1]); }, 1e-6},
      {"sub", {{2, 3}, {2, 3}}, {2, 3}, [](auto& v) { return sub(v[0], v[1]); }, 1e-6},
      {"mul", {{2, 3}, {2, 3}}, {2, 3}, [](auto& v) { return mul(v[0], v[1]); }, 1e-6},
      {"scale", {{2, 3}}, {2, 3}, [](auto& v) { return scale(v[0], 0.3); }, 1e-6},
      {"add_row", {{2, 3}, {3}}, {2, 3}, [](auto& v) { return add_row(v[0], v[1]); }, 1e-6},
      {"mean", {{2, 3}}, {1}, [](auto& v) { return mean(v[0]); }, 1e-6},
      {"row_mean", {{2, 3}}, {2, 1}, [](auto& v) { return row_mean(v[0]); }, 1e-6},
      {"layer_norm", {{2, 8}, {8}, {8}}, {2, 8},
       [](auto& v) { return layer_norm(v[0], v[1], v[2], 1e-6); }, 1e-5},
      {"gelu", {{2, 3}}, {2, 3}, [](auto& v) { return gelu(v[0]); }, 1e-5},
      {"logistic", {{2, 3}}, {2, 3}, [](auto& v) { return logistic(v[0]); }, 1e-5},
      {"log_logistic", {{2, 3}}, {2, 3}, [](auto& v) { return log_logistic(v[0]); }, 1e-5},
      {"softplus", {{2, 3}}, {2, 3}, [](auto& v) { return softplus(v[0]); }, 1e-5},
      {"l2_normalize_rows", {{3, 4}}, {3, 4}, [](auto& v) { return l2_normalize_rows(v[0], 1e-6); }, 1e-5},
      {"softmax_rows", {{1, 5}}, {1, 5}, [](auto& v) { return softmax_rows(v[0]); }, 1e-5},
      {"gather_rows", {{3, 2}}, {4, 2}, [&ids](auto& v) { return gather_rows(v[0], ids); }, 1e-6},
      {"concat_rows", {{1, 3}, {2, 3}}, {3, 3}, [](auto& v) { return concat_rows(v[0], v[1]); }, 1e-6},
      {"attention", {{4, 4}, {4, 4}, {4, 4}}, {4, 4},
       [](auto& v) { return attention(v[0], v[1], v[2], 2, 2); }, 1e-5},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    std::vector<Parameter> leaves;
    for (const auto& s : c.in) leaves.emplace_back(fd::random(s, rng, -2.0, 2.0));
    const Tensor w = fd::random(c.out, rng);
    CHECK(fd::max_rel_error([&](Tape&, std::vector<Var>& v) { return weighted(c.f(v), w); }, leaves) <
          c.tol);
  }
}

TEST_CASE("normalize-then-match gradient") {
  Rng rng(3);
  std::vector<Parameter> leaves{Parameter(fd::random({3, 4}, rng))};
  const Tensor t = fd::random({3, 4}, rng);
  auto f = [&](Tape& tape, std::vector<Var>& v) {
    const Var d = sub(l2_normalize_rows(v[0], 1e-6), tape.constant(t));
    return sum(mul(d, d));
  };
  CHECK(fd::max_rel_error(f, leaves) < 1e-5);
}

TEST_CASE("layer norm special rows") {
  Tape tape(false);
  const Var g = tape.constant(Tensor({3}, 1.0)), b = tape.constant(Tensor({3}));
  const Tensor flat = layer_norm(tape.constant(Tensor::matrix(1, 3, {5, 5, 5})), g, b, 1e-6).value();
  for (double v : flat.values()) CHECK(v == 0.0);
  const Var g2 = tape.constant(Tensor({2}, 1.0)), b2 = tape.constant(Tensor({2}));
  const Tensor unit = layer_norm(tape.constant(Tensor::matrix(1, 2, {1, -1})), g2, b2, 1e-14).value();
  CHECK(unit[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(unit[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("activation values") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(std::abs(gelu_value(20.0) - 20.0) < 1e-8);
  CHECK(stable_logistic(0.0) == 0.5);
  Tape tape(false);
  const Tensor ll = log_logistic(tape.constant(Tensor::scalar(-100.0))).value();
  CHECK(std::abs(ll[0] + 100.0) < 1e-6);
  const Tensor big = logistic(tape.constant(Tensor::matrix(1, 2, {-800, 800}))).value();
  CHECK(big.all_finite());
  CHECK(big[0] >= 0.0);
  CHECK(big[1] <= 1.0);

  Parameter z(Tensor::scalar(0.0));
  Tape t2;
  t2.backward(logistic(t2.param(z)));
  CHECK(z.grad[0] == doctest::Approx(0.25).epsilon(1e-12));

  Parameter x(Tensor::scalar(0.5));
  std::vector<Parameter> leaves{x};
  CHECK(fd::max_rel_error([](Tape&, std::vector<Var>& v) { return sum(gelu(v[0])); }, leaves) < 1e-5);
}

TEST_CASE("l2 normalization and softmax invariants") {
  Tape tape(false);
  const Tensor n = l2_normalize_rows(tape.constant(Tensor::matrix(2, 2, {3, 4, 0, 0})), 1e-6).value();
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(n[2] == 0.0);
  CHECK(n[3] == 0.0);

  const Tensor s = softmax_rows(tape.constant(Tensor::matrix(2, 2, {0, 0, 1000, 0}))).value();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  CHECK(std::abs(s[2] - 1.0) < 1e-12);
  CHECK(std::abs(s[3]) < 1e-12);

  Rng rng(5);
  const Tensor r = softmax_rows(tape.constant(fd::random({6, 7}, rng, -30, 30))).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double total = 0.0;
    for (double v : r.row(i)) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  const Tensor u = l2_normalize_rows(tape.constant(fd::random({6, 7}, rng)), 1e-12).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double sq = 0.0;
    for (double v : u.row(i)) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
  }
}

TEST_CASE("gather rows") {
  Tape tape;
  Parameter x(Tensor::matrix(3, 2, {0, 1, 10, 11, 20, 21}));
  const Var xv = tape.param(x);
  const std::vector<std::size_t> pick{2, 0};
  CHECK(gather_rows(xv, pick).value() == Tensor::matrix(2, 2, {20, 21, 0, 1}));
  const std::vector<std::size_t> same{0, 1, 2};
  CHECK(gather_rows(xv, same).value() == x.value);
  const std::vector<std::size_t> dup{1, 1};
  tape.backward(sum(gather_rows(xv, dup)));
  CHECK(x.grad == Tensor::matrix(3, 2, {0, 0, 2, 2, 0, 0}));
  const std::vector<std::size_t> bad{0, 7};
  try {
    gather_rows(xv, bad);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find('7') != std::string::npos);
  }
}

TEST_CASE("attention is confined to its segment") {
  Rng rng(8);
  Tensor q = fd::random({6, 4}, rng), k = fd::random({6, 4}, rng), v = fd::random({6, 4}, rng);
  Tape tape(false);
  const Tensor a = attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, 3).value();
  for (std::size_t c = 0; c < 4; ++c) {
    k.at(4, c) += 1.0;
    v.at(5, c) -= 2.0;
  }
  const Tensor b = attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, 3).value();
  for (std::size_t i = 0; i < 3 * 4; ++i) CHECK(a[i] == b[i]);
  CHECK_THROWS_AS(attention(tape.constant(q), tape.constant(k), tape.constant(v), 3, 3), ContractError);
}

TEST_CASE("backward contract") {
  Parameter x(Tensor({2, 3}, 0.7));
  {
    Tape tape;
    tape.backward(sum(tape.param(x)));
  }
  for (double g : x.grad.values()) CHECK(g == 1.0);

  Parameter y(Tensor::scalar(3.0));
  Tape tape;
  const Var yv = tape.param(y);
  tape.backward(mul(yv, yv));
  CHECK(y.grad[0] == 6.0);
  // Gradients accumulate until the caller resets them.
  tape.backward(mul(yv, yv));
  CHECK(y.grad[0] == 12.0);

  CHECK_THROWS_AS(tape.backward(tape.param(x)), ContractError);
}

TEST_CASE("backward is deterministic") {
  Rng rng(4);
  Parameter a(fd::random({4, 5}, rng)), b(fd::random({5, 3}, rng));
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    tape.backward(sum(softplus(matmul(tape.param(a), tape.param(b)))));
    return std::make_pair(a.grad, b.grad);
  };
  CHECK(run() == run());
}

TEST_CASE("fault injection breaks the named rule only") {
  Rng rng(6);
  std::vector<Parameter> leaves{Parameter(fd::random({2, 3}, rng))};
  auto f = [](Tape&, std::vector<Var>& v) { return sum(gelu(v[0])); };
  inject_backward_fault("softplus");
  CHECK(fd::max_rel_error(f, leaves) < 1e-5);
  inject_backward_fault("gelu");
  CHECK(fd::max_rel_error(f, leaves) > 1e-2);
  inject_backward_fault("");
  CHECK(fd::max_rel_error(f, leaves) < 1e-5);
}

TEST_CASE("adamw updates") {
  Parameter p(Tensor::matrix(1, 2, {1.0, -2.0}));
  std::vector<Parameter*> ps{&p};
  OptimizerState still;
  still.config.weight_decay = 0.0;
  adamw_step(still, ps, 0.1);
  CHECK(p.value == Tensor::matrix(1, 2, {1.0, -2.0}));
  CHECK(still.step == 1);

  OptimizerState decay;
  decay.config.weight_decay = 0.1;
  adamw_step(decay, ps, 1.0);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p.value[1] == doctest::Approx(-1.8).epsilon(1e-15));
  const std::vector<bool> off{false};
  adamw_step(decay, ps, 1.0, off);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(decay.step == 2);
  CHECK(decay.first_moment[0].shape() == p.value.shape());
}

TEST_CASE("adamw matches a scalar reference recurrence") {
  Parameter p(Tensor::scalar(0.5));
  std::vector<Parameter*> ps{&p};
  OptimizerState st;
  const double lr = 0.01, b1 = 0.9, b2 = 0.95, eps = 1e-8, wd = 0.05;
  double x = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    p.grad = Tensor::scalar(1.0);
    adamw_step(st, ps, lr);
    x -= lr * wd * x;
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(std::abs(p.value[0] - x) < 1e-12);
  }
  Parameter wrong(Tensor({2}));
  std::vector<Parameter*> ws{&wrong};
  CHECK_THROWS_AS(adamw_step(st, ws, lr), DimensionError);
}

TEST_CASE("learning rate schedule") {
  LrSchedule s{1.5e-4, 256, 5.0, 100.0, 0.0};
  CHECK(lr_at(s, 5.0) == doctest::Approx(1.5e-4).epsilon(1e-15));
  s.batch_size = 512;
  CHECK(s.peak() == doctest::Approx(3.0e-4).epsilon(1e-15));
  CHECK(lr_at(s, 100.0) == doctest::Approx(0.0));
  CHECK(std::abs(lr_at(s, 100.0)) < 1e-18);
  CHECK(lr_at(s, 0.0) == 0.0);
  const double d = 1e-9;
  CHECK(std::abs(lr_at(s, 5.0 - d) - lr_at(s, 5.0 + d)) < 1e-12);
  CHECK_THROWS_AS(lr_at(s, -0.1), ContractError);
  CHECK_THROWS_AS(lr_at(s, 100.5), ContractError);
}
