#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "powlu/network.hpp"
#include "test_helpers.hpp"

using Catch::Approx;
using namespace powlu;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

double weighted_sum(const Matrix& a, const Matrix& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += a.values()[i] * w.values()[i];
  return acc;
}

// central finite difference of L = sum(upstream .* forward(x)) wrt one entry
template <typename Forward>
double fd_entry(Matrix& m, std::size_t idx, const Matrix& upstream,
                Forward&& forward, double h) {
  const double saved = m.values()[idx];
  m.values()[idx] = saved + h;
  const double up = weighted_sum(forward(), upstream);
  m.values()[idx] = saved - h;
  const double down = weighted_sum(forward(), upstream);
  m.values()[idx] = saved;
  return (up - down) / (2.0 * h);
}

double max_grad_err(const Matrix& analytic, Matrix& param,
                    const Matrix& upstream,
                    const std::function<Matrix()>& forward, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double fd = fd_entry(param, i, upstream, forward, h);
    worst = std::max(worst, powlu_test::rel_err(analytic.values()[i], fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul basics") {
  const Matrix id = from_rows({{1, 0}, {0, 1}});
  const Matrix m = from_rows({{3, -1}, {2, 5}});
  REQUIRE(matmul(id, m) == m);

  const Matrix a = from_rows({{1, 2}, {3, 4}});
  const Matrix b = from_rows({{5}, {6}});
  const Matrix ab = matmul(a, b);
  REQUIRE(ab.rows() == 2);
  REQUIRE(ab.cols() == 1);
  REQUIRE(ab(0, 0) == 17.0);
  REQUIRE(ab(1, 0) == 39.0);

  const Matrix empty_left(3, 0);
  const Matrix empty_right(0, 4);
  const Matrix z = matmul(empty_left, empty_right);
  REQUIRE(z.rows() == 3);
  REQUIRE(z.cols() == 4);
  for (double v : z.values()) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(matmul(a, from_rows({{1, 2, 3}})), std::invalid_argument);
}

TEST_CASE("ffn forward reduces to the scalar pair form") {
  std::mt19937_64 rng(7);
  GluFfnBlock zero = GluFfnBlock::init(4, 8, ActivationKind::swiglu(), rng);
  for (double& v : zero.w_gate.values()) v = 0.0;
  for (double& v : zero.w_up.values()) v = 0.0;
  for (double& v : zero.w_down.values()) v = 0.0;
  const Matrix x = uniform_matrix(3, 4, -1.0, 1.0, rng);
  const Matrix y = zero.forward(x);
  for (double v : y.values()) REQUIRE(v == 0.0);

  GluFfnBlock unit;
  unit.w_gate = Matrix(1, 1, 1.0);
  unit.w_up = Matrix(1, 1, 1.0);
  unit.w_down = Matrix(1, 1, 1.0);
  unit.gate_bias = Matrix(1, 1, 0.0);
  unit.kind = ActivationKind::swiglu();
  REQUIRE(unit.forward(Matrix(1, 1, 1.0))(0, 0) ==
          Approx(0.7310585786300049).epsilon(1e-12));

  unit.kind = ActivationKind::powlu(3.0);
  REQUIRE(unit.forward(Matrix(1, 1, 4.0))(0, 0) ==
          Approx(15.712220640606535).epsilon(1e-12));

  REQUIRE_THROWS_AS(unit.forward(Matrix(1, 2, 1.0)), std::invalid_argument);
}

TEST_CASE("ffn backward: zero upstream and the scalar chain rule") {
  GluFfnBlock unit;
  unit.w_gate = Matrix(1, 1, 1.0);
  unit.w_up = Matrix(1, 1, 1.0);
  unit.w_down = Matrix(1, 1, 1.0);
  unit.gate_bias = Matrix(1, 1, 0.0);
  unit.kind = ActivationKind::swiglu();

  FfnCache cache;
  unit.forward(Matrix(1, 1, 1.0), &cache);
  const FfnGrads zero = unit.backward(cache, Matrix(1, 1, 0.0));
  for (const Matrix* g :
       {&zero.x, &zero.w_gate, &zero.w_up, &zero.w_down, &zero.gate_bias})
    for (double v : g->values()) REQUIRE(v == 0.0);

  // with unit weights y = x * SiLU(x), so dy/dx = SiLU(1) + SiLU'(1)
  const FfnGrads g = unit.backward(cache, Matrix(1, 1, 1.0));
  REQUIRE(g.x(0, 0) == Approx(0.7310585786300049 + 0.9276705118714867)
                           .epsilon(1e-12));
  const double fd = fd_entry(
      cache.x, 0, Matrix(1, 1, 1.0),
      [&] { return unit.forward(cache.x); }, 1e-6);
  REQUIRE(powlu_test::rel_err(g.x(0, 0), fd) < 1e-6);
  // fc1_dy carries [grad_x1 | grad_x2]
  REQUIRE(g.fc1_dy.cols() == 2);
  REQUIRE(g.fc1_dy(0, 0) == Approx(silu(1.0)).epsilon(1e-12));
}

TEST_CASE("ffn gradients match finite differences for every kind") {
  for (double m : {2.0, 3.0, 4.0}) {
    for (const ActivationKind& kind : powlu_test::all_kinds(m)) {
      for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        std::mt19937_64 rng(seed);
        GluFfnBlock block = GluFfnBlock::init(8, 16, kind, rng);
        Matrix x = uniform_matrix(4, 8, -2.0, 2.0, rng);
        const Matrix upstream = uniform_matrix(4, 8, -1.0, 1.0, rng);

        FfnCache cache;
        block.forward(x, &cache);
        const FfnGrads grads = block.backward(cache, upstream);

        const auto forward = [&] { return block.forward(x); };
        const double h = 1e-5;
        INFO("kind " << kind.label() << " m=" << m << " seed=" << seed);
        REQUIRE(max_grad_err(grads.w_gate, block.w_gate, upstream, forward, h) < 1e-4);
        REQUIRE(max_grad_err(grads.w_up, block.w_up, upstream, forward, h) < 1e-4);
        REQUIRE(max_grad_err(grads.w_down, block.w_down, upstream, forward, h) < 1e-4);
        REQUIRE(max_grad_err(grads.gate_bias, block.gate_bias, upstream, forward, h) < 1e-4);
        REQUIRE(max_grad_err(grads.x, x, upstream, forward, h) < 1e-4);
      }
    }
  }
}

TEST_CASE("negative gate orthant: PowLU and SwiGLU networks agree bitwise") {
  std::mt19937_64 rng(11);
  GluFfnBlock a = GluFfnBlock::init(8, 16, ActivationKind::powlu(3.0), rng);
  for (double& v : a.w_gate.values()) v *= 0.05;
  for (double& v : a.gate_bias.values()) v = -6.0;
  GluFfnBlock b = a;
  b.kind = ActivationKind::swiglu();

  const Matrix x = uniform_matrix(5, 8, -2.0, 2.0, rng);
  const Matrix upstream = uniform_matrix(5, 8, -1.0, 1.0, rng);

  FfnCache ca, cb;
  const Matrix ya = a.forward(x, &ca);
  const Matrix yb = b.forward(x, &cb);
  for (double v : ca.x2.values()) REQUIRE(v <= 0.0);  // regime check
  REQUIRE(ya == yb);
  const FfnGrads ga = a.backward(ca, upstream);
  const FfnGrads gb = b.backward(cb, upstream);
  REQUIRE(ga.x == gb.x);
  REQUIRE(ga.w_gate == gb.w_gate);
  REQUIRE(ga.w_up == gb.w_up);
  REQUIRE(ga.w_down == gb.w_down);
}

TEST_CASE("moe routing: single expert, tie-break, and conservation") {
  std::mt19937_64 rng(3);
  MoeLayer single = MoeLayer::init(4, 8, 1, ActivationKind::swiglu(), rng);
  const Matrix x = uniform_matrix(6, 4, -1.0, 1.0, rng);
  std::vector<int> routing;
  const Matrix y = single.forward(x, nullptr, &routing);
  // softmax over one logit is 1: y = shared(x) + expert0(x)
  const Matrix expected = add(single.shared_expert.forward(x),
                              single.experts[0].forward(x));
  REQUIRE(y == expected);
  for (int r : routing) REQUIRE(r == 0);

  // zero router weights: equal logits, expert 0 wins the tie at weight 0.5
  MoeLayer two = MoeLayer::init(4, 8, 2, ActivationKind::swiglu(), rng);
  for (double& v : two.router.values()) v = 0.0;
  MoeCache cache;
  const Matrix y2 = two.forward(x, &cache, &routing);
  for (int r : routing) REQUIRE(r == 0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    REQUIRE(cache.softmax(i, 0) == 0.5);

  // top-1 exactness: expert assignment counts sum to the token count
  MoeLayer routed = MoeLayer::init(4, 8, 3, ActivationKind::powlu(3.0), rng);
  const Matrix xb = uniform_matrix(17, 4, -2.0, 2.0, rng);
  routed.forward(xb, nullptr, &routing);
  REQUIRE(routing.size() == 17);
  std::size_t counted = 0;
  for (int e = 0; e < 3; ++e)
    counted += std::size_t(std::count(routing.begin(), routing.end(), e));
  REQUIRE(counted == 17);
}

TEST_CASE("moe gradients match finite differences, router included") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    MoeLayer layer = MoeLayer::init(8, 16, 2, ActivationKind::powlu(3.0), rng);
    Matrix x = uniform_matrix(4, 8, -2.0, 2.0, rng);
    const Matrix upstream = uniform_matrix(4, 8, -1.0, 1.0, rng);

    MoeCache cache;
    layer.forward(x, &cache);
    const MoeGrads grads = layer.backward(cache, upstream);

    const auto forward = [&] { return layer.forward(x); };
    const double h = 1e-5;
    INFO("seed " << seed);
    REQUIRE(max_grad_err(grads.router, layer.router, upstream, forward, h) < 1e-4);
    REQUIRE(max_grad_err(grads.shared.w_gate, layer.shared_expert.w_gate,
                         upstream, forward, h) < 1e-4);
    REQUIRE(max_grad_err(grads.shared.w_down, layer.shared_expert.w_down,
                         upstream, forward, h) < 1e-4);
    for (std::size_t e = 0; e < 2; ++e) {
      REQUIRE(max_grad_err(grads.experts[e].w_gate, layer.experts[e].w_gate,
                           upstream, forward, h) < 1e-4);
      REQUIRE(max_grad_err(grads.experts[e].w_up, layer.experts[e].w_up,
                           upstream, forward, h) < 1e-4);
    }
    REQUIRE(max_grad_err(grads.x, x, upstream, forward, h) < 1e-4);
  }
}

TEST_CASE("adam: zero grad no-op, unit first step, determinism") {
  Matrix p(1, 1, 1.0);
  AdamState st;
  adam_step(p, Matrix(1, 1, 0.0), st, AdamConfig{}, 1);
  REQUIRE(p(0, 0) == 1.0);

  // bias-corrected first step moves by ~lr regardless of gradient scale
  Matrix q(1, 1, 1.0);
  AdamState st2;
  adam_step(q, Matrix(1, 1, 1.0), st2, AdamConfig{0.1, 0.9, 0.999, 1e-8}, 1);
  REQUIRE(q(0, 0) == Approx(1.0 - 0.09999999900000002).epsilon(1e-12));

  Matrix two(1, 2, 0.7);
  const Matrix g = Matrix(1, 2, 0.3);
  AdamState st3;
  adam_step(two, g, st3, AdamConfig{}, 1);
  REQUIRE(two(0, 0) == two(0, 1));  // identical params, identical updates

  REQUIRE_THROWS_AS(adam_step(two, Matrix(2, 2, 0.0), st3, AdamConfig{}, 2),
                    std::invalid_argument);
}

TEST_CASE("forward and backward are deterministic") {
  std::mt19937_64 rng_a(42), rng_b(42);
  const GluFfnBlock a = GluFfnBlock::init(8, 16, ActivationKind::powlu(3.0), rng_a);
  const GluFfnBlock b = GluFfnBlock::init(8, 16, ActivationKind::powlu(3.0), rng_b);
  REQUIRE(a.w_gate == b.w_gate);
  REQUIRE(a.w_up == b.w_up);
  REQUIRE(a.w_down == b.w_down);

  std::mt19937_64 rng_x(1);
  const Matrix x = uniform_matrix(4, 8, -1.0, 1.0, rng_x);
  FfnCache c1, c2;
  REQUIRE(a.forward(x, &c1) == a.forward(x, &c2));
  const Matrix up(4, 8, 0.25);
  const FfnGrads g1 = a.backward(c1, up);
  const FfnGrads g2 = a.backward(c2, up);
  REQUIRE(g1.w_gate == g2.w_gate);
  REQUIRE(g1.x == g2.x);
}

TEST_CASE("non-finite detection") {
  Matrix m(2, 2, 1.0);
  REQUIRE(all_finite(m));
  m(1, 1) = std::numeric_limits<double>::infinity();
  REQUIRE(!all_finite(m));
  REQUIRE_THROWS_AS(require_finite(m, "test tensor"), NumericError);
}
