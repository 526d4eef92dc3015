#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "pwseg/pwseg.hpp"
#include "test_util.hpp"

using namespace pwseg;

namespace {

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces an op's output to a scalar with a fixed random projection, then
// compares tape gradients against central differences for every input entry.
void check_gradients(const std::vector<Matrix>& inputs, const Build& op, double tol = 1e-6) {
  Rng r(99);
  Matrix proj;
  auto scalar = [&](Tape& t, const std::vector<Var>& vs) {
    const Var out = op(t, vs);
    if (proj.size() != out.value().size()) {
      proj = Matrix(out.rows(), out.cols());
      for (auto& v : proj.data) v = r.normal();
    }
    return ad::sum(ad::mul(out, t.constant(proj)));
  };
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(t.parameter(m));
  t.backward(scalar(t, vars));
  auto eval = [&](const std::vector<Matrix>& ms) {
    Tape s;
    std::vector<Var> vs;
    for (const auto& m : ms) vs.push_back(s.parameter(m));
    return scalar(s, vs).scalar();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      const double h = 1e-6;
      plus[k].data[i] += h;
      minus[k].data[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      ASSERT_NEAR(vars[k].grad().data[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " entry " << i;
    }
}

Matrix rand(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng g(seed);
  return oracle::random_matrix(g, r, c, scale);
}

}  // namespace

TEST(Autodiff, QuadraticGradient) {
  Tape t;
  const Var w = t.parameter(Matrix(1, 1, 5.0));
  const Var d = ad::add_scalar(w, -3.0);
  const Var loss = ad::mul(d, d);
  t.backward(loss);
  EXPECT_EQ(loss.scalar(), 4.0);
  EXPECT_DOUBLE_EQ(w.grad().data[0], 4.0);
}

TEST(Autodiff, SoftmaxSumHasZeroGradient) {
  Tape t;
  const Var x = t.parameter(rand(3, 5, 1));
  t.backward(ad::sum(ad::softmax_rows(x)));
  for (double g : x.grad().data) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Autodiff, SoftmaxMatchesOracle) {
  const Matrix x = rand(4, 6, 2, 3.0);
  Tape t;
  EXPECT_EQ(ad::softmax_rows(t.constant(x)).value().rows, 4u);
  const auto got = ad::softmax_rows(t.constant(x)).value(), want = oracle::softmax_rows(x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-14);
}

TEST(Autodiff, MatmulMatchesOracle) {
  const Matrix a = rand(3, 4, 3), b = rand(4, 5, 4);
  const Matrix c = la::matmul(a, b), o = oracle::matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data[i], o.data[i], 1e-14);
  EXPECT_EQ(kind_of([&] { la::matmul(a, a); }), ErrorKind::shape);
}

TEST(AutodiffFd, Matmul) {
  check_gradients({rand(3, 4, 1), rand(4, 2, 2)}, [](Tape&, auto& v) { return ad::matmul(v[0], v[1]); });
  check_gradients({rand(3, 4, 1), rand(5, 4, 2)}, [](Tape&, auto& v) { return ad::matmul_nt(v[0], v[1]); });
}

TEST(AutodiffFd, Elementwise) {
  check_gradients({rand(3, 4, 1), rand(3, 4, 2)}, [](Tape&, auto& v) { return ad::add(v[0], v[1]); });
  check_gradients({rand(3, 4, 1), rand(3, 4, 2)}, [](Tape&, auto& v) { return ad::sub(v[0], v[1]); });
  check_gradients({rand(3, 4, 1), rand(3, 4, 2)}, [](Tape&, auto& v) { return ad::mul(v[0], v[1]); });
  check_gradients({rand(3, 4, 1), rand(1, 4, 2)}, [](Tape&, auto& v) { return ad::add_row(v[0], v[1]); });
  check_gradients({rand(3, 4, 1)}, [](Tape&, auto& v) { return ad::scale(v[0], -1.7); });
  check_gradients({rand(3, 4, 1)}, [](Tape&, auto& v) { return ad::add_scalar(v[0], 0.3); });
  check_gradients({rand(3, 4, 1)}, [](Tape&, auto& v) { return ad::sum(v[0]); });
}

TEST(AutodiffFd, Nonlinearities) {
  check_gradients({rand(3, 4, 5, 2.0)}, [](Tape&, auto& v) { return ad::gelu(v[0]); });
  check_gradients({rand(3, 4, 5, 2.0)}, [](Tape&, auto& v) { return ad::softplus(v[0]); });
  check_gradients({rand(3, 4, 5, 2.0)}, [](Tape&, auto& v) { return ad::sigmoid(v[0]); });
  check_gradients({rand(3, 4, 5, 2.0)}, [](Tape&, auto& v) { return ad::relu(v[0]); });
  check_gradients({rand(3, 4, 5, 2.0)}, [](Tape&, auto& v) { return ad::softmax_rows(v[0]); });
}

TEST(AutodiffFd, LayerNorm) {
  check_gradients({rand(3, 6, 1), rand(1, 6, 2), rand(1, 6, 3)},
                  [](Tape&, auto& v) { return ad::layer_norm(v[0], v[1], v[2]); }, 1e-5);
}

TEST(AutodiffFd, Structural) {
  check_gradients({rand(3, 6, 1)}, [](Tape&, auto& v) { return ad::slice_cols(v[0], 2, 3); });
  check_gradients({rand(3, 2, 1), rand(3, 3, 2)}, [](Tape&, auto& v) { return ad::concat_cols({v[0], v[1]}); });
  check_gradients({rand(3, 4, 1), rand(3, 4, 2), rand(1, 4, 3)},
                  [](Tape&, auto& v) { return ad::pair_relu(v[0], v[1], v[2]); });
  check_gradients({rand(9, 2, 1)}, [](Tape&, auto& v) { return ad::column_square(v[0], 1, 3); });
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{5, 0, 3, 1});
  check_gradients({rand(2, 3, 1)}, [idx](Tape&, auto& v) { return ad::gather(v[0], idx, 2, 2); });
}

TEST(Autodiff, ConstantsGetNoGradient) {
  Tape t;
  const Var c = t.constant(Matrix(1, 1, 2.0));
  const Var p = t.parameter(Matrix(1, 1, 3.0));
  t.backward(ad::mul(c, p));
  EXPECT_EQ(p.grad().data[0], 2.0);
  EXPECT_FALSE(t.requires_grad(c.id));
}

TEST(Autodiff, MalformedGraphIsInternalError) {
  Tape t;
  const Var a = t.parameter(Matrix(1, 1, 1.0));
  const Var bogus{&t, 17};
  EXPECT_EQ(kind_of([&] { ad::add(a, bogus); }), ErrorKind::internal);
  Tape other;
  const Var b = other.parameter(Matrix(1, 1, 1.0));
  EXPECT_EQ(kind_of([&] { ad::add(a, b); }), ErrorKind::internal);
  EXPECT_EQ(kind_of([&] { t.backward(t.parameter(Matrix(2, 1))); }), ErrorKind::shape);
}
