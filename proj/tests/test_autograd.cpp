#include <doctest.h>

#include <cmath>

#include "apiarius/autograd.hpp"
#include "gradcheck_suite.hpp"
#include "support.hpp"

using namespace apiarius;
using namespace apiarius::ag;

namespace {

Tensor filled(Shape s, double v) {
  Tensor t = Tensor::zeros(s);
  t.data.setConstant(v);
  return t;
}

Tensor random_map(Shape s, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(s);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = standard_normal(rng);
  return t;
}

}  // namespace

TEST_CASE("every operator passes finite-difference checks") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& [name, err] : test::gradcheck_suite(seed)) {
      INFO(name << " seed " << seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("conv2d with a centred identity kernel returns its input") {
  Tape t;
  Tensor x = random_map(Shape::map(2, 3, 6, 5), 1);
  // Cout x (k*k*Cin) storage: output channel c reads input channel c at the centre tap.
  Tensor k = Tensor::zeros(Shape::mat(9 * 3, 3));
  for (int c = 0; c < 3; ++c) k.data(c, 4 * 3 + c) = 1.0;
  Var y = conv2d(t.constant(x), t.constant(k), t.constant(Tensor::zeros(Shape::vec(3))));
  CHECK(y.shape() == x.shape);
  CHECK((y.value().data - x.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("maxpool2 floor semantics") {
  Tape t;
  Var x = t.constant(Tensor::zeros(Shape::map(1, 1, 56, 56)));
  Var y = maxpool2(x);
  CHECK(y.shape() == Shape::map(1, 1, 28, 28));
  for (int i = 0; i < 3; ++i) y = maxpool2(y);
  CHECK(y.shape() == Shape::map(1, 1, 3, 3));
}

TEST_CASE("tconv2d stride 2 kernel 4 doubles the size") {
  Tape t;
  Var x = t.constant(Tensor::zeros(Shape::map(2, 4, 7, 7)));
  Var k = t.constant(Tensor::zeros(Shape::mat(4, 16 * 3)));
  Var y = tconv2d(x, k, t.constant(Tensor::zeros(Shape::vec(3))), 4, 2, 1);
  CHECK(y.shape() == Shape::map(2, 3, 14, 14));
}

TEST_CASE("shape mismatches name both shapes") {
  Tape t;
  Var a = t.constant(Tensor::zeros(Shape::mat(2, 3)));
  Var b = t.constant(Tensor::zeros(Shape::mat(2, 4)));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    CHECK(m.find(a.shape().str()) != std::string::npos);
    CHECK(m.find(b.shape().str()) != std::string::npos);
  }
}

TEST_CASE("bce reference values") {
  Tape t;
  Var half = t.constant(filled(Shape::mat(4, 9), 0.5));
  CHECK(bce(half, half).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Var ones = t.constant(filled(Shape::mat(4, 9), 1.0));
  Var zeros = t.constant(filled(Shape::mat(4, 9), 0.0));
  CHECK(bce(ones, ones).item() < 1e-6);
  CHECK(bce(zeros, zeros).item() < 1e-6);
  // the clamp keeps a confident miss finite
  CHECK(std::isfinite(bce(zeros, ones).item()));
}

TEST_CASE("kl_diag_gauss closed forms") {
  Tape t;
  auto kl = [&](double mu, double lv) {
    return kl_diag_gauss(t.constant(filled(Shape::mat(1, 1), mu)),
                         t.constant(filled(Shape::mat(1, 1), lv)))
        .item();
  };
  CHECK(std::abs(kl(0.0, 0.0)) < 1e-10);
  CHECK(std::abs(kl(1.0, 0.0) - 0.5) < 1e-10);
  CHECK(std::abs(kl(0.0, std::log(4.0)) - 0.5 * (4.0 - std::log(4.0) - 1.0)) < 1e-10);
  CHECK(kl(0.0, std::log(4.0)) == doctest::Approx(0.8069).epsilon(1e-4));
}

TEST_CASE("softmax_ce reference values") {
  Tape t;
  std::vector<int> c = {2};
  CHECK(std::abs(softmax_ce(t.constant(filled(Shape::mat(1, 3), 0.7)), c).item() - std::log(3.0)) <
        1e-10);
  Tensor dom = Tensor::zeros(Shape::mat(1, 3));
  dom.data(2, 0) = 60.0;
  CHECK(softmax_ce(t.constant(dom), c).item() < 1e-12);
}

TEST_CASE("huber branches") {
  const double d = 0.8;
  Tape t;
  auto h = [&](double r) {
    return huber(t.constant(filled(Shape::mat(1, 1), r)), t.constant(filled(Shape::mat(1, 1), 0.0)),
                 d)
        .item();
  };
  CHECK(h(0.0) == 0.0);
  CHECK(std::abs(h(d) - 0.5 * d * d) < 1e-10);
  CHECK(std::abs(h(-d) - 0.5 * d * d) < 1e-10);
  // linear branch evaluated at the boundary equals the quadratic one
  CHECK(std::abs(d * (d - 0.5 * d) - 0.5 * d * d) < 1e-10);
  CHECK(std::abs(h(2 * d) - 1.5 * d * d) < 1e-10);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("p", filled(Shape::mat(2, 3), 0.3));
    p.zero_grad();
    AdamState s;
    adam_step(p, s, 1e-2);
    CHECK((p.value.data.array() == 0.3).all());
  }
  SUBCASE("first step moves by lr in the gradient sign") {
    Parameter p("p", filled(Shape::mat(2, 3), 0.0));
    p.grad = Eigen::MatrixXd::Constant(3, 2, -4.0);
    AdamState s;
    adam_step(p, s, 1e-3);
    CHECK((p.value.data.array() - 1e-3).abs().maxCoeff() < 1e-9);
  }
  SUBCASE("independent states") {
    Parameter a("a", filled(Shape::vec(2), 0.0));
    Parameter b("b", filled(Shape::vec(2), 0.0));
    a.grad = Eigen::MatrixXd::Constant(2, 1, 1.0);
    b.zero_grad();
    Adam opt;
    std::vector<Parameter*> ps = {&a, &b};
    opt.step(ps, 0.1);
    CHECK(b.value.data.isZero());
    CHECK(opt.state(b).m.isZero());
    CHECK(opt.state(a).t == 1);
  }
}

TEST_CASE("backward accumulates into parameters across uses") {
  Parameter w("w", filled(Shape::mat(1, 1), 3.0));
  w.zero_grad();
  Tape t;
  Var v = t.param(w);
  t.backward(add(mul(v, v), v));  // d/dw (w^2 + w) = 2w + 1
  CHECK(w.grad(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("checkpoint round trip and version byte") {
  test::TempDir tmp("ckpt");
  Parameter a("enc.a", random_map(Shape::mat(3, 4), 2));
  Parameter b("dec.b", random_map(Shape::map(1, 2, 3, 3), 3));
  std::vector<const Parameter*> out = {&a, &b};
  save_checkpoint(tmp / "m.ckpt", out);
  Parameter a2("enc.a", Tensor::zeros(a.value.shape));
  Parameter b2("dec.b", Tensor::zeros(b.value.shape));
  std::vector<Parameter*> in = {&a2, &b2};
  load_checkpoint(tmp / "m.ckpt", in);
  CHECK(a2.value.data == a.value.data);
  CHECK(b2.value.data == b.value.data);

  Parameter wrong("enc.a", Tensor::zeros(Shape::mat(4, 4)));
  std::vector<Parameter*> bad = {&wrong};
  CHECK_THROWS(load_checkpoint(tmp / "m.ckpt", bad));
  CHECK(read_checkpoint(tmp / "m.ckpt").size() == 2);
}
