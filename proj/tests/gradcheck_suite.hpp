#pragma once

#include <string>
#include <utility>
#include <vector>

#include "apiarius/autograd.hpp"

namespace apiarius::test {

/// Finite-difference checks of every operator on small random inputs.
/// Returns (operator, max relative error) pairs for one seed.
inline std::vector<std::pair<std::string, double>> gradcheck_suite(uint64_t seed) {
  using namespace apiarius::ag;
  Rng rng(seed);
  auto rand = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(s);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = uniform(rng, lo, hi);
    return t;
  };
  // Fixed random projection turning any output into a scalar; the same weights on every
  // evaluation because its generator is reseeded.
  auto project = [seed](Var y) {
    Rng local(split_seed(seed, 99));
    Tensor w = Tensor::zeros(y.shape());
    for (Eigen::Index i = 0; i < w.data.size(); ++i) w.data.data()[i] = uniform(local, -1.0, 1.0);
    return sum(mul(y, y.tape->constant(std::move(w))));
  };

  std::vector<std::pair<std::string, double>> out;
  auto check = [&](const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& in) {
    out.emplace_back(name, grad_check(fn, in));
  };

  const Tensor w_proj4 = rand(Shape::map(2, 3, 5, 5));
  check("conv2d", [&](Tape& t, std::span<const Var> v) {
    Var y = conv2d(v[0], v[1], v[2], 3, 1, 1);
    return sum(mul(y, t.constant(w_proj4)));
  }, {rand(Shape::map(2, 2, 5, 5)), rand(Shape::mat(3 * 3 * 2, 3)), rand(Shape::vec(3))});

  const Tensor w_t2 = rand(Shape::map(2, 2, 6, 6));
  check("tconv2d_s2k4", [&](Tape& t, std::span<const Var> v) {
    Var y = tconv2d(v[0], v[1], v[2], 4, 2, 1);
    return sum(mul(y, t.constant(w_t2)));
  }, {rand(Shape::map(2, 3, 3, 3)), rand(Shape::mat(3, 4 * 4 * 2)), rand(Shape::vec(2))});

  const Tensor w_t1 = rand(Shape::map(1, 2, 4, 4));
  check("tconv2d_s1k3", [&](Tape& t, std::span<const Var> v) {
    Var y = tconv2d(v[0], v[1], v[2], 3, 1, 1);
    return sum(mul(y, t.constant(w_t1)));
  }, {rand(Shape::map(1, 3, 4, 4)), rand(Shape::mat(3, 3 * 3 * 2)), rand(Shape::vec(2))});

  check("maxpool2", [&](Tape&, std::span<const Var> v) { return project(maxpool2(v[0])); },
        {rand(Shape::map(2, 2, 7, 7))});
  check("dense", [&](Tape&, std::span<const Var> v) { return project(dense(v[0], v[1], v[2])); },
        {rand(Shape::mat(3, 5)), rand(Shape::mat(5, 4)), rand(Shape::vec(4))});
  check("flatten", [&](Tape&, std::span<const Var> v) { return project(flatten(v[0])); },
        {rand(Shape::map(2, 3, 2, 2))});
  check("unflatten", [&](Tape&, std::span<const Var> v) { return project(unflatten(v[0], 2, 2, 3)); },
        {rand(Shape::mat(2, 12))});
  check("reshape", [&](Tape&, std::span<const Var> v) { return project(reshape(v[0], Shape::mat(2, 6))); },
        {rand(Shape::mat(4, 3))});
  check("relu", [&](Tape&, std::span<const Var> v) { return project(relu(v[0])); },
        {rand(Shape::mat(4, 6))});
  check("sigmoid", [&](Tape&, std::span<const Var> v) { return project(sigmoid(v[0])); },
        {rand(Shape::mat(4, 6), -4.0, 4.0)});
  check("exp", [&](Tape&, std::span<const Var> v) { return project(exp(v[0])); },
        {rand(Shape::mat(4, 6))});
  check("clamp", [&](Tape&, std::span<const Var> v) { return project(clamp(v[0], -0.5, 0.5)); },
        {rand(Shape::mat(4, 6))});
  check("add", [&](Tape&, std::span<const Var> v) { return project(add(v[0], v[1])); },
        {rand(Shape::mat(3, 4)), rand(Shape::mat(3, 4))});
  check("sub", [&](Tape&, std::span<const Var> v) { return project(sub(v[0], v[1])); },
        {rand(Shape::mat(3, 4)), rand(Shape::mat(3, 4))});
  check("mul", [&](Tape&, std::span<const Var> v) { return project(mul(v[0], v[1])); },
        {rand(Shape::mat(3, 4)), rand(Shape::mat(3, 4))});
  check("scale", [&](Tape&, std::span<const Var> v) { return project(scale(v[0], -2.5)); },
        {rand(Shape::mat(3, 4))});
  check("sum", [&](Tape&, std::span<const Var> v) { return sum(v[0]); }, {rand(Shape::mat(3, 4))});
  check("mean", [&](Tape&, std::span<const Var> v) { return mean(v[0]); }, {rand(Shape::mat(3, 4))});
  check("slice_features", [&](Tape&, std::span<const Var> v) {
    return project(slice_features(v[0], 1, 2));
  }, {rand(Shape::mat(3, 5))});
  check("concat_features", [&](Tape&, std::span<const Var> v) {
    return project(concat_features(v[0], v[1]));
  }, {rand(Shape::mat(3, 2)), rand(Shape::mat(3, 4))});
  const std::vector<int> idx = {2, 0, 2, 1};
  check("gather_samples", [&](Tape&, std::span<const Var> v) {
    return project(gather_samples(v[0], idx));
  }, {rand(Shape::mat(3, 4))});
  check("bce", [&](Tape&, std::span<const Var> v) { return bce(v[0], v[1]); },
        {rand(Shape::mat(3, 5), 0.05, 0.95), rand(Shape::mat(3, 5), 0.0, 1.0)});
  check("kl_diag_gauss", [&](Tape&, std::span<const Var> v) { return kl_diag_gauss(v[0], v[1]); },
        {rand(Shape::mat(4, 3)), rand(Shape::mat(4, 3))});
  const std::vector<int> classes = {0, 2, 1, 2};
  check("softmax_ce", [&](Tape&, std::span<const Var> v) { return softmax_ce(v[0], classes); },
        {rand(Shape::mat(4, 3), -2.0, 2.0)});
  check("huber", [&](Tape&, std::span<const Var> v) { return huber(v[0], v[1], 0.7); },
        {rand(Shape::mat(5, 2), -2.0, 2.0), rand(Shape::mat(5, 2), -2.0, 2.0)});
  return out;
}

}  // namespace apiarius::test
