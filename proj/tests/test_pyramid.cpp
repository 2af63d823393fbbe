#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "libra/commands.hpp"
#include "libra/pyramid.hpp"
#include "libra/reference.hpp"
#include "libra/rng.hpp"

using namespace libra;

namespace {

PyramidLevels constant_pyramid(std::size_t L, std::size_t base, std::size_t C, double value) {
  PyramidLevels p;
  for (std::size_t l = 0, side = base; l < L; ++l, side /= 2) p.levels.emplace_back(Shape{C, side, side}, value);
  return p;
}

Tensor random_like(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

NonLocalWeights zero_wz(NonLocalWeights w) {
  for (auto& v : w.w_z.data()) v = 0.0;
  return w;
}

}  // namespace

TEST_CASE("pyramid validation") {
  PyramidLevels bad;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.levels = {Tensor({2, 4, 4}), Tensor({3, 2, 2})};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.levels = {Tensor({2, 4, 4}), Tensor({2, 4, 4})};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  const PyramidLevels ok = make_synthetic_pyramid(3, 8, 2, 1);
  CHECK_THROWS_AS(rescale_to(ok, 3), std::invalid_argument);
  CHECK(default_target_level(4) == 2);
  CHECK(default_target_level(1) == 0);
  CHECK_THROWS_AS(make_synthetic_pyramid(4, 4, 2, 1), std::invalid_argument);  // 4,2,1,1 does not shrink
}

TEST_CASE("rescale_to") {
  SUBCASE("single level passes through") {
    const PyramidLevels p = make_synthetic_pyramid(1, 4, 3, 2);
    const auto r = rescale_to(p, 0);
    REQUIRE(r.size() == 1);
    CHECK(r[0] == p.levels[0]);
  }
  SUBCASE("constants survive") {
    const PyramidLevels p = constant_pyramid(4, 16, 2, 1.25);
    for (std::size_t target = 0; target < 4; ++target)
      for (const auto& t : rescale_to(p, target)) CHECK(t == Tensor(t.shape(), 1.25));
  }
  SUBCASE("finer ramp is max-pooled to the coarse target") {
    PyramidLevels p;
    Tensor ramp({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
    p.levels = {ramp, Tensor({1, 2, 2}, {-1, -2, -3, -4})};
    const auto r = rescale_to(p, 1);
    CHECK(r[0] == Tensor({1, 2, 2}, {5, 7, 13, 15}));
    CHECK(r[1] == p.levels[1]);
  }
}

TEST_CASE("integrate") {
  Rng rng(4);
  const Tensor t = random_like(rng, {2, 3, 3});
  CHECK(integrate(std::vector<Tensor>(3, t)) == t);
  CHECK(integrate(std::vector<Tensor>{Tensor({1, 1, 1}, 2.0), Tensor({1, 1, 1}, 4.0)}) ==
        Tensor({1, 1, 1}, 3.0));
  std::vector<Tensor> four;
  for (int i = 0; i < 4; ++i) four.push_back(random_like(rng, {2, 2, 2}));
  const Tensor m = integrate(four);
  for (std::size_t i = 0; i < m.size(); ++i) {
    double acc = 0.0;
    for (const auto& x : four) acc += x[i];
    CHECK(m[i] == doctest::Approx(acc / 4.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(integrate(std::vector<Tensor>{}), std::invalid_argument);
}

TEST_CASE("integrate gives every level weight 1/L") {
  for (std::size_t L = 1; L <= 5; ++L) {
    for (const auto& g : mean_stack_backward(Tensor({1, 2, 2}, 1.0), L)) {
      for (double v : g.data()) CHECK(v == doctest::Approx(1.0 / static_cast<double>(L)));
    }
  }
}

TEST_CASE("refine_nonlocal") {
  Rng rng(12);
  SUBCASE("zero output projection is the identity") {
    const Tensor x = random_like(rng, {4, 3, 3});
    const NonLocalWeights w = zero_wz(NonLocalWeights::random(4, 2, 5));
    CHECK(refine_nonlocal(x, w) == x);
  }
  SUBCASE("spatially constant input gives uniform attention") {
    Tensor x({3, 2, 3});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 6; ++i) x[c * 6 + i] = 0.3 * (c + 1);
    const Tensor a = nonlocal_attention(x, NonLocalWeights::random(3, 2, 6));
    for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  }
  SUBCASE("one channel 2x2 against an explicit n x n oracle") {
    const Tensor x({1, 2, 2}, {1, -1, 2, 0.5});
    const NonLocalWeights w{Tensor({1, 1}, {1}), Tensor({1, 1}, {2}), Tensor({1, 1}, {-1}),
                            Tensor({1, 1}, {3})};
    const double xs[4] = {1, -1, 2, 0.5};
    const Tensor out = refine_nonlocal(x, w);
    for (int i = 0; i < 4; ++i) {
      double z = 0.0, y = 0.0;
      for (int j = 0; j < 4; ++j) z += std::exp(1 * xs[i] * 2 * xs[j]);
      for (int j = 0; j < 4; ++j) y += std::exp(1 * xs[i] * 2 * xs[j]) / z * (-1 * xs[j]);
      CHECK(out[i] == doctest::Approx(3 * y + xs[i]).epsilon(1e-13));
    }
  }
  SUBCASE("weight shapes are checked") {
    const Tensor x = random_like(rng, {4, 2, 2});
    CHECK_THROWS_AS(refine_nonlocal(x, NonLocalWeights::random(3, 2, 1)), std::invalid_argument);
  }
  CHECK(NonLocalWeights::random(8, 0, 1).embed_channels() == 4);
  CHECK(NonLocalWeights::random(1, 0, 1).embed_channels() == 1);
}

TEST_CASE("strengthen") {
  Rng rng(13);
  const PyramidLevels p = make_synthetic_pyramid(4, 16, 2, 3);
  const std::size_t target = 2;
  const Shape ts = p.levels[target].shape();
  SUBCASE("zero refined feature") {
    const PyramidLevels out = strengthen(p, Tensor(ts), target);
    for (std::size_t l = 0; l < p.size(); ++l) CHECK(out.levels[l] == p.levels[l]);
  }
  SUBCASE("constant refined feature") {
    const PyramidLevels out = strengthen(p, Tensor(ts, 0.75), target);
    for (std::size_t l = 0; l < p.size(); ++l)
      for (std::size_t i = 0; i < p.levels[l].size(); ++i)
        CHECK(out.levels[l][i] == p.levels[l][i] + 0.75);
  }
  SUBCASE("random refined feature matches the composed oracle") {
    const Tensor refined = random_like(rng, ts);
    const PyramidLevels out = strengthen(p, refined, target);
    for (std::size_t l = 0; l < p.size(); ++l) {
      const Extent2 e = spatial_extent(p.levels[l]);
      const Tensor back = l < target ? reference::resize_nearest(refined, e)
                          : l > target ? reference::maxpool_to(refined, e)
                                       : refined;
      for (std::size_t i = 0; i < back.size(); ++i) CHECK(out.levels[l][i] == p.levels[l][i] + back[i]);
    }
  }
  CHECK_THROWS_AS(strengthen(p, Tensor({2, 3, 3}), target), std::invalid_argument);
}

TEST_CASE("balanced_feature_pyramid") {
  SUBCASE("constant levels double") {
    const PyramidLevels p = constant_pyramid(4, 16, 3, 2.5);
    const PyramidLevels out = balanced_feature_pyramid(p, nullptr, default_target_level(4));
    for (std::size_t l = 0; l < 4; ++l) CHECK(out.levels[l] == Tensor(p.levels[l].shape(), 5.0));
  }
  SUBCASE("single level doubles") {
    const PyramidLevels p = make_synthetic_pyramid(1, 4, 2, 9);
    const PyramidLevels out = balanced_feature_pyramid(p, nullptr, 0);
    for (std::size_t i = 0; i < p.levels[0].size(); ++i) CHECK(out.levels[0][i] == 2 * p.levels[0][i]);
  }
  SUBCASE("two small integer levels, hand composed") {
    PyramidLevels p;
    p.levels = {Tensor({1, 2, 2}, {1, 2, 3, 4}), Tensor({1, 1, 1}, {10})};
    const PyramidLevels out = balanced_feature_pyramid(p, nullptr, 0);
    // integrated = ([1,2,3,4] + [10,10,10,10]) / 2
    CHECK(*out.integrated == Tensor({1, 2, 2}, {5.5, 6, 6.5, 7}));
    CHECK(out.levels[0] == Tensor({1, 2, 2}, {6.5, 8, 9.5, 11}));
    CHECK(out.levels[1] == Tensor({1, 1, 1}, {17}));
  }
  SUBCASE("zeroed w_z reproduces the parameter-free path bit for bit") {
    const PyramidLevels p = make_synthetic_pyramid(3, 8, 4, 21);
    const NonLocalWeights w = zero_wz(NonLocalWeights::random(4, 0, 3));
    const PyramidLevels a = balanced_feature_pyramid(p, &w, 1);
    const PyramidLevels b = balanced_feature_pyramid(p, nullptr, 1);
    for (std::size_t l = 0; l < 3; ++l) CHECK(a.levels[l] == b.levels[l]);
  }
  SUBCASE("output shapes equal input shapes") {
    for (std::size_t L = 1; L <= 4; ++L) {
      const PyramidLevels p = make_synthetic_pyramid(L, 16, 3, L);
      const NonLocalWeights w = NonLocalWeights::random(3, 0, L);
      for (std::size_t target = 0; target < L; ++target) {
        for (const NonLocalWeights* wp : {static_cast<const NonLocalWeights*>(nullptr), &w}) {
          const PyramidLevels out = balanced_feature_pyramid(p, wp, target);
          REQUIRE(out.size() == L);
          for (std::size_t l = 0; l < L; ++l) {
            CHECK(out.levels[l].shape() == p.levels[l].shape());
            CHECK(out.levels[l].all_finite());
          }
        }
      }
    }
  }
}

TEST_CASE("pyramid gradients match central differences") {
  for (bool refine : {true, false}) {
    const GradCheckEntry e = gradcheck_pyramid(17, 3, 8, 4, refine);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error < kPyramidTolerance);
  }
  const GradCheckEntry deep = gradcheck_pyramid(5, 4, 8, 2, true);
  CHECK(deep.max_rel_error < kPyramidTolerance);
}

TEST_CASE("tensor op gradients match central differences") {
  for (const auto& e : gradcheck_tensor_ops(23)) {
    INFO(e.name);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error < kOpTolerance);
  }
}
