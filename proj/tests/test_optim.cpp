#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "masdt/optim.hpp"
#include "masdt/rng.hpp"
#include "masdt/tensor.hpp"

using namespace masdt;

namespace {

// Scalar AdamW coded from the update equations alone, no shared code with
// the library implementation.
struct RefAdamW {
  double lr, wd, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;

  double update(double p, double g, double lr_scale = 1.0) {
    const double lr_eff = lr * lr_scale;
    p -= lr_eff * wd * p;
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return p - lr_eff * mhat / (std::sqrt(vhat) + eps);
  }
};

AdamWConfig plain_config(double lr, double wd) {
  AdamWConfig c;
  c.lr = lr;
  c.weight_decay = wd;
  c.layer_decay = 1.0;
  c.max_depth = 0;
  return c;
}

}  // namespace

TEST_CASE("zero gradient step only applies weight decay") {
  const double lr = 1e-2, wd = 0.05;
  Tensor p = Tensor::from_data({1, 2}, {2.0, -3.0}, true);
  AdamW opt({{"p", p, 0}}, plain_config(lr, wd));
  Gradients grads;  // empty: reads back as zeros
  opt.step(grads);
  CHECK(p.at(0) == doctest::Approx(2.0 * (1 - lr * wd)).epsilon(1e-14));
  CHECK(p.at(1) == doctest::Approx(-3.0 * (1 - lr * wd)).epsilon(1e-14));
}

TEST_CASE("first step with dominant gradient moves by about -lr*sign(g)") {
  const double lr = 1e-3;
  Tensor p = Tensor::from_data({1, 2}, {0.5, 0.5}, true);
  AdamWConfig cfg = plain_config(lr, 0.0);
  AdamW opt({{"p", p, 0}}, cfg);
  Gradients grads;
  grads.buffer(p.node()) = {4.0, -0.25};
  opt.step(grads);
  // bias-corrected m/sqrt(v) = g/|g| regardless of magnitude when eps << |g|
  CHECK(p.at(0) == doctest::Approx(0.5 - lr).epsilon(1e-6));
  CHECK(p.at(1) == doctest::Approx(0.5 + lr).epsilon(1e-6));
}

TEST_CASE("10-step trajectory matches the scalar reference") {
  const double lr = 7e-3, wd = 0.02;
  Tensor p = Tensor::scalar(1.2, true);
  AdamW opt({{"p", p, 0}}, plain_config(lr, wd));
  RefAdamW ref{lr, wd, 0.9, 0.999, 1e-8};
  double rp = 1.2;
  Rng rng(99);
  for (int step = 0; step < 10; ++step) {
    const double g = rng.normal();
    Gradients grads;
    grads.buffer(p.node()) = {g};
    opt.step(grads);
    rp = ref.update(rp, g);
    CHECK(std::abs(p.item() - rp) < 1e-10);
  }
  CHECK(opt.step_count() == 10);
}

TEST_CASE("wd 0 and layer_decay 1 reduces to plain Adam") {
  Tensor p = Tensor::from_data({2, 1}, {0.3, -0.8}, true);
  AdamW opt({{"p", p, 0}}, plain_config(2e-3, 0.0));
  RefAdamW ref0{2e-3, 0.0, 0.9, 0.999, 1e-8};
  RefAdamW ref1{2e-3, 0.0, 0.9, 0.999, 1e-8};
  double r0 = 0.3, r1 = -0.8;
  Rng rng(123);
  for (int step = 0; step < 10; ++step) {
    const double g0 = rng.normal(), g1 = rng.normal();
    Gradients grads;
    grads.buffer(p.node()) = {g0, g1};
    opt.step(grads);
    r0 = ref0.update(r0, g0);
    r1 = ref1.update(r1, g1);
    CHECK(std::abs(p.at(0) - r0) < 1e-10);
    CHECK(std::abs(p.at(1) - r1) < 1e-10);
  }
}

TEST_CASE("layer decay scales group learning rates geometrically") {
  AdamWConfig cfg = plain_config(1e-3, 0.0);
  cfg.layer_decay = 0.8;
  cfg.max_depth = 5;
  Tensor a = Tensor::scalar(1.0, true);
  AdamW opt({{"a", a, 0}}, cfg);
  CHECK(opt.group_lr(5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(opt.group_lr(4) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(opt.group_lr(0) == doctest::Approx(std::pow(0.8, 5)).epsilon(1e-12));
}

TEST_CASE("per-depth trajectories match the reference with decayed lr") {
  AdamWConfig cfg = plain_config(5e-3, 0.01);
  cfg.layer_decay = 0.5;
  cfg.max_depth = 2;
  Tensor shallow = Tensor::scalar(1.0, true);
  Tensor deep = Tensor::scalar(1.0, true);
  AdamW opt({{"shallow", shallow, 0}, {"deep", deep, 2}}, cfg);
  RefAdamW ref_s{5e-3, 0.01, 0.9, 0.999, 1e-8};
  RefAdamW ref_d{5e-3, 0.01, 0.9, 0.999, 1e-8};
  double rs = 1.0, rd = 1.0;
  for (int step = 0; step < 6; ++step) {
    const double g = 0.1 * (step + 1);
    Gradients grads;
    grads.buffer(shallow.node()) = {g};
    grads.buffer(deep.node()) = {g};
    opt.step(grads);
    rs = ref_s.update(rs, g, 0.25);  // 0.5^(2-0)
    rd = ref_d.update(rd, g, 1.0);
    CHECK(std::abs(shallow.item() - rs) < 1e-10);
    CHECK(std::abs(deep.item() - rd) < 1e-10);
  }
}

TEST_CASE("state restore resumes the exact trajectory") {
  Tensor p = Tensor::scalar(0.7, true);
  AdamW opt({{"p", p, 0}}, plain_config(1e-2, 0.05));
  Gradients grads;
  grads.buffer(p.node()) = {0.5};
  opt.step(grads);
  const std::vector<AdamWState> snap = opt.states();
  const std::size_t step = opt.step_count();
  const double p_after_one = p.item();

  Gradients g2;
  g2.buffer(p.node()) = {-0.2};
  opt.step(g2);
  const double p_after_two = p.item();

  p.values_mut() = {p_after_one};
  AdamW resumed({{"p", p, 0}}, plain_config(1e-2, 0.05));
  resumed.restore(snap, step);
  Gradients g3;
  g3.buffer(p.node()) = {-0.2};
  resumed.step(g3);
  CHECK(p.item() == p_after_two);
}

TEST_CASE("moment buffers appear on first step and steps count up") {
  Tensor p = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  AdamW opt({{"p", p, 0}}, plain_config(1e-3, 0.0));
  REQUIRE(opt.states().size() == 1);
  CHECK(opt.states()[0].m.empty());  // lazily sized
  CHECK(opt.step_count() == 0);
  Gradients grads;
  opt.step(grads);
  CHECK(opt.states()[0].m.size() == 6);
  CHECK(opt.states()[0].v.size() == 6);
  opt.step(grads);
  CHECK(opt.step_count() == 2);
  CHECK(opt.states()[0].step == 2);
}
