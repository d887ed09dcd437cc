#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "hd2/gradcheck.hpp"
#include "hd2/tensor.hpp"

using namespace hd2::diffcore;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool rg = true,
                     double lo = -2.0, double hi = 2.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& x : data) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), rg);
}

double rel_err_against_fd(const std::function<Tensor()>& f, Parameter& p) {
  std::vector<Parameter*> ps{&p};
  return grad_check(f, ps, 1e-5);
}

}  // namespace

TEST_CASE("softmax basics") {
  Tensor x = Tensor::from_data({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3));

  Tensor x2 = Tensor::from_data({2}, {0.0, std::log(3.0)});
  Tensor y2 = softmax(x2, 0);
  CHECK(y2.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y2.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {5}, false);
    double c = rng.uniform(-10.0, 10.0);
    Tensor a = softmax(x, 0);
    Tensor b = softmax(add_scalar(x, c), 0);
    for (int i = 0; i < 5; ++i)
      CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tensor x = Tensor::from_data({2}, {1.0, HUGE_VAL});
  CHECK_THROWS_AS(softmax(x, 0), hd2::NumericError);
}

TEST_CASE("attention with a single key returns the value row") {
  Rng rng(11);
  Tensor q = random_tensor(rng, {4, 3}, false);
  Tensor k = random_tensor(rng, {1, 3}, false);
  Tensor v = random_tensor(rng, {1, 5}, false);
  Tensor out = scaled_dot_attention(q, k, v);
  REQUIRE(out.shape() == Shape{4, 5});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(out.data()[i * 5 + j] == doctest::Approx(v.data()[j]));
}

TEST_CASE("attention over identical keys and values is constant") {
  Rng rng(13);
  Tensor q = random_tensor(rng, {3, 4}, false);
  std::vector<double> krow(4), vrow(6);
  for (double& x : krow) x = rng.uniform(-1, 1);
  for (double& x : vrow) x = rng.uniform(-1, 1);
  std::vector<double> kd, vd;
  for (int i = 0; i < 5; ++i) {
    kd.insert(kd.end(), krow.begin(), krow.end());
    vd.insert(vd.end(), vrow.begin(), vrow.end());
  }
  Tensor out = scaled_dot_attention(q, Tensor::from_data({5, 4}, kd),
                                    Tensor::from_data({5, 6}, vd));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(out.data()[i * 6 + j] == doctest::Approx(vrow[j]).epsilon(1e-12));
}

TEST_CASE("attention sharply selects the aligned key") {
  // Two orthogonal keys; query = 100 * key_1.
  int d = 4;
  std::vector<double> kd(2 * d, 0.0);
  kd[0] = 1.0;      // key_1 = e0
  kd[d + 1] = 1.0;  // key_2 = e1
  std::vector<double> vd = {3.0, -1.0, 0.5, 2.0, 7.0, 4.0};  // [2,3]
  std::vector<double> qd(d, 0.0);
  qd[0] = 100.0;
  Tensor out = scaled_dot_attention(Tensor::from_data({1, 4}, qd),
                                    Tensor::from_data({2, 4}, kd),
                                    Tensor::from_data({2, 3}, vd));
  for (int j = 0; j < 3; ++j)
    CHECK(std::fabs(out.data()[j] - vd[j]) < 1e-6);
}

TEST_CASE("attention shape errors") {
  Tensor q = Tensor::zeros({2, 3});
  Tensor k = Tensor::zeros({4, 2});
  Tensor v = Tensor::zeros({4, 5});
  CHECK_THROWS_AS(scaled_dot_attention(q, k, v), hd2::ShapeError);
}

TEST_CASE("kl divergence values") {
  Tensor p = Tensor::from_data({2}, {0.25, 0.75});
  Tensor q = Tensor::from_data({2}, {0.5, 0.5});
  // 0.25*ln(0.5) + 0.75*ln(1.5)
  CHECK(kl_divergence(p, q).item() == doctest::Approx(0.1308).epsilon(1e-2));
  CHECK(std::fabs(kl_divergence(p, q).item() - 0.130812) < 1e-3);
  CHECK(kl_divergence(p, p).item() == 0.0);

  Tensor bad = Tensor::from_data({2}, {0.4, 0.4});
  CHECK_THROWS_AS(kl_divergence(p, bad), hd2::DomainError);
  Tensor wrong = Tensor::from_data({3}, {0.2, 0.3, 0.5});
  CHECK_THROWS_AS(kl_divergence(p, wrong), hd2::ShapeError);
}

TEST_CASE("kl divergence is non-negative on random pairs") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.randint(0, 6));
    std::vector<double> pd(n), qd(n);
    double ps = 0, qs = 0;
    for (int i = 0; i < n; ++i) {
      pd[i] = rng.uniform(1e-4, 1.0);
      qd[i] = rng.uniform(1e-4, 1.0);
      ps += pd[i];
      qs += qd[i];
    }
    for (int i = 0; i < n; ++i) {
      pd[i] /= ps;
      qd[i] /= qs;
    }
    double v = kl_divergence(Tensor::from_data({n}, pd),
                             Tensor::from_data({n}, qd))
                   .item();
    CHECK(v >= -1e-15);
  }
}

TEST_CASE("grad_check on x^2 at x = 3") {
  Rng rng(1);
  Parameter p{"x", Tensor::scalar(3.0, true)};
  auto f = [&p]() { return mul(p.value, p.value); };
  double err = rel_err_against_fd(f, p);
  CHECK(err < 1e-6);
  // And the analytic gradient itself is 6.
  Tensor loss = f();
  loss.backward();
  CHECK(p.value.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("grad_check rejects out-of-range eps") {
  Parameter p{"x", Tensor::scalar(1.0, true)};
  std::vector<Parameter*> ps{&p};
  auto f = [&p]() { return mul(p.value, p.value); };
  CHECK_THROWS_AS(grad_check(f, ps, 1e-8), hd2::DomainError);
  CHECK_THROWS_AS(grad_check(f, ps, 1e-2), hd2::DomainError);
}

TEST_CASE("grad_check on a two-layer perceptron cross-entropy") {
  Rng rng(42);
  int in = 5, hid = 4, classes = 3, batch = 6;
  Parameter w1 = make_param("w1", {in, hid}, in, rng);
  Parameter b1 = make_param("b1", {1, hid}, in, rng);
  Parameter w2 = make_param("w2", {hid, classes}, hid, rng);
  Tensor x = random_tensor(rng, {batch, in}, false);
  std::vector<int64_t> labels(batch);
  for (auto& l : labels) l = rng.randint(0, classes - 1);

  auto f = [&]() {
    auto bidx = std::make_shared<std::vector<int64_t>>();
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < hid; ++j) bidx->push_back(j);
    Tensor h = relu(add(matmul(x, w1.value), gather(b1.value, bidx, {batch, hid})));
    Tensor logits = matmul(h, w2.value);
    Tensor probs = clamp(softmax(logits, 1), 1e-12, 1.0);
    auto pick = std::make_shared<std::vector<int64_t>>();
    for (int i = 0; i < batch; ++i) pick->push_back(i * classes + labels[i]);
    Tensor chosen = gather(log_elem(probs), pick, {batch});
    return scale(sum_all(chosen), -1.0 / batch);
  };
  std::vector<Parameter*> ps{&w1, &b1, &w2};
  CHECK(grad_check(f, ps, 1e-5) < 1e-5);
}

TEST_CASE("grad_check on symmetric KL of random score fields") {
  Rng rng(77);
  Parameter a = make_param("a", {12}, 4, rng);
  Parameter b = make_param("b", {12}, 4, rng);
  auto f = [&]() {
    Tensor p = softmax(a.value, 0);
    Tensor q = softmax(b.value, 0);
    return add(kl_divergence(p, q), kl_divergence(q, p));
  };
  std::vector<Parameter*> ps{&a, &b};
  CHECK(grad_check(f, ps, 1e-5) < 1e-5);
}

TEST_CASE("every primitive passes grad_check on random shapes") {
  Rng rng(2025);
  auto shaped = [&rng](Shape s, double lo = -2.0, double hi = 2.0) {
    return random_tensor(rng, std::move(s), true, lo, hi);
  };
  auto run = [](const std::function<Tensor()>& f, Parameter& p) {
    std::vector<Parameter*> ps{&p};
    double e = grad_check(f, ps, 1e-5);
    CHECK(e < 1e-5);
  };

  // Elementwise family. Inputs avoid the relu/abs kink and log/sqrt edges.
  {
    Parameter p{"x", shaped({3, 7})};
    for (auto& v : p.value.node()->data)
      if (std::fabs(v) < 1e-3) v = 0.5;
    Tensor other = shaped({3, 7});
    run([&]() { return sum_all(mul(add(p.value, other), p.value)); }, p);
    run([&]() { return sum_all(relu(p.value)); }, p);
    run([&]() { return sum_all(abs_val(p.value)); }, p);
    run([&]() { return sum_all(exp_elem(scale(p.value, 0.3))); }, p);
    run([&]() { return sum_all(sigmoid(p.value)); }, p);
    run([&]() { return sum_all(mul(p.value, clamp(p.value, -1.0, 1.0))); }, p);
  }
  {
    Parameter p{"pos", shaped({9}, 0.5, 3.0)};
    run([&]() { return sum_all(log_elem(p.value)); }, p);
    run([&]() { return sum_all(sqrt_elem(p.value)); }, p);
    run([&]() { return sum_all(reciprocal(p.value)); }, p);
  }
  // Matmul, all transpose combinations.
  {
    Parameter p{"a", shaped({5, 4})};
    Tensor b43 = shaped({4, 3}), b34 = shaped({3, 4});
    Tensor b53 = shaped({5, 3}), b35 = shaped({3, 5});
    run([&]() { return sum_all(matmul(p.value, b43)); }, p);
    run([&]() { return sum_all(matmul(p.value, b34, false, true)); }, p);
    run([&]() { return sum_all(matmul(p.value, b53, true, false)); }, p);
    run([&]() { return sum_all(matmul(p.value, b35, true, true)); }, p);
    Parameter q{"b", shaped({4, 3})};
    run([&]() { return sum_all(matmul(b34, q.value, true, true)); }, q);
  }
  // Softmax / reductions / movement.
  {
    Parameter p{"x", shaped({4, 6})};
    run([&]() { return sum_all(mul(softmax(p.value, 1), p.value)); }, p);
    run([&]() { return sum_all(mul(sum_axis(p.value, 0), sum_axis(p.value, 0))); }, p);
    run([&]() { return sum_all(reshape(p.value, {2, 12})); }, p);
    run([&]() { return sum_all(mul(permute(p.value, {1, 0}),
                                   permute(p.value, {1, 0}))); },
        p);
  }
  {
    // Unique maxima so max_axis has a stable subgradient under fd probing.
    std::vector<double> d(12);
    for (int i = 0; i < 12; ++i) d[i] = 0.37 * i - 2.0;
    Parameter p{"x", Tensor::from_data({3, 4}, d, true)};
    run([&]() { return sum_all(mul(max_axis(p.value, 1), max_axis(p.value, 1))); }, p);
  }
  // Gather / scatter.
  {
    Parameter p{"x", shaped({10})};
    auto idx = std::make_shared<std::vector<int64_t>>(
        std::vector<int64_t>{3, 3, 0, 9, -1, 7});
    run([&]() {
      Tensor g = gather(p.value, idx, {6});
      return sum_all(mul(g, g));
    }, p);
    Parameter vals{"v", shaped({6})};
    Tensor base = shaped({10});
    run([&]() {
      Tensor s = scatter_add(base, idx, vals.value);
      return sum_all(mul(s, s));
    }, vals);
  }
  // Convolutions.
  {
    Parameter w{"w", shaped({2, 3, 3, 3})};
    Tensor x = shaped({3, 6, 5});
    Tensor b = shaped({2});
    run([&]() { return sum_all(mul(conv2d(x, w.value, b, 1, 1),
                                   conv2d(x, w.value, b, 1, 1))); },
        w);
    run([&]() { return sum_all(conv2d(x, w.value, b, 2, 1)); }, w);
    Parameter px{"x", shaped({3, 6, 5})};
    run([&]() { return sum_all(mul(conv2d(px.value, w.value, b, 1, 1),
                                   conv2d(px.value, w.value, b, 1, 1))); },
        px);
  }
  {
    Parameter w{"w1x1", shaped({4, 3, 1, 1})};
    Tensor x = shaped({3, 4, 4});
    Tensor b = shaped({4});
    run([&]() { return sum_all(mul(conv2d(x, w.value, b, 1, 0),
                                   conv2d(x, w.value, b, 1, 0))); },
        w);
  }
  {
    Parameter w{"w3d", shaped({2, 2, 3, 3, 3})};
    Tensor x = shaped({2, 4, 4, 3});
    Tensor b = shaped({2});
    run([&]() { return sum_all(mul(conv3d(x, w.value, b, 1, 1),
                                   conv3d(x, w.value, b, 1, 1))); },
        w);
  }
  // Bilinear sampling (w.r.t. features).
  {
    Parameter f{"feat", shaped({2, 5, 6})};
    std::vector<double> xs{0.0, 1.5, 4.9, 2.25};
    std::vector<double> ys{0.0, 3.25, 0.5, 2.0};
    std::vector<uint8_t> valid{1, 1, 0, 1};
    run([&]() {
      Tensor s = bilinear_sample(f.value, xs, ys, valid);
      return sum_all(mul(s, s));
    }, f);
  }
  // Upsample.
  {
    Parameter p{"x", shaped({2, 2, 3, 2})};
    run([&]() { return sum_all(mul(upsample3d_nearest(p.value, 2),
                                   upsample3d_nearest(p.value, 2))); },
        p);
  }
  // Concat.
  {
    Parameter p{"x", shaped({4, 3})};
    Tensor other = shaped({4, 2});
    run([&]() {
      Tensor c = concat_cols({p.value, other, p.value});
      return sum_all(mul(c, c));
    }, p);
  }
}

TEST_CASE("direct conv3d matches an im2col + matmul reference") {
  Rng rng(321);
  int64_t ci = 3, co = 2, h = 5, w = 4, z = 4, k = 3, pad = 1;
  Parameter x{"x", random_tensor(rng, {ci, h, w, z})};
  Parameter wt{"w", random_tensor(rng, {co, ci, k, k, k})};
  Parameter b{"b", random_tensor(rng, {co})};

  // Reference route: explicit im2col gather followed by matmul.
  auto reference = [&]() {
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int64_t oy = 0; oy < h; ++oy)
      for (int64_t ox = 0; ox < w; ++ox)
        for (int64_t oz = 0; oz < z; ++oz)
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx)
                for (int64_t kz = 0; kz < k; ++kz) {
                  int64_t iy = oy + ky - pad, ix = ox + kx - pad,
                          iz = oz + kz - pad;
                  bool in = iy >= 0 && iy < h && ix >= 0 && ix < w && iz >= 0 &&
                            iz < z;
                  idx->push_back(in ? ((c * h + iy) * w + ix) * z + iz : -1);
                }
    int64_t spots = h * w * z, patch = ci * k * k * k;
    Tensor cols = gather(x.value, idx, {spots, patch});
    Tensor wmat = reshape(wt.value, {co, patch});
    Tensor out = matmul(wmat, cols, false, true);
    auto bidx = std::make_shared<std::vector<int64_t>>();
    for (int64_t c = 0; c < co; ++c)
      for (int64_t s = 0; s < spots; ++s) bidx->push_back(c);
    return reshape(add(out, gather(b.value, bidx, {co, spots})),
                   {co, h, w, z});
  };

  Tensor direct = conv3d(x.value, wt.value, b.value, 1, pad);
  Tensor ref = reference();
  REQUIRE(direct.shape() == ref.shape());
  for (int64_t i = 0; i < direct.numel(); ++i)
    CHECK(direct.data()[i] ==
          doctest::Approx(ref.data()[i]).epsilon(1e-12));

  // Gradients agree between the two routes as well.
  Tensor dl = sum_all(mul(direct, direct));
  dl.backward();
  std::vector<double> gx = x.value.grad(), gw = wt.value.grad(),
                      gb = b.value.grad();
  Tensor rl = sum_all(mul(ref, ref));
  rl.backward();
  for (size_t i = 0; i < gx.size(); ++i)
    CHECK(gx[i] == doctest::Approx(x.value.grad()[i]).epsilon(1e-10));
  for (size_t i = 0; i < gw.size(); ++i)
    CHECK(gw[i] == doctest::Approx(wt.value.grad()[i]).epsilon(1e-10));
  for (size_t i = 0; i < gb.size(); ++i)
    CHECK(gb[i] == doctest::Approx(b.value.grad()[i]).epsilon(1e-10));
}

TEST_CASE("backward of a sum of losses equals sum of backwards exactly") {
  Rng rng(555);
  Tensor x = random_tensor(rng, {17}, true);
  Tensor c = random_tensor(rng, {17}, false);

  auto loss1 = [&]() { return sum_all(relu(mul(scale(x, 3.0), c))); };
  auto loss2 = [&]() { return sum_all(exp_elem(scale(x, 0.5))); };

  Tensor both = add(loss1(), loss2());
  both.backward();
  std::vector<double> combined = x.grad();

  Tensor l1 = loss1();
  l1.backward();
  std::vector<double> g1 = x.grad();
  Tensor l2 = loss2();
  l2.backward();
  std::vector<double> g2 = x.grad();

  for (size_t i = 0; i < combined.size(); ++i)
    CHECK(combined[i] == g1[i] + g2[i]);
}

TEST_CASE("repeated forward passes are bit-identical") {
  Rng rng(99);
  Tensor x = random_tensor(rng, {4, 4}, false);
  Tensor w = random_tensor(rng, {4, 4}, false);
  auto f = [&]() {
    return softmax(matmul(relu(x), w), 1);
  };
  Tensor a = f();
  Tensor b = f();
  CHECK(a.data_vec() == b.data_vec());
}

TEST_CASE("requires_grad = false never accumulates gradient") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, false);
  Tensor w = Tensor::from_data({2}, {3.0, 4.0}, true);
  Tensor loss = sum_all(mul(x, w));
  loss.backward();
  CHECK(!x.has_grad());
  CHECK(w.has_grad());
}

TEST_CASE("parameter initialization is reproducible and bounded") {
  Rng a(1234), b(1234);
  Parameter pa = make_param("p", {8, 4}, 4, a);
  Parameter pb = make_param("p", {8, 4}, 4, b);
  CHECK(pa.value.data_vec() == pb.value.data_vec());
  for (double v : pa.value.data_vec()) CHECK(std::fabs(v) <= 0.5);
}

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), hd2::ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), hd2::ShapeError);
  CHECK_THROWS_AS(t.item(), hd2::ShapeError);
}
