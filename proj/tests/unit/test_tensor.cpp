#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dudo/tensor/io.hpp"
#include "dudo/tensor/ops.hpp"
#include "dudo/tensor/tape.hpp"
#include "support/gradcheck.hpp"

using namespace dudo;
using dudo::testing::grad_check;
using dudo::testing::probe_objective;
using dudo::testing::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

std::size_t idx5(const Tensor& t, std::size_t b, std::size_t c, std::size_t d, std::size_t h,
                 std::size_t w) {
  return (((b * t.dim(1) + c) * t.dim(2) + d) * t.dim(3) + h) * t.dim(4) + w;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, 1.5, true);
  CHECK(t.numel() == 6);
  CHECK(t.grad().size() == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{0, 3}), ContractError);
}

TEST_CASE("conv3d on ones") {
  Tensor x = Tensor::ones({1, 1, 4, 4, 4});
  Tensor k = Tensor::ones({1, 1, 3, 3, 3});
  Tensor b = Tensor::zeros({1});
  Tensor y = ops::conv3d(x, k, b, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  CHECK(y[idx5(y, 0, 0, 1, 1, 1)] == 27.0);
  CHECK(y[idx5(y, 0, 0, 0, 0, 0)] == 8.0);
  CHECK(y[idx5(y, 0, 0, 3, 3, 3)] == 8.0);
}

TEST_CASE("conv3d output extents and errors") {
  Tensor x = Tensor::ones({1, 2, 8, 6, 4});
  Tensor k = Tensor::ones({3, 2, 3, 3, 3});
  Tensor y = ops::conv3d(x, k, Tensor(), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 4, 3, 2});
  Tensor bad = Tensor::ones({3, 5, 3, 3, 3});
  try {
    ops::conv3d(x, bad, Tensor(), 1, 1);
    FAIL("expected dimension error");
  } catch (const DimensionError& e) {
    CHECK(e.axis() == "channel");
  }
  CHECK_THROWS_AS(ops::conv3d(x, Tensor::ones({3, 2, 2, 2, 2}), Tensor(), 1, 0), ContractError);
}

TEST_CASE("conv3d gradient matches finite differences") {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    Tensor x = random_tensor({2, 2, 4, 5, 6}, rng);
    Tensor k = random_tensor({3, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor probe = ops::conv3d(x.detach(), k.detach(), b.detach(), stride, 1);
    Tensor w = random_tensor(probe.shape(), rng, 1.0, false);
    auto r = grad_check([&] { return probe_objective(ops::conv3d(x, k, b, stride, 1), w); }, {x, k, b});
    CHECK(r.rel_error < 1e-6);
  }
}

TEST_CASE("conv3d_transpose is the adjoint of strided conv3d") {
  std::mt19937_64 rng(5);
  Tensor k = random_tensor({4, 3, 3, 3, 3}, rng, 1.0, false);
  Tensor x = random_tensor({2, 3, 6, 4, 8}, rng, 1.0, false);
  Tensor y = random_tensor({2, 4, 3, 2, 4}, rng, 1.0, false);
  const double lhs = dot(ops::conv3d(x, k, Tensor(), 2, 1), y);
  const double rhs = dot(x, ops::conv3d_transpose(y, k, Tensor(), 2, 1, {6, 4, 8}));
  CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-12);

  Tensor up = ops::upconv3d(y, k, Tensor());
  CHECK(up.shape() == Shape{2, 3, 6, 4, 8});
  CHECK_THROWS_AS(ops::conv3d_transpose(y, k, Tensor(), 2, 1, {7, 4, 8}), DimensionError);
}

TEST_CASE("conv3d_transpose of a delta places the kernel") {
  Tensor k({1, 1, 3, 3, 3});
  for (std::size_t i = 0; i < 27; ++i) k[i] = static_cast<double>(i + 1);
  Tensor x = Tensor::zeros({1, 1, 3, 3, 3});
  x[idx5(x, 0, 0, 1, 1, 1)] = 1.0;
  Tensor y = ops::conv3d_transpose(x, k, Tensor(), 2, 1, {6, 6, 6});
  // Input voxel 1 maps to output 2*1 - 1 + tap.
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(y[idx5(y, 0, 0, 1 + a, 1 + b, 1 + c)] == k[(a * 3 + b) * 3 + c]);
  double total = 0.0;
  for (double v : y.data()) total += v;
  CHECK(total == doctest::Approx(378.0));
}

TEST_CASE("conv3d_transpose gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({1, 3, 2, 3, 2}, rng);
  Tensor k = random_tensor({3, 2, 3, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor w = random_tensor({1, 2, 4, 6, 4}, rng, 1.0, false);
  auto r = grad_check([&] { return probe_objective(ops::upconv3d(x, k, b), w); }, {x, k, b});
  CHECK(r.rel_error < 1e-6);
}

TEST_CASE("pooling") {
  Tensor c({1, 2, 4, 4, 2}, 3.25);
  Tensor p = ops::avg_pool3d(c, 2);
  CHECK(p.shape() == Shape{1, 2, 2, 2, 1});
  for (double v : p.data()) CHECK(v == 3.25);
  CHECK_THROWS_AS(ops::avg_pool3d(Tensor::ones({1, 1, 3, 4, 4}), 2), DimensionError);

  Tensor g({1, 2, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) g[i] = static_cast<double>(i + 1);
  Tensor m = ops::global_avg_pool(g);
  CHECK(m.shape() == Shape{1, 2});
  CHECK(m[0] == 4.5);
  CHECK(m[1] == 0.0);

  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 2, 4, 2, 4}, rng);
  Tensor w1 = random_tensor({2, 2, 2, 1, 2}, rng, 1.0, false);
  Tensor w2 = random_tensor({2, 2}, rng, 1.0, false);
  CHECK(grad_check([&] { return probe_objective(ops::avg_pool3d(x, 2), w1); }, {x}).rel_error < 1e-6);
  CHECK(grad_check([&] { return probe_objective(ops::global_avg_pool(x), w2); }, {x}).rel_error < 1e-6);
}

TEST_CASE("fully_connected") {
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y = ops::fully_connected(x, eye, Tensor::zeros({3}));
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == x[i]);
  Tensor bias({2}, std::vector<double>{0.5, -2});
  Tensor z = ops::fully_connected(x, Tensor::zeros({2, 3}), bias);
  CHECK(z[0] == 0.5);
  CHECK(z[3] == -2);
  CHECK_THROWS_AS(ops::fully_connected(x, Tensor::zeros({2, 4}), bias), DimensionError);

  std::mt19937_64 rng(9);
  Tensor xr = random_tensor({2, 5}, rng);
  Tensor wr = random_tensor({3, 5}, rng);
  Tensor br = random_tensor({3}, rng);
  Tensor probe = random_tensor({2, 3}, rng, 1.0, false);
  auto r = grad_check([&] { return probe_objective(ops::fully_connected(xr, wr, br), probe); },
                      {xr, wr, br});
  CHECK(r.rel_error < 1e-6);
}

TEST_CASE("elementwise primitives") {
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor a({1, 3, 2, 2, 2}, 1.0);
  Tensor b({1, 5, 2, 2, 2}, 2.0);
  CHECK(ops::concat_channels({a, b}).dim(1) == 8);
  CHECK_THROWS_AS(ops::concat_channels({a, Tensor::ones({1, 5, 2, 2, 3})}), DimensionError);

  std::mt19937_64 rng(2);
  Tensor x = random_tensor({2, 3, 2, 2, 2}, rng);
  Tensor y = ops::mul(x, Tensor::ones(x.shape()));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  Tensor u = random_tensor({2, 3, 2, 2, 2}, rng);
  Tensor v = random_tensor({2, 3, 2, 2, 2}, rng);
  Tensor s = random_tensor({2, 3}, rng);
  Tensor gate = random_tensor({2, 1, 2, 2, 2}, rng);
  Tensor w = random_tensor(u.shape(), rng, 1.0, false);
  Tensor w2 = random_tensor({2, 4, 2, 2, 2}, rng, 1.0, false);
  auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
    CHECK(grad_check(f, leaves).rel_error < 1e-6);
  };
  check([&] { return probe_objective(ops::sigmoid(u), w); }, {u});
  check([&] { return probe_objective(ops::relu(u), w); }, {u});
  check([&] { return probe_objective(ops::softplus(u), w); }, {u});
  check([&] { return probe_objective(ops::mul(u, v), w); }, {u, v});
  check([&] { return probe_objective(ops::sub(ops::add(u, v), ops::scale(v, 3.0)), w); }, {u, v});
  check([&] { return probe_objective(ops::channel_scale(u, s), w); }, {u, s});
  check([&] { return probe_objective(ops::spatial_gate(u, gate), w); }, {u, gate});
  check([&] {
    return probe_objective(ops::slice_channels(ops::concat_channels({u, v}), 1, 4), w2);
  }, {u, v});
  Tensor wu = random_tensor({2, 3, 4, 4, 4}, rng, 1.0, false);
  check([&] { return probe_objective(ops::upsample_nearest(u, 2), wu); }, {u});
  Tensor wp = random_tensor({2, 3, 3, 2, 4}, rng, 1.0, false);
  check([&] { return probe_objective(ops::pad_spatial(u, {3, 2, 4}), wp); }, {u});
  Tensor wc = random_tensor({2, 3, 1, 2, 1}, rng, 1.0, false);
  check([&] { return probe_objective(ops::crop_spatial(u, {1, 2, 1}), wc); }, {u});
}

TEST_CASE("pad and crop are adjoint") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({1, 2, 3, 2, 5}, rng, 1.0, false);
  Tensor y = random_tensor({1, 2, 4, 4, 8}, rng, 1.0, false);
  CHECK(std::abs(dot(ops::pad_spatial(x, {4, 4, 8}), y) - dot(x, ops::crop_spatial(y, {3, 2, 5}))) <
        1e-12);
}

TEST_CASE("batch_norm3d") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 3, 2, 3, 2}, rng, 2.0, true);
  Tensor gamma({3}, std::vector<double>{1.5, -0.5, 2.0}, true);
  Tensor beta({3}, std::vector<double>{0.2, 1.0, -3.0}, true);
  ops::BatchNormState state(3);
  Tensor y = ops::batch_norm3d(x, gamma, beta, state, ops::NormMode::kTrain);
  const std::size_t S = 12;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, m2 = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s < S; ++s) {
        const double v = y[(b * 3 + c) * S + s];
        m += v;
        m2 += v * v;
      }
    m /= 2 * S;
    const double sd = std::sqrt(m2 / (2 * S) - m * m);
    CHECK(std::abs(m - beta[c]) < 1e-6);
    // var / (var + eps) shrinks the std slightly; tolerance covers eps = 1e-5.
    CHECK(std::abs(sd - std::abs(gamma[c])) < 1e-5 * std::abs(gamma[c]) + 1e-6);
  }
  CHECK(state.initialized);

  ops::BatchNormState fresh(3);
  CHECK_THROWS_AS(ops::batch_norm3d(x, gamma, beta, fresh, ops::NormMode::kEval), ContractError);

  // Standardized input with identity affine passes through (up to eps).
  Tensor z({1, 1, 1, 1, 4}, std::vector<double>{-1, -1, 1, 1});
  ops::BatchNormState st1(1);
  Tensor zy = ops::batch_norm3d(z, Tensor::ones({1}), Tensor::zeros({1}), st1, ops::NormMode::kTrain);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(zy[i] - z[i]) < 1e-5);

  Tensor w = random_tensor(x.shape(), rng, 1.0, false);
  ops::BatchNormState st2(3);
  auto r = grad_check(
      [&] { return probe_objective(ops::batch_norm3d(x, gamma, beta, st2, ops::NormMode::kTrain), w); },
      {x, gamma, beta});
  CHECK(r.rel_error < 1e-6);
  auto re = grad_check(
      [&] { return probe_objective(ops::batch_norm3d(x, gamma, beta, st2, ops::NormMode::kEval), w); },
      {x, gamma, beta});
  CHECK(re.rel_error < 1e-6);
}

TEST_CASE("l1_loss") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({3, 4}, rng);
  CHECK(ops::l1_loss(x, x).item() == 0.0);
  CHECK(ops::l1_loss(Tensor::ones({5}), Tensor::zeros({5})).item() == 1.0);
  Tensor t = random_tensor({3, 4}, rng, 1.0, false);
  {
    Tape tape;
    Tensor loss = ops::l1_loss(x, t);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[i] == (x[i] > t[i] ? 1.0 : -1.0) / 12.0);
  CHECK(grad_check([&] { return ops::l1_loss(x, t); }, {x}).rel_error < 1e-6);
  CHECK_THROWS_AS(ops::l1_loss(x, Tensor::ones({4, 3})), DimensionError);
}

TEST_CASE("backward contract") {
  Tensor x({4}, std::vector<double>{1, -2, 3, 0.5}, true);
  {
    Tape tape;
    tape.backward(ops::sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  {
    Tape tape;
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2 * x[i]);
  // Gradients accumulate across passes until cleared.
  {
    Tape tape;
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 4 * x[i]);

  Tape tape;
  Tensor y = ops::mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Tensor s = ops::sum(y);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), ContractError);
}

TEST_CASE("no tape means no history") {
  Tensor x({3}, 1.0, true);
  Tensor y = ops::mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(backward(ops::sum(y)), ContractError);
}

TEST_CASE("encoder/decoder shape algebra") {
  std::mt19937_64 rng(1);
  for (int levels = 1; levels <= 3; ++levels) {
    const std::size_t f = std::size_t{1} << levels;
    Tensor x = random_tensor({1, 2, 2 * f, f, 3 * f}, rng, 1.0, false);
    Tensor h = x;
    for (int l = 0; l < levels; ++l) h = ops::avg_pool3d(h, 2);
    Tensor k = random_tensor({2, 2, 3, 3, 3}, rng, 1.0, false);
    for (int l = 0; l < levels; ++l) h = ops::upconv3d(h, k, Tensor());
    CHECK(h.shape() == x.shape());
  }
}

TEST_CASE("determinism") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x = random_tensor({2, 3, 4, 4, 4}, rng);
    Tensor k = random_tensor({4, 3, 3, 3, 3}, rng);
    Tensor w = random_tensor({2, 4, 4, 4, 4}, rng, 1.0, false);
    Tape tape;
    Tensor loss = probe_objective(ops::relu(ops::conv3d(x, k, Tensor(), 1, 1)), w);
    tape.backward(loss);
    std::vector<double> out(k.grad().begin(), k.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("DDT1 round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dudo_test_io";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(13);
  Tensor t = random_tensor({3, 1, 4}, rng, 1.0, false);
  quantize_f32(t);
  save_ddt(dir / "t.ddt", t);
  Tensor back = load_ddt(dir / "t.ddt");
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
  {
    std::ofstream junk(dir / "bad.ddt", std::ios::binary);
    junk << "NOPE";
  }
  CHECK_THROWS_AS(load_ddt(dir / "bad.ddt"), IoError);
  CHECK_THROWS_AS(load_ddt(dir / "missing.ddt"), IoError);
  std::filesystem::remove_all(dir);
}
