#include <gtest/gtest.h>

#include <random>

#include "fineft/neural.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace fineft;

TEST(Huber, Branches) {
  EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(2.0, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(huber(-2.0, 1.0), 1.5);
  for (double d : {0.3, 1.0, 4.0}) {
    EXPECT_DOUBLE_EQ(huber(d, d), 0.5 * d * d);
    EXPECT_NEAR(huber(std::nextafter(d, 10.0), d), 0.5 * d * d, 1e-12);
    EXPECT_EQ(huber_grad(10.0, d), d);
    EXPECT_EQ(huber_grad(-10.0, d), -d);
  }
  EXPECT_THROW((void)huber(1.0, 0.0), Error);
}

TEST(Adam, QuadraticConverges) {
  Mlp theta;
  theta.layers.push_back({Matrix::Zero(1, 1), Vector::Zero(1)});
  Adam opt{LrSchedule{}};
  for (int i = 0; i < 5000; ++i) {
    const double t = theta.layers[0].w(0, 0);
    Mlp g = Mlp::zeros_like(theta);
    g.layers[0].w(0, 0) = 2.0 * (t - 3.0);
    opt.step(theta, g, (t - 3.0) * (t - 3.0));
  }
  EXPECT_NEAR(theta.layers[0].w(0, 0), 3.0, 1e-3);
  EXPECT_EQ(theta.layers[0].b(0), 0.0);
}

TEST(Adam, ZeroGradientLeavesParametersExactly) {
  auto net = Mlp::create({3, 4, 2}, 1);
  const auto before = net;
  Adam opt{LrSchedule{}};
  for (int i = 0; i < 10; ++i) opt.step(net, Mlp::zeros_like(net), 0.0);
  EXPECT_EQ(net, before);
}

TEST(Adam, NonFiniteInputsThrowAndLeaveParameters) {
  auto net = Mlp::create({3, 4, 2}, 1);
  const auto before = net;
  Adam opt{LrSchedule{}};
  auto g = Mlp::zeros_like(net);
  g.layers[0].w(0, 0) = 1.0;
  EXPECT_THROW(opt.step(net, g, std::nan("")), Error);
  g.layers[1].b(1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(opt.step(net, g, 1.0), Error);
  EXPECT_EQ(net, before);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Adam, LearningRateDecaysLinearly) {
  LrSchedule s;
  EXPECT_DOUBLE_EQ(s.at(0), 5e-3);
  EXPECT_DOUBLE_EQ(s.at(10000), 0.5 * (5e-3 + 1e-4));
  EXPECT_DOUBLE_EQ(s.at(20000), 1e-4);
  EXPECT_DOUBLE_EQ(s.at(90000), 1e-4);
}

TEST(GradientCheck, Mlp) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_LE(fixtures::mlp_gradcheck(rng), 1e-4);
}

TEST(GradientCheck, HuberTd) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) EXPECT_LE(fixtures::huber_td_gradcheck(rng), 1e-4);
}

TEST(GradientCheck, Vae) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_LE(fixtures::vae_gradcheck(rng), 1e-4);
}

TEST(GradientCheck, KinkMarginIsTheClosestHiddenPreActivation) {
  Mlp m;
  Matrix w1(2, 1), w2(1, 2);
  w1 << 1.0, -2.0;
  w2 << 1.0, 1.0;
  Vector b1(2), b2(1);
  b1 << 0.5, 0.25;
  b2 << 7.0;
  m.layers = {{w1, b1}, {w2, b2}};
  Matrix x(1, 2);
  x << 0.0, 0.2;
  // pre-activations 0.5, 0.25 and 0.7, -0.15
  EXPECT_NEAR(fixtures::relu_margin(m, x), 0.15, 1e-15);
  Matrix raw(1, 2);
  raw << kLogVarMin + 0.5, kLogVarMax - 0.125;
  EXPECT_EQ(fixtures::clamp_margin(raw), 0.125);
}

TEST(GradientCheck, SoftmaxKl) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    Vector q = fixtures::random_matrix(rng, 5, 1, 2.0);
    const Vector t = fixtures::random_matrix(rng, 5, 1, 2.0);
    const auto r = kl_softmax(q, t, 0.7);
    std::vector<double*> p, g;
    Vector grad = r.grad;
    for (int k = 0; k < 5; ++k) {
      p.push_back(q.data() + k);
      g.push_back(grad.data() + k);
    }
    EXPECT_LE(fixtures::gradcheck(p, g, [&] { return kl_softmax(q, t, 0.7).value; }), 1e-6);
    EXPECT_GE(r.value, 0.0);
  }
  const Vector same = Vector::LinSpaced(4, -1.0, 2.0);
  EXPECT_NEAR(kl_softmax(same, same).value, 0.0, 1e-15);
}

namespace {

// VAE whose encoder and decoder ignore their inputs and emit fixed biases.
Vae constant_vae(std::size_t d, std::size_t latent, const Vector& enc_bias, const Vector& dec_bias) {
  auto v = Vae::create(d, 4, latent, 0);
  for (auto* m : {&v.encoder, &v.decoder})
    for (auto& l : m->layers) {
      l.w.setZero();
      l.b.setZero();
    }
  v.encoder.layers.back().b = enc_bias;
  v.decoder.layers.back().b = dec_bias;
  return v;
}

}  // namespace

TEST(VaeLoss, PlugInValues) {
  const std::size_t d = 3, L = 2;
  Vector y(3);
  y << 0.5, -1.0, 2.0;
  Vector dec(6);
  dec << y, Vector::Zero(3);
  const Matrix noise = Matrix::Zero(2, 1);

  auto v = constant_vae(d, L, Vector::Zero(4), dec);
  auto loss = vae_loss(v, y, noise);
  EXPECT_NEAR(loss.nll, 3 * 0.91893853320467274, 1e-14);
  EXPECT_NEAR(loss.kld, 0.0, 1e-15);

  Vector enc(4);
  enc << 1.0, 1.0, 0.0, 0.0;
  v = constant_vae(d, L, enc, dec);
  EXPECT_NEAR(vae_loss(v, y, noise).kld, 0.5 * 2, 1e-14);
}

TEST(VaeLoss, KldIsNonNegative) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    auto v = Vae::create(4, 6, 3, rng());
    const Matrix y = fixtures::random_matrix(rng, 4, 8);
    const Matrix noise = fixtures::random_matrix(rng, 3, 8);
    for (const auto& l : vae_sample_losses(v, y, noise)) EXPECT_GE(l.kld, 0.0);
  }
}

TEST(VaeLoss, SampleLossesAverageToBatchLoss) {
  std::mt19937_64 rng(6);
  auto v = Vae::create(5, 7, 2, 11);
  const Matrix y = fixtures::random_matrix(rng, 5, 9);
  const Matrix noise = fixtures::random_matrix(rng, 2, 9);
  double sum = 0.0;
  for (const auto& l : vae_sample_losses(v, y, noise)) sum += l.total;
  EXPECT_NEAR(sum / 9.0, vae_loss(v, y, noise).total, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto net = Mlp::create({7, 128, 128, 9}, 99);
  auto dir = fixtures::scratch_dir("ckpt");
  save_mlp(dir / "net.ckpt", net);
  EXPECT_EQ(load_mlp(dir / "net.ckpt"), net);
  auto vae = Vae::create(12, 32, 4, 5);
  save_vae(dir / "vae.ckpt", vae);
  EXPECT_EQ(load_vae(dir / "vae.ckpt"), vae);
  write_text(dir / "bad.ckpt", "mlp v1 1\nlayer 2 2\n0x1p+0 zz\n");
  EXPECT_THROW((void)load_mlp(dir / "bad.ckpt"), Error);
}

TEST(Mlp, SeedDeterminismAndSoftUpdate) {
  EXPECT_EQ(Mlp::create({4, 8, 3}, 1), Mlp::create({4, 8, 3}, 1));
  EXPECT_NE(Mlp::create({4, 8, 3}, 1), Mlp::create({4, 8, 3}, 2));
  auto online = Mlp::create({4, 8, 3}, 1), target = Mlp::create({4, 8, 3}, 2);
  const double d0 = std::sqrt(online.squared_distance(target));
  for (int k = 0; k < 10; ++k) soft_update(target, online, 0.005);
  EXPECT_NEAR(std::sqrt(online.squared_distance(target)), d0 * std::pow(0.995, 10), 1e-12 * d0);
}
