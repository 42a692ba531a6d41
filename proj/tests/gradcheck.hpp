#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "fineft/neural.hpp"

namespace fineft::fixtures {

// Relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
// over all parameters, numeric by central differences.
inline double gradcheck(const std::vector<double*>& params, const std::vector<double*>& analytic,
                        const std::function<double()>& loss, double eps = 1e-5) {
  double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = *params[i];
    *params[i] = keep + eps;
    const double up = loss();
    *params[i] = keep - eps;
    const double down = loss();
    *params[i] = keep;
    const double num = (up - down) / (2.0 * eps);
    diff += (num - *analytic[i]) * (num - *analytic[i]);
    norm_a += *analytic[i] * *analytic[i];
    norm_n += num * num;
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm_a) + std::sqrt(norm_n), 1e-12);
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

// Central differences are only a valid reference where the loss is smooth
// within the step; sampled inputs closer than this to a ReLU or clamp kink are
// redrawn.
inline constexpr double kKinkMargin = 1e-3;

// Smallest |pre-activation| over the hidden ReLU units of `net` on `x`.
inline double relu_margin(const Mlp& net, const Matrix& x) {
  double m = std::numeric_limits<double>::infinity();
  Matrix a = x;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    const Matrix z = (net.layers[l].w * a).colwise() + net.layers[l].b;
    m = std::min(m, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return m;
}

inline double clamp_margin(const Matrix& raw) {
  return std::min((raw.array() - kLogVarMin).abs().minCoeff(), (raw.array() - kLogVarMax).abs().minCoeff());
}

// Loss sum(c .* f(x)) for a random MLP; returns the relative gradient error.
inline double mlp_gradcheck(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 6), depth(1, 3), batch(1, 4);
  std::vector<std::size_t> sizes{dim(rng)};
  const auto hidden = depth(rng);
  for (std::size_t i = 0; i < hidden; ++i) sizes.push_back(dim(rng) + 2);
  sizes.push_back(dim(rng));
  auto net = Mlp::create(sizes, rng());
  const auto b = static_cast<Eigen::Index>(batch(rng));
  Matrix x;
  do x = random_matrix(rng, static_cast<Eigen::Index>(sizes.front()), b);
  while (relu_margin(net, x) < kKinkMargin);
  const Matrix c = random_matrix(rng, static_cast<Eigen::Index>(sizes.back()), b);
  auto loss = [&] { return net.forward(x).cwiseProduct(c).sum(); };
  Mlp grad = Mlp::zeros_like(net);
  Mlp::Cache cache;
  (void)net.forward(x, &cache);
  net.backward(cache, c, grad);
  return gradcheck(net.parameters(), grad.parameters(), loss);
}

// Huber TD composite: mean_k huber(r_k + gamma * max Q_target(s'_k) - Q(s_k, a_k)).
inline double huber_td_gradcheck(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 6), acts(2, 5), batch(1, 6);
  const auto in = dim(rng), na = acts(rng);
  auto online = Mlp::create({in, 8, 8, na}, rng());
  auto target = Mlp::create({in, 8, 8, na}, rng());
  const auto b = static_cast<Eigen::Index>(batch(rng));
  Matrix s;
  do s = random_matrix(rng, static_cast<Eigen::Index>(in), b);
  while (relu_margin(online, s) < kKinkMargin);
  const Matrix s2 = random_matrix(rng, static_cast<Eigen::Index>(in), b);
  const Matrix r = random_matrix(rng, 1, b, 2.0);
  std::uniform_int_distribution<std::size_t> pick(0, na - 1);
  std::vector<Eigen::Index> a;
  for (Eigen::Index k = 0; k < b; ++k) a.push_back(static_cast<Eigen::Index>(pick(rng)));
  const double gamma = 0.9;
  const Matrix tq = target.forward(s2);
  auto td = [&](const Matrix& q, Eigen::Index k) { return r(0, k) + gamma * tq.col(k).maxCoeff() - q(a[static_cast<std::size_t>(k)], k); };
  auto loss = [&] {
    const Matrix q = online.forward(s);
    double l = 0.0;
    for (Eigen::Index k = 0; k < b; ++k) l += huber(td(q, k));
    return l / static_cast<double>(b);
  };
  Mlp::Cache cache;
  const Matrix q = online.forward(s, &cache);
  Matrix d = Matrix::Zero(q.rows(), q.cols());
  for (Eigen::Index k = 0; k < b; ++k)
    d(a[static_cast<std::size_t>(k)], k) = -huber_grad(td(q, k)) / static_cast<double>(b);
  Mlp grad = Mlp::zeros_like(online);
  online.backward(cache, d, grad);
  return gradcheck(online.parameters(), grad.parameters(), loss);
}

// Full VAE loss including the reparameterization path.
inline double vae_gradcheck(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 6), lat(1, 4), hid(3, 8), batch(1, 4);
  const auto d = dim(rng), L = lat(rng);
  auto vae = Vae::create(d, hid(rng), L, rng());
  const auto b = static_cast<Eigen::Index>(batch(rng));
  Matrix y, noise;
  auto margin = [&] {
    const auto f = detail::vae_forward(vae, y, noise);
    return std::min({relu_margin(vae.encoder, y), relu_margin(vae.decoder, f.z), clamp_margin(f.logvar_raw),
                     clamp_margin(f.logvar_d_raw)});
  };
  do {
    y = random_matrix(rng, static_cast<Eigen::Index>(d), b);
    noise = random_matrix(rng, static_cast<Eigen::Index>(L), b);
  } while (margin() < kKinkMargin);
  Mlp ge = Mlp::zeros_like(vae.encoder), gd = Mlp::zeros_like(vae.decoder);
  (void)vae_loss(vae, y, noise, &ge, &gd);
  auto loss = [&] { return vae_loss(vae, y, noise).total; };
  auto params = vae.encoder.parameters();
  auto dp = vae.decoder.parameters();
  params.insert(params.end(), dp.begin(), dp.end());
  auto grads = ge.parameters();
  auto dg = gd.parameters();
  grads.insert(grads.end(), dg.begin(), dg.end());
  return gradcheck(params, grads, loss);
}

}  // namespace fineft::fixtures
