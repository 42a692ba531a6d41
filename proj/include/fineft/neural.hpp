#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fineft/core.hpp"

namespace fineft {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Losses

[[nodiscard]] inline double huber(double x, double delta = 1.0) {
  if (!(delta > 0.0)) fail("huber: delta must be positive");
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

[[nodiscard]] inline double huber_grad(double x, double delta = 1.0) { return std::clamp(x, -delta, delta); }

[[nodiscard]] inline Vector softmax(const Vector& z, double temperature = 1.0) {
  Vector s = z / temperature;
  s.array() -= s.maxCoeff();
  s = s.array().exp();
  return s / s.sum();
}

[[nodiscard]] inline Vector log_softmax(const Vector& z, double temperature = 1.0) {
  Vector s = z / temperature;
  const double m = s.maxCoeff();
  const double lse = m + std::log((s.array() - m).exp().sum());
  return s.array() - lse;
}

// KL(softmax(q/T) || softmax(target/T)) and its gradient with respect to q.
// Target log-probabilities are floored at -30 so masked rows stay finite.
struct KlResult {
  double value{0.0};
  Vector grad;
};

[[nodiscard]] inline KlResult kl_softmax(const Vector& q, const Vector& target, double temperature = 1.0) {
  if (q.size() != target.size()) fail("kl_softmax: size mismatch");
  const Vector lp = log_softmax(q, temperature);
  const Vector lq = log_softmax(target, temperature).array().max(-30.0);
  const Vector p = lp.array().exp();
  const Vector diff = lp - lq;
  KlResult r;
  r.value = p.dot(diff);
  r.grad = (p.array() * (diff.array() - r.value)) / temperature;
  return r;
}

// ---------------------------------------------------------------------------
// MLP: rectifier hidden layers, identity output. Samples are columns.

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
  bool operator==(const DenseLayer& o) const { return w == o.w && b == o.b; }
};

struct Mlp {
  std::vector<DenseLayer> layers;

  [[nodiscard]] static Mlp create(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) fail("Mlp needs at least input and output sizes");
    for (auto s : sizes)
      if (s == 0) fail("Mlp layer sizes must be positive");
    std::mt19937_64 rng(seed);
    Mlp m;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto in = static_cast<Eigen::Index>(sizes[l]), out = static_cast<Eigen::Index>(sizes[l + 1]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      DenseLayer layer{Matrix(out, in), Vector(out)};
      for (Eigen::Index c = 0; c < in; ++c)
        for (Eigen::Index r = 0; r < out; ++r) layer.w(r, c) = u(rng);
      for (Eigen::Index r = 0; r < out; ++r) layer.b(r) = u(rng);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  [[nodiscard]] static Mlp zeros_like(const Mlp& o) {
    Mlp m;
    for (const auto& l : o.layers) m.layers.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
    return m;
  }

  [[nodiscard]] std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().w.cols()); }
  [[nodiscard]] std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().w.rows()); }
  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  struct Cache {
    std::vector<Matrix> acts;  // acts[0] = input, acts[l+1] = output of layer l
  };

  [[nodiscard]] Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != input_dim())
      fail("Mlp::forward: input has ", x.rows(), " rows, expected ", input_dim());
    Matrix a = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(a);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Matrix z = layers[l].w * a;
      z.colwise() += layers[l].b;
      if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
      a = std::move(z);
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  [[nodiscard]] Vector forward_one(const Vector& x) const { return forward(x); }

  // Accumulates parameter gradients of sum(d_out .* output) into `grad`;
  // returns the gradient with respect to the input.
  Matrix backward(const Cache& cache, const Matrix& d_out, Mlp& grad) const {
    Matrix delta = d_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const Matrix& a_in = cache.acts[l];
      grad.layers[l].w.noalias() += delta * a_in.transpose();
      grad.layers[l].b += delta.rowwise().sum();
      Matrix d_in = layers[l].w.transpose() * delta;
      if (l > 0) d_in = d_in.cwiseProduct((a_in.array() > 0.0).cast<double>().matrix());
      delta = std::move(d_in);
    }
    return delta;
  }

  void scale(double s) {
    for (auto& l : layers) {
      l.w *= s;
      l.b *= s;
    }
  }
  void add_scaled(const Mlp& o, double s) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].w += s * o.layers[i].w;
      layers[i].b += s * o.layers[i].b;
    }
  }
  [[nodiscard]] bool all_finite() const {
    for (const auto& l : layers)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }
  [[nodiscard]] double squared_distance(const Mlp& o) const {
    double s = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i)
      s += (layers[i].w - o.layers[i].w).squaredNorm() + (layers[i].b - o.layers[i].b).squaredNorm();
    return s;
  }

  // Flat views for finite-difference checks and bulk operations.
  [[nodiscard]] std::vector<double*> parameters() {
    std::vector<double*> p;
    for (auto& l : layers) {
      for (Eigen::Index i = 0; i < l.w.size(); ++i) p.push_back(l.w.data() + i);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) p.push_back(l.b.data() + i);
    }
    return p;
  }

  bool operator==(const Mlp& o) const { return layers == o.layers; }
};

// Polyak averaging: target <- tau * online + (1 - tau) * target.
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    target.layers[i].w = tau * online.layers[i].w + (1.0 - tau) * target.layers[i].w;
    target.layers[i].b = tau * online.layers[i].b + (1.0 - tau) * target.layers[i].b;
  }
}

// ---------------------------------------------------------------------------
// Adam with a linearly decaying learning rate.

struct LrSchedule {
  double start{5e-3};
  double end{1e-4};
  std::size_t decay_steps{20000};

  [[nodiscard]] double at(std::size_t step) const {
    if (decay_steps == 0 || step >= decay_steps) return end;
    const double f = static_cast<double>(step) / static_cast<double>(decay_steps);
    return start + (end - start) * f;
  }
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(LrSchedule lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update to every parameter group; throws without touching any
  // parameter when the loss or a gradient is not finite.
  void step(const std::vector<Mlp*>& params, const std::vector<const Mlp*>& grads, double loss) {
    if (params.size() != grads.size()) fail("Adam::step: parameter/gradient group mismatch");
    if (!std::isfinite(loss)) fail("non-finite loss ", loss);
    for (const auto* g : grads)
      if (!g->all_finite()) fail("non-finite gradient");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Mlp::zeros_like(*p));
        v_.push_back(Mlp::zeros_like(*p));
      }
    }
    if (m_.size() != params.size()) fail("Adam::step: parameter groups changed");
    const double lr = lr_.at(step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t g = 0; g < params.size(); ++g) {
      auto& p = params[g]->layers;
      const auto& d = grads[g]->layers;
      for (std::size_t l = 0; l < p.size(); ++l) {
        update(p[l].w, d[l].w, m_[g].layers[l].w, v_[g].layers[l].w, lr, bc1, bc2);
        update(p[l].b, d[l].b, m_[g].layers[l].b, v_[g].layers[l].b, lr, bc1, bc2);
      }
    }
  }

  void step(Mlp& params, const Mlp& grad, double loss) { step({&params}, {&grad}, loss); }

  [[nodiscard]] std::size_t steps() const { return step_; }
  [[nodiscard]] const LrSchedule& schedule() const { return lr_; }
  [[nodiscard]] double current_lr() const { return lr_.at(step_); }

 private:
  template <typename T>
  void update(T& p, const T& g, T& m, T& v, double lr, double bc1, double bc2) const {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }

  LrSchedule lr_;
  double beta1_{0.9}, beta2_{0.999}, eps_{1e-8};
  std::size_t step_{0};
  std::vector<Mlp> m_, v_;
};

// ---------------------------------------------------------------------------
// VAE: encoder emits (mu, log var), decoder emits (mu_d, log var_d).

constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct Vae {
  Mlp encoder;
  Mlp decoder;
  std::size_t latent{16};

  [[nodiscard]] static Vae create(std::size_t input_dim, std::size_t hidden, std::size_t latent, std::uint64_t seed) {
    if (input_dim == 0 || hidden == 0 || latent == 0) fail("Vae dimensions must be positive");
    Vae v;
    v.latent = latent;
    v.encoder = Mlp::create({input_dim, hidden, 2 * latent}, seed);
    v.decoder = Mlp::create({latent, hidden, 2 * input_dim}, seed ^ 0x9e3779b97f4a7c15ULL);
    return v;
  }

  [[nodiscard]] std::size_t input_dim() const { return encoder.input_dim(); }
  bool operator==(const Vae&) const = default;
};

struct VaeLoss {
  double total{0.0};
  double nll{0.0};
  double kld{0.0};
};

namespace detail {

struct VaeForward {
  Mlp::Cache enc, dec;
  Matrix mu, logvar_raw, logvar, z, mu_d, logvar_d_raw, logvar_d;
};

inline VaeForward vae_forward(const Vae& vae, const Matrix& y, const Matrix& noise) {
  const auto L = static_cast<Eigen::Index>(vae.latent);
  const auto d = y.rows();
  if (static_cast<std::size_t>(d) != vae.input_dim()) fail("vae: input dimension mismatch");
  if (noise.rows() != L || noise.cols() != y.cols()) fail("vae: noise shape mismatch");
  VaeForward f;
  Matrix h = vae.encoder.forward(y, &f.enc);
  f.mu = h.topRows(L);
  f.logvar_raw = h.bottomRows(L);
  f.logvar = f.logvar_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  f.z = f.mu + (0.5 * f.logvar.array()).exp().matrix().cwiseProduct(noise);
  Matrix o = vae.decoder.forward(f.z, &f.dec);
  f.mu_d = o.topRows(d);
  f.logvar_d_raw = o.bottomRows(d);
  f.logvar_d = f.logvar_d_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  return f;
}

}  // namespace detail

// Per-sample losses (columns of y) under a fixed reparameterization draw.
[[nodiscard]] inline std::vector<VaeLoss> vae_sample_losses(const Vae& vae, const Matrix& y, const Matrix& noise) {
  const auto f = detail::vae_forward(vae, y, noise);
  std::vector<VaeLoss> out(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    double nll = 0.0, kld = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double r = y(i, c) - f.mu_d(i, c);
      nll += 0.5 * r * r * std::exp(-f.logvar_d(i, c)) + 0.5 * f.logvar_d(i, c) + kHalfLog2Pi;
    }
    for (Eigen::Index i = 0; i < f.mu.rows(); ++i)
      kld += 0.5 * (std::exp(f.logvar(i, c)) + f.mu(i, c) * f.mu(i, c) - 1.0 - f.logvar(i, c));
    auto& l = out[static_cast<std::size_t>(c)];
    l.nll = nll;
    l.kld = kld;
    l.total = nll + kld;
    if (!std::isfinite(l.total)) fail("vae loss is not finite");
  }
  return out;
}

// Batch-mean loss; accumulates gradients into enc_grad / dec_grad when given.
inline VaeLoss vae_loss(const Vae& vae, const Matrix& y, const Matrix& noise, Mlp* enc_grad = nullptr,
                        Mlp* dec_grad = nullptr) {
  const auto f = detail::vae_forward(vae, y, noise);
  const double inv_b = 1.0 / static_cast<double>(y.cols());
  const auto d = y.rows();
  const auto L = f.mu.rows();

  const Matrix var_d_inv = (-f.logvar_d.array()).exp().matrix();
  const Matrix resid = y - f.mu_d;
  VaeLoss loss;
  loss.nll = (0.5 * resid.array().square() * var_d_inv.array() + 0.5 * f.logvar_d.array() + kHalfLog2Pi).sum() * inv_b;
  loss.kld = (0.5 * (f.logvar.array().exp() + f.mu.array().square() - 1.0 - f.logvar.array())).sum() * inv_b;
  loss.total = loss.nll + loss.kld;
  if (!std::isfinite(loss.total)) fail("vae loss is not finite");
  if (!enc_grad && !dec_grad) return loss;

  auto inside = [](const Matrix& raw) {
    return ((raw.array() >= kLogVarMin) && (raw.array() <= kLogVarMax)).cast<double>().matrix();
  };

  Matrix d_out(2 * d, y.cols());
  d_out.topRows(d) = -resid.cwiseProduct(var_d_inv) * inv_b;
  d_out.bottomRows(d) =
      ((0.5 - 0.5 * resid.array().square() * var_d_inv.array()) * inv_b).matrix().cwiseProduct(inside(f.logvar_d_raw));
  Mlp dec_tmp = Mlp::zeros_like(vae.decoder);
  Mlp& dg = dec_grad ? *dec_grad : dec_tmp;
  const Matrix dz = vae.decoder.backward(f.dec, d_out, dg);

  const Matrix sigma = (0.5 * f.logvar.array()).exp().matrix();
  Matrix d_enc(2 * L, y.cols());
  d_enc.topRows(L) = dz + f.mu * inv_b;
  d_enc.bottomRows(L) = (dz.array() * noise.array() * 0.5 * sigma.array() +
                         0.5 * (f.logvar.array().exp() - 1.0) * inv_b)
                            .matrix()
                            .cwiseProduct(inside(f.logvar_raw));
  if (enc_grad) vae.encoder.backward(f.enc, d_enc, *enc_grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: text with shape headers and hexadecimal floats (exact).

inline void write_mlp(std::ostream& out, const Mlp& m) {
  out << "mlp v1 " << m.layers.size() << '\n';
  out << std::hexfloat;
  for (const auto& l : m.layers) {
    out << "layer " << l.w.rows() << ' ' << l.w.cols() << '\n';
    for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) out << (c ? " " : "") << l.w(r, c);
      out << '\n';
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) out << (r ? " " : "") << l.b(r);
    out << '\n';
  }
  out << std::defaultfloat;
}

namespace detail {
inline double read_hex_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) fail("checkpoint: unexpected end of data");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) fail("checkpoint: bad number '", tok, "'");
  return v;
}
}  // namespace detail

[[nodiscard]] inline Mlp read_mlp(std::istream& in) {
  std::string tag, ver;
  std::size_t n = 0;
  if (!(in >> tag >> ver >> n) || tag != "mlp" || ver != "v1") fail("checkpoint: bad mlp header");
  Mlp m;
  for (std::size_t i = 0; i < n; ++i) {
    std::string lt;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> lt >> rows >> cols) || lt != "layer" || rows <= 0 || cols <= 0) fail("checkpoint: bad layer header");
    if (!m.layers.empty() && m.layers.back().w.rows() != cols) fail("checkpoint: layer shapes do not chain");
    DenseLayer l{Matrix(rows, cols), Vector(rows)};
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) l.w(r, c) = detail::read_hex_double(in);
    for (Eigen::Index r = 0; r < rows; ++r) l.b(r) = detail::read_hex_double(in);
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& m) {
  std::ostringstream out;
  write_mlp(out, m);
  write_text(path, out.str());
}

[[nodiscard]] inline Mlp load_mlp(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  return read_mlp(in);
}

inline void save_vae(const std::filesystem::path& path, const Vae& v) {
  std::ostringstream out;
  out << "vae v1 latent " << v.latent << '\n';
  write_mlp(out, v.encoder);
  write_mlp(out, v.decoder);
  write_text(path, out.str());
}

[[nodiscard]] inline Vae load_vae(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string tag, ver, key;
  Vae v;
  if (!(in >> tag >> ver >> key >> v.latent) || tag != "vae" || ver != "v1" || key != "latent")
    fail(path.string(), ": bad vae header");
  v.encoder = read_mlp(in);
  v.decoder = read_mlp(in);
  return v;
}

}  // namespace fineft
