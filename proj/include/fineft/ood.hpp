#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <vector>

#include "fineft/core.hpp"
#include "fineft/neural.hpp"

namespace fineft {

struct OodConfig {
  std::size_t hidden{64};
  std::size_t latent{4};
  std::size_t epochs{2000};
  std::size_t batch_size{256};
  LrSchedule lr{1e-3, 1e-3, 0};
  std::size_t eval_samples{1};  // reparameterization draws averaged per score
  std::uint64_t seed{17};        // weights and training noise, shared by every dynamic
  std::uint64_t eval_seed{23};   // fixed evaluation noise

  void validate() const {
    if (hidden == 0 || latent == 0) fail("ood: hidden and latent sizes must be positive");
    if (batch_size == 0) fail("ood: batch_size must be positive");
    if (eval_samples == 0) fail("ood: eval_samples must be positive");
  }
};

// Columns of a matrix from a list of equally sized vectors.
[[nodiscard]] inline Matrix columns(const std::vector<std::vector<double>>& ys) {
  if (ys.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(ys.front().size()), static_cast<Eigen::Index>(ys.size()));
  for (std::size_t k = 0; k < ys.size(); ++k) {
    if (ys[k].size() != ys.front().size()) fail("ood: state ", k, " has ", ys[k].size(), " features, expected ", ys.front().size());
    m.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vector>(ys[k].data(), static_cast<Eigen::Index>(ys[k].size()));
  }
  return m;
}

struct RegimeModel {
  int dynamic{0};
  Vae vae;
  std::vector<double> refs;  // sorted -L(y) over the dynamic's states
  std::size_t eval_samples{1};
  std::uint64_t eval_seed{23};
  std::vector<double> epoch_loss;

  // Fixed noise block for `count` columns; the same for every call.
  [[nodiscard]] std::vector<Matrix> eval_noise(Eigen::Index count) const {
    std::mt19937_64 rng(eval_seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Matrix> out;
    for (std::size_t k = 0; k < eval_samples; ++k) {
      Matrix e(static_cast<Eigen::Index>(vae.latent), count);
      for (Eigen::Index c = 0; c < count; ++c)
        for (Eigen::Index r = 0; r < e.rows(); ++r) e(r, c) = n(rng);
      out.push_back(std::move(e));
    }
    return out;
  }

  // -L(y) per column, with every column using the same noise draw(s).
  [[nodiscard]] std::vector<double> neg_losses(const Matrix& y) const {
    std::vector<double> out(static_cast<std::size_t>(y.cols()), 0.0);
    const auto noise = eval_noise(1);
    for (const auto& e : noise) {
      const Matrix block = e.replicate(1, y.cols());
      const auto losses = vae_sample_losses(vae, y, block);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] -= losses[k].total / static_cast<double>(noise.size());
    }
    return out;
  }

  [[nodiscard]] double neg_loss(const std::vector<double>& y) const {
    return neg_losses(columns({y})).front();
  }

  // Fraction of reference scores <= value.
  [[nodiscard]] double ecdf(double value) const {
    if (refs.empty()) fail("regime model ", dynamic, " has no reference scores");
    const auto it = std::upper_bound(refs.begin(), refs.end(), value);
    return static_cast<double>(it - refs.begin()) / static_cast<double>(refs.size());
  }

  [[nodiscard]] double score(const std::vector<double>& y) const { return ecdf(neg_loss(y)); }

  [[nodiscard]] std::vector<double> scores(const Matrix& y) const {
    auto v = neg_losses(y);
    for (auto& x : v) x = ecdf(x);
    return v;
  }
};

// Trains one VAE on the columns of `y` and records its sorted reference scores.
[[nodiscard]] inline RegimeModel fit_vae(const Matrix& y, int dynamic, const OodConfig& cfg) {
  cfg.validate();
  if (y.cols() == 0) fail("fit_vae: dynamic ", dynamic, " has no states");
  if (static_cast<std::size_t>(y.cols()) < 10 * cfg.latent)
    fail("fit_vae: dynamic ", dynamic, " has ", y.cols(), " states, needs at least ", 10 * cfg.latent);
  if (!y.allFinite()) fail("fit_vae: dynamic ", dynamic, " has non-finite states");
  RegimeModel m;
  m.dynamic = dynamic;
  m.eval_samples = cfg.eval_samples;
  m.eval_seed = cfg.eval_seed;
  m.vae = Vae::create(static_cast<std::size_t>(y.rows()), cfg.hidden, cfg.latent, cfg.seed);
  Adam opt(cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(y.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  const auto L = static_cast<Eigen::Index>(cfg.latent);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - pos);
      Matrix yb(y.rows(), static_cast<Eigen::Index>(b)), noise(L, static_cast<Eigen::Index>(b));
      for (std::size_t k = 0; k < b; ++k) yb.col(static_cast<Eigen::Index>(k)) = y.col(order[pos + k]);
      for (Eigen::Index c = 0; c < noise.cols(); ++c)
        for (Eigen::Index r = 0; r < L; ++r) noise(r, c) = normal(rng);
      Mlp ge = Mlp::zeros_like(m.vae.encoder), gd = Mlp::zeros_like(m.vae.decoder);
      const auto loss = vae_loss(m.vae, yb, noise, &ge, &gd);
      opt.step({&m.vae.encoder, &m.vae.decoder}, {&ge, &gd}, loss.total);
      sum += loss.total;
      ++batches;
    }
    m.epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  m.refs = m.neg_losses(y);
  std::sort(m.refs.begin(), m.refs.end());
  return m;
}

// One model per dynamic label, in ascending label order.
[[nodiscard]] inline std::vector<RegimeModel> fit_vaes(const std::map<int, std::vector<std::vector<double>>>& by_dynamic,
                                                       const OodConfig& cfg) {
  std::vector<RegimeModel> out;
  for (const auto& [label, states] : by_dynamic) {
    if (states.empty()) fail("fit_vaes: dynamic ", label, " has no states");
    out.push_back(fit_vae(columns(states), label, cfg));
  }
  return out;
}

// <dir>/dyn_{i}/vae.ckpt plus refs.csv (one sorted score per line) and meta.
inline void save_regime_models(const std::vector<RegimeModel>& models, const std::filesystem::path& dir) {
  for (const auto& m : models) {
    const auto sub = dir / concat("dyn_", m.dynamic);
    save_vae(sub / "vae.ckpt", m.vae);
    std::ostringstream refs;
    refs << "score\n";
    for (double r : m.refs) refs << format_double(r) << '\n';
    write_text(sub / "refs.csv", refs.str());
    write_text(sub / "meta.txt", concat("dynamic ", m.dynamic, "\neval_samples ", m.eval_samples, "\neval_seed ",
                                        m.eval_seed, "\n"));
  }
}

[[nodiscard]] inline RegimeModel load_regime_model(const std::filesystem::path& sub) {
  RegimeModel m;
  std::istringstream meta(read_text(sub / "meta.txt"));
  std::string key;
  while (meta >> key) {
    if (key == "dynamic") meta >> m.dynamic;
    else if (key == "eval_samples") meta >> m.eval_samples;
    else if (key == "eval_seed") meta >> m.eval_seed;
    else fail(sub.string(), "/meta.txt: unknown key '", key, "'");
  }
  if (!meta.eof()) fail(sub.string(), "/meta.txt: malformed");
  m.vae = load_vae(sub / "vae.ckpt");
  std::istringstream refs(read_text(sub / "refs.csv"));
  std::string line;
  std::getline(refs, line);
  if (trim(line) != "score") fail(sub.string(), "/refs.csv: missing header");
  std::size_t row = 1;
  while (std::getline(refs, line)) {
    ++row;
    if (trim(line).empty()) continue;
    double v = 0.0;
    if (!parse_double(line, v)) fail(sub.string(), "/refs.csv:", row, ": not a number");
    m.refs.push_back(v);
  }
  if (m.refs.empty() || !std::is_sorted(m.refs.begin(), m.refs.end()))
    fail(sub.string(), "/refs.csv: reference scores must be non-empty and sorted");
  return m;
}

[[nodiscard]] inline std::vector<RegimeModel> load_regime_models(const std::filesystem::path& dir) {
  std::vector<RegimeModel> out;
  for (int i = 0; std::filesystem::exists(dir / concat("dyn_", i)); ++i) out.push_back(load_regime_model(dir / concat("dyn_", i)));
  if (out.empty()) fail(dir.string(), ": no regime models");
  return out;
}

}  // namespace fineft
