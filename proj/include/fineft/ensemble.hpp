#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "json.hpp"

#include "fineft/core.hpp"
#include "fineft/dp_oracle.hpp"
#include "fineft/futures_env.hpp"
#include "fineft/neural.hpp"

namespace fineft {

// Linear interpolation from `start` to `end` over `steps`, then constant.
struct LinearSchedule {
  double start{1.0};
  double end{0.1};
  std::size_t steps{100000};

  [[nodiscard]] double at(std::size_t step) const {
    if (steps == 0 || step >= steps) return end;
    return start + (end - start) * (static_cast<double>(step) / static_cast<double>(steps));
  }
};

struct EnsembleConfig {
  std::size_t n_learners{7};
  std::vector<std::size_t> hidden{128, 128};
  double gamma{0.99};
  double tau_net{0.005};
  double kl_temperature{1.0};
  double huber_delta{1.0};
  // Rewards and Q* rows are multiplied by this before entering any loss.
  double reward_scale{1.0};
  LrSchedule lr;
  std::uint64_t seed{1};

  void validate() const {
    if (n_learners == 0) fail("ensemble: n_learners must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("ensemble: gamma must be in [0, 1]");
    if (!(tau_net > 0.0 && tau_net <= 1.0)) fail("ensemble: tau_net must be in (0, 1]");
    if (!(kl_temperature > 0.0)) fail("ensemble: kl_temperature must be positive");
    if (!(huber_delta > 0.0)) fail("ensemble: huber_delta must be positive");
    if (!(reward_scale > 0.0)) fail("ensemble: reward_scale must be positive");
  }
};

struct Learner {
  std::size_t index{1};  // 1..N
  std::uint64_t seed{0};
  Mlp online;
  Mlp target;
  Adam optimizer;
  std::size_t updates{0};
};

struct Ensemble {
  EnsembleConfig config;
  std::size_t input_dim{0};
  std::size_t n_actions{0};
  std::vector<Learner> learners;
  std::size_t updates{0};    // selective or equal update calls
  std::size_t env_steps{0};  // environment steps collected by train_loop

  // Same architecture for every learner; learner i is seeded with seed + i.
  [[nodiscard]] static Ensemble create(std::size_t input_dim, std::size_t n_actions, const EnsembleConfig& cfg) {
    cfg.validate();
    if (input_dim == 0 || n_actions == 0) fail("ensemble: empty input or action dimension");
    Ensemble e;
    e.config = cfg;
    e.input_dim = input_dim;
    e.n_actions = n_actions;
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(n_actions);
    for (std::size_t i = 0; i < cfg.n_learners; ++i) {
      Learner l;
      l.index = i + 1;
      l.seed = cfg.seed + i;
      l.online = Mlp::create(sizes, l.seed);
      l.target = l.online;
      l.optimizer = Adam(cfg.lr);
      e.learners.push_back(std::move(l));
    }
    return e;
  }

  [[nodiscard]] std::size_t size() const { return learners.size(); }

  [[nodiscard]] Vector q_values(std::size_t i, const std::vector<double>& s) const {
    return learners.at(i).online.forward_one(to_vector(s));
  }

  // argmax_a Q(s, a; theta_i), ties to the lowest index.
  [[nodiscard]] std::size_t greedy(std::size_t i, const std::vector<double>& s) const {
    const Vector q = q_values(i, s);
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.size(); ++a)
      if (q(a) > q(best)) best = a;
    return static_cast<std::size_t>(best);
  }

  [[nodiscard]] static Vector to_vector(const std::vector<double>& s) {
    return Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
  }
};

// ---------------------------------------------------------------------------
// ETD and weight matrices

// L_ij = H(r + gamma * max Q(s', .; theta_j') - Q(s, a; theta_i)); terminal
// transitions drop the bootstrap term.
[[nodiscard]] inline Matrix etd_matrix(const Ensemble& ens, const Transition& tr) {
  const auto n = static_cast<Eigen::Index>(ens.size());
  const Vector s = Ensemble::to_vector(tr.s), s2 = Ensemble::to_vector(tr.s_next);
  const double r = tr.r * ens.config.reward_scale;
  Vector pred(n), boot(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& l = ens.learners[static_cast<std::size_t>(i)];
    pred(i) = l.online.forward_one(s)(static_cast<Eigen::Index>(tr.a));
    boot(i) = tr.done ? 0.0 : ens.config.gamma * l.target.forward_one(s2).maxCoeff();
  }
  Matrix L(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) L(i, j) = huber(r + boot(j) - pred(i), ens.config.huber_delta);
  return L;
}

struct WeightMatrix {
  Matrix w;
  std::size_t neighbors{0};
  std::size_t i_star{0};  // 0-based
  std::size_t i_min{0};
  std::size_t i_max{0};

  [[nodiscard]] Vector diagonal() const { return w.diagonal(); }
};

// Diagonal decays linearly away from i* = argmin_i L_ii inside the clipped
// window [i* - m, i* + m]; off-diagonal entries take the smaller diagonal
// times the same decay. A window of width zero keeps only W_{i*i*} = 1.
[[nodiscard]] inline WeightMatrix weight_matrix(const Matrix& L, std::size_t m) {
  if (L.rows() == 0 || L.rows() != L.cols()) fail("weight_matrix: ETD matrix must be square and non-empty");
  const auto n = static_cast<std::size_t>(L.rows());
  WeightMatrix out;
  out.neighbors = m;
  for (std::size_t i = 1; i < n; ++i)
    if (L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) <
        L(static_cast<Eigen::Index>(out.i_star), static_cast<Eigen::Index>(out.i_star)))
      out.i_star = i;
  out.i_min = out.i_star >= m ? out.i_star - m : 0;
  out.i_max = std::min(out.i_star + m, n - 1);
  out.w = Matrix::Zero(L.rows(), L.cols());
  const auto span = static_cast<double>(out.i_max - out.i_min);
  const auto is = static_cast<Eigen::Index>(out.i_star);
  if (out.i_max == out.i_min) {
    out.w(is, is) = 1.0;
    return out;
  }
  auto gap = [](std::size_t a, std::size_t b) { return static_cast<double>(a > b ? a - b : b - a); };
  for (std::size_t i = out.i_min; i <= out.i_max; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out.w(ii, ii) = 1.0 - gap(i, out.i_star) / span;
  }
  for (std::size_t i = out.i_min; i <= out.i_max; ++i)
    for (std::size_t j = out.i_min; j <= out.i_max; ++j) {
      if (i == j) continue;
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      out.w(ii, jj) = std::min(out.w(ii, ii), out.w(jj, jj)) * (1.0 - gap(i, j) / span);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Updates

enum class UpdateMode {
  Selective,  // W from weight_matrix per transition
  Equal,      // W = I: every learner on every transition
};

inline const char* to_string(UpdateMode m) { return m == UpdateMode::Selective ? "selective" : "equal"; }

inline UpdateMode parse_update_mode(std::string_view s) {
  if (s == "selective") return UpdateMode::Selective;
  if (s == "equal") return UpdateMode::Equal;
  fail("unknown update mode '", s, "'");
}

struct UpdateOptions {
  UpdateMode mode{UpdateMode::Selective};
  std::size_t neighbors{1};
  double alpha{0.0};
};

struct UpdateStats {
  double loss{0.0};                   // total loss averaged over the batch
  std::vector<double> learner_loss;   // per learner, averaged over the batch
  std::vector<std::size_t> i_star;    // per transition (0-based)
  std::vector<bool> updated;          // learners that received a gradient step
};

// One gradient step per learner on
//   loss_i = mean_k [ sum_j W_ij L_ij + alpha * W_ii * KL_i ]
// followed by a soft target update for each learner that was stepped.
// Learners with zero weight on the whole batch are left untouched. The KL
// term applies only to transitions carrying a Q* row.
inline UpdateStats selective_update(Ensemble& ens, const std::vector<const Transition*>& batch,
                                    const UpdateOptions& opt) {
  if (batch.empty()) fail("selective_update: empty batch");
  const auto& cfg = ens.config;
  const std::size_t n = ens.size();
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto dim = static_cast<Eigen::Index>(ens.input_dim);
  const auto na = static_cast<Eigen::Index>(ens.n_actions);
  Matrix S(dim, b), S2(dim, b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto& tr = *batch[static_cast<std::size_t>(k)];
    if (static_cast<Eigen::Index>(tr.s.size()) != dim || static_cast<Eigen::Index>(tr.s_next.size()) != dim)
      fail("selective_update: state dimension mismatch");
    if (static_cast<Eigen::Index>(tr.a) >= na) fail("selective_update: action ", tr.a, " out of range");
    S.col(k) = Ensemble::to_vector(tr.s);
    S2.col(k) = Ensemble::to_vector(tr.s_next);
  }
  std::vector<Mlp::Cache> caches(n);
  std::vector<Matrix> q(n), d_out(n);
  Matrix boot(static_cast<Eigen::Index>(n), b);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = ens.learners[i].online.forward(S, &caches[i]);
    const Matrix tq = ens.learners[i].target.forward(S2);
    for (Eigen::Index k = 0; k < b; ++k)
      boot(static_cast<Eigen::Index>(i), k) =
          batch[static_cast<std::size_t>(k)]->done ? 0.0 : cfg.gamma * tq.col(k).maxCoeff();
    d_out[i] = Matrix::Zero(na, b);
  }
  UpdateStats st;
  st.learner_loss.assign(n, 0.0);
  st.updated.assign(n, false);
  const double inv_b = 1.0 / static_cast<double>(b);
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix L(ni, ni), G(ni, ni);
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto& tr = *batch[static_cast<std::size_t>(k)];
    const double r = tr.r * cfg.reward_scale;
    const auto a = static_cast<Eigen::Index>(tr.a);
    for (Eigen::Index i = 0; i < ni; ++i)
      for (Eigen::Index j = 0; j < ni; ++j) {
        const double td = r + boot(j, k) - q[static_cast<std::size_t>(i)](a, k);
        L(i, j) = huber(td, cfg.huber_delta);
        G(i, j) = huber_grad(td, cfg.huber_delta);
      }
    Matrix W;
    if (opt.mode == UpdateMode::Equal) {
      W = Matrix::Identity(ni, ni);
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < ni; ++i)
        if (L(i, i) < L(best, best)) best = i;
      st.i_star.push_back(static_cast<std::size_t>(best));
    } else {
      auto wm = weight_matrix(L, opt.neighbors);
      st.i_star.push_back(wm.i_star);
      W = std::move(wm.w);
    }
    const bool kl = opt.alpha != 0.0 && !tr.q_star_row.empty();
    if (kl && static_cast<Eigen::Index>(tr.q_star_row.size()) != na)
      fail("selective_update: Q* row has ", tr.q_star_row.size(), " entries, expected ", na);
    const Vector qstar = kl ? Vector(Ensemble::to_vector(tr.q_star_row) * cfg.reward_scale) : Vector();
    for (Eigen::Index i = 0; i < ni; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double wsum = W.row(i).sum();
      if (wsum == 0.0) continue;
      st.updated[ui] = true;
      st.learner_loss[ui] += W.row(i).dot(L.row(i)) * inv_b;
      d_out[ui](a, k) -= W.row(i).dot(G.row(i)) * inv_b;
      if (kl && W(i, i) != 0.0) {
        const auto res = kl_softmax(q[ui].col(k), qstar, cfg.kl_temperature);
        st.learner_loss[ui] += opt.alpha * W(i, i) * res.value * inv_b;
        d_out[ui].col(k) += opt.alpha * W(i, i) * inv_b * res.grad;
      }
    }
  }
  std::vector<Mlp> grads;
  grads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    grads.push_back(Mlp::zeros_like(ens.learners[i].online));
    if (st.updated[i]) (void)ens.learners[i].online.backward(caches[i], d_out[i], grads[i]);
    st.loss += st.learner_loss[i];
  }
  if (!std::isfinite(st.loss)) fail("non-finite loss ", st.loss);
  for (std::size_t i = 0; i < n; ++i)
    if (st.updated[i] && !grads[i].all_finite()) fail("non-finite gradient for learner ", i + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!st.updated[i]) continue;
    auto& l = ens.learners[i];
    l.optimizer.step(l.online, grads[i], st.learner_loss[i]);
    soft_update(l.target, l.online, cfg.tau_net);
    ++l.updates;
  }
  ++ens.updates;
  return st;
}

inline UpdateStats selective_update(Ensemble& ens, const std::vector<Transition>& batch, const UpdateOptions& opt) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& t : batch) ptrs.push_back(&t);
  return selective_update(ens, ptrs, opt);
}

// i* of each transition's ETD matrix under the current parameters.
[[nodiscard]] inline std::vector<std::size_t> select_learners(const Ensemble& ens,
                                                              const std::vector<Transition>& transitions) {
  std::vector<std::size_t> out;
  out.reserve(transitions.size());
  for (const auto& tr : transitions) {
    const Matrix L = etd_matrix(ens, tr);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < L.rows(); ++i)
      if (L(i, i) < L(best, best)) best = i;
    out.push_back(static_cast<std::size_t>(best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t epochs{2};
  std::size_t batch_size{512};
  LinearSchedule alpha{256.0, 0.0, 500000};
  std::uint64_t seed{11};
};

struct PretrainReport {
  std::size_t updates{0};
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Every learner is updated on every demonstration batch (W = I). Alpha is
// read from the schedule at the ensemble's running update count.
inline PretrainReport pretrain(Ensemble& ens, const std::vector<Transition>& demos, const PretrainConfig& cfg) {
  if (demos.empty()) fail("pretrain: no demonstrations");
  if (cfg.batch_size == 0) fail("pretrain: batch_size must be positive");
  for (const auto& d : demos)
    if (d.q_star_row.empty()) fail("pretrain: demonstration at t=", d.t, " has no Q* row");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(demos.size());
  PretrainReport rep;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      std::vector<const Transition*> batch;
      for (std::size_t k = pos; k < std::min(pos + cfg.batch_size, order.size()); ++k) batch.push_back(&demos[order[k]]);
      UpdateOptions opt{UpdateMode::Equal, 0, cfg.alpha.at(ens.updates)};
      sum += selective_update(ens, batch, opt).loss;
      ++batches;
      ++rep.updates;
    }
    rep.epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Replay

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) fail("replay buffer capacity must be positive");
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t pushed() const { return pushed_; }

  // i-th oldest retained transition.
  [[nodiscard]] const Transition& at(std::size_t i) const {
    if (i >= items_.size()) fail("replay buffer index ", i, " out of range");
    return items_[(head_ + i) % items_.size()];
  }

  // Uniform sample with replacement.
  [[nodiscard]] std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const {
    if (items_.empty()) fail("cannot sample an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[pick(rng)];
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_{0};
  std::size_t pushed_{0};
  std::vector<Transition> items_;
};

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/learner_{i}/{online,target}.ckpt plus manifest.json.

inline void save_ensemble(const Ensemble& ens, const std::filesystem::path& dir) {
  nlohmann::json m;
  const auto& c = ens.config;
  m["format"] = "fineft-ensemble-v1";
  m["input_dim"] = ens.input_dim;
  m["n_actions"] = ens.n_actions;
  m["hidden"] = c.hidden;
  m["gamma"] = c.gamma;
  m["tau_net"] = c.tau_net;
  m["kl_temperature"] = c.kl_temperature;
  m["huber_delta"] = c.huber_delta;
  m["reward_scale"] = c.reward_scale;
  m["lr"] = {{"start", c.lr.start}, {"end", c.lr.end}, {"decay_steps", c.lr.decay_steps}};
  m["seed"] = c.seed;
  m["updates"] = ens.updates;
  m["env_steps"] = ens.env_steps;
  m["learners"] = nlohmann::json::array();
  for (const auto& l : ens.learners) {
    const auto sub = dir / concat("learner_", l.index);
    save_mlp(sub / "online.ckpt", l.online);
    save_mlp(sub / "target.ckpt", l.target);
    m["learners"].push_back({{"index", l.index}, {"seed", l.seed}, {"updates", l.updates}});
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// Optimizer moments are not persisted; a loaded ensemble restarts Adam.
[[nodiscard]] inline Ensemble load_ensemble(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail((dir / "manifest.json").string(), ": ", e.what());
  }
  if (m.value("format", "") != "fineft-ensemble-v1") fail(dir.string(), ": not an ensemble checkpoint");
  Ensemble e;
  auto& c = e.config;
  c.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  c.gamma = m.at("gamma");
  c.tau_net = m.at("tau_net");
  c.kl_temperature = m.at("kl_temperature");
  c.huber_delta = m.at("huber_delta");
  c.reward_scale = m.at("reward_scale");
  c.lr = LrSchedule{m.at("lr").at("start"), m.at("lr").at("end"), m.at("lr").at("decay_steps")};
  c.seed = m.at("seed");
  e.input_dim = m.at("input_dim");
  e.n_actions = m.at("n_actions");
  e.updates = m.at("updates");
  e.env_steps = m.at("env_steps");
  for (const auto& lj : m.at("learners")) {
    Learner l;
    l.index = lj.at("index");
    l.seed = lj.at("seed");
    l.updates = lj.at("updates");
    const auto sub = dir / concat("learner_", l.index);
    l.online = load_mlp(sub / "online.ckpt");
    l.target = load_mlp(sub / "target.ckpt");
    if (l.online.input_dim() != e.input_dim || l.online.output_dim() != e.n_actions)
      fail(sub.string(), ": network shape disagrees with the manifest");
    l.optimizer = Adam(c.lr);
    e.learners.push_back(std::move(l));
  }
  c.n_learners = e.learners.size();
  c.validate();
  return e;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t total_steps{100000};  // environment steps
  std::size_t batch_size{512};
  std::size_t buffer_capacity{1000000};
  std::size_t learning_starts{1000};
  std::size_t update_every{1};
  std::size_t episode_length{1000};  // 0 runs each episode over the whole range
  std::size_t steps_per_epoch{10000};
  std::size_t neighbors{1};
  UpdateMode mode{UpdateMode::Selective};
  LinearSchedule epsilon{1.0, 0.1, 100000};
  LinearSchedule alpha{256.0, 0.0, 500000};
  bool optimal_actor{true};
  std::uint64_t seed{7};

  void validate() const {
    if (batch_size == 0) fail("train: batch_size must be positive");
    if (update_every == 0) fail("train: update_every must be positive");
    if (steps_per_epoch == 0) fail("train: steps_per_epoch must be positive");
    if (buffer_capacity == 0) fail("train: buffer_capacity must be positive");
  }
};

struct TrainReport {
  std::size_t env_steps{0};
  std::size_t updates{0};
  std::size_t episodes{0};
  std::vector<double> epoch_loss;  // mean update loss per epoch
  std::vector<std::size_t> i_star_counts;
  // [regime][learner] i* counts by the ground-truth regime of each sampled
  // transition, over the whole run and over the last epoch; empty when the
  // dataset carries no regime labels.
  std::vector<std::vector<std::size_t>> i_star_by_regime;
  std::vector<std::vector<std::size_t>> last_epoch_i_star_by_regime;
};

using EpochCallback = std::function<void(std::size_t epoch, const Ensemble&)>;

[[nodiscard]] inline std::vector<double> env_features(const FuturesEnv& env, const MarketState& state) {
  return observation_features(state, env.config().action_space.h_max(), env.dataset().funding_interval);
}

// Round-robin actors (each learner epsilon-greedy, then the optimal actor)
// play episodes from random starts inside `range`; every `update_every` steps
// a uniform batch from the ring buffer drives one update. Transitions carry
// the Q* row of their (t, previous action). Only liquidation or the end of
// the range marks a transition terminal; episode cut-offs are truncations.
// After each epoch the ensemble is snapshotted (and saved when `checkpoint_dir`
// is set); a non-finite loss restores the last snapshot and rethrows.
inline TrainReport train_loop(FuturesEnv& env, Ensemble& ens, const OptimalQTable& qstar, IndexRange range,
                              const TrainConfig& cfg, const std::optional<std::filesystem::path>& checkpoint_dir = {},
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (qstar.actions() != ens.n_actions) fail("train_loop: Q* table and ensemble disagree on |A|");
  const std::size_t q_end = qstar.begin() + qstar.steps();
  const std::size_t first = std::max(range.begin, env.dataset().warmup);
  if (first < qstar.begin() || range.end > q_end) fail("train_loop: range not covered by the Q* table");
  if (range.end < first + 2) fail("train_loop: range too short");
  std::mt19937_64 rng(cfg.seed);
  ReplayBuffer buffer(cfg.buffer_capacity);
  TrainReport rep;
  rep.i_star_counts.assign(ens.size(), 0);
  const auto& regime = env.dataset().regime;
  std::vector<std::vector<std::size_t>> epoch_by_regime;
  if (!regime.empty()) {
    const auto n_regimes = static_cast<std::size_t>(*std::max_element(regime.begin(), regime.end()) + 1);
    rep.i_star_by_regime.assign(n_regimes, std::vector<std::size_t>(ens.size(), 0));
    epoch_by_regime = rep.i_star_by_regime;
  }
  const std::size_t n_actors = ens.size() + (cfg.optimal_actor ? 1 : 0);
  std::size_t actor = 0;
  Ensemble snapshot = ens;
  double epoch_sum = 0.0;
  std::size_t epoch_updates = 0, epoch = 0;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_action(0, ens.n_actions - 1);

  auto end_epoch = [&] {
    rep.epoch_loss.push_back(epoch_updates ? epoch_sum / static_cast<double>(epoch_updates) : 0.0);
    epoch_sum = 0.0;
    if (epoch_updates > 0 || rep.last_epoch_i_star_by_regime.empty()) rep.last_epoch_i_star_by_regime = epoch_by_regime;
    for (auto& row : epoch_by_regime) std::fill(row.begin(), row.end(), 0);
    epoch_updates = 0;
    ++epoch;
    snapshot = ens;
    if (checkpoint_dir) save_ensemble(ens, *checkpoint_dir / concat("epoch_", epoch));
    if (on_epoch) on_epoch(epoch, ens);
  };

  while (rep.env_steps < cfg.total_steps) {
    const std::size_t span = range.end - first;
    const std::size_t len = cfg.episode_length == 0 ? span - 1 : std::min(cfg.episode_length, span - 1);
    std::uniform_int_distribution<std::size_t> start_pick(first, range.end - 1 - len);
    const std::size_t start = start_pick(rng);
    auto obs = env.reset({start, start + len + 1});
    ++rep.episodes;
    const bool optimal = cfg.optimal_actor && actor == ens.size();
    const std::size_t learner = optimal ? 0 : actor;
    actor = (actor + 1) % n_actors;
    bool done = false;
    while (!done && rep.env_steps < cfg.total_steps) {
      const std::size_t t = env.t();
      const std::size_t prev = env.current_action_index();
      Transition tr;
      tr.s = env_features(env, obs);
      tr.t = t;
      tr.q_star_row = qstar.row(t - qstar.begin(), prev);
      if (optimal) {
        tr.a = qstar.greedy(t - qstar.begin(), prev);
      } else if (coin(rng) < cfg.epsilon.at(ens.env_steps)) {
        tr.a = any_action(rng);
      } else {
        tr.a = ens.greedy(learner, tr.s);
      }
      auto res = env.step(tr.a);
      tr.r = res.reward;
      tr.s_next = env_features(env, res.observation);
      tr.done = res.info.liquidated || env.t() + 1 >= range.end;
      done = res.done;
      obs = res.observation;
      buffer.push(std::move(tr));
      ++rep.env_steps;
      ++ens.env_steps;
      if (buffer.size() >= std::max(cfg.learning_starts, std::size_t{1}) && rep.env_steps % cfg.update_every == 0) {
        const auto batch = buffer.sample(cfg.batch_size, rng);
        UpdateOptions opt{cfg.mode, cfg.neighbors, cfg.alpha.at(ens.updates)};
        try {
          const auto st = selective_update(ens, batch, opt);
          epoch_sum += st.loss;
          ++epoch_updates;
          ++rep.updates;
          for (std::size_t k = 0; k < st.i_star.size(); ++k) {
            ++rep.i_star_counts[st.i_star[k]];
            if (!regime.empty()) {
              const auto g = static_cast<std::size_t>(regime[batch[k]->t]);
              ++rep.i_star_by_regime[g][st.i_star[k]];
              ++epoch_by_regime[g][st.i_star[k]];
            }
          }
        } catch (const Error&) {
          ens = snapshot;
          throw;
        }
      }
      if (rep.env_steps % cfg.steps_per_epoch == 0) end_epoch();
    }
  }
  if (rep.env_steps % cfg.steps_per_epoch != 0) end_epoch();
  return rep;
}

}  // namespace fineft
