// Online GRU-FCN time-series regressor with analytic gradients and an AdamW
// training loop. All math in double (Eigen); feature payloads convert at the
// boundary.
//
// Cell: z = sigm(Wz x + Uz h + bz); r = sigm(Wr x + Ur h + br);
//       c = tanh(Wh x + Uh (r .* h) + bh); h' = (1-z) .* h + z .* c.
// Score: head(h' concat FCN(x)) where FCN is three ReLU dense layers on the
// current sample only. The head is linear; clamping to [1,5] happens at the
// pipeline layer so gradients never saturate.
#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "teleqa/common.hpp"

namespace teleqa {

struct RegressorParams {
  int input_dim = 0;
  int hidden_dim = 0;
  int fcn1 = 0, fcn2 = 0, fcn3 = 0;

  Eigen::MatrixXd Wz, Uz;
  Eigen::VectorXd bz;
  Eigen::MatrixXd Wr, Ur;
  Eigen::VectorXd br;
  Eigen::MatrixXd Wh, Uh;
  Eigen::VectorXd bh;
  Eigen::MatrixXd F1;
  Eigen::VectorXd fb1;
  Eigen::MatrixXd F2;
  Eigen::VectorXd fb2;
  Eigen::MatrixXd F3;
  Eigen::VectorXd fb3;
  Eigen::VectorXd head_w;  // hidden_dim + fcn3
  Eigen::VectorXd head_b;  // size 1

  RegressorParams() = default;
  RegressorParams(int input, int hidden, int d1, int d2, int d3)
      : input_dim(input), hidden_dim(hidden), fcn1(d1), fcn2(d2), fcn3(d3) {
    Wz = Eigen::MatrixXd::Zero(hidden, input);
    Uz = Eigen::MatrixXd::Zero(hidden, hidden);
    bz = Eigen::VectorXd::Zero(hidden);
    Wr = Wz;
    Ur = Uz;
    br = bz;
    Wh = Wz;
    Uh = Uz;
    bh = bz;
    F1 = Eigen::MatrixXd::Zero(d1, input);
    fb1 = Eigen::VectorXd::Zero(d1);
    F2 = Eigen::MatrixXd::Zero(d2, d1);
    fb2 = Eigen::VectorXd::Zero(d2);
    F3 = Eigen::MatrixXd::Zero(d3, d2);
    fb3 = Eigen::VectorXd::Zero(d3);
    head_w = Eigen::VectorXd::Zero(hidden + d3);
    head_b = Eigen::VectorXd::Zero(1);
  }
};

// Canonical tensor enumeration; serialization payload order and the optimizer
// state both follow it.
struct TensorRef {
  const char* name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

inline std::vector<TensorRef> tensor_refs(RegressorParams& p) {
  return {
      {"Wz", p.Wz.data(), p.Wz.rows(), p.Wz.cols()},
      {"Uz", p.Uz.data(), p.Uz.rows(), p.Uz.cols()},
      {"bz", p.bz.data(), p.bz.size(), 1},
      {"Wr", p.Wr.data(), p.Wr.rows(), p.Wr.cols()},
      {"Ur", p.Ur.data(), p.Ur.rows(), p.Ur.cols()},
      {"br", p.br.data(), p.br.size(), 1},
      {"Wh", p.Wh.data(), p.Wh.rows(), p.Wh.cols()},
      {"Uh", p.Uh.data(), p.Uh.rows(), p.Uh.cols()},
      {"bh", p.bh.data(), p.bh.size(), 1},
      {"F1", p.F1.data(), p.F1.rows(), p.F1.cols()},
      {"fb1", p.fb1.data(), p.fb1.size(), 1},
      {"F2", p.F2.data(), p.F2.rows(), p.F2.cols()},
      {"fb2", p.fb2.data(), p.fb2.size(), 1},
      {"F3", p.F3.data(), p.F3.rows(), p.F3.cols()},
      {"fb3", p.fb3.data(), p.fb3.size(), 1},
      {"head_w", p.head_w.data(), p.head_w.size(), 1},
      {"head_b", p.head_b.data(), 1, 1},
  };
}

// Glorot-uniform matrices, small-uniform biases (nonzero so no ReLU kink sits
// exactly at the origin), draws in tensor_refs order.
inline RegressorParams init_regressor(int input_dim, int hidden_dim, int d1, int d2, int d3,
                                      uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || d1 < 1 || d2 < 1 || d3 < 1)
    throw ConfigError("regressor dims must be positive");
  RegressorParams p(input_dim, hidden_dim, d1, d2, d3);
  Rng rng(seed);
  for (auto& t : tensor_refs(p)) {
    const double limit =
        t.cols == 1 ? 0.1 : std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-limit, limit);
  }
  return p;
}

struct HiddenState {
  Eigen::VectorXd h;
  int64_t step = 0;
};

inline HiddenState init_state(const RegressorParams& p) {
  return {Eigen::VectorXd::Zero(p.hidden_dim), 0};
}

namespace detail {

inline Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& a) { return 1.0 / (1.0 + (-a).exp()); }

struct StepTrace {
  Eigen::VectorXd x, h_prev;
  Eigen::ArrayXd z, r, c;
  Eigen::VectorXd h_new;
  Eigen::VectorXd u1, u2, u3;  // post-ReLU FCN activations
  double score = 0.0;
};

inline StepTrace forward_step(const RegressorParams& p, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& h_prev) {
  if (x.size() != p.input_dim) throw ConfigError("dim mismatch: input");
  StepTrace t;
  t.x = x;
  t.h_prev = h_prev;
  t.z = sigmoid((p.Wz * x + p.Uz * h_prev + p.bz).array());
  t.r = sigmoid((p.Wr * x + p.Ur * h_prev + p.br).array());
  Eigen::VectorXd rh = (t.r * h_prev.array()).matrix();
  t.c = (p.Wh * x + p.Uh * rh + p.bh).array().tanh();
  t.h_new = ((1.0 - t.z) * h_prev.array() + t.z * t.c).matrix();
  t.u1 = (p.F1 * x + p.fb1).cwiseMax(0.0);
  t.u2 = (p.F2 * t.u1 + p.fb2).cwiseMax(0.0);
  t.u3 = (p.F3 * t.u2 + p.fb3).cwiseMax(0.0);
  t.score = p.head_w.head(p.hidden_dim).dot(t.h_new) + p.head_w.tail(p.fcn3).dot(t.u3) +
            p.head_b[0];
  return t;
}

}  // namespace detail

inline HiddenState gru_step(const Eigen::VectorXd& x, const HiddenState& state,
                            const RegressorParams& p) {
  if (state.h.size() != p.hidden_dim) throw ConfigError("dim mismatch: hidden state");
  auto t = detail::forward_step(p, x, state.h);
  return {t.h_new, state.step + 1};
}

// Consumes exactly one sample; returns the unclamped score and the new state.
inline std::pair<double, HiddenState> predict_step(const Eigen::VectorXd& x,
                                                   const HiddenState& state,
                                                   const RegressorParams& p) {
  if (state.h.size() != p.hidden_dim) throw ConfigError("dim mismatch: hidden state");
  auto t = detail::forward_step(p, x, state.h);
  if (!std::isfinite(t.score)) throw NumericError("numerical overflow");
  return {t.score, HiddenState{t.h_new, state.step + 1}};
}

// Batched reference pass: projects the whole sequence through each weight
// matrix at once, then runs the recurrence on the precomputed columns.
// Different evaluation order from predict_step, same math.
inline std::vector<double> offline_scores(const RegressorParams& p,
                                          const std::vector<Eigen::VectorXd>& xs) {
  const auto T = static_cast<Eigen::Index>(xs.size());
  if (T == 0) return {};
  Eigen::MatrixXd X(p.input_dim, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (xs[t].size() != p.input_dim) throw ConfigError("dim mismatch: input");
    X.col(t) = xs[t];
  }
  Eigen::MatrixXd PZ = (p.Wz * X).colwise() + p.bz;
  Eigen::MatrixXd PR = (p.Wr * X).colwise() + p.br;
  Eigen::MatrixXd PH = (p.Wh * X).colwise() + p.bh;
  Eigen::MatrixXd U1 = ((p.F1 * X).colwise() + p.fb1).cwiseMax(0.0);
  Eigen::MatrixXd U2 = ((p.F2 * U1).colwise() + p.fb2).cwiseMax(0.0);
  Eigen::MatrixXd U3 = ((p.F3 * U2).colwise() + p.fb3).cwiseMax(0.0);

  std::vector<double> scores(static_cast<size_t>(T));
  Eigen::VectorXd h = Eigen::VectorXd::Zero(p.hidden_dim);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::ArrayXd z = detail::sigmoid((PZ.col(t) + p.Uz * h).array());
    Eigen::ArrayXd r = detail::sigmoid((PR.col(t) + p.Ur * h).array());
    Eigen::ArrayXd c = (PH.col(t) + p.Uh * (r * h.array()).matrix()).array().tanh();
    h = ((1.0 - z) * h.array() + z * c).matrix();
    scores[static_cast<size_t>(t)] =
        p.head_w.head(p.hidden_dim).dot(h) + p.head_w.tail(p.fcn3).dot(U3.col(t)) + p.head_b[0];
  }
  return scores;
}

// Frame-level scoring: run the short pooled sequence from a fresh state and
// keep the final step's score.
inline double score_sequence(const RegressorParams& p, const std::vector<Eigen::VectorXd>& xs) {
  if (xs.empty()) throw ConfigError("empty sequence");
  return offline_scores(p, xs).back();
}

struct TrainSample {
  std::vector<Eigen::VectorXd> xs;
  double target = 0.0;
};

// How a sequence's per-step scores collapse into its prediction: the stream
// model averages over time, the frame head keeps the last step.
enum class ScoreAggregation { mean_over_steps, final_step };

inline double sample_prediction(const RegressorParams& p, const std::vector<Eigen::VectorXd>& xs,
                                ScoreAggregation agg) {
  auto scores = offline_scores(p, xs);
  if (scores.empty()) throw ConfigError("empty sequence");
  if (agg == ScoreAggregation::final_step) return scores.back();
  double mean = 0.0;
  for (double s : scores) mean += s;
  return mean / static_cast<double>(scores.size());
}

inline double batch_loss(const RegressorParams& p, const std::vector<TrainSample>& batch,
                         ScoreAggregation agg = ScoreAggregation::mean_over_steps) {
  if (batch.empty()) throw ConfigError("empty batch");
  double loss = 0.0;
  for (const auto& s : batch) {
    double e = sample_prediction(p, s.xs, agg) - s.target;
    loss += e * e;
  }
  loss /= static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("numerical overflow");
  return loss;
}

struct GradResult {
  RegressorParams grads;
  double loss = 0.0;
};

// Mean-squared-error gradients, backpropagated through time. Each sample may
// have its own length.
inline GradResult grad(const RegressorParams& p, const std::vector<TrainSample>& batch,
                       ScoreAggregation agg = ScoreAggregation::mean_over_steps) {
  if (batch.empty()) throw ConfigError("empty batch");
  const auto B = static_cast<double>(batch.size());
  GradResult out;
  out.grads = RegressorParams(p.input_dim, p.hidden_dim, p.fcn1, p.fcn2, p.fcn3);
  RegressorParams& g = out.grads;
  const int H = p.hidden_dim;

  for (const auto& sample : batch) {
    if (sample.xs.empty()) throw ConfigError("empty sequence");
    const auto T = sample.xs.size();
    std::vector<detail::StepTrace> trace;
    trace.reserve(T);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
    double pred = 0.0;
    for (const auto& x : sample.xs) {
      trace.push_back(detail::forward_step(p, x, h));
      h = trace.back().h_new;
      if (agg == ScoreAggregation::mean_over_steps) pred += trace.back().score;
    }
    if (agg == ScoreAggregation::mean_over_steps)
      pred /= static_cast<double>(T);
    else
      pred = trace.back().score;
    const double residual = pred - sample.target;
    out.loss += residual * residual / B;

    Eigen::VectorXd dh = Eigen::VectorXd::Zero(H);
    for (size_t ti = T; ti-- > 0;) {
      const auto& t = trace[ti];
      double ds = 0.0;
      if (agg == ScoreAggregation::mean_over_steps)
        ds = 2.0 * residual / (B * static_cast<double>(T));
      else if (ti == T - 1)
        ds = 2.0 * residual / B;

      if (ds != 0.0) {
        g.head_w.head(H) += ds * t.h_new;
        g.head_w.tail(p.fcn3) += ds * t.u3;
        g.head_b[0] += ds;
        dh += ds * p.head_w.head(H);

        Eigen::VectorXd du3 = ds * p.head_w.tail(p.fcn3);
        Eigen::VectorXd da3 = (t.u3.array() > 0.0).select(du3, 0.0);
        g.F3 += da3 * t.u2.transpose();
        g.fb3 += da3;
        Eigen::VectorXd du2 = p.F3.transpose() * da3;
        Eigen::VectorXd da2 = (t.u2.array() > 0.0).select(du2, 0.0);
        g.F2 += da2 * t.u1.transpose();
        g.fb2 += da2;
        Eigen::VectorXd du1 = p.F2.transpose() * da2;
        Eigen::VectorXd da1 = (t.u1.array() > 0.0).select(du1, 0.0);
        g.F1 += da1 * t.x.transpose();
        g.fb1 += da1;
      }

      Eigen::ArrayXd dz = dh.array() * (t.c - t.h_prev.array());
      Eigen::ArrayXd dc = dh.array() * t.z;
      Eigen::VectorXd da_h = (dc * (1.0 - t.c * t.c)).matrix();
      Eigen::VectorXd d_rh = p.Uh.transpose() * da_h;
      Eigen::ArrayXd dr = d_rh.array() * t.h_prev.array();
      Eigen::VectorXd da_r = (dr * t.r * (1.0 - t.r)).matrix();
      Eigen::VectorXd da_z = (dz * t.z * (1.0 - t.z)).matrix();

      g.Wh += da_h * t.x.transpose();
      g.Uh += da_h * (t.r * t.h_prev.array()).matrix().transpose();
      g.bh += da_h;
      g.Wr += da_r * t.x.transpose();
      g.Ur += da_r * t.h_prev.transpose();
      g.br += da_r;
      g.Wz += da_z * t.x.transpose();
      g.Uz += da_z * t.h_prev.transpose();
      g.bz += da_z;

      dh = (dh.array() * (1.0 - t.z)).matrix() + (d_rh.array() * t.r).matrix() +
           p.Ur.transpose() * da_r + p.Uz.transpose() * da_z;
    }
  }

  if (!std::isfinite(out.loss)) throw NumericError("numerical overflow");
  for (auto& t : tensor_refs(out.grads))
    for (Eigen::Index i = 0; i < t.size(); ++i)
      if (!std::isfinite(t.data[i])) throw NumericError("numerical overflow");
  return out;
}

struct TrainConfig {
  int epochs = 60;
  int batch_size = 128;
  double lr_head = 3e-3;
  double lr_backbone = 3e-4;  // recorded for fidelity; stand-in backbones stay frozen
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int video_steps = 20;  // K_v
  int audio_steps = 10;  // K_a
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
    if (lr_head <= 0.0 || lr_backbone <= 0.0) throw ConfigError("learning rates must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
      throw ConfigError("adam betas must lie in (0,1)");
    if (video_steps < 1 || audio_steps < 1) throw ConfigError("sampling steps must be positive");
    if (audio_steps > video_steps) throw ConfigError("audio_steps must not exceed video_steps");
  }
};

// Adam with decoupled weight decay over the canonical tensor list.
class AdamW {
 public:
  AdamW(RegressorParams& params, const TrainConfig& cfg)
      : params_(&params), cfg_(cfg) {
    for (auto& t : tensor_refs(params)) {
      m_.emplace_back(Eigen::VectorXd::Zero(t.size()));
      v_.emplace_back(Eigen::VectorXd::Zero(t.size()));
    }
  }

  void step(RegressorParams& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto prefs = tensor_refs(*params_);
    auto grefs = tensor_refs(grads);
    for (size_t k = 0; k < prefs.size(); ++k) {
      Eigen::Map<Eigen::VectorXd> theta(prefs[k].data, prefs[k].size());
      Eigen::Map<Eigen::VectorXd> gv(grefs[k].data, grefs[k].size());
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * gv;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * gv.cwiseProduct(gv);
      Eigen::VectorXd mhat = m_[k] / bc1;
      Eigen::VectorXd vhat = v_[k] / bc2;
      theta -= lr * (mhat.array() / (vhat.array().sqrt() + 1e-8)).matrix();
      theta -= lr * cfg_.weight_decay * theta;
    }
  }

 private:
  RegressorParams* params_;
  TrainConfig cfg_;
  std::vector<Eigen::VectorXd> m_;
  std::vector<Eigen::VectorXd> v_;
  int64_t t_ = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

// Shuffled mini-batch AdamW training; deterministic for a fixed seed.
inline TrainResult train_sequences(RegressorParams& params, const std::vector<TrainSample>& data,
                                   const TrainConfig& cfg,
                                   ScoreAggregation agg = ScoreAggregation::mean_over_steps,
                                   std::ostream* log = nullptr) {
  cfg.validate();
  if (data.size() < 2) throw ConfigError("training needs >= 2 samples");
  for (const auto& s : data)
    if (s.target < 1.0 || s.target > 5.0) throw ConfigError("target outside [1,5]");
  bool all_same = true;
  for (const auto& s : data) all_same = all_same && s.target == data.front().target;
  if (all_same)
    std::cerr << "warning: degenerate dataset (all targets identical); training anyway\n";

  Rng rng(cfg.seed);
  AdamW opt(params, cfg);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
      std::vector<TrainSample> batch;
      for (size_t i = off; i < std::min(off + cfg.batch_size, order.size()); ++i)
        batch.push_back(data[order[i]]);
      auto gr = grad(params, batch, agg);
      opt.step(gr.grads, cfg.lr_head);
      epoch_loss += gr.loss;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    if (log)
      *log << "epoch " << (epoch + 1) << "/" << cfg.epochs << " loss "
           << result.epoch_loss.back() << "\n";
  }
  return result;
}

// Evenly spaced indices with a seeded random offset: stride s = floor(T/k),
// offset uniform in [0, s).
inline std::vector<int> systematic_sample(int T, int k, uint64_t seed) {
  if (k < 1) throw ConfigError("sample count must be >= 1");
  if (T < k) throw ConfigError("sequence too short");
  const int s = T / k;
  Rng rng(seed);
  const int o = static_cast<int>(rng.below(static_cast<uint64_t>(s)));
  std::vector<int> idx(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = o + i * s;
  return idx;
}

// Training-side helper: short sequences pad by repeating the final step.
inline std::vector<int> sample_or_pad(int T, int k, uint64_t seed) {
  if (T < 1 || k < 1) throw ConfigError("sample count and length must be >= 1");
  if (T >= k) return systematic_sample(T, k, seed);
  std::vector<int> idx(static_cast<size_t>(k), T - 1);
  for (int i = 0; i < T; ++i) idx[static_cast<size_t>(i)] = i;
  return idx;
}

}  // namespace teleqa
