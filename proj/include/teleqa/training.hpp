// Staged trainer for the full audiovisual model and its ablations: the frame
// head learns first on pooled column sequences, then each pathway regressor
// trains on systematically resampled per-step features, and a final joint
// stage backpropagates through the fusion polynomial. Feature extraction is
// frozen throughout, so per-stream features are computed once up front.
#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "teleqa/model_io.hpp"
#include "teleqa/pipeline.hpp"

namespace teleqa {

struct LabeledStream {
  Stream stream;
  double mos = 0.0;
};

// Content-crossed synthetic corpus in the style of standard quality datasets:
// a pool of scene contents, each appearing under several distortion kinds and
// severities. Stream i uses scene i % scene_pool and kind (i/scene_pool + i)
// % 5, so consecutive index blocks of one pool length cover every scene once
// with rotating kinds; severity draws fresh per stream. The label is the
// severity-derived score from the generator.
inline std::vector<LabeledStream> make_dataset(int n, const SynthSpec& base, uint64_t seed,
                                               int scene_pool = 40) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  if (scene_pool < 1) throw ConfigError("scene pool must be >= 1");
  static const DistortionKind kinds[] = {DistortionKind::blur, DistortionKind::blocking,
                                         DistortionKind::gaussian_noise, DistortionKind::audio_hum,
                                         DistortionKind::audio_clipping};
  Rng rng(seed);
  std::vector<LabeledStream> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SynthSpec spec = base;
    int scene = i % scene_pool;
    int k = (i / scene_pool + i) % 5;
    if (base.sample_rate <= 0.0) k %= 3;  // silent corpus: visual kinds only
    spec.distortions = {{kinds[k], rng.uniform(0.05, 1.0), 0}};
    auto [stream, mos] =
        synth_stream(spec, seed * 1000003ull + 7919ull * static_cast<uint64_t>(scene));
    out.push_back({std::move(stream), mos});
  }
  return out;
}

// Everything the trainer needs from one stream, extracted once: raw frame
// maps (patch features depend on the head, which is not frozen yet), pooled
// frame features, per-step held clip features, and audio features.
struct StreamArtifacts {
  std::vector<FeatureMap> frame_maps;
  std::vector<std::vector<float>> frame_feats;
  std::vector<std::vector<float>> clip_feats;
  std::vector<std::vector<float>> audio_feats;  // empty when the stream has no audio
  double mos = 0.0;
};

inline StreamArtifacts extract_artifacts(const TeleVqaModel& model, const Stream& stream,
                                         double mos) {
  auto packets = packetize(stream, model.clip_extractor.clip_len);
  if (packets.empty()) throw ConfigError("no packets");
  StreamArtifacts a;
  a.mos = mos;
  std::vector<float> last_clip(static_cast<size_t>(model.clip_dim()), 0.0f);
  for (const auto& p : packets) {
    if (p.clip) last_clip = clip_features(*p.clip, model.clip_extractor).values;
    auto maps = extract_frame_maps(*p.frame, model.frame_extractor);
    a.frame_feats.push_back(detail::flatten_pooled(adaptive_avg_pool(maps, 1, 3)));
    a.frame_maps.push_back(std::move(maps));
    a.clip_feats.push_back(last_clip);
    if (p.audio && p.audio->samples.size() >= static_cast<size_t>(model.audio_cfg.n_fft))
      a.audio_feats.push_back(audio_features(*p.audio, model.audio_cfg, model.audio_extractor).values);
  }
  return a;
}

inline std::vector<StreamArtifacts> extract_all(const TeleVqaModel& model,
                                                const std::vector<LabeledStream>& data) {
  std::vector<StreamArtifacts> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(extract_artifacts(model, d.stream, d.mos));
  return out;
}

// Ablation ladder: frame features only, frame+clip with the audio pathway,
// and the full patch+frame+clip visual input with the audio pathway.
enum class ModelVariant { frame_only, frame_clip_audio, full };

inline bool variant_uses_audio(ModelVariant v) { return v != ModelVariant::frame_only; }
inline bool variant_uses_patches(ModelVariant v) { return v == ModelVariant::full; }

inline int variant_visual_dim(const TeleVqaModel& model, ModelVariant v) {
  switch (v) {
    case ModelVariant::frame_only: return model.frame_dim();
    case ModelVariant::frame_clip_audio: return model.frame_dim() + model.clip_dim();
    default: return model.visual_dim();
  }
}

namespace detail {

inline Eigen::VectorXd concat_feats(std::initializer_list<const std::vector<float>*> parts) {
  size_t total = 0;
  for (const auto* p : parts) total += p->size();
  Eigen::VectorXd out(static_cast<Eigen::Index>(total));
  Eigen::Index k = 0;
  for (const auto* p : parts)
    for (float v : *p) out[k++] = v;
  return out;
}

}  // namespace detail

inline std::vector<Eigen::VectorXd> visual_inputs(const StreamArtifacts& a,
                                                  const RegressorParams& head, ModelVariant v) {
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(a.frame_feats.size());
  for (size_t t = 0; t < a.frame_feats.size(); ++t) {
    switch (v) {
      case ModelVariant::frame_only:
        xs.push_back(detail::concat_feats({&a.frame_feats[t]}));
        break;
      case ModelVariant::frame_clip_audio:
        xs.push_back(detail::concat_feats({&a.frame_feats[t], &a.clip_feats[t]}));
        break;
      default: {
        auto fp = patch_features_from_maps(a.frame_maps[t], head);
        xs.push_back(detail::concat_feats({&fp.values, &a.frame_feats[t], &a.clip_feats[t]}));
      }
    }
  }
  return xs;
}

inline std::vector<Eigen::VectorXd> audio_inputs(const StreamArtifacts& a) {
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(a.audio_feats.size());
  for (const auto& f : a.audio_feats) xs.push_back(detail::concat_feats({&f}));
  return xs;
}

struct StagedConfig {
  TrainConfig opt;       // optimizer settings and K_v/K_a; epochs = per-pathway epochs
  int head_epochs = 40;
  int joint_epochs = 40;
  ModelVariant variant = ModelVariant::full;

  void validate() const {
    opt.validate();
    if (head_epochs < 1 || joint_epochs < 0) throw ConfigError("stage epochs invalid");
  }
};

struct StagedModel {
  ModelVariant variant = ModelVariant::full;
  RegressorParams head;
  RegressorParams visual;
  RegressorParams audio;
};

struct StagedResult {
  StagedModel model;
  std::vector<double> head_loss;
  std::vector<double> visual_loss;
  std::vector<double> audio_loss;
  std::vector<double> joint_loss;
};

namespace detail {

// Per-dimension standardization of regressor inputs. Training runs on scaled
// features for optimizer conditioning; the affine map then folds into the
// input-consuming tensors so the trained regressor accepts raw features and
// downstream consumers need no preprocessing.
struct Scaler {
  Eigen::VectorXd mu;
  Eigen::VectorXd inv_sigma;
};

inline Scaler fit_scaler(const std::vector<std::vector<Eigen::VectorXd>>& seqs,
                         Eigen::Index dim) {
  Scaler s;
  s.mu = Eigen::VectorXd::Zero(dim);
  s.inv_sigma = Eigen::VectorXd::Ones(dim);
  size_t n = 0;
  for (const auto& seq : seqs)
    for (const auto& x : seq) {
      s.mu += x;
      ++n;
    }
  if (n == 0) return s;
  s.mu /= static_cast<double>(n);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& seq : seqs)
    for (const auto& x : seq) var += (x - s.mu).cwiseAbs2();
  var /= static_cast<double>(n);
  // Dims whose variance is negligible relative to the most informative one
  // carry rounding noise, not signal; standardizing them would amplify that
  // noise, so they are zeroed out instead.
  double floor_ = std::max(1e-12, 1e-6 * var.maxCoeff());
  for (Eigen::Index i = 0; i < dim; ++i)
    s.inv_sigma[i] = var[i] > floor_ ? 1.0 / std::sqrt(var[i]) : 0.0;
  // Bitwise-duplicate columns (patch grids finer than the feature map repeat
  // cells) add no information but multiply gradient mass on the copied
  // signal; keep the first occurrence and zero the rest.
  std::unordered_map<uint64_t, std::vector<Eigen::Index>> buckets;
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (s.inv_sigma[i] == 0.0) continue;
    uint64_t h = 1469598103934665603ull;
    for (const auto& seq : seqs)
      for (const auto& x : seq) {
        uint64_t bits;
        double v = x[i];
        std::memcpy(&bits, &v, sizeof(bits));
        h = (h ^ bits) * 1099511628211ull;
      }
    auto& bucket = buckets[h];
    for (Eigen::Index j : bucket) {
      bool same = true;
      for (const auto& seq : seqs) {
        for (const auto& x : seq)
          if (x[i] != x[j]) { same = false; break; }
        if (!same) break;
      }
      if (same) { s.inv_sigma[i] = 0.0; break; }
    }
    if (s.inv_sigma[i] != 0.0) bucket.push_back(i);
  }
  return s;
}

inline void scale_seqs(std::vector<std::vector<Eigen::VectorXd>>& seqs, const Scaler& s) {
  for (auto& seq : seqs)
    for (auto& x : seq) x = (x - s.mu).cwiseProduct(s.inv_sigma);
}

// W (x - mu) .* inv_sigma + b  ==  (W diag(inv_sigma)) x + (b - W' mu).
inline void fold_scaler(RegressorParams& p, const Scaler& s) {
  auto fold = [&](Eigen::MatrixXd& W, Eigen::VectorXd& b) {
    W = W * s.inv_sigma.asDiagonal();
    b -= W * s.mu;
  };
  fold(p.Wz, p.bz);
  fold(p.Wr, p.br);
  fold(p.Wh, p.bh);
  fold(p.F1, p.fb1);
}

inline uint64_t resample_seed(uint64_t base, int epoch, size_t stream) {
  return base + 1000003ull * static_cast<uint64_t>(epoch + 1) + 97ull * (stream + 1);
}

inline std::vector<Eigen::VectorXd> resample(const std::vector<Eigen::VectorXd>& xs, int k,
                                             uint64_t seed) {
  auto idx = sample_or_pad(static_cast<int>(xs.size()), k, seed);
  std::vector<Eigen::VectorXd> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(xs[static_cast<size_t>(i)]);
  return out;
}

// Shuffled mini-batch AdamW with a fresh systematic resample of every
// sequence each epoch.
inline std::vector<double> train_pathway(RegressorParams& p,
                                         const std::vector<std::vector<Eigen::VectorXd>>& seqs,
                                         const std::vector<double>& targets, int k,
                                         const TrainConfig& cfg, uint64_t salt,
                                         std::ostream* log, const char* tag) {
  if (seqs.size() < 2) throw ConfigError("training needs >= 2 samples");
  AdamW opt(p, cfg);
  Rng rng(cfg.seed ^ salt);
  std::vector<size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      std::vector<TrainSample> batch;
      for (size_t i = off; i < std::min(off + static_cast<size_t>(cfg.batch_size), order.size());
           ++i) {
        size_t s = order[i];
        batch.push_back({resample(seqs[s], k, resample_seed(cfg.seed ^ salt, epoch, s)),
                         targets[s]});
      }
      auto gr = grad(p, batch, ScoreAggregation::mean_over_steps);
      opt.step(gr.grads, cfg.lr_head);
      epoch_loss += gr.loss;
      ++batches;
    }
    losses.push_back(epoch_loss / static_cast<double>(batches));
    if (log) *log << tag << " epoch " << (epoch + 1) << "/" << cfg.epochs << " loss "
                  << losses.back() << "\n";
  }
  return losses;
}

// Joint stage: the fused prediction is the polynomial over the two pathway
// sequence means. Chain-rule factors enter the existing MSE backward pass as
// per-sample surrogate targets: grad of (pred - fake)^2 w.r.t. the pathway
// equals the fused-loss gradient when fake = pred - eps * dfused/dpathway.
inline std::vector<double> train_joint(RegressorParams& visual, RegressorParams& audio,
                                       const std::vector<std::vector<Eigen::VectorXd>>& vseqs,
                                       const std::vector<std::vector<Eigen::VectorXd>>& aseqs,
                                       const std::vector<double>& targets, const TrainConfig& oc,
                                       int epochs, bool update_visual, bool update_audio,
                                       uint64_t salt, std::ostream* log, const char* tag) {
  AdamW opt_v(visual, oc);
  AdamW opt_a(audio, oc);
  Rng rng(oc.seed ^ salt);
  std::vector<size_t> order(vseqs.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> losses;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    size_t count = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(oc.batch_size)) {
      std::vector<TrainSample> vbatch, abatch;
      for (size_t i = off; i < std::min(off + static_cast<size_t>(oc.batch_size), order.size());
           ++i) {
        size_t s = order[i];
        auto vxs =
            resample(vseqs[s], oc.video_steps, resample_seed(oc.seed ^ salt ^ 0x51ull, epoch, s));
        double sv = sample_prediction(visual, vxs, ScoreAggregation::mean_over_steps);
        if (aseqs[s].empty()) {  // visual-only stream: plain MSE on the pathway
          double eps = sv - targets[s];
          epoch_loss += eps * eps;
          ++count;
          vbatch.push_back({std::move(vxs), targets[s]});
          continue;
        }
        auto axs =
            resample(aseqs[s], oc.audio_steps, resample_seed(oc.seed ^ salt ^ 0x52ull, epoch, s));
        double sa = sample_prediction(audio, axs, ScoreAggregation::mean_over_steps);
        double fused = kpn_polynomial(sa, sv);
        double eps = fused - targets[s];
        epoch_loss += eps * eps;
        ++count;
        vbatch.push_back({std::move(vxs), sv - eps * (0.24 + 0.088 * sa)});
        abatch.push_back({std::move(axs), sa - eps * (0.007 + 0.088 * sv)});
      }
      if (update_visual && !vbatch.empty()) {
        auto gv = grad(visual, vbatch, ScoreAggregation::mean_over_steps);
        opt_v.step(gv.grads, oc.lr_head);
      }
      if (update_audio && !abatch.empty()) {
        auto ga = grad(audio, abatch, ScoreAggregation::mean_over_steps);
        opt_a.step(ga.grads, oc.lr_head);
      }
    }
    losses.push_back(count > 0 ? epoch_loss / static_cast<double>(count) : 0.0);
    if (log) *log << tag << " epoch " << (epoch + 1) << "/" << epochs << " loss "
                  << losses.back() << "\n";
  }
  return losses;
}

}  // namespace detail

inline StagedResult staged_train(const TeleVqaModel& base,
                                 const std::vector<StreamArtifacts>& train_set,
                                 const StagedConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.size() < 2) throw ConfigError("training needs >= 2 samples");

  StagedResult result;
  StagedModel& m = result.model;
  m.variant = cfg.variant;
  const uint64_t seed = cfg.opt.seed;
  m.head = init_regressor(base.head.input_dim, base.head.hidden_dim, base.head.fcn1,
                          base.head.fcn2, base.head.fcn3, seed + 11);
  m.visual = init_regressor(variant_visual_dim(base, cfg.variant), base.visual.hidden_dim,
                            base.visual.fcn1, base.visual.fcn2, base.visual.fcn3, seed + 12);
  m.audio = init_regressor(base.audio.input_dim, base.audio.hidden_dim, base.audio.fcn1,
                           base.audio.fcn2, base.audio.fcn3, seed + 13);

  // Stage 1: the frame head, on every frame's pooled column sequence.
  if (variant_uses_patches(cfg.variant)) {
    const int c = base.frame_extractor.final_channels();
    std::vector<std::vector<Eigen::VectorXd>> col_seqs;
    std::vector<double> head_targets;
    for (const auto& a : train_set)
      for (const auto& flat : a.frame_feats) {
        col_seqs.push_back(feature_columns({Modality::frame, flat}, c));
        head_targets.push_back(a.mos);
      }
    auto head_scaler = detail::fit_scaler(col_seqs, base.head.input_dim);
    detail::scale_seqs(col_seqs, head_scaler);
    std::vector<TrainSample> head_data;
    for (size_t i = 0; i < col_seqs.size(); ++i)
      head_data.push_back({std::move(col_seqs[i]), head_targets[i]});
    TrainConfig head_cfg = cfg.opt;
    head_cfg.epochs = cfg.head_epochs;
    auto r = train_sequences(m.head, head_data, head_cfg, ScoreAggregation::final_step, log);
    result.head_loss = std::move(r.epoch_loss);
    detail::fold_scaler(m.head, head_scaler);  // head now consumes raw columns
  }

  // Stage 2: assemble pathway inputs with the head now frozen.
  std::vector<std::vector<Eigen::VectorXd>> vseqs, aseqs;
  std::vector<double> targets;
  for (const auto& a : train_set) {
    vseqs.push_back(visual_inputs(a, m.head, cfg.variant));
    aseqs.push_back(audio_inputs(a));
    targets.push_back(a.mos);
  }
  auto v_scaler = detail::fit_scaler(vseqs, m.visual.input_dim);
  detail::scale_seqs(vseqs, v_scaler);
  auto a_scaler = detail::fit_scaler(aseqs, m.audio.input_dim);
  detail::scale_seqs(aseqs, a_scaler);

  // Stage 3: the visual pathway alone against the labels.
  result.visual_loss = detail::train_pathway(m.visual, vseqs, targets, cfg.opt.video_steps,
                                             cfg.opt, 0x7full, log, "visual");
  bool audio_trained = false;
  if (variant_uses_audio(cfg.variant)) {
    size_t with_audio = 0;
    for (const auto& a : aseqs) with_audio += a.empty() ? 0 : 1;
    if (with_audio >= 2) {
      audio_trained = true;
      // Stage 4: the audio pathway through the fusion polynomial with the
      // visual pathway frozen, so it fits exactly the residual the visual
      // pathway cannot explain.
      result.audio_loss =
          detail::train_joint(m.visual, m.audio, vseqs, aseqs, targets, cfg.opt, cfg.opt.epochs,
                              false, true, 0xa0ull, log, "audio+fusion");
      // Stage 5: both pathways jointly.
      if (cfg.joint_epochs > 0)
        result.joint_loss =
            detail::train_joint(m.visual, m.audio, vseqs, aseqs, targets, cfg.opt,
                                cfg.joint_epochs, true, true, 0x4a4full, log, "joint");
    }
  }
  detail::fold_scaler(m.visual, v_scaler);
  if (audio_trained) detail::fold_scaler(m.audio, a_scaler);
  return result;
}

// Full-sequence prediction for one stream; no resampling, so deterministic
// without a seed. Unimodal variants and silent streams skip fusion.
inline double evaluate_artifacts(const StagedModel& m, const StreamArtifacts& a) {
  auto vxs = visual_inputs(a, m.head, m.variant);
  double sv = sample_prediction(m.visual, vxs, ScoreAggregation::mean_over_steps);
  if (!variant_uses_audio(m.variant) || a.audio_feats.empty()) return clamp(sv, 1.0, 5.0);
  double sa = sample_prediction(m.audio, audio_inputs(a), ScoreAggregation::mean_over_steps);
  return clamp(kpn_polynomial(sa, sv), 1.0, 5.0);
}

// Packages a full-variant staged model for the online pipeline and the
// weights bundle.
inline TeleVqaModel to_model(const TeleVqaModel& base, const StagedModel& staged) {
  if (staged.variant != ModelVariant::full)
    throw ConfigError("only the full variant maps onto the online pipeline");
  TeleVqaModel m = base;
  m.head = staged.head;
  m.visual = staged.visual;
  m.audio = staged.audio;
  m.validate();
  return m;
}

}  // namespace teleqa
