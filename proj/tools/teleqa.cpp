// Command-line surface: synthetic stream generation, feature extraction,
// training, online prediction, quality maps, and study analysis.
//
// Exit codes: 0 ok, 1 I/O, 2 config/validation (including flag parse
// errors), 3 numerical. Config precedence: config file overrides flags,
// flags override built-in defaults; TELEQA_CONFIG names the default config
// path when --config is not given.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "teleqa/config.hpp"
#include "teleqa/model_io.hpp"
#include "teleqa/study.hpp"
#include "teleqa/training.hpp"

namespace {

using namespace teleqa;

struct CommonOpts {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int clip_len = 0;
  bool clip_len_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path,
                  "JSON config file; its values override flags (default: $TELEQA_CONFIG)");
  cmd->add_option("--seed", o.seed, "master seed for model init and any sampling")
      ->default_val(Config{}.seed);
  cmd->add_option("--clip-len", o.clip_len, "frames per clip")->default_val(Config{}.clip_len);
}

// Defaults, then flags the user set, then the config file on top.
Config resolve_config(const CLI::App* cmd, const CommonOpts& o) {
  Config c;
  if (cmd->count("--seed") > 0) c.seed = o.seed;
  if (cmd->count("--clip-len") > 0) c.clip_len = o.clip_len;
  std::string path = o.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("TELEQA_CONFIG")) path = env;
  }
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid config JSON: " + std::string(e.what()));
    }
    apply_config_json(c, j);
  }
  c.validate();
  return c;
}

DistortionKind parse_kind(const std::string& name) {
  if (name == "blur") return DistortionKind::blur;
  if (name == "blocking") return DistortionKind::blocking;
  if (name == "noise") return DistortionKind::gaussian_noise;
  if (name == "hum") return DistortionKind::audio_hum;
  if (name == "clipping") return DistortionKind::audio_clipping;
  throw ConfigError("unknown distortion kind: " + name +
                    " (expected blur|blocking|noise|hum|clipping)");
}

DistortionSpec parse_distortion(const std::string& text) {
  DistortionSpec d;
  auto p1 = text.find(':');
  if (p1 == std::string::npos) throw ConfigError("distortion format is kind:severity[:onset]");
  d.kind = parse_kind(text.substr(0, p1));
  auto rest = text.substr(p1 + 1);
  auto p2 = rest.find(':');
  try {
    d.severity = std::stod(rest.substr(0, p2));
    if (p2 != std::string::npos) d.onset_step = std::stoll(rest.substr(p2 + 1));
  } catch (const std::exception&) {
    throw ConfigError("distortion format is kind:severity[:onset]");
  }
  return d;
}

std::pair<int, int> parse_grid(const std::string& text) {
  auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("grid format is MxN, e.g. 20x20");
  try {
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("grid format is MxN, e.g. 20x20");
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  return out;
}

// --- synth: write one synthetic stream container -------------------------

int cmd_synth(const CLI::App* cmd, const CommonOpts& common, const std::string& out_dir,
              const SynthSpec& base, const std::vector<std::string>& distortions) {
  auto cfg = resolve_config(cmd, common);
  SynthSpec spec = base;
  for (const auto& d : distortions) spec.distortions.push_back(parse_distortion(d));
  auto [stream, mos] = synth_stream(spec, cfg.seed);
  store_stream(stream, out_dir);
  nlohmann::json j;
  j["mos"] = mos;
  auto sidecar = open_out((std::filesystem::path(out_dir) / "mos.json").string());
  sidecar << j.dump(2) << "\n";
  std::cout << "wrote " << out_dir << " mos " << mos << "\n";
  return 0;
}

// --- extract: stream container -> binary feature cache -------------------

int cmd_extract(const CLI::App* cmd, const CommonOpts& common, const std::string& stream_dir,
                const std::string& out_path) {
  auto cfg = resolve_config(cmd, common);
  auto model = build_model(cfg);
  auto stream = load_stream(stream_dir);
  auto packets = packetize(stream, cfg.clip_len);

  std::vector<CacheRecord> records;
  auto push = [&](uint32_t step, const FeatureVector& fv) {
    records.push_back({step, fv.modality, fv.values});
  };
  for (const auto& p : packets) {
    auto step = static_cast<uint32_t>(p.step);
    if (p.frame) push(step, frame_features(*p.frame, model.frame_extractor));
    if (p.clip) push(step, clip_features(*p.clip, model.clip_extractor));
    if (p.audio && static_cast<int>(p.audio->samples.size()) >= model.audio_cfg.n_fft)
      push(step, audio_features(*p.audio, model.audio_cfg, model.audio_extractor));
  }
  cache_write(out_path, records);
  std::cout << "wrote " << out_path << " records " << records.size() << "\n";
  return 0;
}

// --- predict: per-step quality trace --------------------------------------

int cmd_predict(const CLI::App* cmd, const CommonOpts& common, const std::string& stream_dir,
                const std::string& weights_dir, const std::string& out_path, bool offline) {
  resolve_config(cmd, common);  // validates config/seed flags; model comes from weights
  auto model = load_model(weights_dir);
  auto stream = load_stream(stream_dir);
  auto packets = packetize(stream, model.clip_extractor.clip_len);
  if (packets.empty()) throw ConfigError("no packets");
  auto trace = offline ? run_offline(model, packets) : run_online(model, packets);
  auto out = open_out(out_path);
  write_trace(out, trace);
  std::cout << "wrote " << out_path << " steps " << trace.size() << "\n";
  return 0;
}

// --- train: staged training -> weights bundle + loss log ------------------

std::vector<LabeledStream> load_corpus(const std::string& dir) {
  std::ifstream labels(std::filesystem::path(dir) / "labels.csv");
  if (!labels) throw IoError("missing file: " + dir + "/labels.csv");
  std::string line;
  if (!std::getline(labels, line) || line != "stream,mos")
    throw ConfigError("labels.csv must start with header stream,mos");
  std::vector<LabeledStream> out;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("labels.csv row needs stream,mos");
    LabeledStream ls;
    try {
      ls.mos = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ConfigError("labels.csv row needs stream,mos");
    }
    ls.stream = load_stream(std::filesystem::path(dir) / line.substr(0, comma));
    out.push_back(std::move(ls));
  }
  if (out.empty()) throw ConfigError("labels.csv has no rows");
  return out;
}

int cmd_train(const CLI::App* cmd, const CommonOpts& common, const std::string& corpus_dir,
              int synthetic_n, const std::string& out_dir, const std::string& loss_log) {
  auto cfg = resolve_config(cmd, common);
  if ((corpus_dir.empty()) == (synthetic_n == 0))
    throw ConfigError("train needs exactly one of --corpus or --synthetic");

  std::vector<LabeledStream> data;
  if (!corpus_dir.empty()) {
    data = load_corpus(corpus_dir);
  } else {
    SynthSpec spec;
    spec.width = 32;
    spec.height = 32;
    spec.fps = 4.0;
    spec.n_frames = 12;
    spec.sample_rate = 8000.0;
    data = make_dataset(synthetic_n, spec, cfg.seed, 10);
  }

  auto base = build_model(cfg);
  auto arts = extract_all(base, data);
  auto sc = staged_config(cfg);
  std::ostream* log = nullptr;
  std::ofstream log_file;
  if (!loss_log.empty()) {
    log_file = open_out(loss_log);
    log = &log_file;
  }
  auto result = staged_train(base, arts, sc, log);
  auto trained = to_model(base, result.model);
  save_model(out_dir, trained);
  std::cout << "wrote " << out_dir << " streams " << data.size() << " final-loss "
            << (result.joint_loss.empty() ? result.visual_loss.back() : result.joint_loss.back())
            << "\n";
  return 0;
}

// --- qmap: spatial quality map for one frame ------------------------------

int cmd_qmap(const CLI::App* cmd, const CommonOpts& common, const std::string& stream_dir,
             const std::string& weights_dir, int64_t frame_idx, const std::string& grid,
             const std::string& out_prefix) {
  auto cfg = resolve_config(cmd, common);
  auto model = weights_dir.empty() ? build_model(cfg) : load_model(weights_dir);
  auto stream = load_stream(stream_dir);
  if (frame_idx < 0 || frame_idx >= static_cast<int64_t>(stream.frames.size()))
    throw ConfigError("frame index " + std::to_string(frame_idx) + " outside stream of " +
                      std::to_string(stream.frames.size()) + " frames");
  auto [rows, cols] = parse_grid(grid);
  auto qm = quality_map(stream.frames[static_cast<size_t>(frame_idx)], rows, cols,
                        model.frame_extractor, model.head);
  save_quality_map(qm, out_prefix + ".cache", out_prefix + ".pgm");
  std::cout << "wrote " << out_prefix << ".pgm cells " << rows * cols << "\n";
  return 0;
}

// --- study: score recovery and consistency --------------------------------

int cmd_study_recover(const CLI::App* cmd, const CommonOpts& common, const std::string& ratings,
                      const std::string& out_path, double tol, int max_iter) {
  resolve_config(cmd, common);
  auto table = load_ratings(ratings);
  auto rec = recover_scores(table, tol, max_iter);
  if (out_path.empty() || out_path == "-") {
    write_study_report(std::cout, table, rec);
  } else {
    auto out = open_out(out_path);
    write_study_report(out, table, rec);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_study_consistency(const CLI::App* cmd, const CommonOpts& common,
                          const std::string& ratings, int splits) {
  auto cfg = resolve_config(cmd, common);
  auto table = load_ratings(ratings);
  double mean = split_half_consistency(table, splits, cfg.seed);
  std::cout.precision(9);
  std::cout << "mean SRCC over " << splits << " random splits: " << mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"telepresence audiovisual quality prediction"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOpts synth_c, extract_c, predict_c, train_c, qmap_c, recover_c, consistency_c;

  auto* synth = app.add_subcommand("synth", "generate a synthetic stream container");
  std::string synth_out;
  SynthSpec synth_spec;
  std::vector<std::string> synth_distortions;
  synth->add_option("--out", synth_out, "output container directory")->required();
  synth->add_option("--width", synth_spec.width, "frame width")->default_val(64);
  synth->add_option("--height", synth_spec.height, "frame height")->default_val(64);
  synth->add_option("--fps", synth_spec.fps, "frames per second")->default_val(4.0);
  synth->add_option("--frames", synth_spec.n_frames, "frame count")->default_val(16);
  synth->add_option("--sample-rate", synth_spec.sample_rate, "audio rate; 0 disables audio")
      ->default_val(0.0);
  synth->add_option("--distort", synth_distortions,
                    "kind:severity[:onset], repeatable; kinds blur|blocking|noise|hum|clipping");
  add_common(synth, synth_c);

  auto* extract = app.add_subcommand("extract", "stream container to binary feature cache");
  std::string extract_stream, extract_out;
  extract->add_option("--stream", extract_stream, "stream container directory")->required();
  extract->add_option("--out", extract_out, "output cache file")->required();
  add_common(extract, extract_c);

  auto* predict = app.add_subcommand("predict", "per-step quality trace for a stream");
  std::string predict_stream, predict_weights, predict_out;
  bool predict_offline = false;
  predict->add_option("--stream", predict_stream, "stream container directory")->required();
  predict->add_option("--weights", predict_weights, "weights bundle directory")->required();
  predict->add_option("--out", predict_out, "output trace CSV")->required();
  predict->add_flag("--offline", predict_offline, "use the batch reference path");
  add_common(predict, predict_c);

  auto* train = app.add_subcommand("train", "staged training to a weights bundle");
  std::string train_corpus, train_out, train_log;
  int train_synthetic = 0;
  train->add_option("--corpus", train_corpus,
                    "corpus directory with labels.csv and stream subdirectories");
  train->add_option("--synthetic", train_synthetic,
                    "train on this many internally generated streams instead of --corpus");
  train->add_option("--out", train_out, "output weights bundle directory")->required();
  train->add_option("--loss-log", train_log, "per-epoch loss CSV");
  add_common(train, train_c);

  auto* qmap = app.add_subcommand("qmap", "spatial quality map for one frame");
  std::string qmap_stream, qmap_weights, qmap_grid, qmap_out;
  int64_t qmap_frame = 0;
  qmap->add_option("--stream", qmap_stream, "stream container directory")->required();
  qmap->add_option("--weights", qmap_weights, "weights bundle; omit for the seeded config model");
  qmap->add_option("--frame", qmap_frame, "frame index")->default_val(0);
  qmap->add_option("--grid", qmap_grid, "map dimensions MxN")->default_val("20x20");
  qmap->add_option("--out", qmap_out, "output prefix for .cache and .pgm")->required();
  add_common(qmap, qmap_c);

  auto* study = app.add_subcommand("study", "subjective study analysis");
  study->require_subcommand(1);

  auto* recover = study->add_subcommand("recover", "recover true scores from noisy ratings");
  std::string recover_ratings, recover_out;
  double recover_tol = 1e-10;
  int recover_iter = 200;
  recover->add_option("--ratings", recover_ratings, "ratings CSV")->required();
  recover->add_option("--out", recover_out, "report path; - for stdout")->default_val("-");
  recover->add_option("--tol", recover_tol, "log-likelihood convergence tolerance")
      ->default_val(1e-10);
  recover->add_option("--max-iter", recover_iter, "iteration cap")->default_val(200);
  add_common(recover, recover_c);

  auto* consistency = study->add_subcommand("consistency", "split-half subject consistency");
  std::string consistency_ratings;
  int consistency_splits = 50;
  consistency->add_option("--ratings", consistency_ratings, "ratings CSV")->required();
  consistency->add_option("--splits", consistency_splits, "number of random splits")
      ->default_val(50);
  add_common(consistency, consistency_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth, synth_c, synth_out, synth_spec, synth_distortions);
    if (extract->parsed()) return cmd_extract(extract, extract_c, extract_stream, extract_out);
    if (predict->parsed())
      return cmd_predict(predict, predict_c, predict_stream, predict_weights, predict_out,
                         predict_offline);
    if (train->parsed())
      return cmd_train(train, train_c, train_corpus, train_synthetic, train_out, train_log);
    if (qmap->parsed())
      return cmd_qmap(qmap, qmap_c, qmap_stream, qmap_weights, qmap_frame, qmap_grid, qmap_out);
    if (recover->parsed())
      return cmd_study_recover(recover, recover_c, recover_ratings, recover_out, recover_tol,
                               recover_iter);
    if (consistency->parsed())
      return cmd_study_consistency(consistency, consistency_c, consistency_ratings,
                                   consistency_splits);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
