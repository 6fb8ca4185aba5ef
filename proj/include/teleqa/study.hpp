// Subjective-study analytics: rank/linear correlation, soft subject-rejection
// score recovery, split-half consistency, and golden/repeat screening.
// All computation in double.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "teleqa/common.hpp"

namespace teleqa {

// Fractional ranks, 1-based; ties share the mean rank of their run.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline double lcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("correlation inputs differ in length");
  if (a.size() < 3) throw ConfigError("correlation needs >= 3 pairs");
  const auto n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) throw NumericError("undefined correlation");
  return cov / std::sqrt(va * vb);
}

inline double srcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("correlation inputs differ in length");
  if (a.size() < 3) throw ConfigError("correlation needs >= 3 pairs");
  return lcc(average_ranks(a), average_ranks(b));
}

struct RatingRecord {
  std::string video_id;
  std::string subject_id;
  double rating = 0.0;
  int session = 0;
  bool is_golden = false;
  bool is_repeat = false;
};

struct RatingsTable {
  std::vector<RatingRecord> records;

  std::vector<std::string> video_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records)
      if (std::find(ids.begin(), ids.end(), r.video_id) == ids.end()) ids.push_back(r.video_id);
    return ids;
  }
  std::vector<std::string> subject_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records)
      if (std::find(ids.begin(), ids.end(), r.subject_id) == ids.end())
        ids.push_back(r.subject_id);
    return ids;
  }
};

// Delimiter-separated ingestion with header video_id,subject_id,rating,
// session,is_golden,is_repeat. Ratings outside [1,5] are affinely rescaled
// from their observed range onto [1,5].
inline RatingsTable load_ratings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty ratings file: " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(s);
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
  };
  auto header = split(line);
  if (header.size() < 3 || header[0] != "video_id" || header[1] != "subject_id" ||
      header[2] != "rating")
    throw ConfigError("ratings header must start with video_id,subject_id,rating");

  RatingsTable table;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() < 3)
      throw ConfigError("ratings line " + std::to_string(line_no) + " has too few fields");
    RatingRecord r;
    r.video_id = fields[0];
    r.subject_id = fields[1];
    try {
      r.rating = std::stod(fields[2]);
      if (fields.size() > 3 && !fields[3].empty()) r.session = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw ConfigError("ratings line " + std::to_string(line_no) + " is not numeric");
    }
    if (!std::isfinite(r.rating))
      throw ConfigError("ratings line " + std::to_string(line_no) + " is not finite");
    if (fields.size() > 4) r.is_golden = fields[4] == "1" || fields[4] == "true";
    if (fields.size() > 5) r.is_repeat = fields[5] == "1" || fields[5] == "true";
    table.records.push_back(std::move(r));
  }
  if (table.records.empty()) throw ConfigError("ratings file has no records");

  double lo = table.records[0].rating, hi = lo;
  for (const auto& r : table.records) {
    lo = std::min(lo, r.rating);
    hi = std::max(hi, r.rating);
  }
  if (lo < 1.0 || hi > 5.0) {
    if (hi == lo) throw ConfigError("cannot rescale constant out-of-range ratings");
    for (auto& r : table.records) r.rating = 1.0 + 4.0 * (r.rating - lo) / (hi - lo);
  }
  return table;
}

struct RecoveredScores {
  std::vector<std::string> video_ids;
  std::vector<std::string> subject_ids;
  std::vector<double> psi;     // per-video recovered score
  std::vector<double> delta;   // per-subject bias, sums to zero
  std::vector<double> nu;      // per-subject noise std, >= floor
  std::vector<double> loglik;  // one entry per iteration, non-decreasing
  bool converged = false;
  int iterations = 0;
};

// Alternating maximum-likelihood fit of u_es = psi_e + delta_s + nu_s * eps.
// Each sub-update is the exact conditional MLE, so the log-likelihood is
// non-decreasing; a decrease beyond rounding slack aborts loudly. The
// identifiability recentring shifts delta and psi jointly, leaving residuals
// untouched. nu is floored so perfectly consistent raters cannot collapse
// the weights; the floored update still cannot lower the likelihood because
// nu approaches the floor from above.
inline RecoveredScores recover_scores(const RatingsTable& table, double tol = 1e-10,
                                      int max_iter = 200) {
  constexpr double kNuFloor = 1e-3;
  if (tol <= 0.0 || max_iter < 1) throw ConfigError("tolerance and max_iter must be positive");

  RecoveredScores out;
  out.video_ids = table.video_ids();
  out.subject_ids = table.subject_ids();
  std::map<std::string, size_t> vid_idx, sub_idx;
  for (size_t i = 0; i < out.video_ids.size(); ++i) vid_idx[out.video_ids[i]] = i;
  for (size_t i = 0; i < out.subject_ids.size(); ++i) sub_idx[out.subject_ids[i]] = i;
  const size_t E = out.video_ids.size(), S = out.subject_ids.size();

  struct Obs {
    size_t e, s;
    double u;
  };
  std::vector<Obs> obs;
  obs.reserve(table.records.size());
  std::vector<std::vector<size_t>> by_video(E), by_subject(S);
  for (const auto& r : table.records) {
    Obs o{vid_idx[r.video_id], sub_idx[r.subject_id], r.rating};
    by_video[o.e].push_back(obs.size());
    by_subject[o.s].push_back(obs.size());
    obs.push_back(o);
  }
  for (size_t e = 0; e < E; ++e)
    if (by_video[e].size() < 2) throw ConfigError("every video needs >= 2 ratings");
  for (size_t s = 0; s < S; ++s)
    if (by_subject[s].size() < 2) throw ConfigError("every subject needs >= 2 ratings");

  // Bipartite connectivity: parameters are only jointly identifiable inside
  // one connected component.
  {
    std::vector<bool> vseen(E, false), sseen(S, false);
    std::queue<size_t> q;  // video indices; subjects expand in place
    q.push(0);
    vseen[0] = true;
    size_t reached_v = 1, reached_s = 0;
    while (!q.empty()) {
      size_t e = q.front();
      q.pop();
      for (size_t oi : by_video[e]) {
        size_t s = obs[oi].s;
        if (sseen[s]) continue;
        sseen[s] = true;
        ++reached_s;
        for (size_t oj : by_subject[s]) {
          size_t e2 = obs[oj].e;
          if (vseen[e2]) continue;
          vseen[e2] = true;
          ++reached_v;
          q.push(e2);
        }
      }
    }
    if (reached_v != E || reached_s != S) throw ConfigError("disconnected rating graph");
  }

  out.psi.assign(E, 0.0);
  out.delta.assign(S, 0.0);
  out.nu.assign(S, 1.0);
  for (size_t e = 0; e < E; ++e) {
    double m = 0.0;
    for (size_t oi : by_video[e]) m += obs[oi].u;
    out.psi[e] = m / static_cast<double>(by_video[e].size());
  }

  auto loglik = [&]() {
    double ll = 0.0;
    for (const auto& o : obs) {
      const double r = o.u - out.psi[o.e] - out.delta[o.s];
      const double nu = out.nu[o.s];
      ll += -0.5 * std::log(2.0 * M_PI) - std::log(nu) - r * r / (2.0 * nu * nu);
    }
    return ll;
  };

  double prev_ll = loglik();
  auto check_monotone = [&](const char* stage) {
    const double ll = loglik();
    if (ll + 1e-9 * (1.0 + std::abs(prev_ll)) < prev_ll)
      throw NumericError(std::string("log-likelihood decreased during ") + stage);
    prev_ll = ll;
    return ll;
  };

  for (int it = 0; it < max_iter; ++it) {
    double max_change = 0.0;

    for (size_t e = 0; e < E; ++e) {
      double num = 0.0, den = 0.0;
      for (size_t oi : by_video[e]) {
        const auto& o = obs[oi];
        const double w = 1.0 / (out.nu[o.s] * out.nu[o.s]);
        num += w * (o.u - out.delta[o.s]);
        den += w;
      }
      const double next = num / den;
      max_change = std::max(max_change, std::abs(next - out.psi[e]));
      out.psi[e] = next;
    }
    check_monotone("psi update");

    for (size_t s = 0; s < S; ++s) {
      double m = 0.0;
      for (size_t oi : by_subject[s]) m += obs[oi].u - out.psi[obs[oi].e];
      const double next = m / static_cast<double>(by_subject[s].size());
      max_change = std::max(max_change, std::abs(next - out.delta[s]));
      out.delta[s] = next;
    }
    // Joint recentring keeps every residual identical, so the likelihood
    // cannot move.
    double mean_delta = std::accumulate(out.delta.begin(), out.delta.end(), 0.0) /
                        static_cast<double>(S);
    for (auto& d : out.delta) d -= mean_delta;
    for (auto& p : out.psi) p += mean_delta;
    check_monotone("delta update");

    for (size_t s = 0; s < S; ++s) {
      double ss = 0.0;
      for (size_t oi : by_subject[s]) {
        const double r = obs[oi].u - out.psi[obs[oi].e] - out.delta[s];
        ss += r * r;
      }
      double next = std::sqrt(ss / static_cast<double>(by_subject[s].size()));
      next = std::max(next, kNuFloor);
      max_change = std::max(max_change, std::abs(next - out.nu[s]));
      out.nu[s] = next;
    }
    out.loglik.push_back(check_monotone("nu update"));
    out.iterations = it + 1;

    if (max_change < tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    std::cerr << "warning: score recovery stopped after " << max_iter
              << " iterations without reaching tol\n";
  return out;
}

// Mean SRCC between per-video mean ratings of two disjoint equal halves of
// the subjects, over n_splits seeded random splits.
inline double split_half_consistency(const RatingsTable& table, int n_splits = 50,
                                     uint64_t seed = 0) {
  if (n_splits < 1) throw ConfigError("n_splits must be >= 1");
  auto subjects = table.subject_ids();
  auto videos = table.video_ids();
  if (subjects.size() < 4) throw ConfigError("split-half needs >= 4 subjects");

  std::map<std::string, size_t> sub_idx;
  for (size_t i = 0; i < subjects.size(); ++i) sub_idx[subjects[i]] = i;
  std::map<std::string, size_t> vid_idx;
  for (size_t i = 0; i < videos.size(); ++i) vid_idx[videos[i]] = i;

  Rng rng(seed);
  std::vector<size_t> order(subjects.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t half = subjects.size() / 2;

  double total = 0.0;
  for (int split = 0; split < n_splits; ++split) {
    rng.shuffle(order);
    std::vector<int> side(subjects.size(), -1);  // odd leftover stays out
    for (size_t i = 0; i < half; ++i) side[order[i]] = 0;
    for (size_t i = half; i < 2 * half; ++i) side[order[i]] = 1;

    std::vector<double> sum[2], count[2];
    for (int h = 0; h < 2; ++h) {
      sum[h].assign(videos.size(), 0.0);
      count[h].assign(videos.size(), 0.0);
    }
    for (const auto& r : table.records) {
      const int h = side[sub_idx[r.subject_id]];
      if (h < 0) continue;
      sum[h][vid_idx[r.video_id]] += r.rating;
      count[h][vid_idx[r.video_id]] += 1.0;
    }
    std::vector<double> a, b;
    for (size_t v = 0; v < videos.size(); ++v) {
      if (count[0][v] == 0.0 || count[1][v] == 0.0) continue;
      a.push_back(sum[0][v] / count[0][v]);
      b.push_back(sum[1][v] / count[1][v]);
    }
    total += srcc(a, b);
  }
  return total / static_cast<double>(n_splits);
}

struct CheckResult {
  double lcc = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
  std::string reason;
};

// Screens one subject against reference scores on the golden set.
inline CheckResult golden_check(const std::vector<double>& ratings,
                                const std::vector<double>& golden_mos, double threshold = 0.5) {
  if (ratings.size() != golden_mos.size()) throw ConfigError("golden set size mismatch");
  if (ratings.size() < 3) throw ConfigError("golden check needs >= 3 videos");
  bool constant_ref = std::all_of(golden_mos.begin(), golden_mos.end(),
                                  [&](double v) { return v == golden_mos[0]; });
  if (constant_ref) throw ConfigError("golden set degenerate");

  CheckResult result;
  bool constant = std::all_of(ratings.begin(), ratings.end(),
                              [&](double v) { return v == ratings[0]; });
  if (constant) {
    result.pass = false;
    result.reason = "degenerate rater";
    return result;
  }
  result.lcc = lcc(ratings, golden_mos);
  result.pass = result.lcc >= threshold;
  result.reason = result.pass ? "ok" : "low golden correlation";
  return result;
}

// Screens one subject's first-pass vs second-pass ratings of repeated videos.
inline CheckResult repeat_check(const std::vector<double>& first,
                                const std::vector<double>& second, double threshold = 0.5) {
  if (first.size() != second.size()) throw ConfigError("repeat set size mismatch");
  if (first.size() < 3) throw ConfigError("repeat check needs >= 3 videos");

  CheckResult result;
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  };
  if (constant(first) || constant(second)) {
    result.pass = false;
    result.reason = "degenerate rater";
    return result;
  }
  result.lcc = lcc(first, second);
  result.pass = result.lcc >= threshold;
  result.reason = result.pass ? "ok" : "low repeat correlation";
  return result;
}

// Structured text report: per-video recovered score with a 95% interval from
// the precision-weighted standard error, then per-subject bias and noise.
inline void write_study_report(std::ostream& os, const RatingsTable& table,
                               const RecoveredScores& rec) {
  std::map<std::string, size_t> sub_idx;
  for (size_t i = 0; i < rec.subject_ids.size(); ++i) sub_idx[rec.subject_ids[i]] = i;

  os << "videos " << rec.video_ids.size() << " subjects " << rec.subject_ids.size()
     << " iterations " << rec.iterations << (rec.converged ? "" : " (not converged)") << "\n";
  os << "video_id,psi,ci95_lo,ci95_hi\n";
  for (size_t e = 0; e < rec.video_ids.size(); ++e) {
    double precision = 0.0;
    for (const auto& r : table.records) {
      if (r.video_id != rec.video_ids[e]) continue;
      const double nu = rec.nu[sub_idx[r.subject_id]];
      precision += 1.0 / (nu * nu);
    }
    const double se = 1.0 / std::sqrt(precision);
    os << rec.video_ids[e] << "," << rec.psi[e] << "," << rec.psi[e] - 1.96 * se << ","
       << rec.psi[e] + 1.96 * se << "\n";
  }
  os << "subject_id,delta,nu\n";
  for (size_t s = 0; s < rec.subject_ids.size(); ++s)
    os << rec.subject_ids[s] << "," << rec.delta[s] << "," << rec.nu[s] << "\n";
}

}  // namespace teleqa
