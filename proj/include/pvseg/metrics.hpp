/// @file metrics.hpp
/// @brief Overlap and ROC evaluation, the tortuosity distance metric over centerline
///        branches, and rank correlation / two-sample tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "centerline.hpp"
#include "volume.hpp"

namespace pvseg {

/// |a ∩ b| / |a ∪ b| over nonzero voxels; 1 when both are empty.
template <class A, class B>
double jaccard(const Volume<A>& a, const Volume<B>& b) {
  if (a.dims() != b.dims()) throw Error("jaccard: dimension mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const bool x = a[n] != 0, y = b[n] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

struct RocPoint {
  double threshold = 0;
  double fpr = 0;
  double tpr = 0;
};

struct RocResult {
  double az = 0.5;
  std::vector<RocPoint> curve;  // thresholds descending, starting at (0, 0)
};

/// Mann-Whitney concordance: P(score of a positive > score of a negative), ties 1/2.
inline RocResult roc_az(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("roc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw Error("roc: both classes must be present");
  RocResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0, 0});
  double tp = 0, fp = 0, area = 0;
  for (std::size_t q = 0; q < order.size();) {
    double gtp = 0, gfp = 0;
    const double s = scores[order[q]];
    for (; q < order.size() && scores[order[q]] == s; ++q) (labels[order[q]] ? gtp : gfp) += 1;
    // positives in this tie group beat negatives seen before, tie with negatives in the group
    area += gfp * (tp + 0.5 * gtp);
    tp += gtp;
    fp += gfp;
    r.curve.push_back({s, fp / neg, tp / pos});
  }
  r.az = area / (pos * neg);
  return r;
}

struct SensSpec {
  std::optional<double> sensitivity;  // undefined without positives
  std::optional<double> specificity;  // undefined without negatives
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
};

inline SensSpec sens_spec(const std::vector<int>& prediction, const std::vector<int>& labels) {
  if (prediction.size() != labels.size()) throw Error("sens_spec: length mismatch");
  SensSpec s;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n]) (prediction[n] ? s.tp : s.fn)++;
    else (prediction[n] ? s.fp : s.tn)++;
  }
  if (s.tp + s.fn) s.sensitivity = double(s.tp) / double(s.tp + s.fn);
  if (s.tn + s.fp) s.specificity = double(s.tn) / double(s.tn + s.fp);
  return s;
}

// ---------------------------------------------------------------------------
// Tortuosity
// ---------------------------------------------------------------------------

using BranchPath = std::vector<Vec3>;

inline double path_length(const BranchPath& p) {
  double len = 0;
  for (std::size_t n = 1; n < p.size(); ++n) len += norm(p[n] - p[n - 1]);
  return len;
}

/// Path length over endpoint chord.
inline double distance_metric(const BranchPath& p) {
  if (p.size() < 2) throw Error("distance metric: a branch needs at least two nodes");
  const double chord = norm(p.back() - p.front());
  if (!(chord > 0)) throw Error("distance metric: coincident endpoints");
  return path_length(p) / chord;
}

/// Splits a tree into paths between consecutive branch points or endpoints.
inline std::vector<BranchPath> extract_branches(const CenterlineTree& tree) {
  std::unordered_map<int, std::size_t> at;
  for (std::size_t n = 0; n < tree.nodes.size(); ++n) at[tree.nodes[n].id] = n;
  std::vector<std::vector<std::size_t>> adj(tree.nodes.size());
  for (const auto& [a, b] : tree.edges) {
    const std::size_t x = at.at(a), y = at.at(b);
    adj[x].push_back(y);
    adj[y].push_back(x);
  }
  for (auto& v : adj) std::sort(v.begin(), v.end());
  std::vector<BranchPath> out;
  std::vector<std::vector<bool>> used(tree.nodes.size());
  for (std::size_t n = 0; n < adj.size(); ++n) used[n].assign(adj[n].size(), false);
  auto mark = [&](std::size_t a, std::size_t b) {
    for (std::size_t q = 0; q < adj[a].size(); ++q)
      if (adj[a][q] == b) used[a][q] = true;
  };
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (adj[s].size() == 2) continue;
    for (std::size_t q = 0; q < adj[s].size(); ++q) {
      if (used[s][q]) continue;
      BranchPath path{tree.nodes[s].xyz_mm};
      std::size_t prev = s, cur = adj[s][q];
      mark(s, cur);
      mark(cur, s);
      path.push_back(tree.nodes[cur].xyz_mm);
      while (adj[cur].size() == 2) {
        const std::size_t next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
        mark(cur, next);
        mark(next, cur);
        prev = cur;
        cur = next;
        path.push_back(tree.nodes[cur].xyz_mm);
      }
      out.push_back(std::move(path));
    }
  }
  return out;
}

struct DmSummary {
  double mean = 0, std = 0, min = 0, max = 0;
  std::size_t branches = 0;
  double range() const { return max - min; }
};

/// Unweighted statistics of the distance metric over branches at least `min_branch_mm` long.
inline DmSummary patient_dm(const std::vector<CenterlineTree>& trees, double min_branch_mm = 10.0) {
  std::vector<double> dm;
  for (const auto& t : trees)
    for (const auto& b : extract_branches(t))
      if (path_length(b) >= min_branch_mm && norm(b.back() - b.front()) > 0) dm.push_back(distance_metric(b));
  if (dm.empty()) throw Error("distance metric: no branch reaches the minimum length");
  DmSummary s;
  s.branches = dm.size();
  s.mean = std::accumulate(dm.begin(), dm.end(), 0.0) / double(dm.size());
  double ss = 0;
  for (double v : dm) ss += (v - s.mean) * (v - s.mean);
  s.std = dm.size() > 1 ? std::sqrt(ss / double(dm.size() - 1)) : 0.0;
  s.min = *std::min_element(dm.begin(), dm.end());
  s.max = *std::max_element(dm.begin(), dm.end());
  return s;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// 1-based ranks, ties share their average rank.
inline std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t q = 0; q < order.size();) {
    std::size_t e = q;
    while (e < order.size() && v[order[e]] == v[order[q]]) ++e;
    const double rank = 0.5 * double(q + 1 + e);
    for (std::size_t m = q; m < e; ++m) r[order[m]] = rank;
    q = e;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t q = 0; q < x.size(); ++q) {
    sxy += (x[q] - mx) * (y[q] - my);
    sxx += (x[q] - mx) * (x[q] - mx);
    syy += (y[q] - my) * (y[q] - my);
  }
  if (sxx == 0 || syy == 0) throw Error("correlation: constant input");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 3) throw Error("spearman: at least three pairs are required");
  return pearson(mid_ranks(x), mid_ranks(y));
}

struct TTest {
  double t = 0;
  double df = 0;
  double p = 1;
};

/// Two-sided two-sample t-test, Welch by default, pooled variance on request.
inline TTest two_sample_t(const std::vector<double>& a, const std::vector<double>& b, bool welch = true) {
  if (a.size() < 2 || b.size() < 2) throw Error("t-test: each group needs at least two values");
  auto moments = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / double(v.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = double(a.size()), nb = double(b.size());
  if (va == 0 && vb == 0) throw Error("t-test: both groups have zero variance");
  TTest r;
  if (welch) {
    const double qa = va / na, qb = vb / nb;
    r.t = (ma - mb) / std::sqrt(qa + qb);
    r.df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  } else {
    const double sp = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2);
    r.t = (ma - mb) / std::sqrt(sp * (1 / na + 1 / nb));
    r.df = na + nb - 2;
  }
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

}  // namespace pvseg
