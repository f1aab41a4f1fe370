#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/sensing_faults.hpp"

namespace dshm {

// Uniform histogram edges. Samples outside [lo, hi] fall into the edge bins.
struct BinEdges {
  double lo = 0.0;
  double hi = 1.0;
  int bins = 16;

  int index(double x) const {
    if (!(hi > lo)) return 0;
    const double r = (x - lo) / (hi - lo) * bins;
    if (!(r >= 0.0)) return 0;  // also catches NaN
    return std::min(bins - 1, static_cast<int>(r));
  }

  static BinEdges from_range(const Eigen::VectorXd& v, int bins) {
    require(bins >= 1, "bins.count", "bin count must be positive");
    require(v.size() > 0, "bins.empty", "cannot derive bin edges from an empty window");
    return BinEdges{v.minCoeff(), v.maxCoeff(), bins};
  }
};

struct CorrelationResult {
  double rho = 0.0;
  bool degenerate = false;
};

inline CorrelationResult correlation_coefficient(const Eigen::VectorXd& u,
                                                 const Eigen::VectorXd& v) {
  require(u.size() == v.size(), "correlation.length", "windows differ in length");
  require(u.size() >= 2, "correlation.length", "need at least two samples");
  const double scale = std::max(u.cwiseAbs().maxCoeff(), v.cwiseAbs().maxCoeff());
  const double eps = 1e-12 * scale * scale;
  const Eigen::VectorXd du = u.array() - u.mean();
  const Eigen::VectorXd dv = v.array() - v.mean();
  const double n = static_cast<double>(u.size());
  const double vu = du.squaredNorm() / n, vv = dv.squaredNorm() / n;
  if (scale == 0.0 || vu < eps || vv < eps) return {0.0, true};
  const double rho = du.dot(dv) / std::sqrt(du.squaredNorm() * dv.squaredNorm());
  return {std::clamp(rho, -1.0, 1.0), false};
}

inline CorrelationResult correlation_coefficient(const SignalWindow& u, const SignalWindow& v) {
  return correlation_coefficient(u.samples, v.samples);
}

struct MiEstimate {
  double nats = 0.0;
  bool unreliable = false;
};

// Plug-in MI estimate from the joint histogram. Each cell term is summed in
// sorted order so that swapping the arguments gives a bit-identical result.
inline MiEstimate mutual_information_binned(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                            const BinEdges& eu, const BinEdges& ev) {
  require(u.size() == v.size(), "mi.length", "windows differ in length");
  require(u.size() > 0, "mi.length", "empty window");
  const int bu = eu.bins, bv = ev.bins;
  std::vector<long> joint(static_cast<std::size_t>(bu) * bv, 0), mu(bu, 0), mv(bv, 0);
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    const int a = eu.index(u(k)), b = ev.index(v(k));
    ++joint[static_cast<std::size_t>(a) * bv + b];
    ++mu[a];
    ++mv[b];
  }
  const double n = static_cast<double>(u.size());
  const double log_n = std::log(n);
  std::vector<double> terms;
  terms.reserve(joint.size());
  for (int a = 0; a < bu; ++a) {
    for (int b = 0; b < bv; ++b) {
      const long c = joint[static_cast<std::size_t>(a) * bv + b];
      if (c == 0) continue;
      const double marg = std::log(static_cast<double>(mu[a])) + std::log(static_cast<double>(mv[b]));
      terms.push_back(c / n * (std::log(static_cast<double>(c)) + log_n - marg));
    }
  }
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  MiEstimate out;
  out.nats = std::max(0.0, total);
  out.unreliable = n < static_cast<double>(bu) * bv / 10.0;
  return out;
}

inline MiEstimate mutual_information_binned(const SignalWindow& u, const SignalWindow& v,
                                            const BinEdges& eu, const BinEdges& ev) {
  return mutual_information_binned(u.samples, v.samples, eu, ev);
}

struct Indicator {
  double lambda = 0.0;
  bool degenerate = false;
};

constexpr double kIndicatorSentinel = 10.0;

inline Indicator fault_indicator(double omega_actual, double omega_ref) {
  require(omega_actual >= 0.0 && omega_ref >= 0.0, "indicator.negative",
          "mutual information values must be non-negative");
  if (omega_actual < 1e-9) return {kIndicatorSentinel, true};
  // the sentinel is the largest reportable deviation
  return {std::min(kIndicatorSentinel, std::abs(omega_actual - omega_ref) / omega_actual), false};
}

struct DetectionConfig {
  int bins = 16;
  std::size_t window_sets = 1;  // consecutive rounds used for the deviation score
  double threshold = 0.5;
  double r_min = 0.0;
  std::size_t max_iterations = 10;

  void validate() const {
    require(bins >= 4, "detection.bins", "bins must be at least 4");
    require(threshold > 0.0, "detection.threshold", "threshold must be positive");
    require(window_sets >= 1, "detection.window_sets", "window_sets must be at least 1");
  }
};

using SensorPair = std::pair<std::size_t, std::size_t>;

inline SensorPair ordered_pair(std::size_t a, std::size_t b) {
  return a < b ? SensorPair{a, b} : SensorPair{b, a};
}

struct PairReference {
  double omega_ref = 0.0;
  bool degenerate = false;
};

struct CorrelationModel {
  std::map<std::size_t, BinEdges> edges;
  std::map<SensorPair, PairReference> pairs;  // keyed by (lower id, higher id)
  std::size_t training_rounds = 0;
  std::size_t window_sets = 1;

  const PairReference& pair(std::size_t a, std::size_t b) const {
    auto it = pairs.find(ordered_pair(a, b));
    require(it != pairs.end(), "model.pair",
            "no reference for pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
    return it->second;
  }
  const BinEdges& edges_of(std::size_t id) const {
    auto it = edges.find(id);
    require(it != edges.end(), "model.channel",
            "no reference edges for sensor " + std::to_string(id));
    return it->second;
  }
};

// One round of windows keyed by sensor id. Absent sensors have no entry.
using RoundWindows = std::map<std::size_t, SignalWindow>;

inline CorrelationModel train_correlation_model(const std::vector<RoundWindows>& rounds,
                                                const std::vector<SensorPair>& pairs,
                                                const DetectionConfig& cfg) {
  cfg.validate();
  CorrelationModel model;
  model.window_sets = cfg.window_sets;
  model.training_rounds = rounds.size();

  std::set<std::size_t> ids;
  for (const auto& [a, b] : pairs) {
    ids.insert(a);
    ids.insert(b);
  }
  for (std::size_t id : ids) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : rounds) {
      auto it = r.find(id);
      if (it == r.end() || it->second.samples.size() == 0) continue;
      lo = std::min(lo, it->second.samples.minCoeff());
      hi = std::max(hi, it->second.samples.maxCoeff());
    }
    require(std::isfinite(lo), "model.training",
            "sensor " + std::to_string(id) + " has no training windows");
    model.edges[id] = BinEdges{lo, hi, cfg.bins};
  }
  for (const auto& p : pairs) {
    const SensorPair key = ordered_pair(p.first, p.second);
    if (model.pairs.count(key)) continue;
    double sum = 0.0;
    std::size_t used = 0;
    bool degenerate = false;
    for (const auto& r : rounds) {
      auto ia = r.find(key.first), ib = r.find(key.second);
      if (ia == r.end() || ib == r.end()) continue;
      const auto& ea = model.edges.at(key.first);
      const auto& eb = model.edges.at(key.second);
      if (!(ea.hi > ea.lo) || !(eb.hi > eb.lo)) degenerate = true;
      sum += mutual_information_binned(ia->second, ib->second, ea, eb).nats;
      ++used;
    }
    require(used >= cfg.window_sets, "model.training",
            "pair (" + std::to_string(key.first) + ", " + std::to_string(key.second) + ") has " +
                std::to_string(used) + " training windows, needs " +
                std::to_string(cfg.window_sets));
    PairReference ref;
    ref.omega_ref = sum / static_cast<double>(used);
    ref.degenerate = degenerate || ref.omega_ref < 1e-9;
    model.pairs[key] = ref;
  }
  return model;
}

// Mean pairwise MI between every member of `a` and every member of `b`.
inline double group_mi(const std::vector<SignalWindow>& a, const std::vector<SignalWindow>& b,
                       const CorrelationModel& model) {
  if (a.empty() || b.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& x : a)
    for (const auto& y : b)
      sum += mutual_information_binned(x, y, model.edges_of(x.sensor_id),
                                       model.edges_of(y.sensor_id))
                 .nats;
  return sum / static_cast<double>(a.size() * b.size());
}

// Each element of the outer vectors is one round. `faulty` may be empty.
inline double deviation_score(const std::vector<std::vector<SignalWindow>>& healthy,
                              const std::vector<std::vector<SignalWindow>>& faulty,
                              const CorrelationModel& model, std::size_t window_sets) {
  require(window_sets >= 1, "deviation.rounds", "need at least one round");
  require(healthy.size() >= window_sets, "deviation.rounds",
          "not enough rounds for the healthy group");
  require(faulty.empty() || faulty.size() >= window_sets, "deviation.rounds",
          "not enough rounds for the faulty group");
  double within = 0.0, across = 0.0;
  for (std::size_t t = 0; t < window_sets; ++t) {
    require(!healthy[t].empty(), "deviation.empty", "healthy group is empty");
    within += group_mi(healthy[t], healthy[t], model);
    if (!faulty.empty()) across += group_mi(faulty[t], healthy[t], model);
  }
  return within - across;
}

enum class Verdict { non_faulty, faulty, missing };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::non_faulty: return "non_faulty";
    case Verdict::faulty: return "faulty";
    case Verdict::missing: return "missing";
  }
  return "unknown";
}

struct PairIndicator {
  std::size_t neighbor = 0;
  double omega = 0.0;
  double lambda = 0.0;
  bool degenerate = false;
};

struct NodeDecision {
  std::size_t sensor_id = 0;
  std::size_t round = 0;
  std::vector<PairIndicator> pairs;
  double lambda = 0.0;
  Verdict verdict = Verdict::non_faulty;
  // 0 when the node reported itself; otherwise the neighbor that reported it.
  std::size_t reported_by = 0;
};

inline std::vector<PairIndicator> pair_indicators(std::size_t node,
                                                  const std::vector<std::size_t>& neighbors,
                                                  const RoundWindows& windows,
                                                  const CorrelationModel& model) {
  const auto self = windows.find(node);
  require(self != windows.end(), "detection.window",
          "sensor " + std::to_string(node) + " has no window this round");
  std::vector<PairIndicator> out;
  for (std::size_t j : neighbors) {
    auto other = windows.find(j);
    if (other == windows.end()) continue;
    PairIndicator p;
    p.neighbor = j;
    p.omega = mutual_information_binned(self->second, other->second, model.edges_of(node),
                                        model.edges_of(j))
                  .nats;
    const auto& ref = model.pair(node, j);
    const Indicator ind = fault_indicator(p.omega, ref.omega_ref);
    p.lambda = ind.lambda;
    p.degenerate = ind.degenerate || ref.degenerate;
    out.push_back(p);
  }
  return out;
}

// Lower median, so an even split between one faulty and one healthy
// neighbor does not tip the verdict.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

inline double aggregate_lambda(const std::vector<PairIndicator>& pairs,
                               const std::set<std::size_t>& skip = {}) {
  std::vector<double> kept, all;
  for (const auto& p : pairs) {
    all.push_back(p.lambda);
    if (!skip.count(p.neighbor)) kept.push_back(p.lambda);
  }
  return lower_median(kept.empty() ? all : kept);
}

// Single-node decision over all neighbors that delivered a window.
inline NodeDecision decide_faulty(std::size_t node, const std::vector<std::size_t>& neighbors,
                                  const RoundWindows& windows, const CorrelationModel& model,
                                  const DetectionConfig& cfg, std::size_t round = 0) {
  require(!neighbors.empty(), "detection.topology",
          "sensor " + std::to_string(node) + " has no neighbors within communication range");
  NodeDecision d;
  d.sensor_id = node;
  d.round = round;
  d.pairs = pair_indicators(node, neighbors, windows, model);
  d.lambda = aggregate_lambda(d.pairs);
  d.verdict = d.lambda > cfg.threshold ? Verdict::faulty : Verdict::non_faulty;
  return d;
}

// Decides every node of one round. Nodes re-aggregate while ignoring
// neighbors currently flagged faulty, until the verdicts stop changing.
// Nodes without a window are reported faulty by their lowest-id neighbor
// that did deliver one.
inline std::vector<NodeDecision> detect_round(
    const std::map<std::size_t, std::vector<std::size_t>>& neighborhoods,
    const RoundWindows& windows, const CorrelationModel& model, const DetectionConfig& cfg,
    std::size_t round = 0) {
  cfg.validate();
  std::map<std::size_t, NodeDecision> decisions;
  for (const auto& [node, nbrs] : neighborhoods) {
    require(!nbrs.empty(), "detection.topology",
            "sensor " + std::to_string(node) + " has no neighbors within communication range");
    if (!windows.count(node)) continue;
    decisions[node] = decide_faulty(node, nbrs, windows, model, cfg, round);
  }
  std::set<std::size_t> flagged;
  for (const auto& [node, d] : decisions)
    if (d.verdict == Verdict::faulty) flagged.insert(node);
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    std::set<std::size_t> next;
    for (auto& [node, d] : decisions) {
      const double lam = aggregate_lambda(d.pairs, flagged);
      if (lam > cfg.threshold) next.insert(node);
    }
    if (next == flagged) break;
    flagged = std::move(next);
  }
  for (auto& [node, d] : decisions) {
    d.lambda = aggregate_lambda(d.pairs, flagged);
    d.verdict = flagged.count(node) ? Verdict::faulty : Verdict::non_faulty;
  }

  std::vector<NodeDecision> out;
  for (const auto& [node, nbrs] : neighborhoods) {
    auto it = decisions.find(node);
    if (it != decisions.end()) {
      out.push_back(it->second);
      continue;
    }
    NodeDecision d;
    d.sensor_id = node;
    d.round = round;
    d.lambda = kIndicatorSentinel;
    d.verdict = Verdict::faulty;
    for (std::size_t j : nbrs)
      if (windows.count(j)) {
        d.reported_by = j;
        break;
      }
    out.push_back(d);
  }
  return out;
}

}  // namespace dshm
