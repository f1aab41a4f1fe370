#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dshm/error.hpp"

namespace dshm {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Node ids are 1-based positions in `nodes`; id 0 is the base station.
struct TopologySpec {
  std::vector<Point> nodes;
  double r_min = 14.0;
  double r_max = 60.0;
  Point base{450.0, 25.0};
  double width = 450.0;
  double height = 50.0;

  std::size_t size() const { return nodes.size(); }
  Point position(std::size_t id) const { return id == 0 ? base : nodes.at(id - 1); }
};

// Sensors evenly spaced along the long axis at mid-height.
inline TopologySpec line_field(std::size_t n, double width = 450.0, double height = 50.0) {
  TopologySpec t;
  t.width = width;
  t.height = height;
  const double pitch = width / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) t.nodes.push_back({pitch * (static_cast<double>(i) + 0.5), height / 2});
  t.base = {width, height / 2};
  return t;
}

struct CommGraph {
  // index 0 is the base station
  std::vector<Point> positions;
  std::vector<std::vector<std::size_t>> neighbors;  // sensor-sensor links at R_min
  std::vector<std::vector<std::size_t>> routing;    // all links at R_max, including the BS
  double r_min = 0.0;
  std::vector<std::string> warnings;

  std::size_t sensors() const { return positions.size() - 1; }
  double hop(std::size_t a, std::size_t b) const { return distance(positions[a], positions[b]); }
};

namespace detail {
inline std::vector<std::vector<std::size_t>> links(const std::vector<Point>& p, double radius,
                                                   bool with_base) {
  std::vector<std::vector<std::size_t>> adj(p.size());
  // small relative slack so that a node placed exactly at the radius is linked
  const double r = radius * (1.0 + 1e-12);
  for (std::size_t i = with_base ? 0 : 1; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      if (distance(p[i], p[j]) <= r) {
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

inline std::vector<int> hops_from(const std::vector<std::vector<std::size_t>>& adj, std::size_t root) {
  std::vector<int> d(adj.size(), -1);
  std::deque<std::size_t> q{root};
  d[root] = 0;
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop_front();
    for (std::size_t v : adj[u])
      if (d[v] < 0) {
        d[v] = d[u] + 1;
        q.push_back(v);
      }
  }
  return d;
}
}  // namespace detail

inline std::vector<std::string> topology_issues(const TopologySpec& t) {
  std::vector<std::string> out;
  if (t.nodes.empty()) out.push_back("topology has no nodes");
  if (!(t.r_min > 0.0)) out.push_back("r_min must be positive");
  if (!(t.r_max > 0.0)) out.push_back("r_max must be positive");
  if (t.r_min > t.r_max) out.push_back("r_min exceeds r_max");
  if (!(t.width > 0.0 && t.height > 0.0)) out.push_back("field dimensions must be positive");
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const Point p = t.nodes[i];
    if (p.x < 0.0 || p.y < 0.0 || p.x > t.width || p.y > t.height)
      out.push_back("node " + std::to_string(i + 1) + " lies outside the field");
  }
  if (out.empty()) {
    std::vector<Point> all{t.base};
    all.insert(all.end(), t.nodes.begin(), t.nodes.end());
    const auto d = detail::hops_from(detail::links(all, t.r_max, true), 0);
    for (std::size_t i = 1; i < d.size(); ++i)
      if (d[i] < 0) out.push_back("node " + std::to_string(i) + " cannot reach the base station at r_max");
  }
  return out;
}

inline CommGraph build_neighborhoods(const TopologySpec& t) {
  const auto issues = topology_issues(t);
  if (!issues.empty()) throw Error("topology.invalid", issues.front());
  CommGraph g;
  g.positions.push_back(t.base);
  g.positions.insert(g.positions.end(), t.nodes.begin(), t.nodes.end());
  g.r_min = t.r_min;
  g.neighbors = detail::links(g.positions, t.r_min, false);
  g.routing = detail::links(g.positions, t.r_max, true);
  for (std::size_t i = 1; i < g.positions.size(); ++i)
    if (g.neighbors[i].empty())
      g.warnings.push_back("node " + std::to_string(i) + " has no neighbor within r_min; detection impossible there");
  return g;
}

// Minimum-hop path; among equal-hop routes the lexicographically smallest id
// sequence is taken.
inline std::vector<std::size_t> shortest_path_route(const std::vector<std::vector<std::size_t>>& adj,
                                                    std::size_t source, std::size_t sink) {
  require(source < adj.size() && sink < adj.size(), "route.node", "route endpoint out of range");
  const auto d = detail::hops_from(adj, sink);
  if (d[source] < 0)
    throw Error("route.disconnected",
                "no path from " + std::to_string(source) + " to " + std::to_string(sink));
  std::vector<std::size_t> path{source};
  std::size_t at = source;
  while (at != sink) {
    for (std::size_t v : adj[at])  // sorted ascending
      if (d[v] == d[at] - 1) {
        at = v;
        break;
      }
    path.push_back(at);
  }
  return path;
}

struct EnergyParams {
  double e_elec = 50e-9;   // J/bit, transmitter or receiver electronics
  double e_amp = 100e-12;  // J/bit/m^2, transmit amplifier
  int bits_per_sample = 16;
  std::size_t phi_bytes_per_mode = 9;  // frequency, amplitude, sign
  std::size_t phi_header_bytes = 8;
  // processing energy per operation = mu * (f / k + beta)
  double cpu_f = 100e6;
  double cpu_k = 200e6;
  double cpu_beta = 0.5;
  double cpu_mu = 1e-9;
  double e_sample = 1e-6;  // J per acquired sample
  double overhead_fraction = 0.02;
  double reconstruction_surcharge = 6e-3;  // J per reconstruction task, coordination overhead
  double loss_probability = 0.0;           // per hop, raw centralized transport
  int phi_retransmissions = 1;

  double energy_per_op() const { return cpu_mu * (cpu_f / cpu_k + cpu_beta); }
  std::size_t window_bits(std::size_t samples) const {
    return samples * static_cast<std::size_t>(bits_per_sample);
  }
  std::size_t phi_bits(std::size_t modes) const {
    return 8 * (phi_header_bytes + modes * phi_bytes_per_mode);
  }
};

inline std::vector<std::string> energy_issues(const EnergyParams& p) {
  std::vector<std::string> out;
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0)) out.push_back(std::string(name) + " must be positive");
  };
  positive(p.e_elec, "e_elec");
  positive(p.e_amp, "e_amp");
  positive(p.bits_per_sample, "bits_per_sample");
  positive(static_cast<double>(p.phi_bytes_per_mode), "phi_bytes_per_mode");
  positive(p.cpu_f, "cpu_f");
  positive(p.cpu_k, "cpu_k");
  positive(p.cpu_mu, "cpu_mu");
  positive(p.e_sample, "e_sample");
  if (p.cpu_beta < 0.0) out.push_back("cpu_beta must be non-negative");
  if (p.overhead_fraction < 0.0) out.push_back("overhead_fraction must be non-negative");
  if (p.reconstruction_surcharge < 0.0) out.push_back("reconstruction_surcharge must be non-negative");
  if (p.loss_probability < 0.0 || p.loss_probability >= 1.0)
    out.push_back("loss_probability must lie in [0, 1)");
  if (p.phi_retransmissions < 0) out.push_back("phi_retransmissions must be non-negative");
  return out;
}

struct Traffic {
  double tx_bits = 0.0;
  double tx_bit_m2 = 0.0;  // sum of bits * hop distance^2
  double rx_bits = 0.0;
};

struct Computation {
  double ops = 0.0;
  double reconstruction_ops = 0.0;
  std::size_t reconstructions = 0;
};

struct LedgerEntry {
  std::size_t round = 0;
  std::size_t node = 0;
  double e_t = 0.0;
  double e_comp = 0.0;
  double e_samp = 0.0;
  double e_oh = 0.0;
  double total = 0.0;
  double surcharge = 0.0;  // share of e_comp + e_oh caused by reconstruction
};

struct EnergyLedger {
  std::vector<LedgerEntry> entries;

  double total() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.total;
    return s;
  }
  double communication() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.e_t;
    return s;
  }
  // Mean over rounds with any reconstruction of surcharge / round total.
  std::optional<double> fault_round_surcharge() const {
    std::map<std::size_t, std::pair<double, double>> by_round;
    for (const auto& e : entries) {
      auto& r = by_round[e.round];
      r.first += e.surcharge;
      r.second += e.total;
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [round, r] : by_round)
      if (r.first > 0.0 && r.second > 0.0) {
        sum += r.first / r.second;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

inline const LedgerEntry& charge_round(EnergyLedger& ledger, std::size_t round, std::size_t node,
                                       const Traffic& traffic, const Computation& comp,
                                       double samples, const EnergyParams& p) {
  require(traffic.tx_bits >= 0.0 && traffic.rx_bits >= 0.0 && traffic.tx_bit_m2 >= 0.0 &&
              comp.ops >= 0.0 && comp.reconstruction_ops >= 0.0 && samples >= 0.0,
          "energy.negative", "energy inputs must be non-negative");
  LedgerEntry e;
  e.round = round;
  e.node = node;
  e.e_t = p.e_elec * (traffic.tx_bits + traffic.rx_bits) + p.e_amp * traffic.tx_bit_m2;
  const double rec_comp = comp.reconstruction_ops * p.energy_per_op();
  e.e_comp = comp.ops * p.energy_per_op() + rec_comp;
  e.e_samp = samples * p.e_sample;
  const double rec_oh = static_cast<double>(comp.reconstructions) * p.reconstruction_surcharge;
  e.e_oh = p.overhead_fraction * (e.e_t + e.e_comp + e.e_samp) + rec_oh;
  e.surcharge = rec_comp * (1.0 + p.overhead_fraction) + rec_oh;
  e.total = e.e_t + e.e_comp + e.e_samp + e.e_oh;
  ledger.entries.push_back(e);
  return ledger.entries.back();
}

// Traffic accumulated per node during one round (index = node id, 0 = BS).
struct RoundTraffic {
  std::vector<Traffic> per_node;
  explicit RoundTraffic(std::size_t nodes) : per_node(nodes + 1) {}

  // One transmission at R_min power heard by every neighbor.
  void broadcast(const CommGraph& g, std::size_t from, double bits) {
    per_node[from].tx_bits += bits;
    per_node[from].tx_bit_m2 += bits * g.r_min * g.r_min;
    for (std::size_t v : g.neighbors[from]) per_node[v].rx_bits += bits;
  }

  // Hop-by-hop forwarding; each hop is retried up to `retries` times after a
  // loss. Returns false when a hop fails for good.
  bool send(const CommGraph& g, const std::vector<std::size_t>& path, double bits, double loss,
            int retries, std::mt19937_64& rng) {
    std::bernoulli_distribution lost(loss);
    for (std::size_t h = 0; h + 1 < path.size(); ++h) {
      const double d = g.hop(path[h], path[h + 1]);
      bool ok = false;
      for (int attempt = 0; attempt <= retries && !ok; ++attempt) {
        per_node[path[h]].tx_bits += bits;
        per_node[path[h]].tx_bit_m2 += bits * d * d;
        ok = loss <= 0.0 || !lost(rng);
        if (ok) per_node[path[h + 1]].rx_bits += bits;
      }
      if (!ok) return false;
    }
    return true;
  }
};

// Operation counts for the per-round tasks.
inline double ops_mutual_information(std::size_t samples, std::size_t pairs, int bins) {
  return static_cast<double>(pairs) * (3.0 * static_cast<double>(samples) + 4.0 * bins * bins);
}

inline double ops_spectrum(std::size_t samples) {
  const double n = static_cast<double>(std::max<std::size_t>(samples, 2));
  return 5.0 * n * std::log2(n);
}

// Steady-state gain filter: prediction, output and correction per sample.
inline double ops_kalman(std::size_t states, std::size_t channels, std::size_t samples) {
  const double n = static_cast<double>(states), m = static_cast<double>(channels);
  return static_cast<double>(samples) * 2.0 * (n * n + 2.0 * n * m);
}

}  // namespace dshm
