#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/kalman_reconstruction.hpp"
#include "dshm/mii_detection.hpp"
#include "dshm/modal_monitoring.hpp"
#include "dshm/network_energy.hpp"
#include "dshm/scenario_config.hpp"
#include "dshm/sensing_faults.hpp"
#include "dshm/structural_model.hpp"

namespace dshm {

inline constexpr const char* kRunFormat = "dshm-run/1";
inline constexpr const char* kCsvTag = "dshm-csv/1";

// Scheduled fault, rounds are absolute; end_round is exclusive.
struct FaultTruth {
  std::size_t sensor = 0;
  FaultKind kind = FaultKind::offset_bias;
  std::size_t onset_round = 0;
  std::size_t end_round = 0;

  bool active(std::size_t round) const { return round >= onset_round && round < end_round; }
};

struct DetectionRow {
  std::size_t round = 0, node = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  std::string verdict, truth;
};

struct ReconstructionRow {
  std::size_t round = 0, node = 0;
  double quality = std::numeric_limits<double>::quiet_NaN();
  double residual_rms = 0.0;
};

struct ModeRow {
  std::size_t round = 0, mode = 0, location = 0;
  double frequency_hz = 0.0, baseline = 0.0, measured = 0.0, corrected = 0.0, score = 0.0;
};

struct RoundOutcome {
  std::size_t round = 0;
  double fault_rate = 0.0;  // share of sensors with an active fault
  Confusion faults, damage;
  bool damage_reported = false;
  std::size_t damage_peak = 0;
  double peak_score = std::numeric_limits<double>::quiet_NaN();
};

struct RunSummary {
  double detection_accuracy = 1.0;
  double event_ability = 1.0;
  double total_energy = 0.0;
  double communication_energy = 0.0;
  std::optional<double> fault_round_surcharge;
  double mean_quality = std::numeric_limits<double>::quiet_NaN();
  double lambda_faulty = std::numeric_limits<double>::quiet_NaN();
  double lambda_healthy = std::numeric_limits<double>::quiet_NaN();
  std::size_t reconstructions = 0;
};

struct RunResult {
  ScenarioConfig config;
  std::vector<FaultTruth> faults;
  std::vector<DetectionRow> detections;
  std::vector<ReconstructionRow> reconstructions;
  std::vector<ModeRow> modes;
  EnergyLedger ledger;
  std::vector<RoundOutcome> rounds;
  RunSummary summary;
  std::vector<std::string> diagnostics;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<FaultTruth> draw_faults(const ScenarioConfig& c) {
  std::vector<FaultTruth> out;
  const FaultSection& f = c.faults;
  std::size_t count = f.count;
  if (count == 0 && f.rate > 0.0) count = static_cast<std::size_t>(std::llround(f.rate * static_cast<double>(c.stories)));
  std::set<std::size_t> taken(f.exclude.begin(), f.exclude.end());
  for (const auto& e : f.scheduled) taken.insert(e.sensor);
  std::vector<std::size_t> pool;
  for (std::size_t s = 1; s <= c.stories; ++s)
    if (!taken.count(s)) pool.push_back(s);
  count = std::min(count, pool.size());
  std::mt19937_64 rng(mix(c.seed, 11));
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::string> kinds = f.kinds;
  std::shuffle(kinds.begin(), kinds.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  for (std::size_t i = 0; i < pool.size(); ++i)
    out.push_back({pool[i], parse_fault_kind(kinds[i % kinds.size()]), c.first_fault_round(), c.rounds});
  for (const auto& e : f.scheduled)
    out.push_back({e.sensor, parse_fault_kind(e.kind), e.onset_round,
                   e.duration_rounds ? std::min(c.rounds, e.onset_round + e.duration_rounds) : c.rounds});
  std::sort(out.begin(), out.end(), [](const FaultTruth& a, const FaultTruth& b) {
    return std::tie(a.sensor, a.onset_round) < std::tie(b.sensor, b.onset_round);
  });
  return out;
}

inline std::vector<std::size_t> within_hops(const CommGraph& g, std::size_t root, std::size_t hops) {
  std::map<std::size_t, std::size_t> seen{{root, 0}};
  std::deque<std::size_t> q{root};
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop_front();
    if (seen[u] == hops) continue;
    for (std::size_t v : g.neighbors[u])
      if (!seen.count(v)) {
        seen[v] = seen[u] + 1;
        q.push_back(v);
      }
  }
  std::vector<std::size_t> out;
  for (const auto& [id, d] : seen) out.push_back(id);
  return out;
}

// Nearest lower id with a window, else nearest higher.
inline const SignalWindow* sign_reference(const RoundWindows& w, std::size_t id) {
  for (std::size_t j = id; j-- > 1;)
    if (auto it = w.find(j); it != w.end()) return &it->second;
  for (auto it = w.upper_bound(id); it != w.end(); ++it) return &it->second;
  return nullptr;
}

inline std::vector<LocalModeEstimate> local_estimates(const RoundWindows& w, std::size_t n, std::size_t round,
                                                      const ModalConfig& cfg, const std::vector<double>* hints) {
  std::vector<LocalModeEstimate> out;
  for (std::size_t id = 1; id <= n; ++id) {
    auto it = w.find(id);
    if (it == w.end()) {
      LocalModeEstimate e;
      e.sensor_id = id;
      e.round = round;
      e.empty = true;
      out.push_back(e);
      continue;
    }
    out.push_back(extract_local_modes(it->second, sign_reference(w, id), cfg, hints));
  }
  return out;
}

inline double bin_width(const std::vector<LocalModeEstimate>& est) {
  for (const auto& e : est)
    if (!e.empty && e.bin_hz > 0.0) return e.bin_hz;
  return 0.0;
}

inline GlobalModeShape assemble(const std::vector<LocalModeEstimate>& est, const std::vector<std::size_t>& loc,
                                const ModalConfig& cfg, std::size_t round) {
  GlobalModeShape g = assemble_global(est, loc, cfg.cluster_bins * bin_width(est), cfg.max_modes, cfg.weak_link);
  g.round = round;
  normalize(g);
  return g;
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

// Executes every round: simulate, measure, inject, detect, reconstruct,
// assemble modes, diagnose and charge energy.
inline RunResult run_scenario(const ScenarioConfig& cfg) {
  if (auto issues = config_issues(cfg); !issues.empty()) throw ConfigError(std::move(issues));
  RunResult res;
  res.config = cfg;
  const Mode mode = cfg.mode;
  const std::size_t n = cfg.stories, M = cfg.window, warm = cfg.warmup_samples();
  const StructureSpec st = cfg.structure();
  const CommGraph graph = build_neighborhoods(cfg.topology());
  for (const auto& w : graph.warnings) res.diagnostics.push_back(w);
  std::vector<std::vector<std::size_t>> route(n + 1);
  for (std::size_t i = 1; i <= n; ++i) route[i] = shortest_path_route(graph.routing, i, 0);
  std::map<std::size_t, std::vector<std::size_t>> neighborhoods;
  for (std::size_t i = 1; i <= n; ++i) neighborhoods[i] = graph.neighbors[i];

  ExcitationSpec exc;
  exc.kind = parse_excitation_kind(cfg.excitation_kind);
  exc.amplitude = cfg.excitation_amplitude;
  exc.cutoff_hz = cfg.excitation_cutoff_hz;
  exc.frequency_hz = cfg.excitation_frequency_hz;
  exc.target = cfg.excitation_target;
  exc.seed = detail::mix(cfg.seed, 1);
  // damage grows in at the start of its onset round, modal action preserved
  std::optional<DamageSpec> dmg;
  if (cfg.damage)
    dmg = DamageSpec{cfg.damage_story, cfg.damage_severity,
                     static_cast<double>(warm + cfg.damage_onset_round * M) * cfg.dt};
  const ResponseRecord healthy = simulate_response(st, exc, dmg, nullptr, warm);
  auto record_for = [&](std::size_t) -> const ResponseRecord& { return healthy; };
  const SensorArraySpec base_array = one_sensor_per_story(n);
  res.faults = detail::draw_faults(cfg);

  // fault magnitudes scale with the training RMS of the channel
  std::vector<double> ref_rms(n + 1, 0.0);
  for (std::size_t r = 0; r < cfg.training_rounds; ++r) {
    const auto v = window_rms(healthy, base_array, warm + r * M, M);
    for (std::size_t i = 0; i < n; ++i) ref_rms[i + 1] += v[i] / static_cast<double>(cfg.training_rounds);
  }
  std::vector<FaultProfile> profiles;
  for (const auto& f : res.faults) {
    FaultProfile p;
    p.kind = f.kind;
    p.sensor_id = f.sensor;
    const std::size_t first = warm + f.onset_round * M;
    p.onset = static_cast<double>(first) * cfg.dt;
    p.duration = static_cast<double>((f.end_round - f.onset_round) * M) * cfg.dt;
    const double a = ref_rms[f.sensor];
    p.offset = cfg.faults.offset_rms * a;
    p.gain = cfg.faults.gain;
    p.noise_std = f.kind == FaultKind::noise_burst ? cfg.faults.noise_burst_rms * a : cfg.faults.gain_noise_rms * a;
    p.drift_rate = cfg.faults.drift_rms_per_s * a;
    p.quant_step = cfg.faults.quant_rms * a;
    const ResponseRecord& at = record_for(f.onset_round);
    p.stuck_value = at.acceleration(static_cast<Eigen::Index>(f.sensor - 1),
                                    static_cast<Eigen::Index>(first - at.first_sample));
    p.seed = detail::mix(cfg.seed, 7000 + f.sensor);
    profiles.push_back(p);
  }

  auto measure_round = [&](std::size_t r, RoundWindows& truth, RoundWindows& delivered) {
    const ResponseRecord& rec = record_for(r);
    SensorArraySpec a = base_array;
    for (double v : window_rms(rec, a, warm + r * M, M)) a.noise_std.push_back(cfg.noise_fraction * v);
    for (auto& w : measure(rec, a, detail::mix(cfg.seed, 100 + r), M, warm + r * M, r)) truth.emplace(w.sensor_id, w);
    for (const auto& [id, w] : truth) {
      std::optional<SignalWindow> out = w;
      for (std::size_t k = 0; k < profiles.size(); ++k)
        if (profiles[k].sensor_id == id && res.faults[k].active(r) && out) out = apply_fault(*out, profiles[k]);
      if (out) delivered.emplace(id, std::move(*out));
    }
  };

  DetectionConfig dcfg;
  dcfg.bins = cfg.bins;
  dcfg.threshold = cfg.threshold;
  dcfg.max_iterations = cfg.max_iterations;
  ReconstructionConfig rcfg;
  rcfg.inflation = cfg.inflation;
  rcfg.input_noise = cfg.input_noise;
  rcfg.boundary_noise = cfg.boundary_noise;
  rcfg.distributed = cfg.distributed;
  const ModalConfig mcfg = cfg.modal();
  const EnergyParams& ep = cfg.energy;
  std::vector<std::size_t> locations;
  for (std::size_t i = 1; i <= n; ++i) locations.push_back(i);

  // training: fault-free rounds build the correlation model, the channel
  // statistics and the modal baseline
  std::vector<RoundWindows> training;
  for (std::size_t r = 0; r < cfg.training_rounds; ++r) {
    RoundWindows truth, delivered;
    measure_round(r, truth, delivered);
    training.push_back(std::move(delivered));
  }
  std::vector<SensorPair> pairs;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j : graph.neighbors[i])
      if (i < j) pairs.push_back({i, j});
  const CorrelationModel model = train_correlation_model(training, pairs, dcfg);
  StructureKnowledge kn;
  kn.structure = st;
  kn.sensors = base_array;
  kn.excitation_target = cfg.excitation_target;
  for (std::size_t i = 1; i <= n; ++i) {
    double v = 0.0;
    for (const auto& t : training) {
      const auto& s = t.at(i).samples;
      v += (s.array() - s.mean()).square().mean() / static_cast<double>(training.size());
    }
    kn.signal_var[i] = v;
  }
  kn.measurement_var = bootstrap_measurement_noise(kn, training.back(), rcfg, locations);
  kn.prepare();

  std::optional<ModalBaseline> baseline;
  std::vector<double> hints;
  std::map<std::size_t, double> node_f0;  // per-node training frequency of the first mode
  try {
    std::vector<GlobalModeShape> shapes;
    std::map<std::size_t, std::pair<double, std::size_t>> f0;
    for (std::size_t r = 0; r < training.size(); ++r) {
      const auto est = detail::local_estimates(training[r], n, r, mcfg, r ? &hints : nullptr);
      shapes.push_back(detail::assemble(est, locations, mcfg, r));
      if (r == 0) hints = shapes.front().frequencies;
      if (r == 0) continue;
      for (const auto& e : est)
        if (!e.empty && !e.modes.empty() && e.modes.front().peak) {
          f0[e.sensor_id].first += e.modes.front().frequency_hz;
          ++f0[e.sensor_id].second;
        }
    }
    require(!hints.empty(), "modal.baseline", "no mode resolved in the first training round");
    baseline = train_baseline(shapes, mcfg);
    for (const auto& [id, s] : f0) node_f0[id] = s.first / static_cast<double>(s.second);
  } catch (const Error& e) {
    res.diagnostics.push_back(std::string("modal baseline unavailable: ") + e.what());
  }

  const bool detects = mode == Mode::dependshm || mode == Mode::no_recovery || mode == Mode::cshm_centralized;
  const bool reconstructs = mode == Mode::dependshm || mode == Mode::cshm_centralized;
  const bool central = mode == Mode::cshm_centralized || mode == Mode::raw_centralized;
  DependabilityReport report;
  double lam_f = 0.0, lam_h = 0.0, q_sum = 0.0;
  std::size_t n_f = 0, n_h = 0, n_q = 0;

  for (std::size_t r = cfg.training_rounds; r < cfg.rounds; ++r) {
    RoundWindows truth, delivered;
    measure_round(r, truth, delivered);
    std::map<std::size_t, std::string> truth_label;
    std::set<std::size_t> truth_set;
    for (const auto& f : res.faults)
      if (f.active(r)) {
        truth_set.insert(f.sensor);
        truth_label[f.sensor] = f.kind == FaultKind::missing ? "missing" : "faulty";
      }

    RoundTraffic traffic(n);
    std::mt19937_64 link_rng(detail::mix(cfg.seed, 5000 + r));
    std::vector<Computation> comp(n + 1);
    std::vector<double> samples(n + 1, 0.0);
    for (const auto& [id, w] : delivered) samples[id] = static_cast<double>(M);

    // what the processing site holds
    RoundWindows avail;
    if (central) {
      const int retries = mode == Mode::cshm_centralized ? 1 : 0;
      for (const auto& [id, w] : delivered)
        if (traffic.send(graph, route[id], static_cast<double>(ep.window_bits(M)), ep.loss_probability, retries,
                         link_rng))
          avail.emplace(id, w);
    } else {
      avail = delivered;
      if (mode != Mode::frequency_matching_baseline)
        for (const auto& [id, w] : delivered) traffic.broadcast(graph, id, static_cast<double>(ep.window_bits(M)));
    }

    // detection
    std::map<std::size_t, double> lambda;
    std::set<std::size_t> flagged, missing;
    std::map<std::size_t, std::size_t> reporter;
    for (std::size_t i = 1; i <= n; ++i)
      if (!avail.count(i)) missing.insert(i);
    if (detects) {
      for (const auto& d : detect_round(neighborhoods, avail, model, dcfg, r)) {
        lambda[d.sensor_id] = d.lambda;
        if (d.verdict == Verdict::faulty && !missing.count(d.sensor_id)) flagged.insert(d.sensor_id);
        reporter[d.sensor_id] = d.reported_by;
        if (!central && avail.count(d.sensor_id)) {
          std::size_t present = 0;
          for (std::size_t j : graph.neighbors[d.sensor_id]) present += avail.count(j);
          comp[d.sensor_id].ops += ops_mutual_information(M, present, cfg.bins);
        }
      }
    }

    // reconstruction
    RoundWindows corrected = avail;
    std::set<std::size_t> to_fix = flagged;
    if (reconstructs) to_fix.insert(missing.begin(), missing.end());
    if (!reconstructs) to_fix.clear();
    for (std::size_t f : flagged) corrected.erase(f);
    for (std::size_t f : to_fix) {
      std::vector<std::size_t> group = cfg.distributed ? detail::within_hops(graph, f, cfg.group_hops) : locations;
      RoundWindows gw;
      std::set<std::size_t> gf;
      for (std::size_t id : group) {
        if (auto it = avail.find(id); it != avail.end()) gw.emplace(id, it->second);
        if (to_fix.count(id)) gf.insert(id);
      }
      gf.insert(f);
      try {
        const auto out = reconstruct_signals(gf, gw, kn, rcfg, r, &truth);
        for (const auto& rr : out) {
          if (rr.sensor_id != f) continue;
          corrected[f] = rr.window;
          res.reconstructions.push_back({r, f, rr.quality, rr.residual_rms});
          if (std::isfinite(rr.quality)) {
            q_sum += rr.quality;
            ++n_q;
          }
        }
        if (!central) {
          const std::size_t worker = avail.count(f) ? f : (reporter[f] ? reporter[f] : group.front());
          const std::size_t states = 2 * (group.back() - group.front() + 1 + 2 * rcfg.buffer_dofs);
          comp[worker].reconstruction_ops += ops_kalman(states, gw.size(), M);
          comp[worker].reconstructions += 1;
        }
        ++res.summary.reconstructions;
      } catch (const Error& e) {
        res.diagnostics.push_back("round " + std::to_string(r) + " node " + std::to_string(f) +
                                  ": reconstruction failed (" + e.code() + "): " + e.what());
      }
    }

    // modal stage
    RoundWindows modal_in;
    switch (mode) {
      case Mode::dependshm:
      case Mode::cshm_centralized: modal_in = corrected; break;
      default: modal_in = avail; break;
    }
    std::vector<LocalModeEstimate> est;
    if (baseline) {
      est = detail::local_estimates(modal_in, n, r, mcfg, &hints);
      if (mode == Mode::frequency_matching_baseline) {
        for (auto& e : est) {
          double dev = kIndicatorSentinel;
          if (!e.empty && !e.modes.empty() && e.modes.front().peak && node_f0.count(e.sensor_id)) {
            const double f0 = node_f0.at(e.sensor_id);
            dev = std::abs(e.modes.front().frequency_hz - f0) / f0;
          }
          if (!avail.count(e.sensor_id)) continue;
          lambda[e.sensor_id] = dev;
          if (dev > cfg.frequency_tolerance) {
            flagged.insert(e.sensor_id);
            e.empty = true;
            e.modes.clear();
          }
        }
      }
      if (!central)
        for (const auto& [id, w] : avail) comp[id].ops += 2.0 * ops_spectrum(M);
    }
    DamageReport diag;
    bool diagnosed = false;
    if (baseline) {
      try {
        const GlobalModeShape cur = detail::assemble(est, locations, mcfg, r);
        diag = diagnose(cur, *baseline, flagged, mcfg);
        diagnosed = true;
        const GlobalModeShape raw =
            detail::assemble(detail::local_estimates(avail, n, r, mcfg, &hints), locations, mcfg, r);
        for (Eigen::Index j = 0; j < baseline->shapes.cols(); ++j) {
          const double fb = baseline->frequencies[static_cast<std::size_t>(j)];
          const auto mc = detail::match_mode(cur, static_cast<std::size_t>(j), fb);
          const auto mr = detail::match_mode(raw, static_cast<std::size_t>(j), fb);
          Eigen::VectorXd vc = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), std::nan(""));
          Eigen::VectorXd vr = vc;
          if (mc >= 0) vc = cur.shapes.col(mc);
          if (mr >= 0) vr = raw.shapes.col(mr);
          align_sign(baseline->shapes.col(j), vc);
          align_sign(baseline->shapes.col(j), vr);
          for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            res.modes.push_back({r, static_cast<std::size_t>(j) + 1, i + 1,
                                 mc >= 0 ? cur.frequencies[static_cast<std::size_t>(mc)] : std::nan(""),
                                 baseline->shapes(ii, j), vr(ii), vc(ii), diag.score(ii)});
          }
        }
      } catch (const Error& e) {
        res.diagnostics.push_back("round " + std::to_string(r) + ": modal stage failed (" + e.code() + "): " + e.what());
      }
    }

    // Phi payloads to the base station
    if (!central)
      for (const auto& e : est) {
        if (!delivered.count(e.sensor_id)) continue;
        traffic.send(graph, route[e.sensor_id], static_cast<double>(ep.phi_bits(e.modes.size())), ep.loss_probability,
                     ep.phi_retransmissions, link_rng);
      }

    for (std::size_t i = 1; i <= n; ++i) {
      DetectionRow d;
      d.round = r;
      d.node = i;
      if (auto it = lambda.find(i); it != lambda.end()) d.lambda = it->second;
      d.verdict = missing.count(i) ? "missing" : flagged.count(i) ? "faulty" : "non_faulty";
      d.truth = truth_label.count(i) ? truth_label[i] : "non_faulty";
      if (std::isfinite(d.lambda) && !missing.count(i) && mode != Mode::frequency_matching_baseline) {
        if (truth_set.count(i)) {
          lam_f += d.lambda;
          ++n_f;
        } else {
          lam_h += d.lambda;
          ++n_h;
        }
      }
      res.detections.push_back(d);
      charge_round(res.ledger, r, i, traffic.per_node[i], comp[i], samples[i], ep);
    }

    RoundOutcome o;
    o.round = r;
    o.fault_rate = static_cast<double>(truth_set.size()) / static_cast<double>(n);
    std::set<std::size_t> called = flagged;
    called.insert(missing.begin(), missing.end());
    o.faults = score_faults(locations, called, truth_set);
    std::set<std::size_t> dmg_truth;
    if (cfg.damage && r >= cfg.damage_onset_round) dmg_truth.insert(cfg.damage_story);
    o.damage = score_damage(locations, diagnosed ? diag.damage : std::vector<std::size_t>{}, dmg_truth);
    o.damage_reported = diagnosed && !diag.damage.empty();
    if (diagnosed) {
      o.damage_peak = diag.peak;
      if (diag.peak) o.peak_score = diag.score(static_cast<Eigen::Index>(diag.peak - 1));
    }
    res.rounds.push_back(o);
    report.rows.push_back({r, o.faults, o.damage});
  }

  RunSummary& s = res.summary;
  s.detection_accuracy = report.detection_accuracy();
  s.event_ability = report.event_ability();
  s.total_energy = res.ledger.total();
  s.communication_energy = res.ledger.communication();
  s.fault_round_surcharge = res.ledger.fault_round_surcharge();
  if (n_q) s.mean_quality = q_sum / static_cast<double>(n_q);
  if (n_f) s.lambda_faulty = lam_f / static_cast<double>(n_f);
  if (n_h) s.lambda_healthy = lam_h / static_cast<double>(n_h);
  return res;
}

struct OutputFile {
  std::string name;
  std::string content;
  std::size_t rows = 0;
};

// CSV artifacts; each starts with a comment line carrying the format tag.
inline std::vector<OutputFile> render_csv(const RunResult& res) {
  using detail::fmt;
  std::vector<OutputFile> out;
  auto file = [&](const std::string& name, const std::string& header) -> OutputFile& {
    out.push_back({name, "# " + std::string(kCsvTag) + " " + name + "\n" + header + "\n", 0});
    return out.back();
  };
  {
    auto& f = file("detections.csv", "round,node,lambda,verdict,truth");
    for (const auto& d : res.detections) {
      f.content += std::to_string(d.round) + "," + std::to_string(d.node) + "," + fmt(d.lambda) + "," + d.verdict +
                   "," + d.truth + "\n";
      ++f.rows;
    }
  }
  {
    auto& f = file("reconstructions.csv", "round,node,quality,residual_rms");
    for (const auto& d : res.reconstructions) {
      f.content += std::to_string(d.round) + "," + std::to_string(d.node) + "," + fmt(d.quality) + "," +
                   fmt(d.residual_rms) + "\n";
      ++f.rows;
    }
  }
  {
    auto& f = file("modes.csv", "round,mode,location,frequency_hz,baseline,measured,corrected,score");
    for (const auto& m : res.modes) {
      f.content += std::to_string(m.round) + "," + std::to_string(m.mode) + "," + std::to_string(m.location) + "," +
                   fmt(m.frequency_hz) + "," + fmt(m.baseline) + "," + fmt(m.measured) + "," + fmt(m.corrected) +
                   "," + fmt(m.score) + "\n";
      ++f.rows;
    }
  }
  {
    auto& f = file("energy.csv", "round,node,e_t,e_comp,e_samp,e_oh,total,surcharge");
    for (const auto& e : res.ledger.entries) {
      f.content += std::to_string(e.round) + "," + std::to_string(e.node) + "," + fmt(e.e_t) + "," + fmt(e.e_comp) +
                   "," + fmt(e.e_samp) + "," + fmt(e.e_oh) + "," + fmt(e.total) + "," + fmt(e.surcharge) + "\n";
      ++f.rows;
    }
  }
  {
    auto& f = file("dependability.csv",
                   "round,fault_rate,tp,fp,tn,fn,accuracy,damage_tp,damage_fp,damage_tn,damage_fn,event_ability,"
                   "damage_reported,damage_peak,peak_score");
    for (const auto& o : res.rounds) {
      f.content += std::to_string(o.round) + "," + fmt(o.fault_rate) + "," + std::to_string(o.faults.tp) + "," +
                   std::to_string(o.faults.fp) + "," + std::to_string(o.faults.tn) + "," +
                   std::to_string(o.faults.fn) + "," + fmt(o.faults.accuracy()) + "," + std::to_string(o.damage.tp) +
                   "," + std::to_string(o.damage.fp) + "," + std::to_string(o.damage.tn) + "," +
                   std::to_string(o.damage.fn) + "," + fmt(o.damage.ability()) + "," +
                   (o.damage_reported ? "1" : "0") + "," + std::to_string(o.damage_peak) + "," +
                   fmt(o.peak_score) + "\n";
      ++f.rows;
    }
  }
  return out;
}

inline ordered_json summary_json(const RunSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
  return {{"detection_accuracy", num(s.detection_accuracy)},
          {"event_ability", num(s.event_ability)},
          {"total_energy_j", num(s.total_energy)},
          {"communication_energy_j", num(s.communication_energy)},
          {"fault_round_surcharge", s.fault_round_surcharge ? num(*s.fault_round_surcharge) : ordered_json(nullptr)},
          {"mean_reconstruction_quality", num(s.mean_quality)},
          {"mean_lambda_faulty", num(s.lambda_faulty)},
          {"mean_lambda_healthy", num(s.lambda_healthy)},
          {"reconstructions", s.reconstructions}};
}

inline ordered_json manifest_json(const RunResult& res, const std::vector<OutputFile>& files) {
  ordered_json m;
  m["format"] = kRunFormat;
  m["config"] = to_json(res.config);
  ordered_json faults = ordered_json::array();
  for (const auto& f : res.faults)
    faults.push_back({{"sensor", f.sensor},
                      {"kind", to_string(f.kind)},
                      {"onset_round", f.onset_round},
                      {"end_round", f.end_round}});
  ordered_json damage = nullptr;
  if (res.config.damage)
    damage = {{"story", res.config.damage_story},
              {"severity", res.config.damage_severity},
              {"onset_round", res.config.damage_onset_round}};
  m["truth"] = {{"faults", faults}, {"damage", damage}};
  ordered_json inv = ordered_json::array();
  for (const auto& f : files) inv.push_back({{"name", f.name}, {"rows", f.rows}, {"bytes", f.content.size()}});
  m["files"] = inv;
  m["summary"] = summary_json(res.summary);
  m["diagnostics"] = res.diagnostics;
  return m;
}

inline std::vector<OutputFile> write_run(const RunResult& res, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("output.io", "cannot create output directory '" + dir.string() + "': " + ec.message());
  auto files = render_csv(res);
  for (const auto& f : files) {
    std::ofstream o(dir / f.name, std::ios::binary);
    if (!o) throw Error("output.io", "cannot write '" + (dir / f.name).string() + "'");
    o << f.content;
  }
  std::ofstream o(dir / "manifest.json", std::ios::binary);
  if (!o) throw Error("output.io", "cannot write manifest");
  o << manifest_json(res, files).dump(2) << "\n";
  return files;
}

struct ComparisonRow {
  std::string mode;
  std::size_t seeds = 0;
  RunSummary mean;
  double surcharge_sum = 0.0;
  std::size_t surcharge_runs = 0;
};

// Runs each mode on the same seeds and averages the run summaries.
inline std::vector<ComparisonRow> compare_schemes(const ScenarioConfig& base, const std::vector<Mode>& modes,
                                                  const std::vector<std::uint64_t>& seeds) {
  require(!modes.empty(), "compare.modes", "no modes given");
  require(!seeds.empty(), "compare.seeds", "no seeds given");
  std::vector<ComparisonRow> out;
  for (Mode m : modes) {
    ComparisonRow row;
    row.mode = to_string(m);
    RunSummary& a = row.mean;
    a = RunSummary{};
    a.detection_accuracy = a.event_ability = 0.0;
    double lf = 0.0, lh = 0.0, q = 0.0;
    std::size_t nf = 0, nh = 0, nq = 0;
    for (std::uint64_t s : seeds) {
      ScenarioConfig c = base;
      c.mode = m;
      c.seed = s;
      const RunSummary r = run_scenario(c).summary;
      const double k = static_cast<double>(seeds.size());
      a.detection_accuracy += r.detection_accuracy / k;
      a.event_ability += r.event_ability / k;
      a.total_energy += r.total_energy / k;
      a.communication_energy += r.communication_energy / k;
      a.reconstructions += r.reconstructions;
      if (r.fault_round_surcharge) {
        row.surcharge_sum += *r.fault_round_surcharge;
        ++row.surcharge_runs;
      }
      if (std::isfinite(r.lambda_faulty)) lf += r.lambda_faulty, ++nf;
      if (std::isfinite(r.lambda_healthy)) lh += r.lambda_healthy, ++nh;
      if (std::isfinite(r.mean_quality)) q += r.mean_quality, ++nq;
    }
    if (row.surcharge_runs) a.fault_round_surcharge = row.surcharge_sum / static_cast<double>(row.surcharge_runs);
    if (nf) a.lambda_faulty = lf / static_cast<double>(nf);
    if (nh) a.lambda_healthy = lh / static_cast<double>(nh);
    if (nq) a.mean_quality = q / static_cast<double>(nq);
    row.seeds = seeds.size();
    out.push_back(row);
  }
  return out;
}

inline std::string render_comparison(const std::vector<ComparisonRow>& rows) {
  using detail::fmt;
  std::string s = "# " + std::string(kCsvTag) + " comparison.csv\n"
                  "mode,seeds,detection_accuracy,event_ability,mean_lambda_faulty,mean_lambda_healthy,"
                  "total_energy_j,communication_energy_j,fault_round_surcharge,mean_reconstruction_quality\n";
  for (const auto& r : rows) {
    const RunSummary& m = r.mean;
    s += r.mode + "," + std::to_string(r.seeds) + "," + fmt(m.detection_accuracy) + "," + fmt(m.event_ability) + "," +
         fmt(m.lambda_faulty) + "," + fmt(m.lambda_healthy) + "," + fmt(m.total_energy) + "," +
         fmt(m.communication_energy) + "," + fmt(m.fault_round_surcharge.value_or(std::nan(""))) + "," +
         fmt(m.mean_quality) + "\n";
  }
  return s;
}

// ---- plot data -------------------------------------------------------------

inline const std::vector<std::string>& plot_keys() {
  static const std::vector<std::string> keys{"lambda", "mode_shape", "energy", "accuracy_vs_fault_rate"};
  return keys;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error("plot.input", "column '" + name + "' missing");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Table read_table(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("plot.input", "cannot read '" + p.string() + "'; is this a run directory?");
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty()) t.header = split_csv_line(line);
    else t.rows.push_back(split_csv_line(line));
  }
  return t;
}

// Writes plot_<key>.csv into the run directory and returns its path.
inline std::filesystem::path emit_plotdata(const std::filesystem::path& run_dir, const std::string& key) {
  using detail::fmt;
  const auto& keys = plot_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    std::string list;
    for (const auto& k : keys) list += (list.empty() ? "" : ", ") + k;
    throw Error("plot.key", "unknown plot key '" + key + "'; available: " + list);
  }
  std::string out = "# " + std::string(kCsvTag) + " plot_" + key + "\n";
  if (key == "lambda") {
    const Table t = read_table(run_dir / "detections.csv");
    const std::size_t cr = t.col("round"), cn = t.col("node"), cl = t.col("lambda");
    std::map<std::size_t, std::map<std::size_t, std::string>> grid;
    std::set<std::size_t> nodes;
    for (const auto& r : t.rows) {
      grid[std::stoul(r[cr])][std::stoul(r[cn])] = r[cl];
      nodes.insert(std::stoul(r[cn]));
    }
    out += "round";
    for (std::size_t id : nodes) out += ",node_" + std::to_string(id);
    out += "\n";
    for (const auto& [round, row] : grid) {
      out += std::to_string(round);
      for (std::size_t id : nodes) out += "," + (row.count(id) ? row.at(id) : std::string("nan"));
      out += "\n";
    }
  } else if (key == "mode_shape") {
    const Table t = read_table(run_dir / "modes.csv");
    if (t.rows.empty()) throw Error("plot.input", "modes.csv holds no rows; the modal stage did not run");
    const std::size_t cr = t.col("round"), cm = t.col("mode"), cl = t.col("location");
    const std::size_t cb = t.col("baseline"), cme = t.col("measured"), cc = t.col("corrected");
    std::size_t last = 0;
    for (const auto& r : t.rows) last = std::max<std::size_t>(last, std::stoul(r[cr]));
    std::map<std::size_t, std::map<std::size_t, std::array<std::string, 3>>> grid;  // location -> mode
    std::set<std::size_t> modes;
    for (const auto& r : t.rows) {
      if (std::stoul(r[cr]) != last) continue;
      grid[std::stoul(r[cl])][std::stoul(r[cm])] = {r[cb], r[cme], r[cc]};
      modes.insert(std::stoul(r[cm]));
    }
    out += "location";
    for (std::size_t m : modes) {
      const std::string s = std::to_string(m);
      out += ",baseline_" + s + ",measured_" + s + ",reconstructed_" + s;
    }
    out += "\n";
    for (const auto& [loc, row] : grid) {
      out += std::to_string(loc);
      for (std::size_t m : modes) {
        const auto& v = row.at(m);
        out += "," + v[0] + "," + v[1] + "," + v[2];
      }
      out += "\n";
    }
  } else if (key == "energy") {
    const Table t = read_table(run_dir / "energy.csv");
    const std::size_t cr = t.col("round");
    const std::vector<std::string> parts{"e_t", "e_comp", "e_samp", "e_oh", "total"};
    std::map<std::size_t, std::vector<double>> sums;
    for (const auto& r : t.rows) {
      auto& v = sums[std::stoul(r[cr])];
      v.resize(parts.size(), 0.0);
      for (std::size_t k = 0; k < parts.size(); ++k) v[k] += std::stod(r[t.col(parts[k])]);
    }
    out += "round,e_t,e_comp,e_samp,e_oh,total\n";
    for (const auto& [round, v] : sums) {
      out += std::to_string(round);
      for (double x : v) out += "," + fmt(x);
      out += "\n";
    }
  } else {
    const Table t = read_table(run_dir / "dependability.csv");
    const std::size_t cf = t.col("fault_rate"), ca = t.col("accuracy");
    std::map<double, std::pair<double, std::size_t>> by_rate;
    for (const auto& r : t.rows) {
      auto& b = by_rate[std::stod(r[cf])];
      b.first += std::stod(r[ca]);
      ++b.second;
    }
    out += "fault_rate,accuracy,rounds\n";
    for (const auto& [rate, b] : by_rate)
      out += fmt(rate) + "," + fmt(b.first / static_cast<double>(b.second)) + "," + std::to_string(b.second) + "\n";
  }
  const auto path = run_dir / ("plot_" + key + ".csv");
  std::ofstream o(path, std::ios::binary);
  if (!o) throw Error("output.io", "cannot write '" + path.string() + "'");
  o << out;
  return path;
}

}  // namespace dshm
