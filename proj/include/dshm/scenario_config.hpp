#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/modal_monitoring.hpp"
#include "dshm/network_energy.hpp"
#include "dshm/sensing_faults.hpp"
#include "dshm/structural_model.hpp"

namespace dshm {

using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kScenarioFormat = "dshm-scenario/1";

enum class Mode { dependshm, cshm_centralized, raw_centralized, no_recovery, frequency_matching_baseline };

inline const std::vector<std::string>& mode_names() {
  static const std::vector<std::string> names{"dependshm", "cshm_centralized", "raw_centralized",
                                              "no_recovery", "frequency_matching_baseline"};
  return names;
}

inline std::optional<Mode> parse_mode(const std::string& s) {
  const auto& n = mode_names();
  for (std::size_t i = 0; i < n.size(); ++i)
    if (n[i] == s) return static_cast<Mode>(i);
  return std::nullopt;
}

inline std::string to_string(Mode m) { return mode_names()[static_cast<std::size_t>(m)]; }

// Config problems are collected, not thrown one at a time.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : Error("config.invalid", std::to_string(issues.size()) + " configuration problem(s)"),
        issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

struct FaultEntry {
  std::size_t sensor = 1;
  std::string kind = "stuck_constant";
  std::size_t onset_round = 0;
  std::size_t duration_rounds = 0;  // 0: until the end of the run
};

// Magnitudes are in units of the sensor's fault-free RMS.
struct FaultSection {
  double rate = 0.0;        // fraction of sensors drawn at random
  std::size_t count = 0;    // used instead of rate when > 0
  std::vector<std::string> kinds{"offset_bias", "debonding_gain", "stuck_constant"};
  std::vector<std::size_t> exclude;
  std::size_t onset_round = 0;  // 0: first monitoring round
  double offset_rms = 5.0;
  double gain = 0.3;
  double gain_noise_rms = 0.3;
  double drift_rms_per_s = 0.2;
  double noise_burst_rms = 3.0;
  double quant_rms = 1.0;
  std::vector<FaultEntry> scheduled;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  Mode mode = Mode::dependshm;

  // structure
  std::size_t stories = 10;
  double mass = 1.0;
  double stiffness = 1764.0;
  std::vector<double> masses, stiffnesses;  // override the uniform values when non-empty
  double dt = 0.01;

  // excitation
  std::string excitation_kind = "white_noise";
  double excitation_amplitude = 1.0;
  double excitation_cutoff_hz = 3.0;
  double excitation_frequency_hz = 1.0;
  std::size_t excitation_target = 0;

  // damage
  bool damage = false;
  std::size_t damage_story = 5;
  double damage_severity = 0.2;
  std::size_t damage_onset_round = 0;

  double noise_fraction = 0.1;  // sensors
  FaultSection faults;

  // detection
  int bins = 16;
  double threshold = 0.5;
  std::size_t max_iterations = 10;

  // reconstruction
  double inflation = 1e7;
  double input_noise = 0.03;
  double boundary_noise = 1.0;
  bool distributed = true;
  std::size_t group_hops = 2;

  // topology
  std::string layout = "line";
  double width = 100.0;
  double height = 10.0;
  double r_min = 14.0;
  double r_max = 60.0;
  std::optional<Point> base;
  std::vector<Point> positions;  // layout "explicit"

  EnergyParams energy;

  // monitoring
  std::size_t rounds = 14;
  std::size_t training_rounds = 8;
  std::size_t window = 2816;
  double warmup_s = 200.0;

  // modal
  std::size_t averages = 10;
  std::size_t max_modes = 3;
  double band_lo_hz = 0.0;
  double band_hi_hz = 6.0;
  double peak_factor = 10.0;
  double threshold_sigma = 5.0;
  double sigma_floor = 0.05;
  double frequency_tolerance = 0.03;  // relative, frequency_matching_baseline

  std::size_t monitoring_rounds() const { return rounds - training_rounds; }
  std::size_t first_fault_round() const {
    return faults.onset_round ? faults.onset_round : training_rounds;
  }

  StructureSpec structure() const {
    StructureSpec s;
    s.masses = masses.empty() ? std::vector<double>(stories, mass) : masses;
    s.stiffnesses = stiffnesses.empty() ? std::vector<double>(stories, stiffness) : stiffnesses;
    s.dt = dt;
    const double samples = std::ceil(warmup_s / dt) + static_cast<double>(rounds * window) + 1.0;
    s.duration = samples * dt;
    return s;
  }
  std::size_t warmup_samples() const { return static_cast<std::size_t>(std::ceil(warmup_s / dt)); }

  TopologySpec topology() const {
    TopologySpec t;
    if (layout == "line") {
      t = line_field(stories, width, height);
    } else {
      t.nodes = positions;
      t.width = width;
      t.height = height;
      t.base = {width, height / 2};
    }
    t.r_min = r_min;
    t.r_max = r_max;
    if (base) t.base = *base;
    return t;
  }

  ModalConfig modal() const {
    ModalConfig m;
    m.averages = averages;
    m.max_modes = max_modes;
    m.band_lo_hz = band_lo_hz;
    m.band_hi_hz = band_hi_hz;
    m.peak_factor = peak_factor;
    m.threshold_sigma = threshold_sigma;
    m.sigma_floor = sigma_floor;
    return m;
  }
};

namespace detail {

class Reader {
 public:
  std::vector<std::string> issues;

  void keys(const ordered_json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) issues.push_back(path + "." + it.key() + ": unknown key");
    }
  }

  const ordered_json* section(const ordered_json& root, const char* key, bool required) {
    auto it = root.find(key);
    if (it == root.end() || it->is_null()) {
      if (required) issues.push_back(std::string(key) + ": required section missing");
      return nullptr;
    }
    if (!it->is_object()) {
      issues.push_back(std::string(key) + ": expected an object");
      return nullptr;
    }
    return &*it;
  }

  template <class T>
  bool get(const ordered_json& obj, const std::string& path, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return false;
    const std::string where = path + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) return bad(where, "expected true or false");
      out = it->template get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) return bad(where, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) return bad(where, "must be non-negative");
      }
      out = it->template get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) return bad(where, "expected a number");
      out = it->template get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) return bad(where, "expected a string");
      out = it->template get<std::string>();
    } else {
      try {
        out = it->template get<T>();
      } catch (const nlohmann::json::exception&) {
        return bad(where, "wrong type");
      }
    }
    return true;
  }

  bool point(const ordered_json& v, const std::string& where, Point& p) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      return bad(where, "expected [x, y]");
    p = {v[0].get<double>(), v[1].get<double>()};
    return true;
  }

 private:
  bool bad(const std::string& where, const std::string& what) {
    issues.push_back(where + ": " + what);
    return false;
  }
};

inline void check(std::vector<std::string>& out, bool ok, const std::string& msg) {
  if (!ok) out.push_back(msg);
}

}  // namespace detail

// Semantic checks on a parsed config; empty when valid.
inline std::vector<std::string> config_issues(const ScenarioConfig& c) {
  using detail::check;
  std::vector<std::string> out;
  check(out, c.stories >= 3, "structure.stories: need at least 3 stories");
  check(out, c.masses.empty() || c.masses.size() == c.stories,
        "structure.masses: length must equal structure.stories");
  check(out, c.stiffnesses.empty() || c.stiffnesses.size() == c.stories,
        "structure.stiffnesses: length must equal structure.stories");
  check(out, c.dt > 0.0, "structure.dt: must be positive");
  const StructureSpec st = c.structure();
  bool structure_ok = c.stories >= 3 && c.dt > 0.0 && st.masses.size() == c.stories &&
                      st.stiffnesses.size() == c.stories;
  for (std::size_t i = 0; structure_ok && i < c.stories; ++i) {
    if (!(st.masses[i] > 0.0)) {
      out.push_back("structure: mass of story " + std::to_string(i + 1) + " must be positive");
      structure_ok = false;
    }
    if (!(st.stiffnesses[i] > 0.0)) {
      out.push_back("structure: stiffness of story " + std::to_string(i + 1) + " must be positive");
      structure_ok = false;
    }
  }
  if (structure_ok) {
    try {
      require_resolved(st, eigen_modes(st));
    } catch (const Error& e) {
      out.push_back(std::string("structure: ") + e.what());
    }
  }

  try {
    parse_excitation_kind(c.excitation_kind);
  } catch (const Error& e) {
    out.push_back(std::string("excitation.kind: ") + e.what());
  }
  check(out, c.excitation_cutoff_hz >= 0.0, "excitation.cutoff_hz: must be non-negative");
  check(out, c.excitation_cutoff_hz < 0.5 / c.dt || c.dt <= 0.0,
        "excitation.cutoff_hz: must lie below the Nyquist frequency");
  check(out, c.excitation_target <= c.stories, "excitation.target: story out of range");

  check(out, c.rounds > c.training_rounds, "monitoring.rounds: must exceed monitoring.training_rounds");
  check(out, c.training_rounds >= 2, "monitoring.training_rounds: need at least 2");
  check(out, c.window >= 256, "monitoring.window: need at least 256 samples");
  check(out, c.warmup_s >= 0.0, "monitoring.warmup_s: must be non-negative");

  if (c.damage) {
    check(out, c.damage_story >= 1 && c.damage_story <= c.stories, "damage.story: out of range");
    check(out, c.damage_severity > 0.0 && c.damage_severity < 1.0, "damage.severity: must lie in (0, 1)");
    check(out, c.damage_onset_round >= c.training_rounds && c.damage_onset_round < c.rounds,
          "damage.onset_round: must fall in a monitoring round");
  }

  check(out, c.noise_fraction >= 0.0, "sensors.noise_fraction: must be non-negative");

  const FaultSection& f = c.faults;
  check(out, f.rate >= 0.0 && f.rate <= 1.0, "faults.rate: must lie in [0, 1]");
  check(out, f.count <= c.stories, "faults.count: exceeds the number of sensors");
  check(out, !f.kinds.empty() || (f.rate == 0.0 && f.count == 0), "faults.kinds: empty");
  for (const auto& k : f.kinds) {
    try {
      parse_fault_kind(k);
    } catch (const Error& e) {
      out.push_back(std::string("faults.kinds: ") + e.what());
    }
  }
  for (std::size_t s : f.exclude) check(out, s >= 1 && s <= c.stories, "faults.exclude: sensor out of range");
  check(out, f.onset_round == 0 || (f.onset_round >= c.training_rounds && f.onset_round < c.rounds),
        "faults.onset_round: must fall in a monitoring round");
  check(out, f.offset_rms >= 0.0 && f.gain >= 0.0 && f.gain_noise_rms >= 0.0 && f.noise_burst_rms >= 0.0,
        "faults: magnitudes must be non-negative");
  check(out, f.quant_rms > 0.0, "faults.quant_rms: must be positive");
  for (std::size_t i = 0; i < f.scheduled.size(); ++i) {
    const auto& e = f.scheduled[i];
    const std::string p = "faults.scheduled[" + std::to_string(i) + "]";
    check(out, e.sensor >= 1 && e.sensor <= c.stories, p + ".sensor: out of range");
    try {
      parse_fault_kind(e.kind);
    } catch (const Error& err) {
      out.push_back(p + ".kind: " + err.what());
    }
    check(out, e.onset_round >= c.training_rounds && e.onset_round < c.rounds,
          p + ".onset_round: must fall in a monitoring round");
  }

  check(out, c.bins >= 4, "detection.bins: must be at least 4");
  check(out, c.threshold > 0.0, "detection.threshold: must be positive");
  check(out, c.max_iterations >= 1, "detection.max_iterations: must be at least 1");

  check(out, c.inflation > 1.0, "reconstruction.inflation: must exceed 1");
  check(out, c.input_noise > 0.0, "reconstruction.input_noise: must be positive");
  check(out, c.boundary_noise > 0.0, "reconstruction.boundary_noise: must be positive");
  check(out, c.group_hops >= 1, "reconstruction.group_hops: must be at least 1");

  check(out, c.layout == "line" || c.layout == "explicit", "topology.layout: expected line or explicit");
  check(out, c.layout != "explicit" || c.positions.size() == c.stories,
        "topology.positions: need one position per sensor");
  if (c.layout == "line" || c.positions.size() == c.stories) {
    const auto topo = topology_issues(c.topology());
    for (const auto& s : topo) out.push_back("topology: " + s);
    if (topo.empty() && c.stories >= 1)
      for (const auto& w : build_neighborhoods(c.topology()).warnings) out.push_back("topology: " + w);
  }
  for (const auto& s : energy_issues(c.energy)) out.push_back("energy: " + s);

  check(out, c.averages >= 10 && c.averages <= 20, "modal.averages: must lie in [10, 20]");
  check(out, c.max_modes >= 1, "modal.max_modes: must be at least 1");
  check(out, c.band_hi_hz == 0.0 || c.band_hi_hz > c.band_lo_hz, "modal.band_hi_hz: must exceed band_lo_hz");
  check(out, c.peak_factor > 1.0, "modal.peak_factor: must exceed 1");
  check(out, c.threshold_sigma > 0.0, "modal.threshold_sigma: must be positive");
  check(out, c.frequency_tolerance > 0.0, "modal.frequency_tolerance: must be positive");
  return out;
}

// Parses and validates; throws ConfigError listing every problem found.
inline ScenarioConfig parse_config(const ordered_json& root) {
  detail::Reader r;
  ScenarioConfig c;
  if (!root.is_object()) throw ConfigError({"config: expected a JSON object"});
  r.keys(root, "config", {"format", "name", "seed", "mode", "structure", "excitation", "damage", "sensors",
                          "faults", "detection", "reconstruction", "topology", "energy", "monitoring", "modal"});
  std::string format;
  if (!r.get(root, "config", "format", format)) {
    if (!root.contains("format")) r.issues.push_back("format: required, expected \"" + std::string(kScenarioFormat) + "\"");
  } else if (format != kScenarioFormat) {
    r.issues.push_back("format: unsupported \"" + format + "\", expected \"" + kScenarioFormat + "\"");
  }
  r.get(root, "config", "name", c.name);
  if (!root.contains("seed")) r.issues.push_back("seed: required");
  r.get(root, "config", "seed", c.seed);
  std::string mode;
  if (!root.contains("mode")) r.issues.push_back("mode: required");
  if (r.get(root, "config", "mode", mode)) {
    if (auto m = parse_mode(mode)) c.mode = *m;
    else r.issues.push_back("mode: unknown \"" + mode + "\"");
  }

  if (auto* s = r.section(root, "structure", true)) {
    r.keys(*s, "structure", {"stories", "mass", "stiffness", "masses", "stiffnesses", "dt"});
    r.get(*s, "structure", "stories", c.stories);
    r.get(*s, "structure", "mass", c.mass);
    r.get(*s, "structure", "stiffness", c.stiffness);
    r.get(*s, "structure", "masses", c.masses);
    r.get(*s, "structure", "stiffnesses", c.stiffnesses);
    r.get(*s, "structure", "dt", c.dt);
  }
  if (auto* s = r.section(root, "excitation", false)) {
    r.keys(*s, "excitation", {"kind", "amplitude", "cutoff_hz", "frequency_hz", "target"});
    r.get(*s, "excitation", "kind", c.excitation_kind);
    r.get(*s, "excitation", "amplitude", c.excitation_amplitude);
    r.get(*s, "excitation", "cutoff_hz", c.excitation_cutoff_hz);
    r.get(*s, "excitation", "frequency_hz", c.excitation_frequency_hz);
    r.get(*s, "excitation", "target", c.excitation_target);
  }
  if (auto* s = r.section(root, "damage", false)) {
    r.keys(*s, "damage", {"enabled", "story", "severity", "onset_round"});
    c.damage = true;
    r.get(*s, "damage", "enabled", c.damage);
    r.get(*s, "damage", "story", c.damage_story);
    r.get(*s, "damage", "severity", c.damage_severity);
    r.get(*s, "damage", "onset_round", c.damage_onset_round);
  }
  if (auto* s = r.section(root, "sensors", true)) {
    r.keys(*s, "sensors", {"noise_fraction"});
    r.get(*s, "sensors", "noise_fraction", c.noise_fraction);
  }
  if (auto* s = r.section(root, "faults", true)) {
    auto& f = c.faults;
    r.keys(*s, "faults", {"rate", "count", "kinds", "exclude", "onset_round", "offset_rms", "gain", "gain_noise_rms",
                          "drift_rms_per_s", "noise_burst_rms", "quant_rms", "scheduled"});
    r.get(*s, "faults", "rate", f.rate);
    r.get(*s, "faults", "count", f.count);
    r.get(*s, "faults", "kinds", f.kinds);
    r.get(*s, "faults", "exclude", f.exclude);
    r.get(*s, "faults", "onset_round", f.onset_round);
    r.get(*s, "faults", "offset_rms", f.offset_rms);
    r.get(*s, "faults", "gain", f.gain);
    r.get(*s, "faults", "gain_noise_rms", f.gain_noise_rms);
    r.get(*s, "faults", "drift_rms_per_s", f.drift_rms_per_s);
    r.get(*s, "faults", "noise_burst_rms", f.noise_burst_rms);
    r.get(*s, "faults", "quant_rms", f.quant_rms);
    if (auto it = s->find("scheduled"); it != s->end()) {
      if (!it->is_array()) {
        r.issues.push_back("faults.scheduled: expected an array");
      } else {
        for (std::size_t i = 0; i < it->size(); ++i) {
          const auto& e = (*it)[i];
          const std::string p = "faults.scheduled[" + std::to_string(i) + "]";
          if (!e.is_object()) {
            r.issues.push_back(p + ": expected an object");
            continue;
          }
          r.keys(e, p, {"sensor", "kind", "onset_round", "duration_rounds"});
          FaultEntry fe;
          if (!e.contains("sensor")) r.issues.push_back(p + ".sensor: required");
          if (!e.contains("kind")) r.issues.push_back(p + ".kind: required");
          if (!e.contains("onset_round")) r.issues.push_back(p + ".onset_round: required");
          r.get(e, p, "sensor", fe.sensor);
          r.get(e, p, "kind", fe.kind);
          r.get(e, p, "onset_round", fe.onset_round);
          r.get(e, p, "duration_rounds", fe.duration_rounds);
          f.scheduled.push_back(fe);
        }
      }
    }
  }
  if (auto* s = r.section(root, "detection", true)) {
    r.keys(*s, "detection", {"bins", "threshold", "max_iterations"});
    r.get(*s, "detection", "bins", c.bins);
    r.get(*s, "detection", "threshold", c.threshold);
    r.get(*s, "detection", "max_iterations", c.max_iterations);
  }
  if (auto* s = r.section(root, "reconstruction", true)) {
    r.keys(*s, "reconstruction", {"inflation", "input_noise", "boundary_noise", "distributed", "group_hops"});
    r.get(*s, "reconstruction", "inflation", c.inflation);
    r.get(*s, "reconstruction", "input_noise", c.input_noise);
    r.get(*s, "reconstruction", "boundary_noise", c.boundary_noise);
    r.get(*s, "reconstruction", "distributed", c.distributed);
    r.get(*s, "reconstruction", "group_hops", c.group_hops);
  }
  if (auto* s = r.section(root, "topology", true)) {
    r.keys(*s, "topology", {"layout", "width", "height", "r_min", "r_max", "base", "positions"});
    r.get(*s, "topology", "layout", c.layout);
    r.get(*s, "topology", "width", c.width);
    r.get(*s, "topology", "height", c.height);
    r.get(*s, "topology", "r_min", c.r_min);
    r.get(*s, "topology", "r_max", c.r_max);
    if (auto it = s->find("base"); it != s->end()) {
      Point p;
      if (r.point(*it, "topology.base", p)) c.base = p;
    }
    if (auto it = s->find("positions"); it != s->end()) {
      if (!it->is_array()) {
        r.issues.push_back("topology.positions: expected an array");
      } else {
        for (std::size_t i = 0; i < it->size(); ++i) {
          Point p;
          if (r.point((*it)[i], "topology.positions[" + std::to_string(i) + "]", p)) c.positions.push_back(p);
        }
      }
    }
  }
  if (auto* s = r.section(root, "energy", true)) {
    auto& e = c.energy;
    r.keys(*s, "energy", {"e_elec", "e_amp", "bits_per_sample", "phi_bytes_per_mode", "phi_header_bytes", "cpu_f",
                          "cpu_k", "cpu_beta", "cpu_mu", "e_sample", "overhead_fraction", "reconstruction_surcharge",
                          "loss_probability", "phi_retransmissions"});
    r.get(*s, "energy", "e_elec", e.e_elec);
    r.get(*s, "energy", "e_amp", e.e_amp);
    r.get(*s, "energy", "bits_per_sample", e.bits_per_sample);
    r.get(*s, "energy", "phi_bytes_per_mode", e.phi_bytes_per_mode);
    r.get(*s, "energy", "phi_header_bytes", e.phi_header_bytes);
    r.get(*s, "energy", "cpu_f", e.cpu_f);
    r.get(*s, "energy", "cpu_k", e.cpu_k);
    r.get(*s, "energy", "cpu_beta", e.cpu_beta);
    r.get(*s, "energy", "cpu_mu", e.cpu_mu);
    r.get(*s, "energy", "e_sample", e.e_sample);
    r.get(*s, "energy", "overhead_fraction", e.overhead_fraction);
    r.get(*s, "energy", "reconstruction_surcharge", e.reconstruction_surcharge);
    r.get(*s, "energy", "loss_probability", e.loss_probability);
    r.get(*s, "energy", "phi_retransmissions", e.phi_retransmissions);
  }
  if (auto* s = r.section(root, "monitoring", true)) {
    r.keys(*s, "monitoring", {"rounds", "training_rounds", "window", "warmup_s"});
    r.get(*s, "monitoring", "rounds", c.rounds);
    r.get(*s, "monitoring", "training_rounds", c.training_rounds);
    r.get(*s, "monitoring", "window", c.window);
    r.get(*s, "monitoring", "warmup_s", c.warmup_s);
  }
  if (auto* s = r.section(root, "modal", false)) {
    r.keys(*s, "modal", {"averages", "max_modes", "band_lo_hz", "band_hi_hz", "peak_factor", "threshold_sigma",
                         "sigma_floor", "frequency_tolerance"});
    r.get(*s, "modal", "averages", c.averages);
    r.get(*s, "modal", "max_modes", c.max_modes);
    r.get(*s, "modal", "band_lo_hz", c.band_lo_hz);
    r.get(*s, "modal", "band_hi_hz", c.band_hi_hz);
    r.get(*s, "modal", "peak_factor", c.peak_factor);
    r.get(*s, "modal", "threshold_sigma", c.threshold_sigma);
    r.get(*s, "modal", "sigma_floor", c.sigma_floor);
    r.get(*s, "modal", "frequency_tolerance", c.frequency_tolerance);
  }
  // fields that failed to parse keep their defaults, so the semantic pass
  // still reports the rest in the same go
  try {
    for (auto& s : config_issues(c)) r.issues.push_back(std::move(s));
  } catch (const Error&) {
    if (r.issues.empty()) throw;
  }
  if (!r.issues.empty()) throw ConfigError(std::move(r.issues));
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config.io", "cannot read config file '" + path + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({std::string("config: not valid JSON: ") + e.what()});
  }
  return parse_config(j);
}

// Every field, defaults included, so the echo re-runs the same scenario.
inline ordered_json to_json(const ScenarioConfig& c) {
  ordered_json j;
  j["format"] = kScenarioFormat;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  j["structure"] = {{"stories", c.stories}, {"mass", c.mass},         {"stiffness", c.stiffness},
                    {"masses", c.masses},   {"stiffnesses", c.stiffnesses}, {"dt", c.dt}};
  j["excitation"] = {{"kind", c.excitation_kind},
                     {"amplitude", c.excitation_amplitude},
                     {"cutoff_hz", c.excitation_cutoff_hz},
                     {"frequency_hz", c.excitation_frequency_hz},
                     {"target", c.excitation_target}};
  j["damage"] = {{"enabled", c.damage},
                 {"story", c.damage_story},
                 {"severity", c.damage_severity},
                 {"onset_round", c.damage_onset_round}};
  j["sensors"] = {{"noise_fraction", c.noise_fraction}};
  ordered_json sched = ordered_json::array();
  for (const auto& e : c.faults.scheduled)
    sched.push_back({{"sensor", e.sensor},
                     {"kind", e.kind},
                     {"onset_round", e.onset_round},
                     {"duration_rounds", e.duration_rounds}});
  const auto& f = c.faults;
  j["faults"] = {{"rate", f.rate},
                 {"count", f.count},
                 {"kinds", f.kinds},
                 {"exclude", f.exclude},
                 {"onset_round", f.onset_round},
                 {"offset_rms", f.offset_rms},
                 {"gain", f.gain},
                 {"gain_noise_rms", f.gain_noise_rms},
                 {"drift_rms_per_s", f.drift_rms_per_s},
                 {"noise_burst_rms", f.noise_burst_rms},
                 {"quant_rms", f.quant_rms},
                 {"scheduled", sched}};
  j["detection"] = {{"bins", c.bins}, {"threshold", c.threshold}, {"max_iterations", c.max_iterations}};
  j["reconstruction"] = {{"inflation", c.inflation},
                         {"input_noise", c.input_noise},
                         {"boundary_noise", c.boundary_noise},
                         {"distributed", c.distributed},
                         {"group_hops", c.group_hops}};
  ordered_json topo = {{"layout", c.layout}, {"width", c.width}, {"height", c.height},
                       {"r_min", c.r_min},   {"r_max", c.r_max}};
  if (c.base) topo["base"] = {c.base->x, c.base->y};
  if (!c.positions.empty()) {
    ordered_json pos = ordered_json::array();
    for (const auto& p : c.positions) pos.push_back({p.x, p.y});
    topo["positions"] = pos;
  }
  j["topology"] = topo;
  const auto& e = c.energy;
  j["energy"] = {{"e_elec", e.e_elec},
                 {"e_amp", e.e_amp},
                 {"bits_per_sample", e.bits_per_sample},
                 {"phi_bytes_per_mode", e.phi_bytes_per_mode},
                 {"phi_header_bytes", e.phi_header_bytes},
                 {"cpu_f", e.cpu_f},
                 {"cpu_k", e.cpu_k},
                 {"cpu_beta", e.cpu_beta},
                 {"cpu_mu", e.cpu_mu},
                 {"e_sample", e.e_sample},
                 {"overhead_fraction", e.overhead_fraction},
                 {"reconstruction_surcharge", e.reconstruction_surcharge},
                 {"loss_probability", e.loss_probability},
                 {"phi_retransmissions", e.phi_retransmissions}};
  j["monitoring"] = {{"rounds", c.rounds},
                     {"training_rounds", c.training_rounds},
                     {"window", c.window},
                     {"warmup_s", c.warmup_s}};
  j["modal"] = {{"averages", c.averages},
                {"max_modes", c.max_modes},
                {"band_lo_hz", c.band_lo_hz},
                {"band_hi_hz", c.band_hi_hz},
                {"peak_factor", c.peak_factor},
                {"threshold_sigma", c.threshold_sigma},
                {"sigma_floor", c.sigma_floor},
                {"frequency_tolerance", c.frequency_tolerance}};
  return j;
}

}  // namespace dshm
