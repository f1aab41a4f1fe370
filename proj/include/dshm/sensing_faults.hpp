#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/structural_model.hpp"

namespace dshm {

// One accelerometer per entry. Sensor ids are 1-based positions in `dofs`.
struct SensorArraySpec {
  std::vector<std::size_t> dofs;  // 1-based story index per sensor
  std::vector<double> noise_std;  // empty means noise-free

  std::size_t size() const { return dofs.size(); }
};

inline SensorArraySpec one_sensor_per_story(std::size_t n) {
  SensorArraySpec a;
  for (std::size_t i = 1; i <= n; ++i) a.dofs.push_back(i);
  return a;
}

// Selector matrix: one unit entry per row picking the sensed DOF.
inline Eigen::MatrixXd measurement_matrix(const SensorArraySpec& a, std::size_t n_dof) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.size()),
                                            static_cast<Eigen::Index>(n_dof));
  for (std::size_t s = 0; s < a.size(); ++s) {
    require(a.dofs[s] >= 1 && a.dofs[s] <= n_dof, "sensors.dof",
            "sensor " + std::to_string(s + 1) + " placed on missing story");
    q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a.dofs[s] - 1)) = 1.0;
  }
  return q;
}

struct SignalWindow {
  std::size_t sensor_id = 0;
  std::size_t round = 0;
  double start_time = 0.0;
  double dt = 0.0;
  Eigen::VectorXd samples;

  double time_at(std::size_t k) const { return start_time + dt * static_cast<double>(k); }
};

inline double rms(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

// Window length for `averages` half-overlapping segments of `segment` samples.
inline std::size_t sampling_points(std::size_t averages, double segment) {
  require(averages >= 10 && averages <= 20, "sampling.averages",
          "number of averages must lie in [10, 20]");
  require(segment > 0.0, "sampling.segment", "segment length must be positive");
  return static_cast<std::size_t>(std::llround((averages / 2.0 + 0.5) * segment));
}

// Cuts `window_len` samples starting at absolute sample `first_sample` out of
// every sensed DOF and adds white measurement noise.
inline std::vector<SignalWindow> measure(const ResponseRecord& r, const SensorArraySpec& a,
                                         std::uint64_t seed, std::size_t window_len,
                                         std::size_t first_sample = 0, std::size_t round = 0) {
  require(a.size() > 0, "sensors.empty", "sensor array is empty");
  require(a.noise_std.empty() || a.noise_std.size() == a.size(), "sensors.noise",
          "noise_std must be empty or hold one value per sensor");
  require(first_sample >= r.first_sample &&
              first_sample + window_len <= r.first_sample + r.n_samples(),
          "sensors.window",
          "window of " + std::to_string(window_len) + " samples from " +
              std::to_string(first_sample) + " lies outside the stored record");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<SignalWindow> out;
  out.reserve(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    const std::size_t dof = a.dofs[s];
    require(dof >= 1 && dof <= static_cast<std::size_t>(r.acceleration.rows()),
            "sensors.dof", "sensor " + std::to_string(s + 1) + " placed on missing story");
    SignalWindow w;
    w.sensor_id = s + 1;
    w.round = round;
    w.dt = r.dt;
    w.start_time = r.dt * static_cast<double>(first_sample);
    w.samples = r.acceleration.row(static_cast<Eigen::Index>(dof - 1))
                    .segment(static_cast<Eigen::Index>(first_sample - r.first_sample),
                             static_cast<Eigen::Index>(window_len))
                    .transpose();
    const double sd = a.noise_std.empty() ? 0.0 : a.noise_std[s];
    if (sd > 0.0)
      for (Eigen::Index k = 0; k < w.samples.size(); ++k) w.samples(k) += sd * g(rng);
    out.push_back(std::move(w));
  }
  return out;
}

// Per-sensor RMS of the noise-free acceleration over one window.
inline std::vector<double> window_rms(const ResponseRecord& r, const SensorArraySpec& a,
                                      std::size_t first_sample, std::size_t window_len) {
  std::vector<double> out;
  for (std::size_t dof : a.dofs)
    out.push_back(rms(r.acceleration.row(static_cast<Eigen::Index>(dof - 1))
                          .segment(static_cast<Eigen::Index>(first_sample - r.first_sample),
                                   static_cast<Eigen::Index>(window_len))
                          .transpose()));
  return out;
}

enum class FaultKind {
  debonding_gain,
  stuck_constant,
  offset_bias,
  drift,
  precision_degradation,
  noise_burst,
  missing
};

inline FaultKind parse_fault_kind(const std::string& name) {
  if (name == "debonding_gain") return FaultKind::debonding_gain;
  if (name == "stuck_constant") return FaultKind::stuck_constant;
  if (name == "offset_bias") return FaultKind::offset_bias;
  if (name == "drift") return FaultKind::drift;
  if (name == "precision_degradation") return FaultKind::precision_degradation;
  if (name == "noise_burst") return FaultKind::noise_burst;
  if (name == "missing") return FaultKind::missing;
  throw Error("fault.kind", "unknown fault kind '" + name + "'");
}

inline std::string to_string(FaultKind k) {
  switch (k) {
    case FaultKind::debonding_gain: return "debonding_gain";
    case FaultKind::stuck_constant: return "stuck_constant";
    case FaultKind::offset_bias: return "offset_bias";
    case FaultKind::drift: return "drift";
    case FaultKind::precision_degradation: return "precision_degradation";
    case FaultKind::noise_burst: return "noise_burst";
    case FaultKind::missing: return "missing";
  }
  return "unknown";
}

// Magnitudes are absolute. Only the fields relevant to `kind` are used.
struct FaultProfile {
  FaultKind kind = FaultKind::offset_bias;
  std::size_t sensor_id = 1;
  double onset = 0.0;
  double duration = std::numeric_limits<double>::infinity();
  double offset = 0.0;         // offset_bias
  double drift_rate = 0.0;     // drift, units per second since onset
  double gain = 1.0;           // debonding_gain
  double noise_std = 0.0;      // noise_burst; parasitic noise for debonding_gain
  double quant_step = 0.0;     // precision_degradation
  double stuck_value = 0.0;    // stuck_constant
  std::uint64_t seed = 0;

  bool active_at(double t) const { return t >= onset && t < onset + duration; }
};

// Returns std::nullopt when the fault makes the window unavailable.
inline std::optional<SignalWindow> apply_fault(const SignalWindow& w, const FaultProfile& f) {
  require(f.sensor_id == w.sensor_id, "fault.target",
          "fault for sensor " + std::to_string(f.sensor_id) + " applied to sensor " +
              std::to_string(w.sensor_id));
  require(f.onset >= 0.0 && f.duration > 0.0, "fault.window", "fault onset/duration invalid");
  require(f.kind != FaultKind::precision_degradation || f.quant_step > 0.0, "fault.quant_step",
          "precision_degradation needs a positive quantization step");
  require(f.gain >= 0.0 && f.noise_std >= 0.0, "fault.parameters",
          "gain and noise std must be non-negative");
  SignalWindow out = w;
  bool touched = false;
  std::mt19937_64 rng(f.seed ^ (0x9E3779B97F4A7C15ULL * (w.round + 1)) ^
                      (0xC2B2AE3D27D4EB4FULL * w.sensor_id));
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index k = 0; k < w.samples.size(); ++k) {
    const double t = w.time_at(static_cast<std::size_t>(k));
    if (!f.active_at(t)) continue;
    touched = true;
    double& y = out.samples(k);
    switch (f.kind) {
      case FaultKind::offset_bias: y += f.offset; break;
      case FaultKind::drift: y += f.drift_rate * (t - f.onset); break;
      case FaultKind::debonding_gain:
        y *= f.gain;
        if (f.noise_std > 0.0) y += f.noise_std * g(rng);
        break;
      case FaultKind::precision_degradation: y = f.quant_step * std::round(y / f.quant_step); break;
      case FaultKind::noise_burst: y += f.noise_std * g(rng); break;
      case FaultKind::stuck_constant: y = f.stuck_value; break;
      case FaultKind::missing: break;
    }
  }
  if (touched && f.kind == FaultKind::missing) return std::nullopt;
  return out;
}

}  // namespace dshm
