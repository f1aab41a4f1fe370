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

namespace dshm {

// Lumped-mass shear building. Story i (0-based) is tied to story i-1 by
// spring stiffnesses[i]; story 0 is tied to the ground.
struct StructureSpec {
  std::vector<double> masses;
  std::vector<double> stiffnesses;
  double dt = 0.01;
  double duration = 10.0;

  std::size_t n_dof() const { return masses.size(); }
  std::size_t n_samples() const {
    return static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
  }
};

inline StructureSpec uniform_chain(std::size_t n, double mass, double stiffness, double dt,
                                   double duration) {
  StructureSpec s;
  s.masses.assign(n, mass);
  s.stiffnesses.assign(n, stiffness);
  s.dt = dt;
  s.duration = duration;
  return s;
}

inline void validate(const StructureSpec& s) {
  require(!s.masses.empty(), "structure.empty", "structure has no degrees of freedom");
  require(s.masses.size() == s.stiffnesses.size(), "structure.shape",
          "masses and stiffnesses differ in length");
  for (std::size_t i = 0; i < s.masses.size(); ++i) {
    require(s.masses[i] > 0.0 && std::isfinite(s.masses[i]), "structure.mass",
            "mass of story " + std::to_string(i + 1) + " must be positive");
    require(s.stiffnesses[i] > 0.0 && std::isfinite(s.stiffnesses[i]), "structure.stiffness",
            "stiffness of story " + std::to_string(i + 1) + " must be positive");
  }
  require(s.dt > 0.0, "structure.dt", "time step must be positive");
  require(s.duration >= s.dt, "structure.duration", "duration shorter than one time step");
}

inline Eigen::MatrixXd mass_matrix(const StructureSpec& s) {
  Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(s.masses.data(), s.masses.size());
  return m.asDiagonal();
}

inline Eigen::MatrixXd stiffness_matrix(const StructureSpec& s) {
  const auto n = static_cast<Eigen::Index>(s.n_dof());
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) += s.stiffnesses[i];
    if (i + 1 < n) {
      const double above = s.stiffnesses[i + 1];
      k(i, i) += above;
      k(i, i + 1) -= above;
      k(i + 1, i) -= above;
    }
  }
  return k;
}

// Mass-normalised modes sorted by ascending frequency. Each shape is signed
// so that its first significant component is positive.
struct ModalBasis {
  Eigen::VectorXd eigenvalues;  // omega^2
  Eigen::VectorXd omegas;       // rad/s
  Eigen::VectorXd frequencies;  // Hz
  Eigen::MatrixXd shapes;       // columns are modes
};

inline ModalBasis eigen_modes(const StructureSpec& s) {
  validate(s);
  const Eigen::MatrixXd m = mass_matrix(s);
  const Eigen::MatrixXd k = stiffness_matrix(s);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(k, m);
  require(es.info() == Eigen::Success, "structure.eigen",
          "eigen decomposition failed for a " + std::to_string(s.n_dof()) + "-story structure");
  ModalBasis b;
  b.eigenvalues = es.eigenvalues();
  b.shapes = es.eigenvectors();
  for (Eigen::Index j = 0; j < b.shapes.cols(); ++j) {
    require(b.eigenvalues(j) > 0.0, "structure.eigen", "non-positive eigenvalue");
    auto col = b.shapes.col(j);
    const double tol = 1e-9 * col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (std::abs(col(i)) > tol) {
        if (col(i) < 0.0) col = -col;
        break;
      }
    }
  }
  b.omegas = b.eigenvalues.cwiseSqrt();
  b.frequencies = b.omegas / (2.0 * M_PI);
  return b;
}

// Throws when the highest natural frequency is not resolved by the sampling rate.
inline void require_resolved(const StructureSpec& s, const ModalBasis& b) {
  const double nyquist = 0.5 / s.dt;
  const double fmax = b.frequencies.maxCoeff();
  require(fmax < nyquist, "structure.nyquist",
          "highest natural frequency " + std::to_string(fmax) + " Hz exceeds Nyquist limit " +
              std::to_string(nyquist) + " Hz");
}

struct DamageSpec {
  std::size_t story = 1;  // 1-based
  double severity = 0.2;  // fractional stiffness loss
  double onset = 0.0;     // seconds
};

inline StructureSpec apply_damage(const StructureSpec& s, const DamageSpec& d) {
  validate(s);
  require(d.story >= 1 && d.story <= s.n_dof(), "damage.location",
          "damage story " + std::to_string(d.story) + " outside 1.." +
              std::to_string(s.n_dof()));
  require(d.severity > 0.0 && d.severity < 1.0, "damage.severity",
          "damage severity must lie in (0, 1) so stiffness stays positive");
  require(d.onset >= 0.0, "damage.onset", "damage onset must be non-negative");
  StructureSpec out = s;
  out.stiffnesses[d.story - 1] *= (1.0 - d.severity);
  return out;
}

enum class ExcitationKind { white_noise, sine, impulse };

inline ExcitationKind parse_excitation_kind(const std::string& name) {
  if (name == "white_noise") return ExcitationKind::white_noise;
  if (name == "sine") return ExcitationKind::sine;
  if (name == "impulse") return ExcitationKind::impulse;
  throw Error("excitation.kind", "unknown excitation kind '" + name + "'");
}

inline std::string to_string(ExcitationKind k) {
  switch (k) {
    case ExcitationKind::white_noise: return "white_noise";
    case ExcitationKind::sine: return "sine";
    case ExcitationKind::impulse: return "impulse";
  }
  return "unknown";
}

// target == 0 means ground motion (base acceleration); otherwise a point force
// on the given 1-based story.
struct ExcitationSpec {
  ExcitationKind kind = ExcitationKind::white_noise;
  double amplitude = 1.0;
  double frequency_hz = 1.0;  // sine
  double cutoff_hz = 0.0;     // white noise low-pass, 0 disables
  double pulse_width = 0.0;   // impulse, seconds; 0 means one sample
  std::size_t target = 0;
  std::uint64_t seed = 1;
};

// Second-order Butterworth low-pass via the bilinear transform.
class LowPass2 {
 public:
  LowPass2(double cutoff_hz, double dt) {
    const double k = std::tan(M_PI * cutoff_hz * dt);
    const double norm = 1.0 / (1.0 + std::sqrt(2.0) * k + k * k);
    b0_ = k * k * norm;
    b1_ = 2.0 * b0_;
    b2_ = b0_;
    a1_ = 2.0 * (k * k - 1.0) * norm;
    a2_ = (1.0 - std::sqrt(2.0) * k + k * k) * norm;
  }

  double operator()(double x) {
    const double y = b0_ * x + z1_;
    z1_ = b1_ * x - a1_ * y + z2_;
    z2_ = b2_ * x - a2_ * y;
    return y;
  }

 private:
  double b0_, b1_, b2_, a1_, a2_;
  double z1_ = 0.0, z2_ = 0.0;
};

inline Eigen::VectorXd excitation_trace(const ExcitationSpec& e, std::size_t n, double dt) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  switch (e.kind) {
    case ExcitationKind::white_noise: {
      std::mt19937_64 rng(e.seed);
      std::normal_distribution<double> g(0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) u(i) = g(rng);
      if (e.cutoff_hz > 0.0) {
        require(e.cutoff_hz < 0.5 / dt, "excitation.cutoff", "cutoff above Nyquist");
        LowPass2 lp(e.cutoff_hz, dt);
        for (std::size_t i = 0; i < n; ++i) u(i) = lp(u(i));
        // rescale so the filtered trace has the requested standard deviation
        const double sd = std::sqrt(u.squaredNorm() / std::max<double>(1.0, n));
        if (sd > 0.0) u /= sd;
      }
      u *= e.amplitude;
      break;
    }
    case ExcitationKind::sine:
      for (std::size_t i = 0; i < n; ++i)
        u(i) = e.amplitude * std::sin(2.0 * M_PI * e.frequency_hz * dt * i);
      break;
    case ExcitationKind::impulse: {
      const auto width = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(e.pulse_width / dt)));
      for (std::size_t i = 0; i < std::min(width, n); ++i) u(i) = e.amplitude / (width * dt);
      break;
    }
  }
  return u;
}

// Force distribution per unit input. Ground motion gives -M*1.
inline Eigen::VectorXd input_direction(const StructureSpec& s, std::size_t target) {
  const auto n = static_cast<Eigen::Index>(s.n_dof());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  if (target == 0) {
    for (Eigen::Index i = 0; i < n; ++i) b(i) = -s.masses[i];
  } else {
    require(target <= s.n_dof(), "excitation.target",
            "excitation target story " + std::to_string(target) + " does not exist");
    b(static_cast<Eigen::Index>(target - 1)) = 1.0;
  }
  return b;
}

// Exact zero-order-hold propagation of undamped modal coordinates.
class ModalPropagator {
 public:
  ModalPropagator(const StructureSpec& s, const ModalBasis& b, const Eigen::VectorXd& direction)
      : basis_(b) {
    const double dt = s.dt;
    cos_ = (b.omegas * dt).array().cos();
    sin_ = (b.omegas * dt).array().sin();
    gain_ = b.shapes.transpose() * direction;
    mass_ = Eigen::Map<const Eigen::VectorXd>(s.masses.data(), s.masses.size());
    q_ = Eigen::VectorXd::Zero(b.omegas.size());
    qd_ = q_;
  }

  void set_physical(const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
    q_ = basis_.shapes.transpose() * mass_.asDiagonal() * x;
    qd_ = basis_.shapes.transpose() * mass_.asDiagonal() * v;
  }

  // Damage that grows slowly against the vibration periods keeps each mode's
  // action E/omega, so amplitude scales by sqrt(w_old/w_new) and phase carries over.
  void adopt_adiabatic(const ModalPropagator& old) {
    const Eigen::MatrixXd overlap = old.basis_.shapes.transpose() * mass_.asDiagonal() * basis_.shapes;
    for (Eigen::Index j = 0; j < q_.size(); ++j) {
      const double sign = overlap(j, j) < 0.0 ? -1.0 : 1.0;
      const double ratio = old.basis_.omegas(j) / basis_.omegas(j);
      q_(j) = sign * old.q_(j) * std::sqrt(ratio);
      qd_(j) = sign * old.qd_(j) / std::sqrt(ratio);
    }
  }

  Eigen::VectorXd displacement() const { return basis_.shapes * q_; }
  Eigen::VectorXd velocity() const { return basis_.shapes * qd_; }
  // Elastic part of acceleration, -M^-1 K x.
  Eigen::VectorXd elastic_acceleration() const {
    return basis_.shapes * (-basis_.eigenvalues.cwiseProduct(q_));
  }

  void step(double u) {
    const Eigen::ArrayXd w = basis_.omegas.array();
    const Eigen::ArrayXd f = gain_.array() * u;
    const Eigen::ArrayXd q = q_.array(), qd = qd_.array();
    q_ = cos_ * q + sin_ / w * qd + (1.0 - cos_) / basis_.eigenvalues.array() * f;
    qd_ = -w * sin_ * q + cos_ * qd + sin_ / w * f;
  }

 private:
  const ModalBasis& basis_;
  Eigen::ArrayXd cos_, sin_;
  Eigen::VectorXd gain_, mass_, q_, qd_;
};

// Rows are DOFs, columns are samples from `first_sample` on. Acceleration is
// absolute; the excitation trace covers the whole run.
struct ResponseRecord {
  double dt = 0.0;
  std::size_t first_sample = 0;
  Eigen::MatrixXd displacement;
  Eigen::MatrixXd velocity;
  Eigen::MatrixXd acceleration;
  Eigen::VectorXd excitation;
  std::optional<DamageSpec> damage;
  std::size_t damage_sample = 0;

  std::size_t n_samples() const { return static_cast<std::size_t>(acceleration.cols()); }
};

// `keep_from` drops the leading samples (warm-up) from the stored record.
inline ResponseRecord simulate_response(const StructureSpec& s, const ExcitationSpec& e,
                                        const std::optional<DamageSpec>& damage = std::nullopt,
                                        const Eigen::VectorXd* initial_state = nullptr,
                                        std::size_t keep_from = 0) {
  validate(s);
  const ModalBasis healthy = eigen_modes(s);
  require_resolved(s, healthy);
  const std::size_t n = s.n_samples();
  const auto dofs = static_cast<Eigen::Index>(s.n_dof());

  require(keep_from < n, "simulate.keep_from", "warm-up covers the whole record");
  ResponseRecord r;
  r.dt = s.dt;
  r.first_sample = keep_from;
  r.excitation = excitation_trace(e, n, s.dt);
  const auto kept = static_cast<Eigen::Index>(n - keep_from);
  r.displacement.resize(dofs, kept);
  r.velocity.resize(dofs, kept);
  r.acceleration.resize(dofs, kept);

  std::size_t switch_at = n;
  StructureSpec damaged_spec;
  ModalBasis damaged;
  if (damage) {
    damaged_spec = apply_damage(s, *damage);
    require(damage->onset < s.duration, "damage.onset", "damage onset after end of record");
    damaged = eigen_modes(damaged_spec);
    switch_at = static_cast<std::size_t>(std::ceil(damage->onset / s.dt - 1e-9));
    r.damage = damage;
    r.damage_sample = switch_at;
  }

  const Eigen::VectorXd dir = input_direction(s, e.target);
  Eigen::VectorXd inv_mass(dofs);
  for (Eigen::Index i = 0; i < dofs; ++i) inv_mass(i) = 1.0 / s.masses[i];
  const Eigen::VectorXd direct = inv_mass.cwiseProduct(dir) +
                                 (e.target == 0 ? Eigen::VectorXd::Ones(dofs)
                                                : Eigen::VectorXd::Zero(dofs));

  std::optional<ModalPropagator> prop;
  prop.emplace(s, healthy, dir);
  if (initial_state) {
    require(initial_state->size() == 2 * dofs, "simulate.initial_state",
            "initial state must hold displacement and velocity");
    prop->set_physical(initial_state->head(dofs), initial_state->tail(dofs));
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (k == switch_at) {
      ModalPropagator next(damaged_spec, damaged, dir);
      next.adopt_adiabatic(*prop);
      prop.emplace(next);
    }
    const double u = r.excitation(static_cast<Eigen::Index>(k));
    if (k >= keep_from) {
      const auto col = static_cast<Eigen::Index>(k - keep_from);
      r.displacement.col(col) = prop->displacement();
      r.velocity.col(col) = prop->velocity();
      r.acceleration.col(col) = prop->elastic_acceleration() + direct * u;
    }
    prop->step(u);
  }
  return r;
}

}  // namespace dshm
