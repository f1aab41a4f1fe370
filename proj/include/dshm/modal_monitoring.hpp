#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dshm/error.hpp"
#include "dshm/sensing_faults.hpp"

namespace dshm {

struct ModalConfig {
  std::size_t averages = 10;  // n_a segments with 50% overlap per window
  std::size_t max_modes = 3;
  double band_lo_hz = 0.0;  // 0: two bins above DC
  double band_hi_hz = 0.0;  // 0: Nyquist
  double peak_factor = 10.0;  // peak must exceed this multiple of the median in band
  double cluster_bins = 2.0;  // clustering tolerance in bin widths
  double threshold_sigma = 5.0;
  double sigma_floor = 0.05;  // fraction of the mode's mean |curvature| used as a std floor
  std::size_t min_damage_span = 2;
  double spacing = 1.0;  // distance between sensor locations
  double weak_link = 0.15;  // sign links through a component below this fraction are not trusted

  std::size_t segment(std::size_t window) const {
    return static_cast<std::size_t>(std::floor(static_cast<double>(window) /
                                               (static_cast<double>(averages) / 2.0 + 0.5)));
  }
};

struct Spectrum {
  double df = 0.0;
  Eigen::VectorXd psd;                // one-sided auto spectrum
  Eigen::VectorXcd cross;             // against a reference channel when requested
  std::size_t segments = 0;

  double frequency(Eigen::Index k) const { return df * static_cast<double>(k); }
};

// Welch average with a Hann window and 50% overlap; the cross spectrum is
// conj(X) * Y of the reference against this channel.
inline Spectrum welch(const Eigen::VectorXd& x, double dt, std::size_t segment,
                      const Eigen::VectorXd* reference = nullptr) {
  require(segment >= 8, "modal.segment", "segment too short for a spectrum");
  require(static_cast<std::size_t>(x.size()) >= segment, "modal.segment",
          "window shorter than one segment");
  require(!reference || reference->size() == x.size(), "modal.segment",
          "reference window length differs");
  const std::size_t hop = segment / 2;
  const std::size_t bins = segment / 2 + 1;
  std::vector<double> w(segment);
  double wss = 0.0;
  for (std::size_t i = 0; i < segment; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(segment));
    wss += w[i] * w[i];
  }
  Spectrum s;
  s.df = 1.0 / (static_cast<double>(segment) * dt);
  s.psd = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bins));
  if (reference) s.cross = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(bins));
  Eigen::FFT<double> fft;
  std::vector<double> seg(segment), rseg(segment);
  std::vector<std::complex<double>> fx, fr;
  for (std::size_t start = 0; start + segment <= static_cast<std::size_t>(x.size()); start += hop) {
    double mx = 0.0, mr = 0.0;
    for (std::size_t i = 0; i < segment; ++i) {
      mx += x(static_cast<Eigen::Index>(start + i));
      if (reference) mr += (*reference)(static_cast<Eigen::Index>(start + i));
    }
    mx /= static_cast<double>(segment);
    mr /= static_cast<double>(segment);
    for (std::size_t i = 0; i < segment; ++i) {
      seg[i] = w[i] * (x(static_cast<Eigen::Index>(start + i)) - mx);
      if (reference) rseg[i] = w[i] * ((*reference)(static_cast<Eigen::Index>(start + i)) - mr);
    }
    fft.fwd(fx, seg);
    if (reference) fft.fwd(fr, rseg);
    for (std::size_t k = 0; k < bins; ++k) {
      s.psd(static_cast<Eigen::Index>(k)) += std::norm(fx[k]);
      if (reference) s.cross(static_cast<Eigen::Index>(k)) += std::conj(fr[k]) * fx[k];
    }
    ++s.segments;
  }
  // density scaling, doubled for the one-sided spectrum except DC and Nyquist
  const double scale = dt / (wss * static_cast<double>(s.segments));
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = (k == 0 || 2 * k == segment) ? 1.0 : 2.0;
    s.psd(static_cast<Eigen::Index>(k)) *= scale * f;
    if (reference) s.cross(static_cast<Eigen::Index>(k)) *= scale * f;
  }
  return s;
}

struct LocalMode {
  double frequency_hz = 0.0;
  double amplitude = 0.0;
  int sign = 1;  // relative to the reference neighbor
  bool peak = true;  // false: read at a hinted frequency without a local peak
};

struct LocalModeEstimate {
  std::size_t sensor_id = 0;
  std::size_t round = 0;
  std::size_t reference_id = 0;  // neighbor used for the sign, 0 if none
  std::vector<LocalMode> modes;  // ascending frequency
  bool empty = false;            // no spectral peak above the noise floor
  double bin_hz = 0.0;
};

namespace detail {
// Peak frequency refined by a parabola through the log spectrum.
inline double refine_peak(const Spectrum& s, Eigen::Index k) {
  if (k <= 0 || k + 1 >= s.psd.size()) return s.frequency(k);
  const double a = std::log(std::max(s.psd(k - 1), 1e-300));
  const double b = std::log(std::max(s.psd(k), 1e-300));
  const double c = std::log(std::max(s.psd(k + 1), 1e-300));
  const double den = a - 2.0 * b + c;
  const double shift = den < 0.0 ? 0.5 * (a - c) / den : 0.0;
  return s.df * (static_cast<double>(k) + std::clamp(shift, -0.5, 0.5));
}

inline LocalMode read_mode(const Spectrum& s, Eigen::Index k, bool with_sign, bool peak) {
  LocalMode m;
  const Eigen::Index lo = std::max<Eigen::Index>(0, k - 1), hi = std::min<Eigen::Index>(s.psd.size() - 1, k + 1);
  m.amplitude = std::sqrt(s.psd.segment(lo, hi - lo + 1).sum() * s.df);
  if (with_sign) {
    const double re = s.cross.segment(lo, hi - lo + 1).sum().real();
    m.sign = re < 0.0 ? -1 : 1;
  }
  m.frequency_hz = peak ? refine_peak(s, k) : s.frequency(k);
  m.peak = peak;
  return m;
}
}  // namespace detail

// Peaks of the averaged spectrum. With `hints` (baseline frequencies) one
// mode is read near each hint; otherwise the strongest peaks are kept.
inline LocalModeEstimate extract_local_modes(const SignalWindow& own, const SignalWindow* reference,
                                             const ModalConfig& cfg,
                                             const std::vector<double>* hints = nullptr) {
  LocalModeEstimate out;
  out.sensor_id = own.sensor_id;
  out.round = own.round;
  if (reference) out.reference_id = reference->sensor_id;
  const std::size_t seg = cfg.segment(static_cast<std::size_t>(own.samples.size()));
  const double mean = own.samples.mean();
  const double var = (own.samples.array() - mean).square().mean();
  if (!(var > 1e-20 * std::max(1e-300, mean * mean))) {
    out.empty = true;  // constant channel
    return out;
  }
  const Spectrum s = welch(own.samples, own.dt, seg, reference ? &reference->samples : nullptr);
  out.bin_hz = s.df;
  const Eigen::Index n = s.psd.size();
  const auto k_lo = std::max<Eigen::Index>(
      2, static_cast<Eigen::Index>(std::ceil(cfg.band_lo_hz / s.df)));
  const Eigen::Index k_hi = cfg.band_hi_hz > 0.0
                                ? std::min<Eigen::Index>(n - 2, static_cast<Eigen::Index>(cfg.band_hi_hz / s.df))
                                : n - 2;
  require(k_hi > k_lo, "modal.band", "analysis band holds no bins");
  std::vector<double> band(s.psd.data() + k_lo, s.psd.data() + k_hi + 1);
  std::nth_element(band.begin(), band.begin() + static_cast<long>(band.size() / 2), band.end());
  const double floor = band[band.size() / 2];
  std::vector<Eigen::Index> peaks;
  for (Eigen::Index k = k_lo; k <= k_hi; ++k)
    if (s.psd(k) > cfg.peak_factor * floor && s.psd(k) >= s.psd(k - 1) && s.psd(k) > s.psd(k + 1))
      peaks.push_back(k);
  if (peaks.empty() || !(s.psd.maxCoeff() > 0.0)) {
    out.empty = true;
    return out;
  }
  const bool sign = reference != nullptr;
  if (hints) {
    const double tol = cfg.cluster_bins * s.df;
    for (double f : *hints) {
      Eigen::Index best = -1;
      for (Eigen::Index k : peaks)
        if (std::abs(s.frequency(k) - f) <= tol && (best < 0 || s.psd(k) > s.psd(best))) best = k;
      if (best >= 0) {
        out.modes.push_back(detail::read_mode(s, best, sign, true));
      } else {
        const auto k = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(f / s.df)), 1, n - 2);
        out.modes.push_back(detail::read_mode(s, k, sign, false));
      }
    }
    return out;
  }
  std::sort(peaks.begin(), peaks.end(), [&](Eigen::Index a, Eigen::Index b) { return s.psd(a) > s.psd(b); });
  if (peaks.size() > cfg.max_modes) peaks.resize(cfg.max_modes);
  std::sort(peaks.begin(), peaks.end());
  for (Eigen::Index k : peaks) out.modes.push_back(detail::read_mode(s, k, sign, true));
  return out;
}

struct GlobalModeShape {
  std::size_t round = 0;
  std::vector<std::size_t> locations;  // sensor ids in structural order
  std::vector<double> frequencies;     // per mode
  Eigen::MatrixXd shapes;              // locations x modes, NaN where missing
  std::vector<std::vector<bool>> missing;  // [mode][location]
  std::vector<std::string> diagnostics;
  double tolerance_hz = 0.0;

  std::size_t modes() const { return frequencies.size(); }
};

inline void normalize(GlobalModeShape& g) {
  for (Eigen::Index j = 0; j < g.shapes.cols(); ++j) {
    double peak = 0.0;
    for (Eigen::Index i = 0; i < g.shapes.rows(); ++i)
      if (std::isfinite(g.shapes(i, j))) peak = std::max(peak, std::abs(g.shapes(i, j)));
    if (peak > 0.0)
      for (Eigen::Index i = 0; i < g.shapes.rows(); ++i)
        if (std::isfinite(g.shapes(i, j))) g.shapes(i, j) /= peak;
  }
}

// BS-side assembly. Frequencies are clustered across nodes, a cluster needs
// reports from more than half of the reporting nodes, and signs are chained
// from each node's reference neighbor in ascending id order.
inline GlobalModeShape assemble_global(const std::vector<LocalModeEstimate>& estimates,
                                       const std::vector<std::size_t>& locations, double tolerance_hz,
                                       std::size_t max_modes = 3, double weak_link = 0.15) {
  require(estimates.size() >= 2, "modal.assemble", "need at least two local estimates");
  GlobalModeShape g;
  g.locations = locations;
  g.round = estimates.front().round;
  g.tolerance_hz = tolerance_hz;
  struct Entry {
    double f;
    std::size_t est;
    std::size_t mode;
  };
  std::vector<Entry> all;
  std::size_t reporting = 0;
  for (std::size_t e = 0; e < estimates.size(); ++e) {
    if (estimates[e].empty) continue;
    ++reporting;
    for (std::size_t m = 0; m < estimates[e].modes.size(); ++m)
      all.push_back({estimates[e].modes[m].frequency_hz, e, m});
  }
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.f < b.f; });
  std::vector<std::vector<Entry>> clusters;
  for (const Entry& x : all) {
    if (clusters.empty() || x.f - clusters.back().front().f > tolerance_hz) clusters.push_back({});
    clusters.back().push_back(x);
  }
  std::vector<std::vector<Entry>> kept;
  for (auto& c : clusters) {
    // only genuine spectral peaks count toward quorum; hinted reads ride along
    std::set<std::size_t> nodes;
    for (const Entry& x : c)
      if (estimates[x.est].modes[x.mode].peak) nodes.insert(x.est);
    double mean = 0.0;
    for (const Entry& x : c) mean += x.f;
    mean /= static_cast<double>(c.size());
    if (2 * nodes.size() > reporting) {
      kept.push_back(c);
    } else {
      g.diagnostics.push_back("mode near " + std::to_string(mean) + " Hz reported by " +
                              std::to_string(nodes.size()) + " of " + std::to_string(reporting) +
                              " nodes, below quorum");
    }
  }
  if (kept.size() > max_modes) kept.resize(max_modes);

  std::map<std::size_t, Eigen::Index> row;
  for (std::size_t i = 0; i < locations.size(); ++i) row[locations[i]] = static_cast<Eigen::Index>(i);
  g.shapes = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(locations.size()),
                                       static_cast<Eigen::Index>(kept.size()),
                                       std::numeric_limits<double>::quiet_NaN());
  g.missing.assign(kept.size(), std::vector<bool>(locations.size(), true));
  for (std::size_t j = 0; j < kept.size(); ++j) {
    double fsum = 0.0;
    // one entry per node: the one closest to the cluster mean
    std::map<std::size_t, const Entry*> pick;
    double mean = 0.0;
    for (const Entry& x : kept[j]) mean += x.f;
    mean /= static_cast<double>(kept[j].size());
    for (const Entry& x : kept[j]) {
      auto it = pick.find(estimates[x.est].sensor_id);
      if (it == pick.end() || std::abs(x.f - mean) < std::abs(it->second->f - mean))
        pick[estimates[x.est].sensor_id] = &x;
    }
    double top = 0.0;
    for (const auto& [id, x] : pick) top = std::max(top, estimates[x->est].modes[x->mode].amplitude);
    // chain signs through trusted links; a weak link starts a new segment
    std::map<std::size_t, int> sign;
    std::map<std::size_t, std::size_t> segment;
    for (const auto& [id, x] : pick) {  // ascending sensor id
      const LocalModeEstimate& est = estimates[x->est];
      const LocalMode& m = est.modes[x->mode];
      fsum += x->f;
      auto ref = pick.find(est.reference_id);
      const bool linked = ref != pick.end() && sign.count(est.reference_id) &&
                          std::min(m.amplitude, estimates[ref->second->est].modes[ref->second->mode].amplitude) >=
                              weak_link * top;
      sign[id] = linked ? sign[est.reference_id] * m.sign : 1;
      segment[id] = linked ? segment[est.reference_id] : id;
    }
    // orient each later segment for the smoothest continuation along the locations
    std::map<std::size_t, int> flip;
    std::vector<std::pair<double, double>> placed;  // (position, value)
    for (std::size_t pos = 0; pos < locations.size(); ++pos) {
      const std::size_t id = locations[pos];
      auto x = pick.find(id);
      if (x == pick.end()) continue;
      const double a = estimates[x->second->est].modes[x->second->mode].amplitude * sign[id];
      const std::size_t seg = segment[id];
      if (!flip.count(seg)) {
        int f = 1;
        if (!placed.empty()) {
          const auto [x1, v1] = placed.back();
          double guess = v1;
          if (placed.size() >= 2) {
            const auto [x0, v0] = placed[placed.size() - 2];
            guess = v1 + (static_cast<double>(pos) - x1) * (v1 - v0) / (x1 - x0);
          }
          f = std::abs(a - guess) <= std::abs(-a - guess) ? 1 : -1;
        }
        flip[seg] = f;
      }
      placed.emplace_back(static_cast<double>(pos), a * flip[seg]);
      const double value = placed.back().second;
      const auto r = row.find(id);
      g.shapes(r->second, static_cast<Eigen::Index>(j)) = value;
      g.missing[j][static_cast<std::size_t>(r->second)] = false;
    }
    g.frequencies.push_back(fsum / static_cast<double>(pick.size()));
  }
  normalize(g);
  return g;
}

inline double modal_assurance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size(), "modal.mac", "mode vectors differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a(i)) || !std::isfinite(b(i))) continue;
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  return aa > 0.0 && bb > 0.0 ? ab * ab / (aa * bb) : 0.0;
}

struct Curvature {
  Eigen::VectorXd values;      // NaN where flagged
  std::vector<bool> flagged;   // touches a missing location
};

// Second difference along the locations; endpoints use the one-sided stencil.
inline Curvature curvature(const Eigen::VectorXd& phi, double h = 1.0) {
  const auto n = phi.size();
  require(n >= 3, "modal.curvature", "curvature needs at least 3 locations");
  bool run3 = false;
  for (Eigen::Index i = 0; i + 2 < n; ++i)
    run3 = run3 || (std::isfinite(phi(i)) && std::isfinite(phi(i + 1)) && std::isfinite(phi(i + 2)));
  require(run3, "modal.curvature", "curvature needs 3 consecutive reported locations");
  Curvature c;
  c.values = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  c.flagged.assign(static_cast<std::size_t>(n), true);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index mid = std::clamp<Eigen::Index>(i, 1, n - 2);
    const double a = phi(mid - 1), b = phi(mid), d = phi(mid + 1);
    if (!std::isfinite(phi(i)) || !std::isfinite(a) || !std::isfinite(b) || !std::isfinite(d)) continue;
    c.values(i) = (a - 2.0 * b + d) / (h * h);
    c.flagged[static_cast<std::size_t>(i)] = false;
  }
  return c;
}

// Fault-free, damage-free reference: mean shapes and per-location curvature
// statistics over the training rounds.
struct ModalBaseline {
  std::vector<std::size_t> locations;
  std::vector<double> frequencies;
  Eigen::MatrixXd shapes;          // locations x modes
  Eigen::MatrixXd curvature_mean;  // locations x modes
  Eigen::MatrixXd curvature_std;
  std::size_t rounds = 0;
};

// Flip b so it points the same way as a over their common entries.
inline void align_sign(const Eigen::VectorXd& a, Eigen::Ref<Eigen::VectorXd> b) {
  double dot = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::isfinite(a(i)) && std::isfinite(b(i))) dot += a(i) * b(i);
  if (dot < 0.0) b = -b;
}

namespace detail {
// column of g holding the mode nearest to f; falls back to the same index
// when g carries no tolerance (hand-built shapes)
inline Eigen::Index match_mode(const GlobalModeShape& g, std::size_t index, double f) {
  if (!(g.tolerance_hz > 0.0)) return index < g.modes() ? static_cast<Eigen::Index>(index) : -1;
  Eigen::Index best = -1;
  for (std::size_t j = 0; j < g.modes(); ++j)
    if (std::abs(g.frequencies[j] - f) <= g.tolerance_hz &&
        (best < 0 || std::abs(g.frequencies[j] - f) < std::abs(g.frequencies[static_cast<std::size_t>(best)] - f)))
      best = static_cast<Eigen::Index>(j);
  return best;
}
}  // namespace detail

inline ModalBaseline train_baseline(const std::vector<GlobalModeShape>& rounds, const ModalConfig& cfg) {
  require(rounds.size() >= 2, "modal.baseline", "baseline needs at least two rounds");
  ModalBaseline b;
  b.locations = rounds.front().locations;
  // a mode enters the baseline only when every training round resolved it
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < rounds.front().modes(); ++j) {
    bool everywhere = true;
    for (const auto& r : rounds)
      everywhere = everywhere && detail::match_mode(r, j, rounds.front().frequencies[j]) >= 0;
    if (everywhere) keep.push_back(j);
  }
  require(!keep.empty(), "modal.baseline", "no mode present in every training round");
  const std::size_t modes = keep.size();
  const auto n = static_cast<Eigen::Index>(b.locations.size());
  const auto k = static_cast<Eigen::Index>(modes);
  b.shapes = Eigen::MatrixXd::Zero(n, k);
  b.frequencies.assign(modes, 0.0);
  Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(n, k);
  std::vector<Eigen::MatrixXd> aligned;
  for (const auto& r : rounds) {
    require(r.locations == b.locations, "modal.baseline", "training rounds cover different locations");
    Eigen::MatrixXd s(n, k);
    for (std::size_t j = 0; j < modes; ++j) {
      const auto m = detail::match_mode(r, keep[j], rounds.front().frequencies[keep[j]]);
      s.col(static_cast<Eigen::Index>(j)) = r.shapes.col(m);
      b.frequencies[j] += r.frequencies[static_cast<std::size_t>(m)] / static_cast<double>(rounds.size());
    }
    if (!aligned.empty())
      for (Eigen::Index j = 0; j < k; ++j) align_sign(aligned.front().col(j), s.col(j));
    aligned.push_back(s);
  }
  for (const auto& s : aligned)
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (std::isfinite(s(i, j))) {
          b.shapes(i, j) += s(i, j);
          cnt(i, j) += 1.0;
        }
  b.shapes = b.shapes.cwiseQuotient(cnt);
  b.curvature_mean = Eigen::MatrixXd::Zero(n, k);
  b.curvature_std = Eigen::MatrixXd::Zero(n, k);
  Eigen::MatrixXd c2 = Eigen::MatrixXd::Zero(n, k), cc = Eigen::MatrixXd::Zero(n, k);
  for (const auto& s : aligned)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Curvature c = curvature(s.col(j), cfg.spacing);
      for (Eigen::Index i = 0; i < n; ++i)
        if (!c.flagged[static_cast<std::size_t>(i)]) {
          b.curvature_mean(i, j) += c.values(i);
          c2(i, j) += c.values(i) * c.values(i);
          cc(i, j) += 1.0;
        }
    }
  for (Eigen::Index j = 0; j < k; ++j) {
    double scale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (cc(i, j) == 0.0) {
        b.curvature_mean(i, j) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      b.curvature_mean(i, j) /= cc(i, j);
      const double var = cc(i, j) > 1.0
                             ? (c2(i, j) - cc(i, j) * b.curvature_mean(i, j) * b.curvature_mean(i, j)) /
                                   (cc(i, j) - 1.0)
                             : 0.0;
      b.curvature_std(i, j) = std::sqrt(std::max(var, 0.0));
      scale += std::abs(b.curvature_mean(i, j)) / static_cast<double>(n);
    }
    // seven-odd rounds give a rough std per location; the median over
    // locations acts as a pooled floor
    std::vector<double> col;
    for (Eigen::Index i = 0; i < n; ++i)
      if (cc(i, j) > 1.0) col.push_back(b.curvature_std(i, j));
    double pooled = 0.0;
    if (!col.empty()) {
      std::nth_element(col.begin(), col.begin() + static_cast<long>(col.size() / 2), col.end());
      pooled = col[col.size() / 2];
    }
    for (Eigen::Index i = 0; i < n; ++i)
      b.curvature_std(i, j) = std::max({b.curvature_std(i, j), pooled, cfg.sigma_floor * scale});
  }
  b.rounds = rounds.size();
  return b;
}

struct DamageReport {
  std::size_t round = 0;
  Eigen::VectorXd score;               // max over modes of |deviation| / std, NaN if unscored
  std::vector<bool> deviating;
  std::vector<std::size_t> damage;     // sensor ids at the peak of each damage cluster
  std::vector<std::size_t> fault_only; // flagged nodes not inside a damage cluster
  std::size_t peak = 0;                // sensor id with the largest score
};

inline DamageReport diagnose(const GlobalModeShape& current, const ModalBaseline& baseline,
                             const std::set<std::size_t>& faulty, const ModalConfig& cfg) {
  require(baseline.rounds > 0, "modal.baseline", "diagnosis needs a trained baseline");
  require(current.locations == baseline.locations, "modal.baseline",
          "current mode shape covers different locations than the baseline");
  const auto n = static_cast<Eigen::Index>(current.locations.size());
  const auto k = baseline.shapes.cols();
  DamageReport r;
  r.round = current.round;
  r.score = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto m = detail::match_mode(current, static_cast<std::size_t>(j), baseline.frequencies[static_cast<std::size_t>(j)]);
    if (m < 0) continue;  // mode not resolved this round
    Eigen::VectorXd phi = current.shapes.col(m);
    align_sign(baseline.shapes.col(j), phi);
    const Curvature c = curvature(phi, cfg.spacing);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (c.flagged[static_cast<std::size_t>(i)] || !std::isfinite(baseline.curvature_mean(i, j))) continue;
      const double z = std::abs(c.values(i) - baseline.curvature_mean(i, j)) / baseline.curvature_std(i, j);
      r.score(i) = std::isfinite(r.score(i)) ? std::max(r.score(i), z) : z;
    }
  }
  r.deviating.assign(static_cast<std::size_t>(n), false);
  double best = -1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(r.score(i))) continue;
    r.deviating[static_cast<std::size_t>(i)] = r.score(i) > cfg.threshold_sigma;
    if (r.score(i) > best) {
      best = r.score(i);
      r.peak = current.locations[static_cast<std::size_t>(i)];
    }
  }
  std::set<std::size_t> in_damage;
  for (Eigen::Index i = 0; i < n;) {
    if (!r.deviating[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    Eigen::Index j = i;
    while (j < n && r.deviating[static_cast<std::size_t>(j)]) ++j;
    // endpoint entries reuse the neighboring stencil, so count distinct stencil centers
    std::set<Eigen::Index> centers;
    for (Eigen::Index t = i; t < j; ++t) centers.insert(std::clamp<Eigen::Index>(t, 1, n - 2));
    if (centers.size() >= cfg.min_damage_span) {
      Eigen::Index top = i;
      for (Eigen::Index t = i; t < j; ++t) {
        if (r.score(t) > r.score(top)) top = t;
        in_damage.insert(current.locations[static_cast<std::size_t>(t)]);
      }
      r.damage.push_back(current.locations[static_cast<std::size_t>(top)]);
    }
    i = j;
  }
  for (std::size_t id : faulty)
    if (!in_damage.count(id)) r.fault_only.push_back(id);
  return r;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t decisions() const { return tp + fp + tn + fn; }
  double accuracy() const { return decisions() ? static_cast<double>(tp + tn) / decisions() : 1.0; }
  double fpr() const { return fp + tn ? static_cast<double>(fp) / (fp + tn) : 0.0; }
  double fnr() const { return tp + fn ? static_cast<double>(fn) / (tp + fn) : 0.0; }
  double ability() const { return 1.0 - (fpr() + fnr()); }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

// Per-node verdicts against the truth set.
inline Confusion score_faults(const std::vector<std::size_t>& nodes, const std::set<std::size_t>& flagged,
                              const std::set<std::size_t>& truth) {
  Confusion c;
  for (std::size_t id : nodes) {
    const bool f = flagged.count(id), t = truth.count(id);
    if (f && t) ++c.tp;
    else if (f) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Damage locations scored with a +-tolerance: a true story counts as found
// when any prediction lies within tolerance; predictions outside every
// tolerance region are false positives over the locations outside them.
inline Confusion score_damage(const std::vector<std::size_t>& locations,
                              const std::vector<std::size_t>& predicted,
                              const std::set<std::size_t>& truth, std::size_t tolerance = 1) {
  auto near = [&](std::size_t a, std::size_t b) {
    return (a > b ? a - b : b - a) <= tolerance;
  };
  Confusion c;
  for (std::size_t t : truth) {
    bool hit = false;
    for (std::size_t p : predicted) hit = hit || near(p, t);
    hit ? ++c.tp : ++c.fn;
  }
  const std::set<std::size_t> pred(predicted.begin(), predicted.end());
  for (std::size_t loc : locations) {
    bool inside = false;
    for (std::size_t t : truth) inside = inside || near(loc, t);
    if (inside) continue;
    pred.count(loc) ? ++c.fp : ++c.tn;
  }
  return c;
}

struct DependabilityRow {
  std::size_t round = 0;
  Confusion faults;
  Confusion damage;
};

struct DependabilityReport {
  std::vector<DependabilityRow> rows;

  Confusion fault_totals() const {
    Confusion c;
    for (const auto& r : rows) c += r.faults;
    return c;
  }
  double detection_accuracy() const { return fault_totals().accuracy(); }
  // mean per-round event detection ability on damage verdicts
  double event_ability() const {
    if (rows.empty()) return 1.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.damage.ability();
    return s / static_cast<double>(rows.size());
  }
};

}  // namespace dshm
