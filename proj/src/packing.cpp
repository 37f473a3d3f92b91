// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/packing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "chunkflow/error.hpp"
#include "chunkflow/rng.hpp"

namespace chunkflow {

InterleavedSequence build_interleaved(const RolloutRecord& rollout, double u) {
  if (rollout.chunks.empty()) fail(ErrorKind::kLayout, "interleaved sequence needs a non-empty rollout");
  const TimestepGrid grid(rollout.grid);
  const std::size_t k = grid.index_of(u);
  if (k == 0 || k == grid.size())
    fail(ErrorKind::kLevel, "level " + std::to_string(u) + " is not one of tau_1 .. tau_{K-1}");
  const std::size_t T = rollout.chunks.size();
  InterleavedSequence seq;
  seq.u = u;
  seq.source = rollout.id;
  std::vector<Tensor> rows;
  for (std::size_t t = 0; t < T; ++t) {
    const ChunkTrajectory& c = rollout.chunks[t];
    if (c.states.size() != grid.size()) fail(ErrorKind::kShape, "rollout trajectory length differs from grid");
    const Tensor& z = c.states[k - 1];
    seq.layout.push({t, BlockKind::kNoisy, z.rows(), u});
    rows.push_back(z);
    if (t + 1 < T) {
      seq.layout.push({t, BlockKind::kClean, c.endpoint.rows(), 0.0});
      rows.push_back(c.endpoint);
    }
  }
  seq.tokens = concat_rows(rows);
  seq.mask = build_mask(MaskParadigm::kInterleaved, seq.layout);
  return seq;
}

UnpackedInterleaved unpack_interleaved(const InterleavedSequence& seq) {
  UnpackedInterleaved out;
  for (std::size_t b = 0; b < seq.layout.num_blocks(); ++b) {
    const Block& blk = seq.layout.blocks()[b];
    Tensor rows = slice_rows(seq.tokens, seq.layout.first_token(b), blk.num_tokens);
    (blk.kind == BlockKind::kNoisy ? out.noisy : out.clean).push_back(std::move(rows));
  }
  return out;
}

// ---------------------------------------------------------------------------

WeightingFunction WeightingFunction::shift(double alpha) {
  WeightingFunction g;
  g.family = WeightFamily::kShift;
  g.alpha = alpha;
  return g;
}

WeightingFunction WeightingFunction::mode(double s) {
  WeightingFunction g;
  g.family = WeightFamily::kMode;
  g.mode_scale = s;
  return g;
}

WeightingFunction WeightingFunction::logit_normal(double mu, double sigma) {
  WeightingFunction g;
  g.family = WeightFamily::kLogitNormal;
  g.mu = mu;
  g.sigma = sigma;
  return g;
}

std::string WeightingFunction::describe() const {
  std::ostringstream os;
  switch (family) {
    case WeightFamily::kShift: os << "Shift(alpha=" << alpha << ")"; break;
    case WeightFamily::kMode: os << "Mode(s=" << mode_scale << ")"; break;
    case WeightFamily::kLogitNormal: os << "LogitNormal(mu=" << mu << ", sigma=" << sigma << ")"; break;
  }
  return os.str();
}

const std::vector<std::string>& weighting_preset_names() {
  static const std::vector<std::string> names = {"mode_m054", "mode_081", "logit_normal",
                                                 "shift_1",   "shift_0",  "shift_m1"};
  return names;
}

WeightingFunction weighting_preset(const std::string& name) {
  if (name == "mode_m054") return WeightingFunction::mode(-0.54);
  if (name == "mode_081") return WeightingFunction::mode(0.81);
  if (name == "logit_normal") return WeightingFunction::logit_normal(0.0, 1.0);
  if (name == "shift_1") return WeightingFunction::shift(1.0);
  if (name == "shift_0") return WeightingFunction::shift(0.0);
  if (name == "shift_m1") return WeightingFunction::shift(-1.0);
  fail(ErrorKind::kConfig, "unknown weighting preset '" + name + "'");
}

double shift_map(double alpha, double p) { return alpha * p / (1.0 + (alpha - 1.0) * p); }

double mode_transform(double u, double s) {
  const double c = std::cos(0.5 * std::numbers::pi * u);
  return 1.0 - u - s * (c * c - 1.0 + u);
}

std::vector<double> participation_scores(std::span<const std::size_t> m) {
  if (m.empty()) fail(ErrorKind::kDomain, "participation scores need at least one chunk");
  double total = 0.0;
  for (std::size_t v : m) {
    if (v == 0) fail(ErrorKind::kDomain, "chunk element counts must be positive");
    total += static_cast<double>(v);
  }
  std::vector<double> p(m.size());
  double tail = 0.0;
  for (std::size_t j = m.size(); j-- > 0;) {
    tail += static_cast<double>(m[j]);
    p[j] = tail / total;
  }
  p[0] = 1.0;
  return p;
}

namespace {

// Interval of chunk j is [p_{j+1}, p_j) with p_{J+1} = 0; the top chunk also
// owns t = 1.
std::size_t interval_of(std::span<const double> p, double t) {
  for (std::size_t j = p.size(); j-- > 0;) {
    const double lo = j + 1 < p.size() ? p[j + 1] : 0.0;
    if (t >= lo && (t < p[j] || j == 0)) return j;
  }
  return 0;
}

std::vector<double> monte_carlo_mass(const WeightingFunction& g, std::span<const double> p) {
  if (g.mc_samples == 0) fail(ErrorKind::kWeighting, "Monte Carlo weighting needs samples");
  RngStream stream(g.mc_seed, 0x3E16);
  std::vector<double> counts(p.size(), 0.0);
  const std::vector<double> draws =
      g.family == WeightFamily::kMode ? stream.uniforms(g.mc_samples) : stream.normals(g.mc_samples);
  for (double d : draws) {
    double t;
    if (g.family == WeightFamily::kMode) {
      t = mode_transform(d, g.mode_scale);
    } else {
      t = 1.0 / (1.0 + std::exp(-(g.mu + g.sigma * d)));
    }
    if (!(t >= 0.0 && t <= 1.0)) continue;
    counts[interval_of(p, t)] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(g.mc_samples);
  return counts;
}

// Mass of t = pi_alpha(v), v ~ U(0, 1), over [lo, hi]: pi_alpha^{-1}(hi) - pi_alpha^{-1}(lo).
double shift_inverse(double alpha, double t) { return t / (alpha - (alpha - 1.0) * t); }

}  // namespace

std::vector<double> raw_weights(const WeightingFunction& g, std::span<const double> p,
                                std::span<const std::size_t> m) {
  if (p.size() != m.size() || p.empty()) fail(ErrorKind::kWeighting, "participation scores and counts differ");
  const std::size_t J = p.size();
  std::vector<double> w(J, 1.0);
  switch (g.family) {
    case WeightFamily::kShift: {
      const double a = std::abs(g.alpha);
      if (g.alpha == 0.0) break;
      if (g.shift_reading == ShiftReading::kValue) {
        for (std::size_t j = 0; j < J; ++j) w[j] = shift_map(a, g.alpha > 0 ? p[j] : p[J - 1] / p[j]);
      } else {
        for (std::size_t j = 0; j < J; ++j) {
          double lo = j + 1 < J ? p[j + 1] : 0.0, hi = p[j];
          if (g.alpha < 0) {
            // reversed coordinate: later chunks own the top of the interval
            const double rlo = 1.0 - hi, rhi = 1.0 - lo;
            lo = rlo;
            hi = rhi;
          }
          w[j] = shift_inverse(a, hi) - shift_inverse(a, lo);
        }
      }
      break;
    }
    case WeightFamily::kMode:
    case WeightFamily::kLogitNormal: w = monte_carlo_mass(g, p); break;
  }
  bool any = false;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::kWeighting, g.describe() + " produced a negative raw weight");
    any = any || v > 0.0;
  }
  if (!any) fail(ErrorKind::kWeighting, g.describe() + " assigns zero mass to every chunk");
  return w;
}

std::vector<double> normalize_weights(std::span<const double> raw, std::span<const std::size_t> m) {
  if (raw.size() != m.size()) fail(ErrorKind::kWeighting, "raw weights and counts differ in length");
  double total = 0.0, weighted = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) {
    total += static_cast<double>(m[j]);
    weighted += raw[j] * static_cast<double>(m[j]);
  }
  if (!(weighted > 0.0)) fail(ErrorKind::kWeighting, "sum of w~_j m_j must be positive");
  std::vector<double> w(raw.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = raw[j] * total / weighted;
  return w;
}

ChunkWeights chunk_weights(const WeightingFunction& g, std::span<const std::size_t> m) {
  ChunkWeights cw;
  cw.m.assign(m.begin(), m.end());
  cw.p = participation_scores(m);
  cw.raw = raw_weights(g, cw.p, m);
  cw.w = normalize_weights(cw.raw, m);
  return cw;
}

namespace {
double weight_mass(std::span<const double> w, std::span<const std::size_t> m, std::size_t n) {
  if (w.size() != n || m.size() != n) fail(ErrorKind::kWeighting, "chunk loss, weight and count lengths differ");
  double d = 0.0;
  for (std::size_t j = 0; j < n; ++j) d += w[j] * static_cast<double>(m[j]);
  if (!(d > 0.0)) fail(ErrorKind::kWeighting, "sum of w_j m_j must be positive");
  return d;
}
}  // namespace

double aggregate_chunk_loss(std::span<const double> losses, std::span<const double> w,
                            std::span<const std::size_t> m) {
  const double d = weight_mass(w, m, losses.size());
  double n = 0.0;
  for (std::size_t j = 0; j < losses.size(); ++j) n += w[j] * losses[j];
  return n / d;
}

Var aggregate_chunk_loss(std::span<const Var> losses, std::span<const double> w, std::span<const std::size_t> m) {
  const double d = weight_mass(w, m, losses.size());
  std::vector<double> coef(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) coef[j] = w[j] / d;
  return ad::weighted_sum(losses, coef);
}

}  // namespace chunkflow
