#include "hemo/ecg_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace hemo::ecg {

namespace {

constexpr double kFirstOnsetS = 0.1;
constexpr double kMinRrS = 0.24;  // 250 bpm
constexpr double kMaxRrS = 3.0;   // 20 bpm
constexpr double kTailWidths = 8.0;  // beat support cut-off, tail < 1e-13 of amp

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void check_waves(std::span<const WaveParams> waves) {
  double prev_center = -1.0;
  for (const auto& w : waves) {
    if (!(w.width_s > 0.0)) throw std::invalid_argument("wave width must be > 0");
    if (!std::isfinite(w.amplitude_mv)) throw std::invalid_argument("wave amplitude not finite");
    if (w.center_s <= prev_center)
      throw std::invalid_argument("wave centers must be strictly increasing");
    prev_center = w.center_s;
  }
}

void check_plan(const RhythmPlan& plan) {
  if (plan.base_bpm < 20.0 || plan.base_bpm > 250.0)
    throw std::invalid_argument("base_bpm outside 20..250");
  if (plan.rr_jitter < 0.0) throw std::invalid_argument("rr_jitter must be >= 0");
}

double draw_rr(const RhythmPlan& plan, std::mt19937_64& rng) {
  const double base = 60.0 / plan.base_bpm;
  double rr = base;
  if (plan.rr_jitter > 0.0) {
    std::normal_distribution<double> unit(0.0, 1.0);
    const double z = unit(rng);
    if (plan.mode == RhythmMode::Irregular) {
      rr = base * std::exp(plan.rr_jitter * z);  // i.i.d. log-normal RR
    } else {
      rr = base * (1.0 + plan.rr_jitter * z);
    }
  }
  return std::clamp(rr, kMinRrS, kMaxRrS);
}

struct TruthIntervals {
  double r_offset;
  double pr;
  double qt;
};

TruthIntervals truth_intervals(std::span<const WaveParams> waves) {
  TruthIntervals out{0.0, 0.0, 0.0};
  double p_center = 0.0, q_center = 0.0, t_center = 0.0, t_width = 0.0;
  for (const auto& w : waves) {
    switch (w.label) {
      case WaveLabel::P: p_center = w.center_s; break;
      case WaveLabel::Q: q_center = w.center_s; break;
      case WaveLabel::R: out.r_offset = w.center_s; break;
      case WaveLabel::T: t_center = w.center_s; t_width = w.width_s; break;
      case WaveLabel::S: break;
    }
  }
  out.pr = out.r_offset - p_center;
  out.qt = t_center + 2.0 * t_width - q_center;
  return out;
}

}  // namespace

std::vector<WaveParams> default_morphology() {
  return {
      {WaveLabel::P, 0.15, 0.10, 0.025},
      {WaveLabel::Q, -0.15, 0.22, 0.010},
      {WaveLabel::R, 1.20, 0.25, 0.012},
      {WaveLabel::S, -0.25, 0.28, 0.010},
      {WaveLabel::T, 0.30, 0.45, 0.040},
  };
}

const char* to_string(RhythmMode mode) {
  switch (mode) {
    case RhythmMode::Normal: return "normal";
    case RhythmMode::Tachycardia: return "tachycardia";
    case RhythmMode::Bradycardia: return "bradycardia";
    case RhythmMode::Irregular: return "irregular";
  }
  return "unknown";
}

std::optional<RhythmMode> parse_rhythm_mode(std::string_view text) {
  if (text == "normal") return RhythmMode::Normal;
  if (text == "tachycardia") return RhythmMode::Tachycardia;
  if (text == "bradycardia") return RhythmMode::Bradycardia;
  if (text == "irregular") return RhythmMode::Irregular;
  return std::nullopt;
}

double synth_beat(double phase_s, std::span<const WaveParams> waves) {
  double v = 0.0;
  for (const auto& w : waves) {
    const double d = phase_s - w.center_s;
    v += w.amplitude_mv * std::exp(-(d * d) / (2.0 * w.width_s * w.width_s));
  }
  return v;
}

AnnotatedSignal generate(double duration_s, double fs, const RhythmPlan& plan,
                         std::span<const WaveParams> waves, const NoiseSpec& noise) {
  const PlanSegment seg{0.0, plan};
  return generate_scheduled(duration_s, fs, std::span(&seg, 1), waves, noise);
}

AnnotatedSignal generate_scheduled(double duration_s, double fs,
                                   std::span<const PlanSegment> schedule,
                                   std::span<const WaveParams> waves,
                                   const NoiseSpec& noise) {
  if (duration_s < 0.0) throw std::invalid_argument("duration must be >= 0");
  if (fs < 100.0) throw std::invalid_argument("fs must be >= 100 Hz");
  if (schedule.empty() || schedule.front().at_s != 0.0)
    throw std::invalid_argument("schedule must start at t = 0");
  check_waves(waves);
  for (const auto& seg : schedule) check_plan(seg.plan);
  if (noise.baseline_wander_mv < 0.0 || noise.powerline_mv < 0.0 || noise.white_noise_mv < 0.0)
    throw std::invalid_argument("noise amplitudes must be >= 0");

  AnnotatedSignal out;
  out.fs = fs;
  const std::size_t n_samples = static_cast<std::size_t>(std::llround(duration_s * fs));
  out.samples_mv.assign(n_samples, 0.0);

  const TruthIntervals intervals = truth_intervals(waves);

  // Beat support, relative to onset.
  double support_lo = 0.0, support_hi = 0.0;
  for (const auto& w : waves) {
    support_lo = std::min(support_lo, w.center_s - kTailWidths * w.width_s);
    support_hi = std::max(support_hi, w.center_s + kTailWidths * w.width_s);
  }

  // RR draws come from a dedicated stream so beat times do not depend on fs
  // or on the noise configuration.
  std::mt19937_64 rr_rng(schedule.front().plan.seed);

  std::vector<double> onsets;
  std::vector<RhythmMode> labels;
  std::size_t seg_idx = 0;
  double onset = kFirstOnsetS;
  while (onset <= duration_s) {
    while (seg_idx + 1 < schedule.size() && schedule[seg_idx + 1].at_s <= onset) ++seg_idx;
    const RhythmPlan& active = schedule[seg_idx].plan;
    onsets.push_back(onset);
    labels.push_back(active.mode);
    onset += draw_rr(active, rr_rng);
  }

  for (std::size_t b = 0; b < onsets.size(); ++b) {
    const double t_on = onsets[b];
    const double r_time = t_on + intervals.r_offset;
    if (r_time <= duration_s) {
      out.truth.push_back({r_time, t_on, intervals.pr, intervals.qt, labels[b]});
    }
    if (n_samples == 0) continue;
    const auto first = static_cast<std::int64_t>(std::ceil((t_on + support_lo) * fs));
    const auto last = static_cast<std::int64_t>(std::floor((t_on + support_hi) * fs));
    const std::int64_t lo = std::max<std::int64_t>(first, 0);
    const std::int64_t hi = std::min<std::int64_t>(last, static_cast<std::int64_t>(n_samples) - 1);
    for (std::int64_t i = lo; i <= hi; ++i) {
      out.samples_mv[static_cast<std::size_t>(i)] += synth_beat(i / fs - t_on, waves);
    }
  }

  const bool any_noise = noise.baseline_wander_mv > 0.0 || noise.powerline_mv > 0.0 ||
                         noise.white_noise_mv > 0.0;
  if (any_noise && n_samples > 0) {
    std::mt19937_64 noise_rng(splitmix64(schedule.front().plan.seed));
    std::normal_distribution<double> white(0.0, 1.0);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n_samples; ++i) {
      const double t = i / fs;
      double v = 0.0;
      if (noise.baseline_wander_mv > 0.0)
        v += noise.baseline_wander_mv * std::sin(two_pi * noise.baseline_wander_hz * t);
      if (noise.powerline_mv > 0.0)
        v += noise.powerline_mv * std::sin(two_pi * noise.powerline_hz * t);
      if (noise.white_noise_mv > 0.0) v += noise.white_noise_mv * white(noise_rng);
      out.samples_mv[i] += v;
    }
  }

  return out;
}

RhythmPlan inject_anomaly(const RhythmPlan& plan, RhythmMode kind) {
  RhythmPlan out = plan;
  out.mode = kind;
  switch (kind) {
    case RhythmMode::Normal:
      return plan;
    case RhythmMode::Tachycardia:
      if (!(out.base_bpm > 100.0)) out.base_bpm = 130.0;
      break;
    case RhythmMode::Bradycardia:
      if (!(out.base_bpm < 60.0)) out.base_bpm = 45.0;
      break;
    case RhythmMode::Irregular:
      if (!(out.rr_jitter >= 0.2)) out.rr_jitter = 0.25;
      break;
  }
  return out;
}

}  // namespace hemo::ecg
