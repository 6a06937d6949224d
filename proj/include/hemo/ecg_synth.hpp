#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Synthetic ECG source: P-QRS-T morphology as a sum of Gaussian bumps,
// programmable rhythm and noise, with exact ground-truth beat annotations.
namespace hemo::ecg {

enum class WaveLabel { P, Q, R, S, T };

struct WaveParams {
  WaveLabel label;
  double amplitude_mv;
  double center_s;  // beat-phase offset from beat onset
  double width_s;   // Gaussian standard deviation, > 0
};

// Default morphology (mV, s). An upright single-lead beat: R at 0.25 s after
// onset, PR = 0.15 s, QT = 0.31 s.
std::vector<WaveParams> default_morphology();

enum class RhythmMode { Normal, Tachycardia, Bradycardia, Irregular };

const char* to_string(RhythmMode mode);
std::optional<RhythmMode> parse_rhythm_mode(std::string_view text);

struct RhythmPlan {
  double base_bpm = 72.0;   // 20..250
  double rr_jitter = 0.0;   // fractional RR spread, >= 0
  RhythmMode mode = RhythmMode::Normal;
  std::uint64_t seed = 1;
};

struct NoiseSpec {
  double baseline_wander_mv = 0.0;
  double baseline_wander_hz = 0.25;
  double powerline_mv = 0.0;
  double powerline_hz = 50.0;
  double white_noise_mv = 0.0;
};

struct BeatTruth {
  double r_time_s;
  double onset_s;
  double pr_s;
  double qt_s;
  RhythmMode label;
};

struct AnnotatedSignal {
  double fs = 0.0;
  std::vector<double> samples_mv;
  std::vector<BeatTruth> truth;

  double duration_s() const { return fs > 0 ? samples_mv.size() / fs : 0.0; }
};

// Voltage of one beat at the given phase: sum of Gaussian components.
double synth_beat(double phase_s, std::span<const WaveParams> waves);

// Renders duration_s of signal at fs. Beat onsets start at 0.1 s and advance
// by plan-driven RR intervals; truth lists the exact R times used.
// Throws std::invalid_argument for fs < 100, negative duration, or invalid
// wave/plan parameters.
AnnotatedSignal generate(double duration_s, double fs, const RhythmPlan& plan,
                         std::span<const WaveParams> waves, const NoiseSpec& noise);

// Variant with a rhythm schedule: entry i applies from time `at_s` onward.
// Entries must be time-sorted with the first at 0.
struct PlanSegment {
  double at_s;
  RhythmPlan plan;
};
AnnotatedSignal generate_scheduled(double duration_s, double fs,
                                   std::span<const PlanSegment> schedule,
                                   std::span<const WaveParams> waves,
                                   const NoiseSpec& noise);

// Returns a plan adjusted so the generated rhythm satisfies the label's
// defining predicate (tachycardia > 100 bpm, bradycardia < 60 bpm,
// irregular jitter >= 0.2). A plan already satisfying it keeps its values.
RhythmPlan inject_anomaly(const RhythmPlan& plan, RhythmMode kind);

}  // namespace hemo::ecg
