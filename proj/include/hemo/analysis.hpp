#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemo/adc.hpp"
#include "hemo/wireproto.hpp"

namespace hemo::analysis {

inline constexpr double kBandLowHz = 5.0;
inline constexpr double kBandHighHz = 15.0;
inline constexpr double kIntegrationWindowS = 0.150;
inline constexpr double kRefractoryS = 0.200;
inline constexpr double kApexSearchS = 0.050;
inline constexpr double kSearchbackFactor = 1.66;
inline constexpr double kThresholdBlend = 0.25;  // THR = noise + 0.25 (signal - noise)
inline constexpr double kAdaptAlpha = 0.125;
inline constexpr double kInitSeconds = 2.0;
inline constexpr double kIrregularRmssdRatio = 0.15;
inline constexpr double kTachycardiaBpm = 100.0;
inline constexpr double kBradycardiaBpm = 60.0;
inline constexpr int kRrWindow = 8;

struct BiquadCoeffs {
  double b0, b1, b2;  // numerator, normalized so a0 = 1
  double a1, a2;
};

BiquadCoeffs design_lowpass(double fs, double f0, double q);
BiquadCoeffs design_highpass(double fs, double f0, double q);

class Biquad {
 public:
  explicit Biquad(const BiquadCoeffs& c) : c_(c) {}
  double process(double x) {
    // direct form 2 transposed
    const double y = c_.b0 * x + z1_;
    z1_ = c_.b1 * x - c_.a1 * y + z2_;
    z2_ = c_.b2 * x - c_.a2 * y;
    return y;
  }
  void reset() { z1_ = z2_ = 0.0; }
  const BiquadCoeffs& coeffs() const { return c_; }

 private:
  BiquadCoeffs c_;
  double z1_ = 0.0;
  double z2_ = 0.0;
};

// Causal band-pass with -3 dB points near 5 and 15 Hz: second-order Butterworth
// high-pass at 5 Hz cascaded with second-order Butterworth low-pass at 15 Hz.
class BandpassFilter {
 public:
  explicit BandpassFilter(double fs);
  double process(double x) { return lp_.process(hp_.process(x)); }
  void reset();
  double fs() const { return fs_; }
  double magnitude(double hz) const;
  double phase(double hz) const;
  // group delay in samples, from the numeric phase derivative
  double group_delay_samples(double hz) const;

 private:
  double fs_;
  Biquad hp_;
  Biquad lp_;
};

// Dequantize ADC codes to millivolts and band-pass them.
std::vector<double> bandpass(std::span<const std::uint16_t> codes, double fs,
                             double vref = adc::kDefaultVref,
                             double gain_mv_per_v = adc::kDefaultGainMvPerVolt);

struct PeakAnnotation {
  double t_s = 0.0;           // R-apex time, delay-compensated, stream-relative seconds
  double amplitude_mv = 0.0;  // raw (pre-filter) millivolts at the apex
  double confidence = 0.0;    // 0..1, threshold-relative
  bool operator==(const PeakAnnotation&) const = default;
};

// Streaming QRS detector: band-pass -> derivative -> squaring -> 150 ms
// moving-window integration -> adaptive dual thresholds with 200 ms refractory
// and 1.66*RR searchback. Emitted times are delay-compensated to the raw-signal
// R apex (local-max search +/-50 ms). Output is invariant to how the input is
// chunked across process() calls.
class PeakDetector {
 public:
  explicit PeakDetector(double fs);

  // Feed raw (unfiltered) millivolt samples; returns peaks confirmed by this
  // chunk, in time order. Concatenating results over any chunking equals the
  // one-shot result.
  std::vector<PeakAnnotation> process(std::span<const double> raw_mv);

  // While suppressed (lead-off), candidates are discarded and thresholds are
  // held. Leaving suppression arms a short guard so rail transients do not
  // register as beats.
  void set_suppressed(bool suppressed);
  bool suppressed() const { return suppressed_; }

  double fs() const { return fs_; }
  std::size_t samples_fed() const { return n_; }
  double nominal_delay_samples() const { return delay_samples_; }

 private:
  void feed_mwi(std::size_t index, double v);
  void decision_step(std::size_t index, double v);
  void on_candidate(std::size_t index, double value);
  bool accept_qrs(std::size_t index, double value, bool searchback);
  double raw_at(std::size_t index) const;

  double fs_;
  BandpassFilter bp_;
  std::size_t mwi_window_;
  std::size_t refractory_samples_;
  std::size_t search_radius_;
  std::size_t init_samples_;
  double delay_samples_;

  // stage state
  std::deque<double> filt_hist_;  // last 5 band-passed samples for the derivative
  std::vector<double> mwi_ring_;
  std::size_t mwi_pos_ = 0;
  double mwi_sum_ = 0.0;
  std::size_t n_ = 0;  // raw samples fed

  // raw history for apex refinement
  std::vector<double> raw_ring_;

  // threshold state
  bool init_done_ = false;
  std::vector<double> init_buf_;
  double spki_ = 0.0;
  double npki_ = 0.0;

  // candidate tracking: the running maximum of the current rise becomes a
  // candidate once the integrated signal falls below half of it
  double last_mwi_ = 0.0;
  double rise_max_v_ = 0.0;
  std::size_t rise_max_i_ = 0;
  struct Candidate {
    std::size_t index;
    double value;
  };
  std::deque<Candidate> noise_cands_;

  // rhythm state
  std::optional<std::size_t> last_qrs_index_;
  std::optional<double> last_apex_t_;
  std::deque<double> recent_rr_;

  // lead-off handling
  bool suppressed_ = false;
  std::size_t guard_until_ = 0;

  std::vector<PeakAnnotation> pending_;
};

// bpm over the trailing 8 RR intervals (or all available); nullopt with < 2 peaks.
std::optional<double> heart_rate(std::span<const double> peak_times_s);

struct RrStats {
  std::size_t count = 0;   // RR intervals considered
  double mean_s = 0.0;
  double sdnn_s = 0.0;
  double rmssd_s = 0.0;
};

// Stats over the trailing 8 RR intervals of the given peak times.
RrStats rr_stats(std::span<const double> peak_times_s);

enum class Rhythm {
  NormalSinus,
  Tachycardia,
  Bradycardia,
  Irregular,
  Indeterminate,
};

const char* to_string(Rhythm r);
std::optional<Rhythm> parse_rhythm(std::string_view s);

// Rule table: lead not ok or < 2 RR -> indeterminate; rmssd/mean >= 0.15 ->
// irregular; bpm > 100 -> tachycardia; bpm < 60 -> bradycardia; else normal.
Rhythm classify(bool lead_ok, const RrStats& rr);

struct VitalsSnapshot {
  wire::DeviceId device_id{};
  double t_s = 0.0;  // window end time, seconds since the device epoch
  bool bpm_valid = false;
  double bpm = 0.0;  // 60 / rr_mean_s when bpm_valid
  double rr_mean_s = 0.0;
  double rr_sdnn_s = 0.0;
  double rr_rmssd_s = 0.0;
  Rhythm rhythm = Rhythm::Indeterminate;
  double temperature_c = 0.0;
  double alcohol_level = 0.0;
  bool lead_ok = true;
};

// One key=value line per snapshot for the derived-metrics log.
std::string snapshot_to_line(const VitalsSnapshot& s);

struct FrameAnalysis {
  VitalsSnapshot snapshot;
  std::vector<PeakAnnotation> new_peaks;  // t_s absolute (device epoch) seconds
};

// Per-device streaming pipeline: dequantizes frames, runs the detector, and
// emits one VitalsSnapshot per frame at the frame's end time.
class DevicePipeline {
 public:
  explicit DevicePipeline(const wire::DeviceId& id, double vref = adc::kDefaultVref,
                          double gain_mv_per_v = adc::kDefaultGainMvPerVolt);

  FrameAnalysis on_frame(const wire::TelemetryFrame& frame);

  const std::vector<double>& peak_times_s() const { return apex_times_; }
  std::size_t frames_seen() const { return frames_; }

 private:
  wire::DeviceId id_;
  double vref_;
  double gain_;
  std::optional<PeakDetector> detector_;
  double fs_ = 0.0;
  std::uint64_t base_us_ = 0;  // time of detector sample index 0
  std::size_t fed_ = 0;
  std::size_t frames_ = 0;
  std::vector<double> apex_times_;
  std::deque<double> recent_apexes_;  // trailing window for snapshots
};

// Routes frames to per-device pipelines; safe for concurrent callers.
class AnalysisHub {
 public:
  using SnapshotFn = std::function<void(const VitalsSnapshot&)>;
  using PeakFn = std::function<void(const wire::DeviceId&, const PeakAnnotation&)>;

  AnalysisHub() = default;
  void set_snapshot_sink(SnapshotFn fn);
  void set_peak_sink(PeakFn fn);
  void on_frame(const wire::TelemetryFrame& frame);
  std::vector<wire::DeviceId> devices() const;

 private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<DevicePipeline> pipe;
  };
  mutable std::mutex mu_;
  std::map<wire::DeviceId, std::unique_ptr<Entry>> entries_;
  SnapshotFn snapshot_fn_;
  PeakFn peak_fn_;
};

}  // namespace hemo::analysis
