#include "hemo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace hemo::analysis {

namespace {

constexpr double kButterworthQ = 0.70710678118654752;
constexpr double kPostLeadGuardS = 0.5;

std::complex<double> biquad_response(const BiquadCoeffs& c, double w) {
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return (c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2);
}

double mean_of(const std::deque<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

BiquadCoeffs design_lowpass(double fs, double f0, double q) {
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0,
          -2.0 * cw / a0, (1.0 - alpha) / a0};
}

BiquadCoeffs design_highpass(double fs, double f0, double q) {
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  return {(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0,
          -2.0 * cw / a0, (1.0 - alpha) / a0};
}

BandpassFilter::BandpassFilter(double fs)
    : fs_(fs),
      hp_(design_highpass(fs, kBandLowHz, kButterworthQ)),
      lp_(design_lowpass(fs, kBandHighHz, kButterworthQ)) {
  if (fs < 100.0) throw std::invalid_argument("sample rate must be >= 100 Hz");
}

void BandpassFilter::reset() {
  hp_.reset();
  lp_.reset();
}

double BandpassFilter::magnitude(double hz) const {
  const double w = 2.0 * std::numbers::pi * hz / fs_;
  return std::abs(biquad_response(hp_.coeffs(), w) * biquad_response(lp_.coeffs(), w));
}

double BandpassFilter::phase(double hz) const {
  const double w = 2.0 * std::numbers::pi * hz / fs_;
  return std::arg(biquad_response(hp_.coeffs(), w) * biquad_response(lp_.coeffs(), w));
}

double BandpassFilter::group_delay_samples(double hz) const {
  const double w = 2.0 * std::numbers::pi * hz / fs_;
  const double dw = 1e-4;
  const auto at = [&](double ww) {
    return biquad_response(hp_.coeffs(), ww) * biquad_response(lp_.coeffs(), ww);
  };
  // arg of the ratio gives the phase difference without wrap trouble
  const double dphi = std::arg(at(w + dw) / at(w - dw));
  return -dphi / (2.0 * dw);
}

std::vector<double> bandpass(std::span<const std::uint16_t> codes, double fs, double vref,
                             double gain_mv_per_v) {
  BandpassFilter filt(fs);
  std::vector<double> out;
  out.reserve(codes.size());
  for (std::uint16_t c : codes) out.push_back(filt.process(adc::code_to_mv(c, vref, gain_mv_per_v)));
  return out;
}

PeakDetector::PeakDetector(double fs) : fs_(fs), bp_(fs) {
  if (fs < 100.0) throw std::invalid_argument("sample rate must be >= 100 Hz");
  mwi_window_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kIntegrationWindowS * fs)));
  refractory_samples_ = static_cast<std::size_t>(std::llround(kRefractoryS * fs));
  search_radius_ = static_cast<std::size_t>(std::llround(kApexSearchS * fs));
  init_samples_ = static_cast<std::size_t>(std::llround(kInitSeconds * fs));
  delay_samples_ = bp_.group_delay_samples(10.0) + 2.0 + (static_cast<double>(mwi_window_) - 1.0) / 2.0;
  mwi_ring_.assign(mwi_window_, 0.0);
  raw_ring_.assign(static_cast<std::size_t>(std::llround(8.0 * fs)), 0.0);
  init_buf_.reserve(init_samples_);
}

double PeakDetector::raw_at(std::size_t index) const { return raw_ring_[index % raw_ring_.size()]; }

std::vector<PeakAnnotation> PeakDetector::process(std::span<const double> raw_mv) {
  for (double x : raw_mv) {
    raw_ring_[n_ % raw_ring_.size()] = x;

    const double f = bp_.process(x);
    filt_hist_.push_back(f);
    if (filt_hist_.size() > 5) filt_hist_.pop_front();
    double d = 0.0;
    if (filt_hist_.size() == 5) {
      d = (2.0 * filt_hist_[4] + filt_hist_[3] - filt_hist_[1] - 2.0 * filt_hist_[0]) / 8.0;
    }
    const double sq = d * d;

    mwi_sum_ += sq - mwi_ring_[mwi_pos_];
    mwi_ring_[mwi_pos_] = sq;
    mwi_pos_ = (mwi_pos_ + 1) % mwi_window_;
    feed_mwi(n_, mwi_sum_ / static_cast<double>(mwi_window_));

    ++n_;
  }
  std::vector<PeakAnnotation> out;
  out.swap(pending_);
  return out;
}

void PeakDetector::feed_mwi(std::size_t index, double v) {
  if (!init_done_) {
    init_buf_.push_back(v);
    if (init_buf_.size() < init_samples_) return;
    // seed thresholds from the first 2 s, then replay so early beats count too
    double mx = 0.0;
    double sum = 0.0;
    for (double b : init_buf_) {
      mx = std::max(mx, b);
      sum += b;
    }
    spki_ = mx / 3.0;
    npki_ = sum / static_cast<double>(init_buf_.size()) / 2.0;
    init_done_ = true;
    for (std::size_t i = 0; i < init_buf_.size(); ++i) decision_step(i, init_buf_[i]);
    init_buf_.clear();
    init_buf_.shrink_to_fit();
    return;
  }
  decision_step(index, v);
}

void PeakDetector::decision_step(std::size_t index, double v) {
  // track the maximum only while rising so the post-candidate falling edge
  // cannot re-arm; confirm the candidate once the signal drops below half
  if (v > last_mwi_ && v > rise_max_v_) {
    rise_max_v_ = v;
    rise_max_i_ = index;
  } else if (rise_max_v_ > 0.0 && v < 0.5 * rise_max_v_) {
    const std::size_t cand_index = rise_max_i_;
    const double cand_value = rise_max_v_;
    rise_max_v_ = 0.0;
    on_candidate(cand_index, cand_value);
  }
  last_mwi_ = v;
}

void PeakDetector::on_candidate(std::size_t index, double value) {
  if (suppressed_ || index < guard_until_) return;

  const double thr1 = npki_ + kThresholdBlend * (spki_ - npki_);

  if (last_qrs_index_ && index - *last_qrs_index_ < refractory_samples_) {
    npki_ = kAdaptAlpha * value + (1.0 - kAdaptAlpha) * npki_;
    return;
  }

  if (value > thr1) {
    if (accept_qrs(index, value, false)) return;
    npki_ = kAdaptAlpha * value + (1.0 - kAdaptAlpha) * npki_;
    return;
  }

  npki_ = kAdaptAlpha * value + (1.0 - kAdaptAlpha) * npki_;
  noise_cands_.push_back({index, value});

  // searchback: nothing accepted for 1.66 average RR, take the best candidate
  // above half threshold
  if (last_qrs_index_ && !recent_rr_.empty()) {
    const double rr_avg_samples = mean_of(recent_rr_) * fs_;
    if (static_cast<double>(index - *last_qrs_index_) > kSearchbackFactor * rr_avg_samples) {
      const Candidate* best = nullptr;
      for (const Candidate& c : noise_cands_) {
        if (c.index - *last_qrs_index_ < refractory_samples_) continue;
        if (c.value <= thr1 / 2.0) continue;
        if (!best || c.value > best->value) best = &c;
      }
      if (best) {
        const Candidate chosen = *best;
        accept_qrs(chosen.index, chosen.value, true);
      }
    }
  }
}

bool PeakDetector::accept_qrs(std::size_t index, double value, bool searchback) {
  // the integrator fires ~delay_samples_ after the apex; search the raw signal
  // around the compensated position
  const long center = static_cast<long>(index) - std::lround(delay_samples_);
  const long newest = static_cast<long>(n_);  // sample n_ is stored, being processed
  const long oldest =
      std::max<long>(0, newest + 1 - static_cast<long>(raw_ring_.size()));
  long lo = std::clamp(center - static_cast<long>(search_radius_), oldest, newest);
  long hi = std::clamp(center + static_cast<long>(search_radius_), oldest, newest);

  long best_i = lo;
  double best_v = raw_at(static_cast<std::size_t>(lo));
  for (long i = lo + 1; i <= hi; ++i) {
    const double v = raw_at(static_cast<std::size_t>(i));
    if (v > best_v) {
      best_v = v;
      best_i = i;
    }
  }
  const double apex_t = static_cast<double>(best_i) / fs_;

  if (last_apex_t_ && apex_t - *last_apex_t_ < kRefractoryS) return false;

  const double denom = spki_ - npki_;
  const double confidence =
      denom > 0.0 ? std::clamp((value - npki_) / denom, 0.0, 1.0) : 1.0;

  if (searchback) {
    spki_ = 0.25 * value + 0.75 * spki_;
  } else {
    spki_ = kAdaptAlpha * value + (1.0 - kAdaptAlpha) * spki_;
  }

  if (last_apex_t_) {
    recent_rr_.push_back(apex_t - *last_apex_t_);
    while (recent_rr_.size() > static_cast<std::size_t>(kRrWindow)) recent_rr_.pop_front();
  }
  last_apex_t_ = apex_t;
  last_qrs_index_ = index;
  while (!noise_cands_.empty() && noise_cands_.front().index <= index) noise_cands_.pop_front();

  pending_.push_back({apex_t, best_v, confidence});
  return true;
}

void PeakDetector::set_suppressed(bool suppressed) {
  if (suppressed == suppressed_) return;
  suppressed_ = suppressed;
  if (suppressed) {
    noise_cands_.clear();
    last_qrs_index_.reset();
  } else {
    guard_until_ = n_ + static_cast<std::size_t>(std::llround(kPostLeadGuardS * fs_));
  }
}

std::optional<double> heart_rate(std::span<const double> peak_times_s) {
  if (peak_times_s.size() < 2) return std::nullopt;
  const std::size_t n_rr = peak_times_s.size() - 1;
  const std::size_t take = std::min<std::size_t>(n_rr, kRrWindow);
  double sum = 0.0;
  for (std::size_t i = peak_times_s.size() - take; i < peak_times_s.size(); ++i) {
    sum += peak_times_s[i] - peak_times_s[i - 1];
  }
  const double mean_rr = sum / static_cast<double>(take);
  if (!(mean_rr > 0.0)) return std::nullopt;
  return 60.0 / mean_rr;
}

RrStats rr_stats(std::span<const double> peak_times_s) {
  RrStats s;
  if (peak_times_s.size() < 2) return s;
  std::vector<double> rr;
  const std::size_t n_rr = peak_times_s.size() - 1;
  const std::size_t take = std::min<std::size_t>(n_rr, kRrWindow);
  rr.reserve(take);
  for (std::size_t i = peak_times_s.size() - take; i < peak_times_s.size(); ++i) {
    rr.push_back(peak_times_s[i] - peak_times_s[i - 1]);
  }
  s.count = rr.size();
  double sum = 0.0;
  for (double x : rr) sum += x;
  s.mean_s = sum / static_cast<double>(rr.size());
  double var = 0.0;
  for (double x : rr) var += (x - s.mean_s) * (x - s.mean_s);
  s.sdnn_s = std::sqrt(var / static_cast<double>(rr.size()));
  if (rr.size() >= 2) {
    double dsum = 0.0;
    for (std::size_t i = 1; i < rr.size(); ++i) dsum += (rr[i] - rr[i - 1]) * (rr[i] - rr[i - 1]);
    s.rmssd_s = std::sqrt(dsum / static_cast<double>(rr.size() - 1));
  }
  return s;
}

const char* to_string(Rhythm r) {
  switch (r) {
    case Rhythm::NormalSinus: return "normal_sinus";
    case Rhythm::Tachycardia: return "tachycardia";
    case Rhythm::Bradycardia: return "bradycardia";
    case Rhythm::Irregular: return "irregular";
    case Rhythm::Indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

std::optional<Rhythm> parse_rhythm(std::string_view s) {
  if (s == "normal_sinus") return Rhythm::NormalSinus;
  if (s == "tachycardia") return Rhythm::Tachycardia;
  if (s == "bradycardia") return Rhythm::Bradycardia;
  if (s == "irregular") return Rhythm::Irregular;
  if (s == "indeterminate") return Rhythm::Indeterminate;
  return std::nullopt;
}

Rhythm classify(bool lead_ok, const RrStats& rr) {
  if (!lead_ok || rr.count < 2) return Rhythm::Indeterminate;
  if (rr.rmssd_s / rr.mean_s >= kIrregularRmssdRatio) return Rhythm::Irregular;
  const double bpm = 60.0 / rr.mean_s;
  if (bpm > kTachycardiaBpm) return Rhythm::Tachycardia;
  if (bpm < kBradycardiaBpm) return Rhythm::Bradycardia;
  return Rhythm::NormalSinus;
}

std::string snapshot_to_line(const VitalsSnapshot& s) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "t=%.6f device=%s bpm=%.3f bpm_valid=%d rr_mean=%.6f rr_sdnn=%.6f "
                "rr_rmssd=%.6f rhythm=%s temp_c=%.2f alcohol=%.3f lead_ok=%d",
                s.t_s, wire::device_id_hex(s.device_id).c_str(), s.bpm, s.bpm_valid ? 1 : 0,
                s.rr_mean_s, s.rr_sdnn_s, s.rr_rmssd_s, to_string(s.rhythm), s.temperature_c,
                s.alcohol_level, s.lead_ok ? 1 : 0);
  return buf;
}

DevicePipeline::DevicePipeline(const wire::DeviceId& id, double vref, double gain_mv_per_v)
    : id_(id), vref_(vref), gain_(gain_mv_per_v) {}

FrameAnalysis DevicePipeline::on_frame(const wire::TelemetryFrame& frame) {
  ++frames_;
  const double frame_fs = static_cast<double>(frame.fs);
  if (!detector_ || frame_fs != fs_) {
    fs_ = frame_fs;
    detector_.emplace(fs_);
    base_us_ = frame.t_start_us;
    fed_ = 0;
  } else {
    // realign the sample clock when drops shift the frame timeline
    const std::uint64_t expected =
        base_us_ + static_cast<std::uint64_t>(std::llround(static_cast<double>(fed_) * 1e6 / fs_));
    const auto drift = static_cast<std::int64_t>(frame.t_start_us - expected);
    if (std::llabs(drift) * 2 > static_cast<std::int64_t>(1e6 / fs_)) {
      base_us_ += static_cast<std::uint64_t>(drift);
    }
  }

  const bool lead_ok =
      (frame.flags & (wire::kFlagLoPlus | wire::kFlagLoMinus)) == 0;
  detector_->set_suppressed(!lead_ok);

  std::vector<double> mv;
  mv.reserve(frame.samples.size());
  for (std::uint16_t c : frame.samples) mv.push_back(adc::code_to_mv(c, vref_, gain_));
  const auto anns = detector_->process(mv);
  fed_ += frame.samples.size();

  FrameAnalysis result;
  result.new_peaks.reserve(anns.size());
  const double base_s = static_cast<double>(base_us_) / 1e6;
  for (const PeakAnnotation& a : anns) {
    PeakAnnotation abs = a;
    abs.t_s = base_s + a.t_s;
    apex_times_.push_back(abs.t_s);
    recent_apexes_.push_back(abs.t_s);
    while (recent_apexes_.size() > static_cast<std::size_t>(kRrWindow) + 1) {
      recent_apexes_.pop_front();
    }
    result.new_peaks.push_back(abs);
  }

  std::vector<double> window(recent_apexes_.begin(), recent_apexes_.end());
  const RrStats rr = rr_stats(window);

  VitalsSnapshot& snap = result.snapshot;
  snap.device_id = frame.device_id;
  snap.t_s = static_cast<double>(frame.t_start_us) / 1e6 +
             static_cast<double>(frame.samples.size()) / fs_;
  snap.rr_mean_s = rr.mean_s;
  snap.rr_sdnn_s = rr.sdnn_s;
  snap.rr_rmssd_s = rr.rmssd_s;
  snap.bpm_valid = rr.count >= 2;
  snap.bpm = snap.bpm_valid ? 60.0 / rr.mean_s : 0.0;
  snap.lead_ok = lead_ok;
  snap.rhythm = classify(lead_ok, rr);
  snap.temperature_c = static_cast<double>(frame.temp_centi_c) / 100.0;
  snap.alcohol_level = static_cast<double>(frame.alcohol_permille) / 1000.0;
  return result;
}

void AnalysisHub::set_snapshot_sink(SnapshotFn fn) {
  std::lock_guard<std::mutex> lock(mu_);
  snapshot_fn_ = std::move(fn);
}

void AnalysisHub::set_peak_sink(PeakFn fn) {
  std::lock_guard<std::mutex> lock(mu_);
  peak_fn_ = std::move(fn);
}

void AnalysisHub::on_frame(const wire::TelemetryFrame& frame) {
  Entry* entry = nullptr;
  SnapshotFn snapshot_fn;
  PeakFn peak_fn;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(frame.device_id);
    if (it == entries_.end()) {
      auto fresh = std::make_unique<Entry>();
      fresh->pipe = std::make_unique<DevicePipeline>(frame.device_id);
      it = entries_.emplace(frame.device_id, std::move(fresh)).first;
    }
    entry = it->second.get();
    snapshot_fn = snapshot_fn_;
    peak_fn = peak_fn_;
  }
  // sinks run under the per-device lock so per-device order is preserved;
  // they must not call back into the hub
  std::lock_guard<std::mutex> lock(entry->mu);
  const FrameAnalysis fa = entry->pipe->on_frame(frame);
  if (peak_fn) {
    for (const PeakAnnotation& p : fa.new_peaks) peak_fn(frame.device_id, p);
  }
  if (snapshot_fn) snapshot_fn(fa.snapshot);
}

std::vector<wire::DeviceId> AnalysisHub::devices() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<wire::DeviceId> out;
  out.reserve(entries_.size());
  for (const auto& [id, _] : entries_) out.push_back(id);
  return out;
}

}  // namespace hemo::analysis
