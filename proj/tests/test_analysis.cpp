#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"

#include "hemo/analysis.hpp"
#include "hemo/device_sim.hpp"
#include "hemo/ecg_synth.hpp"

using namespace hemo;

namespace {

std::vector<double> tone(double hz, double fs, double duration_s, double amp = 1.0) {
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(duration_s * fs);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs));
  }
  return out;
}

double rms_tail(const std::vector<double>& xs, std::size_t tail) {
  double s = 0.0;
  for (std::size_t i = xs.size() - tail; i < xs.size(); ++i) s += xs[i] * xs[i];
  return std::sqrt(s / static_cast<double>(tail));
}

ecg::AnnotatedSignal beats(double duration_s, double bpm, double fs, std::uint64_t seed = 1,
                           double jitter = 0.0, double white_mv = 0.0) {
  ecg::RhythmPlan plan;
  plan.base_bpm = bpm;
  plan.rr_jitter = jitter;
  plan.seed = seed;
  ecg::NoiseSpec noise;
  noise.white_noise_mv = white_mv;
  return ecg::generate(duration_s, fs, plan, ecg::default_morphology(), noise);
}

}  // namespace

TEST_CASE("band-pass rejects DC: a step settles below 1% after 2 s") {
  analysis::BandpassFilter filt(250.0);
  std::vector<double> y;
  for (int i = 0; i < 250 * 5; ++i) y.push_back(filt.process(1.0));
  for (std::size_t i = 500; i < y.size(); ++i) {
    CHECK(std::fabs(y[i]) < 0.01);
  }
}

TEST_CASE("band-pass keeps 10 Hz and drops a 50 Hz tone by at least 20 dB") {
  const double fs = 250.0;
  analysis::BandpassFilter a(fs), b(fs);
  std::vector<double> in10 = tone(10.0, fs, 5.0), in50 = tone(50.0, fs, 5.0);
  std::vector<double> out10, out50;
  for (double x : in10) out10.push_back(a.process(x));
  for (double x : in50) out50.push_back(b.process(x));
  const double r10 = rms_tail(out10, 500);
  const double r50 = rms_tail(out50, 500);
  CHECK(20.0 * std::log10(r10 / r50) >= 20.0);
  // the analytic response agrees
  CHECK(20.0 * std::log10(a.magnitude(10.0) / a.magnitude(50.0)) >= 20.0);
}

TEST_CASE("filter sections behave like their design frequencies say") {
  analysis::BandpassFilter filt(250.0);
  CHECK(filt.magnitude(10.0) > 0.5);    // passband center
  CHECK(filt.magnitude(0.5) < 0.05);    // deep low stop
  CHECK(filt.magnitude(60.0) < 0.08);   // mains region
  CHECK(filt.group_delay_samples(10.0) > 0.0);
}

TEST_CASE("an all-zero signal produces no peaks") {
  analysis::PeakDetector det(250.0);
  const std::vector<double> zeros(250 * 20, 0.0);
  CHECK(det.process(zeros).empty());
}

TEST_CASE("detects 10 +- 1 beats at 60 bpm in 10 s, each within 40 ms of truth") {
  const auto sig = beats(10.0, 60.0, 250.0);
  analysis::PeakDetector det(250.0);
  const auto peaks = det.process(sig.samples_mv);
  CHECK(peaks.size() >= 9);
  CHECK(peaks.size() <= 11);
  for (const auto& p : peaks) {
    double best = 1e9;
    for (const auto& tr : sig.truth) best = std::min(best, std::fabs(p.t_s - tr.r_time_s));
    CHECK(best <= 0.040);
    CHECK(p.confidence >= 0.0);
    CHECK(p.confidence <= 1.0);
  }
}

TEST_CASE("detects 60 +- 1 beats at 120 bpm in 30 s") {
  const auto sig = beats(30.0, 120.0, 250.0);
  analysis::PeakDetector det(250.0);
  const auto peaks = det.process(sig.samples_mv);
  CHECK(peaks.size() >= 59);
  CHECK(peaks.size() <= 61);
}

TEST_CASE("detected peaks always respect the 200 ms refractory") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto sig = beats(60.0, 140.0, 250.0, seed, 0.15, 0.08);
    analysis::PeakDetector det(250.0);
    const auto peaks = det.process(sig.samples_mv);
    for (std::size_t i = 1; i < peaks.size(); ++i) {
      CHECK(peaks[i].t_s - peaks[i - 1].t_s >= analysis::kRefractoryS - 1e-9);
    }
  }
}

TEST_CASE("chunked feeding is exactly equivalent to one-shot feeding") {
  std::mt19937_64 rng(99);
  for (int round = 0; round < 8; ++round) {
    const auto sig = beats(40.0, 60.0 + 10.0 * round, 250.0, 50 + round, 0.05, 0.05);

    analysis::PeakDetector whole(250.0);
    const auto expected = whole.process(sig.samples_mv);
    REQUIRE(!expected.empty());

    analysis::PeakDetector streamed(250.0);
    std::vector<analysis::PeakAnnotation> got;
    std::size_t pos = 0;
    while (pos < sig.samples_mv.size()) {
      const std::size_t chunk =
          std::min<std::size_t>(1 + rng() % 4096, sig.samples_mv.size() - pos);
      const auto part =
          streamed.process(std::span(sig.samples_mv.data() + pos, chunk));
      got.insert(got.end(), part.begin(), part.end());
      pos += chunk;
    }
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].t_s == expected[i].t_s);  // bit-exact, not approximate
      CHECK(got[i].amplitude_mv == expected[i].amplitude_mv);
      CHECK(got[i].confidence == expected[i].confidence);
    }
  }
}

TEST_CASE("peak times are stable under amplitude scaling") {
  const auto sig = beats(30.0, 72.0, 250.0, 4);
  analysis::PeakDetector base(250.0);
  const auto ref = base.process(sig.samples_mv);
  REQUIRE(!ref.empty());
  for (double scale : {0.5, 0.8, 1.5, 2.0}) {
    std::vector<double> scaled;
    scaled.reserve(sig.samples_mv.size());
    for (double v : sig.samples_mv) scaled.push_back(scale * v);
    analysis::PeakDetector det(250.0);
    const auto peaks = det.process(scaled);
    REQUIRE(peaks.size() == ref.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      CHECK(std::fabs(peaks[i].t_s - ref[i].t_s) <= 1.0 / 250.0 + 1e-9);
    }
  }
}

TEST_CASE("heart_rate: hand-worked example and trailing window") {
  const std::vector<double> peaks = {0.0, 0.8, 1.7, 2.5};
  const auto bpm = analysis::heart_rate(peaks);
  REQUIRE(bpm.has_value());
  CHECK(*bpm == doctest::Approx(72.0).epsilon(1e-9));  // mean RR 2.5/3 s

  CHECK_FALSE(analysis::heart_rate({}).has_value());
  CHECK_FALSE(analysis::heart_rate(std::vector<double>{1.0}).has_value());

  // only the trailing 8 RR count: early slow beats cannot drag the rate down
  std::vector<double> train = {0.0, 3.0, 6.0};
  double t = 6.0;
  for (int i = 0; i < 8; ++i) train.push_back(t += 0.5);
  CHECK(*analysis::heart_rate(train) == doctest::Approx(120.0).epsilon(1e-9));
}

TEST_CASE("rr_stats: hand-worked means and spreads") {
  const std::vector<double> even = {0.0, 1.0, 2.0, 3.0};
  const auto s = analysis::rr_stats(even);
  CHECK(s.count == 3);
  CHECK(s.mean_s == doctest::Approx(1.0));
  CHECK(s.sdnn_s == doctest::Approx(0.0));
  CHECK(s.rmssd_s == doctest::Approx(0.0));

  const std::vector<double> uneven = {0.0, 0.8, 1.7, 2.5};
  const auto u = analysis::rr_stats(uneven);
  CHECK(u.count == 3);
  CHECK(u.mean_s == doctest::Approx(2.5 / 3.0).epsilon(1e-9));
  CHECK(u.sdnn_s == doctest::Approx(0.047140452079103168).epsilon(1e-6));
  CHECK(u.rmssd_s == doctest::Approx(0.1).epsilon(1e-6));

  CHECK(analysis::rr_stats(std::vector<double>{1.0}).count == 0);
}

TEST_CASE("rhythm classification rule table") {
  analysis::RrStats rr;
  rr.count = 0;
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::Indeterminate);

  rr.count = 4;
  rr.mean_s = 0.8;
  rr.rmssd_s = 0.0;
  CHECK(analysis::classify(false, rr) == analysis::Rhythm::Indeterminate);
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::NormalSinus);

  rr.rmssd_s = 0.8 * 0.15;  // exactly at the ratio -> irregular
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::Irregular);
  rr.rmssd_s = 0.8 * 0.149;
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::NormalSinus);

  rr.rmssd_s = 0.0;
  rr.mean_s = 60.0 / 101.0;
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::Tachycardia);
  rr.mean_s = 60.0 / 100.0;  // 100 bpm is not > 100
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::NormalSinus);
  rr.mean_s = 60.0 / 59.0;
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::Bradycardia);
  rr.mean_s = 1.0;  // 60 bpm is not < 60
  CHECK(analysis::classify(true, rr) == analysis::Rhythm::NormalSinus);
}

TEST_CASE("rhythm names round-trip") {
  for (auto r : {analysis::Rhythm::NormalSinus, analysis::Rhythm::Tachycardia,
                 analysis::Rhythm::Bradycardia, analysis::Rhythm::Irregular,
                 analysis::Rhythm::Indeterminate}) {
    CHECK(*analysis::parse_rhythm(analysis::to_string(r)) == r);
  }
}

namespace {

std::vector<wire::TelemetryFrame> frames_for(const ecg::AnnotatedSignal& sig,
                                             std::uint16_t batch = 250) {
  device::DeviceConfig cfg;
  cfg.device_id = {9, 9, 9, 9, 9, 9, 9, 9};
  cfg.fs = sig.fs;
  cfg.batch_size = batch;
  device::DeviceScenario scenario;
  scenario.signal = sig;
  scenario.sensors = {{0.0, 36.6, 50.0, 0.0}};
  return device::run_device(cfg, scenario, sig.duration_s()).frames;
}

}  // namespace

TEST_CASE("device pipeline recovers the heart rate from encoded frames") {
  const auto sig = beats(60.0, 72.0, 250.0);
  analysis::DevicePipeline pipe({9, 9, 9, 9, 9, 9, 9, 9});
  analysis::VitalsSnapshot last;
  for (const auto& f : frames_for(sig)) last = pipe.on_frame(f).snapshot;
  CHECK(last.bpm_valid);
  CHECK(last.bpm == doctest::Approx(72.0).epsilon(0.03));
  CHECK(last.rhythm == analysis::Rhythm::NormalSinus);
  CHECK(last.lead_ok);
  CHECK(last.temperature_c == doctest::Approx(37.0));
  // the published rate and mean RR are the same fact, bit for bit
  CHECK(last.bpm == 60.0 / last.rr_mean_s);
}

TEST_CASE("lead-off frames make the snapshot indeterminate and suppress peaks") {
  const auto sig = beats(30.0, 72.0, 250.0);
  auto frames = frames_for(sig);
  REQUIRE(frames.size() == 30);
  // mark 10 s..20 s as lead-off with saturated samples
  for (std::size_t i = 10; i < 20; ++i) {
    frames[i].flags |= wire::kFlagLoPlus;
    std::fill(frames[i].samples.begin(), frames[i].samples.end(),
              static_cast<std::uint16_t>(1023));
  }
  analysis::DevicePipeline pipe({9, 9, 9, 9, 9, 9, 9, 9});
  std::size_t peaks_during_off = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto fa = pipe.on_frame(frames[i]);
    if (i >= 10 && i < 20) {
      CHECK_FALSE(fa.snapshot.lead_ok);
      CHECK(fa.snapshot.rhythm == analysis::Rhythm::Indeterminate);
      peaks_during_off += fa.new_peaks.size();
    }
  }
  CHECK(peaks_during_off == 0);
}

TEST_CASE("snapshot text lines carry every field") {
  analysis::VitalsSnapshot s;
  s.device_id = {0xab, 0, 0, 0, 0, 0, 0, 1};
  s.t_s = 12.5;
  s.bpm_valid = true;
  s.bpm = 71.5;
  s.rr_mean_s = 60.0 / 71.5;
  s.rhythm = analysis::Rhythm::NormalSinus;
  s.temperature_c = 36.8;
  s.alcohol_level = 0.01;
  s.lead_ok = true;
  const std::string line = analysis::snapshot_to_line(s);
  CHECK(line.find("device=ab00000000000001") != std::string::npos);
  CHECK(line.find("bpm=71.500") != std::string::npos);
  CHECK(line.find("rhythm=normal_sinus") != std::string::npos);
  CHECK(line.find("lead_ok=1") != std::string::npos);
}

TEST_CASE("analysis hub keeps interleaved devices independent") {
  const auto fast = beats(40.0, 120.0, 250.0, 2);
  const auto slow = beats(40.0, 50.0, 250.0, 3);
  auto fa = frames_for(fast);
  auto fb = frames_for(slow);
  for (auto& f : fb) f.device_id = {7, 7, 7, 7, 7, 7, 7, 7};

  analysis::AnalysisHub hub;
  std::map<std::string, analysis::VitalsSnapshot> last;
  std::map<std::string, std::size_t> peak_count;
  hub.set_snapshot_sink([&](const analysis::VitalsSnapshot& s) {
    last[wire::device_id_hex(s.device_id)] = s;
  });
  hub.set_peak_sink([&](const wire::DeviceId& id, const analysis::PeakAnnotation&) {
    ++peak_count[wire::device_id_hex(id)];
  });

  for (std::size_t i = 0; i < fa.size(); ++i) {
    hub.on_frame(fa[i]);
    hub.on_frame(fb[i]);
  }

  CHECK(hub.devices().size() == 2);
  const auto& a = last.at("0909090909090909");
  const auto& b = last.at("0707070707070707");
  CHECK(a.bpm == doctest::Approx(120.0).epsilon(0.03));
  CHECK(b.bpm == doctest::Approx(50.0).epsilon(0.03));
  CHECK(a.rhythm == analysis::Rhythm::Tachycardia);
  CHECK(b.rhythm == analysis::Rhythm::Bradycardia);
  CHECK(peak_count.at("0909090909090909") > peak_count.at("0707070707070707"));
}

TEST_CASE("detector constructor rejects unsupported sample rates") {
  CHECK_THROWS_AS(analysis::PeakDetector(99.0), std::invalid_argument);
  CHECK_THROWS_AS(analysis::BandpassFilter(50.0), std::invalid_argument);
}
