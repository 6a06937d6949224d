#include "hemo/device_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hemo/alerting.hpp"

namespace hemo::device {

namespace {

void check_config(const DeviceConfig& cfg) {
  if (!(cfg.vref > 0.0)) throw std::invalid_argument("vref must be > 0");
  if (cfg.batch_size < 1 || cfg.batch_size > 4096)
    throw std::invalid_argument("batch_size outside 1..4096");
  if (cfg.fs < 100.0) throw std::invalid_argument("fs must be >= 100 Hz");
  if (cfg.temp_poll_interval_s < 1.0)
    throw std::invalid_argument("temp_poll_interval must be >= 1 s");
  if (!(cfg.frontend_gain_mv_per_v > 0.0))
    throw std::invalid_argument("frontend gain must be > 0");
}

int round_half_up_int(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Piecewise-linear lookup, endpoints held constant outside the breakpoints.
SensorPoint interp_trajectory(double t, std::span<const SensorPoint> traj) {
  if (t <= traj.front().t_s) return traj.front();
  if (t >= traj.back().t_s) return traj.back();
  std::size_t hi = 1;
  while (traj[hi].t_s < t) ++hi;
  const SensorPoint& a = traj[hi - 1];
  const SensorPoint& b = traj[hi];
  const double span = b.t_s - a.t_s;
  const double w = span > 0.0 ? (t - a.t_s) / span : 1.0;
  return {t, a.temperature_c + w * (b.temperature_c - a.temperature_c),
          a.humidity_pct + w * (b.humidity_pct - a.humidity_pct),
          a.alcohol_level + w * (b.alcohol_level - a.alcohol_level)};
}

bool precheck_trips(const SensorSuite& s) {
  return s.temperature_c >= alert::kDeviceTempThresholdC ||
         s.alcohol_level >= alert::kDeviceAlcoholThreshold;
}

std::vector<std::string> display_lines(const SensorSuite& s, bool alerting) {
  char temp_line[32];
  std::snprintf(temp_line, sizeof temp_line, "temp: %d C", s.temperature_c);
  return {"bpm: --", temp_line, alerting ? "status: ALERT" : "status: OK"};
}

}  // namespace

AdcReading quantize(double voltage, const DeviceConfig& cfg) {
  return {adc::quantize(voltage, cfg.vref)};
}

double dequantize(const AdcReading& reading, const DeviceConfig& cfg) {
  return adc::dequantize(reading.code, cfg.vref);
}

std::vector<AdcReading> sample_ecg(const ecg::AnnotatedSignal& signal, const LeadState& lead,
                                   const DeviceConfig& cfg) {
  if (signal.fs != cfg.fs) throw std::invalid_argument("signal fs does not match device fs");
  std::vector<AdcReading> out;
  out.reserve(signal.samples_mv.size());
  for (double mv : signal.samples_mv) {
    if (lead.off()) {
      out.push_back({adc::kCodeMax});
    } else {
      const double voltage = cfg.frontend_offset_v + mv / cfg.frontend_gain_mv_per_v;
      out.push_back(quantize(voltage, cfg));
    }
  }
  return out;
}

SensorSuite poll_sensors(double t_s, std::span<const SensorPoint> trajectory,
                         const DeviceConfig& cfg) {
  if (t_s < 0.0) throw std::invalid_argument("t must be >= 0");
  if (trajectory.empty()) throw std::invalid_argument("empty sensor trajectory");
  const double poll_t = std::floor(t_s / cfg.temp_poll_interval_s) * cfg.temp_poll_interval_s;
  const SensorPoint raw = interp_trajectory(poll_t, trajectory);
  SensorSuite suite;
  suite.temperature_c = std::clamp(round_half_up_int(raw.temperature_c), 0, 50);
  suite.humidity_pct = std::clamp(round_half_up_int(raw.humidity_pct), 20, 90);
  suite.alcohol_level = std::clamp(raw.alcohol_level, 0.0, 1.0);
  return suite;
}

DeviceRun run_device(const DeviceConfig& cfg, const DeviceScenario& scenario, double duration_s) {
  check_config(cfg);
  if (duration_s < 0.0) throw std::invalid_argument("duration must be >= 0");
  if (scenario.sensors.empty()) throw std::invalid_argument("scenario has no sensor trajectory");
  const auto n_total = static_cast<std::size_t>(std::llround(duration_s * cfg.fs));
  if (n_total > 0 && scenario.signal.fs != cfg.fs)
    throw std::invalid_argument("scenario signal fs does not match device fs");
  if (scenario.signal.samples_mv.size() < n_total)
    throw std::invalid_argument("scenario signal does not cover the duration");

  DeviceRun run;

  // Sensor poll walk: buzzer and display state change only at poll instants.
  struct PollState {
    double t;
    SensorSuite suite;
    bool buzzer;
  };
  std::vector<PollState> polls;
  bool buzzer = false;
  std::vector<std::string> last_display;
  for (double t = 0.0; t < duration_s || (duration_s == 0.0 && t == 0.0);
       t += cfg.temp_poll_interval_s) {
    const SensorSuite suite = poll_sensors(t, scenario.sensors, cfg);
    const bool trips = precheck_trips(suite);
    if (trips != buzzer) {
      buzzer = trips;
      run.events.push_back({t, trips ? LocalEventKind::BuzzerOn : LocalEventKind::BuzzerOff, {}});
    }
    auto lines = display_lines(suite, buzzer);
    if (lines != last_display) {
      run.events.push_back({t, LocalEventKind::DisplayUpdate, lines});
      last_display = std::move(lines);
    }
    polls.push_back({t, suite, buzzer});
    if (duration_s == 0.0) break;
  }

  auto poll_at = [&](double t) -> const PollState& {
    std::size_t i = polls.size() - 1;
    while (i > 0 && polls[i].t > t) --i;
    return polls[i];
  };

  // Frame assembly: ceil(n_total/batch) frames, contiguous seq from 0.
  const std::size_t n_frames = (n_total + cfg.batch_size - 1) / cfg.batch_size;
  run.frames.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * cfg.batch_size;
    const std::size_t count = std::min<std::size_t>(cfg.batch_size, n_total - start);
    const double t0 = start / cfg.fs;
    const double t1 = (start + count) / cfg.fs;

    LeadState lead;
    for (const auto& w : scenario.lead_windows) {
      if (w.t0_s < t1 && w.t1_s > t0) {  // frame overlaps the lead-off window
        lead.lo_plus = lead.lo_plus || w.lo_plus;
        lead.lo_minus = lead.lo_minus || w.lo_minus;
      }
    }

    const PollState& poll = poll_at(t0);

    wire::TelemetryFrame frame;
    frame.device_id = cfg.device_id;
    frame.seq = static_cast<std::uint32_t>(f);
    frame.t_start_us = scenario.epoch_us +
                       static_cast<std::uint64_t>(std::llround(t0 * 1e6));
    frame.fs = static_cast<std::uint16_t>(std::llround(cfg.fs));
    frame.flags = static_cast<std::uint8_t>((lead.lo_plus ? wire::kFlagLoPlus : 0) |
                                            (lead.lo_minus ? wire::kFlagLoMinus : 0) |
                                            (poll.buzzer ? wire::kFlagBuzzer : 0));
    frame.temp_centi_c = static_cast<std::int16_t>(poll.suite.temperature_c * 100);
    frame.alcohol_permille =
        static_cast<std::uint16_t>(round_half_up_int(poll.suite.alcohol_level * 1000.0));

    frame.samples.reserve(count);
    if (lead.off()) {
      frame.samples.assign(count, adc::kCodeMax);
    } else {
      for (std::size_t i = start; i < start + count; ++i) {
        const double voltage =
            cfg.frontend_offset_v + scenario.signal.samples_mv[i] / cfg.frontend_gain_mv_per_v;
        frame.samples.push_back(quantize(voltage, cfg).code);
      }
    }
    run.frames.push_back(std::move(frame));
  }

  return run;
}

// ---- scenario files -------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail_line(int line_no, const std::string& what) {
  throw std::runtime_error("scenario line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& text) {
  ScenarioSpec spec;
  spec.sensors.clear();
  struct AnomalyEntry {
    double t;
    ecg::RhythmMode kind;
  };
  std::vector<AnomalyEntry> anomalies;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail_line(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) fail_line(line_no, "missing value for '" + key + "'");

    auto as_double = [&](const std::string& v) {
      try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
      } catch (const std::exception&) {
        fail_line(line_no, "bad number '" + v + "'");
      }
    };

    if (key == "device_id") {
      auto id = wire::device_id_from_hex(value);
      if (!id) fail_line(line_no, "device_id must be 16 hex chars");
      spec.config.device_id = *id;
    } else if (key == "fs") {
      spec.config.fs = as_double(value);
    } else if (key == "vref") {
      spec.config.vref = as_double(value);
    } else if (key == "batch_size") {
      spec.config.batch_size = static_cast<std::uint16_t>(as_double(value));
    } else if (key == "temp_poll_interval") {
      spec.config.temp_poll_interval_s = as_double(value);
    } else if (key == "duration") {
      spec.duration_s = as_double(value);
    } else if (key == "epoch_us") {
      spec.epoch_us = static_cast<std::uint64_t>(as_double(value));
    } else if (key == "rhythm") {
      auto mode = ecg::parse_rhythm_mode(value);
      if (!mode) fail_line(line_no, "unknown rhythm '" + value + "'");
      spec.plan.mode = *mode;
    } else if (key == "base_bpm") {
      spec.plan.base_bpm = as_double(value);
    } else if (key == "rr_jitter") {
      spec.plan.rr_jitter = as_double(value);
    } else if (key == "seed") {
      spec.plan.seed = static_cast<std::uint64_t>(as_double(value));
    } else if (key == "noise_baseline_mv") {
      spec.noise.baseline_wander_mv = as_double(value);
    } else if (key == "noise_baseline_hz") {
      spec.noise.baseline_wander_hz = as_double(value);
    } else if (key == "noise_powerline_mv") {
      spec.noise.powerline_mv = as_double(value);
    } else if (key == "noise_powerline_hz") {
      spec.noise.powerline_hz = as_double(value);
    } else if (key == "noise_white_mv") {
      spec.noise.white_noise_mv = as_double(value);
    } else if (key == "anomaly") {
      std::istringstream fields(value);
      double t;
      std::string kind;
      if (!(fields >> t >> kind)) fail_line(line_no, "anomaly wants '<t> <kind>'");
      auto mode = ecg::parse_rhythm_mode(kind);
      if (!mode) fail_line(line_no, "unknown rhythm '" + kind + "'");
      anomalies.push_back({t, *mode});
    } else if (key == "sensor") {
      std::istringstream fields(value);
      SensorPoint p{};
      if (!(fields >> p.t_s >> p.temperature_c >> p.humidity_pct >> p.alcohol_level))
        fail_line(line_no, "sensor wants '<t> <temp_c> <humidity_pct> <alcohol>'");
      spec.sensors.push_back(p);
    } else if (key == "lead_off") {
      std::istringstream fields(value);
      LeadWindow w{};
      if (!(fields >> w.t0_s >> w.t1_s)) fail_line(line_no, "lead_off wants '<t0> <t1> [lo_minus]'");
      std::string which;
      if (fields >> which) {
        if (which == "lo_minus") {
          w.lo_plus = false;
          w.lo_minus = true;
        } else if (which != "lo_plus") {
          fail_line(line_no, "lead_off third field must be lo_plus or lo_minus");
        }
      }
      spec.lead_windows.push_back(w);
    } else {
      fail_line(line_no, "unknown key '" + key + "'");
    }
  }

  if (spec.sensors.empty()) spec.sensors.push_back({0.0, 36.6, 50.0, 0.0});
  std::sort(spec.sensors.begin(), spec.sensors.end(),
            [](const SensorPoint& a, const SensorPoint& b) { return a.t_s < b.t_s; });

  std::sort(anomalies.begin(), anomalies.end(),
            [](const AnomalyEntry& a, const AnomalyEntry& b) { return a.t < b.t; });
  spec.schedule.clear();
  spec.schedule.push_back({0.0, spec.plan});
  for (const auto& a : anomalies) {
    const ecg::RhythmPlan base = spec.schedule.back().plan;
    if (a.t <= 0.0) {
      spec.schedule.back().plan = ecg::inject_anomaly(base, a.kind);
    } else {
      spec.schedule.push_back({a.t, ecg::inject_anomaly(base, a.kind)});
    }
  }
  return spec;
}

ScenarioSpec load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

DeviceScenario build_scenario(const ScenarioSpec& spec) {
  DeviceScenario scenario;
  const auto morphology = ecg::default_morphology();
  scenario.signal = ecg::generate_scheduled(spec.duration_s, spec.config.fs, spec.schedule,
                                            morphology, spec.noise);
  scenario.sensors = spec.sensors;
  scenario.lead_windows = spec.lead_windows;
  scenario.epoch_us = spec.epoch_us;
  return scenario;
}

}  // namespace hemo::device
