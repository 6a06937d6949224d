#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hemo/adc.hpp"
#include "hemo/ecg_synth.hpp"
#include "hemo/wireproto.hpp"

// Emulates one sensing node: ECG through a 10-bit ADC, DHT11-style
// temperature/humidity polling, an alcohol channel, lead-off handling, and
// frame assembly. A device run is a pure function of (config, scenario).
namespace hemo::device {

struct DeviceConfig {
  wire::DeviceId device_id{};
  double fs = 250.0;                 // >= 100
  double vref = adc::kDefaultVref;   // > 0
  std::uint16_t batch_size = 250;    // 1..4096 samples per frame
  double temp_poll_interval_s = 1.0; // >= 1
  double frontend_gain_mv_per_v = adc::kDefaultGainMvPerVolt;
  double frontend_offset_v = adc::kDefaultVref / 2.0;
};

struct AdcReading {
  std::uint16_t code = 0;  // 0..1023
};

struct SensorSuite {
  int temperature_c = 37;   // integer-resolved, clamped 0..50
  int humidity_pct = 50;    // clamped 20..90
  double alcohol_level = 0; // fraction of full scale, clamped 0..1
};

struct LeadState {
  bool lo_plus = false;
  bool lo_minus = false;

  bool off() const { return lo_plus || lo_minus; }
};

enum class LocalEventKind { BuzzerOn, BuzzerOff, DisplayUpdate };

struct LocalEvent {
  double t_s;
  LocalEventKind kind;
  std::vector<std::string> display_lines;  // set for DisplayUpdate
};

// One breakpoint of the world the sensors observe; values are interpolated
// linearly between breakpoints and held constant outside them.
struct SensorPoint {
  double t_s;
  double temperature_c;
  double humidity_pct;
  double alcohol_level;
};

struct LeadWindow {
  double t0_s;
  double t1_s;
  bool lo_plus = true;
  bool lo_minus = false;
};

struct DeviceScenario {
  ecg::AnnotatedSignal signal;
  std::vector<SensorPoint> sensors;
  std::vector<LeadWindow> lead_windows;
  std::uint64_t epoch_us = 0;  // wall-clock base for frame timestamps
};

struct DeviceRun {
  std::vector<wire::TelemetryFrame> frames;
  std::vector<LocalEvent> events;
};

// code = clamp(round(voltage/vref * 1023), 0, 1023), round half up.
AdcReading quantize(double voltage, const DeviceConfig& cfg);

double dequantize(const AdcReading& reading, const DeviceConfig& cfg);

// Maps each millivolt sample through the analog frontend and the ADC.
// Lead-off saturates every code to full scale. Throws on fs mismatch.
std::vector<AdcReading> sample_ecg(const ecg::AnnotatedSignal& signal, const LeadState& lead,
                                   const DeviceConfig& cfg);

// Value observed at the most recent poll instant <= t (polls every
// temp_poll_interval). Temperature and humidity get DHT11 integer treatment.
SensorSuite poll_sensors(double t_s, std::span<const SensorPoint> trajectory,
                         const DeviceConfig& cfg);

// Runs the device for duration_s: emits ceil(duration*fs/batch) frames with
// contiguous sequence numbers and the local buzzer/display event trace.
// Throws std::invalid_argument when the scenario does not cover the duration.
DeviceRun run_device(const DeviceConfig& cfg, const DeviceScenario& scenario, double duration_s);

// ---- scenario files -------------------------------------------------------
// Plain-text key=value format; see README.md for the key reference.

struct ScenarioSpec {
  DeviceConfig config;
  ecg::RhythmPlan plan;
  std::vector<ecg::PlanSegment> schedule;  // built from plan + anomaly entries
  ecg::NoiseSpec noise;
  std::vector<SensorPoint> sensors;
  std::vector<LeadWindow> lead_windows;
  double duration_s = 60.0;
  std::uint64_t epoch_us = 0;
};

// Parses a scenario file. Throws std::runtime_error with a line-numbered
// message on syntax errors or unknown keys.
ScenarioSpec parse_scenario(const std::string& text);
ScenarioSpec load_scenario_file(const std::string& path);

// Renders the ECG and packages everything run_device needs.
DeviceScenario build_scenario(const ScenarioSpec& spec);

}  // namespace hemo::device
