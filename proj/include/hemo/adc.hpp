#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

// 10-bit ADC code <-> voltage <-> electrode-millivolt conversions shared by
// the device emulator (encode side) and the analysis pipeline (decode side).
// The frontend mapping is part of the wire contract: see PROTOCOL.md.
namespace hemo::adc {

inline constexpr int kAdcBits = 10;
inline constexpr std::uint16_t kCodeMax = 1023;

// Default analog frontend. An R wave of ~1.2 mV lands around 83% of rail.
inline constexpr double kDefaultVref = 3.3;
inline constexpr double kDefaultGainMvPerVolt = 1.1;

inline double default_offset_volts(double vref = kDefaultVref) { return vref / 2.0; }

// code = clamp(round(v/vref * 1023), 0, 1023), round half up.
inline std::uint16_t quantize(double voltage, double vref = kDefaultVref) {
  double scaled = std::floor(voltage / vref * static_cast<double>(kCodeMax) + 0.5);
  scaled = std::clamp(scaled, 0.0, static_cast<double>(kCodeMax));
  return static_cast<std::uint16_t>(scaled);
}

inline double dequantize(std::uint16_t code, double vref = kDefaultVref) {
  return static_cast<double>(code) / static_cast<double>(kCodeMax) * vref;
}

// One quantization step. Round-to-nearest bounds the reconstruction error by
// half of this.
inline double lsb_volts(double vref = kDefaultVref) {
  return vref / static_cast<double>(kCodeMax);
}

inline double mv_to_voltage(double mv, double gain_mv_per_v = kDefaultGainMvPerVolt,
                            double offset_v = default_offset_volts()) {
  return offset_v + mv / gain_mv_per_v;
}

inline double voltage_to_mv(double voltage, double gain_mv_per_v = kDefaultGainMvPerVolt,
                            double offset_v = default_offset_volts()) {
  return (voltage - offset_v) * gain_mv_per_v;
}

inline double code_to_mv(std::uint16_t code, double vref = kDefaultVref,
                         double gain_mv_per_v = kDefaultGainMvPerVolt) {
  return voltage_to_mv(dequantize(code, vref), gain_mv_per_v, default_offset_volts(vref));
}

}  // namespace hemo::adc
