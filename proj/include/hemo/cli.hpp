#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hemo/analysis.hpp"
#include "hemo/wireproto.hpp"

namespace hemo::cli {

// Exit codes are a stable scripting contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;        // bad flags or config
inline constexpr int kExitEnvironment = 2;  // bind/connect/filesystem trouble
inline constexpr int kExitData = 3;         // empty range, malformed stored data

// Deterministic fleet ids: "HEMO" followed by the 1-based index, big-endian.
wire::DeviceId device_id_for_index(int index);

struct SimulateOptions {
  std::string target = "127.0.0.1:7525";  // host:port of the ingest service
  int devices = 1;
  double duration_s = 10.0;
  bool duration_set = false;   // true when the flag/config overrode the scenario
  std::string scenario_path;   // optional scenario file applied to every device
  bool offline = false;
  std::string out_dir;         // offline frame files land here
  std::uint64_t seed = 1;      // device i runs with seed + i
};
int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err);

struct ServeOptions {
  std::string listen = "127.0.0.1:7525";
  std::string store_root = "hemo-data";
  std::string rules_path;    // empty: built-in default rules
  std::string webhook_url;   // empty: no webhook sink
  std::string log_path;      // empty: log lines to stderr
};
// Runs until `stop` goes true (the binary wires SIGINT/SIGTERM to it).
int cmd_serve(const ServeOptions& opts, const std::atomic<bool>& stop, std::ostream& out,
              std::ostream& err);

struct PlotOptions {
  std::string store_root;
  std::string device_hex;  // 16 hex chars
  double t0_s = 0.0;
  double t1_s = 0.0;       // half-open [t0, t1) in device-epoch seconds
  std::string output_path; // SVG; sidecar lands at output_path + ".peaks.txt"
};
int cmd_plot(const PlotOptions& opts, std::ostream& out, std::ostream& err);

struct ReportOptions {
  std::string store_root;
  std::string device_hex;
  double t0_s = 0.0;
  double t1_s = 0.0;
  std::string alerts_path;  // default: <store_root>/alerts.jsonl
};
int cmd_report(const ReportOptions& opts, std::ostream& out, std::ostream& err);

// SVG rendering, split out so figure structure is testable without a store.
struct PlotData {
  std::string device_hex;
  double fs = 0.0;
  std::vector<double> sample_times_s;  // one entry per stored sample in range
  std::vector<double> sample_mv;
  std::vector<analysis::PeakAnnotation> peaks;  // absolute times
};
std::string render_svg(const PlotData& data);

// Samples of the stored records trimmed to [t0, t1), with per-sample times.
struct RangeSamples {
  double fs = 0.0;
  std::vector<double> times_s;
  std::vector<std::uint16_t> codes;
};
RangeSamples collect_range(const std::string& store_root, const wire::DeviceId& id, double t0_s,
                           double t1_s);

}  // namespace hemo::cli
