#include "hemo/cli.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "hemo/alerting.hpp"
#include "hemo/device_sim.hpp"
#include "hemo/server.hpp"
#include "hemo/store.hpp"

namespace hemo::cli {

namespace {

namespace fs = std::filesystem;

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

std::optional<HostPort> parse_host_port(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= s.size()) return std::nullopt;
  HostPort hp;
  hp.host = s.substr(0, colon);
  const std::string port_str = s.substr(colon + 1);
  long port = 0;
  try {
    std::size_t used = 0;
    port = std::stol(port_str, &used);
    if (used != port_str.size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (port < 1 || port > 65535) return std::nullopt;
  hp.port = static_cast<std::uint16_t>(port);
  return hp;
}

int connect_to(const HostPort& hp, std::string& error) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_str = std::to_string(hp.port);
  if (int rc = ::getaddrinfo(hp.host.c_str(), port_str.c_str(), &hints, &res); rc != 0) {
    error = ::gai_strerror(rc);
    return -1;
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    error = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0 && error.empty()) error = "no usable address";
  return fd;
}

bool send_all(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

wire::DeviceId device_id_for_index(int index) {
  wire::DeviceId id{'H', 'E', 'M', 'O', 0, 0, 0, 0};
  const auto v = static_cast<std::uint32_t>(index);
  id[4] = static_cast<std::uint8_t>(v >> 24);
  id[5] = static_cast<std::uint8_t>(v >> 16);
  id[6] = static_cast<std::uint8_t>(v >> 8);
  id[7] = static_cast<std::uint8_t>(v);
  return id;
}

int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.devices < 1) {
    err << "simulate: --devices must be >= 1\n";
    return kExitUsage;
  }

  device::ScenarioSpec base = device::parse_scenario("");  // defaults
  const bool have_file = !opts.scenario_path.empty();
  if (have_file) {
    try {
      base = device::load_scenario_file(opts.scenario_path);
    } catch (const std::exception& e) {
      err << "simulate: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  if (!have_file || opts.duration_set) base.duration_s = opts.duration_s;
  if (!have_file) base.plan.seed = opts.seed;

  const wire::DeviceId zero_id{};
  const bool keep_scenario_id = have_file && opts.devices == 1 && base.config.device_id != zero_id;

  struct DeviceResult {
    std::string hex;
    std::size_t frames = 0;
    std::size_t samples = 0;
    bool ok = false;
    std::string error;
  };
  std::vector<DeviceResult> results(static_cast<std::size_t>(opts.devices));

  if (opts.offline) {
    if (opts.out_dir.empty()) {
      err << "simulate: --offline needs --out <dir>\n";
      return kExitUsage;
    }
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    if (ec) {
      err << "simulate: cannot create " << opts.out_dir << ": " << ec.message() << "\n";
      return kExitEnvironment;
    }
  }

  std::optional<HostPort> target;
  if (!opts.offline) {
    target = parse_host_port(opts.target);
    if (!target) {
      err << "simulate: bad target address '" << opts.target << "'\n";
      return kExitUsage;
    }
  }

  auto run_one = [&](int index) {
    DeviceResult& r = results[static_cast<std::size_t>(index)];
    device::ScenarioSpec spec = base;
    if (!keep_scenario_id) spec.config.device_id = device_id_for_index(index + 1);
    spec.plan.seed = base.plan.seed + static_cast<std::uint64_t>(index);
    // the generator draws every random stream from the first segment's seed
    if (!spec.schedule.empty()) spec.schedule.front().plan.seed = spec.plan.seed;
    r.hex = wire::device_id_hex(spec.config.device_id);

    int fd = -1;
    if (!opts.offline) {
      std::string cerr_msg;
      fd = connect_to(*target, cerr_msg);
      if (fd < 0) {
        r.error = "cannot connect to " + opts.target + ": " + cerr_msg;
        return;
      }
    }

    device::DeviceRun run;
    try {
      const device::DeviceScenario scenario = device::build_scenario(spec);
      run = device::run_device(spec.config, scenario, spec.duration_s);
    } catch (const std::exception& e) {
      r.error = e.what();
      if (fd >= 0) ::close(fd);
      return;
    }

    if (opts.offline) {
      const fs::path path = fs::path(opts.out_dir) / (r.hex + ".frames");
      std::ofstream file(path, std::ios::binary | std::ios::trunc);
      if (!file) {
        r.error = "cannot write " + path.string();
        return;
      }
      for (const auto& frame : run.frames) {
        const auto bytes = wire::encode(frame);
        file.write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        ++r.frames;
        r.samples += frame.samples.size();
      }
      file.flush();
      r.ok = file.good();
      if (!r.ok) r.error = "short write on " + path.string();
      return;
    }

    for (const auto& frame : run.frames) {
      const auto bytes = wire::encode(frame);
      if (!send_all(fd, bytes.data(), bytes.size())) {
        r.error = "send failed to " + opts.target + ": " + std::strerror(errno);
        ::close(fd);
        return;
      }
      ++r.frames;
      r.samples += frame.samples.size();
    }
    ::close(fd);
    r.ok = true;
  };

  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(opts.devices));
  for (int i = 0; i < opts.devices; ++i) workers.emplace_back(run_one, i);
  for (auto& w : workers) w.join();

  bool all_ok = true;
  std::size_t total_frames = 0;
  for (const DeviceResult& r : results) {
    if (r.ok) {
      out << "device=" << r.hex << " frames=" << r.frames << " samples=" << r.samples
          << " gaps=0 status=ok\n";
      total_frames += r.frames;
    } else {
      err << "device=" << r.hex << " status=failed error=" << r.error << "\n";
      all_ok = false;
    }
  }
  if (!all_ok) return kExitEnvironment;
  out << "completed devices=" << opts.devices << " frames=" << total_frames << "\n";
  return kExitOk;
}

int cmd_serve(const ServeOptions& opts, const std::atomic<bool>& stop, std::ostream& out,
              std::ostream& err) {
  const auto listen = parse_host_port(opts.listen);
  if (!listen) {
    err << "serve: bad listen address '" << opts.listen << "'\n";
    return kExitUsage;
  }

  std::vector<alert::AlertRule> rules;
  if (!opts.rules_path.empty()) {
    std::ifstream rf(opts.rules_path);
    if (!rf) {
      err << "serve: cannot open rules file: " << opts.rules_path << "\n";
      return kExitUsage;
    }
    std::ostringstream buf;
    buf << rf.rdbuf();
    try {
      rules = alert::rules_from_config(buf.str());
    } catch (const std::exception& e) {
      err << "serve: " << e.what() << "\n";
      return kExitUsage;
    }
  } else {
    rules = alert::default_rules();
  }

  std::unique_ptr<store::SeriesStore> series;
  try {
    series = std::make_unique<store::SeriesStore>(opts.store_root);
  } catch (const std::exception& e) {
    err << "serve: " << e.what() << "\n";
    return kExitEnvironment;
  }

  // log sink: file when configured, else the caller's error stream
  std::ofstream log_file;
  if (!opts.log_path.empty()) {
    log_file.open(opts.log_path, std::ios::app);
    if (!log_file) {
      err << "serve: cannot open log file: " << opts.log_path << "\n";
      return kExitEnvironment;
    }
  }
  std::mutex log_mu;
  auto log_line = [&](const std::string& line) {
    const auto now_us = std::chrono::duration_cast<std::chrono::microseconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count();
    std::lock_guard<std::mutex> lock(log_mu);
    std::ostream& target = log_file.is_open() ? static_cast<std::ostream&>(log_file) : err;
    target << "ts=" << now_us << " " << line << "\n";
    target.flush();
  };

  alert::Dispatcher::Options dopts;
  dopts.webhook_url = opts.webhook_url;
  dopts.alert_log_path = (fs::path(opts.store_root) / "alerts.jsonl").string();
  dopts.dead_letter_path = (fs::path(opts.store_root) / "alerts-dead-letter.jsonl").string();
  alert::Dispatcher dispatcher(dopts);
  dispatcher.set_logger(log_line);

  std::ofstream metrics_log(fs::path(opts.store_root) / "metrics.log", std::ios::app);
  std::mutex metrics_mu;

  std::mutex engines_mu;
  std::map<wire::DeviceId, std::unique_ptr<alert::RuleEngine>> engines;

  analysis::AnalysisHub hub;
  hub.set_snapshot_sink([&](const analysis::VitalsSnapshot& snap) {
    {
      std::lock_guard<std::mutex> lock(metrics_mu);
      metrics_log << analysis::snapshot_to_line(snap) << "\n";
      metrics_log.flush();
    }
    alert::RuleEngine* engine = nullptr;
    {
      std::lock_guard<std::mutex> lock(engines_mu);
      auto it = engines.find(snap.device_id);
      if (it == engines.end()) {
        it = engines.emplace(snap.device_id, std::make_unique<alert::RuleEngine>(rules)).first;
      }
      engine = it->second.get();
    }
    // safe: snapshots for one device arrive sequentially (per-device pipeline lock)
    for (const alert::AlertEvent& ev : engine->on_snapshot(snap)) dispatcher.dispatch(ev);
  });

  ingest::IngestServer server(series.get(), {listen->host, listen->port});
  server.set_logger(log_line);
  server.set_frame_sink([&hub](const wire::TelemetryFrame& f) { hub.on_frame(f); });
  try {
    server.start();
  } catch (const std::exception& e) {
    err << "serve: " << e.what() << "\n";
    return kExitEnvironment;
  }

  out << "ready listen=" << listen->host << ":" << server.port() << " store=" << opts.store_root
      << " rules=" << rules.size() << "\n";
  out.flush();

  while (!stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }

  server.stop();
  const ingest::ServerStats stats = server.stats();
  out << "stopped frames_ok=" << stats.frames_ok << " rejected=" << stats.frames_rejected
      << " stale=" << stats.stale_frames << " gaps=" << stats.gaps
      << " gap_missing=" << stats.gap_missing << " decode_errors=" << stats.decode_errors
      << " connections=" << stats.connections << " superseded=" << stats.superseded << "\n";
  for (const auto& [hex, c] : stats.per_device) {
    out << "device=" << hex << " frames=" << c.frames_ok << " samples=" << c.samples
        << " gaps=" << c.gaps << " gap_missing=" << c.gap_missing << " stale=" << c.stale
        << " rejected=" << c.rejected << "\n";
  }
  return kExitOk;
}

RangeSamples collect_range(const std::string& store_root, const wire::DeviceId& id, double t0_s,
                           double t1_s) {
  RangeSamples out;
  const auto t0_us = static_cast<std::uint64_t>(std::llround(t0_s * 1e6));
  const auto t1_us = static_cast<std::uint64_t>(std::llround(t1_s * 1e6));
  const auto records = store::query_dir(store_root, id, t0_us, t1_us);
  for (const auto& rec : records) {
    if (out.fs == 0.0) out.fs = static_cast<double>(rec.fs);
    for (std::size_t k = 0; k < rec.codes.size(); ++k) {
      const double t_us = static_cast<double>(rec.t_start_us) +
                          static_cast<double>(k) * 1e6 / static_cast<double>(rec.fs);
      if (t_us < static_cast<double>(t0_us) || t_us >= static_cast<double>(t1_us)) continue;
      out.times_s.push_back(t_us / 1e6);
      out.codes.push_back(rec.codes[k]);
    }
  }
  return out;
}

std::string render_svg(const PlotData& data) {
  constexpr double kWidth = 1200.0, kHeight = 420.0;
  constexpr double kLeft = 50.0, kRight = 20.0, kTop = 30.0, kBottom = 40.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double tmin = 0.0, tmax = 1.0, vmin = -1.0, vmax = 1.0;
  if (!data.sample_times_s.empty()) {
    tmin = data.sample_times_s.front();
    tmax = data.sample_times_s.back();
    vmin = *std::min_element(data.sample_mv.begin(), data.sample_mv.end());
    vmax = *std::max_element(data.sample_mv.begin(), data.sample_mv.end());
  }
  if (tmax <= tmin) tmax = tmin + 1.0;
  const double vpad = std::max(0.05 * (vmax - vmin), 0.1);
  vmin -= vpad;
  vmax += vpad;

  const auto sx = [&](double t) { return kLeft + (t - tmin) / (tmax - tmin) * plot_w; };
  const auto sy = [&](double v) { return kTop + (vmax - v) / (vmax - vmin) * plot_h; };

  std::string svg;
  svg.reserve(64 + 16 * data.sample_times_s.size());
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1200\" height=\"420\" "
         "viewBox=\"0 0 1200 420\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"1200\" height=\"420\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"50\" y=\"20\" font-family=\"monospace\" font-size=\"13\">device " +
         data.device_hex + "  [" + format_double("%.2f", tmin) + " s, " +
         format_double("%.2f", tmax) + " s]  peaks " + std::to_string(data.peaks.size()) +
         "</text>\n";
  svg += "<rect x=\"" + format_double("%.2f", kLeft) + "\" y=\"" + format_double("%.2f", kTop) +
         "\" width=\"" + format_double("%.2f", plot_w) + "\" height=\"" +
         format_double("%.2f", plot_h) + "\" fill=\"none\" stroke=\"#999999\"/>\n";
  svg += "<text x=\"8\" y=\"" + format_double("%.2f", sy(vmax - vpad)) +
         "\" font-family=\"monospace\" font-size=\"10\">" + format_double("%.2f", vmax - vpad) +
         " mV</text>\n";
  svg += "<text x=\"8\" y=\"" + format_double("%.2f", sy(vmin + vpad)) +
         "\" font-family=\"monospace\" font-size=\"10\">" + format_double("%.2f", vmin + vpad) +
         " mV</text>\n";

  svg += "<polyline fill=\"none\" stroke=\"#cc0000\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < data.sample_times_s.size(); ++i) {
    if (i) svg += " ";
    svg += format_double("%.2f", sx(data.sample_times_s[i]));
    svg += ",";
    svg += format_double("%.2f", sy(data.sample_mv[i]));
  }
  svg += "\"/>\n";

  for (const auto& peak : data.peaks) {
    const std::string cx = format_double("%.2f", sx(peak.t_s));
    const std::string cy = format_double("%.2f", sy(peak.amplitude_mv));
    svg += "<circle cx=\"" + cx + "\" cy=\"" + cy + "\" r=\"3\" fill=\"#0044cc\"/>\n";
    svg += "<text x=\"" + cx + "\" y=\"" + format_double("%.2f", sy(peak.amplitude_mv) - 7.0) +
           "\" font-family=\"monospace\" font-size=\"9\" fill=\"#0044cc\" "
           "text-anchor=\"middle\">" +
           format_double("%.2f", peak.t_s) + "s</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

int cmd_plot(const PlotOptions& opts, std::ostream& out, std::ostream& err) {
  const auto id = wire::device_id_from_hex(opts.device_hex);
  if (!id) {
    err << "plot: device id must be 16 hex chars, got '" << opts.device_hex << "'\n";
    return kExitUsage;
  }
  if (!(opts.t1_s > opts.t0_s)) {
    err << "plot: need t0 < t1\n";
    return kExitUsage;
  }
  if (opts.output_path.empty()) {
    err << "plot: --out is required\n";
    return kExitUsage;
  }

  const RangeSamples range = collect_range(opts.store_root, *id, opts.t0_s, opts.t1_s);
  if (range.codes.empty()) {
    err << "plot: no data for device " << opts.device_hex << " in ["
        << format_double("%.3f", opts.t0_s) << ", " << format_double("%.3f", opts.t1_s) << ")\n";
    return kExitData;
  }

  PlotData plot;
  plot.device_hex = opts.device_hex;
  plot.fs = range.fs;
  plot.sample_times_s = range.times_s;
  plot.sample_mv.reserve(range.codes.size());
  for (std::uint16_t c : range.codes) plot.sample_mv.push_back(adc::code_to_mv(c));

  analysis::PeakDetector detector(range.fs);
  const auto rel_peaks = detector.process(plot.sample_mv);
  plot.peaks.reserve(rel_peaks.size());
  std::vector<double> peak_times;
  for (const auto& p : rel_peaks) {
    // map the detector's sample index back to the stored sample's actual time
    const auto idx = static_cast<std::size_t>(std::llround(p.t_s * range.fs));
    analysis::PeakAnnotation abs = p;
    abs.t_s = plot.sample_times_s[std::min(idx, plot.sample_times_s.size() - 1)];
    plot.peaks.push_back(abs);
    peak_times.push_back(abs.t_s);
  }

  std::ofstream svg_file(opts.output_path, std::ios::trunc);
  if (!svg_file) {
    err << "plot: cannot write " << opts.output_path << "\n";
    return kExitEnvironment;
  }
  svg_file << render_svg(plot);
  svg_file.flush();
  if (!svg_file.good()) {
    err << "plot: short write on " << opts.output_path << "\n";
    return kExitEnvironment;
  }

  const std::string sidecar_path = opts.output_path + ".peaks.txt";
  std::ofstream sidecar(sidecar_path, std::ios::trunc);
  if (!sidecar) {
    err << "plot: cannot write " << sidecar_path << "\n";
    return kExitEnvironment;
  }
  sidecar << "# peak annotations: t_s amplitude_mv confidence\n";
  for (const auto& p : plot.peaks) {
    sidecar << "peak t=" << format_double("%.6f", p.t_s)
            << " amplitude_mv=" << format_double("%.6f", p.amplitude_mv)
            << " confidence=" << format_double("%.4f", p.confidence) << "\n";
  }
  sidecar << "peaks=" << plot.peaks.size() << "\n";
  const auto bpm = analysis::heart_rate(peak_times);
  if (bpm) {
    sidecar << "bpm=" << format_double("%.6f", *bpm) << "\n";
  } else {
    sidecar << "bpm=indeterminate\n";
  }
  sidecar.flush();

  out << "wrote " << opts.output_path << " samples=" << plot.sample_times_s.size()
      << " peaks=" << plot.peaks.size() << "\n";
  return kExitOk;
}

int cmd_report(const ReportOptions& opts, std::ostream& out, std::ostream& err) {
  const auto id = wire::device_id_from_hex(opts.device_hex);
  if (!id) {
    err << "report: device id must be 16 hex chars, got '" << opts.device_hex << "'\n";
    return kExitUsage;
  }
  if (!(opts.t1_s > opts.t0_s)) {
    err << "report: need t0 < t1\n";
    return kExitUsage;
  }

  const auto t0_us = static_cast<std::uint64_t>(std::llround(opts.t0_s * 1e6));
  const auto t1_us = static_cast<std::uint64_t>(std::llround(opts.t1_s * 1e6));
  const auto records = store::query_dir(opts.store_root, *id, t0_us, t1_us);
  const RangeSamples range = collect_range(opts.store_root, *id, opts.t0_s, opts.t1_s);

  out << "device=" << opts.device_hex << " range=[" << format_double("%.3f", opts.t0_s) << ", "
      << format_double("%.3f", opts.t1_s) << ")\n";
  out << "samples=" << range.codes.size() << "\n";

  // coverage: a hole between consecutive stored records counts as one gap
  std::size_t gaps = 0;
  std::uint64_t missing_samples = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const double period_us = 1e6 / static_cast<double>(records[i].fs);
    const double hole =
        static_cast<double>(records[i].t_start_us) - static_cast<double>(records[i - 1].end_us());
    if (hole > 0.5 * period_us) {
      ++gaps;
      missing_samples += static_cast<std::uint64_t>(std::llround(hole / period_us));
    }
  }
  out << "coverage_gaps=" << gaps << " missing_samples=" << missing_samples << "\n";

  std::vector<double> peak_times;
  std::map<analysis::Rhythm, std::size_t> histogram;
  double bpm_min = 0.0, bpm_max = 0.0, bpm_sum = 0.0;
  std::size_t bpm_n = 0;
  if (!range.codes.empty()) {
    std::vector<double> mv;
    mv.reserve(range.codes.size());
    for (std::uint16_t c : range.codes) mv.push_back(adc::code_to_mv(c));
    analysis::PeakDetector detector(range.fs);
    for (const auto& p : detector.process(mv)) {
      const auto idx = static_cast<std::size_t>(std::llround(p.t_s * range.fs));
      peak_times.push_back(range.times_s[std::min(idx, range.times_s.size() - 1)]);
    }
    for (std::size_t i = 2; i < peak_times.size(); ++i) {
      const std::span<const double> prefix(peak_times.data(), i + 1);
      const std::span<const double> window =
          prefix.size() > 9 ? prefix.subspan(prefix.size() - 9) : prefix;
      const auto bpm = analysis::heart_rate(window);
      if (bpm) {
        if (bpm_n == 0) {
          bpm_min = bpm_max = *bpm;
        } else {
          bpm_min = std::min(bpm_min, *bpm);
          bpm_max = std::max(bpm_max, *bpm);
        }
        bpm_sum += *bpm;
        ++bpm_n;
      }
      ++histogram[analysis::classify(true, analysis::rr_stats(window))];
    }
  }
  out << "peaks=" << peak_times.size() << "\n";
  if (bpm_n > 0) {
    out << "bpm_min=" << format_double("%.2f", bpm_min)
        << " bpm_mean=" << format_double("%.2f", bpm_sum / static_cast<double>(bpm_n))
        << " bpm_max=" << format_double("%.2f", bpm_max) << "\n";
  } else {
    out << "bpm=indeterminate\n";
  }
  out << "rhythm";
  for (const auto label : {analysis::Rhythm::NormalSinus, analysis::Rhythm::Tachycardia,
                           analysis::Rhythm::Bradycardia, analysis::Rhythm::Irregular,
                           analysis::Rhythm::Indeterminate}) {
    out << " " << analysis::to_string(label) << "=" << histogram[label];
  }
  out << "\n";

  // alert events inside the window, from the dispatcher's local log
  const std::string alerts_path = opts.alerts_path.empty()
                                      ? (fs::path(opts.store_root) / "alerts.jsonl").string()
                                      : opts.alerts_path;
  std::vector<std::string> alert_lines;
  std::ifstream alerts(alerts_path);
  if (alerts) {
    std::string line;
    while (std::getline(alerts, line)) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.value("device_id", "") != opts.device_hex) continue;
        const double t = j.value("t", 0.0);
        if (t < opts.t0_s || t >= opts.t1_s) continue;
        alert_lines.push_back("alert rule=" + j.value("rule_id", std::string("?")) +
                              " kind=" + j.value("kind", std::string("?")) +
                              " t=" + format_double("%.3f", t));
      } catch (const nlohmann::json::exception&) {
        // skip unparseable lines; the log may be mid-append
      }
    }
  }
  out << "alerts=" << alert_lines.size() << "\n";
  for (const auto& line : alert_lines) out << line << "\n";
  return kExitOk;
}

}  // namespace hemo::cli
