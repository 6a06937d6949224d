#include <atomic>
#include <csignal>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hemo/cli.hpp"
#include "hemo/kvconfig.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

// One `key = value` config entry feeding a CLI option. Command-line flags and
// HEMO_* environment variables win (CLI11 counts both); the file fills the rest.
struct Binding {
  std::string key;
  CLI::Option* opt;
  std::function<void(const hemo::config::Config&)> apply;
};

int apply_file_config(const std::string& path, const std::vector<Binding>& bindings,
                      std::ostream& err) {
  if (path.empty()) return hemo::cli::kExitOk;
  hemo::config::Config cfg;
  try {
    cfg = hemo::config::load_kv_file(path);
  } catch (const std::exception& e) {
    err << "config: " << e.what() << "\n";
    return hemo::cli::kExitUsage;
  }
  std::set<std::string> known;
  for (const Binding& b : bindings) known.insert(b.key);
  for (const auto& [key, entry] : cfg.entries) {
    if (!known.count(key)) {
      err << "config line " << entry.line << ": unknown key '" << key << "'\n";
      return hemo::cli::kExitUsage;
    }
  }
  try {
    for (const Binding& b : bindings) {
      if (cfg.has(b.key) && b.opt->count() == 0) b.apply(cfg);
    }
  } catch (const std::exception& e) {
    err << "config: " << e.what() << "\n";
    return hemo::cli::kExitUsage;
  }
  return hemo::cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hemo: ECG device emulation, telemetry ingestion, and analysis"};
  app.require_subcommand(1);

  // ---- simulate -------------------------------------------------------------
  hemo::cli::SimulateOptions sim;
  std::string sim_config;
  CLI::App* simulate = app.add_subcommand("simulate", "emulate devices and stream frames");
  auto* sim_target =
      simulate->add_option("--target", sim.target, "ingest address host:port")->envname("HEMO_TARGET");
  auto* sim_devices =
      simulate->add_option("--devices", sim.devices, "number of emulated devices")
          ->envname("HEMO_DEVICES");
  auto* sim_duration = simulate->add_option("--duration", sim.duration_s, "run length in seconds")
                           ->envname("HEMO_DURATION");
  auto* sim_scenario = simulate->add_option("--scenario", sim.scenario_path, "scenario file")
                           ->envname("HEMO_SCENARIO");
  auto* sim_offline = simulate->add_flag("--offline", sim.offline, "write frame files, no network")
                          ->envname("HEMO_OFFLINE");
  auto* sim_out = simulate->add_option("--out", sim.out_dir, "output directory for --offline")
                      ->envname("HEMO_OUT");
  auto* sim_seed =
      simulate->add_option("--seed", sim.seed, "base RNG seed; device i uses seed + i")
          ->envname("HEMO_SEED");
  simulate->add_option("--config", sim_config, "key = value config file")->envname("HEMO_CONFIG");

  // ---- serve ----------------------------------------------------------------
  hemo::cli::ServeOptions srv;
  std::string srv_config;
  CLI::App* serve = app.add_subcommand("serve", "ingest, persist, analyze, and alert");
  auto* srv_listen =
      serve->add_option("--listen", srv.listen, "bind address host:port")->envname("HEMO_LISTEN");
  auto* srv_store =
      serve->add_option("--store", srv.store_root, "storage root directory")->envname("HEMO_STORE");
  auto* srv_rules =
      serve->add_option("--rules", srv.rules_path, "alert rules file")->envname("HEMO_RULES");
  auto* srv_webhook = serve->add_option("--webhook", srv.webhook_url, "alert webhook URL")
                          ->envname("HEMO_WEBHOOK");
  auto* srv_log =
      serve->add_option("--log", srv.log_path, "operational log file")->envname("HEMO_LOG");
  serve->add_option("--config", srv_config, "key = value config file")->envname("HEMO_CONFIG");

  // ---- plot -----------------------------------------------------------------
  hemo::cli::PlotOptions plot;
  std::string plot_config;
  CLI::App* plot_cmd = app.add_subcommand("plot", "render stored ECG to an SVG figure");
  auto* plot_store =
      plot_cmd->add_option("--store", plot.store_root, "storage root directory")
          ->envname("HEMO_STORE");
  auto* plot_device = plot_cmd->add_option("--device", plot.device_hex, "device id, 16 hex chars")
                          ->envname("HEMO_DEVICE");
  auto* plot_t0 = plot_cmd->add_option("--t0", plot.t0_s, "range start, seconds");
  auto* plot_t1 = plot_cmd->add_option("--t1", plot.t1_s, "range end, seconds (exclusive)");
  auto* plot_out = plot_cmd->add_option("--out", plot.output_path, "output SVG path");
  plot_cmd->add_option("--config", plot_config, "key = value config file")->envname("HEMO_CONFIG");

  // ---- report ----------------------------------------------------------------
  hemo::cli::ReportOptions rep;
  std::string rep_config;
  CLI::App* report = app.add_subcommand("report", "summarize a stored time range");
  auto* rep_store = report->add_option("--store", rep.store_root, "storage root directory")
                        ->envname("HEMO_STORE");
  auto* rep_device = report->add_option("--device", rep.device_hex, "device id, 16 hex chars")
                         ->envname("HEMO_DEVICE");
  auto* rep_t0 = report->add_option("--t0", rep.t0_s, "range start, seconds");
  auto* rep_t1 = report->add_option("--t1", rep.t1_s, "range end, seconds (exclusive)");
  auto* rep_alerts = report->add_option("--alerts", rep.alerts_path, "alert log path");
  report->add_option("--config", rep_config, "key = value config file")->envname("HEMO_CONFIG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? hemo::cli::kExitOk : hemo::cli::kExitUsage;
  }

  const auto str = [](const hemo::config::Config& c, const std::string& k) { return *c.get(k); };

  if (simulate->parsed()) {
    const std::vector<Binding> bindings = {
        {"target", sim_target, [&](const auto& c) { sim.target = str(c, "target"); }},
        {"devices", sim_devices,
         [&](const auto& c) { sim.devices = static_cast<int>(*c.get_int("devices")); }},
        {"duration", sim_duration,
         [&](const auto& c) {
           sim.duration_s = *c.get_double("duration");
           sim.duration_set = true;
         }},
        {"scenario", sim_scenario, [&](const auto& c) { sim.scenario_path = str(c, "scenario"); }},
        {"offline", sim_offline, [&](const auto& c) { sim.offline = *c.get_bool("offline"); }},
        {"out", sim_out, [&](const auto& c) { sim.out_dir = str(c, "out"); }},
        {"seed", sim_seed,
         [&](const auto& c) { sim.seed = static_cast<std::uint64_t>(*c.get_int("seed")); }},
    };
    if (int rc = apply_file_config(sim_config, bindings, std::cerr); rc != 0) return rc;
    if (sim_duration->count() > 0) sim.duration_set = true;
    return hemo::cli::cmd_simulate(sim, std::cout, std::cerr);
  }

  if (serve->parsed()) {
    const std::vector<Binding> bindings = {
        {"listen", srv_listen, [&](const auto& c) { srv.listen = str(c, "listen"); }},
        {"store", srv_store, [&](const auto& c) { srv.store_root = str(c, "store"); }},
        {"rules", srv_rules, [&](const auto& c) { srv.rules_path = str(c, "rules"); }},
        {"webhook", srv_webhook, [&](const auto& c) { srv.webhook_url = str(c, "webhook"); }},
        {"log", srv_log, [&](const auto& c) { srv.log_path = str(c, "log"); }},
    };
    if (int rc = apply_file_config(srv_config, bindings, std::cerr); rc != 0) return rc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    return hemo::cli::cmd_serve(srv, g_stop, std::cout, std::cerr);
  }

  if (plot_cmd->parsed()) {
    const std::vector<Binding> bindings = {
        {"store", plot_store, [&](const auto& c) { plot.store_root = str(c, "store"); }},
        {"device", plot_device, [&](const auto& c) { plot.device_hex = str(c, "device"); }},
        {"t0", plot_t0, [&](const auto& c) { plot.t0_s = *c.get_double("t0"); }},
        {"t1", plot_t1, [&](const auto& c) { plot.t1_s = *c.get_double("t1"); }},
        {"out", plot_out, [&](const auto& c) { plot.output_path = str(c, "out"); }},
    };
    if (int rc = apply_file_config(plot_config, bindings, std::cerr); rc != 0) return rc;
    return hemo::cli::cmd_plot(plot, std::cout, std::cerr);
  }

  const std::vector<Binding> bindings = {
      {"store", rep_store, [&](const auto& c) { rep.store_root = str(c, "store"); }},
      {"device", rep_device, [&](const auto& c) { rep.device_hex = str(c, "device"); }},
      {"t0", rep_t0, [&](const auto& c) { rep.t0_s = *c.get_double("t0"); }},
      {"t1", rep_t1, [&](const auto& c) { rep.t1_s = *c.get_double("t1"); }},
      {"alerts", rep_alerts, [&](const auto& c) { rep.alerts_path = str(c, "alerts"); }},
  };
  if (int rc = apply_file_config(rep_config, bindings, std::cerr); rc != 0) return rc;
  return hemo::cli::cmd_report(rep, std::cout, std::cerr);
}
