#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemo/analysis.hpp"
#include "hemo/wireproto.hpp"

namespace hemo::alert {

// One default threshold table shared by the on-device buzzer pre-check and the
// server-side rules, so the two alarm paths cannot drift apart.
inline constexpr double kDeviceTempThresholdC = 38.0;
inline constexpr double kDeviceAlcoholThreshold = 0.25;

enum class Metric { Bpm, TemperatureC, AlcoholLevel, Rhythm };
enum class Comparator { Greater, Less, GreaterEq, LessEq, Equal };

const char* to_string(Metric m);
const char* to_string(Comparator c);

struct AlertRule {
  std::string rule_id;
  Metric metric = Metric::Bpm;
  Comparator comparator = Comparator::Greater;
  double threshold = 0.0;                                        // numeric metrics
  analysis::Rhythm rhythm_label = analysis::Rhythm::Irregular;   // metric == Rhythm
  double sustain_s = 0.0;
  double hysteresis = 0.0;
};

struct AlertEvent {
  enum class Kind { Raise, Clear };
  std::string rule_id;
  wire::DeviceId device_id{};
  Kind kind = Kind::Raise;
  double t_s = 0.0;  // condition start + sustain, not the observing snapshot's time
  analysis::VitalsSnapshot snapshot;  // the snapshot that confirmed the change
};

const char* to_string(AlertEvent::Kind k);

std::vector<AlertRule> default_rules();

// Rule file syntax, one rule per line, `#` comments:
//   <rule_id>: <metric> <comparator> <value> [sustain <seconds>[s]] [clear-hyst <units>]
// e.g. `r1: bpm > 100 sustain 5s clear-hyst 5`. Throws std::runtime_error with
// the offending line number; duplicate rule ids are rejected by name.
std::vector<AlertRule> rules_from_config(const std::string& text);

// Evaluates one device's snapshot stream against a rule set. A raise fires at
// the first snapshot where the condition has held continuously for sustain_s;
// a clear fires when the hysteresis-adjusted negation has held for sustain_s.
// Snapshots where the metric is unavailable (indeterminate rhythm, invalid
// bpm) neither satisfy nor clear: they break both pending runs.
class RuleEngine {
 public:
  explicit RuleEngine(std::vector<AlertRule> rules);
  std::vector<AlertEvent> on_snapshot(const analysis::VitalsSnapshot& snap);
  const std::vector<AlertRule>& rules() const { return rules_; }

 private:
  struct RuleState {
    bool active = false;
    std::optional<double> cond_since;
    std::optional<double> clear_since;
  };
  std::vector<AlertRule> rules_;
  std::vector<RuleState> states_;
};

// One rule over a whole time-ordered trace (batch form of RuleEngine).
std::vector<AlertEvent> evaluate(const AlertRule& rule,
                                 std::span<const analysis::VitalsSnapshot> snapshots);

std::string event_to_json(const AlertEvent& e);

struct DeliveryReceipt {
  bool webhook_attempted = false;
  bool delivered = false;
  int attempts = 0;
  bool dead_lettered = false;
};

// Fans an event out to the configured sinks: always appends a JSON line to the
// alert log; POSTs to the webhook with bounded exponential-backoff retries;
// exhausted events are parked in the dead-letter file. Safe for concurrent
// submission; deliveries are serialized in submission order.
class Dispatcher {
 public:
  struct Options {
    std::string webhook_url;      // empty: no webhook sink configured
    std::string alert_log_path;   // empty: skip the log sink (tests only)
    std::string dead_letter_path;
    int max_attempts = 5;
    double initial_backoff_s = 0.05;  // doubles after each failed attempt
  };
  using HttpPostFn = std::function<bool(const std::string& url, const std::string& json_body)>;
  using LogFn = std::function<void(const std::string& line)>;

  explicit Dispatcher(Options opts);
  void set_http_post(HttpPostFn fn);  // test seam; default posts over HTTP
  void set_logger(LogFn fn);

  DeliveryReceipt dispatch(const AlertEvent& event);

  std::uint64_t submitted() const;
  std::uint64_t delivered() const;
  std::uint64_t dead_lettered() const;

 private:
  Options opts_;
  HttpPostFn post_;
  LogFn log_;
  mutable std::mutex mu_;
  std::uint64_t submitted_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t dead_lettered_ = 0;
};

// Default HttpPostFn: POST json_body to the url, true on a 2xx response.
bool http_post_json(const std::string& url, const std::string& json_body);

}  // namespace hemo::alert
