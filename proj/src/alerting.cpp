#include "hemo/alerting.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace hemo::alert {

namespace {

struct MetricValue {
  bool available = false;
  double number = 0.0;                 // numeric metrics
  analysis::Rhythm rhythm = analysis::Rhythm::Indeterminate;
};

MetricValue read_metric(Metric m, const analysis::VitalsSnapshot& s) {
  MetricValue v;
  switch (m) {
    case Metric::Bpm:
      v.available = s.bpm_valid;
      v.number = s.bpm;
      break;
    case Metric::TemperatureC:
      v.available = true;
      v.number = s.temperature_c;
      break;
    case Metric::AlcoholLevel:
      v.available = true;
      v.number = s.alcohol_level;
      break;
    case Metric::Rhythm:
      v.available = s.rhythm != analysis::Rhythm::Indeterminate;
      v.rhythm = s.rhythm;
      break;
  }
  return v;
}

bool condition_holds(const AlertRule& r, const MetricValue& v) {
  if (r.metric == Metric::Rhythm) return v.rhythm == r.rhythm_label;
  switch (r.comparator) {
    case Comparator::Greater: return v.number > r.threshold;
    case Comparator::Less: return v.number < r.threshold;
    case Comparator::GreaterEq: return v.number >= r.threshold;
    case Comparator::LessEq: return v.number <= r.threshold;
    case Comparator::Equal: return v.number == r.threshold;
  }
  return false;
}

// negation of the condition, pushed past the threshold by the hysteresis
bool clear_holds(const AlertRule& r, const MetricValue& v) {
  if (r.metric == Metric::Rhythm) return v.rhythm != r.rhythm_label;
  switch (r.comparator) {
    case Comparator::Greater: return v.number <= r.threshold - r.hysteresis;
    case Comparator::GreaterEq: return v.number < r.threshold - r.hysteresis;
    case Comparator::Less: return v.number >= r.threshold + r.hysteresis;
    case Comparator::LessEq: return v.number > r.threshold + r.hysteresis;
    case Comparator::Equal: return v.number != r.threshold;
  }
  return false;
}

void check_rule(const AlertRule& r) {
  if (r.rule_id.empty()) throw std::invalid_argument("rule without id");
  if (r.sustain_s < 0.0) throw std::invalid_argument("sustain must be >= 0");
  if (r.hysteresis < 0.0) throw std::invalid_argument("hysteresis must be >= 0");
  if (r.metric == Metric::Rhythm && r.comparator != Comparator::Equal)
    throw std::invalid_argument("rhythm rules only support '='");
}

}  // namespace

const char* to_string(Metric m) {
  switch (m) {
    case Metric::Bpm: return "bpm";
    case Metric::TemperatureC: return "temperature_c";
    case Metric::AlcoholLevel: return "alcohol_level";
    case Metric::Rhythm: return "rhythm";
  }
  return "bpm";
}

const char* to_string(Comparator c) {
  switch (c) {
    case Comparator::Greater: return ">";
    case Comparator::Less: return "<";
    case Comparator::GreaterEq: return ">=";
    case Comparator::LessEq: return "<=";
    case Comparator::Equal: return "=";
  }
  return ">";
}

const char* to_string(AlertEvent::Kind k) {
  return k == AlertEvent::Kind::Raise ? "raise" : "clear";
}

std::vector<AlertRule> default_rules() {
  std::vector<AlertRule> rules;
  rules.push_back({"bpm_high", Metric::Bpm, Comparator::Greater, 100.0,
                   analysis::Rhythm::Irregular, 10.0, 5.0});
  rules.push_back({"bpm_low", Metric::Bpm, Comparator::Less, 60.0,
                   analysis::Rhythm::Irregular, 10.0, 5.0});
  rules.push_back({"temp_high", Metric::TemperatureC, Comparator::GreaterEq,
                   kDeviceTempThresholdC, analysis::Rhythm::Irregular, 5.0, 0.5});
  rules.push_back({"alcohol_high", Metric::AlcoholLevel, Comparator::GreaterEq,
                   kDeviceAlcoholThreshold, analysis::Rhythm::Irregular, 3.0, 0.05});
  rules.push_back({"rhythm_irregular", Metric::Rhythm, Comparator::Equal, 0.0,
                   analysis::Rhythm::Irregular, 15.0, 0.0});
  return rules;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail_line(int line_no, const std::string& what) {
  throw std::runtime_error("rules line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<AlertRule> rules_from_config(const std::string& text) {
  std::vector<AlertRule> rules;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;

    auto colon = line.find(':');
    if (colon == std::string::npos) fail_line(line_no, "expected '<rule_id>: ...'");
    AlertRule rule;
    rule.rule_id = trim(line.substr(0, colon));
    if (rule.rule_id.empty()) fail_line(line_no, "empty rule id");
    if (!seen.insert(rule.rule_id).second)
      fail_line(line_no, "duplicate rule id '" + rule.rule_id + "'");

    std::istringstream fields(line.substr(colon + 1));
    std::string metric, cmp, value;
    if (!(fields >> metric >> cmp >> value)) fail_line(line_no, "expected '<metric> <cmp> <value>'");

    if (metric == "bpm") rule.metric = Metric::Bpm;
    else if (metric == "temperature_c") rule.metric = Metric::TemperatureC;
    else if (metric == "alcohol_level") rule.metric = Metric::AlcoholLevel;
    else if (metric == "rhythm") rule.metric = Metric::Rhythm;
    else fail_line(line_no, "unknown metric '" + metric + "'");

    if (cmp == ">") rule.comparator = Comparator::Greater;
    else if (cmp == "<") rule.comparator = Comparator::Less;
    else if (cmp == ">=") rule.comparator = Comparator::GreaterEq;
    else if (cmp == "<=") rule.comparator = Comparator::LessEq;
    else if (cmp == "=") rule.comparator = Comparator::Equal;
    else fail_line(line_no, "unknown comparator '" + cmp + "'");

    if (rule.metric == Metric::Rhythm) {
      if (rule.comparator != Comparator::Equal) fail_line(line_no, "rhythm rules only support '='");
      auto label = analysis::parse_rhythm(value);
      if (!label) fail_line(line_no, "unknown rhythm '" + value + "'");
      rule.rhythm_label = *label;
    } else {
      try {
        std::size_t used = 0;
        rule.threshold = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        fail_line(line_no, "bad threshold '" + value + "'");
      }
    }

    std::string word;
    while (fields >> word) {
      std::string arg;
      if (!(fields >> arg)) fail_line(line_no, "'" + word + "' needs a value");
      if (arg.size() > 1 && arg.back() == 's' && word == "sustain") arg.pop_back();
      double num = 0.0;
      try {
        std::size_t used = 0;
        num = std::stod(arg, &used);
        if (used != arg.size()) throw std::invalid_argument(arg);
      } catch (const std::exception&) {
        fail_line(line_no, "bad number '" + arg + "'");
      }
      if (word == "sustain") rule.sustain_s = num;
      else if (word == "clear-hyst") rule.hysteresis = num;
      else fail_line(line_no, "unknown option '" + word + "'");
    }

    try {
      check_rule(rule);
    } catch (const std::exception& e) {
      fail_line(line_no, e.what());
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

RuleEngine::RuleEngine(std::vector<AlertRule> rules) : rules_(std::move(rules)) {
  for (const AlertRule& r : rules_) check_rule(r);
  states_.resize(rules_.size());
}

std::vector<AlertEvent> RuleEngine::on_snapshot(const analysis::VitalsSnapshot& snap) {
  std::vector<AlertEvent> events;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const AlertRule& rule = rules_[i];
    RuleState& st = states_[i];
    const MetricValue v = read_metric(rule.metric, snap);
    if (!v.available) {
      st.cond_since.reset();
      st.clear_since.reset();
      continue;
    }
    if (!st.active) {
      if (condition_holds(rule, v)) {
        if (!st.cond_since) st.cond_since = snap.t_s;
        if (snap.t_s - *st.cond_since >= rule.sustain_s) {
          events.push_back({rule.rule_id, snap.device_id, AlertEvent::Kind::Raise,
                            *st.cond_since + rule.sustain_s, snap});
          st.active = true;
          st.cond_since.reset();
          st.clear_since.reset();
        }
      } else {
        st.cond_since.reset();
      }
    } else {
      if (clear_holds(rule, v)) {
        if (!st.clear_since) st.clear_since = snap.t_s;
        if (snap.t_s - *st.clear_since >= rule.sustain_s) {
          events.push_back({rule.rule_id, snap.device_id, AlertEvent::Kind::Clear,
                            *st.clear_since + rule.sustain_s, snap});
          st.active = false;
          st.cond_since.reset();
          st.clear_since.reset();
        }
      } else {
        st.clear_since.reset();
      }
    }
  }
  return events;
}

std::vector<AlertEvent> evaluate(const AlertRule& rule,
                                 std::span<const analysis::VitalsSnapshot> snapshots) {
  RuleEngine engine(std::vector<AlertRule>{rule});
  std::vector<AlertEvent> events;
  for (const auto& s : snapshots) {
    auto batch = engine.on_snapshot(s);
    events.insert(events.end(), batch.begin(), batch.end());
  }
  return events;
}

std::string event_to_json(const AlertEvent& e) {
  nlohmann::json j;
  j["rule_id"] = e.rule_id;
  j["device_id"] = wire::device_id_hex(e.device_id);
  j["kind"] = to_string(e.kind);
  j["t"] = e.t_s;
  j["bpm"] = e.snapshot.bpm;
  j["bpm_valid"] = e.snapshot.bpm_valid;
  j["rhythm"] = analysis::to_string(e.snapshot.rhythm);
  j["temperature_c"] = e.snapshot.temperature_c;
  j["alcohol_level"] = e.snapshot.alcohol_level;
  j["lead_ok"] = e.snapshot.lead_ok;
  return j.dump();
}

Dispatcher::Dispatcher(Options opts) : opts_(std::move(opts)), post_(http_post_json) {
  if (opts_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

void Dispatcher::set_http_post(HttpPostFn fn) {
  std::lock_guard<std::mutex> lock(mu_);
  post_ = std::move(fn);
}

void Dispatcher::set_logger(LogFn fn) {
  std::lock_guard<std::mutex> lock(mu_);
  log_ = std::move(fn);
}

DeliveryReceipt Dispatcher::dispatch(const AlertEvent& event) {
  std::lock_guard<std::mutex> lock(mu_);
  ++submitted_;
  const std::string body = event_to_json(event);
  DeliveryReceipt receipt;

  if (!opts_.alert_log_path.empty()) {
    std::ofstream log(opts_.alert_log_path, std::ios::app);
    log << body << '\n';
    log.flush();
  }

  if (!opts_.webhook_url.empty()) {
    receipt.webhook_attempted = true;
    double backoff = opts_.initial_backoff_s;
    for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
      receipt.attempts = attempt;
      if (post_(opts_.webhook_url, body)) {
        receipt.delivered = true;
        break;
      }
      if (attempt < opts_.max_attempts && backoff > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
      }
    }
    if (!receipt.delivered) {
      receipt.dead_lettered = true;
      ++dead_lettered_;
      if (!opts_.dead_letter_path.empty()) {
        std::ofstream dl(opts_.dead_letter_path, std::ios::app);
        dl << body << '\n';
        dl.flush();
      }
      if (log_) {
        log_("event=dead_letter rule=" + event.rule_id +
             " device=" + wire::device_id_hex(event.device_id) +
             " attempts=" + std::to_string(receipt.attempts));
      }
    } else {
      ++delivered_;
    }
  }

  if (log_ && !receipt.dead_lettered) {
    log_("event=alert_dispatch rule=" + event.rule_id + " kind=" + to_string(event.kind) +
         " device=" + wire::device_id_hex(event.device_id) +
         " delivered=" + (receipt.delivered ? "1" : "0"));
  }
  return receipt;
}

std::uint64_t Dispatcher::submitted() const {
  std::lock_guard<std::mutex> lock(mu_);
  return submitted_;
}

std::uint64_t Dispatcher::delivered() const {
  std::lock_guard<std::mutex> lock(mu_);
  return delivered_;
}

std::uint64_t Dispatcher::dead_lettered() const {
  std::lock_guard<std::mutex> lock(mu_);
  return dead_lettered_;
}

}  // namespace hemo::alert
