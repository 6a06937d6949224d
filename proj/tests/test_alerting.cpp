#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"

#include "hemo/alerting.hpp"

using namespace hemo;
namespace fs = std::filesystem;

namespace {

analysis::VitalsSnapshot snap(double t, double bpm = 72.0, double temp = 36.6,
                              double alcohol = 0.0,
                              analysis::Rhythm rhythm = analysis::Rhythm::NormalSinus,
                              bool bpm_valid = true) {
  analysis::VitalsSnapshot s;
  s.device_id = {1, 1, 1, 1, 1, 1, 1, 1};
  s.t_s = t;
  s.bpm = bpm;
  s.bpm_valid = bpm_valid;
  s.rr_mean_s = bpm > 0 ? 60.0 / bpm : 0.0;
  s.temperature_c = temp;
  s.alcohol_level = alcohol;
  s.rhythm = rhythm;
  s.lead_ok = rhythm != analysis::Rhythm::Indeterminate;
  return s;
}

alert::AlertRule temp_rule(double sustain = 5.0, double hyst = 0.5) {
  alert::AlertRule r;
  r.rule_id = "temp_high";
  r.metric = alert::Metric::TemperatureC;
  r.comparator = alert::Comparator::GreaterEq;
  r.threshold = 38.0;
  r.sustain_s = sustain;
  r.hysteresis = hyst;
  return r;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const char* tag) {
    path = fs::temp_directory_path() /
           (std::string("hemo_alert_") + tag + "_" + std::to_string(std::random_device{}()));
  }
  ~TempFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
  std::vector<std::string> lines() const {
    std::vector<std::string> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
  }
};

}  // namespace

TEST_CASE("a sustained fever raises once, at condition start plus sustain") {
  alert::RuleEngine engine({temp_rule()});
  std::vector<alert::AlertEvent> events;
  for (int t = 95; t <= 120; ++t) {
    const double temp = t >= 100 ? 38.5 : 36.6;
    for (const auto& e : engine.on_snapshot(snap(t, 72.0, temp))) events.push_back(e);
  }
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == alert::AlertEvent::Kind::Raise);
  CHECK(events[0].rule_id == "temp_high");
  CHECK(events[0].t_s == 105.0);  // crossed at 100, sustained 5
  CHECK(events[0].snapshot.temperature_c == 38.5);

  // cooling clears after the hysteresis-adjusted negation holds for sustain
  std::vector<alert::AlertEvent> clears;
  for (int t = 121; t <= 130; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 72.0, 36.6))) clears.push_back(e);
  }
  REQUIRE(clears.size() == 1);
  CHECK(clears[0].kind == alert::AlertEvent::Kind::Clear);
  CHECK(clears[0].t_s == 126.0);
}

TEST_CASE("oscillation around the threshold never raises; oscillation inside the hysteresis band never clears") {
  // below sustain: alternate across the threshold each second
  alert::RuleEngine flappy({temp_rule(5.0, 0.5)});
  for (int t = 0; t < 60; ++t) {
    const double temp = (t % 2 == 0) ? 38.2 : 37.8;
    CHECK(flappy.on_snapshot(snap(t, 72.0, temp)).empty());
  }

  // once active, readings wobbling above (threshold - hysteresis) keep it active
  alert::RuleEngine engine({temp_rule(5.0, 0.5)});
  std::size_t raises = 0;
  for (int t = 0; t <= 10; ++t) {
    raises += engine.on_snapshot(snap(t, 72.0, 38.5)).size();
  }
  REQUIRE(raises == 1);
  for (int t = 11; t <= 60; ++t) {
    const double temp = (t % 2 == 0) ? 38.3 : 37.7;  // never under 37.5
    CHECK(engine.on_snapshot(snap(t, 72.0, temp)).empty());
  }
  // a real cooldown still clears exactly once
  std::size_t clears = 0;
  for (int t = 61; t <= 70; ++t) {
    clears += engine.on_snapshot(snap(t, 72.0, 37.0)).size();
  }
  CHECK(clears == 1);
}

TEST_CASE("unavailable metrics break both pending runs") {
  alert::AlertRule r;
  r.rule_id = "bpm_high";
  r.metric = alert::Metric::Bpm;
  r.comparator = alert::Comparator::Greater;
  r.threshold = 100.0;
  r.sustain_s = 5.0;
  r.hysteresis = 5.0;
  alert::RuleEngine engine({r});

  // 3 s of tachycardia, then an invalid-bpm snapshot, then 4 more seconds:
  // the pre-gap seconds must not count toward sustain
  std::vector<alert::AlertEvent> events;
  for (int t = 0; t <= 3; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 130.0))) events.push_back(e);
  }
  for (const auto& e :
       engine.on_snapshot(snap(4, 0.0, 36.6, 0.0, analysis::Rhythm::Indeterminate, false))) {
    events.push_back(e);
  }
  for (int t = 5; t <= 9; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 130.0))) events.push_back(e);
  }
  CHECK(events.empty());  // 9 - 5 = 4 s < sustain
  auto raised = engine.on_snapshot(snap(10, 130.0));
  REQUIRE(raised.size() == 1);
  CHECK(raised[0].t_s == 10.0);  // run restarted at t = 5

  // same for the clear side
  events.clear();
  for (int t = 11; t <= 13; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 70.0))) events.push_back(e);
  }
  for (const auto& e :
       engine.on_snapshot(snap(14, 0.0, 36.6, 0.0, analysis::Rhythm::Indeterminate, false))) {
    events.push_back(e);
  }
  for (int t = 15; t <= 19; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 70.0))) events.push_back(e);
  }
  CHECK(events.empty());
  auto cleared = engine.on_snapshot(snap(20, 70.0));
  REQUIRE(cleared.size() == 1);
  CHECK(cleared[0].kind == alert::AlertEvent::Kind::Clear);
  CHECK(cleared[0].t_s == 20.0);
}

TEST_CASE("rhythm rules match labels and ignore indeterminate stretches") {
  alert::AlertRule r;
  r.rule_id = "rhythm_irregular";
  r.metric = alert::Metric::Rhythm;
  r.comparator = alert::Comparator::Equal;
  r.rhythm_label = analysis::Rhythm::Irregular;
  r.sustain_s = 15.0;
  alert::RuleEngine engine({r});

  std::vector<alert::AlertEvent> events;
  for (int t = 0; t <= 20; ++t) {
    for (const auto& e :
         engine.on_snapshot(snap(t, 80.0, 36.6, 0.0, analysis::Rhythm::Irregular))) {
      events.push_back(e);
    }
  }
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == alert::AlertEvent::Kind::Raise);
  CHECK(events[0].t_s == 15.0);

  events.clear();
  for (int t = 21; t <= 40; ++t) {
    for (const auto& e : engine.on_snapshot(snap(t, 80.0))) events.push_back(e);
  }
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == alert::AlertEvent::Kind::Clear);
  CHECK(events[0].t_s == 36.0);  // normal rhythm from t = 21, sustained 15
}

TEST_CASE("zero sustain fires on the first qualifying snapshot") {
  alert::RuleEngine engine({temp_rule(0.0, 0.5)});
  auto raised = engine.on_snapshot(snap(7.25, 72.0, 39.0));
  REQUIRE(raised.size() == 1);
  CHECK(raised[0].t_s == 7.25);
  auto cleared = engine.on_snapshot(snap(8.25, 72.0, 36.0));
  REQUIRE(cleared.size() == 1);
  CHECK(cleared[0].t_s == 8.25);
}

TEST_CASE("raises and clears strictly alternate on random traces") {
  std::mt19937_64 rng(20250816);
  for (int trace = 0; trace < 100; ++trace) {
    alert::RuleEngine engine(alert::default_rules());
    std::map<std::string, alert::AlertEvent::Kind> last_kind;
    double temp = 37.0, bpm = 80.0, alcohol = 0.1;
    for (int step = 0; step < 120; ++step) {
      temp = std::clamp(temp + (static_cast<double>(rng() % 200) - 100.0) / 150.0, 35.0, 41.0);
      bpm = std::clamp(bpm + (static_cast<double>(rng() % 200) - 100.0) / 8.0, 30.0, 180.0);
      alcohol = std::clamp(alcohol + (static_cast<double>(rng() % 200) - 100.0) / 800.0, 0.0, 1.0);
      const bool valid = rng() % 10 != 0;
      const auto rhythm = rng() % 12 == 0 ? analysis::Rhythm::Irregular
                          : rng() % 15 == 0 ? analysis::Rhythm::Indeterminate
                                            : analysis::Rhythm::NormalSinus;
      const auto events =
          engine.on_snapshot(snap(step * 0.5, bpm, temp, alcohol, rhythm, valid));
      for (const auto& e : events) {
        const auto it = last_kind.find(e.rule_id);
        if (it == last_kind.end()) {
          CHECK(e.kind == alert::AlertEvent::Kind::Raise);  // a clear can never come first
        } else {
          CHECK(e.kind != it->second);  // never two raises or two clears in a row
        }
        last_kind[e.rule_id] = e.kind;
      }
    }
  }
}

TEST_CASE("batch evaluation agrees with the streaming engine") {
  std::vector<analysis::VitalsSnapshot> trace;
  std::mt19937_64 rng(5);
  double temp = 37.0;
  for (int t = 0; t < 300; ++t) {
    temp = std::clamp(temp + (static_cast<double>(rng() % 200) - 100.0) / 120.0, 35.0, 41.0);
    trace.push_back(snap(t, 72.0, temp));
  }
  const auto rule = temp_rule(4.0, 0.5);
  const auto batch = alert::evaluate(rule, trace);

  alert::RuleEngine engine({rule});
  std::vector<alert::AlertEvent> streamed;
  for (const auto& s : trace) {
    for (const auto& e : engine.on_snapshot(s)) streamed.push_back(e);
  }
  REQUIRE(batch.size() == streamed.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].kind == streamed[i].kind);
    CHECK(batch[i].t_s == streamed[i].t_s);
  }
}

TEST_CASE("the default rule set covers rate, temperature, alcohol, and rhythm") {
  const auto rules = alert::default_rules();
  REQUIRE(rules.size() == 5);
  CHECK(rules[0].rule_id == "bpm_high");
  CHECK(rules[1].rule_id == "bpm_low");
  CHECK(rules[2].rule_id == "temp_high");
  CHECK(rules[2].threshold == 38.0);
  CHECK(rules[3].rule_id == "alcohol_high");
  CHECK(rules[3].threshold == 0.25);
  CHECK(rules[4].rule_id == "rhythm_irregular");
  CHECK(rules[4].sustain_s == 15.0);
}

TEST_CASE("rule files parse, with line-numbered diagnostics") {
  const auto rules = alert::rules_from_config(
      "# comment\n"
      "r1: bpm > 100 sustain 5s clear-hyst 5\n"
      "\n"
      "r2: temperature_c >= 38 sustain 5 clear-hyst 0.5\n"
      "r3: rhythm = irregular sustain 15\n"
      "r4: alcohol_level <= 0.001\n");
  REQUIRE(rules.size() == 4);
  CHECK(rules[0].metric == alert::Metric::Bpm);
  CHECK(rules[0].comparator == alert::Comparator::Greater);
  CHECK(rules[0].threshold == 100.0);
  CHECK(rules[0].sustain_s == 5.0);
  CHECK(rules[0].hysteresis == 5.0);
  CHECK(rules[1].comparator == alert::Comparator::GreaterEq);
  CHECK(rules[2].metric == alert::Metric::Rhythm);
  CHECK(rules[2].rhythm_label == analysis::Rhythm::Irregular);
  CHECK(rules[3].comparator == alert::Comparator::LessEq);
  CHECK(rules[3].sustain_s == 0.0);

  CHECK_THROWS_WITH_AS(alert::rules_from_config("r1: pulse > 10\n"),
                       doctest::Contains("line 1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("# x\nr1: bpm >> 10\n"),
                       doctest::Contains("unknown comparator"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("r1: bpm > ten\n"),
                       doctest::Contains("bad threshold"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("r1: bpm > 10\nr1: bpm < 5\n"),
                       doctest::Contains("duplicate rule id"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("r1: bpm > 10 sustain\n"),
                       doctest::Contains("needs a value"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("r1: rhythm = flutter\n"),
                       doctest::Contains("unknown rhythm"), std::runtime_error);
  CHECK_THROWS_WITH_AS(alert::rules_from_config("bpm > 10\n"),
                       doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("alert events serialize with every field a responder needs") {
  alert::AlertEvent e;
  e.rule_id = "temp_high";
  e.device_id = {0x48, 0x45, 0x4d, 0x4f, 0, 0, 0, 1};
  e.kind = alert::AlertEvent::Kind::Raise;
  e.t_s = 105.0;
  e.snapshot = snap(105.0, 71.0, 38.5);
  const std::string json = alert::event_to_json(e);
  CHECK(json.find("\"rule_id\":\"temp_high\"") != std::string::npos);
  CHECK(json.find("\"device_id\":\"48454d4f00000001\"") != std::string::npos);
  CHECK(json.find("\"kind\":\"raise\"") != std::string::npos);
  CHECK(json.find("\"t\":105.0") != std::string::npos);
  CHECK(json.find("\"temperature_c\":38.5") != std::string::npos);
  CHECK(json.find("\"rhythm\":\"normal_sinus\"") != std::string::npos);
}

TEST_CASE("dispatcher: log always, webhook retries with backoff, dead-letter on exhaustion") {
  TempFile alert_log("log");
  TempFile dead_letter("dl");

  alert::AlertEvent e;
  e.rule_id = "r";
  e.kind = alert::AlertEvent::Kind::Raise;
  e.t_s = 1.0;
  e.snapshot = snap(1.0);

  alert::Dispatcher::Options opts;
  opts.webhook_url = "http://127.0.0.1:1/hook";
  opts.alert_log_path = alert_log.path.string();
  opts.dead_letter_path = dead_letter.path.string();
  opts.initial_backoff_s = 0.0;
  alert::Dispatcher d(opts);

  int calls = 0;
  d.set_http_post([&](const std::string&, const std::string&) { return ++calls >= 1; });
  auto r1 = d.dispatch(e);
  CHECK(r1.webhook_attempted);
  CHECK(r1.delivered);
  CHECK(r1.attempts == 1);
  CHECK_FALSE(r1.dead_lettered);

  calls = 0;
  d.set_http_post([&](const std::string&, const std::string&) { return ++calls >= 3; });
  auto r2 = d.dispatch(e);
  CHECK(r2.delivered);
  CHECK(r2.attempts == 3);

  d.set_http_post([](const std::string&, const std::string&) { return false; });
  auto r3 = d.dispatch(e);
  CHECK_FALSE(r3.delivered);
  CHECK(r3.attempts == 5);
  CHECK(r3.dead_lettered);

  CHECK(d.submitted() == 3);
  CHECK(d.delivered() == 2);
  CHECK(d.dead_lettered() == 1);
  CHECK(alert_log.lines().size() == 3);  // the log sink never skips an event
  REQUIRE(dead_letter.lines().size() == 1);
  CHECK(dead_letter.lines()[0].find("\"rule_id\":\"r\"") != std::string::npos);
}

TEST_CASE("retry backoff actually waits and doubles") {
  alert::Dispatcher::Options opts;
  opts.webhook_url = "http://127.0.0.1:1/hook";
  opts.initial_backoff_s = 0.02;
  alert::Dispatcher d(opts);
  d.set_http_post([](const std::string&, const std::string&) { return false; });

  alert::AlertEvent e;
  e.snapshot = snap(0.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = d.dispatch(e);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.attempts == 5);
  CHECK(elapsed >= 0.28);  // 0.02 + 0.04 + 0.08 + 0.16 between the five attempts
  CHECK(elapsed < 2.0);
}

TEST_CASE("without a webhook there are no attempts, only the log line") {
  TempFile alert_log("nolog");
  alert::Dispatcher::Options opts;
  opts.alert_log_path = alert_log.path.string();
  alert::Dispatcher d(opts);
  d.set_http_post([](const std::string&, const std::string&) {
    FAIL("no webhook configured, nothing should be posted");
    return false;
  });
  alert::AlertEvent e;
  e.rule_id = "quiet";
  e.snapshot = snap(0.0);
  const auto r = d.dispatch(e);
  CHECK_FALSE(r.webhook_attempted);
  CHECK(r.attempts == 0);
  CHECK_FALSE(r.dead_lettered);
  CHECK(alert_log.lines().size() == 1);
}

TEST_CASE("rule validation rejects nonsense up front") {
  alert::AlertRule bad = temp_rule();
  bad.sustain_s = -1.0;
  CHECK_THROWS_AS(alert::RuleEngine({bad}), std::invalid_argument);
  bad = temp_rule();
  bad.hysteresis = -0.5;
  CHECK_THROWS_AS(alert::RuleEngine({bad}), std::invalid_argument);
  bad = temp_rule();
  bad.rule_id.clear();
  CHECK_THROWS_AS(alert::RuleEngine({bad}), std::invalid_argument);
}
