#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"

#include "hemo/server.hpp"
#include "hemo/store.hpp"
#include "hemo/wireproto.hpp"

using namespace hemo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hemo_server_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

class Client {
 public:
  explicit Client(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd_ >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  }
  ~Client() { close(); }

  void send(std::span<const std::uint8_t> bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n =
          ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n <= 0) break;
      off += static_cast<std::size_t>(n);
    }
  }

  // sends in awkward chunk sizes so frames span reads
  void send_chunked(const std::vector<std::uint8_t>& bytes, std::mt19937_64& rng) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const std::size_t n = std::min<std::size_t>(1 + rng() % 97, bytes.size() - off);
      send(std::span(bytes.data() + off, n));
      off += n;
    }
  }

  // true once the peer closed its end (read returns 0 / error)
  bool peer_closed(int timeout_ms) {
    std::uint8_t b;
    struct timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    return ::recv(fd_, &b, 1, 0) <= 0;
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

wire::DeviceId dev(std::uint8_t tag) { return {'T', 'E', 'S', 'T', 0, 0, 0, tag}; }

wire::TelemetryFrame frame_for(const wire::DeviceId& id, std::uint32_t seq,
                               std::uint16_t n_samples = 100, std::uint16_t fs = 250) {
  wire::TelemetryFrame f;
  f.device_id = id;
  f.seq = seq;
  // 100 samples at 250 Hz cover 400 ms; keep timestamps aligned to that
  f.t_start_us = 1000000 + static_cast<std::uint64_t>(seq) *
                               (static_cast<std::uint64_t>(n_samples) * 1000000 / fs);
  f.fs = fs;
  f.temp_centi_c = 3660;
  f.samples.resize(n_samples);
  for (std::uint16_t i = 0; i < n_samples; ++i) {
    f.samples[i] = static_cast<std::uint16_t>((seq * 7 + i) % 1024);
  }
  return f;
}

std::vector<std::uint8_t> bytes_of(const std::vector<wire::TelemetryFrame>& frames) {
  std::vector<std::uint8_t> out;
  for (const auto& f : frames) {
    const auto enc = wire::encode(f);
    out.insert(out.end(), enc.begin(), enc.end());
  }
  return out;
}

bool wait_until(const std::function<bool()>& pred, int timeout_ms = 8000) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return pred();
}

}  // namespace

TEST_CASE("sequence checking: contiguous, gaps with exact missing counts, stale") {
  auto r = ingest::check_gap(-1, 0);
  CHECK(r.kind == ingest::SeqCheck::Contiguous);

  r = ingest::check_gap(-1, 3);  // drops before the first frame ever seen
  CHECK(r.kind == ingest::SeqCheck::Gap);
  CHECK(r.missing == 3);

  r = ingest::check_gap(5, 6);
  CHECK(r.kind == ingest::SeqCheck::Contiguous);

  r = ingest::check_gap(5, 8);
  CHECK(r.kind == ingest::SeqCheck::Gap);
  CHECK(r.missing == 2);

  CHECK(ingest::check_gap(5, 5).kind == ingest::SeqCheck::Stale);
  CHECK(ingest::check_gap(5, 3).kind == ingest::SeqCheck::Stale);
}

TEST_CASE("concurrent devices: every sample sent arrives in the store, exactly once") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  std::vector<wire::TelemetryFrame> forwarded;
  std::mutex fw_mu;
  server.set_frame_sink([&](const wire::TelemetryFrame& f) {
    std::lock_guard<std::mutex> lock(fw_mu);
    forwarded.push_back(f);
  });
  server.start();

  constexpr int kDevices = 5;
  constexpr std::uint32_t kFrames = 40;
  std::vector<std::thread> senders;
  for (int d = 0; d < kDevices; ++d) {
    senders.emplace_back([&, d] {
      std::vector<wire::TelemetryFrame> frames;
      for (std::uint32_t s = 0; s < kFrames; ++s) frames.push_back(frame_for(dev(d), s));
      std::mt19937_64 rng(static_cast<std::uint64_t>(d) + 1);
      Client c(server.port());
      c.send_chunked(bytes_of(frames), rng);
    });
  }
  for (auto& t : senders) t.join();

  REQUIRE(wait_until([&] { return server.stats().frames_ok == kDevices * kFrames; }));
  server.stop();

  const auto stats = server.stats();
  CHECK(stats.connections == kDevices);
  CHECK(stats.frames_rejected == 0);
  CHECK(stats.decode_errors == 0);
  CHECK(stats.gaps == 0);
  CHECK(stats.gap_missing == 0);
  CHECK(stats.superseded == 0);
  for (int d = 0; d < kDevices; ++d) {
    CHECK(store.total_samples(dev(d)) == kFrames * 100);
    const auto recs = store.query(dev(d), 0, ~0ull);
    REQUIRE(recs.size() == kFrames);
    for (std::uint32_t s = 0; s < kFrames; ++s) {
      CHECK(recs[s] == store::EcgRecord{frame_for(dev(d), s).t_start_us, 250,
                                        frame_for(dev(d), s).samples});
    }
    CHECK(stats.per_device.at(wire::device_id_hex(dev(d))).frames_ok == kFrames);
  }
  std::lock_guard<std::mutex> lock(fw_mu);
  CHECK(forwarded.size() == kDevices * kFrames);
}

TEST_CASE("dropped frames are accounted for, missing counts exact") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  server.start();

  constexpr std::uint32_t kFrames = 200;
  std::vector<wire::TelemetryFrame> kept;
  std::uint64_t dropped = 0;
  std::uint64_t kept_samples = 0;
  for (std::uint32_t s = 0; s < kFrames; ++s) {
    // deterministic ~1% drop pattern plus a leading drop; the final frame is
    // always sent so the tail is never silently unaccounted for
    const bool drop = (s == 0 || s % 37 == 0 || s == 101) && s != kFrames - 1;
    if (drop) {
      ++dropped;
    } else {
      kept.push_back(frame_for(dev(9), s));
      kept_samples += kept.back().samples.size();
    }
  }
  REQUIRE(dropped > 0);

  {
    std::mt19937_64 rng(44);
    Client c(server.port());
    c.send_chunked(bytes_of(kept), rng);
    REQUIRE(wait_until([&] { return server.stats().frames_ok == kept.size(); }));
  }
  server.stop();

  const auto stats = server.stats();
  CHECK(stats.frames_ok == kept.size());
  CHECK(stats.gap_missing == dropped);
  CHECK(store.total_samples(dev(9)) == kept_samples);

  // the per-gap records agree with the drop pattern
  std::uint64_t from_records = 0;
  for (const auto& g : server.gap_records()) {
    CHECK(g.device_id == dev(9));
    CHECK(g.missing_count >= 1);
    from_records += g.missing_count;
  }
  CHECK(from_records == dropped);
  CHECK(server.gap_records().front().after_seq == -1);  // the leading drop
}

TEST_CASE("garbage and corrupt frames on one connection leave other devices untouched") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  server.start();

  // clean device B in parallel with a hostile stream for device A
  std::thread clean([&] {
    std::vector<wire::TelemetryFrame> frames;
    for (std::uint32_t s = 0; s < 30; ++s) frames.push_back(frame_for(dev(2), s));
    std::mt19937_64 rng(7);
    Client c(server.port());
    c.send_chunked(bytes_of(frames), rng);
    wait_until([&] {
      const auto st = server.stats();
      const auto it = st.per_device.find(wire::device_id_hex(dev(2)));
      return it != st.per_device.end() && it->second.frames_ok == 30;
    });
  });

  {
    Client c(server.port());
    const std::vector<std::uint8_t> junk = {'n', 'o', 'i', 's', 'e', 0xff, 0x00, 'E', 'C'};
    c.send(junk);
    c.send(wire::encode(frame_for(dev(1), 0)));
    auto corrupt = wire::encode(frame_for(dev(1), 1));
    corrupt[20] ^= 0x01;  // breaks the CRC
    c.send(corrupt);
    c.send(wire::encode(frame_for(dev(1), 2)));
    wait_until([&] {
      const auto st = server.stats();
      const auto it = st.per_device.find(wire::device_id_hex(dev(1)));
      return it != st.per_device.end() && it->second.frames_ok == 2;
    });
  }
  clean.join();
  server.stop();

  const auto stats = server.stats();
  CHECK(stats.decode_errors >= 1);
  CHECK(stats.resync_bytes >= 9);
  CHECK(store.total_samples(dev(2)) == 30 * 100);
  CHECK(store.total_samples(dev(1)) == 2 * 100);
  // the corrupt frame cost device A its seq-1 slot, recorded as a gap
  CHECK(stats.per_device.at(wire::device_id_hex(dev(1))).gap_missing == 1);
}

TEST_CASE("invalid-but-well-formed frames are rejected and the session lives on") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  std::vector<std::string> log_lines;
  std::mutex log_mu;
  server.set_logger([&](const std::string& line) {
    std::lock_guard<std::mutex> lock(log_mu);
    log_lines.push_back(line);
  });
  server.start();

  Client c(server.port());
  c.send(wire::encode(frame_for(dev(3), 0)));

  auto slow = frame_for(dev(3), 1, 100, 50);  // fs below the supported floor
  c.send(wire::encode(slow));

  wire::TelemetryFrame empty = frame_for(dev(3), 2);
  empty.samples.clear();  // zero-sample frame carries nothing
  c.send(wire::encode(empty));

  auto backwards = frame_for(dev(3), 3);
  backwards.t_start_us = 10;  // earlier than frame 0: the store refuses it
  c.send(wire::encode(backwards));

  auto stale = frame_for(dev(3), 3);  // same seq again -> stale, not stored twice
  c.send(wire::encode(stale));

  c.send(wire::encode(frame_for(dev(3), 4)));  // still accepted afterwards

  REQUIRE(wait_until([&] { return server.stats().frames_ok == 2; }));
  server.stop();

  const auto stats = server.stats();
  const auto& d = stats.per_device.at(wire::device_id_hex(dev(3)));
  CHECK(d.frames_ok == 2);
  CHECK(d.rejected == 3);  // fs floor, empty frame, out-of-order timestamp
  CHECK(d.stale == 1);
  CHECK(store.query(dev(3), 0, ~0ull).size() == 2);

  std::lock_guard<std::mutex> lock(log_mu);
  CHECK(std::any_of(log_lines.begin(), log_lines.end(), [](const std::string& l) {
    return l.find("reason=out_of_order") != std::string::npos;
  }));
}

TEST_CASE("a reconnecting device supersedes its old session") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  server.start();

  Client first(server.port());
  {
    std::vector<wire::TelemetryFrame> frames;
    for (std::uint32_t s = 0; s < 5; ++s) frames.push_back(frame_for(dev(6), s));
    first.send(bytes_of(frames));
  }
  REQUIRE(wait_until([&] { return server.stats().frames_ok == 5; }));

  Client second(server.port());
  {
    std::vector<wire::TelemetryFrame> frames;
    for (std::uint32_t s = 5; s < 10; ++s) frames.push_back(frame_for(dev(6), s));
    second.send(bytes_of(frames));
  }
  REQUIRE(wait_until([&] { return server.stats().frames_ok == 10; }));
  CHECK(wait_until([&] { return server.stats().superseded == 1; }));

  // the first session is dead: the server closed it on takeover
  CHECK(first.peer_closed(3000));
  // whatever the old client still tries to push changes nothing
  first.send(wire::encode(frame_for(dev(6), 10)));
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  CHECK(server.stats().frames_ok == 10);

  server.stop();
  CHECK(store.query(dev(6), 0, ~0ull).size() == 10);  // both sessions' frames, no overlap
}

TEST_CASE("stop() is a barrier and bind errors surface as exceptions") {
  TempDir tmp;
  store::SeriesStore store(tmp.path);
  ingest::IngestServer server(&store, {"127.0.0.1", 0});
  server.start();
  CHECK(server.running());
  CHECK(server.port() != 0);

  // a second server on the same port cannot bind
  ingest::IngestServer clash(&store, {"127.0.0.1", server.port()});
  CHECK_THROWS_WITH_AS(clash.start(), doctest::Contains("bind"), std::runtime_error);

  ingest::IngestServer bad_addr(&store, {"999.1.1.1", 0});
  CHECK_THROWS_AS(bad_addr.start(), std::runtime_error);

  // leave a connection mid-frame; stop() must still return promptly
  Client c(server.port());
  const auto enc = wire::encode(frame_for(dev(1), 0));
  c.send(std::span(enc.data(), enc.size() / 2));

  const auto t0 = std::chrono::steady_clock::now();
  server.stop();
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() < 3000);
  CHECK_FALSE(server.running());
  server.stop();  // idempotent
}
