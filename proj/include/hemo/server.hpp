#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hemo/store.hpp"
#include "hemo/wireproto.hpp"

namespace hemo::ingest {

// Sequence bookkeeping. last_seq is -1 before any frame of a session, so
// leading drops are counted too (device sequences always start at 0).
enum class SeqCheck { Contiguous, Gap, Stale };
struct SeqResult {
  SeqCheck kind = SeqCheck::Contiguous;
  std::uint32_t missing = 0;  // Gap only
};
SeqResult check_gap(std::int64_t last_seq, std::uint32_t seq);

struct GapRecord {
  wire::DeviceId device_id{};
  std::int64_t after_seq = 0;      // -1 when the gap precedes the first frame
  std::uint32_t missing_count = 0;  // >= 1
  std::uint64_t detected_at_us = 0; // wall clock, microseconds since the epoch
};

struct DeviceCounters {
  std::uint64_t frames_ok = 0;
  std::uint64_t samples = 0;
  std::uint64_t gaps = 0;
  std::uint64_t gap_missing = 0;
  std::uint64_t stale = 0;
  std::uint64_t rejected = 0;
};

struct ServerStats {
  std::uint64_t connections = 0;
  std::uint64_t superseded = 0;
  std::uint64_t frames_ok = 0;
  std::uint64_t frames_rejected = 0;
  std::uint64_t stale_frames = 0;
  std::uint64_t gaps = 0;
  std::uint64_t gap_missing = 0;
  std::uint64_t decode_errors = 0;
  std::uint64_t resync_bytes = 0;
  std::uint64_t bytes_in = 0;
  std::map<std::string, DeviceCounters> per_device;  // keyed by hex device id
};

// Accepts framed telemetry over TCP and, per frame: split -> validate ->
// gap-check -> persist -> forward. One handler thread per connection; a newer
// connection for a device supersedes the older one. stop() is a barrier: it
// returns only after every handler has exited.
class IngestServer {
 public:
  struct Options {
    std::string bind_address = "127.0.0.1";
    std::uint16_t port = 0;  // 0 picks an ephemeral port, see port()
  };
  using FrameSink = std::function<void(const wire::TelemetryFrame&)>;
  using LogFn = std::function<void(const std::string& line)>;

  IngestServer(store::SeriesStore* store, Options opts);
  ~IngestServer();

  IngestServer(const IngestServer&) = delete;
  IngestServer& operator=(const IngestServer&) = delete;

  void set_frame_sink(FrameSink fn);  // called after a frame is persisted
  void set_logger(LogFn fn);

  void start();  // throws std::runtime_error when the address cannot be bound
  void stop();
  bool running() const { return running_; }
  std::uint16_t port() const { return port_; }

  ServerStats stats() const;
  std::vector<GapRecord> gap_records() const;

 private:
  struct Connection {
    int id = 0;
    int fd = -1;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void handle_connection(Connection* conn);
  void reap_finished();
  bool claim_device(const wire::DeviceId& id, int conn_id);
  void release_devices(int conn_id);
  void log(const std::string& line);

  store::SeriesStore* store_;
  Options opts_;
  FrameSink sink_;
  LogFn log_fn_;

  std::atomic<bool> stop_flag_{false};
  bool running_ = false;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;

  mutable std::mutex conns_mu_;
  std::vector<std::unique_ptr<Connection>> conns_;
  int next_conn_id_ = 1;

  mutable std::mutex owners_mu_;
  std::map<wire::DeviceId, int> owners_;

  mutable std::mutex stats_mu_;
  ServerStats stats_;
  std::vector<GapRecord> gaps_;
};

}  // namespace hemo::ingest
