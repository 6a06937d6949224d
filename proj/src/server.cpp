#include "hemo/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace hemo::ingest {

namespace {

std::uint64_t now_us() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

}  // namespace

SeqResult check_gap(std::int64_t last_seq, std::uint32_t seq) {
  const std::int64_t s = static_cast<std::int64_t>(seq);
  if (s == last_seq + 1) return {SeqCheck::Contiguous, 0};
  if (s > last_seq + 1) return {SeqCheck::Gap, static_cast<std::uint32_t>(s - last_seq - 1)};
  return {SeqCheck::Stale, 0};
}

IngestServer::IngestServer(store::SeriesStore* store, Options opts)
    : store_(store), opts_(std::move(opts)) {
  if (!store_) throw std::invalid_argument("server needs a store");
}

IngestServer::~IngestServer() {
  if (running_) stop();
}

void IngestServer::set_frame_sink(FrameSink fn) {
  if (running_) throw std::logic_error("set_frame_sink before start()");
  sink_ = std::move(fn);
}

void IngestServer::set_logger(LogFn fn) {
  if (running_) throw std::logic_error("set_logger before start()");
  log_fn_ = std::move(fn);
}

void IngestServer::log(const std::string& line) {
  if (log_fn_) log_fn_(line);
}

void IngestServer::start() {
  if (running_) throw std::logic_error("already running");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));

  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(opts_.port);
  if (::inet_pton(AF_INET, opts_.bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("bad bind address: " + opts_.bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("cannot bind " + opts_.bind_address + ":" +
                             std::to_string(opts_.port) + ": " + err);
  }
  if (::listen(listen_fd_, 128) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("listen: " + err);
  }

  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);

  stop_flag_ = false;
  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
  log("event=server_start addr=" + opts_.bind_address + " port=" + std::to_string(port_));
}

void IngestServer::stop() {
  if (!running_) return;
  stop_flag_ = true;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();

  std::vector<Connection*> pending;
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& c : conns_) {
      if (c->fd >= 0) ::shutdown(c->fd, SHUT_RDWR);
      pending.push_back(c.get());
    }
  }
  for (Connection* c : pending) {
    if (c->thread.joinable()) c->thread.join();
  }
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    conns_.clear();
  }
  running_ = false;
  log("event=server_stop");
}

void IngestServer::reap_finished() {
  std::lock_guard<std::mutex> lock(conns_mu_);
  for (auto it = conns_.begin(); it != conns_.end();) {
    if ((*it)->done) {
      if ((*it)->thread.joinable()) (*it)->thread.join();
      it = conns_.erase(it);
    } else {
      ++it;
    }
  }
}

void IngestServer::accept_loop() {
  while (!stop_flag_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) {
      reap_finished();
      continue;
    }
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stop_flag_) break;
      continue;
    }
    {
      std::lock_guard<std::mutex> lock(stats_mu_);
      ++stats_.connections;
    }
    std::lock_guard<std::mutex> lock(conns_mu_);
    auto conn = std::make_unique<Connection>();
    conn->id = next_conn_id_++;
    conn->fd = fd;
    Connection* cp = conn.get();
    conns_.push_back(std::move(conn));
    cp->thread = std::thread([this, cp] { handle_connection(cp); });
    log("event=session_open conn=" + std::to_string(cp->id));
  }
}

bool IngestServer::claim_device(const wire::DeviceId& id, int conn_id) {
  int old_id = 0;
  {
    std::lock_guard<std::mutex> lock(owners_mu_);
    auto [it, inserted] = owners_.try_emplace(id, conn_id);
    if (inserted || it->second == conn_id) return true;
    if (conn_id < it->second) return false;  // a newer connection owns this device
    old_id = it->second;
    it->second = conn_id;
  }
  {
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (auto& c : conns_) {
      if (c->id == old_id && c->fd >= 0) {
        ::shutdown(c->fd, SHUT_RDWR);
        break;
      }
    }
  }
  {
    std::lock_guard<std::mutex> lock(stats_mu_);
    ++stats_.superseded;
  }
  log("event=session_supersede device=" + wire::device_id_hex(id) +
      " old_conn=" + std::to_string(old_id) + " new_conn=" + std::to_string(conn_id));
  return true;
}

void IngestServer::release_devices(int conn_id) {
  std::lock_guard<std::mutex> lock(owners_mu_);
  for (auto it = owners_.begin(); it != owners_.end();) {
    if (it->second == conn_id) {
      it = owners_.erase(it);
    } else {
      ++it;
    }
  }
}

void IngestServer::handle_connection(Connection* conn) {
  wire::FrameStreamSplitter splitter;
  std::vector<std::uint8_t> buf(1 << 16);
  std::map<wire::DeviceId, std::int64_t> last_seq;
  bool terminate = false;

  auto on_frame = [&](const wire::TelemetryFrame& f) {
    const std::string dev = wire::device_id_hex(f.device_id);
    if (!claim_device(f.device_id, conn->id)) {
      log("event=session_stale conn=" + std::to_string(conn->id) + " device=" + dev);
      terminate = true;
      return;
    }
    if (f.fs < 100 || f.samples.empty()) {
      std::lock_guard<std::mutex> lock(stats_mu_);
      ++stats_.frames_rejected;
      ++stats_.per_device[dev].rejected;
      return;
    }

    auto& ls = last_seq.try_emplace(f.device_id, -1).first->second;
    const SeqResult seq = check_gap(ls, f.seq);
    if (seq.kind == SeqCheck::Stale) {
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        ++stats_.stale_frames;
        ++stats_.per_device[dev].stale;
      }
      log("event=stale_frame conn=" + std::to_string(conn->id) + " device=" + dev +
          " seq=" + std::to_string(f.seq) + " last=" + std::to_string(ls));
      return;
    }
    if (seq.kind == SeqCheck::Gap) {
      GapRecord gap{f.device_id, ls, seq.missing, now_us()};
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        gaps_.push_back(gap);
        ++stats_.gaps;
        stats_.gap_missing += seq.missing;
        auto& d = stats_.per_device[dev];
        ++d.gaps;
        d.gap_missing += seq.missing;
      }
      log("event=gap device=" + dev + " after_seq=" + std::to_string(ls) +
          " missing=" + std::to_string(seq.missing));
    }
    ls = static_cast<std::int64_t>(f.seq);

    try {
      store::EcgRecord rec;
      rec.t_start_us = f.t_start_us;
      rec.fs = f.fs;
      rec.codes = f.samples;
      store_->append(f.device_id, rec);
    } catch (const store::OutOfOrderError& e) {
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        ++stats_.frames_rejected;
        ++stats_.per_device[dev].rejected;
      }
      log("event=append_reject device=" + dev + " reason=out_of_order detail=" +
          std::string(e.what()));
      return;
    } catch (const store::StorageError& e) {
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        ++stats_.frames_rejected;
        ++stats_.per_device[dev].rejected;
      }
      log("event=storage_error device=" + dev + " detail=" + std::string(e.what()));
      terminate = true;  // pause this session; client may reconnect
      return;
    }

    {
      std::lock_guard<std::mutex> lock(stats_mu_);
      ++stats_.frames_ok;
      auto& d = stats_.per_device[dev];
      ++d.frames_ok;
      d.samples += f.samples.size();
    }
    if (sink_) sink_(f);
  };

  auto on_event = [&](const wire::FrameStreamSplitter::Event& ev) {
    using Kind = wire::FrameStreamSplitter::Event::Kind;
    switch (ev.kind) {
      case Kind::Resync: {
        {
          std::lock_guard<std::mutex> lock(stats_mu_);
          stats_.resync_bytes += ev.skipped_bytes;
        }
        log("event=resync conn=" + std::to_string(conn->id) +
            " skipped=" + std::to_string(ev.skipped_bytes));
        break;
      }
      case Kind::Error: {
        {
          std::lock_guard<std::mutex> lock(stats_mu_);
          ++stats_.decode_errors;
        }
        log("event=decode_error conn=" + std::to_string(conn->id) +
            " reason=" + wire::to_string(ev.error));
        break;
      }
      case Kind::Frame:
        on_frame(ev.frame);
        break;
    }
  };

  while (!stop_flag_ && !terminate) {
    pollfd p{conn->fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, 200);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) continue;
    const ssize_t n = ::recv(conn->fd, buf.data(), buf.size(), 0);
    if (n <= 0) break;
    {
      std::lock_guard<std::mutex> lock(stats_mu_);
      stats_.bytes_in += static_cast<std::uint64_t>(n);
    }
    for (const auto& ev : splitter.feed(std::span<const std::uint8_t>(buf.data(),
                                                                      static_cast<std::size_t>(n)))) {
      on_event(ev);
      if (terminate) break;
    }
  }

  for (const auto& ev : splitter.finish()) on_event(ev);

  release_devices(conn->id);
  ::close(conn->fd);
  conn->fd = -1;
  log("event=session_close conn=" + std::to_string(conn->id));
  conn->done = true;
}

ServerStats IngestServer::stats() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  return stats_;
}

std::vector<GapRecord> IngestServer::gap_records() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  return gaps_;
}

}  // namespace hemo::ingest
