#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hemo/wireproto.hpp"

namespace hemo::store {

// Storage layout (see STORAGE.md): one directory per device, append-only
// segment files, each a 32-byte header plus CRC-framed records. The per-record
// CRC is what makes torn tails detectable after a crash.

inline constexpr char kSegmentMagic[4] = {'H', 'S', 'G', '1'};
inline constexpr std::uint8_t kSegmentVersion = 1;
inline constexpr std::size_t kSegmentHeaderSize = 32;
inline constexpr std::size_t kRecordOverhead = 14;  // t(8) + n(2) + crc(4)

struct EcgRecord {
  std::uint64_t t_start_us = 0;
  std::uint16_t fs = 0;
  std::vector<std::uint16_t> codes;

  std::uint64_t end_us() const {
    return t_start_us + static_cast<std::uint64_t>(
                            (static_cast<double>(codes.size()) * 1e6) / fs + 0.5);
  }
  bool operator==(const EcgRecord&) const = default;
};

struct StoreOptions {
  std::uint64_t segment_max_bytes = 64ull << 20;              // 64 MiB
  std::uint64_t segment_max_span_us = 24ull * 3600 * 1000000;  // 24 h
};

// Append rejected because the record does not advance the device's timeline.
class OutOfOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Disk or format trouble; sessions should pause rather than drop data silently.
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DeviceRecovery {
  wire::DeviceId device_id{};
  std::size_t segments = 0;
  std::size_t records = 0;
  std::uint64_t truncated_bytes = 0;  // torn tail dropped during the scan
};

class SeriesStore {
 public:
  explicit SeriesStore(std::filesystem::path root, StoreOptions opts = {});

  // Durable (flushed) once this returns. Throws OutOfOrderError when the
  // record's time does not strictly advance the device timeline, StorageError
  // on I/O or format trouble.
  void append(const wire::DeviceId& device_id, const EcgRecord& record);

  // All records overlapping the half-open [t0_us, t1_us), time-ordered.
  // Records are returned whole, not trimmed to the range. Unknown device or
  // empty range -> empty result. Safe to call while appends are in flight.
  std::vector<EcgRecord> query(const wire::DeviceId& device_id, std::uint64_t t0_us,
                               std::uint64_t t1_us) const;

  std::vector<wire::DeviceId> devices() const;
  std::uint64_t total_samples(const wire::DeviceId& device_id) const;
  std::optional<std::uint64_t> last_time_us(const wire::DeviceId& device_id) const;

  const std::vector<DeviceRecovery>& recovery_report() const { return recovery_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  struct DeviceState {
    std::mutex mu;
    std::uint16_t fs = 0;
    bool has_last = false;
    std::uint64_t last_t_us = 0;
    int next_segment = 0;                 // index for a future fresh segment
    std::filesystem::path open_path;      // current segment, may not exist yet
    std::ofstream out;
    std::uint64_t open_bytes = 0;
    std::uint64_t open_first_t_us = 0;
    bool open_has_records = false;
  };

  DeviceState& state_for(const wire::DeviceId& id);
  std::filesystem::path device_dir(const wire::DeviceId& id) const;
  void recover_device(const wire::DeviceId& id, DeviceState& st);

  std::filesystem::path root_;
  StoreOptions opts_;
  mutable std::mutex map_mu_;
  std::map<wire::DeviceId, std::unique_ptr<DeviceState>> states_;
  std::vector<DeviceRecovery> recovery_;
};

// Read-only views over a store directory. These never mutate files (no
// recovery truncation), so they are safe against a live writer: a torn or
// unflushed tail simply ends the scan.
std::vector<EcgRecord> query_dir(const std::filesystem::path& root, const wire::DeviceId& id,
                                 std::uint64_t t0_us, std::uint64_t t1_us);
std::uint64_t total_samples_dir(const std::filesystem::path& root, const wire::DeviceId& id);
std::vector<wire::DeviceId> devices_dir(const std::filesystem::path& root);

// Parses one segment file. Stops at the first torn or corrupt record and
// reports how many bytes of the file were well-formed.
struct SegmentScan {
  bool header_ok = false;
  wire::DeviceId device_id{};
  std::uint16_t fs = 0;
  std::uint64_t first_t_us = 0;
  std::vector<EcgRecord> records;
  std::uint64_t good_bytes = 0;  // header + intact records
  std::uint64_t file_bytes = 0;
};

SegmentScan scan_segment(const std::filesystem::path& path);

}  // namespace hemo::store
