#include "hemo/store.hpp"

#include <algorithm>
#include <cstring>

namespace hemo::store {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((v >> shift) & 0xFF));
  }
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
  return v;
}

std::string segment_name(int index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "seg%06d.seg", index);
  return buf;
}

std::optional<int> segment_index(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  if (name.size() != 13 || name.rfind("seg", 0) != 0 || name.substr(9) != ".seg") {
    return std::nullopt;
  }
  int idx = 0;
  for (int i = 3; i < 9; ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    idx = idx * 10 + (name[i] - '0');
  }
  return idx;
}

std::string encode_header(const wire::DeviceId& id, std::uint16_t fs, std::uint64_t first_t_us) {
  std::string out;
  out.reserve(kSegmentHeaderSize);
  out.append(kSegmentMagic, 4);
  out.push_back(static_cast<char>(kSegmentVersion));
  out.append(reinterpret_cast<const char*>(id.data()), id.size());
  put_u16(out, fs);
  put_u64(out, first_t_us);
  out.append(9, '\0');
  return out;
}

std::string encode_record(const EcgRecord& rec) {
  std::string out;
  out.reserve(kRecordOverhead + 2 * rec.codes.size());
  put_u64(out, rec.t_start_us);
  put_u16(out, static_cast<std::uint16_t>(rec.codes.size()));
  for (std::uint16_t c : rec.codes) put_u16(out, c);
  const std::uint32_t crc =
      wire::crc32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(out.data()),
                                                out.size()));
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((crc >> shift) & 0xFF));
  }
  return out;
}

}  // namespace

SegmentScan scan_segment(const std::filesystem::path& path) {
  SegmentScan scan;
  std::ifstream in(path, std::ios::binary);
  if (!in) return scan;
  std::vector<unsigned char> buf{std::istreambuf_iterator<char>(in),
                                 std::istreambuf_iterator<char>()};
  scan.file_bytes = buf.size();
  if (buf.size() < kSegmentHeaderSize) return scan;
  if (std::memcmp(buf.data(), kSegmentMagic, 4) != 0) return scan;
  if (buf[4] != kSegmentVersion) return scan;
  std::copy(buf.begin() + 5, buf.begin() + 13, scan.device_id.begin());
  scan.fs = get_u16(buf.data() + 13);
  scan.first_t_us = get_u64(buf.data() + 15);
  scan.header_ok = true;
  scan.good_bytes = kSegmentHeaderSize;

  std::size_t p = kSegmentHeaderSize;
  std::uint64_t prev_t = 0;
  bool have_prev = false;
  while (p + kRecordOverhead <= buf.size()) {
    const std::uint64_t t = get_u64(buf.data() + p);
    const std::uint16_t n = get_u16(buf.data() + p + 8);
    const std::size_t body = 10 + 2 * static_cast<std::size_t>(n);
    if (n == 0 || p + body + 4 > buf.size()) break;
    const std::uint32_t want = get_u32(buf.data() + p + body);
    const std::uint32_t got = wire::crc32(std::span<const std::uint8_t>(buf.data() + p, body));
    if (want != got) break;
    if (have_prev && t <= prev_t) break;  // writer never does this; treat as corruption
    EcgRecord rec;
    rec.t_start_us = t;
    rec.fs = scan.fs;
    rec.codes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rec.codes.push_back(get_u16(buf.data() + p + 10 + 2 * i));
    scan.records.push_back(std::move(rec));
    prev_t = t;
    have_prev = true;
    p += body + 4;
    scan.good_bytes = p;
  }
  return scan;
}

SeriesStore::SeriesStore(std::filesystem::path root, StoreOptions opts)
    : root_(std::move(root)), opts_(opts) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw StorageError("cannot create store root " + root_.string() + ": " + ec.message());

  for (const auto& entry : std::filesystem::directory_iterator(root_)) {
    if (!entry.is_directory()) continue;
    auto id = wire::device_id_from_hex(entry.path().filename().string());
    if (!id) continue;
    auto st = std::make_unique<DeviceState>();
    recover_device(*id, *st);
    states_.emplace(*id, std::move(st));
  }
}

std::filesystem::path SeriesStore::device_dir(const wire::DeviceId& id) const {
  return root_ / wire::device_id_hex(id);
}

void SeriesStore::recover_device(const wire::DeviceId& id, DeviceState& st) {
  DeviceRecovery report;
  report.device_id = id;

  std::vector<std::pair<int, std::filesystem::path>> segments;
  for (const auto& entry : std::filesystem::directory_iterator(device_dir(id))) {
    if (!entry.is_regular_file()) continue;
    if (auto idx = segment_index(entry.path())) segments.emplace_back(*idx, entry.path());
  }
  std::sort(segments.begin(), segments.end());

  for (const auto& [idx, path] : segments) {
    SegmentScan scan = scan_segment(path);
    ++report.segments;
    st.next_segment = idx + 1;
    if (!scan.header_ok || scan.records.empty()) {
      // header-only or mangled tail file: recycle it as the next fresh slot
      report.truncated_bytes += scan.file_bytes;
      std::filesystem::resize_file(path, 0);
      st.open_path = path;
      st.open_bytes = 0;
      st.open_has_records = false;
      st.next_segment = idx;  // reuse this index
      continue;
    }
    if (scan.good_bytes < scan.file_bytes) {
      report.truncated_bytes += scan.file_bytes - scan.good_bytes;
      std::filesystem::resize_file(path, scan.good_bytes);
    }
    if (st.fs == 0) {
      st.fs = scan.fs;
    } else if (st.fs != scan.fs) {
      throw StorageError("segment fs mismatch under " + device_dir(id).string());
    }
    report.records += scan.records.size();
    st.last_t_us = scan.records.back().t_start_us;
    st.has_last = true;
    st.open_path = path;
    st.open_bytes = scan.good_bytes;
    st.open_first_t_us = scan.first_t_us;
    st.open_has_records = true;
  }
  recovery_.push_back(report);
}

SeriesStore::DeviceState& SeriesStore::state_for(const wire::DeviceId& id) {
  std::lock_guard<std::mutex> lock(map_mu_);
  auto it = states_.find(id);
  if (it == states_.end()) {
    it = states_.emplace(id, std::make_unique<DeviceState>()).first;
  }
  return *it->second;
}

void SeriesStore::append(const wire::DeviceId& device_id, const EcgRecord& record) {
  if (record.codes.empty()) throw std::invalid_argument("record has no samples");
  if (record.codes.size() > 0xFFFF) throw std::invalid_argument("record too large");
  if (record.fs == 0) throw std::invalid_argument("record fs must be nonzero");
  for (std::uint16_t c : record.codes) {
    if (c > 1023) throw std::invalid_argument("sample code exceeds 10 bits");
  }

  DeviceState& st = state_for(device_id);
  std::lock_guard<std::mutex> lock(st.mu);

  if (st.fs == 0) {
    st.fs = record.fs;
  } else if (st.fs != record.fs) {
    throw StorageError("fs change for device " + wire::device_id_hex(device_id));
  }
  if (st.has_last && record.t_start_us <= st.last_t_us) {
    throw OutOfOrderError("record at " + std::to_string(record.t_start_us) +
                          "us does not advance past " + std::to_string(st.last_t_us) + "us");
  }

  const std::string payload = encode_record(record);

  // segment rollover: size and wall-span bounds, whichever trips first
  if (st.out.is_open() && st.open_has_records &&
      (st.open_bytes + payload.size() > opts_.segment_max_bytes ||
       record.t_start_us - st.open_first_t_us >= opts_.segment_max_span_us)) {
    st.out.close();
    st.open_path.clear();
    st.open_bytes = 0;
    st.open_has_records = false;
  }

  if (!st.out.is_open()) {
    std::error_code ec;
    std::filesystem::create_directories(device_dir(device_id), ec);
    if (ec) throw StorageError("cannot create device dir: " + ec.message());
    if (st.open_path.empty()) {
      st.open_path = device_dir(device_id) / segment_name(st.next_segment++);
      st.open_bytes = 0;
      st.open_has_records = false;
    }
    st.out.open(st.open_path, std::ios::binary | std::ios::app);
    if (!st.out) throw StorageError("cannot open segment " + st.open_path.string());
  }

  if (st.open_bytes == 0) {
    const std::string header = encode_header(device_id, st.fs, record.t_start_us);
    st.out.write(header.data(), static_cast<std::streamsize>(header.size()));
    st.open_bytes = header.size();
    st.open_first_t_us = record.t_start_us;
  }

  st.out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  st.out.flush();
  if (!st.out) throw StorageError("write failed on " + st.open_path.string());

  st.open_bytes += payload.size();
  st.open_has_records = true;
  st.last_t_us = record.t_start_us;
  st.has_last = true;
}

std::vector<EcgRecord> SeriesStore::query(const wire::DeviceId& device_id, std::uint64_t t0_us,
                                          std::uint64_t t1_us) const {
  return query_dir(root_, device_id, t0_us, t1_us);
}

std::vector<EcgRecord> query_dir(const std::filesystem::path& root, const wire::DeviceId& id,
                                 std::uint64_t t0_us, std::uint64_t t1_us) {
  std::vector<EcgRecord> out;
  if (t0_us >= t1_us) return out;
  const std::filesystem::path dir = root / wire::device_id_hex(id);
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return out;

  std::vector<std::pair<int, std::filesystem::path>> segments;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto idx = segment_index(entry.path())) segments.emplace_back(*idx, entry.path());
  }
  std::sort(segments.begin(), segments.end());

  for (const auto& [idx, path] : segments) {
    SegmentScan scan = scan_segment(path);
    if (!scan.header_ok) continue;
    if (scan.first_t_us >= t1_us) continue;  // no record can start before t1
    for (EcgRecord& rec : scan.records) {
      if (rec.t_start_us < t1_us && rec.end_us() > t0_us) out.push_back(std::move(rec));
    }
  }
  return out;
}

std::uint64_t total_samples_dir(const std::filesystem::path& root, const wire::DeviceId& id) {
  std::uint64_t total = 0;
  const std::filesystem::path dir = root / wire::device_id_hex(id);
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (!segment_index(entry.path())) continue;
    const SegmentScan scan = scan_segment(entry.path());
    for (const EcgRecord& rec : scan.records) total += rec.codes.size();
  }
  return total;
}

std::vector<wire::DeviceId> devices_dir(const std::filesystem::path& root) {
  std::vector<wire::DeviceId> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    if (auto id = wire::device_id_from_hex(entry.path().filename().string())) out.push_back(*id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<wire::DeviceId> SeriesStore::devices() const {
  std::lock_guard<std::mutex> lock(map_mu_);
  std::vector<wire::DeviceId> out;
  out.reserve(states_.size());
  for (const auto& [id, _] : states_) out.push_back(id);
  return out;
}

std::uint64_t SeriesStore::total_samples(const wire::DeviceId& device_id) const {
  return total_samples_dir(root_, device_id);
}

std::optional<std::uint64_t> SeriesStore::last_time_us(const wire::DeviceId& device_id) const {
  std::lock_guard<std::mutex> lock(map_mu_);
  auto it = states_.find(device_id);
  if (it == states_.end()) return std::nullopt;
  std::lock_guard<std::mutex> state_lock(it->second->mu);
  if (!it->second->has_last) return std::nullopt;
  return it->second->last_t_us;
}

}  // namespace hemo::store
