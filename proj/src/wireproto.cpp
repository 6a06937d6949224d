#include "hemo/wireproto.hpp"

#include <cstring>
#include <stdexcept>

namespace hemo::wire {

namespace {

struct CrcTable {
  std::uint32_t entries[256];
  CrcTable() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      }
      entries[i] = c;
    }
  }
};

const CrcTable kCrcTable;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::uint8_t> data) {
  std::uint32_t c = crc ^ 0xFFFFFFFFu;
  for (std::uint8_t byte : data) {
    c = kCrcTable.entries[(c ^ byte) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

std::uint32_t crc32(std::span<const std::uint8_t> data) { return crc32_update(0, data); }

std::string validate(const TelemetryFrame& frame) {
  if (frame.version != kVersion) return "unsupported version";
  if (frame.samples.size() > 0xFFFF) return "sample count exceeds 16-bit field";
  if ((frame.flags & ~(kFlagLoPlus | kFlagLoMinus | kFlagBuzzer)) != 0)
    return "reserved flag bits set";
  for (std::uint16_t s : frame.samples) {
    if (s > 1023) return "sample code out of 10-bit range";
  }
  return {};
}

std::vector<std::uint8_t> encode(const TelemetryFrame& frame) {
  if (auto err = validate(frame); !err.empty()) {
    throw std::invalid_argument("encode: " + err);
  }
  std::vector<std::uint8_t> out;
  out.reserve(kMinFrameSize + 2 * frame.samples.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(frame.version);
  out.insert(out.end(), frame.device_id.begin(), frame.device_id.end());
  put_u32(out, frame.seq);
  put_u64(out, frame.t_start_us);
  put_u16(out, frame.fs);
  put_u16(out, static_cast<std::uint16_t>(frame.samples.size()));
  out.push_back(frame.flags);
  put_u16(out, static_cast<std::uint16_t>(frame.temp_centi_c));
  put_u16(out, frame.alcohol_permille);
  for (std::uint16_t s : frame.samples) put_u16(out, s);
  put_u32(out, crc32(out));
  return out;
}

const char* to_string(DecodeError err) {
  switch (err) {
    case DecodeError::None: return "none";
    case DecodeError::BadMagic: return "bad_magic";
    case DecodeError::UnsupportedVersion: return "unsupported_version";
    case DecodeError::Truncated: return "truncated";
    case DecodeError::CrcMismatch: return "crc_mismatch";
    case DecodeError::SampleOutOfRange: return "sample_out_of_range";
  }
  return "unknown";
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size()) return {std::nullopt, DecodeError::Truncated};
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    return {std::nullopt, DecodeError::BadMagic};
  if (bytes.size() < kMinFrameSize) return {std::nullopt, DecodeError::Truncated};
  if (bytes[4] != kVersion) return {std::nullopt, DecodeError::UnsupportedVersion};

  const std::uint16_t n = get_u16(bytes.data() + 27);
  const std::size_t expected = kMinFrameSize + 2 * static_cast<std::size_t>(n);
  if (bytes.size() != expected) return {std::nullopt, DecodeError::Truncated};

  const std::uint32_t stored_crc = get_u32(bytes.data() + expected - 4);
  if (crc32(bytes.first(expected - 4)) != stored_crc)
    return {std::nullopt, DecodeError::CrcMismatch};

  TelemetryFrame frame;
  frame.version = bytes[4];
  std::memcpy(frame.device_id.data(), bytes.data() + 5, 8);
  frame.seq = get_u32(bytes.data() + 13);
  frame.t_start_us = get_u64(bytes.data() + 17);
  frame.fs = get_u16(bytes.data() + 25);
  frame.flags = bytes[29];
  frame.temp_centi_c = static_cast<std::int16_t>(get_u16(bytes.data() + 30));
  frame.alcohol_permille = get_u16(bytes.data() + 32);
  frame.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    frame.samples[i] = get_u16(bytes.data() + kHeaderSize + 2 * i);
    if (frame.samples[i] > 1023) return {std::nullopt, DecodeError::SampleOutOfRange};
  }
  return {std::move(frame), DecodeError::None};
}

std::vector<FrameStreamSplitter::Event> FrameStreamSplitter::feed(
    std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  std::vector<Event> out;
  drain(out);
  return out;
}

std::vector<FrameStreamSplitter::Event> FrameStreamSplitter::finish() {
  std::vector<Event> out;
  skipped_pending_ += buffer_.size();
  buffer_.clear();
  flush_resync(out);
  return out;
}

void FrameStreamSplitter::flush_resync(std::vector<Event>& out) {
  if (skipped_pending_ > 0) {
    Event ev;
    ev.kind = Event::Kind::Resync;
    ev.skipped_bytes = skipped_pending_;
    out.push_back(std::move(ev));
    skipped_pending_ = 0;
  }
}

void FrameStreamSplitter::drain(std::vector<Event>& out) {
  std::size_t pos = 0;
  auto remaining = [&] { return buffer_.size() - pos; };

  while (true) {
    // Hunt for the magic, discarding garbage. Keep a potential magic prefix
    // at the buffer tail.
    std::size_t scan = pos;
    while (scan + kMagic.size() <= buffer_.size() &&
           std::memcmp(buffer_.data() + scan, kMagic.data(), kMagic.size()) != 0) {
      ++scan;
    }
    if (scan + kMagic.size() > buffer_.size()) {
      // No full magic found; anything before a possible partial match is junk.
      std::size_t keep_from = buffer_.size();
      for (std::size_t tail = std::min(kMagic.size() - 1, buffer_.size() - scan); tail > 0;
           --tail) {
        if (std::memcmp(buffer_.data() + buffer_.size() - tail, kMagic.data(), tail) == 0) {
          keep_from = buffer_.size() - tail;
          break;
        }
      }
      skipped_pending_ += keep_from - pos;
      pos = keep_from;
      break;
    }
    skipped_pending_ += scan - pos;
    pos = scan;

    // Need the header through `n` to size the frame.
    if (remaining() < 29) break;
    const std::uint16_t n = get_u16(buffer_.data() + pos + 27);
    const std::size_t total = kMinFrameSize + 2 * static_cast<std::size_t>(n);
    if (remaining() < total) break;

    DecodeResult result = decode(std::span(buffer_.data() + pos, total));
    if (result.ok()) {
      flush_resync(out);
      Event ev;
      ev.kind = Event::Kind::Frame;
      ev.frame = std::move(*result.frame);
      out.push_back(std::move(ev));
      pos += total;
    } else {
      flush_resync(out);
      Event ev;
      ev.kind = Event::Kind::Error;
      ev.error = result.error;
      out.push_back(std::move(ev));
      // Resync: skip one byte and hunt for the next magic.
      pos += 1;
      skipped_pending_ += 1;
    }
  }

  buffer_.erase(buffer_.begin(), buffer_.begin() + pos);
}

std::string device_id_hex(const DeviceId& id) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(16);
  for (std::uint8_t b : id) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::optional<DeviceId> device_id_from_hex(const std::string& hex) {
  if (hex.size() != 16) return std::nullopt;
  DeviceId id{};
  for (std::size_t i = 0; i < 8; ++i) {
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    id[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return id;
}

}  // namespace hemo::wire
