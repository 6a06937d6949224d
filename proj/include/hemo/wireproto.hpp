#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Binary framing for the device -> service telemetry link.
// Byte layout is the normative wire contract; see PROTOCOL.md.
namespace hemo::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic = {'E', 'C', 'G', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 34;  // magic..alcohol, before samples
inline constexpr std::size_t kMinFrameSize = 38; // header + crc, n = 0

// Flag bits. Bits 3..7 are reserved and must be zero.
inline constexpr std::uint8_t kFlagLoPlus = 0x01;
inline constexpr std::uint8_t kFlagLoMinus = 0x02;
inline constexpr std::uint8_t kFlagBuzzer = 0x04;

using DeviceId = std::array<std::uint8_t, 8>;

struct TelemetryFrame {
  std::uint8_t version = kVersion;
  DeviceId device_id{};
  std::uint32_t seq = 0;
  std::uint64_t t_start_us = 0;
  std::uint16_t fs = 0;
  std::uint8_t flags = 0;
  std::int16_t temp_centi_c = 0;
  std::uint16_t alcohol_permille = 0;
  std::vector<std::uint16_t> samples;  // 10-bit codes in the low bits

  bool operator==(const TelemetryFrame&) const = default;
};

// Returns empty string when the frame satisfies all invariants, otherwise a
// description of the first violation.
std::string validate(const TelemetryFrame& frame);

// CRC-32, IEEE 802.3 polynomial (reflected 0xEDB88320, init/xorout 0xFFFFFFFF).
std::uint32_t crc32(std::span<const std::uint8_t> data);
std::uint32_t crc32_update(std::uint32_t crc, std::span<const std::uint8_t> data);

// Serializes a valid frame. Throws std::invalid_argument on invariant
// violations (oversized samples, nonzero reserved flag bits, n > 65535).
std::vector<std::uint8_t> encode(const TelemetryFrame& frame);

enum class DecodeError {
  None = 0,
  BadMagic,
  UnsupportedVersion,
  Truncated,   // length arithmetic failed (short input or trailing bytes)
  CrcMismatch,
  SampleOutOfRange,
};

const char* to_string(DecodeError err);

struct DecodeResult {
  std::optional<TelemetryFrame> frame;
  DecodeError error = DecodeError::None;

  bool ok() const { return frame.has_value(); }
};

// Decodes exactly one frame from `bytes`. The input must contain the whole
// frame and nothing else; use FrameStreamSplitter for byte streams.
DecodeResult decode(std::span<const std::uint8_t> bytes);

// Incremental splitter for one connection's byte stream. Frames may arrive
// fragmented or preceded/followed by garbage; the splitter resynchronizes on
// the magic and reports per-frame errors inline without dropping the stream.
class FrameStreamSplitter {
 public:
  struct Event {
    enum class Kind { Frame, Error, Resync };
    Kind kind;
    TelemetryFrame frame;          // valid when kind == Frame
    DecodeError error = DecodeError::None;  // set when kind == Error
    std::size_t skipped_bytes = 0; // set when kind == Resync
  };

  // Appends bytes and returns every event completed by them, in order.
  std::vector<Event> feed(std::span<const std::uint8_t> bytes);

  // Reports any pending skipped-byte count as a final Resync event. Call at
  // connection close.
  std::vector<Event> finish();

  std::size_t buffered_bytes() const { return buffer_.size(); }

 private:
  void drain(std::vector<Event>& out);
  void flush_resync(std::vector<Event>& out);

  std::vector<std::uint8_t> buffer_;
  std::size_t skipped_pending_ = 0;
};

std::string device_id_hex(const DeviceId& id);
std::optional<DeviceId> device_id_from_hex(const std::string& hex);

}  // namespace hemo::wire
