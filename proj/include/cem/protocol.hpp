#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cem/image.hpp"

namespace cem::protocol {

// Frames are a 4-byte big-endian header length, the UTF-8 JSON header, then
// `payload_bytes` raw bytes when the header carries a positive payload_bytes.

inline constexpr int kVersion = 1;
using Header = nlohmann::ordered_json;

struct Frame {
  Header header;
  std::vector<unsigned char> payload;
};

std::vector<unsigned char> encode_frame(const Header& header,
                                        std::span<const unsigned char> payload = {});

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

/// Reads exactly one frame. Returns nullopt on EOF before the first byte,
/// throws BackendError on truncation, timeout or a malformed header.
std::optional<Frame> read_frame(int fd, Deadline deadline = std::nullopt);

/// Writes every byte; throws BackendError if the peer is gone.
void write_all(int fd, std::span<const unsigned char> bytes);

/// Row-major HWC little-endian float32 payload.
std::vector<unsigned char> encode_pixels(const ImageBuffer& image);
ImageBuffer decode_pixels(const Header& header, std::span<const unsigned char> payload);

Header hello();
Header infer_request(std::int64_t id, const ImageBuffer& image);
Header result_reply(std::int64_t id, const ImageBuffer& image);
Header shutdown();

}  // namespace cem::protocol
