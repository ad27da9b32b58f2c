#include "cem/protocol.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <string>

#include "cem/error.hpp"

namespace cem::protocol {
namespace {

constexpr std::uint32_t kMaxHeaderBytes = 1u << 20;

bool is_socket(int fd) {
  struct stat st{};
  return fstat(fd, &st) == 0 && S_ISSOCK(st.st_mode);
}

// Returns false on EOF before any byte was read.
bool read_exact(int fd, unsigned char* dst, std::size_t n, const Deadline& deadline,
                bool allow_eof) {
  std::size_t got = 0;
  while (got < n) {
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          *deadline - std::chrono::steady_clock::now());
      pollfd p{fd, POLLIN, 0};
      const int rc = ::poll(&p, 1, left.count() > 0 ? int(left.count()) : 0);
      if (rc == 0) throw BackendError("timed out waiting for model reply");
      if (rc < 0 && errno != EINTR)
        throw BackendError(std::string("poll failed: ") + std::strerror(errno));
      if (rc < 0) continue;
    }
    const ssize_t r = ::read(fd, dst + got, n - got);
    if (r == 0) {
      if (got == 0 && allow_eof) return false;
      throw BackendError("model stream closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw BackendError(std::string("read from model failed: ") + std::strerror(errno));
    }
    got += std::size_t(r);
  }
  return true;
}

}  // namespace

std::vector<unsigned char> encode_frame(const Header& header,
                                        std::span<const unsigned char> payload) {
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  std::vector<unsigned char> out;
  out.reserve(4 + text.size() + payload.size());
  out.push_back(static_cast<unsigned char>(len >> 24));
  out.push_back(static_cast<unsigned char>(len >> 16));
  out.push_back(static_cast<unsigned char>(len >> 8));
  out.push_back(static_cast<unsigned char>(len));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::optional<Frame> read_frame(int fd, Deadline deadline) {
  unsigned char len_bytes[4];
  if (!read_exact(fd, len_bytes, 4, deadline, true)) return std::nullopt;
  const std::uint32_t len = (std::uint32_t(len_bytes[0]) << 24) |
                            (std::uint32_t(len_bytes[1]) << 16) |
                            (std::uint32_t(len_bytes[2]) << 8) | len_bytes[3];
  if (len == 0 || len > kMaxHeaderBytes)
    throw BackendError("malformed frame: header length " + std::to_string(len));
  std::string text(len, '\0');
  read_exact(fd, reinterpret_cast<unsigned char*>(text.data()), len, deadline, false);

  Frame frame;
  try {
    frame.header = Header::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed frame header: ") + e.what());
  }
  if (!frame.header.is_object() || !frame.header.contains("type") ||
      !frame.header["type"].is_string())
    throw BackendError("frame header lacks a string 'type'");
  if (frame.header.contains("payload_bytes")) {
    const auto& pb = frame.header["payload_bytes"];
    if (!pb.is_number_unsigned() && !(pb.is_number_integer() && pb.get<std::int64_t>() >= 0))
      throw BackendError("payload_bytes must be a non-negative integer");
    const auto n = pb.get<std::uint64_t>();
    if (n > (std::uint64_t(1) << 34)) throw BackendError("payload too large");
    frame.payload.resize(n);
    if (n > 0) read_exact(fd, frame.payload.data(), n, deadline, false);
  }
  return frame;
}

void write_all(int fd, std::span<const unsigned char> bytes) {
  const bool sock = is_socket(fd);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t w = sock ? ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL)
                           : ::write(fd, bytes.data() + sent, bytes.size() - sent);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw BackendError(std::string("write to model failed: ") + std::strerror(errno));
    }
    sent += std::size_t(w);
  }
}

std::vector<unsigned char> encode_pixels(const ImageBuffer& image) {
  std::vector<unsigned char> out(image.size() * 4);
  std::size_t k = 0;
  for (float v : image.data()) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out[k++] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return out;
}

ImageBuffer decode_pixels(const Header& header, std::span<const unsigned char> payload) {
  try {
    const int h = header.at("height").get<int>();
    const int w = header.at("width").get<int>();
    const int c = header.at("channels").get<int>();
    if (header.contains("dtype") && header["dtype"] != "f32le")
      throw BackendError("unsupported payload dtype " + header["dtype"].dump());
    if (h <= 0 || w <= 0 || (c != 1 && c != 3))
      throw BackendError("reply declares invalid image shape");
    const std::size_t n = std::size_t(h) * w * c;
    if (payload.size() != n * 4)
      throw BackendError("payload has " + std::to_string(payload.size()) +
                         " bytes, header shape needs " + std::to_string(n * 4));
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(payload[4 * i + b]) << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
    return ImageBuffer(h, w, c, std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed image header: ") + e.what());
  }
}

Header hello() {
  Header h;
  h["type"] = "hello";
  h["protocol"] = kVersion;
  return h;
}

namespace {
Header image_header(const char* type, std::int64_t id, const ImageBuffer& image) {
  Header h;
  h["type"] = type;
  h["id"] = id;
  h["height"] = image.height();
  h["width"] = image.width();
  h["channels"] = image.channels();
  h["dtype"] = "f32le";
  h["payload_bytes"] = image.size() * 4;
  return h;
}
}  // namespace

Header infer_request(std::int64_t id, const ImageBuffer& image) {
  return image_header("infer", id, image);
}

Header result_reply(std::int64_t id, const ImageBuffer& image) {
  return image_header("result", id, image);
}

Header shutdown() {
  Header h;
  h["type"] = "shutdown";
  return h;
}

}  // namespace cem::protocol
