#include "devprint/live.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <set>
#include <tuple>

#include "devprint/error.hpp"

namespace devprint {

namespace {

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

int open_raw(int protocol) {
  const int fd = ::socket(AF_INET, SOCK_RAW | SOCK_CLOEXEC, protocol);
  if (fd < 0) throw DataError(std::string("raw socket: ") + std::strerror(errno));
  return fd;
}

// (src, dst, ip id, protocol) of a packet we sent.
using Sent = std::tuple<std::uint32_t, std::uint32_t, std::uint16_t, std::uint8_t>;

class LiveTransport : public Transport {
 public:
  LiveTransport()
      : send_(open_raw(IPPROTO_RAW)), icmp_(open_raw(IPPROTO_ICMP)), tcp_(open_raw(IPPROTO_TCP)) {
    const int on = 1;
    if (::setsockopt(send_.get(), IPPROTO_IP, IP_HDRINCL, &on, sizeof on) != 0) {
      throw DataError(std::string("IP_HDRINCL: ") + std::strerror(errno));
    }
  }

  void send(const ProbeSpec& probe) override {
    const auto& ip = probe.packet.parsed.ip;
    sent_.insert({ip.src.value(), ip.dst.value(), ip.identification, ip.protocol});
    sockaddr_in to{};
    to.sin_family = AF_INET;
    to.sin_addr.s_addr = htonl(probe.target.value());
    const auto& b = probe.packet.bytes;
    if (::sendto(send_.get(), b.data(), b.size(), 0, reinterpret_cast<const sockaddr*>(&to),
                 sizeof to) < 0) {
      throw DataError("send to " + probe.target.to_string() + ": " + std::strerror(errno));
    }
  }

  std::vector<Received> poll(std::int64_t deadline_ms) override {
    std::vector<Received> out;
    pollfd fds[2] = {{icmp_.get(), POLLIN, 0}, {tcp_.get(), POLLIN, 0}};
    while (out.empty()) {
      const auto now = now_ms();
      if (now >= deadline_ms) break;
      const int n = ::poll(fds, 2, static_cast<int>(deadline_ms - now));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw DataError(std::string("poll: ") + std::strerror(errno));
      }
      if (n == 0) break;
      for (auto& f : fds) {
        if (f.revents & POLLIN) drain(f.fd, out);
      }
    }
    return out;
  }

  std::int64_t now_ms() override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }

 private:
  void drain(int fd, std::vector<Received>& out) {
    std::uint8_t buf[65536];
    for (;;) {
      const auto n = ::recv(fd, buf, sizeof buf, MSG_DONTWAIT);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return;
        throw DataError(std::string("recv: ") + std::strerror(errno));
      }
      RawPacket packet;
      try {
        packet = decode_packet(ByteView(buf, static_cast<std::size_t>(n)));
      } catch (const DecodeError&) {
        continue;  // not ours to judge; the scan only sees well-formed replies
      }
      const auto& ip = packet.parsed.ip;
      if (sent_.count({ip.src.value(), ip.dst.value(), ip.identification, ip.protocol})) continue;
      out.push_back({ip.src, std::move(packet), now_ms()});
    }
  }

  Fd send_, icmp_, tcp_;
  std::set<Sent> sent_;
};

}  // namespace

std::unique_ptr<Transport> open_live_transport() { return std::make_unique<LiveTransport>(); }

}  // namespace devprint
