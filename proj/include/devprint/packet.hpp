// IPv4 / TCP / UDP / ICMP wire codec.
//
// encode_packet() fills in every length and checksum field left at zero and
// returns both the wire bytes and the layered view that decode_packet() will
// produce for those bytes. ICMP error messages keep the quoted datagram as raw
// bytes and parse it leniently (quoted packets are truncated by design).

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace devprint {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class Ipv4Address {
 public:
  constexpr Ipv4Address() = default;
  constexpr explicit Ipv4Address(std::uint32_t host_order) : value_(host_order) {}
  constexpr Ipv4Address(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d)
      : value_((std::uint32_t{a} << 24) | (std::uint32_t{b} << 16) |
               (std::uint32_t{c} << 8) | d) {}

  // Throws DataError on anything but dotted-quad notation.
  static Ipv4Address parse(std::string_view text);
  static std::optional<Ipv4Address> try_parse(std::string_view text);

  constexpr std::uint32_t value() const { return value_; }
  std::string to_string() const;

  friend constexpr auto operator<=>(Ipv4Address, Ipv4Address) = default;

 private:
  std::uint32_t value_ = 0;
};

namespace ipproto {
inline constexpr std::uint8_t icmp = 1;
inline constexpr std::uint8_t tcp = 6;
inline constexpr std::uint8_t udp = 17;
}  // namespace ipproto

struct Ipv4Header {
  std::uint8_t version = 4;
  std::uint8_t ihl = 5;              // 32-bit words; 0 = auto
  std::uint8_t tos = 0;
  std::uint16_t total_length = 0;    // 0 = auto
  std::uint16_t identification = 0;
  bool df = false;
  bool mf = false;
  std::uint16_t fragment_offset = 0; // 13 bits, 8-byte units
  std::uint8_t ttl = 64;
  std::uint8_t protocol = 0;         // 0 = derived from transport on encode
  std::uint16_t checksum = 0;        // 0 = auto
  Ipv4Address src;
  Ipv4Address dst;

  bool operator==(const Ipv4Header&) const = default;
};

namespace tcpflag {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t rst = 0x04;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
inline constexpr std::uint8_t urg = 0x20;
inline constexpr std::uint8_t ece = 0x40;
inline constexpr std::uint8_t cwr = 0x80;
}  // namespace tcpflag

namespace tcpopt {
inline constexpr std::uint8_t eol = 0;
inline constexpr std::uint8_t nop = 1;
inline constexpr std::uint8_t mss = 2;
inline constexpr std::uint8_t wscale = 3;
inline constexpr std::uint8_t sack_permitted = 4;
inline constexpr std::uint8_t timestamp = 8;
}  // namespace tcpopt

// EOL and NOP are single bytes and never carry data.
struct TcpOption {
  std::uint8_t kind = tcpopt::nop;
  Bytes data;

  static TcpOption nop() { return {tcpopt::nop, {}}; }
  static TcpOption eol() { return {tcpopt::eol, {}}; }
  static TcpOption mss(std::uint16_t value);
  static TcpOption wscale(std::uint8_t shift);
  static TcpOption sack_permitted() { return {tcpopt::sack_permitted, {}}; }
  static TcpOption timestamp(std::uint32_t value, std::uint32_t echo);

  std::size_t wire_size() const;

  bool operator==(const TcpOption&) const = default;
};

struct TcpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t data_offset = 0;  // 32-bit words; 0 = auto
  std::uint8_t reserved = 0;     // 4 bits
  std::uint8_t flags = 0;
  std::uint16_t window = 0;
  std::uint16_t checksum = 0;    // 0 = auto
  std::uint16_t urgent_ptr = 0;
  std::vector<TcpOption> options;

  bool has(std::uint8_t flag) const { return (flags & flag) != 0; }

  bool operator==(const TcpHeader&) const = default;
};

struct UdpHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint16_t length = 0;    // 0 = auto
  std::uint16_t checksum = 0;  // 0 = auto

  bool operator==(const UdpHeader&) const = default;
};

namespace icmptype {
inline constexpr std::uint8_t echo_reply = 0;
inline constexpr std::uint8_t dest_unreachable = 3;
inline constexpr std::uint8_t source_quench = 4;
inline constexpr std::uint8_t redirect = 5;
inline constexpr std::uint8_t echo_request = 8;
inline constexpr std::uint8_t time_exceeded = 11;
inline constexpr std::uint8_t parameter_problem = 12;
inline constexpr std::uint8_t timestamp_request = 13;
inline constexpr std::uint8_t timestamp_reply = 14;
inline constexpr std::uint8_t info_request = 15;
inline constexpr std::uint8_t info_reply = 16;
inline constexpr std::uint8_t mask_request = 17;
inline constexpr std::uint8_t mask_reply = 18;
}  // namespace icmptype

// Body layout of an ICMP message, chosen from its type.
enum class IcmpBodyKind { echo, timestamp, info, mask, error, opaque };

IcmpBodyKind icmp_body_kind(std::uint8_t type);

struct Packet;

struct IcmpEcho {
  Bytes payload;
  bool operator==(const IcmpEcho&) const = default;
};

// Milliseconds since midnight UTC.
struct IcmpTimestamps {
  std::uint32_t originate = 0;
  std::uint32_t receive = 0;
  std::uint32_t transmit = 0;
  bool operator==(const IcmpTimestamps&) const = default;
};

struct IcmpInfo {
  bool operator==(const IcmpInfo&) const = default;
};

struct IcmpAddressMask {
  std::array<std::uint8_t, 4> mask{};
  bool operator==(const IcmpAddressMask&) const = default;
};

struct IcmpError {
  std::array<std::uint8_t, 4> unused{};
  Bytes quoted;
  // Lenient parse of `quoted`; absent when not even an IPv4 header fits.
  std::shared_ptr<const Packet> quoted_packet;

  bool operator==(const IcmpError& other) const;
};

struct IcmpOpaque {
  std::array<std::uint8_t, 4> rest{};
  Bytes data;
  bool operator==(const IcmpOpaque&) const = default;
};

using IcmpBody =
    std::variant<IcmpEcho, IcmpTimestamps, IcmpInfo, IcmpAddressMask, IcmpError, IcmpOpaque>;

struct IcmpMessage {
  std::uint8_t type = 0;
  std::uint8_t code = 0;
  std::uint16_t checksum = 0;  // 0 = auto
  // Only meaningful for echo/timestamp/info/mask bodies; bytes 4..7 otherwise.
  std::uint16_t identifier = 0;
  std::uint16_t sequence = 0;
  IcmpBody body = IcmpOpaque{};

  bool operator==(const IcmpMessage&) const = default;
};

// Transport bytes that could not (or need not) be parsed, e.g. a truncated
// TCP header inside an ICMP quote or an unsupported protocol.
struct OpaqueTransport {
  Bytes bytes;
  bool operator==(const OpaqueTransport&) const = default;
};

using TransportLayer = std::variant<OpaqueTransport, TcpHeader, UdpHeader, IcmpMessage>;

struct Packet {
  Ipv4Header ip;
  TransportLayer transport = OpaqueTransport{};
  Bytes payload;  // TCP/UDP data; ICMP data lives in the body

  const TcpHeader* tcp() const { return std::get_if<TcpHeader>(&transport); }
  const UdpHeader* udp() const { return std::get_if<UdpHeader>(&transport); }
  const IcmpMessage* icmp() const { return std::get_if<IcmpMessage>(&transport); }

  bool operator==(const Packet&) const = default;
};

struct RawPacket {
  Bytes bytes;
  Packet parsed;

  bool operator==(const RawPacket&) const = default;
};

// One's-complement Internet checksum. An odd trailing byte is zero padded.
std::uint16_t inet_checksum(ByteView data);

// Throws EncodeError when a field cannot be represented. The returned
// `parsed` view is exactly what decode_packet() yields for `bytes`.
RawPacket encode_packet(const Packet& packet);

enum class DecodeMode {
  strict,  // every length field must fit inside the buffer
  quoted,  // ICMP-quoted datagram: truncated transport decodes as opaque
};

// Structural decode; checksums are not verified (see checksums_valid()).
// Throws DecodeError naming the failing layer.
RawPacket decode_packet(ByteView bytes, DecodeMode mode = DecodeMode::strict);

// True when every checksum present in `bytes` re-sums correctly.
bool checksums_valid(ByteView bytes);

// Option list as a short signature: N (NOP), L (EOL), M<mss>, W<shift>, T
// (timestamp), S (SACK permitted), K<kind> for anything else; comma separated.
std::string tcp_option_signature(const std::vector<TcpOption>& options);
// Inverse for the letters above except K; timestamps come back as T(0, 0).
std::vector<TcpOption> parse_tcp_option_signature(std::string_view signature);

std::string to_hex(ByteView bytes);
Bytes from_hex(std::string_view hex);

// Wireshark-style offset/hex/ascii dump.
std::string hex_dump(ByteView bytes);

}  // namespace devprint
