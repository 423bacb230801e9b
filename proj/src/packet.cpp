#include "devprint/packet.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "devprint/error.hpp"

namespace devprint {

namespace {

constexpr std::size_t kIpv4HeaderLen = 20;
constexpr std::size_t kTcpHeaderLen = 20;
constexpr std::size_t kUdpHeaderLen = 8;
constexpr std::size_t kIcmpHeaderLen = 8;
constexpr std::size_t kMaxTcpOptions = 40;
constexpr int kMaxQuoteDepth = 2;

void put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put32(Bytes& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v >> 16));
  put16(out, static_cast<std::uint16_t>(v));
}

void set16(Bytes& out, std::size_t at, std::uint16_t v) {
  out[at] = static_cast<std::uint8_t>(v >> 8);
  out[at + 1] = static_cast<std::uint8_t>(v);
}

std::uint16_t get16(ByteView b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint32_t get32(ByteView b, std::size_t at) {
  return (std::uint32_t{get16(b, at)} << 16) | get16(b, at + 2);
}

std::uint32_t sum16(ByteView data, std::uint32_t sum = 0) {
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) sum += get16(data, i);
  if (i < data.size()) sum += std::uint32_t{data[i]} << 8;
  return sum;
}

std::uint16_t fold(std::uint32_t sum) {
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

std::uint32_t pseudo_header_sum(Ipv4Address src, Ipv4Address dst, std::uint8_t proto,
                                std::size_t length) {
  std::uint32_t sum = 0;
  sum += src.value() >> 16;
  sum += src.value() & 0xFFFF;
  sum += dst.value() >> 16;
  sum += dst.value() & 0xFFFF;
  sum += proto;
  sum += static_cast<std::uint32_t>(length);
  return sum;
}

// --- encode -----------------------------------------------------------------

Bytes encode_tcp_options(const std::vector<TcpOption>& options) {
  Bytes out;
  bool ended = false;
  for (const auto& opt : options) {
    if (ended) throw EncodeError("tcp: options after EOL");
    ended = opt.kind == tcpopt::eol;
    if (opt.kind == tcpopt::eol || opt.kind == tcpopt::nop) {
      if (!opt.data.empty()) throw EncodeError("tcp: EOL/NOP option cannot carry data");
      out.push_back(opt.kind);
      continue;
    }
    if (opt.data.size() > kMaxTcpOptions - 2) throw EncodeError("tcp: option data too long");
    out.push_back(opt.kind);
    out.push_back(static_cast<std::uint8_t>(opt.data.size() + 2));
    out.insert(out.end(), opt.data.begin(), opt.data.end());
  }
  // NOPs then a terminating EOL up to the next 32-bit boundary; an explicit
  // EOL is followed by zero fill instead.
  if (const std::size_t rem = out.size() % 4; rem != 0) {
    for (std::size_t i = rem; i < 3; ++i) out.push_back(ended ? tcpopt::eol : tcpopt::nop);
    out.push_back(tcpopt::eol);
  }
  if (out.size() > kMaxTcpOptions) {
    throw EncodeError("tcp: options take " + std::to_string(out.size()) +
                      " bytes, limit is 40");
  }
  return out;
}

Bytes encode_tcp(const TcpHeader& tcp, const Bytes& payload, const Ipv4Header& ip) {
  if (tcp.reserved > 0x0F) throw EncodeError("tcp: reserved field exceeds 4 bits");
  const Bytes opts = encode_tcp_options(tcp.options);
  const auto words = static_cast<std::uint8_t>((kTcpHeaderLen + opts.size()) / 4);
  if (tcp.data_offset != 0 && tcp.data_offset != words) {
    throw EncodeError("tcp: data offset " + std::to_string(tcp.data_offset) +
                      " disagrees with options length");
  }
  Bytes out;
  out.reserve(kTcpHeaderLen + opts.size() + payload.size());
  put16(out, tcp.src_port);
  put16(out, tcp.dst_port);
  put32(out, tcp.seq);
  put32(out, tcp.ack);
  out.push_back(static_cast<std::uint8_t>((words << 4) | tcp.reserved));
  out.push_back(tcp.flags);
  put16(out, tcp.window);
  put16(out, 0);
  put16(out, tcp.urgent_ptr);
  out.insert(out.end(), opts.begin(), opts.end());
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint16_t csum = tcp.checksum;
  if (csum == 0) {
    csum = fold(sum16(out, pseudo_header_sum(ip.src, ip.dst, ipproto::tcp, out.size())));
  }
  set16(out, 16, csum);
  return out;
}

Bytes encode_udp(const UdpHeader& udp, const Bytes& payload, const Ipv4Header& ip) {
  const std::size_t length = kUdpHeaderLen + payload.size();
  if (length > 0xFFFF) throw EncodeError("udp: datagram too long");
  if (udp.length != 0 && udp.length != length) {
    throw EncodeError("udp: length field " + std::to_string(udp.length) +
                      " disagrees with payload");
  }
  Bytes out;
  out.reserve(length);
  put16(out, udp.src_port);
  put16(out, udp.dst_port);
  put16(out, static_cast<std::uint16_t>(length));
  put16(out, 0);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint16_t csum = udp.checksum;
  if (csum == 0) {
    csum = fold(sum16(out, pseudo_header_sum(ip.src, ip.dst, ipproto::udp, out.size())));
    if (csum == 0) csum = 0xFFFF;
  }
  set16(out, 6, csum);
  return out;
}

Bytes encode_icmp(const IcmpMessage& icmp) {
  Bytes out;
  out.push_back(icmp.type);
  out.push_back(icmp.code);
  put16(out, 0);
  auto id_seq = [&] {
    put16(out, icmp.identifier);
    put16(out, icmp.sequence);
  };
  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, IcmpEcho>) {
          id_seq();
          out.insert(out.end(), body.payload.begin(), body.payload.end());
        } else if constexpr (std::is_same_v<T, IcmpTimestamps>) {
          id_seq();
          put32(out, body.originate);
          put32(out, body.receive);
          put32(out, body.transmit);
        } else if constexpr (std::is_same_v<T, IcmpInfo>) {
          id_seq();
        } else if constexpr (std::is_same_v<T, IcmpAddressMask>) {
          id_seq();
          out.insert(out.end(), body.mask.begin(), body.mask.end());
        } else if constexpr (std::is_same_v<T, IcmpError>) {
          out.insert(out.end(), body.unused.begin(), body.unused.end());
          out.insert(out.end(), body.quoted.begin(), body.quoted.end());
        } else {
          out.insert(out.end(), body.rest.begin(), body.rest.end());
          out.insert(out.end(), body.data.begin(), body.data.end());
        }
      },
      icmp.body);
  set16(out, 2, icmp.checksum != 0 ? icmp.checksum : fold(sum16(out)));
  return out;
}

std::uint8_t protocol_of(const TransportLayer& t) {
  switch (t.index()) {
    case 1: return ipproto::tcp;
    case 2: return ipproto::udp;
    case 3: return ipproto::icmp;
    default: return 0;
  }
}

// --- decode -----------------------------------------------------------------

std::vector<TcpOption> decode_tcp_options(ByteView b) {
  std::vector<TcpOption> options;
  std::size_t i = 0;
  while (i < b.size()) {
    const std::uint8_t kind = b[i];
    if (kind == tcpopt::eol) {
      options.push_back(TcpOption::eol());
      // Everything after EOL is padding.
      for (std::size_t j = i + 1; j < b.size(); ++j) {
        if (b[j] != 0) throw DecodeError("tcp", "non-zero bytes after EOL option");
      }
      break;
    }
    if (kind == tcpopt::nop) {
      options.push_back(TcpOption::nop());
      ++i;
      continue;
    }
    if (i + 1 >= b.size()) throw DecodeError("tcp", "option " + std::to_string(kind) + " truncated");
    const std::size_t len = b[i + 1];
    if (len < 2 || i + len > b.size()) {
      throw DecodeError("tcp", "option " + std::to_string(kind) + " has bad length " +
                                   std::to_string(len));
    }
    options.push_back({kind, Bytes(b.begin() + i + 2, b.begin() + i + len)});
    i += len;
  }
  return options;
}

RawPacket decode_impl(ByteView bytes, DecodeMode mode, int depth);

IcmpMessage decode_icmp(ByteView b, int depth) {
  IcmpMessage m;
  m.type = b[0];
  m.code = b[1];
  m.checksum = get16(b, 2);
  const ByteView data = b.subspan(kIcmpHeaderLen);
  const IcmpBodyKind kind = icmp_body_kind(m.type);
  auto with_id_seq = [&] {
    m.identifier = get16(b, 4);
    m.sequence = get16(b, 6);
  };
  std::array<std::uint8_t, 4> rest{b[4], b[5], b[6], b[7]};

  switch (kind) {
    case IcmpBodyKind::echo:
      with_id_seq();
      m.body = IcmpEcho{Bytes(data.begin(), data.end())};
      return m;
    case IcmpBodyKind::timestamp:
      if (data.size() == 12) {
        with_id_seq();
        m.body = IcmpTimestamps{get32(data, 0), get32(data, 4), get32(data, 8)};
        return m;
      }
      break;
    case IcmpBodyKind::info:
      if (data.empty()) {
        with_id_seq();
        m.body = IcmpInfo{};
        return m;
      }
      break;
    case IcmpBodyKind::mask:
      if (data.size() == 4) {
        with_id_seq();
        m.body = IcmpAddressMask{{data[0], data[1], data[2], data[3]}};
        return m;
      }
      break;
    case IcmpBodyKind::error: {
      IcmpError err;
      err.unused = rest;
      err.quoted.assign(data.begin(), data.end());
      m.identifier = get16(b, 4);
      m.sequence = get16(b, 6);
      if (depth < kMaxQuoteDepth && err.quoted.size() >= kIpv4HeaderLen) {
        try {
          err.quoted_packet =
              std::make_shared<const Packet>(decode_impl(err.quoted, DecodeMode::quoted, depth + 1).parsed);
        } catch (const DecodeError&) {
          // Quotes of garbage stay raw.
        }
      }
      m.body = std::move(err);
      return m;
    }
    case IcmpBodyKind::opaque:
      break;
  }
  m.identifier = get16(b, 4);
  m.sequence = get16(b, 6);
  m.body = IcmpOpaque{rest, Bytes(data.begin(), data.end())};
  return m;
}

}  // namespace

// --- Ipv4Address ------------------------------------------------------------

std::optional<Ipv4Address> Ipv4Address::try_parse(std::string_view text) {
  std::uint32_t value = 0;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int octet = 0; octet < 4; ++octet) {
    if (octet > 0) {
      if (p == end || *p != '.') return std::nullopt;
      ++p;
    }
    if (p == end || *p < '0' || *p > '9') return std::nullopt;
    unsigned part = 0;
    auto [next, ec] = std::from_chars(p, end, part);
    if (ec != std::errc{} || part > 255 || next - p > 3) return std::nullopt;
    value = (value << 8) | part;
    p = next;
  }
  if (p != end) return std::nullopt;
  return Ipv4Address(value);
}

Ipv4Address Ipv4Address::parse(std::string_view text) {
  if (auto a = try_parse(text)) return *a;
  throw DataError("invalid IPv4 address '" + std::string(text) + "'");
}

std::string Ipv4Address::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", value_ >> 24, (value_ >> 16) & 0xFF,
                (value_ >> 8) & 0xFF, value_ & 0xFF);
  return buf;
}

// --- options ----------------------------------------------------------------

TcpOption TcpOption::mss(std::uint16_t value) {
  return {tcpopt::mss, {static_cast<std::uint8_t>(value >> 8), static_cast<std::uint8_t>(value)}};
}

TcpOption TcpOption::wscale(std::uint8_t shift) { return {tcpopt::wscale, {shift}}; }

TcpOption TcpOption::timestamp(std::uint32_t value, std::uint32_t echo) {
  Bytes data;
  put32(data, value);
  put32(data, echo);
  return {tcpopt::timestamp, std::move(data)};
}

std::size_t TcpOption::wire_size() const {
  return (kind == tcpopt::eol || kind == tcpopt::nop) ? 1 : 2 + data.size();
}

IcmpBodyKind icmp_body_kind(std::uint8_t type) {
  switch (type) {
    case icmptype::echo_reply:
    case icmptype::echo_request:
      return IcmpBodyKind::echo;
    case icmptype::timestamp_request:
    case icmptype::timestamp_reply:
      return IcmpBodyKind::timestamp;
    case icmptype::info_request:
    case icmptype::info_reply:
      return IcmpBodyKind::info;
    case icmptype::mask_request:
    case icmptype::mask_reply:
      return IcmpBodyKind::mask;
    case icmptype::dest_unreachable:
    case icmptype::source_quench:
    case icmptype::redirect:
    case icmptype::time_exceeded:
    case icmptype::parameter_problem:
      return IcmpBodyKind::error;
    default:
      return IcmpBodyKind::opaque;
  }
}

bool IcmpError::operator==(const IcmpError& other) const {
  if (unused != other.unused || quoted != other.quoted) return false;
  if (!quoted_packet || !other.quoted_packet) return !quoted_packet && !other.quoted_packet;
  return *quoted_packet == *other.quoted_packet;
}

// --- public codec -----------------------------------------------------------

std::uint16_t inet_checksum(ByteView data) { return fold(sum16(data)); }

RawPacket encode_packet(const Packet& packet) {
  const Ipv4Header& ip = packet.ip;
  if (ip.version != 4) throw EncodeError("ipv4: version must be 4");
  if (ip.ihl != 0 && ip.ihl != 5) throw EncodeError("ipv4: IP options are not supported");
  if (ip.fragment_offset > 0x1FFF) throw EncodeError("ipv4: fragment offset exceeds 13 bits");

  std::uint8_t proto = protocol_of(packet.transport);
  if (ip.protocol != 0 && proto != 0 && ip.protocol != proto) {
    throw EncodeError("ipv4: protocol field disagrees with transport header");
  }
  if (proto == 0) proto = ip.protocol;

  Bytes transport = std::visit(
      [&](const auto& t) -> Bytes {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, TcpHeader>) {
          return encode_tcp(t, packet.payload, ip);
        } else if constexpr (std::is_same_v<T, UdpHeader>) {
          return encode_udp(t, packet.payload, ip);
        } else if constexpr (std::is_same_v<T, IcmpMessage>) {
          if (!packet.payload.empty()) throw EncodeError("icmp: data belongs in the ICMP body");
          return encode_icmp(t);
        } else {
          Bytes b = t.bytes;
          b.insert(b.end(), packet.payload.begin(), packet.payload.end());
          return b;
        }
      },
      packet.transport);

  const std::size_t total = kIpv4HeaderLen + transport.size();
  if (total > 0xFFFF) throw EncodeError("ipv4: packet exceeds 65535 bytes");
  if (ip.total_length != 0 && ip.total_length != total) {
    throw EncodeError("ipv4: total length " + std::to_string(ip.total_length) +
                      " disagrees with contents (" + std::to_string(total) + ")");
  }

  Bytes out;
  out.reserve(total);
  out.push_back(0x45);
  out.push_back(ip.tos);
  put16(out, static_cast<std::uint16_t>(total));
  put16(out, ip.identification);
  put16(out, static_cast<std::uint16_t>((ip.df ? 0x4000 : 0) | (ip.mf ? 0x2000 : 0) |
                                        ip.fragment_offset));
  out.push_back(ip.ttl);
  out.push_back(proto);
  put16(out, 0);
  put32(out, ip.src.value());
  put32(out, ip.dst.value());
  set16(out, 10, ip.checksum != 0 ? ip.checksum : inet_checksum(out));
  out.insert(out.end(), transport.begin(), transport.end());

  RawPacket raw;
  raw.parsed = decode_packet(out).parsed;
  raw.bytes = std::move(out);
  return raw;
}

RawPacket decode_packet(ByteView bytes, DecodeMode mode) { return decode_impl(bytes, mode, 0); }

namespace {

RawPacket decode_impl(ByteView bytes, DecodeMode mode, int depth) {
  if (bytes.size() < kIpv4HeaderLen) {
    throw DecodeError("ipv4", "truncated: need 20 bytes, have " + std::to_string(bytes.size()));
  }
  Packet p;
  Ipv4Header& ip = p.ip;
  ip.version = bytes[0] >> 4;
  ip.ihl = bytes[0] & 0x0F;
  if (ip.version != 4) throw DecodeError("ipv4", "version " + std::to_string(ip.version));
  if (ip.ihl < 5) throw DecodeError("ipv4", "bad IHL " + std::to_string(ip.ihl));
  const std::size_t header_len = std::size_t{ip.ihl} * 4;
  if (header_len > bytes.size()) {
    throw DecodeError("ipv4", "truncated: IHL " + std::to_string(ip.ihl) + " needs " +
                                  std::to_string(header_len) + " bytes, have " +
                                  std::to_string(bytes.size()));
  }
  ip.tos = bytes[1];
  ip.total_length = get16(bytes, 2);
  ip.identification = get16(bytes, 4);
  const std::uint16_t frag = get16(bytes, 6);
  ip.df = (frag & 0x4000) != 0;
  ip.mf = (frag & 0x2000) != 0;
  ip.fragment_offset = frag & 0x1FFF;
  ip.ttl = bytes[8];
  ip.protocol = bytes[9];
  ip.checksum = get16(bytes, 10);
  ip.src = Ipv4Address(get32(bytes, 12));
  ip.dst = Ipv4Address(get32(bytes, 16));

  if (ip.total_length < header_len) {
    throw DecodeError("ipv4", "total length " + std::to_string(ip.total_length) +
                                  " shorter than header");
  }
  std::size_t end = ip.total_length;
  if (end > bytes.size()) {
    if (mode == DecodeMode::strict) {
      throw DecodeError("ipv4", "truncated: total length " + std::to_string(ip.total_length) +
                                    ", have " + std::to_string(bytes.size()));
    }
    end = bytes.size();
  }
  const ByteView seg = bytes.subspan(header_len, end - header_len);
  const bool quoted = mode == DecodeMode::quoted;

  // Non-first fragments carry no transport header.
  if (ip.fragment_offset != 0) {
    p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
    return {Bytes(bytes.begin(), bytes.begin() + end), std::move(p)};
  }

  switch (ip.protocol) {
    case ipproto::tcp: {
      if (seg.size() < kTcpHeaderLen) {
        if (!quoted) throw DecodeError("tcp", "truncated header: " + std::to_string(seg.size()) + " bytes");
        p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
        break;
      }
      TcpHeader t;
      t.src_port = get16(seg, 0);
      t.dst_port = get16(seg, 2);
      t.seq = get32(seg, 4);
      t.ack = get32(seg, 8);
      t.data_offset = seg[12] >> 4;
      t.reserved = seg[12] & 0x0F;
      t.flags = seg[13];
      t.window = get16(seg, 14);
      t.checksum = get16(seg, 16);
      t.urgent_ptr = get16(seg, 18);
      const std::size_t hlen = std::size_t{t.data_offset} * 4;
      if (t.data_offset < 5) throw DecodeError("tcp", "bad data offset " + std::to_string(t.data_offset));
      if (hlen > seg.size()) {
        if (!quoted) throw DecodeError("tcp", "truncated options");
        p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
        break;
      }
      t.options = decode_tcp_options(seg.subspan(kTcpHeaderLen, hlen - kTcpHeaderLen));
      p.payload.assign(seg.begin() + hlen, seg.end());
      p.transport = std::move(t);
      break;
    }
    case ipproto::udp: {
      if (seg.size() < kUdpHeaderLen) {
        if (!quoted) throw DecodeError("udp", "truncated header: " + std::to_string(seg.size()) + " bytes");
        p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
        break;
      }
      UdpHeader u;
      u.src_port = get16(seg, 0);
      u.dst_port = get16(seg, 2);
      u.length = get16(seg, 4);
      u.checksum = get16(seg, 6);
      if (u.length < kUdpHeaderLen) throw DecodeError("udp", "length field " + std::to_string(u.length));
      std::size_t uend = u.length;
      if (uend > seg.size()) {
        if (!quoted) throw DecodeError("udp", "truncated: length " + std::to_string(u.length));
        uend = seg.size();
      }
      p.payload.assign(seg.begin() + kUdpHeaderLen, seg.begin() + uend);
      p.transport = u;
      break;
    }
    case ipproto::icmp: {
      if (seg.size() < kIcmpHeaderLen) {
        if (!quoted) throw DecodeError("icmp", "truncated header: " + std::to_string(seg.size()) + " bytes");
        p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
        break;
      }
      p.transport = decode_icmp(seg, depth);
      break;
    }
    default:
      p.transport = OpaqueTransport{Bytes(seg.begin(), seg.end())};
  }
  return {Bytes(bytes.begin(), bytes.begin() + end), std::move(p)};
}

}  // namespace

bool checksums_valid(ByteView bytes) {
  RawPacket raw;
  try {
    raw = decode_packet(bytes);
  } catch (const DecodeError&) {
    return false;
  }
  const Packet& p = raw.parsed;
  const std::size_t hlen = std::size_t{p.ip.ihl} * 4;
  const ByteView b = raw.bytes;
  if (inet_checksum(b.first(hlen)) != 0) return false;
  if (p.ip.fragment_offset != 0 || p.ip.mf) return true;
  const ByteView seg = b.subspan(hlen);
  switch (p.transport.index()) {
    case 1:
      return fold(sum16(seg, pseudo_header_sum(p.ip.src, p.ip.dst, ipproto::tcp, seg.size()))) == 0;
    case 2:
      if (p.udp()->checksum == 0) return true;  // checksum not in use
      return fold(sum16(seg, pseudo_header_sum(p.ip.src, p.ip.dst, ipproto::udp, seg.size()))) == 0;
    case 3:
      return inet_checksum(seg) == 0;
    default:
      return true;
  }
}

std::string tcp_option_signature(const std::vector<TcpOption>& options) {
  std::string out;
  for (const auto& o : options) {
    if (!out.empty()) out += ',';
    switch (o.kind) {
      case tcpopt::nop: out += 'N'; break;
      case tcpopt::eol: out += 'L'; break;
      case tcpopt::mss:
        out += 'M';
        out += o.data.size() == 2 ? std::to_string(get16(o.data, 0)) : std::string("?");
        break;
      case tcpopt::wscale:
        out += 'W';
        out += o.data.size() == 1 ? std::to_string(o.data[0]) : std::string("?");
        break;
      case tcpopt::timestamp: out += 'T'; break;
      case tcpopt::sack_permitted: out += 'S'; break;
      default: out += 'K' + std::to_string(o.kind);
    }
  }
  return out;
}

std::vector<TcpOption> parse_tcp_option_signature(std::string_view signature) {
  std::vector<TcpOption> out;
  std::size_t start = 0;
  while (start < signature.size()) {
    const std::size_t end = std::min(signature.find(',', start), signature.size());
    const std::string_view tok = signature.substr(start, end - start);
    start = end + 1;
    if (tok.empty()) throw ConfigError("empty token in TCP option signature");
    unsigned value = 0;
    const std::string_view num = tok.substr(1);
    const bool numeric = !num.empty() &&
                         std::from_chars(num.data(), num.data() + num.size(), value).ptr ==
                             num.data() + num.size();
    switch (tok[0]) {
      case 'N': out.push_back(TcpOption::nop()); continue;
      case 'L': out.push_back(TcpOption::eol()); continue;
      case 'T': out.push_back(TcpOption::timestamp(0, 0)); continue;
      case 'S': out.push_back(TcpOption::sack_permitted()); continue;
      case 'M':
        if (numeric && value <= 0xFFFF) {
          out.push_back(TcpOption::mss(static_cast<std::uint16_t>(value)));
          continue;
        }
        break;
      case 'W':
        if (numeric && value <= 0xFF) {
          out.push_back(TcpOption::wscale(static_cast<std::uint8_t>(value)));
          continue;
        }
        break;
      default:
        break;
    }
    throw ConfigError("bad TCP option token '" + std::string(tok) + "'");
  }
  return out;
}

std::string to_hex(ByteView bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0F]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw DataError("hex string has odd length");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DataError(std::string("invalid hex digit '") + c + "'");
  };
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  }
  return out;
}

std::string hex_dump(ByteView bytes) {
  std::string out;
  char line[96];
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    int n = std::snprintf(line, sizeof line, "%04zx  ", off);
    out.append(line, static_cast<std::size_t>(n));
    std::string ascii;
    for (std::size_t i = 0; i < 16; ++i) {
      if (off + i < bytes.size()) {
        const std::uint8_t b = bytes[off + i];
        n = std::snprintf(line, sizeof line, "%02x ", b);
        out.append(line, static_cast<std::size_t>(n));
        ascii.push_back(b >= 0x20 && b < 0x7F ? static_cast<char>(b) : '.');
      } else {
        out.append("   ");
      }
      if (i == 7) out.push_back(' ');
    }
    out.append(" ").append(ascii).push_back('\n');
  }
  return out;
}

}  // namespace devprint
