// Raw-socket transport for real scans (Linux, needs CAP_NET_RAW).

#pragma once

#include <memory>

#include "devprint/scan.hpp"

namespace devprint {

// Sends the probes' bytes as-is through an IP_HDRINCL socket and listens for
// ICMP and TCP replies. Copies of our own packets seen on loopback are
// dropped. Throws DataError when the sockets cannot be opened.
std::unique_ptr<Transport> open_live_transport();

}  // namespace devprint
