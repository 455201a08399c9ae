#pragma once

#include <memory>
#include <string>

#include "gridtear/types.hpp"

namespace gridtear {

enum class TransportMode { InProcess, Socket };

/// Reliable ordered channel carrying newline-delimited JSON lines. Both
/// transport modes move identical bytes; only the medium differs.
class Channel {
public:
    virtual ~Channel() = default;
    /// Send one message (the newline is appended by the channel).
    virtual void send_line(const std::string& line) = 0;
    /// Block for the next message. Throws ProtocolError on connection loss.
    virtual std::string recv_line() = 0;
};

using ChannelPtr = std::shared_ptr<Channel>;

struct ChannelPair {
    ChannelPtr near;  ///< supervisory end
    ChannelPtr far;   ///< worker end
};

/// In-process pair backed by blocking queues.
ChannelPair make_in_process_pair();

/// Loopback TCP listener for socket mode. Binding to port 0 picks an
/// ephemeral port; workers connect with socket_connect.
class SocketServer {
public:
    explicit SocketServer(const std::string& address);  // "host:port"
    ~SocketServer();
    SocketServer(const SocketServer&) = delete;
    SocketServer& operator=(const SocketServer&) = delete;

    [[nodiscard]] int port() const { return port_; }
    ChannelPtr accept_one();

private:
    int listen_fd_ = -1;
    int port_ = 0;
};

ChannelPtr socket_connect(const std::string& host, int port);

/// Channel pair in the requested mode; socket mode sets up a loopback
/// listener on the given address and connects through it.
ChannelPair transport(TransportMode mode, const std::string& address = "127.0.0.1:0");

}  // namespace gridtear
