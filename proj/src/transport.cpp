#include "gridtear/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace gridtear {

namespace {

struct LineQueue {
    std::mutex m;
    std::condition_variable cv;
    std::deque<std::string> lines;
    bool closed = false;

    void push(std::string line) {
        {
            std::lock_guard<std::mutex> lock(m);
            lines.push_back(std::move(line));
        }
        cv.notify_one();
    }

    std::string pop() {
        std::unique_lock<std::mutex> lock(m);
        cv.wait(lock, [&] { return !lines.empty() || closed; });
        if (lines.empty()) throw ProtocolError("channel closed");
        std::string line = std::move(lines.front());
        lines.pop_front();
        return line;
    }

    void close() {
        {
            std::lock_guard<std::mutex> lock(m);
            closed = true;
        }
        cv.notify_all();
    }
};

class QueueChannel : public Channel {
public:
    QueueChannel(std::shared_ptr<LineQueue> out, std::shared_ptr<LineQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}

    ~QueueChannel() override { out_->close(); }

    void send_line(const std::string& line) override { out_->push(line); }
    std::string recv_line() override { return in_->pop(); }

private:
    std::shared_ptr<LineQueue> out_;
    std::shared_ptr<LineQueue> in_;
};

class SocketChannel : public Channel {
public:
    explicit SocketChannel(int fd) : fd_(fd) {}
    ~SocketChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void send_line(const std::string& line) override {
        std::string framed = line;
        framed.push_back('\n');
        std::size_t sent = 0;
        while (sent < framed.size()) {
            const ssize_t n = ::send(fd_, framed.data() + sent, framed.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) throw ProtocolError("socket send failed: connection lost");
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string recv_line() override {
        while (true) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            char chunk[4096];
            const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
            if (n <= 0) throw ProtocolError("socket recv failed: connection lost");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_;
    std::string buffer_;
};

std::pair<std::string, int> split_address(const std::string& address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) {
        throw ValidationError("socket address must be host:port, got '" + address + "'");
    }
    return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
}

}  // namespace

ChannelPair make_in_process_pair() {
    auto q1 = std::make_shared<LineQueue>();
    auto q2 = std::make_shared<LineQueue>();
    ChannelPair pair;
    pair.near = std::make_shared<QueueChannel>(q1, q2);
    pair.far = std::make_shared<QueueChannel>(q2, q1);
    return pair;
}

SocketServer::SocketServer(const std::string& address) {
    const auto [host, port] = split_address(address);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError("cannot create listen socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw ValidationError("bad listen host '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw ProtocolError("cannot bind " + address + ": " + std::strerror(errno));
    }
    if (::listen(listen_fd_, 64) != 0) throw ProtocolError("cannot listen on " + address);
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

SocketServer::~SocketServer() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

ChannelPtr SocketServer::accept_one() {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) throw ProtocolError("accept failed");
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_shared<SocketChannel>(fd);
}

ChannelPtr socket_connect(const std::string& host, int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw ValidationError("bad host '" + host + "'");
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw ProtocolError("cannot connect to " + host + ":" + std::to_string(port) + ": " +
                            std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_shared<SocketChannel>(fd);
}

ChannelPair transport(TransportMode mode, const std::string& address) {
    if (mode == TransportMode::InProcess) return make_in_process_pair();
    SocketServer server(address);
    const auto [host, port] = split_address(address);
    ChannelPair pair;
    pair.far = socket_connect(host, server.port());
    pair.near = server.accept_one();
    return pair;
}

}  // namespace gridtear
