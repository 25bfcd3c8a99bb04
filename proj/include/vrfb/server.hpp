#pragma once

// Live transports for `serve`: datagram and websocket endpoints carrying the
// wire protocol, a static HTTP server for the browser cockpit, and the paced
// simulation loop that drains the inbound queue at tick boundaries.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <spdlog/spdlog.h>

#include "httplib.h"

#include "error.hpp"
#include "live_session.hpp"
#include "protocol.hpp"

namespace vrfb {
namespace net {

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }

    int get() const { return fd_; }
    explicit operator bool() const { return fd_ >= 0; }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

inline void set_nonblocking(int fd) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

inline std::uint16_t bound_port(int fd) {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
}

/// Binds a socket on all IPv4 interfaces; port 0 picks an ephemeral port.
inline Fd bind_socket(int type, std::uint16_t port, const char* what) {
    Fd fd(::socket(AF_INET, type, 0));
    if (!fd) throw Error(ErrorKind::io, std::string("cannot create ") + what + " socket: " + std::strerror(errno));
    const int one = 1;
    if (type == SOCK_STREAM) ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int err = errno;
        throw Error(ErrorKind::io, std::string(what) + " port " + std::to_string(port) +
                                       (err == EADDRINUSE ? " is already in use" : ": " + std::string(std::strerror(err))));
    }
    if (type == SOCK_STREAM && ::listen(fd.get(), 16) != 0) {
        throw Error(ErrorKind::io, std::string("cannot listen on ") + what + " port " + std::to_string(port));
    }
    set_nonblocking(fd.get());
    return fd;
}

inline bool is_loopback(const sockaddr_in& a) { return (ntohl(a.sin_addr.s_addr) >> 24) == 127; }

inline std::string endpoint_string(const sockaddr_in& a) {
    char buf[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &a.sin_addr, buf, sizeof(buf));
    return std::string(buf) + ":" + std::to_string(ntohs(a.sin_port));
}

// ---------------------------------------------------------------------------
// Websocket framing (text frames, server side)

inline constexpr const char* kWebSocketGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
inline constexpr std::size_t kMaxFramePayload = 64 * 1024;

inline std::string websocket_accept(const std::string& key) {
    const std::string src = key + kWebSocketGuid;
    unsigned char digest[SHA_DIGEST_LENGTH];
    ::SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
    unsigned char b64[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
    const int n = ::EVP_EncodeBlock(b64, digest, SHA_DIGEST_LENGTH);
    return std::string(reinterpret_cast<char*>(b64), static_cast<std::size_t>(n));
}

/// Header value from a raw HTTP request, matched case-insensitively.
inline std::optional<std::string> http_header(const std::string& request, const std::string& name) {
    auto lower = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    const std::string req = lower(request);
    const std::string needle = "\r\n" + lower(name) + ":";
    const auto pos = req.find(needle);
    if (pos == std::string::npos) return std::nullopt;
    const auto begin = pos + needle.size();
    const auto end = request.find("\r\n", begin);
    std::string v = request.substr(begin, end - begin);
    const auto b = v.find_first_not_of(" \t");
    const auto e = v.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
}

enum class WsOpcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

inline std::string ws_frame(WsOpcode op, std::string_view payload) {
    std::string f;
    f += static_cast<char>(0x80 | static_cast<std::uint8_t>(op));
    const std::size_t n = payload.size();
    if (n < 126) {
        f += static_cast<char>(n);
    } else if (n <= 0xFFFF) {
        f += static_cast<char>(126);
        f += static_cast<char>((n >> 8) & 0xFF);
        f += static_cast<char>(n & 0xFF);
    } else {
        f += static_cast<char>(127);
        for (int i = 7; i >= 0; --i) f += static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF);
    }
    f.append(payload);
    return f;
}

struct WsFrame {
    bool fin = true;
    WsOpcode op = WsOpcode::text;
    std::string payload;
};

/// Pops one complete frame from `buf`. Returns nullopt when more bytes are
/// needed; throws Error(encoding) on a protocol violation.
inline std::optional<WsFrame> ws_parse(std::string& buf, bool require_mask = true) {
    if (buf.size() < 2) return std::nullopt;
    const auto b0 = static_cast<std::uint8_t>(buf[0]);
    const auto b1 = static_cast<std::uint8_t>(buf[1]);
    if (b0 & 0x70) throw Error(ErrorKind::encoding, "websocket: reserved bits set");
    const bool masked = b1 & 0x80;
    if (require_mask && !masked) throw Error(ErrorKind::encoding, "websocket: client frame not masked");
    std::size_t pos = 2;
    std::uint64_t len = b1 & 0x7F;
    if (len == 126) {
        if (buf.size() < 4) return std::nullopt;
        len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[2])) << 8) | static_cast<std::uint8_t>(buf[3]);
        pos = 4;
    } else if (len == 127) {
        if (buf.size() < 10) return std::nullopt;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buf[2 + i]);
        pos = 10;
    }
    if (len > kMaxFramePayload) throw Error(ErrorKind::encoding, "websocket: frame too large");
    const std::size_t mask_len = masked ? 4 : 0;
    if (buf.size() < pos + mask_len + len) return std::nullopt;
    WsFrame f;
    f.fin = b0 & 0x80;
    f.op = static_cast<WsOpcode>(b0 & 0x0F);
    f.payload = buf.substr(pos + mask_len, len);
    if (masked) {
        for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] ^= buf[pos + (i % 4)];
    }
    buf.erase(0, pos + mask_len + len);
    return f;
}

}  // namespace net

struct ServerOptions {
    std::uint16_t udp_port = kDefaultUdpPort;
    std::uint16_t ws_port = kDefaultWsPort;
    std::uint16_t http_port = kDefaultHttpPort;
    bool serve_http = true;
    std::filesystem::path static_dir = "web";
    std::chrono::microseconds tick_period{10000};
    int remote_state_divisor = 3;  // remote clients get every n-th state message
    LiveSessionOptions session;
};

/// Runs one live session. Construction binds every port, so a port conflict
/// surfaces before run() is called.
class Server {
public:
    explicit Server(ServerOptions opt)
        : opt_(std::move(opt)),
          session_(opt_.session),
          udp_(net::bind_socket(SOCK_DGRAM, opt_.udp_port, "udp")),
          ws_listen_(net::bind_socket(SOCK_STREAM, opt_.ws_port, "websocket")) {
        udp_port_ = net::bound_port(udp_.get());
        ws_port_ = net::bound_port(ws_listen_.get());
        if (opt_.serve_http) {
            http_ = std::make_unique<httplib::Server>();
            if (std::filesystem::is_directory(opt_.static_dir)) {
                http_->set_mount_point("/", opt_.static_dir.string());
            } else {
                spdlog::warn("static directory {} not found; http serves nothing", opt_.static_dir.string());
            }
            if (opt_.http_port == 0) {
                const int p = http_->bind_to_any_port("0.0.0.0");
                if (p < 0) throw Error(ErrorKind::io, "cannot bind http port");
                http_port_ = static_cast<std::uint16_t>(p);
            } else {
                if (!http_->bind_to_port("0.0.0.0", opt_.http_port)) {
                    throw Error(ErrorKind::io, "http port " + std::to_string(opt_.http_port) + " is already in use");
                }
                http_port_ = opt_.http_port;
            }
        }
    }

    ~Server() {
        stop();
        join();
    }

    std::uint16_t udp_port() const { return udp_port_; }
    std::uint16_t ws_port() const { return ws_port_; }
    std::uint16_t http_port() const { return http_port_; }

    /// Serves until stop(). The reader thread feeds the queue; this thread
    /// owns the session and steps it once per tick period.
    void run() {
        if (http_) http_thread_ = std::thread([this] { http_->listen_after_bind(); });
        reader_thread_ = std::thread([this] { reader_loop(); });
        spdlog::info("serving: udp {} websocket {} http {}", udp_port_, ws_port_, http_port_);
        auto next = std::chrono::steady_clock::now();
        while (!stopping_) {
            next += opt_.tick_period;
            std::this_thread::sleep_until(next);
            for (Inbound& in : drain()) deliver(session_.handle(in.bytes, in.from));
            deliver(session_.tick());
            ++ticks_;
        }
        deliver(session_.shutdown());
        join();
    }

    void stop() {
        stopping_ = true;
        if (http_) http_->stop();
    }

    /// Session results; only safe to read after run() returned.
    const LiveSession& session() const { return session_; }

private:
    struct Inbound {
        std::string from;
        std::string bytes;
    };

    struct Client {
        bool websocket = false;
        bool loopback = false;
        sockaddr_in addr{};      // datagram peer
        int fd = -1;             // websocket connection
    };

    struct WsConn {
        net::Fd fd;
        sockaddr_in addr{};
        bool upgraded = false;
        std::string buf;
        std::string message;     // fragments of a message in progress
    };

    void join() {
        if (reader_thread_.joinable()) reader_thread_.join();
        if (http_thread_.joinable()) http_thread_.join();
    }

    std::vector<Inbound> drain() {
        std::lock_guard lock(queue_mutex_);
        std::vector<Inbound> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
        queue_.clear();
        return out;
    }

    void push(std::string from, std::string bytes) {
        std::lock_guard lock(queue_mutex_);
        queue_.push_back({std::move(from), std::move(bytes)});
    }

    void deliver(const std::vector<Outgoing>& out) {
        std::lock_guard lock(clients_mutex_);
        for (const auto& o : out) {
            if (!o.to.empty()) {
                auto it = clients_.find(o.to);
                if (it != clients_.end()) send_to(it->second, o.bytes);
                continue;
            }
            for (const auto& [key, c] : clients_) {
                if (o.state && !c.loopback && opt_.remote_state_divisor > 1 &&
                    ticks_ % static_cast<std::uint64_t>(opt_.remote_state_divisor) != 0) {
                    continue;
                }
                send_to(c, o.bytes);
            }
        }
    }

    void send_to(const Client& c, const std::string& bytes) {
        if (c.websocket) {
            const std::string frame = net::ws_frame(net::WsOpcode::text, bytes);
            ::send(c.fd, frame.data(), frame.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
        } else {
            ::sendto(udp_.get(), bytes.data(), bytes.size(), MSG_DONTWAIT, reinterpret_cast<const sockaddr*>(&c.addr),
                     sizeof(c.addr));
        }
    }

    void reader_loop() {
        std::map<int, WsConn> conns;
        std::vector<char> buf(65536);
        while (!stopping_) {
            std::vector<pollfd> fds{{udp_.get(), POLLIN, 0}, {ws_listen_.get(), POLLIN, 0}};
            for (const auto& [fd, c] : conns) fds.push_back({fd, POLLIN, 0});
            if (::poll(fds.data(), fds.size(), 20) <= 0) continue;

            if (fds[0].revents & POLLIN) read_datagrams(buf);
            if (fds[1].revents & POLLIN) accept_connections(conns);
            for (std::size_t i = 2; i < fds.size(); ++i) {
                if (!fds[i].revents) continue;
                auto it = conns.find(fds[i].fd);
                if (it == conns.end()) continue;
                if (!read_connection(it->second, buf)) {
                    drop(it->first);
                    conns.erase(it);
                }
            }
        }
        for (const auto& [fd, c] : conns) drop(fd);
    }

    void read_datagrams(std::vector<char>& buf) {
        for (;;) {
            sockaddr_in from{};
            socklen_t len = sizeof(from);
            const ssize_t n = ::recvfrom(udp_.get(), buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
            if (n < 0) return;
            const std::string key = "udp:" + net::endpoint_string(from);
            {
                std::lock_guard lock(clients_mutex_);
                if (!clients_.count(key)) spdlog::info("datagram client {}", key);
                clients_[key] = Client{false, net::is_loopback(from), from, -1};
            }
            push(key, std::string(buf.data(), static_cast<std::size_t>(n)));
        }
    }

    void accept_connections(std::map<int, WsConn>& conns) {
        for (;;) {
            sockaddr_in from{};
            socklen_t len = sizeof(from);
            const int fd = ::accept(ws_listen_.get(), reinterpret_cast<sockaddr*>(&from), &len);
            if (fd < 0) return;
            net::set_nonblocking(fd);
            const int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            conns.emplace(fd, WsConn{net::Fd(fd), from, false, {}, {}});
        }
    }

    static std::string ws_key(int fd) { return "ws:" + std::to_string(fd); }

    void drop(int fd) {
        std::lock_guard lock(clients_mutex_);
        if (clients_.erase(ws_key(fd))) spdlog::info("websocket client {} closed", ws_key(fd));
    }

    // Returns false when the connection should be closed.
    bool read_connection(WsConn& c, std::vector<char>& buf) {
        const ssize_t n = ::recv(c.fd.get(), buf.data(), buf.size(), 0);
        if (n == 0) return false;
        if (n < 0) return errno == EAGAIN || errno == EWOULDBLOCK;
        c.buf.append(buf.data(), static_cast<std::size_t>(n));
        if (!c.upgraded) {
            const auto end = c.buf.find("\r\n\r\n");
            if (end == std::string::npos) return c.buf.size() < 8192;
            const std::string request = c.buf.substr(0, end + 4);
            c.buf.erase(0, end + 4);
            const auto key = net::http_header(request, "Sec-WebSocket-Key");
            if (!key) {
                const std::string resp = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
                ::send(c.fd.get(), resp.data(), resp.size(), MSG_NOSIGNAL);
                return false;
            }
            const std::string resp = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                                     "Sec-WebSocket-Accept: " + net::websocket_accept(*key) + "\r\n\r\n";
            ::send(c.fd.get(), resp.data(), resp.size(), MSG_NOSIGNAL);
            c.upgraded = true;
            std::lock_guard lock(clients_mutex_);
            clients_[ws_key(c.fd.get())] = Client{true, net::is_loopback(c.addr), c.addr, c.fd.get()};
            spdlog::info("websocket client {} from {}", ws_key(c.fd.get()), net::endpoint_string(c.addr));
        }
        try {
            while (auto f = net::ws_parse(c.buf)) {
                switch (f->op) {
                    case net::WsOpcode::text:
                    case net::WsOpcode::binary:
                    case net::WsOpcode::continuation:
                        c.message += f->payload;
                        if (c.message.size() > net::kMaxFramePayload) return false;
                        if (f->fin) {
                            push(ws_key(c.fd.get()), std::move(c.message));
                            c.message.clear();
                        }
                        break;
                    case net::WsOpcode::ping: {
                        const std::string pong = net::ws_frame(net::WsOpcode::pong, f->payload);
                        ::send(c.fd.get(), pong.data(), pong.size(), MSG_NOSIGNAL);
                        break;
                    }
                    case net::WsOpcode::pong: break;
                    case net::WsOpcode::close: {
                        const std::string bye = net::ws_frame(net::WsOpcode::close, f->payload.substr(0, 2));
                        ::send(c.fd.get(), bye.data(), bye.size(), MSG_NOSIGNAL);
                        return false;
                    }
                    default: return false;
                }
            }
        } catch (const Error& e) {
            spdlog::warn("websocket client {}: {}", ws_key(c.fd.get()), e.what());
            return false;
        }
        return true;
    }

    ServerOptions opt_;
    LiveSession session_;
    net::Fd udp_;
    net::Fd ws_listen_;
    std::unique_ptr<httplib::Server> http_;
    std::uint16_t udp_port_ = 0;
    std::uint16_t ws_port_ = 0;
    std::uint16_t http_port_ = 0;
    std::atomic<bool> stopping_{false};
    std::uint64_t ticks_ = 0;
    std::thread reader_thread_;
    std::thread http_thread_;
    std::mutex queue_mutex_;
    std::deque<Inbound> queue_;
    std::mutex clients_mutex_;
    std::map<std::string, Client> clients_;
};

}  // namespace vrfb
