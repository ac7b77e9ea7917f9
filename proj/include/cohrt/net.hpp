#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "cohrt/agent.hpp"
#include "cohrt/coordination.hpp"

namespace cohrt::net {

inline constexpr std::uint16_t k_default_tcp_port = 7450;
inline constexpr std::uint16_t k_default_ws_port = 7451;
inline constexpr const char* k_ws_path = "/ws";

struct listen_options {
    std::string address = "0.0.0.0";
    /// 0 picks an ephemeral port; see bound ports after start().
    std::uint16_t tcp_port = k_default_tcp_port;
    std::uint16_t ws_port = k_default_ws_port;
    time_ms tick_ms = 250;
    /// Connections that buffer more than this without a newline are dropped.
    std::size_t max_frame_bytes = 1 << 20;
};

/// Line-framed TCP and WebSocket (`/ws`) front ends for one coordinator. Runs
/// its own I/O threads; every frame goes straight into the coordinator.
class session_server {
public:
    session_server(server::coordinator& coord, listen_options options, unsigned threads = 2);
    ~session_server();

    session_server(const session_server&) = delete;
    session_server& operator=(const session_server&) = delete;

    void start();
    void stop();
    std::uint16_t tcp_port() const;
    std::uint16_t ws_port() const;

private:
    struct impl;
    std::unique_ptr<impl> impl_;
};

/// Hosts one protocol agent over a TCP connection, single-threaded.
class tcp_agent_host final : public agents::agent_host {
public:
    tcp_agent_host(agents::protocol_agent& agent, std::string host, std::uint16_t port);
    ~tcp_agent_host() override;

    /// Connects, sends Hello and runs until SessionEnd or disconnect. Throws on
    /// connection failure.
    void run();
    void stop();

    time_ms now_ms() const override;
    void send(protocol::payload body) override;
    void schedule(time_ms delay, std::function<void()> fn) override;

private:
    struct impl;
    std::unique_ptr<impl> impl_;
};

} // namespace cohrt::net
