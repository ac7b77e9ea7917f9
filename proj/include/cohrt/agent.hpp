#pragma once

#include <functional>

#include "cohrt/protocol.hpp"

namespace cohrt::agents {

/// What a protocol client may do: read time, send, and set timers. Hosted either
/// by the simulator's scheduler or by a live socket connection.
class agent_host {
public:
    virtual ~agent_host() = default;
    virtual time_ms now_ms() const = 0;
    /// Seq and ts are assigned by the host.
    virtual void send(protocol::payload body) = 0;
    virtual void schedule(time_ms delay, std::function<void()> fn) = 0;
};

class protocol_agent {
public:
    virtual ~protocol_agent() = default;

    void attach(agent_host& host) { host_ = &host; }
    virtual protocol::msg::hello hello() const = 0;
    /// Called once the connection is up, after Hello has been sent.
    virtual void on_connected() {}
    virtual void on_message(const protocol::message& m) = 0;
    virtual void on_disconnected() {}

protected:
    agent_host& host() const { return *host_; }
    bool attached() const { return host_ != nullptr; }

private:
    agent_host* host_ = nullptr;
};

} // namespace cohrt::agents
