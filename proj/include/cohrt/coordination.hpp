#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cohrt/config.hpp"
#include "cohrt/events.hpp"
#include "cohrt/perception.hpp"
#include "cohrt/protocol.hpp"
#include "cohrt/world_model.hpp"

namespace cohrt::server {

class session_clock {
public:
    virtual ~session_clock() = default;
    virtual time_ms now_ms() const = 0;
};

/// Wall-clock milliseconds since construction.
class steady_session_clock final : public session_clock {
public:
    steady_session_clock() : epoch_(std::chrono::steady_clock::now()) {}
    time_ms now_ms() const override {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - epoch_).count();
    }

private:
    std::chrono::steady_clock::time_point epoch_;
};

/// Externally driven clock for tests and the simulator.
class manual_clock final : public session_clock {
public:
    time_ms now_ms() const override { return now_; }
    void set(time_ms t) { now_ = t; }
    void advance(time_ms dt) { now_ += dt; }

private:
    time_ms now_ = 0;
};

struct allocation_outcome {
    world_state state;
    protocol::msg::allocation_response response;
    session_event event;
};

/// Single-request arbitration: grant iff the block is Unstacked, topmost in its
/// pile, accessible to the requester and its stack owner is Stacking.
allocation_outcome handle_allocation(const world_state& state,
                                     const agent_id& requester,
                                     const block_id& block,
                                     std::uint64_t receipt_order,
                                     time_ms now);

/// Explicit release by the holder. NotHolder leaves the state untouched.
transition_result handle_release(const world_state& state, const agent_id& agent, const block_id& block, time_ms now);

using connection_id = std::uint64_t;

/// Transport hooks for one connection. `send` returns false when delivery failed.
struct client_sink {
    std::function<bool(const std::string& frame)> send;
    std::function<void()> close;
};

struct server_options {
    bool abort_on_client_loss = false;
};

enum class session_status : std::uint8_t { running, success, aborted, perception_stall, config_invalid };

std::string_view to_string(session_status s);

/// The session authority. Every mutation of WorldState and the log passes
/// through one mutex, so concurrent transports observe a total order.
class coordinator {
public:
    coordinator(task_config config, const session_clock& clock, server_options options = {});

    coordinator(const coordinator&) = delete;
    coordinator& operator=(const coordinator&) = delete;

    connection_id connect(client_sink sink);
    void receive(connection_id conn, std::string_view frame);
    void receive(connection_id conn, const protocol::message& m);
    void disconnect(connection_id conn);

    /// Releases timed-out claims and runs the perception watchdog.
    void tick();

    /// Arbitration entry used by the transports and the stress harness.
    protocol::msg::allocation_response request_allocation(const agent_id& requester, const block_id& block);

    /// Ends the session early (e.g. harness timeout). No-op once finished.
    void abort(const std::string& status);

    world_state state() const;
    session_log log() const;
    bool finished() const;
    session_status status() const;
    std::size_t delivery_failures() const;
    std::vector<std::string> diagnostics() const;
    std::size_t connected_clients() const;

private:
    struct connection {
        client_sink sink;
        std::optional<agent_id> identity;
        std::string role;
        std::uint64_t out_seq = 0;
        std::uint64_t last_in_seq = 0;
    };

    void dispatch(connection_id id, connection& c, const protocol::message& m);
    void on_hello(connection_id id, connection& c, const protocol::msg::hello& h);
    void on_detection(const protocol::msg::detection_frame& frame);
    protocol::msg::allocation_response allocate_locked(const agent_id& requester, const block_id& block);

    bool commit(session_event e);
    void record(session_event e);
    void send(connection& c, protocol::payload body);
    void reply_error(connection& c, std::string code, std::string message);
    void broadcast_state();
    void finish(session_status status, const std::string& detail);
    void after_change();

    mutable std::mutex mu_;
    const session_clock& clock_;
    server_options options_;
    world_state state_;
    session_log log_;
    perception::state_observer observer_;
    std::map<connection_id, connection> connections_;
    connection_id next_conn_ = 1;
    std::uint64_t receipt_counter_ = 0;
    std::optional<time_ms> watchdog_since_;
    session_status status_ = session_status::running;
    std::size_t delivery_failures_ = 0;
    std::vector<std::string> diagnostics_;
    bool dirty_ = false;
};

} // namespace cohrt::server
