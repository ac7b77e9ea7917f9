#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cohrt/config.hpp"
#include "cohrt/events.hpp"
#include "cohrt/result.hpp"
#include "cohrt/types.hpp"
#include "cohrt/world_model.hpp"

namespace cohrt::protocol {

inline constexpr int k_version = 1;

enum class message_kind : std::uint8_t {
    hello,
    config_push,
    start_task,
    allocation_request,
    allocation_response,
    release_block,
    puzzle_move,
    state_update,
    detection_frame,
    action_start,
    action_end,
    session_end,
    error,
    heartbeat,
    agent_status,
};

std::string_view to_string(message_kind k);
std::optional<message_kind> message_kind_from_string(std::string_view s);

namespace msg {

struct hello {
    int version = k_version;
    /// "human", "robot", "perception" or "observer".
    std::string role;
    participant_id pid;
    bool operator==(const hello&) const = default;
};
struct config_push {
    task_config config;
    agent_id you;
    bool operator==(const config_push&) const = default;
};
struct start_task {
    participant_id pid;
    bool operator==(const start_task&) const = default;
};
struct allocation_request {
    block_id block;
    bool operator==(const allocation_request&) const = default;
};
struct allocation_response {
    block_id block;
    bool granted = false;
    std::optional<deny_reason> reason;
    std::uint64_t receipt_order = 0;
    bool operator==(const allocation_response&) const = default;
};
struct release_block {
    block_id block;
    bool operator==(const release_block&) const = default;
};
struct puzzle_move {
    puzzle_source source;
    std::size_t to_slot = 0;
    bool operator==(const puzzle_move&) const = default;
};
struct state_update {
    world_snapshot state;
    bool operator==(const state_update&) const = default;
};
struct detection {
    int tag_id = 0;
    vec3 position;
    std::string station_id;
    bool operator==(const detection&) const = default;
};
struct detection_frame {
    std::vector<detection> detections;
    bool operator==(const detection_frame&) const = default;
};
struct action_start {
    std::string action;
    std::optional<block_id> block;
    bool operator==(const action_start&) const = default;
};
struct action_end {
    std::string action;
    std::optional<block_id> block;
    bool ok = true;
    bool operator==(const action_end&) const = default;
};
struct session_end {
    std::string status;
    bool done = false;
    bool operator==(const session_end&) const = default;
};
struct error {
    std::string code;
    std::string message;
    bool operator==(const error&) const = default;
};
struct heartbeat {
    bool operator==(const heartbeat&) const = default;
};
struct agent_status {
    std::string status;
    std::string reason;
    std::map<participant_id, int> contributed;
    bool operator==(const agent_status&) const = default;
};

} // namespace msg

using payload = std::variant<msg::hello,
                             msg::config_push,
                             msg::start_task,
                             msg::allocation_request,
                             msg::allocation_response,
                             msg::release_block,
                             msg::puzzle_move,
                             msg::state_update,
                             msg::detection_frame,
                             msg::action_start,
                             msg::action_end,
                             msg::session_end,
                             msg::error,
                             msg::heartbeat,
                             msg::agent_status>;

struct message {
    message_kind kind = message_kind::heartbeat;
    std::uint64_t seq = 0;
    time_ms ts = 0;
    payload body = msg::heartbeat{};

    bool operator==(const message&) const = default;
};

/// Builds a message whose kind matches the payload alternative.
template <typename P>
message make_message(P body, std::uint64_t seq = 0, time_ms ts = 0) {
    payload p = std::move(body);
    return message{static_cast<message_kind>(p.index()), seq, ts, std::move(p)};
}

class schema_violation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class decode_failure : std::uint8_t {
    truncated,
    malformed,
    unknown_kind,
    bad_field,
    trailing_data,
};

std::string_view to_string(decode_failure f);

struct decode_error {
    decode_failure failure = decode_failure::malformed;
    std::string detail;
};

using decode_result = result<message, decode_error>;

/// One newline-terminated frame; fields ordered kind, seq, ts, payload.
/// Throws schema_violation if the payload alternative disagrees with the kind.
std::string encode_message(const message& m);

/// Accepts arbitrary bytes; a single trailing newline is optional.
decode_result decode_message(std::string_view bytes);

/// Splits a byte stream into frames; a trailing partial line is kept for the next feed.
class frame_splitter {
public:
    void feed(std::string_view bytes);
    std::optional<std::string> next_frame();
    std::size_t buffered() const { return buffer_.size(); }

private:
    std::string buffer_;
    std::size_t scan_from_ = 0;
};

/// Decodes every complete frame of a concatenated stream, in order.
std::vector<decode_result> decode_stream(std::string_view bytes);

// Session log files reuse the frame grammar with event kinds; seq is the log index.
std::string encode_event(const session_event& e, std::uint64_t seq);
result<session_event, decode_error> decode_event(std::string_view line);
std::string encode_log(const session_log& log);
result<session_log, decode_error> decode_log(std::string_view text);
session_log read_log_file(const std::string& path);
void write_log_file(const std::string& path, const session_log& log);

json payload_to_json(const payload& p);

} // namespace cohrt::protocol
