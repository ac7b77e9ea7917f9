#include "cohrt/protocol.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <utility>

namespace cohrt::protocol {
namespace {

constexpr std::array<std::pair<message_kind, std::string_view>, 15> k_kinds{{
    {message_kind::hello, "Hello"},
    {message_kind::config_push, "ConfigPush"},
    {message_kind::start_task, "StartTask"},
    {message_kind::allocation_request, "AllocationRequest"},
    {message_kind::allocation_response, "AllocationResponse"},
    {message_kind::release_block, "ReleaseBlock"},
    {message_kind::puzzle_move, "PuzzleMove"},
    {message_kind::state_update, "StateUpdate"},
    {message_kind::detection_frame, "DetectionFrame"},
    {message_kind::action_start, "ActionStart"},
    {message_kind::action_end, "ActionEnd"},
    {message_kind::session_end, "SessionEnd"},
    {message_kind::error, "Error"},
    {message_kind::heartbeat, "Heartbeat"},
    {message_kind::agent_status, "AgentStatus"},
}};

/// Thrown while reading a payload; becomes decode_failure::bad_field.
struct field_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const json& field(const json& j, const char* key) {
    if (!j.is_object()) throw field_error("expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw field_error(std::string("missing field '") + key + "'");
    return *it;
}

std::string get_str(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_string()) throw field_error(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

std::uint64_t get_u64(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_number_unsigned()) throw field_error(std::string("field '") + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
}

std::int64_t get_i64(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_number_integer()) throw field_error(std::string("field '") + key + "' must be an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
        throw field_error(std::string("field '") + key + "' out of range");
    }
    return v.get<std::int64_t>();
}

int get_int(const json& j, const char* key) {
    auto v = get_i64(j, key);
    if (v < INT32_MIN || v > INT32_MAX) throw field_error(std::string("field '") + key + "' out of range");
    return static_cast<int>(v);
}

bool get_bool(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (!v.is_boolean()) throw field_error(std::string("field '") + key + "' must be a boolean");
    return v.get<bool>();
}

double get_double(const json& j) {
    if (!j.is_number()) throw field_error("expected a number");
    return j.get<double>();
}

std::optional<std::string> get_opt_str(const json& j, const char* key) {
    const auto& v = field(j, key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_string()) throw field_error(std::string("field '") + key + "' must be a string or null");
    return v.get<std::string>();
}

json opt_str(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

agent_id get_agent(const json& j, const char* key) {
    auto a = agent_id::parse(get_str(j, key));
    if (!a) throw field_error(std::string("field '") + key + "' is not an agent id");
    return *a;
}

json source_to_json(const puzzle_source& s) {
    return json{{"area", s.from_tray ? "tray" : "grid"}, {"index", s.index}};
}

puzzle_source source_from_json(const json& j) {
    auto area = get_str(j, "area");
    if (area != "tray" && area != "grid") throw field_error("puzzle source area must be tray or grid");
    return puzzle_source{area == "tray", get_u64(j, "index")};
}

json contributed_to_json(const std::map<participant_id, int>& m) {
    json out = json::object();
    for (const auto& [pid, n] : m) out[pid] = n;
    return out;
}

std::map<participant_id, int> contributed_from_json(const json& j) {
    if (!j.is_object()) throw field_error("contributed must be an object");
    std::map<participant_id, int> out;
    for (const auto& [pid, n] : j.items()) {
        if (!n.is_number_integer()) throw field_error("contributed counts must be integers");
        out[pid] = n.get<int>();
    }
    return out;
}

task_config config_field(const json& j) {
    try {
        return config_from_json(field(j, "config"));
    } catch (const config_error& e) {
        throw field_error(e.what());
    }
}

// ---- message payloads ----

json to_payload_json(const msg::hello& p) { return json{{"version", p.version}, {"role", p.role}, {"pid", p.pid}}; }
json to_payload_json(const msg::config_push& p) { return json{{"config", to_json(p.config)}, {"you", p.you.str()}}; }
json to_payload_json(const msg::start_task& p) { return json{{"pid", p.pid}}; }
json to_payload_json(const msg::allocation_request& p) { return json{{"block", p.block}}; }
json to_payload_json(const msg::allocation_response& p) {
    return json{{"block", p.block},
                {"granted", p.granted},
                {"reason", p.reason ? json(std::string(to_string(*p.reason))) : json(nullptr)},
                {"receipt_order", p.receipt_order}};
}
json to_payload_json(const msg::release_block& p) { return json{{"block", p.block}}; }
json to_payload_json(const msg::puzzle_move& p) {
    return json{{"source", source_to_json(p.source)}, {"to_slot", p.to_slot}};
}
json to_payload_json(const msg::state_update& p) { return json{{"state", to_json(p.state)}}; }
json to_payload_json(const msg::detection_frame& p) {
    json dets = json::array();
    for (const auto& d : p.detections) {
        dets.push_back(json{{"tag_id", d.tag_id}, {"position", to_json(d.position)}, {"station_id", d.station_id}});
    }
    return json{{"detections", std::move(dets)}};
}
json to_payload_json(const msg::action_start& p) { return json{{"action", p.action}, {"block", opt_str(p.block)}}; }
json to_payload_json(const msg::action_end& p) {
    return json{{"action", p.action}, {"block", opt_str(p.block)}, {"ok", p.ok}};
}
json to_payload_json(const msg::session_end& p) { return json{{"status", p.status}, {"done", p.done}}; }
json to_payload_json(const msg::error& p) { return json{{"code", p.code}, {"message", p.message}}; }
json to_payload_json(const msg::heartbeat&) { return json::object(); }
json to_payload_json(const msg::agent_status& p) {
    return json{{"status", p.status}, {"reason", p.reason}, {"contributed", contributed_to_json(p.contributed)}};
}

payload payload_from_json(message_kind kind, const json& j) {
    if (!j.is_object()) throw field_error("payload must be an object");
    switch (kind) {
    case message_kind::hello:
        return msg::hello{get_int(j, "version"), get_str(j, "role"), get_str(j, "pid")};
    case message_kind::config_push:
        return msg::config_push{config_field(j), get_agent(j, "you")};
    case message_kind::start_task:
        return msg::start_task{get_str(j, "pid")};
    case message_kind::allocation_request:
        return msg::allocation_request{get_str(j, "block")};
    case message_kind::allocation_response: {
        msg::allocation_response r;
        r.block = get_str(j, "block");
        r.granted = get_bool(j, "granted");
        if (auto reason = get_opt_str(j, "reason")) {
            auto parsed = deny_reason_from_string(*reason);
            if (!parsed) throw field_error("unknown deny reason '" + *reason + "'");
            r.reason = parsed;
        }
        if (r.granted == r.reason.has_value()) throw field_error("granted responses carry no reason, denials need one");
        r.receipt_order = get_u64(j, "receipt_order");
        return r;
    }
    case message_kind::release_block:
        return msg::release_block{get_str(j, "block")};
    case message_kind::puzzle_move:
        return msg::puzzle_move{source_from_json(field(j, "source")), get_u64(j, "to_slot")};
    case message_kind::state_update:
        try {
            return msg::state_update{snapshot_from_json(field(j, "state"))};
        } catch (const field_error&) {
            throw;
        } catch (const std::exception& e) {
            throw field_error(std::string("state: ") + e.what());
        }
    case message_kind::detection_frame: {
        msg::detection_frame f;
        const auto& dets = field(j, "detections");
        if (!dets.is_array()) throw field_error("detections must be an array");
        for (const auto& d : dets) {
            const auto& pos = field(d, "position");
            if (!pos.is_array() || pos.size() != 3) throw field_error("position must have three coordinates");
            f.detections.push_back(msg::detection{get_int(d, "tag_id"),
                                                  vec3{get_double(pos[0]), get_double(pos[1]), get_double(pos[2])},
                                                  get_str(d, "station_id")});
        }
        return f;
    }
    case message_kind::action_start:
        return msg::action_start{get_str(j, "action"), get_opt_str(j, "block")};
    case message_kind::action_end:
        return msg::action_end{get_str(j, "action"), get_opt_str(j, "block"), get_bool(j, "ok")};
    case message_kind::session_end:
        return msg::session_end{get_str(j, "status"), get_bool(j, "done")};
    case message_kind::error:
        return msg::error{get_str(j, "code"), get_str(j, "message")};
    case message_kind::heartbeat:
        return msg::heartbeat{};
    case message_kind::agent_status:
        return msg::agent_status{get_str(j, "status"), get_str(j, "reason"),
                                 contributed_from_json(field(j, "contributed"))};
    }
    throw field_error("unhandled kind");
}

// ---- event payloads ----

json event_payload_json(const session_event& e) {
    json j{{"agent", e.agent.str()}};
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ev::session_start>) {
                j["config"] = to_json(p.config);
            } else if constexpr (std::is_same_v<T, ev::start_task>) {
                j["pid"] = p.pid;
            } else if constexpr (std::is_same_v<T, ev::allocate>) {
                j["block"] = p.block;
                j["receipt_order"] = p.receipt_order;
            } else if constexpr (std::is_same_v<T, ev::allocation_denied>) {
                j["block"] = p.block;
                j["receipt_order"] = p.receipt_order;
                j["reason"] = std::string(to_string(p.reason));
            } else if constexpr (std::is_same_v<T, ev::release>) {
                j["block"] = p.block;
                j["reason"] = std::string(to_string(p.reason));
            } else if constexpr (std::is_same_v<T, ev::stack_placed>) {
                j["block"] = p.block;
                j["stack"] = p.stack;
            } else if constexpr (std::is_same_v<T, ev::mismatch>) {
                j["block"] = p.block;
                j["stack"] = p.stack;
                j["slot"] = p.slot;
                j["detail"] = p.detail;
            } else if constexpr (std::is_same_v<T, ev::puzzle_move>) {
                j["pid"] = p.pid;
                j["source"] = source_to_json(p.source);
                j["to_slot"] = p.to_slot;
            } else if constexpr (std::is_same_v<T, ev::action_start>) {
                j["action"] = p.action;
                j["block"] = opt_str(p.block);
            } else if constexpr (std::is_same_v<T, ev::action_end>) {
                j["action"] = p.action;
                j["block"] = opt_str(p.block);
                j["ok"] = p.ok;
            } else if constexpr (std::is_same_v<T, ev::client_joined>) {
                j["role"] = p.role;
            } else if constexpr (std::is_same_v<T, ev::client_lost>) {
            } else if constexpr (std::is_same_v<T, ev::agent_status>) {
                j["status"] = p.status;
                j["reason"] = p.reason;
                j["contributed"] = contributed_to_json(p.contributed);
            } else if constexpr (std::is_same_v<T, ev::session_end>) {
                j["status"] = p.status;
                j["done"] = p.done;
            }
        },
        e.payload);
    return j;
}

event_payload event_payload_from_json(event_kind kind, const json& j) {
    auto reason_of = [](const std::string& s) {
        auto r = release_reason_from_string(s);
        if (!r) throw field_error("unknown release reason '" + s + "'");
        return *r;
    };
    switch (kind) {
    case event_kind::session_start:
        return ev::session_start{config_field(j)};
    case event_kind::start_task:
        return ev::start_task{get_str(j, "pid")};
    case event_kind::allocate:
        return ev::allocate{get_str(j, "block"), get_u64(j, "receipt_order")};
    case event_kind::allocation_denied: {
        auto reason = deny_reason_from_string(get_str(j, "reason"));
        if (!reason) throw field_error("unknown deny reason");
        return ev::allocation_denied{get_str(j, "block"), get_u64(j, "receipt_order"), *reason};
    }
    case event_kind::release:
        return ev::release{get_str(j, "block"), reason_of(get_str(j, "reason"))};
    case event_kind::stack_placed:
        return ev::stack_placed{get_str(j, "block"), get_str(j, "stack")};
    case event_kind::mismatch:
        return ev::mismatch{get_str(j, "block"), get_str(j, "stack"), get_u64(j, "slot"), get_str(j, "detail")};
    case event_kind::puzzle_move:
        return ev::puzzle_move{get_str(j, "pid"), source_from_json(field(j, "source")), get_u64(j, "to_slot")};
    case event_kind::action_start:
        return ev::action_start{get_str(j, "action"), get_opt_str(j, "block")};
    case event_kind::action_end:
        return ev::action_end{get_str(j, "action"), get_opt_str(j, "block"), get_bool(j, "ok")};
    case event_kind::client_joined:
        return ev::client_joined{get_str(j, "role")};
    case event_kind::client_lost:
        return ev::client_lost{};
    case event_kind::agent_status:
        return ev::agent_status{get_str(j, "status"), get_str(j, "reason"),
                                contributed_from_json(field(j, "contributed"))};
    case event_kind::session_end:
        return ev::session_end{get_str(j, "status"), get_bool(j, "done")};
    }
    throw field_error("unhandled event kind");
}

std::string dump_frame(std::string_view kind, std::uint64_t seq, std::int64_t ts, json body) {
    json frame;
    frame["kind"] = kind;
    frame["seq"] = seq;
    frame["ts"] = ts;
    frame["payload"] = std::move(body);
    try {
        return frame.dump() + '\n';
    } catch (const json::type_error& e) {
        throw schema_violation(std::string("payload is not encodable: ") + e.what());
    }
}

struct raw_frame {
    std::string kind;
    std::uint64_t seq = 0;
    std::int64_t ts = 0;
    json body;
};

result<raw_frame, decode_error> parse_frame(std::string_view bytes) {
    if (!bytes.empty() && bytes.back() == '\n') {
        bytes.remove_suffix(1);
    }
    if (bytes.empty()) {
        return decode_error{decode_failure::truncated, "empty input"};
    }
    if (bytes.find('\n') != std::string_view::npos) {
        return decode_error{decode_failure::trailing_data, "more than one line in frame"};
    }
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        if (e.byte >= bytes.size()) {
            return decode_error{decode_failure::truncated, e.what()};
        }
        return decode_error{decode_failure::malformed, e.what()};
    } catch (const json::exception& e) {
        // e.g. out_of_range for numbers beyond double range
        return decode_error{decode_failure::malformed, e.what()};
    }
    if (!j.is_object()) {
        return decode_error{decode_failure::malformed, "frame must be an object"};
    }
    if (j.size() != 4) {
        return decode_error{decode_failure::bad_field, "frame must have exactly kind, seq, ts, payload"};
    }
    try {
        raw_frame f;
        f.kind = get_str(j, "kind");
        f.seq = get_u64(j, "seq");
        f.ts = get_i64(j, "ts");
        f.body = field(j, "payload");
        return f;
    } catch (const field_error& e) {
        return decode_error{decode_failure::bad_field, e.what()};
    }
}

} // namespace

std::string_view to_string(message_kind k) {
    for (const auto& [kind, name] : k_kinds) {
        if (kind == k) return name;
    }
    return "unknown";
}

std::optional<message_kind> message_kind_from_string(std::string_view s) {
    for (const auto& [kind, name] : k_kinds) {
        if (name == s) return kind;
    }
    return std::nullopt;
}

std::string_view to_string(decode_failure f) {
    switch (f) {
    case decode_failure::truncated:
        return "Truncated";
    case decode_failure::malformed:
        return "Malformed";
    case decode_failure::unknown_kind:
        return "UnknownKind";
    case decode_failure::bad_field:
        return "BadField";
    case decode_failure::trailing_data:
        return "TrailingData";
    }
    return "Unknown";
}

json payload_to_json(const payload& p) {
    return std::visit([](const auto& body) { return to_payload_json(body); }, p);
}

std::string encode_message(const message& m) {
    if (static_cast<std::size_t>(m.kind) != m.body.index()) {
        throw schema_violation(std::string("payload does not match kind ") + std::string(to_string(m.kind)));
    }
    return dump_frame(to_string(m.kind), m.seq, m.ts, payload_to_json(m.body));
}

decode_result decode_message(std::string_view bytes) {
    auto raw = parse_frame(bytes);
    if (!raw) {
        return raw.error();
    }
    auto kind = message_kind_from_string(raw->kind);
    if (!kind) {
        return decode_error{decode_failure::unknown_kind, raw->kind};
    }
    try {
        return message{*kind, raw->seq, raw->ts, payload_from_json(*kind, raw->body)};
    } catch (const field_error& e) {
        return decode_error{decode_failure::bad_field, e.what()};
    } catch (const json::exception& e) {
        return decode_error{decode_failure::bad_field, e.what()};
    }
}

void frame_splitter::feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<std::string> frame_splitter::next_frame() {
    auto nl = buffer_.find('\n', scan_from_);
    if (nl == std::string::npos) {
        scan_from_ = buffer_.size();
        return std::nullopt;
    }
    std::string frame = buffer_.substr(0, nl + 1);
    buffer_.erase(0, nl + 1);
    scan_from_ = 0;
    return frame;
}

std::vector<decode_result> decode_stream(std::string_view bytes) {
    frame_splitter splitter;
    splitter.feed(bytes);
    std::vector<decode_result> out;
    while (auto frame = splitter.next_frame()) {
        out.push_back(decode_message(*frame));
    }
    if (splitter.buffered() > 0) {
        out.push_back(decode_error{decode_failure::truncated, "stream ends mid-frame"});
    }
    return out;
}

std::string encode_event(const session_event& e, std::uint64_t seq) {
    return dump_frame(to_string(e.kind()), seq, e.ts, event_payload_json(e));
}

result<session_event, decode_error> decode_event(std::string_view line) {
    auto raw = parse_frame(line);
    if (!raw) {
        return raw.error();
    }
    auto kind = event_kind_from_string(raw->kind);
    if (!kind) {
        return decode_error{decode_failure::unknown_kind, raw->kind};
    }
    try {
        session_event e;
        e.ts = raw->ts;
        e.agent = get_agent(raw->body, "agent");
        e.payload = event_payload_from_json(*kind, raw->body);
        return e;
    } catch (const field_error& ex) {
        return decode_error{decode_failure::bad_field, ex.what()};
    } catch (const json::exception& ex) {
        return decode_error{decode_failure::bad_field, ex.what()};
    }
}

std::string encode_log(const session_log& log) {
    std::string out;
    for (std::size_t i = 0; i < log.size(); ++i) {
        out += encode_event(log[i], i);
    }
    return out;
}

result<session_log, decode_error> decode_log(std::string_view text) {
    session_log log;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.empty()) continue;
        auto e = decode_event(line);
        if (!e) {
            auto err = e.error();
            err.detail = "line " + std::to_string(line_no) + ": " + err.detail;
            return err;
        }
        log.push_back(std::move(e).value());
    }
    return log;
}

session_log read_log_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open log file " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    auto log = decode_log(ss.str());
    if (!log) {
        throw std::runtime_error("malformed log " + path + ": " + std::string(to_string(log.error().failure)) + " " +
                                 log.error().detail);
    }
    return std::move(log).value();
}

void write_log_file(const std::string& path, const session_log& log) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write log file " + path);
    }
    out << encode_log(log);
}

} // namespace cohrt::protocol
