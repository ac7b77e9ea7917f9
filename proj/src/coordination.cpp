#include "cohrt/coordination.hpp"

#include <utility>

namespace cohrt::server {

namespace msg = protocol::msg;

std::string_view to_string(session_status s) {
    switch (s) {
    case session_status::running:
        return "running";
    case session_status::success:
        return "success";
    case session_status::aborted:
        return "aborted";
    case session_status::perception_stall:
        return "perception_stall";
    case session_status::config_invalid:
        return "config_invalid";
    }
    return "unknown";
}

allocation_outcome handle_allocation(const world_state& state,
                                     const agent_id& requester,
                                     const block_id& block,
                                     std::uint64_t receipt_order,
                                     time_ms now) {
    msg::allocation_response response{block, false, std::nullopt, receipt_order};
    if (auto denied = check_claim(state, requester, block)) {
        response.reason = denied;
        return {state, response, session_event{now, requester, ev::allocation_denied{block, receipt_order, *denied}}};
    }
    session_event grant{now, requester, ev::allocate{block, receipt_order}};
    auto next = apply_transition(state, grant);
    if (!next) {
        // check_claim and apply_transition share one rule set; a split here is a bug.
        throw std::logic_error("grantable claim rejected: " + next.error().detail);
    }
    response.granted = true;
    return {std::move(next).value(), response, std::move(grant)};
}

transition_result handle_release(const world_state& state, const agent_id& agent, const block_id& block, time_ms now) {
    return apply_transition(state, session_event{now, agent, ev::release{block, release_reason::explicit_release}});
}

coordinator::coordinator(task_config config, const session_clock& clock, server_options options)
    : clock_(clock),
      options_(options),
      state_(new_session(config)),
      observer_(config.geometry.history_depth) {
    record(session_event{clock_.now_ms(), agent_id::server(), ev::session_start{state_.config}});
}

connection_id coordinator::connect(client_sink sink) {
    std::lock_guard lock(mu_);
    auto id = next_conn_++;
    connections_.emplace(id, connection{std::move(sink), std::nullopt, {}, 0, 0});
    return id;
}

void coordinator::receive(connection_id conn, std::string_view frame) {
    auto decoded = protocol::decode_message(frame);
    std::lock_guard lock(mu_);
    auto it = connections_.find(conn);
    if (it == connections_.end()) return;
    if (!decoded) {
        reply_error(it->second, std::string(protocol::to_string(decoded.error().failure)), decoded.error().detail);
        return;
    }
    dispatch(conn, it->second, *decoded);
    after_change();
}

void coordinator::receive(connection_id conn, const protocol::message& m) {
    std::lock_guard lock(mu_);
    auto it = connections_.find(conn);
    if (it == connections_.end()) return;
    dispatch(conn, it->second, m);
    after_change();
}

void coordinator::disconnect(connection_id conn) {
    std::lock_guard lock(mu_);
    auto it = connections_.find(conn);
    if (it == connections_.end()) return;
    auto identity = it->second.identity;
    connections_.erase(it);
    if (!identity || status_ != session_status::running) return;
    record(session_event{clock_.now_ms(), *identity, ev::client_lost{}});
    // Claims held by the lost client expire through the work timeout.
    if (options_.abort_on_client_loss && (identity->is_human() || identity->is_robot())) {
        finish(session_status::aborted, "client lost: " + identity->str());
    }
}

void coordinator::tick() {
    std::lock_guard lock(mu_);
    if (status_ != session_status::running) return;
    const auto now = clock_.now_ms();
    std::vector<std::pair<block_id, agent_id>> expired;
    for (const auto& [id, b] : state_.blocks) {
        if (b.state == manipulation_state::working && now - b.working_since >= state_.config.timing.work_timeout_ms) {
            expired.emplace_back(id, b.manipulator);
        }
    }
    for (const auto& [id, holder] : expired) {
        commit(session_event{now, holder, ev::release{id, release_reason::timeout}});
    }
    const auto window = state_.config.timing.perception_watchdog_ms;
    if (window > 0 && watchdog_since_ && now - *watchdog_since_ > window) {
        finish(session_status::perception_stall, "no detection frame for " + std::to_string(now - *watchdog_since_) + " ms");
        return;
    }
    after_change();
}

msg::allocation_response coordinator::request_allocation(const agent_id& requester, const block_id& block) {
    std::lock_guard lock(mu_);
    auto response = allocate_locked(requester, block);
    after_change();
    return response;
}

void coordinator::abort(const std::string& status) {
    std::lock_guard lock(mu_);
    if (status_ == session_status::running) {
        finish(session_status::aborted, status);
    }
}

world_state coordinator::state() const {
    std::lock_guard lock(mu_);
    return state_;
}

session_log coordinator::log() const {
    std::lock_guard lock(mu_);
    return log_;
}

bool coordinator::finished() const {
    std::lock_guard lock(mu_);
    return status_ != session_status::running;
}

session_status coordinator::status() const {
    std::lock_guard lock(mu_);
    return status_;
}

std::size_t coordinator::delivery_failures() const {
    std::lock_guard lock(mu_);
    return delivery_failures_;
}

std::vector<std::string> coordinator::diagnostics() const {
    std::lock_guard lock(mu_);
    return diagnostics_;
}

std::size_t coordinator::connected_clients() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, c] : connections_) {
        if (c.identity) ++n;
    }
    return n;
}

void coordinator::dispatch(connection_id id, connection& c, const protocol::message& m) {
    if (m.seq <= c.last_in_seq) {
        reply_error(c, "SeqViolation", "seq " + std::to_string(m.seq) + " after " + std::to_string(c.last_in_seq));
        return;
    }
    c.last_in_seq = m.seq;

    if (const auto* h = std::get_if<msg::hello>(&m.body)) {
        on_hello(id, c, *h);
        return;
    }
    if (!c.identity) {
        reply_error(c, "HelloRequired", "first message must be Hello");
        return;
    }
    if (std::holds_alternative<msg::heartbeat>(m.body)) {
        return;
    }
    if (status_ != session_status::running) {
        reply_error(c, "SessionOver", std::string(to_string(status_)));
        return;
    }

    const agent_id who = *c.identity;
    const bool actor = who.is_human() || who.is_robot();
    const auto now = clock_.now_ms();

    std::visit(
        [&](const auto& body) {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, msg::start_task>) {
                if (!who.is_human() || body.pid != who.pid) {
                    reply_error(c, "NotPermitted", who.str() + " cannot start " + body.pid);
                } else if (!commit(session_event{now, who, ev::start_task{body.pid}})) {
                    reply_error(c, "WrongPhase", body.pid + " already started");
                }
            } else if constexpr (std::is_same_v<T, msg::allocation_request>) {
                if (!actor) {
                    reply_error(c, "NotPermitted", who.str() + " cannot claim blocks");
                    return;
                }
                auto response = allocate_locked(who, body.block);
                send(c, response);
            } else if constexpr (std::is_same_v<T, msg::release_block>) {
                auto next = handle_release(state_, who, body.block, now);
                if (!next) {
                    reply_error(c, std::string(to_string(next.error().code)), next.error().detail);
                } else {
                    commit(session_event{now, who, ev::release{body.block, release_reason::explicit_release}});
                }
            } else if constexpr (std::is_same_v<T, msg::puzzle_move>) {
                if (!who.is_human()) {
                    reply_error(c, "NotPermitted", who.str() + " has no puzzle");
                    return;
                }
                auto next = move_piece(state_, who.pid, body.source, body.to_slot);
                if (!next) {
                    reply_error(c, std::string(to_string(next.error().code)), next.error().detail);
                } else {
                    commit(session_event{now, who, ev::puzzle_move{who.pid, body.source, body.to_slot}});
                }
            } else if constexpr (std::is_same_v<T, msg::detection_frame>) {
                if (who.kind != agent_kind::perception) {
                    reply_error(c, "NotPermitted", "only perception sources send detection frames");
                    return;
                }
                on_detection(body);
            } else if constexpr (std::is_same_v<T, msg::action_start>) {
                if (actor) record(session_event{now, who, ev::action_start{body.action, body.block}});
            } else if constexpr (std::is_same_v<T, msg::action_end>) {
                if (actor) record(session_event{now, who, ev::action_end{body.action, body.block, body.ok}});
            } else if constexpr (std::is_same_v<T, msg::agent_status>) {
                record(session_event{now, who, ev::agent_status{body.status, body.reason, body.contributed}});
            } else {
                reply_error(c, "Unexpected", std::string(protocol::to_string(m.kind)) + " is server-to-client only");
            }
        },
        m.body);
}

void coordinator::on_hello(connection_id id, connection& c, const msg::hello& h) {
    if (c.identity) {
        reply_error(c, "DuplicateHello", "already identified as " + c.identity->str());
        return;
    }
    if (h.version != protocol::k_version) {
        reply_error(c, "VersionMismatch",
                    "server speaks " + std::to_string(protocol::k_version) + ", got " + std::to_string(h.version));
        if (c.sink.close) c.sink.close();
        return;
    }
    agent_id who;
    if (h.role == "human") {
        if (!state_.config.has_participant(h.pid)) {
            reply_error(c, "UnknownParticipant", h.pid);
            return;
        }
        who = agent_id::human(h.pid);
    } else if (h.role == "robot") {
        who = agent_id::robot();
    } else if (h.role == "perception") {
        who = agent_id::perception();
    } else if (h.role == "observer") {
        who = agent_id::observer();
    } else {
        reply_error(c, "UnknownRole", h.role);
        return;
    }
    if (who.is_human() || who.is_robot()) {
        for (const auto& [other_id, other] : connections_) {
            if (other_id != id && other.identity == who) {
                reply_error(c, "AlreadyConnected", who.str());
                return;
            }
        }
    }
    c.identity = who;
    c.role = h.role;
    send(c, msg::config_push{state_.config, who});
    send(c, msg::state_update{state_});
    if (status_ == session_status::running) {
        record(session_event{clock_.now_ms(), who, ev::client_joined{h.role}});
    }
}

void coordinator::on_detection(const msg::detection_frame& frame) {
    const auto now = clock_.now_ms();
    if (watchdog_since_) watchdog_since_ = now;
    auto out = observer_.observe(state_, frame);
    if (!out) {
        diagnostics_.push_back("perception: " + std::string(perception::to_string(out.error().failure)) + " " +
                               out.error().detail);
        return;
    }
    for (auto& e : out->events) {
        e.ts = now;
        commit(std::move(e));
    }
    for (auto& m : out->mismatches) {
        record(session_event{now, agent_id::perception(), std::move(m)});
    }
}

msg::allocation_response coordinator::allocate_locked(const agent_id& requester, const block_id& block) {
    const auto order = ++receipt_counter_;
    if (status_ != session_status::running) {
        return msg::allocation_response{block, false, deny_reason::wrong_phase, order};
    }
    auto outcome = handle_allocation(state_, requester, block, order, clock_.now_ms());
    if (outcome.response.granted) {
        state_ = std::move(outcome.state);
        dirty_ = true;
    }
    record(std::move(outcome.event));
    return outcome.response;
}

bool coordinator::commit(session_event e) {
    auto next = apply_transition(state_, e);
    if (!next) {
        diagnostics_.push_back("rejected " + std::string(to_string(e.kind())) + ": " + next.error().detail);
        return false;
    }
    state_ = std::move(next).value();
    if (e.kind() == event_kind::start_task && !watchdog_since_) {
        watchdog_since_ = e.ts;
    }
    record(std::move(e));
    dirty_ = true;
    return true;
}

void coordinator::record(session_event e) {
    // The clock is monotone, but callers may stamp before taking the lock.
    if (!log_.empty() && e.ts < log_.back().ts) {
        e.ts = log_.back().ts;
    }
    log_.push_back(std::move(e));
}

void coordinator::send(connection& c, protocol::payload body) {
    protocol::message m;
    m.kind = static_cast<protocol::message_kind>(body.index());
    m.seq = ++c.out_seq;
    m.ts = clock_.now_ms();
    m.body = std::move(body);
    if (!c.sink.send || !c.sink.send(protocol::encode_message(m))) {
        ++delivery_failures_;
        diagnostics_.push_back("delivery to " + (c.identity ? c.identity->str() : std::string("unidentified")) +
                               " failed");
    }
}

void coordinator::reply_error(connection& c, std::string code, std::string message) {
    send(c, msg::error{std::move(code), std::move(message)});
}

void coordinator::broadcast_state() {
    for (auto& [id, c] : connections_) {
        if (c.identity) {
            send(c, msg::state_update{state_});
        }
    }
}

void coordinator::finish(session_status status, const std::string& detail) {
    if (status_ != session_status::running) return;
    status_ = status;
    const bool done = is_session_done(state_);
    const auto text = status == session_status::success ? std::string("success")
                                                        : std::string(to_string(status)) + ": " + detail;
    record(session_event{clock_.now_ms(), agent_id::server(), ev::session_end{text, done}});
    for (auto& [id, c] : connections_) {
        if (c.identity) send(c, msg::session_end{text, done});
    }
}

void coordinator::after_change() {
    if (!dirty_) return;
    dirty_ = false;
    broadcast_state();
    if (status_ == session_status::running && is_session_done(state_)) {
        finish(session_status::success, "");
    }
}

} // namespace cohrt::server
