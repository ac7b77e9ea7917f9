#include "cohrt/sim_harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "cohrt/protocol.hpp"

namespace cohrt::sim {

namespace msg = protocol::msg;

// ---------------------------------------------------------------- scheduler

void event_scheduler::at(time_ms t, std::function<void()> fn) {
    queue_.push(entry{std::max(t, now_), next_order_++, std::move(fn)});
}

bool event_scheduler::step() {
    if (queue_.empty()) return false;
    // priority_queue::top is const; the callback is copied out before pop.
    auto fn = queue_.top().fn;
    now_ = queue_.top().t;
    queue_.pop();
    ++executed_;
    fn();
    return true;
}

std::optional<time_ms> event_scheduler::next_time() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.top().t;
}

// ---------------------------------------------------------------- link

sim_link::sim_link(event_scheduler& sched, server::coordinator& coord, agents::protocol_agent& agent)
    : sched_(sched), coord_(coord), agent_(agent) {
    agent_.attach(*this);
}

void sim_link::connect() {
    if (connected_) return;
    connected_ = true;
    out_seq_ = 0;
    const auto gen = generation_;
    server::client_sink sink;
    sink.send = [this, gen](const std::string& frame) {
        if (!connected_ || gen != generation_) return false;
        sched_.after(0, [this, gen, frame] {
            if (!connected_ || gen != generation_) return;
            auto m = protocol::decode_message(frame);
            if (m) agent_.on_message(*m);
        });
        return true;
    };
    sink.close = [this, gen] {
        sched_.after(0, [this, gen] {
            if (gen == generation_) disconnect();
        });
    };
    conn_ = coord_.connect(std::move(sink));
    send(agent_.hello());
    agent_.on_connected();
}

void sim_link::disconnect() {
    if (!connected_) return;
    connected_ = false;
    ++generation_;
    coord_.disconnect(conn_);
    agent_.on_disconnected();
}

void sim_link::send(protocol::payload body) {
    if (!connected_) return;
    auto m = protocol::message{static_cast<protocol::message_kind>(body.index()), ++out_seq_, sched_.now_ms(),
                               std::move(body)};
    auto frame = protocol::encode_message(m);
    const auto gen = generation_;
    const auto conn = conn_;
    sched_.after(0, [this, gen, conn, frame] {
        if (gen != generation_) return;
        coord_.receive(conn, frame);
    });
}

void sim_link::schedule(time_ms delay, std::function<void()> fn) {
    const auto gen = generation_;
    sched_.after(delay, [this, gen, fn = std::move(fn)] {
        if (gen == generation_ && connected_) fn();
    });
}

// ---------------------------------------------------------------- ground truth

ground_truth::ground_truth(const task_config& config) : config_(config) {
    for (const auto& p : config_.participants) stacks_[p] = {};
}

void ground_truth::place(const block_id& block, const participant_id& stack) {
    for (auto& [pid, blocks] : stacks_) {
        blocks.erase(std::remove(blocks.begin(), blocks.end(), block), blocks.end());
    }
    off_pile_.insert(block);
    stacks_.at(stack).push_back(block);
}

std::vector<block_id> ground_truth::pile(const inventory_id& id) const {
    std::vector<block_id> out;
    if (const auto* inv = config_.find_inventory(id)) {
        for (const auto& b : inv->blocks) {
            if (!off_pile_.contains(b)) out.push_back(b);
        }
    }
    return out;
}

msg::detection_frame ground_truth::frame(const std::set<block_id>& hidden) const {
    const auto& geo = config_.geometry;
    msg::detection_frame f;
    for (const auto& [pid, blocks] : stacks_) {
        const auto& base = geo.stack_bases.at(pid);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (hidden.contains(blocks[i])) continue;
            f.detections.push_back(msg::detection{config_.blocks.at(blocks[i]).tag_id,
                                                  vec3{base.x, base.y, base.z + static_cast<double>(i) * geo.block_height_m},
                                                  "stack_" + pid});
        }
    }
    for (const auto& inv : config_.inventories) {
        const auto remaining = pile(inv.id);
        const auto& origin = geo.inventory_origins.at(inv.id);
        for (std::size_t d = 0; d < remaining.size(); ++d) {
            const auto level = remaining.size() - 1 - d;
            f.detections.push_back(msg::detection{config_.blocks.at(remaining[d]).tag_id,
                                                  vec3{origin.x, origin.y, origin.z + static_cast<double>(level) * geo.block_height_m},
                                                  inv.id});
        }
    }
    return f;
}

// ---------------------------------------------------------------- perception

perception_emitter::perception_emitter(const ground_truth& truth, perception_options options, std::uint64_t seed)
    : truth_(truth), options_(options), rng_(seed) {}

msg::hello perception_emitter::hello() const { return msg::hello{protocol::k_version, "perception", ""}; }

void perception_emitter::on_connected() {
    over_ = false;
    host().schedule(0, [this] { emit(); });
}

void perception_emitter::on_message(const protocol::message& m) {
    if (std::holds_alternative<msg::session_end>(m.body)) over_ = true;
}

msg::detection_frame perception_emitter::observe() {
    std::set<block_id> hidden;
    if (options_.occlusion_probability > 0.0 && options_.max_occluded > 0) {
        std::bernoulli_distribution hide(options_.occlusion_probability);
        for (const auto& [pid, blocks] : truth_.stacks()) {
            if (blocks.size() < 2 || !hide(rng_)) continue;
            // Never the top block: it is always in view of the camera.
            std::vector<block_id> below(blocks.begin(), blocks.end() - 1);
            std::shuffle(below.begin(), below.end(), rng_);
            std::uniform_int_distribution<std::size_t> count(1, std::min(options_.max_occluded, below.size()));
            const auto n = count(rng_);
            hidden.insert(below.begin(), below.begin() + static_cast<std::ptrdiff_t>(n));
        }
    }
    auto frame = truth_.frame(hidden);
    if (options_.noise_sigma_m > 0.0) {
        std::normal_distribution<double> noise(0.0, options_.noise_sigma_m);
        for (auto& d : frame.detections) {
            d.position.x += noise(rng_);
            d.position.y += noise(rng_);
            d.position.z += noise(rng_);
        }
    }
    return frame;
}

void perception_emitter::emit() {
    if (over_) return;
    host().send(observe());
    host().schedule(options_.frame_interval_ms, [this] { emit(); });
}

// ---------------------------------------------------------------- scripted human

scripted_human::scripted_human(scripted_profile profile, ground_truth& truth)
    : profile_(std::move(profile)), truth_(truth), rng_(profile_.seed) {}

msg::hello scripted_human::hello() const { return msg::hello{protocol::k_version, "human", profile_.pid}; }

void scripted_human::on_connected() {
    timer_ = false;
    move_sent_on_.reset();
    claim_pending_.reset();
    holding_.reset();
}

void scripted_human::on_disconnected() {
    // Whatever was in hand goes back on the pile; the server expires the claim.
    timer_ = false;
    move_sent_on_.reset();
    claim_pending_.reset();
    holding_.reset();
}

time_ms scripted_human::sample(const uniform_ms& u) {
    if (u.hi <= u.lo) return u.lo;
    return std::uniform_int_distribution<time_ms>(u.lo, u.hi)(rng_);
}

void scripted_human::wait_then(const uniform_ms& u, std::function<void()> fn) {
    timer_ = true;
    host().schedule(sample(u), [this, fn = std::move(fn)] {
        timer_ = false;
        fn();
    });
}

void scripted_human::on_message(const protocol::message& m) {
    if (const auto* push = std::get_if<msg::config_push>(&m.body)) {
        config_ = push->config;
    } else if (const auto* update = std::get_if<msg::state_update>(&m.body)) {
        if (!config_) return;
        world_state w;
        static_cast<world_snapshot&>(w) = update->state;
        w.config = *config_;
        if (move_sent_on_ && w.puzzles.at(profile_.pid) != *move_sent_on_) move_sent_on_.reset();
        world_ = std::move(w);
        step();
    } else if (const auto* r = std::get_if<msg::allocation_response>(&m.body)) {
        if (!claim_pending_ || *claim_pending_ != r->block) return;
        claim_pending_.reset();
        if (!r->granted) {
            step();
            return;
        }
        holding_ = r->block;
        host().send(msg::action_start{"fetch", r->block});
        const auto block = r->block;
        wait_then(profile_.fetch_round_trip, [this, block] {
            truth_.place(block, profile_.pid);
            ++blocks_placed_;
            holding_.reset();
            host().send(msg::action_end{"fetch", block, true});
            step();
        });
    } else if (std::holds_alternative<msg::error>(m.body)) {
        move_sent_on_.reset();
        claim_pending_.reset();
        step();
    } else if (std::holds_alternative<msg::session_end>(m.body)) {
        over_ = true;
    }
}

std::optional<msg::puzzle_move> scripted_human::next_move() {
    const auto& puzzle = world_->puzzles.at(profile_.pid);
    const auto& solution = config_->puzzles.at(profile_.pid).solution;
    std::vector<std::size_t> wrong;
    for (std::size_t s = 0; s < solution.size(); ++s) {
        if (puzzle.grid[s] != solution[s]) wrong.push_back(s);
    }
    if (wrong.empty()) return std::nullopt;
    const auto slot = wrong[std::uniform_int_distribution<std::size_t>(0, wrong.size() - 1)(rng_)];
    const auto& piece = solution[slot];
    for (std::size_t i = 0; i < puzzle.tray.size(); ++i) {
        if (puzzle.tray[i] == piece) return msg::puzzle_move{puzzle_source{true, i}, slot};
    }
    for (std::size_t i = 0; i < puzzle.grid.size(); ++i) {
        if (puzzle.grid[i] == piece) return msg::puzzle_move{puzzle_source{false, i}, slot};
    }
    return std::nullopt;
}

std::optional<block_id> scripted_human::wanted_block() const {
    const auto& pid = profile_.pid;
    if (world_->phases.at(pid) != participant_phase::stacking) return std::nullopt;
    const auto needed = world_->stacks.at(pid).next_needed();
    if (!needed || !working_blocks_for(*world_, pid).empty()) return std::nullopt;
    const auto me = agent_id::human(pid);
    for (const auto& inv : config_->inventories) {
        if (inv.supplies != pid) continue;
        if (std::find(inv.access.begin(), inv.access.end(), me) == inv.access.end()) continue;
        auto top = topmost_unstacked(*world_, inv.id);
        if (top && world_->blocks.at(*top).col == *needed && !check_claim(*world_, me, *top)) return top;
    }
    return std::nullopt;
}

void scripted_human::step() {
    if (over_ || !world_ || timer_ || claim_pending_ || holding_) return;
    switch (world_->phases.at(profile_.pid)) {
    case participant_phase::awaiting_start:
        if (start_sent_) return;
        wait_then(profile_.start_delay, [this] {
            if (start_sent_ || world_->phases.at(profile_.pid) != participant_phase::awaiting_start) return;
            start_sent_ = true;
            host().send(msg::start_task{profile_.pid});
        });
        break;
    case participant_phase::puzzling:
        if (move_sent_on_) return;
        wait_then(profile_.think, [this] {
            if (world_->phases.at(profile_.pid) != participant_phase::puzzling) return step();
            auto move = next_move();
            if (!move) return;
            move_sent_on_ = world_->puzzles.at(profile_.pid);
            ++moves_sent_;
            host().send(*move);
        });
        break;
    case participant_phase::stacking:
        if (!wanted_block()) return;
        wait_then(profile_.reaction, [this] {
            // The world may have moved on while reacting.
            auto block = wanted_block();
            if (!block) return step();
            claim_pending_ = block;
            host().send(msg::allocation_request{*block});
        });
        break;
    case participant_phase::done:
        break;
    }
}

// ---------------------------------------------------------------- faults

fault_schedule parse_faults(const std::vector<std::string>& specs) {
    fault_schedule out;
    auto number = [](const std::string& s, const std::string& spec) -> time_ms {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (s.empty() || used != s.size() || v < 0) throw std::invalid_argument("bad number in fault spec '" + spec + "'");
        return v;
    };
    for (const auto& spec : specs) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("fault spec '" + spec + "' lacks ':'");
        const auto kind = spec.substr(0, colon);
        const auto rest = spec.substr(colon + 1);
        if (kind == "disconnect") {
            const auto at = rest.find('@');
            if (at == std::string::npos || at == 0) {
                throw std::invalid_argument("expected disconnect:<pid>@<ms>[+<reconnect_ms>], got '" + spec + "'");
            }
            disconnect_fault f;
            f.pid = rest.substr(0, at);
            auto when = rest.substr(at + 1);
            if (const auto plus = when.find('+'); plus != std::string::npos) {
                f.reconnect_after_ms = number(when.substr(plus + 1), spec);
                when = when.substr(0, plus);
            }
            f.at_ms = number(when, spec);
            out.disconnects.push_back(f);
        } else if (kind == "robot_fault_after_pick") {
            const auto k = number(rest, spec);
            if (k < 1) throw std::invalid_argument("robot action numbers start at 1");
            out.robot_fault_after_pick.insert(static_cast<int>(k));
        } else {
            throw std::invalid_argument("unknown fault kind '" + kind + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------- runs

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

uniform_ms range_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw config_error("profile ranges are [lo, hi] pairs");
    uniform_ms u{j[0].get<time_ms>(), j[1].get<time_ms>()};
    if (u.lo < 0 || u.hi < u.lo) throw config_error("profile range must satisfy 0 <= lo <= hi");
    return u;
}

} // namespace

std::map<participant_id, scripted_profile> load_profiles(const std::filesystem::path& config_path,
                                                         const task_config& config,
                                                         std::uint64_t seed) {
    std::map<participant_id, scripted_profile> out;
    for (std::size_t i = 0; i < config.participants.size(); ++i) {
        scripted_profile p;
        p.pid = config.participants[i];
        p.seed = mix_seed(seed, i + 1);
        out[p.pid] = p;
    }
    auto resolved = config_path;
    if (!std::filesystem::exists(resolved)) resolved += ".json";
    std::ifstream in(resolved);
    if (!in) return out;
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("profiles")) return out;
    try {
        for (const auto& [pid, pj] : j.at("profiles").items()) {
            auto it = out.find(pid);
            if (it == out.end()) throw config_error("profile for unknown participant " + pid);
            auto& p = it->second;
            if (pj.contains("start_delay_ms")) p.start_delay = range_from_json(pj.at("start_delay_ms"));
            if (pj.contains("think_ms")) p.think = range_from_json(pj.at("think_ms"));
            if (pj.contains("reaction_ms")) p.reaction = range_from_json(pj.at("reaction_ms"));
            if (pj.contains("fetch_round_trip_ms")) {
                p.fetch_round_trip = range_from_json(pj.at("fetch_round_trip_ms"));
            }
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("ConfigInvalid: bad profiles: ") + e.what());
    }
    return out;
}

scenario_result run_session(task_config config, const scenario_options& options) {
    config.seed = options.seed;
    validate(config);

    event_scheduler sched;
    server::coordinator coord(config, sched, server::server_options{options.abort_on_client_loss});
    ground_truth truth(config);

    perception_emitter camera(truth, options.perception, mix_seed(options.seed, 0));
    sim_link camera_link(sched, coord, camera);

    truth_actuator arm(truth);
    robot::robot_options robot_opts;
    robot_opts.fault_after_pick = options.faults.robot_fault_after_pick;
    robot::robot_agent robot(robot::make_policy(config.robot_policy), arm, robot_opts);
    sim_link robot_link(sched, coord, robot);

    std::vector<std::unique_ptr<scripted_human>> humans;
    std::map<participant_id, std::unique_ptr<sim_link>> human_links;
    for (std::size_t i = 0; i < config.participants.size(); ++i) {
        const auto& pid = config.participants[i];
        scripted_profile profile;
        if (auto it = options.profiles.find(pid); it != options.profiles.end()) {
            profile = it->second;
        } else {
            profile.pid = pid;
            profile.seed = mix_seed(options.seed, i + 1);
        }
        humans.push_back(std::make_unique<scripted_human>(profile, truth));
        human_links[pid] = std::make_unique<sim_link>(sched, coord, *humans.back());
    }

    for (const auto& f : options.faults.disconnects) {
        auto it = human_links.find(f.pid);
        if (it == human_links.end()) throw std::invalid_argument("fault names unknown participant " + f.pid);
        auto* link = it->second.get();
        sched.at(f.at_ms, [link] { link->disconnect(); });
        if (f.reconnect_after_ms) {
            sched.at(f.at_ms + *f.reconnect_after_ms, [link] { link->connect(); });
        }
    }

    camera_link.connect();
    robot_link.connect();
    for (const auto& pid : config.participants) human_links.at(pid)->connect();

    const time_ms tick_ms = options.perception.frame_interval_ms;
    std::function<void()> tick = [&] {
        coord.tick();
        if (!coord.finished()) sched.after(tick_ms, tick);
    };
    sched.after(tick_ms, tick);

    scenario_result result;
    const auto wall_epoch = std::chrono::steady_clock::now();
    while (!coord.finished()) {
        const auto next = sched.next_time();
        if (!next) {
            coord.abort("stalled: nothing left to simulate");
            break;
        }
        if (*next > options.timeout_ms) {
            result.timed_out = true;
            coord.abort("timeout after " + std::to_string(options.timeout_ms) + " ms of virtual time");
            break;
        }
        if (options.real_time) {
            std::this_thread::sleep_until(wall_epoch + std::chrono::milliseconds(*next));
        }
        sched.step();
    }

    result.log = coord.log();
    result.status = coord.status();
    result.final_state = coord.state();
    result.diagnostics = coord.diagnostics();
    result.contributions = robot_contributions(result.log);
    result.max_contribution_gap = max_contribution_gap(result.log);
    result.events_executed = sched.executed();
    try {
        result.report = metrics::compute_report(result.log);
    } catch (const std::exception& e) {
        result.diagnostics.push_back(std::string("metrics: ") + e.what());
    }
    if (options.log_path) {
        protocol::write_log_file(options.log_path->string(), result.log);
        result.log_path = options.log_path;
    }
    return result;
}

scenario_result run_scenario(const std::filesystem::path& config_path,
                             std::uint64_t seed,
                             const fault_schedule& faults,
                             scenario_options options) {
    auto config = load_config(config_path);
    options.seed = seed;
    options.faults = faults;
    auto profiles = load_profiles(config_path, config, seed);
    for (auto& [pid, p] : profiles) options.profiles.try_emplace(pid, p);
    return run_session(std::move(config), options);
}

// ---------------------------------------------------------------- replay

world_state replay(const session_log& log) {
    if (log.empty()) throw replay_divergence(0, "ReplayDivergence: empty log");
    const auto* start = std::get_if<ev::session_start>(&log.front().payload);
    if (start == nullptr) throw replay_divergence(0, "ReplayDivergence: log does not begin with SessionStart");
    world_state state = new_session(start->config);
    for (std::size_t i = 1; i < log.size(); ++i) {
        const auto& e = log[i];
        if (e.kind() == event_kind::session_start) {
            throw replay_divergence(i, "ReplayDivergence: second SessionStart at entry " + std::to_string(i));
        }
        if (!is_state_changing(e.kind())) continue;
        auto next = apply_transition(state, e);
        if (!next) {
            throw replay_divergence(i, "ReplayDivergence: entry " + std::to_string(i) + " (" +
                                           std::string(to_string(e.kind())) + "): " +
                                           std::string(to_string(next.error().code)) + " " + next.error().detail);
        }
        state = std::move(next).value();
    }
    return state;
}

world_state replay_file(const std::filesystem::path& path) { return replay(protocol::read_log_file(path.string())); }

std::map<participant_id, int> robot_contributions(const session_log& log) {
    std::map<participant_id, int> out;
    if (!log.empty()) {
        if (const auto* start = std::get_if<ev::session_start>(&log.front().payload)) {
            for (const auto& p : start->config.participants) out[p] = 0;
        }
    }
    for (const auto& e : log) {
        if (const auto* placed = std::get_if<ev::stack_placed>(&e.payload); placed != nullptr && e.agent.is_robot()) {
            ++out[placed->stack];
        }
    }
    return out;
}

int max_contribution_gap(const session_log& log) {
    std::map<participant_id, int> counts = robot_contributions(session_log(log.begin(), log.begin() + std::min<std::size_t>(1, log.size())));
    int gap = 0;
    for (const auto& e : log) {
        const auto* placed = std::get_if<ev::stack_placed>(&e.payload);
        if (placed == nullptr || !e.agent.is_robot()) continue;
        ++counts[placed->stack];
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                                  [](const auto& a, const auto& b) { return a.second < b.second; });
        gap = std::max(gap, hi->second - lo->second);
    }
    return gap;
}

} // namespace cohrt::sim
