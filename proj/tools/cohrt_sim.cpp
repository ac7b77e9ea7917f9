// cohrt-sim: run scripted scenarios under the virtual clock, or replay a log.
#include <iostream>

#include <CLI11.hpp>

#include "cohrt/fluency_metrics.hpp"
#include "cohrt/sim_harness.hpp"

using namespace cohrt;

int main(int argc, char** argv) {
    CLI::App app{"Scripted CoHRT sessions and log replay"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run a scenario to completion");
    std::string config_path = "scenarios/paper_reference";
    std::uint64_t seed = 42;
    bool real_time = false;
    bool abort_on_loss = false;
    std::vector<std::string> fault_specs;
    std::string log_out;
    time_ms timeout_ms = 60 * 60 * 1000;
    double noise = 0.0;
    double occlusion = 0.0;
    run->add_option("--config", config_path, "scenario file (.json optional)");
    run->add_option("--seed", seed, "rng seed");
    run->add_flag("--real-time", real_time, "pace the scheduler against the wall clock");
    run->add_option("--fault", fault_specs, "disconnect:<pid>@<ms>[+<reconnect_ms>] or robot_fault_after_pick:<k>");
    run->add_flag("--abort-on-client-loss", abort_on_loss, "end the session when a human or the robot drops");
    run->add_option("--log-out", log_out, "session log path (default: session_<seed>.log)");
    run->add_option("--timeout-ms", timeout_ms, "virtual-time limit");
    run->add_option("--noise-m", noise, "perception position noise sigma in metres");
    run->add_option("--occlusion", occlusion, "per-frame chance a stack hides non-top blocks");

    auto* rep = app.add_subcommand("replay", "fold a session log through the world model");
    std::string replay_path;
    rep->add_option("log", replay_path, "session log")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            sim::scenario_options options;
            options.real_time = real_time;
            options.abort_on_client_loss = abort_on_loss;
            options.timeout_ms = timeout_ms;
            options.perception.noise_sigma_m = noise;
            options.perception.occlusion_probability = occlusion;
            options.log_path = log_out.empty() ? "session_" + std::to_string(seed) + ".log" : log_out;
            auto result = sim::run_scenario(config_path, seed, sim::parse_faults(fault_specs), options);

            std::cout << "status: " << server::to_string(result.status) << (result.timed_out ? " (timeout)" : "") << '\n';
            std::cout << "log: " << result.log_path->string() << " (" << result.log.size() << " events)\n";
            std::cout << "robot contributions:";
            for (const auto& [pid, n] : result.contributions) std::cout << ' ' << pid << '=' << n;
            std::cout << " (max gap " << result.max_contribution_gap << ")\n";
            for (const auto& d : result.diagnostics) std::cout << "diagnostic: " << d << '\n';
            if (result.report) std::cout << '\n' << metrics::format_report(*result.report, metrics::report_format::table);
            return result.status == server::session_status::success ? 0 : 2;
        }
        auto state = sim::replay_file(replay_path);
        std::cout << "replayed " << replay_path << ": session " << (is_session_done(state) ? "done" : "not done")
                  << " at " << state.clock_ms << " ms\n";
        for (const auto& [pid, stack] : state.stacks) {
            std::cout << "  " << pid << ": " << stack.placed.size() << '/' << stack.pattern.size() << " blocks, "
                      << to_string(stack.state) << ", puzzle " << (state.puzzles.at(pid).solved ? "solved" : "unsolved")
                      << '\n';
        }
        return 0;
    } catch (const sim::replay_divergence& e) {
        std::cerr << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
