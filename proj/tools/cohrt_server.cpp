// cohrt-server: the session authority behind TCP and WebSocket front ends.
#include <atomic>
#include <csignal>
#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "cohrt/coordination.hpp"
#include "cohrt/net.hpp"

using namespace cohrt;

namespace {
std::atomic<bool> interrupted{false};
void on_signal(int) { interrupted = true; }
} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CoHRT coordination server"};
    std::string config_path;
    std::uint16_t port = net::k_default_tcp_port;
    std::uint16_t ws_port = net::k_default_ws_port;
    std::string bind = "0.0.0.0";
    std::string log_out = "session.log";
    std::optional<std::uint64_t> seed;
    bool abort_on_loss = false;
    app.add_option("--config", config_path, "task configuration (.json optional)")->required();
    app.add_option("--port", port, "TCP port for agents");
    app.add_option("--ws-port", ws_port, "WebSocket port for browsers (path /ws)");
    app.add_option("--bind", bind, "listen address");
    app.add_option("--log-out", log_out, "where the session log is written");
    app.add_option("--seed", seed, "override the config seed");
    app.add_flag("--abort-on-client-loss", abort_on_loss, "end the session when a human or the robot drops");
    CLI11_PARSE(app, argc, argv);

    task_config config;
    try {
        config = load_config(config_path);
        if (seed) config.seed = *seed;
        validate(config);
    } catch (const config_error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }

    server::steady_session_clock clock;
    server::coordinator coord(config, clock, server::server_options{abort_on_loss});
    net::listen_options listen;
    listen.address = bind;
    listen.tcp_port = port;
    listen.ws_port = ws_port;
    net::session_server srv(coord, listen);
    try {
        srv.start();
    } catch (const std::exception& e) {
        std::cerr << "cannot listen: " << e.what() << '\n';
        return 1;
    }
    std::cout << "listening: tcp " << srv.tcp_port() << ", websocket " << srv.ws_port() << net::k_ws_path << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!coord.finished() && !interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    if (!coord.finished()) coord.abort("interrupted");
    // Give the front ends a moment to flush SessionEnd.
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    srv.stop();

    protocol::write_log_file(log_out, coord.log());
    std::cout << "session " << server::to_string(coord.status()) << ", " << coord.log().size() << " events -> " << log_out
              << '\n';
    for (const auto& d : coord.diagnostics()) std::cout << "diagnostic: " << d << '\n';
    return coord.status() == server::session_status::success ? 0 : 3;
}
