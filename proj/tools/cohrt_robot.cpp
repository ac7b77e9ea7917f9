// cohrt-robot: the simulated robot teammate as a network client.
#include <iostream>

#include <CLI11.hpp>

#include "cohrt/net.hpp"
#include "cohrt/robot_agent.hpp"

using namespace cohrt;

int main(int argc, char** argv) {
    CLI::App app{"Simulated robot teammate"};
    std::string server = "127.0.0.1:7450";
    std::string policy = "alternating_equal";
    std::vector<std::string> timing;
    app.add_option("--server", server, "host:port of the coordination server");
    app.add_option("--policy", policy, "collaboration policy id");
    app.add_option("--timing", timing, "action durations, e.g. pick=2000,place=3000")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const auto colon = server.rfind(':');
    if (colon == std::string::npos) {
        std::cerr << "--server must be host:port\n";
        return 2;
    }
    robot::robot_options options;
    for (const auto& item : timing) {
        const auto eq = item.find('=');
        time_ms v = -1;
        try {
            if (eq != std::string::npos) v = std::stoll(item.substr(eq + 1));
        } catch (const std::exception&) {
        }
        const auto k = item.substr(0, eq);
        if (v < 0) {
            std::cerr << "timing entries look like pick=2000 with non-negative values\n";
            return 2;
        }
        if (k == "pick") {
            options.pick_ms = v;
        } else if (k == "place") {
            options.place_ms = v;
        } else {
            std::cerr << "unknown timing key '" << k << "' (expected pick or place)\n";
            return 2;
        }
    }

    try {
        robot::null_actuator arm;
        robot::robot_agent agent(robot::make_policy(policy), arm, options);
        net::tcp_agent_host host(agent, server.substr(0, colon),
                                 static_cast<std::uint16_t>(std::stoi(server.substr(colon + 1))));
        host.run();
        std::cout << "robot done:";
        for (const auto& [pid, n] : agent.state().contributed) std::cout << ' ' << pid << '=' << n;
        if (agent.stop_reason()) std::cout << " (" << *agent.stop_reason() << ')';
        std::cout << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
