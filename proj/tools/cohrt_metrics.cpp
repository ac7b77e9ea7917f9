// cohrt-metrics: fluency report for a recorded session log.
#include <iostream>

#include <CLI11.hpp>

#include "cohrt/fluency_metrics.hpp"
#include "cohrt/protocol.hpp"

using namespace cohrt;

int main(int argc, char** argv) {
    CLI::App app{"Team fluency metrics over a session log"};
    std::string path;
    std::string format = "table";
    time_ms min_activity = 500;
    app.add_option("log", path, "session log file")->required();
    app.add_option("--format", format, "table, csv or lines")->check(CLI::IsMember({"table", "csv", "lines"}));
    app.add_option("--min-activity-ms", min_activity, "width given to puzzle moves")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        const auto log = protocol::read_log_file(path);
        const auto report = metrics::compute_report(log, metrics::metrics_options{min_activity});
        const auto fmt = format == "csv" ? metrics::report_format::csv
                         : format == "lines" ? metrics::report_format::lines
                                             : metrics::report_format::table;
        std::cout << metrics::format_report(report, fmt);
        for (const auto& w : report.warnings) {
            if (fmt != metrics::report_format::table) std::cerr << "warning: " << w << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 1;
    }
    return 0;
}
