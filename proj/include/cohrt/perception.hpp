#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cohrt/config.hpp"
#include "cohrt/events.hpp"
#include "cohrt/protocol.hpp"
#include "cohrt/result.hpp"
#include "cohrt/world_model.hpp"

namespace cohrt::perception {

enum class confidence : std::uint8_t { full, history_assisted };

/// Blocks seen on one stack, bottom to top. An empty slot is a gap below a
/// visible block, i.e. an occluded block.
struct stack_observation {
    participant_id stack;
    std::vector<std::optional<block_id>> slots;
    confidence level = confidence::full;

    bool operator==(const stack_observation&) const = default;
};

enum class perception_failure : std::uint8_t {
    unknown_tag,
    ambiguous_assignment,
    slot_collision,
    inconsistent_history,
};

std::string_view to_string(perception_failure f);

struct perception_error {
    perception_failure failure = perception_failure::unknown_tag;
    std::string detail;
};

using observation_result = result<std::vector<stack_observation>, perception_error>;

/// Groups detections by nearest stack base, orders them by height and maps tags
/// to blocks. Detections farther than the assignment radius from every base are
/// treated as blocks in transit and ignored.
observation_result infer_stacks(const protocol::msg::detection_frame& frame,
                                const std::map<block_id, block_spec>& catalog,
                                const geometry_spec& geometry);

/// Bounded per-stack record of recent raw observations, newest last.
class stack_history {
public:
    explicit stack_history(std::size_t depth = 30) : depth_(depth) {}

    void push(const stack_observation& obs);
    /// Most recent sighting of `slot` on `stack`, if any frame in the window saw it.
    std::optional<block_id> last_seen(const participant_id& stack, std::size_t slot) const;
    std::size_t depth() const { return depth_; }
    std::size_t size(const participant_id& stack) const;

private:
    std::size_t depth_;
    std::map<participant_id, std::deque<std::vector<std::optional<block_id>>>> frames_;
};

struct reconcile_output {
    /// StackPlaced events in placement order; ts is left for the caller to stamp.
    std::vector<session_event> events;
    std::vector<ev::mismatch> mismatches;
    /// Best current knowledge of each stack after history fill.
    std::map<participant_id, std::vector<std::optional<block_id>>> stacks;
};

using reconcile_result = result<reconcile_output, perception_error>;

/// Merges the observation with history and the authoritative stack prefix,
/// proposing StackPlaced events for newly placed blocks. Pushes `obs` into
/// `history` on success.
reconcile_result reconcile(const world_state& prev,
                           const std::vector<stack_observation>& obs,
                           stack_history& history);

/// Stateful wrapper used by the server: owns the history and suppresses
/// repeated reports of the same mismatch.
class state_observer {
public:
    explicit state_observer(std::size_t history_depth) : history_(history_depth) {}

    reconcile_result observe(const world_state& state, const protocol::msg::detection_frame& frame);

    const stack_history& history() const { return history_; }

private:
    stack_history history_;
    std::set<std::tuple<participant_id, std::size_t, block_id>> reported_;
};

} // namespace cohrt::perception
