#include <doctest.h>

#include "cohrt/perception.hpp"
#include "testkit.hpp"

using namespace cohrt;
using namespace cohrt::perception;
namespace msg = cohrt::protocol::msg;

namespace {

msg::detection detect(const task_config& c, const block_id& b, const participant_id& stack, double level) {
    const auto& base = c.geometry.stack_bases.at(stack);
    return {c.blocks.at(b).tag_id, vec3{base.x, base.y, base.z + level * c.geometry.block_height_m}, "cam"};
}

std::vector<std::optional<block_id>> column(const std::vector<stack_observation>& obs, const participant_id& pid) {
    for (const auto& o : obs) {
        if (o.stack == pid) return o.slots;
    }
    return {};
}

} // namespace

TEST_CASE("unoccluded column is read bottom to top") {
    const auto c = testkit::reference_config();
    msg::detection_frame f{{detect(c, "b3", "P1", 2), detect(c, "b1", "P1", 0), detect(c, "b2", "P1", 1)}};
    auto obs = infer_stacks(f, c.blocks, c.geometry);
    REQUIRE(obs);
    CHECK(column(*obs, "P1") == std::vector<std::optional<block_id>>{"b1", "b2", "b3"});
    CHECK(column(*obs, "P2").empty());
    for (const auto& o : *obs) CHECK(o.level == confidence::full);
}

TEST_CASE("a gap marks an occluded slot") {
    const auto c = testkit::reference_config();
    msg::detection_frame f{{detect(c, "b1", "P1", 0), detect(c, "b3", "P1", 2)}};
    auto obs = infer_stacks(f, c.blocks, c.geometry);
    REQUIRE(obs);
    CHECK(column(*obs, "P1") == std::vector<std::optional<block_id>>{"b1", std::nullopt, "b3"});
    for (const auto& o : *obs) {
        if (o.stack == "P1") CHECK(o.level == confidence::history_assisted);
    }
}

TEST_CASE("frame errors and transit") {
    const auto c = testkit::reference_config();
    CHECK(infer_stacks(msg::detection_frame{{{999, {}, "cam"}}}, c.blocks, c.geometry).error().failure == perception_failure::unknown_tag);
    auto twice = infer_stacks(msg::detection_frame{{detect(c, "b1", "P1", 0), detect(c, "b2", "P1", 0.1)}}, c.blocks, c.geometry);
    REQUIRE_FALSE(twice);
    CHECK(twice.error().failure == perception_failure::slot_collision);
    // Far from every base: a block in the robot's gripper.
    auto transit = infer_stacks(msg::detection_frame{{{1, {5, 5, 0}, "cam"}}}, c.blocks, c.geometry);
    REQUIRE(transit);
    CHECK(column(*transit, "P1").empty());
}

TEST_CASE("noisy unoccluded stacks are read exactly") {
    // Ground truth: random heights 0..7 on both stations, sigma 2 mm.
    const auto c = testkit::reference_config();
    testkit::rng_t rng(99);
    std::normal_distribution<double> noise(0.0, 0.002);
    for (int scene = 0; scene < 200; ++scene) {
        std::map<participant_id, std::vector<block_id>> truth;
        msg::detection_frame f;
        for (const auto& inv : c.inventories) {
            const auto n = std::uniform_int_distribution<std::size_t>(0, 7)(rng);
            const auto& base = c.geometry.stack_bases.at(inv.supplies);
            for (std::size_t i = 0; i < n; ++i) {
                truth[inv.supplies].push_back(inv.blocks[i]);
                f.detections.push_back({c.blocks.at(inv.blocks[i]).tag_id,
                                        vec3{base.x + noise(rng), base.y + noise(rng),
                                             base.z + static_cast<double>(i) * c.geometry.block_height_m + noise(rng)},
                                        "cam"});
            }
        }
        std::shuffle(f.detections.begin(), f.detections.end(), rng);
        auto obs = infer_stacks(f, c.blocks, c.geometry);
        REQUIRE(obs);
        for (const auto& pid : c.participants) {
            std::vector<std::optional<block_id>> want(truth[pid].begin(), truth[pid].end());
            CHECK(column(*obs, pid) == want);
        }
    }
}

TEST_CASE("reconcile proposes the placement of a working block") {
    const auto c = testkit::reference_config();
    auto s = testkit::to_stacking(new_session(c), "P1");
    s = testkit::must(s, {0, agent_id::robot(), ev::allocate{"b1", 1}});
    stack_history history(30);
    auto obs = infer_stacks(msg::detection_frame{{detect(c, "b1", "P1", 0)}}, c.blocks, c.geometry);
    auto out = reconcile(s, *obs, history);
    REQUIRE(out);
    REQUIRE(out->events.size() == 1);
    CHECK(out->events[0].agent == agent_id::robot());
    CHECK(out->events[0].payload == event_payload{ev::stack_placed{"b1", "P1"}});
    s = testkit::must(s, out->events[0]);

    // Fixed point.
    auto same = reconcile(s, *obs, history);
    REQUIRE(same);
    CHECK(same->events.empty());
    CHECK(same->mismatches.empty());
}

TEST_CASE("contradictions are reported, not applied") {
    const auto c = testkit::reference_config();
    auto s = testkit::to_stacking(new_session(c), "P1");
    stack_history history(30);
    // b2 on the table while b1 is still in the pile and nobody holds b2.
    auto obs = infer_stacks(msg::detection_frame{{detect(c, "b2", "P1", 0)}}, c.blocks, c.geometry);
    auto out = reconcile(s, *obs, history);
    REQUIRE(out);
    CHECK(out->events.empty());
    REQUIRE(out->mismatches.size() == 1);
    CHECK(out->mismatches[0].block == "b2");
}

TEST_CASE("history fills occluded slots") {
    const auto c = testkit::small_config(1, 3);
    auto s = testkit::to_stacking(new_session(c), "P1");
    const auto p1 = agent_id::human("P1");
    stack_history history(30);
    for (const auto& b : {"P1_b0", "P1_b1"}) {
        s = testkit::must(s, {0, p1, ev::allocate{b, 0}});
        s = testkit::must(s, {0, p1, ev::stack_placed{b, "P1"}});
    }
    // The bottom block hides once the third lands; its slot comes from the record.
    s = testkit::must(s, {0, p1, ev::allocate{"P1_b2", 0}});
    auto obs = infer_stacks(msg::detection_frame{{detect(c, "P1_b1", "P1", 1), detect(c, "P1_b2", "P1", 2)}}, c.blocks, c.geometry);
    auto out = reconcile(s, *obs, history);
    REQUIRE(out);
    REQUIRE(out->events.size() == 1);
    CHECK(out->stacks.at("P1") == std::vector<std::optional<block_id>>{"P1_b0", "P1_b1", "P1_b2"});
    CHECK(history.size("P1") == 1);
    CHECK(history.last_seen("P1", 2) == "P1_b2");
    CHECK_FALSE(history.last_seen("P1", 0));
}

TEST_CASE("history window is bounded") {
    stack_history h(3);
    for (int i = 0; i < 5; ++i) h.push({"P1", {std::optional<block_id>("x" + std::to_string(i))}, confidence::full});
    CHECK(h.size("P1") == 3);
    CHECK(h.last_seen("P1", 0) == "x4");
}

TEST_CASE("random scenes with occlusion reconcile to the truth") {
    testkit::rng_t rng(6);
    const auto c = testkit::reference_config();
    testkit::scene_tally total;
    for (int i = 0; i < 200; ++i) {
        const auto sc = testkit::random_scene(rng, c, 0.002, 2, 0.5);
        const auto t = testkit::score_scene(sc, 30);
        total.frames += t.frames;
        total.eligible += t.eligible;
        total.eligible_exact += t.eligible_exact;
        total.wrong += t.wrong;
        total.errors += t.errors;
        total.occluded_frames += t.occluded_frames;
    }
    CHECK(total.errors == 0);
    CHECK(total.wrong == 0);
    CHECK(total.eligible > 0);
    CHECK(total.eligible_exact == total.eligible);
    CHECK(total.occluded_frames > 100);
}
