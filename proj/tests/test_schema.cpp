#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "hybridwf/errors.hpp"
#include "hybridwf/trace.hpp"
#include "hybridwf/trace_schema.hpp"
#include "hybridwf/trace_text.hpp"

using namespace hybridwf;

namespace {

// Four-step diamond: s1 on l1 produces d1 (for s2 on l1) and d2 (for s3 on
// l2); s4 on l1 joins d3 and d4 into the terminal d5. The driver ld holds
// the initial datum d.
StepSchema s1_schema() {
    return {StepId{"s1"},
            LocationId{"l1"},
            LocationId{"ld"},
            {{DataId{"d"}, LocationId{"ld"}}},
            {{DataId{"d1"}, {LocationId{"l1"}}}, {DataId{"d2"}, {LocationId{"l2"}}}}};
}

StepSchema s2_schema() {
    return {StepId{"s2"},
            LocationId{"l1"},
            LocationId{"ld"},
            {{DataId{"d1"}, LocationId{"l1"}}},
            {{DataId{"d3"}, {LocationId{"l1"}}}}};
}

StepSchema s3_schema() {
    return {StepId{"s3"},
            LocationId{"l2"},
            LocationId{"ld"},
            {{DataId{"d2"}, LocationId{"l1"}}},
            {{DataId{"d4"}, {LocationId{"l1"}}}}};
}

StepSchema s4_schema() {
    return {StepId{"s4"},
            LocationId{"l1"},
            LocationId{"ld"},
            {{DataId{"d3"}, LocationId{"l1"}}, {DataId{"d4"}, LocationId{"l2"}}},
            {{DataId{"d5"}, {}}}};
}

StepSchema zero_input_schema() {
    return {StepId{"s9"},
            LocationId{"l3"},
            LocationId{"ld"},
            {},
            {{DataId{"d7"}, {LocationId{"l1"}}}}};
}

bool congruent(const Trace& a, const std::string& text) {
    return trace_eq(normalize(a), normalize(parse_trace(text)));
}

bool advance_by(Trace& t, const std::string& text) {
    for (const auto& e : enabled_actions(t)) {
        if (to_text(*e.action) == text) {
            advance_pointer(t, e.path);
            return true;
        }
    }
    return false;
}

const std::string kStepS3 =
    "(recv(msg(s3),ld).(send(ok(msg(s3)),ld)+send(err(msg(s3)@l2),ld))"
    "|recv(d2,l1).(send(ok(d2),ld)+send(err(d2@l2),ld)))"
    ".exec(s3,{d2},{d4})"
    ".(send(msg(d4@l2),ld)+send(err(x),ld))"
    ".send(d4,l1)";

const std::string kStepS4 =
    "(recv(msg(s4),ld).(send(ok(msg(s4)),ld)+send(err(msg(s4)@l1),ld))"
    "|recv(d3,l1).(send(ok(d3),ld)+send(err(d3@l1),ld))"
    "|recv(d4,l2).(send(ok(d4),ld)+send(err(d4@l1),ld)))"
    ".exec(s4,{d3,d4},{d5})"
    ".(send(msg(d5@l1),ld)+send(err(x),ld))";

}  // namespace

TEST_CASE("step trace for a remote single-input step has the worked form") {
    Trace t = make_step_trace(s3_schema());
    CHECK(marked_text(t) == "^" + kStepS3);
    // Same trace modulo branch order, written with the conf shorthand.
    CHECK(congruent(t,
                    "(recv(d2,l1).conf(d2,l2)|recv(msg(s3),ld).conf(msg(s3),l2))"
                    ".exec(s3,{d2},{d4})"
                    ".(send(msg(d4@l2),ld)+send(err(x),ld)).send(d4,l1)"));
}

TEST_CASE("driver trace installs the worker trace and orchestrates it") {
    Trace td = make_driver_trace(s3_schema());
    CHECK(marked_text(td) ==
          "^init(" + kStepS3 +
              ",l2)"
              ".(send(msg(s3),l2).(recv(ok(msg(s3)),l2)+recv(err(msg(s3)@l2),l2))"
              "|(recv(ok(d2),l2)+recv(err(d2@l2),l2)))"
              ".(recv(msg(d4@l2),l2)+recv(err(x),l2))");

    // The init payload is exactly the worker trace of the same schema.
    auto en = enabled_actions(td);
    REQUIRE(en.size() == 1);
    const auto* ini = std::get_if<InitAction>(en[0].action);
    REQUIRE(ini != nullptr);
    CHECK(trace_eq(*ini->payload, make_step_trace(s3_schema())));

    CHECK(congruent(
        td,
        "init((recv(d2,l1).conf(d2,l2)|recv(msg(s3),ld).conf(msg(s3),l2))"
        ".exec(s3,{d2},{d4}).(send(msg(d4@l2),ld)+send(err(x),ld)).send(d4,l1),l2)"
        ".(send(msg(s3),l2).(recv(ok(msg(s3)),l2)+recv(err(msg(s3)@l2),l2))"
        "|(recv(ok(d2),l2)+recv(err(d2@l2),l2)))"
        ".(recv(msg(d4@l2),l2)+recv(err(x),l2))"));
}

TEST_CASE("step trace fans multiple outputs out in parallel") {
    Trace t = make_step_trace(s1_schema());
    CHECK(marked_text(t) ==
          "^(recv(msg(s1),ld).(send(ok(msg(s1)),ld)+send(err(msg(s1)@l1),ld))"
          "|recv(d,ld).(send(ok(d),ld)+send(err(d@l1),ld)))"
          ".exec(s1,{d},{d1,d2})"
          ".((send(msg(d1@l1),ld)+send(err(x),ld))|(send(msg(d2@l1),ld)+send(err(x),ld)))"
          ".(send(d1,l1)|send(d2,l2))");
    CHECK(congruent(t,
                    "(recv(d,ld).conf(d,l1)|recv(msg(s1),ld).conf(msg(s1),l1))"
                    ".exec(s1,{d},{d1,d2})"
                    ".((send(msg(d1@l1),ld)+send(err(x),ld))"
                    "|(send(msg(d2@l1),ld)+send(err(x),ld)))"
                    ".(send(d1,l1)|send(d2,l2))"));
}

TEST_CASE("driver trace ships driver-held inputs and awaits their receipts") {
    Trace td = make_driver_trace(s1_schema());
    std::string text = marked_text(td);
    CHECK(text.find("send(d,l1).(recv(ok(d),l1)+recv(err(d@l1),l1))") != std::string::npos);
    CHECK(congruent(
        td,
        "init((recv(d,ld).conf(d,l1)|recv(msg(s1),ld).conf(msg(s1),l1))"
        ".exec(s1,{d},{d1,d2})"
        ".((send(msg(d1@l1),ld)+send(err(x),ld))|(send(msg(d2@l1),ld)+send(err(x),ld)))"
        ".(send(d1,l1)|send(d2,l2)),l1)"
        ".(send(msg(s1),l1).(recv(ok(msg(s1)),l1)+recv(err(msg(s1)@l1),l1))"
        "|send(d,l1).(recv(ok(d),l1)+recv(err(d@l1),l1)))"
        ".((recv(msg(d1@l1),l1)+recv(err(x),l1))|(recv(msg(d2@l1),l1)+recv(err(x),l1)))"));
}

TEST_CASE("a join step confirms each of its remote arrivals") {
    Trace t = make_step_trace(s4_schema());
    CHECK(marked_text(t) == "^" + kStepS4);
    CHECK(congruent(t,
                    "(recv(d3,l1).conf(d3,l1)|recv(d4,l2).conf(d4,l1)"
                    "|recv(msg(s4),ld).conf(msg(s4),l1))"
                    ".exec(s4,{d3,d4},{d5})"
                    ".(send(msg(d5@l1),ld)+send(err(x),ld))"));

    // No forwarding: d5 is terminal, the driver trace only awaits it.
    Trace td = make_driver_trace(s4_schema());
    CHECK(marked_text(td) ==
          "^init(" + kStepS4 +
              ",l1)"
              ".(send(msg(s4),l1).(recv(ok(msg(s4)),l1)+recv(err(msg(s4)@l1),l1))"
              "|(recv(ok(d3),l1)+recv(err(d3@l1),l1))"
              "|(recv(ok(d4),l1)+recv(err(d4@l1),l1)))"
              ".(recv(msg(d5@l1),l1)+recv(err(x),l1))");
}

TEST_CASE("stripping removes the data input exchanges on the worker side") {
    Trace stripped = strip_input(make_step_trace(s3_schema()));
    CHECK(marked_text(stripped) ==
          "^recv(msg(s3),ld).(send(ok(msg(s3)),ld)+send(err(msg(s3)@l2),ld))"
          ".exec(s3,{d2},{d4})"
          ".(send(msg(d4@l2),ld)+send(err(x),ld))"
          ".send(d4,l1)");
    CHECK(congruent(stripped,
                    "recv(msg(s3),ld).conf(msg(s3),l2).exec(s3,{d2},{d4})"
                    ".(send(msg(d4@l2),ld)+send(err(x),ld)).send(d4,l1)"));
}

TEST_CASE("stripping a driver trace drops the install and keeps the trigger") {
    Trace stripped = strip_input(make_driver_trace(s3_schema()));
    CHECK(marked_text(stripped) ==
          "^send(msg(s3),l2).(recv(ok(msg(s3)),l2)+recv(err(msg(s3)@l2),l2))"
          ".(recv(msg(d4@l2),l2)+recv(err(x),l2))");
}

TEST_CASE("stripping a zero-input trace only resets the pointer") {
    Trace t = make_step_trace(zero_input_schema());
    CHECK(marked_text(t) ==
          "^recv(msg(s9),ld).(send(ok(msg(s9)),ld)+send(err(msg(s9)@l3),ld))"
          ".exec(s9,{},{d7})"
          ".(send(msg(d7@l3),ld)+send(err(x),ld))"
          ".send(d7,l1)");
    CHECK(trace_eq(strip_input(t), t));

    Trace td = make_driver_trace(zero_input_schema());
    CHECK(marked_text(strip_input(td)) ==
          "^send(msg(s9),l3)"
          ".(recv(ok(msg(s9)),l3)+recv(err(msg(s9)@l3),l3))"
          ".(recv(msg(d7@l3),l3)+recv(err(x),l3))");
}

TEST_CASE("stripping a partially executed trace yields a fresh recovery trace") {
    Trace t = make_step_trace(s3_schema());
    REQUIRE(advance_by(t, "recv(msg(s3),ld)"));
    REQUIRE(advance_by(t, "send(ok(msg(s3)),ld)"));
    REQUIRE(advance_by(t, "recv(d2,l1)"));
    REQUIRE(has_done(t));

    Trace stripped = strip_input(t);
    CHECK(is_fresh(stripped));
    CHECK(trace_eq(stripped, strip_input(make_step_trace(s3_schema()))));

    // Idempotent on worker traces: a stripped trace is already input-free.
    CHECK(trace_eq(strip_input(stripped), stripped));
}

TEST_CASE("a recovery build with no exchanges equals the stripped trace") {
    for (const auto& sc : {s1_schema(), s2_schema(), s3_schema(), s4_schema(), zero_input_schema()}) {
        CHECK(trace_eq(make_recovery_step_trace(sc, {}), strip_input(make_step_trace(sc))));
        CHECK(trace_eq(make_recovery_driver_trace(sc, {}), strip_input(make_driver_trace(sc))));
    }
}

TEST_CASE("a recovery build can rewire an input to a surviving holder") {
    // d2 is re-fetched from the driver instead of its original producer; the
    // exec still checks the full input set.
    std::vector<InputSpec> ex = {{DataId{"d2"}, LocationId{"ld"}}};
    Trace t = make_recovery_step_trace(s3_schema(), ex);
    CHECK(marked_text(t) ==
          "^(recv(msg(s3),ld).(send(ok(msg(s3)),ld)+send(err(msg(s3)@l2),ld))"
          "|recv(d2,ld).(send(ok(d2),ld)+send(err(d2@l2),ld)))"
          ".exec(s3,{d2},{d4})"
          ".(send(msg(d4@l2),ld)+send(err(x),ld))"
          ".send(d4,l1)");

    Trace td = make_recovery_driver_trace(s3_schema(), ex);
    CHECK(marked_text(td) ==
          "^(send(msg(s3),l2).(recv(ok(msg(s3)),l2)+recv(err(msg(s3)@l2),l2))"
          "|send(d2,l2).(recv(ok(d2),l2)+recv(err(d2@l2),l2)))"
          ".(recv(msg(d4@l2),l2)+recv(err(x),l2))");
}

TEST_CASE("a recovery build keeps exchanges for inputs shipped by others") {
    // d4 still comes from its producing location; only the confirmation
    // reaches the driver.
    std::vector<InputSpec> ex = {{DataId{"d4"}, LocationId{"l2"}}};
    Trace td = make_recovery_driver_trace(s4_schema(), ex);
    CHECK(marked_text(td) ==
          "^(send(msg(s4),l1).(recv(ok(msg(s4)),l1)+recv(err(msg(s4)@l1),l1))"
          "|(recv(ok(d4),l1)+recv(err(d4@l1),l1)))"
          ".(recv(msg(d5@l1),l1)+recv(err(x),l1))");
}

TEST_CASE("recovery builds reject exchanges that are not step inputs") {
    CHECK_THROWS_AS(make_recovery_step_trace(s3_schema(), {{DataId{"d9"}, LocationId{"l1"}}}),
                    SchemaError);
    CHECK_THROWS_AS(make_recovery_driver_trace(
                        s3_schema(), {{DataId{"d2"}, LocationId{"l1"}}, {DataId{"d2"}, LocationId{"ld"}}}),
                    SchemaError);
    CHECK_THROWS_AS(make_recovery_step_trace(s3_schema(), {{DataId{"d2"}, LocationId{""}}}),
                    SchemaError);
}

TEST_CASE("built step traces open with receive actions only") {
    for (const auto& schema :
         {s1_schema(), s2_schema(), s3_schema(), s4_schema(), zero_input_schema()}) {
        Trace t = make_step_trace(schema);
        auto en = enabled_actions(t);
        REQUIRE(!en.empty());
        for (const auto& e : en) CHECK(std::holds_alternative<RecvAction>(*e.action));

        Trace td = make_driver_trace(schema);
        auto den = enabled_actions(td);
        REQUIRE(den.size() == 1);
        CHECK(std::holds_alternative<InitAction>(*den[0].action));
    }
}

TEST_CASE("built traces round trip through the canonical printer") {
    for (const auto& schema :
         {s1_schema(), s2_schema(), s3_schema(), s4_schema(), zero_input_schema()}) {
        Trace t = make_step_trace(schema);
        CHECK(trace_eq(parse_trace(print_trace(t)), normalize(t)));
        Trace td = make_driver_trace(schema);
        CHECK(trace_eq(parse_trace(print_trace(td)), normalize(td)));
        Trace st = strip_input(t);
        CHECK(trace_eq(parse_trace(print_trace(st)), normalize(st)));
    }
}

TEST_CASE("schema validation rejects missing names and duplicates") {
    auto base = s3_schema();

    auto broken = base;
    broken.step.name.clear();
    CHECK_THROWS_AS(make_step_trace(broken), SchemaError);

    broken = base;
    broken.location.name.clear();
    CHECK_THROWS_AS(make_step_trace(broken), SchemaError);

    broken = base;
    broken.driver.name.clear();
    CHECK_THROWS_AS(make_driver_trace(broken), SchemaError);

    broken = base;
    broken.inputs[0].source.name.clear();
    CHECK_THROWS_AS(make_step_trace(broken), SchemaError);

    broken = base;
    broken.inputs.push_back(broken.inputs[0]);
    CHECK_THROWS_AS(make_step_trace(broken), SchemaError);

    broken = base;
    broken.outputs.push_back(broken.outputs[0]);
    CHECK_THROWS_AS(make_driver_trace(broken), SchemaError);

    broken = base;
    broken.outputs[0].destinations.push_back(LocationId{""});
    CHECK_THROWS_AS(make_step_trace(broken), SchemaError);
}

TEST_CASE("strip rejects traces that are not builder shaped") {
    CHECK_THROWS_AS(strip_input(parse_trace("exec(s1,{d1},{d2})")), ShapeError);
    CHECK_THROWS_AS(strip_input(parse_trace("(send(d1,l1)|send(d2,l2))")), ShapeError);
    CHECK_THROWS_AS(strip_input(parse_trace("send(d1,l1).send(d2,l1)")), ShapeError);
    // Input part without a trigger exchange.
    CHECK_THROWS_AS(strip_input(parse_trace("(recv(d1,l1).conf(d1,l2)|recv(d2,l1).conf(d2,l2))"
                                            ".exec(s1,{d1,d2},{d3})")),
                    ShapeError);
    // Trigger present but no exec on the worker side.
    CHECK_THROWS_AS(strip_input(parse_trace("(recv(msg(s1),ld).conf(msg(s1),l1)"
                                            "|recv(d1,l2).conf(d1,l1)).send(d3,l1)")),
                    ShapeError);
}
