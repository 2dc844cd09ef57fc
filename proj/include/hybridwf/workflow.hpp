#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hybridwf/engine.hpp"
#include "hybridwf/ids.hpp"
#include "hybridwf/trace_schema.hpp"

namespace hybridwf {

// Fan-out width of a step: a fixed instance count, or the width of the
// datum feeding the step's first input.
struct ScatterSpec {
    bool from_producer = false;
    int count = 0;

    bool operator==(const ScatterSpec&) const = default;
};

// One declared step. Identifiers are base names; indices are assigned by
// unrolling. `pool` lists candidate locations; instances are placed
// round-robin over it by scatter index.
struct StepDef {
    std::string name;
    std::vector<DataId> inputs;
    std::vector<DataId> outputs;
    std::vector<LocationId> pool;
    std::optional<ScatterSpec> scatter;
};

// Loop-carried rewiring: the datum `from` produced in iteration i feeds
// the input slot `to` in iteration i+1. In iteration 1 the slot reads the
// plain datum named `to`.
struct CarriedDatum {
    DataId from;
    DataId to;
};

struct LoopDef {
    std::vector<std::string> member_steps;
    int iterations = 1;
    std::vector<CarriedDatum> carried_data;
};

struct WorkflowSpec {
    std::vector<StepDef> steps;
    std::vector<LoopDef> loops;
    std::vector<DataId> initial_data;
    std::vector<LocationId> locations;
    LocationId driver;
};

struct Diagnostic {
    std::string kind;
    std::string detail;
};

// A step after unrolling: indices applied, inputs and outputs resolved to
// concrete datum ids, placement fixed.
struct StepInstance {
    StepId id;
    std::vector<DataId> inputs;
    std::vector<DataId> outputs;
    LocationId location;
    std::vector<StepId> deps;
};

using PlacementOverrides = std::map<StepId, LocationId>;

// Parses the JSON document form. Unknown keys anywhere are rejected, as
// are instance separators (#, @) inside declared names. Throws
// ValidationFailedError on malformed input.
WorkflowSpec parse_workflow_spec(const std::string& text);

// Structural and dataflow checks. Empty result means the spec satisfies
// every invariant; diagnostics name the offending steps and data.
std::vector<Diagnostic> validate(const WorkflowSpec& spec);

// Expands loops and scatter into concrete instances. Requires a spec that
// validates cleanly; on a broken spec the result is best-effort (validate
// uses it to phrase dataflow diagnostics). Single-iteration loops collapse
// to the loop-free body: no iteration index is applied.
std::vector<StepInstance> unroll(const WorkflowSpec& spec,
                                 const PlacementOverrides& placement = {});

// Builds the initial system: driver holding the initial data, one trigger
// per instance, the full schema and mapping tables, the parallel driver
// trace, and one empty live location per declared location. Throws
// ValidationFailedError when validate is non-empty.
SystemState compile(const WorkflowSpec& spec, const PlacementOverrides& placement = {});

// The sink outputs (data no instance consumes) whose produced-at messages
// reached the driver. Throws IncompleteRunError if any are missing.
std::set<DataId> terminal_outputs(const SystemState& state, const WorkflowSpec& spec);

}  // namespace hybridwf
