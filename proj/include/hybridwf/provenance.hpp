#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hybridwf/errors.hpp"
#include "hybridwf/ids.hpp"
#include "hybridwf/trace_schema.hpp"

namespace hybridwf {

// One datum as the driver tracks it: who made it and where copies are known
// to live. A token with no known location is lost and must be regenerated by
// re-running its producer.
struct Token {
    DataId data;
    // Empty for workflow inputs held by the driver from the start.
    std::optional<StepId> producer;
    std::set<LocationId> known_locations;
    // Inputs of the producing step, in identifier order. Empty for initial
    // data.
    std::vector<DataId> parents;

    bool available() const { return !known_locations.empty(); }
};

// Driver-side record of every datum seen during a run. Parent links always
// point from an output to the inputs it was computed from, so the graph is
// acyclic whenever the workflow is.
class ProvenanceGraph {
public:
    // Registers a workflow input held by the driver.
    void record_initial(const DataId& d, const LocationId& driver);

    // Registers d as produced by `producer` at `at` from the given inputs.
    // Re-production after recovery updates the same token. Throws
    // UnknownInputError when an input has no token yet.
    void record_production(const DataId& d, const StepId& producer, const LocationId& at,
                           const std::vector<DataId>& producer_inputs);

    // Adds a location that now holds a copy of d. Unknown data is an error.
    void record_delivery(const DataId& d, const LocationId& at);

    // Forgets every copy at l. Tokens whose only copy lived there become
    // lost.
    void record_loss(const LocationId& l);

    const Token* find(const DataId& d) const;
    bool available(const DataId& d) const;

    // Tokens in identifier order.
    std::vector<const Token*> tokens() const;

    bool acyclic() const;

    // Graphviz rendering; availability decides the node fill.
    std::string to_dot() const;

private:
    std::map<DataId, Token> tokens_;
};

// What to re-run after a failure, and with which surviving inputs.
struct RecoveryPlan {
    // Ordinal of the recovery workflow; rendering prefixes "wf".
    int recovery_id = 0;
    // Re-executed instances: producers in discovery order, the failed
    // instance last.
    std::vector<StepId> steps_to_rerun;
    // Surviving inputs with the location each is fetched from.
    std::set<std::pair<DataId, LocationId>> available_inputs;
    // The plan ends with this instance; downstream work stays in the
    // original workflow.
    StepId stop_after;
    // Steps owned by an earlier concurrent plan whose outputs this plan
    // waits for.
    std::set<std::pair<int, StepId>> depends_on;
};

// Walks the graph backwards from the failed instance's inputs: available
// tokens become plan inputs (fetched from their first known location),
// lost tokens put their producer on the re-run list and recurse into the
// producer's inputs. Throws UnrecoverableError when a lost token has no
// producer, and UnknownInputError when an input has no token.
RecoveryPlan plan_rollback(const ProvenanceGraph& g, const StepId& failed,
                           const std::vector<DataId>& failed_inputs);

// Trace material realizing a plan.
struct RecoverySynthesis {
    // One entry per re-run step, in plan order. The worker trace installs at
    // the step's location, the driver trace attaches to the driver.
    std::vector<std::pair<StepId, Trace>> worker_traces;
    std::vector<std::pair<StepId, Trace>> driver_traces;
    // Bare sends spawned at surviving holders that re-ship a datum.
    std::vector<std::pair<LocationId, Trace>> transfer_sends;
};

// Builds the re-run traces for a plan. Inputs produced inside the plan (or
// by a step owned by a depended-on plan) keep their original exchange;
// available inputs already on the consumer's location need none; the rest
// are rewired to a surviving holder. Throws PlanInconsistentError when an
// input is neither available nor produced by the plan, or when a plan step
// has no schema.
RecoverySynthesis synthesize_recovery(const RecoveryPlan& plan,
                                      const std::map<StepId, StepSchema>& schemas);

// Resolves overlap between concurrent plans: the plan with the lowest
// recovery id keeps a shared step, later plans drop it and record a
// dependency on the owner instead.
void sync_concurrent(std::vector<RecoveryPlan>& plans);

// JSON renderings used by the reporting layer.
std::string plan_to_json(const RecoveryPlan& plan);
std::string plans_to_json(const std::vector<RecoveryPlan>& plans);

}  // namespace hybridwf
