#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hybridwf/engine.hpp"
#include "hybridwf/provenance.hpp"
#include "hybridwf/workflow.hpp"

namespace hybridwf {

// Pinned 64-bit generator (splitmix64). Injection decisions consume exactly
// one draw each, in decision order, so golden outcome sequences stay stable
// across platforms and refactors.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

enum class FailureType { Tool, Resource, Transfer };

const char* failure_type_name(FailureType t);
FailureType failure_type_from_name(const std::string& name);

// One injection rule. Step rules are keyed by step base name and win over
// location rules for the same decision.
struct FaultRule {
    double probability = 0.0;
    FailureType type = FailureType::Tool;
};

// Forced outcome for one exec attempt of one instance. Entries for the same
// instance form a queue consumed attempt by attempt; Success forces a clean
// run even where a rule would fire.
enum class ScheduledOutcome { Success, Tool, Resource };

struct ScheduledFault {
    StepId step;
    ScheduledOutcome outcome = ScheduledOutcome::Success;
};

struct FaultConfig {
    std::map<std::string, FaultRule> step_rules;
    std::map<LocationId, FaultRule> location_rules;
    std::vector<ScheduledFault> schedule;
};

struct SimParams {
    std::uint64_t seed = 0;
    long long retry_delay = 20;
    long long step_duration = 1;
    long long transfer_duration = 0;
    int retry_cap = 10;
    // Per-base overrides of step_duration.
    std::map<std::string, long long> step_durations;

    long long duration_of(const std::string& base) const {
        auto it = step_durations.find(base);
        return it == step_durations.end() ? step_duration : it->second;
    }
};

// Strict JSON readers; unknown keys, out-of-range probabilities, negative
// durations and malformed ids all throw ValidationFailedError.
FaultConfig parse_fault_config(const std::string& text);
SimParams parse_sim_params(const std::string& text);

// One executed (or preempted) step attempt. A Resource preemption appears as
// a zero-width failed row at the moment the location was lost; the missing
// input report after revival is bookkeeping and has no row.
struct GanttEntry {
    std::string workflow;  // "wf1" for the original run, "wf2".. for recoveries
    StepId step;
    LocationId location;
    long long start = 0;
    long long end = 0;
    std::string outcome;  // "success" | "failed"
};

// Header line plus one row per entry: workflow,step,location,start,end,outcome.
std::string gantt_to_csv(const std::vector<GanttEntry>& rows);

// A rollback plan minted at one failure detection, with the virtual time the
// failure was detected (the wipe time for Resource, the reporting exec's end
// for Tool).
struct RecoveryRecord {
    RecoveryPlan plan;
    StepId failed;
    FailureType cause = FailureType::Tool;
    long long detect_vtime = 0;
};

struct ExperimentReport {
    SystemState state;
    std::vector<GanttEntry> gantt;
    std::vector<RecoveryRecord> recoveries;
    std::set<DataId> outputs;
    int workflow_count = 1;
};

// Compiles the document and drives the reduction engine under a virtual
// clock: execs occupy their location for the step's duration, transfers take
// transfer_duration, coordination rules are instantaneous. Failures are
// injected per the config on first attempts only; a Resource hit wipes the
// location at the would-be exec start and revives it retry_delay later.
// Throws engine errors, and IncompleteRunError when the terminal outputs are
// not all confirmed at quiescence.
ExperimentReport run_experiment(const WorkflowSpec& spec, const FaultConfig& cfg,
                                const SimParams& params, const PlacementOverrides& placement = {});

}  // namespace hybridwf
