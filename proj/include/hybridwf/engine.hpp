#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hybridwf/errors.hpp"
#include "hybridwf/provenance.hpp"
#include "hybridwf/trace.hpp"
#include "hybridwf/trace_schema.hpp"
#include "hybridwf/values.hpp"

namespace hybridwf {

// One location: its saved values, its installed trace, and whether it is
// currently reachable. A failed location stays dead until revive_vtime and
// no rule fires at it meanwhile.
struct LocationCfg {
    LocationId id;
    ValueSet data;
    Trace trace = nil_trace();
    bool alive = true;
    long long revive_vtime = 0;
};

// The driver: failure-free coordinator holding the workflow structure, the
// step-to-location mapping, the step schemas, and the provenance record.
struct DriverCfg {
    LocationCfg loc;
    // Parallel composition of the worker traces of every instance; kept as
    // the workflow's structural description.
    Trace workflow_trace = nil_trace();
    std::map<StepId, LocationId> mapping;
    std::map<StepId, StepSchema> schemas;
    ProvenanceGraph provenance;
    // Steps whose re-execution is already installed and has not completed;
    // a second concurrent recovery of the same step defers to the first.
    std::set<StepId> active_recoveries;
};

enum class Rule { Init, Exec, Trans, TransErr, LostData, RecStep, RecDataSet, RecData, RecMsg, Fault };

const char* rule_name(Rule r);
Rule rule_from_name(const std::string& name);  // throws LogFormatError on unknown names

// Scheduling rank of a rule; smaller fires first. Error propagation and
// recovery outrank regular progress so pending failures drain before new
// work starts.
int rule_priority(Rule r);

// One applicable rule occurrence with its bindings.
struct RuleInstance {
    Rule rule;
    // Location owning the pointed action: the sender for transfers, the
    // executing location for exec, the driver for init and recovery.
    LocationId at;
    TracePath path;
    // Transfer receiver and its pointed receive.
    LocationId peer;
    TracePath peer_path;
    // Concrete transferred value, or the err value consumed by a recovery
    // rule. For schematic err sends this is already the resolved err.
    Value value = DataVal{};
    StepId step;
    // Canonical identity; equal-priority instances order by this string.
    std::string key;
};

enum class ExecOutcome { Success, SoftError, MissingInput };
enum class TransferOutcome { Delivered, TransferFailed };

struct RuleEvent {
    long long seq = 0;
    long long vtime = 0;
    Rule rule = Rule::Init;
    std::vector<LocationId> locations;
    // Trace positions of the fired action and, for transfers, of the
    // receiving action; replay keys on (rule, paths, action).
    std::string path_text;
    std::string peer_path_text;
    std::string action;
    std::string outcome;
    std::vector<std::pair<LocationId, Value>> values_added;
    std::vector<std::pair<LocationId, Value>> values_removed;
    std::uint64_t pre_digest = 0;
    std::uint64_t post_digest = 0;
};

// One JSON object per event; the JSONL event log is these joined by
// newlines.
std::string event_to_json(const RuleEvent& e);

struct SystemState {
    DriverCfg driver;
    std::map<LocationId, LocationCfg> locations;
    std::vector<RuleEvent> event_log;
};

// Canonical single-line-per-location rendering of the whole state; the
// digest is a 64-bit FNV-1a over it. The event log is not part of the
// state text.
std::string state_text(const SystemState& s);
std::uint64_t state_digest(const SystemState& s);
std::string digest_hex(std::uint64_t d);

// All applicable rule instances, ordered by (priority, key). Premises are
// checked here: transfers need a matching send/receive pair with the value
// on the sender, exec needs its trigger or a missing input, recovery needs
// the corresponding err value at the driver. Nothing is enabled at a dead
// location.
std::vector<RuleInstance> enabled_redexes(const SystemState& s);

// Rule applications. Each mutates the state, appends one event and returns
// it. vtime is recorded on the event and on fired trace nodes.
const RuleEvent& apply_init(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_exec(SystemState& s, const RuleInstance& inst, ExecOutcome outcome,
                            long long vtime = 0);
const RuleEvent& apply_trans(SystemState& s, const RuleInstance& inst, TransferOutcome outcome,
                             long long vtime = 0);
const RuleEvent& apply_trans_err(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_lost_data(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_rec_step(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_rec_data_set(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_rec_data(SystemState& s, const RuleInstance& inst, long long vtime = 0);
const RuleEvent& apply_rec_msg(SystemState& s, const RuleInstance& inst, long long vtime = 0);

// Location failure bookkeeping shared by the failure simulator and replay.
// A wipe clears the location's store, records the loss in the provenance
// graph and marks the location dead until revive_vtime; traces stay in
// place, so an in-flight execution later reports its missing inputs. The
// driver can never be wiped.
const RuleEvent& apply_fault_wipe(SystemState& s, const LocationId& l, long long vtime,
                                  long long revive_vtime);
const RuleEvent& apply_fault_revive(SystemState& s, const LocationId& l, long long vtime);

// Parses one line of the JSONL event log. The value lists are informational
// and are not read back; replay re-derives them.
RuleEvent event_from_json(const std::string& line);

struct ReplayResult {
    long long events_applied = 0;
};

// Re-applies a logged reduction against s, which must be the same initial
// state the log was produced from. Each event is re-found among the enabled
// instances by (rule, paths, action) and re-applied with the logged outcome;
// the digest chain is checked at every step.
ReplayResult replay_events(SystemState& s, const std::vector<RuleEvent>& log);

// Supplies outcomes for exec attempts and transfers. The default never
// fails anything.
class FaultOracle {
public:
    virtual ~FaultOracle() = default;
    virtual ExecOutcome exec_outcome(const SystemState&, const RuleInstance&) {
        return ExecOutcome::Success;
    }
    virtual TransferOutcome transfer_outcome(const SystemState&, const RuleInstance&) {
        return TransferOutcome::Delivered;
    }
};

// Applies one instance, consulting the oracle where an outcome is needed.
// A missing input forces the missing-input exec outcome regardless of the
// oracle.
const RuleEvent& apply(SystemState& s, const RuleInstance& inst, FaultOracle& oracle,
                       long long vtime = 0);

enum class SchedulerKind { Priority, SeededRandom };

struct RunOptions {
    SchedulerKind scheduler = SchedulerKind::Priority;
    std::uint64_t seed = 0;
    long long budget = 100000;
    FaultOracle* oracle = nullptr;
    long long vtime = 0;
};

struct RunStats {
    long long steps_applied = 0;
};

// Repeatedly applies enabled instances until quiescence. The priority
// scheduler always takes the first instance of the ordered enumeration; the
// seeded-random scheduler draws uniformly from it. Throws
// BudgetExhaustedError when the budget runs out with work remaining and
// StuckError when the quiescent state still holds err values.
RunStats run(SystemState& s, const RunOptions& opts = {});

}  // namespace hybridwf
