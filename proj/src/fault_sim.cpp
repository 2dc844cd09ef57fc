#include "hybridwf/fault_sim.hpp"

#include <algorithm>
#include <deque>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace hybridwf {

const char* failure_type_name(FailureType t) {
    switch (t) {
        case FailureType::Tool: return "tool";
        case FailureType::Resource: return "resource";
        case FailureType::Transfer: return "transfer";
    }
    return "?";
}

FailureType failure_type_from_name(const std::string& name) {
    if (name == "tool") return FailureType::Tool;
    if (name == "resource") return FailureType::Resource;
    if (name == "transfer") return FailureType::Transfer;
    throw ValidationFailedError("unknown failure type '" + name + "'");
}

namespace {

[[noreturn]] void bad_cfg(const std::string& what) { throw ValidationFailedError(what); }

void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                 const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) bad_cfg(std::string(where) + ": unknown key '" + it.key() + "'");
    }
}

FaultRule parse_rule(const nlohmann::json& j, const std::string& who) {
    if (!j.is_object()) bad_cfg("rule for " + who + " must be an object");
    expect_keys(j, {"probability", "type"}, "fault rule");
    FaultRule r;
    if (j.contains("probability")) {
        if (!j["probability"].is_number()) bad_cfg("probability for " + who + " must be a number");
        r.probability = j["probability"].get<double>();
    }
    if (r.probability < 0.0 || r.probability > 1.0)
        bad_cfg("probability for " + who + " is outside [0,1]");
    if (j.contains("type")) r.type = failure_type_from_name(j["type"].get<std::string>());
    return r;
}

ScheduledOutcome parse_outcome(const std::string& name) {
    if (name == "success") return ScheduledOutcome::Success;
    if (name == "tool") return ScheduledOutcome::Tool;
    if (name == "resource") return ScheduledOutcome::Resource;
    bad_cfg("unknown scheduled outcome '" + name + "'");
}

}  // namespace

FaultConfig parse_fault_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        bad_cfg(std::string("fault config is not valid JSON: ") + ex.what());
    }
    if (!j.is_object()) bad_cfg("fault config must be a JSON object");
    expect_keys(j, {"step_rules", "location_rules", "schedule"}, "fault config");

    FaultConfig cfg;
    if (j.contains("step_rules")) {
        if (!j["step_rules"].is_object()) bad_cfg("step_rules must be an object");
        for (auto it = j["step_rules"].begin(); it != j["step_rules"].end(); ++it)
            cfg.step_rules[it.key()] = parse_rule(it.value(), "step '" + it.key() + "'");
    }
    if (j.contains("location_rules")) {
        if (!j["location_rules"].is_object()) bad_cfg("location_rules must be an object");
        for (auto it = j["location_rules"].begin(); it != j["location_rules"].end(); ++it)
            cfg.location_rules[LocationId{it.key()}] =
                parse_rule(it.value(), "location '" + it.key() + "'");
    }
    if (j.contains("schedule")) {
        if (!j["schedule"].is_array()) bad_cfg("schedule must be an array");
        for (const auto& entry : j["schedule"]) {
            if (!entry.is_object()) bad_cfg("schedule entries must be objects");
            expect_keys(entry, {"step", "outcome"}, "schedule entry");
            if (!entry.contains("step") || !entry.contains("outcome"))
                bad_cfg("schedule entries need 'step' and 'outcome'");
            ScheduledFault f;
            try {
                f.step = parse_step_id(entry["step"].get<std::string>());
            } catch (const std::invalid_argument& ex) {
                bad_cfg(std::string("bad schedule step id: ") + ex.what());
            }
            f.outcome = parse_outcome(entry["outcome"].get<std::string>());
            cfg.schedule.push_back(std::move(f));
        }
    }
    return cfg;
}

SimParams parse_sim_params(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        bad_cfg(std::string("sim params are not valid JSON: ") + ex.what());
    }
    if (!j.is_object()) bad_cfg("sim params must be a JSON object");
    expect_keys(j,
                {"seed", "retry_delay", "step_duration", "transfer_duration", "retry_cap",
                 "step_durations"},
                "sim params");

    SimParams p;
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("retry_delay")) p.retry_delay = j["retry_delay"].get<long long>();
    if (j.contains("step_duration")) p.step_duration = j["step_duration"].get<long long>();
    if (j.contains("transfer_duration"))
        p.transfer_duration = j["transfer_duration"].get<long long>();
    if (j.contains("retry_cap")) p.retry_cap = j["retry_cap"].get<int>();
    if (j.contains("step_durations")) {
        if (!j["step_durations"].is_object()) bad_cfg("step_durations must be an object");
        for (auto it = j["step_durations"].begin(); it != j["step_durations"].end(); ++it)
            p.step_durations[it.key()] = it.value().get<long long>();
    }

    if (p.retry_delay < 0) bad_cfg("retry_delay must be non-negative");
    if (p.step_duration < 0 || p.transfer_duration < 0) bad_cfg("durations must be non-negative");
    for (const auto& [base, d] : p.step_durations)
        if (d < 0) bad_cfg("duration for step '" + base + "' must be non-negative");
    if (p.retry_cap < 0) bad_cfg("retry_cap must be non-negative");
    return p;
}

std::string gantt_to_csv(const std::vector<GanttEntry>& rows) {
    std::ostringstream out;
    out << "workflow,step,location,start,end,outcome\n";
    for (const GanttEntry& g : rows)
        out << g.workflow << ',' << g.step.str() << ',' << g.location.str() << ',' << g.start
            << ',' << g.end << ',' << g.outcome << '\n';
    return out.str();
}

namespace {

// Virtual-clock driver around the reduction engine. All state changes go
// through rule applications, so the produced event log replays cleanly.
class Simulation {
public:
    Simulation(const WorkflowSpec& spec, const FaultConfig& cfg, const SimParams& params,
               const PlacementOverrides& placement)
        : spec_(spec), cfg_(cfg), params_(params), rng_(params.seed) {
        rep_.state = compile(spec, placement);

        std::set<StepId> known;
        for (const StepInstance& inst : unroll(spec, placement)) {
            known.insert(inst.id);
            for (const DataId& d : inst.outputs) produced_by_[d] = inst.id;
        }
        for (const ScheduledFault& f : cfg.schedule) {
            if (!known.count(f.step))
                bad_cfg("schedule references unknown instance " + f.step.str());
            schedule_[f.step].push_back(f.outcome);
        }
    }

    ExperimentReport run() {
        SystemState& s = rep_.state;
        const long long guard_limit = 1000000;
        for (long long guard = 0;; ++guard) {
            if (guard > guard_limit)
                throw BudgetExhaustedError("simulation exceeded " +
                                           std::to_string(guard_limit) + " events");
            std::vector<RuleInstance> insts = enabled_redexes(s);

            // A missing-input exec is the detection of loss, not work. It
            // fires only once nothing productive is enabled and no location
            // is awaiting revival; otherwise its zero-width window would
            // preempt producers still on the way, or a bystander step would
            // report a loss that the preempted step itself must report after
            // its location returns.
            std::optional<std::size_t> best;
            long long best_start = 0, best_done = 0;
            for (int tier = 0; tier < 2 && !best; ++tier) {
                if (tier == 1 && !revives_.empty()) break;
                for (std::size_t i = 0; i < insts.size(); ++i) {
                    bool detect = insts[i].rule == Rule::Exec && inputs_missing(insts[i]);
                    if (detect != (tier == 1)) continue;
                    auto [st, dn] = window(insts[i]);
                    if (!best || dn < best_done) {
                        best = i;
                        best_start = st;
                        best_done = dn;
                    }
                }
            }

            if (!revives_.empty() && (!best || revives_.begin()->first <= best_done)) {
                auto [rv, rl] = *revives_.begin();
                revives_.erase(revives_.begin());
                now_ = std::max(now_, rv);
                apply_fault_revive(s, rl, rv);
                continue;
            }
            if (!best) break;
            step(insts[*best], best_start, best_done);
        }

        // Quiescence with unconsumed failures means the recovery rules could
        // not drain them.
        std::vector<std::string> stuck;
        auto scan = [&stuck](const LocationCfg& lc) {
            for (const Value& v : lc.data)
                if (is_err(v)) stuck.push_back(to_text(v) + " at " + lc.id.str());
        };
        scan(s.driver.loc);
        for (const auto& [id, lc] : s.locations) scan(lc);
        if (!stuck.empty()) {
            std::string what = "quiescent with pending failures:";
            for (const std::string& p : stuck) what += " " + p;
            throw StuckError(what);
        }

        rep_.outputs = terminal_outputs(s, spec_);
        rep_.workflow_count = next_wf_ - 1;
        return std::move(rep_);
    }

private:
    const LocationCfg& loc_of(const LocationId& id) const {
        const SystemState& s = rep_.state;
        if (id == s.driver.loc.id) return s.driver.loc;
        return s.locations.at(id);
    }

    long long busy(const LocationId& id) const {
        auto it = busy_until_.find(id);
        return it == busy_until_.end() ? 0 : it->second;
    }

    const ExecAction* exec_action(const RuleInstance& inst) const {
        const Trace* n = find_node(loc_of(inst.at).trace, inst.path);
        return n && n->kind == TraceKind::Act ? std::get_if<ExecAction>(&*n->action) : nullptr;
    }

    bool inputs_missing(const RuleInstance& inst) const {
        const ExecAction* ex = exec_action(inst);
        const ValueSet& data = loc_of(inst.at).data;
        for (const DataId& d : ex->inputs)
            if (!data.count(Value{DataVal{d}})) return true;
        return false;
    }

    // Earliest [start, event] window of an instance under the virtual clock.
    std::pair<long long, long long> window(const RuleInstance& inst) const {
        const SystemState& s = rep_.state;
        long long st = now_;
        long long dn;
        switch (inst.rule) {
            case Rule::Exec: {
                st = std::max({now_, ready_vtime(loc_of(inst.at).trace, inst.path),
                               busy(inst.at)});
                dn = inputs_missing(inst) ? st : st + params_.duration_of(inst.step.name);
                break;
            }
            case Rule::Trans:
            case Rule::TransErr: {
                st = std::max({now_, ready_vtime(loc_of(inst.at).trace, inst.path),
                               ready_vtime(loc_of(inst.peer).trace, inst.peer_path)});
                dn = inst.rule == Rule::Trans ? st + params_.transfer_duration : st;
                break;
            }
            case Rule::Init:
            case Rule::RecStep:
            case Rule::RecDataSet:
            case Rule::RecData:
            case Rule::RecMsg:
                st = std::max(now_, ready_vtime(s.driver.loc.trace, inst.path));
                dn = st;
                break;
            case Rule::LostData:
            case Rule::Fault:
            default:
                dn = st;
                break;
        }
        return {st, dn};
    }

    std::string workflow_of(const StepId& st) const {
        auto it = claims_.find(st);
        return it == claims_.end() ? "wf1" : "wf" + std::to_string(it->second.first);
    }

    void note_exec_applied(const StepId& st) {
        auto it = claims_.find(st);
        if (it != claims_.end()) remaining_[it->second.second].erase(st);
    }

    void mint_plan(const StepId& failed, FailureType cause, long long detect) {
        const StepSchema& sc = rep_.state.driver.schemas.at(failed);
        std::vector<DataId> ins;
        for (const InputSpec& in : sc.inputs) ins.push_back(in.data);
        RecoveryPlan plan = plan_rollback(rep_.state.driver.provenance, failed, ins);
        plan.recovery_id = next_wf_++;

        // A step already owned by a plan that has not finished re-running it
        // is not re-run twice; the later plan waits on the owner.
        std::vector<StepId> kept;
        for (const StepId& x : plan.steps_to_rerun) {
            auto it = claims_.find(x);
            if (it != claims_.end() && remaining_[it->second.second].count(x)) {
                plan.depends_on.insert({it->second.first, x});
            } else {
                kept.push_back(x);
            }
        }
        plan.steps_to_rerun = kept;

        std::size_t track = remaining_.size();
        remaining_.emplace_back(kept.begin(), kept.end());
        for (const StepId& x : kept) claims_[x] = {plan.recovery_id, track};
        rep_.recoveries.push_back({std::move(plan), failed, cause, detect});
    }

    // Outcome of one exec attempt. Forced missing inputs bypass injection;
    // otherwise a scheduled entry is consumed, and only a first attempt
    // samples the configured probability.
    void step_exec(const RuleInstance& inst, long long start, long long done) {
        SystemState& s = rep_.state;
        const StepId st = inst.step;
        const bool first = attempted_.insert(st).second;

        if (inputs_missing(inst)) {
            apply_exec(s, inst, ExecOutcome::MissingInput, start);
            now_ = std::max(now_, start);
            note_exec_applied(st);
            long long detect = start;
            if (auto it = last_wipe_.find(inst.at); it != last_wipe_.end()) detect = it->second;
            mint_plan(st, FailureType::Resource, detect);
            return;
        }

        std::optional<ScheduledOutcome> forced;
        if (auto it = schedule_.find(st); it != schedule_.end() && !it->second.empty()) {
            forced = it->second.front();
            it->second.pop_front();
        }

        FailureType inject = FailureType::Tool;
        bool failing = false;
        if (forced) {
            if (*forced != ScheduledOutcome::Success && injected_[st] < params_.retry_cap) {
                failing = true;
                inject = *forced == ScheduledOutcome::Tool ? FailureType::Tool
                                                           : FailureType::Resource;
            }
        } else if (first) {
            double u = rng_.uniform();
            const FaultRule* rule = nullptr;
            if (auto sit = cfg_.step_rules.find(st.name); sit != cfg_.step_rules.end())
                rule = &sit->second;
            else if (auto lit = cfg_.location_rules.find(inst.at);
                     lit != cfg_.location_rules.end())
                rule = &lit->second;
            if (rule && rule->type != FailureType::Transfer && u < rule->probability &&
                injected_[st] < params_.retry_cap) {
                failing = true;
                inject = rule->type;
            }
        }

        if (failing && inject == FailureType::Resource) {
            injected_[st]++;
            apply_fault_wipe(s, inst.at, start, start + params_.retry_delay);
            revives_.insert({start + params_.retry_delay, inst.at});
            last_wipe_[inst.at] = start;
            now_ = std::max(now_, start);
            rep_.gantt.push_back({workflow_of(st), st, inst.at, start, start, "failed"});
            return;
        }

        if (failing) {
            injected_[st]++;
            apply_exec(s, inst, ExecOutcome::SoftError, done);
            soft_detect_[st] = done;
        } else {
            apply_exec(s, inst, ExecOutcome::Success, done);
        }
        busy_until_[inst.at] = done;
        now_ = std::max(now_, done);
        note_exec_applied(st);
        rep_.gantt.push_back(
            {workflow_of(st), st, inst.at, start, done, failing ? "failed" : "success"});
    }

    void step_trans(const RuleInstance& inst, long long done) {
        SystemState& s = rep_.state;
        TransferOutcome out = TransferOutcome::Delivered;
        const auto* dv = std::get_if<DataVal>(&inst.value);
        if (dv && !is_confirmation(inst.value)) {
            std::pair<DataId, LocationId> key{dv->id, inst.peer};
            if (t_attempted_.insert(key).second) {
                double u = rng_.uniform();
                const FaultRule* rule = nullptr;
                if (auto pit = produced_by_.find(dv->id); pit != produced_by_.end()) {
                    auto sit = cfg_.step_rules.find(pit->second.name);
                    if (sit != cfg_.step_rules.end() && sit->second.type == FailureType::Transfer)
                        rule = &sit->second;
                }
                if (!rule) {
                    auto lit = cfg_.location_rules.find(inst.at);
                    if (lit != cfg_.location_rules.end() &&
                        lit->second.type == FailureType::Transfer)
                        rule = &lit->second;
                }
                if (rule && u < rule->probability && t_injected_[key] < params_.retry_cap) {
                    t_injected_[key]++;
                    out = TransferOutcome::TransferFailed;
                }
            }
        }
        apply_trans(s, inst, out, done);
        now_ = std::max(now_, done);
    }

    void step(const RuleInstance& inst, long long start, long long done) {
        SystemState& s = rep_.state;
        switch (inst.rule) {
            case Rule::Exec:
                step_exec(inst, start, done);
                return;
            case Rule::Trans:
                step_trans(inst, done);
                return;
            case Rule::TransErr:
                apply_trans_err(s, inst, done);
                break;
            case Rule::Init:
                apply_init(s, inst, done);
                break;
            case Rule::LostData:
                apply_lost_data(s, inst, done);
                break;
            case Rule::RecStep: {
                apply_rec_step(s, inst, done);
                long long detect = done;
                if (auto it = soft_detect_.find(inst.step); it != soft_detect_.end())
                    detect = it->second;
                mint_plan(inst.step, FailureType::Tool, detect);
                break;
            }
            case Rule::RecDataSet:
                apply_rec_data_set(s, inst, done);
                break;
            case Rule::RecData:
                apply_rec_data(s, inst, done);
                break;
            case Rule::RecMsg:
                apply_rec_msg(s, inst, done);
                break;
            case Rule::Fault:
                break;
        }
        now_ = std::max(now_, done);
    }

    const WorkflowSpec& spec_;
    const FaultConfig& cfg_;
    const SimParams& params_;
    SplitMix64 rng_;
    ExperimentReport rep_;

    long long now_ = 0;
    std::map<LocationId, long long> busy_until_;
    std::set<std::pair<long long, LocationId>> revives_;
    std::map<LocationId, long long> last_wipe_;

    std::set<StepId> attempted_;
    std::map<StepId, int> injected_;
    std::set<std::pair<DataId, LocationId>> t_attempted_;
    std::map<std::pair<DataId, LocationId>, int> t_injected_;
    std::map<StepId, std::deque<ScheduledOutcome>> schedule_;
    std::map<StepId, long long> soft_detect_;
    std::map<DataId, StepId> produced_by_;

    // Recovery bookkeeping: per-plan unfinished steps and, per step, the
    // owning workflow ordinal with its track index.
    std::vector<std::set<StepId>> remaining_;
    std::map<StepId, std::pair<int, std::size_t>> claims_;
    int next_wf_ = 2;
};

}  // namespace

ExperimentReport run_experiment(const WorkflowSpec& spec, const FaultConfig& cfg,
                                const SimParams& params, const PlacementOverrides& placement) {
    Simulation sim(spec, cfg, params, placement);
    return sim.run();
}

}  // namespace hybridwf
