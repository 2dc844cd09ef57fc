#include "hybridwf/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>
#include <random>
#include <sstream>
#include <variant>

#include "hybridwf/trace_text.hpp"
#include "json.hpp"

namespace hybridwf {

const char* rule_name(Rule r) {
    switch (r) {
        case Rule::Init: return "Init";
        case Rule::Exec: return "Exec";
        case Rule::Trans: return "Trans";
        case Rule::TransErr: return "TransErr";
        case Rule::LostData: return "LostData";
        case Rule::RecStep: return "RecStep";
        case Rule::RecDataSet: return "RecDataSet";
        case Rule::RecData: return "RecData";
        case Rule::RecMsg: return "RecMsg";
        case Rule::Fault: return "Fault";
    }
    return "Unknown";
}

Rule rule_from_name(const std::string& name) {
    static const Rule all[] = {Rule::Init,     Rule::Exec,       Rule::Trans,   Rule::TransErr,
                               Rule::LostData, Rule::RecStep,    Rule::RecDataSet,
                               Rule::RecData,  Rule::RecMsg,     Rule::Fault};
    for (Rule r : all)
        if (name == rule_name(r)) return r;
    throw LogFormatError("unknown rule name: " + name);
}

int rule_priority(Rule r) {
    switch (r) {
        case Rule::TransErr: return 0;
        case Rule::LostData: return 1;
        case Rule::RecStep: return 2;
        case Rule::RecDataSet: return 3;
        case Rule::RecData: return 4;
        case Rule::RecMsg: return 5;
        case Rule::Trans: return 6;
        case Rule::Exec: return 7;
        case Rule::Init: return 8;
        case Rule::Fault: return 9;
    }
    return 9;
}

std::string state_text(const SystemState& s) {
    std::ostringstream os;
    auto line = [&os](const LocationCfg& lc) {
        os << lc.id.str() << "|" << (lc.alive ? "up" : "down") << "|" << to_text(lc.data) << "|"
           << marked_text(lc.trace) << "\n";
    };
    line(s.driver.loc);
    for (const auto& [id, lc] : s.locations) line(lc);
    return os.str();
}

std::uint64_t state_digest(const SystemState& s) {
    std::string text = state_text(s);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
    return buf;
}

std::string event_to_json(const RuleEvent& e) {
    nlohmann::ordered_json j;
    j["seq"] = e.seq;
    j["vtime"] = e.vtime;
    j["rule"] = rule_name(e.rule);
    auto locs = nlohmann::ordered_json::array();
    for (const auto& l : e.locations) locs.push_back(l.str());
    j["locations"] = std::move(locs);
    j["path"] = e.path_text;
    j["peer_path"] = e.peer_path_text;
    j["action"] = e.action;
    j["outcome"] = e.outcome;
    auto render = [](const std::vector<std::pair<LocationId, Value>>& side) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& [loc, v] : side) arr.push_back({loc.str(), to_text(v)});
        return arr;
    };
    j["values_added"] = render(e.values_added);
    j["values_removed"] = render(e.values_removed);
    j["pre_digest"] = digest_hex(e.pre_digest);
    j["post_digest"] = digest_hex(e.post_digest);
    return j.dump();
}

namespace {

LocationCfg* find_loc(SystemState& s, const LocationId& id) {
    if (id == s.driver.loc.id) return &s.driver.loc;
    auto it = s.locations.find(id);
    return it == s.locations.end() ? nullptr : &it->second;
}

const LocationCfg* find_loc(const SystemState& s, const LocationId& id) {
    if (id == s.driver.loc.id) return &s.driver.loc;
    auto it = s.locations.find(id);
    return it == s.locations.end() ? nullptr : &it->second;
}

LocationCfg& loc_or_create(SystemState& s, const LocationId& id) {
    if (LocationCfg* lc = find_loc(s, id)) return *lc;
    LocationCfg fresh;
    fresh.id = id;
    return s.locations.emplace(id, std::move(fresh)).first->second;
}

// New parallel component of a location's trace. A Nil root is replaced so
// installs on an empty location do not accumulate dead Nil leaves.
void attach_branch(Trace& t, Trace branch, long long vtime) {
    branch.spawn_vtime = vtime;
    if (t.kind == TraceKind::Nil)
        t = std::move(branch);
    else
        t = par(std::move(t), std::move(branch));
}

Value ack_value(const Value& v) {
    if (const auto* d = std::get_if<DataVal>(&v)) return DataAck{d->id};
    if (const auto* m = std::get_if<StepMsg>(&v)) return MsgAck{m->step};
    throw NotEnabledError("no confirmation form for " + to_text(v));
}

Value missing_value(const Value& v, const LocationId& at) {
    if (const auto* d = std::get_if<DataVal>(&v)) return Value{ErrVal{DataNotReceived{d->id, at}}};
    if (const auto* m = std::get_if<StepMsg>(&v)) return Value{ErrVal{MsgNotReceived{m->step, at}}};
    throw NotEnabledError("no missing-value form for " + to_text(v));
}

bool is_any_err(const Value& v) {
    const auto* e = std::get_if<ErrVal>(&v);
    return e && std::holds_alternative<AnyFailure>(e->failure);
}

// Resolves the concrete value moved by a send/receive pairing, or nothing if
// the pair cannot fire. An err(x) endpoint stands for any err value; a
// schematic sender offers the smallest err it holds that the receiver
// accepts.
std::optional<Value> match_transfer(const Value& sent, const Value& wanted,
                                    const ValueSet& sender_data) {
    bool s_any = is_any_err(sent);
    bool w_any = is_any_err(wanted);
    if (!s_any) {
        if (!sender_data.count(sent)) return std::nullopt;
        if (w_any) return is_err(sent) ? std::optional<Value>(sent) : std::nullopt;
        return sent == wanted ? std::optional<Value>(sent) : std::nullopt;
    }
    if (w_any) {
        for (const Value& v : sender_data)
            if (is_err(v) && !is_any_err(v)) return v;
        return std::nullopt;
    }
    if (is_err(wanted) && !is_any_err(wanted) && sender_data.count(wanted)) return wanted;
    return std::nullopt;
}

const ExecAction* find_exec_action(const Trace& t) {
    if (t.kind == TraceKind::Act) return std::get_if<ExecAction>(&*t.action);
    for (const auto& k : t.kids)
        if (const ExecAction* e = find_exec_action(k)) return e;
    return nullptr;
}

// A produced-at message is only a usable re-ship source while the driver's
// token record still lists the location; a message that outlived a wipe of
// its location (the lazy purge has not run yet) names a copy that is gone.
bool replica_confirmed(const SystemState& s, const DataId& d, const LocationId& at) {
    const Token* tok = s.driver.provenance.find(d);
    return tok && tok->known_locations.count(at) != 0;
}

// Exec actions not yet fired on any live branch of the trace.
void collect_pending_execs(const Trace& t, std::set<StepId>& out) {
    if (t.dead) return;
    if (t.kind == TraceKind::Act) {
        if (!t.done)
            if (const auto* ex = std::get_if<ExecAction>(&*t.action)) out.insert(ex->step);
        return;
    }
    for (const Trace& k : t.kids) collect_pending_execs(k, out);
}

// Steps whose trigger message completed a receive on this trace at least
// once, meaning the trigger reached the location's store at some point.
void collect_done_trigger_recvs(const Trace& t, std::set<StepId>& out) {
    if (t.kind == TraceKind::Act) {
        if (t.done)
            if (const auto* rc = std::get_if<RecvAction>(&*t.action))
                if (const auto* m = std::get_if<StepMsg>(&rc->value)) out.insert(m->step);
        return;
    }
    for (const Trace& k : t.kids) collect_done_trigger_recvs(k, out);
}

RuleEvent make_event(const SystemState& s, Rule r, long long vtime) {
    RuleEvent e;
    e.seq = static_cast<long long>(s.event_log.size());
    e.vtime = vtime;
    e.rule = r;
    e.pre_digest = state_digest(s);
    return e;
}

const RuleEvent& commit_event(SystemState& s, RuleEvent e) {
    e.post_digest = state_digest(s);
    s.event_log.push_back(std::move(e));
    return s.event_log.back();
}

void add_value(LocationCfg& lc, const Value& v, RuleEvent& e) {
    if (lc.data.insert(v).second) e.values_added.emplace_back(lc.id, v);
}

void remove_value(LocationCfg& lc, const Value& v, RuleEvent& e) {
    if (lc.data.erase(v)) e.values_removed.emplace_back(lc.id, v);
}

// Pointed action of the expected alternative, checked against the live
// frontier of the owning trace.
template <typename A>
const A* pointed(const Trace& t, const TracePath& path, const char* what) {
    const Trace* node = find_node(t, path);
    if (!node || node->kind != TraceKind::Act)
        throw NotEnabledError(std::string("no action at ") + to_text(path));
    const A* a = std::get_if<A>(&*node->action);
    if (!a) throw NotEnabledError(std::string(what) + " expected at " + to_text(path) +
                                  ", found " + to_text(*node->action));
    if (!is_enabled(t, path))
        throw NotEnabledError(std::string(what) + " at " + to_text(path) + " is not enabled");
    return a;
}

LocationCfg& live_loc(SystemState& s, const LocationId& id) {
    LocationCfg* lc = find_loc(s, id);
    if (!lc) throw NotEnabledError("unknown location " + id.str());
    if (!lc->alive) throw NotEnabledError("location " + id.str() + " is down");
    return *lc;
}

// After an exec fires, every report choice of that step on the location is
// decided the same way: the produced-message branch on success, the err
// branch otherwise. Report choices of other steps are never unresolved at
// this point, so the err(x) sends seen here all belong to this step.
void resolve_report(LocationCfg& lc, const ExecAction& ex, bool success, long long) {
    for (const EnabledAction& ea : enabled_actions(lc.trace)) {
        const auto* snd = std::get_if<SendAction>(ea.action);
        if (!snd || ea.path.empty()) continue;
        TracePath parent(ea.path.begin(), ea.path.end() - 1);
        const Trace* pn = find_node(lc.trace, parent);
        if (!pn || pn->kind != TraceKind::Choice) continue;
        int keep = ea.path.back();
        if (pn->kids[keep].dead || pn->kids[1 - keep].dead) continue;
        if (success) {
            const auto* pm = std::get_if<DataProducedMsg>(&snd->value);
            if (!pm || pm->at != lc.id || !ex.outputs.count(pm->id)) continue;
        } else {
            if (!is_any_err(snd->value)) continue;
        }
        resolve_choice(lc.trace, parent, keep);
    }
}

}  // namespace

std::vector<RuleInstance> enabled_redexes(const SystemState& s) {
    std::vector<RuleInstance> out;

    std::vector<const LocationCfg*> locs;
    locs.push_back(&s.driver.loc);
    for (const auto& [id, lc] : s.locations) locs.push_back(&lc);

    struct SendCand {
        const LocationCfg* from;
        TracePath path;
        const SendAction* send;
    };
    struct RecvCand {
        const LocationCfg* loc;
        TracePath path;
        const RecvAction* recv;
    };
    std::vector<SendCand> sends;
    std::vector<RecvCand> recvs;

    const LocationId& driver_id = s.driver.loc.id;
    const ValueSet& dd = s.driver.loc.data;

    for (const LocationCfg* lc : locs) {
        if (!lc->alive) continue;
        for (const EnabledAction& ea : enabled_actions(lc->trace)) {
            if (const auto* ex = std::get_if<ExecAction>(ea.action)) {
                bool has_msg = lc->data.count(Value{StepMsg{ex->step}}) != 0;
                bool missing = false;
                for (const DataId& d : ex->inputs)
                    if (!lc->data.count(Value{DataVal{d}})) {
                        missing = true;
                        break;
                    }
                if (!has_msg && !missing) continue;
                RuleInstance ri;
                ri.rule = Rule::Exec;
                ri.at = lc->id;
                ri.path = ea.path;
                ri.step = ex->step;
                ri.value = StepMsg{ex->step};
                ri.key = lc->id.str() + "|" + to_text(ea.path) + "|" + to_text(*ea.action);
                out.push_back(std::move(ri));
            } else if (const auto* ini = std::get_if<InitAction>(ea.action)) {
                if (lc->id != driver_id) continue;
                // A dead target cannot be contacted; installation waits for
                // its revival.
                if (const LocationCfg* target = find_loc(s, ini->at); target && !target->alive)
                    continue;
                RuleInstance ri;
                ri.rule = Rule::Init;
                ri.at = lc->id;
                ri.path = ea.path;
                ri.peer = ini->at;
                if (const ExecAction* pex = find_exec_action(*ini->payload)) ri.step = pex->step;
                ri.key = lc->id.str() + "|" + to_text(ea.path) + "|init(t(" + ri.step.str() +
                         ")," + ini->at.str() + ")";
                out.push_back(std::move(ri));
            } else if (const auto* rec = std::get_if<RecoverAction>(ea.action)) {
                if (lc->id != driver_id) continue;
                if (std::holds_alternative<AnyFailure>(rec->failure)) continue;
                Value err = Value{ErrVal{rec->failure}};
                if (!dd.count(err)) continue;
                RuleInstance ri;
                ri.at = lc->id;
                ri.path = ea.path;
                ri.value = err;
                if (const auto* sf = std::get_if<StepFailed>(&rec->failure)) {
                    ri.rule = Rule::RecStep;
                    ri.step = sf->step;
                } else if (std::holds_alternative<DataSetLost>(rec->failure)) {
                    ri.rule = Rule::RecDataSet;
                } else if (std::holds_alternative<DataNotReceived>(rec->failure)) {
                    ri.rule = Rule::RecData;
                } else {
                    ri.rule = Rule::RecMsg;
                    ri.step = std::get<MsgNotReceived>(rec->failure).step;
                }
                ri.key = lc->id.str() + "|" + to_text(ea.path) + "|" + to_text(*ea.action);
                out.push_back(std::move(ri));
            } else if (const auto* snd = std::get_if<SendAction>(ea.action)) {
                sends.push_back({lc, ea.path, snd});
            } else if (const auto* rcv = std::get_if<RecvAction>(ea.action)) {
                recvs.push_back({lc, ea.path, rcv});
            }
        }
    }

    for (const SendCand& sc : sends) {
        const LocationCfg* target = find_loc(s, sc.send->to);
        if (!target || !target->alive) continue;
        for (const RecvCand& rc : recvs) {
            if (rc.loc->id != sc.send->to) continue;
            if (rc.recv->from != sc.from->id) continue;
            std::optional<Value> conc = match_transfer(sc.send->value, rc.recv->value, sc.from->data);
            if (!conc) continue;
            RuleInstance ri;
            ri.rule = is_err(*conc) ? Rule::TransErr : Rule::Trans;
            ri.at = sc.from->id;
            ri.path = sc.path;
            ri.peer = rc.loc->id;
            ri.peer_path = rc.path;
            ri.value = *conc;
            ri.key = sc.from->id.str() + "|" + to_text(sc.path) + "|send(" + to_text(*conc) + "," +
                     rc.loc->id.str() + ")|" + to_text(rc.path);
            out.push_back(std::move(ri));
        }
    }

    // One forget instance per location with both a loss report and stale
    // produced-at messages on the driver.
    std::set<LocationId> seen_lost;
    for (const Value& v : dd) {
        const auto* ev = std::get_if<ErrVal>(&v);
        if (!ev) continue;
        const auto* dl = std::get_if<DataSetLost>(&ev->failure);
        if (!dl) continue;
        if (!seen_lost.insert(dl->at).second) continue;
        bool stale = false;
        for (const Value& w : dd) {
            const auto* pm = std::get_if<DataProducedMsg>(&w);
            if (pm && pm->at == dl->at) {
                stale = true;
                break;
            }
        }
        if (!stale) continue;
        RuleInstance ri;
        ri.rule = Rule::LostData;
        ri.at = driver_id;
        ri.peer = dl->at;
        ri.value = v;
        ri.key = "lost|" + dl->at.str() + "|" + to_text(v);
        out.push_back(std::move(ri));
    }

    std::sort(out.begin(), out.end(), [](const RuleInstance& a, const RuleInstance& b) {
        int pa = rule_priority(a.rule), pb = rule_priority(b.rule);
        if (pa != pb) return pa < pb;
        return a.key < b.key;
    });
    return out;
}

const RuleEvent& apply_init(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    if (inst.at != d.id) throw NotEnabledError("init fires on the driver");
    const InitAction ini = *pointed<InitAction>(d.trace, inst.path, "init");

    const ExecAction* pex = find_exec_action(*ini.payload);
    if (!pex) throw MappingMismatchError("init payload has no exec action");
    if (ini.at == d.id)
        throw MappingMismatchError("cannot install a worker trace on the driver");
    auto mit = s.driver.mapping.find(pex->step);
    if (mit == s.driver.mapping.end())
        throw MappingMismatchError("step " + pex->step.str() + " has no mapped location");
    if (mit->second != ini.at)
        throw MappingMismatchError("step " + pex->step.str() + " is mapped to " +
                                   mit->second.str() + ", not " + ini.at.str());

    RuleEvent e = make_event(s, Rule::Init, vtime);
    e.locations = {d.id, ini.at};
    e.path_text = to_text(inst.path);
    e.action = "init(t(" + pex->step.str() + ")," + ini.at.str() + ")";
    e.outcome = "installed";

    LocationCfg& target = loc_or_create(s, ini.at);
    attach_branch(target.trace, Trace(*ini.payload), vtime);
    advance_pointer(s.driver.loc.trace, inst.path, vtime);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_exec(SystemState& s, const RuleInstance& inst, ExecOutcome outcome,
                            long long vtime) {
    LocationCfg& lc = live_loc(s, inst.at);
    const ExecAction ex = *pointed<ExecAction>(lc.trace, inst.path, "exec");

    Value trigger = StepMsg{ex.step};
    bool has_msg = lc.data.count(trigger) != 0;
    std::set<DataId> missing;
    for (const DataId& din : ex.inputs)
        if (!lc.data.count(Value{DataVal{din}})) missing.insert(din);

    if (outcome == ExecOutcome::MissingInput) {
        if (missing.empty())
            throw OutcomeConflictError("missing-input outcome for " + ex.step.str() +
                                       " but every input is present at " + lc.id.str());
    } else if (!missing.empty() || !has_msg) {
        throw OutcomeConflictError("step " + ex.step.str() + " cannot run at " + lc.id.str() +
                                   (missing.empty() ? ": trigger message absent"
                                                    : ": inputs missing"));
    }

    RuleEvent e = make_event(s, Rule::Exec, vtime);
    e.locations = {lc.id};
    e.path_text = to_text(inst.path);
    e.action = to_text(Action{ex});

    remove_value(lc, trigger, e);
    advance_pointer(lc.trace, inst.path, vtime);

    switch (outcome) {
        case ExecOutcome::Success: {
            e.outcome = "success";
            std::vector<DataId> parents(ex.inputs.begin(), ex.inputs.end());
            for (const DataId& dout : ex.outputs) {
                add_value(lc, Value{DataVal{dout}}, e);
                add_value(lc, Value{DataProducedMsg{dout, lc.id}}, e);
                s.driver.provenance.record_production(dout, ex.step, lc.id, parents);
            }
            resolve_report(lc, ex, true, vtime);
            break;
        }
        case ExecOutcome::SoftError:
            e.outcome = "soft-error";
            add_value(lc, Value{ErrVal{StepFailed{ex.step}}}, e);
            resolve_report(lc, ex, false, vtime);
            break;
        case ExecOutcome::MissingInput:
            e.outcome = "missing-input";
            add_value(lc, Value{ErrVal{DataSetLost{missing, lc.id}}}, e);
            resolve_report(lc, ex, false, vtime);
            break;
    }

    s.driver.active_recoveries.erase(ex.step);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_trans(SystemState& s, const RuleInstance& inst, TransferOutcome outcome,
                             long long vtime) {
    LocationCfg& from = live_loc(s, inst.at);
    LocationCfg& to = live_loc(s, inst.peer);
    const SendAction snd = *pointed<SendAction>(from.trace, inst.path, "send");
    pointed<RecvAction>(to.trace, inst.peer_path, "recv");
    if (snd.to != to.id) throw NotEnabledError("send targets " + snd.to.str());

    const Value v = inst.value;
    if (is_err(v)) throw NotEnabledError("err values travel via the error-propagation rule");
    if (!from.data.count(v))
        throw ValueAbsentError("value " + to_text(v) + " is not held at " + from.id.str());

    bool conf = is_confirmation(v);
    if (conf && outcome == TransferOutcome::TransferFailed)
        throw OutcomeConflictError("confirmation transfers do not fail");

    RuleEvent e = make_event(s, Rule::Trans, vtime);
    e.locations = {from.id, to.id};
    e.path_text = to_text(inst.path);
    e.peer_path_text = to_text(inst.peer_path);
    e.action = "send(" + to_text(v) + "," + to.id.str() + ")";
    e.outcome = outcome == TransferOutcome::Delivered ? "delivered" : "transfer-failed";

    if (conf) {
        remove_value(from, v, e);
        add_value(to, v, e);
    } else if (outcome == TransferOutcome::Delivered) {
        add_value(to, v, e);
        add_value(to, ack_value(v), e);
        if (const auto* dv = std::get_if<DataVal>(&v))
            s.driver.provenance.record_delivery(dv->id, to.id);
    } else {
        add_value(to, missing_value(v, to.id), e);
    }

    advance_pointer(from.trace, inst.path, vtime);
    advance_pointer(to.trace, inst.peer_path, vtime);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_trans_err(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& from = live_loc(s, inst.at);
    if (inst.peer != s.driver.loc.id)
        throw NotEnabledError("err values propagate to the driver");
    LocationCfg& d = s.driver.loc;
    pointed<SendAction>(from.trace, inst.path, "send");
    pointed<RecvAction>(d.trace, inst.peer_path, "recv");

    const Value v = inst.value;
    const auto* ev = std::get_if<ErrVal>(&v);
    if (!ev || is_any_err(v))
        throw NotEnabledError("error propagation moves a concrete err value");
    if (!from.data.count(v))
        throw ValueAbsentError("value " + to_text(v) + " is not held at " + from.id.str());

    RuleEvent e = make_event(s, Rule::TransErr, vtime);
    e.locations = {from.id, d.id};
    e.path_text = to_text(inst.path);
    e.peer_path_text = to_text(inst.peer_path);
    e.action = "send(" + to_text(v) + "," + d.id.str() + ")";
    e.outcome = "propagated";

    remove_value(from, v, e);
    add_value(d, v, e);

    advance_pointer(from.trace, inst.path, vtime);
    advance_pointer(d.trace, inst.peer_path, vtime);
    // The arrived failure becomes a pending recovery obligation. Attaching
    // re-roots the driver trace, so the pointer moves happen first.
    attach_branch(d.trace, act(RecoverAction{ev->failure}), vtime);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_lost_data(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    const auto* ev = std::get_if<ErrVal>(&inst.value);
    const auto* dl = ev ? std::get_if<DataSetLost>(&ev->failure) : nullptr;
    if (!dl) throw PremiseFailedError("the forget rule consumes a lost-data-set err");
    if (!d.data.count(inst.value))
        throw PremiseFailedError("err value " + to_text(inst.value) + " is not at the driver");

    RuleEvent e = make_event(s, Rule::LostData, vtime);
    e.locations = {d.id, dl->at};
    e.action = "lost(" + dl->at.str() + ")";
    e.outcome = "purged";

    // Produced-at messages for the failed location no longer name replicas.
    std::vector<Value> stale;
    for (const Value& w : d.data) {
        const auto* pm = std::get_if<DataProducedMsg>(&w);
        if (pm && pm->at == dl->at) stale.push_back(w);
    }
    for (const Value& w : stale) remove_value(d, w, e);
    s.driver.provenance.record_loss(dl->at);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_rec_step(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    if (inst.at != d.id) throw NotEnabledError("recovery fires on the driver");
    const RecoverAction rec = *pointed<RecoverAction>(d.trace, inst.path, "rec");
    const auto* sf = std::get_if<StepFailed>(&rec.failure);
    if (!sf) throw NotEnabledError("step recovery expects a step failure");

    Value err = Value{ErrVal{rec.failure}};
    if (!d.data.count(err))
        throw PremiseFailedError("err value " + to_text(err) + " is not at the driver");
    auto sit = s.driver.schemas.find(sf->step);
    if (sit == s.driver.schemas.end())
        throw PremiseFailedError("no schema for step " + sf->step.str());
    const StepSchema& sc = sit->second;

    RuleEvent e = make_event(s, Rule::RecStep, vtime);
    e.locations = {d.id, sc.location};
    e.path_text = to_text(inst.path);
    e.action = to_text(Action{rec});

    remove_value(d, err, e);
    advance_pointer(d.trace, inst.path, vtime);

    if (s.driver.active_recoveries.count(sf->step)) {
        e.outcome = "deduplicated";
    } else {
        // Inputs already reached the site once; the rerun skips the input
        // exchanges and starts at the trigger. The driver mints a fresh
        // trigger value since the original was consumed by the failed run.
        add_value(d, Value{StepMsg{sf->step}}, e);
        attach_branch(loc_or_create(s, sc.location).trace, make_recovery_step_trace(sc, {}),
                      vtime);
        attach_branch(s.driver.loc.trace, make_recovery_driver_trace(sc, {}), vtime);
        s.driver.active_recoveries.insert(sf->step);
        e.outcome = "reinstalled";
    }
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_rec_data_set(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    if (inst.at != d.id) throw NotEnabledError("recovery fires on the driver");
    const RecoverAction rec = *pointed<RecoverAction>(d.trace, inst.path, "rec");
    const auto* dl = std::get_if<DataSetLost>(&rec.failure);
    if (!dl) throw NotEnabledError("data-set recovery expects a lost data set");

    Value err = Value{ErrVal{rec.failure}};
    if (!d.data.count(err))
        throw PremiseFailedError("err value " + to_text(err) + " is not at the driver");

    // Consuming step: first step deployed on the reporting location whose
    // input set covers the lost set.
    const StepSchema* consumer = nullptr;
    for (const auto& [sid, sc] : s.driver.schemas) {
        if (sc.location != dl->at) continue;
        bool covers = true;
        for (const DataId& di : dl->data) {
            bool declared = false;
            for (const InputSpec& in : sc.inputs)
                if (in.data == di) {
                    declared = true;
                    break;
                }
            if (!declared) {
                covers = false;
                break;
            }
        }
        if (covers) {
            consumer = &sc;
            break;
        }
    }
    if (!consumer)
        throw PremiseFailedError("no step at " + dl->at.str() + " consumes the lost set " +
                                 to_text(err));

    RuleEvent e = make_event(s, Rule::RecDataSet, vtime);
    e.locations = {d.id, dl->at};
    e.path_text = to_text(inst.path);
    e.action = to_text(Action{rec});

    remove_value(d, err, e);
    advance_pointer(d.trace, inst.path, vtime);

    if (s.driver.active_recoveries.count(consumer->step)) {
        // The installed rerun is still in flight; it reports its own missing
        // inputs if this loss also starved it.
        e.outcome = "deduplicated";
        return commit_event(s, std::move(e));
    }

    // Each lost datum is re-acquired from the cheapest source: a surviving
    // replica, the driver's own copy, or a rerun of its producer.
    std::vector<InputSpec> exchanges;
    struct BareSend {
        LocationId at;
        Trace t;
    };
    std::vector<BareSend> bare_sends;
    for (const DataId& di : dl->data) {
        std::optional<LocationId> holder;
        for (const Value& w : d.data) {
            const auto* pm = std::get_if<DataProducedMsg>(&w);
            if (pm && pm->id == di && pm->at != dl->at && replica_confirmed(s, pm->id, pm->at)) {
                holder = pm->at;
                break;
            }
        }
        if (holder) {
            exchanges.push_back({di, *holder});
            bare_sends.push_back({*holder, act(SendAction{DataVal{di}, dl->at})});
            continue;
        }
        if (d.data.count(Value{DataVal{di}})) {
            exchanges.push_back({di, d.id});
            continue;
        }
        // Regenerate through the per-datum recovery chain; the rerun trace
        // keeps awaiting the datum over its declared route.
        add_value(d, Value{ErrVal{DataNotReceived{di, dl->at}}}, e);
        attach_branch(d.trace, act(RecoverAction{DataNotReceived{di, dl->at}}), vtime);
        for (const InputSpec& in : consumer->inputs)
            if (in.data == di) {
                exchanges.push_back(in);
                break;
            }
    }

    for (BareSend& bs : bare_sends)
        attach_branch(loc_or_create(s, bs.at).trace, std::move(bs.t), vtime);
    add_value(d, Value{StepMsg{consumer->step}}, e);
    attach_branch(loc_or_create(s, consumer->location).trace,
                  make_recovery_step_trace(*consumer, exchanges), vtime);
    attach_branch(d.trace, make_recovery_driver_trace(*consumer, exchanges), vtime);
    s.driver.active_recoveries.insert(consumer->step);
    e.outcome = "reinstalled";
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_rec_data(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    if (inst.at != d.id) throw NotEnabledError("recovery fires on the driver");
    const RecoverAction rec = *pointed<RecoverAction>(d.trace, inst.path, "rec");
    const auto* dn = std::get_if<DataNotReceived>(&rec.failure);
    if (!dn) throw NotEnabledError("datum recovery expects a missing datum");

    Value err = Value{ErrVal{rec.failure}};
    if (!d.data.count(err))
        throw PremiseFailedError("err value " + to_text(err) + " is not at the driver");

    std::optional<LocationId> holder;
    for (const Value& w : d.data) {
        const auto* pm = std::get_if<DataProducedMsg>(&w);
        if (pm && pm->id == dn->data && pm->at != dn->at && replica_confirmed(s, pm->id, pm->at)) {
            holder = pm->at;
            break;
        }
    }
    bool driver_held = d.data.count(Value{DataVal{dn->data}}) != 0;

    const StepSchema* producer = nullptr;
    if (!holder && !driver_held) {
        for (const auto& [sid, sc] : s.driver.schemas) {
            for (const OutputSpec& o : sc.outputs)
                if (o.data == dn->data) {
                    producer = &sc;
                    break;
                }
            if (producer) break;
        }
        if (!producer)
            throw NoProducerError("no step produces " + dn->data.str() +
                                  " and no copy survives");
    }

    RuleEvent e = make_event(s, Rule::RecData, vtime);
    e.locations = {d.id, dn->at};
    e.path_text = to_text(inst.path);
    e.action = to_text(Action{rec});

    remove_value(d, err, e);
    advance_pointer(d.trace, inst.path, vtime);

    if (holder) {
        // A surviving replica ships the datum; holder and destination both
        // confirm to the driver.
        attach_branch(loc_or_create(s, *holder).trace, act(SendAction{DataVal{dn->data}, dn->at}),
                      vtime);
        attach_branch(loc_or_create(s, dn->at).trace,
                      make_data_recv_exchange(dn->data, *holder, dn->at, d.id), vtime);
        attach_branch(d.trace, make_confirm_recv(DataVal{dn->data}, dn->at), vtime);
        e.outcome = "reshipped";
    } else if (driver_held) {
        attach_branch(d.trace, make_data_send_exchange(dn->data, dn->at), vtime);
        attach_branch(loc_or_create(s, dn->at).trace,
                      make_data_recv_exchange(dn->data, d.id, dn->at, d.id), vtime);
        e.outcome = "reshipped";
    } else if (s.driver.active_recoveries.count(producer->step)) {
        e.outcome = "deduplicated";
    } else {
        // The rerun needs the producer's own inputs on site again. Surviving
        // replicas re-ship them, driver-held data is resent, and an input
        // with no copy anywhere escalates into its own per-datum recovery
        // while the rerun awaits it over the declared route.
        std::vector<InputSpec> exchanges;
        struct BareSend {
            LocationId at;
            Trace t;
        };
        std::vector<BareSend> bare_sends;
        for (const InputSpec& in : producer->inputs) {
            std::optional<LocationId> ih;
            for (const Value& w : d.data) {
                const auto* pm = std::get_if<DataProducedMsg>(&w);
                if (pm && pm->id == in.data && replica_confirmed(s, pm->id, pm->at)) {
                    ih = pm->at;
                    break;
                }
            }
            if (ih) {
                exchanges.push_back({in.data, *ih});
                bare_sends.push_back({*ih, act(SendAction{DataVal{in.data}, producer->location})});
                continue;
            }
            if (d.data.count(Value{DataVal{in.data}})) {
                exchanges.push_back({in.data, d.id});
                continue;
            }
            add_value(d, Value{ErrVal{DataNotReceived{in.data, producer->location}}}, e);
            attach_branch(d.trace, act(RecoverAction{DataNotReceived{in.data, producer->location}}),
                          vtime);
            exchanges.push_back(in);
        }
        for (BareSend& bs : bare_sends)
            attach_branch(loc_or_create(s, bs.at).trace, std::move(bs.t), vtime);
        add_value(d, Value{StepMsg{producer->step}}, e);
        attach_branch(d.trace, act(RecoverAction{StepFailed{producer->step}}), vtime);
        attach_branch(d.trace, make_recovery_install_trace(*producer, exchanges), vtime);
        s.driver.active_recoveries.insert(producer->step);
        e.outcome = "producer-rerun";
    }
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_rec_msg(SystemState& s, const RuleInstance& inst, long long vtime) {
    LocationCfg& d = s.driver.loc;
    if (inst.at != d.id) throw NotEnabledError("recovery fires on the driver");
    const RecoverAction rec = *pointed<RecoverAction>(d.trace, inst.path, "rec");
    const auto* mn = std::get_if<MsgNotReceived>(&rec.failure);
    if (!mn) throw NotEnabledError("trigger recovery expects a missing trigger");

    Value err = Value{ErrVal{rec.failure}};
    if (!d.data.count(err))
        throw PremiseFailedError("err value " + to_text(err) + " is not at the driver");

    RuleEvent e = make_event(s, Rule::RecMsg, vtime);
    e.locations = {d.id, mn->at};
    e.path_text = to_text(inst.path);
    e.action = to_text(Action{rec});
    e.outcome = "retriggered";

    remove_value(d, err, e);
    advance_pointer(d.trace, inst.path, vtime);

    add_value(d, Value{StepMsg{mn->step}}, e);
    attach_branch(d.trace, make_trigger_send_exchange(mn->step, mn->at), vtime);
    attach_branch(loc_or_create(s, mn->at).trace,
                  make_trigger_recv_exchange(mn->step, mn->at, d.id), vtime);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_fault_wipe(SystemState& s, const LocationId& l, long long vtime,
                                  long long revive_vtime) {
    if (l == s.driver.loc.id) throw ProtectedLocationError("the driver location cannot fail");
    LocationCfg* lc = find_loc(s, l);
    if (!lc) throw NotEnabledError("unknown location " + l.str());

    RuleEvent e = make_event(s, Rule::Fault, vtime);
    e.locations = {s.driver.loc.id, l};
    e.action = "wipe(" + l.str() + ")";
    e.outcome = "location-down";

    std::vector<Value> held(lc->data.begin(), lc->data.end());
    for (const Value& v : held) remove_value(*lc, v, e);
    lc->alive = false;
    lc->revive_vtime = revive_vtime;
    s.driver.provenance.record_loss(l);
    return commit_event(s, std::move(e));
}

const RuleEvent& apply_fault_revive(SystemState& s, const LocationId& l, long long vtime) {
    LocationCfg* lc = find_loc(s, l);
    if (!lc) throw NotEnabledError("unknown location " + l.str());

    RuleEvent e = make_event(s, Rule::Fault, vtime);
    e.locations = {s.driver.loc.id, l};
    e.action = "revive(" + l.str() + ")";
    e.outcome = "location-up";

    lc->alive = true;
    lc->revive_vtime = 0;

    // A trigger delivered before the failure died with the store, and its
    // exchange is already spent, so no transfer will re-deliver it. The
    // driver kept its own copy of every step message; revival restores the
    // trigger for each installed step that was triggered but has not run.
    std::set<StepId> pending, triggered;
    collect_pending_execs(lc->trace, pending);
    collect_done_trigger_recvs(lc->trace, triggered);
    for (const StepId& st : pending) {
        if (!triggered.count(st)) continue;
        Value trig{StepMsg{st}};
        if (lc->data.count(trig) || !s.driver.loc.data.count(trig)) continue;
        add_value(*lc, trig, e);
    }
    return commit_event(s, std::move(e));
}

RuleEvent event_from_json(const std::string& line) {
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        RuleEvent e;
        e.seq = j.at("seq").get<long long>();
        e.vtime = j.at("vtime").get<long long>();
        e.rule = rule_from_name(j.at("rule").get<std::string>());
        for (const auto& l : j.at("locations"))
            e.locations.push_back(LocationId{l.get<std::string>()});
        e.path_text = j.at("path").get<std::string>();
        e.peer_path_text = j.at("peer_path").get<std::string>();
        e.action = j.at("action").get<std::string>();
        e.outcome = j.at("outcome").get<std::string>();
        e.pre_digest = std::stoull(j.at("pre_digest").get<std::string>(), nullptr, 16);
        e.post_digest = std::stoull(j.at("post_digest").get<std::string>(), nullptr, 16);
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw LogFormatError(std::string("bad event line: ") + ex.what());
    }
}

namespace {

ExecOutcome parse_exec_outcome(const std::string& t) {
    if (t == "success") return ExecOutcome::Success;
    if (t == "soft-error") return ExecOutcome::SoftError;
    if (t == "missing-input") return ExecOutcome::MissingInput;
    throw LogFormatError("unknown exec outcome: " + t);
}

TransferOutcome parse_trans_outcome(const std::string& t) {
    if (t == "delivered") return TransferOutcome::Delivered;
    if (t == "transfer-failed") return TransferOutcome::TransferFailed;
    throw LogFormatError("unknown transfer outcome: " + t);
}

// Action text an instance would stamp on its event; mirrors the apply_*
// functions.
std::string instance_action_text(const SystemState& s, const RuleInstance& ri) {
    switch (ri.rule) {
        case Rule::Init:
            return "init(t(" + ri.step.str() + ")," + ri.peer.str() + ")";
        case Rule::Exec: {
            const LocationCfg* lc = find_loc(s, ri.at);
            const Trace* n = lc ? find_node(lc->trace, ri.path) : nullptr;
            return n && n->kind == TraceKind::Act ? to_text(*n->action) : std::string();
        }
        case Rule::Trans:
        case Rule::TransErr:
            return "send(" + to_text(ri.value) + "," + ri.peer.str() + ")";
        case Rule::LostData: {
            const auto* ev = std::get_if<ErrVal>(&ri.value);
            const auto* dl = ev ? std::get_if<DataSetLost>(&ev->failure) : nullptr;
            return dl ? "lost(" + dl->at.str() + ")" : std::string();
        }
        case Rule::RecStep:
        case Rule::RecDataSet:
        case Rule::RecData:
        case Rule::RecMsg: {
            const Trace* n = find_node(s.driver.loc.trace, ri.path);
            return n && n->kind == TraceKind::Act ? to_text(*n->action) : std::string();
        }
        case Rule::Fault: break;
    }
    return {};
}

}  // namespace

ReplayResult replay_events(SystemState& s, const std::vector<RuleEvent>& log) {
    ReplayResult res;
    for (const RuleEvent& le : log) {
        if (state_digest(s) != le.pre_digest)
            throw ReplayMismatchError("digest mismatch before event " + std::to_string(le.seq) +
                                      ": state " + digest_hex(state_digest(s)) + ", log " +
                                      digest_hex(le.pre_digest));
        const RuleEvent* applied = nullptr;
        if (le.rule == Rule::Fault) {
            const std::string& a = le.action;
            if (a.rfind("wipe(", 0) == 0 && a.size() > 6)
                applied = &apply_fault_wipe(s, LocationId{a.substr(5, a.size() - 6)}, le.vtime, 0);
            else if (a.rfind("revive(", 0) == 0 && a.size() > 8)
                applied = &apply_fault_revive(s, LocationId{a.substr(7, a.size() - 8)}, le.vtime);
            else
                throw ReplayMismatchError("unknown fault action in event " +
                                          std::to_string(le.seq) + ": " + a);
        } else {
            std::vector<RuleInstance> insts = enabled_redexes(s);
            const RuleInstance* hit = nullptr;
            for (const RuleInstance& ri : insts) {
                if (ri.rule != le.rule) continue;
                if (!le.path_text.empty() && to_text(ri.path) != le.path_text) continue;
                if (!le.peer_path_text.empty() && to_text(ri.peer_path) != le.peer_path_text)
                    continue;
                if (instance_action_text(s, ri) != le.action) continue;
                hit = &ri;
                break;
            }
            if (!hit)
                throw ReplayMismatchError("no enabled instance matches event " +
                                          std::to_string(le.seq) + " (" +
                                          rule_name(le.rule) + " " + le.action + ")");
            switch (le.rule) {
                case Rule::Exec:
                    applied = &apply_exec(s, *hit, parse_exec_outcome(le.outcome), le.vtime);
                    break;
                case Rule::Trans:
                    applied = &apply_trans(s, *hit, parse_trans_outcome(le.outcome), le.vtime);
                    break;
                default: {
                    FaultOracle none;
                    applied = &apply(s, *hit, none, le.vtime);
                    break;
                }
            }
        }
        if (applied->outcome != le.outcome)
            throw ReplayMismatchError("outcome mismatch at event " + std::to_string(le.seq) +
                                      ": replayed " + applied->outcome + ", log " + le.outcome);
        if (applied->post_digest != le.post_digest)
            throw ReplayMismatchError("digest mismatch after event " + std::to_string(le.seq) +
                                      ": state " + digest_hex(applied->post_digest) + ", log " +
                                      digest_hex(le.post_digest));
        ++res.events_applied;
    }
    return res;
}

const RuleEvent& apply(SystemState& s, const RuleInstance& inst, FaultOracle& oracle,
                       long long vtime) {
    switch (inst.rule) {
        case Rule::Init: return apply_init(s, inst, vtime);
        case Rule::Exec: {
            bool missing = false;
            if (const LocationCfg* lc = find_loc(s, inst.at)) {
                const Trace* n = find_node(lc->trace, inst.path);
                const ExecAction* ex =
                    n && n->kind == TraceKind::Act ? std::get_if<ExecAction>(&*n->action) : nullptr;
                if (ex)
                    for (const DataId& di : ex->inputs)
                        if (!lc->data.count(Value{DataVal{di}})) {
                            missing = true;
                            break;
                        }
            }
            ExecOutcome out = missing ? ExecOutcome::MissingInput : oracle.exec_outcome(s, inst);
            return apply_exec(s, inst, out, vtime);
        }
        case Rule::Trans: {
            TransferOutcome out = is_confirmation(inst.value) ? TransferOutcome::Delivered
                                                              : oracle.transfer_outcome(s, inst);
            return apply_trans(s, inst, out, vtime);
        }
        case Rule::TransErr: return apply_trans_err(s, inst, vtime);
        case Rule::LostData: return apply_lost_data(s, inst, vtime);
        case Rule::RecStep: return apply_rec_step(s, inst, vtime);
        case Rule::RecDataSet: return apply_rec_data_set(s, inst, vtime);
        case Rule::RecData: return apply_rec_data(s, inst, vtime);
        case Rule::RecMsg: return apply_rec_msg(s, inst, vtime);
        case Rule::Fault: break;
    }
    throw NotEnabledError("fault events are injected by the failure simulator");
}

RunStats run(SystemState& s, const RunOptions& opts) {
    FaultOracle fallback;
    FaultOracle& oracle = opts.oracle ? *opts.oracle : fallback;
    std::mt19937_64 rng(opts.seed);
    RunStats stats;
    for (;;) {
        std::vector<RuleInstance> insts = enabled_redexes(s);
        if (insts.empty()) break;
        if (stats.steps_applied >= opts.budget)
            throw BudgetExhaustedError("reduction budget " + std::to_string(opts.budget) +
                                       " exhausted with " + std::to_string(insts.size()) +
                                       " instances still enabled");
        std::size_t pick = 0;
        if (opts.scheduler == SchedulerKind::SeededRandom)
            pick = static_cast<std::size_t>(rng() % insts.size());
        apply(s, insts[pick], oracle, opts.vtime);
        ++stats.steps_applied;
    }
    std::vector<std::string> pending;
    auto scan = [&pending](const LocationCfg& lc) {
        for (const Value& v : lc.data)
            if (is_err(v)) pending.push_back(to_text(v) + " at " + lc.id.str());
    };
    scan(s.driver.loc);
    for (const auto& [id, lc] : s.locations) scan(lc);
    if (!pending.empty()) {
        std::string msg = "quiescent with unresolved failures:";
        for (const std::string& p : pending) msg += " " + p;
        throw StuckError(msg);
    }
    return stats;
}

}  // namespace hybridwf
