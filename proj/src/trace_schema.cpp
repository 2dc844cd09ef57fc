#include "hybridwf/trace_schema.hpp"

#include <memory>
#include <set>
#include <utility>
#include <variant>

namespace hybridwf {

namespace {

Value ack_of(const Value& v) {
    if (const auto* d = std::get_if<DataVal>(&v)) return DataAck{d->id};
    if (const auto* m = std::get_if<StepMsg>(&v)) return MsgAck{m->step};
    throw SchemaError("no confirmation form for value " + to_text(v));
}

Value missing_of(const Value& v, const LocationId& at) {
    if (const auto* d = std::get_if<DataVal>(&v)) return Value{ErrVal{DataNotReceived{d->id, at}}};
    if (const auto* m = std::get_if<StepMsg>(&v)) return Value{ErrVal{MsgNotReceived{m->step, at}}};
    throw SchemaError("no missing-value form for value " + to_text(v));
}

void validate(const StepSchema& sc) {
    if (sc.step.name.empty()) throw SchemaError("step id is empty");
    std::string who = "step " + sc.step.str();
    if (sc.location.name.empty()) throw SchemaError(who + " has no deployment location");
    if (sc.driver.name.empty()) throw SchemaError(who + " has no driver location");
    std::set<DataId> seen;
    for (const auto& in : sc.inputs) {
        if (in.data.name.empty()) throw SchemaError(who + " has an unnamed input");
        if (in.source.name.empty())
            throw SchemaError(who + ": input " + in.data.str() + " has no source location");
        if (!seen.insert(in.data).second)
            throw SchemaError(who + ": input " + in.data.str() + " appears twice");
    }
    seen.clear();
    for (const auto& out : sc.outputs) {
        if (out.data.name.empty()) throw SchemaError(who + " has an unnamed output");
        if (!seen.insert(out.data).second)
            throw SchemaError(who + ": output " + out.data.str() + " appears twice");
        for (const auto& dst : out.destinations)
            if (dst.name.empty())
                throw SchemaError(who + ": output " + out.data.str() +
                                  " has an unnamed destination");
    }
}

// The exchange list of a recovery build may rewire sources, but it can only
// name inputs the step actually consumes.
void validate_exchanges(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    std::set<DataId> declared;
    for (const auto& i : sc.inputs) declared.insert(i.data);
    std::set<DataId> seen;
    for (const auto& e : exchanges) {
        if (!declared.count(e.data))
            throw SchemaError("step " + sc.step.str() + ": exchange for " + e.data.str() +
                              " names a value that is not an input");
        if (!seen.insert(e.data).second)
            throw SchemaError("step " + sc.step.str() + ": exchange for " + e.data.str() +
                              " appears twice");
        if (e.source.name.empty())
            throw SchemaError("step " + sc.step.str() + ": exchange for " + e.data.str() +
                              " has no source location");
    }
}

}  // namespace

Trace make_confirm_send(const Value& v, const LocationId& at, const LocationId& driver) {
    return choice(act(SendAction{ack_of(v), driver}), act(SendAction{missing_of(v, at), driver}));
}

Trace make_confirm_recv(const Value& v, const LocationId& at) {
    return choice(act(RecvAction{ack_of(v), at}), act(RecvAction{missing_of(v, at), at}));
}

Trace make_trigger_recv_exchange(const StepId& s, const LocationId& at, const LocationId& driver) {
    Value trigger = StepMsg{s};
    return seq(act(RecvAction{trigger, driver}), make_confirm_send(trigger, at, driver));
}

Trace make_trigger_send_exchange(const StepId& s, const LocationId& to) {
    Value trigger = StepMsg{s};
    return seq(act(SendAction{trigger, to}), make_confirm_recv(trigger, to));
}

Trace make_data_recv_exchange(const DataId& d, const LocationId& source, const LocationId& at,
                              const LocationId& driver) {
    Value v = DataVal{d};
    return seq(act(RecvAction{v, source}), make_confirm_send(v, at, driver));
}

Trace make_data_send_exchange(const DataId& d, const LocationId& to) {
    Value v = DataVal{d};
    return seq(act(SendAction{v, to}), make_confirm_recv(v, to));
}

namespace {

Trace build_step_trace(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    std::vector<Trace> in;
    in.push_back(make_trigger_recv_exchange(sc.step, sc.location, sc.driver));
    for (const auto& e : exchanges)
        in.push_back(make_data_recv_exchange(e.data, e.source, sc.location, sc.driver));

    std::set<DataId> ins, outs;
    for (const auto& i : sc.inputs) ins.insert(i.data);
    for (const auto& o : sc.outputs) outs.insert(o.data);

    std::vector<Trace> report;
    for (const auto& o : sc.outputs)
        report.push_back(choice(act(SendAction{DataProducedMsg{o.data, sc.location}, sc.driver}),
                                act(SendAction{ErrVal{AnyFailure{}}, sc.driver})));

    std::vector<Trace> sends;
    for (const auto& o : sc.outputs)
        for (const auto& dst : o.destinations) sends.push_back(act(SendAction{DataVal{o.data}, dst}));

    std::vector<Trace> chain;
    chain.push_back(par_of(std::move(in)));
    chain.push_back(act(ExecAction{sc.step, std::move(ins), std::move(outs)}));
    chain.push_back(par_of(std::move(report)));
    chain.push_back(par_of(std::move(sends)));
    return seq_of(std::move(chain));
}

// Input part and report part of the driver trace. Data shipped by the driver
// itself is sent and then confirmed; everything else arrives at the worker
// from elsewhere, so only the confirmation reaches the driver.
std::vector<Trace> build_driver_chain(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    std::vector<Trace> in;
    in.push_back(make_trigger_send_exchange(sc.step, sc.location));
    for (const auto& e : exchanges)
        if (e.source == sc.driver) in.push_back(make_data_send_exchange(e.data, sc.location));
    for (const auto& e : exchanges)
        if (e.source != sc.driver) in.push_back(make_confirm_recv(DataVal{e.data}, sc.location));

    std::vector<Trace> report;
    for (const auto& o : sc.outputs)
        report.push_back(choice(act(RecvAction{DataProducedMsg{o.data, sc.location}, sc.location}),
                                act(RecvAction{ErrVal{AnyFailure{}}, sc.location})));

    std::vector<Trace> chain;
    chain.push_back(par_of(std::move(in)));
    chain.push_back(par_of(std::move(report)));
    return chain;
}

}  // namespace

Trace make_step_trace(const StepSchema& sc) {
    validate(sc);
    return build_step_trace(sc, sc.inputs);
}

Trace make_driver_trace(const StepSchema& sc) {
    validate(sc);
    auto payload = std::make_shared<const Trace>(make_step_trace(sc));
    std::vector<Trace> chain = build_driver_chain(sc, sc.inputs);
    chain.insert(chain.begin(), act(InitAction{std::move(payload), sc.location}));
    return seq_of(std::move(chain));
}

Trace make_recovery_step_trace(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    validate(sc);
    validate_exchanges(sc, exchanges);
    return build_step_trace(sc, exchanges);
}

Trace make_recovery_driver_trace(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    validate(sc);
    validate_exchanges(sc, exchanges);
    return seq_of(build_driver_chain(sc, exchanges));
}

Trace make_recovery_install_trace(const StepSchema& sc, const std::vector<InputSpec>& exchanges) {
    validate(sc);
    validate_exchanges(sc, exchanges);
    auto payload = std::make_shared<const Trace>(build_step_trace(sc, exchanges));
    std::vector<Trace> chain = build_driver_chain(sc, exchanges);
    chain.insert(chain.begin(), act(InitAction{std::move(payload), sc.location}));
    return seq_of(std::move(chain));
}

namespace {

const Action* head_action(const Trace& t) {
    const Trace* cur = &t;
    while (cur->kind == TraceKind::Seq) cur = &cur->kids[0];
    if (cur->kind == TraceKind::Act) return &*cur->action;
    return nullptr;
}

// The trigger exchange starts with the step message: received from the
// driver on the worker side, sent to the worker on the driver side.
bool is_trigger_branch(const Trace& b, bool driver_side) {
    if (b.kind != TraceKind::Seq) return false;
    const Action* a = head_action(b);
    if (!a) return false;
    if (driver_side) {
        const auto* s = std::get_if<SendAction>(a);
        return s && std::holds_alternative<StepMsg>(s->value);
    }
    const auto* r = std::get_if<RecvAction>(a);
    return r && std::holds_alternative<StepMsg>(r->value);
}

bool is_trigger_atom(const Trace& t, bool driver_side) {
    if (t.kind != TraceKind::Act) return false;
    if (driver_side) {
        const auto* s = std::get_if<SendAction>(&*t.action);
        return s && std::holds_alternative<StepMsg>(s->value);
    }
    const auto* r = std::get_if<RecvAction>(&*t.action);
    return r && std::holds_alternative<StepMsg>(r->value);
}

bool contains_exec(const Trace& t) {
    if (t.kind == TraceKind::Act) return std::holds_alternative<ExecAction>(*t.action);
    for (const auto& k : t.kids)
        if (contains_exec(k)) return true;
    return false;
}

void scrub(Trace& t) {
    t.done = false;
    t.dead = false;
    t.spawn_vtime = 0;
    t.done_vtime = 0;
    for (auto& k : t.kids) scrub(k);
}

// Copy of the Seq chain `t` without its leading atom. The caller has checked
// that the first atom exists (leftmost Act on the kids[0] spine).
Trace drop_first_atom(const Trace& t) {
    if (t.kids[0].kind == TraceKind::Act) return t.kids[1];
    return seq(drop_first_atom(t.kids[0]), t.kids[1]);
}

}  // namespace

Trace strip_input(const Trace& t) {
    if (t.kind != TraceKind::Seq)
        throw ShapeError("strip_input: not a sequential builder trace: " + plain_text(t));
    std::vector<const Trace*> parts;
    display_parts(t, parts);

    size_t at = 0;
    bool driver_side =
        parts[0]->kind == TraceKind::Act && std::holds_alternative<InitAction>(*parts[0]->action);
    if (driver_side) at = 1;
    if (at >= parts.size()) throw ShapeError("strip_input: nothing follows the init");

    Trace out;
    const Trace& input = *parts[at];
    if (input.kind == TraceKind::Par) {
        std::vector<const Trace*> branches;
        display_parts(input, branches);
        const Trace* trigger = nullptr;
        for (const Trace* b : branches) {
            if (is_trigger_branch(*b, driver_side)) {
                if (trigger)
                    throw ShapeError("strip_input: two trigger exchanges in the input part");
                trigger = b;
            }
        }
        if (!trigger) throw ShapeError("strip_input: no trigger exchange in the input part");
        std::vector<Trace> kept;
        kept.push_back(*trigger);
        for (size_t i = at + 1; i < parts.size(); ++i) kept.push_back(*parts[i]);
        out = seq_of(std::move(kept));
    } else {
        // Without data inputs the trigger exchange sits directly in the
        // top-level chain and there is nothing to remove; the structure is
        // kept as-is so stripping twice is the identity.
        if (!is_trigger_atom(input, driver_side))
            throw ShapeError("strip_input: no input part or trigger exchange at the front");
        out = driver_side ? drop_first_atom(t) : t;
    }

    if (!driver_side && !contains_exec(out))
        throw ShapeError("strip_input: worker trace has no exec action");
    scrub(out);
    return out;
}

}  // namespace hybridwf
