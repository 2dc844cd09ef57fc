#include "hybridwf/trace.hpp"

#include <algorithm>
#include <stdexcept>

#include "hybridwf/errors.hpp"

namespace hybridwf {

namespace {

std::string data_set_text(const std::set<DataId>& ds) {
    std::string out = "{";
    bool first = true;
    for (const auto& d : ds) {
        if (!first) out += ',';
        out += d.str();
        first = false;
    }
    return out + "}";
}

void flatten_display(const Trace& t, TraceKind kind, std::vector<const Trace*>& out) {
    if (t.kind == kind && !t.dead) {
        flatten_display(t.kids[0], kind, out);
        flatten_display(t.kids[1], kind, out);
    } else {
        out.push_back(&t);
    }
}

}  // namespace

void display_parts(const Trace& t, std::vector<const Trace*>& out) {
    // Kid-level flattening: a dead kid keeps its own group so branch
    // structure survives a print/parse round trip.
    for (const auto& k : t.kids) flatten_display(k, t.kind, out);
}

std::string plain_text(const Trace& t) {
    switch (t.kind) {
        case TraceKind::Nil:
            return "0";
        case TraceKind::Act:
            return to_text(*t.action);
        case TraceKind::Seq: {
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            std::string out;
            for (size_t i = 0; i < parts.size(); ++i) {
                if (i) out += '.';
                out += plain_text(*parts[i]);
            }
            return out;
        }
        case TraceKind::Par:
        case TraceKind::Choice: {
            const char* sep = t.kind == TraceKind::Par ? "|" : "+";
            std::vector<const Trace*> parts;
            display_parts(t, parts);
            std::string out = "(";
            for (size_t i = 0; i < parts.size(); ++i) {
                if (i) out += sep;
                out += plain_text(*parts[i]);
            }
            return out + ")";
        }
    }
    return "0";
}

std::string to_text(const Action& a) {
    struct Printer {
        std::string operator()(const ExecAction& x) const {
            return "exec(" + x.step.str() + "," + data_set_text(x.inputs) + "," +
                   data_set_text(x.outputs) + ")";
        }
        std::string operator()(const SendAction& x) const {
            return "send(" + to_text(x.value) + "," + x.to.str() + ")";
        }
        std::string operator()(const RecvAction& x) const {
            return "recv(" + to_text(x.value) + "," + x.from.str() + ")";
        }
        std::string operator()(const RecoverAction& x) const {
            return "rec(" + to_text(x.failure) + ")";
        }
        std::string operator()(const InitAction& x) const {
            return "init(" + plain_text(*x.payload) + "," + x.at.str() + ")";
        }
    };
    return std::visit(Printer{}, a);
}

int action_cmp(const Action& a, const Action& b) {
    if (a.index() != b.index()) return a.index() < b.index() ? -1 : 1;
    // Text order is total on same-kind actions and stable across runs.
    std::string ta = to_text(a), tb = to_text(b);
    if (ta != tb) return ta < tb ? -1 : 1;
    return 0;
}

bool action_eq(const Action& a, const Action& b) { return action_cmp(a, b) == 0; }

std::string to_text(const TracePath& p) {
    if (p.empty()) return ".";
    std::string out;
    for (size_t i = 0; i < p.size(); ++i) {
        if (i) out += '.';
        out += std::to_string(p[i]);
    }
    return out;
}

Trace nil_trace() { return Trace{}; }

Trace act(Action a) {
    Trace t;
    t.kind = TraceKind::Act;
    t.action = std::move(a);
    return t;
}

namespace {
Trace binary(TraceKind kind, Trace a, Trace b) {
    Trace t;
    t.kind = kind;
    t.kids.reserve(2);
    t.kids.push_back(std::move(a));
    t.kids.push_back(std::move(b));
    return t;
}
}  // namespace

Trace seq(Trace a, Trace b) { return binary(TraceKind::Seq, std::move(a), std::move(b)); }
Trace par(Trace a, Trace b) { return binary(TraceKind::Par, std::move(a), std::move(b)); }
Trace choice(Trace a, Trace b) { return binary(TraceKind::Choice, std::move(a), std::move(b)); }

namespace {
Trace fold_right(TraceKind kind, std::vector<Trace> parts) {
    std::vector<Trace> live;
    for (auto& p : parts)
        if (p.kind != TraceKind::Nil) live.push_back(std::move(p));
    if (live.empty()) return nil_trace();
    Trace out = std::move(live.back());
    for (size_t i = live.size() - 1; i-- > 0;)
        out = binary(kind, std::move(live[i]), std::move(out));
    return out;
}
}  // namespace

Trace seq_of(std::vector<Trace> parts) { return fold_right(TraceKind::Seq, std::move(parts)); }
Trace par_of(std::vector<Trace> parts) { return fold_right(TraceKind::Par, std::move(parts)); }

const Trace* find_node(const Trace& t, const TracePath& path) {
    const Trace* cur = &t;
    for (int idx : path) {
        if (idx < 0 || static_cast<size_t>(idx) >= cur->kids.size()) return nullptr;
        cur = &cur->kids[idx];
    }
    return cur;
}

Trace* find_node(Trace& t, const TracePath& path) {
    return const_cast<Trace*>(find_node(static_cast<const Trace&>(t), path));
}

bool all_done(const Trace& t) {
    switch (t.kind) {
        case TraceKind::Nil:
            return true;
        case TraceKind::Act:
            return t.done;
        case TraceKind::Seq:
        case TraceKind::Par:
            return all_done(t.kids[0]) && all_done(t.kids[1]);
        case TraceKind::Choice:
            if (t.kids[0].dead) return all_done(t.kids[1]);
            if (t.kids[1].dead) return all_done(t.kids[0]);
            return false;  // unresolved: an action must still fire
    }
    return true;
}

bool has_done(const Trace& t) {
    if (t.kind == TraceKind::Act) return t.done;
    for (const auto& k : t.kids)
        if (has_done(k)) return true;
    return false;
}

bool is_fresh(const Trace& t) {
    if (t.dead) return false;
    if (t.kind == TraceKind::Act) return !t.done;
    for (const auto& k : t.kids)
        if (!is_fresh(k)) return false;
    return true;
}

namespace {

void collect_enabled(const Trace& t, TracePath& path, std::vector<EnabledAction>& out) {
    switch (t.kind) {
        case TraceKind::Nil:
            return;
        case TraceKind::Act:
            if (!t.done) out.push_back({path, &*t.action});
            return;
        case TraceKind::Seq: {
            int idx = all_done(t.kids[0]) ? 1 : 0;
            path.push_back(idx);
            collect_enabled(t.kids[idx], path, out);
            path.pop_back();
            return;
        }
        case TraceKind::Par:
            for (int idx = 0; idx < 2; ++idx) {
                path.push_back(idx);
                collect_enabled(t.kids[idx], path, out);
                path.pop_back();
            }
            return;
        case TraceKind::Choice: {
            int live = -1;
            if (t.kids[0].dead)
                live = 1;
            else if (t.kids[1].dead)
                live = 0;
            else if (has_done(t.kids[0]))
                live = 0;
            else if (has_done(t.kids[1]))
                live = 1;
            if (live >= 0) {
                path.push_back(live);
                collect_enabled(t.kids[live], path, out);
                path.pop_back();
            } else {
                for (int idx = 0; idx < 2; ++idx) {
                    path.push_back(idx);
                    collect_enabled(t.kids[idx], path, out);
                    path.pop_back();
                }
            }
            return;
        }
    }
}

}  // namespace

std::vector<EnabledAction> enabled_actions(const Trace& t) {
    std::vector<EnabledAction> out;
    TracePath path;
    collect_enabled(t, path, out);
    return out;
}

bool is_enabled(const Trace& t, const TracePath& path) {
    for (const auto& e : enabled_actions(t))
        if (e.path == path) return true;
    return false;
}

void advance_pointer(Trace& t, const TracePath& path, long long vtime) {
    if (!is_enabled(t, path))
        throw NotEnabledError("advance_pointer: position not enabled: " + to_text(path));
    Trace* cur = &t;
    for (int idx : path) {
        if (cur->kind == TraceKind::Choice) {
            Trace& sibling = cur->kids[1 - idx];
            if (has_done(sibling))
                throw std::logic_error("advance_pointer: both choice branches fired");
            sibling.dead = true;
        }
        cur = &cur->kids[idx];
    }
    cur->done = true;
    cur->done_vtime = vtime;
}

void resolve_choice(Trace& t, const TracePath& path, int keep) {
    Trace* node = find_node(t, path);
    if (!node || node->kind != TraceKind::Choice || keep < 0 || keep > 1)
        throw NotEnabledError("resolve_choice: not a choice position");
    Trace& drop = node->kids[1 - keep];
    if (node->kids[keep].dead || has_done(drop))
        throw NotEnabledError("resolve_choice: branch already decided the other way");
    drop.dead = true;
}

namespace {
long long max_done_vtime(const Trace& t) {
    long long v = 0;
    if (t.kind == TraceKind::Act && t.done) v = t.done_vtime;
    for (const auto& k : t.kids) v = std::max(v, max_done_vtime(k));
    return v;
}
}  // namespace

long long ready_vtime(const Trace& t, const TracePath& path) {
    long long ready = t.spawn_vtime;
    const Trace* cur = &t;
    for (int idx : path) {
        if (cur->kind == TraceKind::Seq && idx == 1)
            ready = std::max(ready, max_done_vtime(cur->kids[0]));
        cur = &cur->kids[idx];
        ready = std::max(ready, cur->spawn_vtime);
    }
    return ready;
}

int trace_cmp(const Trace& a, const Trace& b) {
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind) ? -1 : 1;
    if (a.kind == TraceKind::Act) {
        if (int c = action_cmp(*a.action, *b.action)) return c;
    }
    for (size_t i = 0; i < std::min(a.kids.size(), b.kids.size()); ++i)
        if (int c = trace_cmp(a.kids[i], b.kids[i])) return c;
    if (a.kids.size() != b.kids.size()) return a.kids.size() < b.kids.size() ? -1 : 1;
    if (a.done != b.done) return a.done ? 1 : -1;
    if (a.dead != b.dead) return a.dead ? 1 : -1;
    return 0;
}

bool trace_eq(const Trace& a, const Trace& b) { return trace_cmp(a, b) == 0; }

namespace {

void flatten_normalize(Trace t, TraceKind kind, bool keep_nil, std::vector<Trace>& out);
Trace normalize_node(Trace t);

// Spreads an already normalized node into the part list, merging same-kind
// chains. A dead node keeps its own group (the flag marks a branch root).
void spread_normalized(Trace n, TraceKind kind, bool keep_nil, std::vector<Trace>& out) {
    if (n.kind == kind && !n.dead) {
        long long spawn = n.spawn_vtime;
        for (auto& k : n.kids) {
            k.spawn_vtime = std::max(k.spawn_vtime, spawn);
            spread_normalized(std::move(k), kind, keep_nil, out);
        }
        return;
    }
    if (n.kind != TraceKind::Nil || keep_nil) out.push_back(std::move(n));
}

void flatten_normalize(Trace t, TraceKind kind, bool keep_nil, std::vector<Trace>& out) {
    if (t.kind == kind && !t.dead) {
        long long spawn = t.spawn_vtime;
        for (auto& k : t.kids) {
            k.spawn_vtime = std::max(k.spawn_vtime, spawn);
            flatten_normalize(std::move(k), kind, keep_nil, out);
        }
        return;
    }
    // Normalizing may collapse the node into the surrounding kind (a
    // sequence reducing to one parallel part, say), so flatten again.
    spread_normalized(normalize_node(std::move(t)), kind, keep_nil, out);
}

// Normalizes the node's substructure; the caller re-attaches the root's dead
// flag and spawn time (dead may sit on any branch root).
Trace normalize_body(Trace t) {
    switch (t.kind) {
        case TraceKind::Nil:
            return t;
        case TraceKind::Act: {
            // Congruence applies under init: two installs are the same when
            // their payloads have the same normal form.
            if (auto* ini = std::get_if<InitAction>(&*t.action)) {
                auto payload = std::make_shared<const Trace>(normalize(*ini->payload));
                t.action = InitAction{std::move(payload), ini->at};
            }
            return t;
        }
        case TraceKind::Seq:
        case TraceKind::Par: {
            std::vector<Trace> parts;
            TraceKind kind = t.kind;
            flatten_normalize(std::move(t), kind, false, parts);
            if (kind == TraceKind::Par)
                std::stable_sort(parts.begin(), parts.end(),
                                 [](const Trace& x, const Trace& y) { return trace_cmp(x, y) < 0; });
            return fold_right(kind, std::move(parts));
        }
        case TraceKind::Choice: {
            // Nil branches stay: a choice that may do nothing differs from
            // one that must act. Only the all-nil choice collapses.
            std::vector<Trace> parts;
            flatten_normalize(std::move(t), TraceKind::Choice, true, parts);
            std::stable_sort(parts.begin(), parts.end(),
                             [](const Trace& x, const Trace& y) { return trace_cmp(x, y) < 0; });
            bool all_nil = true;
            for (const auto& p : parts)
                if (p.kind != TraceKind::Nil) all_nil = false;
            if (all_nil) return nil_trace();
            Trace out = std::move(parts.back());
            for (size_t i = parts.size() - 1; i-- > 0;)
                out = binary(TraceKind::Choice, std::move(parts[i]), std::move(out));
            return out;
        }
    }
    return t;
}

Trace normalize_node(Trace t) {
    bool dead = t.dead;
    long long spawn = t.spawn_vtime;
    Trace out = normalize_body(std::move(t));
    out.dead = out.dead || dead;
    out.spawn_vtime = std::max(out.spawn_vtime, spawn);
    return out;
}

}  // namespace

Trace normalize(const Trace& t) { return normalize_node(t); }

}  // namespace hybridwf
