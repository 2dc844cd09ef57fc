#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hybridwf/values.hpp"

namespace hybridwf {

struct Trace;

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

struct ExecAction {  // exec(s, I, O)
    StepId step;
    std::set<DataId> inputs;
    std::set<DataId> outputs;
};

struct SendAction {  // send(v, l): emit v towards location l
    Value value;
    LocationId to;
};

struct RecvAction {  // recv(v, l): accept v coming from location l
    Value value;
    LocationId from;
};

struct RecoverAction {  // rec(x): pending recovery obligation for failure x
    FailureRef failure;
};

struct InitAction {  // init(t, l): install trace t on location l
    std::shared_ptr<const Trace> payload;
    LocationId at;
};

using Action = std::variant<ExecAction, SendAction, RecvAction, RecoverAction, InitAction>;

std::string to_text(const Action& a);
bool action_eq(const Action& a, const Action& b);
int action_cmp(const Action& a, const Action& b);

// ---------------------------------------------------------------------------
// Traces
//
// A trace is a binary term over actions:
//   t ::= 0 | a | t.t | (t|t) | (t+t)
// The execution frontier (the ^ pointer set) is not stored explicitly; it is
// derived from per-action `done` flags and per-branch `dead` flags. A trace
// with no done actions has its pointer at the start. This keeps the two
// invariants structural: executed prefixes are never discarded (a done flag
// is never cleared) and the pointer only moves forward.
// ---------------------------------------------------------------------------

enum class TraceKind { Nil, Act, Seq, Par, Choice };

struct Trace {
    TraceKind kind = TraceKind::Nil;
    std::optional<Action> action;  // Act only
    std::vector<Trace> kids;       // exactly 2 for Seq/Par/Choice

    bool done = false;  // Act: fired
    bool dead = false;  // root of the unchosen branch of a resolved Choice

    // Bookkeeping for the virtual clock; ignored by equality and printing.
    long long spawn_vtime = 0;  // when this parallel component was installed
    long long done_vtime = 0;   // Act: when it fired
};

// A path from the root: child indices (0/1 per binary node).
using TracePath = std::vector<int>;
std::string to_text(const TracePath& p);

// Constructors. seq_of/par_of fold right-nested and drop Nil parts.
Trace nil_trace();
Trace act(Action a);
Trace seq(Trace a, Trace b);
Trace par(Trace a, Trace b);
Trace choice(Trace a, Trace b);
Trace seq_of(std::vector<Trace> parts);
Trace par_of(std::vector<Trace> parts);

const Trace* find_node(const Trace& t, const TracePath& path);
Trace* find_node(Trace& t, const TracePath& path);

bool all_done(const Trace& t);   // every live action fired
bool has_done(const Trace& t);   // some action fired
bool is_fresh(const Trace& t);   // no action fired, no branch dead

// Enabled actions with their positions, in leftmost (DFS) order.
struct EnabledAction {
    TracePath path;
    const Action* action;
};
std::vector<EnabledAction> enabled_actions(const Trace& t);
bool is_enabled(const Trace& t, const TracePath& path);

// Fires the action at `path` (must be enabled): marks it done and resolves
// every Choice ancestor towards the branch containing it. Throws
// NotEnabledError if the position is not enabled.
void advance_pointer(Trace& t, const TracePath& path, long long vtime = 0);

// Marks branch `keep` of the Choice at `path` as chosen without firing
// anything inside it; the sibling is marked dead. Used when an exec outcome
// decides its report branch ahead of the send.
void resolve_choice(Trace& t, const TracePath& path, int keep);

// Earliest virtual time at which the action at `path` may fire, given the
// completion times of its structural predecessors and component spawn times.
long long ready_vtime(const Trace& t, const TracePath& path);

// Canonical form: Nil dropped from Seq/Par, nested Seq/Par/Choice of the
// same kind flattened and rebuilt right-nested, Par/Choice branches sorted
// by canonical order (done/dead flags break exact structural ties only),
// init payloads normalized recursively. Idempotent. Pointer positions
// survive relabeling.
Trace normalize(const Trace& t);

bool trace_eq(const Trace& a, const Trace& b);  // structural, includes flags
int trace_cmp(const Trace& a, const Trace& b);

// Display form without pointer marks; same-kind nesting is flattened for
// readability ("a.b.c", "(a|b|c)"). Used for init payloads and dead branches.
std::string plain_text(const Trace& t);

// Collects the display parts of a group node, merging same-kind kids.
void display_parts(const Trace& t, std::vector<const Trace*>& out);

}  // namespace hybridwf
