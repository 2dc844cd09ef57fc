#pragma once

#include <set>
#include <string>
#include <variant>

#include "hybridwf/ids.hpp"

namespace hybridwf {

// ---------------------------------------------------------------------------
// Failure references: the payloads of err(...) values and rec(...) actions.
// ---------------------------------------------------------------------------

// err(s): step s failed softly; its inputs survive at its location.
struct StepFailed {
    StepId step;
    auto operator<=>(const StepFailed&) const = default;
};

// err(D@l): the data set D was lost at location l (fail-stop wipe). D is
// never empty.
struct DataSetLost {
    std::set<DataId> data;
    LocationId at;
    auto operator<=>(const DataSetLost&) const = default;
};

// err(d@l): datum d was not received at location l (transfer failure).
struct DataNotReceived {
    DataId data;
    LocationId at;
    auto operator<=>(const DataNotReceived&) const = default;
};

// err(msg(s)@l): the trigger message of step s was not received at l.
struct MsgNotReceived {
    StepId step;
    LocationId at;
    auto operator<=>(const MsgNotReceived&) const = default;
};

// err(x): schematic failure in a not-yet-resolved report branch. Matches any
// concrete failure; instantiated when the branch fires. The payload token
// "x" is reserved for this alternative in the text syntax.
struct AnyFailure {
    auto operator<=>(const AnyFailure&) const = default;
};

using FailureRef =
    std::variant<StepFailed, DataSetLost, DataNotReceived, MsgNotReceived, AnyFailure>;

bool operator<(const FailureRef& a, const FailureRef& b);
std::string to_text(const FailureRef& f);

// ---------------------------------------------------------------------------
// Values: the elements of a location's data set D_l.
// ---------------------------------------------------------------------------

struct DataVal {  // d
    DataId id;
    auto operator<=>(const DataVal&) const = default;
};

struct StepMsg {  // msg(s), the trigger of step s
    StepId step;
    auto operator<=>(const StepMsg&) const = default;
};

struct DataProducedMsg {  // msg(d@l): d was produced at location l
    DataId id;
    LocationId at;
    auto operator<=>(const DataProducedMsg&) const = default;
};

struct DataAck {  // ok(d): receipt confirmation for datum d
    DataId id;
    auto operator<=>(const DataAck&) const = default;
};

struct MsgAck {  // ok(msg(s)): receipt confirmation for the trigger of s
    StepId step;
    auto operator<=>(const MsgAck&) const = default;
};

struct ErrVal {  // err(x)
    FailureRef failure;
};

bool operator==(const ErrVal& a, const ErrVal& b);
bool operator<(const ErrVal& a, const ErrVal& b);

using Value = std::variant<DataVal, StepMsg, DataProducedMsg, DataAck, MsgAck, ErrVal>;

bool operator<(const Value& a, const Value& b);
bool value_eq(const Value& a, const Value& b);
std::string to_text(const Value& v);

using ValueSet = std::set<Value>;

std::string to_text(const ValueSet& set);  // "{a, b, ...}" sorted

inline bool is_err(const Value& v) { return std::holds_alternative<ErrVal>(v); }

// Confirmation-type values (msg(d@l), ok(d), ok(msg s)) move between
// locations; payload-type values (d, msg(s)) are copied and may fail in
// transit.
bool is_confirmation(const Value& v);

}  // namespace hybridwf
