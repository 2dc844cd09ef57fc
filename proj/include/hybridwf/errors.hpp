#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace hybridwf {

// Base of every condition the library raises on purpose. name() is the
// stable diagnostic category printed by tools; what() carries the details.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what)
        : std::runtime_error(what), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

// Builder input is incomplete: an id, source, or destination is missing.
struct SchemaError : Error {
    explicit SchemaError(const std::string& what) : Error("SchemaError", what) {}
};

// A shape-directed operation was handed a trace that is not builder-shaped.
struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("ShapeError", what) {}
};

// A pointer operation named a position that is not at the frontier, or a
// choice resolution that contradicts an already fired branch.
struct NotEnabledError : Error {
    explicit NotEnabledError(const std::string& what) : Error("NotEnabled", what) {}
};

struct UnknownInputError : Error {
    explicit UnknownInputError(const std::string& what) : Error("UnknownInput", what) {}
};

// A lost datum has no producer to re-run, so no recovery plan exists.
struct UnrecoverableError : Error {
    explicit UnrecoverableError(const std::string& what) : Error("Unrecoverable", what) {}
};

struct PlanInconsistentError : Error {
    explicit PlanInconsistentError(const std::string& what) : Error("PlanInconsistent", what) {}
};

// An install targets a location other than the mapped one.
struct MappingMismatchError : Error {
    explicit MappingMismatchError(const std::string& what) : Error("MappingMismatch", what) {}
};

// The requested exec outcome contradicts the data present at the location.
struct OutcomeConflictError : Error {
    explicit OutcomeConflictError(const std::string& what) : Error("OutcomeConflict", what) {}
};

struct ValueAbsentError : Error {
    explicit ValueAbsentError(const std::string& what) : Error("ValueAbsent", what) {}
};

struct PremiseFailedError : Error {
    explicit PremiseFailedError(const std::string& what) : Error("PremiseFailed", what) {}
};

struct NoProducerError : Error {
    explicit NoProducerError(const std::string& what) : Error("NoProducer", what) {}
};

struct BudgetExhaustedError : Error {
    explicit BudgetExhaustedError(const std::string& what) : Error("BudgetExhausted", what) {}
};

// Quiescence with unconsumed err values: some failure was never recovered.
struct StuckError : Error {
    explicit StuckError(const std::string& what) : Error("StuckWithPendingErrors", what) {}
};

// A serialized event log cannot be read back: malformed JSON line, unknown
// rule name or unknown outcome.
struct LogFormatError : Error {
    explicit LogFormatError(const std::string& what) : Error("BadEventLog", what) {}
};

// A logged event cannot be reproduced against the current state: no enabled
// instance matches it, or the digest chain diverges.
struct ReplayMismatchError : Error {
    explicit ReplayMismatchError(const std::string& what) : Error("ReplayMismatch", what) {}
};

// The driver coordinates every recovery and is assumed failure-free; it can
// never be wiped.
struct ProtectedLocationError : Error {
    explicit ProtectedLocationError(const std::string& what) : Error("ProtectedLocation", what) {}
};

// A workflow document is malformed or breaks a spec invariant; compile
// refuses it.
struct ValidationFailedError : Error {
    explicit ValidationFailedError(const std::string& what) : Error("ValidationFailed", what) {}
};

// Terminal outputs were requested before every sink confirmation arrived.
struct IncompleteRunError : Error {
    explicit IncompleteRunError(const std::string& what) : Error("IncompleteRun", what) {}
};

}  // namespace hybridwf
