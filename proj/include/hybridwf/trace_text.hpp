#pragma once

#include <string>

#include "hybridwf/errors.hpp"
#include "hybridwf/trace.hpp"
#include "hybridwf/values.hpp"

namespace hybridwf {

// Text round trip for traces with execution pointers. marked_text renders the
// pointer state as "^" marks; parse_trace rebuilds the same done/dead flags
// from the marks. Input without any mark parses as an unexecuted trace.
//
// Grammar (loosest binding first): choice "+", parallel "|", sequence ".".
// Atoms are "0", actions, parenthesized groups, and the conf(v,l[,ld])
// shorthand, which expands to the confirmation choice
// (send(ok(v),ld) + send(err(v@l),ld)) at parse time.
//
// Mark placement in canonical output:
//   ^a.b        nothing executed, pointer at the front
//   a.^b        a done, b next
//   a.b^        fully executed
//   (a^|^b)     each parallel branch carries its own pointer
//   (a^+b)      fired choice: mark on the branch that ran, the other is dead
//   (^a+b)      resolved but unfired choice: b is dead, a is next
// A completed region keeps the fired-branch marks of its choices so the
// branch selection stays recoverable.

enum class ParseErrorKind {
    Syntax,
    // Two pointer marks claim the same sequential scope, e.g. "a^.^b", "^a^",
    // or marks in both branches of one fired choice.
    DuplicatePointer,
};

class ParseError : public Error {
public:
    ParseError(ParseErrorKind kind, const std::string& what, int line, int col);

    ParseErrorKind kind() const { return kind_; }
    int line() const { return line_; }
    int col() const { return col_; }

private:
    ParseErrorKind kind_;
    int line_;
    int col_;
};

// Canonical marked rendering. The trace should be in normalized shape; then
// parse_trace(marked_text(t)) reproduces t exactly (trace_eq).
std::string marked_text(const Trace& t);

// marked_text of the normal form: parse_trace(print_trace(t)) equals
// normalize(t) for every trace.
std::string print_trace(const Trace& t);

Trace parse_trace(const std::string& text);

// Standalone value / failure readers sharing the trace surface syntax,
// e.g. "msg(d2@l1)", "ok(d1)", "err({d1,d3}@l2)", "{d1,d3}@l2", "x".
Value parse_value(const std::string& text);
FailureRef parse_failure(const std::string& text);

}  // namespace hybridwf
