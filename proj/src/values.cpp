#include "hybridwf/values.hpp"

#include <sstream>

namespace hybridwf {

namespace {

template <typename T>
int three_way(const T& a, const T& b) {
    if (a < b) return -1;
    if (b < a) return 1;
    return 0;
}

int cmp(const FailureRef& a, const FailureRef& b) {
    if (a.index() != b.index()) return a.index() < b.index() ? -1 : 1;
    switch (a.index()) {
        case 0: return three_way(std::get<StepFailed>(a), std::get<StepFailed>(b));
        case 1: return three_way(std::get<DataSetLost>(a), std::get<DataSetLost>(b));
        case 2: return three_way(std::get<DataNotReceived>(a), std::get<DataNotReceived>(b));
        case 3: return three_way(std::get<MsgNotReceived>(a), std::get<MsgNotReceived>(b));
        default: return 0;  // AnyFailure
    }
}

int cmp(const Value& a, const Value& b) {
    if (a.index() != b.index()) return a.index() < b.index() ? -1 : 1;
    switch (a.index()) {
        case 0: return three_way(std::get<DataVal>(a), std::get<DataVal>(b));
        case 1: return three_way(std::get<StepMsg>(a), std::get<StepMsg>(b));
        case 2: return three_way(std::get<DataProducedMsg>(a), std::get<DataProducedMsg>(b));
        case 3: return three_way(std::get<DataAck>(a), std::get<DataAck>(b));
        case 4: return three_way(std::get<MsgAck>(a), std::get<MsgAck>(b));
        default:
            return cmp(std::get<ErrVal>(a).failure, std::get<ErrVal>(b).failure);
    }
}

}  // namespace

bool operator<(const FailureRef& a, const FailureRef& b) { return cmp(a, b) < 0; }

std::string to_text(const FailureRef& f) {
    struct Printer {
        std::string operator()(const StepFailed& x) const { return x.step.str(); }
        std::string operator()(const DataSetLost& x) const {
            std::string out = "{";
            bool first = true;
            for (const auto& d : x.data) {
                if (!first) out += ',';
                out += d.str();
                first = false;
            }
            out += "}@" + x.at.str();
            return out;
        }
        std::string operator()(const DataNotReceived& x) const {
            return x.data.str() + "@" + x.at.str();
        }
        std::string operator()(const MsgNotReceived& x) const {
            return "msg(" + x.step.str() + ")@" + x.at.str();
        }
        std::string operator()(const AnyFailure&) const { return "x"; }
    };
    return std::visit(Printer{}, f);
}

bool operator==(const ErrVal& a, const ErrVal& b) { return cmp(a.failure, b.failure) == 0; }
bool operator<(const ErrVal& a, const ErrVal& b) { return a.failure < b.failure; }

bool operator<(const Value& a, const Value& b) { return cmp(a, b) < 0; }
bool value_eq(const Value& a, const Value& b) { return cmp(a, b) == 0; }

std::string to_text(const Value& v) {
    struct Printer {
        std::string operator()(const DataVal& x) const { return x.id.str(); }
        std::string operator()(const StepMsg& x) const { return "msg(" + x.step.str() + ")"; }
        std::string operator()(const DataProducedMsg& x) const {
            return "msg(" + x.id.str() + "@" + x.at.str() + ")";
        }
        std::string operator()(const DataAck& x) const { return "ok(" + x.id.str() + ")"; }
        std::string operator()(const MsgAck& x) const {
            return "ok(msg(" + x.step.str() + "))";
        }
        std::string operator()(const ErrVal& x) const {
            return "err(" + to_text(x.failure) + ")";
        }
    };
    return std::visit(Printer{}, v);
}

std::string to_text(const ValueSet& set) {
    std::string out = "{";
    bool first = true;
    for (const auto& v : set) {
        if (!first) out += ", ";
        out += to_text(v);
        first = false;
    }
    out += "}";
    return out;
}

bool is_confirmation(const Value& v) {
    return std::holds_alternative<DataProducedMsg>(v) || std::holds_alternative<DataAck>(v) ||
           std::holds_alternative<MsgAck>(v);
}

}  // namespace hybridwf
