#pragma once

#include <compare>
#include <cstdint>
#include <string>

namespace hybridwf {

// Identifier of a step instance. `name` is the step base; `scatter` and
// `iteration` are -1 when absent. Rendered as name[#scatter][@iteration],
// e.g. "SumRow#3@2" for scatter index 3 in loop iteration 2.
struct StepId {
    std::string name;
    int scatter = -1;
    int iteration = -1;

    auto operator<=>(const StepId&) const = default;
    bool operator==(const StepId&) const = default;

    std::string str() const;
};

// Identifier of a datum, same shape as StepId: scattered data carry the
// scatter index of the instance that produced or consumes them.
struct DataId {
    std::string name;
    int scatter = -1;
    int iteration = -1;

    auto operator<=>(const DataId&) const = default;
    bool operator==(const DataId&) const = default;

    std::string str() const;
};

struct LocationId {
    std::string name;

    auto operator<=>(const LocationId&) const = default;
    bool operator==(const LocationId&) const = default;

    const std::string& str() const { return name; }
};

// Parses name[#int][@int]; throws std::invalid_argument on malformed text.
StepId parse_step_id(const std::string& text);
DataId parse_data_id(const std::string& text);

}  // namespace hybridwf
