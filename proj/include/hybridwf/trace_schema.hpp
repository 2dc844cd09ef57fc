#pragma once

#include <string>
#include <vector>

#include "hybridwf/errors.hpp"
#include "hybridwf/trace.hpp"

namespace hybridwf {

// Builder inputs for the paired step/driver traces. One schema describes a
// single step: where it runs, which data it consumes and from where, which
// data it produces and where each product must travel next.

struct InputSpec {
    DataId data;
    // Location the datum arrives from. When this equals the driver location
    // the driver itself ships the datum; otherwise a producing step sends it
    // and the driver only awaits the receipt confirmation.
    LocationId source;
};

struct OutputSpec {
    DataId data;
    // Locations the datum must be forwarded to after the step finishes. May
    // be empty for terminal results that stay where they were produced.
    std::vector<LocationId> destinations;
};

struct StepSchema {
    StepId step;
    LocationId location;  // where the step executes
    LocationId driver;    // orchestrating location
    std::vector<InputSpec> inputs;
    std::vector<OutputSpec> outputs;
};

// Worker-side trace for one step:
//
//   ( recv-trigger.conf | recv-input.conf ... )
//   . exec(s, I, O)
//   . ( (send(msg(d@l),ld) + send(err(x),ld)) | ... )   one choice per output
//   . ( send(d, dest) | ... )                           one send per route
//
// Every confirmation choice targets the driver; err(x) in a report branch is
// the failure wildcard resolved when the branch fires. Products with an
// empty input or output list collapse (a step without data inputs starts
// with just the trigger receive).
// Throws SchemaError when an id or location is missing or repeated.
Trace make_step_trace(const StepSchema& schema);

// Driver-side counterpart:
//
//   init(t(s), l)
//   . ( send-trigger.confrecv | send-input.confrecv ... | confrecv ... )
//   . ( (recv(msg(d@l),l) + recv(err(x),l)) | ... )
//
// Driver-held inputs are sent and then confirmed; inputs arriving from other
// locations contribute only the confirmation receive. The init payload is
// the full worker trace for the same schema.
Trace make_driver_trace(const StepSchema& schema);

// Confirmation halves used by the exchange builders and by recovery spawns:
// after receiving v at `at`, the holder reports the receipt or the miss to
// the driver; the driver-side mirror awaits one of the two.
Trace make_confirm_send(const Value& v, const LocationId& at, const LocationId& driver);
Trace make_confirm_recv(const Value& v, const LocationId& at);

// Trigger exchange halves: the worker receives the step message from the
// driver and confirms it; the driver sends it and awaits the confirmation.
Trace make_trigger_recv_exchange(const StepId& s, const LocationId& at, const LocationId& driver);
Trace make_trigger_send_exchange(const StepId& s, const LocationId& to);

// Worker-side re-execution trace: like make_step_trace, but only the given
// input exchanges are emitted (sources may be rewired to wherever the data
// survives). The exec action still checks the step's full input set, so a
// datum that should be on site but is not surfaces as a missing-input
// failure. An empty exchange list yields the same trace as strip_input of
// the full build.
Trace make_recovery_step_trace(const StepSchema& schema, const std::vector<InputSpec>& exchanges);

// Driver-side counterpart without the leading init: recovery re-executions
// reuse traces installed directly at the worker. Exchanges with the driver
// as source become send-and-confirm chains; the rest contribute only the
// confirmation receive.
Trace make_recovery_driver_trace(const StepSchema& schema, const std::vector<InputSpec>& exchanges);

// Full re-installation chain for a producer rerun: init of the rewired
// worker trace at the step's location, then the driver-side exchanges for
// the same rewired inputs. Shape-identical to make_driver_trace when the
// exchanges equal the schema's declared inputs.
Trace make_recovery_install_trace(const StepSchema& schema, const std::vector<InputSpec>& exchanges);

// Removes the data-input exchanges from a builder-shaped trace, keeping the
// trigger exchange, exec, reporting, and output sends. On a driver trace the
// leading init is dropped as well: re-execution reuses the trace already
// installed at the worker. All pointer marks are cleared, so the result is a
// fresh trace ready to be scheduled. Throws ShapeError when the input is not
// recognisably builder-shaped.
Trace strip_input(const Trace& t);

// Single input exchange as used inside make_step_trace: receive `d` from
// `source`, then confirm to `driver` that it arrived at `at`.
Trace make_data_recv_exchange(const DataId& d, const LocationId& source, const LocationId& at,
                              const LocationId& driver);

// Driver-side mirror: send `d` to `to`, then await ok(d) or err(d@to).
Trace make_data_send_exchange(const DataId& d, const LocationId& to);

}  // namespace hybridwf
