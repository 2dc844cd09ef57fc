#include "hybridwf/workflow.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "hybridwf/errors.hpp"

namespace hybridwf {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ValidationFailedError(msg); }

bool plain_name(const std::string& n) {
    return !n.empty() && n.find('#') == std::string::npos && n.find('@') == std::string::npos;
}

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) bad("unknown key \"" + it.key() + "\" in " + where);
    }
}

std::string name_field(const json& obj, const std::string& where, const char* key) {
    if (!obj.contains(key)) bad(where + " is missing \"" + key + "\"");
    const json& v = obj.at(key);
    if (!v.is_string()) bad(where + " key \"" + key + "\" must be a string");
    std::string n = v.get<std::string>();
    if (!plain_name(n))
        bad(where + " name \"" + n + "\" is empty or uses the reserved # or @ characters");
    return n;
}

std::vector<std::string> name_list(const json& v, const std::string& where) {
    if (!v.is_array()) bad(where + " must be an array of names");
    std::vector<std::string> out;
    for (const json& e : v) {
        if (!e.is_string()) bad(where + " entries must be strings");
        std::string n = e.get<std::string>();
        if (!plain_name(n))
            bad(where + " name \"" + n + "\" is empty or uses the reserved # or @ characters");
        out.push_back(std::move(n));
    }
    return out;
}

// Shared dataflow facts derived from the declared (pre-unroll) spec.
struct Analysis {
    std::map<std::string, const StepDef*> step_by_name;
    std::map<std::string, const StepDef*> producer_of;
    std::set<std::string> initial;
    // Effective loops only: single-iteration loops collapse away.
    std::map<std::string, const LoopDef*> loop_of;
    std::map<std::string, int> width;
    std::map<std::string, int> data_width;
    std::vector<Diagnostic> diags;
};

void note(Analysis& an, const std::string& kind, const std::string& detail) {
    an.diags.push_back({kind, detail});
}

int resolve_width(Analysis& an, const StepDef& sd, std::set<std::string>& visiting) {
    auto it = an.width.find(sd.name);
    if (it != an.width.end()) return it->second;
    int w = 0;
    if (sd.scatter) {
        if (!sd.scatter->from_producer) {
            if (sd.scatter->count < 1) {
                note(an, "BadScatter", "step " + sd.name + " declares a scatter count below 1");
            } else {
                w = sd.scatter->count;
            }
        } else if (sd.inputs.empty()) {
            note(an, "BadScatter",
                 "step " + sd.name + " scatters from-producer but has no inputs");
        } else if (!visiting.insert(sd.name).second) {
            note(an, "BadScatter", "from-producer scatter cycle through step " + sd.name);
        } else {
            auto pit = an.producer_of.find(sd.inputs.front().name);
            if (pit == an.producer_of.end()) {
                note(an, "BadScatter", "step " + sd.name + " scatters from-producer but input " +
                                           sd.inputs.front().name + " has no producing step");
            } else {
                w = resolve_width(an, *pit->second, visiting);
                if (w == 0)
                    note(an, "BadScatter", "step " + sd.name +
                                               " scatters from-producer but its producer " +
                                               pit->second->name + " is not scattered");
            }
            visiting.erase(sd.name);
        }
    }
    an.width[sd.name] = w;
    return w;
}

Analysis analyze(const WorkflowSpec& spec) {
    Analysis an;
    for (const DataId& d : spec.initial_data) an.initial.insert(d.name);

    for (const StepDef& sd : spec.steps) {
        if (!an.step_by_name.emplace(sd.name, &sd).second)
            note(an, "DuplicateStep", "step " + sd.name + " is declared twice");
    }
    for (const StepDef& sd : spec.steps) {
        if (an.step_by_name.at(sd.name) != &sd) continue;
        for (const DataId& o : sd.outputs) {
            if (an.initial.count(o.name)) {
                note(an, "DuplicateProducer",
                     "datum " + o.name + " is initial but also produced by " + sd.name);
            } else if (!an.producer_of.emplace(o.name, &sd).second) {
                note(an, "DuplicateProducer",
                     "datum " + o.name + " is produced by both " +
                         an.producer_of.at(o.name)->name + " and " + sd.name);
            }
        }
    }

    for (const LoopDef& lp : spec.loops) {
        if (lp.iterations < 1) {
            note(an, "BadLoop", "a loop declares fewer than 1 iterations");
            continue;
        }
        for (const std::string& m : lp.member_steps) {
            if (!an.step_by_name.count(m)) {
                note(an, "UnknownLoopStep", "loop member " + m + " is not a declared step");
            } else if (lp.iterations > 1 && !an.loop_of.emplace(m, &lp).second) {
                note(an, "BadLoop", "step " + m + " belongs to two loops");
            }
        }
    }

    std::set<std::string> visiting;
    for (const StepDef& sd : spec.steps) resolve_width(an, sd, visiting);

    // Fan width of each datum: its producer's width, or the width its
    // scattered consumers agree on. Initial data broadcast unsplit.
    for (const StepDef& sd : spec.steps) {
        for (const DataId& o : sd.outputs) {
            if (an.initial.count(o.name)) continue;
            if (an.producer_of.at(o.name) != &sd) continue;
            int w = an.width.at(sd.name);
            for (const StepDef& cs : spec.steps) {
                bool consumes = false;
                for (const DataId& in : cs.inputs)
                    if (in.name == o.name) consumes = true;
                if (!consumes) continue;
                int cw = an.width.at(cs.name);
                if (cw == 0) continue;
                if (w == 0) {
                    w = cw;
                } else if (w != cw) {
                    note(an, "ScatterMismatch",
                         "datum " + o.name + " fans out with width " + std::to_string(w) +
                             " but step " + cs.name + " expects width " + std::to_string(cw));
                }
            }
            an.data_width[o.name] = w;
        }
    }
    return an;
}

bool in_same_loop(const Analysis& an, const std::string& a, const std::string& b) {
    auto ia = an.loop_of.find(a);
    auto ib = an.loop_of.find(b);
    return ia != an.loop_of.end() && ib != an.loop_of.end() && ia->second == ib->second;
}

// Concrete ids an input slot reads. `iter` is the iteration the datum is
// taken from (already shifted for loop-carried slots), -1 outside loops.
std::vector<DataId> resolve_input(const Analysis& an, const std::string& n, int consumer_j,
                                  int consumer_w, int iter) {
    int dw = 0;
    auto dit = an.data_width.find(n);
    if (dit != an.data_width.end()) dw = dit->second;
    std::vector<DataId> out;
    if (dw > 0 && consumer_w > 0) {
        out.push_back({n, consumer_j, iter});
    } else if (dw > 0) {
        for (int j = 1; j <= dw; ++j) out.push_back({n, j, iter});
    } else {
        out.push_back({n, -1, iter});
    }
    return out;
}

// Iteration index the datum named n carries when read by `consumer` during
// iteration `iter` of its loop (or -1 outside).
int datum_iteration(const Analysis& an, const std::string& n, const StepDef& consumer, int iter) {
    auto pit = an.producer_of.find(n);
    if (pit == an.producer_of.end()) return -1;
    const std::string& pname = pit->second->name;
    if (in_same_loop(an, pname, consumer.name)) return iter;
    auto plit = an.loop_of.find(pname);
    // Data leaving a loop comes from its final iteration.
    if (plit != an.loop_of.end()) return plit->second->iterations;
    return -1;
}

std::vector<StepInstance> emit_instances(const WorkflowSpec& spec, const Analysis& an,
                                         const PlacementOverrides& placement) {
    std::vector<StepInstance> out;

    auto emit_step = [&](const StepDef& sd, int iter, const LoopDef* lp) {
        int w = an.width.at(sd.name);
        int count = w > 0 ? w : 1;
        for (int k = 1; k <= count; ++k) {
            int j = w > 0 ? k : -1;
            StepInstance inst;
            inst.id = StepId{sd.name, j, iter};

            if (sd.pool.empty()) {
                inst.location = LocationId{""};
            } else {
                inst.location = sd.pool[static_cast<std::size_t>(w > 0 ? k - 1 : 0) %
                                        sd.pool.size()];
            }
            auto pit = placement.find(inst.id);
            if (pit != placement.end()) inst.location = pit->second;

            for (const DataId& in : sd.inputs) {
                const CarriedDatum* carried = nullptr;
                if (lp)
                    for (const CarriedDatum& c : lp->carried_data)
                        if (c.to.name == in.name) carried = &c;
                if (carried && iter > 1) {
                    int di = iter - 1;
                    for (DataId d : resolve_input(an, carried->from.name, j, w, di))
                        inst.inputs.push_back(d);
                } else {
                    int di = datum_iteration(an, in.name, sd, iter);
                    for (DataId d : resolve_input(an, in.name, j, w, di))
                        inst.inputs.push_back(d);
                }
            }

            for (const DataId& o : sd.outputs) {
                int dw = 0;
                auto dit = an.data_width.find(o.name);
                if (dit != an.data_width.end()) dw = dit->second;
                if (w > 0) {
                    inst.outputs.push_back({o.name, j, iter});
                } else if (dw > 0) {
                    for (int f = 1; f <= dw; ++f) inst.outputs.push_back({o.name, f, iter});
                } else {
                    inst.outputs.push_back({o.name, -1, iter});
                }
            }
            out.push_back(std::move(inst));
        }
    };

    std::set<const LoopDef*> expanded;
    for (const StepDef& sd : spec.steps) {
        if (an.step_by_name.count(sd.name) && an.step_by_name.at(sd.name) != &sd)
            continue;  // duplicate declaration, first one wins
        auto lit = an.loop_of.find(sd.name);
        if (lit == an.loop_of.end()) {
            emit_step(sd, -1, nullptr);
            continue;
        }
        const LoopDef* lp = lit->second;
        if (!expanded.insert(lp).second) continue;
        for (int i = 1; i <= lp->iterations; ++i)
            for (const StepDef& m : spec.steps) {
                auto mit = an.loop_of.find(m.name);
                if (mit != an.loop_of.end() && mit->second == lp &&
                    an.step_by_name.at(m.name) == &m)
                    emit_step(m, i, lp);
            }
    }

    std::map<DataId, StepId> produced_by;
    for (const StepInstance& inst : out)
        for (const DataId& o : inst.outputs) produced_by.emplace(o, inst.id);
    for (StepInstance& inst : out) {
        std::set<StepId> deps;
        for (const DataId& in : inst.inputs) {
            auto it = produced_by.find(in);
            if (it != produced_by.end() && !(it->second == inst.id)) deps.insert(it->second);
        }
        inst.deps.assign(deps.begin(), deps.end());
    }
    return out;
}

}  // namespace

WorkflowSpec parse_workflow_spec(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) bad("workflow document is not valid JSON");
    if (!doc.is_object()) bad("workflow document must be a JSON object");
    expect_keys(doc, "the workflow document",
                {"steps", "loops", "initial_data", "locations", "driver"});

    WorkflowSpec spec;
    spec.driver = LocationId{name_field(doc, "the workflow document", "driver")};

    if (!doc.contains("locations")) bad("the workflow document is missing \"locations\"");
    for (std::string& n : name_list(doc.at("locations"), "locations"))
        spec.locations.push_back(LocationId{std::move(n)});

    if (doc.contains("initial_data"))
        for (std::string& n : name_list(doc.at("initial_data"), "initial_data"))
            spec.initial_data.push_back(DataId{std::move(n)});

    if (!doc.contains("steps")) bad("the workflow document is missing \"steps\"");
    if (!doc.at("steps").is_array()) bad("\"steps\" must be an array");
    for (const json& js : doc.at("steps")) {
        if (!js.is_object()) bad("each step must be an object");
        StepDef sd;
        sd.name = name_field(js, "a step", "id");
        const std::string where = "step " + sd.name;
        expect_keys(js, where, {"id", "inputs", "outputs", "location", "scatter"});
        if (js.contains("inputs"))
            for (std::string& n : name_list(js.at("inputs"), where + " inputs"))
                sd.inputs.push_back(DataId{std::move(n)});
        if (js.contains("outputs"))
            for (std::string& n : name_list(js.at("outputs"), where + " outputs"))
                sd.outputs.push_back(DataId{std::move(n)});
        if (!js.contains("location")) bad(where + " is missing \"location\"");
        const json& locj = js.at("location");
        if (locj.is_string()) {
            std::string n = locj.get<std::string>();
            if (!plain_name(n)) bad(where + " location name is malformed");
            sd.pool.push_back(LocationId{std::move(n)});
        } else if (locj.is_array()) {
            for (std::string& n : name_list(locj, where + " location"))
                sd.pool.push_back(LocationId{std::move(n)});
            if (sd.pool.empty()) bad(where + " location pool is empty");
        } else {
            bad(where + " location must be a name or an array of names");
        }
        if (js.contains("scatter")) {
            const json& sc = js.at("scatter");
            ScatterSpec ss;
            if (sc.is_string() && sc.get<std::string>() == "from-producer") {
                ss.from_producer = true;
            } else if (sc.is_number_integer() && sc.get<int>() >= 1) {
                ss.count = sc.get<int>();
            } else {
                bad(where + " scatter must be a positive integer or \"from-producer\"");
            }
            sd.scatter = ss;
        }
        spec.steps.push_back(std::move(sd));
    }

    if (doc.contains("loops")) {
        if (!doc.at("loops").is_array()) bad("\"loops\" must be an array");
        for (const json& jl : doc.at("loops")) {
            if (!jl.is_object()) bad("each loop must be an object");
            expect_keys(jl, "a loop", {"member_steps", "iterations", "carried_data"});
            LoopDef lp;
            if (!jl.contains("member_steps")) bad("a loop is missing \"member_steps\"");
            lp.member_steps = name_list(jl.at("member_steps"), "loop member_steps");
            if (!jl.contains("iterations") || !jl.at("iterations").is_number_integer() ||
                jl.at("iterations").get<int>() < 1)
                bad("loop iterations must be a positive integer");
            lp.iterations = jl.at("iterations").get<int>();
            if (jl.contains("carried_data")) {
                if (!jl.at("carried_data").is_array()) bad("carried_data must be an array");
                for (const json& jc : jl.at("carried_data")) {
                    if (!jc.is_object()) bad("each carried_data entry must be an object");
                    expect_keys(jc, "a carried_data entry", {"from", "to"});
                    CarriedDatum c;
                    c.from = DataId{name_field(jc, "a carried_data entry", "from")};
                    c.to = DataId{name_field(jc, "a carried_data entry", "to")};
                    lp.carried_data.push_back(std::move(c));
                }
            }
            spec.loops.push_back(std::move(lp));
        }
    }
    return spec;
}

std::vector<Diagnostic> validate(const WorkflowSpec& spec) {
    Analysis an = analyze(spec);
    std::vector<Diagnostic> out = an.diags;

    auto check_name = [&](const std::string& n, const std::string& what) {
        if (!plain_name(n)) out.push_back({"ReservedName", what + " \"" + n + "\" is malformed"});
    };
    std::set<LocationId> known(spec.locations.begin(), spec.locations.end());
    check_name(spec.driver.name, "driver location");
    for (const LocationId& l : spec.locations) check_name(l.name, "location");
    for (const DataId& d : spec.initial_data) check_name(d.name, "initial datum");

    for (const StepDef& sd : spec.steps) {
        check_name(sd.name, "step");
        for (const DataId& d : sd.inputs) check_name(d.name, "input of " + sd.name);
        for (const DataId& d : sd.outputs) check_name(d.name, "output of " + sd.name);
        if (sd.pool.empty())
            out.push_back({"UnknownLocation", "step " + sd.name + " declares no location"});
        for (const LocationId& l : sd.pool) {
            if (l == spec.driver)
                out.push_back(
                    {"DriverMapped", "step " + sd.name + " is placed on the driver location"});
            else if (!known.count(l))
                out.push_back({"UnknownLocation", "step " + sd.name + " names unknown location " +
                                                      l.str()});
        }
    }

    for (const LoopDef& lp : spec.loops) {
        for (const CarriedDatum& c : lp.carried_data) {
            bool from_ok = false;
            bool to_ok = false;
            for (const std::string& m : lp.member_steps) {
                auto it = an.step_by_name.find(m);
                if (it == an.step_by_name.end()) continue;
                for (const DataId& o : it->second->outputs)
                    if (o.name == c.from.name) from_ok = true;
                for (const DataId& i : it->second->inputs)
                    if (i.name == c.to.name) to_ok = true;
            }
            if (!from_ok)
                out.push_back({"BadLoop", "carried datum " + c.from.name +
                                              " is not produced inside the loop"});
            if (!to_ok)
                out.push_back({"BadLoop", "carried datum " + c.to.name +
                                              " is not consumed inside the loop"});
        }
    }

    // Dataflow checks run on the unrolled graph; skip them when the step
    // table itself is broken, the instance set would be nonsense.
    for (const Diagnostic& d : out)
        if (d.kind == "DuplicateStep" || d.kind == "UnknownLoopStep") return out;

    std::vector<StepInstance> inst = emit_instances(spec, an, {});
    std::map<DataId, StepId> produced_by;
    std::map<StepId, const StepInstance*> by_id;
    for (const StepInstance& i : inst) {
        by_id[i.id] = &i;
        for (const DataId& o : i.outputs) produced_by.emplace(o, i.id);
    }
    std::set<std::string> initial(an.initial);
    for (const StepInstance& i : inst)
        for (const DataId& in : i.inputs)
            if (!produced_by.count(in) && !(in.scatter == -1 && in.iteration == -1 &&
                                            initial.count(in.name)))
                out.push_back({"DanglingInput", "step " + i.id.str() + " reads " + in.str() +
                                                    " which nothing produces"});

    // Cycle check over instance dependencies, three-color DFS.
    std::map<StepId, int> color;
    bool cyclic = false;
    std::function<void(const StepId&)> visit = [&](const StepId& v) {
        color[v] = 1;
        for (const StepId& w : by_id.at(v)->deps) {
            int c = color.count(w) ? color.at(w) : 0;
            if (c == 1) {
                cyclic = true;
            } else if (c == 0) {
                visit(w);
            }
        }
        color[v] = 2;
    };
    for (const StepInstance& i : inst)
        if (!color.count(i.id)) visit(i.id);
    if (cyclic) out.push_back({"CycleDetected", "step instance dependencies form a cycle"});

    return out;
}

std::vector<StepInstance> unroll(const WorkflowSpec& spec, const PlacementOverrides& placement) {
    Analysis an = analyze(spec);
    return emit_instances(spec, an, placement);
}

SystemState compile(const WorkflowSpec& spec, const PlacementOverrides& placement) {
    std::vector<Diagnostic> diags = validate(spec);
    if (!diags.empty()) {
        std::ostringstream os;
        os << diags[0].kind << ": " << diags[0].detail;
        if (diags.size() > 1) os << " (and " << diags.size() - 1 << " more)";
        throw ValidationFailedError(os.str());
    }

    std::vector<StepInstance> instances = unroll(spec, placement);

    SystemState s;
    s.driver.loc.id = spec.driver;
    for (const LocationId& l : spec.locations) {
        LocationCfg lc;
        lc.id = l;
        s.locations.emplace(l, std::move(lc));
    }

    std::map<DataId, const StepInstance*> producer;
    std::map<DataId, std::set<LocationId>> destinations;
    for (const StepInstance& inst : instances)
        for (const DataId& o : inst.outputs) producer.emplace(o, &inst);
    for (const StepInstance& inst : instances)
        for (const DataId& in : inst.inputs) destinations[in].insert(inst.location);

    for (const DataId& d : spec.initial_data) {
        s.driver.loc.data.insert(Value{DataVal{d}});
        s.driver.provenance.record_initial(d, spec.driver);
    }

    std::vector<Trace> driver_chain;
    std::vector<Trace> worker_chain;
    for (const StepInstance& inst : instances) {
        StepSchema sc;
        sc.step = inst.id;
        sc.location = inst.location;
        sc.driver = spec.driver;
        for (const DataId& in : inst.inputs) {
            auto pit = producer.find(in);
            sc.inputs.push_back({in, pit != producer.end() ? pit->second->location : spec.driver});
        }
        for (const DataId& o : inst.outputs) {
            OutputSpec os;
            os.data = o;
            auto dit = destinations.find(o);
            if (dit != destinations.end())
                os.destinations.assign(dit->second.begin(), dit->second.end());
            sc.outputs.push_back(std::move(os));
        }
        s.driver.schemas[inst.id] = sc;
        s.driver.mapping[inst.id] = inst.location;
        s.driver.loc.data.insert(Value{StepMsg{inst.id}});
        driver_chain.push_back(make_driver_trace(sc));
        worker_chain.push_back(make_step_trace(sc));
    }
    s.driver.loc.trace = par_of(std::move(driver_chain));
    s.driver.workflow_trace = par_of(std::move(worker_chain));
    return s;
}

std::set<DataId> terminal_outputs(const SystemState& state, const WorkflowSpec& spec) {
    std::vector<StepInstance> instances = unroll(spec);
    std::set<DataId> consumed;
    for (const StepInstance& inst : instances)
        for (const DataId& in : inst.inputs) consumed.insert(in);

    std::set<DataId> sinks;
    for (const StepInstance& inst : instances)
        for (const DataId& o : inst.outputs)
            if (!consumed.count(o)) sinks.insert(o);

    std::set<DataId> confirmed;
    for (const Value& v : state.driver.loc.data)
        if (const auto* pm = std::get_if<DataProducedMsg>(&v)) confirmed.insert(pm->id);

    std::vector<std::string> missing;
    for (const DataId& d : sinks)
        if (!confirmed.count(d)) missing.push_back(d.str());
    if (!missing.empty()) {
        std::ostringstream os;
        os << "sink confirmations never reached the driver:";
        for (const std::string& m : missing) os << " " << m;
        throw IncompleteRunError(os.str());
    }
    return sinks;
}

}  // namespace hybridwf
