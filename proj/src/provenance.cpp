#include "hybridwf/provenance.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "json.hpp"

namespace hybridwf {

void ProvenanceGraph::record_initial(const DataId& d, const LocationId& driver) {
    Token& t = tokens_[d];
    t.data = d;
    t.producer.reset();
    t.parents.clear();
    t.known_locations.insert(driver);
}

void ProvenanceGraph::record_production(const DataId& d, const StepId& producer,
                                        const LocationId& at,
                                        const std::vector<DataId>& producer_inputs) {
    std::vector<DataId> parents = producer_inputs;
    std::sort(parents.begin(), parents.end());
    parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
    for (const auto& p : parents)
        if (!tokens_.count(p))
            throw UnknownInputError("production of " + d.str() + " consumes " + p.str() +
                                    " which has no token");
    Token& t = tokens_[d];
    t.data = d;
    t.producer = producer;
    t.parents = std::move(parents);
    t.known_locations.insert(at);
}

void ProvenanceGraph::record_delivery(const DataId& d, const LocationId& at) {
    auto it = tokens_.find(d);
    if (it == tokens_.end())
        throw UnknownInputError("delivery of " + d.str() + " which has no token");
    it->second.known_locations.insert(at);
}

void ProvenanceGraph::record_loss(const LocationId& l) {
    for (auto& [d, t] : tokens_) t.known_locations.erase(l);
}

const Token* ProvenanceGraph::find(const DataId& d) const {
    auto it = tokens_.find(d);
    return it == tokens_.end() ? nullptr : &it->second;
}

bool ProvenanceGraph::available(const DataId& d) const {
    const Token* t = find(d);
    return t && t->available();
}

std::vector<const Token*> ProvenanceGraph::tokens() const {
    std::vector<const Token*> out;
    out.reserve(tokens_.size());
    for (const auto& [d, t] : tokens_) out.push_back(&t);
    return out;
}

bool ProvenanceGraph::acyclic() const {
    // Colors: 0 unseen, 1 on the current path, 2 finished.
    std::map<DataId, int> color;
    std::vector<const Token*> stack;
    for (const auto& [d, t] : tokens_) {
        if (color[d]) continue;
        // Iterative depth-first walk along parent links.
        std::vector<std::pair<const Token*, size_t>> path;
        path.push_back({&t, 0});
        color[d] = 1;
        while (!path.empty()) {
            auto& [tok, next] = path.back();
            if (next == tok->parents.size()) {
                color[tok->data] = 2;
                path.pop_back();
                continue;
            }
            const DataId& p = tok->parents[next++];
            auto it = tokens_.find(p);
            if (it == tokens_.end()) continue;
            int& c = color[p];
            if (c == 1) return false;
            if (c == 0) {
                c = 1;
                path.push_back({&it->second, 0});
            }
        }
    }
    return true;
}

std::string ProvenanceGraph::to_dot() const {
    std::ostringstream os;
    os << "digraph provenance {\n";
    os << "  rankdir=LR;\n";
    os << "  node [shape=diamond, style=filled];\n";
    for (const auto& [d, t] : tokens_) {
        os << "  \"" << d.str() << "\" [fillcolor=" << (t.available() ? "palegreen" : "lightcoral");
        if (t.producer) os << ", xlabel=\"" << t.producer->str() << "\"";
        os << "];\n";
    }
    for (const auto& [d, t] : tokens_)
        for (const auto& p : t.parents) os << "  \"" << p.str() << "\" -> \"" << d.str() << "\";\n";
    os << "}\n";
    return os.str();
}

RecoveryPlan plan_rollback(const ProvenanceGraph& g, const StepId& failed,
                           const std::vector<DataId>& failed_inputs) {
    RecoveryPlan plan;
    plan.stop_after = failed;

    std::deque<DataId> queue;
    std::set<DataId> visited;
    std::vector<DataId> frontier = failed_inputs;
    std::sort(frontier.begin(), frontier.end());
    for (const auto& d : frontier)
        if (visited.insert(d).second) queue.push_back(d);

    std::set<StepId> planned;
    while (!queue.empty()) {
        DataId d = queue.front();
        queue.pop_front();
        const Token* tok = g.find(d);
        if (!tok) throw UnknownInputError("rollback reached " + d.str() + " which has no token");
        if (tok->available()) {
            plan.available_inputs.insert({d, *tok->known_locations.begin()});
            continue;
        }
        if (!tok->producer)
            throw UnrecoverableError("lost workflow input " + d.str() + " cannot be regenerated");
        if (planned.insert(*tok->producer).second) plan.steps_to_rerun.push_back(*tok->producer);
        for (const auto& p : tok->parents)
            if (visited.insert(p).second) queue.push_back(p);
    }

    if (!planned.count(failed)) plan.steps_to_rerun.push_back(failed);
    return plan;
}

RecoverySynthesis synthesize_recovery(const RecoveryPlan& plan,
                                      const std::map<StepId, StepSchema>& schemas) {
    std::set<StepId> reruns(plan.steps_to_rerun.begin(), plan.steps_to_rerun.end());
    // Steps owned by a depended-on plan re-ship their outputs as well.
    for (const auto& [id, s] : plan.depends_on) reruns.insert(s);

    std::set<DataId> replanned;
    for (const auto& s : reruns) {
        auto it = schemas.find(s);
        if (it == schemas.end())
            throw PlanInconsistentError("plan step " + s.str() + " has no schema");
        for (const auto& o : it->second.outputs) replanned.insert(o.data);
    }

    RecoverySynthesis out;
    for (const auto& s : plan.steps_to_rerun) {
        const StepSchema& sc = schemas.at(s);
        std::vector<InputSpec> exchanges;
        for (const auto& in : sc.inputs) {
            // Regenerated inside the recovery: the rerun producer re-ships it
            // over the original route.
            if (replanned.count(in.data)) {
                exchanges.push_back(in);
                continue;
            }
            auto av = std::find_if(plan.available_inputs.begin(), plan.available_inputs.end(),
                                   [&](const auto& p) { return p.first == in.data; });
            if (av == plan.available_inputs.end())
                throw PlanInconsistentError("input " + in.data.str() + " of " + s.str() +
                                            " is neither available nor regenerated by the plan");
            const LocationId& holder = av->second;
            // Already on the consumer's location: no exchange at all.
            if (holder == sc.location) continue;
            exchanges.push_back({in.data, holder});
            if (holder != sc.driver)
                out.transfer_sends.push_back({holder, act(SendAction{DataVal{in.data}, sc.location})});
        }
        out.worker_traces.push_back({s, make_recovery_step_trace(sc, exchanges)});
        out.driver_traces.push_back({s, make_recovery_driver_trace(sc, exchanges)});
    }
    return out;
}

void sync_concurrent(std::vector<RecoveryPlan>& plans) {
    std::vector<RecoveryPlan*> order;
    for (auto& p : plans) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const RecoveryPlan* a, const RecoveryPlan* b) { return a->recovery_id < b->recovery_id; });

    std::map<StepId, int> owner;
    for (RecoveryPlan* p : order) {
        std::vector<StepId> kept;
        for (const auto& s : p->steps_to_rerun) {
            auto it = owner.find(s);
            if (it == owner.end()) {
                owner.emplace(s, p->recovery_id);
                kept.push_back(s);
            } else {
                p->depends_on.insert({it->second, s});
            }
        }
        p->steps_to_rerun = std::move(kept);
    }
}

namespace {

nlohmann::ordered_json plan_json(const RecoveryPlan& plan) {
    nlohmann::ordered_json j;
    j["recovery_id"] = "wf" + std::to_string(plan.recovery_id);
    j["steps_to_rerun"] = nlohmann::ordered_json::array();
    for (const auto& s : plan.steps_to_rerun) j["steps_to_rerun"].push_back(s.str());
    j["available_inputs"] = nlohmann::ordered_json::array();
    for (const auto& [d, l] : plan.available_inputs)
        j["available_inputs"].push_back({{"data", d.str()}, {"source", l.str()}});
    j["stop_after"] = plan.stop_after.str();
    j["depends_on"] = nlohmann::ordered_json::array();
    for (const auto& [id, s] : plan.depends_on)
        j["depends_on"].push_back({{"recovery_id", "wf" + std::to_string(id)}, {"step", s.str()}});
    return j;
}

}  // namespace

std::string plan_to_json(const RecoveryPlan& plan) { return plan_json(plan).dump(2); }

std::string plans_to_json(const std::vector<RecoveryPlan>& plans) {
    nlohmann::ordered_json j;
    j["plans"] = nlohmann::ordered_json::array();
    for (const auto& p : plans) j["plans"].push_back(plan_json(p));
    return j.dump(2);
}

}  // namespace hybridwf
