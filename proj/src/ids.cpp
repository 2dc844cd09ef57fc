#include "hybridwf/ids.hpp"

#include <stdexcept>

namespace hybridwf {

namespace {

std::string render(const std::string& name, int scatter, int iteration) {
    std::string out = name;
    if (scatter >= 0) {
        out += '#';
        out += std::to_string(scatter);
    }
    if (iteration >= 0) {
        out += '@';
        out += std::to_string(iteration);
    }
    return out;
}

// name[#int][@int]
void parse_indexed(const std::string& text, std::string& name, int& scatter, int& iteration) {
    size_t hash = text.find('#');
    size_t at = text.find('@');
    if (at != std::string::npos && hash != std::string::npos && at < hash)
        throw std::invalid_argument("malformed identifier: " + text);
    size_t name_end = std::min(hash, at);
    name = text.substr(0, name_end);
    if (name.empty()) throw std::invalid_argument("empty identifier: " + text);
    scatter = -1;
    iteration = -1;
    try {
        if (hash != std::string::npos) {
            size_t end = (at == std::string::npos) ? text.size() : at;
            scatter = std::stoi(text.substr(hash + 1, end - hash - 1));
        }
        if (at != std::string::npos) iteration = std::stoi(text.substr(at + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("malformed identifier indices: " + text);
    }
    if ((hash != std::string::npos && scatter < 0) || (at != std::string::npos && iteration < 0))
        throw std::invalid_argument("negative identifier index: " + text);
}

}  // namespace

std::string StepId::str() const { return render(name, scatter, iteration); }
std::string DataId::str() const { return render(name, scatter, iteration); }

StepId parse_step_id(const std::string& text) {
    StepId id;
    parse_indexed(text, id.name, id.scatter, id.iteration);
    return id;
}

DataId parse_data_id(const std::string& text) {
    DataId id;
    parse_indexed(text, id.name, id.scatter, id.iteration);
    return id;
}

}  // namespace hybridwf
