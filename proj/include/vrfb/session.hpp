#pragma once

#include <cstdint>
#include <regex>
#include <string>

#include "controllers.hpp"
#include "error.hpp"
#include "sim.hpp"
#include "task.hpp"

namespace vrfb {

/// Participant pseudonyms are `P` followed by digits; no personal data.
inline bool valid_participant_id(const std::string& id) {
    static const std::regex pattern("P[0-9]+");
    return std::regex_match(id, pattern);
}

struct SessionMeta {
    std::string participant_id = "P01";
    ControllerMode controller_mode = ControllerMode::two_button;
    std::uint64_t plan_seed = 0;
    std::string created_at;      // wall clock for live sessions, empty for headless runs
    std::string input_source = "bot";
    EnvironmentParams environment{};
    SimConfig sim_config{};
    AdapterConfig adapter{};

    void validate() const {
        if (!valid_participant_id(participant_id)) {
            throw Error(ErrorKind::config, "participant id must match P[0-9]+: " + participant_id);
        }
        sim_config.validate();
        adapter.validate();
    }

    friend bool operator==(const SessionMeta&, const SessionMeta&) = default;
};

}  // namespace vrfb
