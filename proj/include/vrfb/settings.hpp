#pragma once

// Settings file: `name = value` lines overriding simulator, environment and
// adapter fields by name. `#` starts a comment. Unknown names are errors.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "controllers.hpp"
#include "error.hpp"
#include "sim.hpp"

namespace vrfb {

struct Settings {
    SimConfig sim{};
    EnvironmentParams env{};
    AdapterConfig adapter{};
    BotGains bot{};

    void validate() const {
        sim.validate();
        adapter.validate();
        bot.validate();
        if (!env.wind.finite()) throw Error(ErrorKind::config, "wind must be finite");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) {
        throw Error(ErrorKind::config, "setting " + key + ": not a finite number: " + text);
    }
    return v;
}

}  // namespace detail

inline void apply_setting(Settings& s, const std::string& key, const std::string& value) {
    using Setter = std::function<void(Settings&, double)>;
    static const std::map<std::string, Setter> reals{
        {"dt", [](Settings& x, double v) { x.sim.dt = v; }},
        {"tau", [](Settings& x, double v) { x.sim.tau = v; }},
        {"v_max", [](Settings& x, double v) { x.sim.v_max = v; }},
        {"landing_alt", [](Settings& x, double v) { x.sim.landing_alt = v; }},
        {"landing_speed", [](Settings& x, double v) { x.sim.landing_speed = v; }},
        {"drone_half_extent", [](Settings& x, double v) { x.sim.drone_half_extent = v; }},
        {"drone_half_height", [](Settings& x, double v) { x.sim.drone_half_height = v; }},
        {"frame_border", [](Settings& x, double v) { x.sim.frame_border = v; }},
        {"wind_x", [](Settings& x, double v) { x.env.wind.x = v; }},
        {"wind_y", [](Settings& x, double v) { x.env.wind.y = v; }},
        {"wind_z", [](Settings& x, double v) { x.env.wind.z = v; }},
        {"s_max", [](Settings& x, double v) { x.adapter.s_max = v; }},
        {"deadzone", [](Settings& x, double v) { x.adapter.deadzone = v; }},
        {"yaw_rate_max", [](Settings& x, double v) { x.adapter.yaw_rate_max = v; }},
        {"kp", [](Settings& x, double v) { x.bot.kp = v; }},
        {"descend_speed", [](Settings& x, double v) { x.bot.descend_speed = v; }},
        {"waypoint_tolerance", [](Settings& x, double v) { x.bot.waypoint_tolerance = v; }},
        {"pass_through", [](Settings& x, double v) { x.bot.pass_through = v; }},
        {"standoff", [](Settings& x, double v) { x.bot.standoff = v; }},
    };
    if (key == "weather") {
        auto w = parse_weather(value);
        if (!w) throw Error(ErrorKind::config, "setting weather: expected sunshine, rain or fog");
        s.env.weather = *w;
        return;
    }
    auto it = reals.find(key);
    if (it == reals.end()) throw Error(ErrorKind::config, "unknown setting: " + key);
    it->second(s, detail::parse_real(key, value));
}

inline Settings parse_settings(std::istream& in, Settings base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::config, "settings line " + std::to_string(lineno) + ": expected name = value");
        }
        apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    base.validate();
    return base;
}

inline Settings load_settings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open settings file " + path.string());
    return parse_settings(in);
}

}  // namespace vrfb
