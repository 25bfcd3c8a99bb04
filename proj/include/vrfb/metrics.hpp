#pragma once

// Per-trial flight metrics and the session-level analysis report.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "logger.hpp"
#include "numfmt.hpp"
#include "runner.hpp"
#include "stats.hpp"
#include "task.hpp"
#include "vec3.hpp"

namespace vrfb {

/// |a_{k+1} - a_k| / dt for each consecutive pair.
inline std::vector<double> derive_jerk(std::span<const Vec3> acc, double dt) {
    if (acc.size() < 2) {
        throw Error(ErrorKind::domain, "derive_jerk: fewer than two acceleration samples");
    }
    if (!(dt > 0.0)) {
        throw Error(ErrorKind::domain, "derive_jerk: dt must be positive");
    }
    std::vector<double> out;
    out.reserve(acc.size() - 1);
    for (std::size_t k = 0; k + 1 < acc.size(); ++k) {
        out.push_back(((acc[k + 1] - acc[k]) / dt).norm());
    }
    return out;
}

namespace detail {
inline double population_std(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}
}  // namespace detail

/// Area of the rectangle spanning three population standard deviations either
/// side of the centroid, in the (approach axis, vertical) plane: 36 * s_u * s_w.
inline double trajectory_area(std::span<const Vec3> positions, const Vec3& approach_axis = {1.0, 0.0, 0.0}) {
    std::vector<double> u;
    std::vector<double> w;
    u.reserve(positions.size());
    w.reserve(positions.size());
    for (const auto& p : positions) {
        u.push_back(dot(p, approach_axis));
        w.push_back(p.z);
    }
    return (6.0 * detail::population_std(u)) * (6.0 * detail::population_std(w));
}

struct TrialMetrics {
    std::string participant_id;
    TaskKind kind = TaskKind::pointing;
    ControllerMode mode = ControllerMode::two_button;
    double distance = 0.0;
    double width = 0.0;
    double id = 0.0;
    int trial_index = 1;
    int attempt = 0;
    TrialOutcome outcome = TrialOutcome::aborted;
    double completion_time = std::numeric_limits<double>::quiet_NaN();
    double mean_speed = 0.0;
    double mean_accel = 0.0;
    double mean_jerk = 0.0;
    double trajectory_area = 0.0;
    std::vector<double> speed_series;      // n samples
    std::vector<double> accel_mag_series;  // n - 1 (sample 0 has no prior velocity)
    std::vector<double> jerk_mag_series;   // n - 2
    std::vector<Vec3> positions;
    std::string log_name;
};

inline TrialOutcome outcome_of(const TrialLog& log) {
    for (auto it = log.events.rbegin(); it != log.events.rend(); ++it) {
        if (it->kind == EventKind::trial_complete) return TrialOutcome::complete;
        if (it->kind == EventKind::trial_failed) return TrialOutcome::failed_collision;
        if (it->kind == EventKind::trial_aborted) return TrialOutcome::aborted;
    }
    return TrialOutcome::aborted;  // no terminal event: interrupted run
}

inline TrialMetrics compute_trial_metrics(const TrialLog& log,
                                          IdFormulation formulation = IdFormulation::welford_2d_over_w) {
    const auto& h = log.header;
    const double dt = h.meta.sim_config.dt;
    TrialMetrics m;
    m.participant_id = h.meta.participant_id;
    m.kind = h.task.condition.kind;
    m.mode = h.meta.controller_mode;
    m.distance = h.task.condition.distance;
    m.width = h.task.condition.width;
    m.id = difficulty_index(m.distance, m.width, formulation);
    m.trial_index = h.trial_index;
    m.attempt = h.attempt;
    m.outcome = outcome_of(log);
    if (m.outcome == TrialOutcome::complete) {
        std::optional<std::uint64_t> start;
        std::optional<std::uint64_t> done;
        for (const auto& e : log.events) {
            if (e.kind == EventKind::trial_start && !start) start = e.tick;
            if (e.kind == EventKind::trial_complete) done = e.tick;
        }
        if (start && done) m.completion_time = static_cast<double>(*done - *start) * dt;
    }

    std::vector<Vec3> acc;
    for (std::size_t k = 0; k < log.samples.size(); ++k) {
        const auto& s = log.samples[k];
        m.positions.push_back(s.pos);
        m.speed_series.push_back(s.vel.norm());
        if (k > 0) {
            acc.push_back(s.acc);
            m.accel_mag_series.push_back(s.acc.norm());
        }
    }
    if (acc.size() >= 2) m.jerk_mag_series = derive_jerk(acc, dt);
    m.mean_speed = detail::mean_of(m.speed_series);
    m.mean_accel = detail::mean_of(m.accel_mag_series);
    m.mean_jerk = detail::mean_of(m.jerk_mag_series);
    m.trajectory_area = trajectory_area(m.positions);
    return m;
}

// ---------------------------------------------------------------------------
// Session report

enum class Metric { completion_time, mean_speed, mean_accel, mean_jerk, trajectory_area };

inline constexpr std::array<Metric, 5> kReportMetrics{Metric::completion_time, Metric::mean_speed, Metric::mean_accel,
                                                      Metric::mean_jerk, Metric::trajectory_area};

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::completion_time: return "completion_time";
        case Metric::mean_speed: return "mean_speed";
        case Metric::mean_accel: return "mean_accel";
        case Metric::mean_jerk: return "mean_jerk";
        case Metric::trajectory_area: return "trajectory_area";
    }
    return "";
}

inline double metric_value(const TrialMetrics& t, Metric m) {
    switch (m) {
        case Metric::completion_time: return t.completion_time;
        case Metric::mean_speed: return t.mean_speed;
        case Metric::mean_accel: return t.mean_accel;
        case Metric::mean_jerk: return t.mean_jerk;
        case Metric::trajectory_area: return t.trajectory_area;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

struct ModeFit {
    ControllerMode mode;
    FittsFit fit;
};

struct MetricAnova {
    Metric metric;
    std::optional<AnovaTable> table;
    std::string note;  // why the table is missing, if it is
};

struct CellAggregate {
    ControllerMode mode;
    double distance = 0.0;
    double width = 0.0;
    double id = 0.0;
    std::size_t n = 0;
    std::array<double, 5> means{};  // indexed like kReportMetrics
};

struct AreaByTrial {
    ControllerMode mode;
    int trial_index = 1;
    double mean_area = 0.0;
    double relative = 0.0;  // mean_area / max over trial indices of this mode
};

struct KindReport {
    TaskKind kind;
    std::size_t included = 0;
    std::size_t excluded = 0;
    std::vector<ModeFit> fits;
    std::vector<MetricAnova> anova;
    std::vector<CellAggregate> aggregates;
    std::vector<AreaByTrial> area_by_trial;
};

struct AnalysisOptions {
    bool include_failed = false;
    IdFormulation formulation = IdFormulation::welford_2d_over_w;
};

struct AnalysisReport {
    IdFormulation formulation = IdFormulation::welford_2d_over_w;
    bool include_failed = false;
    std::vector<TrialMetrics> trials;  // every parsed trial, sorted
    std::vector<KindReport> kinds;
    std::vector<std::string> warnings;
};

namespace detail {

inline auto trial_order_key(const TrialMetrics& t) {
    return std::make_tuple(static_cast<int>(t.kind), static_cast<int>(t.mode), t.distance, t.width,
                           t.participant_id, t.trial_index, t.attempt, t.log_name);
}

inline bool included(const TrialMetrics& t, const AnalysisOptions& opt) {
    return t.outcome == TrialOutcome::complete || opt.include_failed;
}

}  // namespace detail

inline KindReport analyze_kind(TaskKind kind, const std::vector<TrialMetrics>& all, const AnalysisOptions& opt,
                               std::vector<std::string>& warnings) {
    KindReport rep;
    rep.kind = kind;
    const auto conds = enumerate_conditions(kind, opt.formulation);
    const std::array<ControllerMode, 2> modes{ControllerMode::two_button, ControllerMode::one_handed};

    std::vector<const TrialMetrics*> rows;
    for (const auto& t : all) {
        if (t.kind != kind) continue;
        if (detail::included(t, opt)) {
            rows.push_back(&t);
        } else {
            ++rep.excluded;
        }
    }
    rep.included = rows.size();

    auto in_cell = [](const TrialMetrics& t, ControllerMode mode, const TaskCondition& c) {
        return t.mode == mode && t.distance == c.distance && t.width == c.width;
    };

    for (ControllerMode mode : modes) {
        std::vector<FittsPoint> pts;
        for (const auto* t : rows) {
            if (t->mode == mode && t->outcome == TrialOutcome::complete) pts.push_back({t->id, t->completion_time});
        }
        if (pts.empty()) {
            warnings.push_back(std::string(to_string(kind)) + "/" + to_string(mode) + ": no completed trials");
            continue;
        }
        try {
            rep.fits.push_back({mode, fitts_regression(pts)});
        } catch (const Error& e) {
            warnings.push_back(std::string(to_string(kind)) + "/" + to_string(mode) + ": Fitts fit skipped: " + e.what());
        }
    }

    for (ControllerMode mode : modes) {
        for (const auto& c : conds) {
            CellAggregate agg{mode, c.distance, c.width, c.id_value};
            std::array<std::vector<double>, 5> vals;
            for (const auto* t : rows) {
                if (!in_cell(*t, mode, c)) continue;
                ++agg.n;
                for (std::size_t k = 0; k < kReportMetrics.size(); ++k) {
                    const double v = metric_value(*t, kReportMetrics[k]);
                    if (std::isfinite(v)) vals[k].push_back(v);
                }
            }
            if (agg.n == 0) {
                warnings.push_back(std::string(to_string(kind)) + "/" + to_string(mode) + " D=" +
                                   format_shortest(c.distance) + " W=" + format_shortest(c.width) +
                                   ": condition not covered");
                continue;
            }
            for (std::size_t k = 0; k < vals.size(); ++k) agg.means[k] = detail::mean_of(vals[k]);
            rep.aggregates.push_back(agg);
        }
    }

    for (Metric metric : kReportMetrics) {
        MetricAnova ma;
        ma.metric = metric;
        AnovaCells cells(modes.size(), std::vector<std::vector<double>>(conds.size()));
        for (std::size_t i = 0; i < modes.size(); ++i) {
            for (std::size_t j = 0; j < conds.size(); ++j) {
                for (const auto* t : rows) {
                    if (!in_cell(*t, modes[i], conds[j])) continue;
                    const double v = metric_value(*t, metric);
                    if (std::isfinite(v)) cells[i][j].push_back(v);
                }
            }
        }
        try {
            ma.table = two_way_anova(cells);
        } catch (const Error& e) {
            ma.note = e.what();
            warnings.push_back(std::string(to_string(kind)) + "/" + to_string(metric) + ": ANOVA skipped: " + e.what());
        }
        rep.anova.push_back(std::move(ma));
    }

    for (ControllerMode mode : modes) {
        std::map<int, std::vector<double>> by_trial;
        for (const auto* t : rows) {
            if (t->mode == mode) by_trial[t->trial_index].push_back(t->trajectory_area);
        }
        double peak = 0.0;
        std::vector<AreaByTrial> part;
        for (const auto& [idx, areas] : by_trial) {
            const double m = detail::mean_of(areas);
            peak = std::max(peak, m);
            part.push_back({mode, idx, m, 0.0});
        }
        for (auto& p : part) p.relative = peak > 0.0 ? p.mean_area / peak : 0.0;
        rep.area_by_trial.insert(rep.area_by_trial.end(), part.begin(), part.end());
    }
    return rep;
}

inline AnalysisReport summarize(std::vector<TrialMetrics> trials, const AnalysisOptions& opt = {}) {
    AnalysisReport rep;
    rep.formulation = opt.formulation;
    rep.include_failed = opt.include_failed;
    std::sort(trials.begin(), trials.end(), [](const TrialMetrics& a, const TrialMetrics& b) {
        return detail::trial_order_key(a) < detail::trial_order_key(b);
    });
    rep.trials = std::move(trials);
    for (TaskKind kind : {TaskKind::pointing, TaskKind::crossing}) {
        const bool present = std::any_of(rep.trials.begin(), rep.trials.end(),
                                         [&](const TrialMetrics& t) { return t.kind == kind; });
        if (present) rep.kinds.push_back(analyze_kind(kind, rep.trials, opt, rep.warnings));
    }
    if (rep.kinds.empty()) rep.warnings.push_back("no trials found");
    return rep;
}

/// Parses every *.log below `dir` and builds the report.
inline AnalysisReport summarize(const std::filesystem::path& dir, const AnalysisOptions& opt = {}) {
    if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorKind::io, "log directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".log") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TrialMetrics> trials;
    std::vector<std::string> warnings;
    for (const auto& f : files) {
        const std::string rel = std::filesystem::relative(f, dir).generic_string();
        try {
            TrialLog log = TrialLog::read(f);
            if (log.truncated) warnings.push_back(rel + ": truncated log");
            TrialMetrics m = compute_trial_metrics(log, opt.formulation);
            m.log_name = rel;
            trials.push_back(std::move(m));
        } catch (const Error& e) {
            warnings.push_back(rel + ": unreadable: " + e.what());
        }
    }
    AnalysisReport rep = summarize(std::move(trials), opt);
    rep.warnings.insert(rep.warnings.begin(), warnings.begin(), warnings.end());
    return rep;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline nlohmann::ordered_json num_or_null(double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json anova_row_json(const char* factor, const AnovaRow& r) {
    nlohmann::ordered_json j;
    j["factor"] = factor;
    j["SS"] = num_or_null(r.ss);
    j["df"] = r.df;
    j["MS"] = num_or_null(r.ms);
    j["F"] = num_or_null(r.f);
    j["p"] = num_or_null(r.p);
    return j;
}

inline std::string csv_num(double v) { return std::isfinite(v) ? format_shortest(v) : ""; }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
    out << text;
}

}  // namespace detail

inline std::string metrics_csv(const AnalysisReport& rep) {
    std::string s = "participant,kind,mode,D,W,ID,outcome,completion_time,mean_speed,mean_accel,mean_jerk,trajectory_area\n";
    for (const auto& t : rep.trials) {
        if (!detail::included(t, {rep.include_failed, rep.formulation})) continue;
        s += t.participant_id + "," + to_string(t.kind) + "," + to_string(t.mode) + "," +
             format_shortest(t.distance) + "," + format_shortest(t.width) + "," + format_shortest(t.id) + "," +
             to_string(t.outcome) + "," + detail::csv_num(t.completion_time) + "," + detail::csv_num(t.mean_speed) +
             "," + detail::csv_num(t.mean_accel) + "," + detail::csv_num(t.mean_jerk) + "," +
             detail::csv_num(t.trajectory_area) + "\n";
    }
    return s;
}

inline nlohmann::ordered_json report_json(const AnalysisReport& rep) {
    using nlohmann::ordered_json;
    ordered_json root;
    root["v"] = kProtocolVersion;
    root["id_formulation"] = to_string(rep.formulation);
    root["include_failed"] = rep.include_failed;
    root["trials"] = rep.trials.size();
    ordered_json kinds = ordered_json::array();
    for (const auto& k : rep.kinds) {
        ordered_json jk;
        jk["kind"] = to_string(k.kind);
        jk["included"] = k.included;
        jk["excluded"] = k.excluded;
        ordered_json fits = ordered_json::array();
        for (const auto& f : k.fits) {
            ordered_json jf;
            jf["controller_mode"] = to_string(f.mode);
            jf["a"] = detail::num_or_null(f.fit.intercept);
            jf["b"] = detail::num_or_null(f.fit.slope);
            jf["r_squared"] = detail::num_or_null(f.fit.r_squared);
            jf["n"] = f.fit.n;
            fits.push_back(jf);
        }
        jk["fits"] = fits;
        ordered_json anova = ordered_json::array();
        for (const auto& a : k.anova) {
            ordered_json ja;
            ja["metric"] = to_string(a.metric);
            if (a.table) {
                ja["degenerate"] = a.table->degenerate;
                ja["rows"] = ordered_json::array({detail::anova_row_json("Mode", a.table->factor_a),
                                                  detail::anova_row_json("ID", a.table->factor_b),
                                                  detail::anova_row_json("Mode*ID", a.table->interaction),
                                                  detail::anova_row_json("Error", a.table->error)});
                ja["ss_total"] = detail::num_or_null(a.table->ss_total);
                ja["df_total"] = a.table->df_total;
            } else {
                ja["note"] = a.note;
            }
            anova.push_back(ja);
        }
        jk["anova"] = anova;
        ordered_json aggs = ordered_json::array();
        for (const auto& g : k.aggregates) {
            ordered_json jg;
            jg["controller_mode"] = to_string(g.mode);
            jg["D"] = g.distance;
            jg["W"] = g.width;
            jg["id"] = g.id;
            jg["n"] = g.n;
            for (std::size_t i = 0; i < kReportMetrics.size(); ++i) {
                jg[to_string(kReportMetrics[i])] = detail::num_or_null(g.means[i]);
            }
            aggs.push_back(jg);
        }
        jk["aggregates"] = aggs;
        ordered_json areas = ordered_json::array();
        for (const auto& a : k.area_by_trial) {
            ordered_json ja;
            ja["controller_mode"] = to_string(a.mode);
            ja["trial_index"] = a.trial_index;
            ja["mean_area"] = detail::num_or_null(a.mean_area);
            ja["relative"] = detail::num_or_null(a.relative);
            areas.push_back(ja);
        }
        jk["area_by_trial"] = areas;
        kinds.push_back(jk);
    }
    root["kinds"] = kinds;
    root["warnings"] = rep.warnings;
    return root;
}

/// Writes metrics.csv, report.json and plotdata/ under `out_dir`.
inline void write_report(const AnalysisReport& rep, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "plotdata");
    detail::write_text(out_dir / "metrics.csv", metrics_csv(rep));
    detail::write_text(out_dir / "report.json", report_json(rep).dump(2) + "\n");

    const AnalysisOptions opt{rep.include_failed, rep.formulation};
    for (const auto& k : rep.kinds) {
        const std::string kind = to_string(k.kind);
        std::string pts = "mode,id,completion_time\n";
        std::string series = "mode,D,W,id,trial_index,metric,value\n";
        std::string traj = "mode,D,W,trial_index,attempt,u,w\n";
        for (const auto& t : rep.trials) {
            if (t.kind != k.kind || !detail::included(t, opt)) continue;
            const std::string mode = to_string(t.mode);
            const std::string key = mode + "," + format_shortest(t.distance) + "," + format_shortest(t.width);
            if (t.outcome == TrialOutcome::complete) {
                pts += mode + "," + format_shortest(t.id) + "," + format_shortest(t.completion_time) + "\n";
            }
            const std::string prefix = key + "," + format_shortest(t.id) + "," + std::to_string(t.trial_index) + ",";
            for (double v : t.speed_series) series += prefix + "speed," + format_shortest(v) + "\n";
            for (double v : t.accel_mag_series) series += prefix + "accel," + format_shortest(v) + "\n";
            for (double v : t.jerk_mag_series) series += prefix + "jerk," + format_shortest(v) + "\n";
            for (const auto& p : t.positions) {
                traj += key + "," + std::to_string(t.trial_index) + "," + std::to_string(t.attempt) + "," +
                        format_shortest(p.x) + "," + format_shortest(p.z) + "\n";
            }
        }
        std::string lines = "mode,a,b,r_squared,id_min,id_max\n";
        const auto conds = enumerate_conditions(k.kind, rep.formulation);
        for (const auto& f : k.fits) {
            lines += std::string(to_string(f.mode)) + "," + format_shortest(f.fit.intercept) + "," +
                     format_shortest(f.fit.slope) + "," + format_shortest(f.fit.r_squared) + "," +
                     format_shortest(conds.front().id_value) + "," + format_shortest(conds.back().id_value) + "\n";
        }
        std::string areas = "mode,trial_index,mean_area,relative\n";
        for (const auto& a : k.area_by_trial) {
            areas += std::string(to_string(a.mode)) + "," + std::to_string(a.trial_index) + "," +
                     format_shortest(a.mean_area) + "," + format_shortest(a.relative) + "\n";
        }
        detail::write_text(out_dir / "plotdata" / ("fitts_points_" + kind + ".csv"), pts);
        detail::write_text(out_dir / "plotdata" / ("fitts_lines_" + kind + ".csv"), lines);
        detail::write_text(out_dir / "plotdata" / ("distributions_" + kind + ".csv"), series);
        detail::write_text(out_dir / "plotdata" / ("trajectories_" + kind + ".csv"), traj);
        detail::write_text(out_dir / "plotdata" / ("area_by_trial_" + kind + ".csv"), areas);
    }
}

}  // namespace vrfb
