#pragma once

// Hotspot labels, monthly F1, population-weighted group confusion, the four
// fairness metrics, degrees of unfairness and cross-model improvement tables.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "urcrime/date.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"
#include "urcrime/model.hpp"

namespace urcrime {

// ============================================================================
// Hotspots
// ============================================================================

// Labels for every in-city tract on every day of `days`, stored day-major.
struct HotspotSeries {
    std::vector<std::string> tract_ids;
    DateRange days;
    std::vector<std::uint8_t> h;

    HotspotSeries() = default;
    HotspotSeries(std::vector<std::string> ids, DateRange range)
        : tract_ids(std::move(ids)), days(range), h(tract_ids.size() * range.size(), 0) {}

    std::size_t tract_count() const { return tract_ids.size(); }
    std::uint8_t at(std::size_t tract, std::size_t day) const { return h[day * tract_ids.size() + tract]; }
    std::uint8_t& at(std::size_t tract, std::size_t day) { return h[day * tract_ids.size() + tract]; }

    bool operator==(const HotspotSeries&) const = default;
};

// h_i = 1 iff y_i is strictly above the day's mean over tracts.
inline std::vector<std::uint8_t> binarize(std::span<const double> y) {
    std::vector<std::uint8_t> h(y.size(), 0);
    if (y.empty()) return h;
    double sum = 0.0;
    for (double v : y) sum += v;
    const double mean = sum / static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) h[i] = y[i] > mean ? 1 : 0;
    return h;
}

// Predictions must hold one entry per (day, tract) in day-major city order,
// as produced by predict().
inline HotspotSeries predicted_hotspots(std::span<const Prediction> preds, const std::vector<std::string>& tract_ids,
                                        DateRange days) {
    const std::size_t n = tract_ids.size();
    if (preds.size() != n * days.size()) {
        throw ShapeError("expected " + std::to_string(n * days.size()) + " predictions, got " +
                         std::to_string(preds.size()));
    }
    HotspotSeries out(tract_ids, days);
    std::vector<double> y(n);
    for (std::size_t d = 0; d < days.size(); ++d) {
        for (std::size_t i = 0; i < n; ++i) {
            const Prediction& p = preds[d * n + i];
            if (p.tract_id != tract_ids[i] || p.day != days.at(d)) {
                throw DataError("prediction for " + p.tract_id + " on " + p.day.iso() + " is out of order; expected " +
                                tract_ids[i] + " on " + days.at(d).iso());
            }
            y[i] = p.y;
        }
        const auto h = binarize(y);
        std::copy(h.begin(), h.end(), out.h.begin() + static_cast<std::ptrdiff_t>(d * n));
    }
    return out;
}

// h* = 1 iff at least one crime was reported.
inline HotspotSeries ground_truth_hotspots(const CrimeSeries& crimes, DateRange days) {
    HotspotSeries out(crimes.tract_ids(), days);
    for (std::size_t d = 0; d < days.size(); ++d) {
        if (!crimes.range().contains(days.at(d))) {
            throw DataError("crime series has no counts for " + days.at(d).iso());
        }
        const std::size_t idx = crimes.range().index_of(days.at(d));
        for (std::size_t i = 0; i < crimes.tract_count(); ++i) out.at(i, d) = crimes.count(i, idx) >= 1 ? 1 : 0;
    }
    return out;
}

inline void require_aligned(const HotspotSeries& a, const HotspotSeries& b) {
    if (a.tract_ids != b.tract_ids || a.days.first != b.days.first || a.days.last != b.days.last) {
        throw ShapeError("hotspot series cover different tracts or days");
    }
}

// ============================================================================
// F1
// ============================================================================

struct MonthF1 {
    int month = 0;  // yyyymm
    double tp = 0, fp = 0, fn = 0;
    double f1 = 0.0;
    bool degenerate = false;    // no positive truth and no positive prediction
    double daily_mean_f1 = 0.0; // mean over the month's days of per-day F1
};

struct F1Report {
    std::vector<MonthF1> months;
    double mean_f1 = 0.0;             // average of pooled monthly F1
    double mean_daily_f1 = 0.0;       // average of the per-month daily means
    std::size_t degenerate_months = 0;
};

inline double f1_score(double tp, double fp, double fn) {
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

// F1 of the hotspot class pooled over each month's tract-days.
inline F1Report monthly_f1(const HotspotSeries& pred, const HotspotSeries& truth) {
    require_aligned(pred, truth);
    F1Report report;
    std::map<int, MonthF1> months;
    std::map<int, std::pair<double, std::size_t>> daily;
    for (std::size_t d = 0; d < pred.days.size(); ++d) {
        const int key = pred.days.at(d).month_key();
        MonthF1& m = months[key];
        m.month = key;
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.tract_count(); ++i) {
            const bool p = pred.at(i, d), t = truth.at(i, d);
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        m.tp += tp;
        m.fp += fp;
        m.fn += fn;
        daily[key].first += f1_score(tp, fp, fn);
        daily[key].second += 1;
    }
    for (auto& [key, m] : months) {
        m.degenerate = m.tp + m.fp + m.fn == 0.0;
        m.f1 = f1_score(m.tp, m.fp, m.fn);
        m.daily_mean_f1 = daily[key].first / static_cast<double>(daily[key].second);
        report.degenerate_months += m.degenerate;
        report.months.push_back(m);
    }
    if (!report.months.empty()) {
        for (const auto& m : report.months) {
            report.mean_f1 += m.f1;
            report.mean_daily_f1 += m.daily_mean_f1;
        }
        report.mean_f1 /= static_cast<double>(report.months.size());
        report.mean_daily_f1 /= static_cast<double>(report.months.size());
    }
    return report;
}

// ============================================================================
// Fairness
// ============================================================================

struct Confusion {
    double tp = 0, fp = 0, tn = 0, fn = 0;

    double total() const { return tp + fp + tn + fn; }
    bool operator==(const Confusion&) const = default;
};

using GroupConfusion = std::array<Confusion, kGroupCount>;

// Population-weighted confusion per group, accumulated tract by tract and
// day by day within a tract.
inline GroupConfusion group_confusion(const HotspotSeries& pred, const HotspotSeries& truth, const TractGraph& graph) {
    require_aligned(pred, truth);
    if (pred.tract_ids != graph.city_ids()) throw ShapeError("hotspot series and tract graph disagree on tracts");
    GroupConfusion out{};
    for (std::size_t i = 0; i < pred.tract_count(); ++i) {
        const Tract& t = graph.city_tract(i);
        for (std::size_t d = 0; d < pred.days.size(); ++d) {
            const bool p = pred.at(i, d), h = truth.at(i, d);
            for (Group g : kAllGroups) {
                const double w = t.population * t.share(g);
                Confusion& c = out[static_cast<std::size_t>(g)];
                if (p && h) c.tp += w;
                else if (p) c.fp += w;
                else if (h) c.fn += w;
                else c.tn += w;
            }
        }
    }
    return out;
}

enum class Metric : std::size_t { SP = 0, FPR = 1, FNR = 2, LI = 3 };
inline constexpr std::array<Metric, 4> kAllMetrics{Metric::SP, Metric::FPR, Metric::FNR, Metric::LI};

inline std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::SP: return "SP";
        case Metric::FPR: return "FPR";
        case Metric::FNR: return "FNR";
        case Metric::LI: return "LI";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    for (Metric m : kAllMetrics) {
        if (metric_name(m) == s) return m;
    }
    throw ValidationError("unknown fairness metric '" + std::string(s) + "'");
}

// Empty when the denominator is zero.
struct GroupMetrics {
    std::array<std::optional<double>, 4> values;

    const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
    std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
};

inline GroupMetrics fairness_metrics(const Confusion& c) {
    auto ratio = [](double num, double den) -> std::optional<double> {
        if (!(den > 0.0)) return std::nullopt;
        return num / den;
    };
    GroupMetrics m;
    m[Metric::SP] = ratio(c.tp + c.fn, c.total());
    m[Metric::FPR] = ratio(c.fp, c.tn + c.fp);
    m[Metric::FNR] = ratio(c.fn, c.tp + c.fn);
    m[Metric::LI] = ratio(c.tp + c.fp, c.tp + c.fn);
    return m;
}

// D = metric_pg / metric_npg - 1; empty when either side is undefined or the
// non-protected metric is 0.
inline std::optional<double> degree_of_unfairness(std::optional<double> protected_value,
                                                  std::optional<double> reference_value) {
    if (!protected_value || !reference_value || *reference_value == 0.0) return std::nullopt;
    return *protected_value / *reference_value - 1.0;
}

struct FairnessReport {
    std::string city;
    std::string model;
    std::string crime_type;
    GroupConfusion confusion{};
    std::array<GroupMetrics, kGroupCount> metrics{};
    // D per protected group (BA, HL, A) and metric.
    std::array<std::array<std::optional<double>, 4>, kProtectedGroups.size()> degree{};

    const std::optional<double>& d(Group g, Metric m) const {
        for (std::size_t k = 0; k < kProtectedGroups.size(); ++k) {
            if (kProtectedGroups[k] == g) return degree[k][static_cast<std::size_t>(m)];
        }
        throw ValidationError("D is defined only for protected groups");
    }
};

inline FairnessReport fairness_report(const GroupConfusion& conf, std::string city, std::string model,
                                      std::string crime_type) {
    FairnessReport r{std::move(city), std::move(model), std::move(crime_type), conf, {}, {}};
    for (Group g : kAllGroups) r.metrics[static_cast<std::size_t>(g)] = fairness_metrics(conf[static_cast<std::size_t>(g)]);
    const auto& ref = r.metrics[static_cast<std::size_t>(kNonProtectedGroup)];
    for (std::size_t k = 0; k < kProtectedGroups.size(); ++k) {
        const auto& pg = r.metrics[static_cast<std::size_t>(kProtectedGroups[k])];
        for (Metric m : kAllMetrics) r.degree[k][static_cast<std::size_t>(m)] = degree_of_unfairness(pg[m], ref[m]);
    }
    return r;
}

// ============================================================================
// Model comparison
// ============================================================================

inline constexpr double kImprovementThreshold = 0.95;

struct SettingComparison {
    std::string city;
    Metric metric = Metric::SP;
    Group group = Group::BA;
    std::optional<double> d_a, d_b;
    std::optional<double> ratio;  // |D_a| / |D_b|; +inf when only D_b is 0
    bool excluded = false;        // D undefined on either side
    bool improved = false;
};

struct Tally {
    std::size_t improved = 0;
    std::size_t counted = 0;
    std::size_t excluded = 0;

    double percent() const { return counted ? 100.0 * static_cast<double>(improved) / static_cast<double>(counted) : 0.0; }
    bool beneficial() const { return counted > 0 && percent() > 50.0; }
};

struct ImprovementTable {
    std::string model_a, model_b;
    std::vector<SettingComparison> settings;
    Tally overall;
    std::map<std::string, Tally> by_metric, by_group, by_city;
};

inline SettingComparison compare_setting(std::optional<double> d_a, std::optional<double> d_b) {
    SettingComparison s;
    s.d_a = d_a;
    s.d_b = d_b;
    if (!d_a || !d_b) {
        s.excluded = true;
        return s;
    }
    const double a = std::abs(*d_a), b = std::abs(*d_b);
    if (b == 0.0) {
        s.ratio = a == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    } else {
        s.ratio = a / b;
    }
    s.improved = *s.ratio < kImprovementThreshold;
    return s;
}

// Compares model A against model B over every (city, metric, protected
// group) setting. Reports are matched by city.
inline ImprovementTable compare_models(std::span<const FairnessReport> a, std::span<const FairnessReport> b) {
    if (a.size() != b.size()) throw ValidationError("compare: report lists differ in length");
    ImprovementTable t;
    if (!a.empty()) {
        t.model_a = a[0].model;
        t.model_b = b[0].model;
    }
    for (std::size_t c = 0; c < a.size(); ++c) {
        if (a[c].city != b[c].city) {
            throw ValidationError("compare: city '" + a[c].city + "' paired with '" + b[c].city + "'");
        }
        if (a[c].crime_type != b[c].crime_type) throw ValidationError("compare: crime types differ for city " + a[c].city);
        for (Metric m : kAllMetrics) {
            for (Group g : kProtectedGroups) {
                SettingComparison s = compare_setting(a[c].d(g, m), b[c].d(g, m));
                s.city = a[c].city;
                s.metric = m;
                s.group = g;
                for (Tally* tally : {&t.overall, &t.by_metric[std::string(metric_name(m))],
                                     &t.by_group[std::string(group_name(g))], &t.by_city[s.city]}) {
                    if (s.excluded) {
                        ++tally->excluded;
                    } else {
                        ++tally->counted;
                        tally->improved += s.improved;
                    }
                }
                t.settings.push_back(std::move(s));
            }
        }
    }
    return t;
}

// ============================================================================
// Serialization
// ============================================================================

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
}

inline std::optional<double> json_opt(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline std::string fmt(const std::optional<double>& v, int precision = 4) {
    if (!v) return "undef";
    if (std::isinf(*v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

inline std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

} // namespace detail

inline nlohmann::json to_json(const F1Report& r) {
    nlohmann::json months = nlohmann::json::array();
    for (const auto& m : r.months) {
        months.push_back({{"month", m.month},
                          {"tp", m.tp},
                          {"fp", m.fp},
                          {"fn", m.fn},
                          {"f1", m.f1},
                          {"degenerate", m.degenerate},
                          {"daily_mean_f1", m.daily_mean_f1}});
    }
    return {{"months", months},
            {"mean_f1", r.mean_f1},
            {"mean_daily_f1", r.mean_daily_f1},
            {"degenerate_months", r.degenerate_months}};
}

inline nlohmann::json to_json(const FairnessReport& r) {
    nlohmann::json groups = nlohmann::json::object();
    for (Group g : kAllGroups) {
        const auto& c = r.confusion[static_cast<std::size_t>(g)];
        const auto& m = r.metrics[static_cast<std::size_t>(g)];
        nlohmann::json entry{{"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}}};
        for (Metric k : kAllMetrics) entry[std::string(metric_name(k))] = detail::opt_json(m[k]);
        groups[std::string(group_name(g))] = entry;
    }
    nlohmann::json degree = nlohmann::json::object();
    for (std::size_t k = 0; k < kProtectedGroups.size(); ++k) {
        nlohmann::json row = nlohmann::json::object();
        for (Metric m : kAllMetrics) row[std::string(metric_name(m))] = detail::opt_json(r.degree[k][static_cast<std::size_t>(m)]);
        degree[std::string(group_name(kProtectedGroups[k]))] = row;
    }
    return {{"city", r.city}, {"model", r.model}, {"crime_type", r.crime_type}, {"groups", groups}, {"D", degree}};
}

inline FairnessReport fairness_report_from_json(const nlohmann::json& j) {
    try {
        FairnessReport r;
        r.city = j.at("city").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.crime_type = j.at("crime_type").get<std::string>();
        for (Group g : kAllGroups) {
            const auto& e = j.at("groups").at(std::string(group_name(g)));
            const auto& c = e.at("confusion");
            r.confusion[static_cast<std::size_t>(g)] = {c.at("tp").get<double>(), c.at("fp").get<double>(),
                                                         c.at("tn").get<double>(), c.at("fn").get<double>()};
            for (Metric m : kAllMetrics) {
                r.metrics[static_cast<std::size_t>(g)][m] = detail::json_opt(e.at(std::string(metric_name(m))));
            }
        }
        for (std::size_t k = 0; k < kProtectedGroups.size(); ++k) {
            const auto& row = j.at("D").at(std::string(group_name(kProtectedGroups[k])));
            for (Metric m : kAllMetrics) {
                r.degree[k][static_cast<std::size_t>(m)] = detail::json_opt(row.at(std::string(metric_name(m))));
            }
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed fairness report: ") + e.what());
    }
}

// One row per (group, metric).
inline std::string fairness_csv(const FairnessReport& r) {
    std::string out = "city,model,crime_type,group,metric,value,D\n";
    for (Group g : kAllGroups) {
        for (Metric m : kAllMetrics) {
            const auto& v = r.metrics[static_cast<std::size_t>(g)][m];
            std::string d;
            if (g != kNonProtectedGroup && r.d(g, m)) d = csv::format_double(*r.d(g, m));
            out += r.city + "," + r.model + "," + r.crime_type + "," + std::string(group_name(g)) + "," +
                   std::string(metric_name(m)) + "," + (v ? csv::format_double(*v) : std::string()) + "," + d + "\n";
        }
    }
    return out;
}

inline std::string fairness_text(const FairnessReport& r, const F1Report* f1 = nullptr) {
    std::string out = "model " + r.model + "  city " + r.city + "  crime " + r.crime_type + "\n\n";
    out += detail::pad("group", 6);
    for (Metric m : kAllMetrics) out += detail::pad(std::string(metric_name(m)), 10);
    for (Metric m : kAllMetrics) out += detail::pad("D_" + std::string(metric_name(m)), 10);
    out += "\n";
    for (Group g : kAllGroups) {
        out += detail::pad(std::string(group_name(g)), 6);
        for (Metric m : kAllMetrics) out += detail::pad(detail::fmt(r.metrics[static_cast<std::size_t>(g)][m]), 10);
        for (Metric m : kAllMetrics) out += detail::pad(g == kNonProtectedGroup ? "-" : detail::fmt(r.d(g, m)), 10);
        out += "\n";
    }
    if (f1 != nullptr) {
        out += "\nmonth        F1  daily-F1\n";
        for (const auto& m : f1->months) {
            out += detail::pad(std::to_string(m.month), 6) + detail::pad(detail::fmt(m.f1), 10) +
                   detail::pad(detail::fmt(m.daily_mean_f1), 10) + (m.degenerate ? "  (no positives)" : "") + "\n";
        }
        out += "  mean" + detail::pad(detail::fmt(f1->mean_f1), 10) + detail::pad(detail::fmt(f1->mean_daily_f1), 10) +
               "\n";
    }
    return out;
}

inline nlohmann::json to_json(const Tally& t) {
    return {{"improved", t.improved},
            {"counted", t.counted},
            {"excluded", t.excluded},
            {"percent", t.percent()},
            {"beneficial", t.beneficial()}};
}

inline nlohmann::json to_json(const ImprovementTable& t) {
    nlohmann::json settings = nlohmann::json::array();
    for (const auto& s : t.settings) {
        settings.push_back({{"city", s.city},
                            {"metric", std::string(metric_name(s.metric))},
                            {"group", std::string(group_name(s.group))},
                            {"D_a", detail::opt_json(s.d_a)},
                            {"D_b", detail::opt_json(s.d_b)},
                            {"ratio", s.ratio && std::isinf(*s.ratio) ? nlohmann::json("inf") : detail::opt_json(s.ratio)},
                            {"excluded", s.excluded},
                            {"improved", s.improved}});
    }
    auto tallies = [](const std::map<std::string, Tally>& m) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : m) j[k] = to_json(v);
        return j;
    };
    return {{"model_a", t.model_a},
            {"model_b", t.model_b},
            {"threshold", kImprovementThreshold},
            {"settings", settings},
            {"overall", to_json(t.overall)},
            {"by_metric", tallies(t.by_metric)},
            {"by_group", tallies(t.by_group)},
            {"by_city", tallies(t.by_city)}};
}

inline std::string improvement_csv(const ImprovementTable& t) {
    std::string out = "city,metric,group,D_a,D_b,ratio,excluded,improved\n";
    for (const auto& s : t.settings) {
        auto f = [](const std::optional<double>& v) {
            if (!v) return std::string();
            return std::isinf(*v) ? std::string("inf") : csv::format_double(*v);
        };
        out += s.city + "," + std::string(metric_name(s.metric)) + "," + std::string(group_name(s.group)) + "," +
               f(s.d_a) + "," + f(s.d_b) + "," + f(s.ratio) + "," + (s.excluded ? "1" : "0") + "," +
               (s.improved ? "1" : "0") + "\n";
    }
    return out;
}

// Rows are metrics, columns are protected groups per city; a cell reads
// "Y" (improved), "n" (not improved) or "-" (excluded).
inline std::string improvement_text(const ImprovementTable& t) {
    std::string out = t.model_a + " vs " + t.model_b + " (improved iff |D_a|/|D_b| < 0.95)\n\n";
    std::vector<std::string> cities;
    for (const auto& [c, _] : t.by_city) cities.push_back(c);
    out += detail::pad("", 6);
    for (const auto& c : cities) out += "  " + detail::pad(c, 12);
    out += detail::pad("%", 9) + "\n";
    out += detail::pad("", 6);
    for (std::size_t c = 0; c < cities.size(); ++c) out += "  " + detail::pad("BA  HL   A", 12);
    out += "\n";
    for (Metric m : kAllMetrics) {
        out += detail::pad(std::string(metric_name(m)), 6);
        for (const auto& c : cities) {
            std::string cell;
            for (Group g : kProtectedGroups) {
                for (const auto& s : t.settings) {
                    if (s.city == c && s.metric == m && s.group == g) {
                        cell += detail::pad(s.excluded ? "-" : (s.improved ? "Y" : "n"), cell.empty() ? 2 : 4);
                    }
                }
            }
            out += "  " + detail::pad(cell, 12);
        }
        const auto it = t.by_metric.find(std::string(metric_name(m)));
        out += detail::pad(it == t.by_metric.end() ? "-" : detail::fmt(it->second.percent(), 1), 9) + "\n";
    }
    out += "\noverall " + detail::fmt(t.overall.percent(), 1) + "% of " + std::to_string(t.overall.counted) +
           " settings improved";
    if (t.overall.excluded) out += " (" + std::to_string(t.overall.excluded) + " excluded)";
    out += t.overall.beneficial() ? "; beneficial\n" : "; not beneficial\n";
    return out;
}

} // namespace urcrime
