#pragma once

// Loaders for reported crime counts, origin-destination mobility flows and
// census (ACS) under-reporting determinants, plus derivation of the ten daily
// mobility features per tract.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "urcrime/csv.hpp"
#include "urcrime/date.hpp"
#include "urcrime/error.hpp"
#include "urcrime/geo_features.hpp"

namespace urcrime {

enum class CrimeType { Property, Violent };

inline std::string_view crime_type_name(CrimeType t) {
    return t == CrimeType::Property ? "property" : "violent";
}

inline CrimeType parse_crime_type(std::string_view s) {
    if (s == "property") return CrimeType::Property;
    if (s == "violent") return CrimeType::Violent;
    throw ValidationError("unknown crime type '" + std::string(s) + "' (expected property|violent)");
}

// ============================================================================
// Crime counts
// ============================================================================

// Dense daily reported counts for every in-city tract.
class CrimeSeries {
public:
    CrimeSeries() = default;
    CrimeSeries(CrimeType type, DateRange range, std::vector<std::string> tract_ids)
        : type_(type), range_(range), tract_ids_(std::move(tract_ids)),
          counts_(tract_ids_.size() * range.size(), 0) {}

    CrimeType type() const { return type_; }
    const DateRange& range() const { return range_; }
    const std::vector<std::string>& tract_ids() const { return tract_ids_; }
    std::size_t tract_count() const { return tract_ids_.size(); }
    std::size_t day_count() const { return range_.size(); }

    std::int64_t count(std::size_t tract, std::size_t day) const { return counts_[tract * range_.size() + day]; }
    std::int64_t& count(std::size_t tract, std::size_t day) { return counts_[tract * range_.size() + day]; }
    std::int64_t count_on(std::size_t tract, Date d) const { return count(tract, range_.index_of(d)); }

    bool operator==(const CrimeSeries&) const = default;

private:
    CrimeType type_ = CrimeType::Property;
    DateRange range_{};
    std::vector<std::string> tract_ids_;
    std::vector<std::int64_t> counts_;
};

struct CrimeSeriesPair {
    CrimeSeries property;
    CrimeSeries violent;

    const CrimeSeries& of(CrimeType t) const { return t == CrimeType::Property ? property : violent; }
};

// crimes.csv: date,tract_id,crime_type,count. Duplicate (tract, date, type)
// rows are summed; absent pairs are zero.
inline CrimeSeriesPair parse_crimes(const csv::Table& table, const TractGraph& graph, DateRange range) {
    const std::size_t c_date = table.column("date"), c_tract = table.column("tract_id"),
                      c_type = table.column("crime_type"), c_count = table.column("count");
    CrimeSeriesPair out{CrimeSeries(CrimeType::Property, range, graph.city_ids()),
                        CrimeSeries(CrimeType::Violent, range, graph.city_ids())};
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = table.where(r);
        const auto tract = graph.city_index(row[c_tract]);
        if (!tract) {
            throw DataError(where + ": unknown tract_id '" + row[c_tract] + "'" +
                            (graph.find(row[c_tract]) ? " (not an in-city tract)" : ""));
        }
        const Date d = Date::parse(row[c_date]);
        if (!range.contains(d)) {
            throw DataError(where + ": date " + d.iso() + " outside the configured range " + range.first.iso() +
                            ".." + range.last.iso());
        }
        const long long n = csv::to_integer(row[c_count], where);
        if (n < 0) throw DataError(where + ": negative crime count " + std::to_string(n));
        CrimeSeries& series = parse_crime_type(row[c_type]) == CrimeType::Property ? out.property : out.violent;
        series.count(*tract, range.index_of(d)) += n;
    }
    return out;
}

inline CrimeSeriesPair load_crimes(const std::string& path, const TractGraph& graph, DateRange range) {
    return parse_crimes(csv::read_file(path), graph, range);
}

// ============================================================================
// Origin-destination flows
// ============================================================================

enum class RegionKind { Tract, County };

struct Region {
    RegionKind kind = RegionKind::Tract;
    std::string id;
    std::string state;  // only meaningful for external regions

    bool operator==(const Region&) const = default;
};

struct ODRecord {
    Date date;
    Region origin;
    Region dest;
    double flow = 0.0;

    bool operator==(const ODRecord&) const = default;
};

// od.csv: date,origin_id,origin_kind,dest_id,dest_kind,flow,state_id_if_external
inline std::vector<ODRecord> parse_od(const csv::Table& table) {
    const std::size_t c_date = table.column("date"), c_oid = table.column("origin_id"),
                      c_okind = table.column("origin_kind"), c_did = table.column("dest_id"),
                      c_dkind = table.column("dest_kind"), c_flow = table.column("flow"),
                      c_state = table.column("state_id_if_external");
    auto kind = [&](const std::string& s, const std::string& where) {
        if (s == "tract") return RegionKind::Tract;
        if (s == "county") return RegionKind::County;
        throw DataError(where + ": unknown region kind '" + s + "' (expected tract|county)");
    };
    std::vector<ODRecord> out;
    out.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = table.where(r);
        ODRecord rec;
        rec.date = Date::parse(row[c_date]);
        rec.origin = {kind(row[c_okind], where), row[c_oid], {}};
        rec.dest = {kind(row[c_dkind], where), row[c_did], {}};
        if (rec.origin.kind == RegionKind::County && rec.dest.kind == RegionKind::County) {
            throw DataError(where + ": OD record with both endpoints external");
        }
        if (rec.origin.kind == RegionKind::County) rec.origin.state = row[c_state];
        if (rec.dest.kind == RegionKind::County) rec.dest.state = row[c_state];
        rec.flow = csv::to_double(row[c_flow], where);
        if (!(rec.flow >= 0.0) || !std::isfinite(rec.flow)) throw DataError(where + ": negative or non-finite flow");
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<ODRecord> load_od(const std::string& path) { return parse_od(csv::read_file(path)); }

inline std::string od_csv(const std::vector<ODRecord>& records) {
    std::string out = "date,origin_id,origin_kind,dest_id,dest_kind,flow,state_id_if_external\n";
    auto kind = [](RegionKind k) { return k == RegionKind::Tract ? "tract" : "county"; };
    for (const auto& r : records) {
        const std::string& state = r.origin.kind == RegionKind::County ? r.origin.state : r.dest.state;
        out += r.date.iso() + "," + r.origin.id + "," + kind(r.origin.kind) + "," + r.dest.id + "," +
               kind(r.dest.kind) + "," + csv::format_double(r.flow) + "," + state + "\n";
    }
    return out;
}

// Scales device counts up to population counts.
inline std::vector<ODRecord> rescale_flows(std::vector<ODRecord> records, double factor = 10.0) {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
        throw ValidationError("flow rescale factor must be positive, got " + csv::format_double(factor));
    }
    for (auto& r : records) r.flow *= factor;
    return records;
}

namespace mobility {
// Indices into channels::kMobility.
enum : std::size_t {
    InCityInflow = 0,
    InCityOutflow,
    OutCityInflow,
    OutCityOutflow,
    TractsInflow,
    TractsOutflow,
    CountiesInflow,
    CountiesOutflow,
    StatesInflow,
    StatesOutflow,
    Count
};
} // namespace mobility

// Ten daily mobility features per in-city tract. Inflow means the tract is
// the destination, outflow that it is the origin. A region counts as
// connected on a day when its flow that day is positive. Flows from a tract
// to itself are not movement between regions and are ignored.
inline SeriesPanel derive_mobility_features(const std::vector<ODRecord>& records, const TractGraph& graph,
                                            DateRange range) {
    std::vector<std::string> names;
    for (auto m : channels::kMobility) names.emplace_back(m);
    SeriesPanel panel(names);
    const std::size_t n = graph.city_size(), days = range.size();
    std::vector<SeriesPanel::Series*> slots(n);
    for (std::size_t k = 0; k < n; ++k) slots[k] = &panel.add(graph.city_tract(k).id, range.first, days);

    struct Endpoint {
        std::optional<std::size_t> city;  // in-city tract index
        std::string county_key;           // external: "state/county"
        std::string state;
    };
    auto resolve = [&](const Region& r, const ODRecord& rec) {
        Endpoint e;
        if (r.kind == RegionKind::Tract) {
            const auto idx = graph.find(r.id);
            if (!idx) throw DataError("OD record on " + rec.date.iso() + " references unknown tract '" + r.id + "'");
            const Tract& t = graph.tracts()[*idx];
            if (t.in_city) {
                e.city = graph.city_index(r.id);
            } else {
                e.county_key = t.state_id + "/" + t.county_id;
                e.state = t.state_id;
            }
        } else {
            e.county_key = r.state + "/" + r.id;
            e.state = r.state;
        }
        return e;
    };

    // Unique connected regions per (tract, day, feature).
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::set<std::string>> unique;

    for (const auto& rec : records) {
        if (!range.contains(rec.date)) {
            throw DataError("OD record dated " + rec.date.iso() + " outside the configured range " +
                            range.first.iso() + ".." + range.last.iso());
        }
        const Endpoint o = resolve(rec.origin, rec), d = resolve(rec.dest, rec);
        if (!o.city && !d.city) {
            throw DataError("OD record on " + rec.date.iso() + " (" + rec.origin.id + " -> " + rec.dest.id +
                            ") has no in-city endpoint");
        }
        if (o.city && d.city && *o.city == *d.city) continue;
        const std::size_t day = range.index_of(rec.date);
        auto feature = [&](std::size_t tract, std::size_t f) -> double& {
            return slots[tract]->values[day * mobility::Count + f];
        };
        const bool connected = rec.flow > 0.0;
        if (o.city && d.city) {
            feature(*d.city, mobility::InCityInflow) += rec.flow;
            feature(*o.city, mobility::InCityOutflow) += rec.flow;
            if (connected) {
                unique[{*d.city, day, mobility::TractsInflow}].insert(graph.city_tract(*o.city).id);
                unique[{*o.city, day, mobility::TractsOutflow}].insert(graph.city_tract(*d.city).id);
            }
        } else if (d.city) {
            feature(*d.city, mobility::OutCityInflow) += rec.flow;
            if (connected) {
                unique[{*d.city, day, mobility::CountiesInflow}].insert(o.county_key);
                unique[{*d.city, day, mobility::StatesInflow}].insert(o.state);
            }
        } else {
            feature(*o.city, mobility::OutCityOutflow) += rec.flow;
            if (connected) {
                unique[{*o.city, day, mobility::CountiesOutflow}].insert(d.county_key);
                unique[{*o.city, day, mobility::StatesOutflow}].insert(d.state);
            }
        }
    }
    for (const auto& [key, regions] : unique) {
        const auto [tract, day, f] = key;
        slots[tract]->values[day * mobility::Count + f] = static_cast<double>(regions.size());
    }
    return panel;
}

// ============================================================================
// Under-reporting determinants (ACS)
// ============================================================================

namespace determinants {
inline constexpr std::array<std::string_view, 8> kAll{"PR", "UR", "AR", "NMR", "M/F", "FHHR", "LIR", "FR"};
inline constexpr std::array<std::string_view, 2> kProperty{"PR", "UR"};
inline constexpr std::array<std::string_view, 7> kViolent{"PR", "AR", "NMR", "M/F", "FHHR", "LIR", "FR"};

inline std::vector<std::string> for_crime(CrimeType t) {
    std::vector<std::string> out;
    if (t == CrimeType::Property) {
        for (auto s : kProperty) out.emplace_back(s);
    } else {
        for (auto s : kViolent) out.emplace_back(s);
    }
    return out;
}

// Every determinant except the male-to-female ratio is a rate in [0, 1].
inline bool is_rate(std::string_view name) { return name != "M/F"; }
inline bool is_known(std::string_view name) {
    return std::find(kAll.begin(), kAll.end(), name) != kAll.end();
}
} // namespace determinants

struct Estimate {
    double estimate = 0.0;
    double moe = 0.0;  // margin of error

    bool operator==(const Estimate&) const = default;
};

class DeterminantTable {
public:
    DeterminantTable() = default;
    DeterminantTable(CrimeType type, std::vector<std::string> tract_ids, std::vector<std::string> names,
                     std::vector<Estimate> values)
        : type_(type), tract_ids_(std::move(tract_ids)), names_(std::move(names)), values_(std::move(values)) {
        if (values_.size() != tract_ids_.size() * names_.size()) {
            throw ShapeError("determinant table value count does not match tracts x determinants");
        }
    }

    CrimeType type() const { return type_; }
    const std::vector<std::string>& tract_ids() const { return tract_ids_; }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t determinant_count() const { return names_.size(); }

    const Estimate& at(std::size_t tract, std::size_t determinant) const {
        return values_[tract * names_.size() + determinant];
    }

    bool operator==(const DeterminantTable&) const = default;

private:
    CrimeType type_ = CrimeType::Property;
    std::vector<std::string> tract_ids_;  // in-city tracts, city order
    std::vector<std::string> names_;
    std::vector<Estimate> values_;
};

// acs.csv: tract_id,name,estimate,moe. Selects the determinants used for
// `type` and requires each of them for every in-city tract.
inline DeterminantTable parse_determinants(const csv::Table& table, CrimeType type, const TractGraph& graph) {
    const std::size_t c_tract = table.column("tract_id"), c_name = table.column("name"),
                      c_est = table.column("estimate"), c_moe = table.column("moe");
    const std::vector<std::string> names = determinants::for_crime(type);
    const std::size_t n = graph.city_size();
    std::vector<Estimate> values(n * names.size());
    std::vector<bool> seen(n * names.size(), false);

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = table.where(r);
        const std::string& name = row[c_name];
        if (!graph.find(row[c_tract])) throw DataError(where + ": unknown tract_id '" + row[c_tract] + "'");
        if (!determinants::is_known(name)) continue;
        const Estimate e{csv::to_double(row[c_est], where), csv::to_double(row[c_moe], where)};
        if (!std::isfinite(e.estimate) || !std::isfinite(e.moe)) throw DataError(where + ": non-finite value");
        if (determinants::is_rate(name) && !(e.estimate >= 0.0 && e.estimate <= 1.0)) {
            throw DataError(where + ": rate " + name + " = " + csv::format_double(e.estimate) + " outside [0,1]");
        }
        if (!determinants::is_rate(name) && e.estimate < 0.0) {
            throw DataError(where + ": " + name + " must be nonnegative");
        }
        if (e.moe < 0.0) throw DataError(where + ": negative margin of error for " + name);

        const auto tract = graph.city_index(row[c_tract]);
        const auto it = std::find(names.begin(), names.end(), name);
        if (!tract || it == names.end()) continue;
        const std::size_t slot = *tract * names.size() + static_cast<std::size_t>(it - names.begin());
        values[slot] = e;
        seen[slot] = true;
    }

    std::string gaps;
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < names.size(); ++j) {
            if (!seen[k * names.size() + j]) gaps += " " + graph.city_tract(k).id + ":" + names[j];
        }
    }
    if (!gaps.empty()) {
        throw DataError(table.source + ": missing " + std::string(crime_type_name(type)) +
                        " determinants (tract:name):" + gaps);
    }
    return DeterminantTable(type, graph.city_ids(), names, std::move(values));
}

inline DeterminantTable load_determinants(const std::string& path, CrimeType type, const TractGraph& graph) {
    return parse_determinants(csv::read_file(path), type, graph);
}

} // namespace urcrime
