#pragma once

// Synthetic cities with a planted true-crime process and planted reporting
// rates. Reported counts are binomial thinnings of true counts; the oracle
// (pi*, y*) is exported separately and never read by the pipeline.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "urcrime/autodiff.hpp"
#include "urcrime/csv.hpp"
#include "urcrime/date.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"
#include "urcrime/training.hpp"

namespace urcrime {

struct CrimeProcess {
    double base = 0.0;  // log intensity at zero covariates
    double ar_weight = 0.3;
    double mobility_weight = 0.6;
    std::array<double, 7> dow_weights{0.0, 0.0, 0.0, 0.05, 0.15, 0.2, 0.1};  // Monday first
    double tract_effect_sd = 0.0;
};

struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t tracts = 100;
    Date start = Date::from_ymd(2021, 1, 1);
    std::size_t days = 365;

    // Geography.
    double origin_lat = 40.0, origin_lon = -75.0;
    double cell_deg = 0.01;
    double jitter = 0.3;  // fraction of a cell
    double population_min = 1500, population_max = 6000;

    // Protected share rises west to east.
    double protected_west = 0.1, protected_east = 0.9, protected_noise = 0.05;
    std::array<double, 3> protected_split{0.5, 0.35, 0.15};  // BA, HL, A
    double deprivation_correlation = 0.8;

    // pi* = sigmoid(alpha * (coef . x) + beta), x the gate-visible
    // determinants; alpha, beta calibrated so pi* spans [pi_min, pi_max].
    std::array<double, 8> coefficients{-1.0, -1.0, -0.5, -0.5, 0.0, -0.5, -1.0, -0.5};  // determinants::kAll order
    double pi_min = 0.3, pi_max = 0.95;
    bool nonlinear = false;

    CrimeProcess property{std::log(1.5), 0.3, 0.6, {0.0, 0.0, 0.0, 0.05, 0.15, 0.2, 0.1}, 0.0};
    CrimeProcess violent{std::log(0.8), 0.3, 0.6, {0.0, 0.0, 0.0, 0.05, 0.15, 0.2, 0.1}, 0.0};

    // Gravity flows; device counts before the x10 rescale.
    std::size_t od_neighbors = 12;
    std::size_t external_counties = 6;
    std::size_t external_states = 2;
    std::size_t external_links = 3;
    double mean_outflow = 300.0;
    double external_share = 0.3;
    double activity_ar = 0.8, activity_sd = 0.15;
    double weekend_factor = 0.8;

    DateRange range() const { return {start, start + static_cast<std::int64_t>(days) - 1}; }

    void validate() const {
        std::vector<std::string> problems;
        if (tracts == 0) problems.push_back("synth.tracts must be positive");
        if (days == 0) problems.push_back("synth.days must be positive");
        if (!(pi_min > 0.0 && pi_min <= pi_max && pi_max < 1.0)) {
            problems.push_back("synth.pi_min/pi_max must satisfy 0 < pi_min <= pi_max < 1");
        }
        if (!(population_min >= 0.0 && population_min <= population_max)) problems.push_back("synth.population range invalid");
        for (double v : {protected_west, protected_east}) {
            if (!(v >= 0.0 && v <= 1.0)) problems.push_back("synth.protected shares must lie in [0,1]");
        }
        if (!(deprivation_correlation >= -1.0 && deprivation_correlation <= 1.0)) {
            problems.push_back("synth.deprivation_correlation must lie in [-1,1]");
        }
        if (!(mean_outflow > 0.0)) problems.push_back("synth.mean_outflow must be positive");
        if (!(external_share >= 0.0 && external_share < 1.0)) problems.push_back("synth.external_share must lie in [0,1)");
        if (external_counties == 0 || external_states == 0) problems.push_back("synth.external regions must be positive");
        if (!(activity_ar > -1.0 && activity_ar < 1.0)) problems.push_back("synth.activity_ar must lie in (-1,1)");
        if (!problems.empty()) {
            std::string msg;
            for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
            throw ValidationError(msg);
        }
    }
};

struct SynthTruth {
    CrimeType type = CrimeType::Property;
    std::vector<double> pi_star;  // per in-city tract
    CrimeSeries true_counts;
    CrimeSeries reported;
};

struct SynthCity {
    TractGraph graph;
    std::vector<std::array<Estimate, 8>> acs;  // per tract, determinants::kAll order
    std::vector<ODRecord> od;                  // raw device counts
    SynthTruth property, violent;

    const SynthTruth& truth(CrimeType t) const { return t == CrimeType::Property ? property : violent; }

    DeterminantTable determinant_table(CrimeType type) const {
        const auto names = determinants::for_crime(type);
        std::vector<Estimate> values;
        for (const auto& row : acs) {
            for (const auto& name : names) {
                const auto j = static_cast<std::size_t>(
                    std::find(determinants::kAll.begin(), determinants::kAll.end(), name) - determinants::kAll.begin());
                values.push_back(row[j]);
            }
        }
        return DeterminantTable(type, graph.city_ids(), names, std::move(values));
    }
};

namespace detail {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp01(double v, double lo = 0.001, double hi = 0.999) { return std::clamp(v, lo, hi); }

inline std::string tract_name(std::size_t k) {
    std::string digits = std::to_string(k);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return "T" + digits;
}

// Gate-visible value of determinant j for every tract: rates raw, M/F
// min-max scaled over the city.
inline std::vector<std::vector<double>> gate_view(const std::vector<std::array<Estimate, 8>>& acs) {
    std::vector<std::vector<double>> x(acs.size(), std::vector<double>(8));
    for (std::size_t j = 0; j < 8; ++j) {
        double lo = acs.empty() ? 0.0 : acs[0][j].estimate, hi = lo;
        for (const auto& row : acs) {
            lo = std::min(lo, row[j].estimate);
            hi = std::max(hi, row[j].estimate);
        }
        const bool rate = determinants::is_rate(determinants::kAll[j]);
        for (std::size_t i = 0; i < acs.size(); ++i) {
            x[i][j] = rate ? acs[i][j].estimate : (hi > lo ? (acs[i][j].estimate - lo) / (hi - lo) : 0.0);
        }
    }
    return x;
}

} // namespace detail

// Planted reporting rates for one crime type.
inline std::vector<double> planted_reporting_rates(const SynthSpec& spec, const std::vector<std::array<Estimate, 8>>& acs,
                                                   CrimeType type) {
    const auto x = detail::gate_view(acs);
    const auto names = determinants::for_crime(type);
    std::vector<double> index(acs.size(), 0.0);
    for (std::size_t i = 0; i < acs.size(); ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            if (std::find(names.begin(), names.end(), determinants::kAll[j]) == names.end()) continue;
            index[i] += spec.coefficients[j] * x[i][j];
        }
    }
    if (spec.nonlinear && !index.empty()) {
        const double mean = std::accumulate(index.begin(), index.end(), 0.0) / static_cast<double>(index.size());
        for (double& v : index) v = v + 4.0 * (v - mean) * (v - mean) * (v > mean ? 1.0 : -1.0);
    }
    const auto [lo_it, hi_it] = std::minmax_element(index.begin(), index.end());
    const double lo = *lo_it, hi = *hi_it;
    const double l_min = detail::logit(spec.pi_min), l_max = detail::logit(spec.pi_max);
    std::vector<double> pi(acs.size());
    for (std::size_t i = 0; i < acs.size(); ++i) {
        const double l = hi > lo ? l_min + (l_max - l_min) * (index[i] - lo) / (hi - lo) : 0.5 * (l_min + l_max);
        pi[i] = 1.0 / (1.0 + std::exp(-l));
    }
    return pi;
}

// Tracts on a jittered grid with a west-to-east protected-share gradient and
// determinants driven by a deprivation score correlated with that share.
inline void generate_geography(const SynthSpec& spec, std::mt19937_64& rng, SynthCity& city) {
    const std::size_t n = spec.tracts;
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * ad::uniform01(rng); };

    std::vector<Tract> tracts;
    std::vector<double> protected_share(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t row = k / side, col = k % side;
        Tract t;
        t.id = detail::tract_name(k);
        t.centroid.lat = spec.origin_lat + (static_cast<double>(row) + uni(-spec.jitter, spec.jitter)) * spec.cell_deg;
        t.centroid.lon = spec.origin_lon + (static_cast<double>(col) + uni(-spec.jitter, spec.jitter)) * spec.cell_deg;
        t.population = std::round(uni(spec.population_min, spec.population_max));
        const double east = side > 1 ? static_cast<double>(col) / static_cast<double>(side - 1) : 0.5;
        const double p = std::clamp(spec.protected_west + (spec.protected_east - spec.protected_west) * east +
                                        spec.protected_noise * normal(rng),
                                    0.0, 1.0);
        protected_share[k] = p;
        std::array<double, 3> split = spec.protected_split;
        double total = 0.0;
        for (double& s : split) {
            s *= uni(0.7, 1.3);
            total += s;
        }
        t.shares[static_cast<std::size_t>(Group::W)] = 1.0 - p;
        for (std::size_t g = 0; g < 3; ++g) t.shares[static_cast<std::size_t>(kProtectedGroups[g])] = p * split[g] / total;
        t.county_id = "C0";
        t.state_id = "S0";
        t.in_city = true;
        tracts.push_back(std::move(t));
    }

    // Deprivation: standardized protected share mixed with noise.
    const double mean = std::accumulate(protected_share.begin(), protected_share.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double p : protected_share) var += (p - mean) * (p - mean);
    const double sd = n > 1 && var > 0.0 ? std::sqrt(var / static_cast<double>(n)) : 1.0;
    const double rho = spec.deprivation_correlation, rest = std::sqrt(std::max(0.0, 1.0 - rho * rho));

    // Center and spread per determinant (kAll order).
    constexpr std::array<std::array<double, 3>, 8> shape{{
        {0.15, 0.08, 0.02},   // PR
        {0.07, 0.03, 0.01},   // UR
        {0.30, 0.08, 0.03},   // AR
        {0.45, 0.10, 0.03},   // NMR
        {0.97, 0.00, 0.05},   // M/F
        {0.20, 0.07, 0.02},   // FHHR
        {0.25, 0.10, 0.03},   // LIR
        {0.15, 0.05, 0.03},   // FR
    }};
    city.acs.assign(n, {});
    for (std::size_t k = 0; k < n; ++k) {
        const double u = rho * (protected_share[k] - mean) / sd + rest * normal(rng);
        for (std::size_t j = 0; j < 8; ++j) {
            double est = shape[j][0] + shape[j][1] * u + shape[j][2] * normal(rng);
            est = determinants::is_rate(determinants::kAll[j]) ? detail::clamp01(est) : std::max(0.5, est);
            const double moe = est * uni(0.05, 0.2);
            city.acs[k][j] = {est, moe};
        }
    }
    city.graph = TractGraph(std::move(tracts));
}

// Gravity flows between each tract and its nearest in-city tracts, plus
// exchanges with external counties. Daily counts are Poisson around a base
// flow modulated by a per-tract AR(1) activity level and weekends.
inline void generate_flows(const SynthSpec& spec, std::mt19937_64& rng, SynthCity& city) {
    const TractGraph& g = city.graph;
    const std::size_t n = g.city_size(), days = spec.days;
    double mean_pop = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_pop += g.city_tract(i).population;
    mean_pop = n ? mean_pop / static_cast<double>(n) : 1.0;
    if (!(mean_pop > 0.0)) mean_pop = 1.0;
    auto uni = [&](double a, double b) { return a + (b - a) * ad::uniform01(rng); };

    struct Link {
        std::size_t o, d;  // city indices, or external index for the external side
        bool external_origin = false, external_dest = false;
        double base = 0.0;
    };
    std::vector<Link> links;
    const std::size_t k_nn = std::min(spec.od_neighbors, n > 0 ? n - 1 : 0);
    for (std::size_t o = 0; o < n; ++o) {
        const Tract& to = g.city_tract(o);
        std::vector<std::pair<double, std::size_t>> near;
        for (std::size_t d = 0; d < n; ++d) {
            if (d != o) near.emplace_back(great_circle_km(to.centroid, g.city_tract(d).centroid), d);
        }
        std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(k_nn), near.end());
        double total = 0.0;
        std::vector<double> w(k_nn);
        for (std::size_t r = 0; r < k_nn; ++r) {
            w[r] = g.city_tract(near[r].second).population / std::max(near[r].first, 0.3);
            total += w[r];
        }
        const double volume = spec.mean_outflow * to.population / mean_pop;
        for (std::size_t r = 0; r < k_nn; ++r) {
            links.push_back({o, near[r].second, false, false, volume * (1.0 - spec.external_share) * w[r] / total});
        }
        for (std::size_t e = 0; e < spec.external_links; ++e) {
            const auto county = static_cast<std::size_t>(ad::uniform01(rng) * static_cast<double>(spec.external_counties));
            const double share = volume * spec.external_share / static_cast<double>(std::max<std::size_t>(spec.external_links, 1));
            links.push_back({o, county, false, true, share * uni(0.5, 1.5)});
            links.push_back({county, o, true, false, share * uni(0.5, 1.5)});
        }
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> activity(n);
    for (double& a : activity) a = spec.activity_sd / std::sqrt(1.0 - spec.activity_ar * spec.activity_ar) * normal(rng);
    auto county_id = [&](std::size_t c) { return "X" + std::to_string(c); };
    auto state_id = [&](std::size_t c) { return "XS" + std::to_string(c % spec.external_states); };
    city.od.clear();
    for (std::size_t day = 0; day < days; ++day) {
        const Date date = spec.start + static_cast<std::int64_t>(day);
        if (day > 0) {
            for (double& a : activity) a = spec.activity_ar * a + spec.activity_sd * normal(rng);
        }
        const double dow = date.weekday() >= 5 ? spec.weekend_factor : 1.0;
        for (const Link& l : links) {
            double act;
            if (l.external_origin) act = activity[l.d];
            else if (l.external_dest) act = activity[l.o];
            else act = 0.5 * (activity[l.o] + activity[l.d]);
            std::poisson_distribution<long long> pois(std::max(l.base * std::exp(act) * dow, 1e-12));
            const long long count = pois(rng);
            if (count == 0) continue;
            ODRecord rec;
            rec.date = date;
            rec.flow = static_cast<double>(count);
            if (l.external_origin) {
                rec.origin = {RegionKind::County, county_id(l.o), state_id(l.o)};
            } else {
                rec.origin = {RegionKind::Tract, g.city_tract(l.o).id, ""};
            }
            if (l.external_dest) {
                rec.dest = {RegionKind::County, county_id(l.d), state_id(l.d)};
            } else {
                rec.dest = {RegionKind::Tract, g.city_tract(l.d).id, ""};
            }
            city.od.push_back(std::move(rec));
        }
    }
}

// Daily log inflow per tract, standardized over all tract-days.
inline std::vector<double> standardized_log_inflow(const SynthCity& city, DateRange range) {
    const std::size_t n = city.graph.city_size(), days = range.size();
    std::vector<double> inflow(n * days, 0.0);
    for (const auto& rec : city.od) {
        if (rec.dest.kind != RegionKind::Tract) continue;
        const auto d = city.graph.city_index(rec.dest.id);
        if (d) inflow[*d * days + range.index_of(rec.date)] += rec.flow;
    }
    double mean = 0.0;
    for (double& v : inflow) {
        v = std::log1p(v);
        mean += v;
    }
    mean /= static_cast<double>(std::max<std::size_t>(inflow.size(), 1));
    double var = 0.0;
    for (double v : inflow) var += (v - mean) * (v - mean);
    const double sd = var > 0.0 ? std::sqrt(var / static_cast<double>(inflow.size())) : 1.0;
    for (double& v : inflow) v = (v - mean) / sd;
    return inflow;
}

// y*_{i,t} ~ Poisson(mu) with
//   log mu = base + ar * log1p(mean y* over the previous 7 days)
//          + mob * standardized log inflow on day t-1 + dow weight + tract effect,
// z*_{i,t} ~ Binomial(y*_{i,t}, pi*_i) by independent Bernoulli draws.
inline SynthTruth generate_crimes(const SynthSpec& spec, const CrimeProcess& proc, CrimeType type,
                                  const std::vector<double>& pi_star, const SynthCity& city, std::mt19937_64& rng) {
    const std::size_t n = city.graph.city_size(), days = spec.days;
    const DateRange range = spec.range();
    const auto inflow = standardized_log_inflow(city, range);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> effect(n);
    for (double& e : effect) e = proc.tract_effect_sd * normal(rng);

    SynthTruth truth{type, pi_star, CrimeSeries(type, range, city.graph.city_ids()),
                     CrimeSeries(type, range, city.graph.city_ids())};
    for (std::size_t day = 0; day < days; ++day) {
        const Date date = range.at(day);
        for (std::size_t i = 0; i < n; ++i) {
            double recent = std::exp(proc.base);
            if (day > 0) {
                const std::size_t from = day >= 7 ? day - 7 : 0;
                double s = 0.0;
                for (std::size_t d = from; d < day; ++d) s += static_cast<double>(truth.true_counts.count(i, d));
                recent = s / static_cast<double>(day - from);
            }
            const double mob = inflow[i * days + (day > 0 ? day - 1 : 0)];
            const double log_mu = proc.base + proc.ar_weight * std::log1p(recent) + proc.mobility_weight * mob +
                                  proc.dow_weights[date.weekday()] + effect[i];
            const double mu = std::min(std::exp(log_mu), 1e3);
            std::poisson_distribution<long long> pois(mu);
            const long long y = pois(rng);
            long long z = 0;
            for (long long k = 0; k < y; ++k) z += ad::uniform01(rng) < pi_star[i];
            truth.true_counts.count(i, day) = y;
            truth.reported.count(i, day) = z;
        }
    }
    return truth;
}

inline SynthCity generate_city(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    SynthCity city;
    generate_geography(spec, rng, city);
    generate_flows(spec, rng, city);
    city.property = generate_crimes(spec, spec.property, CrimeType::Property,
                                    planted_reporting_rates(spec, city.acs, CrimeType::Property), city, rng);
    city.violent = generate_crimes(spec, spec.violent, CrimeType::Violent,
                                   planted_reporting_rates(spec, city.acs, CrimeType::Violent), city, rng);
    return city;
}

// In-memory equivalent of exporting and re-ingesting the city's training
// inputs (flows rescaled by `rescale`).
inline CityData synth_city_data(const SynthCity& city, CrimeType type, double rescale = 10.0) {
    const SynthTruth& t = city.truth(type);
    const SeriesPanel mobility = derive_mobility_features(rescale_flows(city.od, rescale), city.graph, t.reported.range());
    return CityData::assemble(city.graph, t.reported, mobility, city.determinant_table(type));
}

// ============================================================================
// Export
// ============================================================================

struct SynthFiles {
    std::string tracts, acs, od, crimes, oracle, manifest;
};

inline SynthFiles export_city(const SynthCity& city, const std::string& config_hash) {
    const std::string stamp = "# config_hash=" + config_hash + "\n";
    SynthFiles f;
    f.tracts = stamp + tracts_csv(city.graph);

    f.acs = stamp + "tract_id,name,estimate,moe\n";
    for (std::size_t i = 0; i < city.acs.size(); ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            f.acs += city.graph.city_tract(i).id + "," + std::string(determinants::kAll[j]) + "," +
                     csv::format_double(city.acs[i][j].estimate) + "," + csv::format_double(city.acs[i][j].moe) + "\n";
        }
    }
    f.od = stamp + od_csv(city.od);

    f.crimes = stamp + "date,tract_id,crime_type,count\n";
    f.oracle = stamp + "tract_id,crime_type,date,pi_star,y_star\n";
    for (const SynthTruth* t : {&city.property, &city.violent}) {
        const std::string type(crime_type_name(t->type));
        const DateRange range = t->reported.range();
        for (std::size_t d = 0; d < range.size(); ++d) {
            const std::string date = range.at(d).iso();
            for (std::size_t i = 0; i < t->reported.tract_count(); ++i) {
                const std::string& id = t->reported.tract_ids()[i];
                if (t->reported.count(i, d) > 0) {
                    f.crimes += date + "," + id + "," + type + "," + std::to_string(t->reported.count(i, d)) + "\n";
                }
                f.oracle += id + "," + type + "," + date + "," + csv::format_double(t->pi_star[i]) + "," +
                            std::to_string(t->true_counts.count(i, d)) + "\n";
            }
        }
    }
    nlohmann::json manifest{{"config_hash", config_hash},
                            {"training_inputs", {"tracts.csv", "acs.csv", "od.csv", "crimes.csv"}},
                            {"start", city.property.reported.range().first.iso()},
                            {"end", city.property.reported.range().last.iso()},
                            {"tracts", city.graph.city_size()}};
    f.manifest = manifest.dump(2) + "\n";
    return f;
}

// Oracle rows for one crime type: pi* per tract and y* per (tract, day).
struct Oracle {
    std::map<std::string, double> pi_star;
    std::map<std::pair<std::string, Date>, long long> y_star;
};

inline Oracle load_oracle(const std::string& path, CrimeType type) {
    const csv::Table t = csv::read_file(path);
    const std::size_t c_tract = t.column("tract_id"), c_type = t.column("crime_type"), c_date = t.column("date"),
                      c_pi = t.column("pi_star"), c_y = t.column("y_star");
    Oracle o;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (parse_crime_type(row[c_type]) != type) continue;
        o.pi_star[row[c_tract]] = csv::to_double(row[c_pi], t.where(r));
        o.y_star[{row[c_tract], Date::parse(row[c_date])}] = csv::to_integer(row[c_y], t.where(r));
    }
    return o;
}

} // namespace urcrime
