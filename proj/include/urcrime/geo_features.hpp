#pragma once

// Spatial substrate (census tracts), nearest-neighbor arrangement and the
// 2D feature maps consumed by the convolutional branches.
//
// A feature map for target tract s on day t has 9 spatial rows x T look-back
// columns x C channels. The target always sits on the center row (4); its
// eight nearest in-city tracts flank it, closest first, alternating below and
// above the center:
//
//     row:   0   1   2   3   4    5   6   7   8
//     rank:  8   6   4   2  self  1   3   5   7
//
// Rows without a neighbor (small cities) are zero padding.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "urcrime/array.hpp"
#include "urcrime/csv.hpp"
#include "urcrime/date.hpp"
#include "urcrime/error.hpp"

namespace urcrime {

// ============================================================================
// Demographic groups
// ============================================================================

enum class Group : std::size_t { W = 0, BA = 1, HL = 2, A = 3 };

inline constexpr std::size_t kGroupCount = 4;
inline constexpr std::array<Group, 4> kAllGroups{Group::W, Group::BA, Group::HL, Group::A};
inline constexpr std::array<Group, 3> kProtectedGroups{Group::BA, Group::HL, Group::A};
inline constexpr Group kNonProtectedGroup = Group::W;

inline std::string_view group_name(Group g) {
    switch (g) {
        case Group::W: return "W";
        case Group::BA: return "BA";
        case Group::HL: return "HL";
        case Group::A: return "A";
    }
    return "?";
}

inline Group parse_group(std::string_view s) {
    for (Group g : kAllGroups) {
        if (group_name(g) == s) return g;
    }
    throw ValidationError("unknown demographic group '" + std::string(s) + "'");
}

// ============================================================================
// Tract graph
// ============================================================================

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

struct Tract {
    std::string id;
    LatLon centroid;
    double population = 0.0;
    std::array<double, kGroupCount> shares{};  // indexed by Group
    std::string county_id;
    std::string state_id;
    bool in_city = true;

    double share(Group g) const { return shares[static_cast<std::size_t>(g)]; }
};

// Great-circle distance in kilometres (haversine, mean Earth radius).
inline double great_circle_km(LatLon a, LatLon b) {
    constexpr double kEarthRadiusKm = 6371.0088;
    constexpr double deg = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * deg;
    const double dlon = (b.lon - a.lon) * deg;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    const double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

class TractGraph {
public:
    TractGraph() = default;

    explicit TractGraph(std::vector<Tract> tracts) : tracts_(std::move(tracts)) {
        std::vector<std::string> problems;
        for (std::size_t i = 0; i < tracts_.size(); ++i) {
            const Tract& t = tracts_[i];
            if (t.id.empty()) problems.push_back("tract #" + std::to_string(i) + " has an empty id");
            if (!by_id_.emplace(t.id, i).second) problems.push_back("duplicate tract_id '" + t.id + "'");
            if (!(std::abs(t.centroid.lat) <= 90.0) || !(std::abs(t.centroid.lon) <= 180.0)) {
                problems.push_back("tract '" + t.id + "' has invalid centroid");
            }
            if (!(t.population >= 0.0) || !std::isfinite(t.population)) {
                problems.push_back("tract '" + t.id + "' has invalid population");
            }
            for (Group g : kAllGroups) {
                const double s = t.share(g);
                if (!(s >= 0.0 && s <= 1.0)) {
                    problems.push_back("tract '" + t.id + "' share_" + std::string(group_name(g)) +
                                       " outside [0,1]");
                }
            }
            if (t.in_city) {
                city_index_.emplace(t.id, city_.size());
                city_.push_back(i);
            }
        }
        if (city_.empty()) problems.push_back("no in_city tract");
        if (!problems.empty()) {
            std::string msg = "invalid tract graph:";
            for (const auto& p : problems) msg += " " + p + ";";
            throw ValidationError(msg);
        }
    }

    const std::vector<Tract>& tracts() const { return tracts_; }
    std::size_t size() const { return tracts_.size(); }

    std::optional<std::size_t> find(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

    // In-city tracts, in input order. "City index" k refers to city_tract(k).
    std::size_t city_size() const { return city_.size(); }
    const Tract& city_tract(std::size_t k) const { return tracts_[city_[k]]; }

    std::optional<std::size_t> city_index(const std::string& id) const {
        auto it = city_index_.find(id);
        if (it == city_index_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<std::string> city_ids() const {
        std::vector<std::string> ids;
        ids.reserve(city_.size());
        for (std::size_t k = 0; k < city_.size(); ++k) ids.push_back(city_tract(k).id);
        return ids;
    }

private:
    std::vector<Tract> tracts_;
    std::vector<std::size_t> city_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> city_index_;
};

inline bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "1" || s == "true" || s == "True" || s == "TRUE" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "False" || s == "FALSE" || s == "no") return false;
    throw DataError(where + ": not a boolean: '" + s + "'");
}

// tracts.csv: tract_id,lat,lon,population,share_w,share_ba,share_hl,share_a,county_id,state_id,in_city
inline TractGraph parse_tracts(const csv::Table& table) {
    const std::size_t c_id = table.column("tract_id"), c_lat = table.column("lat"),
                      c_lon = table.column("lon"), c_pop = table.column("population"),
                      c_w = table.column("share_w"), c_ba = table.column("share_ba"),
                      c_hl = table.column("share_hl"), c_a = table.column("share_a"),
                      c_county = table.column("county_id"), c_state = table.column("state_id"),
                      c_city = table.column("in_city");
    std::vector<Tract> tracts;
    tracts.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = table.where(r);
        Tract t;
        t.id = row[c_id];
        t.centroid = {csv::to_double(row[c_lat], where), csv::to_double(row[c_lon], where)};
        t.population = csv::to_double(row[c_pop], where);
        t.shares = {csv::to_double(row[c_w], where), csv::to_double(row[c_ba], where),
                    csv::to_double(row[c_hl], where), csv::to_double(row[c_a], where)};
        t.county_id = row[c_county];
        t.state_id = row[c_state];
        t.in_city = parse_bool(row[c_city], where);
        tracts.push_back(std::move(t));
    }
    return TractGraph(std::move(tracts));
}

inline TractGraph load_tracts(const std::string& path) { return parse_tracts(csv::read_file(path)); }

inline std::string tracts_csv(const TractGraph& graph) {
    std::string out = "tract_id,lat,lon,population,share_w,share_ba,share_hl,share_a,county_id,state_id,in_city\n";
    for (const Tract& t : graph.tracts()) {
        out += t.id + "," + csv::format_double(t.centroid.lat) + "," + csv::format_double(t.centroid.lon) +
               "," + csv::format_double(t.population);
        for (Group g : kAllGroups) out += "," + csv::format_double(t.share(g));
        out += "," + t.county_id + "," + t.state_id + "," + (t.in_city ? "1" : "0") + "\n";
    }
    return out;
}

// ============================================================================
// Neighbor map
// ============================================================================

inline constexpr std::size_t kMapRows = 9;
inline constexpr std::size_t kCenterRow = 4;
inline constexpr std::size_t kMaxNeighbors = 8;
// Row occupied by the neighbor of distance rank r+1.
inline constexpr std::array<std::size_t, kMaxNeighbors> kRankRows{5, 3, 6, 2, 7, 1, 8, 0};

struct NeighborSet {
    std::vector<std::size_t> neighbors;                       // city indices, by distance rank
    std::array<std::optional<std::size_t>, kMapRows> rows{};  // city index per row, nullopt = padding
    std::array<bool, kMapRows> pad_mask{};

    const std::optional<std::size_t>& row(std::size_t r) const { return rows[r]; }
};

class NeighborMap {
public:
    NeighborMap() = default;
    NeighborMap(std::vector<std::string> city_ids, std::vector<NeighborSet> sets)
        : city_ids_(std::move(city_ids)), sets_(std::move(sets)) {}

    std::size_t size() const { return sets_.size(); }
    const NeighborSet& operator[](std::size_t city_index) const { return sets_[city_index]; }
    const std::vector<std::string>& city_ids() const { return city_ids_; }

    std::vector<std::string> neighbor_ids(std::size_t city_index) const {
        std::vector<std::string> ids;
        for (std::size_t n : sets_[city_index].neighbors) ids.push_back(city_ids_[n]);
        return ids;
    }

private:
    std::vector<std::string> city_ids_;
    std::vector<NeighborSet> sets_;
};

inline NeighborMap build_neighbor_map(const TractGraph& graph, std::size_t k = kMaxNeighbors) {
    if (k > kMaxNeighbors) {
        throw ValidationError("neighbor count " + std::to_string(k) + " exceeds the 8 rows available");
    }
    const std::size_t n = graph.city_size();
    std::vector<NeighborSet> sets(n);
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        const Tract& target = graph.city_tract(i);
        candidates.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            candidates.emplace_back(great_circle_km(target.centroid, graph.city_tract(j).centroid), j);
        }
        const std::size_t take = std::min(k, candidates.size());
        auto closer = [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return graph.city_tract(a.second).id < graph.city_tract(b.second).id;
        };
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                          candidates.end(), closer);

        NeighborSet& set = sets[i];
        set.pad_mask.fill(true);
        set.rows[kCenterRow] = i;
        set.pad_mask[kCenterRow] = false;
        for (std::size_t r = 0; r < take; ++r) {
            const std::size_t nb = candidates[r].second;
            set.neighbors.push_back(nb);
            set.rows[kRankRows[r]] = nb;
            set.pad_mask[kRankRows[r]] = false;
        }
    }
    return NeighborMap(graph.city_ids(), std::move(sets));
}

// ============================================================================
// Feature channels and daily series
// ============================================================================

namespace channels {
inline constexpr std::string_view kCrime = "crime";
inline constexpr std::array<std::string_view, 10> kMobility{
    "in_city_inflow",       "in_city_outflow",        "out_city_inflow",          "out_city_outflow",
    "ct_in_city_inflow",    "ct_in_city_outflow",     "county_out_city_inflow",   "county_out_city_outflow",
    "state_out_city_inflow", "state_out_city_outflow"};
inline constexpr std::array<std::string_view, 2> kDayOfWeek{"dow_sin", "dow_cos"};

// crime, 10 mobility features, 2 day-of-week channels.
inline std::vector<std::string> all() {
    std::vector<std::string> out{std::string(kCrime)};
    for (auto m : kMobility) out.emplace_back(m);
    for (auto d : kDayOfWeek) out.emplace_back(d);
    return out;
}
} // namespace channels

// Day of week as a point on the unit circle: (sin 2*pi*d/7, cos 2*pi*d/7), d = 0 for Monday.
inline std::array<double, 2> day_of_week_encoding(Date day) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(day.weekday()) / 7.0;
    return {std::sin(angle), std::cos(angle)};
}

// Per-tract daily multichannel series. Each tract covers a contiguous run of
// days; values are stored day-major with channels contiguous.
class SeriesPanel {
public:
    struct Series {
        Date start;
        std::size_t days = 0;
        std::vector<double> values;  // days * channel_count

        bool covers(Date d) const { return start <= d && d < start + static_cast<std::int64_t>(days); }
    };

    SeriesPanel() = default;
    explicit SeriesPanel(std::vector<std::string> channel_names) : channels_(std::move(channel_names)) {}

    const std::vector<std::string>& channels() const { return channels_; }
    std::size_t channel_count() const { return channels_.size(); }

    std::size_t channel_index(std::string_view name) const {
        for (std::size_t c = 0; c < channels_.size(); ++c) {
            if (channels_[c] == name) return c;
        }
        throw ValidationError("series panel has no channel '" + std::string(name) + "'");
    }

    Series& add(const std::string& tract, Date start, std::size_t days) {
        Series s{start, days, std::vector<double>(days * channels_.size(), 0.0)};
        auto [it, inserted] = series_.insert_or_assign(tract, std::move(s));
        (void)inserted;
        return it->second;
    }

    const Series* find(const std::string& tract) const {
        auto it = series_.find(tract);
        return it == series_.end() ? nullptr : &it->second;
    }
    Series* find(const std::string& tract) {
        auto it = series_.find(tract);
        return it == series_.end() ? nullptr : &it->second;
    }

    double& at(const std::string& tract, Date day, std::size_t channel) {
        Series* s = find(tract);
        if (s == nullptr || !s->covers(day)) missing(tract, day);
        return s->values[static_cast<std::size_t>(day - s->start) * channels_.size() + channel];
    }
    double at(const std::string& tract, Date day, std::size_t channel) const {
        const Series* s = find(tract);
        if (s == nullptr || !s->covers(day)) missing(tract, day);
        return s->values[static_cast<std::size_t>(day - s->start) * channels_.size() + channel];
    }

    [[noreturn]] static void missing(const std::string& tract, Date day) {
        throw DataError("series for tract '" + tract + "' has no value on " + day.iso());
    }

private:
    std::vector<std::string> channels_;
    std::unordered_map<std::string, Series> series_;
};

struct FeatureTensor {
    Array values;  // [9, T, C]
    std::vector<std::string> channel_names;
    std::string target_tract;
    Date target_day;
    std::array<bool, kMapRows> pad_mask{};

    std::size_t lookback() const { return values.dim(1); }
    std::size_t channel_count() const { return values.dim(2); }
    double at(std::size_t row, std::size_t col, std::size_t channel) const {
        return values[(row * values.dim(1) + col) * values.dim(2) + channel];
    }
};

namespace detail {

// Writes the [9, T, C] map into `out`, which must hold 9*T*C zeroed values.
// `rows` are the panel series per spatial row (nullptr = padding).
inline void layout_into(double* out, const std::array<const SeriesPanel::Series*, kMapRows>& rows,
                        const std::array<const std::string*, kMapRows>& row_ids, Date target_day,
                        std::size_t lookback, std::span<const std::size_t> channel_idx,
                        std::size_t panel_channels) {
    const std::size_t c_out = channel_idx.size();
    const Date first = target_day - static_cast<std::int64_t>(lookback);
    for (std::size_t r = 0; r < kMapRows; ++r) {
        const SeriesPanel::Series* s = rows[r];
        if (s == nullptr) continue;
        if (!s->covers(first)) SeriesPanel::missing(*row_ids[r], first);
        if (!s->covers(target_day - 1)) SeriesPanel::missing(*row_ids[r], target_day - 1);
        const double* src = s->values.data() + static_cast<std::size_t>(first - s->start) * panel_channels;
        double* dst = out + r * lookback * c_out;
        for (std::size_t d = 0; d < lookback; ++d) {
            for (std::size_t c = 0; c < c_out; ++c) dst[d * c_out + c] = src[d * panel_channels + channel_idx[c]];
        }
    }
}

} // namespace detail

// Lays out the look-back window [target_day - T, target_day - 1] of the
// selected channels for one target tract.
inline FeatureTensor layout_feature_map(const NeighborMap& nmap, std::size_t target_city_index,
                                        const SeriesPanel& panel, Date target_day, std::size_t lookback,
                                        const std::vector<std::string>& channel_names) {
    if (lookback == 0) throw ValidationError("look-back length must be positive");
    std::vector<std::size_t> idx;
    idx.reserve(channel_names.size());
    for (const auto& name : channel_names) idx.push_back(panel.channel_index(name));

    const NeighborSet& set = nmap[target_city_index];
    std::array<const SeriesPanel::Series*, kMapRows> rows{};
    std::array<const std::string*, kMapRows> ids{};
    for (std::size_t r = 0; r < kMapRows; ++r) {
        if (!set.rows[r]) continue;
        ids[r] = &nmap.city_ids()[*set.rows[r]];
        rows[r] = panel.find(*ids[r]);
        if (rows[r] == nullptr) SeriesPanel::missing(*ids[r], target_day - static_cast<std::int64_t>(lookback));
    }
    FeatureTensor t;
    t.values = Array(Shape{kMapRows, lookback, channel_names.size()});
    detail::layout_into(t.values.data(), rows, ids, target_day, lookback, idx, panel.channel_count());
    t.channel_names = channel_names;
    t.target_tract = nmap.city_ids()[target_city_index];
    t.target_day = target_day;
    t.pad_mask = set.pad_mask;
    return t;
}

// ============================================================================
// Normalization
// ============================================================================

struct ChannelStats {
    double mean = 0.0;
    double scale = 1.0;
    bool passthrough = true;  // constant channel: left untouched
};

class Normalizer {
public:
    Normalizer() = default;
    Normalizer(std::vector<std::string> channels, std::vector<ChannelStats> stats)
        : channels_(std::move(channels)), stats_(std::move(stats)) {}

    const std::vector<std::string>& channels() const { return channels_; }
    const std::vector<ChannelStats>& stats() const { return stats_; }

    double apply_value(std::size_t channel, double x) const {
        const ChannelStats& s = stats_[channel];
        return s.passthrough ? x : (x - s.mean) / s.scale;
    }

    void apply(FeatureTensor& t) const {
        if (t.channel_names != channels_) {
            throw ValidationError("normalizer channels do not match feature tensor channels");
        }
        const std::size_t cols = t.values.dim(1), c_n = t.values.dim(2);
        for (std::size_t r = 0; r < kMapRows; ++r) {
            if (t.pad_mask[r]) continue;
            double* row = t.values.data() + r * cols * c_n;
            for (std::size_t d = 0; d < cols; ++d) {
                for (std::size_t c = 0; c < c_n; ++c) row[d * c_n + c] = apply_value(c, row[d * c_n + c]);
            }
        }
    }

    // Normalizes every value of a panel in place (equivalent to normalizing
    // each laid-out tensor, since the transform is per cell).
    void apply(SeriesPanel& panel, const std::vector<std::string>& tract_ids) const {
        std::vector<std::size_t> idx;
        for (const auto& name : channels_) idx.push_back(panel.channel_index(name));
        for (const auto& id : tract_ids) {
            SeriesPanel::Series* s = panel.find(id);
            if (s == nullptr) continue;
            for (std::size_t d = 0; d < s->days; ++d) {
                double* v = s->values.data() + d * panel.channel_count();
                for (std::size_t c = 0; c < idx.size(); ++c) v[idx[c]] = apply_value(c, v[idx[c]]);
            }
        }
    }

private:
    std::vector<std::string> channels_;
    std::vector<ChannelStats> stats_;
};

// Streaming per-channel moments over the non-padded cells of training tensors.
class NormalizerFit {
public:
    void add(const FeatureTensor& t) {
        if (count_.empty()) {
            channels_ = t.channel_names;
            count_.assign(channels_.size(), 0.0);
            mean_.assign(channels_.size(), 0.0);
            m2_.assign(channels_.size(), 0.0);
            min_.assign(channels_.size(), std::numeric_limits<double>::infinity());
            max_.assign(channels_.size(), -std::numeric_limits<double>::infinity());
        } else if (t.channel_names != channels_) {
            throw ValidationError("training tensors disagree on channel lists");
        }
        const std::size_t cols = t.values.dim(1), c_n = t.values.dim(2);
        for (std::size_t r = 0; r < kMapRows; ++r) {
            if (t.pad_mask[r]) continue;
            const double* row = t.values.data() + r * cols * c_n;
            for (std::size_t d = 0; d < cols; ++d) {
                for (std::size_t c = 0; c < c_n; ++c) add_value(c, row[d * c_n + c]);
            }
        }
    }

    void add_value(std::size_t c, double x) {
        count_[c] += 1.0;
        const double delta = x - mean_[c];
        mean_[c] += delta / count_[c];
        m2_[c] += delta * (x - mean_[c]);
        min_[c] = std::min(min_[c], x);
        max_[c] = std::max(max_[c], x);
    }

    Normalizer finish() const {
        if (count_.empty()) throw ValidationError("cannot fit a normalizer on an empty training set");
        std::vector<ChannelStats> stats(channels_.size());
        for (std::size_t c = 0; c < channels_.size(); ++c) {
            const double var = count_[c] > 0 ? m2_[c] / count_[c] : 0.0;
            if (count_[c] == 0 || min_[c] == max_[c] || !(var > 0.0)) {
                stats[c] = ChannelStats{};
            } else {
                stats[c] = ChannelStats{mean_[c], std::sqrt(var), false};
            }
        }
        return Normalizer(channels_, std::move(stats));
    }

private:
    std::vector<std::string> channels_;
    std::vector<double> count_, mean_, m2_, min_, max_;
};

inline Normalizer normalize_features(std::span<const FeatureTensor> training) {
    if (training.empty()) throw ValidationError("cannot fit a normalizer on an empty training set");
    NormalizerFit fit;
    for (const auto& t : training) fit.add(t);
    return fit.finish();
}

} // namespace urcrime
