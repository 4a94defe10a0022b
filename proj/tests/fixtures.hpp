#pragma once

// Small hand-built cities and helpers shared by the unit suites.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "urcrime/urcrime.hpp"

namespace fixtures {

using namespace urcrime;

inline Tract tract(std::string id, double lat, double lon, double population = 1000.0,
                   std::array<double, 4> shares = {0.5, 0.3, 0.15, 0.05}, bool in_city = true) {
    Tract t;
    t.id = std::move(id);
    t.centroid = {lat, lon};
    t.population = population;
    t.shares = shares;
    t.county_id = "C1";
    t.state_id = "S1";
    t.in_city = in_city;
    return t;
}

// rows x cols tracts spaced `step` degrees apart near the equator, ids
// "g<row><col>".
inline TractGraph grid(std::size_t rows, std::size_t cols, double step = 0.01) {
    std::vector<Tract> ts;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            ts.push_back(tract("g" + std::to_string(r) + std::to_string(c), step * static_cast<double>(r),
                               step * static_cast<double>(c)));
        }
    }
    return TractGraph(std::move(ts));
}

inline TractGraph random_city(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Tract> ts;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = u(rng);
        ts.push_back(tract("t" + std::to_string(100 + i), 40.0 + 0.1 * u(rng), -75.0 + 0.1 * u(rng),
                           500.0 + 4000.0 * u(rng), {w, (1.0 - w) * 0.6, (1.0 - w) * 0.3, (1.0 - w) * 0.1}));
    }
    return TractGraph(std::move(ts));
}

inline std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("urcrime_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline void write(const std::string& path, const std::string& content) {
    std::ofstream(path, std::ios::binary) << content;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A tiny synthetic city sized for fast training tests.
inline SynthSpec small_spec(std::size_t tracts, std::uint64_t seed, std::size_t days = 120) {
    SynthSpec s;
    s.seed = seed;
    s.tracts = tracts;
    s.days = days;
    return s;
}

inline Architecture tiny_arch() {
    Architecture a;
    a.lookback = 3;
    a.predictor_blocks = 1;
    a.predictor_channels = 2;
    a.gate_blocks = 1;
    a.gate_channels = 2;
    return a;
}

inline SplitPlan short_split(Date start) {
    return {{start, start + 59}, {start + 60, start + 74}, {start + 75, start + 119}};
}

} // namespace fixtures
