#pragma once

// Run configuration: a sectioned key = value text file.
//
//   # comment
//   [run]
//   out = runs/demo
//   seed = 7
//
// Keys are addressed as "section.key". Validation collects every problem
// before failing so that one run reports all of them.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "urcrime/csv.hpp"
#include "urcrime/date.hpp"
#include "urcrime/error.hpp"
#include "urcrime/evaluate.hpp"
#include "urcrime/model.hpp"
#include "urcrime/synth.hpp"
#include "urcrime/training.hpp"

namespace urcrime {

class ConfigFile {
public:
    static ConfigFile parse(const std::string& text, const std::string& source = "<config>") {
        ConfigFile cfg;
        std::istringstream in(text);
        std::string line, section;
        std::vector<std::string> problems;
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            const auto hash = line.find('#');
            std::string_view body = csv::trim(std::string_view(line).substr(0, hash));
            if (body.empty()) continue;
            const std::string where = source + ":" + std::to_string(n);
            if (body.front() == '[') {
                if (body.back() != ']') {
                    problems.push_back(where + ": unterminated section header");
                    continue;
                }
                section = std::string(csv::trim(body.substr(1, body.size() - 2)));
                continue;
            }
            const auto eq = body.find('=');
            if (eq == std::string_view::npos) {
                problems.push_back(where + ": expected 'key = value'");
                continue;
            }
            const std::string key(csv::trim(body.substr(0, eq)));
            if (section.empty()) {
                problems.push_back(where + ": key '" + key + "' appears before any [section]");
                continue;
            }
            const std::string full = section + "." + key;
            if (cfg.values_.count(full)) problems.push_back(where + ": duplicate key '" + full + "'");
            cfg.values_[full] = std::string(csv::trim(body.substr(eq + 1)));
        }
        if (!problems.empty()) throw ValidationError(join(problems));
        return cfg;
    }

    static ConfigFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    const std::map<std::string, std::string>& values() const { return values_; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::optional<std::string> get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    // FNV-1a 64 over the sorted "key=value" lines, excluding run.out.
    std::string hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [k, v] : values_) {
            if (k == "run.out") continue;
            for (char c : k + "=" + v + "\n") {
                h ^= static_cast<unsigned char>(c);
                h *= 0x100000001b3ULL;
            }
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    static std::string join(const std::vector<std::string>& parts) {
        std::string out;
        for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

struct RunConfig {
    std::string out = "out";
    std::uint64_t seed = 0;
    std::string city = "city";
    CrimeType crime_type = CrimeType::Property;
    std::vector<VariantKind> variants{VariantKind::TC, VariantKind::UU};

    // Data files; empty paths default to <out>/data/<name>.csv.
    std::string tracts_path, crimes_path, od_path, acs_path;
    std::optional<DateRange> data_range;
    double rescale = 10.0;

    SplitPlan split;
    Architecture arch;
    TrainConfig train;
    double ifg_weight = 0.1;

    SynthSpec synth;

    VariantKind compare_a = VariantKind::TC, compare_b = VariantKind::UU;
    std::vector<std::string> compare_reports_a, compare_reports_b;  // empty: this run's reports

    std::string hash;

    std::string data_dir() const { return out + "/data"; }
    std::string data_file(const std::string& explicit_path, const std::string& name) const {
        return explicit_path.empty() ? data_dir() + "/" + name : explicit_path;
    }
    ModelVariant variant(VariantKind k) const {
        return ModelVariant::make(k, k == VariantKind::IFG ? ifg_weight : 0.0);
    }
};

namespace detail {

class FieldReader {
public:
    explicit FieldReader(const ConfigFile& cfg) : cfg_(cfg) {}

    std::vector<std::string> problems;

    template <class T, class Parse>
    void read(const std::string& key, T& target, Parse parse) {
        used_.push_back(key);
        const auto raw = cfg_.get(key);
        if (!raw) return;
        try {
            target = parse(*raw);
        } catch (const std::exception& e) {
            problems.push_back(key + ": " + e.what());
        }
    }

    void text(const std::string& key, std::string& target) {
        read(key, target, [](const std::string& s) { return s; });
    }
    void real(const std::string& key, double& target) {
        read(key, target, [&](const std::string& s) { return csv::to_double(s, "value"); });
    }
    void count(const std::string& key, std::size_t& target) {
        read(key, target, [&](const std::string& s) {
            const long long v = csv::to_integer(s, "value");
            if (v < 0) throw ValidationError("must be nonnegative");
            return static_cast<std::size_t>(v);
        });
    }
    void u64(const std::string& key, std::uint64_t& target) {
        read(key, target, [&](const std::string& s) {
            std::uint64_t v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError("'" + s + "' is not an unsigned integer");
            return v;
        });
    }
    void flag(const std::string& key, bool& target) {
        read(key, target, [&](const std::string& s) { return parse_bool(s, "value"); });
    }
    void date(const std::string& key, std::optional<Date>& target) {
        read(key, target, [](const std::string& s) { return std::optional<Date>(Date::parse(s)); });
    }
    void reals(const std::string& key, std::vector<double>& target) {
        read(key, target, [&](const std::string& s) {
            std::vector<double> out;
            for (const auto& part : csv::split_line(s)) out.push_back(csv::to_double(std::string(csv::trim(part)), "value"));
            return out;
        });
    }
    void strings(const std::string& key, std::vector<std::string>& target) {
        read(key, target, [&](const std::string& s) {
            std::vector<std::string> out;
            for (const auto& part : csv::split_line(s)) {
                const auto t = csv::trim(part);
                if (!t.empty()) out.emplace_back(t);
            }
            return out;
        });
    }

    void reject_unknown() {
        for (const auto& [k, _] : cfg_.values()) {
            if (std::find(used_.begin(), used_.end(), k) == used_.end()) problems.push_back(k + ": unknown key");
        }
    }

private:
    const ConfigFile& cfg_;
    std::vector<std::string> used_;
};

} // namespace detail

// Builds and validates a RunConfig. `seed` and `out` override the file.
inline RunConfig load_run_config(ConfigFile cfg, std::optional<std::uint64_t> seed_override = std::nullopt,
                                 std::optional<std::string> out_override = std::nullopt) {
    if (seed_override) cfg.set("run.seed", std::to_string(*seed_override));
    if (out_override) cfg.set("run.out", *out_override);

    RunConfig rc;
    detail::FieldReader f(cfg);
    f.text("run.out", rc.out);
    f.u64("run.seed", rc.seed);
    f.text("run.city", rc.city);
    f.read("run.crime_type", rc.crime_type, [](const std::string& s) { return parse_crime_type(s); });
    f.read("run.variants", rc.variants, [](const std::string& s) {
        std::vector<VariantKind> out;
        for (const auto& part : csv::split_line(s)) out.push_back(parse_variant(csv::trim(part)));
        if (out.empty()) throw ValidationError("at least one variant is required");
        return out;
    });

    f.text("data.tracts", rc.tracts_path);
    f.text("data.crimes", rc.crimes_path);
    f.text("data.od", rc.od_path);
    f.text("data.acs", rc.acs_path);
    std::optional<Date> data_start, data_end;
    f.date("data.start", data_start);
    f.date("data.end", data_end);
    f.real("data.rescale", rc.rescale);

    // Synthetic city.
    SynthSpec& s = rc.synth;
    std::optional<Date> synth_start;
    bool synth_seed_given = cfg.has("synth.seed");
    f.u64("synth.seed", s.seed);
    f.count("synth.tracts", s.tracts);
    f.date("synth.start", synth_start);
    f.count("synth.days", s.days);
    f.real("synth.pi_min", s.pi_min);
    f.real("synth.pi_max", s.pi_max);
    f.flag("synth.nonlinear", s.nonlinear);
    f.real("synth.protected_west", s.protected_west);
    f.real("synth.protected_east", s.protected_east);
    f.real("synth.deprivation_correlation", s.deprivation_correlation);
    f.real("synth.property_base", s.property.base);
    f.real("synth.violent_base", s.violent.base);
    double ar = s.property.ar_weight, mob = s.property.mobility_weight, effect = s.property.tract_effect_sd;
    f.real("synth.ar_weight", ar);
    f.real("synth.mobility_weight", mob);
    f.real("synth.tract_effect_sd", effect);
    for (CrimeProcess* p : {&s.property, &s.violent}) {
        p->ar_weight = ar;
        p->mobility_weight = mob;
        p->tract_effect_sd = effect;
    }
    f.real("synth.mean_outflow", s.mean_outflow);
    f.count("synth.od_neighbors", s.od_neighbors);

    // Split.
    std::optional<Date> split_start, train_end, validation_end, test_end;
    f.date("split.start", split_start);
    f.date("split.train_end", train_end);
    f.date("split.validation_end", validation_end);
    f.date("split.test_end", test_end);

    // Model and training.
    f.count("train.lookback", rc.arch.lookback);
    f.count("train.predictor_blocks", rc.arch.predictor_blocks);
    f.count("train.predictor_channels", rc.arch.predictor_channels);
    f.count("train.gate_blocks", rc.arch.gate_blocks);
    f.count("train.gate_channels", rc.arch.gate_channels);
    f.count("train.kernel", rc.arch.kernel);
    f.reals("train.lr_grid", rc.train.lr_grid);
    f.count("train.max_epochs", rc.train.max_epochs);
    f.count("train.patience", rc.train.patience);
    f.count("train.batch_days", rc.train.batch_days);
    f.real("train.ifg_weight", rc.ifg_weight);

    // Comparison.
    f.read("compare.a", rc.compare_a, [](const std::string& v) { return parse_variant(v); });
    f.read("compare.b", rc.compare_b, [](const std::string& v) { return parse_variant(v); });
    f.strings("compare.reports_a", rc.compare_reports_a);
    f.strings("compare.reports_b", rc.compare_reports_b);

    f.reject_unknown();
    auto& problems = f.problems;

    if (synth_start) s.start = *synth_start;
    if (!synth_seed_given) s.seed = rc.seed;
    rc.train.seed = rc.seed;
    if (rc.out.empty()) problems.push_back("run.out: must not be empty");
    if (!(rc.rescale > 0.0)) problems.push_back("data.rescale: must be positive");
    if (!(rc.ifg_weight >= 0.0)) problems.push_back("train.ifg_weight: must be nonnegative");
    if (rc.arch.lookback == 0) problems.push_back("train.lookback: must be positive");
    if (rc.arch.predictor_blocks == 0) problems.push_back("train.predictor_blocks: must be positive");
    if (rc.arch.predictor_channels == 0) problems.push_back("train.predictor_channels: must be positive");
    if (rc.arch.gate_channels == 0) problems.push_back("train.gate_channels: must be positive");
    if (rc.arch.kernel == 0 || rc.arch.kernel % 2 == 0) problems.push_back("train.kernel: must be odd and positive");
    if (rc.train.lr_grid.empty()) problems.push_back("train.lr_grid: must list at least one rate");
    for (double lr : rc.train.lr_grid) {
        if (!(lr > 0.0)) problems.push_back("train.lr_grid: rates must be positive");
    }
    if (rc.train.max_epochs == 0) problems.push_back("train.max_epochs: must be positive");
    if (rc.train.patience == 0) problems.push_back("train.patience: must be positive");
    if (rc.train.batch_days == 0) problems.push_back("train.batch_days: must be positive");
    try {
        s.validate();
    } catch (const ValidationError& e) {
        problems.push_back(e.what());
    }

    // Data range defaults to the synthetic study period.
    const Date start = data_start.value_or(s.start);
    const Date end = data_end.value_or(s.start + static_cast<std::int64_t>(s.days) - 1);
    if (end < start) problems.push_back("data.end: precedes data.start");
    rc.data_range = DateRange{start, end};

    const Date sp = split_start.value_or(start);
    if (train_end || validation_end || test_end) {
        if (!train_end || !validation_end || !test_end) {
            problems.push_back("split: train_end, validation_end and test_end must be given together");
        } else {
            rc.split = {{sp, *train_end}, {*train_end + 1, *validation_end}, {*validation_end + 1, *test_end}};
        }
    } else {
        try {
            rc.split = SplitPlan::standard(sp);
        } catch (const ValidationError& e) {
            problems.push_back(std::string("split.start: ") + e.what());
        }
    }
    if (problems.empty()) {
        try {
            rc.split.validate(rc.arch.lookback);
        } catch (const ValidationError& e) {
            problems.push_back(e.what());
        }
        if (rc.split.train.first < start || end < rc.split.test.last) {
            problems.push_back("split: " + rc.split.train.first.iso() + ".." + rc.split.test.last.iso() +
                               " exceeds the data range " + start.iso() + ".." + end.iso());
        }
    }
    if (!problems.empty()) throw ValidationError(ConfigFile::join(problems));
    rc.hash = cfg.hash();
    return rc;
}

} // namespace urcrime
