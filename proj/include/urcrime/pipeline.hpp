#pragma once

// The five batch commands behind the command-line tool. Every command reads
// its inputs, writes only under the configured output directory and stamps
// each output with the config hash.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "urcrime/config.hpp"
#include "urcrime/evaluate.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"
#include "urcrime/model.hpp"
#include "urcrime/synth.hpp"
#include "urcrime/training.hpp"

namespace urcrime {

struct CommandResult {
    std::vector<std::string> outputs;
    std::string summary;
};

namespace detail {

inline std::string stamp(const RunConfig& rc) { return "# config_hash=" + rc.hash + "\n"; }

inline std::string make_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory '" + path + "': " + ec.message());
    return path;
}

inline void emit(CommandResult& r, const std::string& path, const std::string& content) {
    csv::write_file(path, content);
    r.outputs.push_back(path);
}

inline std::string models_dir(const RunConfig& rc) { return rc.out + "/models"; }
inline std::string predictions_dir(const RunConfig& rc) { return rc.out + "/predictions"; }
inline std::string reports_dir(const RunConfig& rc) { return rc.out + "/reports"; }

inline std::string checkpoint_path(const RunConfig& rc, VariantKind v) {
    return models_dir(rc) + "/" + std::string(variant_name(v)) + ".ckpt";
}
inline std::string predictions_path(const RunConfig& rc, VariantKind v) {
    return predictions_dir(rc) + "/" + std::string(variant_name(v)) + ".csv";
}
inline std::string report_path(const RunConfig& rc, VariantKind v) {
    return reports_dir(rc) + "/" + std::string(variant_name(v)) + ".json";
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": invalid JSON: " + e.what());
    }
}

} // namespace detail

// Loads the graph, crime counts, flows and determinants named by the config.
inline CityData load_city_data(const RunConfig& rc) {
    const TractGraph graph = load_tracts(rc.data_file(rc.tracts_path, "tracts.csv"));
    const DateRange range = *rc.data_range;
    CrimeSeriesPair crimes = load_crimes(rc.data_file(rc.crimes_path, "crimes.csv"), graph, range);
    const auto od = rescale_flows(load_od(rc.data_file(rc.od_path, "od.csv")), rc.rescale);
    const SeriesPanel mobility = derive_mobility_features(od, graph, range);
    DeterminantTable dets = load_determinants(rc.data_file(rc.acs_path, "acs.csv"), rc.crime_type, graph);
    CrimeSeries series = rc.crime_type == CrimeType::Property ? std::move(crimes.property) : std::move(crimes.violent);
    return CityData::assemble(graph, std::move(series), mobility, std::move(dets));
}

inline CommandResult cmd_synth(const RunConfig& rc) {
    CommandResult r;
    const SynthCity city = generate_city(rc.synth);
    const SynthFiles files = export_city(city, rc.hash);
    const std::string dir = detail::make_dir(rc.data_dir());
    detail::emit(r, dir + "/tracts.csv", files.tracts);
    detail::emit(r, dir + "/acs.csv", files.acs);
    detail::emit(r, dir + "/od.csv", files.od);
    detail::emit(r, dir + "/crimes.csv", files.crimes);
    detail::emit(r, dir + "/oracle.csv", files.oracle);
    detail::emit(r, dir + "/manifest.json", files.manifest);
    r.summary = "synthesized " + std::to_string(city.graph.city_size()) + " tracts over " +
                std::to_string(rc.synth.days) + " days into " + dir + "\n";
    return r;
}

inline CommandResult cmd_train(const RunConfig& rc) {
    CommandResult r;
    const CityData data = load_city_data(rc);
    const std::string dir = detail::make_dir(detail::models_dir(rc));
    for (VariantKind kind : rc.variants) {
        const ModelVariant variant = rc.variant(kind);
        const TrainResult res = train(variant, rc.arch, data, rc.split, rc.train);
        nlohmann::json meta{{"seed", rc.seed},
                            {"config_hash", rc.hash},
                            {"city", rc.city},
                            {"normalizer", to_json(res.normalizer)},
                            {"selected_lr", res.selected_lr},
                            {"selected_epochs", res.selected_epochs},
                            {"best_val_mse", res.best_val_mse},
                            {"split",
                             {{"train", {rc.split.train.first.iso(), rc.split.train.last.iso()}},
                              {"validation", {rc.split.validation.first.iso(), rc.split.validation.last.iso()}},
                              {"test", {rc.split.test.first.iso(), rc.split.test.last.iso()}}}}};
        save_checkpoint(make_checkpoint(res.model, std::move(meta)), detail::checkpoint_path(rc, kind));
        r.outputs.push_back(detail::checkpoint_path(rc, kind));
        detail::emit(r, dir + "/" + std::string(variant_name(kind)) + "_log.csv",
                     detail::stamp(rc) + training_log_csv(res.log));
        r.summary += std::string(variant_name(kind)) + ": lr " + csv::format_double(res.selected_lr) + ", " +
                     std::to_string(res.selected_epochs) + " epochs, validation MSE " +
                     csv::format_double(res.best_val_mse) + "\n";
    }
    return r;
}

// Rows: tract_id,date,y,pi,z,h for every in-city tract and test day.
inline std::string predictions_csv(const RunConfig& rc, std::span<const Prediction> preds, std::size_t tracts) {
    std::string out = detail::stamp(rc) + "tract_id,date,y,pi,z,h\n";
    for (std::size_t start = 0; start < preds.size(); start += tracts) {
        std::vector<double> y;
        for (std::size_t i = 0; i < tracts; ++i) y.push_back(preds[start + i].y);
        const auto h = binarize(y);
        for (std::size_t i = 0; i < tracts; ++i) {
            const Prediction& p = preds[start + i];
            out += p.tract_id + "," + p.day.iso() + "," + csv::format_double(p.y) + "," + csv::format_double(p.pi) +
                   "," + csv::format_double(p.z) + "," + (h[i] ? "1" : "0") + "\n";
        }
    }
    return out;
}

inline CommandResult cmd_predict(const RunConfig& rc) {
    CommandResult r;
    const CityData data = load_city_data(rc);
    const std::string dir = detail::make_dir(detail::predictions_dir(rc));
    for (VariantKind kind : rc.variants) {
        const Checkpoint ckpt = load_checkpoint(detail::checkpoint_path(rc, kind));
        const Model model = model_from_checkpoint(ckpt);
        if (model.crime_type() != rc.crime_type) {
            throw ValidationError("checkpoint " + detail::checkpoint_path(rc, kind) + " was trained for " +
                                  std::string(crime_type_name(model.crime_type())) + " crime");
        }
        const Normalizer normalizer = normalizer_from_json(ckpt.metadata.at("normalizer"));
        const auto preds = predict(model, normalizer, data, rc.split.test);
        detail::emit(r, detail::predictions_path(rc, kind), predictions_csv(rc, preds, data.tract_count()));
        r.summary += std::string(variant_name(kind)) + ": " + std::to_string(preds.size()) + " predictions\n";
    }
    return r;
}

// Reads predictions back in day-major city order.
inline std::vector<Prediction> load_predictions(const std::string& path, const std::vector<std::string>& tract_ids,
                                                DateRange days) {
    const csv::Table t = csv::read_file(path);
    const std::size_t c_tract = t.column("tract_id"), c_date = t.column("date"), c_y = t.column("y"),
                      c_pi = t.column("pi"), c_z = t.column("z");
    std::map<std::pair<Date, std::string>, Prediction> rows;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        const std::string where = t.where(i);
        Prediction p{row[c_tract], Date::parse(row[c_date]), csv::to_double(row[c_y], where),
                     csv::to_double(row[c_pi], where), csv::to_double(row[c_z], where)};
        rows[{p.day, p.tract_id}] = p;
    }
    std::vector<Prediction> out;
    for (std::size_t d = 0; d < days.size(); ++d) {
        for (const auto& id : tract_ids) {
            auto it = rows.find({days.at(d), id});
            if (it == rows.end()) throw DataError(path + ": no prediction for " + id + " on " + days.at(d).iso());
            out.push_back(it->second);
        }
    }
    return out;
}

inline CommandResult cmd_evaluate(const RunConfig& rc) {
    CommandResult r;
    const TractGraph graph = load_tracts(rc.data_file(rc.tracts_path, "tracts.csv"));
    const CrimeSeriesPair crimes = load_crimes(rc.data_file(rc.crimes_path, "crimes.csv"), graph, *rc.data_range);
    const HotspotSeries truth = ground_truth_hotspots(crimes.of(rc.crime_type), rc.split.test);
    const std::string dir = detail::make_dir(detail::reports_dir(rc));
    for (VariantKind kind : rc.variants) {
        const auto preds = load_predictions(detail::predictions_path(rc, kind), graph.city_ids(), rc.split.test);
        const HotspotSeries pred = predicted_hotspots(preds, graph.city_ids(), rc.split.test);
        const F1Report f1 = monthly_f1(pred, truth);
        const FairnessReport fair = fairness_report(group_confusion(pred, truth, graph), rc.city,
                                                    std::string(variant_name(kind)),
                                                    std::string(crime_type_name(rc.crime_type)));
        const std::string base = dir + "/" + std::string(variant_name(kind));
        nlohmann::json j{{"config_hash", rc.hash}, {"fairness", to_json(fair)}, {"f1", to_json(f1)}};
        detail::emit(r, base + ".json", j.dump(2) + "\n");
        detail::emit(r, base + ".csv", detail::stamp(rc) + fairness_csv(fair));
        detail::emit(r, base + ".txt", detail::stamp(rc) + fairness_text(fair, &f1));
        r.summary += std::string(variant_name(kind)) + ": mean monthly F1 " + detail::fmt(f1.mean_f1) + "\n";
    }
    return r;
}

inline CommandResult cmd_compare(const RunConfig& rc) {
    CommandResult r;
    auto load_reports = [&](const std::vector<std::string>& paths, VariantKind fallback) {
        std::vector<FairnessReport> out;
        const std::vector<std::string> list = paths.empty() ? std::vector{detail::report_path(rc, fallback)} : paths;
        for (const auto& p : list) {
            const nlohmann::json j = detail::read_json(p);
            out.push_back(fairness_report_from_json(j.contains("fairness") ? j.at("fairness") : j));
        }
        return out;
    };
    const auto a = load_reports(rc.compare_reports_a, rc.compare_a);
    const auto b = load_reports(rc.compare_reports_b, rc.compare_b);
    const ImprovementTable table = compare_models(a, b);
    const std::string dir = detail::make_dir(detail::reports_dir(rc));
    const std::string base = dir + "/compare_" + table.model_a + "_vs_" + table.model_b;
    nlohmann::json j = to_json(table);
    j["config_hash"] = rc.hash;
    detail::emit(r, base + ".json", j.dump(2) + "\n");
    detail::emit(r, base + ".csv", detail::stamp(rc) + improvement_csv(table));
    detail::emit(r, base + ".txt", detail::stamp(rc) + improvement_text(table));
    r.summary = table.model_a + " vs " + table.model_b + ": " + detail::fmt(table.overall.percent(), 1) + "% of " +
                std::to_string(table.overall.counted) + " settings improved\n";
    return r;
}

} // namespace urcrime
