#pragma once

// Losses, the chronological split, per-city training data assembly and the
// two-phase training procedure (learning-rate selection with early stopping,
// then a retrain on train + validation for the selected epoch budget).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "urcrime/autodiff.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"
#include "urcrime/model.hpp"

namespace urcrime {

// ============================================================================
// Split
// ============================================================================

struct SplitPlan {
    DateRange train;
    DateRange validation;
    DateRange test;

    DateRange study() const { return {train.first, test.last}; }

    // Lengths in half-months from a first-of-month start; a half-month
    // boundary falls after the 15th.
    static SplitPlan from_half_months(Date start, int train_halves, int validation_halves, int test_halves) {
        if (start.day() != 1) throw ValidationError("split start " + start.iso() + " is not the first of a month");
        if (train_halves <= 0 || validation_halves <= 0 || test_halves <= 0) {
            throw ValidationError("split lengths must be positive");
        }
        auto boundary = [&](int halves) { return start.add_months_first_day(halves / 2) + (halves % 2 ? 15 : 0); };
        const Date v0 = boundary(train_halves), t0 = boundary(train_halves + validation_halves),
                   end = boundary(train_halves + validation_halves + test_halves);
        return {{start, v0 - 1}, {v0, t0 - 1}, {t0, end - 1}};
    }

    // 6.5 / 0.5 / 5 months.
    static SplitPlan standard(Date start) { return from_half_months(start, 13, 1, 10); }

    // Checks ordering and contiguity, and that the first training target has
    // a full look-back window inside the study period.
    void validate(std::size_t lookback) const {
        std::vector<std::string> problems;
        if (train.size() == 0) problems.push_back("split.train is empty");
        if (validation.size() == 0) problems.push_back("split.validation is empty");
        if (test.size() == 0) problems.push_back("split.test is empty");
        if (validation.first != train.last + 1) problems.push_back("split.validation must start the day after train ends");
        if (test.first != validation.last + 1) problems.push_back("split.test must start the day after validation ends");
        if (train.size() <= lookback) {
            problems.push_back("split.train (" + std::to_string(train.size()) + " days) must exceed the look-back of " +
                               std::to_string(lookback) + " days");
        }
        if (!problems.empty()) {
            std::string msg;
            for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
            throw ValidationError(msg);
        }
    }

    // Target days used for fitting: training days with a full look-back.
    DateRange train_targets(std::size_t lookback) const {
        return {train.first + static_cast<std::int64_t>(lookback), train.last};
    }
};

// ============================================================================
// Losses
// ============================================================================

// (1 / (N * TD)) * sum (z* - z)^2
inline double mse_loss(std::span<const double> z_pred, std::span<const double> z_true, std::size_t n,
                       std::size_t days) {
    if (z_pred.size() != z_true.size() || z_pred.size() != n * days) {
        throw ShapeError("mse_loss: " + std::to_string(z_pred.size()) + " predictions, " +
                         std::to_string(z_true.size()) + " targets, expected N*TD = " + std::to_string(n * days));
    }
    if (z_pred.empty()) throw ShapeError("mse_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < z_pred.size(); ++i) acc += (z_true[i] - z_pred[i]) * (z_true[i] - z_pred[i]);
    return acc / static_cast<double>(n * days);
}

// Per-tract coefficients c_i = w+_i / sum_j p_j w+_j - w-_i / sum_j p_j w-_j,
// so that sum_i z_i c_i is the per-capita gap between the two groups.
inline std::vector<double> ifg_coefficients(std::span<const double> population, std::span<const double> w_plus,
                                            std::span<const double> w_minus) {
    const std::size_t n = population.size();
    if (w_plus.size() != n || w_minus.size() != n) throw ShapeError("ifg: population and share vectors differ in length");
    double pp = 0.0, pm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        pp += population[i] * w_plus[i];
        pm += population[i] * w_minus[i];
    }
    if (!(pp > 0.0)) throw ValidationError("ifg: protected group has zero population citywide");
    if (!(pm > 0.0)) throw ValidationError("ifg: non-protected group has zero population citywide");
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = w_plus[i] / pp - w_minus[i] / pm;
    return c;
}

// One day, one protected/non-protected pair. A day without reported crime
// contributes 0.
inline double ifg_loss(std::span<const double> z_pred, std::span<const double> z_true,
                       std::span<const double> population, std::span<const double> w_plus,
                       std::span<const double> w_minus) {
    if (z_pred.size() != population.size() || z_true.size() != population.size()) {
        throw ShapeError("ifg_loss: prediction, truth and population vectors differ in length");
    }
    const double total = std::accumulate(z_true.begin(), z_true.end(), 0.0);
    if (!(total > 0.0)) return 0.0;
    double pos = 0.0, neg = 0.0, pp = 0.0, pm = 0.0;
    for (std::size_t i = 0; i < z_pred.size(); ++i) {
        pos += z_pred[i] * w_plus[i];
        neg += z_pred[i] * w_minus[i];
        pp += population[i] * w_plus[i];
        pm += population[i] * w_minus[i];
    }
    if (!(pp > 0.0) || !(pm > 0.0)) throw ValidationError("ifg_loss: a group has zero population citywide");
    return std::abs(pos / pp - neg / pm) / total;
}

// Coefficients for each protected group against W, over in-city tracts.
struct IfgWeights {
    std::array<std::vector<double>, kProtectedGroups.size()> coefficients;

    static IfgWeights from_graph(const TractGraph& graph) {
        const std::size_t n = graph.city_size();
        std::vector<double> pop(n), w(n);
        for (std::size_t i = 0; i < n; ++i) {
            pop[i] = graph.city_tract(i).population;
            w[i] = graph.city_tract(i).share(kNonProtectedGroup);
        }
        IfgWeights out;
        for (std::size_t g = 0; g < kProtectedGroups.size(); ++g) {
            std::vector<double> wp(n);
            for (std::size_t i = 0; i < n; ++i) wp[i] = graph.city_tract(i).share(kProtectedGroups[g]);
            out.coefficients[g] = ifg_coefficients(pop, wp, w);
        }
        return out;
    }
};

// Sum over the protected groups of one day's gap.
inline double ifg_loss_groups(std::span<const double> z_pred, std::span<const double> z_true, const IfgWeights& w) {
    const double total = std::accumulate(z_true.begin(), z_true.end(), 0.0);
    if (!(total > 0.0)) return 0.0;
    double out = 0.0;
    for (const auto& c : w.coefficients) {
        if (c.size() != z_pred.size()) throw ShapeError("ifg: coefficient and prediction lengths differ");
        double gap = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) gap += z_pred[i] * c[i];
        out += std::abs(gap);
    }
    return out / total;
}

// Differentiable IFG averaged over the days of a batch. `z` is [days * N],
// day-major; `day_totals` holds sum_i z*_{i,t} per day.
inline ad::Var ifg_term(ad::Var z, std::span<const double> day_totals, const IfgWeights& w) {
    const std::size_t days = day_totals.size();
    const std::size_t n = w.coefficients[0].size();
    if (z.value().size() != days * n) throw ShapeError("ifg_term: batch size is not days x tracts");
    std::optional<ad::Var> acc;
    for (std::size_t d = 0; d < days; ++d) {
        if (!(day_totals[d] > 0.0)) continue;
        for (const auto& c : w.coefficients) {
            Array weights(z.shape());
            std::copy(c.begin(), c.end(), weights.data() + d * n);
            ad::Var gap = ad::scale(ad::abs(ad::weighted_sum(z, weights)), 1.0 / day_totals[d]);
            acc = acc ? ad::add(*acc, gap) : gap;
        }
    }
    if (!acc) return z.tape->constant(Array::scalar(0.0));
    return ad::scale(*acc, 1.0 / static_cast<double>(days));
}

// ============================================================================
// City data
// ============================================================================

// Every input the model sees for one city and crime type, unnormalized.
struct CityData {
    TractGraph graph;
    NeighborMap neighbors;
    CrimeSeries crimes;
    SeriesPanel panel;  // channels::all() per in-city tract
    DeterminantTable determinants;
    std::vector<Array> gate_inputs;

    CrimeType crime_type() const { return crimes.type(); }
    std::size_t tract_count() const { return graph.city_size(); }
    const DateRange& range() const { return crimes.range(); }

    static CityData assemble(TractGraph graph, CrimeSeries crimes, const SeriesPanel& mobility,
                             DeterminantTable determinants) {
        if (crimes.tract_ids() != graph.city_ids()) throw DataError("crime series and tract graph disagree on tracts");
        if (determinants.tract_ids() != graph.city_ids()) {
            throw DataError("determinant table and tract graph disagree on tracts");
        }
        if (determinants.type() != crimes.type()) throw DataError("determinant table was selected for another crime type");
        CityData d{std::move(graph), {}, std::move(crimes), SeriesPanel(channels::all()), std::move(determinants), {}};
        d.neighbors = build_neighbor_map(d.graph);
        const DateRange range = d.crimes.range();
        std::vector<std::size_t> mob_idx;
        for (auto m : channels::kMobility) mob_idx.push_back(mobility.channel_index(m));
        const std::size_t C = d.panel.channel_count();
        for (std::size_t k = 0; k < d.graph.city_size(); ++k) {
            const std::string& id = d.graph.city_tract(k).id;
            auto& s = d.panel.add(id, range.first, range.size());
            for (std::size_t day = 0; day < range.size(); ++day) {
                const Date date = range.at(day);
                double* v = s.values.data() + day * C;
                v[0] = static_cast<double>(d.crimes.count(k, day));
                for (std::size_t m = 0; m < mob_idx.size(); ++m) v[1 + m] = mobility.at(id, date, mob_idx[m]);
                const auto dow = day_of_week_encoding(date);
                v[1 + mob_idx.size()] = dow[0];
                v[2 + mob_idx.size()] = dow[1];
            }
        }
        d.gate_inputs = build_gate_inputs(d.neighbors, d.determinants);
        return d;
    }
};

// Lays out [B, 9, T, C] batches for whole days from a (normalized) panel.
class FeatureBuilder {
public:
    FeatureBuilder(const NeighborMap& nmap, const SeriesPanel& panel, std::size_t lookback,
                   const std::vector<std::string>& channels)
        : panel_(&panel), lookback_(lookback), channels_(channels.size()) {
        for (const auto& c : channels) idx_.push_back(panel.channel_index(c));
        rows_.resize(nmap.size());
        ids_.resize(nmap.size());
        for (std::size_t i = 0; i < nmap.size(); ++i) {
            for (std::size_t r = 0; r < kMapRows; ++r) {
                if (!nmap[i].rows[r]) continue;
                ids_[i][r] = &nmap.city_ids()[*nmap[i].rows[r]];
                rows_[i][r] = panel.find(*ids_[i][r]);
                if (rows_[i][r] == nullptr) throw DataError("no feature series for tract '" + *ids_[i][r] + "'");
            }
        }
    }

    std::size_t tract_count() const { return rows_.size(); }
    std::size_t sample_size() const { return kMapRows * lookback_ * channels_; }

    // Samples ordered day-major, then tract in city order.
    Array build(std::span<const Date> days) const {
        const std::size_t n = rows_.size(), each = sample_size();
        Array out(Shape{days.size() * n, kMapRows, lookback_, channels_});
        for (std::size_t d = 0; d < days.size(); ++d) {
            for (std::size_t i = 0; i < n; ++i) {
                detail::layout_into(out.data() + (d * n + i) * each, rows_[i], ids_[i], days[d], lookback_, idx_,
                                    panel_->channel_count());
            }
        }
        return out;
    }

private:
    const SeriesPanel* panel_;
    std::size_t lookback_;
    std::size_t channels_;
    std::vector<std::size_t> idx_;
    std::vector<std::array<const SeriesPanel::Series*, kMapRows>> rows_;
    std::vector<std::array<const std::string*, kMapRows>> ids_;
};

// Fits the per-channel normalizer on the feature tensors of the training
// targets (non-padded cells only).
inline Normalizer fit_normalizer(const CityData& data, DateRange targets, std::size_t lookback,
                                 const std::vector<std::string>& channels) {
    if (targets.size() == 0) throw ValidationError("cannot fit a normalizer on an empty training set");
    NormalizerFit fit;
    FeatureBuilder builder(data.neighbors, data.panel, lookback, channels);
    for (std::size_t d = 0; d < targets.size(); ++d) {
        const Date day = targets.at(d);
        const Array batch = builder.build(std::span<const Date>(&day, 1));
        const std::size_t each = builder.sample_size();
        for (std::size_t i = 0; i < data.tract_count(); ++i) {
            FeatureTensor t;
            t.values = Array(Shape{kMapRows, lookback, channels.size()});
            std::copy(batch.data() + i * each, batch.data() + (i + 1) * each, t.values.data());
            t.channel_names = channels;
            t.pad_mask = data.neighbors[i].pad_mask;
            fit.add(t);
        }
    }
    return fit.finish();
}

// The city panel with `normalizer` applied to its channels.
inline SeriesPanel normalized_panel(const CityData& data, const Normalizer& normalizer) {
    SeriesPanel p = data.panel;
    normalizer.apply(p, data.graph.city_ids());
    return p;
}

inline Array stacked_gate_inputs(const CityData& data, std::size_t copies = 1) {
    std::vector<const Array*> items;
    for (std::size_t c = 0; c < copies; ++c) {
        for (const auto& g : data.gate_inputs) items.push_back(&g);
    }
    return stack(items);
}

inline Array reported_targets(const CityData& data, std::span<const Date> days) {
    const std::size_t n = data.tract_count();
    Array out(Shape{days.size() * n});
    for (std::size_t d = 0; d < days.size(); ++d) {
        const std::size_t idx = data.range().index_of(days[d]);
        for (std::size_t i = 0; i < n; ++i) out[d * n + i] = static_cast<double>(data.crimes.count(i, idx));
    }
    return out;
}

// ============================================================================
// Training
// ============================================================================

struct TrainConfig {
    std::vector<double> lr_grid{1e-2, 1e-3, 1e-4};
    std::size_t max_epochs = 200;
    std::size_t patience = 5;
    std::size_t batch_days = 1;
    std::uint64_t seed = 0;
    ad::AdamConfig adam{};

    void validate(const ModelVariant& variant) const {
        std::vector<std::string> problems;
        if (lr_grid.empty()) problems.push_back("train.lr_grid is empty");
        for (double lr : lr_grid) {
            if (!(lr > 0.0)) problems.push_back("train.lr_grid entries must be positive");
        }
        if (max_epochs == 0) problems.push_back("train.max_epochs must be positive");
        if (patience == 0) problems.push_back("train.patience must be positive");
        if (batch_days == 0) problems.push_back("train.batch_days must be positive");
        if (variant.kind != VariantKind::IFG && variant.ifg_weight != 0.0) {
            problems.push_back("train.ifg_weight must be 0 unless the variant is IFG");
        }
        if (!problems.empty()) {
            std::string msg;
            for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
            throw ValidationError(msg);
        }
    }
};

struct LogRow {
    int phase = 1;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mse = std::numeric_limits<double>::quiet_NaN();  // NaN in phase 2
    double lr = 0.0;
    double wall_time = 0.0;  // seconds since training started
};

struct TrainResult {
    Model model;
    Normalizer normalizer;
    std::vector<LogRow> log;
    double selected_lr = 0.0;
    std::size_t selected_epochs = 0;
    double best_val_mse = 0.0;
    std::vector<ad::Parameter> best_phase1_parameters;  // snapshot at the selected epoch
};

// Everything one optimization run needs, already normalized.
class TrainingContext {
public:
    TrainingContext(const CityData& data, const ModelVariant& variant, std::size_t lookback,
                    const Normalizer& normalizer)
        : data_(&data), panel_(normalized_panel(data, normalizer)),
          builder_(data.neighbors, panel_, lookback, variant.channels), gate_(stacked_gate_inputs(data)) {
        if (variant.kind == VariantKind::IFG) ifg_ = IfgWeights::from_graph(data.graph);
    }

    TrainingContext(const TrainingContext&) = delete;
    TrainingContext& operator=(const TrainingContext&) = delete;

    const CityData& data() const { return *data_; }
    const FeatureBuilder& builder() const { return builder_; }

    Array gate_batch(std::size_t days) const {
        if (days == 1) return gate_;
        std::vector<const Array*> items;
        for (std::size_t d = 0; d < days; ++d) {
            for (const auto& g : data_->gate_inputs) items.push_back(&g);
        }
        return stack(items);
    }

    // Loss on one batch of days, recorded on `tape`: MSE, plus lambda * IFG
    // for the IFG variant with lambda > 0.
    ad::Var batch_loss(ad::Tape& tape, Model& model, std::span<const Date> days) const {
        const Array features = builder_.build(days);
        const Array target = reported_targets(*data_, days);
        const Array gate = model.variant().gate_enabled ? gate_batch(days.size()) : Array();
        ad::Var z = model.reported(tape, features, model.variant().gate_enabled ? &gate : nullptr);
        ad::Var loss = ad::mse(z, target);
        const double lambda = model.variant().ifg_weight;
        if (model.variant().kind == VariantKind::IFG && lambda > 0.0) {
            const std::size_t n = data_->tract_count();
            std::vector<double> totals(days.size(), 0.0);
            for (std::size_t d = 0; d < days.size(); ++d) {
                for (std::size_t i = 0; i < n; ++i) totals[d] += target[d * n + i];
            }
            loss = ad::add(loss, ad::scale(ifg_term(z, totals, *ifg_), lambda));
        }
        return loss;
    }

    // Reported-crime predictions for whole days, day-major.
    std::vector<double> predict_reported(const Model& model, std::span<const Date> days) const {
        std::vector<double> out;
        out.reserve(days.size() * data_->tract_count());
        for (const Date& d : days) {
            const Array features = builder_.build(std::span<const Date>(&d, 1));
            std::vector<double> y = model.predict_true_crimes(features);
            if (model.variant().gate_enabled) {
                const std::vector<double> pi = model.predict_reporting_rate(gate_);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] *= pi[i];
            }
            out.insert(out.end(), y.begin(), y.end());
        }
        return out;
    }

    double evaluate_mse(const Model& model, DateRange days) const {
        std::vector<Date> list;
        for (std::size_t d = 0; d < days.size(); ++d) list.push_back(days.at(d));
        const std::vector<double> pred = predict_reported(model, list);
        const Array target = reported_targets(*data_, list);
        return mse_loss(pred, target.values(), data_->tract_count(), list.size());
    }

private:
    const CityData* data_;
    SeriesPanel panel_;
    FeatureBuilder builder_;
    Array gate_;
    std::optional<IfgWeights> ifg_;
};

namespace detail {

inline std::vector<Date> days_of(DateRange r) {
    std::vector<Date> out;
    for (std::size_t d = 0; d < r.size(); ++d) out.push_back(r.at(d));
    return out;
}

// One pass over `days` in a seeded random order; returns the mean batch loss.
inline double run_epoch(const TrainingContext& ctx, Model& model, std::vector<Date> days, std::size_t batch_days,
                        std::mt19937_64& shuffle_rng, ad::AdamState& state, const ad::AdamConfig& adam) {
    std::shuffle(days.begin(), days.end(), shuffle_rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < days.size(); start += batch_days) {
        const std::size_t len = std::min(batch_days, days.size() - start);
        ad::Tape tape;
        model.zero_grad();
        ad::Var loss = ctx.batch_loss(tape, model, std::span<const Date>(days.data() + start, len));
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
            throw TrainingError("non-finite training loss " + std::to_string(value) + " on batch starting " +
                                days[start].iso() + " (lr " + std::to_string(adam.lr) + ")");
        }
        tape.backward(loss);
        ad::adam_step(model.parameters(), state, adam);
        total += value;
        ++batches;
    }
    return total / static_cast<double>(batches);
}

inline std::uint64_t shuffle_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

} // namespace detail

inline TrainResult train(const ModelVariant& variant, const Architecture& arch, const CityData& data,
                         const SplitPlan& split, const TrainConfig& cfg) {
    cfg.validate(variant);
    split.validate(arch.lookback);
    if (split.study().first < data.range().first || data.range().last < split.study().last) {
        throw ValidationError("split " + split.study().first.iso() + ".." + split.study().last.iso() +
                              " is not covered by the data range " + data.range().first.iso() + ".." +
                              data.range().last.iso());
    }
    if (variant.kind == VariantKind::IFG) (void)IfgWeights::from_graph(data.graph);

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    const DateRange train_targets = split.train_targets(arch.lookback);
    TrainResult result;
    result.normalizer = fit_normalizer(data, train_targets, arch.lookback, variant.channels);
    const TrainingContext ctx(data, variant, arch.lookback, result.normalizer);
    const std::vector<Date> train_days = detail::days_of(train_targets);

    // Phase 1: learning-rate grid with early stopping on validation MSE.
    double best_val = std::numeric_limits<double>::infinity();
    for (double lr : cfg.lr_grid) {
        Model model = Model::create(variant, arch, data.crime_type(), cfg.seed);
        ad::AdamState state;
        ad::AdamConfig adam = cfg.adam;
        adam.lr = lr;
        std::mt19937_64 shuffle_rng(detail::shuffle_seed(cfg.seed));
        double lr_best = std::numeric_limits<double>::infinity();
        std::size_t lr_best_epoch = 0, since_best = 0;
        std::vector<ad::Parameter> lr_best_params;
        for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            const double loss = detail::run_epoch(ctx, model, train_days, cfg.batch_days, shuffle_rng, state, adam);
            const double val = ctx.evaluate_mse(model, split.validation);
            if (!std::isfinite(val)) {
                throw TrainingError("non-finite validation MSE at epoch " + std::to_string(epoch) + " (lr " +
                                    std::to_string(lr) + ")");
            }
            result.log.push_back({1, epoch, loss, val, lr, elapsed()});
            if (val < lr_best) {
                lr_best = val;
                lr_best_epoch = epoch;
                lr_best_params = model.parameters();
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
        if (lr_best < best_val) {
            best_val = lr_best;
            result.selected_lr = lr;
            result.selected_epochs = lr_best_epoch;
            result.best_phase1_parameters = std::move(lr_best_params);
        }
    }
    result.best_val_mse = best_val;

    // Phase 2: retrain from scratch on train + validation.
    std::vector<Date> all_days = train_days;
    for (const Date& d : detail::days_of(split.validation)) all_days.push_back(d);
    result.model = Model::create(variant, arch, data.crime_type(), cfg.seed);
    ad::AdamState state;
    ad::AdamConfig adam = cfg.adam;
    adam.lr = result.selected_lr;
    std::mt19937_64 shuffle_rng(detail::shuffle_seed(cfg.seed));
    for (std::size_t epoch = 1; epoch <= result.selected_epochs; ++epoch) {
        const double loss = detail::run_epoch(ctx, result.model, all_days, cfg.batch_days, shuffle_rng, state, adam);
        result.log.push_back({2, epoch, loss, std::numeric_limits<double>::quiet_NaN(), adam.lr, elapsed()});
    }
    result.model.zero_grad();
    return result;
}

inline std::string training_log_csv(const std::vector<LogRow>& log) {
    std::string out = "phase,epoch,train_loss,val_mse,lr,wall_time\n";
    for (const auto& r : log) {
        out += std::to_string(r.phase) + "," + std::to_string(r.epoch) + "," + csv::format_double(r.train_loss) + "," +
               (std::isnan(r.val_mse) ? std::string() : csv::format_double(r.val_mse)) + "," +
               csv::format_double(r.lr) + "," + csv::format_double(r.wall_time) + "\n";
    }
    return out;
}

// ============================================================================
// Prediction
// ============================================================================

// Predictions for every in-city tract on each of `days`, day-major.
inline std::vector<Prediction> predict(const Model& model, const Normalizer& normalizer, const CityData& data,
                                       DateRange days) {
    const SeriesPanel panel = normalized_panel(data, normalizer);
    const FeatureBuilder builder(data.neighbors, panel, model.architecture().lookback, model.variant().channels);
    std::vector<double> pi(data.tract_count(), 1.0);
    if (model.variant().gate_enabled) pi = model.predict_reporting_rate(stacked_gate_inputs(data));
    std::vector<Prediction> out;
    out.reserve(days.size() * data.tract_count());
    for (std::size_t d = 0; d < days.size(); ++d) {
        const Date day = days.at(d);
        const std::vector<double> y = model.predict_true_crimes(builder.build(std::span<const Date>(&day, 1)));
        for (std::size_t i = 0; i < y.size(); ++i) {
            out.push_back({data.graph.city_tract(i).id, day, y[i], pi[i], y[i] * pi[i]});
        }
    }
    return out;
}

} // namespace urcrime
