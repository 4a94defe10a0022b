#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "urcrime/training.hpp"

using namespace urcrime;

namespace {

const SynthCity& tiny_city() {
    static const SynthCity city = generate_city(fixtures::small_spec(6, 3));
    return city;
}

const CityData& tiny_data() {
    static const CityData data = synth_city_data(tiny_city(), CrimeType::Property);
    return data;
}

const CityData& five_tract_data() {
    static const CityData data = synth_city_data(generate_city(fixtures::small_spec(5, 11)), CrimeType::Property);
    return data;
}

TrainConfig quick_config(std::size_t epochs = 3) {
    TrainConfig c;
    c.lr_grid = {3e-3};
    c.max_epochs = epochs;
    c.patience = 2;
    c.seed = 17;
    return c;
}

std::vector<double> grads(const Model& m) {
    std::vector<double> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.grad.values().begin(), p.grad.values().end());
    return out;
}

} // namespace

// ---- Split ------------------------------------------------------------------

TEST(Split, StandardPlanDates) {
    const SplitPlan s = SplitPlan::standard(Date::from_ymd(2021, 1, 1));
    EXPECT_EQ(s.train.first.iso(), "2021-01-01");
    EXPECT_EQ(s.train.last.iso(), "2021-07-15");
    EXPECT_EQ(s.validation.first.iso(), "2021-07-16");
    EXPECT_EQ(s.validation.last.iso(), "2021-07-31");
    EXPECT_EQ(s.test.first.iso(), "2021-08-01");
    EXPECT_EQ(s.test.last.iso(), "2021-12-31");
    EXPECT_NO_THROW(s.validate(14));
}

TEST(Split, PartitionsStudyPeriodForAnyStartMonth) {
    for (int month = 1; month <= 12; ++month) {
        const SplitPlan s = SplitPlan::standard(Date::from_ymd(2020, static_cast<unsigned>(month), 1));
        EXPECT_EQ(s.validation.first, s.train.last + 1);
        EXPECT_EQ(s.test.first, s.validation.last + 1);
        EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), s.study().size());
        EXPECT_GE(s.validation.size(), 13u);
        EXPECT_LE(s.validation.size(), 16u);
        EXPECT_EQ(s.test.last + 1, Date::from_ymd(2020, static_cast<unsigned>(month), 1).add_months_first_day(12));
    }
}

TEST(Split, InvalidPlansRejected) {
    EXPECT_THROW(SplitPlan::standard(Date::from_ymd(2021, 1, 2)), ValidationError);
    EXPECT_THROW(SplitPlan::from_half_months(Date::from_ymd(2021, 1, 1), 0, 1, 1), ValidationError);
    const Date d = Date::from_ymd(2021, 1, 1);
    const SplitPlan gap{{d, d + 9}, {d + 11, d + 15}, {d + 16, d + 20}};
    EXPECT_THROW(gap.validate(3), ValidationError);
    const SplitPlan overlap{{d, d + 9}, {d + 9, d + 15}, {d + 16, d + 20}};
    EXPECT_THROW(overlap.validate(3), ValidationError);
    const SplitPlan short_train{{d, d + 2}, {d + 3, d + 5}, {d + 6, d + 9}};
    try {
        short_train.validate(3);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("look-back"), std::string::npos);
    }
}

TEST(Split, TrainTargetsHaveFullLookback) {
    const SplitPlan s = fixtures::short_split(Date::from_ymd(2021, 1, 1));
    const DateRange t = s.train_targets(7);
    EXPECT_EQ(t.first, s.train.first + 7);
    EXPECT_EQ(t.last, s.train.last);
}

// ---- Losses -----------------------------------------------------------------

TEST(MseLoss, WorkedExamples) {
    const std::vector<double> pred{1, 3}, truth{2, 3};
    EXPECT_DOUBLE_EQ(mse_loss(pred, truth, 2, 1), 0.5);
    EXPECT_DOUBLE_EQ(mse_loss(truth, truth, 2, 1), 0.0);
}

TEST(MseLoss, PermutationInvariant) {
    std::mt19937_64 rng(2);
    std::vector<double> a(60), b(60);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < 60; ++i) {
        a[i] = nd(rng);
        b[i] = nd(rng);
    }
    const double base = mse_loss(a, b, 12, 5);
    std::vector<std::size_t> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pa, pb;
        for (auto k : perm) {
            pa.push_back(a[k]);
            pb.push_back(b[k]);
        }
        EXPECT_NEAR(mse_loss(pa, pb, 12, 5), base, 1e-12);
    }
}

TEST(MseLoss, LengthMismatchRejected) {
    const std::vector<double> a{1, 2, 3}, b{1, 2};
    EXPECT_THROW(mse_loss(a, b, 3, 1), ShapeError);
    EXPECT_THROW(mse_loss(a, a, 2, 1), ShapeError);
}

TEST(IfgLoss, TwoTractWorkedExample) {
    const std::vector<double> z{10, 0}, zt{10, 0}, p{100, 100}, wp{1, 0}, wm{0, 1};
    EXPECT_DOUBLE_EQ(ifg_loss(z, zt, p, wp, wm), 0.01);
}

TEST(IfgLoss, BalancedPerCapitaIsZero) {
    const std::vector<double> p{100, 300}, wp{1, 0}, wm{0, 1}, zt{4, 4};
    const std::vector<double> z{2, 6};  // 0.02 per person in both groups
    EXPECT_NEAR(ifg_loss(z, zt, p, wp, wm), 0.0, 1e-15);
}

TEST(IfgLoss, ScalesLinearlyInPredictions) {
    std::mt19937_64 rng(4);
    std::vector<double> z(8), zt(8), p(8), wp(8), wm(8);
    for (std::size_t i = 0; i < 8; ++i) {
        z[i] = 5 * ad::uniform01(rng);
        zt[i] = std::floor(5 * ad::uniform01(rng)) + 1;
        p[i] = 100 + 1000 * ad::uniform01(rng);
        wp[i] = ad::uniform01(rng);
        wm[i] = 1 - wp[i];
    }
    const double base = ifg_loss(z, zt, p, wp, wm);
    for (double c : {0.0, 0.5, 2.0, 7.25}) {
        std::vector<double> zc = z;
        for (double& v : zc) v *= c;
        EXPECT_NEAR(ifg_loss(zc, zt, p, wp, wm), c * base, 1e-12);
    }
}

TEST(IfgLoss, DayWithoutCrimeContributesZero) {
    const std::vector<double> z{10, 0}, zt{0, 0}, p{100, 100}, wp{1, 0}, wm{0, 1};
    EXPECT_EQ(ifg_loss(z, zt, p, wp, wm), 0.0);
}

TEST(IfgLoss, EmptyGroupRejected) {
    const std::vector<double> p{100, 100}, wp{0, 0}, wm{0.5, 1};
    EXPECT_THROW(ifg_coefficients(p, wp, wm), ValidationError);
    EXPECT_THROW(ifg_coefficients(p, wm, wp), ValidationError);
    std::vector<Tract> ts{fixtures::tract("a", 0, 0, 100, {1, 0, 0, 0}), fixtures::tract("b", 0, 0.01, 100, {1, 0, 0, 0})};
    EXPECT_THROW(IfgWeights::from_graph(TractGraph(ts)), ValidationError);
}

TEST(IfgLoss, GroupSumMatchesPairwiseOracle) {
    const TractGraph g = fixtures::random_city(9, 5);
    const IfgWeights w = IfgWeights::from_graph(g);
    std::mt19937_64 rng(6);
    std::vector<double> z(9), zt(9), pop(9);
    for (std::size_t i = 0; i < 9; ++i) {
        z[i] = 3 * ad::uniform01(rng);
        zt[i] = static_cast<double>(rng() % 4);
        pop[i] = g.city_tract(i).population;
    }
    double oracle = 0.0;
    for (Group pg : kProtectedGroups) {
        std::vector<double> wp(9), wm(9);
        for (std::size_t i = 0; i < 9; ++i) {
            wp[i] = g.city_tract(i).share(pg);
            wm[i] = g.city_tract(i).share(Group::W);
        }
        oracle += ifg_loss(z, zt, pop, wp, wm);
    }
    EXPECT_NEAR(ifg_loss_groups(z, zt, w), oracle, 1e-14);

    // The differentiable term averages the same quantity over days.
    ad::Tape t;
    std::vector<double> z2 = z;
    z2.insert(z2.end(), z.begin(), z.end());
    const double total = std::accumulate(zt.begin(), zt.end(), 0.0);
    const std::vector<double> totals{total, 0.0};
    const double term = ifg_term(t.constant(Array({18}, z2)), totals, w).value().item();
    EXPECT_NEAR(term, oracle / 2.0, 1e-14);
}

// ---- Training ---------------------------------------------------------------

TEST(Train, ConfigProblemsAreAllListed) {
    TrainConfig c;
    c.lr_grid = {0.1, -1.0};
    c.max_epochs = 0;
    c.patience = 0;
    try {
        c.validate(ModelVariant::make(VariantKind::UU));
        FAIL();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        for (const char* key : {"lr_grid", "max_epochs", "patience"}) EXPECT_NE(msg.find(key), std::string::npos) << key;
    }
    ModelVariant uu = ModelVariant::make(VariantKind::UU);
    uu.ifg_weight = 0.1;
    EXPECT_THROW(quick_config().validate(uu), ValidationError);
}

TEST(Train, SplitOutsideDataRejected) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first + 10);
    EXPECT_THROW(train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), tiny_data(), s, quick_config()),
                 ValidationError);
}

TEST(Train, ZeroWeightIfgMatchesUuCheckpoint) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const auto uu = train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), tiny_data(), s, quick_config());
    const auto ifg =
        train(ModelVariant::make(VariantKind::IFG, 0.0), fixtures::tiny_arch(), tiny_data(), s, quick_config());
    Checkpoint a = make_checkpoint(uu.model), b = make_checkpoint(ifg.model);
    a.metadata.erase("variant");
    b.metadata.erase("variant");
    EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Train, PositiveWeightIfgDiffersFromUu) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const auto uu = train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), tiny_data(), s, quick_config(2));
    const auto ifg =
        train(ModelVariant::make(VariantKind::IFG, 1.0), fixtures::tiny_arch(), tiny_data(), s, quick_config(2));
    EXPECT_NE(uu.model.parameter("predictor.fc.weight").value, ifg.model.parameter("predictor.fc.weight").value);
}

TEST(Train, LossDecreasesOverFirstTenEpochs) {
    const CityData& data = five_tract_data();
    TrainConfig c = quick_config(10);
    c.patience = 10;
    const auto r = train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), data,
                         fixtures::short_split(data.range().first), c);
    std::vector<double> losses;
    for (const auto& row : r.log) {
        if (row.phase == 1) losses.push_back(row.train_loss);
    }
    ASSERT_EQ(losses.size(), 10u);
    EXPECT_LT(losses.back(), losses.front());
    EXPECT_LT(*std::min_element(losses.begin() + 5, losses.end()), *std::max_element(losses.begin(), losses.begin() + 2));
}

TEST(Train, RerunGivesIdenticalCheckpointAndLog) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const auto v = ModelVariant::make(VariantKind::TC);
    const auto a = train(v, fixtures::tiny_arch(), tiny_data(), s, quick_config());
    const auto b = train(v, fixtures::tiny_arch(), tiny_data(), s, quick_config());
    EXPECT_EQ(serialize_checkpoint(make_checkpoint(a.model)), serialize_checkpoint(make_checkpoint(b.model)));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
        EXPECT_TRUE(a.log[i].val_mse == b.log[i].val_mse || (std::isnan(a.log[i].val_mse) && std::isnan(b.log[i].val_mse)));
    }
}

TEST(Train, EarlyStoppingSelectionIsReproducible) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    TrainConfig c = quick_config(8);
    c.lr_grid = {1e-2, 1e-3};
    c.patience = 2;
    const auto v = ModelVariant::make(VariantKind::UU);
    const auto r = train(v, fixtures::tiny_arch(), tiny_data(), s, c);

    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : r.log) {
        if (row.phase == 1) best = std::min(best, row.val_mse);
    }
    EXPECT_EQ(r.best_val_mse, best);
    bool found = false;
    for (const auto& row : r.log) {
        found |= row.phase == 1 && row.lr == r.selected_lr && row.epoch == r.selected_epochs && row.val_mse == best;
    }
    EXPECT_TRUE(found);

    // Re-evaluating the snapshot reproduces the reported metric.
    Model snap = Model::create(v, fixtures::tiny_arch(), CrimeType::Property, 0);
    snap.parameters() = r.best_phase1_parameters;
    const TrainingContext ctx(tiny_data(), v, fixtures::tiny_arch().lookback, r.normalizer);
    EXPECT_EQ(ctx.evaluate_mse(snap, s.validation), r.best_val_mse);

    // Each lr run stops no later than `patience` epochs after its best epoch.
    for (double lr : c.lr_grid) {
        double lr_best = std::numeric_limits<double>::infinity();
        std::size_t best_epoch = 0, last_epoch = 0;
        for (const auto& row : r.log) {
            if (row.phase != 1 || row.lr != lr) continue;
            if (row.val_mse < lr_best) {
                lr_best = row.val_mse;
                best_epoch = row.epoch;
            }
            last_epoch = row.epoch;
        }
        EXPECT_LE(last_epoch, std::min(best_epoch + c.patience, c.max_epochs));
    }
    std::size_t phase2 = 0;
    for (const auto& row : r.log) phase2 += row.phase == 2;
    EXPECT_EQ(phase2, r.selected_epochs);
}

TEST(Train, LogCsvLeavesPhaseTwoValidationBlank) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const auto r = train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), tiny_data(), s, quick_config(2));
    const std::string csv_text = training_log_csv(r.log);
    EXPECT_EQ(csv_text.substr(0, csv_text.find('\n')), "phase,epoch,train_loss,val_mse,lr,wall_time");
    std::istringstream in(csv_text);
    const csv::Table t = csv::parse(in, "log");
    for (const auto& row : t.rows) EXPECT_EQ(row[t.column("val_mse")].empty(), row[0] == "2");
}

TEST(Train, NonFiniteLossAborts) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    TrainConfig c = quick_config(3);
    c.lr_grid = {1e300};
    EXPECT_THROW(train(ModelVariant::make(VariantKind::UU), fixtures::tiny_arch(), tiny_data(), s, c), TrainingError);
}

TEST(Train, FullBatchGradientIndependentOfDayOrder) {
    const auto v = ModelVariant::make(VariantKind::IFG, 0.0);
    const std::size_t T = fixtures::tiny_arch().lookback;
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const Normalizer norm = fit_normalizer(tiny_data(), s.train_targets(T), T, v.channels);
    const TrainingContext ctx(tiny_data(), v, T, norm);
    std::vector<Date> days = detail::days_of(s.train_targets(T));
    Model m = Model::create(v, fixtures::tiny_arch(), CrimeType::Property, 2);
    auto gradient = [&](const std::vector<Date>& order) {
        m.zero_grad();
        ad::Tape t;
        t.backward(ctx.batch_loss(t, m, order));
        return grads(m);
    };
    const auto g1 = gradient(days);
    std::mt19937_64 rng(8);
    std::shuffle(days.begin(), days.end(), rng);
    const auto g2 = gradient(days);
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-10 * (1.0 + std::abs(g1[i])));
}

TEST(Train, IfgTotalLossBoundsMse) {
    const std::size_t T = fixtures::tiny_arch().lookback;
    const auto ifg = ModelVariant::make(VariantKind::IFG, 0.5);
    const auto uu = ModelVariant::make(VariantKind::UU);
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const Normalizer norm = fit_normalizer(tiny_data(), s.train_targets(T), T, uu.channels);
    const TrainingContext ci(tiny_data(), ifg, T, norm), cu(tiny_data(), uu, T, norm);
    Model mi = Model::create(ifg, fixtures::tiny_arch(), CrimeType::Property, 5);
    Model mu = Model::create(uu, fixtures::tiny_arch(), CrimeType::Property, 5);
    const IfgWeights w = IfgWeights::from_graph(tiny_data().graph);
    std::size_t strict = 0, equal = 0;
    for (const Date& d : detail::days_of(s.train_targets(T))) {
        ad::Tape t1, t2;
        const std::vector<Date> one{d};
        const double total = ci.batch_loss(t1, mi, one).value().item();
        const double mse = cu.batch_loss(t2, mu, one).value().item();
        const Array target = reported_targets(tiny_data(), one);
        const auto z = ci.predict_reported(mi, one);
        const double fair = ifg_loss_groups(z, target.values(), w);
        EXPECT_GE(total, mse);
        EXPECT_NEAR(total - mse, 0.5 * fair, 1e-12);
        if (fair == 0.0) {
            EXPECT_EQ(total, mse);
            ++equal;
        } else {
            ++strict;
        }
    }
    EXPECT_GT(strict, 0u);
}

TEST(Train, NormalizerIgnoresDataAfterTraining) {
    const std::size_t T = fixtures::tiny_arch().lookback;
    const auto v = ModelVariant::make(VariantKind::UU);
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    CityData changed = tiny_data();
    const std::size_t C = changed.panel.channel_count();
    for (const auto& id : changed.graph.city_ids()) {
        auto* series = changed.panel.find(id);
        for (std::size_t d = 70; d < series->days; ++d) series->values[d * C] += 100.0;
    }
    const Normalizer a = fit_normalizer(tiny_data(), s.train_targets(T), T, v.channels);
    const Normalizer b = fit_normalizer(changed, s.train_targets(T), T, v.channels);
    ASSERT_EQ(a.stats().size(), b.stats().size());
    for (std::size_t c = 0; c < a.stats().size(); ++c) {
        EXPECT_EQ(a.stats()[c].mean, b.stats()[c].mean);
        EXPECT_EQ(a.stats()[c].scale, b.stats()[c].scale);
    }
}

TEST(Predict, OneRowPerTractAndDay) {
    const SplitPlan s = fixtures::short_split(tiny_data().range().first);
    const auto r = train(ModelVariant::make(VariantKind::TC), fixtures::tiny_arch(), tiny_data(), s, quick_config(1));
    const auto preds = predict(r.model, r.normalizer, tiny_data(), s.test);
    ASSERT_EQ(preds.size(), s.test.size() * tiny_data().tract_count());
    for (std::size_t k = 0; k < preds.size(); ++k) {
        const auto& p = preds[k];
        EXPECT_EQ(p.day, s.test.at(k / tiny_data().tract_count()));
        EXPECT_EQ(p.tract_id, tiny_data().graph.city_tract(k % tiny_data().tract_count()).id);
        EXPECT_NEAR(p.z, p.y * p.pi, 1e-15);
        EXPECT_EQ(p.pi, preds[k % tiny_data().tract_count()].pi);
    }
}
