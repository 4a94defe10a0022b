#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "gradcheck_cases.hpp"
#include "urcrime/model.hpp"

using namespace urcrime;

namespace {

Architecture small_arch() {
    Architecture a;
    a.lookback = 4;
    a.predictor_blocks = 2;
    a.predictor_channels = 3;
    a.gate_blocks = 2;
    a.gate_channels = 3;
    return a;
}

FeatureTensor features(const ModelVariant& v, std::size_t lookback, std::uint64_t seed, Date day = Date::from_ymd(2021, 3, 1)) {
    std::mt19937_64 rng(seed);
    FeatureTensor t;
    t.values = gradcheck::random_array({kMapRows, lookback, v.channels.size()}, rng, -2.0, 2.0);
    t.channel_names = v.channels;
    t.target_tract = "A";
    t.target_day = day;
    return t;
}

Array gate_input(CrimeType type, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return gradcheck::random_array({kMapRows, determinants::for_crime(type).size(), 2}, rng, 0.0, 1.0);
}

void zero(ad::Parameter& p) { p.value.fill(0.0); }

} // namespace

TEST(Variant, ChannelListsAndGate) {
    const auto tc = ModelVariant::make(VariantKind::TC);
    const auto uu = ModelVariant::make(VariantKind::UU);
    const auto uuc = ModelVariant::make(VariantKind::UU_C);
    EXPECT_EQ(tc.channels.size(), 13u);
    EXPECT_EQ(tc.channels, uu.channels);
    EXPECT_EQ(uuc.channels, (std::vector<std::string>{"crime", "dow_sin", "dow_cos"}));
    EXPECT_TRUE(tc.gate_enabled);
    EXPECT_FALSE(uu.gate_enabled);
    EXPECT_EQ(ModelVariant::make(VariantKind::UU, 5.0).ifg_weight, 0.0);
    EXPECT_EQ(ModelVariant::make(VariantKind::IFG, 0.25).ifg_weight, 0.25);
    EXPECT_THROW(ModelVariant::make(VariantKind::IFG, -1.0), ValidationError);
    for (auto k : {VariantKind::UU, VariantKind::UU_C, VariantKind::IFG, VariantKind::TC}) {
        EXPECT_EQ(parse_variant(variant_name(k)), k);
    }
    EXPECT_THROW(parse_variant("XX"), ValidationError);
}

TEST(Model, ZeroHeadsGiveSoftplusZeroAndHalf) {
    const auto v = ModelVariant::make(VariantKind::TC);
    Model m = Model::create(v, small_arch(), CrimeType::Violent, 7);
    zero(m.parameter("predictor.fc.weight"));
    zero(m.parameter("predictor.fc.bias"));
    zero(m.parameter("gate.fc.weight"));
    zero(m.parameter("gate.fc.bias"));
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Array g = gate_input(CrimeType::Violent, s);
        const Prediction p = m.forward_reported(features(v, 4, s), &g);
        EXPECT_NEAR(p.y, std::log(2.0), 1e-12);
        EXPECT_DOUBLE_EQ(p.pi, 0.5);
        EXPECT_NEAR(p.z, 0.5 * std::log(2.0), 1e-12);
    }
}

TEST(Model, WorkedExampleHalfReportingHalvesCount) {
    const auto v = ModelVariant::make(VariantKind::TC);
    Model m = Model::create(v, small_arch(), CrimeType::Property, 1);
    zero(m.parameter("predictor.fc.weight"));
    m.parameter("predictor.fc.bias").value[0] = std::log(std::expm1(4.0));  // softplus^-1(4)
    zero(m.parameter("gate.fc.weight"));
    zero(m.parameter("gate.fc.bias"));
    const Array g = gate_input(CrimeType::Property, 2);
    const Prediction p = m.forward_reported(features(v, 4, 3), &g);
    EXPECT_NEAR(p.y, 4.0, 1e-12);
    EXPECT_DOUBLE_EQ(p.pi, 0.5);
    EXPECT_NEAR(p.z, 2.0, 1e-12);
}

TEST(Model, OutputRangesOverSeeds) {
    const auto v = ModelVariant::make(VariantKind::TC);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Model m = Model::create(v, small_arch(), seed % 2 ? CrimeType::Property : CrimeType::Violent, seed);
        const Array g = gate_input(m.crime_type(), seed + 1000);
        const Prediction p = m.forward_reported(features(v, 4, seed + 2000), &g);
        EXPECT_GT(p.y, 0.0);
        EXPECT_GT(p.pi, 0.0);
        EXPECT_LT(p.pi, 1.0);
        EXPECT_LE(p.z, p.y);
        EXPECT_GE(p.z, 0.0);
    }
}

TEST(Model, UngatedVariantsIgnoreGate) {
    for (auto k : {VariantKind::UU, VariantKind::UU_C, VariantKind::IFG}) {
        const auto v = ModelVariant::make(k, 0.1);
        const Model m = Model::create(v, small_arch(), CrimeType::Property, 4);
        const FeatureTensor t = features(v, 4, 9);
        const Array g = gate_input(CrimeType::Property, 1);
        const Prediction a = m.forward_reported(t, nullptr);
        const Prediction b = m.forward_reported(t, &g);
        EXPECT_EQ(a.pi, 1.0);
        EXPECT_EQ(a.z, a.y);
        EXPECT_EQ(a.z, b.z);
    }
    const auto tc = ModelVariant::make(VariantKind::TC);
    const Model m = Model::create(tc, small_arch(), CrimeType::Property, 4);
    EXPECT_THROW(m.forward_reported(features(tc, 4, 9), nullptr), ValidationError);
}

TEST(Model, SameSeedGivesSameParametersAcrossVariants) {
    const Model tc = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Violent, 21);
    const Model uu = Model::create(ModelVariant::make(VariantKind::UU), small_arch(), CrimeType::Violent, 21);
    const Model again = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Violent, 21);
    const Model other = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Violent, 22);
    ASSERT_EQ(tc.parameters().size(), uu.parameters().size());
    for (std::size_t i = 0; i < tc.parameters().size(); ++i) {
        EXPECT_EQ(tc.parameters()[i].value, uu.parameters()[i].value) << tc.parameters()[i].name;
        EXPECT_EQ(tc.parameters()[i].value, again.parameters()[i].value);
    }
    EXPECT_NE(tc.parameter("predictor.conv0.kernel").value, other.parameter("predictor.conv0.kernel").value);
}

TEST(Model, ChannelAndLookbackMismatchRejected) {
    const auto uu = ModelVariant::make(VariantKind::UU);
    const auto uuc = ModelVariant::make(VariantKind::UU_C);
    const Model m = Model::create(uu, small_arch(), CrimeType::Property, 1);
    EXPECT_THROW(m.forward_true_crimes(features(uuc, 4, 1)), ValidationError);
    EXPECT_THROW(m.forward_true_crimes(features(uu, 5, 1)), ValidationError);
    FeatureTensor swapped = features(uu, 4, 1);
    std::swap(swapped.channel_names[0], swapped.channel_names[1]);
    EXPECT_THROW(m.forward_true_crimes(swapped), ValidationError);
}

TEST(Model, DeterminantCountMismatchRejected) {
    const Model m = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Property, 1);
    EXPECT_EQ(m.determinant_count(), 2u);
    EXPECT_THROW(m.forward_reporting_rate(gate_input(CrimeType::Violent, 1)), ShapeError);
    EXPECT_THROW(m.predict_true_crimes(Array({2, kMapRows, 3, 13})), ShapeError);
}

TEST(Model, UnknownParameterNameRejected) {
    Model m = Model::create(ModelVariant::make(VariantKind::UU), small_arch(), CrimeType::Property, 1);
    EXPECT_THROW(m.parameter("predictor.conv9.kernel"), ValidationError);
    EXPECT_EQ(m.parameter_pointers("gate.").size(), 2 * small_arch().gate_blocks + 2);
}

TEST(Model, InvalidArchitectureRejected) {
    Architecture a = small_arch();
    a.lookback = 0;
    EXPECT_THROW(Model::create(ModelVariant::make(VariantKind::UU), a, CrimeType::Property, 1), ValidationError);
}

TEST(Model, BranchesAreSeparated) {
    const auto v = ModelVariant::make(VariantKind::TC);
    Model m = Model::create(v, small_arch(), CrimeType::Violent, 3);
    Array f = features(v, 4, 1).values.reshaped({1, kMapRows, 4, v.channels.size()});
    Array g = gate_input(CrimeType::Violent, 2).reshaped({1, kMapRows, 7, 2});

    m.zero_grad();
    {
        ad::Tape t;
        t.backward(ad::sum(m.true_crimes(t, f)));
    }
    for (auto* p : m.parameter_pointers("gate.")) {
        for (double x : p->grad.values()) EXPECT_EQ(x, 0.0) << p->name;
    }
    m.zero_grad();
    {
        ad::Tape t;
        t.backward(ad::sum(m.reporting_rate(t, g)));
    }
    for (auto* p : m.parameter_pointers("predictor.")) {
        for (double x : p->grad.values()) EXPECT_EQ(x, 0.0) << p->name;
    }
    // Changing determinants leaves y untouched; changing features leaves pi untouched.
    const Array g2 = gate_input(CrimeType::Violent, 99);
    const FeatureTensor f2 = features(v, 4, 77);
    const Array g1 = gate_input(CrimeType::Violent, 2);
    const Prediction base = m.forward_reported(features(v, 4, 1), &g1);
    EXPECT_EQ(m.forward_reported(features(v, 4, 1), &g2).y, base.y);
    EXPECT_EQ(m.forward_reported(f2, &g1).pi, base.pi);
}

TEST(Model, ReportingRateIsConstantAcrossDays) {
    const auto v = ModelVariant::make(VariantKind::TC);
    const Model m = Model::create(v, small_arch(), CrimeType::Property, 8);
    const Array g = gate_input(CrimeType::Property, 4);
    const double pi = m.forward_reported(features(v, 4, 0, Date::from_ymd(2021, 1, 1)), &g).pi;
    for (int d = 1; d < 30; ++d) {
        EXPECT_EQ(m.forward_reported(features(v, 4, d, Date::from_ymd(2021, 1, 1) + d), &g).pi, pi);
    }
}

TEST(Model, BatchedForwardMatchesSingle) {
    const auto v = ModelVariant::make(VariantKind::TC);
    Model m = Model::create(v, small_arch(), CrimeType::Violent, 12);
    std::vector<FeatureTensor> ts;
    std::vector<Array> fs, gs;
    for (int i = 0; i < 3; ++i) {
        ts.push_back(features(v, 4, i));
        fs.push_back(ts.back().values);
        gs.push_back(gate_input(CrimeType::Violent, 10 + i));
    }
    std::vector<const Array*> fp, gp;
    for (int i = 0; i < 3; ++i) {
        fp.push_back(&fs[i]);
        gp.push_back(&gs[i]);
    }
    const Array F = stack(fp), G = stack(gp);
    ad::Tape t;
    const ad::Var z = m.reported(t, F, &G);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(z.value()[i], m.forward_reported(ts[i], &gs[i]).z, 1e-12);
}

TEST(Model, MseThroughReportedCountsPassesGradCheck) {
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
        const auto c = gradcheck::run_model_case(seed);
        EXPECT_TRUE(c.report.passed) << c.report.worst_parameter << " " << c.report.max_rel_error;
    }
}

TEST(GateInputs, RatesRawRatioScaledAndPaddingZero) {
    const TractGraph g = fixtures::grid(1, 3);
    const NeighborMap nmap = build_neighbor_map(g, 8);
    const auto names = determinants::for_crime(CrimeType::Violent);
    std::vector<Estimate> values;
    const double mf[] = {0.8, 1.0, 1.2};
    for (std::size_t i = 0; i < 3; ++i) {
        for (const auto& n : names) values.push_back(n == "M/F" ? Estimate{mf[i], 0.1} : Estimate{0.1 * (i + 1), 0.02});
    }
    const DeterminantTable table(CrimeType::Violent, g.city_ids(), names, values);
    const auto maps = build_gate_inputs(nmap, table);
    ASSERT_EQ(maps.size(), 3u);
    const std::size_t K = names.size(), mf_col = 3;
    ASSERT_EQ(names[mf_col], "M/F");
    for (std::size_t i = 0; i < 3; ++i) {
        const Array& m = maps[i];
        ASSERT_EQ(m.shape(), (Shape{kMapRows, K, 2}));
        EXPECT_NEAR(m[(4 * K + 0) * 2], 0.1 * (i + 1), 1e-12);
        EXPECT_NEAR(m[(4 * K + 0) * 2 + 1], 0.02, 1e-12);
        EXPECT_NEAR(m[(4 * K + mf_col) * 2], (mf[i] - 0.8) / 0.4, 1e-12);
        EXPECT_NEAR(m[(4 * K + mf_col) * 2 + 1], 0.1 / 0.4, 1e-12);
        for (std::size_t r = 0; r < kMapRows; ++r) {
            if (!nmap[i].pad_mask[r]) continue;
            for (std::size_t k = 0; k < 2 * K; ++k) EXPECT_EQ(m[r * 2 * K + k], 0.0);
        }
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto v = ModelVariant::make(VariantKind::IFG, 0.3);
    const Model m = Model::create(v, small_arch(), CrimeType::Violent, 5);
    const std::string dir = fixtures::temp_dir("ckpt");
    save_checkpoint(make_checkpoint(m, {{"seed", 5}}), dir + "/a.ckpt");
    const Checkpoint back = load_checkpoint(dir + "/a.ckpt");
    const Model m2 = model_from_checkpoint(back);
    save_checkpoint(make_checkpoint(m2, back.metadata), dir + "/b.ckpt");
    EXPECT_EQ(fixtures::slurp(dir + "/a.ckpt"), fixtures::slurp(dir + "/b.ckpt"));
    EXPECT_EQ(fixtures::slurp(dir + "/a.ckpt").substr(0, 8), "URCKPT1\n");
    EXPECT_EQ(m2.variant().kind, VariantKind::IFG);
    EXPECT_EQ(m2.variant().ifg_weight, 0.3);
    EXPECT_EQ(m2.architecture(), small_arch());
    EXPECT_EQ(back.metadata.at("seed"), 5);
    const FeatureTensor t = features(v, 4, 3);
    EXPECT_EQ(m.forward_true_crimes(t), m2.forward_true_crimes(t));
}

TEST(Checkpoint, GateParametersStoredForEveryVariant) {
    const Model m = Model::create(ModelVariant::make(VariantKind::UU), small_arch(), CrimeType::Property, 5);
    const Checkpoint c = make_checkpoint(m);
    bool has_gate = false;
    for (const auto& p : c.parameters) has_gate |= p.name.starts_with("gate.");
    EXPECT_TRUE(has_gate);
}

TEST(Checkpoint, MissingParameterIsNamed) {
    const Model m = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Property, 5);
    Checkpoint c = make_checkpoint(m);
    std::erase_if(c.parameters, [](const ad::Parameter& p) { return p.name == "gate.fc.bias"; });
    try {
        (void)model_from_checkpoint(c);
        FAIL() << "expected an error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("gate.fc.bias"), std::string::npos);
    }
}

TEST(Checkpoint, MalformedFilesRejected) {
    const Model m = Model::create(ModelVariant::make(VariantKind::TC), small_arch(), CrimeType::Property, 5);
    Checkpoint c = make_checkpoint(m);
    const std::string bytes = serialize_checkpoint(c);
    EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), IoError);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), IoError);
    EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), IoError);

    c.parameters[0].value = Array({1});
    EXPECT_THROW(model_from_checkpoint(c), ShapeError);
    Checkpoint extra = make_checkpoint(m);
    extra.parameters.emplace_back("stray", Array({1}));
    EXPECT_THROW(model_from_checkpoint(extra), ValidationError);
}
