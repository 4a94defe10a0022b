#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck_cases.hpp"
#include "urcrime/autodiff.hpp"

using namespace urcrime;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Array arr(Shape s, std::vector<double> v) { return Array(std::move(s), std::move(v)); }

std::vector<double> vec(const Array& a) { return {a.values().begin(), a.values().end()}; }

} // namespace

TEST(Conv2d, OneByOneIdentityKernelCopiesInput) {
    Tape t;
    std::mt19937_64 rng(3);
    const Array x = gradcheck::random_array({4, 5, 2}, rng);
    Array k({1, 1, 2, 2});
    k[0] = 1.0;  // (0,0,ci=0,co=0)
    k[3] = 1.0;  // (0,0,ci=1,co=1)
    for (auto pad : {ad::Padding::Same, ad::Padding::Valid}) {
        const Var y = ad::conv2d(t.constant(x), t.constant(k), t.constant(Array({2})), pad);
        EXPECT_EQ(y.value(), x);
    }
}

TEST(Conv2d, AllOnesValidKernelGivesWindowSums) {
    Tape t;
    const Array x = arr({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Var y = ad::conv2d(t.constant(x), t.constant(Array({2, 2, 1, 1}, 1.0)), t.constant(Array({1}, 0.5)),
                             ad::Padding::Valid);
    ASSERT_EQ(y.shape(), (Shape{2, 2, 1}));
    EXPECT_EQ(vec(y.value()), (std::vector<double>{12.5, 16.5, 24.5, 28.5}));
}

TEST(Conv2d, SamePaddingKeepsSpatialShapeAndZeroPadsBorder) {
    Tape t;
    const Array x = arr({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Var y = ad::conv2d(t.constant(x), t.constant(Array({3, 3, 1, 1}, 1.0)), t.constant(Array({1})),
                             ad::Padding::Same);
    ASSERT_EQ(y.shape(), (Shape{3, 3, 1}));
    EXPECT_DOUBLE_EQ(y.value()[0], 1 + 2 + 4 + 5);
    EXPECT_DOUBLE_EQ(y.value()[4], 45);
    EXPECT_DOUBLE_EQ(y.value()[8], 5 + 6 + 8 + 9);
}

TEST(Conv2d, BatchedMatchesPerSample) {
    std::mt19937_64 rng(11);
    const Array x = gradcheck::random_array({3, 4, 4, 2}, rng);
    const Array k = gradcheck::random_array({3, 3, 2, 3}, rng);
    const Array b = gradcheck::random_array({3}, rng);
    Tape t;
    const Array batched = ad::conv2d(t.constant(x), t.constant(k), t.constant(b), ad::Padding::Same).value();
    const std::size_t per_in = 4 * 4 * 2, per_out = 4 * 4 * 3;
    for (std::size_t s = 0; s < 3; ++s) {
        Array xs({4, 4, 2});
        std::copy(x.data() + s * per_in, x.data() + (s + 1) * per_in, xs.data());
        const Array single = ad::conv2d(t.constant(xs), t.constant(k), t.constant(b), ad::Padding::Same).value();
        for (std::size_t i = 0; i < per_out; ++i) EXPECT_DOUBLE_EQ(batched[s * per_out + i], single[i]);
    }
}

TEST(Conv2d, ShapeMismatchesAreRejected) {
    Tape t;
    const Var x = t.constant(Array({3, 3, 2}));
    EXPECT_THROW(ad::conv2d(x, t.constant(Array({3, 3, 1, 1})), t.constant(Array({1})), ad::Padding::Same), ShapeError);
    EXPECT_THROW(ad::conv2d(x, t.constant(Array({3, 3, 2, 1})), t.constant(Array({2})), ad::Padding::Same), ShapeError);
    EXPECT_THROW(ad::conv2d(t.constant(Array({3, 3})), t.constant(Array({1, 1, 3, 1})), t.constant(Array({1})),
                            ad::Padding::Same),
                 ShapeError);
    EXPECT_THROW(ad::conv2d(x, t.constant(Array({4, 4, 2, 1})), t.constant(Array({1})), ad::Padding::Valid), ShapeError);
}

TEST(FullyConnected, WorkedExample) {
    Tape t;
    const Var y = ad::fully_connected(t.constant(arr({2}, {1, 1})), t.constant(arr({2, 1}, {2, -1})),
                                      t.constant(arr({1}, {0.5})));
    EXPECT_DOUBLE_EQ(y.value().item(), 1.5);
}

TEST(FullyConnected, IdentityWeightsPassInputThrough) {
    Tape t;
    const Array x = arr({2, 3}, {1, -2, 3, 0.5, 0, -7});
    const Array eye = arr({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Var y = ad::fully_connected(t.constant(x), t.constant(eye), t.constant(Array({3})));
    EXPECT_EQ(y.value(), x);
}

TEST(FullyConnected, ShapeMismatchIsRejected) {
    Tape t;
    EXPECT_THROW(ad::fully_connected(t.constant(Array({3})), t.constant(Array({2, 1})), t.constant(Array({1}))),
                 ShapeError);
    EXPECT_THROW(ad::fully_connected(t.constant(Array({2})), t.constant(Array({2, 1})), t.constant(Array({2}))),
                 ShapeError);
}

TEST(Activations, ReferenceValues) {
    Tape t;
    EXPECT_DOUBLE_EQ(ad::sigmoid(t.constant(Array::scalar(0.0))).value().item(), 0.5);
    EXPECT_NEAR(ad::softplus(t.constant(Array::scalar(0.0))).value().item(), std::log(2.0), 1e-15);
    const double tiny = ad::softplus(t.constant(Array::scalar(-50.0))).value().item();
    EXPECT_GT(tiny, 0.0);
    EXPECT_NEAR(tiny, std::exp(-50.0), 1e-30);
    EXPECT_NEAR(ad::softplus(t.constant(Array::scalar(800.0))).value().item(), 800.0, 1e-9);
    const double s = ad::sigmoid(t.constant(Array::scalar(-800.0))).value().item();
    EXPECT_GE(s, 0.0);
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_EQ(vec(ad::relu(t.constant(arr({3}, {-1, 0, 2}))).value()), (std::vector<double>{0, 0, 2}));
}

TEST(Activations, ReluGradientIsOneOrZero) {
    Parameter p("x", arr({4}, {-2, -0.1, 0.1, 3}));
    Tape t;
    t.backward(ad::sum(ad::relu(t.parameter(p))));
    EXPECT_EQ(vec(p.grad), (std::vector<double>{0, 0, 1, 1}));
}

TEST(Activations, SigmoidGradientAtZeroIsQuarter) {
    Parameter p("x", Array::scalar(0.0));
    Tape t;
    t.backward(ad::sigmoid(t.parameter(p)));
    EXPECT_DOUBLE_EQ(p.grad.item(), 0.25);
}

TEST(Reductions, MseAndSumValues) {
    Tape t;
    const Var x = t.constant(arr({3}, {1, 2, 3}));
    EXPECT_DOUBLE_EQ(ad::sum(x).value().item(), 6.0);
    EXPECT_DOUBLE_EQ(ad::mse(x, arr({3}, {1, 1, 1})).value().item(), 5.0 / 3.0);
    EXPECT_DOUBLE_EQ(ad::weighted_sum(x, arr({3}, {1, 0, -1})).value().item(), -2.0);
}

TEST(Reductions, BinaryOpsRejectShapeMismatch) {
    Tape t;
    EXPECT_THROW(ad::mul(t.constant(Array({2})), t.constant(Array({3}))), ShapeError);
    EXPECT_THROW(ad::add(t.constant(Array({2})), t.constant(Array({3}))), ShapeError);
    EXPECT_THROW(ad::mse(t.constant(Array({2})), Array({3})), ShapeError);
}

TEST(Tape, BackwardNeedsScalarRoot) {
    Parameter p("x", Array({2}, 1.0));
    Tape t;
    EXPECT_THROW(t.backward(ad::relu(t.parameter(p))), ShapeError);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
    Parameter p("x", Array::scalar(3.0));
    Tape t;
    const Var x = t.parameter(p);
    t.backward(ad::add(ad::mul(x, x), ad::scale(x, 4.0)));
    EXPECT_DOUBLE_EQ(p.grad.item(), 2 * 3.0 + 4.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    std::vector<Parameter> ps{Parameter("a", arr({3}, {1, -2, 3}))};
    const Array before = ps[0].value;
    ad::AdamState st;
    for (int i = 0; i < 5; ++i) ad::adam_step(ps, st, {});
    EXPECT_EQ(ps[0].value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<Parameter> ps{Parameter("a", Array::scalar(0.0))};
    ps[0].grad[0] = 1.0;
    ad::AdamState st;
    ad::AdamConfig cfg;
    cfg.lr = 0.1;
    ad::adam_step(ps, st, cfg);
    EXPECT_NEAR(ps[0].value.item(), -0.1, 1e-8);
}

TEST(Adam, NonPositiveLearningRateIsRejected) {
    std::vector<Parameter> ps{Parameter("a", Array::scalar(0.0))};
    ad::AdamState st;
    ad::AdamConfig cfg;
    for (double lr : {0.0, -1e-3, std::nan("")}) {
        cfg.lr = lr;
        EXPECT_THROW(ad::adam_step(ps, st, cfg), ValidationError);
    }
}

TEST(Adam, IdenticalInputsGiveIdenticalTrajectories) {
    auto run = [] {
        std::mt19937_64 rng(42);
        std::vector<Parameter> ps{Parameter("w", gradcheck::random_array({5}, rng))};
        const Array target = gradcheck::random_array({5}, rng);
        ad::AdamState st;
        for (int i = 0; i < 50; ++i) {
            ps[0].zero_grad();
            Tape t;
            t.backward(ad::mse(t.parameter(ps[0]), target));
            ad::adam_step(ps, st, {});
        }
        return ps[0].value;
    };
    EXPECT_EQ(run(), run());
}

TEST(Adam, MinimizesQuadratic) {
    std::vector<Parameter> ps{Parameter("w", arr({2}, {5, -3}))};
    const Array target = arr({2}, {1, 2});
    ad::AdamState st;
    ad::AdamConfig cfg;
    cfg.lr = 0.05;
    for (int i = 0; i < 2000; ++i) {
        ps[0].zero_grad();
        Tape t;
        t.backward(ad::mse(t.parameter(ps[0]), target));
        ad::adam_step(ps, st, cfg);
    }
    EXPECT_NEAR(ps[0].value[0], 1.0, 1e-3);
    EXPECT_NEAR(ps[0].value[1], 2.0, 1e-3);
}

TEST(GradCheck, LinearFunctionIsExact) {
    Parameter p("x", arr({3}, {0.3, -1.2, 2.0}));
    Parameter* ptrs[] = {&p};
    const Array w = arr({3}, {2, -1, 0.5});
    const auto rep = ad::grad_check([&](Tape& t) { return ad::weighted_sum(t.parameter(p), w); }, ptrs, 1e-8);
    EXPECT_TRUE(rep.passed);
    EXPECT_EQ(rep.checked, 3u);
    EXPECT_EQ(p.grad, w);
}

TEST(GradCheck, TwoLayerConvNetwork) {
    std::mt19937_64 rng(5);
    std::vector<Parameter> ps{Parameter("k1", gradcheck::random_array({3, 3, 2, 3}, rng)),
                              Parameter("b1", gradcheck::random_array({3}, rng)),
                              Parameter("k2", gradcheck::random_array({3, 3, 3, 2}, rng)),
                              Parameter("b2", gradcheck::random_array({2}, rng))};
    const Array x = gradcheck::random_array({2, 5, 4, 2}, rng);
    const Array target = gradcheck::random_array({2, 5, 4, 2}, rng);
    std::vector<Parameter*> ptrs;
    for (auto& p : ps) ptrs.push_back(&p);
    const auto rep = ad::grad_check(
        [&](Tape& t) {
            Var h = ad::relu(ad::conv2d(t.constant(x), t.parameter(ps[0]), t.parameter(ps[1]), ad::Padding::Same));
            Var y = ad::conv2d(h, t.parameter(ps[2]), t.parameter(ps[3]), ad::Padding::Same);
            return ad::mse(y, target);
        },
        ptrs, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.worst_parameter << " rel " << rep.max_rel_error;
    EXPECT_GT(rep.checked, 100u);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
    // Doubling op whose backward rule forgets the factor 2.
    auto bad_double = [](Var x) {
        Tape& t = *x.tape;
        Array v = x.value();
        for (double& e : v.values()) e *= 2.0;
        const std::size_t in = x.id;
        return t.push(std::move(v), t.requires_grad(x), [in](Tape& tp, std::size_t self) {
            Array& g = tp.grad(in);
            const Array& up = tp.grad(self);
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += up[k];
        });
    };
    Parameter p("x", arr({2}, {0.5, -0.25}));
    Parameter* ptrs[] = {&p};
    const auto rep = ad::grad_check([&](Tape& t) { return ad::sum(bad_double(t.parameter(p))); }, ptrs, 1e-4);
    EXPECT_FALSE(rep.passed);
    EXPECT_NEAR(rep.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, EveryOpOnRandomShapesAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        for (const auto& c : gradcheck::run_op_cases(seed)) {
            EXPECT_TRUE(c.report.passed) << "seed " << seed << " " << c.name << " rel " << c.report.max_rel_error;
            EXPECT_GT(c.report.checked, 0u) << "seed " << seed << " " << c.name;
        }
    }
}

TEST(GradCheck, FullTcModelAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto c = gradcheck::run_model_case(seed);
        EXPECT_TRUE(c.report.passed) << "seed " << seed << " " << c.report.worst_parameter << " rel "
                                     << c.report.max_rel_error;
    }
}

TEST(Init, HeUniformStaysWithinLimit) {
    std::mt19937_64 rng(9);
    Parameter p("w", Array({1000}));
    ad::he_uniform(p, 18, rng);
    const double limit = std::sqrt(6.0 / 18.0);
    double lo = 0, hi = 0;
    for (double v : p.value.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_GE(lo, -limit);
    EXPECT_LE(hi, limit);
    EXPECT_LT(lo, -0.9 * limit);
    EXPECT_GT(hi, 0.9 * limit);
}
