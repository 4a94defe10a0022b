#pragma once

// Minimal deterministic reverse-mode differentiation: a tape of dense 64-bit
// arrays with the handful of operations the two convolutional branches need,
// an Adam optimizer and a central-difference gradient checker.
//
// Each forward op appends a node holding its output value and a backward rule.
// Tape::backward() walks the nodes in reverse creation order, so every node's
// gradient is complete before its own rule runs. Parameters are leaves whose
// accumulated gradient is added into Parameter::grad.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "urcrime/array.hpp"
#include "urcrime/error.hpp"

namespace urcrime::ad {

struct Parameter {
    std::string name;
    Array value;
    Array grad;

    Parameter() = default;
    Parameter(std::string n, Array v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() {
        if (grad.shape() != value.shape()) grad = Array(value.shape());
        grad.fill(0.0);
    }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Array& value() const;
    const Shape& shape() const { return value().shape(); }
};

class Tape {
public:
    // Backward rule for node `self`; reads grad(self) and accumulates into inputs.
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Var constant(Array value) { return push(std::move(value), false, nullptr); }

    Var parameter(Parameter& p) {
        Var v = push(p.value, true, nullptr);
        nodes_[v.id].param = &p;
        return v;
    }

    // Appends a node. Ops whose inputs all lack gradients produce a constant.
    Var push(Array value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Array{}, requires_grad, false,
                              requires_grad ? std::move(backward) : Backward{}, nullptr});
        return Var{this, nodes_.size() - 1};
    }

    const Array& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // Gradient buffer of node `id`, allocated as zeros on first use.
    Array& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Array(n.value.shape());
            n.has_grad = true;
        }
        return n.grad;
    }

    void backward(Var root) {
        if (nodes_[root.id].value.size() != 1) {
            throw ShapeError("backward() needs a scalar root, got " + shape_string(nodes_[root.id].value.shape()));
        }
        grad(root.id)[0] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param != nullptr) {
                Parameter& p = *n.param;
                if (p.grad.shape() != p.value.shape()) p.grad = Array(p.value.shape());
                for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

    // Sign pattern of every non-smooth op evaluated on this tape (relu, abs).
    // Central differences are only meaningful when the pattern is unchanged.
    std::vector<std::uint8_t>& kink_signature() { return kinks_; }
    const std::vector<std::uint8_t>& kink_signature() const { return kinks_; }

private:
    struct Node {
        Array value;
        Array grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
    std::vector<std::uint8_t> kinks_;
};

inline const Array& Var::value() const { return tape->value(id); }

// ============================================================================
// Convolution and fully-connected layers
// ============================================================================

enum class Padding { Same, Valid };

// Cross-correlation of x [H,W,Cin] or [B,H,W,Cin] with kernel [kh,kw,Cin,Cout]
// plus bias [Cout]; stride 1.
inline Var conv2d(Var x, Var kernel, Var bias, Padding padding) {
    Tape& tape = *x.tape;
    const Array& xv = x.value();
    const Array& kv = kernel.value();
    const Array& bv = bias.value();
    const bool batched = xv.rank() == 4;
    if (!(xv.rank() == 3 || batched)) throw ShapeError("conv2d input must be [H,W,C] or [B,H,W,C], got " + shape_string(xv.shape()));
    if (kv.rank() != 4) throw ShapeError("conv2d kernel must be [kh,kw,Cin,Cout], got " + shape_string(kv.shape()));
    const std::size_t B = batched ? xv.dim(0) : 1;
    const std::size_t H = xv.dim(batched ? 1 : 0), W = xv.dim(batched ? 2 : 1), Ci = xv.dim(batched ? 3 : 2);
    const std::size_t kh = kv.dim(0), kw = kv.dim(1), Co = kv.dim(3);
    if (kv.dim(2) != Ci) {
        throw ShapeError("conv2d kernel expects " + std::to_string(kv.dim(2)) + " input channels, input has " +
                         std::to_string(Ci));
    }
    if (bv.rank() != 1 || bv.dim(0) != Co) throw ShapeError("conv2d bias must be [" + std::to_string(Co) + "]");
    if (kh == 0 || kw == 0) throw ShapeError("conv2d kernel has an empty spatial extent");
    if (padding == Padding::Valid && (kh > H || kw > W)) {
        throw ShapeError("conv2d valid padding needs kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " <= input " + std::to_string(H) + "x" + std::to_string(W));
    }
    const std::size_t OH = padding == Padding::Same ? H : H - kh + 1;
    const std::size_t OW = padding == Padding::Same ? W : W - kw + 1;
    const std::ptrdiff_t pt = padding == Padding::Same ? static_cast<std::ptrdiff_t>((kh - 1) / 2) : 0;
    const std::ptrdiff_t pl = padding == Padding::Same ? static_cast<std::ptrdiff_t>((kw - 1) / 2) : 0;

    Array out(batched ? Shape{B, OH, OW, Co} : Shape{OH, OW, Co});
    {
        const double* xp = xv.data();
        const double* kp = kv.data();
        double* op = out.data();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    double* o = op + ((b * OH + oh) * OW + ow) * Co;
                    std::copy(bv.data(), bv.data() + Co, o);
                    for (std::size_t dh = 0; dh < kh; ++dh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + dh) - pt;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t dw = 0; dw < kw; ++dw) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + dw) - pl;
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                            const double* xin = xp + ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * Ci;
                            const double* kk = kp + (dh * kw + dw) * Ci * Co;
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const double xval = xin[ci];
                                const double* kr = kk + ci * Co;
                                for (std::size_t co = 0; co < Co; ++co) o[co] += xval * kr[co];
                            }
                        }
                    }
                }
            }
        }
    }

    const bool needs = tape.requires_grad(x) || tape.requires_grad(kernel) || tape.requires_grad(bias);
    const std::size_t xi = x.id, ki = kernel.id, bi = bias.id;
    return tape.push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const double* go_all = t.grad(self).data();
        const double* xp = t.value(xi).data();
        const double* kp = t.value(ki).data();
        double* gx = t.requires_grad(xi) ? t.grad(xi).data() : nullptr;
        double* gk = t.requires_grad(ki) ? t.grad(ki).data() : nullptr;
        double* gb = t.requires_grad(bi) ? t.grad(bi).data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const double* go = go_all + ((b * OH + oh) * OW + ow) * Co;
                    if (gb != nullptr) {
                        for (std::size_t co = 0; co < Co; ++co) gb[co] += go[co];
                    }
                    for (std::size_t dh = 0; dh < kh; ++dh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + dh) - pt;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t dw = 0; dw < kw; ++dw) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + dw) - pl;
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                            const std::size_t xoff = ((b * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)) * Ci;
                            const std::size_t koff = (dh * kw + dw) * Ci * Co;
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const double xval = xp[xoff + ci];
                                const double* kr = kp + koff + ci * Co;
                                if (gk != nullptr) {
                                    double* gkr = gk + koff + ci * Co;
                                    for (std::size_t co = 0; co < Co; ++co) gkr[co] += xval * go[co];
                                }
                                if (gx != nullptr) {
                                    double acc = 0.0;
                                    for (std::size_t co = 0; co < Co; ++co) acc += kr[co] * go[co];
                                    gx[xoff + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// Affine map x [n] or [B,n] -> [m] or [B,m] with weights [n,m] and bias [m].
inline Var fully_connected(Var x, Var weights, Var bias) {
    Tape& tape = *x.tape;
    const Array& xv = x.value();
    const Array& wv = weights.value();
    const Array& bv = bias.value();
    const bool batched = xv.rank() == 2;
    if (!(xv.rank() == 1 || batched)) throw ShapeError("fully_connected input must be [n] or [B,n], got " + shape_string(xv.shape()));
    if (wv.rank() != 2) throw ShapeError("fully_connected weights must be [n,m], got " + shape_string(wv.shape()));
    const std::size_t B = batched ? xv.dim(0) : 1, n = xv.dim(batched ? 1 : 0), m = wv.dim(1);
    if (wv.dim(0) != n) {
        throw ShapeError("fully_connected weights expect " + std::to_string(wv.dim(0)) + " inputs, got " + std::to_string(n));
    }
    if (bv.rank() != 1 || bv.dim(0) != m) throw ShapeError("fully_connected bias must be [" + std::to_string(m) + "]");

    Array out(batched ? Shape{B, m} : Shape{m});
    for (std::size_t b = 0; b < B; ++b) {
        double* o = out.data() + b * m;
        std::copy(bv.data(), bv.data() + m, o);
        const double* xr = xv.data() + b * n;
        for (std::size_t i = 0; i < n; ++i) {
            const double xval = xr[i];
            const double* wr = wv.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += xval * wr[j];
        }
    }
    const bool needs = tape.requires_grad(x) || tape.requires_grad(weights) || tape.requires_grad(bias);
    const std::size_t xi = x.id, wi = weights.id, bi = bias.id;
    return tape.push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const double* go_all = t.grad(self).data();
        const double* xp = t.value(xi).data();
        const double* wp = t.value(wi).data();
        double* gx = t.requires_grad(xi) ? t.grad(xi).data() : nullptr;
        double* gw = t.requires_grad(wi) ? t.grad(wi).data() : nullptr;
        double* gb = t.requires_grad(bi) ? t.grad(bi).data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
            const double* go = go_all + b * m;
            if (gb != nullptr) {
                for (std::size_t j = 0; j < m; ++j) gb[j] += go[j];
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double xval = xp[b * n + i];
                const double* wr = wp + i * m;
                if (gw != nullptr) {
                    double* gwr = gw + i * m;
                    for (std::size_t j = 0; j < m; ++j) gwr[j] += xval * go[j];
                }
                if (gx != nullptr) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) acc += wr[j] * go[j];
                    gx[b * n + i] += acc;
                }
            }
        }
    });
}

// ============================================================================
// Shape and elementwise ops
// ============================================================================

inline Var reshape(Var x, Shape shape) {
    Tape& tape = *x.tape;
    Array out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id;
    return tape.push(std::move(out), tape.requires_grad(x), [xi](Tape& t, std::size_t self) {
        const Array& g = t.grad(self);
        Array& gx = t.grad(xi);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
    });
}

// [B, d1, d2, ...] -> [B, d1*d2*...]
inline Var flatten_batch(Var x) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("flatten_batch needs a batched array");
    return reshape(x, Shape{s[0], shape_size(s) / s[0]});
}

namespace detail {

template <class Forward, class Derivative>
Var unary(Var x, Forward f, Derivative df) {
    Tape& tape = *x.tape;
    const Array& xv = x.value();
    Array out(xv.shape());
    for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
    const std::size_t xi = x.id;
    return tape.push(std::move(out), tape.requires_grad(x), [xi, df](Tape& t, std::size_t self) {
        const Array& g = t.grad(self);
        const Array& xval = t.value(xi);
        const Array& yval = t.value(self);
        Array& gx = t.grad(xi);
        for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * df(xval[k], yval[k]);
    });
}

inline double sigmoid_value(double x) {
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = std::nextafter(1.0, 0.0);
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
    }
    return std::clamp(s, lo, hi);
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

} // namespace detail

inline Var relu(Var x) {
    auto& sig = x.tape->kink_signature();
    for (double v : x.value().values()) sig.push_back(v > 0.0 ? 1 : 0);
    return detail::unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// Range strictly inside (0, 1), also where exp() saturates.
inline Var sigmoid(Var x) {
    return detail::unary(
        x, [](double v) { return detail::sigmoid_value(v); }, [](double, double y) { return y * (1.0 - y); });
}

// log(1 + e^x), evaluated without overflow; strictly positive.
inline Var softplus(Var x) {
    return detail::unary(
        x, [](double v) { return detail::softplus_value(v); },
        [](double v, double) { return detail::sigmoid_value(v); });
}

inline Var abs(Var x) {
    auto& sig = x.tape->kink_signature();
    for (double v : x.value().values()) sig.push_back(v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
    return detail::unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var scale(Var x, double c) {
    return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

inline Var mul(Var a, Var b) {
    Tape& tape = *a.tape;
    const Array& av = a.value();
    const Array& bv = b.value();
    require_same_shape(av, bv, "mul");
    Array out(av.shape());
    for (std::size_t k = 0; k < av.size(); ++k) out[k] = av[k] * bv[k];
    const std::size_t ai = a.id, bi = b.id;
    return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b), [ai, bi](Tape& t, std::size_t self) {
        const Array& g = t.grad(self);
        if (t.requires_grad(ai)) {
            const Array& bval = t.value(bi);
            Array& ga = t.grad(ai);
            for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * bval[k];
        }
        if (t.requires_grad(bi)) {
            const Array& aval = t.value(ai);
            Array& gb = t.grad(bi);
            for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * aval[k];
        }
    });
}

inline Var add(Var a, Var b, double b_sign = 1.0) {
    Tape& tape = *a.tape;
    const Array& av = a.value();
    const Array& bv = b.value();
    require_same_shape(av, bv, "add");
    Array out(av.shape());
    for (std::size_t k = 0; k < av.size(); ++k) out[k] = av[k] + b_sign * bv[k];
    const std::size_t ai = a.id, bi = b.id;
    return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                     [ai, bi, b_sign](Tape& t, std::size_t self) {
                         const Array& g = t.grad(self);
                         if (t.requires_grad(ai)) {
                             Array& ga = t.grad(ai);
                             for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
                         }
                         if (t.requires_grad(bi)) {
                             Array& gb = t.grad(bi);
                             for (std::size_t k = 0; k < g.size(); ++k) gb[k] += b_sign * g[k];
                         }
                     });
}

inline Var sub(Var a, Var b) { return add(a, b, -1.0); }

// Scalar sum_k w_k x_k for a constant weight array of x's shape.
inline Var weighted_sum(Var x, const Array& weights) {
    Tape& tape = *x.tape;
    const Array& xv = x.value();
    require_same_shape(xv, weights, "weighted_sum");
    double s = 0.0;
    for (std::size_t k = 0; k < xv.size(); ++k) s += weights[k] * xv[k];
    const std::size_t xi = x.id;
    return tape.push(Array::scalar(s), tape.requires_grad(x), [xi, weights](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Array& gx = t.grad(xi);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g * weights[k];
    });
}

inline Var sum(Var x) { return weighted_sum(x, Array(x.shape(), 1.0)); }

// Mean squared error between x and a constant target of the same shape.
inline Var mse(Var x, const Array& target) {
    Tape& tape = *x.tape;
    const Array& xv = x.value();
    require_same_shape(xv, target, "mse");
    if (xv.size() == 0) throw ShapeError("mse of an empty array");
    const double inv_n = 1.0 / static_cast<double>(xv.size());
    double s = 0.0;
    for (std::size_t k = 0; k < xv.size(); ++k) {
        const double d = xv[k] - target[k];
        s += d * d;
    }
    const std::size_t xi = x.id;
    return tape.push(Array::scalar(s * inv_n), tape.requires_grad(x), [xi, target, inv_n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const Array& xval = t.value(xi);
        Array& gx = t.grad(xi);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g * 2.0 * (xval[k] - target[k]) * inv_n;
    });
}

// ============================================================================
// Initialization and optimization
// ============================================================================

// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw; identical
// across standard library implementations.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline void he_uniform(Parameter& p, std::size_t fan_in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (double& v : p.value.values()) v = (2.0 * uniform01(rng) - 1.0) * limit;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<Array> m;
    std::vector<Array> v;
    std::uint64_t step = 0;
};

// One Adam update of every parameter from its accumulated gradient.
inline void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ValidationError("Adam learning rate must be positive");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("Adam state does not match the parameter list");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        Array& m = state.m[i];
        Array& v = state.v[i];
        require_same_shape(p.grad, p.value, "adam_step");
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p.value[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

// ============================================================================
// Gradient checking
// ============================================================================

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_nonsmooth = 0;  // perturbation crossed a relu/abs kink
    bool passed = true;
};

using ScalarFn = std::function<Var(Tape&)>;

// Compares reverse-mode gradients with central differences on every element
// of every parameter. Relative error is |a - n| / max(|a|, |n|, floor); the
// floor keeps vanishing gradients from amplifying round-off.
inline GradCheckReport grad_check(const ScalarFn& fn, std::span<Parameter* const> params, double tolerance,
                                  double step = 1e-5, double floor = 1e-6) {
    for (Parameter* p : params) p->zero_grad();
    std::vector<std::uint8_t> base_kinks;
    {
        Tape tape;
        Var out = fn(tape);
        tape.backward(out);
        base_kinks = tape.kink_signature();
    }
    auto eval = [&](std::vector<std::uint8_t>& kinks) {
        Tape tape;
        const double v = fn(tape).value().item();
        kinks = tape.kink_signature();
        return v;
    };

    GradCheckReport report;
    std::vector<std::uint8_t> kp, km;
    for (Parameter* p : params) {
        for (std::size_t k = 0; k < p->value.size(); ++k) {
            const double orig = p->value[k];
            p->value[k] = orig + step;
            const double fp = eval(kp);
            p->value[k] = orig - step;
            const double fm = eval(km);
            p->value[k] = orig;
            if (kp != base_kinks || km != base_kinks) {
                ++report.skipped_nonsmooth;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = p->grad[k];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.checked;
            const bool worse = std::isnan(rel) || rel > report.max_rel_error;
            if (!std::isnan(report.max_rel_error) && worse) {
                report.max_rel_error = rel;
                report.worst_parameter = p->name;
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance && std::isfinite(report.max_rel_error);
    return report;
}

} // namespace urcrime::ad
