#pragma once

// The under-reporting-aware predictor: a neighbor-convolution branch that
// estimates true crimes y >= 0 and a convolutional gate over census
// determinants that estimates a static reporting rate pi in (0, 1). During
// training the model is fit to reported crimes through z = y * pi; hotspots
// are derived from y alone.
//
// Variants:
//   UU    crime + mobility + day-of-week, no gate (z = y)
//   UU_C  crime + day-of-week only, no gate
//   IFG   as UU, trained with the individual fairness gap penalty
//   TC    as UU, with the reporting-rate gate

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "urcrime/autodiff.hpp"
#include "urcrime/geo_features.hpp"
#include "urcrime/ingest.hpp"

namespace urcrime {

// ============================================================================
// Variants and architecture
// ============================================================================

enum class VariantKind { UU, UU_C, IFG, TC };

inline std::string_view variant_name(VariantKind k) {
    switch (k) {
        case VariantKind::UU: return "UU";
        case VariantKind::UU_C: return "UU_C";
        case VariantKind::IFG: return "IFG";
        case VariantKind::TC: return "TC";
    }
    return "?";
}

inline VariantKind parse_variant(std::string_view s) {
    if (s == "UU") return VariantKind::UU;
    if (s == "UU_C" || s == "UU(C)") return VariantKind::UU_C;
    if (s == "IFG") return VariantKind::IFG;
    if (s == "TC") return VariantKind::TC;
    throw ValidationError("unknown model variant '" + std::string(s) + "' (expected UU|UU_C|IFG|TC)");
}

struct ModelVariant {
    VariantKind kind = VariantKind::UU;
    std::vector<std::string> channels;
    bool gate_enabled = false;
    double ifg_weight = 0.0;  // lambda, IFG only

    static ModelVariant make(VariantKind kind, double ifg_weight = 0.0) {
        ModelVariant v;
        v.kind = kind;
        v.gate_enabled = kind == VariantKind::TC;
        v.ifg_weight = kind == VariantKind::IFG ? ifg_weight : 0.0;
        v.channels.emplace_back(channels::kCrime);
        if (kind != VariantKind::UU_C) {
            for (auto m : channels::kMobility) v.channels.emplace_back(m);
        }
        for (auto d : channels::kDayOfWeek) v.channels.emplace_back(d);
        if (!(v.ifg_weight >= 0.0)) throw ValidationError("IFG weight must be nonnegative");
        return v;
    }

    std::string_view name() const { return variant_name(kind); }
};

struct Architecture {
    std::size_t lookback = 14;
    std::size_t predictor_blocks = 2;
    std::size_t predictor_channels = 16;
    std::size_t gate_blocks = 3;
    std::size_t gate_channels = 16;
    std::size_t kernel = 3;

    bool operator==(const Architecture&) const = default;
};

// ============================================================================
// Gate inputs
// ============================================================================

// Per in-city tract, a [9, K, 2] map of (estimate, margin of error) for the K
// determinants of the tract and its neighbors, laid out like the feature maps.
// Rates enter raw; M/F is min-max scaled over the city and its margin of
// error divided by the same range.
inline std::vector<Array> build_gate_inputs(const NeighborMap& nmap, const DeterminantTable& table) {
    const std::size_t n = table.tract_ids().size(), K = table.determinant_count();
    if (nmap.size() != n) throw ShapeError("neighbor map and determinant table cover different tract sets");
    std::vector<double> shift(K, 0.0), scale(K, 1.0);
    for (std::size_t j = 0; j < K; ++j) {
        if (determinants::is_rate(table.names()[j]) || n == 0) continue;
        double lo = table.at(0, j).estimate, hi = lo;
        for (std::size_t k = 1; k < n; ++k) {
            lo = std::min(lo, table.at(k, j).estimate);
            hi = std::max(hi, table.at(k, j).estimate);
        }
        shift[j] = lo;
        scale[j] = hi > lo ? hi - lo : 1.0;
    }
    std::vector<Array> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Array map(Shape{kMapRows, K, 2});
        const NeighborSet& set = nmap[i];
        for (std::size_t r = 0; r < kMapRows; ++r) {
            if (!set.rows[r]) continue;
            for (std::size_t j = 0; j < K; ++j) {
                const Estimate& e = table.at(*set.rows[r], j);
                map[(r * K + j) * 2 + 0] = (e.estimate - shift[j]) / scale[j];
                map[(r * K + j) * 2 + 1] = e.moe / scale[j];
            }
        }
        out.push_back(std::move(map));
    }
    return out;
}

// Stacks same-shaped arrays along a new leading batch axis.
inline Array stack(std::span<const Array* const> items) {
    if (items.empty()) throw ShapeError("cannot stack an empty batch");
    Shape shape{items.size()};
    for (std::size_t d : items[0]->shape()) shape.push_back(d);
    Array out(shape);
    const std::size_t each = items[0]->size();
    for (std::size_t b = 0; b < items.size(); ++b) {
        if (items[b]->shape() != items[0]->shape()) throw ShapeError("cannot stack arrays of different shapes");
        std::copy(items[b]->data(), items[b]->data() + each, out.data() + b * each);
    }
    return out;
}

// ============================================================================
// Model
// ============================================================================

struct Prediction {
    std::string tract_id;
    Date day;
    double y = 0.0;   // true crimes
    double pi = 1.0;  // reporting rate
    double z = 0.0;   // reported crimes, y * pi
};

class Model {
public:
    // Fresh parameters: He-uniform weights, zero biases. Both branches are
    // always allocated (predictor first) so that every variant consumes the
    // seeded random stream identically.
    static Model create(const ModelVariant& variant, const Architecture& arch, CrimeType crime_type,
                        std::uint64_t seed) {
        if (arch.lookback == 0 || arch.predictor_blocks == 0 || arch.predictor_channels == 0 ||
            arch.gate_channels == 0 || arch.kernel == 0) {
            throw ValidationError("architecture sizes must be positive");
        }
        Model m;
        m.variant_ = variant;
        m.arch_ = arch;
        m.crime_type_ = crime_type;
        m.determinants_ = determinants::for_crime(crime_type).size();
        std::mt19937_64 rng(seed);
        const std::size_t k = arch.kernel;

        std::size_t cin = variant.channels.size();
        for (std::size_t b = 0; b < arch.predictor_blocks; ++b) {
            const std::string p = "predictor.conv" + std::to_string(b);
            m.add(p + ".kernel", Shape{k, k, cin, arch.predictor_channels}, k * k * cin, rng);
            m.add(p + ".bias", Shape{arch.predictor_channels}, 0, rng);
            cin = arch.predictor_channels;
        }
        const std::size_t flat_p = kMapRows * arch.lookback * arch.predictor_channels;
        m.add("predictor.fc.weight", Shape{flat_p, 1}, flat_p, rng);
        m.add("predictor.fc.bias", Shape{1}, 0, rng);

        cin = 2;
        for (std::size_t b = 0; b < arch.gate_blocks; ++b) {
            const std::string p = "gate.conv" + std::to_string(b);
            m.add(p + ".kernel", Shape{k, k, cin, arch.gate_channels}, k * k * cin, rng);
            m.add(p + ".bias", Shape{arch.gate_channels}, 0, rng);
            cin = arch.gate_channels;
        }
        const std::size_t flat_g = kMapRows * m.determinants_ * (arch.gate_blocks ? arch.gate_channels : 2);
        m.add("gate.fc.weight", Shape{flat_g, 1}, flat_g, rng);
        m.add("gate.fc.bias", Shape{1}, 0, rng);
        return m;
    }

    const ModelVariant& variant() const { return variant_; }
    const Architecture& architecture() const { return arch_; }
    CrimeType crime_type() const { return crime_type_; }
    std::size_t determinant_count() const { return determinants_; }

    std::vector<ad::Parameter>& parameters() { return params_; }
    const std::vector<ad::Parameter>& parameters() const { return params_; }

    ad::Parameter& parameter(std::string_view name) { return params_[index_of(name)]; }
    const ad::Parameter& parameter(std::string_view name) const { return params_[index_of(name)]; }

    std::vector<ad::Parameter*> parameter_pointers(std::string_view prefix = "") {
        std::vector<ad::Parameter*> out;
        for (auto& p : params_) {
            if (p.name.starts_with(prefix)) out.push_back(&p);
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // ---- Differentiable forward passes (parameters bound as tape leaves) ----

    // features: [B, 9, T, C] -> y: [B]
    ad::Var true_crimes(ad::Tape& tape, const Array& features) {
        return predictor_graph(tape, features, [&](std::string_view n) { return tape.parameter(parameter(n)); });
    }

    // gate_inputs: [B, 9, K, 2] -> pi: [B]
    ad::Var reporting_rate(ad::Tape& tape, const Array& gate_inputs) {
        return gate_graph(tape, gate_inputs, [&](std::string_view n) { return tape.parameter(parameter(n)); });
    }

    // z = y * pi for TC, z = y otherwise.
    ad::Var reported(ad::Tape& tape, const Array& features, const Array* gate_inputs) {
        ad::Var y = true_crimes(tape, features);
        if (!variant_.gate_enabled) return y;
        if (gate_inputs == nullptr) throw ValidationError("TC model needs gate inputs");
        return ad::mul(y, reporting_rate(tape, *gate_inputs));
    }

    // ---- Inference (parameters bound as constants) ----

    std::vector<double> predict_true_crimes(const Array& features) const {
        ad::Tape tape;
        auto v = predictor_graph(tape, features, [&](std::string_view n) { return tape.constant(parameter(n).value); });
        return {v.value().values().begin(), v.value().values().end()};
    }

    std::vector<double> predict_reporting_rate(const Array& gate_inputs) const {
        ad::Tape tape;
        auto v = gate_graph(tape, gate_inputs, [&](std::string_view n) { return tape.constant(parameter(n).value); });
        return {v.value().values().begin(), v.value().values().end()};
    }

    double forward_true_crimes(const FeatureTensor& t) const {
        check_channels(t);
        return predict_true_crimes(t.values.reshaped(batch_shape(t.values.shape())))[0];
    }

    double forward_reporting_rate(const Array& gate_input) const {
        return predict_reporting_rate(gate_input.reshaped(batch_shape(gate_input.shape())))[0];
    }

    Prediction forward_reported(const FeatureTensor& t, const Array* gate_input) const {
        Prediction p{t.target_tract, t.target_day, forward_true_crimes(t), 1.0, 0.0};
        if (variant_.gate_enabled) {
            if (gate_input == nullptr) throw ValidationError("TC model needs gate inputs");
            p.pi = forward_reporting_rate(*gate_input);
        }
        p.z = p.y * p.pi;
        return p;
    }

private:
    void add(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
        ad::Parameter p(std::move(name), Array(std::move(shape)));
        if (fan_in > 0) ad::he_uniform(p, fan_in, rng);
        params_.push_back(std::move(p));
    }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return i;
        }
        throw ValidationError("model has no parameter '" + std::string(name) + "'");
    }

    static Shape batch_shape(const Shape& s) {
        Shape out{1};
        out.insert(out.end(), s.begin(), s.end());
        return out;
    }

    void check_channels(const FeatureTensor& t) const {
        if (t.channel_names != variant_.channels) {
            throw ValidationError("feature channels do not match the " + std::string(variant_.name()) +
                                  " channel list");
        }
        if (t.values.dim(1) != arch_.lookback) {
            throw ValidationError("feature look-back " + std::to_string(t.values.dim(1)) + " differs from model's " +
                                  std::to_string(arch_.lookback));
        }
    }

    template <class Bind>
    ad::Var predictor_graph(ad::Tape& tape, const Array& features, Bind&& bind) const {
        const Shape& s = features.shape();
        if (s.size() != 4 || s[1] != kMapRows || s[2] != arch_.lookback || s[3] != variant_.channels.size()) {
            throw ShapeError("predictor expects [B,9," + std::to_string(arch_.lookback) + "," +
                             std::to_string(variant_.channels.size()) + "] features, got " + shape_string(s));
        }
        ad::Var h = tape.constant(features);
        for (std::size_t b = 0; b < arch_.predictor_blocks; ++b) {
            const std::string p = "predictor.conv" + std::to_string(b);
            h = ad::relu(ad::conv2d(h, bind(p + ".kernel"), bind(p + ".bias"), ad::Padding::Same));
        }
        h = ad::fully_connected(ad::flatten_batch(h), bind("predictor.fc.weight"), bind("predictor.fc.bias"));
        return ad::softplus(ad::reshape(h, Shape{s[0]}));
    }

    template <class Bind>
    ad::Var gate_graph(ad::Tape& tape, const Array& gate_inputs, Bind&& bind) const {
        const Shape& s = gate_inputs.shape();
        if (s.size() != 4 || s[1] != kMapRows || s[2] != determinants_ || s[3] != 2) {
            throw ShapeError("gate expects [B,9," + std::to_string(determinants_) + ",2] determinant maps, got " +
                             shape_string(s));
        }
        ad::Var h = tape.constant(gate_inputs);
        for (std::size_t b = 0; b < arch_.gate_blocks; ++b) {
            const std::string p = "gate.conv" + std::to_string(b);
            h = ad::relu(ad::conv2d(h, bind(p + ".kernel"), bind(p + ".bias"), ad::Padding::Same));
        }
        h = ad::fully_connected(ad::flatten_batch(h), bind("gate.fc.weight"), bind("gate.fc.bias"));
        return ad::sigmoid(ad::reshape(h, Shape{s[0]}));
    }

    ModelVariant variant_;
    Architecture arch_;
    CrimeType crime_type_ = CrimeType::Property;
    std::size_t determinants_ = 0;
    std::vector<ad::Parameter> params_;
};

// ============================================================================
// Checkpoints
// ============================================================================
//
// Binary container, all integers little-endian:
//   magic    "URCKPT1\n"
//   u64      metadata length, followed by that many bytes of UTF-8 JSON
//   u64      array count
//   per array: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 values[prod(dims)] (IEEE-754 bit patterns)

struct Checkpoint {
    std::vector<ad::Parameter> parameters;
    nlohmann::json metadata;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}
    std::uint64_t u64() { return read_int<std::uint64_t>(8); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read_int<std::uint64_t>(4)); }
    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    template <class T>
    T read_int(int width) {
        auto s = take(static_cast<std::size_t>(width));
        T v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<T>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)])) << (8 * i);
        return v;
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline constexpr std::string_view kCheckpointMagic{"URCKPT1\n"};

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic);
    const std::string meta = ckpt.metadata.dump();
    detail::put_u64(out, meta.size());
    out += meta;
    detail::put_u64(out, ckpt.parameters.size());
    for (const auto& p : ckpt.parameters) {
        detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) detail::put_u64(out, d);
        for (double v : p.value.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    detail::Reader in(bytes);
    if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) throw IoError("not a checkpoint file (bad magic)");
    Checkpoint ckpt;
    const auto meta_len = in.u64();
    try {
        ckpt.metadata = nlohmann::json::parse(in.take(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const auto count = in.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name(in.take(in.u32()));
        Shape shape(in.u32());
        for (auto& d : shape) d = in.u64();
        Array value(shape);
        for (double& v : value.values()) v = std::bit_cast<double>(in.u64());
        ckpt.parameters.emplace_back(std::move(name), std::move(value));
    }
    if (!in.done()) throw IoError("trailing bytes after checkpoint arrays");
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    csv::write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

inline nlohmann::json to_json(const Architecture& a) {
    return {{"lookback", a.lookback},          {"predictor_blocks", a.predictor_blocks},
            {"predictor_channels", a.predictor_channels}, {"gate_blocks", a.gate_blocks},
            {"gate_channels", a.gate_channels}, {"kernel", a.kernel}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
    Architecture a;
    a.lookback = j.at("lookback").get<std::size_t>();
    a.predictor_blocks = j.at("predictor_blocks").get<std::size_t>();
    a.predictor_channels = j.at("predictor_channels").get<std::size_t>();
    a.gate_blocks = j.at("gate_blocks").get<std::size_t>();
    a.gate_channels = j.at("gate_channels").get<std::size_t>();
    a.kernel = j.at("kernel").get<std::size_t>();
    return a;
}

inline nlohmann::json to_json(const Normalizer& n) {
    nlohmann::json j;
    j["channels"] = n.channels();
    std::vector<double> mean, scale;
    std::vector<bool> pass;
    for (const auto& s : n.stats()) {
        mean.push_back(s.mean);
        scale.push_back(s.scale);
        pass.push_back(s.passthrough);
    }
    j["mean"] = mean;
    j["scale"] = scale;
    j["passthrough"] = pass;
    return j;
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
    const auto channels = j.at("channels").get<std::vector<std::string>>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    const auto pass = j.at("passthrough").get<std::vector<bool>>();
    if (mean.size() != channels.size() || scale.size() != channels.size() || pass.size() != channels.size()) {
        throw IoError("normalizer statistics do not match its channel list");
    }
    std::vector<ChannelStats> stats;
    for (std::size_t c = 0; c < channels.size(); ++c) stats.push_back({mean[c], scale[c], pass[c]});
    return Normalizer(channels, std::move(stats));
}

// Parameters plus the metadata needed to rebuild the model.
inline Checkpoint make_checkpoint(const Model& model, nlohmann::json extra = nlohmann::json::object()) {
    Checkpoint c;
    for (const auto& p : model.parameters()) c.parameters.emplace_back(p.name, p.value);
    c.metadata = std::move(extra);
    c.metadata["format"] = "urcrime-checkpoint/1";
    c.metadata["variant"] = std::string(model.variant().name());
    c.metadata["ifg_weight"] = model.variant().ifg_weight;
    c.metadata["crime_type"] = std::string(crime_type_name(model.crime_type()));
    c.metadata["channels"] = model.variant().channels;
    c.metadata["architecture"] = to_json(model.architecture());
    return c;
}

// Rebuilds a model; every parameter the architecture needs must be present
// with the expected shape.
inline Model model_from_checkpoint(const Checkpoint& ckpt) {
    const auto& meta = ckpt.metadata;
    Model model;
    try {
        const auto variant = ModelVariant::make(parse_variant(meta.at("variant").get<std::string>()),
                                                meta.value("ifg_weight", 0.0));
        model = Model::create(variant, architecture_from_json(meta.at("architecture")),
                              parse_crime_type(meta.at("crime_type").get<std::string>()), 0);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    for (auto& p : model.parameters()) {
        const ad::Parameter* found = nullptr;
        for (const auto& q : ckpt.parameters) {
            if (q.name == p.name) found = &q;
        }
        if (found == nullptr) throw ValidationError("checkpoint is missing parameter '" + p.name + "'");
        if (found->value.shape() != p.value.shape()) {
            throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_string(found->value.shape()) +
                             ", expected " + shape_string(p.value.shape()));
        }
        p.value = found->value;
        p.zero_grad();
    }
    if (ckpt.parameters.size() != model.parameters().size()) {
        throw ValidationError("checkpoint holds parameters the architecture does not use");
    }
    return model;
}

} // namespace urcrime
