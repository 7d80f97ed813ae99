#pragma once

// Bias-free (optionally biased) fully connected networks with an exact
// hand-written backward pass.
//
// Layout: samples are rows. Layer l maps (n x h_{l-1}) activations to
// (n x h_l) pre-activations as Z_l = A_{l-1} W_l^T (+ 1 b_l^T), so the weight
// W_l has shape (h_l x h_{l-1}).

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "conslab/numerics.hpp"

namespace conslab {

// sigma(z) = z for z >= 0 and slope * z otherwise. slope 1 is the identity,
// slope 0 is ReLU. Every member of the family is positively 1-homogeneous.
struct Activation {
    enum class Kind { Linear, ReLU, Leaky };
    Kind kind = Kind::ReLU;
    double slope = 0.0;

    static Activation linear() { return {Kind::Linear, 1.0}; }
    static Activation relu() { return {Kind::ReLU, 0.0}; }
    static Activation leaky(double a) {
        if (!(a >= 0.0 && a <= 1.0)) throw InvalidInput("Activation::leaky: slope must lie in [0, 1]");
        return {Kind::Leaky, a};
    }

    double apply(double z) const { return z >= 0.0 ? z : slope * z; }
    // Derivative at exactly 0 takes the negative-side slope (0 for ReLU).
    double derivative(double z) const { return z > 0.0 ? 1.0 : slope; }
    // Whether sign changes of the pre-activation change the local linear map.
    bool piecewise() const { return slope < 1.0; }

    std::string name() const {
        switch (kind) {
            case Kind::Linear: return "linear";
            case Kind::ReLU: return "relu";
            case Kind::Leaky: return "leaky:" + nlohmann::json(slope).dump();
        }
        return "?";
    }

    static Activation parse(const std::string& s) {
        if (s == "linear") return linear();
        if (s == "relu") return relu();
        if (s.rfind("leaky:", 0) == 0) return leaky(std::stod(s.substr(6)));
        throw InvalidInput("unknown activation '" + s + "'");
    }

    friend bool operator==(const Activation&, const Activation&) = default;
};

struct MlpParams {
    std::vector<Matrix> weights;  // weights[l] is h_{l+1} x h_l
    std::vector<Vector> biases;   // empty, or one vector per layer
    std::vector<std::size_t> widths;

    std::size_t layers() const { return weights.size(); }
    bool has_bias() const { return !biases.empty(); }

    std::size_t weight_count() const {
        std::size_t p = 0;
        for (const auto& w : weights) p += w.size();
        return p;
    }

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct ForwardCache {
    Matrix input;                 // n x h_0
    std::vector<Matrix> preacts;  // hidden layers, n x h_l
    std::vector<Matrix> acts;     // sigma(preacts)
    Matrix logits;                // n x C
};

struct LayerGrads {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    std::size_t layers() const { return weights.size(); }
};

inline void validate(const MlpParams& p) {
    if (p.widths.size() != p.weights.size() + 1) throw InvalidInput("MlpParams: widths/weights mismatch");
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        if (p.weights[l].rows() != p.widths[l + 1] || p.weights[l].cols() != p.widths[l])
            throw InvalidInput("MlpParams: layer shapes do not chain");
        if (p.has_bias() && p.biases[l].size() != p.widths[l + 1])
            throw InvalidInput("MlpParams: bias length mismatch");
    }
    if (p.has_bias() && p.biases.size() != p.weights.size())
        throw InvalidInput("MlpParams: bias count mismatch");
}

// Entries of W_l are N(0, 2 / h_{l-1}); biases start at zero.
inline MlpParams init_kaiming_balanced(const std::vector<std::size_t>& widths, std::uint64_t seed,
                                       bool bias = false) {
    if (widths.size() < 3) throw InvalidInput("init_kaiming_balanced: need at least one hidden layer");
    for (auto w : widths)
        if (w == 0) throw InvalidInput("init_kaiming_balanced: widths must be positive");
    MlpParams p;
    p.widths = widths;
    Rng rng(seed, 0x696e6974);  // "init"
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const double std = std::sqrt(2.0 / static_cast<double>(widths[l]));
        p.weights.push_back(gaussian_matrix(rng, widths[l + 1], widths[l], std));
        if (bias) p.biases.emplace_back(widths[l + 1], 0.0);
    }
    return p;
}

namespace detail {

inline Matrix affine(const Matrix& in, const Matrix& w, const Vector* b) {
    Matrix z = matmul_nt(in, w);
    if (b) {
        for (std::size_t i = 0; i < z.rows(); ++i) {
            auto r = z.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += (*b)[j];
        }
    }
    return z;
}

}  // namespace detail

inline ForwardCache forward(const MlpParams& p, const Matrix& x, const Activation& act) {
    if (p.weights.empty()) throw InvalidInput("forward: empty network");
    if (x.cols() != p.weights.front().cols()) throw InvalidInput("forward: input width mismatch");
    ForwardCache cache;
    cache.input = x;
    const std::size_t L = p.layers();
    const Matrix* in = &cache.input;
    for (std::size_t l = 0; l + 1 < L; ++l) {
        cache.preacts.push_back(detail::affine(*in, p.weights[l], p.has_bias() ? &p.biases[l] : nullptr));
        Matrix a = cache.preacts.back();
        for (double& v : a.data()) v = act.apply(v);
        cache.acts.push_back(std::move(a));
        in = &cache.acts.back();
    }
    cache.logits = detail::affine(*in, p.weights[L - 1], p.has_bias() ? &p.biases[L - 1] : nullptr);
    return cache;
}

// Reverse-mode gradients of the scalar loss whose gradient with respect to
// the logits is dlogits.
inline LayerGrads backward(const MlpParams& p, const ForwardCache& cache, const Matrix& dlogits,
                           const Activation& act) {
    if (!dlogits.same_shape(cache.logits)) throw InvalidInput("backward: dlogits shape mismatch");
    const std::size_t L = p.layers();
    LayerGrads g;
    g.weights.resize(L);
    if (p.has_bias()) g.biases.resize(L);

    Matrix delta = dlogits;
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& in = l == 0 ? cache.input : cache.acts[l - 1];
        g.weights[l] = matmul_tn(delta, in);
        if (p.has_bias()) {
            Vector gb(delta.cols(), 0.0);
            for (std::size_t i = 0; i < delta.rows(); ++i) {
                auto r = delta.row(i);
                for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
            }
            g.biases[l] = std::move(gb);
        }
        if (l == 0) break;
        Matrix next = matmul(delta, p.weights[l]);
        const Matrix& z = cache.preacts[l - 1];
        for (std::size_t k = 0; k < next.size(); ++k) next.data()[k] *= act.derivative(z.data()[k]);
        delta = std::move(next);
    }
    return g;
}

// Forward-mode directional derivative of the logits along a weight
// perturbation `dir` (same shapes as the weights).
inline Matrix logit_jvp(const MlpParams& p, const ForwardCache& cache, const std::vector<Matrix>& dir,
                        const Activation& act) {
    const std::size_t L = p.layers();
    if (dir.size() != L) throw InvalidInput("logit_jvp: direction layer count mismatch");
    Matrix dz = matmul_nt(cache.input, dir[0]);
    for (std::size_t l = 1; l < L; ++l) {
        const Matrix& z = cache.preacts[l - 1];
        for (std::size_t k = 0; k < dz.size(); ++k) dz.data()[k] *= act.derivative(z.data()[k]);
        Matrix next = matmul_nt(dz, p.weights[l]);
        next += matmul_nt(cache.acts[l - 1], dir[l]);
        dz = std::move(next);
    }
    return dz;
}

// tr(W_l^T g_l) for every layer.
inline Vector trace_pairing(const MlpParams& p, const LayerGrads& g) {
    if (g.layers() != p.layers()) throw InvalidInput("trace_pairing: layer count mismatch");
    Vector out(p.layers());
    for (std::size_t l = 0; l < p.layers(); ++l) {
        if (!g.weights[l].same_shape(p.weights[l])) throw InvalidInput("trace_pairing: shape mismatch");
        out[l] = dot(p.weights[l].data(), g.weights[l].data());
    }
    return out;
}

// Squared Frobenius norms of the weight gradients (biases excluded).
inline Vector grad_sq_norms(const LayerGrads& g) {
    Vector out(g.layers());
    for (std::size_t l = 0; l < g.layers(); ++l) out[l] = g.weights[l].frobenius_sq();
    return out;
}

// Weights concatenated layer by layer, row-major within each layer.
inline Vector flatten_weights(const std::vector<Matrix>& ws) {
    Vector out;
    for (const auto& w : ws) out.insert(out.end(), w.data().begin(), w.data().end());
    return out;
}

inline std::vector<Matrix> unflatten_like(std::span<const double> flat, const MlpParams& p) {
    if (flat.size() != p.weight_count()) throw InvalidInput("unflatten_like: length mismatch");
    std::vector<Matrix> out;
    std::size_t off = 0;
    for (const auto& w : p.weights) {
        out.emplace_back(w.rows(), w.cols(),
                         std::vector<double>(flat.begin() + off, flat.begin() + off + w.size()));
        off += w.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: {"format":"conslab.params","version":1,"widths":[...],
//   "layers":[{"rows":r,"cols":c,"values":[...row-major...]}...],
//   "biases":[[...]...]}  (biases omitted when absent)
// ---------------------------------------------------------------------------

inline constexpr int kParamsFormatVersion = 1;

inline nlohmann::json params_to_json(const MlpParams& p) {
    nlohmann::json j;
    j["format"] = "conslab.params";
    j["version"] = kParamsFormatVersion;
    j["widths"] = p.widths;
    j["layers"] = nlohmann::json::array();
    for (const auto& w : p.weights)
        j["layers"].push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"values", w.data()}});
    if (p.has_bias()) j["biases"] = p.biases;
    return j;
}

inline MlpParams params_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "conslab.params") throw InvalidInput("params_from_json: not a parameter checkpoint");
    if (j.value("version", 0) != kParamsFormatVersion)
        throw InvalidInput("params_from_json: unsupported checkpoint version");
    MlpParams p;
    p.widths = j.at("widths").get<std::vector<std::size_t>>();
    for (const auto& layer : j.at("layers"))
        p.weights.emplace_back(layer.at("rows").get<std::size_t>(), layer.at("cols").get<std::size_t>(),
                               layer.at("values").get<std::vector<double>>());
    if (j.contains("biases")) p.biases = j.at("biases").get<std::vector<Vector>>();
    validate(p);
    return p;
}

}  // namespace conslab
