#include "hiersev/netcore.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "hiersev/error.hpp"
#include "hiersev/rng.hpp"
#include "io_util.hpp"

namespace hiersev {

namespace {

void fill_scaled_uniform(std::vector<double>& v, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& w : v) w = rng.uniform(-bound, bound);
}

Dense make_dense(int in, int out, Activation act, Rng& rng) {
    Dense d{in, out, std::vector<double>(static_cast<std::size_t>(in) * out), std::vector<double>(out), act};
    fill_scaled_uniform(d.weight, in, rng);
    fill_scaled_uniform(d.bias, in, rng);
    return d;
}

// out = b + W x, accumulating over inputs in index order.
void affine(std::span<const double> weight, std::span<const double> bias, int in, std::span<const double> x,
            std::vector<double>& out) {
    const auto rows = bias.size();
    out.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* w = weight.data() + r * in;
        double acc = bias[r];
        for (int i = 0; i < in; ++i) acc += w[i] * x[i];
        out[r] = acc;
    }
}

void check_input(const Classifier& c, std::span<const double> x) {
    if (static_cast<int>(x.size()) != c.input_dim()) {
        throw Error(Errc::DimensionMismatch, "input has " + std::to_string(x.size()) + " entries, expected " +
                                                 std::to_string(c.input_dim()));
    }
}

}  // namespace

Classifier make_classifier(const ClassifierShape& shape, std::uint64_t seed) {
    if (shape.input_dim < 1 || shape.n_classes < 1) {
        throw Error(Errc::DimensionMismatch, "classifier needs input_dim >= 1 and n_classes >= 1");
    }
    Rng rng(seed);
    Classifier c;
    c.extractor.input_dim = shape.input_dim;
    int prev = shape.input_dim;
    for (int width : shape.hidden) {
        if (width < 1) throw Error(Errc::DimensionMismatch, "hidden width must be >= 1");
        c.extractor.layers.push_back(make_dense(prev, width, Activation::Relu, rng));
        prev = width;
    }
    if (shape.feature_dim > 0) {
        c.extractor.layers.push_back(make_dense(prev, shape.feature_dim, Activation::Identity, rng));
        prev = shape.feature_dim;
    } else if (!shape.hidden.empty()) {
        throw Error(Errc::DimensionMismatch, "hidden layers require a feature_dim > 0 output layer");
    }
    c.head.n_classes = shape.n_classes;
    c.head.feature_dim = prev;
    c.head.weight.resize(static_cast<std::size_t>(prev) * shape.n_classes);
    c.head.bias.resize(shape.n_classes);
    fill_scaled_uniform(c.head.weight, prev, rng);
    fill_scaled_uniform(c.head.bias, prev, rng);
    return c;
}

double logsumexp(std::span<const double> z) {
    if (z.empty()) throw Error(Errc::DimensionMismatch, "logsumexp of an empty vector");
    double m = -INFINITY;
    for (double v : z) {
        if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "non-finite logit");
        m = std::max(m, v);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> z) {
    const double lse = logsumexp(z);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> z) {
    auto out = log_softmax(z);
    for (auto& v : out) v = std::exp(v);
    return out;
}

int argmax(std::span<const double> z) {
    int best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
        if (z[i] > z[best]) best = static_cast<int>(i);
    return best;
}

ForwardCache forward_cached(const Classifier& c, std::span<const double> x) {
    check_input(c, x);
    ForwardCache cache;
    cache.input.assign(x.begin(), x.end());
    std::span<const double> cur = cache.input;
    for (const auto& layer : c.extractor.layers) {
        auto& pre = cache.pre.emplace_back();
        affine(layer.weight, layer.bias, layer.in, cur, pre);
        auto& post = cache.post.emplace_back(pre);
        if (layer.activation == Activation::Relu)
            for (auto& v : post) v = v > 0.0 ? v : 0.0;
        cur = post;
    }
    affine(c.head.weight, c.head.bias, c.head.feature_dim, cur, cache.logits);
    return cache;
}

std::vector<double> forward(const Classifier& c, std::span<const double> x) {
    return std::move(forward_cached(c, x).logits);
}

Gradients Gradients::zeros_like(const Classifier& c) {
    Gradients g;
    for (const auto& layer : c.extractor.layers) {
        g.tensors.emplace_back(layer.weight.size(), 0.0);
        g.tensors.emplace_back(layer.bias.size(), 0.0);
    }
    g.tensors.emplace_back(c.head.weight.size(), 0.0);
    g.tensors.emplace_back(c.head.bias.size(), 0.0);
    return g;
}

bool Gradients::all_zero() const {
    for (const auto& t : tensors)
        for (double v : t)
            if (v != 0.0) return false;
    return true;
}

std::vector<std::span<double>> parameter_views(Classifier& c) {
    std::vector<std::span<double>> out;
    for (auto& layer : c.extractor.layers) {
        out.emplace_back(layer.weight);
        out.emplace_back(layer.bias);
    }
    out.emplace_back(c.head.weight);
    out.emplace_back(c.head.bias);
    return out;
}

std::vector<std::span<const double>> parameter_views(const Classifier& c) {
    std::vector<std::span<const double>> out;
    for (const auto& layer : c.extractor.layers) {
        out.emplace_back(layer.weight);
        out.emplace_back(layer.bias);
    }
    out.emplace_back(c.head.weight);
    out.emplace_back(c.head.bias);
    return out;
}

std::vector<double> backward(const Classifier& c, const ForwardCache& cache, std::span<const double> dlogits,
                             Gradients* acc, double scale) {
    if (static_cast<int>(dlogits.size()) != c.n_classes()) {
        throw Error(Errc::DimensionMismatch, "logit gradient has " + std::to_string(dlogits.size()) +
                                                 " entries, expected " + std::to_string(c.n_classes()));
    }
    const std::size_t n_layers = c.extractor.layers.size();

    // Head.
    const int m = c.head.feature_dim;
    const auto feats = cache.features();
    std::vector<double> grad(m, 0.0);
    for (int r = 0; r < c.head.n_classes; ++r) {
        const double d = dlogits[r];
        if (d == 0.0) continue;
        const double* w = c.head.weight.data() + static_cast<std::size_t>(r) * m;
        for (int i = 0; i < m; ++i) grad[i] += w[i] * d;
    }
    if (acc) {
        auto& gw = acc->tensors[2 * n_layers];
        auto& gb = acc->tensors[2 * n_layers + 1];
        for (int r = 0; r < c.head.n_classes; ++r) {
            const double d = scale * dlogits[r];
            gb[r] += d;
            double* row = gw.data() + static_cast<std::size_t>(r) * m;
            for (int i = 0; i < m; ++i) row[i] += d * feats[i];
        }
    }

    // Extractor, last layer first.
    for (std::size_t l = n_layers; l-- > 0;) {
        const auto& layer = c.extractor.layers[l];
        std::vector<double> dpre = std::move(grad);
        if (layer.activation == Activation::Relu) {
            const auto& pre = cache.pre[l];
            for (int o = 0; o < layer.out; ++o)
                if (!(pre[o] > 0.0)) dpre[o] = 0.0;
        }
        const std::span<const double> in = l == 0 ? std::span<const double>(cache.input)
                                                  : std::span<const double>(cache.post[l - 1]);
        if (acc) {
            auto& gw = acc->tensors[2 * l];
            auto& gb = acc->tensors[2 * l + 1];
            for (int o = 0; o < layer.out; ++o) {
                const double d = scale * dpre[o];
                gb[o] += d;
                double* row = gw.data() + static_cast<std::size_t>(o) * layer.in;
                for (int i = 0; i < layer.in; ++i) row[i] += d * in[i];
            }
        }
        grad.assign(layer.in, 0.0);
        for (int o = 0; o < layer.out; ++o) {
            const double d = dpre[o];
            if (d == 0.0) continue;
            const double* w = layer.weight.data() + static_cast<std::size_t>(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) grad[i] += w[i] * d;
        }
    }
    return grad;
}

std::vector<double> input_gradient(const Classifier& c, std::span<const double> x, std::span<const double> dlogits) {
    const auto cache = forward_cached(c, x);
    return backward(c, cache, dlogits, nullptr);
}

Gradients param_gradient(const Classifier& c, std::span<const GradientSample> batch) {
    auto g = Gradients::zeros_like(c);
    if (batch.empty()) return g;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
        const auto cache = forward_cached(c, s.x);
        backward(c, cache, s.dlogits, &g, scale);
    }
    return g;
}

AdamState AdamState::for_classifier(const Classifier& c, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (const auto& view : parameter_views(c)) {
        s.m.emplace_back(view.size(), 0.0);
        s.v.emplace_back(view.size(), 0.0);
    }
    return s;
}

void AdamState::reset_from(const Classifier& c, std::size_t first) {
    const auto views = parameter_views(c);
    m.resize(views.size());
    v.resize(views.size());
    for (std::size_t t = first; t < views.size(); ++t) {
        m[t].assign(views[t].size(), 0.0);
        v[t].assign(views[t].size(), 0.0);
    }
}

void adam_step(AdamState& state, std::span<const std::span<double>> params, const Gradients& grads) {
    if (params.size() != grads.tensors.size() || params.size() != state.m.size()) {
        throw Error(Errc::ShapeMismatch, "parameter, gradient and moment tensor counts differ");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size() != grads.tensors[t].size() || params[t].size() != state.m[t].size() ||
            params[t].size() != state.v[t].size()) {
            throw Error(Errc::ShapeMismatch, "tensor " + std::to_string(t) + " shape differs");
        }
    }
    const auto& cfg = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params[t];
        const auto& g = grads.tensors[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void adam_step(AdamState& state, Classifier& c, const Gradients& grads) {
    const auto views = parameter_views(c);
    adam_step(state, views, grads);
}

Classifier resize_head(const Classifier& c, int n_classes, const InitSpec& init) {
    if (n_classes < 1) throw Error(Errc::DimensionMismatch, "head needs at least one class");
    Classifier out;
    out.extractor = c.extractor;
    auto& head = out.head;
    head.n_classes = n_classes;
    head.feature_dim = c.head.feature_dim;
    const auto wsize = static_cast<std::size_t>(n_classes) * head.feature_dim;
    head.weight.assign(wsize, 0.0);
    head.bias.assign(n_classes, 0.0);
    if (const auto* u = std::get_if<ScaledUniformInit>(&init)) {
        Rng rng(u->seed);
        fill_scaled_uniform(head.weight, head.feature_dim, rng);
        fill_scaled_uniform(head.bias, head.feature_dim, rng);
    } else if (const auto* e = std::get_if<ExplicitInit>(&init)) {
        if (e->weight.size() != wsize || e->bias.size() != static_cast<std::size_t>(n_classes)) {
            throw Error(Errc::DimensionMismatch, "explicit head rows do not match " + std::to_string(n_classes) +
                                                     " x " + std::to_string(head.feature_dim));
        }
        head.weight = e->weight;
        head.bias = e->bias;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint JSON

namespace {

const char* activation_tag(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw Error(Errc::ParseError, "unknown activation '" + s + "'");
}

}  // namespace

std::string checkpoint_to_json_text(const Checkpoint& ckpt) {
    const auto& c = ckpt.model;
    nlohmann::json doc;
    doc["input_dim"] = c.extractor.input_dim;
    auto layers = nlohmann::json::array();
    for (const auto& l : c.extractor.layers) {
        layers.push_back({{"in", l.in},
                          {"out", l.out},
                          {"activation", activation_tag(l.activation)},
                          {"weight", l.weight},
                          {"bias", l.bias}});
    }
    doc["layers"] = std::move(layers);
    doc["head"] = {{"n_classes", c.head.n_classes},
                   {"feature_dim", c.head.feature_dim},
                   {"weight", c.head.weight},
                   {"bias", c.head.bias}};
    doc["tree_path"] = ckpt.tree_path;
    doc["height"] = ckpt.height;
    return doc.dump() + "\n";
}

Checkpoint checkpoint_from_json_text(const std::string& text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        Checkpoint ckpt;
        auto& c = ckpt.model;
        c.extractor.input_dim = doc.at("input_dim").get<int>();
        int prev = c.extractor.input_dim;
        for (const auto& l : doc.at("layers")) {
            Dense d;
            d.in = l.at("in").get<int>();
            d.out = l.at("out").get<int>();
            d.activation = parse_activation(l.at("activation").get<std::string>());
            d.weight = l.at("weight").get<std::vector<double>>();
            d.bias = l.at("bias").get<std::vector<double>>();
            if (d.in != prev || d.weight.size() != static_cast<std::size_t>(d.in) * d.out ||
                d.bias.size() != static_cast<std::size_t>(d.out)) {
                throw Error(Errc::DimensionMismatch, "checkpoint layer dimensions do not chain");
            }
            prev = d.out;
            c.extractor.layers.push_back(std::move(d));
        }
        if (!c.extractor.layers.empty() && c.extractor.layers.back().activation != Activation::Identity) {
            throw Error(Errc::ParseError, "final extractor layer must be identity");
        }
        const auto& h = doc.at("head");
        c.head.n_classes = h.at("n_classes").get<int>();
        c.head.feature_dim = h.at("feature_dim").get<int>();
        c.head.weight = h.at("weight").get<std::vector<double>>();
        c.head.bias = h.at("bias").get<std::vector<double>>();
        if (c.head.feature_dim != prev ||
            c.head.weight.size() != static_cast<std::size_t>(c.head.n_classes) * c.head.feature_dim ||
            c.head.bias.size() != static_cast<std::size_t>(c.head.n_classes)) {
            throw Error(Errc::DimensionMismatch, "checkpoint head does not match extractor output");
        }
        ckpt.tree_path = doc.value("tree_path", std::string{});
        ckpt.height = doc.value("height", 0);
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    detail::write_file(path, checkpoint_to_json_text(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_json_text(detail::read_file(path));
}

}  // namespace hiersev
