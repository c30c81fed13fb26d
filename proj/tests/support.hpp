#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hiersev/error.hpp"
#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"
#include "hiersev/rng.hpp"
#include "hiersev/synthdata.hpp"

namespace testsupport {

using namespace hiersev;

/// Code of the hiersev::Error thrown by fn, or nullopt if it returns normally.
template <class F>
std::optional<Errc> error_code_of(F&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

/// Central difference of f along coordinate i of v.
inline double central_diff(std::vector<double>& v, std::size_t i, double step,
                           const std::function<double()>& f) {
    const double keep = v[i];
    v[i] = keep + step;
    const double up = f();
    v[i] = keep - step;
    const double down = f();
    v[i] = keep;
    return (up - down) / (2.0 * step);
}

inline std::vector<double> uniform_vec(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Classifier with every parameter redrawn uniformly from [-1, 1].
inline Classifier random_classifier(Rng& rng, int input_dim, std::vector<int> hidden, int feature_dim,
                                    int n_classes) {
    auto c = make_classifier({input_dim, std::move(hidden), feature_dim, n_classes}, rng.next_u64());
    for (auto view : parameter_views(c))
        for (auto& p : view) p = rng.uniform(-1.0, 1.0);
    return c;
}

inline std::vector<int> random_branching(Rng& rng, int max_len = 3) {
    const int len = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len)));
    std::vector<int> b(len);
    for (auto& f : b) f = 2 + static_cast<int>(rng.below(3));
    return b;
}

/// Every branching list of length 1..3 with factors in {2,3,4} and at most 64 leaves.
inline std::vector<std::vector<int>> all_small_branchings() {
    std::vector<std::vector<int>> out;
    const int factors[] = {2, 3, 4};
    for (int a : factors) {
        out.push_back({a});
        for (int b : factors) {
            out.push_back({a, b});
            for (int c : factors)
                if (a * b * c <= 64) out.push_back({a, b, c});
        }
    }
    return out;
}

/// Brute-force LCA height by walking both parent chains upward.
inline int brute_hdist(const Hierarchy& t, int a, int b) {
    int h = 0;
    while (a != b) {
        a = t.parent_index({h, a});
        b = t.parent_index({h, b});
        ++h;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Extended-precision reference implementations used as oracles. They are
// written directly from the defining formulas, not from the library code.

using ld = long double;

inline std::vector<ld> widen(std::span<const double> v) { return {v.begin(), v.end()}; }

inline std::vector<ld> ref_forward(const Classifier& c, const std::vector<ld>& x) {
    std::vector<ld> a = x;
    for (const auto& L : c.extractor.layers) {
        std::vector<ld> next;
        for (int o = 0; o < L.out; ++o) {
            ld s = L.bias[o];
            for (int i = 0; i < L.in; ++i) s += static_cast<ld>(L.weight[o * L.in + i]) * a[i];
            if (L.activation == Activation::Relu && s < 0) s = 0;
            next.push_back(s);
        }
        a = next;
    }
    std::vector<ld> z;
    for (int k = 0; k < c.head.n_classes; ++k) {
        ld s = c.head.bias[k];
        for (int i = 0; i < c.head.feature_dim; ++i) s += static_cast<ld>(c.head.weight[k * c.head.feature_dim + i]) * a[i];
        z.push_back(s);
    }
    return z;
}

inline ld ref_lse(const std::vector<ld>& v) {
    ld m = v[0];
    for (ld x : v) m = std::max(m, x);
    ld s = 0;
    for (ld x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// -(z_y - log sum_{j in S} exp z_j)
inline ld ref_masked_ce(const std::vector<ld>& z, int y, const std::vector<int>& S) {
    std::vector<ld> sub;
    for (int j : S) sub.push_back(z[static_cast<std::size_t>(j)]);
    return ref_lse(sub) - z[static_cast<std::size_t>(y)];
}

inline ld ref_ce(const std::vector<ld>& z, int y) { return ref_lse(z) - z[static_cast<std::size_t>(y)]; }

inline std::vector<ld> ref_node_logits(const std::vector<ld>& z, int h, const Hierarchy& t, bool exact) {
    std::vector<ld> out;
    for (int j = 0; j < t.level_size(h); ++j) {
        std::vector<ld> sub;
        for (int leaf : t.leaves_under({h, j})) sub.push_back(z[static_cast<std::size_t>(leaf)]);
        out.push_back(exact ? ref_lse(sub) : *std::max_element(sub.begin(), sub.end()));
    }
    return out;
}

inline ld ref_nha(const std::vector<ld>& z, int y, int h, const Hierarchy& t, bool exact) {
    const auto L = ref_node_logits(z, h, t, exact);
    return ref_ce(L, t.ancestor_index(y, h));
}

/// KL(softmax(z) || softmax(w))
inline ld ref_kl(const std::vector<ld>& z, const std::vector<ld>& w) {
    const ld lz = ref_lse(z), lw = ref_lse(w);
    ld s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const ld lp = z[i] - lz, lq = w[i] - lw;
        s += std::exp(lp) * (lp - lq);
    }
    return s;
}

/// Fourth-order central difference in extended precision.
inline ld central_diff_ld(std::vector<ld>& v, std::size_t i, ld step, const std::function<ld()>& f) {
    const ld keep = v[i];
    auto at = [&](ld offset) {
        v[i] = keep + offset;
        return f();
    };
    const ld near = at(step) - at(-step);
    const ld far = at(2 * step) - at(-2 * step);
    const ld r = (8 * near - far) / (12 * step);
    v[i] = keep;
    return r;
}

inline double rel_err_ld(double a, ld b) {
    const ld diff = std::abs(static_cast<ld>(a) - b);
    return static_cast<double>(diff / std::max({std::abs(static_cast<ld>(a)), std::abs(b), static_cast<ld>(1e-12)}));
}

}  // namespace testsupport
