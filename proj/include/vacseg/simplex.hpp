#pragma once

// Gibbs simplex geometry: the tangent projection T, the correction that keeps
// subspace updates inside the simplex, and the Euclidean simplex projection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vacseg {

inline constexpr std::size_t max_components = 32;

/// Nodal coefficients of an N-component order parameter, node-major:
/// value(node, i) = values[node * N + i].
class PhaseField {
public:
    PhaseField() = default;
    PhaseField(std::size_t nodes, std::size_t components, double fill = 0.0)
        : nodes_(nodes), components_(components), values_(nodes * components, fill) {}

    std::size_t nodes() const { return nodes_; }
    std::size_t components() const { return components_; }

    double& operator()(std::size_t node, std::size_t i) { return values_[node * components_ + i]; }
    double operator()(std::size_t node, std::size_t i) const { return values_[node * components_ + i]; }

    std::span<double> at(std::size_t node) { return {values_.data() + node * components_, components_}; }
    std::span<const double> at(std::size_t node) const { return {values_.data() + node * components_, components_}; }

    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    /// Component i as a contiguous nodal vector.
    std::vector<double> component(std::size_t i) const {
        std::vector<double> out(nodes_);
        for (std::size_t n = 0; n < nodes_; ++n) out[n] = values_[n * components_ + i];
        return out;
    }

    friend bool operator==(const PhaseField&, const PhaseField&) = default;

private:
    std::size_t nodes_ = 0;
    std::size_t components_ = 0;
    std::vector<double> values_;
};

/// Worst deviation from the simplex over all nodes.
struct AdmissibilityReport {
    double max_sum_error = 0.0;   // max |sum_i u_i - 1|
    double min_value = 0.0;
    double max_value = 0.0;

    bool admissible(double tol = 1e-12) const {
        return max_sum_error <= tol && min_value >= -tol && max_value <= 1.0 + tol;
    }
};

inline AdmissibilityReport check_admissibility(const PhaseField& u) {
    AdmissibilityReport r;
    r.min_value = std::numeric_limits<double>::infinity();
    r.max_value = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        double s = 0.0;
        for (double v : u.at(n)) {
            s += v;
            r.min_value = std::min(r.min_value, v);
            r.max_value = std::max(r.max_value, v);
        }
        r.max_sum_error = std::max(r.max_sum_error, std::abs(s - 1.0));
    }
    if (u.nodes() == 0) r.min_value = r.max_value = 0.0;
    return r;
}

/// In-place Tx = x - mean(x) 1.
inline void project_T_inplace(std::span<double> x) {
    if (x.size() < 2) throw std::invalid_argument("projection T needs at least 2 components");
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    for (double& v : x) v -= mean;
}

inline std::vector<double> project_T(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    project_T_inplace(out);
    return out;
}

/// Smallest admissible value of each alpha_i such that u_i + alpha_i p stays
/// nonnegative on every affected node. Values are node-major (k x N).
inline void gibbs_lower_bounds(std::span<const double> u_affected, std::span<const double> coefficient,
                               std::span<double> lower) {
    const std::size_t N = lower.size();
    std::fill(lower.begin(), lower.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < coefficient.size(); ++k) {
        const double inv = 1.0 / coefficient[k];
        const double* row = u_affected.data() + k * N;
        for (std::size_t i = 0; i < N; ++i) lower[i] = std::max(lower[i], -row[i] * inv);
    }
}

struct GibbsOutcome {
    int passes = 0;        // correction passes that found a violation
    bool skipped = false;  // no admissible redistribution; alpha zeroed
};

namespace detail {

// Fixed > 0 fixes the component count at compile time; 0 reads it from n.
template <std::size_t Fixed>
inline GibbsOutcome correct_alpha_n(double* alpha, const double* lower, std::size_t n) {
    const std::size_t N = Fixed ? Fixed : n;
    std::array<bool, Fixed ? Fixed : max_components> free{};
    std::array<std::size_t, Fixed ? Fixed : max_components> violating{};
    std::fill_n(free.begin(), N, true);
    GibbsOutcome out;
    for (;;) {
        std::size_t nq = 0;
        for (std::size_t i = 0; i < N; ++i)
            if (free[i] && alpha[i] < lower[i]) violating[nq++] = i;
        if (nq == 0) break;
        ++out.passes;
        for (std::size_t q = 0; q < nq; ++q) free[violating[q]] = false;
        std::size_t k = 0;
        for (std::size_t i = 0; i < N; ++i) k += free[i] ? 1 : 0;
        if (k == 0) {
            std::fill_n(alpha, N, 0.0);
            out.skipped = true;
            return out;
        }
        for (std::size_t q = 0; q < nq; ++q) {
            const std::size_t i = violating[q];
            const double beta = lower[i] - alpha[i];
            alpha[i] = lower[i];
            const double share = beta / static_cast<double>(k);
            for (std::size_t j = 0; j < N; ++j)
                if (free[j]) alpha[j] -= share;
        }
        if (k == 1) {
            // the last free component takes the exact negative sum of the rest
            std::size_t last = 0;
            double rest = 0.0;
            for (std::size_t j = 0; j < N; ++j) {
                if (free[j])
                    last = j;
                else
                    rest += alpha[j];
            }
            alpha[last] = -rest;
        }
    }
    return out;
}

}  // namespace detail

/// Repeatedly lift components that fall below their lower bound to exactly
/// that bound and take the lifted amount equally from the components not yet
/// fixed. Each pass fixes at least one component, so at most N passes run.
inline GibbsOutcome correct_alpha(std::span<double> alpha, std::span<const double> lower) {
    const std::size_t N = alpha.size();
    if (N > max_components) throw std::invalid_argument("too many components: " + std::to_string(N));
    if (lower.size() != N) throw std::invalid_argument("lower bounds do not match alpha");
    return detail::correct_alpha_n<0>(alpha.data(), lower.data(), N);
}

/// Correct alpha so that u + alpha_i p_k stays in [0, 1] at every affected
/// node. `u_affected` holds the current values at the footprint nodes.
inline GibbsOutcome enforce_gibbs(std::span<const double> u_affected, std::span<const double> coefficient,
                                  std::span<double> alpha) {
    const std::size_t N = alpha.size();
    if (N < 2 || N > max_components) throw std::invalid_argument("component count out of range");
    if (u_affected.size() != coefficient.size() * N) throw std::invalid_argument("affected values do not match footprint");
    std::array<double, max_components> lower{};
    gibbs_lower_bounds(u_affected, coefficient, std::span<double>(lower.data(), N));
    return correct_alpha(alpha, std::span<const double>(lower.data(), N));
}

/// Euclidean projection onto {x : x_i >= 0, sum x_i = 1}.
inline std::vector<double> nearest_simplex_point(std::span<const double> x) {
    const std::size_t N = x.size();
    if (N < 2) throw std::invalid_argument("simplex projection needs at least 2 components");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t r = 0; r < N; ++r) {
        cumulative += s[r];
        const double t = (cumulative - 1.0) / static_cast<double>(r + 1);
        if (s[r] - t > 0.0) theta = t;
    }
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) out[i] = std::max(x[i] - theta, 0.0);
    return out;
}

}  // namespace vacseg
