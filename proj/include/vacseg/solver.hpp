#pragma once

// Semi-implicit time stepping of the vector-valued double-obstacle
// Allen-Cahn flow with fitting terms, solved per step by successive subspace
// correction over the basis functions of every level of a nested hierarchy.
//
// One step minimises, over admissible u,
//   1/(2 dt) |u - u_t|_M^2 + eps/2 sum_i u_i^T A u_i
//     + sum_i u_i^T T(-2/eps M u_t + lambda l)_i
// where l is the fitting load at the averages of u_t. Diffusion is implicit,
// the concave potential and the fitting terms are explicit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vacseg/fem.hpp"
#include "vacseg/fidelity.hpp"
#include "vacseg/mesh.hpp"
#include "vacseg/simplex.hpp"

namespace vacseg {

enum class Cycle { w, v, finest_only };
enum class Ordering { lexicographic, red_black };
enum class InitStrategy { otsu, quantile, uniform };

inline const char* to_string(Cycle c) {
    switch (c) {
        case Cycle::w: return "w";
        case Cycle::v: return "v";
        case Cycle::finest_only: return "finest";
    }
    return "?";
}
inline const char* to_string(Ordering o) { return o == Ordering::lexicographic ? "lexicographic" : "red-black"; }
inline const char* to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::otsu: return "otsu";
        case InitStrategy::quantile: return "quantile";
        case InitStrategy::uniform: return "uniform";
    }
    return "?";
}

inline constexpr double recommended_sigma_min = 10.0;
inline constexpr double recommended_sigma_max = 100.0;

struct SolverParams {
    double epsilon = 1.0;          // interface width, pixels
    double lambda = 30.0;          // fitting weight; sigma = lambda * epsilon
    double dt = 0.0;               // 0 selects epsilon^2
    std::size_t components = 2;
    int max_time_steps = 200;
    double sweep_tol = 1e-6;
    int max_sweeps_per_step = 100;
    double steady_tol = 1e-4;      // relative max-norm change per accepted step
    Cycle cycle = Cycle::w;
    Ordering ordering = Ordering::lexicographic;
    std::uint64_t seed = 0;
    InitStrategy init = InitStrategy::otsu;
    ProjectionMode projection = ProjectionMode::by_node;
    int refinements = 3;
    int coarsen = 1;
    bool freeze_averages = false;
    int truncate_below_level = 0;  // levels below this index are skipped ...
    int truncate_after_step = 0;   // ... from this step on (0 levels = off)

    double sigma() const { return lambda * epsilon; }
    double time_step() const { return dt > 0.0 ? dt : epsilon * epsilon; }

    /// Throws on invalid values; returns non-fatal warnings.
    std::vector<std::string> validate() const {
        const auto bad = [](const std::string& key, const std::string& what) {
            throw std::invalid_argument(key + ": " + what);
        };
        if (!(epsilon > 0.0)) bad("epsilon", "must be > 0");
        if (!(lambda >= 0.0)) bad("lambda", "must be >= 0");
        if (dt < 0.0) bad("dt", "must be > 0 (or 0 for epsilon^2)");
        if (components < 2 || components > max_components)
            bad("components", "must be in [2, " + std::to_string(max_components) + "]");
        if (max_time_steps < 0) bad("max_steps", "must be >= 0");
        if (!(sweep_tol > 0.0)) bad("tol", "must be > 0");
        if (max_sweeps_per_step < 1) bad("max_sweeps", "must be >= 1");
        if (!(steady_tol > 0.0)) bad("steady_tol", "must be > 0");
        if (refinements < 0) bad("refine", "must be >= 0");
        if (coarsen < 1) bad("coarsen", "must be >= 1");
        std::vector<std::string> warnings;
        if (sigma() < recommended_sigma_min || sigma() > recommended_sigma_max)
            warnings.push_back("sigma = lambda * epsilon = " + std::to_string(sigma()) +
                               " is outside the recommended band [10, 100]");
        return warnings;
    }
};

struct SolverDiagnostics {
    std::vector<double> energy_before;    // per step, with that step's fitting load
    std::vector<double> energy_after;
    std::vector<double> max_correction;   // last sweep of each step
    std::vector<int> sweeps;
    std::vector<double> change;           // max |u_{t+1} - u_t|
    std::size_t updates = 0;
    std::size_t gibbs_corrections = 0;    // updates that needed the correction passes
    std::size_t gibbs_skips = 0;          // no admissible redistribution existed
    std::size_t descent_fallbacks = 0;    // corrected alpha replaced by a scaled step
    int max_gibbs_passes = 0;
    std::size_t unconverged_steps = 0;
    std::size_t sweeps_checked = 0;
    std::size_t admissibility_violations = 0;  // sweeps leaving the simplex beyond 1e-12
    double worst_sum_error = 0.0;
    double min_value = 0.0;
    double max_value = 1.0;
};

struct SolverState {
    PhaseField u_current;
    PhaseField u_prev_step;
    RegionAverages c;                 // from u_prev_step
    std::vector<double> load;         // fitting load at c, node-major
    SolverDiagnostics diagnostics;
    int step = 0;
};

/// Level visit order for one sweep; levels are indices, coarsest 0.
inline std::vector<int> level_schedule(Cycle cycle, int levels) {
    std::vector<int> s;
    if (levels <= 0) return s;
    const int finest = levels - 1;
    switch (cycle) {
        case Cycle::finest_only: s.push_back(finest); break;
        case Cycle::v:
            for (int l = 0; l <= finest; ++l) s.push_back(l);
            break;
        case Cycle::w:
            for (int l = 0; l <= finest; ++l) s.push_back(l);
            for (int l = finest - 1; l >= 0; --l) s.push_back(l);
            for (int l = 1; l <= finest; ++l) s.push_back(l);
            break;
    }
    return s;
}

/// Admissible minimiser candidate of the local problem
///   J(a) = d/2 |a|^2 - r . a,  sum a = 0,  a_i >= lower_i.
/// The unconstrained minimiser T(r)/d is corrected by `correct_alpha`. If the
/// corrected step would raise J above J(0) = 0, the largest feasible multiple
/// of T(r)/d is taken instead; J is convex along that ray, so no update
/// increases the step functional.
struct LocalSolveStats {
    int passes = 0;
    bool corrected = false;
    bool skipped = false;
    bool fallback = false;  // corrected step clearly raised J, scaled step used
};

namespace detail {

template <std::size_t Fixed>
inline LocalSolveStats solve_local_n(const double* r, double d, const double* lower, double* alpha, std::size_t n) {
    const std::size_t N = Fixed ? Fixed : n;
    constexpr std::size_t cap = Fixed ? Fixed : max_components;
    LocalSolveStats st;
    double mean = 0.0;
    for (std::size_t i = 0; i < N; ++i) mean += r[i];
    mean /= static_cast<double>(N);
    bool feasible = true;
    for (std::size_t i = 0; i < N; ++i) {
        alpha[i] = (r[i] - mean) / d;
        feasible = feasible && alpha[i] >= lower[i];
    }
    if (feasible) return st;

    std::array<double, cap> star{};
    std::copy_n(alpha, N, star.begin());
    const auto g = correct_alpha_n<Fixed>(alpha, lower, N);
    st.corrected = true;
    st.passes = g.passes;
    st.skipped = g.skipped;

    double quad = 0.0, lin = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        quad += alpha[i] * alpha[i];
        lin += r[i] * alpha[i];
    }
    quad *= 0.5 * d;
    const double j_corrected = quad - lin;
    if (!(j_corrected > 0.0)) return st;

    double t = 1.0;
    for (std::size_t i = 0; i < N; ++i)
        if (star[i] < lower[i]) t = std::min(t, lower[i] / star[i]);
    t = std::clamp(t, 0.0, 1.0);
    double sq = 0.0, sl = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        sq += star[i] * star[i];
        sl += r[i] * star[i];
    }
    const double j_scaled = t * t * 0.5 * d * sq - t * sl;
    if (j_scaled < j_corrected) {
        for (std::size_t i = 0; i < N; ++i) alpha[i] = t * star[i];
        st.skipped = false;
        st.fallback = j_corrected > 1e-12 * d * sq;
    }
    return st;
}

}  // namespace detail

inline LocalSolveStats solve_local(std::span<const double> r, double d, std::span<const double> lower,
                                   std::span<double> alpha) {
    const std::size_t N = r.size();
    if (N < 2 || N > max_components || lower.size() != N || alpha.size() != N)
        throw std::invalid_argument("solve_local: inconsistent component counts");
    if (!(d > 0.0)) throw std::invalid_argument("solve_local: diagonal must be positive");
    return detail::solve_local_n<0>(r.data(), d, lower.data(), alpha.data(), N);
}

/// Discrete energy with lumped potential and a fixed fitting load:
///   sum_i eps/2 u_i^T A u_i + 1/eps sum_n M_n u_ni (1 - u_ni) + lambda u_i^T l_i
inline double discrete_energy(const PhaseField& u, const SymmetricSparseMatrix& A, const DiagonalMatrix& M,
                              std::span<const double> load, double epsilon, double lambda) {
    const std::size_t N = u.components();
    double grad = 0.0, pot = 0.0, fit = 0.0;
    for (std::size_t n = 0; n < u.nodes(); ++n) {
        for (std::size_t i = 0; i < N; ++i) {
            const double v = u(n, i);
            double Av = 0.0;
            for (auto e = A.row_offsets[n]; e < A.row_offsets[n + 1]; ++e) Av += A.values[e] * u(A.columns[e], i);
            grad += v * Av;
            pot += M[n] * v * (1.0 - v);
            if (!load.empty()) fit += v * load[n * N + i];
        }
    }
    return 0.5 * epsilon * grad + pot / epsilon + lambda * fit;
}

/// Residual-based subspace correction on a fixed hierarchy. The vector
///   g_i = b_i - (M + eps dt A) u_i,  b_i = M u_t,i + dt T(2/eps M u_t - lambda l)_i
/// is kept current, so each local residual is p^T g_i.
class SubspaceCorrection {
public:
    SubspaceCorrection(const GridHierarchy& h, const DiagonalMatrix& mass, const SymmetricSparseMatrix& stiffness,
                       double epsilon, double dt)
        : hierarchy_(h), mass_(mass), stiffness_(stiffness), epsilon_(epsilon), dt_(dt), footprints_(h) {
        const std::size_t n = h.finest().num_nodes();
        if (mass.size() != n || stiffness.rows() != n) throw std::invalid_argument("operators do not match the finest level");
        const double kappa = epsilon * dt;
        finest_diag_.resize(n);
        finest_values_.resize(stiffness.values.size());
        for (std::size_t k = 0; k < n; ++k) {
            finest_diag_[k] = mass[k] + kappa * stiffness.diagonal(k);
            for (auto e = stiffness.row_offsets[k]; e < stiffness.row_offsets[k + 1]; ++e)
                finest_values_[e] = kappa * stiffness.values[e] + (stiffness.columns[e] == k ? mass[k] : 0.0);
        }

        operators_.resize(h.num_levels());
        std::vector<double> dense(n, 0.0);
        std::vector<char> seen(n, 0);
        std::vector<std::uint32_t> touched;
        for (std::size_t l = 0; l + 1 < h.num_levels(); ++l) {
            const auto& fp = footprints_.level(l);
            auto& op = operators_[l];
            op.offsets.reserve(fp.size() + 1);
            op.offsets.push_back(0);
            op.diag.resize(fp.size());
            op.inverse.resize(fp.coefficient.size());
            for (std::size_t e = 0; e < fp.coefficient.size(); ++e) op.inverse[e] = 1.0 / fp.coefficient[e];
            for (std::size_t b = 0; b < fp.size(); ++b) {
                touched.clear();
                for (auto e = fp.offsets[b]; e < fp.offsets[b + 1]; ++e) {
                    const auto k = fp.fine[e];
                    const double p = fp.coefficient[e];
                    for (auto s = stiffness.row_offsets[k]; s < stiffness.row_offsets[k + 1]; ++s) {
                        const auto j = stiffness.columns[s];
                        double contrib = kappa * stiffness.values[s] * p;
                        if (j == k) contrib += mass[k] * p;
                        if (!seen[j]) {
                            seen[j] = 1;
                            touched.push_back(j);
                        }
                        dense[j] += contrib;
                    }
                }
                double d = 0.0;
                for (auto e = fp.offsets[b]; e < fp.offsets[b + 1]; ++e) d += fp.coefficient[e] * dense[fp.fine[e]];
                op.diag[b] = d;
                std::sort(touched.begin(), touched.end());
                for (auto j : touched) {
                    op.index.push_back(j);
                    op.value.push_back(dense[j]);
                    dense[j] = 0.0;
                    seen[j] = 0;
                }
                op.offsets.push_back(op.index.size());
            }
        }
        set_ordering(Ordering::lexicographic);
    }

    const GridHierarchy& hierarchy() const { return hierarchy_; }
    const FootprintTable& footprints() const { return footprints_; }
    double epsilon() const { return epsilon_; }
    double dt() const { return dt_; }

    void set_ordering(Ordering o) {
        order_.assign(hierarchy_.num_levels(), {});
        for (std::size_t l = 0; l < hierarchy_.num_levels(); ++l) {
            const auto& t = hierarchy_.levels[l];
            auto& ord = order_[l];
            ord.resize(t.num_nodes());
            std::iota(ord.begin(), ord.end(), 0u);
            if (o == Ordering::red_black) {
                const auto cols = t.grid_cols();
                std::stable_partition(ord.begin(), ord.end(), [cols](std::uint32_t k) { return (k % cols + k / cols) % 2 == 0; });
            }
        }
    }

    /// p^T (M + eps dt A) p for basis `node` on `level`.
    double local_diagonal(int level, std::uint32_t node) const {
        if (static_cast<std::size_t>(level) + 1 == hierarchy_.num_levels()) return finest_diag_[node];
        return operators_[static_cast<std::size_t>(level)].diag[node];
    }

    /// Recompute g from the step data; called at the start of every time step.
    /// Between calls, u must change only through sweep_level.
    void prepare_step(const PhaseField& u_prev, std::span<const double> load, double lambda, const PhaseField& u) {
        const std::size_t n = u.nodes();
        const std::size_t N = u.components();
        g_.assign(n * N, 0.0);
        clock_ = 1;
        stamp_.assign(n, 1);
        evaluated_.resize(hierarchy_.num_levels());
        for (std::size_t l = 0; l < hierarchy_.num_levels(); ++l) evaluated_[l].assign(hierarchy_.levels[l].num_nodes(), 0);
        std::array<double, max_components> f{};
        for (std::size_t k = 0; k < n; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                f[i] = 2.0 / epsilon_ * mass_[k] * u_prev(k, i) - lambda * (load.empty() ? 0.0 : load[k * N + i]);
                mean += f[i];
            }
            mean /= static_cast<double>(N);
            for (std::size_t i = 0; i < N; ++i) g_[k * N + i] = mass_[k] * u_prev(k, i) + dt_ * (f[i] - mean);
        }
        const double kappa = epsilon_ * dt_;
        for (std::size_t k = 0; k < n; ++k) {
            for (auto e = stiffness_.row_offsets[k]; e < stiffness_.row_offsets[k + 1]; ++e) {
                const double a = kappa * stiffness_.values[e];
                const auto j = stiffness_.columns[e];
                for (std::size_t i = 0; i < N; ++i) g_[k * N + i] -= a * u(j, i);
            }
            for (std::size_t i = 0; i < N; ++i) g_[k * N + i] -= mass_[k] * u(k, i);
        }
    }

    std::span<const double> residual() const { return g_; }

    /// Local residual r_i = p^T g_i for a basis function.
    void local_residual(int level, std::uint32_t node, std::size_t N, std::span<double> r) const {
        std::fill(r.begin(), r.end(), 0.0);
        if (static_cast<std::size_t>(level) + 1 == hierarchy_.num_levels()) {
            for (std::size_t i = 0; i < N; ++i) r[i] = g_[node * N + i];
            return;
        }
        const auto& fp = footprints_.level(static_cast<std::size_t>(level));
        for (auto e = fp.offsets[node]; e < fp.offsets[node + 1]; ++e) {
            const double p = fp.coefficient[e];
            const double* gk = g_.data() + static_cast<std::size_t>(fp.fine[e]) * N;
            for (std::size_t i = 0; i < N; ++i) r[i] += p * gk[i];
        }
    }

    /// Visit every basis function of `level` once; returns the largest |alpha|.
    double sweep_level(int level, PhaseField& u, SolverDiagnostics& diag) {
        if (u.nodes() * u.components() != g_.size()) throw std::logic_error("sweep_level before prepare_step");
        switch (u.components()) {
            case 2: return sweep_level_n<2>(level, u, diag);
            case 3: return sweep_level_n<3>(level, u, diag);
            case 4: return sweep_level_n<4>(level, u, diag);
            case 5: return sweep_level_n<5>(level, u, diag);
            case 6: return sweep_level_n<6>(level, u, diag);
            case 7: return sweep_level_n<7>(level, u, diag);
            case 8: return sweep_level_n<8>(level, u, diag);
            default: return sweep_level_n<0>(level, u, diag);
        }
    }

private:
    template <std::size_t Fixed>
    double sweep_level_n(int level, PhaseField& u, SolverDiagnostics& diag) {
        const std::size_t N = Fixed ? Fixed : u.components();
        constexpr std::size_t cap = Fixed ? Fixed : max_components;
        const auto l = static_cast<std::size_t>(level);
        std::array<double, cap> r{}, lower{}, alpha{};
        double worst = 0.0;
        double* uv = u.data().data();
        double* g = g_.data();

        if (l + 1 == hierarchy_.num_levels()) {
            auto& seen = evaluated_[l];
            for (const auto k : order_[l]) {
                if (stamp_[k] <= seen[k]) continue;
                double* uk = uv + static_cast<std::size_t>(k) * N;
                const double* gk = g + static_cast<std::size_t>(k) * N;
                for (std::size_t i = 0; i < N; ++i) {
                    r[i] = gk[i];
                    lower[i] = -uk[i];
                }
                const auto st = detail::solve_local_n<Fixed>(r.data(), finest_diag_[k], lower.data(), alpha.data(), N);
                if (!record(st, alpha.data(), N, diag, worst)) {
                    seen[k] = clock_;
                    continue;
                }
                ++clock_;
                for (std::size_t i = 0; i < N; ++i) uk[i] = std::clamp(uk[i] + alpha[i], 0.0, 1.0);
                for (auto e = stiffness_.row_offsets[k]; e < stiffness_.row_offsets[k + 1]; ++e) {
                    const double a = finest_values_[e];
                    const auto j = stiffness_.columns[e];
                    double* gj = g + static_cast<std::size_t>(j) * N;
                    for (std::size_t i = 0; i < N; ++i) gj[i] -= a * alpha[i];
                    stamp_[j] = clock_;
                }
            }
            return worst;
        }

        const auto& fp = footprints_.level(l);
        const auto& op = operators_[l];
        auto& seen = evaluated_[l];
        for (const auto b : order_[l]) {
            const auto first = fp.offsets[b], last = fp.offsets[b + 1];
            {
                std::uint32_t newest = 0;
                for (auto e = first; e < last; ++e) newest = std::max(newest, stamp_[fp.fine[e]]);
                if (newest <= seen[b]) continue;
            }
            std::fill_n(r.begin(), N, 0.0);
            std::fill_n(lower.begin(), N, -std::numeric_limits<double>::infinity());
            for (auto e = first; e < last; ++e) {
                const double p = fp.coefficient[e];
                const double inv = op.inverse[e];
                const std::size_t k = fp.fine[e];
                const double* gk = g + k * N;
                const double* uk = uv + k * N;
                for (std::size_t i = 0; i < N; ++i) {
                    r[i] += p * gk[i];
                    lower[i] = std::max(lower[i], -uk[i] * inv);
                }
            }
            const auto st = detail::solve_local_n<Fixed>(r.data(), op.diag[b], lower.data(), alpha.data(), N);
            if (!record(st, alpha.data(), N, diag, worst)) {
                seen[b] = clock_;
                continue;
            }
            ++clock_;
            for (auto e = first; e < last; ++e) {
                const double p = fp.coefficient[e];
                double* uk = uv + static_cast<std::size_t>(fp.fine[e]) * N;
                for (std::size_t i = 0; i < N; ++i) uk[i] = std::clamp(uk[i] + alpha[i] * p, 0.0, 1.0);
            }
            for (auto e = op.offsets[b]; e < op.offsets[b + 1]; ++e) {
                const double q = op.value[e];
                const auto j = op.index[e];
                double* gj = g + static_cast<std::size_t>(j) * N;
                for (std::size_t i = 0; i < N; ++i) gj[i] -= q * alpha[i];
                stamp_[j] = clock_;
            }
        }
        return worst;
    }

    static bool record(const LocalSolveStats& st, const double* alpha, std::size_t N, SolverDiagnostics& diag,
                       double& worst) {
        ++diag.updates;
        if (st.corrected) ++diag.gibbs_corrections;
        if (st.skipped) ++diag.gibbs_skips;
        if (st.fallback) ++diag.descent_fallbacks;
        diag.max_gibbs_passes = std::max(diag.max_gibbs_passes, st.passes);
        double m = 0.0;
        for (std::size_t i = 0; i < N; ++i) m = std::max(m, std::abs(alpha[i]));
        worst = std::max(worst, m);
        return m > 0.0;
    }

    struct LevelOperator {
        std::vector<std::size_t> offsets;
        std::vector<std::uint32_t> index;  // support of (M + eps dt A) p
        std::vector<double> value;
        std::vector<double> diag;          // p^T (M + eps dt A) p
        std::vector<double> inverse;       // 1 / footprint coefficient
    };

    const GridHierarchy& hierarchy_;
    const DiagonalMatrix& mass_;
    const SymmetricSparseMatrix& stiffness_;
    double epsilon_;
    double dt_;
    FootprintTable footprints_;
    std::vector<LevelOperator> operators_;
    std::vector<double> finest_diag_;
    std::vector<double> finest_values_;  // rows of M + eps dt A on the finest level
    std::vector<std::vector<std::uint32_t>> order_;
    std::vector<double> g_;
    // Change tracking: a basis whose last visit gave alpha = 0 is skipped
    // until a node in its footprint is modified again.
    std::uint32_t clock_ = 1;
    std::vector<std::uint32_t> stamp_;
    std::vector<std::vector<std::uint32_t>> evaluated_;
};

/// Correction alpha for one basis function evaluated directly from its
/// definition, without the maintained residual:
///   d = p^T (M + eps dt A) p
///   r_i = p^T { M [u_t,i - u_k,i + dt T(2/eps u_t - lambda F)_i] - eps dt A u_k,i }
/// followed by alpha = T(r)/d and the simplex correction.
inline std::vector<double> compute_alpha(const BasisFootprint& fp, const SolverState& state, const SolverParams& params,
                                         const DiagonalMatrix& M, const SymmetricSparseMatrix& A,
                                         LocalSolveStats* stats = nullptr) {
    const auto& uk = state.u_current;
    const auto& ut = state.u_prev_step;
    const std::size_t N = uk.components();
    const double eps = params.epsilon, dt = params.time_step(), kappa = eps * dt;

    // p as a sparse map over the finest grid
    std::vector<double> p(uk.nodes(), 0.0);
    for (std::size_t e = 0; e < fp.fine.size(); ++e) p[fp.fine[e]] = fp.coefficient[e];

    double d = 0.0;
    std::vector<double> r(N, 0.0);
    std::vector<double> f(N);
    for (std::size_t e = 0; e < fp.fine.size(); ++e) {
        const auto k = fp.fine[e];
        double Ap = 0.0;
        for (auto s = A.row_offsets[k]; s < A.row_offsets[k + 1]; ++s) Ap += A.values[s] * p[A.columns[s]];
        d += p[k] * (M[k] * p[k] + kappa * Ap);

        // M T(2/eps u_t - lambda F) with the fitting part taken from the load
        for (std::size_t i = 0; i < N; ++i)
            f[i] = 2.0 / eps * M[k] * ut(k, i) - params.lambda * (state.load.empty() ? 0.0 : state.load[k * N + i]);
        project_T_inplace(f);
        for (std::size_t i = 0; i < N; ++i) {
            double Au = 0.0;
            for (auto s = A.row_offsets[k]; s < A.row_offsets[k + 1]; ++s) Au += A.values[s] * uk(A.columns[s], i);
            r[i] += p[k] * (M[k] * (ut(k, i) - uk(k, i)) + dt * f[i] - kappa * Au);
        }
    }
    if (!(d > 0.0)) throw std::logic_error("non-positive local diagonal in subspace correction");

    std::vector<double> affected(fp.fine.size() * N);
    for (std::size_t e = 0; e < fp.fine.size(); ++e)
        for (std::size_t i = 0; i < N; ++i) affected[e * N + i] = uk(fp.fine[e], i);
    std::vector<double> lower(N);
    gibbs_lower_bounds(affected, fp.coefficient, lower);
    std::vector<double> alpha(N);
    const auto st = solve_local(r, d, lower, alpha);
    if (stats) *stats = st;
    return alpha;
}

// ---------------------------------------------------------------------------
// Initialisation

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::vector<double> luminance(const MeshImage& img) {
    const std::size_t n = img.sites();
    std::vector<double> y(n);
    for (std::size_t s = 0; s < n; ++s) {
        if (img.channels == 3)
            y[s] = 0.299 * img(s, 0) + 0.587 * img(s, 1) + 0.114 * img(s, 2);
        else {
            double sum = 0.0;
            for (int c = 0; c < img.channels; ++c) sum += img(s, c);
            y[s] = sum / img.channels;
        }
    }
    return y;
}

/// Class of every value under equal-count quantile bins; ties go to the upper bin.
inline std::vector<std::size_t> quantile_classes(const std::vector<double>& y, std::size_t N) {
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> thresholds;
    for (std::size_t k = 1; k < N; ++k) thresholds.push_back(sorted[std::min(sorted.size() - 1, k * sorted.size() / N)]);
    std::vector<std::size_t> cls(y.size());
    for (std::size_t s = 0; s < y.size(); ++s)
        cls[s] = static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), y[s]) - thresholds.begin());
    return cls;
}

/// Class of every value under the optimal N-class 1D quantisation (minimum
/// within-class sum of squares) of a fine histogram.
inline std::vector<std::size_t> otsu_classes(const std::vector<double>& y, std::size_t N) {
    constexpr std::size_t B = 1024;
    std::vector<double> w(B, 0.0), wx(B, 0.0), wxx(B, 0.0);
    const auto bin_of = [](double v) { return std::min<std::size_t>(B - 1, static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * B)); };
    for (double v : y) {
        const auto b = bin_of(v);
        const double x = (static_cast<double>(b) + 0.5) / B;
        w[b] += 1.0;
        wx[b] += x;
        wxx[b] += x * x;
    }
    std::vector<double> P(B + 1, 0.0), S(B + 1, 0.0), SS(B + 1, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        P[b + 1] = P[b] + w[b];
        S[b + 1] = S[b] + wx[b];
        SS[b + 1] = SS[b] + wxx[b];
    }
    const auto cost = [&](std::size_t a, std::size_t b) {  // bins [a, b)
        const double n = P[b] - P[a];
        if (n <= 0.0) return 0.0;
        const double s = S[b] - S[a];
        return std::max(0.0, SS[b] - SS[a] - s * s / n);
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> D(N + 1, std::vector<double>(B + 1, inf));
    std::vector<std::vector<std::size_t>> cut(N + 1, std::vector<std::size_t>(B + 1, 0));
    D[0][0] = 0.0;
    for (std::size_t k = 1; k <= N; ++k)
        for (std::size_t b = k; b <= B; ++b)
            for (std::size_t a = k - 1; a < b; ++a) {
                if (D[k - 1][a] == inf) continue;
                const double c = D[k - 1][a] + cost(a, b);
                if (c < D[k][b]) {
                    D[k][b] = c;
                    cut[k][b] = a;
                }
            }
    std::vector<std::size_t> start(N);
    std::size_t b = B;
    for (std::size_t k = N; k >= 1; --k) {
        start[k - 1] = cut[k][b];
        b = cut[k][b];
    }
    std::vector<std::size_t> cls(y.size());
    for (std::size_t s = 0; s < y.size(); ++s) {
        const auto bin = bin_of(y[s]);
        cls[s] = static_cast<std::size_t>(std::upper_bound(start.begin(), start.end(), bin) - start.begin()) - 1;
    }
    return cls;
}

}  // namespace detail

/// Soft weight given to non-owning components by the binned initialisations.
inline constexpr double init_soft_weight = 0.05;
inline constexpr double init_noise_amplitude = 0.01;

/// Initial phase field on the nodes of a by-node mesh image. Binned
/// strategies put 1 - (N-1) delta on the owning bin (darkest bin is
/// component 0) and delta elsewhere; `uniform` perturbs 1/N by seeded noise.
inline PhaseField initialize(const MeshImage& img, std::size_t N, std::uint64_t seed, InitStrategy strategy) {
    if (N < 2 || N > max_components) throw std::invalid_argument("components must be in [2, 32]");
    if (img.mode != ProjectionMode::by_node) throw std::invalid_argument("initialisation needs node samples");
    const std::size_t n = img.sites();
    PhaseField u(n, N);
    if (strategy == InitStrategy::uniform) {
        std::mt19937_64 rng(seed);
        std::vector<double> x(N);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < N; ++i)
                x[i] = 1.0 / static_cast<double>(N) + init_noise_amplitude * (2.0 * detail::unit_uniform(rng) - 1.0);
            const auto p = nearest_simplex_point(x);
            std::copy(p.begin(), p.end(), u.at(k).begin());
        }
        return u;
    }
    const auto y = detail::luminance(img);
    const auto cls = strategy == InitStrategy::otsu ? detail::otsu_classes(y, N) : detail::quantile_classes(y, N);
    double delta = init_soft_weight;
    if (static_cast<double>(N - 1) * delta > 0.5) delta = 0.5 / static_cast<double>(N - 1);
    const double owner = 1.0 - static_cast<double>(N - 1) * delta;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < N; ++i) u(k, i) = i == cls[k] ? owner : delta;
    return u;
}

/// Clamp to [0, 1] and rescale every node to unit sum.
inline void renormalize(PhaseField& u) {
    for (std::size_t k = 0; k < u.nodes(); ++k) {
        auto v = u.at(k);
        double s = 0.0;
        for (double& x : v) {
            x = std::clamp(x, 0.0, 1.0);
            s += x;
        }
        if (s > 0.0)
            for (double& x : v) x /= s;
        else
            for (double& x : v) x = 1.0 / static_cast<double>(v.size());
    }
}

// ---------------------------------------------------------------------------
// Sweeps and time steps

/// Operators and data shared by every step of one problem.
struct Problem {
    const GridHierarchy* hierarchy = nullptr;
    const MeshImage* image = nullptr;  // the fitting data (by node or by simplex)
    DiagonalMatrix mass;
    SymmetricSparseMatrix stiffness;

    Problem(const GridHierarchy& h, const MeshImage& img)
        : hierarchy(&h), image(&img), mass(assemble_lumped_mass(h.finest())), stiffness(assemble_stiffness(h.finest())) {}
};

inline std::vector<double> compute_load(const Problem& pb, const RegionAverages& c) {
    return fitting_load(fitting_values(*pb.image, c), pb.hierarchy->finest(), pb.mass);
}

inline SolverState make_state(const Problem& pb, PhaseField u0) {
    SolverState s;
    s.u_prev_step = u0;
    s.u_current = std::move(u0);
    s.c = region_averages(s.u_prev_step, *pb.image, pb.hierarchy->finest(), pb.mass);
    s.load = compute_load(pb, s.c);
    return s;
}

inline void check_sweep_admissibility(const PhaseField& u, SolverDiagnostics& d) {
    const auto rep = check_admissibility(u);
    ++d.sweeps_checked;
    if (!rep.admissible(1e-12)) ++d.admissibility_violations;
    d.worst_sum_error = std::max(d.worst_sum_error, rep.max_sum_error);
    d.min_value = std::min(d.min_value, rep.min_value);
    d.max_value = std::max(d.max_value, rep.max_value);
}

/// One pass over the configured level schedule. Returns max |alpha|.
inline double ssc_sweep(SolverState& state, SubspaceCorrection& ssc, const SolverParams& params) {
    const int L = static_cast<int>(ssc.hierarchy().num_levels());
    double worst = 0.0;
    const bool truncated = params.truncate_below_level > 0 && state.step >= params.truncate_after_step;
    for (int level : level_schedule(params.cycle, L)) {
        if (truncated && level < params.truncate_below_level && level != L - 1) continue;
        worst = std::max(worst, ssc.sweep_level(level, state.u_current, state.diagnostics));
    }
    check_sweep_admissibility(state.u_current, state.diagnostics);
    return worst;
}

struct StepRecord {
    int step = 0;
    double energy = 0.0;
    double max_correction = 0.0;
    int sweeps = 0;
    double change = 0.0;
    bool converged = true;
    std::vector<double> mass;  // per component
    RegionAverages c;
};

/// One backward-Euler step: sweep until the largest correction falls below
/// sweep_tol, accept the iterate, then refresh the averages.
inline StepRecord time_step(SolverState& state, const Problem& pb, SubspaceCorrection& ssc, const SolverParams& params) {
    auto& diag = state.diagnostics;
    diag.energy_before.push_back(
        discrete_energy(state.u_prev_step, pb.stiffness, pb.mass, state.load, params.epsilon, params.lambda));
    ssc.prepare_step(state.u_prev_step, state.load, params.lambda, state.u_current);

    StepRecord rec;
    rec.step = state.step;
    rec.converged = false;
    for (int s = 0; s < params.max_sweeps_per_step; ++s) {
        rec.max_correction = ssc_sweep(state, ssc, params);
        ++rec.sweeps;
        double unorm = 0.0;
        for (double v : state.u_current.data()) unorm = std::max(unorm, std::abs(v));
        if (rec.max_correction <= params.sweep_tol * std::max(1.0, unorm)) {
            rec.converged = true;
            break;
        }
    }
    if (!rec.converged) ++diag.unconverged_steps;
    renormalize(state.u_current);

    rec.change = 0.0;
    for (std::size_t k = 0; k < state.u_current.data().size(); ++k)
        rec.change = std::max(rec.change, std::abs(state.u_current.data()[k] - state.u_prev_step.data()[k]));
    rec.energy = discrete_energy(state.u_current, pb.stiffness, pb.mass, state.load, params.epsilon, params.lambda);
    diag.energy_after.push_back(rec.energy);
    diag.max_correction.push_back(rec.max_correction);
    diag.sweeps.push_back(rec.sweeps);
    diag.change.push_back(rec.change);

    state.u_prev_step = state.u_current;
    if (!params.freeze_averages) {
        state.c = region_averages(state.u_prev_step, *pb.image, pb.hierarchy->finest(), pb.mass, &state.c);
        state.load = compute_load(pb, state.c);
    }
    ++state.step;

    const std::size_t N = state.u_current.components();
    rec.mass.assign(N, 0.0);
    for (std::size_t k = 0; k < state.u_current.nodes(); ++k)
        for (std::size_t i = 0; i < N; ++i) rec.mass[i] += pb.mass[k] * state.u_current(k, i);
    rec.c = state.c;
    return rec;
}

}  // namespace vacseg
