#pragma once

// Gaussian multi-kernel machinery and MK-MMD estimators.
//
// All estimator arithmetic is double precision. Values of the biased and
// unbiased estimators are summed in a canonical order (rows sorted
// lexicographically, ascending), so shuffling the rows of either sample set
// does not change the result bit-for-bit. The linear-time estimator pairs
// consecutive rows and is therefore order-dependent by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dapol/error.hpp"
#include "dapol/matrix.hpp"
#include "dapol/rng.hpp"

namespace dapol::mmd {

/// Empirical sample: n >= 1 finite rows of a common dimension d.
class SampleSet {
public:
    explicit SampleSet(Matrix rows) : rows_(std::move(rows)) {
        if (rows_.rows() == 0 || rows_.cols() == 0) throw invalid_argument("SampleSet: needs at least one row of positive dimension");
        if (!rows_.all_finite()) throw invalid_argument("SampleSet: non-finite entry");
    }

    static SampleSet from_rows(const std::vector<std::vector<double>>& rows) { return SampleSet(Matrix::from_rows(rows)); }

    std::size_t size() const noexcept { return rows_.rows(); }
    std::size_t dim() const noexcept { return rows_.cols(); }
    std::span<const double> operator[](std::size_t i) const noexcept { return rows_.row(i); }
    const Matrix& matrix() const noexcept { return rows_; }

private:
    Matrix rows_;
};

/// Gaussian bandwidths with convex mixture weights.
class KernelBank {
public:
    KernelBank(std::vector<double> bandwidths, std::vector<double> weights)
        : bandwidths_(std::move(bandwidths)), weights_(std::move(weights)) {
        if (bandwidths_.empty() || bandwidths_.size() != weights_.size())
            throw invalid_argument("KernelBank: need equal, non-zero numbers of bandwidths and weights");
        double sum = 0.0;
        for (std::size_t u = 0; u < bandwidths_.size(); ++u) {
            if (!(bandwidths_[u] > 0.0) || !std::isfinite(bandwidths_[u]))
                throw invalid_argument("KernelBank: bandwidths must be positive and finite");
            if (u > 0 && !(bandwidths_[u] > bandwidths_[u - 1]))
                throw invalid_argument("KernelBank: bandwidths must be strictly increasing");
            if (!(weights_[u] >= 0.0)) throw invalid_argument("KernelBank: weights must be non-negative");
            sum += weights_[u];
        }
        if (std::abs(sum - 1.0) > 1e-12) throw invalid_argument("KernelBank: weights must sum to 1");
        inv_two_sigma2_.resize(bandwidths_.size());
        for (std::size_t u = 0; u < bandwidths_.size(); ++u)
            inv_two_sigma2_[u] = 1.0 / (2.0 * bandwidths_[u] * bandwidths_[u]);
    }

    static KernelBank single(double sigma) { return KernelBank({sigma}, {1.0}); }

    static KernelBank uniform(std::vector<double> bandwidths) {
        const auto n = bandwidths.size();
        return KernelBank(std::move(bandwidths), std::vector<double>(n, n ? 1.0 / static_cast<double>(n) : 0.0));
    }

    std::size_t size() const noexcept { return bandwidths_.size(); }
    const std::vector<double>& bandwidths() const noexcept { return bandwidths_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

    /// Mixture value for a precomputed squared distance.
    double eval_sq(double sq_dist) const noexcept {
        double k = 0.0;
        for (std::size_t u = 0; u < bandwidths_.size(); ++u) k += weights_[u] * std::exp(-sq_dist * inv_two_sigma2_[u]);
        return k;
    }

    /// Mixture value k and the factor c with dk/dx = c * (y - x), sharing the exponentials.
    std::pair<double, double> eval_with_grad_factor(double sq_dist) const noexcept {
        double k = 0.0, c = 0.0;
        for (std::size_t u = 0; u < bandwidths_.size(); ++u) {
            const double e = weights_[u] * std::exp(-sq_dist * inv_two_sigma2_[u]);
            k += e;
            c += e * (2.0 * inv_two_sigma2_[u]);
        }
        return {k, c};
    }

    friend bool operator==(const KernelBank& a, const KernelBank& b) {
        return a.bandwidths_ == b.bandwidths_ && a.weights_ == b.weights_;
    }

private:
    std::vector<double> bandwidths_;
    std::vector<double> weights_;
    std::vector<double> inv_two_sigma2_;
};

namespace detail {

inline double sq_dist(std::span<const double> x, std::span<const double> y) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    return s;
}

inline void check_dims(const SampleSet& a, const SampleSet& b, const char* who) {
    if (a.dim() != b.dim())
        throw invalid_argument(std::string(who) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                               std::to_string(b.dim()) + ")");
}

/// Median of a non-empty vector (mean of the two middle values for even sizes); reorders `v`.
inline double median_inplace(std::vector<double>& v) {
    const std::size_t m = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(m / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double upper = *mid;
    if (m % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

/// Row indices of `s` in lexicographic order (ties by original index).
inline std::vector<std::size_t> canonical_order(const SampleSet& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto ra = s[a];
        const auto rb = s[b];
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    return idx;
}

/// Sum of k over all ordered pairs (i in a, j in b), optionally skipping i == j.
inline double pair_sum(const SampleSet& a, const std::vector<std::size_t>& ia, const SampleSet& b,
                       const std::vector<std::size_t>& ib, const KernelBank& bank, bool skip_diagonal) {
    double total = 0.0;
    for (std::size_t i = 0; i < ia.size(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < ib.size(); ++j) {
            if (skip_diagonal && i == j) continue;
            row += bank.eval_sq(sq_dist(a[ia[i]], b[ib[j]]));
        }
        total += row;
    }
    return total;
}

}  // namespace detail

/// k(x, y) = exp(-|x - y|^2 / (2 sigma^2)).
inline double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma) {
    if (x.size() != y.size()) throw invalid_argument("gaussian_kernel: dimension mismatch");
    if (!(sigma > 0.0)) throw invalid_argument("gaussian_kernel: sigma must be positive");
    return std::exp(-detail::sq_dist(x, y) / (2.0 * sigma * sigma));
}

/// Convex combination of Gaussian kernels.
inline double multi_kernel(std::span<const double> x, std::span<const double> y, const KernelBank& bank) {
    if (x.size() != y.size()) throw invalid_argument("multi_kernel: dimension mismatch");
    return bank.eval_sq(detail::sq_dist(x, y));
}

/// Median of all pairwise Euclidean distances in the pooled sample.
inline double median_heuristic(const SampleSet& pooled) {
    const std::size_t n = pooled.size();
    if (n < 2) throw insufficient_samples_error("median_heuristic: need at least two rows");
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) d.push_back(std::sqrt(detail::sq_dist(pooled[i], pooled[j])));
    if (*std::max_element(d.begin(), d.end()) == 0.0) throw degenerate_sample_error("median_heuristic: all rows identical");
    double med = detail::median_inplace(d);
    if (med <= 0.0) {
        // More than half of the pairs coincide; use the median of the non-zero distances.
        d.erase(std::remove(d.begin(), d.end(), 0.0), d.end());
        med = detail::median_inplace(d);
    }
    return med;
}

/// Five-kernel ladder {m/4, m/2, m, 2m, 4m} around the median distance, uniform weights.
inline KernelBank default_bank(const SampleSet& pooled) {
    const double m = median_heuristic(pooled);
    return KernelBank::uniform({m / 4.0, m / 2.0, m, 2.0 * m, 4.0 * m});
}

inline SampleSet pool(const SampleSet& a, const SampleSet& b) {
    detail::check_dims(a, b, "pool");
    return SampleSet(Matrix::vstack(a.matrix(), b.matrix()));
}

/// Biased (V-statistic) MMD^2. Non-negative; exactly zero for identical multisets.
inline double mmd2_biased(const SampleSet& xs, const SampleSet& xt, const KernelBank& bank) {
    detail::check_dims(xs, xt, "mmd2_biased");
    const auto is = detail::canonical_order(xs);
    const auto it = detail::canonical_order(xt);
    const double ns = static_cast<double>(xs.size());
    const double nt = static_cast<double>(xt.size());
    const double kss = detail::pair_sum(xs, is, xs, is, bank, false) / (ns * ns);
    const double ktt = detail::pair_sum(xt, it, xt, it, bank, false) / (nt * nt);
    const double kst = detail::pair_sum(xs, is, xt, it, bank, false) / (ns * nt);
    const double v = kss + ktt - 2.0 * kst;
    return v > 0.0 ? v : 0.0;
}

/// Unbiased (U-statistic) MMD^2: diagonal terms dropped from the within-set sums.
/// May be negative.
inline double mmd2_unbiased(const SampleSet& xs, const SampleSet& xt, const KernelBank& bank) {
    detail::check_dims(xs, xt, "mmd2_unbiased");
    if (xs.size() < 2 || xt.size() < 2) throw insufficient_samples_error("mmd2_unbiased: need at least two rows per set");
    const auto is = detail::canonical_order(xs);
    const auto it = detail::canonical_order(xt);
    const double ns = static_cast<double>(xs.size());
    const double nt = static_cast<double>(xt.size());
    const double kss = detail::pair_sum(xs, is, xs, is, bank, true) / (ns * (ns - 1.0));
    const double ktt = detail::pair_sum(xt, it, xt, it, bank, true) / (nt * (nt - 1.0));
    const double kst = detail::pair_sum(xs, is, xt, it, bank, false) / (ns * nt);
    return kss + ktt - 2.0 * kst;
}

/// Linear-time estimator over consecutive row pairs (z_{2i-1}, z_{2i}).
/// Depends on row order.
inline double mmd2_linear(const SampleSet& xs, const SampleSet& xt, const KernelBank& bank) {
    detail::check_dims(xs, xt, "mmd2_linear");
    const std::size_t n = std::min(xs.size(), xt.size());
    if (n < 2) throw insufficient_samples_error("mmd2_linear: need at least two rows per set");
    const std::size_t m = n / 2;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto x1 = xs[2 * i], x2 = xs[2 * i + 1];
        const auto y1 = xt[2 * i], y2 = xt[2 * i + 1];
        total += bank.eval_sq(detail::sq_dist(x1, x2)) + bank.eval_sq(detail::sq_dist(y1, y2)) -
                 bank.eval_sq(detail::sq_dist(x1, y2)) - bank.eval_sq(detail::sq_dist(x2, y1));
    }
    return total / static_cast<double>(m);
}

struct MmdGradient {
    double value = 0.0;  ///< biased MMD^2 (clamped at 0), summed in row order
    Matrix source;       ///< d value / d xs, same shape as xs
    Matrix target;       ///< d value / d xt, same shape as xt
};

/// Biased MMD^2 together with its gradient w.r.t. every row of both sets.
/// The gradient is of the unclamped expression; dk/dx = k(x,y) (y - x) / sigma^2
/// per kernel. The value here is summed in row order rather than canonical
/// order, so it may differ from mmd2_biased in the last bits.
inline MmdGradient mmd2_biased_grad(const SampleSet& xs, const SampleSet& xt, const KernelBank& bank) {
    detail::check_dims(xs, xt, "mmd2_biased_grad");
    const std::size_t ns = xs.size(), nt = xt.size(), d = xs.dim();
    const double fns = static_cast<double>(ns), fnt = static_cast<double>(nt);
    const double cs = 2.0 / (fns * fns);
    const double ct = 2.0 / (fnt * fnt);
    const double cx = 2.0 / (fns * fnt);

    MmdGradient g{0.0, Matrix(ns, d), Matrix(nt, d)};
    const double self = bank.eval_sq(0.0);

    // Within one set: each unordered pair contributes to both rows.
    auto within = [&](const SampleSet& x, Matrix& grad, double coef) {
        double sum = 0.0;
        for (std::size_t a = 0; a < x.size(); ++a) {
            for (std::size_t b = a + 1; b < x.size(); ++b) {
                const auto xa = x[a], xb = x[b];
                const auto [k, c] = bank.eval_with_grad_factor(detail::sq_dist(xa, xb));
                sum += k;
                const double f = coef * c;
                auto ga = grad.row(a), gb = grad.row(b);
                for (std::size_t j = 0; j < d; ++j) {
                    const double v = f * (xb[j] - xa[j]);
                    ga[j] += v;
                    gb[j] -= v;
                }
            }
        }
        return 2.0 * sum + static_cast<double>(x.size()) * self;
    };
    const double kss = within(xs, g.source, cs);
    const double ktt = within(xt, g.target, ct);

    // Cross term enters with a minus sign.
    double kst = 0.0;
    for (std::size_t a = 0; a < ns; ++a) {
        const auto x = xs[a];
        auto gx = g.source.row(a);
        for (std::size_t b = 0; b < nt; ++b) {
            const auto y = xt[b];
            const auto [k, c] = bank.eval_with_grad_factor(detail::sq_dist(x, y));
            kst += k;
            const double f = cx * c;
            auto gy = g.target.row(b);
            for (std::size_t j = 0; j < d; ++j) {
                const double v = f * (y[j] - x[j]);
                gx[j] -= v;
                gy[j] += v;
            }
        }
    }
    const double v = kss / (fns * fns) + ktt / (fnt * fnt) - 2.0 * (kst / (fns * fnt));
    g.value = v > 0.0 ? v : 0.0;
    return g;
}

/// Permutation two-sample test on the unbiased statistic. Returns
/// p = (1 + #{permuted >= observed}) / (n_perms + 1).
inline double permutation_test(const SampleSet& xs, const SampleSet& xt, const KernelBank& bank, std::size_t n_perms,
                               std::uint64_t seed) {
    detail::check_dims(xs, xt, "permutation_test");
    if (xs.size() < 2 || xt.size() < 2) throw insufficient_samples_error("permutation_test: need at least two rows per set");
    if (n_perms < 99) throw invalid_argument("permutation_test: n_perms must be at least 99");

    const std::size_t ns = xs.size(), nt = xt.size(), n = ns + nt;
    Matrix gram(n, n);
    auto row_of = [&](std::size_t i) { return i < ns ? xs[i] : xt[i - ns]; };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) gram(i, j) = gram(j, i) = bank.eval_sq(detail::sq_dist(row_of(i), row_of(j)));

    // label[i] == 0 -> source side.
    std::vector<std::uint8_t> label(n, 1);
    std::fill(label.begin(), label.begin() + static_cast<std::ptrdiff_t>(ns), 0);
    const double fs = 1.0 / (static_cast<double>(ns) * static_cast<double>(ns - 1));
    const double ft = 1.0 / (static_cast<double>(nt) * static_cast<double>(nt - 1));
    const double fx = 2.0 / (static_cast<double>(ns) * static_cast<double>(nt));
    auto statistic = [&]() {
        double ss = 0.0, tt = 0.0, st = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double k = gram(i, j);
                if (label[i] == 0 && label[j] == 0) ss += k;
                else if (label[i] == 1 && label[j] == 1) tt += k;
                else if (label[i] == 0) st += k;
            }
        }
        return ss * fs + tt * ft - st * fx;
    };

    const double observed = statistic();
    Rng rng(seed);
    std::size_t exceed = 0;
    for (std::size_t p = 0; p < n_perms; ++p) {
        rng.shuffle(label);
        if (statistic() >= observed) ++exceed;
    }
    return static_cast<double>(1 + exceed) / static_cast<double>(n_perms + 1);
}

/// Normalized positive parts of per-kernel discrepancies; uniform when none is positive.
inline std::vector<double> weights_from_discrepancies(const std::vector<double>& per_kernel) {
    std::vector<double> w(per_kernel.size());
    double total = 0.0;
    for (std::size_t u = 0; u < per_kernel.size(); ++u) {
        w[u] = std::max(0.0, per_kernel[u]);
        total += w[u];
    }
    if (!(total > 0.0)) return std::vector<double>(per_kernel.size(), 1.0 / static_cast<double>(per_kernel.size()));
    for (auto& v : w) v /= total;
    return w;
}

/// Weights proportional to the positive part of each single-kernel unbiased
/// MMD^2. A heuristic stand-in for power-optimal kernel selection.
inline KernelBank heuristic_kernel_weights(const SampleSet& xs, const SampleSet& xt, const std::vector<double>& bandwidths) {
    std::vector<double> per_kernel(bandwidths.size());
    for (std::size_t u = 0; u < bandwidths.size(); ++u)
        per_kernel[u] = mmd2_unbiased(xs, xt, KernelBank::single(bandwidths[u]));
    return KernelBank(bandwidths, weights_from_discrepancies(per_kernel));
}

}  // namespace dapol::mmd
