#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vigil::stats {

using GroupedSamples = std::map<std::string, std::vector<double>>;

struct AnovaResult {
    double f_stat = 0.0;
    std::size_t df_between = 0;
    std::size_t df_within = 0;
    double ss_between = 0.0;
    double ss_within = 0.0;
    double ms_between = 0.0;
    double ms_within = 0.0;
    double p_value = 1.0;
};

// Throws std::invalid_argument for fewer than two groups, an empty group or
// N <= k, and std::domain_error when both sums of squares vanish (F undefined).
// Zero within-group variance with group differences gives F = +inf, p = 0.
AnovaResult anova_oneway(const GroupedSamples& samples);

// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
double incomplete_beta(double a, double b, double x);
// P(F > f) for F(d1, d2).
double f_upper_tail(double f, double d1, double d2);

// Studentized range distribution of k means with df degrees of freedom for
// the variance estimate (df = 0 selects df = infinity). The CDF is the
// double integral
//   P(Q <= q) = int_0^inf f_s(s) W(q s) ds,
//   W(w) = k int phi(z) [Phi(z) - Phi(z - w)]^(k-1) dz,
// with f_s the density of sqrt(chi2_df / df), evaluated by adaptive
// Gauss-Kronrod (7/15) quadrature.
double ptukey(double q, std::size_t k, double df);
// Upper tail 1 - ptukey, computed without the cancellation.
double tukey_sf(double q, std::size_t k, double df);
// q with ptukey(q) = p, by bisection; |error| < 1e-9.
double qtukey(double p, std::size_t k, double df);

struct TukeyPair {
    std::string a;
    std::string b;
    double mean_diff = 0.0;  // mean(a) - mean(b)
    double q = 0.0;
    double p_value = 1.0;
    bool significant = false;
};

struct TukeyResult {
    std::size_t k = 0;
    std::size_t df_within = 0;
    double ms_within = 0.0;
    double alpha = 0.05;
    double q_critical = 0.0;
    std::vector<TukeyPair> pairs;  // label order, a < b
};

// Tukey-Kramer: q = |mean_i - mean_j| / sqrt(ms_within / 2 * (1/n_i + 1/n_j)).
TukeyResult tukey_hsd(const GroupedSamples& samples, double alpha = 0.05);

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
    double ss_res = 0.0;
    double ss_tot = 0.0;
    double max_abs_residual = 0.0;
};

// Ordinary least squares y = slope * x + intercept. R^2 = 1 - ss_res/ss_tot,
// clamped to [0, 1]; constant y gives R^2 = 0. Throws std::invalid_argument on
// length mismatch, fewer than two points, or constant x.
FitResult linear_regression(std::span<const double> x, std::span<const double> y);

struct PowerLawFit {
    double k = 0.0;
    double alpha = 0.0;  // N(S) = k * S^(-alpha)
    double r_squared = 0.0;  // of the log-log line
    std::vector<int> levels_used;
};

// Log-log least squares over levels with positive counts; zero bins are
// skipped. Throws std::invalid_argument with fewer than two positive bins or a
// non-positive level.
PowerLawFit power_law_fit(const std::map<int, double>& histogram);

inline constexpr std::size_t kHistogramBins = 20;

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint64_t> counts;
};

// Equal-width bins over [lo, hi]; values equal to hi land in the last bin,
// values outside are clamped. lo == hi puts everything in bin 0.
Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins = kHistogramBins);

struct DistributionSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample (n - 1); 0 when n == 1
    double min = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
    double max = 0.0;
    Histogram bins;
};

// Nearest-rank percentile of sorted data: element ceil(p/100 * n), 1-based.
double nearest_rank(std::span<const double> sorted, double p);

// Throws std::invalid_argument on empty input.
DistributionSummary summarize_distribution(std::span<const double> values);

}  // namespace vigil::stats
