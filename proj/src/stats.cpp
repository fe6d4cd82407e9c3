#include "vigil/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace vigil::stats {

namespace {

void check_groups(const GroupedSamples& samples) {
    if (samples.size() < 2) throw std::invalid_argument("need at least two groups");
    std::size_t n = 0;
    for (const auto& [label, values] : samples) {
        if (values.empty()) throw std::invalid_argument("group '" + label + "' is empty");
        n += values.size();
    }
    if (n <= samples.size()) throw std::invalid_argument("need more observations than groups");
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// ---- adaptive Gauss-Kronrod 7/15 -------------------------------------------

constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename F>
double gk_adaptive(const F& f, double a, double b, double tol, int depth = 0) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const double fc = f(c);
    double kron = kWgk[7] * fc;
    double gauss = kWg[3] * fc;
    for (int i = 0; i < 7; ++i) {
        const double fsum = f(c - h * kXgk[i]) + f(c + h * kXgk[i]);
        kron += kWgk[i] * fsum;
        if (i % 2 == 1) gauss += kWg[i / 2] * fsum;
    }
    kron *= h;
    gauss *= h;
    if (std::abs(kron - gauss) <= tol || depth >= 40) return kron;
    return gk_adaptive(f, a, c, 0.5 * tol, depth + 1) + gk_adaptive(f, c, b, 0.5 * tol, depth + 1);
}

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double norm_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// 1 - W(w): probability that the range of k standard normals exceeds w.
double range_sf(double w, std::size_t k) {
    if (w <= 0.0) return 1.0;
    const double km1 = static_cast<double>(k - 1);
    auto integrand = [&](double z) {
        const double upper = norm_cdf(z);
        // Phi(z) - Phi(z - w), taken from whichever tail keeps precision.
        const double band = z - 0.5 * w > 0.0 ? norm_sf(z - w) - norm_sf(z) : upper - norm_cdf(z - w);
        return norm_pdf(z) * (std::pow(upper, km1) - std::pow(std::max(band, 0.0), km1));
    };
    constexpr double lim = 8.5;
    const double tol = 1e-13;
    double total = gk_adaptive(integrand, -lim, 0.0, tol) + gk_adaptive(integrand, 0.0, lim, tol);
    return std::clamp(static_cast<double>(k) * total, 0.0, 1.0);
}

}  // namespace

// ---- F distribution ----------------------------------------------------------

namespace {

double beta_cf(double a, double b, double x) {
    constexpr int max_iter = 10000;
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(log_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
    return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double d1, double d2) {
    if (std::isinf(f)) return 0.0;
    if (f <= 0.0) return 1.0;
    return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

AnovaResult anova_oneway(const GroupedSamples& samples) {
    check_groups(samples);
    std::size_t n = 0;
    double grand = 0.0;
    for (const auto& [_, v] : samples) {
        for (double x : v) grand += x;
        n += v.size();
    }
    grand /= static_cast<double>(n);
    AnovaResult r;
    for (const auto& [_, v] : samples) {
        const double m = mean_of(v);
        r.ss_between += static_cast<double>(v.size()) * (m - grand) * (m - grand);
        for (double x : v) r.ss_within += (x - m) * (x - m);
    }
    r.df_between = samples.size() - 1;
    r.df_within = n - samples.size();
    r.ms_between = r.ss_between / static_cast<double>(r.df_between);
    r.ms_within = r.ss_within / static_cast<double>(r.df_within);
    if (r.ms_within == 0.0) {
        if (r.ms_between == 0.0) throw std::domain_error("F undefined: no variance within or between groups");
        r.f_stat = std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        return r;
    }
    r.f_stat = r.ms_between / r.ms_within;
    r.p_value = f_upper_tail(r.f_stat, static_cast<double>(r.df_between), static_cast<double>(r.df_within));
    return r;
}

// ---- studentized range ----------------------------------------------------------

double tukey_sf(double q, std::size_t k, double df) {
    if (k < 2) throw std::invalid_argument("studentized range: k must be >= 2");
    if (df < 0.0) throw std::invalid_argument("studentized range: df must be positive");
    if (q <= 0.0) return 1.0;
    if (df == 0.0 || std::isinf(df)) return range_sf(q, k);

    const double half = 0.5 * df;
    const double log_norm = half * std::log(df) - std::lgamma(half) - (half - 1.0) * std::numbers::ln2;
    auto integrand = [&](double s) {
        if (s <= 0.0) return 0.0;
        const double log_density = log_norm + (df - 1.0) * std::log(s) - half * s * s;
        return std::exp(log_density) * range_sf(q * s, k);
    };
    const double spread = 1.0 / std::sqrt(2.0 * df);
    const double lo = std::max(0.0, 1.0 - 14.0 * spread);
    const double hi = std::max(1.0 + 14.0 * spread, 9.5 / std::sqrt(df));
    const double mode = std::sqrt(std::max(df - 1.0, 0.0) / df);
    const double mid = std::clamp(mode, lo, hi);
    double total = 0.0;
    if (mid > lo) total += gk_adaptive(integrand, lo, mid, 1e-12);
    total += gk_adaptive(integrand, mid, hi, 1e-12);
    return std::clamp(total, 0.0, 1.0);
}

double ptukey(double q, std::size_t k, double df) { return 1.0 - tukey_sf(q, k, df); }

double qtukey(double p, std::size_t k, double df) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("qtukey: p must lie in (0, 1)");
    const double target = 1.0 - p;
    double lo = 0.0, hi = 8.0;
    while (tukey_sf(hi, k, df) > target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw std::domain_error("qtukey: quantile out of range");
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        (tukey_sf(mid, k, df) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

TukeyResult tukey_hsd(const GroupedSamples& samples, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("tukey_hsd: alpha must lie in (0, 1)");
    const AnovaResult anova = anova_oneway(samples);
    TukeyResult r;
    r.k = samples.size();
    r.df_within = anova.df_within;
    r.ms_within = anova.ms_within;
    r.alpha = alpha;
    const auto df = static_cast<double>(r.df_within);
    r.q_critical = qtukey(1.0 - alpha, r.k, df);
    for (auto i = samples.begin(); i != samples.end(); ++i) {
        for (auto j = std::next(i); j != samples.end(); ++j) {
            TukeyPair p;
            p.a = i->first;
            p.b = j->first;
            p.mean_diff = mean_of(i->second) - mean_of(j->second);
            const double se = std::sqrt(0.5 * r.ms_within *
                                        (1.0 / static_cast<double>(i->second.size()) +
                                         1.0 / static_cast<double>(j->second.size())));
            if (se == 0.0) {
                p.q = p.mean_diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
                p.p_value = p.mean_diff == 0.0 ? 1.0 : 0.0;
            } else {
                p.q = std::abs(p.mean_diff) / se;
                p.p_value = tukey_sf(p.q, r.k, df);
            }
            p.significant = p.p_value < alpha;
            r.pairs.push_back(std::move(p));
        }
    }
    return r;
}

// ---- fits ----------------------------------------------------------------------------------

FitResult linear_regression(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("linear_regression: x and y differ in length");
    if (x.size() < 2) throw std::invalid_argument("linear_regression: need at least two points");
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
        throw std::invalid_argument("linear_regression: x is constant");
    }
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd design(n, 2);
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
    design.col(0) = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
    design.col(1).setOnes();
    const Eigen::Vector2d beta = design.colPivHouseholderQr().solve(yv);
    const Eigen::VectorXd residual = yv - design * beta;

    FitResult r;
    r.slope = beta(0);
    r.intercept = beta(1);
    r.n = x.size();
    r.ss_res = residual.squaredNorm();
    r.ss_tot = (yv.array() - yv.mean()).matrix().squaredNorm();
    r.max_abs_residual = residual.cwiseAbs().maxCoeff();
    r.r_squared = r.ss_tot == 0.0 ? 0.0 : std::clamp(1.0 - r.ss_res / r.ss_tot, 0.0, 1.0);
    return r;
}

PowerLawFit power_law_fit(const std::map<int, double>& hist) {
    std::vector<double> lx, ly;
    PowerLawFit out;
    for (const auto& [level, count] : hist) {
        if (level <= 0) throw std::invalid_argument("power_law_fit: severity levels must be positive");
        if (!(count > 0.0)) continue;
        lx.push_back(std::log(static_cast<double>(level)));
        ly.push_back(std::log(count));
        out.levels_used.push_back(level);
    }
    if (lx.size() < 2) throw std::invalid_argument("power_law_fit: need at least two levels with positive counts");
    const FitResult line = linear_regression(lx, ly);
    out.alpha = -line.slope;
    out.k = std::exp(line.intercept);
    out.r_squared = line.r_squared;
    return out;
}

// ---- descriptive -----------------------------------------------------------------------------

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("histogram: bins must be >= 1");
    Histogram h{lo, hi, std::vector<std::uint64_t>(bins, 0)};
    const double width = hi - lo;
    for (double v : values) {
        std::size_t idx = 0;
        if (width > 0.0) {
            const double pos = std::floor((v - lo) / width * static_cast<double>(bins));
            idx = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
        }
        ++h.counts[idx];
    }
    return h;
}

double nearest_rank(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("nearest_rank: empty input");
    const auto n = static_cast<double>(sorted.size());
    const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(p / 100.0 * n)));
    return sorted[std::min(rank, sorted.size()) - 1];
}

DistributionSummary summarize_distribution(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("summarize_distribution: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    DistributionSummary s;
    s.n = sorted.size();
    for (double v : sorted) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    s.min = sorted.front();
    s.max = sorted.back();
    s.p50 = nearest_rank(sorted, 50.0);
    s.p95 = nearest_rank(sorted, 95.0);
    s.bins = histogram(sorted, s.min, s.max);
    return s;
}

}  // namespace vigil::stats
