#include "dac/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dac {

namespace {

// Lower regularized incomplete gamma P(a, x) by series expansion; valid for
// x < a + 1.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 500; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized incomplete gamma Q(a, x) by continued fraction
// (Lentz's algorithm); valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_q(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_q: requires a > 0 and x >= 0");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

double chi_square_pvalue(double statistic, int dof) {
    if (dof < 1) throw std::invalid_argument("chi_square_pvalue: dof must be >= 1");
    if (statistic <= 0.0) return 1.0;
    return gamma_q(0.5 * dof, 0.5 * statistic);
}

ChiSquareResult chi_square_independence(const std::vector<std::vector<long long>>& counts) {
    if (counts.empty() || counts.front().empty()) {
        throw std::invalid_argument("chi_square_independence: empty table");
    }
    const std::size_t cols = counts.front().size();
    std::vector<double> row_sum(counts.size(), 0.0), col_sum(cols, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < counts.size(); ++r) {
        if (counts[r].size() != cols) {
            throw std::invalid_argument("chi_square_independence: ragged table");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            row_sum[r] += static_cast<double>(counts[r][c]);
            col_sum[c] += static_cast<double>(counts[r][c]);
            total += static_cast<double>(counts[r][c]);
        }
    }
    if (total <= 0.0) throw std::invalid_argument("chi_square_independence: empty sample");

    int live_rows = 0, live_cols = 0;
    for (double s : row_sum) live_rows += s > 0.0;
    for (double s : col_sum) live_cols += s > 0.0;

    ChiSquareResult res;
    res.dof = (live_rows - 1) * (live_cols - 1);
    if (res.dof < 1) {
        res.pvalue = 1.0;
        return res;
    }
    for (std::size_t r = 0; r < counts.size(); ++r) {
        if (row_sum[r] <= 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) {
            if (col_sum[c] <= 0.0) continue;
            double expected = row_sum[r] * col_sum[c] / total;
            double diff = static_cast<double>(counts[r][c]) - expected;
            res.statistic += diff * diff / expected;
        }
    }
    res.pvalue = chi_square_pvalue(res.statistic, res.dof);
    return res;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::fabs(i / na - j / nb));
    }
    return d;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("auroc: size mismatch or empty input");
    }
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });

    // Rank-sum formulation with midranks for ties.
    std::vector<double> rank(scores.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0, rank_pos = 0.0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == 1) {
            pos += 1.0;
            rank_pos += rank[k];
        }
    }
    double neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("auroc: single-class labels");
    return (rank_pos - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_std: need at least 2 values");
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double sign_test_pvalue(int successes, int n) {
    if (n < 1 || successes < 0 || successes > n) {
        throw std::invalid_argument("sign_test_pvalue: invalid counts");
    }
    // P(X >= successes) for X ~ Binomial(n, 1/2).
    double p = 0.0;
    for (int k = successes; k <= n; ++k) {
        double log_c = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
        p += std::exp(log_c - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

}  // namespace dac
