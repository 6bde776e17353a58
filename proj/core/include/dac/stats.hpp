#pragma once

// Small statistics helpers shared by property tests and the acceptance
// suite: chi-square independence, two-sample Kolmogorov-Smirnov, AUROC.

#include <vector>

namespace dac {

// Upper regularized incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
double gamma_q(double a, double x);

// Survival function of the chi-square distribution with `dof` degrees of
// freedom, i.e. the p-value of an observed statistic.
double chi_square_pvalue(double statistic, int dof);

// Pearson chi-square test of independence on a contingency table
// counts[row][col]. Rows or columns with zero marginals are dropped before
// computing the statistic. Returns {statistic, dof, pvalue}.
struct ChiSquareResult {
    double statistic = 0.0;
    int dof = 0;
    double pvalue = 1.0;
};
ChiSquareResult chi_square_independence(const std::vector<std::vector<long long>>& counts);

// Two-sample Kolmogorov-Smirnov statistic sup |F1 - F2|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

// Area under the ROC curve for binary labels; ties in score contribute 1/2.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

double mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

// One-sided sign test p-value for `successes` out of `n` Bernoulli(1/2)
// trials: P(X >= successes).
double sign_test_pvalue(int successes, int n);

}  // namespace dac
