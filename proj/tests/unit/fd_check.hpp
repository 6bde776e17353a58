#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance suites. The loss builder must construct a fresh tape on every
// call, return the scalar loss, and run backward() only when asked.

#include <cmath>
#include <functional>

#include "dac/autodiff.hpp"

namespace dac::testutil {

struct FdReport {
    double max_rel_error = 0.0;
    int checked_entries = 0;
};

// Entries below `ignore_below` sit at the central-difference round-off floor
// (eps * |loss| / step) and carry no signal; they are skipped.
inline FdReport fd_check(ad::ParameterStore& store,
                         const std::function<double(bool compute_grad)>& loss,
                         double step = 1e-5, double ignore_below = 1e-6) {
    store.zero_grad();
    loss(true);
    std::vector<ad::Mat> analytic;
    analytic.reserve(static_cast<std::size_t>(store.size()));
    for (int p = 0; p < store.size(); ++p) analytic.push_back(store.at(p).grad);

    FdReport report;
    for (int p = 0; p < store.size(); ++p) {
        ad::Mat& value = store.at(p).value;
        for (int i = 0; i < value.rows(); ++i) {
            for (int j = 0; j < value.cols(); ++j) {
                const double original = value(i, j);
                const double h = step * std::max(1.0, std::fabs(original));
                value(i, j) = original + h;
                const double up = loss(false);
                value(i, j) = original - h;
                const double down = loss(false);
                value(i, j) = original;
                const double fd = (up - down) / (2.0 * h);
                const double an = analytic[static_cast<std::size_t>(p)](i, j);
                const double scale = std::max(std::fabs(fd), std::fabs(an));
                if (scale < ignore_below) continue;
                report.max_rel_error = std::max(report.max_rel_error, std::fabs(fd - an) / scale);
                ++report.checked_entries;
            }
        }
    }
    return report;
}

inline ad::Mat random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    ad::Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    }
    return m;
}

}  // namespace dac::testutil
