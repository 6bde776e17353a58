// Acceptance suite: one numbered criterion per function, each printing a
// single PASS/FAIL line. Run all (no arguments) or one via --criterion N.

#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "criteria.hpp"

int main(int argc, char** argv) {
    using dac::acceptance::CriterionResult;
    std::vector<std::function<CriterionResult()>> criteria = {
        dac::acceptance::criterion1_formula_oracles,
        dac::acceptance::criterion2_gradient_checks,
        dac::acceptance::criterion3_identity_invariants,
        dac::acceptance::criterion4_balance_properties,
        dac::acceptance::criterion5_relative_ordering,
        dac::acceptance::criterion6_adaptation_trend,
        dac::acceptance::criterion7_null_confounding,
        dac::acceptance::criterion8_alpha_sensitivity,
    };

    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[i + 1]);
        }
    }

    bool all_pass = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (only != 0 && only != number) continue;
        CriterionResult result = criteria[i]();
        std::printf("CRITERION %d [%s]: %s — %s\n", number, result.name.c_str(),
                    result.pass ? "PASS" : "FAIL", result.details.c_str());
        std::fflush(stdout);
        all_pass = all_pass && result.pass;
    }
    return all_pass ? 0 : 1;
}
