#pragma once

// Central finite-difference checks of the backward passes on small random
// instances. Used by the `gradcheck` CLI command and the acceptance suite.

#include <string>
#include <vector>

namespace tetsculpt {

struct GradcheckResult {
    std::string module;
    int seeds = 0;
    int probes = 0;              // gradient entries compared over all seeds
    double max_rel_error = 0.0;  // worst per-seed ||analytic - fd|| / ||fd||
    double tolerance = 0.0;
    bool passed = false;
};

/// field, mt, render, shading, lightness, guidance
const std::vector<std::string>& gradcheck_modules();

/// Throws ContractError for an unknown module.
GradcheckResult gradcheck(const std::string& module, int seeds = 20, double tolerance = 1e-5);

}  // namespace tetsculpt
