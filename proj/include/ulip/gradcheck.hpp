#pragma once

#include <string>
#include <vector>

namespace ulip {

struct GradCheckEntry {
    std::string name;
    double rel_error = 0.0; // ||analytic - fd|| / max(||fd||, tiny)
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<GradCheckEntry> entries;
};

// Central-difference check (h = 1e-3) of the contrastive and combined
// losses against their backward pass, per input tensor and the
// temperature, across num_seeds random batches.
GradCheckReport gradcheck_losses(int num_seeds = 10, double h = 1e-3);

} // namespace ulip
