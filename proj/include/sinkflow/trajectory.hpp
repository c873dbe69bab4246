#pragma once

#include <vector>

#include "sinkflow/geometry.hpp"

namespace sinkflow {

/// Time-stamped record of a flow or SJKO run. All per-frame vectors have one
/// entry per recorded time; speed_norms[k] is the difference-quotient norm
/// ||b_k - b_{k-1}||_{H_c} / dt of the step ending at frame k (0 at k = 0).
struct FlowTrajectory {
    std::vector<double> times;
    std::vector<DiscreteMeasure> measures;
    std::vector<SphereEmbedding> states;  // Eulerian / flow runs only
    std::vector<double> energies;
    std::vector<PressureVector> pressures;
    std::vector<double> speed_norms;
    std::vector<double> hc_norm_residuals;  // | ||b||_{H_c} - 1 | per frame
    bool all_converged = true;

    std::size_t size() const { return times.size(); }
};

}  // namespace sinkflow
