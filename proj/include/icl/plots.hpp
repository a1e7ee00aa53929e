#pragma once

#include <string>
#include <vector>

#include "icl/results.hpp"

namespace icl {

// Renders the requested plots ("accuracy_curve", "reliability",
// "idempotence_hist", "task_mass") as PNG files under `dir`.
void write_plots(const ResultBundle& bundle, const std::vector<std::string>& which,
                 const std::string& dir);

}  // namespace icl
