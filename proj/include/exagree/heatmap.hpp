#pragma once

#include <map>
#include <string>

#include "exagree/agreement.hpp"
#include "exagree/explanation.hpp"

namespace exagree {

/// Static HTML heatmap: one row per method, one cell per token, fill
/// intensity min-max normalized within each row. The caption reports the
/// instance's mean pairwise correlation. Output bytes are a pure function of
/// the input.
std::string heatmap_html(const std::map<std::string, Explanation>& explanations,
                         const AgreementOptions& opts = {});

void write_heatmap(const std::map<std::string, Explanation>& explanations, const std::string& path,
                   const AgreementOptions& opts = {});

}  // namespace exagree
