#include "exagree/heatmap.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace exagree {

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int prec) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

}  // namespace

std::string heatmap_html(const std::map<std::string, Explanation>& explanations,
                         const AgreementOptions& opts) {
  if (explanations.empty()) throw ContractError("heatmap: no explanations");
  const std::size_t n = explanations.begin()->second.tokens.size();
  for (const auto& [name, e] : explanations) {
    if (e.tokens.size() != n || e.scores.size() != n) {
      throw ContractError("heatmap: method " + name + " is not aligned with the others");
    }
  }

  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<style>\n"
     << "body { font-family: sans-serif; }\n"
     << "table { border-collapse: collapse; }\n"
     << "td, th { border: 1px solid #ccc; padding: 4px 8px; text-align: center; }\n"
     << "th.method { text-align: right; }\n"
     << "caption { caption-side: bottom; padding-top: 8px; font-size: 90%; }\n"
     << "</style>\n</head>\n<body>\n<table>\n";

  os << "<caption>";
  const auto mean_tau = mean_pairwise_correlation(explanations, opts);
  if (explanations.size() > 1 && mean_tau.has_value()) {
    os << "Mean pairwise " << correlation_to_string(opts.correlation)
       << " across methods for this example: " << fixed(*mean_tau, 2);
  } else {
    os << "Single method; no pairwise correlation to report";
  }
  os << "</caption>\n";

  os << "<tr><th></th>";
  for (const std::string& tok : explanations.begin()->second.tokens) {
    os << "<th>" << escape_html(tok) << "</th>";
  }
  os << "</tr>\n";

  for (const auto& [name, e] : explanations) {
    const double lo = *std::min_element(e.scores.begin(), e.scores.end());
    const double hi = *std::max_element(e.scores.begin(), e.scores.end());
    os << "<tr><th class=\"method\">" << escape_html(name) << "</th>";
    for (std::size_t i = 0; i < n; ++i) {
      const double intensity = hi > lo ? (e.scores[i] - lo) / (hi - lo) : 0.0;
      os << "<td style=\"background-color:rgba(16,78,139," << fixed(intensity, 4) << ")\">"
         << escape_html(e.tokens[i]) << "</td>";
    }
    os << "</tr>\n";
  }
  os << "</table>\n</body>\n</html>\n";
  return os.str();
}

void write_heatmap(const std::map<std::string, Explanation>& explanations, const std::string& path,
                   const AgreementOptions& opts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write heatmap: " + path);
  out << heatmap_html(explanations, opts);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace exagree
