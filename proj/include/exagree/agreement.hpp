#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exagree/error.hpp"
#include "exagree/explanation.hpp"

namespace exagree {

/// Tie-aware Kendall tau_b, computed in O(n log n) with merge-sort discordance
/// counting. Returns 0 when either vector is entirely tied (zero denominator).
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

/// Tau_a: (concordant - discordant) / (n choose 2), no tie correction.
double kendall_tau_a(const std::vector<double>& a, const std::vector<double>& b);

/// Pearson on average ranks (ties averaged). Empty when either rank vector is
/// constant, which makes the correlation undefined.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Average ranks (1-based, ties share their mean rank).
std::vector<double> average_ranks(const std::vector<double>& v);

/// Fixed k when k > 0, otherwise ceil(fraction * n).
struct TopkSpec {
  int k = 0;
  double fraction = 0.0;
};

/// |top_k(a) intersect top_k(b)| / k. Ties at the k boundary break toward the
/// earliest token position, so the selection is deterministic.
double topk_overlap(const std::vector<double>& a, const std::vector<double>& b,
                    const TopkSpec& spec);

enum class Correlation { kendall, kendall_a, spearman, pearson, topk };

Correlation correlation_from_string(const std::string& name);
std::string correlation_to_string(Correlation c);

struct AgreementOptions {
  Correlation correlation = Correlation::kendall;
  TopkSpec topk;
  bool magnitude = false;  // correlate |score| instead of raw signed scores
};

/// Applies the configured statistic; empty for undefined correlations.
std::optional<double> correlate(const AgreementOptions& opts, const std::vector<double>& a,
                                const std::vector<double>& b);

/// Symmetric method x method table of per-instance correlation statistics.
/// Diagonal cells are 1 (mean) and 0 (std) by definition. `excluded` counts
/// per-instance correlations that were undefined and left out of the mean.
struct AgreementMatrix {
  std::vector<std::string> methods;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd stddev;  // population standard deviation
  Eigen::MatrixXi used;
  Eigen::MatrixXi excluded;
};

AgreementMatrix agreement_matrix(const std::vector<std::map<std::string, Explanation>>& instances,
                                 const std::vector<std::string>& methods,
                                 const AgreementOptions& opts = {});

/// Kendall tau between an explanation and a reference ranking given as
/// implied per-token scores. Reference rankings order tokens by importance
/// magnitude, so the explanation enters as |score| unless `magnitude` is
/// false.
double ground_truth_alignment(const Explanation& explanation,
                              const std::vector<double>& reference_scores, bool magnitude = true);

/// Mean correlation over unordered method pairs for one instance's
/// explanations; empty when no pair is defined.
std::optional<double> mean_pairwise_correlation(const std::map<std::string, Explanation>& instance,
                                                const AgreementOptions& opts = {});

/// CSV with methods as header row and column. Cells hold the mean (or std)
/// formatted to round-trip exactly; cells with no defined instances are empty.
std::string agreement_csv(const AgreementMatrix& m, bool std_dev);

}  // namespace exagree
