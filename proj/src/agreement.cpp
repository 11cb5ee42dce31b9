#include "exagree/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "exagree/util.hpp"

namespace exagree {

namespace {

void check_pair(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ContractError("correlation: length mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  if (a.size() < 2) throw ContractError("correlation: need at least 2 elements");
  for (const double v : a) {
    if (!std::isfinite(v)) throw ContractError("correlation: non-finite score");
  }
  for (const double v : b) {
    if (!std::isfinite(v)) throw ContractError("correlation: non-finite score");
  }
}

/// Merge sort counting strict inversions (pairs i < j with v[i] > v[j]).
long long count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                           std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<long long>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<long>(lo), buf.begin() + static_cast<long>(hi),
            v.begin() + static_cast<long>(lo));
  return inv;
}

struct KendallCounts {
  long long n0 = 0;  // all pairs
  long long n1 = 0;  // pairs tied in a
  long long n2 = 0;  // pairs tied in b
  long long n3 = 0;  // pairs tied in both
  long long discordant = 0;
};

KendallCounts kendall_counts(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    if (a[i] != a[j]) return a[i] < a[j];
    return b[i] < b[j];
  });

  KendallCounts c;
  c.n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;

  const auto tie_pairs = [](long long t) { return t * (t - 1) / 2; };
  long long run_a = 1, run_ab = 1;
  for (std::size_t i = 1; i < n; ++i) {
    const bool same_a = a[idx[i]] == a[idx[i - 1]];
    const bool same_ab = same_a && b[idx[i]] == b[idx[i - 1]];
    if (same_a) {
      ++run_a;
    } else {
      c.n1 += tie_pairs(run_a);
      run_a = 1;
    }
    if (same_ab) {
      ++run_ab;
    } else {
      c.n3 += tie_pairs(run_ab);
      run_ab = 1;
    }
  }
  c.n1 += tie_pairs(run_a);
  c.n3 += tie_pairs(run_ab);

  std::vector<double> b_sorted(n);
  for (std::size_t i = 0; i < n; ++i) b_sorted[i] = b[idx[i]];
  std::vector<double> buf(n);
  c.discordant = count_inversions(b_sorted, buf, 0, n);

  // b_sorted is now sorted; count ties in b from its runs
  long long run_b = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (b_sorted[i] == b_sorted[i - 1]) {
      ++run_b;
    } else {
      c.n2 += tie_pairs(run_b);
      run_b = 1;
    }
  }
  c.n2 += tie_pairs(run_b);
  return c;
}

}  // namespace

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  check_pair(a, b);
  const KendallCounts c = kendall_counts(a, b);
  const long long concordant_plus_discordant = c.n0 - c.n1 - c.n2 + c.n3;
  const long long numer = concordant_plus_discordant - 2 * c.discordant;  // C - D
  const double denom = std::sqrt(static_cast<double>(c.n0 - c.n1)) *
                       std::sqrt(static_cast<double>(c.n0 - c.n2));
  if (denom == 0.0) return 0.0;  // one vector entirely tied
  return static_cast<double>(numer) / denom;
}

double kendall_tau_a(const std::vector<double>& a, const std::vector<double>& b) {
  check_pair(a, b);
  const KendallCounts c = kendall_counts(a, b);
  const long long numer = c.n0 - c.n1 - c.n2 + c.n3 - 2 * c.discordant;
  return static_cast<double>(numer) / static_cast<double>(c.n0);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  check_pair(a, b);
  const double n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
  const double r = cov / (std::sqrt(var_a) * std::sqrt(var_b));
  return std::clamp(r, -1.0, 1.0);
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  check_pair(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

double topk_overlap(const std::vector<double>& a, const std::vector<double>& b,
                    const TopkSpec& spec) {
  check_pair(a, b);
  const int n = static_cast<int>(a.size());
  int k = spec.k > 0 ? spec.k : static_cast<int>(std::ceil(spec.fraction * n));
  k = std::min(k, n);
  if (k < 1) throw ConfigError("topk_overlap: effective k must be >= 1");

  const auto top_set = [k, n](const std::vector<double>& v) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) {
      if (v[static_cast<std::size_t>(i)] != v[static_cast<std::size_t>(j)]) {
        return v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(j)];
      }
      return i < j;  // boundary ties break toward the earliest position
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };

  std::vector<int> ta = top_set(a), tb = top_set(b);
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<int> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

Correlation correlation_from_string(const std::string& name) {
  if (name == "kendall") return Correlation::kendall;
  if (name == "kendall_a") return Correlation::kendall_a;
  if (name == "spearman") return Correlation::spearman;
  if (name == "pearson") return Correlation::pearson;
  if (name == "topk") return Correlation::topk;
  throw ConfigError("unknown correlation kind: " + name);
}

std::string correlation_to_string(Correlation c) {
  switch (c) {
    case Correlation::kendall: return "kendall";
    case Correlation::kendall_a: return "kendall_a";
    case Correlation::spearman: return "spearman";
    case Correlation::pearson: return "pearson";
    case Correlation::topk: return "topk";
  }
  return "kendall";
}

std::optional<double> correlate(const AgreementOptions& opts, const std::vector<double>& a,
                                const std::vector<double>& b) {
  std::vector<double> xa = a, xb = b;
  if (opts.magnitude) {
    for (double& v : xa) v = std::fabs(v);
    for (double& v : xb) v = std::fabs(v);
  }
  switch (opts.correlation) {
    case Correlation::kendall: return kendall_tau(xa, xb);
    case Correlation::kendall_a: return kendall_tau_a(xa, xb);
    case Correlation::spearman: return spearman(xa, xb);
    case Correlation::pearson: return pearson(xa, xb);
    case Correlation::topk: return topk_overlap(xa, xb, opts.topk);
  }
  return std::nullopt;
}

AgreementMatrix agreement_matrix(const std::vector<std::map<std::string, Explanation>>& instances,
                                 const std::vector<std::string>& methods,
                                 const AgreementOptions& opts) {
  if (methods.empty()) throw ContractError("agreement_matrix: no methods");
  const int m = static_cast<int>(methods.size());
  AgreementMatrix out;
  out.methods = methods;
  out.mean = Eigen::MatrixXd::Zero(m, m);
  out.stddev = Eigen::MatrixXd::Zero(m, m);
  out.used = Eigen::MatrixXi::Zero(m, m);
  out.excluded = Eigen::MatrixXi::Zero(m, m);

  for (std::size_t inst = 0; inst < instances.size(); ++inst) {
    std::size_t aligned = 0;
    for (const std::string& name : methods) {
      const auto it = instances[inst].find(name);
      if (it == instances[inst].end()) {
        throw ContractError("instance " + std::to_string(inst) + " is missing method " + name);
      }
      if (aligned == 0) aligned = it->second.scores.size();
      if (it->second.scores.size() != aligned) {
        throw ContractError("instance " + std::to_string(inst) + ": method " + name + " has " +
                            std::to_string(it->second.scores.size()) + " scores, expected " +
                            std::to_string(aligned));
      }
    }
  }

  std::vector<std::vector<std::vector<double>>> cells(
      static_cast<std::size_t>(m), std::vector<std::vector<double>>(static_cast<std::size_t>(m)));
  for (const auto& inst : instances) {
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) {
        const auto& ei = inst.at(methods[static_cast<std::size_t>(i)]);
        const auto& ej = inst.at(methods[static_cast<std::size_t>(j)]);
        const auto v = correlate(opts, ei.scores, ej.scores);
        if (v.has_value()) {
          cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].push_back(*v);
        } else {
          out.excluded(i, j) += 1;
          out.excluded(j, i) += 1;
        }
      }
    }
  }

  for (int i = 0; i < m; ++i) {
    out.mean(i, i) = 1.0;
    out.stddev(i, i) = 0.0;
    out.used(i, i) = static_cast<int>(instances.size());
    for (int j = i + 1; j < m; ++j) {
      const auto& vals = cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      out.used(i, j) = out.used(j, i) = static_cast<int>(vals.size());
      if (vals.empty()) continue;
      const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                          static_cast<double>(vals.size());
      double var = 0.0;
      for (const double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size());  // population variance
      out.mean(i, j) = out.mean(j, i) = mean;
      out.stddev(i, j) = out.stddev(j, i) = std::sqrt(var);
    }
  }
  return out;
}

double ground_truth_alignment(const Explanation& explanation,
                              const std::vector<double>& reference_scores, bool magnitude) {
  if (explanation.scores.size() != reference_scores.size()) {
    throw ContractError("ground_truth_alignment: explanation has " +
                        std::to_string(explanation.scores.size()) + " scores, reference has " +
                        std::to_string(reference_scores.size()));
  }
  std::vector<double> s = explanation.scores;
  if (magnitude) {
    for (double& v : s) v = std::fabs(v);
  }
  return kendall_tau(s, reference_scores);
}

std::optional<double> mean_pairwise_correlation(const std::map<std::string, Explanation>& instance,
                                                const AgreementOptions& opts) {
  double sum = 0.0;
  int count = 0;
  for (auto i = instance.begin(); i != instance.end(); ++i) {
    for (auto j = std::next(i); j != instance.end(); ++j) {
      const auto v = correlate(opts, i->second.scores, j->second.scores);
      if (v.has_value()) {
        sum += *v;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

std::string agreement_csv(const AgreementMatrix& m, bool std_dev) {
  std::ostringstream os;
  os << "method";
  for (const std::string& name : m.methods) os << "," << name;
  os << "\n";
  const Eigen::MatrixXd& table = std_dev ? m.stddev : m.mean;
  for (int i = 0; i < table.rows(); ++i) {
    os << m.methods[static_cast<std::size_t>(i)];
    for (int j = 0; j < table.cols(); ++j) {
      os << ",";
      if (m.used(i, j) > 0) os << format_double(table(i, j));
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace exagree
