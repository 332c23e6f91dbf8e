#pragma once

#include <map>
#include <string>
#include <vector>

#include "adreg/volume.hpp"

namespace adreg {

struct EvalRecord {
  std::string case_id;
  std::vector<double> landmark_tre_mm;  // per landmark pair
  double case_tre_mm = 0;               // RMS over the pairs
  double gland_dsc = 0;
  std::string mode;  // regularizer tag
};

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;  // disjoint patient-id sets
};

struct TreResult {
  std::vector<double> per_pair_mm;
  double rms_mm = 0;
};

/// Per pair: Euclidean distance between label centroids (mm); case value is
/// the root-mean-square over pairs.
TreResult tre(const std::vector<LabelMap>& warped_landmarks,
              const std::vector<LabelMap>& fixed_landmarks);

/// Dice similarity 2|A^B| / (|A|+|B|); inputs binarized at 0.5. Throws when
/// both masks are empty.
double dsc(const LabelMap& a, const LabelMap& b);

/// Deterministic patient-level k-fold split; fold sizes balanced within 1.
FoldPlan make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed);

struct WilcoxonResult {
  double statistic = 0;  // W+ = sum of ranks of positive differences
  double p_value = 0;    // two-sided
  int n_effective = 0;   // pairs after discarding zero differences
  bool exact = false;    // exact enumeration (n <= 25) vs normal approximation
};

/// Paired two-sided Wilcoxon signed-rank test, average ranks for ties, zero
/// differences discarded; exact null distribution for n <= 25, normal
/// approximation with tie correction beyond.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

/// Quartiles by linear interpolation of order statistics.
struct Quartiles {
  double q1 = 0, median = 0, q3 = 0;
};
Quartiles quartiles(std::vector<double> values);

/// "6.3 [3.4, 8.7]"-style cell.
std::string format_median_iqr(const Quartiles& q, int decimals = 1);

struct ModeSummary {
  std::string mode;
  Quartiles tre_case;      // over case-level TRE
  Quartiles tre_pairs;     // over all landmark pairs
  Quartiles dsc_q;
  double p_tre_vs_adversarial = -1;  // -1: not applicable
  double p_dsc_vs_adversarial = -1;
  int cases = 0;
};

struct Report {
  std::vector<ModeSummary> summaries;
  std::vector<EvalRecord> records;

  std::string render_table() const;
  std::string to_json() const;
  /// Writes report.json, report.txt, tre_boxplot.svg, dsc_boxplot.svg.
  std::vector<std::string> write(const std::string& dir) const;
};

/// Groups records by mode, computes median/quartile summaries and pairwise
/// Wilcoxon p-values against the adversarial mode (when present).
Report report(const std::vector<EvalRecord>& records);

/// Minimal SVG box plot (median, quartile box, whiskers to min/max).
std::string svg_boxplot(const std::string& title,
                        const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace adreg
