#ifndef MESEG_METRICS_HPP
#define MESEG_METRICS_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "meseg/losses.hpp"
#include "meseg/volume.hpp"

namespace meseg {

// Calibration ----------------------------------------------------------------

// Which probability is binned and what "accuracy" means per bin:
//   positive_prob: confidence is the predicted foreground probability and
//     accuracy is the fraction of positive labels (reliability-plot reading).
//   max_prob: confidence is max(p, 1-p) and accuracy is the fraction of
//     correctly classified samples at threshold 0.5.
enum class EceConvention { positive_prob, max_prob };

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // conf(B_m); 0 for empty bins
  double fraction_positive = 0.0;  // acc(B_m); 0 for empty bins
};

// Fixed-width bins [0,0.1), ..., [0.9,1.0] (last bin closed) plus the
// weighted ECE over them.
struct CalibrationTable {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  EceConvention convention = EceConvention::positive_prob;
};

CalibrationTable ece(const std::vector<double>& probs,
                     const std::vector<int>& labels, int num_bins = 10,
                     EceConvention convention = EceConvention::positive_prob);

struct ReliabilityPoint {
  double confidence = 0.0;
  double fraction_positive = 0.0;
  std::size_t count = 0;
};

// One point per nonempty bin; on the diagonal iff that bin is calibrated.
std::vector<ReliabilityPoint> reliability_points(const CalibrationTable& t);

// Discrimination -------------------------------------------------------------

// Dice = 2|G ^ P| / (|G| + |P|); both-empty returns 1 by convention.
double dice(const BinaryMask& g, const BinaryMask& p);

// Symmetric Hausdorff distance in mm between mask boundaries, Euclidean
// with anisotropic spacing. percentile < 100 applies the nearest-rank
// percentile to each directed distance pool before taking the max.
// Throws if either mask is empty. Computed with an exact separable
// distance transform.
double hausdorff(const BinaryMask& g, const BinaryMask& p,
                 double percentile = 100.0);

// Uncertainty protocols ------------------------------------------------------

// Mean H_b over voxels the model calls foreground (y > t); empty result
// when no voxel qualifies.
std::optional<double> mean_foreground_entropy(const ProbMap& y,
                                              double t = 0.5);

double pearson_r(const std::vector<double>& xs, const std::vector<double>& ys);

struct MannWhitneyResult {
  double u = 0.0;       // U statistic for the first group, ties counted 1/2
  double p_two_sided = 1.0;
};

// U by midranks. The two-sided p is exact (full permutation distribution)
// when the pooled size is small enough to enumerate, and otherwise uses the
// normal approximation with tie-corrected variance and continuity
// correction.
MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b);

// Outcome analysis -----------------------------------------------------------

enum class Outcome { tp = 0, tn = 1, fp = 2, fn = 3 };

struct EntropyStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

struct OutcomeBreakdown {
  std::array<std::size_t, 4> counts{};  // indexed by Outcome
  std::array<std::optional<EntropyStats>, 4> entropy;  // absent when empty
};

// Assigns every voxel to exactly one of TP/TN/FP/FN at threshold t and
// summarizes the entropy map per class.
OutcomeBreakdown confusion_outcomes(const ProbMap& y, const BinaryMask& gt,
                                    double t = 0.5);

// Per-scan evaluation row ----------------------------------------------------

struct ScanReport {
  std::string scan_id;
  std::string domain;  // "id" or "ood"
  double dice = 0.0;
  std::optional<double> hausdorff_mm;
  std::optional<double> mean_fg_entropy;
  double lesion_load_ml = 0.0;
};

// Groups {< lo, [lo, hi], > hi} mL by lesion load; boundary values fall in
// the middle (closed) group.
std::array<std::vector<ScanReport>, 3> stratify_by_lesion_load(
    const std::vector<ScanReport>& reports, double lo_ml = 5.0,
    double hi_ml = 15.0);

// Quantile with linear interpolation between order statistics (the common
// "type 7" rule); q in [0,1]. Sorts a copy of the input.
double quantile(std::vector<double> values, double q);

const char* to_string(EceConvention c);

}  // namespace meseg

#endif
