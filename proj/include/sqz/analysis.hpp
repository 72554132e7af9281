#pragma once

// Squeezing-level arithmetic, effective loss from a squeezing/antisqueezing
// pair, and campaign statistics over measurement records.

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqz {

class AnalysisError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct LevelPair {
  double sq = 0;   // dB
  double asq = 0;  // dB
};

enum class OutlierReason { None, RelockOverlap, Saturated, LockFailure };

std::string to_string(OutlierReason r);
OutlierReason outlier_reason_from_string(const std::string& s);

struct MeasurementRecord {
  double t_s = 0;
  double sq_db = 0;
  double asq_db = 0;
  double shot_ref = 0;
  std::optional<double> loss_est;
  bool outlier = false;
  OutlierReason reason = OutlierReason::None;
};

struct CampaignStats {
  double mean_sq = 0, std_sq = 0;
  double mean_asq = 0, std_asq = 0;
  double mean_loss = 0, std_loss = 0;
  /// Largest |x - mean| over usable records.
  double max_dev_sq = 0, max_dev_loss = 0;
  int n_total = 0;
  int n_outliers = 0;
};

/// sq = 10 log10(L + (1-L) e^{-2r}), asq with e^{+2r}.
LevelPair levels_from_r_L(double r, double loss);

/// Inverse of the loss model given a level pair; throws when sq = asq = 0.
double loss_from_levels(const LevelPair& p);

/// Squeeze parameter consistent with `p` and loss_from_levels(p).
double squeeze_from_levels(const LevelPair& p);

double level_from_variances(double v, double v_shot);

/// Population statistics over non-outlier records; throws with fewer than two.
CampaignStats summarize(const std::vector<MeasurementRecord>& records);

inline constexpr const char* kRecordHeader = "t_s,sq_db,asq_db,shot_ref,loss_est,outlier,reason";
inline constexpr const char* kSummaryHeader =
    "n_total,n_outliers,mean_sq_db,std_sq_db,mean_asq_db,std_asq_db,mean_loss,std_loss,max_dev_sq_db,max_dev_loss";

void write_record_row(std::ostream& os, const MeasurementRecord& r);
std::vector<MeasurementRecord> read_records_csv(std::istream& is);
void write_summary_csv(std::ostream& os, const CampaignStats& s);

}  // namespace sqz
