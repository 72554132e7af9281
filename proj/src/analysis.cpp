#include "sqz/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace sqz {

std::string to_string(OutlierReason r) {
  switch (r) {
    case OutlierReason::None: return "none";
    case OutlierReason::RelockOverlap: return "relock_overlap";
    case OutlierReason::Saturated: return "saturated";
    case OutlierReason::LockFailure: return "lock_failure";
  }
  return "none";
}

OutlierReason outlier_reason_from_string(const std::string& s) {
  if (s == "none") return OutlierReason::None;
  if (s == "relock_overlap") return OutlierReason::RelockOverlap;
  if (s == "saturated") return OutlierReason::Saturated;
  if (s == "lock_failure") return OutlierReason::LockFailure;
  throw AnalysisError("unknown outlier reason: " + s);
}

LevelPair levels_from_r_L(double r, double loss) {
  if (!(r >= 0)) throw AnalysisError("squeeze parameter must be >= 0");
  if (!(loss >= 0 && loss <= 1)) throw AnalysisError("loss must lie in [0, 1]");
  return {10 * std::log10(loss + (1 - loss) * std::exp(-2 * r)), 10 * std::log10(loss + (1 - loss) * std::exp(2 * r))};
}

double loss_from_levels(const LevelPair& p) {
  const double s = std::pow(10.0, p.sq / 10);
  const double a = std::pow(10.0, p.asq / 10);
  const double den = 2 - s - a;
  if (std::abs(den) < 1e-15) throw AnalysisError("loss undefined for a vacuum level pair");
  return (1 - s * a) / den;
}

double squeeze_from_levels(const LevelPair& p) {
  const double loss = loss_from_levels(p);
  if (!(loss < 1)) throw AnalysisError("squeeze parameter undefined at unit loss");
  const double a = std::pow(10.0, p.asq / 10);
  return 0.5 * std::log((a - loss) / (1 - loss));
}

double level_from_variances(double v, double v_shot) {
  if (!(v > 0) || !(v_shot > 0)) throw AnalysisError("variances must be positive");
  return 10 * std::log10(v / v_shot);
}

namespace {
struct Moments {
  double mean = 0, std = 0, max_dev = 0;
};

Moments moments(const std::vector<double>& x) {
  Moments m;
  if (x.empty()) return m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) {
    m.std += (v - m.mean) * (v - m.mean);
    m.max_dev = std::max(m.max_dev, std::abs(v - m.mean));
  }
  m.std = std::sqrt(m.std / static_cast<double>(x.size()));
  return m;
}
}  // namespace

CampaignStats summarize(const std::vector<MeasurementRecord>& records) {
  CampaignStats s;
  s.n_total = static_cast<int>(records.size());
  std::vector<double> sq, asq, loss;
  for (const auto& r : records) {
    if (r.outlier) {
      ++s.n_outliers;
      continue;
    }
    sq.push_back(r.sq_db);
    asq.push_back(r.asq_db);
    if (r.loss_est) loss.push_back(*r.loss_est);
  }
  if (sq.size() < 2) throw AnalysisError("fewer than two usable records");
  const auto msq = moments(sq), masq = moments(asq), ml = moments(loss);
  s.mean_sq = msq.mean, s.std_sq = msq.std, s.max_dev_sq = msq.max_dev;
  s.mean_asq = masq.mean, s.std_asq = masq.std;
  s.mean_loss = ml.mean, s.std_loss = ml.std, s.max_dev_loss = ml.max_dev;
  return s;
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
}  // namespace

void write_record_row(std::ostream& os, const MeasurementRecord& r) {
  os << fmt(r.t_s) << ',' << fmt(r.sq_db) << ',' << fmt(r.asq_db) << ',' << fmt(r.shot_ref) << ','
     << (r.loss_est ? fmt(*r.loss_est) : std::string()) << ',' << (r.outlier ? 1 : 0) << ',' << to_string(r.reason) << '\n';
}

std::vector<MeasurementRecord> read_records_csv(std::istream& is) {
  std::vector<MeasurementRecord> out;
  std::string line;
  if (!std::getline(is, line)) throw AnalysisError("empty record log");
  if (line != kRecordHeader) throw AnalysisError("unexpected record header: " + line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() == 6 && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw AnalysisError("malformed record row: " + line);
    MeasurementRecord r;
    r.t_s = std::stod(f[0]);
    r.sq_db = std::stod(f[1]);
    r.asq_db = std::stod(f[2]);
    r.shot_ref = std::stod(f[3]);
    if (!f[4].empty()) r.loss_est = std::stod(f[4]);
    r.outlier = f[5] == "1";
    r.reason = outlier_reason_from_string(f[6]);
    out.push_back(r);
  }
  return out;
}

void write_summary_csv(std::ostream& os, const CampaignStats& s) {
  os << kSummaryHeader << '\n'
     << s.n_total << ',' << s.n_outliers << ',' << fmt(s.mean_sq) << ',' << fmt(s.std_sq) << ',' << fmt(s.mean_asq) << ','
     << fmt(s.std_asq) << ',' << fmt(s.mean_loss) << ',' << fmt(s.std_loss) << ',' << fmt(s.max_dev_sq) << ','
     << fmt(s.max_dev_loss) << '\n';
}

}  // namespace sqz
