#ifndef SVCM_CORE_HPP
#define SVCM_CORE_HPP

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svcm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Malformed input: bad CSV, bad config, violated dataset invariants.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical stage could not produce an answer (singular system, rank
/// deficiency, empty kernel window).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One cluster of repeated measurements. Row j of `x` and `z` belongs to
/// observation time `times(j)`.
struct Subject {
  std::string id;
  VectorXd times;
  VectorXd y;
  MatrixXd x;  // m_i x p
  MatrixXd z;  // m_i x q, first column is the intercept

  Index size() const { return times.size(); }
};

struct LongitudinalDataset {
  std::vector<Subject> subjects;
  Index p = 0;
  Index q = 0;

  Index n() const { return static_cast<Index>(subjects.size()); }
  /// Total observation count, sum of m_i.
  Index n1() const;
  /// Number of ordered within-subject pairs, sum of m_i (m_i - 1).
  Index n2() const;
};

struct Violation {
  std::string subject;
  std::string field;
  std::string message;
};

std::vector<Violation> validate(const LongitudinalDataset& dataset);

/// Throws InputError listing the first few violations, if any.
void require_valid(const LongitudinalDataset& dataset);

struct CsvSchema {
  /// Prepend a constant-1 column to z.
  bool add_intercept = false;
  /// Map [min t, max t] affinely onto [0, 1] before the range check.
  bool rescale_time = false;
};

/// Non-fatal observations made while reading, e.g. duplicate times.
struct CsvReport {
  std::vector<std::string> warnings;
};

/// Long-format CSV: header `subject,t,y,x1..xp,z1..zq` in any column order.
/// Subjects appear in order of first occurrence; rows of one subject keep file
/// order even when interleaved with other subjects.
LongitudinalDataset read_csv(std::istream& in, const CsvSchema& schema = {},
                             CsvReport* report = nullptr);
LongitudinalDataset load_csv(const std::filesystem::path& path,
                             const CsvSchema& schema = {},
                             CsvReport* report = nullptr);

/// Writes with 17 significant digits so read_csv(write_csv(d)) == d.
void write_csv(const LongitudinalDataset& dataset, std::ostream& out);
void save_csv(const LongitudinalDataset& dataset,
              const std::filesystem::path& path);

/// Column-stacked view of a dataset in observation order (subject by subject),
/// plus a time-sorted permutation for kernel window lookups.
struct ObservationTable {
  VectorXd t;
  VectorXd y;
  MatrixXd x;
  MatrixXd z;
  std::vector<Index> subject;  // owning subject of each observation
  std::vector<Index> offset;   // size n+1; subject i owns [offset[i], offset[i+1])
  std::vector<Index> by_time;  // observation indices sorted by t
  std::vector<double> sorted_t;
  Index n2 = 0;

  Index n1() const { return t.size(); }
  Index n() const { return static_cast<Index>(offset.size()) - 1; }
  Index q() const { return z.cols(); }

  /// Half-open range [first, last) into `by_time` of observations with
  /// lo <= t <= hi.
  std::pair<Index, Index> window(double lo, double hi) const;
};

ObservationTable flatten(const LongitudinalDataset& dataset);

/// Splits a stacked per-observation vector back into per-subject segments.
std::vector<VectorXd> split_by_subject(const LongitudinalDataset& dataset,
                                       const VectorXd& stacked);

}  // namespace svcm

#endif  // SVCM_CORE_HPP
