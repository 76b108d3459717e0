#ifndef SVCM_OUTPUT_HPP
#define SVCM_OUTPUT_HPP

#include "svcm/config.hpp"
#include "svcm/pipeline.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace svcm {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline constexpr const char* kVersion = "1.0.0";

/// estimator,coefficient,estimate,se,wald for the independence and efficient
/// fits, 6 significant digits.
std::string beta_table_csv(const EfficientFitResult& result);

/// Grid of initial/updated local-linear curves, confidence bands and spline
/// curves, full precision.
std::string curves_csv(const EfficientFitResult& result);

/// Scalars of a fit (bandwidths, dimensions, diagnostics) as key=value pairs.
KeyValues fit_manifest(const EfficientFitResult& result);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_manifest(const std::filesystem::path& path, const KeyValues& entries);

/// beta.csv, curves.csv, covariance/{variance,surface}.csv, diagnostics.txt.
void write_fit_outputs(const EfficientFitResult& result, const std::filesystem::path& dir);

}  // namespace svcm

#endif  // SVCM_OUTPUT_HPP
