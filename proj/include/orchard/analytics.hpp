#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/provenance.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::analytics {

struct FeatureRow {
  std::string subject;
  std::string session;
  std::string datatype;
  std::string structure;
  std::string measure;
  double value = 0.0;
  std::string source_object;
};

struct TidyTable {
  std::vector<FeatureRow> rows;
};

struct SourceRef {
  std::string object;
  std::string task;  // producing task, empty for imported data
};

struct CollateResult {
  TidyTable table;
  std::vector<SourceRef> sources;
  std::vector<std::string> diagnostics;
  std::string project;
  std::string datatype;
};

// Shortest decimal form that parses back to the same double.
std::string format_value(double v);

extern const char* const kTidyHeader;  // exact first line of the .tsv

// Reads every matching object's feature table and flattens it into one row
// per (subject, structure, measure). strict turns malformed tables into
// errors; otherwise they are skipped and reported in diagnostics.
CollateResult collate_features(const warehouse::Warehouse& wh,
                               const prov::ProvenanceStore& provenance,
                               const std::string& project, const std::string& datatype,
                               const warehouse::QueryFilter& extra = {}, bool strict = true);

std::string tidy_tsv(const TidyTable& table);
nlohmann::json collate_sidecar(const CollateResult& result);
// Writes <stem>.tsv and <stem>.json next to each other.
void write_collation(const CollateResult& result, const std::filesystem::path& stem);

double mean(const std::vector<double>& v);
// Sample standard deviation (n-1); requires at least two values.
double sample_sd(const std::vector<double>& v);
// Indices of values farther than k sample deviations from the mean.
// A zero deviation marks nothing.
std::vector<std::size_t> detect_outliers(const std::vector<double>& v, double k);

struct ReferenceEntry {
  std::string structure;
  std::string measure;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct Reference {
  std::string datatype;
  std::string source;
  std::vector<ReferenceEntry> entries;
};

struct ReferenceBuild {
  Reference reference;
  std::vector<std::string> diagnostics;  // groups dropped for lack of data
};

// Groups the table by (structure, measure), drops outliers beyond
// outlier_k deviations, and keeps mean/sd/n per surviving group.
ReferenceBuild build_reference(const TidyTable& table, double outlier_k,
                               const std::string& source);

enum class Band { kWithin1, kWithin2, kOutside2 };
std::string to_string(Band b);

// Inclusive inward: |z| <= 1 is within1, 1 < |z| <= 2 within2, else
// outside2. With sd == 0 only the exact mean is within1.
Band classify_band(const Reference& ref, const std::string& structure,
                   const std::string& measure, double value);

nlohmann::json reference_json(const Reference& ref);
Reference reference_from_json(const nlohmann::json& doc);
std::string reference_text(const Reference& ref);  // serialized form written to disk

double pearson_r(const std::vector<double>& x, const std::vector<double>& y);
double rmse(const std::vector<double>& predicted, const std::vector<double>& observed);

struct PolyFit {
  std::vector<double> coefficients;  // ascending powers
  double r_squared = 1.0;
};

// Least squares polynomial of degree <= 2 via the normal equations.
PolyFit fit_polynomial(const std::vector<double>& x, const std::vector<double>& y, int degree);

}  // namespace orchard::analytics
