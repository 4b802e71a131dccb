#include "orchard/analytics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <tuple>

#include "orchard/errors.hpp"
#include "orchard/tar.hpp"
#include "orchard/util.hpp"

namespace orchard::analytics {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kTidyHeader = "subject\tsession\tdatatype\tstructure\tmeasure\tvalue\tsource_object";

std::string format_value(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) fail(ErrorCode::validation, "value cannot be formatted");
  return std::string(buf, ptr);
}

static std::optional<double> parse_value(const std::string& s) {
  double out = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end || !std::isfinite(out)) return std::nullopt;
  return out;
}

static bool tsv_safe(const std::string& s) {
  return s.find('\t') == std::string::npos && s.find('\n') == std::string::npos &&
         s.find('\r') == std::string::npos;
}

CollateResult collate_features(const warehouse::Warehouse& wh,
                               const prov::ProvenanceStore& provenance,
                               const std::string& project, const std::string& datatype,
                               const warehouse::QueryFilter& extra, bool strict) {
  const auto& dt = wh.get_datatype(datatype);
  if (!dt.is_statistical_feature || !dt.feature_columns)
    fail(ErrorCode::validation, "datatype " + datatype + " carries no feature table");
  const auto& cols = *dt.feature_columns;

  warehouse::QueryFilter filter = extra;
  filter.datatype = datatype;
  auto objects = wh.query_objects(project, filter);
  std::sort(objects.begin(), objects.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });

  CollateResult result;
  result.project = project;
  result.datatype = datatype;
  auto problem = [&](const std::string& msg) {
    if (strict) fail(ErrorCode::validation, msg);
    result.diagnostics.push_back(msg);
  };

  for (const auto& obj : objects) {
    auto entries = tar::read_archive(wh.object_archive_bytes(obj.id));
    const tar::Entry* table = nullptr;
    for (const auto& entry : entries)
      if (util::glob_match(cols.path_pattern, entry.path)) {
        table = &entry;
        break;
      }
    if (!table) {
      problem("object " + obj.id + ": no file matches " + cols.path_pattern);
      continue;
    }

    auto lines = util::split(table->data, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) {
      problem("object " + obj.id + ": feature table is empty");
      continue;
    }
    auto header = util::split(lines.front(), '\t');
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
      for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
      return std::nullopt;
    };
    auto s_col = column(cols.structure_column);
    auto m_col = column(cols.measure_column);
    auto v_col = column(cols.value_column);
    if (!s_col || !m_col || !v_col) {
      problem("object " + obj.id + ": feature table lacks required columns");
      continue;
    }

    bool used = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto fields = util::split(lines[i], '\t');
      if (fields.size() != header.size()) {
        problem("object " + obj.id + ": row " + std::to_string(i + 1) + " has " +
                std::to_string(fields.size()) + " fields, expected " +
                std::to_string(header.size()));
        continue;
      }
      auto value = parse_value(fields[*v_col]);
      if (!value) {
        problem("object " + obj.id + ": row " + std::to_string(i + 1) +
                " has a non-numeric value: " + fields[*v_col]);
        continue;
      }
      FeatureRow row;
      row.subject = obj.subject;
      row.session = obj.session;
      row.datatype = obj.datatype;
      row.structure = fields[*s_col];
      row.measure = fields[*m_col];
      row.value = *value;
      row.source_object = obj.id;
      if (!tsv_safe(row.subject) || !tsv_safe(row.session) || !tsv_safe(row.structure) ||
          !tsv_safe(row.measure)) {
        problem("object " + obj.id + ": row " + std::to_string(i + 1) +
                " contains tab or newline characters");
        continue;
      }
      result.table.rows.push_back(std::move(row));
      used = true;
    }
    if (used)
      result.sources.push_back(
          {obj.id, provenance.has(obj.id) ? provenance.get(obj.id).task : ""});
  }

  std::sort(result.table.rows.begin(), result.table.rows.end(),
            [](const FeatureRow& a, const FeatureRow& b) {
              return std::tie(a.subject, a.session, a.datatype, a.structure, a.measure,
                              a.source_object) <
                     std::tie(b.subject, b.session, b.datatype, b.structure, b.measure,
                              b.source_object);
            });
  return result;
}

std::string tidy_tsv(const TidyTable& table) {
  std::string out = std::string(kTidyHeader) + "\n";
  for (const auto& r : table.rows)
    out += r.subject + "\t" + r.session + "\t" + r.datatype + "\t" + r.structure + "\t" +
           r.measure + "\t" + format_value(r.value) + "\t" + r.source_object + "\n";
  return out;
}

json collate_sidecar(const CollateResult& result) {
  json sources = json::array();
  for (const auto& s : result.sources)
    sources.push_back({{"object", s.object}, {"task", s.task}});
  return json{{"project", result.project},
              {"datatype", result.datatype},
              {"row_count", result.table.rows.size()},
              {"columns", json::parse(R"(["subject","session","datatype","structure","measure","value","source_object"])")},
              {"sources", sources},
              {"diagnostics", result.diagnostics}};
}

void write_collation(const CollateResult& result, const fs::path& stem) {
  fs::path tsv = stem;
  tsv += ".tsv";
  fs::path side = stem;
  side += ".json";
  util::atomic_write_file(tsv, tidy_tsv(result.table));
  util::atomic_write_file(side, collate_sidecar(result).dump(2) + "\n");
}

double mean(const std::vector<double>& v) {
  if (v.empty()) fail(ErrorCode::insufficient_data, "mean needs at least one value");
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) fail(ErrorCode::insufficient_data, "sd needs at least two values");
  double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<std::size_t> detect_outliers(const std::vector<double>& v, double k) {
  if (k <= 0.0) fail(ErrorCode::validation, "outlier threshold must be positive");
  std::vector<std::size_t> out;
  if (v.size() < 2) return out;
  double m = mean(v);
  double sd = sample_sd(v);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::fabs(v[i] - m) > k * sd) out.push_back(i);
  return out;
}

ReferenceBuild build_reference(const TidyTable& table, double outlier_k,
                               const std::string& source) {
  if (table.rows.empty())
    fail(ErrorCode::insufficient_data, "cannot build a reference from an empty table");
  const std::string& datatype = table.rows.front().datatype;
  for (const auto& r : table.rows)
    if (r.datatype != datatype)
      fail(ErrorCode::validation, "reference needs a single datatype, found " + r.datatype +
                                      " next to " + datatype);

  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : table.rows) groups[{r.structure, r.measure}].push_back(r.value);

  ReferenceBuild build;
  build.reference.datatype = datatype;
  build.reference.source = source;
  for (const auto& [key, values] : groups) {
    if (values.size() < 2) {
      build.diagnostics.push_back(key.first + "/" + key.second + ": only " +
                                  std::to_string(values.size()) + " value(s), skipped");
      continue;
    }
    auto outliers = detect_outliers(values, outlier_k);
    std::vector<double> kept;
    std::size_t next_out = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (next_out < outliers.size() && outliers[next_out] == i) {
        ++next_out;
        continue;
      }
      kept.push_back(values[i]);
    }
    if (kept.size() < 2) {
      build.diagnostics.push_back(key.first + "/" + key.second +
                                  ": too few values after outlier removal, skipped");
      continue;
    }
    ReferenceEntry entry;
    entry.structure = key.first;
    entry.measure = key.second;
    entry.mean = mean(kept);
    entry.sd = sample_sd(kept);
    entry.n = kept.size();
    build.reference.entries.push_back(std::move(entry));
  }
  return build;
}

std::string to_string(Band b) {
  switch (b) {
    case Band::kWithin1: return "within1";
    case Band::kWithin2: return "within2";
    case Band::kOutside2: return "outside2";
  }
  return "outside2";
}

Band classify_band(const Reference& ref, const std::string& structure,
                   const std::string& measure, double value) {
  const ReferenceEntry* entry = nullptr;
  for (const auto& e : ref.entries)
    if (e.structure == structure && e.measure == measure) entry = &e;
  if (!entry)
    fail(ErrorCode::not_found, "reference has no entry for " + structure + "/" + measure);
  if (entry->sd == 0.0)
    return value == entry->mean ? Band::kWithin1 : Band::kOutside2;
  double z = std::fabs(value - entry->mean) / entry->sd;
  if (z <= 1.0) return Band::kWithin1;
  if (z <= 2.0) return Band::kWithin2;
  return Band::kOutside2;
}

json reference_json(const Reference& ref) {
  json entries = json::array();
  for (const auto& e : ref.entries)
    entries.push_back({{"structure", e.structure},
                       {"measure", e.measure},
                       {"mean", e.mean},
                       {"sd", e.sd},
                       {"n", e.n}});
  return json{{"datatype", ref.datatype}, {"source", ref.source}, {"entries", entries}};
}

Reference reference_from_json(const json& doc) {
  Reference ref;
  doc.at("datatype").get_to(ref.datatype);
  ref.source = doc.value("source", "");
  for (const auto& item : doc.at("entries")) {
    ReferenceEntry e;
    item.at("structure").get_to(e.structure);
    item.at("measure").get_to(e.measure);
    item.at("mean").get_to(e.mean);
    item.at("sd").get_to(e.sd);
    e.n = item.value("n", std::size_t{0});
    ref.entries.push_back(std::move(e));
  }
  return ref;
}

std::string reference_text(const Reference& ref) { return reference_json(ref).dump(2) + "\n"; }

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    fail(ErrorCode::validation, "correlation needs vectors of equal length");
  if (x.size() < 2) fail(ErrorCode::insufficient_data, "correlation needs at least two points");
  double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(ErrorCode::undefined_correlation, "correlation undefined for a constant vector");
  // Exact |r| = 1 when the cross term squares to the product, which holds
  // whenever y is an exact linear image of x.
  if (sxy * sxy == sxx * syy) return std::copysign(1.0, sxy);
  return sxy / std::sqrt(sxx * syy);
}

double rmse(const std::vector<double>& predicted, const std::vector<double>& observed) {
  if (predicted.size() != observed.size())
    fail(ErrorCode::validation, "rmse needs vectors of equal length");
  if (predicted.empty()) fail(ErrorCode::insufficient_data, "rmse needs at least one point");
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double d = predicted[i] - observed[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(predicted.size()));
}

PolyFit fit_polynomial(const std::vector<double>& x, const std::vector<double>& y, int degree) {
  if (degree < 0 || degree > 2)
    fail(ErrorCode::validation, "polynomial degree must be 0, 1 or 2");
  if (x.size() != y.size()) fail(ErrorCode::validation, "fit needs vectors of equal length");
  std::size_t terms = static_cast<std::size_t>(degree) + 1;
  if (x.size() < terms)
    fail(ErrorCode::insufficient_data, "fit needs at least " + std::to_string(terms) +
                                           " points for degree " + std::to_string(degree));

  // Normal equations: A c = b with A[i][j] = sum x^(i+j), b[i] = sum y x^i.
  double pow_sums[5] = {0, 0, 0, 0, 0};
  double rhs[3] = {0, 0, 0};
  for (std::size_t k = 0; k < x.size(); ++k) {
    double p = 1.0;
    for (std::size_t i = 0; i < 2 * terms - 1; ++i) {
      pow_sums[i] += p;
      if (i < terms) rhs[i] += y[k] * p;
      p *= x[k];
    }
  }
  double a[3][4] = {};
  for (std::size_t i = 0; i < terms; ++i) {
    for (std::size_t j = 0; j < terms; ++j) a[i][j] = pow_sums[i + j];
    a[i][terms] = rhs[i];
  }
  for (std::size_t col = 0; col < terms; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < terms; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-12)
      fail(ErrorCode::degenerate_fit, "design matrix is singular");
    if (pivot != col)
      for (std::size_t j = 0; j <= terms; ++j) std::swap(a[pivot][j], a[col][j]);
    for (std::size_t r = 0; r < terms; ++r) {
      if (r == col) continue;
      double factor = a[r][col] / a[col][col];
      for (std::size_t j = col; j <= terms; ++j) a[r][j] -= factor * a[col][j];
    }
  }
  PolyFit fit;
  fit.coefficients.resize(terms);
  for (std::size_t i = 0; i < terms; ++i) fit.coefficients[i] = a[i][terms] / a[i][i];

  double my = mean(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double pred = 0.0, p = 1.0;
    for (std::size_t i = 0; i < terms; ++i) {
      pred += fit.coefficients[i] * p;
      p *= x[k];
    }
    ss_res += (y[k] - pred) * (y[k] - pred);
    ss_tot += (y[k] - my) * (y[k] - my);
  }
  fit.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

}  // namespace orchard::analytics
