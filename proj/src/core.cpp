#include "svcm/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>

namespace svcm {

Index LongitudinalDataset::n1() const {
  Index total = 0;
  for (const auto& s : subjects) total += s.size();
  return total;
}

Index LongitudinalDataset::n2() const {
  Index total = 0;
  for (const auto& s : subjects) total += s.size() * (s.size() - 1);
  return total;
}

std::vector<Violation> validate(const LongitudinalDataset& dataset) {
  std::vector<Violation> out;
  auto add = [&](const Subject& s, std::string field, std::string msg) {
    out.push_back({s.id, std::move(field), std::move(msg)});
  };
  for (const auto& s : dataset.subjects) {
    const Index m = s.size();
    if (m < 1) {
      add(s, "times", "subject has no observations (m_i = 0)");
      continue;
    }
    if (s.y.size() != m) add(s, "y", "length differs from times");
    if (s.x.rows() != m) add(s, "x", "row count differs from times");
    if (s.z.rows() != m) add(s, "z", "row count differs from times");
    if (s.x.cols() != dataset.p) add(s, "x", "column count differs from p");
    if (s.z.cols() != dataset.q) add(s, "z", "column count differs from q");
    for (Index j = 0; j < m; ++j) {
      if (!(s.times(j) >= 0.0 && s.times(j) <= 1.0)) {
        add(s, "times", "observation time " + std::to_string(j) + " outside [0,1]");
        break;
      }
    }
    if (s.z.rows() == m && s.z.cols() >= 1 && (s.z.col(0).array() != 1.0).any())
      add(s, "z", "intercept column: first column of z must be identically 1");
    const bool finite = s.y.allFinite() && s.x.allFinite() && s.z.allFinite();
    if (!finite) add(s, "values", "non-finite response or covariate");
  }
  if (dataset.q < 1) out.push_back({"", "q", "at least the intercept coefficient is required"});
  return out;
}

void require_valid(const LongitudinalDataset& dataset) {
  const auto violations = validate(dataset);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << violations.size() << " dataset violation(s)";
  for (std::size_t k = 0; k < std::min<std::size_t>(violations.size(), 5); ++k) {
    const auto& v = violations[k];
    msg << "; subject '" << v.subject << "' " << v.field << ": " << v.message;
  }
  throw InputError(msg.str());
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_number(std::string_view text) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

// Index k >= 1 if `name` is prefix followed by a positive integer.
std::optional<int> numbered_column(std::string_view name, char prefix) {
  if (name.size() < 2 || name.front() != prefix) return std::nullopt;
  int k = 0;
  const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc{} || ptr != name.data() + name.size() || k < 1) return std::nullopt;
  return k;
}

struct RawRow {
  double t;
  double y;
  std::vector<double> x;
  std::vector<double> z;
};

}  // namespace

LongitudinalDataset read_csv(std::istream& in, const CsvSchema& schema, CsvReport* report) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV: header row missing");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  const auto header = split_fields(line);
  std::optional<std::size_t> col_subject, col_t, col_y;
  std::map<int, std::size_t> x_cols, z_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = header[c];
    if (name == "subject") col_subject = c;
    else if (name == "t") col_t = c;
    else if (name == "y") col_y = c;
    else if (auto k = numbered_column(name, 'x')) x_cols[*k] = c;
    else if (auto k = numbered_column(name, 'z')) z_cols[*k] = c;
    else throw InputError("unknown column '" + std::string(name) + "'");
  }
  if (!col_subject) throw InputError("missing column 'subject'");
  if (!col_t) throw InputError("missing column 't'");
  if (!col_y) throw InputError("missing column 'y'");
  auto check_contiguous = [](const std::map<int, std::size_t>& cols, char prefix) {
    int expect = 1;
    for (const auto& [k, c] : cols) {
      if (k != expect)
        throw InputError(std::string("missing column '") + prefix + std::to_string(expect) + "'");
      ++expect;
    }
  };
  check_contiguous(x_cols, 'x');
  check_contiguous(z_cols, 'z');
  if (z_cols.empty() && !schema.add_intercept)
    throw InputError("missing column 'z1' (or request add_intercept)");

  const Index p = static_cast<Index>(x_cols.size());
  const Index q_file = static_cast<Index>(z_cols.size());

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<RawRow>> rows;
  std::vector<std::pair<std::string, std::size_t>> row_origin;  // for t errors after rescale

  std::size_t row_index = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_index;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw InputError("row " + std::to_string(row_index) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    auto number = [&](std::size_t c) {
      auto v = parse_number(fields[c]);
      if (!v || !std::isfinite(*v))
        throw InputError("row " + std::to_string(row_index) + ", column '" +
                         std::string(header[c]) + "': non-numeric value '" +
                         std::string(fields[c]) + "'");
      return *v;
    };
    RawRow r;
    r.t = number(*col_t);
    r.y = number(*col_y);
    for (const auto& [k, c] : x_cols) r.x.push_back(number(c));
    for (const auto& [k, c] : z_cols) r.z.push_back(number(c));
    if (!schema.rescale_time && !(r.t >= 0.0 && r.t <= 1.0))
      throw InputError("row " + std::to_string(row_index) + ": t = " + std::string(fields[*col_t]) +
                       " outside [0,1]");
    std::string id(fields[*col_subject]);
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(std::move(r));
  }
  if (row_index == 0) throw InputError("CSV has a header but no data rows");

  double t_min = 0.0, t_scale = 1.0;
  if (schema.rescale_time) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [id, rs] : rows)
      for (const auto& r : rs) lo = std::min(lo, r.t), hi = std::max(hi, r.t);
    if (!(hi > lo)) throw InputError("cannot rescale time: all observation times are equal");
    t_min = lo;
    t_scale = 1.0 / (hi - lo);
  }

  LongitudinalDataset ds;
  ds.p = p;
  ds.q = q_file + (schema.add_intercept ? 1 : 0);
  ds.subjects.reserve(order.size());
  for (const auto& id : order) {
    const auto& rs = rows.at(id);
    const Index m = static_cast<Index>(rs.size());
    Subject s;
    s.id = id;
    s.times.resize(m);
    s.y.resize(m);
    s.x.resize(m, p);
    s.z.resize(m, ds.q);
    const Index z0 = schema.add_intercept ? 1 : 0;
    for (Index j = 0; j < m; ++j) {
      const auto& r = rs[static_cast<std::size_t>(j)];
      s.times(j) = std::clamp((r.t - t_min) * t_scale, 0.0, 1.0);
      s.y(j) = r.y;
      for (Index k = 0; k < p; ++k) s.x(j, k) = r.x[static_cast<std::size_t>(k)];
      if (schema.add_intercept) s.z(j, 0) = 1.0;
      for (Index k = 0; k < q_file; ++k) s.z(j, z0 + k) = r.z[static_cast<std::size_t>(k)];
    }
    if (report) {
      std::vector<double> sorted(s.times.data(), s.times.data() + m);
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        report->warnings.push_back("subject '" + id + "' has duplicate observation times");
    }
    ds.subjects.push_back(std::move(s));
  }
  require_valid(ds);
  return ds;
}

LongitudinalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema,
                             CsvReport* report) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return read_csv(in, schema, report);
}

void write_csv(const LongitudinalDataset& dataset, std::ostream& out) {
  out << "subject,t,y";
  for (Index k = 1; k <= dataset.p; ++k) out << ",x" << k;
  for (Index k = 1; k <= dataset.q; ++k) out << ",z" << k;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (const auto& s : dataset.subjects) {
    for (Index j = 0; j < s.size(); ++j) {
      out << s.id << ',' << s.times(j) << ',' << s.y(j);
      for (Index k = 0; k < dataset.p; ++k) out << ',' << s.x(j, k);
      for (Index k = 0; k < dataset.q; ++k) out << ',' << s.z(j, k);
      out << '\n';
    }
  }
  out.precision(old_precision);
}

void save_csv(const LongitudinalDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  write_csv(dataset, out);
}

std::pair<Index, Index> ObservationTable::window(double lo, double hi) const {
  const auto first = std::lower_bound(sorted_t.begin(), sorted_t.end(), lo);
  const auto last = std::upper_bound(first, sorted_t.end(), hi);
  return {static_cast<Index>(first - sorted_t.begin()), static_cast<Index>(last - sorted_t.begin())};
}

ObservationTable flatten(const LongitudinalDataset& dataset) {
  ObservationTable tab;
  const Index n1 = dataset.n1();
  tab.t.resize(n1);
  tab.y.resize(n1);
  tab.x.resize(n1, dataset.p);
  tab.z.resize(n1, dataset.q);
  tab.subject.resize(static_cast<std::size_t>(n1));
  tab.offset.assign(1, 0);
  Index row = 0;
  for (Index i = 0; i < dataset.n(); ++i) {
    const auto& s = dataset.subjects[static_cast<std::size_t>(i)];
    const Index m = s.size();
    tab.t.segment(row, m) = s.times;
    tab.y.segment(row, m) = s.y;
    tab.x.middleRows(row, m) = s.x;
    tab.z.middleRows(row, m) = s.z;
    std::fill_n(tab.subject.begin() + row, m, i);
    row += m;
    tab.offset.push_back(row);
  }
  tab.n2 = dataset.n2();
  tab.by_time.resize(static_cast<std::size_t>(n1));
  std::iota(tab.by_time.begin(), tab.by_time.end(), Index{0});
  std::stable_sort(tab.by_time.begin(), tab.by_time.end(),
                   [&](Index a, Index b) { return tab.t(a) < tab.t(b); });
  tab.sorted_t.resize(static_cast<std::size_t>(n1));
  for (Index k = 0; k < n1; ++k) tab.sorted_t[static_cast<std::size_t>(k)] = tab.t(tab.by_time[static_cast<std::size_t>(k)]);
  return tab;
}

std::vector<VectorXd> split_by_subject(const LongitudinalDataset& dataset, const VectorXd& stacked) {
  std::vector<VectorXd> out;
  out.reserve(dataset.subjects.size());
  Index row = 0;
  for (const auto& s : dataset.subjects) {
    out.emplace_back(stacked.segment(row, s.size()));
    row += s.size();
  }
  return out;
}

}  // namespace svcm
