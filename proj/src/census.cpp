#include "recur/census.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "recur/csv.hpp"
#include "recur/error.hpp"

namespace recur {

namespace {

constexpr std::array<Decade, 2> kDecades{Decade::Early, Decade::Late};
constexpr std::array<Sex, 2> kSexes{Sex::Female, Sex::Male};
constexpr std::array<Region, 3> kRegions{Region::Other, Region::Edmonton, Region::Calgary};

std::string cell_name(Decade d, Sex g, Region r, int age) {
  return fmt::format("({}, {}, {}, {})", to_string(d), to_string(g), to_string(r), age);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::size_t CensusTable::index(Decade d, Sex g, Region r, int age) {
  if (age < 0 || age >= kCensusAges) throw PreconditionError("census age out of range");
  return ((static_cast<std::size_t>(d) * 2 + static_cast<std::size_t>(g)) * 3 +
          static_cast<std::size_t>(r)) * kCensusAges + static_cast<std::size_t>(age);
}

double CensusTable::count(Decade d, Sex g, Region r, int age) const {
  return counts_[index(d, g, r, age)];
}

void CensusTable::set(Decade d, Sex g, Region r, int age, double value) {
  if (!(value >= 0.0)) throw ValidationError("negative census count at " + cell_name(d, g, r, age));
  counts_[index(d, g, r, age)] = value;
}

void CensusTable::add(Decade d, Sex g, Region r, int age, double value) {
  set(d, g, r, age, count(d, g, r, age) + value);
}

double CensusTable::total(Decade d) const {
  double t = 0.0;
  for (int age = 0; age < kCensusAges; ++age) t += total_at_age(age, d);
  return t;
}

double CensusTable::total_at_age(int age, std::optional<Decade> d) const {
  double t = 0.0;
  for (auto dd : kDecades) {
    if (d && *d != dd) continue;
    for (auto g : kSexes) {
      for (auto r : kRegions) t += count(dd, g, r, age);
    }
  }
  return t;
}

CensusTable read_census_csv(std::istream& in) {
  csv::Reader reader(in);
  reader.require_columns({"decade", "sex", "region", "age", "count"});
  CensusTable table;
  std::set<std::tuple<int, int, int, int>> seen;
  while (reader.next()) {
    const auto row = reader.row_number();
    Decade d;
    Sex g;
    Region r;
    try {
      d = parse_decade(reader.field("decade"));
      g = parse_sex(reader.field("sex"));
      r = parse_region(reader.field("region"));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("row {}: {}", row, e.what()));
    }
    const long age = csv::parse_long(reader.field("age"), row, "age");
    if (age < 0 || age >= kCensusAges) {
      throw ValidationError(fmt::format("row {}: age {} outside 0..{}", row, age, kCensusAges - 1));
    }
    const double value = csv::parse_double(reader.field("count"), row, "count");
    if (!(value >= 0.0)) throw ValidationError(fmt::format("row {}: negative count", row));
    const auto key = std::make_tuple(static_cast<int>(d), static_cast<int>(g),
                                     static_cast<int>(r), static_cast<int>(age));
    if (!seen.insert(key).second) {
      throw ValidationError(fmt::format("row {}: duplicate census cell {}", row,
                                        cell_name(d, g, r, static_cast<int>(age))));
    }
    table.set(d, g, r, static_cast<int>(age), value);
  }
  std::vector<std::string> missing;
  for (auto d : kDecades) {
    for (auto g : kSexes) {
      for (auto r : kRegions) {
        for (int age = 0; age < kCensusAges; ++age) {
          const auto key = std::make_tuple(static_cast<int>(d), static_cast<int>(g),
                                           static_cast<int>(r), age);
          if (!seen.contains(key)) missing.push_back(cell_name(d, g, r, age));
        }
      }
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += fmt::format(" and {} more", missing.size() - 10);
    throw ValidationError(fmt::format("census table missing {} cell(s): {}", missing.size(), list));
  }
  return table;
}

CensusTable ingest_census_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_census_csv(in);
}

void write_census_csv(std::ostream& out, const CensusTable& table) {
  out << "decade,sex,region,age,count\n";
  for (auto d : kDecades) {
    for (auto g : kSexes) {
      for (auto r : kRegions) {
        for (int age = 0; age < kCensusAges; ++age) {
          out << lower(to_string(d)) << ',' << to_string(g) << ',' << lower(to_string(r)) << ','
              << age << ',' << fmt::format("{}", table.count(d, g, r, age)) << '\n';
        }
      }
    }
  }
}

CensusRisk::CensusRisk(const CensusTable& table, std::span<const int> columns,
                       std::optional<Decade> stratum)
    : table_(&table) {
  for (int c : columns) {
    if (c < 0 || c >= kCovariateDim) throw PreconditionError("census column out of range");
  }
  for (auto d : kDecades) {
    if (stratum && *stratum != d) continue;
    for (auto g : kSexes) {
      for (auto r : kRegions) {
        const auto full = encode(g, r, d).stacked();
        Eigen::VectorXd v(static_cast<Eigen::Index>(columns.size()));
        for (std::size_t c = 0; c < columns.size(); ++c) v[static_cast<Eigen::Index>(c)] = full[columns[c]];
        int pattern = -1;
        for (std::size_t j = 0; j < patterns_.size(); ++j) {
          if (patterns_[j] == v) pattern = static_cast<int>(j);
        }
        if (pattern < 0) {
          patterns_.push_back(v);
          pattern = static_cast<int>(patterns_.size() - 1);
        }
        cells_.push_back({d, g, r, pattern});
      }
    }
  }
}

void CensusRisk::weights_at(double age, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  if (!(age > 0.0) || !(age < kCensusAges)) return;
  const int whole = static_cast<int>(std::floor(age));
  for (const auto& c : cells_) out[c.pattern] += table_->count(c.d, c.g, c.r, whole);
}

Moments s_moments_census(const Eigen::VectorXd& phi, double u, double a, const CensusRisk& census,
                         int degree) {
  if (!(u > 0.0 && u < kCensusAges)) throw PreconditionError("census moments need 0 < u < 18");
  try {
    return s_moments(phi, u, a, census, degree);
  } catch (const EmptyRiskSetError&) {
    throw EmptyRiskSetError(fmt::format("census population is empty at age {}",
                                        static_cast<int>(std::floor(u))));
  }
}

Eigen::VectorXd estimating_function_population(const Eigen::VectorXd& phi, double a,
                                               const RiskData& cohort_events,
                                               const CensusRisk& census, const KernelSpec& spec,
                                               int degree) {
  EstimatorOptions o;
  o.kernel = spec;
  o.degree = degree;
  const Estimator est(cohort_events, census, o);
  return est.estimating_function(phi, a);
}

LocalFit solve_local_population(double a, const RiskData& cohort_events, const CensusRisk& census,
                                const KernelSpec& spec, const SolverConfig& cfg, int degree) {
  EstimatorOptions o;
  o.kernel = spec;
  o.degree = degree;
  o.solver = cfg;
  const Estimator est(cohort_events, census, o);
  return est.solve_local(a);
}

AcReport validate_ac(const CensusTable& census, const RiskData& cohort, const AcOptions& opts) {
  if (cohort.dim() != kCovariateDim) {
    throw PreconditionError("validate_ac needs the full covariate encoding");
  }
  // Cell of each cohort pattern.
  struct PatternCell {
    Decade d;
    Sex g;
    Region r;
  };
  std::vector<PatternCell> cells;
  for (const auto& p : cohort.patterns()) {
    const Region r = p[2] > 0.5 ? Region::Edmonton : (p[3] > 0.5 ? Region::Calgary : Region::Other);
    cells.push_back({p[0] > 0.5 ? Decade::Late : Decade::Early, p[1] > 0.5 ? Sex::Male : Sex::Female, r});
  }
  AcReport report;
  std::vector<double> w(cells.size());
  for (auto d : kDecades) {
    for (auto g : kSexes) {
      for (auto r : kRegions) {
        for (int age = 0; age < kCensusAges; ++age) {
          double lo = std::numeric_limits<double>::infinity();
          double hi = 0.0;
          for (int j = 0; j < opts.subpoints; ++j) {
            const double u = age + (j + 0.5) / opts.subpoints;
            cohort.weights_at(u, w);
            double n = 0.0;
            for (std::size_t k = 0; k < cells.size(); ++k) {
              if (cells[k].d == d && cells[k].g == g && cells[k].r == r) n += w[k];
            }
            lo = std::min(lo, n);
            hi = std::max(hi, n);
          }
          const AcCellIssue issue{d, g, r, age, census.count(d, g, r, age), lo, hi};
          if (census.count(d, g, r, age) < hi - 1e-9) report.below_cohort.push_back(issue);
          if (hi >= opts.min_count && (hi - lo) / hi > opts.max_variation) {
            report.nonconstant.push_back(issue);
          }
        }
      }
    }
  }
  return report;
}

void write_ac_report(std::ostream& out, const AcReport& report) {
  out << "census cells below cohort at-risk count: " << report.below_cohort.size() << '\n';
  for (const auto& c : report.below_cohort) {
    out << "  " << cell_name(c.decade, c.sex, c.region, c.age)
        << fmt::format(" census={:.6g} cohort={:.6g}\n", c.census, c.cohort_max);
  }
  out << "cells with within-year variation above threshold: " << report.nonconstant.size() << '\n';
  for (const auto& c : report.nonconstant) {
    out << "  " << cell_name(c.decade, c.sex, c.region, c.age)
        << fmt::format(" cohort min={:.6g} max={:.6g}\n", c.cohort_min, c.cohort_max);
  }
  out << (report.clean() ? "status: clean\n" : "status: violations found\n");
}

}  // namespace recur
