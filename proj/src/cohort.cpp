#include "recur/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include "recur/csv.hpp"
#include "recur/error.hpp"

namespace recur {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view to_string(Sex s) { return s == Sex::Male ? "M" : "F"; }

std::string_view to_string(Region r) {
  switch (r) {
    case Region::Edmonton: return "Edmonton";
    case Region::Calgary: return "Calgary";
    case Region::Other: break;
  }
  return "Other";
}

std::string_view to_string(Decade d) { return d == Decade::Late ? "Late" : "Early"; }

Sex parse_sex(std::string_view text) {
  const auto s = lower(text);
  if (s == "f" || s == "female") return Sex::Female;
  if (s == "m" || s == "male") return Sex::Male;
  throw ParseError("unknown sex '" + std::string(text) + "'");
}

Region parse_region(std::string_view text) {
  const auto s = lower(text);
  if (s == "other") return Region::Other;
  if (s == "edmonton") return Region::Edmonton;
  if (s == "calgary") return Region::Calgary;
  throw ParseError("unknown region '" + std::string(text) + "'");
}

Decade parse_decade(std::string_view text) {
  const auto s = lower(text);
  if (s == "early") return Decade::Early;
  if (s == "late") return Decade::Late;
  throw ParseError("unknown decade '" + std::string(text) + "'");
}

void validate_windows(const WindowMap& windows) {
  for (const auto& [label, w] : windows) {
    if (w.label != label) throw ValidationError("extraction window label mismatch");
    if (!(w.left < w.right)) {
      throw ValidationError(std::string(to_string(label)) + " window must satisfy left < right");
    }
  }
  auto e = windows.find(Decade::Early);
  auto l = windows.find(Decade::Late);
  if (e != windows.end() && l != windows.end() && e->second.right > l->second.left) {
    throw ValidationError("early window must end no later than the late window starts");
  }
}

Eigen::VectorXd CovariateVector::stacked() const {
  Eigen::VectorXd v(kCovariateDim);
  v << x, z[0], z[1], z[2], xz[0], xz[1], xz[2];
  return v;
}

CovariateVector encode(Sex sex, Region region, Decade decade) {
  CovariateVector c;
  c.x = decade == Decade::Late ? 1.0 : 0.0;
  c.z[0] = sex == Sex::Male ? 1.0 : 0.0;
  c.z[1] = region == Region::Edmonton ? 1.0 : 0.0;
  c.z[2] = region == Region::Calgary ? 1.0 : 0.0;
  for (int k = 0; k < 3; ++k) c.xz[k] = c.x * c.z[k];
  return c;
}

CovariateVector encode(const SubjectRecord& s) { return encode(s.sex, s.region, s.decade); }

std::string_view covariate_name(int column) {
  static constexpr std::array<std::string_view, kCovariateDim> names = {
      "late", "male", "edmonton", "calgary", "late:male", "late:edmonton", "late:calgary"};
  if (column < 0 || column >= kCovariateDim) throw PreconditionError("covariate column out of range");
  return names[static_cast<std::size_t>(column)];
}

CensoringInterval observation_interval(const ExtractionWindow& w, double birth_day,
                                       double age_cap) {
  return {std::max(0.0, years_between(birth_day, day_number(w.left))),
          std::min(age_cap, years_between(birth_day, day_number(w.right)))};
}

CohortDataset::CohortDataset(std::vector<SubjectRecord> subjects, WindowMap windows,
                             double age_cap)
    : subjects_(std::move(subjects)), windows_(std::move(windows)), age_cap_(age_cap) {
  validate_windows(windows_);
  if (!(age_cap_ > 0.0)) throw ValidationError("age cap must be positive");
  std::set<std::string> ids;
  for (const auto& s : subjects_) {
    const auto fail = [&](const std::string& what) {
      throw ValidationError("subject '" + s.id + "': " + what);
    };
    if (!ids.insert(s.id).second) fail("duplicate subject id");
    auto it = windows_.find(s.decade);
    if (it == windows_.end()) {
      fail("no extraction window for decade " + std::string(to_string(s.decade)));
    }
    const auto& w = it->second;
    for (const auto& v : s.events) {
      if (v.age_years < 0 || v.age_years >= static_cast<int>(std::ceil(age_cap_))) {
        fail("age " + std::to_string(v.age_years) + " outside 0.." +
             std::to_string(static_cast<int>(std::ceil(age_cap_)) - 1));
      }
      if (v.date < w.left || v.date > w.right) {
        fail("visit " + format_date(v.date) + " outside the " +
             std::string(to_string(s.decade)) + " extraction window");
      }
      if (s.birthdate) {
        const int age = completed_years(day_number(*s.birthdate), day_number(v.date));
        if (age != v.age_years) {
          fail("recorded age " + std::to_string(v.age_years) + " at " + format_date(v.date) +
               " disagrees with birthdate " + format_date(*s.birthdate) + " (age " +
               std::to_string(age) + ")");
        }
      }
    }
  }
}

const ExtractionWindow& CohortDataset::window_for(const SubjectRecord& s) const {
  auto it = windows_.find(s.decade);
  if (it == windows_.end()) throw ValidationError("subject '" + s.id + "' has no window");
  return it->second;
}

CensoringInterval censoring_interval(const SubjectRecord& s, const ExtractionWindow& w, Date b,
                                     double age_cap) {
  for (const auto& v : s.events) {
    if (completed_years(day_number(b), day_number(v.date)) != v.age_years) {
      throw PreconditionError("birthdate " + format_date(b) + " is inconsistent with the ages of '" +
                              s.id + "'");
    }
  }
  if (b > w.right) {
    throw EmptyIntervalError("birthdate " + format_date(b) + " after the window of '" + s.id + "'");
  }
  const auto c = observation_interval(w, day_number(b), age_cap);
  if (c.empty()) {
    throw EmptyIntervalError("subject '" + s.id + "' has an empty observation interval");
  }
  return c;
}

int at_risk(const ExtractionWindow& w, double birth_day, double u, double age_cap) {
  if (!(u > 0.0 && u < age_cap)) {
    throw PreconditionError("at_risk requires 0 < u < " + std::to_string(age_cap));
  }
  return observation_interval(w, birth_day, age_cap).contains(u) ? 1 : 0;
}

int at_risk(const ExtractionWindow& w, Date b, double u, double age_cap) {
  return at_risk(w, day_number(b), u, age_cap);
}

CohortDataset read_cohort_csv(std::istream& in, const WindowMap& windows) {
  csv::Reader reader(in);
  reader.require_columns({"id", "sex", "region", "decade", "visit_date", "age_years"});
  std::vector<SubjectRecord> subjects;
  std::unordered_map<std::string, std::size_t> position;
  while (reader.next()) {
    const auto row = reader.row_number();
    const auto wrap = [row](const auto& fn) {
      try {
        return fn();
      } catch (const ParseError& e) {
        throw ParseError("row " + std::to_string(row) + ": " + e.what());
      }
    };
    SubjectRecord rec;
    rec.id = reader.field("id");
    if (rec.id.empty()) throw ParseError("row " + std::to_string(row) + ": empty id");
    rec.sex = wrap([&] { return parse_sex(reader.field("sex")); });
    rec.region = wrap([&] { return parse_region(reader.field("region")); });
    rec.decade = wrap([&] { return parse_decade(reader.field("decade")); });
    const auto& birth = reader.field("birthdate");
    if (!birth.empty()) rec.birthdate = wrap([&] { return parse_date(birth); });
    Visit v;
    v.date = wrap([&] { return parse_date(reader.field("visit_date")); });
    v.age_years = static_cast<int>(csv::parse_long(reader.field("age_years"), row, "age_years"));

    auto [it, inserted] = position.emplace(rec.id, subjects.size());
    if (inserted) {
      rec.events.push_back(v);
      subjects.push_back(std::move(rec));
      continue;
    }
    auto& existing = subjects[it->second];
    if (existing.sex != rec.sex || existing.region != rec.region ||
        existing.decade != rec.decade || existing.birthdate != rec.birthdate) {
      throw ValidationError("subject '" + rec.id + "': conflicting covariates or birthdate at row " +
                            std::to_string(row));
    }
    existing.events.push_back(v);
  }
  return CohortDataset(std::move(subjects), windows);
}

CohortDataset ingest_csv(const std::filesystem::path& path, const WindowMap& windows) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_cohort_csv(in, windows);
}

void write_cohort_csv(std::ostream& out, const CohortDataset& data) {
  out << "id,sex,region,decade,birthdate,visit_date,age_years\n";
  for (const auto& s : data.subjects()) {
    const std::string birth = s.birthdate ? format_date(*s.birthdate) : "";
    for (const auto& v : s.events) {
      out << csv::quote(s.id) << ',' << to_string(s.sex) << ',' << to_string(s.region) << ','
          << to_string(s.decade) << ',' << birth << ',' << format_date(v.date) << ','
          << v.age_years << '\n';
    }
  }
}

void export_csv(const CohortDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_cohort_csv(out, data);
}

}  // namespace recur
