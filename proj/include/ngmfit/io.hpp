#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fit.hpp"
#include "montecarlo.hpp"
#include "version.hpp"

namespace ngmfit {

using json = nlohmann::ordered_json;

/// Bad config or bad data (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem-level failure (CLI exit code 5).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// number formatting

/// 12 significant digits; the fixed precision of all result files.
inline std::string fmt12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Shortest exact round-trip formatting, for data files that must re-ingest
/// bit-identically.
inline std::string fmt_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// incidence csv

/// Ingested incidence file: one series per season, group rows ordered by
/// first appearance in the file; first_day keeps the original day label of
/// each season's first column.
struct IncidenceTable {
  std::vector<std::string> seasons;
  std::vector<std::string> groups;
  std::vector<IncidenceSeries> series;
  std::vector<int> first_day;
};

struct IngestOptions {
  /// Rows with count below this are rejected (noisy data goes legitimately
  /// negative, so the default allows everything).
  double negative_floor = -std::numeric_limits<double>::infinity();
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline IncidenceTable ingest_incidence(std::istream& in, const IngestOptions& opts = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("incidence file: empty");
  {
    auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"season", "day", "group", "count"})
      throw ValidationError("incidence file: header must be 'season,day,group,count'");
  }

  struct Cell {
    int day;
    double count;
  };
  // season -> group -> day -> count, with appearance order kept separately
  std::map<std::string, std::map<std::string, std::map<int, double>>> cells;
  std::vector<std::string> season_order, group_order;
  std::set<std::string> season_seen, group_seen;

  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 4)
      throw ValidationError("incidence file row " + std::to_string(row) +
                            ": expected 4 fields, got " + std::to_string(f.size()));
    const std::string& season = f[0];
    const std::string& group = f[2];
    int day;
    double count;
    try {
      std::size_t pos = 0;
      day = std::stoi(f[1], &pos);
      if (pos != f[1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ValidationError("incidence file row " + std::to_string(row) + ": bad day '" + f[1] +
                            "'");
    }
    try {
      std::size_t pos = 0;
      count = std::stod(f[3], &pos);
      if (pos != f[3].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ValidationError("incidence file row " + std::to_string(row) + ": bad count '" +
                            f[3] + "'");
    }
    if (day < 0)
      throw ValidationError("incidence file row " + std::to_string(row) + ": negative day");
    if (!std::isfinite(count))
      throw ValidationError("incidence file row " + std::to_string(row) + ": non-finite count");
    if (count < opts.negative_floor)
      throw ValidationError("incidence file row " + std::to_string(row) +
                            ": count below the configured noise floor");

    if (season_seen.insert(season).second) season_order.push_back(season);
    if (group_seen.insert(group).second) group_order.push_back(group);
    auto [it, inserted] = cells[season][group].emplace(day, count);
    if (!inserted)
      throw ValidationError("incidence file row " + std::to_string(row) + ": duplicate entry (" +
                            season + ", day " + std::to_string(day) + ", " + group + ")");
  }
  if (season_order.empty()) throw ValidationError("incidence file: no data rows");

  IncidenceTable table;
  table.seasons = season_order;
  table.groups = group_order;
  for (const auto& season : season_order) {
    const auto& by_group = cells[season];
    for (const auto& g : group_order)
      if (!by_group.count(g))
        throw ValidationError("incidence file: season " + season + " is missing group " + g);
    if (by_group.size() != group_order.size())
      throw ValidationError("incidence file: season " + season + " has an extra group");

    const auto& ref = by_group.at(group_order[0]);
    int lo = ref.begin()->first, hi = ref.rbegin()->first;
    for (const auto& g : group_order) {
      const auto& days = by_group.at(g);
      if (days.begin()->first != lo || days.rbegin()->first != hi)
        throw ValidationError("incidence file: season " + season + " group " + g +
                              " covers different days than the other groups");
      int expect = lo;
      for (const auto& [day, value] : days) {
        if (day != expect)
          throw ValidationError("incidence file: season " + season + " group " + g +
                                " is missing day " + std::to_string(expect));
        ++expect;
      }
    }
    Matrix vals(group_order.size(), static_cast<std::size_t>(hi - lo + 1));
    for (std::size_t j = 0; j < group_order.size(); ++j)
      for (int day = lo; day <= hi; ++day)
        vals(j, static_cast<std::size_t>(day - lo)) = by_group.at(group_order[j]).at(day);
    table.series.emplace_back(std::move(vals));
    table.first_day.push_back(lo);
  }
  return table;
}

inline IncidenceTable ingest_incidence_file(const std::filesystem::path& path,
                                            const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return ingest_incidence(in, opts);
}

inline void export_incidence(std::ostream& out, const IncidenceTable& table) {
  out << "season,day,group,count\n";
  for (std::size_t s = 0; s < table.seasons.size(); ++s)
    for (std::size_t j = 0; j < table.groups.size(); ++j)
      for (int t = 0; t < table.series[s].days(); ++t)
        out << table.seasons[s] << ',' << table.first_day[s] + t << ',' << table.groups[j] << ','
            << fmt_exact(table.series[s].values(j, static_cast<std::size_t>(t))) << '\n';
}

// ---------------------------------------------------------------------------
// run config

struct GroupSpec {
  std::string name;
  double population = 0.0;
};

struct SeasonSpec {
  std::vector<double> s0;
  double r = 1.0;
  std::optional<int> horizon;
  std::optional<std::pair<int, int>> window;  // inclusive day range to keep
};

struct McConfig {
  std::string matrix_id;  // "matrix1".."matrix3" or "custom"
  Matrix beta;
  Scenario scenario = Scenario::single_known_s0;
  int replicates = 500;
  YearDrawSpec years;
  StartMode start = StartMode::two_stage;
  int workers = 0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output;
  std::vector<GroupSpec> groups;
  SerialInterval serial = default_serial_interval();
  double seed_fraction = 1e-3;
  std::optional<std::vector<std::vector<double>>> seed_counts;  // per season, per group
  int smoothing_window = 7;
  std::vector<SeasonSpec> seasons;
  std::optional<Matrix> beta;
  std::optional<NoiseParams> noise;  // absent == estimate
  bool s0_free = false;
  std::optional<ReportingModel> reporting;
  NelderMeadOptions optimizer;
  double negative_floor = -std::numeric_limits<double>::infinity();
  std::optional<int> ingest_smooth_window;
  std::optional<McConfig> mc;

  std::size_t group_count() const { return groups.size(); }
  std::vector<double> populations() const {
    std::vector<double> p;
    for (const auto& g : groups) p.push_back(g.population);
    return p;
  }
};

namespace detail {

inline void require_keys(const json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ValidationError("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw ValidationError("config: unknown key '" + key + "' in " + where);
}

inline double number_at(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key))
    throw ValidationError("config: missing key '" + key + "' in " + where);
  if (!obj[key].is_number())
    throw ValidationError("config: '" + key + "' in " + where + " must be a number");
  return obj[key].get<double>();
}

inline std::vector<double> number_list(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ValidationError("config: " + where + " must be an array");
  std::vector<double> out;
  for (const auto& v : arr) {
    if (!v.is_number()) throw ValidationError("config: " + where + " must contain numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline Matrix matrix_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty())
    throw ValidationError("config: " + where + " must be a nonempty array of rows");
  std::size_t cols = 0;
  std::vector<std::vector<double>> rows;
  for (const auto& row : arr) {
    rows.push_back(number_list(row, where));
    if (cols == 0)
      cols = rows.back().size();
    else if (rows.back().size() != cols)
      throw ValidationError("config: " + where + " rows have differing lengths");
  }
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace detail

inline RunConfig parse_config(const json& doc) {
  detail::require_keys(doc, "top level",
                       {"spec_version", "seed", "output", "groups", "serial_interval", "seeding",
                        "smoothing_window", "seasons", "beta", "noise", "free", "reporting",
                        "optimizer", "ingest", "mc"});
  if (!doc.contains("spec_version"))
    throw ValidationError("config: missing spec_version");
  if (!doc["spec_version"].is_number_integer() ||
      doc["spec_version"].get<int>() != config_spec_version)
    throw ValidationError("config: unsupported spec_version (expected " +
                          std::to_string(config_spec_version) + ")");

  RunConfig cfg;
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer())
      throw ValidationError("config: seed must be a nonnegative integer");
    if (doc["seed"].is_number_integer() && doc["seed"].get<long long>() < 0)
      throw ValidationError("config: seed must be a nonnegative integer");
    cfg.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("output")) {
    if (!doc["output"].is_string()) throw ValidationError("config: output must be a string");
    cfg.output = doc["output"].get<std::string>();
  }

  if (!doc.contains("groups")) throw ValidationError("config: missing groups");
  if (!doc["groups"].is_array() || doc["groups"].empty())
    throw ValidationError("config: groups must be a nonempty array");
  std::set<std::string> names;
  for (const auto& g : doc["groups"]) {
    detail::require_keys(g, "groups[]", {"name", "population"});
    if (!g.contains("name") || !g["name"].is_string())
      throw ValidationError("config: each group needs a string name");
    GroupSpec spec;
    spec.name = g["name"].get<std::string>();
    spec.population = detail::number_at(g, "population", "groups[]");
    if (!(spec.population > 0.0))
      throw ValidationError("config: group population must be > 0");
    if (!names.insert(spec.name).second)
      throw ValidationError("config: duplicate group name '" + spec.name + "'");
    cfg.groups.push_back(std::move(spec));
  }
  const std::size_t m = cfg.groups.size();

  if (doc.contains("serial_interval")) {
    try {
      cfg.serial = SerialInterval(detail::number_list(doc["serial_interval"], "serial_interval"));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
  }

  if (doc.contains("seeding")) {
    detail::require_keys(doc["seeding"], "seeding", {"fraction", "counts"});
    if (doc["seeding"].contains("fraction") == doc["seeding"].contains("counts"))
      throw ValidationError("config: seeding needs exactly one of 'fraction' or 'counts'");
    if (doc["seeding"].contains("fraction")) {
      cfg.seed_fraction = detail::number_at(doc["seeding"], "fraction", "seeding");
      if (!(cfg.seed_fraction > 0.0 && cfg.seed_fraction < 1.0))
        throw ValidationError("config: seeding fraction must lie in (0,1)");
    } else {
      std::vector<std::vector<double>> counts;
      for (const auto& row : doc["seeding"]["counts"])
        counts.push_back(detail::number_list(row, "seeding counts"));
      for (const auto& row : counts) {
        if (row.size() != m)
          throw ValidationError("config: each seeding counts row needs one value per group");
        for (double v : row)
          if (!(v >= 0.0)) throw ValidationError("config: seed counts must be >= 0");
      }
      cfg.seed_counts = std::move(counts);
    }
  }

  if (doc.contains("smoothing_window")) {
    if (!doc["smoothing_window"].is_number_integer())
      throw ValidationError("config: smoothing_window must be an integer");
    cfg.smoothing_window = doc["smoothing_window"].get<int>();
    if (cfg.smoothing_window < 1 || cfg.smoothing_window % 2 == 0)
      throw ValidationError("config: smoothing_window must be odd and >= 1");
  }

  if (doc.contains("seasons")) {
    if (!doc["seasons"].is_array() || doc["seasons"].empty())
      throw ValidationError("config: seasons must be a nonempty array");
    for (const auto& s : doc["seasons"]) {
      detail::require_keys(s, "seasons[]", {"s0", "r", "horizon", "window"});
      SeasonSpec season;
      if (!s.contains("s0")) throw ValidationError("config: each season needs s0");
      season.s0 = detail::number_list(s["s0"], "seasons[].s0");
      if (season.s0.size() != m)
        throw ValidationError("config: seasons[].s0 needs one value per group");
      for (double v : season.s0)
        if (!(v > 0.0 && v <= 1.0))
          throw ValidationError("config: seasons[].s0 values must lie in (0,1]");
      if (s.contains("r")) {
        season.r = detail::number_at(s, "r", "seasons[]");
        if (!(season.r > 0.0)) throw ValidationError("config: seasons[].r must be > 0");
      }
      if (s.contains("horizon")) {
        if (!s["horizon"].is_number_integer() || s["horizon"].get<int>() < 1)
          throw ValidationError("config: seasons[].horizon must be an integer >= 1");
        season.horizon = s["horizon"].get<int>();
      }
      if (s.contains("window")) {
        detail::require_keys(s["window"], "seasons[].window", {"start", "end"});
        int start = static_cast<int>(detail::number_at(s["window"], "start", "seasons[].window"));
        int end = static_cast<int>(detail::number_at(s["window"], "end", "seasons[].window"));
        if (start < 0 || end < start)
          throw ValidationError("config: seasons[].window needs 0 <= start <= end");
        season.window = {start, end};
      }
      cfg.seasons.push_back(std::move(season));
    }
    if (cfg.seasons.size() >= 2 && cfg.seasons[0].r != 1.0)
      throw ValidationError("config: the first season's r must be 1");
  }

  if (doc.contains("beta")) cfg.beta = detail::matrix_from_json(doc["beta"], "beta");
  if (cfg.beta && (cfg.beta->rows() != m || cfg.beta->cols() != m))
    throw ValidationError("config: beta must be groups x groups");

  if (doc.contains("noise")) {
    if (doc["noise"].is_string()) {
      if (doc["noise"].get<std::string>() != "estimate")
        throw ValidationError("config: noise must be an object or the string 'estimate'");
    } else {
      detail::require_keys(doc["noise"], "noise", {"phi_a", "phi_b"});
      NoiseParams np;
      np.phi_a = detail::number_at(doc["noise"], "phi_a", "noise");
      np.phi_b = detail::number_at(doc["noise"], "phi_b", "noise");
      try {
        np.validate();
      } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("config: ") + e.what());
      }
      cfg.noise = np;
    }
  }

  if (doc.contains("free")) {
    detail::require_keys(doc["free"], "free", {"s0"});
    if (doc["free"].contains("s0")) {
      if (!doc["free"]["s0"].is_boolean())
        throw ValidationError("config: free.s0 must be a boolean");
      cfg.s0_free = doc["free"]["s0"].get<bool>();
    }
  }

  if (doc.contains("reporting")) {
    detail::require_keys(doc["reporting"], "reporting", {"eta", "theta"});
    ReportingModel rep;
    rep.eta = detail::matrix_from_json(doc["reporting"]["eta"], "reporting.eta");
    rep.theta = detail::matrix_from_json(doc["reporting"]["theta"], "reporting.theta");
    try {
      rep.validate();
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    if (rep.groups() != m)
      throw ValidationError("config: reporting matrices must have one row per group");
    cfg.reporting = std::move(rep);
  }

  if (doc.contains("optimizer")) {
    detail::require_keys(doc["optimizer"], "optimizer",
                         {"max_iter_factor", "tol_x", "tol_f", "restarts"});
    const auto& o = doc["optimizer"];
    if (o.contains("max_iter_factor")) {
      if (!o["max_iter_factor"].is_number_integer() || o["max_iter_factor"].get<int>() < 1)
        throw ValidationError("config: optimizer.max_iter_factor must be an integer >= 1");
      cfg.optimizer.max_iter_factor = o["max_iter_factor"].get<int>();
    }
    if (o.contains("tol_x")) cfg.optimizer.tol_x = detail::number_at(o, "tol_x", "optimizer");
    if (o.contains("tol_f")) cfg.optimizer.tol_f = detail::number_at(o, "tol_f", "optimizer");
    if (o.contains("restarts")) {
      if (!o["restarts"].is_number_integer() || o["restarts"].get<int>() < 0)
        throw ValidationError("config: optimizer.restarts must be an integer >= 0");
      cfg.optimizer.restarts = o["restarts"].get<int>();
    }
    if (!(cfg.optimizer.tol_x > 0.0) || !(cfg.optimizer.tol_f > 0.0))
      throw ValidationError("config: optimizer tolerances must be > 0");
  }

  if (doc.contains("ingest")) {
    detail::require_keys(doc["ingest"], "ingest", {"negative_floor", "smooth_window"});
    if (doc["ingest"].contains("negative_floor"))
      cfg.negative_floor = detail::number_at(doc["ingest"], "negative_floor", "ingest");
    if (doc["ingest"].contains("smooth_window")) {
      if (!doc["ingest"]["smooth_window"].is_number_integer())
        throw ValidationError("config: ingest.smooth_window must be an integer");
      cfg.ingest_smooth_window = doc["ingest"]["smooth_window"].get<int>();
      if (*cfg.ingest_smooth_window < 1 || *cfg.ingest_smooth_window % 2 == 0)
        throw ValidationError("config: ingest.smooth_window must be odd and >= 1");
    }
  }

  if (doc.contains("mc")) {
    detail::require_keys(doc["mc"], "mc",
                         {"matrix", "scenario", "replicates", "years", "start", "workers"});
    const auto& mc = doc["mc"];
    McConfig out;
    if (!mc.contains("matrix")) throw ValidationError("config: mc.matrix is required");
    if (mc["matrix"].is_string()) {
      out.matrix_id = mc["matrix"].get<std::string>();
      if (out.matrix_id == "matrix1")
        out.beta = study_matrix(1);
      else if (out.matrix_id == "matrix2")
        out.beta = study_matrix(2);
      else if (out.matrix_id == "matrix3")
        out.beta = study_matrix(3);
      else
        throw ValidationError("config: mc.matrix must be matrix1, matrix2, matrix3 or a matrix");
    } else {
      out.matrix_id = "custom";
      out.beta = detail::matrix_from_json(mc["matrix"], "mc.matrix");
      if (out.beta.rows() != m || out.beta.cols() != m)
        throw ValidationError("config: mc.matrix must be groups x groups");
    }
    if (!mc.contains("scenario") || !mc["scenario"].is_string())
      throw ValidationError("config: mc.scenario must be one of i, ii, iii, iv");
    try {
      out.scenario = scenario_from_label(mc["scenario"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    if (mc.contains("replicates")) {
      if (!mc["replicates"].is_number_integer() || mc["replicates"].get<int>() < 1)
        throw ValidationError("config: mc.replicates must be an integer >= 1");
      out.replicates = mc["replicates"].get<int>();
    }
    if (mc.contains("years")) {
      detail::require_keys(mc["years"], "mc.years",
                           {"count", "re_mean", "re_sd", "s0_mean", "s0_sd"});
      const auto& y = mc["years"];
      if (y.contains("count")) {
        if (!y["count"].is_number_integer() || y["count"].get<int>() < 2)
          throw ValidationError("config: mc.years.count must be an integer >= 2");
        out.years.count = y["count"].get<int>();
      }
      if (y.contains("re_mean")) out.years.re_mean = detail::number_at(y, "re_mean", "mc.years");
      if (y.contains("re_sd")) out.years.re_sd = detail::number_at(y, "re_sd", "mc.years");
      if (y.contains("s0_mean")) out.years.s0_mean = detail::number_at(y, "s0_mean", "mc.years");
      if (y.contains("s0_sd")) out.years.s0_sd = detail::number_at(y, "s0_sd", "mc.years");
    }
    if (mc.contains("start")) {
      if (!mc["start"].is_string())
        throw ValidationError("config: mc.start must be 'two-stage' or 'random'");
      std::string s = mc["start"].get<std::string>();
      if (s == "two-stage")
        out.start = StartMode::two_stage;
      else if (s == "random")
        out.start = StartMode::random_start;
      else
        throw ValidationError("config: mc.start must be 'two-stage' or 'random'");
    }
    if (mc.contains("workers")) {
      if (!mc["workers"].is_number_integer() || mc["workers"].get<int>() < 0)
        throw ValidationError("config: mc.workers must be an integer >= 0");
      out.workers = mc["workers"].get<int>();
    }
    cfg.mc = std::move(out);
  }

  return cfg;
}

inline json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: not valid JSON: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// fit problem assembly

/// A FitProblem plus the labelling needed to write outputs: season names
/// from the data file and the original day label of each season's first
/// kept column.
struct ProblemBundle {
  FitProblem problem;
  std::vector<std::string> seasons;
  std::vector<int> first_day;
};

/// Reorder, window and rescale ingested data into a FitProblem according to
/// the config. The table's group names must match the configured ones.
inline ProblemBundle make_fit_problem(const RunConfig& cfg, const IncidenceTable& table) {
  const std::size_t m = cfg.group_count();
  if (table.groups.size() != m)
    throw ValidationError("data/config mismatch: file has " + std::to_string(table.groups.size()) +
                          " groups, config has " + std::to_string(m));
  std::vector<std::size_t> order(m);
  for (std::size_t g = 0; g < m; ++g) {
    auto it = std::find(table.groups.begin(), table.groups.end(), cfg.groups[g].name);
    if (it == table.groups.end())
      throw ValidationError("data/config mismatch: group '" + cfg.groups[g].name +
                            "' not present in the data");
    order[g] = static_cast<std::size_t>(it - table.groups.begin());
  }
  const std::size_t L = table.seasons.size();
  if (cfg.seasons.size() != L)
    throw ValidationError("data/config mismatch: file has " + std::to_string(L) +
                          " seasons, config describes " + std::to_string(cfg.seasons.size()));
  if (cfg.seed_counts && cfg.seed_counts->size() != L)
    throw ValidationError("config: seeding counts must have one row per season");
  if (cfg.reporting && cfg.reporting->seasons() != L)
    throw ValidationError("config: reporting matrices must have one column per season");

  ProblemBundle bundle;
  bundle.seasons = table.seasons;
  FitProblem& problem = bundle.problem;
  problem.serial = cfg.serial;
  problem.smoothing_window = cfg.smoothing_window;
  problem.optimizer = cfg.optimizer;
  problem.s0_free = cfg.s0_free;
  problem.phi_free = !cfg.noise.has_value();
  problem.noise = cfg.noise;
  problem.reporting = cfg.reporting;

  for (std::size_t y = 0; y < L; ++y) {
    int lo = 0, hi = table.series[y].days() - 1;
    if (cfg.seasons[y].window) {
      lo = cfg.seasons[y].window->first - table.first_day[y];
      hi = cfg.seasons[y].window->second - table.first_day[y];
      if (lo < 0 || hi >= table.series[y].days() || lo > hi)
        throw ValidationError("config: season " + table.seasons[y] +
                              " window lies outside the data");
    }
    Matrix vals(m, static_cast<std::size_t>(hi - lo + 1));
    for (std::size_t g = 0; g < m; ++g)
      for (int t = lo; t <= hi; ++t)
        vals(g, static_cast<std::size_t>(t - lo)) =
            table.series[y].values(order[g], static_cast<std::size_t>(t));
    IncidenceSeries obs(std::move(vals));
    if (cfg.ingest_smooth_window) obs = moving_average(obs, *cfg.ingest_smooth_window);
    problem.observations.push_back(std::move(obs));
    bundle.first_day.push_back(table.first_day[y] + lo);

    problem.population.push_back(cfg.populations());
    problem.s0.push_back(cfg.seasons[y].s0);
    std::vector<double> seeds(m);
    for (std::size_t g = 0; g < m; ++g)
      seeds[g] = cfg.seed_counts ? (*cfg.seed_counts)[y][g]
                                 : cfg.seed_fraction * cfg.seasons[y].s0[g] *
                                       cfg.groups[g].population;
    problem.seeds.push_back(std::move(seeds));
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// output directory with atomic writes

/// Output sink: every file is written to a temp name and renamed into place;
/// discard() removes everything already written (failure cleanup).
class OutputDir {
 public:
  explicit OutputDir(const std::filesystem::path& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string());
  }

  const std::filesystem::path& path() const { return dir_; }

  void write_text(const std::string& name, const std::string& content) {
    std::filesystem::path final = dir_ / name;
    std::filesystem::path tmp = dir_ / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + tmp.string());
      out << content;
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place");
    written_.push_back(final);
  }

  void discard() {
    for (const auto& p : written_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
    written_.clear();
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

/// Everything needed to re-run the command: tool version, command name,
/// effective seed and a verbatim copy of the config document.
inline std::string manifest_text(const std::string& command, std::uint64_t seed,
                                 const json& config_doc) {
  json manifest;
  manifest["tool"] = "ngmfit";
  manifest["version"] = version;
  manifest["command"] = command;
  manifest["seed"] = seed;
  manifest["config"] = config_doc;
  return manifest.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// result writers

inline std::string incidence_csv(const std::vector<IncidenceSeries>& series,
                                 const std::vector<std::string>& seasons,
                                 const std::vector<std::string>& groups,
                                 const std::vector<int>& first_day) {
  IncidenceTable t;
  t.seasons = seasons;
  t.groups = groups;
  t.series = series;
  t.first_day = first_day;
  std::ostringstream out;
  export_incidence(out, t);
  return out.str();
}

inline std::string susceptibles_csv(const std::vector<SusceptibleSeries>& sus,
                                    const std::vector<std::string>& seasons,
                                    const std::vector<std::string>& groups) {
  std::ostringstream out;
  out << "season,day,group,susceptible\n";
  for (std::size_t s = 0; s < sus.size(); ++s)
    for (std::size_t j = 0; j < groups.size(); ++j)
      for (int t = 0; t <= sus[s].steps(); ++t)
        out << seasons[s] << ',' << t << ',' << groups[j] << ','
            << fmt_exact(sus[s].s(j, static_cast<std::size_t>(t))) << '\n';
  return out.str();
}

namespace detail {

inline void emit_params(std::ostringstream& out, const std::string& prefix, const Matrix& beta,
                        const std::vector<double>& r,
                        const std::vector<std::vector<double>>& s0) {
  for (std::size_t j = 0; j < beta.rows(); ++j)
    for (std::size_t k = 0; k < beta.cols(); ++k)
      out << prefix << "beta" << j + 1 << k + 1 << " = " << fmt12(beta(j, k)) << '\n';
  for (std::size_t y = 1; y < r.size(); ++y)
    out << prefix << "r" << y + 1 << " = " << fmt12(r[y]) << '\n';
  for (std::size_t y = 0; y < s0.size(); ++y)
    for (std::size_t g = 0; g < s0[y].size(); ++g)
      out << prefix << "s0_" << y + 1 << "_" << g + 1 << " = " << fmt12(s0[y][g]) << '\n';
}

}  // namespace detail

inline std::string fit_result_text(const FitResult& fit) {
  std::ostringstream out;
  out << "tool = ngmfit " << version << '\n';
  out << "command = fit\n";
  out << "seasons = " << fit.r.size() << '\n';
  out << "n_free = " << fit.n_free << '\n';
  out << "converged = " << (fit.converged ? "true" : "false") << '\n';
  out << "evals = " << fit.evals << '\n';
  out << "loglik = " << fmt12(fit.loglik) << '\n';
  out << "stage1_loglik = " << fmt12(fit.stage1.loglik) << '\n';
  out << "stage1_identifiable = " << (fit.stage1.identifiable ? "true" : "false") << '\n';
  detail::emit_params(out, "", fit.beta, fit.r, fit.s0);
  out << "phi_a = " << fmt12(fit.noise.phi_a) << '\n';
  out << "phi_b = " << fmt12(fit.noise.phi_b) << '\n';
  detail::emit_params(out, "stage1_", fit.stage1.beta, fit.stage1.r, fit.stage1.s0);
  return out.str();
}

/// Observed / smoothed / fitted day-by-day table for plotting.
inline std::string fit_series_csv(const FitProblem& problem, const FitResult& fit,
                                  const std::vector<std::string>& seasons,
                                  const std::vector<std::string>& groups,
                                  const std::vector<int>& first_day) {
  std::ostringstream out;
  out << "season,day,group,observed,smoothed,fitted\n";
  for (std::size_t y = 0; y < problem.seasons(); ++y) {
    IncidenceSeries smoothed = moving_average(problem.observations[y], problem.smoothing_window);
    SimulationResult sim =
        simulate_seeded(fit.beta.scaled(fit.r[y]), problem.population[y], fit.s0[y],
                        problem.seeds[y], problem.serial, problem.observations[y].days());
    for (std::size_t j = 0; j < problem.groups(); ++j) {
      double sc = problem.reporting ? problem.reporting->scale(j, y) : 1.0;
      for (int t = 0; t < problem.observations[y].days(); ++t) {
        out << seasons[y] << ',' << first_day[y] + t << ',' << groups[j] << ','
            << fmt12(problem.observations[y].values(j, static_cast<std::size_t>(t))) << ','
            << fmt12(smoothed.values(j, static_cast<std::size_t>(t))) << ','
            << fmt12(sc * sim.incidence.values(j, static_cast<std::size_t>(t))) << '\n';
      }
    }
  }
  return out.str();
}

/// Per-season derived quantities: scaling factor, group and overall basic
/// and effective reproduction numbers at the fitted matrix.
inline std::string year_summary_csv(const FitResult& fit,
                                    const std::vector<std::string>& seasons,
                                    const std::vector<std::string>& groups) {
  NextGenMatrix beta(detail::clamp_nonnegative(fit.beta));
  std::ostringstream out;
  out << "season,r";
  for (const auto& g : groups) out << ",s0_" << g;
  for (const auto& g : groups) out << ",r0_" << g;
  for (const auto& g : groups) out << ",re_" << g;
  out << ",r0_overall,re_overall\n";
  for (std::size_t y = 0; y < fit.r.size(); ++y) {
    out << seasons[y] << ',' << fmt12(fit.r[y]);
    for (std::size_t g = 0; g < groups.size(); ++g) out << ',' << fmt12(fit.s0[y][g]);
    std::vector<double> r0 = group_r0(beta, fit.r[y]);
    for (std::size_t g = 0; g < groups.size(); ++g) out << ',' << fmt12(r0[g]);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      double re = 0.0;
      for (std::size_t j = 0; j < groups.size(); ++j)
        re += fit.r[y] * beta(j, k) * fit.s0[y][j];
      out << ',' << fmt12(re);
    }
    out << ',' << fmt12(fit.r[y] * spectral_radius(beta.matrix())) << ','
        << fmt12(effective_r(beta, fit.s0[y], fit.r[y])) << '\n';
  }
  return out.str();
}

inline std::string mc_summary_text(const McSummary& summary, const std::string& matrix_id,
                                   Scenario scenario) {
  std::ostringstream out;
  out << "tool = ngmfit " << version << '\n';
  out << "command = mc\n";
  out << "matrix = " << matrix_id << '\n';
  out << "scenario = " << scenario_label(scenario) << '\n';
  out << "replicates = " << summary.replicates << '\n';
  out << "failed = " << summary.failed << '\n';
  out << "failure_alarm = " << (summary.failure_alarm ? "true" : "false") << '\n';
  for (const auto& ps : summary.beta_stats)
    out << "truth_" << ps.name << " = " << fmt12(ps.truth) << '\n';
  for (const auto& ps : summary.beta_stats) {
    out << "mean_" << ps.name << " = " << fmt12(ps.mean) << '\n';
    out << "bias_" << ps.name << " = " << fmt12(ps.bias) << '\n';
    out << "sd_" << ps.name << " = " << fmt12(ps.sd) << '\n';
  }
  out << "mse = " << fmt12(summary.mse) << '\n';
  for (const auto& ps : summary.stage1_beta_stats) {
    out << "stage1_mean_" << ps.name << " = " << fmt12(ps.mean) << '\n';
    out << "stage1_bias_" << ps.name << " = " << fmt12(ps.bias) << '\n';
    out << "stage1_sd_" << ps.name << " = " << fmt12(ps.sd) << '\n';
  }
  out << "stage1_mse = " << fmt12(summary.stage1_mse) << '\n';
  return out.str();
}

inline std::string mc_replicates_csv(const McSummary& summary) {
  const std::size_t m = summary.truth_beta.rows();
  const std::size_t years = summary.r_estimates.empty() ? 1 : summary.r_estimates[0].size();
  std::ostringstream out;
  out << "replicate,converged,loglik";
  for (std::size_t j = 1; j <= m; ++j)
    for (std::size_t k = 1; k <= m; ++k) out << ",beta" << j << k;
  for (std::size_t y = 2; y <= years; ++y) out << ",r" << y;
  for (std::size_t j = 1; j <= m; ++j)
    for (std::size_t k = 1; k <= m; ++k) out << ",stage1_beta" << j << k;
  out << '\n';

  std::size_t slot = 0;
  std::set<int> failed(summary.failed_replicates.begin(), summary.failed_replicates.end());
  for (int rep = 1; rep <= summary.replicates; ++rep) {
    if (failed.count(rep)) continue;
    out << rep << ',' << (summary.converged[slot] ? "true" : "false") << ','
        << fmt12(summary.logliks[slot]);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) out << ',' << fmt12(summary.estimates[slot](j, k));
    for (std::size_t y = 1; y < years; ++y) out << ',' << fmt12(summary.r_estimates[slot][y]);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k)
        out << ',' << fmt12(summary.stage1_estimates[slot](j, k));
    out << '\n';
    ++slot;
  }
  return out.str();
}

inline std::string year_draws_csv(const YearDraws& draws) {
  std::ostringstream out;
  out << "season,re,r,horizon";
  for (std::size_t g = 1; g <= draws.s0[0].size(); ++g) out << ",s0_" << g;
  out << '\n';
  for (std::size_t y = 0; y < draws.re.size(); ++y) {
    out << y + 1 << ',' << fmt12(draws.re[y]) << ',' << fmt12(draws.r[y]) << ','
        << draws.horizon[y];
    for (double s : draws.s0[y]) out << ',' << fmt12(s);
    out << '\n';
  }
  return out.str();
}

inline std::string profile_result_text(const ProfileInterval& ci, double loglik_max) {
  std::ostringstream out;
  out << "tool = ngmfit " << version << '\n';
  out << "command = profile\n";
  out << "param = " << ci.param << '\n';
  out << "level = " << fmt12(ci.level) << '\n';
  out << "mle = " << fmt12(ci.mle) << '\n';
  out << "lower = " << fmt12(ci.lower) << '\n';
  out << "upper = " << fmt12(ci.upper) << '\n';
  out << "open_lower = " << (ci.open_lower ? "true" : "false") << '\n';
  out << "open_upper = " << (ci.open_upper ? "true" : "false") << '\n';
  out << "loglik_max = " << fmt12(loglik_max) << '\n';
  return out.str();
}

inline std::string profile_grid_csv(const ProfileInterval& ci) {
  std::vector<std::pair<double, double>> grid = ci.grid;
  std::sort(grid.begin(), grid.end());
  std::ostringstream out;
  out << "value,loglik\n";
  for (const auto& [v, ll] : grid) out << fmt12(v) << ',' << fmt12(ll) << '\n';
  return out.str();
}

inline std::string identifiability_text(const IdentifiabilityReport& rep) {
  std::ostringstream out;
  for (std::size_t j = 0; j < rep.det_blocks.size(); ++j)
    out << "det_block_" << j + 1 << " = " << fmt12(rep.det_blocks[j]) << '\n';
  out << "condition = " << fmt12(rep.condition) << '\n';
  out << "min_singular = " << fmt12(rep.min_singular) << '\n';
  out << "max_singular = " << fmt12(rep.max_singular) << '\n';
  out << "flagged = " << (rep.flagged ? "true" : "false") << '\n';
  return out.str();
}

}  // namespace ngmfit
