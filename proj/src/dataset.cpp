#include "metagp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include <json.hpp>

#include "metagp/errors.hpp"

namespace metagp::data {

namespace {

// Population statistics (divide by N): {0, 2} normalizes to {-1, 1}.
void column_stats(const std::vector<double>& v, double* mean, double* stdev) {
  double s = 0.0;
  for (double x : v) s += x;
  *mean = s / static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - *mean) * (x - *mean);
  *stdev = std::sqrt(q / static_cast<double>(v.size()));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(const std::string& field, const char* what, long line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty()) {
    throw ParseError(std::string("expected a number for ") + what + ", got \"" + field + "\"",
                     line);
  }
  if (!std::isfinite(v)) {
    throw ParseError(std::string("non-finite value for ") + what, line);
  }
  return v;
}

void write_double(std::FILE* f, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::fputs(buf, f);
}

struct TaskBuilder {
  std::string region, attribute;
  std::vector<std::vector<double>> rows;  // each M+2 locations then y
};

}  // namespace

std::vector<std::string> DatasetCollection::region_ids() const {
  std::vector<std::string> out;
  for (const TaskDataset& t : tasks) {
    if (std::find(out.begin(), out.end(), t.region_id) == out.end()) {
      out.push_back(t.region_id);
    }
  }
  return out;
}

std::vector<std::string> DatasetCollection::attribute_ids() const {
  std::vector<std::string> out;
  for (const TaskDataset& t : tasks) {
    if (std::find(out.begin(), out.end(), t.attribute_id) == out.end()) {
      out.push_back(t.attribute_id);
    }
  }
  return out;
}

std::vector<const TaskDataset*> DatasetCollection::tasks_in_region(
    const std::string& region_id) const {
  std::vector<const TaskDataset*> out;
  for (const TaskDataset& t : tasks) {
    if (t.region_id == region_id) out.push_back(&t);
  }
  return out;
}

const TaskDataset* DatasetCollection::find(const std::string& region_id,
                                           const std::string& attribute_id) const {
  for (const TaskDataset& t : tasks) {
    if (t.region_id == region_id && t.attribute_id == attribute_id) return &t;
  }
  return nullptr;
}

Eigen::Index DatasetCollection::min_task_size() const {
  Eigen::Index m = 0;
  for (const TaskDataset& t : tasks) {
    if (m == 0 || t.size() < m) m = t.size();
  }
  return m;
}

DatasetCollection load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file: " + path);

  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 5 || header[0] != "region_id" || header[1] != "attribute_id" ||
      header[2] != "x1" || header[3] != "x2" || header.back() != "y") {
    throw ParseError("header must be region_id,attribute_id,x1,x2,aux_1..aux_M,y", 1);
  }
  const int aux = static_cast<int>(header.size()) - 5;
  for (int m = 0; m < aux; ++m) {
    if (header[4 + m] != "aux_" + std::to_string(m + 1)) {
      throw ParseError("auxiliary columns must be named aux_1..aux_M in order", 1);
    }
  }

  std::vector<TaskBuilder> builders;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()),
                       line_no);
    }
    if (f[0].empty() || f[1].empty()) {
      throw ParseError("region_id and attribute_id must be non-empty", line_no);
    }
    std::vector<double> row(aux + 3);
    row[0] = parse_double(f[2], "x1", line_no);
    row[1] = parse_double(f[3], "x2", line_no);
    for (int m = 0; m < aux; ++m) {
      row[2 + m] = parse_double(f[4 + m], header[4 + m].c_str(), line_no);
    }
    row[aux + 2] = parse_double(f.back(), "y", line_no);

    const auto key = std::make_pair(f[0], f[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, builders.size()).first;
      builders.push_back({f[0], f[1], {}});
    }
    builders[it->second].rows.push_back(std::move(row));
  }
  if (builders.empty()) throw ParseError("no data rows", line_no);

  DatasetCollection out;
  out.aux_dims = aux;
  out.tasks.reserve(builders.size());
  for (TaskBuilder& b : builders) {
    TaskDataset t;
    t.region_id = std::move(b.region);
    t.attribute_id = std::move(b.attribute);
    const Eigen::Index n = static_cast<Eigen::Index>(b.rows.size());
    t.locations.resize(n, aux + 2);
    t.values.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < aux + 2; ++j) t.locations(i, j) = b.rows[i][j];
      t.values(i, 0) = b.rows[i][aux + 2];
    }
    out.tasks.push_back(std::move(t));
  }
  return out;
}

void save_csv(const DatasetCollection& collection, const std::string& path) {
  if (collection.tasks.empty()) throw ConfigError("save_csv: collection is empty");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError("cannot write dataset file: " + path);
  std::fputs("region_id,attribute_id,x1,x2", f);
  for (int m = 1; m <= collection.aux_dims; ++m) {
    std::fprintf(f, ",aux_%d", m);
  }
  std::fputs(",y\n", f);
  for (const TaskDataset& t : collection.tasks) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::fprintf(f, "%s,%s", t.region_id.c_str(), t.attribute_id.c_str());
      for (Eigen::Index j = 0; j < t.locations.cols(); ++j) {
        std::fputc(',', f);
        write_double(f, t.locations(i, j));
      }
      std::fputc(',', f);
      write_double(f, t.values(i, 0));
      std::fputc('\n', f);
    }
  }
  std::fclose(f);
}

namespace {

// Normalizes one column in place; returns the (mean, std) actually applied.
// A zero or single-point std is forced to 1 (mean still subtracted).
std::pair<double, double> normalize_column(Eigen::Ref<Eigen::VectorXd> col, bool* degenerate) {
  std::vector<double> v(col.data(), col.data() + col.size());
  double mean = 0.0, stdev = 0.0;
  column_stats(v, &mean, &stdev);
  if (col.size() < 2) {
    stdev = 1.0;
  } else if (stdev == 0.0) {
    stdev = 1.0;
    *degenerate = true;
  }
  col = (col.array() - mean) / stdev;
  return {mean, stdev};
}

}  // namespace

DatasetCollection normalize(const DatasetCollection& collection, NormPolicy policy) {
  for (const TaskDataset& t : collection.tasks) {
    if (t.normalized) {
      throw ConfigError("normalize: task " + t.region_id + "/" + t.attribute_id +
                        " is already normalized");
    }
  }
  DatasetCollection out = collection;
  const int d = collection.aux_dims + 2;

  if (policy == NormPolicy::kOffline) {
    for (TaskDataset& t : out.tasks) {
      t.norm.loc_mean.resize(d);
      t.norm.loc_std.resize(d);
      for (int j = 0; j < d; ++j) {
        auto [m, s] = normalize_column(t.locations.col(j), &t.norm.degenerate);
        t.norm.loc_mean[j] = m;
        t.norm.loc_std[j] = s;
      }
      auto [m, s] = normalize_column(t.values.col(0), &t.norm.degenerate);
      t.norm.y_mean = m;
      t.norm.y_std = s;
      t.norm.y_normalized = true;
      t.normalized = true;
    }
    return out;
  }

  // Support-only: location statistics come from the region's full observed
  // geometry (locations are never held out); value statistics are an episode
  // concern, filled by with_support_value_stats.
  for (const std::string& r : out.region_ids()) {
    std::vector<double> mean(d), stdev(d);
    bool degenerate = false;
    for (int j = 0; j < d; ++j) {
      std::vector<double> pooled;
      for (const TaskDataset* t : out.tasks_in_region(r)) {
        for (Eigen::Index i = 0; i < t->size(); ++i) pooled.push_back(t->locations(i, j));
      }
      column_stats(pooled, &mean[j], &stdev[j]);
      if (pooled.size() < 2) {
        stdev[j] = 1.0;
      } else if (stdev[j] == 0.0) {
        stdev[j] = 1.0;
        degenerate = true;
      }
    }
    for (TaskDataset& t : out.tasks) {
      if (t.region_id != r) continue;
      for (int j = 0; j < d; ++j) {
        t.locations.col(j) = (t.locations.col(j).array() - mean[j]) / stdev[j];
      }
      t.norm.loc_mean = mean;
      t.norm.loc_std = stdev;
      t.norm.degenerate = degenerate;
      t.norm.y_normalized = false;
      t.normalized = true;
    }
  }
  return out;
}

NormRecord with_support_value_stats(NormRecord base, const Matrix& support_values) {
  if (support_values.size() == 0) {
    throw ConfigError("with_support_value_stats: empty support");
  }
  std::vector<double> v(support_values.data(), support_values.data() + support_values.size());
  double mean = 0.0, stdev = 0.0;
  column_stats(v, &mean, &stdev);
  if (v.size() < 2) {
    stdev = 1.0;
  } else if (stdev == 0.0) {
    stdev = 1.0;
    base.degenerate = true;
  }
  base.y_mean = mean;
  base.y_std = stdev;
  base.y_normalized = true;
  return base;
}

double normalize_value(double raw, const NormRecord& record) {
  return (raw - record.y_mean) / record.y_std;
}

double denormalize_value(double normalized, const NormRecord& record) {
  return normalized * record.y_std + record.y_mean;
}

double denormalize_variance(double normalized_var, const NormRecord& record) {
  return normalized_var * record.y_std * record.y_std;
}

Matrix normalize_locations(const Matrix& raw, const NormRecord& record) {
  if (static_cast<std::size_t>(raw.cols()) != record.loc_mean.size()) {
    throw ShapeError("normalize_locations: record covers " +
                     std::to_string(record.loc_mean.size()) + " columns, input has " +
                     std::to_string(raw.cols()));
  }
  Matrix out = raw;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    out.col(j) = (out.col(j).array() - record.loc_mean[j]) / record.loc_std[j];
  }
  return out;
}

void save_norm_records(const DatasetCollection& collection, const std::string& path) {
  nlohmann::json j;
  for (const TaskDataset& t : collection.tasks) {
    nlohmann::json rec;
    rec["loc_mean"] = t.norm.loc_mean;
    rec["loc_std"] = t.norm.loc_std;
    rec["y_mean"] = t.norm.y_mean;
    rec["y_std"] = t.norm.y_std;
    rec["y_normalized"] = t.norm.y_normalized;
    rec["degenerate"] = t.norm.degenerate;
    j[t.region_id][t.attribute_id] = std::move(rec);
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write normalization records: " + path);
  out << j.dump(2) << "\n";
}

void load_norm_records(DatasetCollection& collection, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open normalization records: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad normalization-record JSON: ") + e.what(), 0);
  }
  for (TaskDataset& t : collection.tasks) {
    if (!j.contains(t.region_id) || !j[t.region_id].contains(t.attribute_id)) {
      throw ConfigError("missing normalization record for " + t.region_id + "/" +
                        t.attribute_id);
    }
    const nlohmann::json& rec = j[t.region_id][t.attribute_id];
    NormRecord n;
    n.loc_mean = rec.at("loc_mean").get<std::vector<double>>();
    n.loc_std = rec.at("loc_std").get<std::vector<double>>();
    n.y_mean = rec.at("y_mean").get<double>();
    n.y_std = rec.at("y_std").get<double>();
    n.y_normalized = rec.at("y_normalized").get<bool>();
    n.degenerate = rec.at("degenerate").get<bool>();
    t.norm = std::move(n);
  }
}

namespace {

// floor(n * f) with protection against 0.9999... representation error.
int floor_count(int n, double fraction) {
  return static_cast<int>(std::floor(n * fraction + 1e-9));
}

std::vector<std::string> take(const std::vector<std::string>& ids, int from, int count) {
  return {ids.begin() + from, ids.begin() + from + count};
}

bool contains(const std::vector<std::string>& ids, const std::string& id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

void check_fractions(const SplitFractions& f, const char* axis) {
  if (f.train < 0 || f.validation < 0 || f.target < 0 ||
      std::abs(f.train + f.validation + f.target - 1.0) > 1e-9) {
    throw ConfigError(std::string("split: ") + axis + " fractions must be >= 0 and sum to 1");
  }
}

}  // namespace

SplitResult split(const DatasetCollection& collection, const SplitFractions& regions,
                  const SplitFractions& attributes, std::uint64_t seed) {
  check_fractions(regions, "region");
  check_fractions(attributes, "attribute");

  std::mt19937_64 rng(seed);
  std::vector<std::string> r_ids = collection.region_ids();
  std::vector<std::string> c_ids = collection.attribute_ids();
  std::shuffle(r_ids.begin(), r_ids.end(), rng);
  std::shuffle(c_ids.begin(), c_ids.end(), rng);

  const int nr = static_cast<int>(r_ids.size());
  const int nc = static_cast<int>(c_ids.size());
  const int r_val = floor_count(nr, regions.validation);
  const int r_tgt = floor_count(nr, regions.target);
  const int r_train = nr - r_val - r_tgt;
  const int c_val = floor_count(nc, attributes.validation);
  const int c_tgt = floor_count(nc, attributes.target);
  const int c_train = nc - c_val - c_tgt;
  if (r_train <= 0 || r_val <= 0 || r_tgt <= 0 || c_train <= 0 || c_val <= 0 || c_tgt <= 0) {
    throw ConfigError("split: every region and attribute split must be non-empty (got regions " +
                      std::to_string(r_train) + "/" + std::to_string(r_val) + "/" +
                      std::to_string(r_tgt) + ", attributes " + std::to_string(c_train) + "/" +
                      std::to_string(c_val) + "/" + std::to_string(c_tgt) + ")");
  }

  const std::vector<std::string> r_sets[3] = {take(r_ids, 0, r_train),
                                              take(r_ids, r_train, r_val),
                                              take(r_ids, r_train + r_val, r_tgt)};
  const std::vector<std::string> c_sets[3] = {take(c_ids, 0, c_train),
                                              take(c_ids, c_train, c_val),
                                              take(c_ids, c_train + c_val, c_tgt)};

  SplitResult out;
  DatasetCollection* dests[3] = {&out.train, &out.validation, &out.target};
  for (int s = 0; s < 3; ++s) {
    dests[s]->aux_dims = collection.aux_dims;
    for (const TaskDataset& t : collection.tasks) {
      if (contains(r_sets[s], t.region_id) && contains(c_sets[s], t.attribute_id)) {
        dests[s]->tasks.push_back(t);
      }
    }
    if (dests[s]->tasks.empty()) {
      throw ConfigError("split: a non-empty id split produced an empty task set");
    }
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (regions < 1 || attributes < 1) {
    throw ConfigError("synthetic: regions and attributes must be >= 1");
  }
  if (grid < 2) throw ConfigError("synthetic: grid side must be >= 2");
  if (grid > grid_cap) {
    throw ConfigError("synthetic: grid side " + std::to_string(grid) + " exceeds the dense-" +
                      "Cholesky cap " + std::to_string(grid_cap) + "; use a smaller grid");
  }
  const std::pair<double, double> ranges[] = {{len_lo, len_hi},         {amp_lo, amp_hi},
                                              {lin_lo, lin_hi},         {sin_amp_lo, sin_amp_hi},
                                              {sin_freq_lo, sin_freq_hi}, {noise_lo, noise_hi}};
  for (auto [lo, hi] : ranges) {
    if (!(lo <= hi)) throw ConfigError("synthetic: every range needs lower <= upper");
  }
  if (len_lo <= 0.0) throw ConfigError("synthetic: length scale must be positive");
  if (amp_lo < 0.0 || noise_lo < 0.0 || sin_amp_lo < 0.0) {
    throw ConfigError("synthetic: amplitude, sinusoid amplitude, and noise must be >= 0");
  }
}

DatasetCollection generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const int g = config.grid;
  const Eigen::Index n = static_cast<Eigen::Index>(g) * g;

  // Shared grid over [-1, 1]^2; row index is gy * G + gx.
  Matrix locations(n, 2);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      locations(gy * g + gx, 0) = -1.0 + 2.0 * gx / (g - 1);
      locations(gy * g + gx, 1) = -1.0 + 2.0 * gy / (g - 1);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const int width = static_cast<int>(std::to_string(config.regions - 1).size());
  DatasetCollection out;
  out.aux_dims = 0;
  out.tasks.reserve(static_cast<std::size_t>(config.regions) * config.attributes);

  for (int r = 0; r < config.regions; ++r) {
    std::string rid = std::to_string(r);
    rid = "r" + std::string(width - rid.size(), '0') + rid;
    for (int c = 0; c < config.attributes; ++c) {
      const double len = std::exp(uniform(std::log(config.len_lo), std::log(config.len_hi)));
      const double amp = uniform(config.amp_lo, config.amp_hi);
      const double lin1 = uniform(config.lin_lo, config.lin_hi);
      const double lin2 = uniform(config.lin_lo, config.lin_hi);
      const double sin_amp = uniform(config.sin_amp_lo, config.sin_amp_hi);
      const double sin_freq = uniform(config.sin_freq_lo, config.sin_freq_hi);
      const double sin_phase = uniform(0.0, 2.0 * std::numbers::pi);
      const double noise = uniform(config.noise_lo, config.noise_hi);

      Matrix field = Matrix::Zero(n, 1);
      if (amp > 0.0) {
        Matrix cov(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index j = 0; j <= i; ++j) {
            const double d2 = (locations.row(i) - locations.row(j)).squaredNorm();
            cov(i, j) = cov(j, i) = amp * amp * std::exp(-d2 / (2.0 * len * len));
          }
          cov(i, i) += 1e-8;
        }
        const int minor = ad::detail::cholesky_inplace(cov);
        if (minor != 0) {
          throw NumericalError("synthetic: grid covariance not PD", minor);
        }
        Matrix draw(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) draw(i, 0) = gauss(rng);
        field = cov.triangularView<Eigen::Lower>() * draw;
      }

      TaskDataset t;
      t.region_id = rid;
      t.attribute_id = "a" + std::to_string(c);
      t.locations = locations;
      t.values.resize(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u1 = locations(i, 0);
        const double u2 = locations(i, 1);
        const double trend = lin1 * u1 + lin2 * u2 +
                             sin_amp * std::sin(std::numbers::pi * sin_freq * (u1 + u2) +
                                                sin_phase);
        t.values(i, 0) = field(i, 0) + trend + noise * gauss(rng);
      }
      if (!t.values.allFinite()) {
        throw NumericalError("synthetic: non-finite values generated for " + rid);
      }
      out.tasks.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace metagp::data
