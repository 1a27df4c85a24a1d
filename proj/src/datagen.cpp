#include "ucf/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::data {

std::string_view split_name(Split s) { return s == Split::kTrain ? "train" : "val"; }

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::kTrain) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::train_positive_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::kTrain && samples[i].labeled_positive()) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::train_unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::kTrain && !samples[i].labeled_positive()) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::val_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::kVal) out.push_back(i);
  return out;
}

num::Matrix Dataset::features(const std::vector<std::size_t>& indices) const {
  num::Matrix m(indices.size(), kFeatureCount);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& f = samples.at(indices[r]).features;
    std::copy(f.begin(), f.end(), m.row(r).begin());
  }
  return m;
}

void Dataset::check_integrity() const {
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.session_id).second) {
      throw IntegrityError("duplicate session_id " + s.session_id);
    }
    if (s.ground_truth != 1 && s.ground_truth != -1) {
      throw IntegrityError("ground_truth must be 1 or -1 for " + s.session_id);
    }
    if (s.labeled_positive() && s.ground_truth != 1) {
      throw IntegrityError("labeled positive " + s.session_id + " has ground truth -1");
    }
  }
}

void GenConfig::validate() const {
  if (n_total < 1) throw ConfigError("gen.n_total must be >= 1");
  if (!(positive_prior > 0.0 && positive_prior < 1.0))
    throw ConfigError("gen.prior must lie in (0, 1)");
  if (!(separation >= 0.0)) throw ConfigError("gen.separation must be >= 0");
  if (!(noise_fraction >= 0.0 && noise_fraction < 1.0))
    throw ConfigError("gen.noise must lie in [0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("gen.val_fraction must lie in [0, 1)");
  if (!(val_positive_prevalence >= 0.0 && val_positive_prevalence <= 1.0))
    throw ConfigError("gen.val_prevalence must lie in [0, 1]");
}

SplitPlan plan(const GenConfig& cfg) {
  cfg.validate();
  auto count = [](double x) { return static_cast<std::size_t>(std::llround(x)); };
  SplitPlan p;
  p.n_val = count(cfg.val_fraction * static_cast<double>(cfg.n_total));
  const double prevalence = cfg.balanced_val ? 0.5 : cfg.val_positive_prevalence;
  p.n_val_positive = count(prevalence * static_cast<double>(p.n_val));
  if (p.n_val >= cfg.n_total) throw ConfigError("validation split leaves no training samples");
  p.n_train = cfg.n_total - p.n_val;
  if (cfg.n_labeled_positive > p.n_train) {
    throw ConfigError("gen.n_labeled (" + std::to_string(cfg.n_labeled_positive) +
                      ") exceeds the training split (" + std::to_string(p.n_train) + ")");
  }
  p.n_train_unlabeled = p.n_train - cfg.n_labeled_positive;
  p.n_train_unlabeled_positive =
      count(cfg.positive_prior * static_cast<double>(p.n_train_unlabeled));
  p.n_flipped = count(cfg.noise_fraction * static_cast<double>(cfg.n_total));
  return p;
}

std::array<double, kFeatureCount> class_direction(std::uint64_t seed) {
  num::Rng rng(num::derive_seed(seed, "gen.direction"));
  std::array<double, kFeatureCount> u{};
  double ss = 0.0;
  while (ss < 1e-12) {
    ss = 0.0;
    for (double& v : u) {
      v = rng.normal();
      ss += v * v;
    }
  }
  const double norm = std::sqrt(ss);
  for (double& v : u) v /= norm;
  return u;
}

Dataset generate(const GenConfig& cfg) {
  const SplitPlan p = plan(cfg);
  const auto u = class_direction(cfg.seed);
  num::Rng rng(num::derive_seed(cfg.seed, "gen.samples"));

  struct Slot {
    int truth;
    PuLabel pu;
    Split split;
  };
  std::vector<Slot> slots;
  slots.reserve(cfg.n_total);
  auto add = [&](std::size_t n, int truth, PuLabel pu, Split split) {
    for (std::size_t i = 0; i < n; ++i) slots.push_back({truth, pu, split});
  };
  add(cfg.n_labeled_positive, 1, PuLabel::kPositive, Split::kTrain);
  add(p.n_train_unlabeled_positive, 1, PuLabel::kUnlabeled, Split::kTrain);
  add(p.n_train_unlabeled - p.n_train_unlabeled_positive, -1, PuLabel::kUnlabeled, Split::kTrain);
  add(p.n_val_positive, 1, PuLabel::kUnlabeled, Split::kVal);
  add(p.n_val - p.n_val_positive, -1, PuLabel::kUnlabeled, Split::kVal);
  rng.shuffle(slots);

  std::vector<bool> flipped(slots.size(), false);
  for (std::size_t i : rng.sample_without_replacement(slots.size(), p.n_flipped)) flipped[i] = true;

  Dataset ds;
  ds.samples.reserve(slots.size());
  const double half = cfg.separation / 2.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", i);
    s.session_id = id;
    s.ground_truth = slots[i].truth;
    s.pu_label = slots[i].pu;
    s.split = slots[i].split;
    const double side = flipped[i] ? -slots[i].truth : slots[i].truth;
    for (std::size_t j = 0; j < kFeatureCount; ++j)
      s.features[j] = side * half * u[j] + rng.normal();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset preprocess(const Dataset& dataset, PreprocessStats* stats) {
  PreprocessStats local;
  Dataset out;
  std::set<std::array<double, kFeatureCount>> seen;
  for (const auto& s : dataset.samples) {
    if (seen.insert(s.features).second) {
      out.samples.push_back(s);
    } else {
      ++local.duplicates_removed;
    }
  }

  // Identifier or label leakage: a feature column that reproduces a label
  // column or the numeric part of the session id on every row.
  for (std::size_t j = 0; j < kFeatureCount && out.size() > 1; ++j) {
    bool same_pu = true, same_truth = true, same_id = true;
    for (const auto& s : out.samples) {
      const double v = s.features[j];
      same_pu = same_pu && v == static_cast<double>(static_cast<int>(s.pu_label));
      same_truth = same_truth && v == static_cast<double>(s.ground_truth);
      double id_num = std::nan("");
      const auto& id = s.session_id;
      const auto digits = id.find_first_of("0123456789");
      if (digits != std::string::npos)
        std::from_chars(id.data() + digits, id.data() + id.size(), id_num);
      same_id = same_id && v == id_num;
    }
    if (same_pu || same_truth || same_id) {
      throw IntegrityError("feature column f" + std::to_string(j) +
                           " duplicates a label or session-id column");
    }
  }

  local.min.fill(INFINITY);
  local.max.fill(-INFINITY);
  bool any_train = false;
  for (const auto& s : out.samples) {
    if (s.split != Split::kTrain) continue;
    any_train = true;
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      local.min[j] = std::min(local.min[j], s.features[j]);
      local.max[j] = std::max(local.max[j], s.features[j]);
    }
  }
  if (!any_train) throw ContractError("preprocess needs at least one training sample");

  for (auto& s : out.samples) {
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const double range = local.max[j] - local.min[j];
      double v = range > 0.0 ? (s.features[j] - local.min[j]) / range : 0.5;
      if (s.split == Split::kVal) v = std::clamp(v, -0.5, 1.5);
      s.features[j] = v;
    }
  }
  if (stats) *stats = local;
  return out;
}

// --- CSV ---------------------------------------------------------------------

namespace {

constexpr std::size_t kColumns = kFeatureCount + 4;

std::string header() {
  std::string h = "session_id";
  for (std::size_t j = 0; j < kFeatureCount; ++j) h += ",f" + std::to_string(j);
  h += ",pu_label,ground_truth,split";
  return h;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError("not a number: '" + std::string(field) + "'", line);
  }
  if (!std::isfinite(v)) throw ParseError("non-finite feature value", line);
  return v;
}

int parse_int(std::string_view field, std::size_t line) {
  int v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError("not an integer: '" + std::string(field) + "'", line);
  }
  return v;
}

}  // namespace

std::string to_csv(const Dataset& dataset) {
  std::string out = header() + "\n";
  for (const auto& s : dataset.samples) {
    out += s.session_id;
    for (double f : s.features) {
      out += ',';
      out += io::format_double(f);
    }
    out += s.labeled_positive() ? ",1," : ",0,";
    out += std::to_string(s.ground_truth);
    out += ',';
    out += split_name(s.split);
    out += '\n';
  }
  return out;
}

Dataset from_csv(std::string_view text) {
  Dataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    pos = nl == text.npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    if (!saw_header) {
      if (line != header()) throw ParseError("unexpected header", line_no);
      saw_header = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() != kColumns) {
      throw ParseError("expected " + std::to_string(kColumns) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Sample s;
    s.session_id = std::string(fields[0]);
    if (s.session_id.empty()) throw ParseError("empty session_id", line_no);
    for (std::size_t j = 0; j < kFeatureCount; ++j) s.features[j] = parse_double(fields[1 + j], line_no);
    const int pu = parse_int(fields[kFeatureCount + 1], line_no);
    if (pu != 0 && pu != 1) throw ParseError("pu_label must be 0 or 1", line_no);
    s.pu_label = pu == 1 ? PuLabel::kPositive : PuLabel::kUnlabeled;
    s.ground_truth = parse_int(fields[kFeatureCount + 2], line_no);
    if (s.ground_truth != 1 && s.ground_truth != -1)
      throw ParseError("ground_truth must be 1 or -1", line_no);
    const auto split = fields[kFeatureCount + 3];
    if (split == "train") {
      s.split = Split::kTrain;
    } else if (split == "val") {
      s.split = Split::kVal;
    } else {
      throw ParseError("split must be train or val", line_no);
    }
    ds.samples.push_back(std::move(s));
  }
  if (!saw_header) throw ParseError("missing header", line_no == 0 ? 1 : line_no);
  ds.check_integrity();
  return ds;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_csv(dataset));
}

Dataset load(const std::filesystem::path& path) { return from_csv(io::read_text(path)); }

}  // namespace ucf::data
