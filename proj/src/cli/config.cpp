#include "ucf/cli/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <set>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

std::size_t parse_count(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

std::uint32_t parse_dim(std::string_view key, std::string_view v) {
  const auto x = parse_u64(key, v);
  if (x > 0xffffffffULL) throw ConfigError(std::string(key) + ": value too large");
  return static_cast<std::uint32_t>(x);
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string show(double v) { return io::format_double(v); }
std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define UCF_FIELD(KEY, MEMBER, PARSE, CAST)                                            \
  Field {                                                                              \
    KEY, [](RunConfig& c, std::string_view v) { c.MEMBER = PARSE(KEY, v); },           \
        [](const RunConfig& c) { return show(static_cast<CAST>(c.MEMBER)); }           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      UCF_FIELD("root.seed", seed, parse_u64, std::uint64_t),
      UCF_FIELD("gen.n_total", gen.n_total, parse_count, std::uint64_t),
      UCF_FIELD("gen.n_labeled", gen.n_labeled_positive, parse_count, std::uint64_t),
      UCF_FIELD("gen.positive_prior", gen.positive_prior, parse_double, double),
      UCF_FIELD("gen.separation", gen.separation, parse_double, double),
      UCF_FIELD("gen.noise_fraction", gen.noise_fraction, parse_double, double),
      UCF_FIELD("gen.val_fraction", gen.val_fraction, parse_double, double),
      UCF_FIELD("gen.val_prevalence", gen.val_positive_prevalence, parse_double, double),
      UCF_FIELD("gen.balanced_val", gen.balanced_val, parse_bool, bool),
      UCF_FIELD("encoder.token_dim", encoder.token_dim, parse_dim, std::uint64_t),
      UCF_FIELD("encoder.hidden", encoder.hidden, parse_dim, std::uint64_t),
      UCF_FIELD("encoder.heads", encoder.heads, parse_dim, std::uint64_t),
      UCF_FIELD("encoder.embed_dim", encoder.embed_dim, parse_dim, std::uint64_t),
      UCF_FIELD("train.lr", train.lr, parse_double, double),
      UCF_FIELD("train.batch", train.batch, parse_count, std::uint64_t),
      UCF_FIELD("train.aux", train.auxiliary, parse_count, std::uint64_t),
      UCF_FIELD("train.stage1_epochs", train.stage1_epochs, parse_count, std::uint64_t),
      UCF_FIELD("train.stage2_epochs", train.stage2_epochs, parse_count, std::uint64_t),
      UCF_FIELD("train.margin", train.margin, parse_double, double),
      UCF_FIELD("train.quantile", train.quantile, parse_double, double),
      UCF_FIELD("train.head_weight", train.head_weight, parse_double, double),
      Field{"train.variant",
            [](RunConfig& c, std::string_view v) {
              if (v == "eq3") {
                c.train.variant = conpu::LossVariant::kEq3Unweighted;
              } else if (v == "eq4") {
                c.train.variant = conpu::LossVariant::kEq4Weighted;
              } else {
                throw ConfigError("train.variant: expected eq3 or eq4, got '" + std::string(v) +
                                  "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.train.variant == conpu::LossVariant::kEq3Unweighted ? "eq3"
                                                                                       : "eq4");
            }},
      UCF_FIELD("train.tau0", train.tau.tau0, parse_double, double),
      UCF_FIELD("train.tau1", train.tau.tau1, parse_double, double),
      UCF_FIELD("train.tau_min", train.tau.tau_min, parse_double, double),
      UCF_FIELD("train.tau_max", train.tau.tau_max, parse_double, double),
      UCF_FIELD("train.beta1", train.beta1, parse_double, double),
      UCF_FIELD("train.beta2", train.beta2, parse_double, double),
      UCF_FIELD("train.eps", train.eps, parse_double, double),
      UCF_FIELD("eval.folds", folds, parse_count, std::uint64_t),
      Field{"eval.classifiers",
            [](RunConfig& c, std::string_view v) {
              std::vector<downstream::Kind> kinds;
              if (trim(v) == "all") {
                const auto& all = downstream::all_kinds();
                kinds.assign(all.begin(), all.end());
              } else {
                std::size_t start = 0;
                while (start <= v.size()) {
                  const auto comma = v.find(',', start);
                  const auto end = comma == std::string_view::npos ? v.size() : comma;
                  const auto kind = downstream::parse_kind(trim(v.substr(start, end - start)));
                  if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end()) {
                    throw ConfigError("eval.classifiers lists '" +
                                      std::string(downstream::kind_name(kind)) + "' twice");
                  }
                  kinds.push_back(kind);
                  start = end + 1;
                }
              }
              c.classifiers = std::move(kinds);
            },
            [](const RunConfig& c) {
              std::string out;
              for (auto k : c.classifiers) {
                if (!out.empty()) out += ",";
                out += downstream::kind_name(k);
              }
              return out;
            }},
      UCF_FIELD("eval.tsne_perplexity", tsne.perplexity, parse_double, double),
      UCF_FIELD("eval.tsne_iterations", tsne.iterations, parse_count, std::uint64_t),
      UCF_FIELD("eval.tsne_learning_rate", tsne.learning_rate, parse_double, double),
      UCF_FIELD("eval.tsne_exaggeration", tsne.exaggeration, parse_double, double),
      UCF_FIELD("eval.tsne_exaggeration_iterations", tsne.exaggeration_iterations, parse_count,
                std::uint64_t),
      UCF_FIELD("eval.tsne_subsample", tsne_subsample, parse_count, std::uint64_t),
  };
  return table;
}

#undef UCF_FIELD

}  // namespace

RunConfig::RunConfig() {
  const auto& all = downstream::all_kinds();
  classifiers.assign(all.begin(), all.end());
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, v);
      return;
    }
  }
  if (key.starts_with("clf.")) {
    const auto rest = key.substr(4);
    const auto dot = rest.find('.');
    if (dot != std::string_view::npos) {
      const auto kind = downstream::parse_kind(rest.substr(0, dot));
      downstream::Hyper h = hyper[kind];
      h[std::string(rest.substr(dot + 1))] = parse_double(key, v);
      downstream::resolve_hyper(kind, h);
      hyper[kind] = std::move(h);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  gen.validate();
  encoder.validate();
  if (encoder.input_dim != data::kFeatureCount) {
    throw ConfigError("encoder input_dim must equal the feature count");
  }
  train.validate();
  if (folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (classifiers.empty()) throw ConfigError("eval.classifiers selects nothing");
  if (!(tsne.perplexity > 0.0)) throw ConfigError("eval.tsne_perplexity must be > 0");
  if (!(tsne.learning_rate > 0.0)) throw ConfigError("eval.tsne_learning_rate must be > 0");
  if (!(tsne.exaggeration > 0.0)) throw ConfigError("eval.tsne_exaggeration must be > 0");
  if (tsne_subsample != 0 && tsne_subsample < 10) {
    throw ConfigError("eval.tsne_subsample must be 0 or >= 10");
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  for (auto kind : downstream::all_kinds()) {
    auto it = hyper.find(kind);
    const auto resolved =
        downstream::resolve_hyper(kind, it == hyper.end() ? downstream::Hyper{} : it->second);
    for (const auto& [k, v] : resolved) {
      out += "clf." + std::string(downstream::kind_name(kind)) + "." + k + " = " + show(v) + "\n";
    }
  }
  return out;
}

std::uint64_t RunConfig::seed_for(std::string_view label) const {
  return num::derive_seed(seed, label);
}

data::GenConfig RunConfig::gen_config() const {
  data::GenConfig g = gen;
  g.seed = seed_for("gen");
  return g;
}

trainer::TrainConfig RunConfig::train_config() const {
  trainer::TrainConfig t = train;
  t.seed = seed_for("train");
  return t;
}

eval::TsneConfig RunConfig::tsne_config() const {
  eval::TsneConfig t = tsne;
  t.seed = seed_for("tsne");
  return t;
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    const std::string line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = origin + " line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_text(cfg, io::read_text(path), path.string());
  return cfg;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace ucf::cli
