#include "fcca/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fcca {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::fcca:
      return "fcca";
    case ExperimentKind::fedavg:
      return "fedavg";
    case ExperimentKind::m_sweep:
      return "m_sweep";
    case ExperimentKind::ablation_unknown:
      return "ablation_unknown";
  }
  return "fcca";
}

ExperimentKind parse_kind(std::string_view text) {
  for (auto k : {ExperimentKind::fcca, ExperimentKind::fedavg, ExperimentKind::m_sweep,
                 ExperimentKind::ablation_unknown}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("kind: expected fcca|fedavg|m_sweep|ablation_unknown, got '" + std::string(text) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class T, class Parse>
std::vector<T> to_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse(key, trim(item)));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

std::string real(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FCCA_COUNT(name, member)                                                                  \
  {                                                                                               \
    name, {                                                                                       \
      [](RunConfig& c, const std::string& v) { c.member = to_count(name, v); },                    \
          [](const RunConfig& c) { return std::to_string(c.member); }                             \
    }                                                                                             \
  }
#define FCCA_REAL(name, member)                                                                   \
  {                                                                                               \
    name, {                                                                                       \
      [](RunConfig& c, const std::string& v) { c.member = to_real(name, v); },                     \
          [](const RunConfig& c) { return real(c.member); }                                       \
    }                                                                                             \
  }
#define FCCA_BOOL(name, member)                                                                   \
  {                                                                                               \
    name, {                                                                                       \
      [](RunConfig& c, const std::string& v) { c.member = to_bool(name, v); },                     \
          [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }             \
    }                                                                                             \
  }
#define FCCA_WIDTHS(name, member)                                                                 \
  {                                                                                               \
    name, {                                                                                       \
      [](RunConfig& c, const std::string& v) { c.member = to_list<std::size_t>(name, v, to_count); }, \
          [](const RunConfig& c) { return join(c.member); }                                       \
    }                                                                                             \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      FCCA_COUNT("clients", federation.clients),
      FCCA_COUNT("clusters", federation.clusters),
      FCCA_COUNT("true_clusters", federation.true_clusters),
      FCCA_COUNT("rounds", federation.rounds),
      FCCA_COUNT("local_iterations", federation.local_iterations),
      FCCA_REAL("learning_rate", federation.learning_rate),
      FCCA_REAL("alpha", federation.alpha),
      FCCA_COUNT("batch_size", federation.batch_size),
      FCCA_COUNT("classes", federation.classes),
      FCCA_COUNT("input_dim", federation.input_dim),
      FCCA_COUNT("samples_per_client", federation.samples_per_client),
      FCCA_REAL("separation", federation.separation),
      FCCA_REAL("sigma", federation.sigma),
      FCCA_REAL("dirichlet_beta", federation.dirichlet_beta),
      FCCA_REAL("train_fraction", federation.train_fraction),
      FCCA_WIDTHS("encoder_hidden", federation.encoder_hidden),
      FCCA_WIDTHS("classifier_hidden", federation.classifier_hidden),
      FCCA_COUNT("latent_dim", federation.latent_dim),
      FCCA_COUNT("cinn_blocks", federation.cinn_blocks),
      FCCA_WIDTHS("cinn_hidden", federation.cinn_hidden),
      FCCA_REAL("clamp", federation.clamp),
      FCCA_BOOL("cinn_identity_init", federation.cinn_identity_init),
      FCCA_REAL("cinn_grad_clip", federation.cinn_grad_clip),
      FCCA_COUNT("recluster_every", federation.recluster_every),
      FCCA_COUNT("reconstruction_batch", federation.reconstruction_batch),
      FCCA_COUNT("kmeans_restarts", federation.kmeans_restarts),
      FCCA_COUNT("kmeans_iterations", federation.kmeans_iterations),
      FCCA_REAL("kmeans_tolerance", federation.kmeans_tolerance),
      FCCA_BOOL("cinn_phase", federation.cinn_phase),
      FCCA_BOOL("unknown_augmentation", federation.unknown_augmentation),
      FCCA_BOOL("include_unknown", federation.include_unknown),
      FCCA_COUNT("threads", federation.threads),
      FCCA_COUNT("sweep_min", sweep_min),
      FCCA_COUNT("sweep_max", sweep_max),
      FCCA_BOOL("dump_datasets", dump_datasets),
      {"kind",
       {[](RunConfig& c, const std::string& v) { c.kind = parse_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.kind)); }}},
      {"out",
       {[](RunConfig& c, const std::string& v) {
          if (v.empty()) throw ConfigError("out: must not be empty");
          c.out = v;
        },
        [](const RunConfig& c) { return c.out.string(); }}},
      {"seeds",
       {[](RunConfig& c, const std::string& v) { c.seeds = to_list<std::uint64_t>("seeds", v, to_u64); },
        [](const RunConfig& c) { return join(c.seeds); }}},
  };
  return table;
}

#undef FCCA_COUNT
#undef FCCA_REAL
#undef FCCA_BOOL
#undef FCCA_WIDTHS

// Short spellings matching the usual notation.
const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table{
      {"n", "clients"},  {"m", "clusters"},     {"e", "rounds"},    {"k", "local_iterations"},
      {"eta", "learning_rate"}, {"batch", "batch_size"}, {"beta", "dirichlet_beta"}, {"seed", "seeds"},
  };
  return table;
}

std::string canonical(const std::string& key) {
  if (auto it = aliases().find(key); it != aliases().end()) return it->second;
  if (!fields().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  return key;
}

void apply(RunConfig& config, const std::string& key, const std::string& value) {
  fields().at(canonical(key)).set(config, value);
}

}  // namespace

void RunConfig::validate() const {
  try {
    federation.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (kind == ExperimentKind::m_sweep) {
    if (sweep_min == 0 || sweep_min > sweep_max) throw ConfigError("sweep_min: must satisfy 1 <= sweep_min <= sweep_max");
    if (sweep_max > federation.clients) throw ConfigError("sweep_max: must not exceed clients");
  }
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("missing key in '" + std::string(text) + "'");
  return {key, trim(text.substr(eq + 1))};
}

RunConfig parse_config(std::string_view file_text, const Overrides& overrides) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in{std::string(file_text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    try {
      auto [key, value] = split_assignment(line);
      const std::string name = canonical(key);
      if (!seen.insert(name).second) throw ConfigError(name + ": set more than once");
      apply(config, name, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& [key, value] : overrides) apply(config, key, value);
  config.validate();
  return config;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides) {
  std::string text;
  if (path) {
    std::ifstream f(*path);
    if (!f) throw ConfigError("cannot open config file " + path->string());
    std::ostringstream buf;
    buf << f.rdbuf();
    text = buf.str();
  }
  return parse_config(text, overrides);
}

std::string render_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& [key, field] : fields()) out << key << " = " << field.get(config) << '\n';
  return out.str();
}

void write_effective_config(const std::filesystem::path& dir, const RunConfig& config) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "effective_config.txt");
  if (!f) throw std::runtime_error("cannot write effective config into " + dir.string());
  f << render_config(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, _] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace fcca
