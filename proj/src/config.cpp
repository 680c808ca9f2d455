#include "cure/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cure/errors.hpp"

namespace cure {

std::string to_string(SplitMode mode) { return mode == SplitMode::random ? "random" : "quality"; }

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "random") return SplitMode::random;
  if (s == "quality") return SplitMode::quality;
  throw ConfigError("unknown split mode '" + s + "' (expected random or quality)");
}

void ExperimentConfig::validate() const {
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) throw ConfigError("forget_fraction must lie in (0, 1)");
  if (!(quality_percentile > 0.0 && quality_percentile < 100.0)) {
    throw ConfigError("quality_percentile must lie in (0, 100)");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
  if (verification_pairs < 0 || verification_pairs % 2 != 0) {
    throw ConfigError("verification_pairs must be a non-negative even number");
  }
  for (const auto& b : baselines) {
    if (b != "neggrad" && b != "badteacher" && b != "oracle") throw ConfigError("unknown baseline '" + b + "'");
  }
  for (const auto& f : report_formats) {
    if (f != "json" && f != "csv") throw ConfigError("unknown report format '" + f + "'");
  }
  if (!(eval.alpha >= 0.0 && eval.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(eval.prototype_scale > 0.0)) throw ConfigError("prototype_scale must be positive");
  data.validate();
  teacher.validate();
  unlearn.validate();
}

void ExperimentConfig::propagate_seed() {
  data.seed = derive_seed(seed, 0);
  teacher.seed = derive_seed(seed, 3);
  unlearn.seed = derive_seed(seed, 4);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("invalid value '" + raw + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("invalid boolean '" + raw + "' for " + key);
}

std::vector<std::string> parse_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Member>
Field real_field(std::string key, Member member) {
  return {key, [member](const ExperimentConfig& c) { return format(std::invoke(member, c)); },
          [member, key](ExperimentConfig& c, const std::string& v) {
            std::invoke(member, c) = parse_number<double>(key, v);
          }};
}

template <typename Member>
Field int_field(std::string key, Member member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(std::invoke(member, c)); },
          [member, key](ExperimentConfig& c, const std::string& v) { std::invoke(member, c) = parse_number<int>(key, v); }};
}

// Accessors for nested members, usable with std::invoke.
#define CURE_REF(path) [](auto& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"experiment.seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                 [](ExperimentConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("experiment.seed", v); }});
    f.push_back({"experiment.split", [](const ExperimentConfig& c) { return to_string(c.split); },
                 [](ExperimentConfig& c, const std::string& v) { c.split = split_mode_from_string(trim(v)); }});
    f.push_back(real_field("experiment.forget_fraction", CURE_REF(forget_fraction)));
    f.push_back(real_field("experiment.quality_percentile", CURE_REF(quality_percentile)));
    f.push_back(real_field("experiment.holdout_fraction", CURE_REF(holdout_fraction)));
    f.push_back(int_field("experiment.verification_pairs", CURE_REF(verification_pairs)));
    f.push_back({"experiment.baselines", [](const ExperimentConfig& c) { return join(c.baselines); },
                 [](ExperimentConfig& c, const std::string& v) { c.baselines = parse_list(v); }});
    f.push_back({"experiment.report_formats", [](const ExperimentConfig& c) { return join(c.report_formats); },
                 [](ExperimentConfig& c, const std::string& v) { c.report_formats = parse_list(v); }});
    f.push_back({"experiment.output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
                 [](ExperimentConfig& c, const std::string& v) { c.output_dir = trim(v); }});

    f.push_back(int_field("data.n_identities", CURE_REF(data.n_identities)));
    f.push_back(int_field("data.samples_per_identity", CURE_REF(data.samples_per_identity)));
    f.push_back(int_field("data.input_dim", CURE_REF(data.input_dim)));
    f.push_back(real_field("data.cluster_spread", CURE_REF(data.cluster_spread)));
    f.push_back(real_field("data.separation", CURE_REF(data.inter_class_separation)));
    f.push_back(real_field("data.noise_low", CURE_REF(data.noise_low)));
    f.push_back(real_field("data.noise_high", CURE_REF(data.noise_high)));

    f.push_back({"teacher.hidden",
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> parts;
                   for (int h : c.teacher.hidden) parts.push_back(std::to_string(h));
                   return join(parts);
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.teacher.hidden.clear();
                   for (const auto& item : parse_list(v)) c.teacher.hidden.push_back(parse_number<int>("teacher.hidden", item));
                 }});
    f.push_back(int_field("teacher.embedding_dim", CURE_REF(teacher.embedding_dim)));
    f.push_back(int_field("teacher.epochs", CURE_REF(teacher.epochs)));
    f.push_back(int_field("teacher.batch_size", CURE_REF(teacher.batch_size)));
    f.push_back(real_field("teacher.learning_rate", CURE_REF(teacher.learning_rate)));
    f.push_back({"teacher.optimizer", [](const ExperimentConfig& c) { return to_string(c.teacher.optimizer); },
                 [](ExperimentConfig& c, const std::string& v) { c.teacher.optimizer = optimizer_kind_from_string(trim(v)); }});
    f.push_back(real_field("teacher.momentum", CURE_REF(teacher.momentum)));
    f.push_back(real_field("teacher.weight_decay", CURE_REF(teacher.weight_decay)));
    f.push_back(real_field("teacher.arc_margin", CURE_REF(teacher.arc_margin)));
    f.push_back(real_field("teacher.scale", CURE_REF(teacher.scale)));
    f.push_back(real_field("teacher.target_accuracy", CURE_REF(teacher.target_accuracy)));

    f.push_back(int_field("unlearn.clusters", CURE_REF(unlearn.clusters)));
    f.push_back(real_field("unlearn.margin", CURE_REF(unlearn.margin)));
    f.push_back(real_field("unlearn.temperature", CURE_REF(unlearn.temperature)));
    f.push_back(int_field("unlearn.update_interval", CURE_REF(unlearn.update_interval)));
    f.push_back(int_field("unlearn.epochs", CURE_REF(unlearn.epochs)));
    f.push_back(real_field("unlearn.learning_rate", CURE_REF(unlearn.learning_rate)));
    f.push_back(int_field("unlearn.batch_size", CURE_REF(unlearn.batch_size)));
    f.push_back(real_field("unlearn.freeze_fraction", CURE_REF(unlearn.freeze_fraction)));
    f.push_back({"unlearn.pseudo_label_space",
                 [](const ExperimentConfig& c) { return to_string(c.unlearn.pseudo_label_space); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.unlearn.pseudo_label_space = pseudo_label_space_from_string(trim(v));
                 }});
    f.push_back({"unlearn.clustering", [](const ExperimentConfig& c) { return to_string(c.unlearn.clustering); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.unlearn.clustering = clustering_backend_from_string(trim(v));
                 }});
    f.push_back({"unlearn.optimizer", [](const ExperimentConfig& c) { return to_string(c.unlearn.optimizer); },
                 [](ExperimentConfig& c, const std::string& v) { c.unlearn.optimizer = optimizer_kind_from_string(trim(v)); }});
    f.push_back(real_field("unlearn.momentum", CURE_REF(unlearn.momentum)));
    f.push_back(real_field("unlearn.weight_decay", CURE_REF(unlearn.weight_decay)));
    f.push_back({"unlearn.reinit_head_on_recompute",
                 [](const ExperimentConfig& c) { return std::string(c.unlearn.reinit_head_on_recompute ? "true" : "false"); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.unlearn.reinit_head_on_recompute = parse_bool("unlearn.reinit_head_on_recompute", v);
                 }});
    f.push_back(real_field("unlearn.head_init_std", CURE_REF(unlearn.head_init_std)));
    f.push_back(real_field("unlearn.baseline_forget_weight", CURE_REF(unlearn.baseline_forget_weight)));
    f.push_back(real_field("unlearn.baseline_retain_weight", CURE_REF(unlearn.baseline_retain_weight)));
    f.push_back(real_field("unlearn.divergence_limit", CURE_REF(unlearn.divergence_limit)));

    f.push_back(real_field("weights.pseudo_label", CURE_REF(unlearn.weights.pseudo_label)));
    f.push_back(real_field("weights.cos_forget", CURE_REF(unlearn.weights.cos_forget)));
    f.push_back(real_field("weights.contrast", CURE_REF(unlearn.weights.contrast)));
    f.push_back(real_field("weights.cos_retain", CURE_REF(unlearn.weights.cos_retain)));
    f.push_back(real_field("weights.feat", CURE_REF(unlearn.weights.feat)));
    f.push_back(real_field("weights.fd", CURE_REF(unlearn.weights.fd)));

    f.push_back(real_field("eval.alpha", CURE_REF(eval.alpha)));
    f.push_back(real_field("eval.prototype_scale", CURE_REF(eval.prototype_scale)));
    f.push_back(real_field("eval.membership_threshold", CURE_REF(eval.membership_threshold)));
    return f;
  }();
  return table;
}

#undef CURE_REF

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_field(trim(key)).set(config, value);
  config.propagate_seed();
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string get_value(const ExperimentConfig& config, const std::string& key) { return find_field(key).get(config); }

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' appears outside any section");
    }
    for (const auto& [key, value] : body) find_field(section + "." + key).set(config, value.data());
  }
  config.propagate_seed();
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_config_text(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  return out.str();
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot " + path.string());
  out << to_config_text(config);
}

}  // namespace cure
