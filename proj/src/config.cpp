#include "causaldiffrec/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <fmt/format.h>

namespace causaldiffrec::config {

namespace {

using train::TrainConfig;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw Error(fmt::format("{}: expected a number, got '{}'", key, v));
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error(fmt::format("{}: expected an integer, got '{}'", key, v));
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(fmt::format("{}: expected true/false, got '{}'", key, v));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

std::string num(double x) { return fmt::format("{:.17g}", x); }

struct Field {
  const char* key;  // section.key
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define DOUBLE_FIELD(name, member) \
  Field{name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
        [](const TrainConfig& c) { return num(c.member); }}
#define INT_FIELD(name, member)                                                                                 \
  Field{name,                                                                                                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                                       \
          c.member = static_cast<decltype(c.member)>(parse_int(k, v));                                          \
        },                                                                                                      \
        [](const TrainConfig& c) { return std::to_string(c.member); }}
#define BOOL_FIELD(name, member) \
  Field{name, [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("generator.K", environments),
      INT_FIELD("generator.edits_per_node", edits_per_node),
      INT_FIELD("generator.candidate_cap", candidate_cap),
      DOUBLE_FIELD("generator.generator_lr", generator_lr),
      BOOL_FIELD("generator.generator_baseline", generator_baseline),
      INT_FIELD("vgae.latent_dim", latent_dim),
      INT_FIELD("vgae.encoder_hidden", encoder_hidden),
      Field{"vgae.sigma_clamp",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              const auto parts = split_list(v);
              if (parts.size() != 2) throw Error(fmt::format("{}: expected 'min,max', got '{}'", k, v));
              c.sigma_min = parse_double(k, parts[0]);
              c.sigma_max = parse_double(k, parts[1]);
            },
            [](const TrainConfig& c) { return num(c.sigma_min) + "," + num(c.sigma_max); }},
      DOUBLE_FIELD("vgae.recon_neg_ratio", recon_neg_ratio),
      INT_FIELD("env_inference.env_dim", env_dim),
      INT_FIELD("env_inference.env_hidden_dim", env_hidden_dim),
      INT_FIELD("diffusion.T", diffusion_steps),
      DOUBLE_FIELD("diffusion.beta_start", beta_start),
      DOUBLE_FIELD("diffusion.beta_end", beta_end),
      INT_FIELD("diffusion.t_start_infer", t_start_infer),
      INT_FIELD("diffusion.time_embed_dim", time_embed_dim),
      INT_FIELD("diffusion.denoiser_hidden", denoiser_hidden),
      INT_FIELD("recommender.gcn_layers", gcn_layers),
      DOUBLE_FIELD("recommender.init_std", init_std),
      Field{"recommender.topk",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              c.topk.clear();
              for (const auto& p : split_list(v)) c.topk.push_back(static_cast<int>(parse_int(k, p)));
            },
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.topk.size(); ++i) s += (i ? "," : "") + std::to_string(c.topk[i]);
              return s;
            }},
      DOUBLE_FIELD("training.lambda1", lambda_generator),
      DOUBLE_FIELD("training.lambda2", lambda_diffusion),
      DOUBLE_FIELD("training.lambda3", lambda_env),
      INT_FIELD("training.generator_sign", generator_sign),
      DOUBLE_FIELD("training.learning_rate", learning_rate),
      DOUBLE_FIELD("training.weight_decay", weight_decay),
      INT_FIELD("training.batch_size", batch_size),
      INT_FIELD("training.epochs", epochs),
      INT_FIELD("training.patience", patience),
      INT_FIELD("training.early_stop_k", early_stop_k),
      Field{"training.seed",
            [](TrainConfig& c, const std::string& k, const std::string& v) {
              const long long s = parse_int(k, v);
              if (s < 0) throw Error(fmt::format("{}: seed must be >= 0", k));
              c.seed = static_cast<std::uint64_t>(s);
            },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      BOOL_FIELD("training.no_generator", no_generator),
      BOOL_FIELD("training.no_env_inference", no_env_inference),
  };
  return table;
}

#undef DOUBLE_FIELD
#undef INT_FIELD
#undef BOOL_FIELD

// embed_dim is the recommender-side name of the shared latent width.
std::string resolve_alias(const std::string& key) {
  if (key == "recommender.embed_dim" || key == "embed_dim") return "vgae.latent_dim";
  return key;
}

const Field* find_field(const std::string& qualified) {
  for (const auto& f : fields())
    if (qualified == f.key) return &f;
  return nullptr;
}

std::string qualify(const std::string& raw) {
  const std::string key = resolve_alias(raw);
  if (key.find('.') != std::string::npos) {
    if (!find_field(key)) throw Error(fmt::format("unknown config key '{}'", raw));
    return key;
  }
  const Field* hit = nullptr;
  for (const auto& f : fields()) {
    const std::string k = f.key;
    if (k.substr(k.find('.') + 1) == key) {
      if (hit) throw Error(fmt::format("ambiguous config key '{}'", raw));
      hit = &f;
    }
  }
  if (!hit) throw Error(fmt::format("unknown config key '{}'", raw));
  return hit->key;
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = qualify(trim(raw_key));
  const std::string value = trim(raw_value);
  // Validate eagerly so errors name the key.
  TrainConfig scratch;
  find_field(key)->set(scratch, key, value);
  const bool aliased = resolve_alias(trim(raw_key)) != trim(raw_key);
  auto it = values_.find(key);
  if (it != values_.end() && aliased != (aliases_.count(key) > 0) && it->second != value)
    throw Error(fmt::format("conflicting values for latent_dim and embed_dim ('{}' vs '{}')", it->second, value));
  if (aliased) aliases_.insert(key);
  values_[key] = value;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(fmt::format("override '{}' is not key=value", assignment));
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

TrainConfig RunConfig::to_train_config() const {
  TrainConfig c;
  for (const auto& [key, value] : values_) find_field(key)->set(c, key, value);
  return c;
}

RunConfig RunConfig::from_train_config(const TrainConfig& c) {
  RunConfig rc;
  for (const auto& f : fields()) rc.values_[f.key] = f.get(c);
  return rc;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw Error("unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error("expected 'key = value'");
      std::string key = trim(line.substr(0, eq));
      if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
      if (!section.empty() && resolve_alias(key).rfind(section + ".", 0) != 0 && key != section + ".embed_dim")
        throw Error(fmt::format("key '{}' does not belong to section [{}]", trim(line.substr(0, eq)), section));
      rc.set(key, line.substr(eq + 1));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(fmt::format("{}:{}: {}", origin, lineno, e.what()), lineno);
    }
  }
  return rc;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string canonical_text(const TrainConfig& c) {
  std::string s;
  const RunConfig rc = RunConfig::from_train_config(c);
  for (const auto& [key, value] : rc.values()) s += key + " = " + value + "\n";
  return s;
}

std::string config_file_text(const TrainConfig& c) {
  std::string s, section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      s += (s.empty() ? "" : "\n") + ("[" + section + "]\n");
    }
    s += key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return s;
}

std::string hex_digest(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string config_hash(const TrainConfig& c) { return hex_digest(fnv1a64(canonical_text(c))); }

}  // namespace causaldiffrec::config
