#include "causaldiffrec/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "causaldiffrec/config.hpp"

namespace causaldiffrec::checkpoint {

namespace {

constexpr const char* kMagic = "causaldiffrec-checkpoint";

void put_matrix(std::string& out, const std::string& name, const Matrix& m) {
  out += fmt::format("matrix {} {} {}\n", name, m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out += fmt::format("{}{:.17g}", j ? " " : "", m(i, j));
    out += '\n';
  }
}

template <typename T>
std::string engine_text(const T& engine) {
  std::ostringstream ss;
  ss << engine;
  return ss.str();
}

class Reader {
 public:
  Reader(std::string text, std::string file) : in_(std::move(text)), file_(std::move(file)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(fmt::format("corrupted checkpoint {}: {}", file_, what));
  }

  std::string line() {
    std::string l;
    if (!std::getline(in_, l)) fail("unexpected end of file");
    return l;
  }

  // `tag rest...` with the expected tag.
  std::istringstream tagged(const std::string& tag) {
    std::istringstream ss(line());
    std::string t;
    ss >> t;
    if (t != tag) fail(fmt::format("expected '{}', found '{}'", tag, t));
    return ss;
  }

  Matrix matrix(const std::string& name) {
    auto ss = tagged("matrix");
    std::string got;
    Index rows = -1, cols = -1;
    ss >> got >> rows >> cols;
    if (!ss || got != name || rows < 0 || cols < 0) fail("bad header for matrix " + name);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      std::istringstream row(line());
      for (Index j = 0; j < cols; ++j) m(i, j) = number(row, name);
    }
    return m;
  }

  double number(std::istream& ss, const std::string& what) {
    std::string tok;
    if (!(ss >> tok)) fail("missing value in " + what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) fail("malformed value in " + what);
    return v;
  }

 private:
  std::istringstream in_;
  std::string file_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const train::TrainState& s, const std::string& split_hash) {
  std::string out = fmt::format("{} {}\n", kMagic, kFormatVersion);
  out += "config_hash " + config::config_hash(s.config) + "\n";
  out += "split_hash " + split_hash + "\n";
  out += fmt::format("shape {} {} {}\n", s.num_users, s.num_items, s.epoch);
  const std::string cfg = config::canonical_text(s.config);
  out += fmt::format("config {}\n", std::count(cfg.begin(), cfg.end(), '\n'));
  out += cfg;
  const auto named = train::named_params(s.params);
  for (const auto& [name, m] : named) put_matrix(out, name, *m);

  out += fmt::format("policies {}\n", s.policies.size());
  for (const auto& p : s.policies) {
    out += fmt::format("policy {} {}\n", p.edits_per_node, p.candidates.size());
    for (std::size_t u = 0; u < p.candidates.size(); ++u) {
      out += fmt::format("{}", p.candidates[u].size());
      for (Index c : p.candidates[u]) out += fmt::format(" {}", c);
      for (Index j = 0; j < p.logits[u].size(); ++j) out += fmt::format(" {:.17g}", p.logits[u][j]);
      out += '\n';
    }
  }

  const auto& opt = s.optimizer;
  out += fmt::format("optimizer {} {}\n", opt.steps(), opt.first_moments().size());
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    put_matrix(out, fmt::format("m{}", i), opt.first_moments()[i]);
    put_matrix(out, fmt::format("v{}", i), opt.second_moments()[i]);
  }

  const std::pair<const char*, const Engine*> engines[] = {
      {"init", &s.streams.init},           {"batches", &s.streams.batches}, {"negatives", &s.streams.negatives},
      {"generator", &s.streams.generator}, {"vgae", &s.streams.vgae},       {"env", &s.streams.env},
      {"diffusion", &s.streams.diffusion}};
  for (const auto& [name, e] : engines) out += fmt::format("rng {} {}\n", name, engine_text(*e));
  out += "checksum " + config::hex_digest(fnv1a64(out)) + "\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint: " + path.string());
  f << out;
  if (!f) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read checkpoint: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();

  const std::string file = path.string();
  const auto pos = text.rfind("checksum ");
  if (pos == std::string::npos || (pos > 0 && text[pos - 1] != '\n'))
    throw Error(fmt::format("corrupted checkpoint {}: missing checksum", file));
  std::string stored = text.substr(pos + 9);
  while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
  if (stored != config::hex_digest(fnv1a64(std::string_view(text).substr(0, pos))))
    throw Error(fmt::format("corrupted checkpoint {}: checksum mismatch", file));

  Reader r(text.substr(0, pos), file);
  {
    auto ss = r.tagged(kMagic);
    int version = 0;
    ss >> version;
    if (version != kFormatVersion) r.fail(fmt::format("unsupported format version {}", version));
  }
  Checkpoint ck;
  r.tagged("config_hash") >> ck.config_hash;
  r.tagged("split_hash") >> ck.split_hash;
  train::TrainState& s = ck.state;
  {
    auto ss = r.tagged("shape");
    ss >> s.num_users >> s.num_items >> s.epoch;
    if (!ss) r.fail("bad shape line");
  }
  std::size_t config_lines = 0;
  r.tagged("config") >> config_lines;
  std::string cfg;
  for (std::size_t i = 0; i < config_lines; ++i) cfg += r.line() + "\n";
  try {
    s.config = config::parse_config(cfg, file).to_train_config();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  if (config::config_hash(s.config) != ck.config_hash) r.fail("config does not match its recorded hash");

  for (auto& [name, m] : train::named_params(s.params)) *m = r.matrix(name);
  s.params.denoiser.time_embed_dim = s.config.time_embed_dim;

  std::size_t policies = 0;
  r.tagged("policies") >> policies;
  for (std::size_t k = 0; k < policies; ++k) {
    envgen::EditPolicy p;
    std::size_t users = 0;
    r.tagged("policy") >> p.edits_per_node >> users;
    for (std::size_t u = 0; u < users; ++u) {
      std::istringstream row(r.line());
      std::size_t n = 0;
      if (!(row >> n)) r.fail("bad policy row");
      std::vector<Index> cands(n);
      for (auto& c : cands)
        if (!(row >> c)) r.fail("bad policy candidate");
      Vector logits(static_cast<Index>(n));
      for (std::size_t j = 0; j < n; ++j) logits[static_cast<Index>(j)] = r.number(row, "policy logits");
      p.candidates.push_back(std::move(cands));
      p.logits.push_back(std::move(logits));
    }
    s.policies.push_back(std::move(p));
  }

  const auto& c = s.config;
  s.optimizer = train::AdamW(c.learning_rate, c.weight_decay, c.adam_beta1, c.adam_beta2, c.adam_epsilon);
  long steps = 0;
  std::size_t moments = 0;
  r.tagged("optimizer") >> steps >> moments;
  s.optimizer.set_steps(steps);
  for (std::size_t i = 0; i < moments; ++i) {
    s.optimizer.first_moments().push_back(r.matrix(fmt::format("m{}", i)));
    s.optimizer.second_moments().push_back(r.matrix(fmt::format("v{}", i)));
  }

  Engine* engines[] = {&s.streams.init, &s.streams.batches, &s.streams.negatives, &s.streams.generator,
                       &s.streams.vgae, &s.streams.env,     &s.streams.diffusion};
  const char* names[] = {"init", "batches", "negatives", "generator", "vgae", "env", "diffusion"};
  for (std::size_t i = 0; i < 7; ++i) {
    auto ss = r.tagged("rng");
    std::string name;
    ss >> name;
    if (name != names[i]) r.fail(fmt::format("expected rng '{}', found '{}'", names[i], name));
    ss >> *engines[i];
    if (!ss) r.fail("bad rng state for " + name);
  }
  return ck;
}

}  // namespace causaldiffrec::checkpoint
