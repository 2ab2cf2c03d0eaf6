// causaldiffrec: prepare splits, train, evaluate, and run the gradient check.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "causaldiffrec/checkpoint.hpp"
#include "causaldiffrec/config.hpp"
#include "causaldiffrec/datasets.hpp"
#include "causaldiffrec/evaluation.hpp"
#include "causaldiffrec/training.hpp"

namespace fs = std::filesystem;
using namespace causaldiffrec;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("CAUSALDIFFREC_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw Error(fmt::format("CAUSALDIFFREC_SEED must be a non-negative integer, got '{}'", v));
  return s;
}

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || k < 1) throw Error(fmt::format("--topk: bad cutoff '{}'", part));
    ks.push_back(k);
  }
  if (ks.empty()) throw Error("--topk: no cutoffs");
  return ks;
}

struct PrepareArgs {
  std::string shift, data, small, out;
  std::optional<std::uint64_t> seed;
  std::string delimiter = "\\t";
  int user_col = 0, item_col = 1, time_col = 2, weight_col = -1;
  bool header = false;
  double valid_frac = 0.1;
};

int cmd_prepare(const PrepareArgs& a) {
  const auto kind = datasets::parse_shift_kind(a.shift);
  const std::uint64_t seed = a.seed ? *a.seed : env_seed().value_or(0);
  datasets::FormatSpec format;
  if (a.delimiter == "\\t" || a.delimiter == "tab")
    format.delimiter = '\t';
  else if (a.delimiter.size() == 1)
    format.delimiter = a.delimiter[0];
  else
    throw Error("--delimiter must be a single character or 'tab'");
  format.user_column = a.user_col;
  format.item_column = a.item_col;
  format.timestamp_column = a.time_col;
  format.weight_column = a.weight_col;
  format.has_header = a.header;

  if (!fs::exists(a.data)) throw Error("data file not found: " + a.data);
  auto loaded = datasets::load_interactions(a.data, format);
  std::string identity = fmt::format("shift={}\nseed={}\ndata={}\n", datasets::to_string(kind), seed,
                                     config::hex_digest(fnv1a64(read_file(a.data))));
  identity += fmt::format("format={}:{}:{}:{}:{}:{}\n", static_cast<int>(format.delimiter), format.user_column,
                          format.item_column, format.timestamp_column, format.weight_column, format.has_header);

  datasets::SplitBundle bundle;
  switch (kind) {
    case datasets::ShiftKind::temporal:
      bundle = datasets::temporal_split(loaded.table);
      break;
    case datasets::ShiftKind::popularity: {
      datasets::PopularitySplitOptions opt;
      opt.seed = seed;
      opt.valid_frac = a.valid_frac;
      bundle = datasets::popularity_uniform_split(loaded.table, opt);
      break;
    }
    case datasets::ShiftKind::random_iid:
      bundle = datasets::random_iid_split(loaded.table, seed);
      break;
    case datasets::ShiftKind::exposure: {
      if (a.small.empty()) throw Error("--shift exposure needs --small FILE (the uniformly exposed matrix)");
      if (!fs::exists(a.small)) throw Error("data file not found: " + a.small);
      auto small = datasets::load_interactions(a.small, format, loaded.users, loaded.items);
      identity += "small=" + config::hex_digest(fnv1a64(read_file(a.small))) + "\n";
      loaded.users = small.users;
      loaded.items = small.items;
      loaded.table.num_users = small.table.num_users;
      loaded.table.num_items = small.table.num_items;
      bundle = datasets::exposure_split(loaded.table, small.table, seed, a.valid_frac);
      break;
    }
  }
  identity += fmt::format("valid_frac={:.17g}\n", a.valid_frac);
  const std::string hash = config::hex_digest(fnv1a64(identity));
  const fs::path dir = fs::path(a.out) / "splits";
  fs::create_directories(dir);
  datasets::write_split(dir, bundle, loaded.users, loaded.items, hash);
  std::cout << datasets::format_audit(bundle, hash);
  return 0;
}

struct TrainArgs {
  std::string out, config, splits_dir;
  std::vector<std::string> ablate, overrides;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

train::TrainConfig resolve_train_config(const TrainArgs& a) {
  config::RunConfig rc;
  if (!a.config.empty()) rc = config::load_config(a.config);
  if (!rc.contains("training.seed")) {
    if (auto s = env_seed()) rc.set("training.seed", std::to_string(*s));
  }
  for (const auto& o : a.overrides) rc.apply_override(o);
  for (const auto& ab : a.ablate) {
    if (ab != "no_generator" && ab != "no_env_inference")
      throw Error(fmt::format("--ablate: unknown arm '{}' (valid: no_generator, no_env_inference)", ab));
    rc.set("training." + ab, "true");
  }
  if (a.epochs) rc.set("training.epochs", std::to_string(*a.epochs));
  if (a.seed) rc.set("training.seed", std::to_string(*a.seed));
  auto c = rc.to_train_config();
  c.validate();
  return c;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = resolve_train_config(a);
  const std::string hash = config::config_hash(cfg);
  const fs::path out(a.out);
  const fs::path splits = a.splits_dir.empty() ? out / "splits" : fs::path(a.splits_dir);
  const auto split = datasets::read_split(splits);
  fs::create_directories(out);

  std::string log = fmt::format("# config_hash={}\n# split_hash={}\n", hash, split.config_hash);
  auto result = train::fit(split.bundle, cfg, [&](const train::EpochLog& e) {
    const std::string line = train::format_epoch_log(e);
    spdlog::info("{}", line);
    log += line + "\n";
  });
  log += fmt::format("# best_epoch={} best_valid_ndcg@{}={:.10g} early_stopped={}\n", result.best_epoch,
                     cfg.early_stop_k, result.best_valid_ndcg, result.early_stopped);
  write_file(out / "train_log.txt", log);
  write_file(out / "config.cfg", fmt::format("# config_hash={}\n", hash) + config::config_file_text(cfg));
  write_file(out / "config_hash.txt", hash + "\n");
  checkpoint::write_checkpoint(out / "checkpoint.txt", result.best, split.config_hash);
  std::cout << fmt::format("config_hash = {}\nbest_epoch = {}\ncheckpoint = {}\n", hash, result.best_epoch,
                           (out / "checkpoint.txt").string());
  return 0;
}

struct EvalArgs {
  std::string out, checkpoint, splits_dir, splits = "test", topk;
  bool compare = false, force = false, export_embeddings = false;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path out(a.out);
  const fs::path ck_path = a.checkpoint.empty() ? out / "checkpoint.txt" : fs::path(a.checkpoint);
  const auto ck = checkpoint::read_checkpoint(ck_path);
  const fs::path splits_dir = a.splits_dir.empty() ? out / "splits" : fs::path(a.splits_dir);
  const auto split = datasets::read_split(splits_dir);
  if (split.config_hash != ck.split_hash) {
    spdlog::warn("split hash {} of {} does not match the checkpoint's {}", split.config_hash, splits_dir.string(),
                 ck.split_hash);
    if (!a.force) throw Error("refusing to evaluate against mismatched splits (pass --force to override)");
  }
  const std::vector<int> ks = a.topk.empty() ? ck.state.config.topk : parse_ks(a.topk);

  std::vector<std::string> names;
  {
    std::stringstream ss(a.splits);
    std::string s;
    while (std::getline(ss, s, ',')) {
      if (s != "valid" && s != "test") throw Error(fmt::format("--splits: unknown split '{}' (valid, test)", s));
      names.push_back(s);
    }
  }
  if (names.empty()) throw Error("--splits: nothing to evaluate");
  if (a.compare && names.size() != 2) throw Error("--compare needs exactly two splits (iid first, ood second)");

  const auto base = graph::from_interactions(split.bundle.train);
  const auto emb = train::infer_embeddings(ck.state, base);
  const std::map<std::string, std::string> meta = {{"config_hash", ck.config_hash},
                                                   {"split_hash", split.config_hash},
                                                   {"epoch", std::to_string(ck.state.epoch)}};
  fs::create_directories(out);
  std::vector<eval::RankingReport> reports;
  for (const auto& name : names) {
    const auto& table = name == "valid" ? split.bundle.valid : split.bundle.test;
    reports.push_back(eval::evaluate(emb, split.bundle.train, table, ks, name));
    const std::string text = eval::format_report(reports.back(), meta);
    write_file(out / fmt::format("report_{}.txt", name), text);
    std::cout << text;
  }
  if (a.compare) {
    const std::string text = eval::format_degradation(eval::compare_iid_ood(reports[0], reports[1]), meta);
    write_file(out / "degradation.txt", text);
    std::cout << text;
  }
  if (a.export_embeddings) eval::export_embeddings(emb, out / "embeddings.tsv", split.bundle.train.item_counts());
  return 0;
}

int cmd_gradcheck(const std::string& out, std::optional<std::uint64_t> seed_flag, double step) {
  const std::uint64_t seed = seed_flag ? *seed_flag : env_seed().value_or(0);
  auto micro = train::make_micro_instance(seed);
  const auto base = graph::from_interactions(micro.train);
  auto state = train::init_state(micro.config, base);
  const datasets::UserItemIndex index(micro.train);
  auto batches = train::make_epoch_batches(micro.train, index, micro.config.batch_size, state.streams.batches,
                                           state.streams.negatives);
  const auto draws = train::draw_batch(state, base, batches.front());
  const auto report = train::gradient_check(state, base, draws, step, 1e-3);

  std::string text = fmt::format("# config_hash={}\nseed = {}\nstep = {:g}\n", config::config_hash(micro.config),
                                 seed, step);
  for (const auto& g : report.groups)
    text += fmt::format("group.{} = {:.6e} ({} entries)\n", g.name, g.max_relative_error, g.entries);
  text += fmt::format("max_relative_error = {:.6e}\nworst_group = {}\npassed = {}\n", report.max_relative_error,
                      report.worst_group, report.passed);
  fs::create_directories(out);
  write_file(fs::path(out) / "gradcheck.txt", text);
  std::cout << text;
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("causaldiffrec");
  spdlog::set_default_logger(logger);

  CLI::App app{"Causal diffusion recommender: OOD splits, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Build train/valid/test splits for one distribution shift");
  prepare->add_option("--shift", pa.shift, "temporal, exposure, popularity or random_iid")->required();
  prepare->add_option("--data", pa.data, "Interaction file")->required();
  prepare->add_option("--small", pa.small, "Uniformly exposed interaction file (exposure shift)");
  prepare->add_option("--out", pa.out, "Run directory")->required();
  prepare->add_option("--seed", pa.seed, "Seed (default: $CAUSALDIFFREC_SEED or 0)");
  prepare->add_option("--delimiter", pa.delimiter, "Field delimiter (default tab)");
  prepare->add_option("--user-col", pa.user_col);
  prepare->add_option("--item-col", pa.item_col);
  prepare->add_option("--time-col", pa.time_col, "-1 if absent");
  prepare->add_option("--weight-col", pa.weight_col, "-1 if absent");
  prepare->add_flag("--header", pa.header, "First line is a header");
  prepare->add_option("--valid-frac", pa.valid_frac, "Validation carve for non-temporal shifts");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train on prepared splits");
  trn->add_option("--out", ta.out, "Run directory")->required();
  trn->add_option("--config", ta.config, "Config file");
  trn->add_option("--splits-dir", ta.splits_dir, "Split directory (default OUT/splits)");
  trn->add_option("--ablate", ta.ablate, "no_generator and/or no_env_inference");
  trn->add_option("--epochs", ta.epochs);
  trn->add_option("--seed", ta.seed);
  trn->add_option("--set", ta.overrides, "key=value override");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Rank held-out splits with a trained checkpoint");
  ev->add_option("--out", ea.out, "Run directory")->required();
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint (default OUT/checkpoint.txt)");
  ev->add_option("--splits-dir", ea.splits_dir, "Split directory (default OUT/splits)");
  ev->add_option("--splits", ea.splits, "Comma list of valid,test");
  ev->add_option("--topk", ea.topk, "Comma list of cutoffs (default from config)");
  ev->add_flag("--compare", ea.compare, "Emit the IID/OOD degradation summary");
  ev->add_flag("--force", ea.force, "Evaluate despite a split hash mismatch");
  ev->add_flag("--export-embeddings", ea.export_embeddings, "Write item embeddings with popularity tags");

  std::string gc_out;
  std::optional<std::uint64_t> gc_seed;
  double gc_step = 1e-5;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the joint loss on a micro instance");
  gc->add_option("--out", gc_out, "Run directory")->required();
  gc->add_option("--seed", gc_seed);
  gc->add_option("--step", gc_step);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "prepare") return cmd_prepare(pa);
    if (name == "train") return cmd_train(ta);
    if (name == "eval") return cmd_eval(ea);
    return cmd_gradcheck(gc_out, gc_seed, gc_step);
  } catch (const std::exception& e) {
    std::cerr << "causaldiffrec " << name << ": " << e.what() << "\n";
    return 1;
  }
}
