#include "dr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "dr/common.hpp"
#include "dr/models.hpp"

namespace dr {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

struct Cursor {
  const std::string& origin;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(origin + ":" + std::to_string(line) + ": " + msg);
  }
};

std::uint64_t parse_u64(const Cursor& c, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    c.fail("expected unsigned integer, got '" + v + "'");
  return out;
}

double parse_f64(const Cursor& c, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) c.fail("expected number, got '" + v + "'");
    return out;
  } catch (const std::logic_error&) {
    c.fail("expected number, got '" + v + "'");
  }
}

bool parse_bool(const Cursor& c, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  c.fail("expected boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_u64_list(const Cursor& c,
                                          const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_u64(c, item));
  return out;
}

std::vector<std::size_t> parse_size_list(const Cursor& c,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v))
    out.push_back(static_cast<std::size_t>(parse_u64(c, item)));
  return out;
}

LossMode parse_loss_mode(const Cursor& c, const std::string& v) {
  if (v == "sum_all_steps") return LossMode::sum_all_steps;
  if (v == "last_step_only") return LossMode::last_step_only;
  c.fail("unknown loss_mode '" + v + "'");
}

LrMode parse_lr_mode(const Cursor& c, const std::string& v) {
  if (v == "fixed") return LrMode::fixed;
  if (v == "learned") return LrMode::learned;
  c.fail("unknown lr_mode '" + v + "'");
}

void set_run(Cursor& c, RunConfig& cfg, const std::string& key,
             const std::string& v) {
  if (key == "id") {
    cfg.id = v;
  } else if (key == "out_dir") {
    cfg.out_dir = v;
  } else if (key == "seeds") {
    cfg.seeds = parse_u64_list(c, v);
  } else if (key == "strategies") {
    cfg.strategies.clear();
    for (const auto& name : split_list(v)) {
      try {
        cfg.strategies.push_back(strategy_from_name(name));
      } catch (const ContractError& e) {
        c.fail(e.what());
      }
    }
  } else if (key == "sequential") {
    cfg.sequential = parse_bool(c, v);
  } else {
    c.fail("unknown key '" + key + "' in [run]");
  }
}

void set_scenario(Cursor& c, ScenarioConfig& s, const std::string& key,
                  const std::string& v) {
  if (key == "kind") s.kind = v;
  else if (key == "dataset") s.dataset = v;
  else if (key == "seed") s.seed = parse_u64(c, v);
  else if (key == "T") s.T = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "classes_per_exp")
    s.classes_per_exp = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "downscale")
    s.downscale = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "subsample_per_class")
    s.subsample_per_class = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "val_fraction") s.val_fraction = parse_f64(c, v);
  else if (key == "blob_classes")
    s.blob_classes = static_cast<int>(parse_u64(c, v));
  else if (key == "blob_per_class")
    s.blob_per_class = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "blob_test_per_class")
    s.blob_test_per_class = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "blob_dim")
    s.blob_dim = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "blob_spread") s.blob_spread = parse_f64(c, v);
  else c.fail("unknown key '" + key + "' in [scenario]");
}

void set_model(Cursor& c, RunConfig& cfg, const std::string& key,
               const std::string& v) {
  if (key == "kind") cfg.model = v;
  else if (key == "hidden") cfg.hidden = parse_size_list(c, v);
  else c.fail("unknown key '" + key + "' in [model]");
}

void set_train(Cursor& c, TrainConfig& t, const std::string& key,
               const std::string& v) {
  if (key == "lr") t.lr = parse_f64(c, v);
  else if (key == "batch_size")
    t.batch_size = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "per_class")
    t.per_class = static_cast<std::size_t>(parse_u64(c, v));
  else c.fail("unknown key '" + key + "' in [train]");
}

void set_distill(Cursor& c, DistillConfig& d, const std::string& key,
                 const std::string& v) {
  if (key == "S") d.inner_steps = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "R")
    d.outer_steps = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "eta") d.inner_lr = parse_f64(c, v);
  else if (key == "alpha") d.outer_lr = parse_f64(c, v);
  else if (key == "eta_alpha") d.eta_alpha = parse_f64(c, v);
  else if (key == "J")
    d.init_batch = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "n")
    d.real_batch = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "loss_mode") d.loss_mode = parse_loss_mode(c, v);
  else if (key == "lr_mode") d.lr_mode = parse_lr_mode(c, v);
  else if (key == "seed") d.seed = parse_u64(c, v);
  else c.fail("unknown key '" + key + "' in [distill]");
}

void set_timing(Cursor& c, TimingConfig& t, const std::string& key,
                const std::string& v) {
  if (key == "s_grid") t.s_grid = parse_size_list(c, v);
  else if (key == "r_grid") t.r_grid = parse_size_list(c, v);
  else if (key == "fixed_r")
    t.fixed_r = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "fixed_s")
    t.fixed_s = static_cast<std::size_t>(parse_u64(c, v));
  else if (key == "repeats")
    t.repeats = static_cast<std::size_t>(parse_u64(c, v));
  else c.fail("unknown key '" + key + "' in [timing]");
}

bool known_model(const std::string& kind) {
  return kind == "mlp" || kind == "tiny_mlp" || kind == "tiny-mlp" ||
         kind == "lenet5";
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  Cursor c{origin};
  std::string section;
  std::string line;
  while (std::getline(in, line)) {
    ++c.line;
    auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') c.fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> known{"run",   "scenario", "model",
                                              "train", "distill",  "timing"};
      if (!known.count(section)) c.fail("unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) c.fail("expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) c.fail("empty key");
    if (section.empty()) c.fail("key '" + key + "' outside any section");
    if (section == "run") set_run(c, cfg, key, value);
    else if (section == "scenario") set_scenario(c, cfg.scenario, key, value);
    else if (section == "model") set_model(c, cfg, key, value);
    else if (section == "train") set_train(c, cfg.train, key, value);
    else if (section == "distill") set_distill(c, cfg.train.distill, key, value);
    else set_timing(c, cfg.timing, key, value);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return parse_config(in, path);
}

std::vector<std::string> validate_config(const RunConfig& cfg) {
  std::vector<std::string> bad;
  const auto& sc = cfg.scenario;

  if (cfg.seeds.empty()) bad.push_back("run.seeds must be nonempty");
  if (cfg.strategies.empty()) bad.push_back("run.strategies must be nonempty");
  if (cfg.out_dir.empty()) bad.push_back("run.out_dir must be nonempty");
  for (char ch : cfg.id)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' &&
        ch != '_') {
      bad.push_back("run.id may only contain [A-Za-z0-9_-]");
      break;
    }

  if (sc.kind != "split" && sc.kind != "permuted")
    bad.push_back("scenario.kind must be split or permuted");
  if (sc.dataset != "blobs" && sc.dataset != "mnist")
    bad.push_back("scenario.dataset must be blobs or mnist");
  if (sc.kind == "permuted" && sc.T < 1)
    bad.push_back("scenario.T must be >= 1 for permuted streams");
  if (sc.kind == "split") {
    if (sc.classes_per_exp < 1)
      bad.push_back("scenario.classes_per_exp must be >= 1");
    else {
      std::size_t classes = sc.dataset == "blobs"
                                ? static_cast<std::size_t>(sc.blob_classes)
                                : 10;
      if (classes % sc.classes_per_exp != 0)
        bad.push_back("scenario.classes_per_exp must divide the class count (" +
                      std::to_string(classes) + ")");
    }
  }
  if (sc.downscale < 1) bad.push_back("scenario.downscale must be >= 1");
  if (!(sc.val_fraction >= 0.0 && sc.val_fraction < 1.0))
    bad.push_back("scenario.val_fraction must lie in [0, 1)");
  if (sc.dataset == "blobs") {
    if (sc.blob_classes < 2) bad.push_back("scenario.blob_classes must be >= 2");
    if (sc.blob_per_class < 1 || sc.blob_test_per_class < 1)
      bad.push_back("scenario.blob_per_class and blob_test_per_class must be >= 1");
    if (sc.blob_dim < 1) bad.push_back("scenario.blob_dim must be >= 1");
    if (!(sc.blob_spread > 0.0))
      bad.push_back("scenario.blob_spread must be > 0");
    if (sc.downscale != 1)
      bad.push_back("scenario.downscale applies to image data only");
  }

  if (!known_model(cfg.model))
    bad.push_back("model.kind must be mlp, tiny_mlp, or lenet5");
  if (cfg.model == "lenet5") {
    if (sc.dataset != "mnist")
      bad.push_back("lenet5 expects square image data (dataset = mnist)");
    if (sc.downscale != 1)
      bad.push_back("lenet5 needs the full 28x28 input (downscale = 1)");
  }

  if (!(cfg.train.lr > 0.0)) bad.push_back("train.lr must be > 0");
  if (cfg.train.batch_size < 1) bad.push_back("train.batch_size must be >= 1");

  try {
    cfg.train.distill.validate();
  } catch (const ContractError& e) {
    bad.push_back(e.what());
  }

  bool runs_dr = std::find(cfg.strategies.begin(), cfg.strategies.end(),
                           Strategy::distilled_replay) != cfg.strategies.end();
  if (runs_dr && cfg.train.per_class > 0 &&
      cfg.train.distill.inner_lr != cfg.train.lr)
    bad.push_back(
        "distill.eta must equal train.lr: the buffer is optimized for the "
        "learning rate it will be replayed under");

  const auto& tm = cfg.timing;
  if (tm.repeats < 1) bad.push_back("timing.repeats must be >= 1");
  if (tm.s_grid.empty() || tm.r_grid.empty())
    bad.push_back("timing.s_grid and timing.r_grid must be nonempty");
  for (auto v : tm.s_grid)
    if (v < 1) { bad.push_back("timing.s_grid values must be >= 1"); break; }
  for (auto v : tm.r_grid)
    if (v < 1) { bad.push_back("timing.r_grid values must be >= 1"); break; }
  if (tm.fixed_r < 1 || tm.fixed_s < 1)
    bad.push_back("timing.fixed_r and timing.fixed_s must be >= 1");

  return bad;
}

void require_valid(const RunConfig& cfg) {
  auto bad = validate_config(cfg);
  if (bad.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& b : bad) msg += "\n  - " + b;
  throw ContractError(msg);
}

}  // namespace dr
