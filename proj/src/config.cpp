#include "mealrec/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mealrec::config {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += f(xs[i]);
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Entry int_entry(std::string key, T RunConfig::*section, int T::*field, int min_value) {
  return {key, [=](const RunConfig& c) { return fmt_int((c.*section).*field); },
          [=](RunConfig& c, const std::string& v) {
            const int x = parse_number<int>(key, v);
            if (x < min_value) throw ConfigError(key + " must be >= " + std::to_string(min_value));
            (c.*section).*field = x;
          }};
}

template <typename T>
Entry real_entry(std::string key, T RunConfig::*section, double T::*field, double min_value) {
  return {key, [=](const RunConfig& c) { return fmt((c.*section).*field); },
          [=](RunConfig& c, const std::string& v) {
            const double x = parse_number<double>(key, v);
            if (!(x >= min_value)) throw ConfigError(key + " must be >= " + fmt(min_value));
            (c.*section).*field = x;
          }};
}

template <typename T>
Entry bool_entry(std::string key, T RunConfig::*section, bool T::*field) {
  return {key, [=](const RunConfig& c) { return fmt((c.*section).*field); },
          [=](RunConfig& c, const std::string& v) { (c.*section).*field = parse_bool(key, v); }};
}

template <typename E>
Entry enum_entry(std::string key, std::function<E&(RunConfig&)> ref, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [=](const RunConfig& c) {
            const E value = ref(const_cast<RunConfig&>(c));
            for (const auto& [n, e] : names) {
              if (e == value) return n;
            }
            return std::string("?");
          },
          [=](RunConfig& c, const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                ref(c) = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
            throw ConfigError(key + ": unknown value '" + v + "' (expected one of " + allowed + ")");
          }};
}

const std::vector<Entry>& registry() {
  using D = DataSection;
  using B = backbone::EncoderConfig;
  using Tc = tcd::TcdConfig;
  using Np = npd::NpdConfig;
  using Tr = training::TrainConfig;
  using Ev = eval::EvalOptions;
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto synth_int = [&](std::string key, int data::SynthConfig::*field, int min_value) {
      e.push_back({key, [=](const RunConfig& c) { return fmt_int(c.data.synth.*field); },
                   [=](RunConfig& c, const std::string& v) {
                     const int x = parse_number<int>(key, v);
                     if (x < min_value) throw ConfigError(key + " must be >= " + std::to_string(min_value));
                     c.data.synth.*field = x;
                   }});
    };
    auto synth_real = [&](std::string key, double data::SynthConfig::*field) {
      e.push_back({key, [=](const RunConfig& c) { return fmt(c.data.synth.*field); },
                   [=](RunConfig& c, const std::string& v) {
                     const double x = parse_number<double>(key, v);
                     if (!(x >= 0.0)) throw ConfigError(key + " must be >= 0");
                     c.data.synth.*field = x;
                   }});
    };
    synth_int("data.users", &data::SynthConfig::users, 1);
    synth_int("data.items", &data::SynthConfig::items, 1);
    synth_int("data.frames", &data::SynthConfig::frames, 1);
    synth_int("data.visual_dim", &data::SynthConfig::visual_dim, 1);
    synth_int("data.text_dim", &data::SynthConfig::text_dim, 1);
    synth_int("data.clusters", &data::SynthConfig::clusters, 1);
    synth_int("data.min_seq_len", &data::SynthConfig::min_len, 1);
    synth_int("data.max_seq_len", &data::SynthConfig::max_len, 1);
    synth_real("data.noise", &data::SynthConfig::noise);
    synth_real("data.drift", &data::SynthConfig::drift);
    synth_real("data.popularity_skew", &data::SynthConfig::popularity_skew);
    e.push_back(int_entry<D>("data.core", &RunConfig::data, &D::core, 1));

    e.push_back(int_entry<B>("backbone.dim", &RunConfig::backbone, &B::dim, 1));
    e.push_back(int_entry<B>("backbone.max_len", &RunConfig::backbone, &B::max_len, 1));
    e.push_back(int_entry<B>("backbone.blocks", &RunConfig::backbone, &B::blocks, 0));
    e.push_back(int_entry<B>("backbone.heads", &RunConfig::backbone, &B::heads, 1));
    e.push_back(real_entry<B>("backbone.dropout", &RunConfig::backbone, &B::dropout, 0.0));

    e.push_back(int_entry<Tc>("tcd.heads", &RunConfig::tcd, &Tc::heads, 1));
    e.push_back(bool_entry<Tc>("tcd.detach_target", &RunConfig::tcd, &Tc::detach_target));
    e.push_back(enum_entry<tcd::RefineMode>(
        "tcd.train_refine_mode", [](RunConfig& c) -> tcd::RefineMode& { return c.tcd.train_refine_mode; },
        {{"one_step", tcd::RefineMode::one_step}, {"full_chain", tcd::RefineMode::full_chain}}));
    e.push_back(enum_entry<tcd::ChainStart>(
        "tcd.eval_start", [](RunConfig& c) -> tcd::ChainStart& { return c.tcd.eval_start; },
        {{"from_noise", tcd::ChainStart::from_noise}, {"from_corrupted", tcd::ChainStart::from_corrupted}}));

    e.push_back(int_entry<Np>("npd.blocks", &RunConfig::npd, &Np::blocks, 1));
    e.push_back(int_entry<Np>("npd.heads", &RunConfig::npd, &Np::heads, 1));
    e.push_back(bool_entry<Np>("npd.residual", &RunConfig::npd, &Np::residual));
    e.push_back(enum_entry<npd::ChainStart>(
        "npd.eval_start", [](RunConfig& c) -> npd::ChainStart& { return c.npd.eval_start; },
        {{"from_noise", npd::ChainStart::from_noise}, {"from_corrupted", npd::ChainStart::from_corrupted}}));

    e.push_back(real_entry<Tr>("train.learning_rate", &RunConfig::train, &Tr::learning_rate, 0.0));
    e.push_back(int_entry<Tr>("train.batch_size", &RunConfig::train, &Tr::batch_size, 1));
    e.push_back(int_entry<Tr>("train.min_batches_per_epoch", &RunConfig::train, &Tr::min_batches_per_epoch, 1));
    e.push_back(int_entry<Tr>("train.epochs", &RunConfig::train, &Tr::epochs, 1));
    e.push_back(int_entry<Tr>("train.patience", &RunConfig::train, &Tr::patience, 1));
    e.push_back(real_entry<Tr>("train.lambda_T", &RunConfig::train, &Tr::lambda_tcd, 0.0));
    e.push_back(real_entry<Tr>("train.lambda_N", &RunConfig::train, &Tr::lambda_npd, 0.0));
    e.push_back(int_entry<Tr>("train.T", &RunConfig::train, &Tr::steps, 1));
    e.push_back(real_entry<Tr>("train.beta_start", &RunConfig::train, &Tr::beta_start, 0.0));
    e.push_back(real_entry<Tr>("train.beta_end", &RunConfig::train, &Tr::beta_end, 0.0));
    e.push_back(bool_entry<Tr>("train.beta_rescale", &RunConfig::train, &Tr::beta_rescale));
    e.push_back(real_entry<Tr>("train.gamma", &RunConfig::train, &Tr::gamma, 0.0));
    e.push_back({"train.seed", [](const RunConfig& c) { return fmt_int(c.train.seed); },
                 [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("train.seed", v); }});
    e.push_back(real_entry<Tr>("train.clip_norm", &RunConfig::train, &Tr::clip_norm, 0.0));
    e.push_back(enum_entry<training::TimestepSampling>(
        "train.t_sampling", [](RunConfig& c) -> training::TimestepSampling& { return c.train.t_sampling; },
        {{"uniform_1_to_T", training::TimestepSampling::uniform_1_to_T},
         {"fixed_set", training::TimestepSampling::fixed_set}}));
    e.push_back(bool_entry<Tr>("train.log_wall_time", &RunConfig::train, &Tr::log_wall_time));
    e.push_back(enum_entry<Variant>("train.variant", [](RunConfig& c) -> Variant& { return c.variant; },
                                    {{"full", Variant::full},
                                     {"no_tcd", Variant::no_tcd},
                                     {"no_npd", Variant::no_npd},
                                     {"no_both", Variant::no_both}}));

    e.push_back({"eval.ks", [](const RunConfig& c) { return join(c.eval.ks, [](int k) { return fmt_int(k); }); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<int> ks;
                   for (const auto& part : split_list(v)) {
                     const int k = parse_number<int>("eval.ks", part);
                     if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
                     ks.push_back(k);
                   }
                   if (ks.empty()) throw ConfigError("eval.ks must not be empty");
                   c.eval.ks = ks;
                 }});
    e.push_back(bool_entry<Ev>("eval.mask_history", &RunConfig::eval, &Ev::mask_history));
    e.push_back(int_entry<Ev>("eval.batch_size", &RunConfig::eval, &Ev::batch_size, 1));

    e.push_back({"experiment.variants",
                 [](const RunConfig& c) { return join(c.experiment.variants, [](const std::string& s) { return s; }); },
                 [](RunConfig& c, const std::string& v) {
                   auto names = split_list(v);
                   if (names.empty()) throw ConfigError("experiment.variants must not be empty");
                   for (const auto& n : names) {
                     try {
                       parse_variant(n);
                     } catch (const std::invalid_argument&) {
                       throw ConfigError("experiment.variants: unknown variant '" + n + "'");
                     }
                   }
                   c.experiment.variants = names;
                 }});
    auto real_list = [&](std::string key, std::vector<double> ExperimentSection::*field) {
      e.push_back({key, [=](const RunConfig& c) { return join(c.experiment.*field, [](double x) { return fmt(x); }); },
                   [=](RunConfig& c, const std::string& v) {
                     std::vector<double> xs;
                     for (const auto& part : split_list(v)) {
                       const double x = parse_number<double>(key, part);
                       if (!(x >= 0.0)) throw ConfigError(key + " entries must be >= 0");
                       xs.push_back(x);
                     }
                     if (xs.empty()) throw ConfigError(key + " must not be empty");
                     c.experiment.*field = xs;
                   }});
    };
    real_list("experiment.sigmas", &ExperimentSection::sigmas);
    real_list("experiment.lambda_grid", &ExperimentSection::lambda_grid);
    e.push_back({"experiment.T_grid",
                 [](const RunConfig& c) { return join(c.experiment.steps_grid, [](int t) { return fmt_int(t); }); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<int> ts;
                   for (const auto& part : split_list(v)) {
                     const int t = parse_number<int>("experiment.T_grid", part);
                     if (t < 1) throw ConfigError("experiment.T_grid entries must be >= 1");
                     ts.push_back(t);
                   }
                   if (ts.empty()) throw ConfigError("experiment.T_grid must not be empty");
                   c.experiment.steps_grid = ts;
                 }});
    e.push_back({"experiment.seeds",
                 [](const RunConfig& c) { return join(c.experiment.seeds, [](std::uint64_t s) { return fmt_int(s); }); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::uint64_t> seeds;
                   for (const auto& part : split_list(v)) seeds.push_back(parse_number<std::uint64_t>("experiment.seeds", part));
                   if (seeds.empty()) throw ConfigError("experiment.seeds needs at least one seed");
                   c.experiment.seeds = seeds;
                 }});
    e.push_back(bool_entry<ExperimentSection>("experiment.record_runtime", &RunConfig::experiment,
                                              &ExperimentSection::record_runtime));
    return e;
  }();
  return entries;
}

const Entry* find(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

const std::vector<std::string> kSections{"data", "backbone", "tcd", "npd", "train", "eval", "experiment"};

void validate(const RunConfig& c) {
  if (c.data.synth.min_len > c.data.synth.max_len) throw ConfigError("data.min_seq_len exceeds data.max_seq_len");
  if (std::find(c.eval.ks.begin(), c.eval.ks.end(), 10) == c.eval.ks.end()) {
    throw ConfigError("eval.ks must include 10 (early stopping uses validation N@10)");
  }
  if (c.backbone.dim % c.backbone.heads != 0) throw ConfigError("backbone.dim must be divisible by backbone.heads");
  if (c.backbone.dim % c.npd.heads != 0) throw ConfigError("backbone.dim must be divisible by npd.heads");
  if (c.backbone.dropout >= 1.0) throw ConfigError("backbone.dropout must be < 1");
  if (c.train.beta_end >= 1.0 || c.train.beta_start > c.train.beta_end) {
    throw ConfigError("train.beta_start <= train.beta_end < 1 required");
  }
}

}  // namespace

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry* e = find(key);
  if (e == nullptr) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    bool known_section = false;
    for (const auto& s : kSections) known_section = known_section || s == section;
    if (!known_section) throw ConfigError("unknown key '" + key + "' (no such section)");
    throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  }
  e->set(cfg, value);
}

RunConfig parse_config_text(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::stringstream in(text);
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(number) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      bool ok = false;
      for (const auto& s : kSections) ok = ok || s == section;
      if (!ok) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
      key = section + "." + key;
    }
    try {
      set_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), base);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string echo(const RunConfig& cfg) {
  std::string out = "# effective configuration\n";
  std::string current;
  for (const auto& e : registry()) {
    const std::string section = e.key.substr(0, e.key.find('.'));
    if (section != current) {
      out += (current.empty() ? "" : "\n") + std::string("[") + section + "]\n";
      current = section;
    }
    out += e.key.substr(section.size() + 1) + " = " + e.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

ModelConfig model_config(const RunConfig& cfg, const data::SplitDataset& dataset, const data::FeatureStore& store) {
  ModelConfig m;
  m.variant = cfg.variant;
  m.backbone = cfg.backbone;
  m.backbone.num_items = dataset.num_items();
  m.tcd = cfg.tcd;
  m.tcd.frames = store.frames();
  m.tcd.dim = store.visual_dim();
  m.tcd.steps = cfg.train.steps;
  m.tcd.gamma = cfg.train.gamma;
  m.npd = cfg.npd;
  m.npd.dim = cfg.backbone.dim;
  m.npd.visual_dim = store.visual_dim();
  m.npd.text_dim = store.text_dim();
  m.npd.frames = store.frames();
  m.npd.dropout = cfg.backbone.dropout;
  return m;
}

}  // namespace mealrec::config
