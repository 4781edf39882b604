#include "vlcp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <vector>

namespace vlcp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

int to_int(const std::string& s) {
  const auto v = parse_int(s);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("integer out of range: '" + s + "'");
  return static_cast<int>(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty list item in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

struct Section {
  std::string name;  // "" for the top level
  std::vector<Key> keys;
};

#define INT_KEY(k, field)                                                   \
  Key {                                                                     \
    k, [](const RunConfig& c) { return std::to_string(c.field); },          \
        [](RunConfig& c, const std::string& v) { c.field = to_int(v); }     \
  }
#define DBL_KEY(k, field)                                                   \
  Key {                                                                     \
    k, [](const RunConfig& c) { return fmt_double(c.field); },              \
        [](RunConfig& c, const std::string& v) { c.field = parse_double(v); } \
  }

std::vector<Key> stage_keys(std::size_t i) {
  auto st = [i](RunConfig& c) -> train::StageConfig& { return c.stages[i]; };
  auto cst = [i](const RunConfig& c) -> const train::StageConfig& { return c.stages[i]; };
  std::vector<Key> keys;
  keys.push_back({"trainable", [=](const RunConfig& c) { return join_list(cst(c).trainable); },
                  [=](RunConfig& c, const std::string& v) { st(c).trainable = split_list(v); }});
  keys.push_back({"resolution", [=](const RunConfig& c) { return to_string(cst(c).resolution); },
                  [=](RunConfig& c, const std::string& v) {
                    st(c).resolution = resolution_from_string(v);
                  }});
  keys.push_back({"rotary_mode",
                  [=](const RunConfig& c) { return crope::to_string(cst(c).rotary_mode); },
                  [=](RunConfig& c, const std::string& v) {
                    try {
                      st(c).rotary_mode = crope::rotary_mode_from_string(v);
                    } catch (const ParameterError& e) {
                      throw ConfigError(e.what());
                    }
                  }});
  auto dbl = [&](const char* name, double train::StageConfig::*f) {
    keys.push_back({name, [=](const RunConfig& c) { return fmt_double(cst(c).*f); },
                    [=](RunConfig& c, const std::string& v) { st(c).*f = parse_double(v); }});
  };
  auto num = [&](const char* name, int train::StageConfig::*f) {
    keys.push_back({name, [=](const RunConfig& c) { return std::to_string(cst(c).*f); },
                    [=](RunConfig& c, const std::string& v) { st(c).*f = to_int(v); }});
  };
  dbl("alpha", &train::StageConfig::alpha);
  dbl("lr_adapter", &train::StageConfig::lr_adapter);
  dbl("lr_vfm", &train::StageConfig::lr_vfm);
  dbl("lr_llm", &train::StageConfig::lr_llm);
  num("epochs", &train::StageConfig::epochs);
  num("batch_size", &train::StageConfig::batch_size);
  dbl("warmup_ratio", &train::StageConfig::warmup_ratio);
  dbl("min_lr_ratio", &train::StageConfig::min_lr_ratio);
  num("num_pairs", &train::StageConfig::num_pairs);
  keys.push_back({"data",
                  [=](const RunConfig& c) {
                    return std::string(cst(c).data == train::DataKind::qa ? "qa" : "captions");
                  },
                  [=](RunConfig& c, const std::string& v) {
                    if (v == "qa")
                      st(c).data = train::DataKind::qa;
                    else if (v == "captions")
                      st(c).data = train::DataKind::captions;
                    else
                      throw ConfigError("data must be captions or qa, got '" + v + "'");
                  }});
  return keys;
}

const std::vector<Section>& schema() {
  static const std::vector<Section> s = [] {
    std::vector<Section> out;
    out.push_back({"",
                   {{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                     [](RunConfig& c, const std::string& v) {
                       const auto x = parse_int(v);
                       if (x < 0) throw ConfigError("seed must be non-negative");
                       c.seed = static_cast<std::uint64_t>(x);
                     }},
                    {"output_dir", [](const RunConfig& c) { return c.output_dir; },
                     [](RunConfig& c, const std::string& v) { c.output_dir = v; }}}});
    out.push_back({"encoder",
                   {INT_KEY("layers", model.encoder.layers), INT_KEY("width", model.encoder.width),
                    INT_KEY("heads", model.encoder.heads), INT_KEY("patch", model.encoder.patch),
                    INT_KEY("mlp_ratio", model.encoder.mlp_ratio),
                    INT_KEY("pos_grid", model.encoder.pos_grid),
                    DBL_KEY("rope_base", model.encoder.rope_base)}});
    out.push_back({"decoder",
                   {INT_KEY("layers", model.decoder.layers), INT_KEY("width", model.decoder.width),
                    INT_KEY("heads", model.decoder.heads),
                    INT_KEY("max_positions", model.decoder.max_positions),
                    INT_KEY("mlp_ratio", model.decoder.mlp_ratio),
                    DBL_KEY("rope_base", model.decoder.rope_base)}});
    out.push_back({"corpus",
                   {{"seed", [](const RunConfig& c) { return std::to_string(c.corpus.seed); },
                     [](RunConfig& c, const std::string& v) {
                       const auto x = parse_int(v);
                       if (x < 0) throw ConfigError("seed must be non-negative");
                       c.corpus.seed = static_cast<std::uint64_t>(x);
                     }},
                    INT_KEY("min_side", corpus.min_side), INT_KEY("max_side", corpus.max_side),
                    INT_KEY("max_objects", corpus.max_objects),
                    INT_KEY("holdout_pairs", holdout_pairs)}});
    out.push_back({"align",
                   {DBL_KEY("epsilon", sinkhorn.epsilon), INT_KEY("n_iters", sinkhorn.n_iters),
                    DBL_KEY("tol", sinkhorn.tol),
                    {"two_sided",
                     [](const RunConfig& c) {
                       return std::string(c.sinkhorn.two_sided ? "true" : "false");
                     },
                     [](RunConfig& c, const std::string& v) {
                       c.sinkhorn.two_sided = parse_bool(v);
                     }}}});
    for (std::size_t i = 0; i < 4; ++i)
      out.push_back({"stage." + train::to_string(static_cast<train::StageId>(i)), stage_keys(i)});
    return out;
  }();
  return s;
}

#undef INT_KEY
#undef DBL_KEY

}  // namespace

std::string to_string(const ResolutionPolicy& p) {
  if (p.mode == ResolutionPolicy::Mode::fixed) return "fixed:" + std::to_string(p.side);
  return p.max_visual_tokens ? "native:" + std::to_string(*p.max_visual_tokens) : "native";
}

ResolutionPolicy resolution_from_string(const std::string& s) {
  if (s == "native") return ResolutionPolicy::native();
  if (s.rfind("native:", 0) == 0) return ResolutionPolicy::native(to_int(s.substr(7)));
  if (s.rfind("fixed:", 0) == 0) return ResolutionPolicy::fixed(to_int(s.substr(6)));
  throw ConfigError("resolution must be fixed:<side>, native or native:<cap>, got '" + s + "'");
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.model.decoder.vocab = static_cast<int>(corpus::Vocabulary::standard().size());
  for (std::size_t i = 0; i < 4; ++i)
    c.stages[i] = train::StageConfig::defaults(static_cast<train::StageId>(i));
  return c;
}

void RunConfig::validate() const {
  try {
    model.validate();
    corpus.validate();
    sinkhorn.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto vocab = corpus::Vocabulary::standard().size();
  if (static_cast<std::size_t>(model.decoder.vocab) != vocab)
    throw ConfigError("decoder vocab must equal the vocabulary size " + std::to_string(vocab));
  if (holdout_pairs < 1) throw ConfigError("holdout_pairs must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (std::size_t i = 0; i < 4; ++i) {
    if (stages[i].stage != static_cast<train::StageId>(i))
      throw ConfigError("stage table out of order at entry " + std::to_string(i));
    stages[i].validate();
  }
  if (stage(train::StageId::II_fixed).resolution.mode != ResolutionPolicy::Mode::fixed)
    throw ConfigError("stage II-fixed needs a fixed resolution");
  if (stage(train::StageId::II_native).resolution.mode != ResolutionPolicy::Mode::native)
    throw ConfigError("stage II-native needs a native resolution");
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg = RunConfig::defaults();
  const auto& sections = schema();
  const Section* cur = &sections[0];
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      cur = nullptr;
      for (const auto& s : sections)
        if (!s.name.empty() && s.name == name) cur = &s;
      if (!cur) throw ConfigError(where + "unknown section [" + name + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const Key* k = nullptr;
    for (const auto& cand : cur->keys)
      if (cand.name == key) k = &cand;
    const auto label = cur->name.empty() ? key : cur->name + "." + key;
    if (!k) throw ConfigError(where + "unknown key '" + label + "'");
    if (!seen.insert(label).second) throw ConfigError(where + "duplicate key '" + label + "'");
    try {
      k->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + label + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& s : schema()) {
    if (!s.name.empty()) out << "\n[" << s.name << "]\n";
    for (const auto& k : s.keys) out << k.name << " = " << k.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace vlcp
