#include "deltal/config.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "deltal/errors.hpp"

namespace deltal {

using nlohmann::json;

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::VarianceLength: return "VarianceLength";
    case ExperimentKind::CvOrdering: return "CvOrdering";
    case ExperimentKind::Table1Check: return "Table1Check";
    case ExperimentKind::OptimalityCheck: return "OptimalityCheck";
    case ExperimentKind::TrainCompare: return "TrainCompare";
  }
  return "?";
}

std::vector<AggregationScheme> default_schemes(double m, const std::vector<double>& alphas) {
  std::vector<AggregationScheme> out{Grpo{}, Dapo{}, DrGrpo{m}};
  for (double a : alphas) out.push_back(DeltaL{a, m});
  return out;
}

namespace {

struct KeyDoc {
  const char* section;
  const char* key;
  const char* type;
  const char* fallback;
  const char* doc;
};

// The single source for accepted keys and the generated reference.
constexpr KeyDoc kKeys[] = {
    {"experiment", "kind", "string", "(required)",
     "VarianceLength | CvOrdering | Table1Check | OptimalityCheck | TrainCompare"},
    {"experiment", "samples", "integer", "VarianceLength 10000, Table1Check/OptimalityCheck 100000",
     "Monte Carlo draws (single responses or groups)"},
    {"experiment", "seeds", "integer list", "[0]", "one run per seed; --seed replaces the list"},
    {"experiment", "output_dir", "string", "out/<kind>", "where reports are written; --out overrides"},
    {"experiment", "schemes", "list of scheme objects",
     "GRPO, DAPO, DrGRPO(M), DeltaL(alpha, M) for each alpha in `alphas`",
     R"({"kind": "GRPO" | "DAPO" | "DrGRPO" | "DeltaL", "alpha": 0..1, "M": > 0}; M defaults to task.max_len)"},
    {"experiment", "alphas", "number list", "[0, 0.25, 0.5, 0.75, 1]",
     "DeltaL exponents used by the default scheme list and the CV sweep"},
    {"experiment", "group_size", "integer", "8", "responses per group (Table1Check)"},
    {"experiment", "lengths", "integer list", "[1, 2, 3, 4, 6, 8, 12, 16] clipped to max_len",
     "fixed length multiset (OptimalityCheck)"},
    {"experiment", "random_vectors", "integer", "10000",
     "random length vectors (CvOrdering) or random weight vectors (OptimalityCheck)"},
    {"experiment", "logit_scale", "number", "1.0", "random instance logits are uniform in [-s, s] (Table1Check)"},
    {"experiment", "min_bin_count", "integer", "30", "lengths with fewer samples are left out of the fit"},
    {"task", "vocab_size", "integer", "10 (Table1Check: 3)", "STOP plus digits 1..vocab_size-1"},
    {"task", "max_len", "integer", "16 (Table1Check: 5)", "maximum response length"},
    {"task", "target", "integer", "1", "target digit sum (or residue)"},
    {"task", "reward", "rule object", R"({"rule": "SumEqualsTarget", "modulus": 2})",
     R"(SumEqualsTarget with optional modulus (0 = exact sum), or {"rule": "ParityOfLength", "even": bool})"},
    {"train", "advantage", "string", "\"MeanStd\"", "MeanStd | MeanOnly"},
    {"train", "clip", "bool", "true", "clipped importance ratio against the batch snapshot"},
    {"train", "eps_low", "number", "0.2", "lower clip range"},
    {"train", "eps_high", "number", "0.3", "upper clip range"},
    {"train", "prompts_per_batch", "integer", "16", "groups per step"},
    {"train", "rollouts_per_prompt", "integer", "8", "G"},
    {"train", "minibatches_per_batch", "integer", "1", "must divide prompts_per_batch"},
    {"train", "learning_rate", "number", "4.0", "plain gradient ascent step"},
    {"train", "steps", "integer", "500", "training steps"},
    {"train", "eval_every", "integer", "25", "evaluation interval in steps"},
    {"train", "eval_k", "integer", "8", "samples per evaluation prompt (Avg@k)"},
    {"train", "eval_prompts", "integer", "256", "evaluation prompts"},
    {"train", "dynamic_sampling", "bool", "false", "resample all-equal-reward groups, up to 8 times"},
    {"train", "overlong_filtering", "bool", "false", "mask truncated responses from the loss"},
    {"train", "dapo_full_batch", "bool", "true", "DAPO divides by the summed lengths of the whole batch"},
    {"train", "init_stop_logit", "number", "-1.5", "STOP logit of the initial policy; other logits are 0"},
};

struct Entry {
  int line = 0;
  json value;
};

using Section = std::map<std::string, Entry>;

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool known_key(const std::string& section, const std::string& key) {
  return std::any_of(std::begin(kKeys), std::end(kKeys),
                     [&](const KeyDoc& k) { return section == k.section && key == k.key; });
}

// Typed access to one section, with line-level diagnostics.
class Reader {
 public:
  Reader(std::string name, const Section* section, int header_line)
      : name_(std::move(name)), section_(section), header_line_(header_line) {}

  bool present() const { return section_ != nullptr; }
  int header_line() const { return header_line_; }
  bool has(const std::string& key) const { return section_ && section_->count(key); }
  int line(const std::string& key) const { return has(key) ? section_->at(key).line : header_line_; }
  std::string field(const std::string& key) const { return name_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigInvalid(line(key), field(key), msg);
  }

  const json& raw(const std::string& key) const { return section_->at(key).value; }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return convert<T>(key, raw(key));
  }

  template <typename T>
  T convert(const std::string& key, const json& v) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(key, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, std::size_t>) {
      if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
      return static_cast<std::size_t>(v.get<std::uint64_t>());
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < -2147483647LL || x > 2147483647LL) fail(key, "integer out of range");
      return static_cast<int>(x);
    } else {
      static_assert(sizeof(T) == 0, "unsupported type");
    }
  }

  template <typename T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array()) fail(key, "expected a list");
    std::vector<T> out;
    for (const auto& item : v) out.push_back(convert<T>(key, item));
    return out;
  }

 private:
  std::string name_;
  const Section* section_;
  int header_line_;
};

AggregationScheme parse_scheme(const Reader& r, const std::string& key, const json& v, double default_m) {
  std::string kind;
  const json* obj = nullptr;
  if (v.is_string()) {
    kind = v.get<std::string>();
  } else if (v.is_object()) {
    if (!v.contains("kind") || !v["kind"].is_string()) r.fail(key, "scheme object needs a string \"kind\"");
    kind = v["kind"].get<std::string>();
    obj = &v;
    for (const auto& [k, _] : v.items()) {
      if (k != "kind" && k != "alpha" && k != "M") r.fail(key, fmt::format("unknown scheme field \"{}\"", k));
    }
  } else {
    r.fail(key, "a scheme is a string or an object");
  }
  const auto number = [&](const char* name, double fallback) {
    if (!obj || !obj->contains(name)) return fallback;
    if (!(*obj)[name].is_number()) r.fail(key, fmt::format("scheme field \"{}\" must be a number", name));
    return (*obj)[name].get<double>();
  };
  const auto reject = [&](const char* name) {
    if (obj && obj->contains(name)) r.fail(key, fmt::format("{} takes no \"{}\"", kind, name));
  };
  const auto check_m = [&](double m) {
    if (!(m > 0.0)) r.fail(key, fmt::format("M must be positive, got {}", m));
    return m;
  };
  if (kind == "GRPO") {
    reject("alpha");
    reject("M");
    return Grpo{};
  }
  if (kind == "DAPO") {
    reject("alpha");
    reject("M");
    return Dapo{};
  }
  if (kind == "DrGRPO") {
    reject("alpha");
    return DrGrpo{check_m(number("M", default_m))};
  }
  if (kind == "DeltaL") {
    const double alpha = number("alpha", 1.0);
    if (!(alpha >= 0.0 && alpha <= 1.0)) r.fail(key, fmt::format("alpha = {} outside [0, 1]", alpha));
    return DeltaL{alpha, check_m(number("M", default_m))};
  }
  r.fail(key, fmt::format("unknown scheme kind \"{}\"", kind));
}

json scheme_json(const AggregationScheme& s) {
  return std::visit(
      [](const auto& x) -> json {
        using S = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<S, Grpo>) return {{"kind", "GRPO"}};
        if constexpr (std::is_same_v<S, Dapo>) return {{"kind", "DAPO"}};
        if constexpr (std::is_same_v<S, DrGrpo>) return {{"kind", "DrGRPO"}, {"M", x.M}};
        if constexpr (std::is_same_v<S, DeltaL>) return {{"kind", "DeltaL"}, {"alpha", x.alpha}, {"M", x.M}};
      },
      s);
}

RewardRule parse_reward(const Reader& r, const json& v) {
  const std::string key = "reward";
  std::string rule;
  if (v.is_string()) {
    rule = v.get<std::string>();
  } else if (v.is_object() && v.contains("rule") && v["rule"].is_string()) {
    rule = v["rule"].get<std::string>();
  } else {
    r.fail(key, "expected a rule name or an object with a \"rule\" field");
  }
  const auto allow = [&](std::initializer_list<const char*> names) {
    if (!v.is_object()) return;
    for (const auto& [k, _] : v.items()) {
      if (k == "rule") continue;
      if (std::none_of(names.begin(), names.end(), [&](const char* n) { return k == n; })) {
        r.fail(key, fmt::format("{} takes no \"{}\"", rule, k));
      }
    }
  };
  if (rule == "SumEqualsTarget") {
    allow({"modulus"});
    int modulus = 0;
    if (v.is_object() && v.contains("modulus")) {
      if (!v["modulus"].is_number_integer() || v["modulus"].get<int>() < 0) {
        r.fail(key, "modulus must be a non-negative integer");
      }
      modulus = v["modulus"].get<int>();
    }
    return SumEqualsTarget{modulus};
  }
  if (rule == "ParityOfLength") {
    allow({"even"});
    bool even = true;
    if (v.is_object() && v.contains("even")) {
      if (!v["even"].is_boolean()) r.fail(key, "even must be true or false");
      even = v["even"].get<bool>();
    }
    return ParityOfLength{even};
  }
  r.fail(key, fmt::format("unknown reward rule \"{}\"", rule));
}

json reward_json(const RewardRule& rule) {
  if (const auto* s = std::get_if<SumEqualsTarget>(&rule)) return {{"rule", "SumEqualsTarget"}, {"modulus", s->modulus}};
  return {{"rule", "ParityOfLength"}, {"even", std::get<ParityOfLength>(rule).even}};
}

ExperimentKind parse_kind(const Reader& r) {
  if (!r.has("kind")) throw ConfigInvalid(r.header_line(), "experiment.kind", "missing required key");
  const auto name = r.get<std::string>("kind", "");
  for (auto k : {ExperimentKind::VarianceLength, ExperimentKind::CvOrdering, ExperimentKind::Table1Check,
                 ExperimentKind::OptimalityCheck, ExperimentKind::TrainCompare}) {
    if (name == to_string(k)) return k;
  }
  r.fail("kind", fmt::format("unknown experiment kind \"{}\"", name));
}

std::string snake_case(std::string_view camel) {
  std::string out;
  for (char c : camel) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      if (!out.empty()) out += '_';
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  std::map<std::string, Section> sections;
  std::map<std::string, int> header_lines;
  std::string current;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigInvalid(line_no, "", "unterminated section header");
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      if (current != "experiment" && current != "task" && current != "train") {
        throw ConfigInvalid(line_no, current, "unknown section");
      }
      if (header_lines.count(current)) throw ConfigInvalid(line_no, current, "section appears twice");
      header_lines[current] = line_no;
      sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigInvalid(line_no, "", "expected `key = value`");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (current.empty()) throw ConfigInvalid(line_no, key, "key outside of a section");
    const std::string field = current + "." + key;
    if (!known_key(current, key)) throw ConfigInvalid(line_no, field, "unknown key");
    if (sections[current].count(key)) throw ConfigInvalid(line_no, field, "key set twice");
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      throw ConfigInvalid(line_no, field, fmt::format("value `{}` is not valid JSON", value));
    }
    sections[current][key] = Entry{line_no, std::move(parsed)};
  }

  const auto reader = [&](const std::string& name) {
    const auto it = sections.find(name);
    return Reader(name, it == sections.end() ? nullptr : &it->second,
                  it == sections.end() ? 0 : header_lines[name]);
  };
  const Reader exp = reader("experiment");
  const Reader task = reader("task");
  const Reader train = reader("train");
  if (!exp.present()) throw ConfigInvalid(0, "experiment", "missing [experiment] section");

  ExperimentConfig c;
  c.kind = parse_kind(exp);
  const bool table1 = c.kind == ExperimentKind::Table1Check;
  if (c.kind == ExperimentKind::TrainCompare && !task.present()) {
    throw ConfigInvalid(0, "task", "TrainCompare needs a [task] section");
  }

  c.task.vocab_size = task.get<int>("vocab_size", table1 ? 3 : c.task.vocab_size);
  c.task.max_len = task.get<int>("max_len", table1 ? 5 : c.task.max_len);
  c.task.target = task.get<int>("target", c.task.target);
  if (task.has("reward")) c.task.reward_rule = parse_reward(task, task.raw("reward"));
  try {
    c.task.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(task.header_line(), "task", e.what());
  }

  const double m = c.task.max_len;
  const auto alphas = exp.get_list<double>("alphas", {0.0, 0.25, 0.5, 0.75, 1.0});
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) exp.fail("alphas", fmt::format("alpha = {} outside [0, 1]", a));
  }
  if (exp.has("schemes")) {
    const json& list = exp.raw("schemes");
    if (!list.is_array() || list.empty()) exp.fail("schemes", "expected a non-empty list");
    for (const auto& item : list) c.schemes.push_back(parse_scheme(exp, "schemes", item, m));
  } else {
    c.schemes = default_schemes(m, alphas);
  }

  std::size_t default_samples = 0;
  if (c.kind == ExperimentKind::VarianceLength) default_samples = 10'000;
  if (c.kind == ExperimentKind::Table1Check || c.kind == ExperimentKind::OptimalityCheck) default_samples = 100'000;
  c.samples = exp.get<std::size_t>("samples", default_samples);
  if (default_samples > 0 && c.samples < 2) exp.fail("samples", "need at least 2 samples");

  c.seeds = exp.get_list<std::uint64_t>("seeds", {0});
  if (c.seeds.empty()) exp.fail("seeds", "seed list is empty");
  c.output_dir = exp.get<std::string>("output_dir", "out/" + snake_case(to_string(c.kind)));
  if (c.output_dir.empty()) exp.fail("output_dir", "must not be empty");

  c.group_size = exp.get<int>("group_size", 8);
  if (c.group_size < 1) exp.fail("group_size", "must be positive");
  std::vector<int> fallback_lengths;
  for (int l : {1, 2, 3, 4, 6, 8, 12, 16}) {
    if (l < c.task.max_len) fallback_lengths.push_back(l);
  }
  fallback_lengths.push_back(c.task.max_len);
  c.lengths = exp.get_list<int>("lengths", c.kind == ExperimentKind::OptimalityCheck ? fallback_lengths
                                                                                     : std::vector<int>{});
  for (int l : c.lengths) {
    if (l < 1 || l > c.task.max_len) exp.fail("lengths", fmt::format("length {} outside [1, {}]", l, c.task.max_len));
  }
  if (c.kind == ExperimentKind::OptimalityCheck && c.lengths.size() < 2) exp.fail("lengths", "need at least 2");
  c.random_vectors = exp.get<std::size_t>("random_vectors", 10'000);
  c.logit_scale = exp.get<double>("logit_scale", 1.0);
  if (!(c.logit_scale >= 0.0)) exp.fail("logit_scale", "must be non-negative");
  c.min_bin_count = exp.get<std::size_t>("min_bin_count", 30);

  if (train.present() || c.kind == ExperimentKind::TrainCompare) {
    TrainConfig t;
    const std::string mode = train.get<std::string>("advantage", to_string(t.advantage_mode));
    if (mode == "MeanStd") {
      t.advantage_mode = AdvantageMode::MeanStd;
    } else if (mode == "MeanOnly") {
      t.advantage_mode = AdvantageMode::MeanOnly;
    } else {
      train.fail("advantage", fmt::format("unknown advantage mode \"{}\"", mode));
    }
    t.clip.enabled = train.get<bool>("clip", t.clip.enabled);
    t.clip.eps_low = train.get<double>("eps_low", t.clip.eps_low);
    t.clip.eps_high = train.get<double>("eps_high", t.clip.eps_high);
    t.prompts_per_batch = train.get<int>("prompts_per_batch", t.prompts_per_batch);
    t.rollouts_per_prompt = train.get<int>("rollouts_per_prompt", t.rollouts_per_prompt);
    t.minibatches_per_batch = train.get<int>("minibatches_per_batch", t.minibatches_per_batch);
    t.learning_rate = train.get<double>("learning_rate", t.learning_rate);
    t.steps = train.get<int>("steps", t.steps);
    t.eval_every = train.get<int>("eval_every", t.eval_every);
    t.eval_k = train.get<int>("eval_k", t.eval_k);
    t.eval_prompts = train.get<int>("eval_prompts", t.eval_prompts);
    t.dynamic_sampling = train.get<bool>("dynamic_sampling", t.dynamic_sampling);
    t.overlong_filtering = train.get<bool>("overlong_filtering", t.overlong_filtering);
    t.dapo_full_batch = train.get<bool>("dapo_full_batch", t.dapo_full_batch);
    c.init_stop_logit = train.get<double>("init_stop_logit", c.init_stop_logit);
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigInvalid(train.header_line(), "train", e.what());
    }
    c.train = t;
  }
  return c;
}

std::string serialize_config(const ExperimentConfig& c) {
  std::string out = "[experiment]\n";
  const auto put = [&](const char* key, const json& v) { out += fmt::format("{} = {}\n", key, v.dump()); };
  put("kind", to_string(c.kind));
  put("samples", c.samples);
  put("seeds", c.seeds);
  put("output_dir", c.output_dir);
  json schemes = json::array();
  for (const auto& s : c.schemes) schemes.push_back(scheme_json(s));
  put("schemes", schemes);
  put("group_size", c.group_size);
  put("lengths", c.lengths);
  put("random_vectors", c.random_vectors);
  put("logit_scale", c.logit_scale);
  put("min_bin_count", c.min_bin_count);

  out += "\n[task]\n";
  put("vocab_size", c.task.vocab_size);
  put("max_len", c.task.max_len);
  put("target", c.task.target);
  put("reward", reward_json(c.task.reward_rule));

  if (c.train) {
    const TrainConfig& t = *c.train;
    out += "\n[train]\n";
    put("advantage", to_string(t.advantage_mode));
    put("clip", t.clip.enabled);
    put("eps_low", t.clip.eps_low);
    put("eps_high", t.clip.eps_high);
    put("prompts_per_batch", t.prompts_per_batch);
    put("rollouts_per_prompt", t.rollouts_per_prompt);
    put("minibatches_per_batch", t.minibatches_per_batch);
    put("learning_rate", t.learning_rate);
    put("steps", t.steps);
    put("eval_every", t.eval_every);
    put("eval_k", t.eval_k);
    put("eval_prompts", t.eval_prompts);
    put("dynamic_sampling", t.dynamic_sampling);
    put("overlong_filtering", t.overlong_filtering);
    put("dapo_full_batch", t.dapo_full_batch);
    put("init_stop_logit", c.init_stop_logit);
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string config_reference() {
  std::string out =
      "Experiment config reference\n"
      "\n"
      "Lines are `key = value` under [experiment], [task] and [train] headers.\n"
      "Values are JSON. Lines starting with # are comments. Unknown keys are errors.\n";
  std::string section;
  for (const auto& k : kKeys) {
    if (section != k.section) {
      section = k.section;
      out += fmt::format("\n[{}]\n", section);
    }
    out += fmt::format("  {:<22} {:<22} default: {}\n  {:<22} {}\n", k.key, k.type, k.fallback, "", k.doc);
  }
  return out;
}

}  // namespace deltal
