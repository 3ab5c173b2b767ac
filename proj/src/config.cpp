#include "gora/config.hpp"

#include "gora/io.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

namespace gora {

std::string to_string(TaskFamily f) { return f == TaskFamily::teacher ? "teacher" : "cluster"; }
std::string to_string(Method m) { return m == Method::gora ? "gora" : "lora"; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& msg) {
  throw ConfigError("config key '" + key + "': " + msg);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, "expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad(key, "expected a number, got '" + v + "'");
    return d;
  } catch (const std::logic_error&) {
    bad(key, "expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, "expected true/false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  return out;
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind("config key", 0) == 0) throw;
    bad(key, what);
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string RunConfig::display_label() const { return label.empty() ? to_string(adapter.method) : label; }

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) bad(key, msg);
  };
  check(workers >= 1, "topology.workers", "must be >= 1");
  check(train.steps >= 1, "optim.steps", "must be >= 1");
  check(adapter.adapter.alpha > 0.0, "adapter.alpha", "must be > 0");
  check(adapter.gamma >= 0.0, "adapter.gamma", "must be >= 0");
  wrap("adapter.r_ref", [&] { adapter.alloc.validate(); });
  wrap("probe", [&] { probe.probe.validate(); });
  wrap("optim", [&] { train.optim.validate(); });

  std::size_t batch_size = 0, train_samples = 0;
  std::vector<std::size_t> dims;
  if (task.family == TaskFamily::teacher) {
    const auto& t = task.teacher;
    check(t.dims.size() >= 2, "task.dims", "needs at least two entries");
    for (std::size_t d : t.dims) check(d >= 1, "task.dims", "entries must be positive");
    for (std::size_t l = 0; l + 1 < t.dims.size(); ++l) {
      check(t.r_true <= std::min(t.dims[l], t.dims[l + 1]), "task.r_true", "exceeds min(m, n) of a layer");
    }
    check(t.noise_std >= 0.0, "task.noise_std", "must be >= 0");
    batch_size = t.batch_size;
    train_samples = t.train_samples;
    dims = t.dims;
  } else {
    const auto& c = task.cluster;
    check(c.classes >= 2, "task.classes", "must be >= 2");
    check(c.dims >= 1, "task.input_dim", "must be >= 1");
    for (std::size_t h : model.hidden) check(h >= 1, "model.hidden", "entries must be positive");
    batch_size = c.batch_size;
    train_samples = c.train_samples;
    dims.push_back(c.dims);
    dims.insert(dims.end(), model.hidden.begin(), model.hidden.end());
    dims.push_back(c.classes);
  }
  check(batch_size >= 1, "task.batch_size", "must be >= 1");
  check(train_samples >= batch_size, "task.train_samples", "must cover at least one batch");

  const std::size_t batches = (train_samples + batch_size - 1) / batch_size;
  const std::size_t rounds = batches / workers;
  if (!probe.probe.adaptive) {
    check(rounds >= probe.probe.max_steps, "probe.steps",
          "needs " + std::to_string(probe.probe.max_steps * workers) + " training batches, task provides " +
              std::to_string(batches));
  } else {
    check(rounds >= 2, "probe.steps", "adaptive probe needs at least 2 rounds of batches");
  }
  (void)dims;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  bool r_min_set = false, r_max_set = false;
  std::string gamma_text;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](auto& k, auto& v) { cfg.seed = to_u64(k, v); }},
      {"label", [&](auto&, auto& v) { cfg.label = v; }},
      {"task.family",
       [&](auto& k, auto& v) {
         if (v == "teacher") cfg.task.family = TaskFamily::teacher;
         else if (v == "cluster") cfg.task.family = TaskFamily::cluster;
         else bad(k, "expected teacher or cluster");
       }},
      {"task.dims", [&](auto& k, auto& v) { cfg.task.teacher.dims = to_size_list(k, v); }},
      {"task.r_true", [&](auto& k, auto& v) { cfg.task.teacher.r_true = to_size(k, v); }},
      {"task.noise_std", [&](auto& k, auto& v) { cfg.task.teacher.noise_std = to_double(k, v); }},
      {"task.delta_scale", [&](auto& k, auto& v) { cfg.task.teacher.delta_scale = to_double(k, v); }},
      {"task.layer_decay", [&](auto& k, auto& v) { cfg.task.teacher.layer_decay = to_double(k, v); }},
      {"task.activation", [&](auto& k, auto& v) { cfg.task.teacher.activation = wrap(k, [&] { return parse_activation(v); }); }},
      {"task.train_samples",
       [&](auto& k, auto& v) { cfg.task.teacher.train_samples = cfg.task.cluster.train_samples = to_size(k, v); }},
      {"task.eval_samples",
       [&](auto& k, auto& v) { cfg.task.teacher.eval_samples = cfg.task.cluster.eval_samples = to_size(k, v); }},
      {"task.batch_size",
       [&](auto& k, auto& v) { cfg.task.teacher.batch_size = cfg.task.cluster.batch_size = to_size(k, v); }},
      {"task.input_dim", [&](auto& k, auto& v) { cfg.task.cluster.dims = to_size(k, v); }},
      {"task.classes", [&](auto& k, auto& v) { cfg.task.cluster.classes = to_size(k, v); }},
      {"task.separation", [&](auto& k, auto& v) { cfg.task.cluster.separation = to_double(k, v); }},
      {"model.hidden", [&](auto& k, auto& v) { cfg.model.hidden = v.empty() ? std::vector<std::size_t>{} : to_size_list(k, v); }},
      {"model.activation", [&](auto& k, auto& v) { cfg.model.activation = wrap(k, [&] { return parse_activation(v); }); }},
      {"model.bias", [&](auto& k, auto& v) { cfg.model.bias = to_bool(k, v); }},
      {"adapter.method",
       [&](auto& k, auto& v) {
         if (v == "gora") cfg.adapter.method = Method::gora;
         else if (v == "lora") cfg.adapter.method = Method::lora;
         else bad(k, "expected gora or lora");
       }},
      {"adapter.mode", [&](auto& k, auto& v) { cfg.adapter.adapter.mode = wrap(k, [&] { return parse_scaling_mode(v); }); }},
      {"adapter.alpha", [&](auto& k, auto& v) { cfg.adapter.adapter.alpha = to_double(k, v); }},
      {"adapter.freeze_a", [&](auto& k, auto& v) { cfg.adapter.adapter.freeze_a = to_bool(k, v); }},
      {"adapter.r_ref", [&](auto& k, auto& v) { cfg.adapter.alloc.r_ref = to_size(k, v); }},
      {"adapter.r_min",
       [&](auto& k, auto& v) {
         cfg.adapter.alloc.r_min = to_size(k, v);
         r_min_set = true;
       }},
      {"adapter.r_max",
       [&](auto& k, auto& v) {
         cfg.adapter.alloc.r_max = (v == "inf") ? kUnboundedRank : to_size(k, v);
         r_max_set = true;
       }},
      {"adapter.metric", [&](auto& k, auto& v) { cfg.adapter.alloc.metric = wrap(k, [&] { return parse_importance_metric(v); }); }},
      {"adapter.cap_at_layer_dim", [&](auto& k, auto& v) { cfg.adapter.alloc.cap_at_layer_dim = to_bool(k, v); }},
      {"adapter.gamma", [&](auto&, auto& v) { gamma_text = v; }},
      {"adapter.xi_rule", [&](auto& k, auto& v) { cfg.adapter.xi_rule = wrap(k, [&] { return parse_xi_rule(v); }); }},
      {"adapter.autotune_start", [&](auto& k, auto& v) { cfg.adapter.autotune.start = to_double(k, v); }},
      {"adapter.autotune_decay", [&](auto& k, auto& v) { cfg.adapter.autotune.decay = to_double(k, v); }},
      {"adapter.autotune_floor", [&](auto& k, auto& v) { cfg.adapter.autotune.floor = to_double(k, v); }},
      {"probe.steps",
       [&](auto& k, auto& v) {
         if (v == "auto") {
           cfg.probe.probe.adaptive = true;
         } else {
           cfg.probe.probe.adaptive = false;
           cfg.probe.probe.max_steps = to_size(k, v);
         }
       }},
      {"probe.max_steps", [&](auto& k, auto& v) { cfg.probe.probe.max_steps = to_size(k, v); }},
      {"probe.threshold", [&](auto& k, auto& v) { cfg.probe.probe.threshold = to_double(k, v); }},
      {"probe.offload", [&](auto& k, auto& v) { cfg.probe.probe.offload = to_bool(k, v); }},
      {"probe.importance_source",
       [&](auto& k, auto& v) { cfg.probe.probe.source = wrap(k, [&] { return parse_importance_source(v); }); }},
      {"optim.algorithm", [&](auto& k, auto& v) { cfg.train.optim.algorithm = wrap(k, [&] { return parse_optimizer(v); }); }},
      {"optim.lr", [&](auto& k, auto& v) { cfg.train.optim.lr = to_double(k, v); }},
      {"optim.beta1", [&](auto& k, auto& v) { cfg.train.optim.beta1 = to_double(k, v); }},
      {"optim.beta2", [&](auto& k, auto& v) { cfg.train.optim.beta2 = to_double(k, v); }},
      {"optim.weight_decay", [&](auto& k, auto& v) { cfg.train.optim.weight_decay = to_double(k, v); }},
      {"optim.eps", [&](auto& k, auto& v) { cfg.train.optim.eps = to_double(k, v); }},
      {"optim.b_lr_ratio", [&](auto& k, auto& v) { cfg.train.optim.b_lr_ratio = to_double(k, v); }},
      {"optim.warmup_ratio", [&](auto& k, auto& v) { cfg.train.optim.warmup_ratio = to_double(k, v); }},
      {"optim.decay", [&](auto& k, auto& v) { cfg.train.optim.decay = wrap(k, [&] { return parse_decay(v); }); }},
      {"optim.min_lr_ratio", [&](auto& k, auto& v) { cfg.train.optim.min_lr_ratio = to_double(k, v); }},
      {"optim.steps", [&](auto& k, auto& v) { cfg.train.steps = to_size(k, v); }},
      {"topology.workers", [&](auto& k, auto& v) { cfg.workers = to_size(k, v); }},
      {"output.dir", [&](auto&, auto& v) { cfg.out_dir = v; }},
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config key '" + key + "': unknown key");
    it->second(key, value);
  }

  if (!r_min_set) cfg.adapter.alloc.r_min = cfg.adapter.alloc.r_ref / 2;
  if (!r_max_set) cfg.adapter.alloc.r_max = 4 * cfg.adapter.alloc.r_ref;
  if (gamma_text.empty()) {
    cfg.adapter.gamma = InitConfig::default_gamma(cfg.adapter.alloc.r_ref);
  } else if (gamma_text == "auto") {
    cfg.adapter.gamma_auto = true;
  } else {
    cfg.adapter.gamma = to_double("adapter.gamma", gamma_text);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_file(path));
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << "\n"; };
  kv("seed", std::to_string(c.seed));
  if (!c.label.empty()) kv("label", c.label);
  kv("task.family", to_string(c.task.family));
  if (c.task.family == TaskFamily::teacher) {
    const auto& t = c.task.teacher;
    kv("task.dims", join(t.dims));
    kv("task.r_true", std::to_string(t.r_true));
    kv("task.noise_std", fmt_double(t.noise_std));
    kv("task.delta_scale", fmt_double(t.delta_scale));
    kv("task.layer_decay", fmt_double(t.layer_decay));
    kv("task.activation", to_string(t.activation));
    kv("task.train_samples", std::to_string(t.train_samples));
    kv("task.eval_samples", std::to_string(t.eval_samples));
    kv("task.batch_size", std::to_string(t.batch_size));
  } else {
    const auto& t = c.task.cluster;
    kv("task.input_dim", std::to_string(t.dims));
    kv("task.classes", std::to_string(t.classes));
    kv("task.separation", fmt_double(t.separation));
    kv("task.train_samples", std::to_string(t.train_samples));
    kv("task.eval_samples", std::to_string(t.eval_samples));
    kv("task.batch_size", std::to_string(t.batch_size));
    kv("model.hidden", join(c.model.hidden));
    kv("model.activation", to_string(c.model.activation));
    kv("model.bias", c.model.bias ? "true" : "false");
  }
  const auto& a = c.adapter;
  kv("adapter.method", to_string(a.method));
  kv("adapter.mode", to_string(a.adapter.mode));
  kv("adapter.alpha", fmt_double(a.adapter.alpha));
  kv("adapter.freeze_a", a.adapter.freeze_a ? "true" : "false");
  kv("adapter.r_ref", std::to_string(a.alloc.r_ref));
  kv("adapter.r_min", std::to_string(a.alloc.r_min));
  kv("adapter.r_max", a.alloc.r_max == kUnboundedRank ? "inf" : std::to_string(a.alloc.r_max));
  kv("adapter.metric", to_string(a.alloc.metric));
  kv("adapter.cap_at_layer_dim", a.alloc.cap_at_layer_dim ? "true" : "false");
  kv("adapter.gamma", a.gamma_auto ? "auto" : fmt_double(a.gamma));
  kv("adapter.xi_rule", to_string(a.xi_rule));
  kv("adapter.autotune_start", fmt_double(a.autotune.start));
  kv("adapter.autotune_decay", fmt_double(a.autotune.decay));
  kv("adapter.autotune_floor", fmt_double(a.autotune.floor));
  const auto& p = c.probe.probe;
  kv("probe.max_steps", std::to_string(p.max_steps));
  kv("probe.steps", p.adaptive ? "auto" : std::to_string(p.max_steps));
  kv("probe.threshold", fmt_double(p.threshold));
  kv("probe.offload", p.offload ? "true" : "false");
  kv("probe.importance_source", to_string(p.source));
  const auto& op = c.train.optim;
  kv("optim.algorithm", to_string(op.algorithm));
  kv("optim.lr", fmt_double(op.lr));
  kv("optim.beta1", fmt_double(op.beta1));
  kv("optim.beta2", fmt_double(op.beta2));
  kv("optim.weight_decay", fmt_double(op.weight_decay));
  kv("optim.eps", fmt_double(op.eps));
  kv("optim.b_lr_ratio", fmt_double(op.b_lr_ratio));
  kv("optim.warmup_ratio", fmt_double(op.warmup_ratio));
  kv("optim.decay", to_string(op.decay));
  kv("optim.min_lr_ratio", fmt_double(op.min_lr_ratio));
  kv("optim.steps", std::to_string(c.train.steps));
  kv("topology.workers", std::to_string(c.workers));
  if (!c.out_dir.empty()) kv("output.dir", c.out_dir);
  return o.str();
}

}  // namespace gora
