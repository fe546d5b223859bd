#include "hpm/eval/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "hpm/dataio/io.hpp"
#include "hpm/error.hpp"

namespace hpm::eval {

void RunConfig::resolve() {
  const patch::Geometry& g = engine.geometry;
  data.synth.height = g.height;
  data.synth.width = g.width;
  data.synth.channels = g.channels;
  data.synth.frames = g.frames;
  engine.resolve();
  if (data.train_size == 0) throw ConfigError("train_size must be positive");
  if (data.synth.classes < 2) throw ConfigError("at least two classes are required");
  if (probe.epochs == 0 || probe.batch_size == 0) throw ConfigError("probe epochs and batch_size must be positive");
}

RunConfig reference_config() {
  RunConfig c;
  c.engine.geometry = {1, 32, 32, 3, 8, 1};
  c.engine.model.encoder = {4, 64, 4, 4, 0};
  c.engine.model.reconstructor = {2, 64, 4, 4, 0};
  c.engine.model.predictor = {2, 64, 4, 4, 1};
  c.engine.mask = {0.75, 0.0, 0.5, 20, engine::MaskPolicy::argmax, false};
  c.engine.objective = {engine::PredMode::relative_bce, engine::Measure::pixel_mse, 1.0};
  c.engine.target = {patch::TargetMode::normalized_pixels, 1e-6};
  c.engine.ema.momentum = 0.99;
  c.engine.schedule = {0.02, 8, 4.0, 20.0, 0.0};
  c.engine.optimizer = {0.9, 0.95, 1e-8, 0.05};
  c.seed = 7;
  c.data.train_size = 512;
  c.data.heldout_size = 128;
  c.output_dir = "runs/reference";
  c.resolve();
  return c;
}

RunConfig toy_config() {
  RunConfig c = reference_config();
  c.engine.geometry = {1, 8, 16, 3, 4, 1};
  c.engine.model.encoder = {2, 8, 2, 2, 0};
  c.engine.model.reconstructor = {1, 8, 2, 2, 0};
  c.engine.model.predictor = {1, 8, 2, 2, 1};
  c.engine.mask.total_epochs = 2;
  c.engine.schedule.batch_size = 2;
  c.engine.schedule.warmup_epochs = 0.0;
  c.data.path = "";
  c.data.train_size = 4;
  c.data.heldout_size = 2;
  c.output_dir = "runs/toy";
  c.resolve();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is unavailable on older toolchains; strtod is exact for %.17g text.
    char* stop = nullptr;
    out = std::strtod(v.c_str(), &stop);
    if (v.empty() || stop != v.c_str() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return out;
  } else {
    r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end)
      throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

template <class T>
Field num(T& ref) {
  return {[&ref](const std::string& v) { ref = parse_number<T>(v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(ref);
            else
              return std::to_string(ref);
          }};
}

Field flag(bool& ref) {
  return {[&ref](const std::string& v) { ref = parse_bool(v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field text(std::string& ref) {
  return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

std::string target_name(patch::TargetMode m) {
  switch (m) {
    case patch::TargetMode::raw_pixels: return "raw_pixels";
    case patch::TargetMode::normalized_pixels: return "normalized_pixels";
    case patch::TargetMode::ema_features: return "ema_features";
  }
  return "?";
}

patch::TargetMode parse_target(const std::string& s) {
  if (s == "raw_pixels") return patch::TargetMode::raw_pixels;
  if (s == "normalized_pixels") return patch::TargetMode::normalized_pixels;
  if (s == "ema_features") return patch::TargetMode::ema_features;
  throw ConfigError("unknown target '" + s + "'");
}

using Schema = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

// Decoder keys write both decoders; serialization reads the reconstructor.
Schema schema(RunConfig& c) {
  auto& e = c.engine;
  auto* ep = &c.engine;
  auto both = [ep](std::size_t model::DecoderConfig::*member) {
    return Field{[ep, member](const std::string& v) {
                   ep->model.reconstructor.*member = parse_number<std::size_t>(v);
                   ep->model.predictor.*member = ep->model.reconstructor.*member;
                 },
                 [ep, member] { return std::to_string(ep->model.reconstructor.*member); }};
  };
  return {
      {"run",
       {{"seed", num(c.seed)},
        {"epochs", num(e.mask.total_epochs)},
        {"batch_size", num(e.schedule.batch_size)},
        {"steps_per_epoch", num(c.steps_per_epoch)},
        {"output_dir", text(c.output_dir)}}},
      {"geometry",
       {{"frames", num(e.geometry.frames)},
        {"height", num(e.geometry.height)},
        {"width", num(e.geometry.width)},
        {"channels", num(e.geometry.channels)},
        {"patch", num(e.geometry.patch)},
        {"temporal_patch", num(e.geometry.temporal_patch)}}},
      {"encoder",
       {{"depth", num(e.model.encoder.depth)},
        {"width", num(e.model.encoder.width)},
        {"heads", num(e.model.encoder.heads)},
        {"mlp_ratio", num(e.model.encoder.mlp_ratio)},
        {"input_mean", num(e.model.encoder.input_mean)},
        {"input_std", num(e.model.encoder.input_std)}}},
      {"decoder",
       {{"depth", both(&model::DecoderConfig::depth)},
        {"width", both(&model::DecoderConfig::width)},
        {"heads", both(&model::DecoderConfig::heads)},
        {"mlp_ratio", both(&model::DecoderConfig::mlp_ratio)}}},
      {"mask",
       {{"gamma", num(e.mask.gamma)},
        {"alpha0", num(e.mask.alpha0)},
        {"alphaT", num(e.mask.alphaT)},
        {"policy", Field{[ep](const std::string& v) { ep->mask.policy = engine::parse_policy(v); },
                         [ep] { return engine::to_string(ep->mask.policy); }}},
        {"per_frame", flag(e.mask.per_frame)}}},
      {"objective",
       {{"pred_mode",
         Field{[ep](const std::string& v) { ep->objective.pred_mode = engine::parse_pred_mode(v); },
               [ep] { return engine::to_string(ep->objective.pred_mode); }}},
        {"measure",
         Field{[ep](const std::string& v) { ep->objective.measure = engine::parse_measure(v); },
               [ep] { return engine::to_string(ep->objective.measure); }}},
        {"pred_weight", num(e.objective.pred_weight)},
        {"target", Field{[ep](const std::string& v) { ep->target.mode = parse_target(v); },
                         [ep] { return target_name(ep->target.mode); }}},
        {"target_eps", num(e.target.eps)}}},
      {"ema", {{"momentum", num(e.ema.momentum)}}},
      {"optim",
       {{"base_lr", num(e.schedule.base_lr)},
        {"warmup_epochs", num(e.schedule.warmup_epochs)},
        {"floor_lr", num(e.schedule.floor_lr)},
        {"beta1", num(e.optimizer.beta1)},
        {"beta2", num(e.optimizer.beta2)},
        {"eps", num(e.optimizer.eps)},
        {"weight_decay", num(e.optimizer.weight_decay)}}},
      {"data",
       {{"path", text(c.data.path)},
        {"train_size", num(c.data.train_size)},
        {"heldout_size", num(c.data.heldout_size)},
        {"classes", num(c.data.synth.classes)},
        {"texture_amplitude", num(c.data.synth.texture_amplitude)},
        {"noise_amplitude", num(c.data.synth.noise_amplitude)},
        {"max_speed", num(c.data.synth.max_speed)},
        {"synth_seed", num(c.data.synth.seed)}}},
      {"probe",
       {{"epochs", num(c.probe.epochs)},
        {"lr", num(c.probe.lr)},
        {"batch_size", num(c.probe.batch_size)},
        {"weight_decay", num(c.probe.weight_decay)}}},
  };
}

}  // namespace

RunConfig parse_config(const std::string& text_in) {
  RunConfig c = reference_config();
  Schema sch = schema(c);
  std::istringstream in(text_in);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& s : sch) known = known || s.first == section;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    Field* field = nullptr;
    for (auto& s : sch)
      if (s.first == section)
        for (auto& kv : s.second)
          if (kv.first == key) field = &kv.second;
    if (!field) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    try {
      field->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  c.resolve();
  return c;
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  Schema sch = schema(copy);
  std::string out;
  for (const auto& [section, fields] : sch) {
    if (!out.empty()) out += "\n";
    out += "[" + section + "]\n";
    for (const auto& [key, field] : fields) out += key + " = " + field.get() + "\n";
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RunConfig load_config(const std::string& path) { return parse_config(data::read_file(path)); }

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hpm::eval
