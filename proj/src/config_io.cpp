#include "yynet/config_io.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "yynet/errors.hpp"

namespace yynet {

using nlohmann::json;

namespace {

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
      return v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError("");
      return v.get<std::string>();
    }
  } catch (const ConfigError&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;
using Getter = std::function<json(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class T, class Access>
Field plain(Access access) {
  return {[access](RunConfig& c, const json& v, const std::string& k) { access(c) = get_as<T>(v, k); },
          [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); }};
}

template <class Enum, class Access>
Field enumerated(Access access, Enum (*parse)(const std::string&), const char* (*print)(Enum)) {
  return {[=](RunConfig& c, const json& v, const std::string& k) { access(c) = parse(get_as<std::string>(v, k)); },
          [=](const RunConfig& c) { return json(print(access(const_cast<RunConfig&>(c)))); }};
}

const char* fusion_name(FusionFormula f) { return to_string(f); }
const char* yin_name(YinMode m) { return to_string(m); }
const char* resnet_norm_name(ResNetNorm v) { return to_string(v); }
const char* mbconv_norm_name(MBConvNorm v) { return to_string(v); }
const char* shortcut_name(StrideShortcut v) { return to_string(v); }
const char* placement_name(SePlacement v) { return to_string(v); }
const char* clip_name(ClipMode v) { return to_string(v); }

#define M(field) [](RunConfig& c) -> auto& { return c.model.field; }
#define I(field) [](RunConfig& c) -> auto& { return c.model.internals.field; }
#define T(field) [](RunConfig& c) -> auto& { return c.train.field; }

const std::map<std::string, Field>& model_fields() {
  static const std::map<std::string, Field> f = {
      {"name", plain<std::string>(M(name))},
      {"yy_start_channels", plain<std::size_t>(M(yy_start_channels))},
      {"sp_start_channels", plain<std::size_t>(M(sp_start_channels))},
      {"channels_per_mbconv", plain<std::size_t>(M(channels_per_mbconv))},
      {"yy_layers", plain<std::size_t>(M(yy_layers))},
      {"sp_layers", plain<std::size_t>(M(sp_layers))},
      {"yy_mbconv_per_layer", plain<std::size_t>(M(yy_mbconv_per_layer))},
      {"sp_mbconv_per_layer", plain<std::size_t>(M(sp_mbconv_per_layer))},
      {"extra_sp_stride2", plain<bool>(M(extra_sp_stride2))},
      {"pre_classifier_neurons", plain<std::size_t>(M(pre_classifier_neurons))},
      {"num_classes", plain<std::size_t>(M(num_classes))},
      {"input_resolution", plain<std::size_t>(M(input_resolution))},
      {"fusion", enumerated<FusionFormula>(M(fusion), parse_fusion, fusion_name)},
      {"yin_mode", enumerated<YinMode>(M(yin_mode), parse_yin_mode, yin_name)},
      {"dropout_rate", plain<double>(M(dropout_rate))},
      {"expansion_factor", plain<std::size_t>(I(expansion_factor))},
      {"se_ratio", plain<std::size_t>(I(se_ratio))},
      {"se_bias", plain<bool>(I(se_bias))},
      {"conv_bias", plain<bool>(I(conv_bias))},
      {"head_bias", plain<bool>(I(head_bias))},
      {"resnet_norm", enumerated<ResNetNorm>(I(resnet_norm), parse_resnet_norm, resnet_norm_name)},
      {"mbconv_norm", enumerated<MBConvNorm>(I(mbconv_norm), parse_mbconv_norm, mbconv_norm_name)},
      {"stride_shortcut", enumerated<StrideShortcut>(I(stride_shortcut), parse_stride_shortcut, shortcut_name)},
      {"se_placement", enumerated<SePlacement>(I(se_placement), parse_se_placement, placement_name)},
      {"se_activation", enumerated<nn::Activation>(I(se_activation), nn::parse_activation, nn::activation_name)},
      {"se_gate", enumerated<nn::Activation>(I(se_gate), nn::parse_activation, nn::activation_name)},
      {"depthwise_kernel", plain<std::size_t>(I(depthwise_kernel))},
  };
  return f;
}

const std::map<std::string, Field>& train_fields() {
  static const std::map<std::string, Field> f = {
      {"max_lr", plain<double>(T(max_lr))},
      {"epochs", plain<std::size_t>(T(epochs))},
      {"batch_size", plain<std::size_t>(T(batch_size))},
      {"betas",
       {[](RunConfig& c, const json& v, const std::string& k) {
          if (!v.is_array() || v.size() != 2) throw ConfigError("config key '" + k + "' must be [beta1, beta2]");
          c.train.beta1 = get_as<double>(v[0], k);
          c.train.beta2 = get_as<double>(v[1], k);
        },
        [](const RunConfig& c) { return json::array({c.train.beta1, c.train.beta2}); }}},
      {"eps", plain<double>(T(eps))},
      {"clip_norm", plain<double>(T(clip_norm))},
      {"clip_mode", enumerated<ClipMode>(T(clip_mode), parse_clip_mode, clip_name)},
      {"ema_start_fraction", plain<double>(T(ema_start_fraction))},
      {"ema_avg_coeff", plain<double>(T(ema_avg_coeff))},
      {"ema_cur_coeff", plain<double>(T(ema_cur_coeff))},
      {"eval_with_ema", plain<bool>(T(eval_with_ema))},
      {"wd_lr_multiplier", plain<double>(T(wd_lr_multiplier))},
      {"seed", plain<std::uint64_t>(T(seed))},
      {"onecycle",
       {[](RunConfig& c, const json& v, const std::string& k) {
          if (!v.is_object()) throw ConfigError("config key '" + k + "' must be an object");
          for (const auto& item : v.items()) {
            const std::string& key = item.key();
            const json& val = item.value();
            if (key == "pct_start") c.train.onecycle.pct_start = get_as<double>(val, k + "." + key);
            else if (key == "div_factor") c.train.onecycle.div_factor = get_as<double>(val, k + "." + key);
            else if (key == "final_div_factor") c.train.onecycle.final_div_factor = get_as<double>(val, k + "." + key);
            else throw ConfigError("unknown config key '" + k + "." + key + "'");
          }
        },
        [](const RunConfig& c) {
          return json{{"pct_start", c.train.onecycle.pct_start},
                      {"div_factor", c.train.onecycle.div_factor},
                      {"final_div_factor", c.train.onecycle.final_div_factor}};
        }}},
      {"augment", plain<bool>(T(augment))},
      {"prefetch_depth", plain<std::size_t>(T(prefetch_depth))},
      {"train_limit", plain<std::size_t>(T(train_limit))},
      {"test_limit", plain<std::size_t>(T(test_limit))},
      {"eval_batch_size", plain<std::size_t>(T(eval_batch_size))},
  };
  return f;
}

#undef M
#undef I
#undef T

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
}

RunConfig apply_document(const json& doc, bool allow_train) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  if (doc.contains("preset")) cfg.model = preset(get_as<std::string>(doc.at("preset"), "preset"));
  for (const auto& item : doc.items()) {
    const std::string& key = item.key();
    const json& val = item.value();
    if (key == "preset") continue;
    if (auto it = model_fields().find(key); it != model_fields().end()) {
      it->second.set(cfg, val, key);
    } else if (auto jt = train_fields().find(key); allow_train && jt != train_fields().end()) {
      jt->second.set(cfg, val, key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.model.validate();
  if (allow_train) cfg.train.validate();
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) { return apply_document(parse_json(text), true); }

ModelConfig parse_model_config(const std::string& text) { return apply_document(parse_json(text), false).model; }

RunConfig load_run_config(const std::string& path_or_preset) {
  const std::string prefix = "preset:";
  if (path_or_preset.rfind(prefix, 0) == 0) {
    RunConfig cfg;
    cfg.model = preset(path_or_preset.substr(prefix.size()));
    return cfg;
  }
  std::ifstream in(path_or_preset);
  if (!in) throw IoError("cannot open config " + path_or_preset);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const ModelConfig& cfg) {
  RunConfig r;
  r.model = cfg;
  json doc = json::object();
  for (const auto& [key, field] : model_fields()) doc[key] = field.get(r);
  return doc.dump();
}

std::string to_json(const RunConfig& cfg) {
  json doc = json::object();
  for (const auto& [key, field] : model_fields()) doc[key] = field.get(cfg);
  for (const auto& [key, field] : train_fields()) doc[key] = field.get(cfg);
  return doc.dump();
}

}  // namespace yynet
