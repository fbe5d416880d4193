// Model configuration: the per-stage geometry/width schedule, feedforward
// and attention-path choices, and the named presets.  A config can be
// serialized to a line-oriented key/value text file and parsed back; stages
// appear as repeated `stage` lines holding
//   stage <grid_side> <window_side> <dim> <depth> <heads>
// in order.
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "tt/attention.hpp"
#include "tt/errors.hpp"
#include "tt/scffn.hpp"

namespace tt {

struct StageConfig {
  int grid_side = 0;
  int window_side = 0;
  int dim = 0;
  int depth = 0;
  int heads = 0;
  int num_windows() const {
    const int n = grid_side / window_side;
    return n * n;
  }
  int tokens_per_window() const { return window_side * window_side; }
};

struct ModelConfig {
  int input_size = 224;
  int patch = 4;
  int num_classes = 1000;
  std::vector<StageConfig> stages;
  FfnKind ffn_cls = FfnKind::scffn_fused;
  FfnKind ffn_embed = FfnKind::scffn_fused;
  int ffn_ratio = 4;
  ClsAttnMode cls_mode = ClsAttnMode::global_softmax;
  bool use_cls_attention = true;  // false: shifted-window ablation path
  bool use_fim = true;
  bool head_cls_mean = false;  // classifier pools CLS tokens instead of embeds
  double drop_attn = 0.0;
  double drop_proj = 0.0;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"tt-t", "tt-s", "tt-b",
                                                 "tt-nano"};
  return names;
}

inline ModelConfig preset(const std::string& name) {
  ModelConfig cfg;
  if (name == "tt-t") {
    cfg.stages = {{49, 7, 64, 3, 2},
                  {25, 5, 128, 4, 4},
                  {16, 4, 256, 19, 8},
                  {9, 3, 512, 5, 16}};
  } else if (name == "tt-s") {
    cfg.stages = {{49, 7, 96, 4, 3},
                  {25, 5, 192, 5, 6},
                  {16, 4, 384, 21, 12},
                  {9, 3, 768, 5, 24}};
  } else if (name == "tt-b") {
    cfg.stages = {{49, 7, 128, 5, 4},
                  {25, 5, 256, 6, 8},
                  {16, 4, 512, 22, 16},
                  {9, 3, 1024, 5, 32}};
  } else if (name == "tt-nano") {
    cfg.input_size = 32;
    cfg.num_classes = 10;
    cfg.stages = {{8, 4, 16, 2, 2}, {4, 2, 32, 2, 4}};
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "'; valid presets: " + valid);
  }
  return cfg;
}

// Checks every config invariant and reports all violations at once.
inline void validate(const ModelConfig& cfg) {
  std::vector<std::string> bad;
  auto complain = [&](const std::string& msg) { bad.push_back(msg); };
  if (cfg.stages.empty()) complain("no stages configured");
  if (cfg.patch <= 0) complain("patch size must be positive");
  if (cfg.num_classes < 2) complain("need at least 2 classes");
  if (cfg.ffn_ratio < 1) complain("ffn expansion ratio must be >= 1");
  if (cfg.drop_attn < 0 || cfg.drop_attn >= 1)
    complain("drop_attn outside [0, 1)");
  if (cfg.drop_proj < 0 || cfg.drop_proj >= 1)
    complain("drop_proj outside [0, 1)");
  if (!cfg.stages.empty() && cfg.patch > 0 &&
      cfg.input_size / cfg.patch < cfg.stages[0].grid_side)
    complain("input " + std::to_string(cfg.input_size) + " with patch " +
             std::to_string(cfg.patch) + " cannot reach the stage-1 grid " +
             std::to_string(cfg.stages[0].grid_side));
  const bool literal = cfg.ffn_cls == FfnKind::scffn_literal ||
                       cfg.ffn_embed == FfnKind::scffn_literal;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const std::string tag = "stage " + std::to_string(i) + ": ";
    if (s.grid_side <= 0 || s.window_side <= 0)
      complain(tag + "grid/window must be positive");
    else if (s.grid_side % s.window_side != 0)
      complain(tag + "grid " + std::to_string(s.grid_side) +
               " not divisible by window " + std::to_string(s.window_side));
    if (s.depth < 1) complain(tag + "depth must be >= 1");
    if (s.heads < 1 || s.dim < 1 || s.dim % s.heads != 0)
      complain(tag + "dim " + std::to_string(s.dim) +
               " not divisible by heads " + std::to_string(s.heads));
    if (literal && s.grid_side > 0 && s.window_side > 0 &&
        s.num_windows() != s.tokens_per_window())
      complain(tag + "literal scffn needs windows == tokens-per-window, got " +
               std::to_string(s.num_windows()) + " vs " +
               std::to_string(s.tokens_per_window()));
  }
  if (!bad.empty()) {
    std::string all;
    for (const auto& m : bad) all += (all.empty() ? "" : "; ") + m;
    throw ConfigError(all);
  }
}

namespace detail {

inline std::string ffn_kind_name(FfnKind k) {
  switch (k) {
    case FfnKind::ffn: return "ffn";
    case FfnKind::scffn_fused: return "scffn_fused";
    default: return "scffn_literal";
  }
}

inline FfnKind parse_ffn_kind(const std::string& s) {
  if (s == "ffn") return FfnKind::ffn;
  if (s == "scffn_fused") return FfnKind::scffn_fused;
  if (s == "scffn_literal") return FfnKind::scffn_literal;
  throw ConfigError("unknown ffn kind '" + s +
                    "' (expected ffn, scffn_fused, or scffn_literal)");
}

}  // namespace detail

inline std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "input_size " << cfg.input_size << '\n'
     << "patch " << cfg.patch << '\n'
     << "num_classes " << cfg.num_classes << '\n'
     << "ffn_cls " << detail::ffn_kind_name(cfg.ffn_cls) << '\n'
     << "ffn_embed " << detail::ffn_kind_name(cfg.ffn_embed) << '\n'
     << "ffn_ratio " << cfg.ffn_ratio << '\n'
     << "cls_mode "
     << (cfg.cls_mode == ClsAttnMode::global_softmax ? "global" : "per_window")
     << '\n'
     << "use_cls_attention " << (cfg.use_cls_attention ? 1 : 0) << '\n'
     << "use_fim " << (cfg.use_fim ? 1 : 0) << '\n'
     << "head_cls_mean " << (cfg.head_cls_mean ? 1 : 0) << '\n'
     << "drop_attn " << cfg.drop_attn << '\n'
     << "drop_proj " << cfg.drop_proj << '\n';
  for (const auto& s : cfg.stages)
    os << "stage " << s.grid_side << ' ' << s.window_side << ' ' << s.dim
       << ' ' << s.depth << ' ' << s.heads << '\n';
  return os.str();
}

inline ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  cfg.stages.clear();
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto want = [&](auto& field) {
      if (!(ls >> field))
        throw ConfigError("line " + std::to_string(lineno) +
                          ": malformed value for '" + key + "'");
    };
    if (key == "input_size") want(cfg.input_size);
    else if (key == "patch") want(cfg.patch);
    else if (key == "num_classes") want(cfg.num_classes);
    else if (key == "ffn_ratio") want(cfg.ffn_ratio);
    else if (key == "drop_attn") want(cfg.drop_attn);
    else if (key == "drop_proj") want(cfg.drop_proj);
    else if (key == "ffn_cls" || key == "ffn_embed") {
      std::string v;
      want(v);
      (key == "ffn_cls" ? cfg.ffn_cls : cfg.ffn_embed) =
          detail::parse_ffn_kind(v);
    } else if (key == "cls_mode") {
      std::string v;
      want(v);
      if (v == "global") cfg.cls_mode = ClsAttnMode::global_softmax;
      else if (v == "per_window") cfg.cls_mode = ClsAttnMode::per_window_softmax;
      else throw ConfigError("unknown cls_mode '" + v + "'");
    } else if (key == "use_cls_attention" || key == "use_fim" ||
               key == "head_cls_mean") {
      int v = 0;
      want(v);
      if (key == "use_cls_attention") cfg.use_cls_attention = v != 0;
      else if (key == "use_fim") cfg.use_fim = v != 0;
      else cfg.head_cls_mean = v != 0;
    } else if (key == "stage") {
      StageConfig s;
      if (!(ls >> s.grid_side >> s.window_side >> s.dim >> s.depth >> s.heads))
        throw ConfigError("line " + std::to_string(lineno) +
                          ": stage needs 5 integers "
                          "(grid window dim depth heads)");
      cfg.stages.push_back(s);
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" +
                        key + "'");
    }
  }
  return cfg;
}

}  // namespace tt
