#include "tt/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "tt/analysis.hpp"
#include "tt/checkpoint.hpp"
#include "tt/config.hpp"
#include "tt/dataset.hpp"
#include "tt/errors.hpp"
#include "tt/gradcheck.hpp"
#include "tt/image_io.hpp"
#include "tt/model.hpp"
#include "tt/optimizer.hpp"
#include "tt/train.hpp"

namespace tt {
namespace {

// A bare word is looked up as a preset (and failure lists the valid names);
// anything path-like is read as a config file.
ModelConfig resolve_config(const std::string& arg) {
  for (const auto& n : preset_names())
    if (n == arg) return preset(arg);
  const bool pathlike =
      arg.find('/') != std::string::npos || arg.find('.') != std::string::npos;
  if (!pathlike) return preset(arg);  // throws, naming the valid presets
  std::ifstream in(arg);
  if (!in) throw IoError("cannot open config file '" + arg + "'");
  std::ostringstream text;
  text << in.rdbuf();
  ModelConfig cfg = parse_config(text.str());
  validate(cfg);
  return cfg;
}

void print_params(const CostReport& rep, const std::string& fmt,
                  std::ostream& out) {
  if (fmt == "csv") {
    out << "layer,params\n";
    for (const auto& r : rep.rows) out << r.layer << ',' << r.params << '\n';
    out << "total," << rep.total_params << '\n';
    return;
  }
  size_t width = 5;
  for (const auto& r : rep.rows) width = std::max(width, r.layer.size());
  for (const auto& r : rep.rows)
    out << std::left << std::setw(static_cast<int>(width)) << r.layer << ' '
        << std::right << std::setw(14) << r.params << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "total" << ' '
      << std::right << std::setw(14) << rep.total_params << '\n';
}

void print_metrics(const std::vector<MetricsRow>& rows, const std::string& fmt,
                   std::ostream& out) {
  if (fmt == "csv") {
    out << format_metrics_csv(rows);
    return;
  }
  const size_t stride = std::max<size_t>(1, rows.size() / 10);
  out << std::setprecision(6);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (i % stride != 0 && i + 1 != rows.size()) continue;
    const auto& r = rows[i];
    out << "step " << std::setw(5) << r.step << "  loss " << std::setw(9)
        << r.loss << "  acc " << std::setw(6) << r.acc << "  lr " << r.lr
        << '\n';
  }
  if (!rows.empty())
    out << "final: loss " << rows.back().loss << "  acc " << rows.back().acc
        << '\n';
}

struct TrainFlags {
  std::string data = "synth";
  long long steps = 200;
  int batch = 16;
  double lr = 1e-4;
  double wd = 0.05;
  double warmup = 0.05;
  std::uint64_t seed = 0;
  int classes = 0;   // override the config's class count (0 = keep)
  int synth_n = 512;
  std::string out_ckpt;
  std::string log_path;
};

void add_format(CLI::App* cmd, std::string& fmt) {
  cmd->add_option("--format", fmt, "output format: text or csv")
      ->check(CLI::IsMember({"text", "csv"}));
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "'synth' or an image-folder root");
  cmd->add_option("--steps", f.steps, "optimizer steps")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", f.batch, "batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "peak learning rate");
  cmd->add_option("--wd", f.wd, "weight decay");
  cmd->add_option("--warmup", f.warmup, "warmup fraction of the run");
  cmd->add_option("--seed", f.seed, "seed for init, sampling, and synth data");
  cmd->add_option("--classes", f.classes, "override the config's class count");
  cmd->add_option("--synth-n", f.synth_n, "synthetic dataset size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out_ckpt, "write final checkpoint here");
  cmd->add_option("--log", f.log_path, "write per-step metrics CSV here");
}

int run_training(ModelConfig cfg, const TrainFlags& f, const std::string& fmt,
                 std::ostream& out) {
  if (f.classes > 0) cfg.num_classes = f.classes;
  validate(cfg);
  TtModel<double> m = build<double>(cfg, f.seed);
  Dataset<double> ds =
      f.data == "synth"
          ? synth_dataset(f.synth_n, cfg.num_classes, cfg.input_size, f.seed)
          : load_folder_dataset(f.data);
  TrainConfig tc;
  tc.steps = f.steps;
  tc.batch = f.batch;
  tc.lr = f.lr;
  tc.weight_decay = f.wd;
  tc.warmup_frac = f.warmup;
  tc.seed = f.seed;
  tc.metrics_path = f.log_path;
  if (!f.out_ckpt.empty()) tc.rescue_ckpt_path = f.out_ckpt + ".rescue";
  AdamW<double> opt(m.named, AdamwConfig{f.lr, 0.9, 0.999, 1e-8, f.wd});
  const auto rows = train(m, ds, tc, opt);
  if (!f.out_ckpt.empty()) save_checkpoint(m, f.out_ckpt, &opt);
  print_metrics(rows, fmt, out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"hierarchical windowed-attention backbone tools"};
  app.require_subcommand(1);
  int result = 0;

  std::string fmt = "text";

  // params <preset|config>
  auto* cmd_params = app.add_subcommand("params", "per-layer parameter counts");
  std::string params_target;
  cmd_params->add_option("target", params_target, "preset name or config file")
      ->required();
  add_format(cmd_params, fmt);
  cmd_params->callback([&] {
    const ModelConfig cfg = resolve_config(params_target);
    print_params(cost_report(cfg, cfg.input_size, 1), fmt, out);
  });

  // flops <preset|config> --input N
  auto* cmd_flops =
      app.add_subcommand("flops", "per-layer forward-pass FLOP counts");
  std::string flops_target;
  int flops_input = 0, flops_batch = 1;
  cmd_flops->add_option("target", flops_target, "preset name or config file")
      ->required();
  cmd_flops->add_option("--input", flops_input,
                        "input resolution (default: the config's)");
  cmd_flops->add_option("--batch", flops_batch, "batch size")
      ->check(CLI::PositiveNumber);
  add_format(cmd_flops, fmt);
  cmd_flops->callback([&] {
    const ModelConfig cfg = resolve_config(flops_target);
    const CostReport rep = cost_report(
        cfg, flops_input > 0 ? flops_input : cfg.input_size, flops_batch);
    out << (fmt == "csv" ? format_report_csv(rep) : format_report(rep));
  });

  // forward <ckpt> <image>
  auto* cmd_fwd = app.add_subcommand("forward", "classify one image");
  std::string fwd_ckpt, fwd_image;
  cmd_fwd->add_option("ckpt", fwd_ckpt, "checkpoint file")->required();
  cmd_fwd->add_option("image", fwd_image, "PPM/PGM image")->required();
  add_format(cmd_fwd, fmt);
  cmd_fwd->callback([&] {
    auto lc = load_checkpoint<double>(fwd_ckpt);
    Tensor<double> img = read_image(fwd_image);
    const Tensor<double> batch =
        reshape(img, {1, 3, img.dim(1), img.dim(2)});
    const Tensor<double> logits = forward(lc.model, batch);
    const Tensor<double> probs = softmax(logits, 1);
    const int k = logits.dim(1);
    if (fmt == "csv") {
      out << "class,logit,prob\n" << std::setprecision(17);
      for (int j = 0; j < k; ++j)
        out << j << ',' << logits.at({0, j}) << ',' << probs.at({0, j}) << '\n';
    } else {
      out << std::setprecision(6);
      for (int j = 0; j < k; ++j)
        out << "class " << std::setw(3) << j << "  logit " << std::setw(10)
            << logits.at({0, j}) << "  prob " << probs.at({0, j}) << '\n';
      out << "prediction: " << argmax_last(logits)[0] << '\n';
    }
  });

  // train <preset|config>
  auto* cmd_train = app.add_subcommand("train", "toy training run");
  std::string train_target;
  TrainFlags train_flags;
  cmd_train->add_option("target", train_target, "preset name or config file")
      ->required();
  add_train_flags(cmd_train, train_flags);
  add_format(cmd_train, fmt);
  cmd_train->callback([&] {
    result = run_training(resolve_config(train_target), train_flags, fmt, out);
  });

  // gradcheck [--module M]
  auto* cmd_grad =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  std::string grad_module;
  cmd_grad->add_option("--module", grad_module,
                       "restrict to one probe family");
  add_format(cmd_grad, fmt);
  cmd_grad->callback([&] {
    const GradReport rep = run_gradcheck(grad_module);
    if (fmt == "csv") {
      out << "probe,max_rel_err\n" << std::setprecision(17);
      for (const auto& p : rep.probes)
        out << p.name << ',' << p.max_rel_err << '\n';
      out << "max," << rep.worst << '\n';
    } else {
      out << std::setprecision(3) << std::scientific;
      for (const auto& p : rep.probes)
        out << std::left << std::setw(36) << p.name << ' ' << p.max_rel_err
            << '\n';
      out << std::left << std::setw(36) << "max rel. error" << ' ' << rep.worst
          << '\n'
          << std::defaultfloat;
    }
    result = rep.worst < 1e-4 ? 0 : 1;
    if (result != 0) err << "gradient check failed: max rel. error "
                         << rep.worst << " >= 1e-4\n";
  });

  // ablate <variant>
  auto* cmd_ablate = app.add_subcommand(
      "ablate", "train the nano preset with one component swapped out");
  std::string ablate_variant;
  TrainFlags ablate_flags;
  cmd_ablate->add_option("variant", ablate_variant, "ablation name")
      ->required();
  add_train_flags(cmd_ablate, ablate_flags);
  add_format(cmd_ablate, fmt);
  cmd_ablate->callback([&] {
    const ModelConfig cfg =
        ablation_variant(preset("tt-nano"), ablate_variant);
    result = run_training(cfg, ablate_flags, fmt, out);
  });

  // dump-attn <ckpt> <image> --out dir
  auto* cmd_dump = app.add_subcommand(
      "dump-attn", "export the last block's summary-attention maps");
  std::string dump_ckpt, dump_image, dump_dir;
  cmd_dump->add_option("ckpt", dump_ckpt, "checkpoint file")->required();
  cmd_dump->add_option("image", dump_image, "PPM/PGM image")->required();
  cmd_dump->add_option("--out", dump_dir, "output directory")->required();
  add_format(cmd_dump, fmt);
  cmd_dump->callback([&] {
    auto lc = load_checkpoint<double>(dump_ckpt);
    Tensor<double> img = read_image(dump_image);
    AttnMaps<double> maps;
    forward(lc.model, reshape(img, {1, 3, img.dim(1), img.dim(2)}), &maps);
    std::error_code ec;
    std::filesystem::create_directories(dump_dir, ec);
    if (ec)
      throw IoError("cannot create output directory '" + dump_dir +
                    "': " + ec.message());
    export_attention(maps, dump_dir);
    const int heads = maps.cls_attn.dim(1);
    if (fmt == "csv") {
      out << "file\n" << dump_dir << "/cls_attention.csv\n";
      for (int h = 0; h < heads; ++h)
        out << dump_dir << "/cls_attention_head" << h << ".pgm\n";
    } else {
      out << "wrote " << dump_dir << "/cls_attention.csv and " << heads
          << " per-head PGM maps\n";
    }
  });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    return result;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const IoError& e) {  // includes checkpoint errors
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tt
