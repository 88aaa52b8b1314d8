// Command-line front end: dataset synthesis, self-supervised pretraining,
// supervised fine-tuning, cross-validated evaluation, gradient verification,
// and embedding export. Single-threaded runs are byte-reproducible.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "wap/evaluate.hpp"
#include "wap/gradcheck_suite.hpp"
#include "wap/synthetic.hpp"

namespace fs = std::filesystem;
using namespace wap;

namespace {

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct Echo {
  std::vector<std::pair<std::string, std::string>> rows;

  void add(const std::string& key, const std::string& v) { rows.emplace_back(key, v); }
  void add(const std::string& key, const char* v) { rows.emplace_back(key, std::string(v)); }
  void add(const std::string& key, int v) { rows.emplace_back(key, std::to_string(v)); }
  void add(const std::string& key, std::uint64_t v) { rows.emplace_back(key, std::to_string(v)); }
  void add(const std::string& key, double v) { rows.emplace_back(key, fmt_num(v)); }
  void add(const std::string& key, bool v) { rows.emplace_back(key, v ? "true" : "false"); }

  void print(const std::string& command) const {
    std::cout << "# " << command << " configuration\n";
    for (const auto& [k, v] : rows) std::cout << k << " = " << v << "\n";
    std::cout << std::flush;
  }
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Line-based `key = value` config. Keys are the long flag names without the
// leading dashes; # starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw InvalidArgument(path + ":" + std::to_string(line_no) + ": expected key = value");
    entries.emplace_back(key, value);
  }
  return entries;
}

void attach_config(CLI::App* cmd, std::string& path_slot) {
  cmd->add_option("--config", path_slot, "key = value file; command-line flags win");
}

// Shared knobs for the two training commands.
struct TrainFlags {
  int batch = 96;
  int epochs = 100;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  int threads = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--batch", batch, "Batch size")->capture_default_str();
    cmd->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lr", lr, "Peak learning rate (cosine decay)")->capture_default_str();
    cmd->add_option("--seed", seed, "RNG seed")->capture_default_str();
    cmd->add_option("--threads", threads, "Worker threads; 1 = bit-reproducible")
        ->capture_default_str();
  }
};

struct ModelFlags {
  int d_model = 384;
  int layers = 3;
  int heads = 6;
  int ffn = 1536;
  int t_max = 1024;

  void attach(CLI::App* cmd) {
    cmd->add_option("--d-model", d_model, "Adapter width")->capture_default_str();
    cmd->add_option("--layers", layers, "Transformer blocks")->capture_default_str();
    cmd->add_option("--model-heads", heads, "Attention heads")->capture_default_str();
    cmd->add_option("--ffn", ffn, "Feed-forward width")->capture_default_str();
    cmd->add_option("--t-max", t_max, "Positional table size")->capture_default_str();
  }
  WapConfig to_config(int d_in) const {
    WapConfig mc;
    mc.d_in = d_in;
    mc.d_model = d_model;
    mc.layers = layers;
    mc.heads = heads;
    mc.ffn_dim = ffn;
    mc.t_max = t_max;
    return mc;
  }
  void echo(Echo& e) const {
    e.add("d-model", d_model);
    e.add("layers", layers);
    e.add("model-heads", heads);
    e.add("ffn", ffn);
    e.add("t-max", t_max);
  }
};

WapModel model_from_checkpoint(const std::string& path, const std::string& prefix) {
  Checkpoint ckpt = read_checkpoint(path);
  Rng rng(1);
  WapModel model(WapModel::config_from(ckpt, prefix), rng);
  model.load_from(ckpt, prefix);
  return model;
}

int cmd_gen_synth(const SynthSpec& spec, const std::string& out, bool dry_run) {
  Echo e;
  e.add("out", out);
  e.add("classes", spec.num_classes);
  e.add("per-class", spec.utterances_per_class.front());
  e.add("dim", spec.dim);
  e.add("t-min", spec.t_min);
  e.add("t-max", spec.t_max);
  e.add("separation", spec.separation);
  e.add("noise", spec.noise);
  e.add("sessions", spec.num_sessions);
  e.add("seed", spec.seed);
  e.print("gen-synth");
  if (dry_run) return 0;

  Manifest m = generate_synthetic(spec, out);
  std::cout << "wrote " << m.records.size() << " feature files + manifest.tsv to " << out << "\n";
  return 0;
}

struct PretrainFlags {
  std::string data, out;
  ModelFlags model;
  TrainFlags train;
  double mask_ratio = 0.4;
  double alpha = 0.999;
  double lambda_start = 1.0, lambda_end = 0.5;
  int codebook_size = 1024;
  int warmup_batches = 2;
  double tau = 0.1;
  bool dry_run = false;
};

int cmd_pretrain(const PretrainFlags& f) {
  Echo e;
  e.add("data", f.data);
  e.add("out", f.out);
  f.model.echo(e);
  e.add("batch", f.train.batch);
  e.add("epochs", f.train.epochs);
  e.add("lr", f.train.lr);
  e.add("mask-ratio", f.mask_ratio);
  e.add("alpha", f.alpha);
  e.add("lambda-start", f.lambda_start);
  e.add("lambda-end", f.lambda_end);
  e.add("codebook-size", f.codebook_size);
  e.add("warmup-batches", f.warmup_batches);
  e.add("tau", f.tau);
  e.add("seed", f.train.seed);
  e.add("threads", f.train.threads);
  e.print("pretrain");
  if (f.dry_run) return 0;

  Dataset data = load_dataset(f.data);
  WapConfig mc = f.model.to_config(data.dim());
  SslConfig sc;
  sc.mask_ratio = f.mask_ratio;
  sc.alpha = f.alpha;
  sc.lambda_start = f.lambda_start;
  sc.lambda_end = f.lambda_end;
  sc.batch_size = f.train.batch;
  sc.epochs = f.train.epochs;
  sc.lr = f.train.lr;
  sc.codebook_k = f.codebook_size;
  sc.warmup_batches = f.warmup_batches;
  sc.distill.temperature = f.tau;
  sc.seed = f.train.seed;
  sc.threads = f.train.threads;

  PretrainResult res = pretrain(data, mc, sc, f.out, &std::cout);
  std::cout << "checkpoint: " << res.checkpoint_path.string() << "\n"
            << "log: " << res.log_path.string() << "\n";
  return 0;
}

struct FinetuneFlags {
  std::string data, checkpoint, out;
  std::string freeze = "none";
  TrainFlags train;
  int fold = 0;
  int classes = 4;
  int sap_heads = 4;
  bool literal_pool = false;
  bool no_augment = false;
  double augment_mask_ratio = 0.15;
  bool random_init = false;
  ModelFlags model;  // only used with --random-init
  bool dry_run = false;

  FinetuneConfig to_config() const {
    FinetuneConfig fc;
    fc.num_classes = classes;
    fc.batch_size = train.batch;
    fc.epochs = train.epochs;
    fc.lr = train.lr;
    fc.sap_heads = sap_heads;
    fc.literal_second_moment = literal_pool;
    fc.augment = !no_augment;
    fc.augment_mask_ratio = augment_mask_ratio;
    fc.freeze_adapter = freeze == "head";
    fc.seed = train.seed;
    fc.threads = train.threads;
    return fc;
  }
  void echo(Echo& e, bool with_fold) const {
    e.add("data", data);
    e.add("checkpoint", checkpoint.empty() ? "(random-init)" : checkpoint);
    e.add("out", out);
    if (with_fold) e.add("fold", fold);
    e.add("classes", classes);
    e.add("batch", train.batch);
    e.add("epochs", train.epochs);
    e.add("lr", train.lr);
    e.add("sap-heads", sap_heads);
    e.add("literal-pool", literal_pool);
    e.add("augment", !no_augment);
    e.add("augment-mask-ratio", augment_mask_ratio);
    e.add("freeze", freeze);
    e.add("seed", train.seed);
    e.add("threads", train.threads);
  }

  WapModel load_model(int d_in) const {
    if (random_init) {
      Rng rng(train.seed);
      return WapModel(model.to_config(d_in), rng);
    }
    return model_from_checkpoint(checkpoint, "student/wap/");
  }
};

int cmd_finetune(const FinetuneFlags& f) {
  Echo e;
  f.echo(e, true);
  e.print("finetune");
  if (f.dry_run) return 0;

  Dataset data = load_dataset(f.data);
  WapModel pretrained = f.load_model(data.dim());
  FoldPlan plan = make_folds(data.manifest);
  if (f.fold < 0 || f.fold >= static_cast<int>(plan.folds.size()))
    throw InvalidArgument("fold " + std::to_string(f.fold) + " outside plan with " +
                          std::to_string(plan.folds.size()) + " folds");

  fs::create_directories(f.out);
  const fs::path log_path = fs::path(f.out) / "finetune_log.tsv";
  FinetuneResult res =
      finetune(pretrained, data, plan.folds[static_cast<std::size_t>(f.fold)], f.to_config(),
               &std::cout, &log_path);

  Checkpoint ckpt;
  res.adapter.save_to(ckpt, "adapter/wap/");
  res.head.save_to(ckpt, "");
  const fs::path ckpt_path = fs::path(f.out) / "finetune.wapc";
  write_checkpoint(ckpt_path.string(), ckpt);

  const auto& best = res.epochs[static_cast<std::size_t>(res.best_epoch)];
  std::cout << "best epoch " << res.best_epoch << ": UA " << fmt_num(best.val_ua) << " WA "
            << fmt_num(best.val_wa) << " F1 " << fmt_num(best.val_f1) << "\n"
            << "checkpoint: " << ckpt_path.string() << "\n"
            << "log: " << log_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const FinetuneFlags& f) {
  Echo e;
  f.echo(e, false);
  e.print("evaluate");
  if (f.dry_run) return 0;

  Dataset data = load_dataset(f.data);
  WapModel pretrained = f.load_model(data.dim());
  FoldPlan plan = make_folds(data.manifest);

  fs::create_directories(f.out);
  const fs::path out_dir(f.out);
  CvReport rep = run_cv(data, pretrained, plan, f.to_config(), &std::cout, &out_dir);
  write_report(rep, out_dir / "report.tsv");
  std::cout << format_report(rep) << "report: " << (out_dir / "report.tsv").string() << "\n";
  return 0;
}

int cmd_gradcheck(bool sabotage) {
  Echo e;
  e.add("sabotage", sabotage);
  e.print("gradcheck");

  auto cases = run_gradcheck_suite(sabotage);
  bool all_pass = true;
  for (const auto& c : cases) {
    all_pass = all_pass && c.passed;
    char buf[160];
    if (c.expect_large)
      std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e (broken gradient must exceed 0.5) %s",
                    c.name.c_str(), c.max_rel_error, c.passed ? "PASS" : "FAIL");
    else
      std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e tolerance %.0e %s", c.name.c_str(),
                    c.max_rel_error, c.tolerance, c.passed ? "PASS" : "FAIL");
    std::cout << buf << "\n";
  }
  std::cout << (all_pass ? "gradcheck: all cases passed" : "gradcheck: FAILURES present") << "\n";
  return all_pass ? 0 : 1;
}

struct ExportFlags {
  std::string data, checkpoint, out;
  bool dry_run = false;
};

int cmd_export(const ExportFlags& f) {
  Echo e;
  e.add("data", f.data);
  e.add("checkpoint", f.checkpoint);
  e.add("out", f.out);
  e.print("export-embeddings");
  if (f.dry_run) return 0;

  Dataset data = load_dataset(f.data);
  Checkpoint ckpt = read_checkpoint(f.checkpoint);
  Rng rng(1);
  WapModel adapter(WapModel::config_from(ckpt, "adapter/wap/"), rng);
  adapter.load_from(ckpt, "adapter/wap/");
  int d_model = 0;
  SapConfig sap_cfg = SapModel::config_from(ckpt, "", &d_model);
  SapModel head(d_model, sap_cfg, rng);
  head.load_from(ckpt, "");

  export_embeddings(adapter, head, data, f.out);
  std::cout << "wrote embeddings.wapf + embeddings_labels.tsv to " << f.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frame-embedding adapter: pretraining, fine-tuning, and evaluation"};
  app.require_subcommand(1);
  std::string config_file;

  // gen-synth
  SynthSpec spec;
  std::string gen_out;
  bool gen_dry = false;
  int per_class = spec.utterances_per_class.front();
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic labeled dataset");
  attach_config(gen, config_file);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", spec.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", per_class, "Utterances per class")->capture_default_str();
  gen->add_option("--dim", spec.dim, "Frame width")->capture_default_str();
  gen->add_option("--t-min", spec.t_min, "Shortest utterance")->capture_default_str();
  gen->add_option("--t-max", spec.t_max, "Longest utterance")->capture_default_str();
  gen->add_option("--separation", spec.separation, "Minimum centroid distance")
      ->capture_default_str();
  gen->add_option("--noise", spec.noise, "Frame noise scale")->capture_default_str();
  gen->add_option("--sessions", spec.num_sessions, "Recording sessions")->capture_default_str();
  gen->add_option("--seed", spec.seed, "RNG seed")->capture_default_str();
  gen->add_flag("--dry-run", gen_dry, "Print the resolved configuration and exit");

  // pretrain
  PretrainFlags pf;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised adapter pretraining");
  attach_config(pre, config_file);
  pre->add_option("--data", pf.data, "manifest.tsv of the feature dataset")->required();
  pre->add_option("--out", pf.out, "Output directory")->required();
  pf.model.attach(pre);
  pf.train.attach(pre);
  pre->add_option("--mask-ratio", pf.mask_ratio, "Fraction of frames masked")
      ->capture_default_str();
  pre->add_option("--alpha", pf.alpha, "Teacher EMA smoothing")->capture_default_str();
  pre->add_option("--lambda-start", pf.lambda_start, "Loss mix at epoch 0")->capture_default_str();
  pre->add_option("--lambda-end", pf.lambda_end, "Loss mix at the final epoch")
      ->capture_default_str();
  pre->add_option("--codebook-size", pf.codebook_size, "Prototype count K")->capture_default_str();
  pre->add_option("--warmup-batches", pf.warmup_batches, "Teacher batches pooled before init")
      ->capture_default_str();
  pre->add_option("--tau", pf.tau, "Cosine-logit temperature")->capture_default_str();
  pre->add_flag("--dry-run", pf.dry_run, "Print the resolved configuration and exit");

  // finetune / evaluate share their flag block
  FinetuneFlags ff, ef;
  auto add_ft_flags = [&](CLI::App* cmd, FinetuneFlags& f, bool with_fold) {
    attach_config(cmd, config_file);
    cmd->add_option("--data", f.data, "manifest.tsv of the feature dataset")->required();
    auto* ckpt_opt = cmd->add_option("--checkpoint", f.checkpoint, "Pretraining checkpoint");
    auto* rand_opt = cmd->add_flag("--random-init", f.random_init,
                                   "Skip the checkpoint; random adapter (ablation)");
    ckpt_opt->excludes(rand_opt);
    cmd->add_option("--out", f.out, "Output directory")->required();
    if (with_fold)
      cmd->add_option("--fold", f.fold, "Cross-validation fold index")->capture_default_str();
    cmd->add_option("--classes", f.classes, "Emotion classes")->capture_default_str();
    f.train.attach(cmd);
    cmd->add_option("--sap-heads", f.sap_heads, "Pooling attention heads")->capture_default_str();
    cmd->add_flag("--literal-pool", f.literal_pool,
                  "Squared-attention second moment (compatibility)");
    cmd->add_flag("--no-augment", f.no_augment, "Disable minority oversampling");
    cmd->add_option("--augment-mask-ratio", f.augment_mask_ratio, "Mask ratio for copies")
        ->capture_default_str();
    cmd->add_option("--freeze", f.freeze, "none | head (head = adapter frozen)")
        ->check(CLI::IsMember({"none", "head"}))
        ->capture_default_str();
    f.model.attach(cmd);  // used with --random-init
    cmd->add_flag("--dry-run", f.dry_run, "Print the resolved configuration and exit");
  };
  auto* fin = app.add_subcommand("finetune", "Supervised fine-tuning on one fold");
  add_ft_flags(fin, ff, true);
  auto* eva = app.add_subcommand("evaluate", "Cross-session cross-validation");
  add_ft_flags(eva, ef, false);

  // gradcheck
  bool sabotage = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  attach_config(gc, config_file);
  gc->add_flag("--sabotage", sabotage, "Break one gradient on purpose; must fail");

  // export-embeddings
  ExportFlags xf;
  auto* exp = app.add_subcommand("export-embeddings", "Utterance embeddings for projection");
  attach_config(exp, config_file);
  exp->add_option("--data", xf.data, "manifest.tsv of the feature dataset")->required();
  exp->add_option("--checkpoint", xf.checkpoint, "Fine-tuned checkpoint")->required();
  exp->add_option("--out", xf.out, "Output directory")->required();
  exp->add_flag("--dry-run", xf.dry_run, "Print the resolved configuration and exit");

  const std::vector<CLI::App*> commands = {gen, pre, fin, eva, gc, exp};
  // Config-file entries and command-line flags may both set an option; the
  // later (command-line) occurrence wins.
  for (CLI::App* cmd : commands)
    for (CLI::Option* o : cmd->get_options())
      o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // Resolve --config before the real parse: file entries become ordinary
  // tokens placed ahead of the user's flags.
  std::vector<std::string> merged;
  merged.emplace_back(argv[0]);
  try {
    std::vector<std::string> raw(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == "--config" && i + 1 < raw.size())
        config_path = raw[i + 1];
      else if (raw[i].rfind("--config=", 0) == 0)
        config_path = raw[i].substr(9);
    }
    CLI::App* active = nullptr;
    std::size_t sub_at = raw.size();
    for (std::size_t i = 0; i < raw.size() && !active; ++i)
      for (CLI::App* cmd : commands)
        if (raw[i] == cmd->get_name()) {
          active = cmd;
          sub_at = i;
          break;
        }
    if (active && !config_path.empty()) {
      merged.insert(merged.end(), raw.begin(), raw.begin() + static_cast<long>(sub_at) + 1);
      for (const auto& [key, value] : read_config_file(config_path)) {
        if (key == "config") throw InvalidArgument("config files cannot nest via 'config ='");
        if (!active->get_option_no_throw("--" + key))
          throw InvalidArgument("unknown config key '" + key + "' in " + config_path);
        merged.push_back("--" + key + "=" + value);
      }
      merged.insert(merged.end(), raw.begin() + static_cast<long>(sub_at) + 1, raw.end());
    } else {
      merged.insert(merged.end(), raw.begin(), raw.end());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<char*> cargv;
    cargv.reserve(merged.size());
    for (auto& s : merged) cargv.push_back(s.data());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  }

  try {
    if (gen->parsed()) {
      spec.utterances_per_class = {per_class};
      return cmd_gen_synth(spec, gen_out, gen_dry);
    }
    if (pre->parsed()) return cmd_pretrain(pf);
    if (fin->parsed() || eva->parsed()) {
      FinetuneFlags& f = fin->parsed() ? ff : ef;
      if (!f.random_init && f.checkpoint.empty()) {
        std::cerr << "error: either --checkpoint or --random-init is required\n";
        return 2;
      }
      return fin->parsed() ? cmd_finetune(ff) : cmd_evaluate(ef);
    }
    if (gc->parsed()) return cmd_gradcheck(sabotage);
    if (exp->parsed()) return cmd_export(xf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
