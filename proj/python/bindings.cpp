// Python bindings for the main pipeline operations: feature I/O, synthetic
// data, pretraining, cross-validated evaluation, embedding export, metrics.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "wap/evaluate.hpp"
#include "wap/gradcheck_suite.hpp"
#include "wap/synthetic.hpp"

namespace py = pybind11;
using namespace wap;

namespace {

WapConfig model_config(int d_in, int d_model, int layers, int heads, int ffn, int t_max) {
  WapConfig mc;
  mc.d_in = d_in;
  mc.d_model = d_model;
  mc.layers = layers;
  mc.heads = heads;
  mc.ffn_dim = ffn;
  mc.t_max = t_max;
  mc.validate();
  return mc;
}

WapModel load_student(const Checkpoint& ckpt) {
  Rng rng(1);
  WapModel model(WapModel::config_from(ckpt, "student/wap/"), rng);
  model.load_from(ckpt, "student/wap/");
  return model;
}

py::dict report_dict(const CvReport& rep) {
  py::dict out;
  out["mean_ua"] = rep.mean_ua;
  out["mean_wa"] = rep.mean_wa;
  out["mean_f1"] = rep.mean_f1;
  out["pooled_ua"] = rep.pooled_ua;
  out["pooled_wa"] = rep.pooled_wa;
  out["pooled_f1"] = rep.pooled_f1;
  py::list folds;
  for (const auto& f : rep.folds) {
    py::dict fd;
    fd["ua"] = f.ua;
    fd["wa"] = f.wa;
    fd["f1"] = f.f1;
    fd["best_epoch"] = f.best_epoch;
    folds.append(fd);
  }
  out["folds"] = folds;
  out["report"] = format_report(rep);
  return out;
}

FinetuneConfig finetune_config(int classes, int batch, int epochs, double lr, int sap_heads,
                               bool literal_pool, bool augment, bool freeze_head_only,
                               std::uint64_t seed) {
  FinetuneConfig fc;
  fc.num_classes = classes;
  fc.batch_size = batch;
  fc.epochs = epochs;
  fc.lr = lr;
  fc.sap_heads = sap_heads;
  fc.literal_second_moment = literal_pool;
  fc.augment = augment;
  fc.freeze_adapter = freeze_head_only;
  fc.seed = seed;
  fc.validate();
  return fc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Frame-embedding adapter pipeline: pretraining, fine-tuning, evaluation";

  m.def(
      "read_features",
      [](const std::filesystem::path& path) { return read_feature_file(path).frames; },
      py::arg("path"), "Read one feature file as a (T, D) float32 array.");

  m.def(
      "write_features",
      [](const std::filesystem::path& path, const MatF& frames) {
        FrameSequence seq;
        seq.frames = frames;
        write_feature_file(seq, path);
      },
      py::arg("path"), py::arg("frames"), "Write a (T, D) float32 array as a feature file.");

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out_dir, int classes, int per_class, int dim, int t_min,
         int t_max, double separation, double noise, int sessions, std::uint64_t seed) {
        SynthSpec spec;
        spec.num_classes = classes;
        spec.utterances_per_class = {per_class};
        spec.dim = dim;
        spec.t_min = t_min;
        spec.t_max = t_max;
        spec.separation = separation;
        spec.noise = noise;
        spec.num_sessions = sessions;
        spec.seed = seed;
        generate_synthetic(spec, out_dir);
        return (out_dir / "manifest.tsv").string();
      },
      py::arg("out_dir"), py::arg("classes") = 4, py::arg("per_class") = 50, py::arg("dim") = 64,
      py::arg("t_min") = 16, py::arg("t_max") = 32, py::arg("separation") = 6.0,
      py::arg("noise") = 1.0, py::arg("sessions") = 5, py::arg("seed") = 1,
      "Write a labelled synthetic feature corpus; returns the manifest path.");

  m.def(
      "dataset_info",
      [](const std::filesystem::path& manifest) {
        Dataset data = load_dataset(manifest);
        py::dict out;
        out["num_records"] = data.sequences.size();
        out["dim"] = data.dim();
        out["max_t"] = data.max_t();
        out["class_names"] = data.manifest.class_names;
        std::vector<int> labels, sessions;
        for (const auto& r : data.manifest.records) {
          labels.push_back(r.label);
          sessions.push_back(r.session_id);
        }
        out["labels"] = labels;
        out["sessions"] = sessions;
        return out;
      },
      py::arg("manifest"), "Summary of a dataset manifest and its feature files.");

  m.def(
      "pretrain",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out_dir, int d_model,
         int layers, int heads, int ffn, int t_max, int batch, int epochs, double lr,
         double mask_ratio, double alpha, double lambda_start, double lambda_end, int codebook_size,
         int warmup_batches, std::uint64_t seed) {
        Dataset data = load_dataset(manifest);
        WapConfig mc = model_config(data.dim(), d_model, layers, heads, ffn, t_max);
        SslConfig sc;
        sc.batch_size = batch;
        sc.epochs = epochs;
        sc.lr = lr;
        sc.mask_ratio = mask_ratio;
        sc.alpha = alpha;
        sc.lambda_start = lambda_start;
        sc.lambda_end = lambda_end;
        sc.codebook_k = codebook_size;
        sc.warmup_batches = warmup_batches;
        sc.seed = seed;
        sc.validate();
        PretrainResult res = pretrain(data, mc, sc, out_dir);
        py::dict out;
        out["checkpoint"] = res.checkpoint_path.string();
        out["log"] = res.log_path.string();
        py::list epochs_out;
        for (const auto& e : res.epochs) {
          py::dict ed;
          ed["epoch"] = e.epoch;
          ed["rec"] = e.rec;
          ed["pce"] = e.pce;
          ed["lambda"] = e.lambda;
          ed["lr"] = e.lr;
          ed["entropy"] = e.entropy;
          epochs_out.append(ed);
        }
        out["epochs"] = epochs_out;
        return out;
      },
      py::arg("manifest"), py::arg("out_dir"), py::arg("d_model") = 384, py::arg("layers") = 3,
      py::arg("heads") = 6, py::arg("ffn") = 1536, py::arg("t_max") = 1024, py::arg("batch") = 96,
      py::arg("epochs") = 100, py::arg("lr") = 1e-4, py::arg("mask_ratio") = 0.4,
      py::arg("alpha") = 0.999, py::arg("lambda_start") = 1.0, py::arg("lambda_end") = 0.5,
      py::arg("codebook_size") = 1024, py::arg("warmup_batches") = 2, py::arg("seed") = 1,
      "Self-supervised pretraining over a dataset; writes checkpoint + log into out_dir.");

  m.def(
      "finetune",
      [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
         const std::filesystem::path& out_dir, int fold, int classes, int batch, int epochs,
         double lr, int sap_heads, bool literal_pool, bool augment, bool freeze_head_only,
         std::uint64_t seed) {
        Dataset data = load_dataset(manifest);
        Checkpoint ckpt = read_checkpoint(checkpoint.string());
        WapModel model = load_student(ckpt);
        FoldPlan plan = make_folds(data.manifest);
        if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
          throw InvalidArgument("fold out of range");
        FinetuneConfig fc = finetune_config(classes, batch, epochs, lr, sap_heads, literal_pool,
                                            augment, freeze_head_only, seed);
        std::filesystem::create_directories(out_dir);
        const auto log_path = out_dir / "finetune_log.tsv";
        FinetuneResult res =
            finetune(model, data, plan.folds[static_cast<std::size_t>(fold)], fc, nullptr,
                     &log_path);
        Checkpoint out_ckpt;
        res.adapter.save_to(out_ckpt, "adapter/wap/");
        res.head.save_to(out_ckpt, "");
        const auto ckpt_path = out_dir / "finetune.wapc";
        write_checkpoint(ckpt_path.string(), out_ckpt);
        py::dict out;
        out["checkpoint"] = ckpt_path.string();
        out["log"] = log_path.string();
        out["best_epoch"] = res.best_epoch;
        out["best_ua"] = res.best_ua;
        return out;
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("out_dir"), py::arg("fold") = 0,
      py::arg("classes") = 4, py::arg("batch") = 96, py::arg("epochs") = 100, py::arg("lr") = 1e-4,
      py::arg("sap_heads") = 4, py::arg("literal_pool") = false, py::arg("augment") = true,
      py::arg("freeze_head_only") = false, py::arg("seed") = 1,
      "Supervised fine-tuning on one cross-validation fold; writes adapter + head checkpoint.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
         const std::filesystem::path& out_dir, int classes, int batch, int epochs, double lr,
         int sap_heads, bool literal_pool, bool augment, bool freeze_head_only,
         std::uint64_t seed) {
        Dataset data = load_dataset(manifest);
        Checkpoint ckpt = read_checkpoint(checkpoint.string());
        WapModel model = load_student(ckpt);
        FoldPlan plan = make_folds(data.manifest);
        FinetuneConfig fc = finetune_config(classes, batch, epochs, lr, sap_heads, literal_pool,
                                            augment, freeze_head_only, seed);
        std::filesystem::create_directories(out_dir);
        CvReport rep = run_cv(data, model, plan, fc, nullptr, &out_dir);
        write_report(rep, out_dir / "report.tsv");
        py::dict out = report_dict(rep);
        out["report_path"] = (out_dir / "report.tsv").string();
        return out;
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("out_dir"), py::arg("classes") = 4,
      py::arg("batch") = 96, py::arg("epochs") = 100, py::arg("lr") = 1e-4,
      py::arg("sap_heads") = 4, py::arg("literal_pool") = false, py::arg("augment") = true,
      py::arg("freeze_head_only") = false, py::arg("seed") = 1,
      "Cross-session cross-validation from a pretraining checkpoint; returns per-fold and mean "
      "scores.");

  m.def(
      "export_embeddings",
      [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
         const std::filesystem::path& out_dir) {
        Dataset data = load_dataset(manifest);
        Checkpoint ckpt = read_checkpoint(checkpoint.string());
        Rng rng(1);
        WapModel adapter(WapModel::config_from(ckpt, "adapter/wap/"), rng);
        adapter.load_from(ckpt, "adapter/wap/");
        int d_model = 0;
        SapConfig sap_cfg = SapModel::config_from(ckpt, "", &d_model);
        Rng rng2(1);
        SapModel head(d_model, sap_cfg, rng2);
        head.load_from(ckpt, "");
        export_embeddings(adapter, head, data, out_dir);
        return (out_dir / "embeddings.wapf").string();
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("out_dir"),
      "Utterance embeddings for every record under a fine-tuned adapter + head.");

  m.def(
      "metrics",
      [](const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes) {
        ConfusionMatrix cm = confusion(truth, predicted, num_classes);
        py::dict out;
        out["ua"] = ua(cm);
        out["wa"] = wa(cm);
        out["macro_f1"] = macro_f1(cm);
        out["confusion"] = Eigen::MatrixXi(cm.counts.cast<int>());
        return out;
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes"),
      "Unweighted accuracy, weighted accuracy, macro F1, confusion matrix.");

  m.def(
      "gradcheck",
      []() {
        py::list out;
        for (const auto& c : run_gradcheck_suite(false)) {
          py::dict cd;
          cd["name"] = c.name;
          cd["max_rel_error"] = c.max_rel_error;
          cd["tolerance"] = c.tolerance;
          cd["passed"] = c.passed;
          out.append(cd);
        }
        return out;
      },
      "Finite-difference checks for every differentiable primitive and the composite model.");

  m.def(
      "nearest_centroid_baseline",
      [](const std::filesystem::path& manifest) {
        Dataset data = load_dataset(manifest);
        FoldPlan plan = make_folds(data.manifest);
        double acc = 0;
        for (const auto& fold : plan.folds)
          acc += nearest_centroid_accuracy(data, fold.train, fold.validation);
        return acc / static_cast<double>(plan.folds.size());
      },
      py::arg("manifest"),
      "Mean cross-validated accuracy of the nearest-class-centroid reference baseline.");
}
