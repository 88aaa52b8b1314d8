#include "wap/gradcheck_suite.hpp"

#include "wap/codebook.hpp"
#include "wap/ops.hpp"
#include "wap/sap.hpp"
#include "wap/ssl.hpp"
#include "wap/wap_model.hpp"

namespace wap {

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

GradCheckCase finish(const std::string& name, const GradCheckReport& rep, double tol) {
  GradCheckCase c;
  c.name = name;
  c.max_rel_error = rep.max_rel_error;
  c.tolerance = tol;
  c.passed = rep.max_rel_error < tol;
  return c;
}

GradCheckCase check_affine(bool flip_sign) {
  Rng rng(11);
  Mat x = random_mat(4, 5, rng), w = random_mat(5, 3, rng), b = random_mat(1, 3, rng);
  const Mat c = random_mat(4, 3, rng);
  Mat dw = Mat::Zero(5, 3), db = Mat::Zero(1, 3);
  Mat dx = affine_backward(x, w, c, dw, db);
  if (flip_sign) {
    dx = -dx;
    dw = -dw;
    db = -db;
  }
  auto loss = [&] { return (affine_forward(x, w, b).array() * c.array()).sum(); };
  auto rep = grad_check(loss, {{"x", &x, &dx}, {"w", &w, &dw}, {"b", &b, &db}});
  return finish(flip_sign ? "affine(sign-flipped)" : "affine", rep, 1e-4);
}

GradCheckCase check_layer_norm() {
  Rng rng(12);
  Mat x = random_mat(4, 6, rng), g = random_mat(1, 6, rng), b = random_mat(1, 6, rng);
  const Mat c = random_mat(4, 6, rng);
  const double eps = 1e-5;
  LayerNormCache cache;
  layer_norm_forward(x, g, b, eps, &cache);
  Mat dg = Mat::Zero(1, 6), db = Mat::Zero(1, 6);
  Mat dx = layer_norm_backward(c, g, cache, dg, db);
  auto loss = [&] { return (layer_norm_forward(x, g, b, eps, nullptr).array() * c.array()).sum(); };
  auto rep = grad_check(loss, {{"x", &x, &dx}, {"gain", &g, &dg}, {"bias", &b, &db}});
  return finish("layer_norm", rep, 1e-4);
}

GradCheckCase check_softmax() {
  Rng rng(13);
  Mat x = random_mat(3, 5, rng);
  const Mat c = random_mat(3, 5, rng);
  Mat y = softmax_rows(x);
  Mat dx = softmax_rows_backward(y, c);
  auto loss = [&] { return (softmax_rows(x).array() * c.array()).sum(); };
  auto rep = grad_check(loss, {{"x", &x, &dx}});
  return finish("softmax_rows", rep, 1e-4);
}

GradCheckCase check_gelu() {
  Rng rng(14);
  Mat x = random_mat(4, 4, rng);
  const Mat c = random_mat(4, 4, rng);
  Mat dx = gelu_backward(x, c);
  auto loss = [&] { return (gelu_forward(x).array() * c.array()).sum(); };
  auto rep = grad_check(loss, {{"x", &x, &dx}});
  return finish("gelu", rep, 1e-4);
}

GradCheckCase check_attention() {
  Rng rng(15);
  const int t = 3, d = 8, h = 2;
  Mat x = random_mat(t, d, rng);
  Mat wq = random_mat(d, d, rng, 0.5), bq = random_mat(1, d, rng, 0.5);
  Mat wk = random_mat(d, d, rng, 0.5), bk = random_mat(1, d, rng, 0.5);
  Mat wv = random_mat(d, d, rng, 0.5), bv = random_mat(1, d, rng, 0.5);
  Mat wo = random_mat(d, d, rng, 0.5), bo = random_mat(1, d, rng, 0.5);
  const Mat c = random_mat(t, d, rng);

  MhaParamsView p{wq, bq, wk, bk, wv, bv, wo, bo};
  MhaCache cache;
  mha_forward(x, p, h, &cache);
  Mat gwq = Mat::Zero(d, d), gbq = Mat::Zero(1, d), gwk = Mat::Zero(d, d), gbk = Mat::Zero(1, d);
  Mat gwv = Mat::Zero(d, d), gbv = Mat::Zero(1, d), gwo = Mat::Zero(d, d), gbo = Mat::Zero(1, d);
  MhaGradsView g{gwq, gbq, gwk, gbk, gwv, gbv, gwo, gbo};
  Mat dx = mha_backward(c, p, h, cache, g);

  auto loss = [&] { return (mha_forward(x, p, h, nullptr).array() * c.array()).sum(); };
  auto rep = grad_check(loss, {{"x", &x, &dx},
                               {"wq", &wq, &gwq},
                               {"bq", &bq, &gbq},
                               {"wk", &wk, &gwk},
                               {"bk", &bk, &gbk},
                               {"wv", &wv, &gwv},
                               {"bv", &bv, &gbv},
                               {"wo", &wo, &gwo},
                               {"bo", &bo, &gbo}});
  return finish("attention", rep, 1e-4);
}

GradCheckCase check_rec_loss() {
  Rng rng(16);
  Mat zs = random_mat(5, 4, rng), zt = random_mat(5, 4, rng);
  const std::vector<int> masked = {0, 2, 4};
  Mat dzs;
  rec_loss(zs, zt, masked, &dzs);
  auto loss = [&] { return rec_loss(zs, zt, masked, nullptr); };
  auto rep = grad_check(loss, {{"z_s", &zs, &dzs}});
  return finish("rec_loss", rep, 1e-6);
}

GradCheckCase check_pce() {
  Rng rng(17);
  Mat zs = random_mat(6, 5, rng);
  Mat pool = random_mat(12, 5, rng);
  Codebook cb = init_codebook(4, pool, 99);
  const std::vector<int> masked = {0, 2, 4};
  const std::vector<int> labels = {1, 3, 0};
  const double tau = 0.1;
  Mat dzs;
  pce_loss(zs, masked, labels, cb, tau, &dzs);
  auto loss = [&] { return pce_loss(zs, masked, labels, cb, tau, nullptr); };
  auto rep = grad_check(loss, {{"z_s", &zs, &dzs}});
  return finish("pce_loss", rep, 1e-4);
}

GradCheckCase check_head(bool literal) {
  Rng rng(18);
  const int t = 5, d = 6;
  SapConfig cfg;
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.literal_second_moment = literal;
  SapModel head(d, cfg, rng);
  // Larger weights than init so the attention map is far from uniform.
  head.attn_w.value = random_mat(d, cfg.heads, rng, 0.5);
  head.clf_w.value = random_mat(2 * d * cfg.heads, cfg.num_classes, rng, 0.5);
  Mat z = random_mat(t, d, rng);
  const int label = 1;

  zero_grads(head.named_params());
  SapCache cache;
  Mat logits = head.forward(z, &cache);
  Mat d_logits;
  softmax_ce(logits, label, &d_logits);
  Mat dz = head.backward(d_logits, cache);

  std::vector<GradCheckTensor> tensors = {{"z", &z, &dz}};
  for (auto& [name, p] : head.named_params()) tensors.push_back({name, &p->value, &p->grad});
  auto loss = [&] { return softmax_ce(head.forward(z, nullptr), label, nullptr); };
  auto rep = grad_check(loss, tensors);
  return finish(literal ? "sap_head(literal)" : "sap_head", rep, 1e-3);
}

GradCheckCase check_backbone(bool flip_sign) {
  Rng rng(19);
  WapConfig cfg;
  cfg.d_in = 10;
  cfg.d_model = 16;
  cfg.layers = 3;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.t_max = 8;
  WapModel model(cfg, rng);
  Mat seq = random_mat(6, cfg.d_in, rng);
  Mat target = random_mat(6, cfg.d_model, rng);
  const std::vector<int> mask = {1, 3};

  zero_grads(model.named_params());
  WapCache cache;
  WapForwardResult res = model.forward(seq, mask, &cache);
  Mat d_out;
  rec_loss(res.output, target, mask, &d_out);
  model.backward(d_out, cache);
  if (flip_sign)
    for (auto& [name, p] : model.named_params()) p->grad = -p->grad;

  std::vector<GradCheckTensor> tensors;
  for (auto& [name, p] : model.named_params()) tensors.push_back({name, &p->value, &p->grad});
  auto loss = [&] {
    WapForwardResult r = model.forward(seq, mask, nullptr);
    return rec_loss(r.output, target, mask, nullptr);
  };
  auto rep = grad_check(loss, tensors);
  return finish(flip_sign ? "backbone_rec(sign-flipped)" : "backbone_rec", rep, 1e-3);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(bool sabotage) {
  std::vector<GradCheckCase> cases;
  cases.push_back(check_affine(false));
  cases.push_back(check_layer_norm());
  cases.push_back(check_softmax());
  cases.push_back(check_gelu());
  cases.push_back(check_attention());
  cases.push_back(check_rec_loss());
  cases.push_back(check_pce());
  cases.push_back(check_head(false));
  cases.push_back(check_head(true));
  cases.push_back(check_backbone(sabotage));

  // The checker itself must notice a broken backward pass.
  GradCheckCase sens = check_affine(true);
  sens.name = "checker_sensitivity";
  sens.expect_large = true;
  sens.passed = sens.max_rel_error > 0.5;
  cases.push_back(sens);
  return cases;
}

}  // namespace wap
