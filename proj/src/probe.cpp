#include "gmilab/probe.hpp"

#include "optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gmilab {

namespace {

// Row-wise log-softmax.
Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Mat normalize(const ProbeModel& model, const Mat& raw) {
  if (raw.cols() != model.weights.cols())
    throw DimensionMismatchError("probe input dimensionality does not match the model");
  return (raw.rowwise() - model.train_mean.transpose()).array().rowwise() /
         model.train_std.transpose().array();
}

void check_classes(const LabelVector& y, int classes) {
  if (classes < 2) throw PreconditionError("probe needs at least 2 classes");
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (auto v : y) {
    if (v < 0 || v >= classes) throw PreconditionError("label id out of range");
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c = 0; c < classes; ++c)
    if (counts[static_cast<std::size_t>(c)] < 2)
      throw UnsplittableClassError("class " + std::to_string(c) + " has fewer than 2 samples");
}

}  // namespace

double logistic_objective(const Mat& x, const LabelVector& y, int classes, double reg_c,
                          const Mat& w, const Vec& b, Mat* grad_w, Vec* grad_b) {
  const auto n = static_cast<double>(x.rows());
  const Mat logits = (x * w.transpose()).rowwise() + b.transpose();
  const Mat logp = log_softmax_rows(logits);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) loss -= logp(i, y[static_cast<std::size_t>(i)]);
  loss /= n;
  const double penalty_scale = 1.0 / (2.0 * reg_c * n);
  loss += penalty_scale * w.squaredNorm();
  if (grad_w || grad_b) {
    Mat resid = logp.array().exp();  // softmax
    for (Eigen::Index i = 0; i < x.rows(); ++i) resid(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    resid /= n;
    if (grad_w) *grad_w = resid.transpose() * x + 2.0 * penalty_scale * w;
    if (grad_b) *grad_b = resid.colwise().sum().transpose();
  }
  (void)classes;
  return loss;
}

ProbeModel fit_logistic(const Mat& x, const LabelVector& y, int classes,
                        const ProbeTrainOptions& opts) {
  check_classes(y, classes);
  const Eigen::Index d = x.cols();
  const Eigen::Index k = classes;
  auto unpack = [&](const Vec& p, Mat& w, Vec& b) {
    w = Eigen::Map<const Mat>(p.data(), k, d);
    b = p.tail(k);
  };
  detail::Objective f = [&](const Vec& p, Vec* grad) {
    Mat w;
    Vec b;
    unpack(p, w, b);
    if (!grad) return logistic_objective(x, y, classes, opts.reg_c, w, b, nullptr, nullptr);
    Mat gw;
    Vec gb;
    const double v = logistic_objective(x, y, classes, opts.reg_c, w, b, &gw, &gb);
    grad->resize(p.size());
    grad->head(k * d) = Eigen::Map<const Vec>(gw.data(), k * d);
    grad->tail(k) = gb;
    return v;
  };
  detail::MinimizeOptions gd;
  gd.max_epochs = opts.max_epochs;
  gd.grad_tol = opts.grad_tol;
  auto res = detail::minimize(f, Vec::Zero(k * d + k), gd);

  ProbeModel model;
  unpack(res.x, model.weights, model.bias);
  model.classes = classes;
  model.reg_c = opts.reg_c;
  model.converged = res.converged;
  model.epochs = res.epochs;
  model.grad_norm = res.grad_norm;
  model.train_mean = Vec::Zero(d);
  model.train_std = Vec::Ones(d);
  return model;
}

ProbeModel train_probe(const EmbeddingSet& set, std::string_view attribute, std::uint64_t seed,
                       const ProbeTrainOptions& opts) {
  const auto& labels = set.label(attribute);
  const int classes = set.num_classes(attribute);
  if (classes < 2) throw PreconditionError("attribute '" + std::string(attribute) + "' has a single class");
  check_classes(labels, classes);
  const auto plan = stratified_split(labels, seed, opts.train_fraction);
  const Mat all = set.to_double();
  Mat train(static_cast<Eigen::Index>(plan.train_idx.size()), all.cols());
  LabelVector y_train(plan.train_idx.size());
  for (std::size_t i = 0; i < plan.train_idx.size(); ++i) {
    train.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(plan.train_idx[i]));
    y_train[i] = labels[plan.train_idx[i]];
  }
  ProbeModel model = train_probe_all(train, y_train, classes, opts);

  Mat test(static_cast<Eigen::Index>(plan.test_idx.size()), all.cols());
  LabelVector y_test(plan.test_idx.size());
  for (std::size_t i = 0; i < plan.test_idx.size(); ++i) {
    test.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(plan.test_idx[i]));
    y_test[i] = labels[plan.test_idx[i]];
  }
  model.test_accuracy = probe_accuracy(model, test, y_test);
  return model;
}

ProbeModel train_probe_all(const Mat& raw, const LabelVector& y, int classes,
                           const ProbeTrainOptions& opts) {
  const ZScore z = zscore_normalize(raw, raw);
  ProbeModel model = fit_logistic(z.transformed, y, classes, opts);
  model.train_mean = z.mean;
  model.train_std = z.std;
  return model;
}

Mat probe_log_proba(const ProbeModel& model, const Mat& raw) {
  const Mat x = normalize(model, raw);
  return log_softmax_rows((x * model.weights.transpose()).rowwise() + model.bias.transpose());
}

std::vector<int> probe_predict(const ProbeModel& model, const Mat& raw) {
  const Mat logp = probe_log_proba(model, raw);
  std::vector<int> out(static_cast<std::size_t>(logp.rows()));
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < logp.cols(); ++k)
      if (logp(i, k) > logp(i, best)) best = static_cast<int>(k);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double probe_accuracy(const ProbeModel& model, const Mat& raw, const LabelVector& y) {
  if (y.empty()) return 0.0;
  const auto pred = probe_predict(model, raw);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

Vec probe_input_gradient(const ProbeModel& model, const Vec& z, int a) {
  if (a < 0 || a >= model.classes) throw PreconditionError("probe class out of range");
  const Mat logp = probe_log_proba(model, z.transpose());
  Vec resid = -logp.row(0).array().exp().transpose();
  resid(a) += 1.0;
  // Chain rule through the z-scoring.
  return (model.weights.transpose() * resid).cwiseQuotient(model.train_std);
}

ProbeResult run_probe_protocol(const EmbeddingSet& set, std::string_view attribute,
                               const std::vector<std::uint64_t>& seeds,
                               const ProbeTrainOptions& opts) {
  if (seeds.empty()) throw PreconditionError("probe protocol needs at least one seed");
  ProbeResult r;
  r.attribute = std::string(attribute);
  r.layer_tag = set.layer_tag;
  r.seeds = seeds;
  r.chance = 1.0 / set.num_classes(attribute);
  for (auto seed : seeds) {
    const ProbeModel m = train_probe(set, attribute, seed, opts);
    r.per_seed.push_back(m.test_accuracy);
    r.converged.push_back(m.converged);
  }
  const double n = static_cast<double>(r.per_seed.size());
  r.mean = std::accumulate(r.per_seed.begin(), r.per_seed.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : r.per_seed) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / n);
  return r;
}

double probe_lipschitz(const ProbeModel& model) {
  double best = 0.0;
  for (Eigen::Index k = 0; k < model.weights.rows(); ++k)
    best = std::max(best, model.weights.row(k).transpose().cwiseQuotient(model.train_std).norm());
  return best;
}

double probe_lipschitz_strict(const ProbeModel& model) {
  double best = 0.0;
  for (Eigen::Index j = 0; j < model.weights.rows(); ++j)
    for (Eigen::Index k = j + 1; k < model.weights.rows(); ++k)
      best = std::max(best, (model.weights.row(j) - model.weights.row(k))
                                .transpose()
                                .cwiseQuotient(model.train_std)
                                .norm());
  return best;
}

double mean_clipped_log_likelihood(const ProbeModel& model, const Mat& raw, const LabelVector& y) {
  const Mat logp = probe_log_proba(model, raw);
  const double floor = -std::log(static_cast<double>(model.classes));
  double s = 0.0;
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const auto a = y[static_cast<std::size_t>(i)];
    if (a < 0 || a >= model.classes) throw PreconditionError("label outside the probe's classes");
    s += std::max(logp(i, a), floor);
  }
  return s / static_cast<double>(logp.rows());
}

PenaltyCheck probe_penalty_check(const ProbeModel& model, const PairedLaws& laws,
                                 std::string_view attribute, double w1) {
  PenaltyCheck c;
  c.mean_log_h_text = mean_clipped_log_likelihood(model, laws.text().to_double(),
                                                  laws.text().label(attribute));
  c.mean_log_h_modal = mean_clipped_log_likelihood(model, laws.modal().to_double(),
                                                   laws.modal().label(attribute));
  c.lhs = std::fabs(c.mean_log_h_modal - c.mean_log_h_text);
  c.l_h = probe_lipschitz(model);
  c.w1 = w1;
  c.rhs = c.l_h * w1;
  c.holds = c.lhs <= c.rhs * (1.0 + 1e-6);
  c.rhs_strict = probe_lipschitz_strict(model) * w1;
  c.holds_strict = c.lhs <= c.rhs_strict * (1.0 + 1e-6);
  return c;
}

}  // namespace gmilab
