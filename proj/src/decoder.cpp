#include "gmilab/decoder.hpp"

#include "gmilab/modes.hpp"
#include "gmilab/npy.hpp"
#include "gmilab/stats.hpp"
#include "optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace gmilab {

namespace {

using json = nlohmann::json;

void check_context(const ToyDecoder& dec, std::int64_t c) {
  if (c < 0 || c >= dec.contexts())
    throw PreconditionError("context id " + std::to_string(c) + " outside [0, " +
                            std::to_string(dec.contexts()) + ")");
}

void check_token(const ToyDecoder& dec, std::int64_t y) {
  if (y < 0 || y >= dec.vocab())
    throw TokenRangeError("token " + std::to_string(y) + " outside [0, " +
                          std::to_string(dec.vocab()) + ")");
}

void check_input(const ToyDecoder& dec, Eigen::Index cols) {
  if (cols != dec.dims())
    throw DimensionMismatchError("decoder expects d=" + std::to_string(dec.dims()) + ", got " +
                                 std::to_string(cols));
}

// z + e_c for every row.
Mat shifted_inputs(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z) {
  check_input(dec, z.cols());
  if (static_cast<Eigen::Index>(contexts.size()) != z.rows())
    throw ShapeMismatchError("context ids and inputs differ in length");
  Mat x = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto c = contexts[static_cast<std::size_t>(i)];
    check_context(dec, c);
    x.row(i) += dec.context.row(c);
  }
  return x;
}

Mat features(const ToyDecoder& dec, const Mat& x) {
  if (!dec.two_layer()) return x;
  Mat pre = (x * dec.hidden_w.transpose()).rowwise() + dec.hidden_b.transpose();
  return pre.array().tanh().matrix();
}

Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Vec log_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

Eigen::Index parameter_count(const ToyDecoder& d) {
  return d.W.size() + d.b.size() + d.context.size() + d.hidden_w.size() + d.hidden_b.size();
}

}  // namespace

ToyDecoder make_linear_decoder(Mat w, int contexts) {
  if (w.rows() < 1 || w.cols() < 1) throw PreconditionError("decoder weights must be non-empty");
  if (contexts < 1) throw PreconditionError("decoder needs at least one context");
  ToyDecoder dec;
  dec.b = Vec::Zero(w.rows());
  dec.context = Mat::Zero(contexts, w.cols());
  dec.W = std::move(w);
  return dec;
}

Vec decoder_logits(const ToyDecoder& dec, std::int64_t context, const Vec& z) {
  check_input(dec, z.size());
  check_context(dec, context);
  Vec x = z + dec.context.row(context).transpose();
  if (dec.two_layer()) x = (dec.hidden_w * x + dec.hidden_b).array().tanh().matrix();
  return dec.W * x + dec.b;
}

Mat decoder_log_softmax(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z) {
  const Mat h = features(dec, shifted_inputs(dec, contexts, z));
  return log_softmax_rows((h * dec.W.transpose()).rowwise() + dec.b.transpose());
}

double log_score(const ToyDecoder& dec, std::int64_t context, const Vec& z, std::int64_t token) {
  check_token(dec, token);
  const Vec lp = log_softmax(decoder_logits(dec, context, z));
  return std::max(lp(token), dec.log_floor());
}

ScoreGradient grad_log_score(const ToyDecoder& dec, std::int64_t context, const Vec& z,
                             std::int64_t token) {
  check_token(dec, token);
  check_input(dec, z.size());
  check_context(dec, context);
  const Vec x = z + dec.context.row(context).transpose();
  Vec h = x;
  if (dec.two_layer()) h = (dec.hidden_w * x + dec.hidden_b).array().tanh().matrix();
  const Vec lp = log_softmax(dec.W * h + dec.b);
  ScoreGradient g;
  if (lp(token) < dec.log_floor()) {
    g.grad = Vec::Zero(z.size());
    g.floor_active = true;
    return g;
  }
  Vec resid = -lp.array().exp().matrix();
  resid(token) += 1.0;
  Vec dh = dec.W.transpose() * resid;
  if (dec.two_layer()) {
    dh.array() *= 1.0 - h.array().square();
    g.grad = dec.hidden_w.transpose() * dh;
  } else {
    g.grad = std::move(dh);
  }
  return g;
}

Vec flatten_parameters(const ToyDecoder& d) {
  Vec p(parameter_count(d));
  Eigen::Index o = 0;
  auto put = [&](const auto& m) {
    p.segment(o, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
    o += m.size();
  };
  put(d.W);
  put(d.b);
  put(d.context);
  put(d.hidden_w);
  put(d.hidden_b);
  return p;
}

ToyDecoder unflatten_parameters(const ToyDecoder& shape, const Vec& p) {
  if (p.size() != parameter_count(shape))
    throw ShapeMismatchError("parameter vector length does not match the decoder shape");
  ToyDecoder d = shape;
  Eigen::Index o = 0;
  auto take = [&](auto& m) {
    Eigen::Map<Vec>(m.data(), m.size()) = p.segment(o, m.size());
    o += m.size();
  };
  take(d.W);
  take(d.b);
  take(d.context);
  take(d.hidden_w);
  take(d.hidden_b);
  return d;
}

double decoder_objective(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                         const LabelVector& targets, Vec* grad) {
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw ShapeMismatchError("targets and inputs differ in length");
  const Mat x = shifted_inputs(dec, contexts, z);
  const Mat h = features(dec, x);
  const Mat lp = log_softmax_rows((h * dec.W.transpose()).rowwise() + dec.b.transpose());
  const auto n = static_cast<double>(z.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < lp.rows(); ++i) {
    const auto y = targets[static_cast<std::size_t>(i)];
    check_token(dec, y);
    loss -= lp(i, y);
  }
  loss /= n;
  if (!grad) return loss;

  Mat r = lp.array().exp();
  for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
  r /= n;
  ToyDecoder g = dec;
  g.W = r.transpose() * h;
  g.b = r.colwise().sum().transpose();
  Mat gx = r * dec.W;  // gradient w.r.t. features
  if (dec.two_layer()) {
    gx.array() *= 1.0 - h.array().square();
    g.hidden_w = gx.transpose() * x;
    g.hidden_b = gx.colwise().sum().transpose();
    gx = gx * dec.hidden_w;
  }
  g.context.setZero();
  for (Eigen::Index i = 0; i < gx.rows(); ++i)
    g.context.row(contexts[static_cast<std::size_t>(i)]) += gx.row(i);
  *grad = flatten_parameters(g);
  return loss;
}

DecoderFit train_decoder(const EmbeddingSet& text_law, std::uint64_t seed,
                         const DecoderTrainOptions& opts) {
  const LabelVector& y = text_law.targets();
  const LabelVector ctx = text_law.contexts();
  const int observed = text_law.num_classes(kTargetLabel);
  const int vocab = opts.vocab > 0 ? opts.vocab : observed;
  if (vocab < 2) throw PreconditionError("decoder vocabulary must have V >= 2");
  if (observed > vocab) throw TokenRangeError("target ids exceed the requested vocabulary");
  const int contexts = 1 + static_cast<int>(*std::max_element(ctx.begin(), ctx.end()));
  const auto d = static_cast<Eigen::Index>(text_law.dims());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index r, Eigen::Index c, double scale) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal(rng);
    return m;
  };

  ToyDecoder init;
  if (opts.hidden > 0) {
    init.hidden_w = draw(opts.hidden, d, opts.hidden_gain / std::sqrt(static_cast<double>(d)));
    init.hidden_b = Vec::Zero(opts.hidden);
    init.W = draw(vocab, opts.hidden, opts.init_scale);
  } else {
    init.W = draw(vocab, d, opts.init_scale);
  }
  init.b = Vec::Zero(vocab);
  init.context = Mat::Zero(contexts, d);

  const Mat z = text_law.to_double();
  // The hidden parameters sit at the end of the flat vector; zeroing their
  // gradient keeps every L-BFGS direction out of that block.
  const Eigen::Index frozen =
      opts.train_hidden ? 0 : init.hidden_w.size() + init.hidden_b.size();
  detail::Objective f = [&](const Vec& p, Vec* grad) {
    const double v = decoder_objective(unflatten_parameters(init, p), ctx, z, y, grad);
    if (grad && frozen > 0) grad->tail(frozen).setZero();
    return v;
  };
  detail::MinimizeOptions gd;
  gd.max_epochs = opts.max_epochs;
  gd.grad_tol = opts.grad_tol;
  const auto res = detail::minimize(f, flatten_parameters(init), gd);

  DecoderFit fit;
  fit.decoder = unflatten_parameters(init, res.x);
  fit.converged = res.converged;
  fit.epochs = res.epochs;
  fit.loss = res.value;
  fit.grad_norm = res.grad_norm;
  return fit;
}

CrossEntropy cross_entropy(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                           const LabelVector& tokens) {
  if (static_cast<Eigen::Index>(tokens.size()) != z.rows())
    throw ShapeMismatchError("targets and inputs differ in length");
  const Mat lp = decoder_log_softmax(dec, contexts, z);
  CrossEntropy ce;
  ce.per_sample.resize(tokens.size());
  const double floor = dec.log_floor();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    check_token(dec, tokens[i]);
    ce.per_sample[i] = -std::max(lp(static_cast<Eigen::Index>(i), tokens[i]), floor);
  }
  if (!tokens.empty())
    ce.mean = std::accumulate(ce.per_sample.begin(), ce.per_sample.end(), 0.0) /
              static_cast<double>(tokens.size());
  return ce;
}

CrossEntropy cross_entropy(const ToyDecoder& dec, const EmbeddingSet& set) {
  return cross_entropy(dec, set.contexts(), set.to_double(), set.targets());
}

double analytic_lipschitz_bound(const ToyDecoder& dec) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < dec.W.rows(); ++i)
    for (Eigen::Index j = i + 1; j < dec.W.rows(); ++j)
      best = std::max(best, (dec.W.row(i) - dec.W.row(j)).norm());
  if (dec.two_layer()) {
    // tanh' <= 1, so the hidden map is ||A||_2-Lipschitz.
    Eigen::JacobiSVD<Mat> svd(dec.hidden_w);
    best *= svd.singularValues()(0);
  }
  return best;
}

LipschitzEstimate estimate_lipschitz(const ToyDecoder& dec, const EmbeddingSet& samples,
                                     std::size_t max_samples, std::uint64_t seed) {
  const std::size_t n = samples.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n > max_samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_samples);
    std::sort(idx.begin(), idx.end());
  }
  const Mat z = samples.to_double();
  const LabelVector ctx = samples.contexts();
  const LabelVector& y = samples.targets();

  LipschitzEstimate est;
  est.analytic_bound = analytic_lipschitz_bound(dec);
  for (auto i : idx) {
    const auto g = grad_log_score(dec, ctx[i], z.row(static_cast<Eigen::Index>(i)).transpose(), y[i]);
    if (g.floor_active) {
      ++est.excluded_floor;
      continue;
    }
    est.per_sample_norms.push_back(g.grad.norm());
  }
  est.n_samples = est.per_sample_norms.size();
  if (est.n_samples > 0) {
    est.mean = std::accumulate(est.per_sample_norms.begin(), est.per_sample_norms.end(), 0.0) /
               static_cast<double>(est.n_samples);
    est.p95 = percentile(est.per_sample_norms, 95.0);
  }
  return est;
}

IsotropyReport gradient_isotropy(const ToyDecoder& dec, const EmbeddingSet& samples,
                                 const ModeSpectrum& spectrum) {
  std::vector<std::size_t> ms, ta;
  for (std::size_t k = 0; k < spectrum.classification.size(); ++k)
    (spectrum.classification[k] == ModeClass::ms ? ms : ta).push_back(k);
  if (ms.empty() || ta.empty())
    throw PreconditionError("gradient isotropy needs non-empty MS and TA mode sets");

  const Mat z = samples.to_double();
  const LabelVector ctx = samples.contexts();
  const LabelVector& y = samples.targets();
  const Mat& u = spectrum.basis.eigenvectors;
  const auto kmodes = static_cast<Eigen::Index>(spectrum.classification.size());
  Vec acc = Vec::Zero(kmodes);
  std::size_t used = 0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto g = grad_log_score(dec, ctx[i], z.row(static_cast<Eigen::Index>(i)).transpose(), y[i]);
    if (g.floor_active) continue;
    acc += (u.leftCols(kmodes).transpose() * g.grad).cwiseAbs();
    ++used;
  }
  if (used == 0) throw DegenerateInputError("every sample is floor-active; no gradients");
  acc /= static_cast<double>(used);

  IsotropyReport r;
  r.per_mode.assign(acc.data(), acc.data() + acc.size());
  for (auto k : ms) r.g_ms += acc(static_cast<Eigen::Index>(k));
  for (auto k : ta) r.g_ta += acc(static_cast<Eigen::Index>(k));
  r.g_ms /= static_cast<double>(ms.size());
  r.g_ta /= static_cast<double>(ta.size());
  const double scale = std::max(r.g_ms, r.g_ta);
  if (scale <= 1e-300) throw DegenerateInputError("all mode-projected gradients are zero");
  if (r.g_ms <= 1e-12 * scale) {
    r.ratio = std::numeric_limits<double>::infinity();
    r.ratio_capped = true;
  } else {
    r.ratio = r.g_ta / r.g_ms;
  }
  if (kmodes >= 3) {
    std::vector<double> alpha(spectrum.alignment.begin(), spectrum.alignment.begin() + kmodes);
    try {
      const auto s = spearman(alpha, r.per_mode);
      r.spearman_rho = s.statistic;
      r.spearman_p = s.p;
    } catch (const DegenerateInputError&) {
      // rank correlation undefined for a constant vector
    }
  }
  return r;
}

namespace {

struct BlockProblem {
  Mat h;                     // features of the objective law, N x h
  std::vector<Eigen::Index> target;  // index inside the block
  Eigen::Index offset = 0;
  Eigen::Index classes = 0;
};

BlockProblem block_problem(const ToyDecoder& dec, const EmbeddingSet& law,
                           std::string_view attribute, std::int64_t offset) {
  const LabelVector& a = law.label(attribute);
  BlockProblem p;
  p.classes = law.num_classes(attribute);
  p.offset = offset;
  if (p.classes < 2) throw PreconditionError("attribute needs at least 2 classes");
  if (offset < 0 || offset + p.classes > dec.vocab())
    throw TokenRangeError("attribute token block exceeds the decoder vocabulary");
  p.h = features(dec, shifted_inputs(dec, law.contexts(), law.to_double()));
  p.target.assign(a.begin(), a.end());
  return p;
}

// Forced-choice cross-entropy of logits restricted to the block; `gl` is
// d loss / d block-logits.
double block_loss(const BlockProblem& p, const Mat& logits, Mat* gl) {
  const Mat lp = log_softmax_rows(logits);
  const auto n = static_cast<double>(lp.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < lp.rows(); ++i) loss -= lp(i, p.target[static_cast<std::size_t>(i)]);
  if (gl) {
    *gl = lp.array().exp();
    for (Eigen::Index i = 0; i < lp.rows(); ++i) (*gl)(i, p.target[static_cast<std::size_t>(i)]) -= 1.0;
    *gl /= n;
  }
  return loss / n;
}

Mat block_logits(const ToyDecoder& dec, const BlockProblem& p, const Mat& w_block) {
  return (p.h * w_block.transpose()).rowwise() + dec.b.segment(p.offset, p.classes).transpose();
}

}  // namespace

RetuneFit low_rank_retune(const ToyDecoder& dec, const EmbeddingSet& objective_law,
                          std::string_view attribute, int rank, std::uint64_t seed,
                          const RetuneOptions& opts) {
  const Eigen::Index hdim = dec.W.cols();
  if (rank < 0 || rank > std::min<Eigen::Index>(dec.vocab(), hdim))
    throw PreconditionError("retune rank must lie in [0, min(V, d)]");
  RetuneFit fit;
  fit.decoder = dec;
  if (rank == 0) return fit;

  const BlockProblem p = block_problem(dec, objective_law, attribute, opts.token_offset);
  const Mat w0 = dec.W.middleRows(p.offset, p.classes);
  const Eigen::Index r = rank;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, opts.init_scale);
  Mat b0(r, hdim);
  for (Eigen::Index j = 0; j < hdim; ++j)
    for (Eigen::Index i = 0; i < r; ++i) b0(i, j) = normal(rng);

  // Only the block rows of A receive gradient; the remaining rows of A stay
  // at their zero initialization, so the packed vector holds the block rows.
  const Eigen::Index na = p.classes * r;
  detail::Objective f = [&](const Vec& x, Vec* grad) {
    const Eigen::Map<const Mat> a(x.data(), p.classes, r);
    const Eigen::Map<const Mat> b(x.data() + na, r, hdim);
    const Mat w = w0 + a * b;
    Mat gl;
    const double v = block_loss(p, block_logits(dec, p, w), grad ? &gl : nullptr);
    if (grad) {
      const Mat gw = gl.transpose() * p.h;
      grad->resize(x.size());
      Eigen::Map<Mat>(grad->data(), p.classes, r) = gw * b.transpose();
      Eigen::Map<Mat>(grad->data() + na, r, hdim) = a.transpose() * gw;
    }
    return v;
  };
  Vec x0 = Vec::Zero(na + r * hdim);
  Eigen::Map<Mat>(x0.data() + na, r, hdim) = b0;
  detail::MinimizeOptions gd;
  gd.max_epochs = opts.max_epochs;
  gd.grad_tol = opts.grad_tol;
  const auto res = detail::minimize(f, x0, gd);

  const Eigen::Map<const Mat> a(res.x.data(), p.classes, r);
  const Eigen::Map<const Mat> b(res.x.data() + na, r, hdim);
  fit.decoder.W.middleRows(p.offset, p.classes) += a * b;
  fit.converged = res.converged;
  fit.epochs = res.epochs;
  fit.loss = res.value;
  return fit;
}

RetuneFit refit_attribute_head(const ToyDecoder& dec, const EmbeddingSet& objective_law,
                               std::string_view attribute, const RetuneOptions& opts) {
  const BlockProblem p = block_problem(dec, objective_law, attribute, opts.token_offset);
  const Mat w0 = dec.W.middleRows(p.offset, p.classes);
  const Eigen::Index hdim = dec.W.cols();
  detail::Objective f = [&](const Vec& x, Vec* grad) {
    const Eigen::Map<const Mat> delta(x.data(), p.classes, hdim);
    Mat gl;
    const double v = block_loss(p, block_logits(dec, p, w0 + delta), grad ? &gl : nullptr);
    if (grad) {
      grad->resize(x.size());
      Eigen::Map<Mat>(grad->data(), p.classes, hdim) = gl.transpose() * p.h;
    }
    return v;
  };
  detail::MinimizeOptions gd;
  gd.max_epochs = opts.max_epochs;
  gd.grad_tol = opts.grad_tol;
  const auto res = detail::minimize(f, Vec::Zero(p.classes * hdim), gd);
  RetuneFit fit;
  fit.decoder = dec;
  fit.decoder.W.middleRows(p.offset, p.classes) += Eigen::Map<const Mat>(res.x.data(), p.classes, hdim);
  fit.converged = res.converged;
  fit.epochs = res.epochs;
  fit.loss = res.value;
  return fit;
}

ForcedChoice attribute_forced_choice(const ToyDecoder& dec, const EmbeddingSet& set,
                                     std::string_view attribute, std::int64_t token_offset) {
  const BlockProblem p = block_problem(dec, set, attribute, token_offset);
  const Mat logits = block_logits(dec, p, dec.W.middleRows(p.offset, p.classes));
  ForcedChoice fc;
  fc.cross_entropy = block_loss(p, logits, nullptr);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    hits += best == p.target[static_cast<std::size_t>(i)];
  }
  fc.accuracy = static_cast<double>(hits) / static_cast<double>(logits.rows());
  return fc;
}

void save_decoder(const ToyDecoder& dec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["kind"] = dec.two_layer() ? "two_layer" : "linear";
  m["vocab"] = dec.vocab();
  m["dims"] = dec.dims();
  m["contexts"] = dec.contexts();
  m["dtype"] = "float64";
  auto put = [&](const std::string& name, const Mat& a, bool vector) {
    const std::string file = name + ".npy";
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = a;
    std::vector<std::size_t> shape{static_cast<std::size_t>(a.rows())};
    if (!vector) shape.push_back(static_cast<std::size_t>(a.cols()));
    npy::write_f8(dir / file, shape, rm.data());
    m["arrays"][name] = file;
  };
  put("W", dec.W, false);
  put("b", dec.b, true);
  put("context", dec.context, false);
  if (dec.two_layer()) {
    put("hidden_w", dec.hidden_w, false);
    put("hidden_b", dec.hidden_b, true);
  }
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

ToyDecoder load_decoder(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw MissingFileError("decoder manifest not found: " + manifest.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw FormatError("malformed decoder manifest " + manifest.string() + ": " + e.what());
  }
  auto get = [&](const std::string& name, bool vector) -> Mat {
    if (!m.contains("arrays") || !m["arrays"].contains(name))
      throw FormatError("decoder manifest lacks array '" + name + "'");
    const auto path = dir / m["arrays"][name].get<std::string>();
    if (!std::filesystem::exists(path)) throw MissingFileError("missing decoder array: " + path.string());
    const auto arr = npy::read(path);
    const auto v = arr.as_double();
    Eigen::Index rows = 0, cols = 1;
    if (vector) {
      if (arr.shape.size() != 1) throw ShapeMismatchError(name + " must be 1-D");
      rows = static_cast<Eigen::Index>(arr.shape[0]);
    } else {
      if (arr.shape.size() != 2) throw ShapeMismatchError(name + " must be 2-D");
      rows = static_cast<Eigen::Index>(arr.shape[0]);
      cols = static_cast<Eigen::Index>(arr.shape[1]);
    }
    Mat out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = v[static_cast<std::size_t>(i * cols + j)];
    return out;
  };
  ToyDecoder dec;
  dec.W = get("W", false);
  dec.b = get("b", true);
  dec.context = get("context", false);
  if (m.value("kind", std::string("linear")) == "two_layer") {
    dec.hidden_w = get("hidden_w", false);
    dec.hidden_b = get("hidden_b", true);
  }
  if (dec.b.size() != dec.W.rows()) throw ShapeMismatchError("decoder bias length != vocab");
  const auto in_dim = dec.two_layer() ? dec.hidden_w.cols() : dec.W.cols();
  if (dec.context.cols() != in_dim) throw ShapeMismatchError("context offsets have the wrong width");
  if (dec.two_layer() && (dec.hidden_w.rows() != dec.W.cols() || dec.hidden_b.size() != dec.W.cols()))
    throw ShapeMismatchError("hidden layer shape does not match the output layer");
  return dec;
}

}  // namespace gmilab
