#include "gmilab/decoder.hpp"
#include "gmilab/experiments.hpp"
#include "gmilab/modes.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>

using namespace gmilab;

namespace {

// Two classes 10 sigma apart on the first axis, one context.
EmbeddingSet separable(int n, std::uint64_t seed, double margin = 10.0) {
  std::mt19937_64 rng(seed);
  Mat x = oracle::gaussian(n, 2, rng);
  LabelVector y(n), c(n, 0), s(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    s[i] = y[i];
    x(i, 0) += y[i] ? margin / 2 : -margin / 2;
  }
  return oracle::make_set(x, {{"target", y}, {"context", c}}, s);
}

ToyDecoder random_decoder(int v, int d, int contexts, std::mt19937_64& rng, int hidden = 0) {
  ToyDecoder dec = make_linear_decoder(oracle::gaussian(v, hidden ? hidden : d, rng), contexts);
  dec.b = oracle::gaussian(v, 1, rng).col(0);
  dec.context = oracle::gaussian(contexts, d, rng, 0.3);
  if (hidden) {
    dec.hidden_w = oracle::gaussian(hidden, d, rng);
    dec.hidden_b = oracle::gaussian(hidden, 1, rng).col(0);
  }
  return dec;
}

}  // namespace

TEST_CASE("train_decoder fits a separable text law") {
  const auto fit = train_decoder(separable(200, 1), 3);
  CHECK(cross_entropy(fit.decoder, separable(200, 1)).mean < 0.05);
}

TEST_CASE("train_decoder on targets independent of z approaches log V") {
  std::mt19937_64 rng(2);
  const int n = 2000;
  LabelVector y(n), c(n, 0);
  for (auto& v : y) v = static_cast<std::int64_t>(rng() % 4);
  const auto set = oracle::make_set(oracle::gaussian(n, 3, rng), {{"target", y}, {"context", c}}, y);
  const auto fit = train_decoder(set, 4);
  CHECK(std::abs(cross_entropy(fit.decoder, set).mean - std::log(4.0)) <= 0.05);
}

TEST_CASE("train_decoder rejects a single-token vocabulary") {
  auto set = separable(20, 3);
  set.labels["target"].assign(20, 0);
  CHECK_THROWS_AS(train_decoder(set, 1), PreconditionError);
}

TEST_CASE("log_score: uniform decoder, floor and symmetric boundary") {
  const ToyDecoder uniform = make_linear_decoder(Mat::Zero(5, 3), 1);
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep)
    for (int y = 0; y < 5; ++y)
      CHECK(log_score(uniform, 0, oracle::gaussian(3, 1, rng).col(0), y) == doctest::Approx(std::log(0.2)));

  Mat w(3, 1);
  w << 100, -100, 0;
  const ToyDecoder steep = make_linear_decoder(w, 1);
  Vec z(1);
  z << 1.0;
  CHECK(log_score(steep, 0, z, 1) == -std::log(3.0));
  CHECK(grad_log_score(steep, 0, z, 1).floor_active);
  CHECK(grad_log_score(steep, 0, z, 1).grad.norm() == 0.0);

  Mat sym(2, 1);
  sym << 1, -1;
  const ToyDecoder two = make_linear_decoder(sym, 1);
  CHECK(log_score(two, 0, Vec::Zero(1), 0) == doctest::Approx(std::log(0.5)));
  CHECK_THROWS_AS(log_score(two, 0, Vec::Zero(1), 2), TokenRangeError);
}

TEST_CASE("grad_log_score worked examples") {
  const ToyDecoder uniform = make_linear_decoder(Mat::Zero(4, 2), 1);
  CHECK(grad_log_score(uniform, 0, Vec::Ones(2), 1).grad.norm() == 0.0);

  Mat w(2, 1);
  w << 1, -1;
  const auto g = grad_log_score(make_linear_decoder(w, 1), 0, Vec::Zero(1), 0);
  CHECK(g.grad(0) == doctest::Approx(1.0));
  CHECK_FALSE(g.floor_active);
}

TEST_CASE("input gradients match central differences for linear and two-layer decoders") {
  std::mt19937_64 rng(5);
  for (int hidden : {0, 6}) {
    for (int rep = 0; rep < 20; ++rep) {
      const ToyDecoder dec = random_decoder(4, 3, 2, rng, hidden);
      const Vec z = oracle::gaussian(3, 1, rng, 0.5).col(0);
      const int c = static_cast<int>(rng() % 2), y = static_cast<int>(rng() % 4);
      const auto g = grad_log_score(dec, c, z, y);
      if (g.floor_active) continue;
      const auto f = [&](const Vec& p) { return log_score(dec, c, p, y); };
      CHECK(oracle::relative_error(g.grad, oracle::fd_gradient(f, z)) <= 1e-6);
    }
  }
}

TEST_CASE("training objective gradient matches central differences") {
  std::mt19937_64 rng(6);
  for (int hidden : {0, 5}) {
    const ToyDecoder dec = random_decoder(3, 2, 2, rng, hidden);
    const Mat z = oracle::gaussian(12, 2, rng);
    LabelVector c(12), y(12);
    for (int i = 0; i < 12; ++i) {
      c[i] = i % 2;
      y[i] = i % 3;
    }
    Vec grad;
    decoder_objective(dec, c, z, y, &grad);
    const auto f = [&](const Vec& p) {
      return decoder_objective(unflatten_parameters(dec, p), c, z, y, nullptr);
    };
    CHECK(oracle::relative_error(grad, oracle::fd_gradient(f, flatten_parameters(dec))) <= 1e-6);
  }
}

TEST_CASE("estimate_lipschitz: uniform decoder, analytic bound and homogeneity") {
  std::mt19937_64 rng(7);
  const int n = 200;
  Mat x = oracle::gaussian(n, 1, rng, 0.2);
  LabelVector y(n), c(n, 0);
  for (int i = 0; i < n; ++i) y[i] = i % 2;
  const auto set = oracle::make_set(x, {{"target", y}, {"context", c}}, y);

  const auto zero = estimate_lipschitz(make_linear_decoder(Mat::Zero(2, 1), 1), set);
  CHECK(zero.mean == 0.0);
  CHECK(zero.p95 == 0.0);

  Mat w(2, 1);
  w << 1, -1;
  const ToyDecoder dec = make_linear_decoder(w, 1);
  const auto l = estimate_lipschitz(dec, set);
  CHECK(analytic_lipschitz_bound(dec) == doctest::Approx(2.0));
  CHECK(l.p95 <= 2.0);
  CHECK(l.p95 >= l.mean);
  CHECK(l.n_samples + l.excluded_floor == static_cast<std::size_t>(n));
}

// The gradient W^T (e_y - softmax(W z + b)) is linear in W wherever W z = 0,
// since the softmax there depends on b alone.
TEST_CASE("estimate_lipschitz is homogeneous in W where the softmax does not move") {
  const int n = 40;
  const LabelVector y(n, 0), c(n, 0);
  const auto set = oracle::make_set(Mat::Zero(n, 2), {{"target", y}, {"context", c}}, y);
  std::mt19937_64 rng(17);
  ToyDecoder dec = make_linear_decoder(oracle::gaussian(3, 2, rng), 1);
  dec.b << 1.0, 0.0, -0.5;
  ToyDecoder twice = dec;
  twice.W *= 2.0;
  const auto l = estimate_lipschitz(dec, set), l2 = estimate_lipschitz(twice, set);
  REQUIRE(l.n_samples == static_cast<std::size_t>(n));
  CHECK(l.mean > 0.0);
  CHECK(l2.mean == doctest::Approx(2 * l.mean));
  CHECK(l2.p95 == doctest::Approx(2 * l.p95));
}

TEST_CASE("estimate_lipschitz excludes floor-active points and stays under the analytic bound") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const ToyDecoder dec = random_decoder(5, 4, 2, rng, rep % 2 ? 7 : 0);
    const int n = 100;
    LabelVector y(n), c(n);
    for (int i = 0; i < n; ++i) {
      y[i] = i % 5;
      c[i] = i % 2;
    }
    const auto set = oracle::make_set(oracle::gaussian(n, 4, rng, 3.0), {{"target", y}, {"context", c}}, y);
    const auto l = estimate_lipschitz(dec, set);
    CHECK(l.p95 <= l.analytic_bound * (1 + 1e-12));
    CHECK(l.n_samples + l.excluded_floor == static_cast<std::size_t>(n));
  }
}

TEST_CASE("gradient_isotropy: isotropic decoder, TA-only decoder, uniform decoder") {
  // Exactly diagonal covariances: modal varies on all 8 axes, text only on
  // the first 4, so axes 4..7 are MS and 0..3 are TA.
  const int d = 8;
  Mat modal = Mat::Zero(2 * d, d), text = Mat::Zero(2 * d, d);
  for (int i = 0; i < d; ++i) {
    const double s = 1.0 + 0.05 * i;
    modal(2 * i, i) = s;
    modal(2 * i + 1, i) = -s;
    if (i < 4) text.row(2 * i) = modal.row(2 * i), text.row(2 * i + 1) = modal.row(2 * i + 1);
  }
  const ModeSpectrum spectrum = mode_alignment(modal, text, d);
  REQUIRE(spectrum.ms_modes().size() == 4);

  std::mt19937_64 rng(9);
  const int v = 200, n = 500;
  LabelVector y(n), c(n, 0);
  for (int i = 0; i < n; ++i) y[i] = i % v;
  std::shuffle(y.begin(), y.end(), rng);
  const auto samples = oracle::make_set(oracle::gaussian(n, d, rng), {{"target", y}, {"context", c}}, y);
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 wrng(100 + seed);
    const auto r = gradient_isotropy(make_linear_decoder(oracle::gaussian(v, d, wrng, 0.1), 1), samples, spectrum);
    CHECK(r.ratio >= 0.8);
    CHECK(r.ratio <= 1.25);
  }

  Mat ta_only = oracle::gaussian(v, d, rng, 0.1);
  ta_only.rightCols(4).setZero();
  const auto capped = gradient_isotropy(make_linear_decoder(ta_only, 1), samples, spectrum);
  CHECK(capped.g_ms < 1e-12);
  CHECK(capped.ratio_capped);

  CHECK_THROWS_AS(gradient_isotropy(make_linear_decoder(Mat::Zero(v, d), 1), samples, spectrum),
                  DegenerateInputError);
}

TEST_CASE("cross_entropy: large-margin decoder, uniform decoder and floor") {
  const auto set = separable(100, 10);
  Mat w(2, 2);
  w << -20, 0, 20, 0;
  CHECK(cross_entropy(make_linear_decoder(w, 1), set).mean <= 0.05);
  CHECK(cross_entropy(make_linear_decoder(Mat::Zero(2, 2), 1), set).mean == doctest::Approx(std::log(2.0)));

  const auto floored = cross_entropy(make_linear_decoder(-w, 1), set);
  CHECK(floored.mean == doctest::Approx(std::log(2.0)));
  for (double l : floored.per_sample) CHECK(l <= std::log(2.0) + 1e-15);
}

TEST_CASE("low_rank_retune: rank 0 no-op, target improvement, control selectivity") {
  const SynthConfig cfg = retune_fixture_config();
  const auto pair = generate_pair(cfg);
  DecoderTrainOptions o = sweep_decoder_options();
  o.vocab = decoder_vocab(cfg);
  const ToyDecoder dec = train_decoder(pair.laws.text(), 21, o).decoder;
  const auto& modal = pair.laws.modal();
  const auto off_a = attribute_token_offset(cfg, "emotion");
  const auto off_b = attribute_token_offset(cfg, "speaker");

  RetuneOptions ro;
  ro.token_offset = off_a;
  const auto zero = low_rank_retune(dec, modal, "emotion", 0, 5, ro);
  CHECK(zero.decoder.W == dec.W);
  CHECK(zero.decoder.b == dec.b);
  CHECK(zero.decoder.context == dec.context);

  const auto fit = low_rank_retune(dec, modal, "emotion", 1, 5, ro);
  const auto a0 = attribute_forced_choice(dec, modal, "emotion", off_a);
  const auto a1 = attribute_forced_choice(fit.decoder, modal, "emotion", off_a);
  CHECK(a1.cross_entropy < a0.cross_entropy);
  const auto b0 = attribute_forced_choice(dec, modal, "speaker", off_b);
  const auto b1 = attribute_forced_choice(fit.decoder, modal, "speaker", off_b);
  CHECK(std::abs(b1.cross_entropy - b0.cross_entropy) <= 0.05);
  CHECK_THROWS_AS(low_rank_retune(dec, modal, "emotion", 10000, 5, ro), PreconditionError);
}

TEST_CASE("full-rank retune reaches the unconstrained refit") {
  const SynthConfig cfg = retune_fixture_config();
  const auto pair = generate_pair(cfg);
  DecoderTrainOptions o = sweep_decoder_options();
  o.vocab = decoder_vocab(cfg);
  const ToyDecoder dec = train_decoder(pair.laws.text(), 22, o).decoder;
  RetuneOptions ro;
  ro.token_offset = attribute_token_offset(cfg, "emotion");
  ro.max_epochs = 20000;
  ro.grad_tol = 1e-9;
  const int rank = std::min(dec.vocab(), dec.dims());
  const auto low = low_rank_retune(dec, pair.laws.modal(), "emotion", rank, 6, ro);
  const auto full = refit_attribute_head(dec, pair.laws.modal(), "emotion", ro);
  CHECK(std::abs(low.loss - full.loss) <= 0.02);
}

TEST_CASE("frozen hidden layer keeps its random initialization") {
  std::mt19937_64 rng(10);
  const int n = 64;
  LabelVector y(n), c(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 3;
    c[i] = i % 2;
  }
  const auto set = oracle::make_set(oracle::gaussian(n, 4, rng), {{"target", y}, {"context", c}}, y);
  DecoderTrainOptions o;
  o.hidden = 8;
  o.train_hidden = false;
  o.max_epochs = 30;
  const auto a = train_decoder(set, 3, o);
  o.max_epochs = 0;
  const auto init = train_decoder(set, 3, o);
  CHECK(a.decoder.hidden_w == init.decoder.hidden_w);
  CHECK(a.decoder.hidden_b == init.decoder.hidden_b);
  CHECK(a.decoder.W != init.decoder.W);
}

TEST_CASE("decoder checkpoints round-trip") {
  std::mt19937_64 rng(11);
  const ToyDecoder dec = random_decoder(4, 3, 2, rng, 5);
  const auto dir = std::filesystem::temp_directory_path() / "gmilab_test_decoder_ckpt";
  std::filesystem::remove_all(dir);
  save_decoder(dec, dir);
  const ToyDecoder back = load_decoder(dir);
  CHECK(back.W == dec.W);
  CHECK(back.b == dec.b);
  CHECK(back.context == dec.context);
  CHECK(back.hidden_w == dec.hidden_w);
  CHECK(back.hidden_b == dec.hidden_b);
}
