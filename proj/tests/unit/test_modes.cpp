#include "gmilab/experiments.hpp"
#include "gmilab/modes.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace gmilab;

namespace {

Mat rows(std::initializer_list<std::initializer_list<double>> r) {
  Mat m(static_cast<long>(r.size()), static_cast<long>(r.begin()->size()));
  long i = 0;
  for (const auto& row : r) {
    long j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("identical laws give alignment 1 and no MS modes") {
  std::mt19937_64 rng(1);
  const Mat x = oracle::gaussian(50, 5, rng);
  const auto s = mode_alignment(x, x);
  for (double a : s.alignment) CHECK(a == doctest::Approx(1.0));
  CHECK(s.ms_modes().empty());
  CHECK(s.ms_variance_share == 0.0);
}

TEST_CASE("diag(1,1) against diag(1,0) gives alignments (1, 0)") {
  const Mat modal = rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  const Mat text = rows({{1, 0}, {-1, 0}, {0, 0}, {0, 0}});
  const auto s = mode_alignment(modal, text, 2);
  REQUIRE(s.alignment.size() == 2);
  const auto a = sorted(s.alignment);
  CHECK(a[0] == doctest::Approx(0.0));
  CHECK(a[1] == doctest::Approx(1.0));
  CHECK(s.ms_modes().size() == 1);
  CHECK(s.ms_variance_share == doctest::Approx(0.5));
}

TEST_CASE("alignment exceeds 1 when the text law has more variance on a shared mode") {
  const Mat modal = rows({{1, 0}, {-1, 0}, {0, 0.5}, {0, -0.5}});
  const Mat text = rows({{std::sqrt(2.0), 0}, {-std::sqrt(2.0), 0}, {0, 0.5}, {0, -0.5}});
  const auto s = mode_alignment(modal, text, 2);
  CHECK(s.alignment[0] == doctest::Approx(2.0));
  CHECK(s.alignment[1] == doctest::Approx(1.0));
}

TEST_CASE("mode_alignment rejects mismatched dimensionality") {
  CHECK_THROWS_AS(mode_alignment(Mat::Ones(3, 2), Mat::Ones(3, 3)), DimensionMismatchError);
}

TEST_CASE("alignment is invariant under a shared rotation") {
  std::mt19937_64 rng(2);
  Mat modal = oracle::gaussian(80, 4, rng);
  modal.col(0) *= 3.0;
  modal.col(1) *= 2.0;
  Mat text = oracle::gaussian(80, 4, rng);
  text.col(2) *= 0.1;
  const Eigen::HouseholderQR<Mat> qr(oracle::gaussian(4, 4, rng));
  const Mat q = qr.householderQ();
  const auto a = mode_alignment(modal, text);
  const auto b = mode_alignment(Mat(modal * q), Mat(text * q));
  for (std::size_t k = 0; k < a.alignment.size(); ++k)
    CHECK(b.alignment[k] == doctest::Approx(a.alignment[k]).epsilon(1e-8));
}

TEST_CASE("MS variance share is nondecreasing in the threshold") {
  std::mt19937_64 rng(3);
  Mat modal = oracle::gaussian(100, 6, rng);
  for (int j = 0; j < 6; ++j) modal.col(j) *= 1.0 + j;
  Mat text = oracle::gaussian(100, 6, rng);
  for (int j = 0; j < 6; ++j) text.col(j) *= 0.3 * (6 - j);
  double prev = -1.0;
  for (double t : {0.0, 0.05, 0.2, 0.5, 1.0, 2.0, 10.0, 100.0}) {
    const double share = mode_alignment(modal, text, 0, t).ms_variance_share;
    CHECK(share >= prev);
    prev = share;
  }
}

TEST_CASE("project_out examples, orthogonality and idempotence") {
  EigenBasis e;
  e.eigenvalues = Vec::Ones(2);
  e.eigenvectors = Mat::Identity(2, 2);
  const Mat z = rows({{1, 2}});
  CHECK(project_out(z, e, {}) == z);
  const Mat p = project_out(z, e, {0});
  CHECK(p(0, 0) == doctest::Approx(0.0));
  CHECK(p(0, 1) == doctest::Approx(2.0));
  CHECK(project_out(z, e, {0, 1}).norm() == doctest::Approx(0.0));

  std::mt19937_64 rng(4);
  const Mat x = oracle::gaussian(30, 6, rng);
  const auto basis = top_k_eigen(covariance(x), 6);
  const std::vector<std::size_t> set = {0, 2, 5};
  const Mat once = project_out(x, basis, set);
  const Mat twice = project_out(once, basis, set);
  CHECK((once - twice).cwiseAbs().maxCoeff() <= 1e-9);
  for (std::size_t k : set)
    for (long i = 0; i < x.rows(); ++i)
      CHECK(std::abs(once.row(i).dot(basis.eigenvectors.col(static_cast<long>(k)))) <= 1e-6 * x.row(i).norm());
}

TEST_CASE("ablation on the constructed non-aligned fixture") {
  const auto e = run_ablation_experiment(ablation_fixture_config(), 3, ablation_decoder_options());
  CHECK(e.none.delta_loss_pct == 0.0);
  CHECK(e.none.ablated_loss == e.none.base_loss);
  CHECK(e.ms_all.delta_loss_pct < 0.0);
  CHECK(std::abs(e.ta_matched.delta_loss_pct) < std::abs(e.ms_all.delta_loss_pct) / 5.0);
  CHECK(e.ta_matched.modes_removed == e.ms_all.modes_removed);
  CHECK(e.random.seeds.size() == 5);

  // Variance removed is recomputable from the spectrum.
  double removed = 0.0;
  for (std::size_t k : e.ms_all.removed) removed += e.spectrum.basis.eigenvalues(static_cast<long>(k));
  CHECK(e.ms_all.variance_removed_pct ==
        doctest::Approx(100.0 * removed / e.spectrum.basis.eigenvalues.sum()));
}

TEST_CASE("ablation without MS modes is a degenerate report, not an error") {
  SynthConfig cfg = ablation_fixture_config();
  cfg.ms_noise_scale = 0.0;
  const auto pair = generate_pair(cfg);
  DecoderTrainOptions o = ablation_decoder_options();
  o.vocab = std::max(o.vocab, decoder_vocab(cfg));
  const auto dec = train_decoder(pair.laws.text(), 1, o).decoder;
  const auto spectrum = mode_alignment(pair.laws.modal(), pair.laws.text());
  REQUIRE(spectrum.ms_modes().empty());
  const auto r = run_ablation(dec, pair.laws.modal(), spectrum, AblationCondition::ms_all);
  CHECK(r.degenerate);
  CHECK(r.modes_removed == 0);
  CHECK(r.delta_loss_pct == 0.0);
}
