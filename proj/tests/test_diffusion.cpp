#include <doctest.h>

#include <chrono>
#include <cmath>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "causaldiffrec/diffusion.hpp"

using namespace causaldiffrec;
using namespace causaldiffrec::diffusion;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

DenoiserParams small_denoiser(Index d, Index e, Index te, Index h, std::uint64_t seed, double scale = 0.3) {
  Engine rng = substream(seed, "denoiser");
  DenoiserParams p;
  p.time_embed_dim = te;
  p.w1 = scale * standard_normal(d + e + te, h, rng);
  p.b1 = scale * standard_normal(1, h, rng);
  p.w2 = scale * standard_normal(h, d, rng);
  p.b2 = scale * standard_normal(1, d, rng);
  return p;
}

// Denoiser that knows x0 and returns the noise consistent with x_t.
NoisePredictor oracle(const Matrix& x0, const NoiseSchedule& s) {
  return [x0, &s](const Matrix& x_t, int t) -> Matrix {
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    return (x_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
  };
}

}  // namespace

TEST_CASE("schedule closed forms") {
  const auto one = make_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar[1] == 0.5);
  const auto tiny = make_schedule(50, 1e-12, 1e-12);
  CHECK(tiny.alpha_bar[50] == doctest::Approx(1.0).epsilon(1e-9));
  const auto lin = make_schedule(10, 0.1, 0.2);
  CHECK(lin.beta[1] == doctest::Approx(0.1));
  CHECK(lin.beta[10] == doctest::Approx(0.2));
  CHECK(lin.alpha_bar[0] == 1.0);
  for (int t = 1; t <= 10; ++t) CHECK(lin.alpha_bar[t] < lin.alpha_bar[t - 1]);
  CHECK_THROWS_AS(make_schedule(0), Error);
  CHECK_THROWS_AS(make_schedule(1001), Error);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), Error);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), Error);
}

TEST_CASE("alpha_bar over 100 linear steps matches a 50-digit product") {
  const auto s = make_schedule(100, 1e-4, 0.02);
  Big prod = 1;
  const Big start("1e-4"), end("0.02");
  for (int t = 1; t <= 100; ++t) prod *= Big(1) - (start + Big(t - 1) / 99 * (end - start));
  const double exact = static_cast<double>(prod);
  CHECK(std::abs(s.alpha_bar[100] - exact) <= 1e-13 * exact);
}

TEST_CASE("q_sample at the ends of the schedule") {
  NoiseSchedule s;
  s.steps = 2;
  s.beta = {0.0, 0.0, 1.0};
  s.alpha = {1.0, 1.0, 0.0};
  s.alpha_bar = {1.0, 1.0, 0.0};
  Engine rng = substream(1, "q");
  const Matrix x0 = standard_normal(3, 2, rng), eps = standard_normal(3, 2, rng);
  CHECK(q_sample(x0, 1, eps, s) == x0);
  CHECK(q_sample(x0, 2, eps, s) == eps);
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), Error);
  CHECK_THROWS_AS(q_sample(x0, 3, eps, s), Error);
}

TEST_CASE("q_sample moments match the iterated forward chain") {
  const auto start = std::chrono::steady_clock::now();
  const auto s = make_schedule(100, 1e-4, 0.02);
  const double x0 = 1.3;
  const int n = 100000;
  Engine direct_rng = substream(2, "q-direct"), chain_rng = substream(2, "q-chain");
  const Matrix x0m = Matrix::Constant(n, 1, x0);
  const Matrix direct = q_sample(x0m, 100, standard_normal(n, 1, direct_rng), s);
  Matrix chain = x0m;
  for (int t = 1; t <= 100; ++t)
    chain = std::sqrt(s.alpha[t]) * chain + std::sqrt(s.beta[t]) * standard_normal(n, 1, chain_rng);

  auto moments = [](const Matrix& x) {
    const double m = x.mean();
    const double v = (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
    const double m4 = (x.array() - m).pow(4).mean();
    return std::array<double, 3>{m, v, m4};
  };
  const auto a = moments(direct), b = moments(chain);
  const double se_mean = std::sqrt(a[1] / n + b[1] / n);
  CHECK(std::abs(a[0] - b[0]) <= 3.0 * se_mean);
  // Standard error of a sample variance is sqrt((m4 - v^2) / n).
  const double se_var = std::sqrt((a[2] - a[1] * a[1]) / n + (b[2] - b[1] * b[1]) / n);
  CHECK(std::abs(a[1] - b[1]) <= 3.0 * se_var);
  // Both agree with the closed form.
  CHECK(std::abs(a[0] - std::sqrt(s.alpha_bar[100]) * x0) <= 3.0 * std::sqrt(a[1] / n));
  CHECK(std::abs(a[1] - (1.0 - s.alpha_bar[100])) <= 3.0 * std::sqrt((a[2] - a[1] * a[1]) / n));
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 60.0);
}

TEST_CASE("time embeddings are sin and cos halves") {
  const RowVector e = time_embedding(3, 4);
  CHECK(e[0] == doctest::Approx(std::sin(3.0)));
  CHECK(e[1] == doctest::Approx(std::sin(3.0 * 0.01)));
  CHECK(e[2] == doctest::Approx(std::cos(3.0)));
  CHECK(e[3] == doctest::Approx(std::cos(3.0 * 0.01)));
}

TEST_CASE("zero-weight denoiser predicts its output bias") {
  DenoiserParams p;
  p.time_embed_dim = 2;
  p.w1 = Matrix::Zero(3 + 1 + 2, 4);
  p.b1 = Matrix::Zero(1, 4);
  p.w2 = Matrix::Zero(4, 3);
  p.b2 = Matrix(1, 3);
  p.b2 << 0.1, -0.2, 0.3;
  const Matrix out = predict_noise(Matrix::Ones(5, 3), RowVector::Ones(1), 4, p);
  for (Index r = 0; r < 5; ++r) CHECK(out.row(r) == p.b2.row(0));
}

TEST_CASE("denoiser forward matches a hand-computed pass") {
  const auto p = small_denoiser(2, 1, 2, 3, 3);
  Matrix x(2, 2);
  x << 0.5, -1.0, 2.0, 0.25;
  RowVector z(1);
  z << 0.7;
  const int t = 5;
  const RowVector te = time_embedding(t, 2);
  Matrix expected(2, 2);
  for (Index r = 0; r < 2; ++r) {
    RowVector in(5);
    in << x(r, 0), x(r, 1), z(0), te(0), te(1);
    RowVector h = in * p.w1 + p.b1.row(0);
    for (Index j = 0; j < h.size(); ++j) h[j] = h[j] / (1.0 + std::exp(-h[j]));
    expected.row(r) = h * p.w2 + p.b2.row(0);
  }
  CHECK((predict_noise(x, z, t, p) - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(predict_noise(x, RowVector::Ones(2), t, p), Error);
}

TEST_CASE("final denoise step has no stochastic term") {
  const auto s = make_schedule(5);
  const auto p = small_denoiser(2, 1, 2, 3, 4);
  Engine r1 = substream(1, "a"), r2 = substream(2, "b");
  const Matrix x = Matrix::Constant(3, 2, 0.4);
  const RowVector z = RowVector::Constant(1, 0.2);
  const Matrix a = denoise_step(x, 1, z, p, s, r1), b = denoise_step(x, 1, z, p, s, r2);
  CHECK(a == b);
  const Matrix mean = (x - s.beta[1] / std::sqrt(1.0 - s.alpha_bar[1]) * predict_noise(x, z, 1, p)) /
                      std::sqrt(s.alpha[1]);
  CHECK((a - mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(denoise_step(x, 0, z, p, s, r1), Error);
}

TEST_CASE("posterior variance formula") {
  const auto s = make_schedule(10, 0.01, 0.05);
  CHECK(posterior_variance(1, s) == 0.0);
  CHECK(posterior_variance(4, s) ==
        doctest::Approx(s.beta[4] * (1 - s.alpha_bar[3]) / (1 - s.alpha_bar[4])).epsilon(1e-15));
}

TEST_CASE("a step with the true noise and a vanishing beta recovers x0") {
  const auto s = make_schedule(3, 1e-8, 1e-8);
  Engine rng = substream(5, "step");
  const Matrix x0 = standard_normal(4, 3, rng), eps = standard_normal(4, 3, rng);
  const Matrix x1 = q_sample(x0, 1, eps, s);
  CHECK((denoise_step(x1, 1, eps, s, nullptr) - x0).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("oracle denoiser round trip returns x0") {
  const auto s = make_schedule(100, 1e-4, 0.02);
  Engine rng = substream(6, "round-trip");
  const Matrix x0 = standard_normal(20, 8, rng);
  for (int start : {1, 10, 50, 100}) {
    const Matrix x_t = q_sample(x0, start, standard_normal(20, 8, rng), s);
    const Matrix back = reverse_sample(x_t, start, oracle(x0, s), s, nullptr);
    CHECK((back - x0).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("reverse sampling is deterministic per seed and single-step at T=1") {
  const auto s = make_schedule(8);
  const auto p = small_denoiser(3, 2, 4, 5, 7);
  Engine data = substream(7, "data");
  const Matrix x = standard_normal(6, 3, data);
  const RowVector z = standard_normal(1, 2, data).row(0);
  Engine a = substream(9, "rev"), b = substream(9, "rev");
  CHECK(reverse_sample(x, 8, z, p, s, a) == reverse_sample(x, 8, z, p, s, b));

  const auto one = make_schedule(1);
  Engine c = substream(1, "rev"), d = substream(2, "rev");
  const Matrix single = reverse_sample(x, 1, z, p, one, c);
  CHECK(single == reverse_sample(x, 1, z, p, one, d));
  CHECK(single == denoise_step(x, 1, predict_noise(x, z, 1, p), one, nullptr));

  // The tape version with the same zetas reproduces the plain chain.
  Engine e = substream(3, "rev");
  std::vector<Matrix> zetas(8);
  for (int t = 2; t <= 8; ++t) zetas[static_cast<std::size_t>(t - 1)] = standard_normal(6, 3, e);
  Matrix plain = x;
  for (int t = 8; t >= 1; --t)
    plain = denoise_step(plain, t, predict_noise(plain, z, t, p), s, t > 1 ? &zetas[static_cast<std::size_t>(t - 1)] : nullptr);
  ad::Tape tape;
  const auto vars = bind(tape, p, true);
  const auto out = reverse_sample(tape.constant(x), 8, tape.constant(Matrix(z)), vars, s, zetas);
  CHECK((out.value() - plain).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("non-finite latents abort with the step index") {
  const auto s = make_schedule(4);
  NoisePredictor bad = [](const Matrix& x, int t) -> Matrix {
    return t == 3 ? Matrix::Constant(x.rows(), x.cols(), std::nan("")) : Matrix::Zero(x.rows(), x.cols());
  };
  CHECK_THROWS_WITH_AS(reverse_sample(Matrix::Ones(2, 2), 4, bad, s, nullptr), doctest::Contains("step 3"), Error);
}

TEST_CASE("diffusion loss values") {
  const auto s = make_schedule(10);
  Engine rng = substream(8, "loss");
  const Matrix x0 = standard_normal(5, 2, rng), eps = standard_normal(5, 2, rng);

  // Exact-noise denoiser: zero weights with the bias set to the noise only
  // works for a single row, so use one.
  DenoiserParams exact;
  exact.time_embed_dim = 0;
  exact.w1 = Matrix::Zero(2, 1);
  exact.b1 = Matrix::Zero(1, 1);
  exact.w2 = Matrix::Zero(1, 2);
  exact.b2 = eps.topRows(1);
  CHECK(diffusion_loss(x0.topRows(1), RowVector(), exact, s, 4, eps.topRows(1)) == 0.0);

  // Fixed parameters against a hand computation.
  const auto p = small_denoiser(2, 1, 2, 3, 9);
  const RowVector z = RowVector::Constant(1, -0.3);
  const Matrix x_t = std::sqrt(s.alpha_bar[6]) * x0 + std::sqrt(1 - s.alpha_bar[6]) * eps;
  const double hand = (eps - predict_noise(x_t, z, 6, p)).squaredNorm() / 10.0;
  CHECK(diffusion_loss(x0, z, p, s, 6, eps) == doctest::Approx(hand).epsilon(1e-14));

  ad::Tape tape;
  const auto vars = bind(tape, p, true);
  CHECK(diffusion_loss(tape.constant(x0), tape.constant(Matrix(z)), vars, s, 6, eps).scalar() ==
        doctest::Approx(hand).epsilon(1e-14));
}

TEST_CASE("a zero predictor has expected loss one") {
  DenoiserParams zero;
  zero.time_embed_dim = 0;
  zero.w1 = Matrix::Zero(4, 2);
  zero.b1 = Matrix::Zero(1, 2);
  zero.w2 = Matrix::Zero(2, 4);
  zero.b2 = Matrix::Zero(1, 4);
  const auto s = make_schedule(20);
  Engine rng = substream(10, "zero-loss");
  // 10^5 noise draws spread over 25000 rows x 4 dimensions.
  const double loss = diffusion_loss(Matrix::Zero(25000, 4), RowVector(), zero, s, rng);
  CHECK(std::abs(loss - 1.0) < 0.02);
}
