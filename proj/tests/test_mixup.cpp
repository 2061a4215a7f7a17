#include "manifold_forge/mixup.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace manifold_forge;
using namespace manifold_forge::testing;

namespace {

Vector random_label(std::size_t classes, std::mt19937_64& rng) {
  return one_hot(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng), classes);
}

double plain_ce(const Model& m, std::span<const double> x, std::span<const double> y) {
  const Matrix z = m.forward(Matrix(1, x.size(), Vector(x.begin(), x.end())));
  Vector lp(z.cols());
  return softmax_cross_entropy(z.row(0), y, lp);
}

// Two Gaussian blobs per class in [0, 1]^4, four classes.
struct Blobs {
  Matrix x;
  std::vector<std::size_t> labels;
};

Blobs make_blobs(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.08);
  Blobs b{Matrix(n, 4), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 4;
    b.labels.push_back(c);
    for (std::size_t k = 0; k < 4; ++k) b.x(i, k) = std::clamp((k == c ? 0.75 : 0.25) + noise(rng), 0.0, 1.0);
  }
  return b;
}

ClassifierTrainOptions short_run() {
  ClassifierTrainOptions o;
  o.epochs = 4;
  o.batch_size = 16;
  o.learning_rate = 0.1;
  return o;
}

} // namespace

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  Vector lp(5), g(5);
  EXPECT_NEAR(softmax_cross_entropy(Vector(5, 0.3), one_hot(2, 5), lp, g), std::log(5.0), 1e-14);
  EXPECT_NEAR(g[2], 0.2 - 1.0, 1e-15);
  EXPECT_NEAR(g[0], 0.2, 1e-15);
}

TEST(CrossEntropy, StableForLargeLogits) {
  Vector lp(2);
  EXPECT_NEAR(softmax_cross_entropy(Vector{1000.0, 0.0}, one_hot(1, 2), lp), 1000.0, 1e-9);
}

TEST(Labels, Validation) {
  EXPECT_THROW(one_hot(3, 3), InvalidArgument);
  EXPECT_THROW(check_label_vector(Vector{0.5, 0.6}, 2), InvalidArgument);
  EXPECT_THROW(check_label_vector(Vector{1.5, -0.5}, 2), InvalidArgument);
  EXPECT_THROW(check_label_vector(Vector{1.0}, 2), InvalidArgument);
  EXPECT_NO_THROW(check_label_vector(Vector{0.3, 0.7}, 2));
}

TEST(MixupPairLoss, EndpointsArePlainCrossEntropy) {
  std::mt19937_64 rng(70);
  for (int rep = 0; rep < 20; ++rep) {
    const Model m = two_layer_model(4, 6, 3, rng);
    const Vector xi = random_vector(4, rng), xj = random_vector(4, rng);
    const Vector yi = random_label(3, rng), yj = random_label(3, rng);
    EXPECT_NEAR(mixup_pair_loss(m, xi, yi, xj, yj, 1.0).value, plain_ce(m, xi, yi), 1e-12);
    EXPECT_NEAR(mixup_pair_loss(m, xi, yi, xj, yj, 0.0).value, plain_ce(m, xj, yj), 1e-12);
  }
}

TEST(MixupPairLoss, RejectsBadInput) {
  std::mt19937_64 rng(71);
  const Model m = two_layer_model(2, 3, 2, rng);
  const Vector x{0.1, 0.2}, y{1.0, 0.0};
  EXPECT_THROW(mixup_pair_loss(m, x, y, x, y, 1.5), InvalidArgument);
  EXPECT_THROW(mixup_pair_loss(m, x, y, x, Vector{0.7, 0.7}, 0.5), InvalidArgument);
}

TEST(MixupPairLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> gamma(0.05, 0.95);
  for (int rep = 0; rep < 100; ++rep) {
    Model m = two_layer_model(4, 5, 3, rng);
    const Vector xi = random_vector(4, rng), xj = random_vector(4, rng);
    const Vector yi = random_label(3, rng), yj = random_label(3, rng);
    Vector g{gamma(rng)};
    const auto r = mixup_pair_loss(m, xi, yi, xj, yj, g[0]);
    const Vector fd_g = central_difference([&] { return mixup_pair_loss(m, xi, yi, xj, yj, g[0]).value; }, g, 1e-6);
    EXPECT_LT(relative_error(Vector{r.grad_gamma}, fd_g), 1e-5) << "rep " << rep;
    const Vector fd_p =
        central_difference([&] { return mixup_pair_loss(m, xi, yi, xj, yj, g[0]).value; }, m.params(), 1e-6);
    EXPECT_LT(relative_error(r.grad_params, fd_p), 1e-5) << "rep " << rep;
  }
}

TEST(AttackMixing, ConstraintsAndGuard) {
  std::mt19937_64 rng(73);
  for (const auto constraint : {GammaConstraint::UnitInterval, GammaConstraint::HalfInterval}) {
    MixupConfig cfg;
    cfg.constraint = constraint;
    cfg.attack.n_iters = 3;
    cfg.attack.monotone_guard = true;
    for (int rep = 0; rep < 20; ++rep) {
      const Model m = two_layer_model(4, 6, 3, rng);
      const Matrix xa = random_matrix(8, 4, rng), xb = random_matrix(8, 4, rng);
      Matrix ya(8, 3, 0.0), yb(8, 3, 0.0);
      for (std::size_t i = 0; i < 8; ++i) ya(i, i % 3) = 1.0, yb(i, (i + 1) % 3) = 1.0;
      Vector g1(8);
      for (double& g : g1) g = std::uniform_real_distribution<double>(cfg.lower(), 1.0)(rng);
      const auto before = mixup_batch_loss(m, xa, ya, xb, yb, g1).pair_loss;
      const auto stats = detail::attack_mixing(m, xa, ya, xb, yb, g1, cfg, 5.0);
      const auto after = mixup_batch_loss(m, xa, ya, xb, yb, g1).pair_loss;
      for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_GE(g1[i], cfg.lower());
        EXPECT_LE(g1[i], 1.0);
        EXPECT_GE(after[i], before[i]);
      }
      EXPECT_GE(stats.loss_after, stats.loss_before);
    }
  }
}

TEST(AttackMixing, ZeroIterationsLeaveGamma) {
  std::mt19937_64 rng(74);
  const Model m = two_layer_model(2, 3, 2, rng);
  const Matrix xa = random_matrix(2, 2, rng), xb = random_matrix(2, 2, rng);
  const Matrix y = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  Vector g1{0.3, 0.8};
  MixupConfig cfg;
  detail::attack_mixing(m, xa, y, xb, y, g1, cfg, 1.0);
  EXPECT_EQ(g1, (Vector{0.3, 0.8}));
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  std::mt19937_64 rng(75);
  const Model m = two_layer_model(4, 5, 3, rng);
  const Matrix x = random_matrix(10, 4, rng, 0.0, 1.0);
  const std::vector<std::size_t> labels(10, 1);
  EXPECT_EQ(fgsm_generate(m, x, labels, 0.0, 0.0, 1.0), x);
  EXPECT_THROW(fgsm_generate(m, x, labels, -0.1, 0.0, 1.0), InvalidArgument);
}

TEST(Fgsm, StaysInBallAndRange) {
  std::mt19937_64 rng(76);
  const Model m = two_layer_model(4, 5, 3, rng);
  const Matrix x = random_matrix(50, 4, rng, 0.0, 1.0);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 50; ++i) labels.push_back(i % 3);
  const Matrix adv = fgsm_generate(m, x, labels, 0.05, 0.0, 1.0);
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    EXPECT_LE(std::abs(adv.data()[i] - x.data()[i]), 0.05 + 1e-15);
    EXPECT_GE(adv.data()[i], 0.0);
    EXPECT_LE(adv.data()[i], 1.0);
  }
}

TEST(Fgsm, OneDimensionalLogisticMovesAgainstTheLabel) {
  // Logits (x, 0): raising x favors class 0, so for label 0 the loss falls with x.
  const Model m(ModelSpec{{1, 1, 1}, {layers::Linear{1, 2}}}, {1.0, 0.0, 0.0, 0.0});
  const Matrix x = Matrix::from_rows({{0.5}});
  const std::size_t label0[] = {0}, label1[] = {1};
  EXPECT_NEAR(fgsm_generate(m, x, label0, 0.1, 0.0, 1.0)(0, 0), 0.4, 1e-15);
  EXPECT_NEAR(fgsm_generate(m, x, label1, 0.1, 0.0, 1.0)(0, 0), 0.6, 1e-15);
}

TEST(ErrorRates, Examples) {
  const Model m(ModelSpec{{1, 1, 1}, {layers::Linear{1, 2}}}, {1.0, -1.0, 0.0, 0.0});
  // Positive x is class 0, negative class 1.
  const Matrix x = Matrix::from_rows({{0.5}, {-0.5}, {0.2}});
  const std::vector<std::size_t> labels{0, 1, 0};
  AdvEvalConfig adv{0.0, &m, -1.0, 1.0};
  const ErrorRates r = evaluate_error_rates(m, x, labels, adv);
  EXPECT_EQ(r.clean, 0.0);
  EXPECT_EQ(r.adversarial, r.clean);
  adv.epsilon = 0.3;
  EXPECT_NEAR(evaluate_error_rates(m, x, labels, adv).adversarial, 1.0 / 3.0, 1e-15);
  EXPECT_THROW(evaluate_error_rates(m, x, labels, AdvEvalConfig{}), InvalidArgument);
}

TEST(MixupTrain, ZeroWeightIsPlainTraining) {
  std::mt19937_64 data_rng(77);
  const Blobs b = make_blobs(64, data_rng);
  std::mt19937_64 init_rng(1);
  const Model init = two_layer_model(4, 8, 4, init_rng);
  MixupConfig erm;
  erm.lambda_w = 0.0;
  MixupConfig other = erm;
  other.alpha = 1.0;
  other.n_gamma = 3;
  other.attack.n_iters = 2;
  std::mt19937_64 r1(5), r2(5);
  const auto a = adversarial_mixup_train(b.x, b.labels, 4, init, erm, short_run(), r1);
  const auto c = adversarial_mixup_train(b.x, b.labels, 4, init, other, short_run(), r2);
  EXPECT_EQ(a.model.params(), c.model.params());
  EXPECT_TRUE(c.attacks.empty());
}

TEST(MixupTrain, ZeroIterationsIgnoreTheStepSize) {
  std::mt19937_64 data_rng(78);
  const Blobs b = make_blobs(64, data_rng);
  std::mt19937_64 init_rng(2);
  const Model init = two_layer_model(4, 8, 4, init_rng);
  MixupConfig a_cfg, b_cfg;
  b_cfg.attack.xi = 3.0;
  b_cfg.attack.monotone_guard = true;
  std::mt19937_64 r1(6), r2(6);
  const auto a = adversarial_mixup_train(b.x, b.labels, 4, init, a_cfg, short_run(), r1);
  const auto c = adversarial_mixup_train(b.x, b.labels, 4, init, b_cfg, short_run(), r2);
  EXPECT_EQ(a.model.params(), c.model.params());
  EXPECT_TRUE(a.attacks.empty());
}

TEST(MixupTrain, GuardedAttacksNeverLowerTheMixedLoss) {
  std::mt19937_64 data_rng(79);
  const Blobs b = make_blobs(64, data_rng);
  std::mt19937_64 rng(3);
  MixupConfig cfg;
  cfg.attack.n_iters = 3;
  cfg.attack.xi = 0.5;
  cfg.attack.monotone_guard = true;
  const auto res = adversarial_mixup_train(b.x, b.labels, 4, two_layer_model(4, 8, 4, rng), cfg, short_run(), rng);
  ASSERT_EQ(res.attacks.size(), 4u * 4u);
  for (const auto& s : res.attacks) EXPECT_GE(s.loss_after, s.loss_before);
}

TEST(MixupTrain, LearnsSeparableBlobsAndLogsHistory) {
  std::mt19937_64 data_rng(80);
  const Blobs train = make_blobs(200, data_rng), test = make_blobs(100, data_rng);
  std::mt19937_64 rng(4);
  const Model init = two_layer_model(4, 16, 4, rng);
  MixupConfig cfg;
  cfg.attack.n_iters = 2;
  ClassifierTrainOptions opt = short_run();
  opt.epochs = 15;
  const AdvEvalConfig adv{0.05, &init, 0.0, 1.0};
  const auto res = adversarial_mixup_train(train.x, train.labels, 4, init, cfg, opt, rng, &test.x, test.labels, &adv);
  ASSERT_EQ(res.history.size(), 15u);
  EXPECT_LE(res.history.back().clean_error, 0.05);
  EXPECT_TRUE(std::isfinite(res.history.back().adv_error));
  EXPECT_LT(res.history.back().train_loss, res.history.front().train_loss);
}

TEST(MixupTrain, Validation) {
  std::mt19937_64 rng(81);
  const Blobs b = make_blobs(8, rng);
  const Model m = two_layer_model(4, 3, 4, rng);
  MixupConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(adversarial_mixup_train(b.x, b.labels, 4, m, cfg, short_run(), rng), InvalidArgument);
  EXPECT_THROW(adversarial_mixup_train(b.x, b.labels, 3, m, MixupConfig{}, short_run(), rng), DimensionError);
  const std::vector<std::size_t> short_labels(3, 0);
  EXPECT_THROW(adversarial_mixup_train(b.x, short_labels, 4, m, MixupConfig{}, short_run(), rng), DimensionError);
}
