#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cal/codec.hpp"
#include "cal/gmm.hpp"
#include "cal/loss.hpp"
#include "oracles.hpp"

#include <random>

using namespace cal;

namespace {

Heatmap random_map(std::mt19937_64& rng, const GridSpec& g, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  auto h = Heatmap::zeros(g);
  for (Eigen::Index i = 0; i < h.values.size(); ++i) h.values.data()[i] = u(rng);
  return h;
}

OffsetField random_field(std::mt19937_64& rng, const GridSpec& g, double lo, double hi) {
  auto o = OffsetField::zeros(g);
  o.dx = random_map(rng, g, lo, hi).values;
  o.dy = random_map(rng, g, lo, hi).values;
  return o;
}

// Pushes pred away from target so every residual has magnitude in
// [gap, ...) and stays clear of the kinks at 0 and +-1.
void keep_off_kinks(OffsetField& pred, const OffsetField& target, double gap) {
  auto fix = [&](Grid<double>& p, const Grid<double>& t) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double d = p.data()[i] - t.data()[i];
      for (double kink : {0.0, 1.0, -1.0})
        if (std::abs(d - kink) < gap) d = kink + (d >= kink ? gap : -gap);
      p.data()[i] = t.data()[i] + d;
    }
  };
  fix(pred.dx, target.dx);
  fix(pred.dy, target.dy);
}

JointTarget at(int k, double x, double y) { return {k, Vec2(x, y), Visibility::labeled_visible}; }

Batch random_batch(std::mt19937_64& rng, const GridSpec& g, int n, int k) {
  std::uniform_real_distribution<double> ux(0, g.width - 1), uy(0, g.height - 1);
  Batch b;
  b.grid = g;
  for (int i = 0; i < n; ++i) {
    Sample s;
    for (int j = 0; j < k; ++j) s.joints.push_back(at(j, ux(rng), uy(rng)));
    s.joints[0].visibility = Visibility::unlabeled;
    b.samples.push_back(s);
  }
  return b;
}

}  // namespace

TEST_CASE("heatmap_l2 examples") {
  const GridSpec g(7, 5, 4);
  std::mt19937_64 rng(1);
  const auto t = random_map(rng, g, 0, 1);
  const auto same = heatmap_l2(t, t);
  CHECK(same.value == 0.0);
  CHECK(same.gradient.isZero());

  // A single-cell map is the direct closed form; the grid minimum is 2x2,
  // so use a constant 2x2 map which averages to the same value.
  const GridSpec tiny(2, 2, 1);
  auto z = Heatmap::zeros(tiny);
  auto p = Heatmap::zeros(tiny);
  p.values.setConstant(3.0);
  const auto v = heatmap_l2(z, p);
  CHECK(v.value == 9.0);
  CHECK(v.gradient(0, 0) == doctest::Approx(6.0 / 4));
  CHECK_THROWS_AS(heatmap_l2(z, Heatmap::zeros(GridSpec(2, 2, 2))), std::invalid_argument);
}

TEST_CASE("binary_ce examples") {
  const GridSpec g(4, 2, 1);
  auto t = Heatmap::zeros(g);
  t.values.row(0).setOnes();
  CHECK(binary_ce(t, Heatmap::zeros(g)).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  auto z = Heatmap::zeros(g);
  z.values.row(0).setConstant(800.0);
  z.values.row(1).setConstant(-800.0);
  const auto sat = binary_ce(t, z);
  CHECK(sat.value == 0.0);
  CHECK(std::isfinite(sat.gradient.sum()));
  z.values.row(0).setConstant(-800.0);
  CHECK(binary_ce(t, z).value == doctest::Approx(800.0 / 2).epsilon(1e-12));
}

TEST_CASE("binary_ce matches the naive formula") {
  std::mt19937_64 rng(3);
  const GridSpec g(6, 5, 1);
  for (int t = 0; t < 20; ++t) {
    auto target = random_map(rng, g, 0, 1);
    target.values = (target.values > 0.5).cast<double>();
    const auto logits = random_map(rng, g, -6, 6);
    double ref = 0;
    for (Eigen::Index i = 0; i < target.values.size(); ++i)
      ref += oracle::bce(target.values.data()[i], logits.values.data()[i]);
    CHECK(binary_ce(target, logits).value == doctest::Approx(ref / target.values.size()).epsilon(1e-12));
  }
}

TEST_CASE("masked offset examples") {
  const GridSpec g(5, 5, 4);
  const auto target = OffsetField::zeros(g);
  auto pred = OffsetField::zeros(g);
  pred.dx(2, 2) = 0.5;
  pred.dy(2, 2) = -0.25;
  Grid<double> mask = Grid<double>::Zero(5, 5);
  const auto zero = offset_l1_masked(target, pred, mask);
  CHECK(zero.value == 0.0);
  CHECK(zero.grad_dx.isZero());
  mask(2, 2) = 1.0;
  CHECK(offset_l1_masked(target, pred, mask).value == doctest::Approx(0.75).epsilon(1e-11));
  pred.dx(2, 2) = 0.5;
  pred.dy(2, 2) = 2.0;
  // SmoothL1: 0.5 * 0.25 and 2 - 0.5.
  CHECK(offset_smooth_l1_masked(target, pred, mask).value == doctest::Approx(0.125 + 1.5).epsilon(1e-11));
  CHECK(offset_l2_masked(target, pred, mask).value == doctest::Approx(0.25 + 4.0).epsilon(1e-11));
  mask(0, 0) = -1.0;
  CHECK_THROWS_AS(offset_l1_masked(target, pred, mask), std::invalid_argument);
  CHECK(parse_offset_loss(to_string(OffsetLoss::smooth_l1)) == OffsetLoss::smooth_l1);
}

TEST_CASE("smooth L1 slope is continuous at the transition") {
  const GridSpec g(2, 2, 1);
  const auto target = OffsetField::zeros(g);
  Grid<double> mask = Grid<double>::Zero(2, 2);
  mask(0, 0) = 1.0;
  auto f = [&](double d) {
    auto p = OffsetField::zeros(g);
    p.dx(0, 0) = d;
    return offset_smooth_l1_masked(target, p, mask).value;
  };
  const double h = 1e-7;
  const double left = (f(1.0) - f(1.0 - h)) / h;
  const double right = (f(1.0 + h) - f(1.0)) / h;
  CHECK(std::abs(left - right) < 1e-6);
  CHECK(f(1.0) == doctest::Approx(oracle::smooth_l1(1.0)).epsilon(1e-11));
}

TEST_CASE("masked offset values match a direct oracle") {
  std::mt19937_64 rng(12);
  const GridSpec g(6, 5, 1);
  for (int t = 0; t < 30; ++t) {
    const auto target = random_field(rng, g, -3, 3);
    const auto pred = random_field(rng, g, -3, 3);
    const Grid<double> mask = random_map(rng, g, 0, 1).values;
    double l1 = 0, sl1 = 0, l2 = 0;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        const double a = pred.dx(y, x) - target.dx(y, x), b = pred.dy(y, x) - target.dy(y, x);
        l1 += mask(y, x) * (std::abs(a) + std::abs(b));
        sl1 += mask(y, x) * (oracle::smooth_l1(a) + oracle::smooth_l1(b));
        l2 += mask(y, x) * (a * a + b * b);
      }
    const double m = mask.sum();
    CHECK(offset_l1_masked(target, pred, mask).value == doctest::Approx(l1 / m).epsilon(1e-12));
    CHECK(offset_smooth_l1_masked(target, pred, mask).value == doctest::Approx(sl1 / m).epsilon(1e-12));
    CHECK(offset_l2_masked(target, pred, mask).value == doctest::Approx(l2 / m).epsilon(1e-12));
    // Uniform positive scaling of the mask leaves the normalized term unchanged.
    const Grid<double> scaled = 7.5 * mask;
    CHECK(offset_l1_masked(target, pred, scaled).value ==
          doctest::Approx(offset_l1_masked(target, pred, mask).value).epsilon(1e-12));
  }
}

TEST_CASE("single-map gradients match finite differences") {
  std::mt19937_64 rng(5);
  const GridSpec g(5, 4, 1);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const auto target = random_map(rng, g, 0, 1);
    auto pred = random_map(rng, g, -1, 2);
    const auto an = heatmap_l2(target, pred);
    auto bt = target;
    bt.values = (bt.values > 0.5).cast<double>();
    const auto ce = binary_ce(bt, pred);
    for (Eigen::Index i = 0; i < pred.values.size(); ++i) {
      double* x = pred.values.data() + i;
      worst = std::max(worst, oracle::rel_err(an.gradient.data()[i],
                                              oracle::central_diff([&] { return heatmap_l2(target, pred).value; }, x)));
      worst = std::max(worst, oracle::rel_err(ce.gradient.data()[i],
                                              oracle::central_diff([&] { return binary_ce(bt, pred).value; }, x)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("offset gradients match finite differences") {
  std::mt19937_64 rng(6);
  const GridSpec g(5, 4, 1);
  for (OffsetLoss kind : {OffsetLoss::l1, OffsetLoss::smooth_l1, OffsetLoss::l2}) {
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
      const auto target = random_field(rng, g, -3, 3);
      auto pred = random_field(rng, g, -3, 3);
      keep_off_kinks(pred, target, 1e-2);
      Grid<double> mask = random_map(rng, g, 0, 1).values;
      mask(1, 1) = 0.0;
      const auto an = offset_loss_masked(kind, target, pred, mask);
      auto value = [&] { return offset_loss_masked(kind, target, pred, mask).value; };
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        worst = std::max(worst, oracle::rel_err(an.grad_dx.data()[i], oracle::central_diff(value, pred.dx.data() + i)));
        worst = std::max(worst, oracle::rel_err(an.grad_dy.data()[i], oracle::central_diff(value, pred.dy.data() + i)));
      }
    }
    CAPTURE(to_string(kind));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("stage1 loss hand computation") {
  const GridSpec g(7, 7, 4);
  Batch b;
  b.grid = g;
  b.samples.push_back({{at(0, 3, 3)}, "s"});
  const auto t = encode_batch(b, HeatmapType::gaussian_weighted, {2.0, 4.0});
  const auto p = BatchPrediction::zeros(g, 1);
  double hm = 0, num = 0, den = 0;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) {
      const double d2 = (x - 3) * (x - 3) + (y - 3) * (y - 3);
      const double gw = d2 <= 16 ? std::exp(-d2 / 8) : 0.0;
      hm += gw * gw;
      num += gw * (std::abs(3.0 - x) + std::abs(3.0 - y));
      den += gw;
    }
  const auto r = stage1_loss(t, p, {1.0, OffsetLoss::l1});
  CHECK(r.heatmap_term == doctest::Approx(hm / 49).epsilon(1e-12));
  CHECK(r.offset_term == doctest::Approx(num / den).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(hm / 49 + num / den).epsilon(1e-12));
  const auto r2 = stage1_loss(t, p, {2.0, OffsetLoss::l1});
  CHECK(r2.offset_term == r.offset_term);
  CHECK(r2.total - r2.heatmap_term == doctest::Approx(2 * (r.total - r.heatmap_term)).epsilon(1e-14));
}

TEST_CASE("stage losses: reductions and invariants") {
  std::mt19937_64 rng(8);
  const GridSpec g(9, 7, 4);
  const Batch b = random_batch(rng, g, 3, 4);
  const auto t = encode_batch(b, HeatmapType::gaussian_weighted, {2.0, 3.0});
  BatchPrediction perfect;
  perfect.heatmaps = t.heatmaps;
  perfect.offsets = t.offsets;
  CHECK(stage1_loss(t, perfect, {}).total == 0.0);

  BatchPrediction p = BatchPrediction::zeros(g, t.size());
  for (std::size_t j = 0; j < t.size(); ++j) {
    p.heatmaps[j] = random_map(rng, g, 0, 1);
    p.offsets[j] = random_field(rng, g, -2, 2);
  }
  const auto s1 = stage1_loss(t, p, {});
  CHECK(s1.active == 9);
  CHECK(s1.total == doctest::Approx(s1.heatmap_term + s1.offset_term).epsilon(1e-15));
  CHECK(s1.total >= 0.0);

  // Masks equal to the target heatmaps reduce stage 2 to stage 1.
  MaskSet same{g, 4, "b", {}};
  for (const auto& h : t.heatmaps) same.masks.push_back(h.values);
  const auto s2 = stage2_loss(t, p, same, {});
  CHECK(s2.total == s1.total);
  CHECK(s2.grad_dx[5].isApprox(s1.grad_dx[5]));

  // Zero masks keep the heatmap term and drop the offset term.
  MaskSet zero{g, 4, "b", std::vector<Grid<double>>(t.size(), Grid<double>::Zero(7, 9))};
  const auto s0 = stage2_loss(t, p, zero, {});
  CHECK(s0.offset_term == 0.0);
  CHECK(s0.heatmap_term == s1.heatmap_term);

  // Inactive slots receive no gradient.
  CHECK(s1.grad_heatmap[0].isZero());
  CHECK(s1.grad_dx[4].isZero());

  CHECK_THROWS_AS(stage2_loss(t, p, MaskSet{g, 3, "b", same.masks}, {}), std::invalid_argument);
  CHECK_THROWS_AS(stage1_loss(t, p, {0.0, OffsetLoss::l1}), std::invalid_argument);
}

TEST_CASE("no labeled joints is an error") {
  const GridSpec g(5, 5, 4);
  Batch b;
  b.grid = g;
  b.samples.push_back({{JointTarget{0, Vec2(2, 2), Visibility::unlabeled}}, "u"});
  const auto t = encode_batch(b, HeatmapType::gaussian_weighted, {});
  CHECK_THROWS_AS(stage1_loss(t, BatchPrediction::zeros(g, 1), {}), std::invalid_argument);
}

TEST_CASE("stage gradients match finite differences") {
  std::mt19937_64 rng(44);
  const GridSpec g(6, 5, 4);
  GaussianMixture mix{{1.0}, {Vec2(0.2, -0.1)}, {0.7 * Eigen::Matrix2d::Identity()}};
  const auto stencil = sample_stencil(mix, 2);
  for (HeatmapType type : {HeatmapType::gaussian_weighted, HeatmapType::binary}) {
    for (OffsetLoss kind : {OffsetLoss::l1, OffsetLoss::smooth_l1, OffsetLoss::l2}) {
      double worst1 = 0, worst2 = 0;
      for (int t = 0; t < 50; ++t) {
        const Batch b = random_batch(rng, g, 2, 3);
        const auto tg = encode_batch(b, type, {1.5, 2.5});
        const auto masks = make_mask_set(stencil, b);
        BatchPrediction p = BatchPrediction::zeros(g, tg.size());
        for (std::size_t j = 0; j < tg.size(); ++j) {
          p.heatmaps[j] = random_map(rng, g, -1, 1.5);
          p.offsets[j] = random_field(rng, g, -3, 3);
          keep_off_kinks(p.offsets[j], tg.offsets[j], 1e-2);
        }
        const LossOptions opt{0.7, kind};
        const auto a1 = stage1_loss(tg, p, opt);
        const auto a2 = stage2_loss(tg, p, masks, opt);
        auto f1 = [&] { return stage1_loss(tg, p, opt).total; };
        auto f2 = [&] { return stage2_loss(tg, p, masks, opt).total; };
        // A handful of coordinates per instance across all three tensors.
        std::uniform_int_distribution<std::size_t> slot(0, tg.size() - 1);
        std::uniform_int_distribution<Eigen::Index> cell(0, g.cells() - 1);
        for (int probe = 0; probe < 6; ++probe) {
          const std::size_t j = slot(rng);
          const Eigen::Index c = cell(rng);
          double* h = p.heatmaps[j].values.data() + c;
          double* dx = p.offsets[j].dx.data() + c;
          double* dy = p.offsets[j].dy.data() + c;
          worst1 = std::max({worst1, oracle::rel_err(a1.grad_heatmap[j].data()[c], oracle::central_diff(f1, h)),
                             oracle::rel_err(a1.grad_dx[j].data()[c], oracle::central_diff(f1, dx)),
                             oracle::rel_err(a1.grad_dy[j].data()[c], oracle::central_diff(f1, dy))});
          worst2 = std::max({worst2, oracle::rel_err(a2.grad_heatmap[j].data()[c], oracle::central_diff(f2, h)),
                             oracle::rel_err(a2.grad_dx[j].data()[c], oracle::central_diff(f2, dx)),
                             oracle::rel_err(a2.grad_dy[j].data()[c], oracle::central_diff(f2, dy))});
        }
      }
      CAPTURE(to_string(type));
      CAPTURE(to_string(kind));
      CHECK(worst1 < 1e-4);
      CHECK(worst2 < 1e-4);
    }
  }
}
