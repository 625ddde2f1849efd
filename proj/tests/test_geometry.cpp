#include <doctest.h>

#include "codetect/common.hpp"
#include "codetect/geometry.hpp"
#include "codetect/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

using namespace codetect;

namespace {

Box random_box(Rng& rng) {
    const double w = rng.uniform(0.05, 0.6);
    const double h = rng.uniform(0.05, 0.6);
    const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
    const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
    return Box(cx, cy, w, h);
}

/// Straight-line transcription of the CIoU formula, kept deliberately naive
/// so it cannot share mistakes with the production implementation.
double ciou_loss_oracle(const Box& p, const Box& t) {
    const double ix1 = std::max(p.x1(), t.x1());
    const double iy1 = std::max(p.y1(), t.y1());
    const double ix2 = std::min(p.x2(), t.x2());
    const double iy2 = std::min(p.y2(), t.y2());
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double uni = p.area() + t.area() - inter;
    const double iou_v = inter / uni;

    const double cx1 = std::min(p.x1(), t.x1());
    const double cy1 = std::min(p.y1(), t.y1());
    const double cx2 = std::max(p.x2(), t.x2());
    const double cy2 = std::max(p.y2(), t.y2());
    const double c2 = (cx2 - cx1) * (cx2 - cx1) + (cy2 - cy1) * (cy2 - cy1);
    const double rho2 = (p.cx - t.cx) * (p.cx - t.cx) + (p.cy - t.cy) * (p.cy - t.cy);

    const double pi = 3.14159265358979323846;
    const double dv = std::atan(t.w / t.h) - std::atan(p.w / p.h);
    const double v = 4.0 / (pi * pi) * dv * dv;
    const double alpha = v / ((1.0 - iou_v) + v + 1e-9);
    return 1.0 - (iou_v - rho2 / c2 - alpha * v);
}

ScoredBox sb(double cx, double cy, double w, double h, int cls, double conf) {
    return ScoredBox(Box(cx, cy, w, h), cls, conf);
}

} // namespace

TEST_CASE("box construction rejects degenerate extents") {
    CHECK_NOTHROW(Box(0.5, 0.5, 0.2, 0.2));
    CHECK_THROWS_AS(Box(0.5, 0.5, 0.0, 0.2), ConfigError);
    CHECK_THROWS_AS(Box(0.5, 0.5, 0.2, 1e-7), ConfigError);
    CHECK_THROWS_AS(Box(0.5, 0.5, -0.1, 0.2), ConfigError);
    // Entirely outside the unit square: no clipped area left.
    CHECK_THROWS_AS(Box(2.0, 2.0, 0.2, 0.2), ConfigError);
}

TEST_CASE("clipped_to_unit trims overhang and rejects empty clips") {
    Box out;
    REQUIRE(Box::clipped_to_unit(0.0, 0.5, 0.4, 0.2, out));
    CHECK(out.x1() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.x2() == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(out.cy == doctest::Approx(0.5));
    CHECK_FALSE(Box::clipped_to_unit(3.0, 0.5, 0.2, 0.2, out));
}

TEST_CASE("iou identity, disjoint and hand-computed overlap") {
    const Box b(0.5, 0.5, 0.2, 0.2);
    CHECK(iou(b, b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(iou(Box(0.1, 0.1, 0.1, 0.1), Box(0.9, 0.9, 0.1, 0.1)) == 0.0);
    // Half-offset squares: intersection 0.25*0.5, union 0.25+0.25-0.125.
    CHECK(iou(Box(0.25, 0.5, 0.5, 0.5), Box(0.5, 0.5, 0.5, 0.5)) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("iou is symmetric and bounded on random boxes") {
    Rng rng(31);
    for (int i = 0; i < 500; ++i) {
        const Box a = random_box(rng), b = random_box(rng);
        const double ab = iou(a, b);
        CHECK(ab == iou(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0 + 1e-12);
        CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("ciou_loss identity, concentric case and scalar oracle") {
    const Box t(0.5, 0.5, 0.3, 0.2);
    CHECK(ciou_loss(t, t) == doctest::Approx(0.0).epsilon(1e-12));

    // Concentric, same aspect ratio, half the linear size: v = 0, rho = 0,
    // so the loss collapses to 1 - IoU = 1 - 0.25.
    CHECK(ciou_loss(Box(0.5, 0.5, 0.2, 0.1), Box(0.5, 0.5, 0.4, 0.2)) ==
          doctest::Approx(0.75).epsilon(1e-9));

    CHECK(ciou_loss(Box(0.2, 0.2, 0.2, 0.2), Box(0.8, 0.8, 0.2, 0.2)) ==
          doctest::Approx(ciou_loss_oracle(Box(0.2, 0.2, 0.2, 0.2), Box(0.8, 0.8, 0.2, 0.2)))
              .epsilon(1e-9));

    Rng rng(37);
    for (int i = 0; i < 500; ++i) {
        const Box p = random_box(rng), t2 = random_box(rng);
        const double l = ciou_loss(p, t2);
        CHECK(l >= 0.0);
        CHECK(l == doctest::Approx(ciou_loss_oracle(p, t2)).epsilon(1e-9));
    }
}

TEST_CASE("ciou_loss_grad matches central finite differences") {
    Rng rng(41);
    const double step = 1e-5;
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
        const Box p = random_box(rng), t = random_box(rng);
        std::array<double, 4> grad{};
        const double val = ciou_loss_grad(p, t, grad);
        CHECK(val == doctest::Approx(ciou_loss(p, t)).epsilon(1e-12));
        const std::array<double, 4> coords{p.cx, p.cy, p.w, p.h};
        for (int d = 0; d < 4; ++d) {
            std::array<double, 4> lo = coords, hi = coords;
            lo[static_cast<std::size_t>(d)] -= step;
            hi[static_cast<std::size_t>(d)] += step;
            const double f_lo = ciou_loss(Box(lo[0], lo[1], lo[2], lo[3]), t);
            const double f_hi = ciou_loss(Box(hi[0], hi[1], hi[2], hi[3]), t);
            const double fd = (f_hi - f_lo) / (2.0 * step);
            const double denom = std::max({std::abs(fd), std::abs(grad[static_cast<std::size_t>(d)]), 1e-3});
            CHECK(std::abs(grad[static_cast<std::size_t>(d)] - fd) / denom < 1e-4);
            ++checked;
        }
    }
    CHECK(checked == 400);
}

TEST_CASE("nms drops dominated same-class duplicates and keeps other classes") {
    const Box b1(0.5, 0.5, 0.3, 0.3);
    const Box b2(0.52, 0.5, 0.3, 0.3); // IoU with b1 well above 0.45
    REQUIRE(iou(b1, b2) > 0.45);

    const auto same = nms({ScoredBox(b1, 0, 0.9), ScoredBox(b2, 0, 0.7)}, 0.45);
    REQUIRE(same.size() == 1);
    CHECK(same[0].confidence == 0.9);

    const auto cross = nms({ScoredBox(b1, 0, 0.9), ScoredBox(b2, 1, 0.7)}, 0.45);
    CHECK(cross.size() == 2);

    CHECK(nms({}, 0.45).empty());
}

TEST_CASE("nms output is confidence-ordered with deterministic ties") {
    // Equal confidences: smaller class_id first, then smaller input index.
    const auto kept = nms({sb(0.2, 0.2, 0.1, 0.1, 2, 0.5), sb(0.5, 0.5, 0.1, 0.1, 1, 0.5),
                           sb(0.8, 0.8, 0.1, 0.1, 1, 0.5)},
                          0.45);
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].class_id == 1);
    CHECK(kept[0].box.cx == doctest::Approx(0.5));
    CHECK(kept[1].class_id == 1);
    CHECK(kept[1].box.cx == doctest::Approx(0.8));
    CHECK(kept[2].class_id == 2);
}

TEST_CASE("nms subset, pairwise-IoU and idempotence properties") {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ScoredBox> cand;
        const int n = 2 + static_cast<int>(rng.uniform_int(12));
        for (int i = 0; i < n; ++i)
            cand.push_back(ScoredBox(random_box(rng), static_cast<int>(rng.uniform_int(3)),
                                     rng.uniform01()));
        const auto kept = nms(cand, 0.45);
        CHECK(kept.size() <= cand.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            for (std::size_t j = i + 1; j < kept.size(); ++j) {
                CHECK(kept[i].confidence >= kept[j].confidence);
                if (kept[i].class_id == kept[j].class_id)
                    CHECK(iou(kept[i].box, kept[j].box) <= 0.45 + 1e-12);
            }
        }
        const auto again = nms(kept, 0.45);
        REQUIRE(again.size() == kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            CHECK(again[i].box.cx == kept[i].box.cx);
            CHECK(again[i].confidence == kept[i].confidence);
        }
    }
}

TEST_CASE("nms_indices mirrors nms") {
    Rng rng(47);
    std::vector<ScoredBox> cand;
    for (int i = 0; i < 10; ++i)
        cand.push_back(
            ScoredBox(random_box(rng), static_cast<int>(rng.uniform_int(2)), rng.uniform01()));
    const auto kept = nms(cand, 0.45);
    const auto idx = nms_indices(cand, 0.45);
    REQUIRE(idx.size() == kept.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK(cand[idx[i]].box.cx == kept[i].box.cx);
        CHECK(cand[idx[i]].class_id == kept[i].class_id);
        CHECK(cand[idx[i]].confidence == kept[i].confidence);
    }
}
