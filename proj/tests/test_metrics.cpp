#include <doctest.h>

#include "codetect/geometry.hpp"
#include "codetect/metrics.hpp"
#include "codetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

using namespace codetect;

namespace {

/// Naive re-implementation of the whole evaluation protocol, written for
/// clarity instead of speed: explicit cross-scene confidence sort, linear
/// scans for the greedy match, and step-by-step envelope integration. Kept
/// independent so shared bugs with the production code are unlikely.
double ap_oracle(const std::vector<std::vector<ScoredBox>>& preds,
                 const std::vector<std::vector<ObjectLabel>>& gts, int cls, double thr) {
    struct Entry {
        double conf;
        std::size_t scene;
        std::size_t idx;
    };
    std::vector<Entry> entries;
    for (std::size_t s = 0; s < preds.size(); ++s)
        for (std::size_t i = 0; i < preds[s].size(); ++i)
            if (preds[s][i].class_id == cls) entries.push_back({preds[s][i].confidence, s, i});
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.conf > b.conf;
    });

    int n_gt = 0;
    std::vector<std::vector<bool>> taken(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s) {
        taken[s].assign(gts[s].size(), false);
        for (const ObjectLabel& g : gts[s])
            if (g.class_id == cls) ++n_gt;
    }

    std::vector<bool> tp;
    for (const Entry& e : entries) {
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < gts[e.scene].size(); ++j) {
            if (gts[e.scene][j].class_id != cls || taken[e.scene][j]) continue;
            const double v = iou(preds[e.scene][e.idx].box, gts[e.scene][j].box);
            if (v > best) {
                best = v;
                best_j = j;
            }
        }
        if (best >= thr) {
            taken[e.scene][best_j] = true;
            tp.push_back(true);
        } else {
            tp.push_back(false);
        }
    }

    if (n_gt == 0) return tp.empty() ? -1.0 : 0.0; // -1 marks "class absent"
    std::vector<double> precision, recall;
    int tps = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (tp[i]) ++tps;
        precision.push_back(static_cast<double>(tps) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tps) / n_gt);
    }
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
        precision[static_cast<std::size_t>(i)] =
            std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i) + 1]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

/// Class-mean mAP at one threshold via the oracle above.
double map_oracle(const std::vector<std::vector<ScoredBox>>& preds,
                  const std::vector<std::vector<ObjectLabel>>& gts, double thr) {
    std::set<int> classes;
    for (const auto& sp : preds)
        for (const auto& p : sp) classes.insert(p.class_id);
    for (const auto& sg : gts)
        for (const auto& g : sg) classes.insert(g.class_id);
    double sum = 0.0;
    int n = 0;
    for (const int c : classes) {
        const double ap = ap_oracle(preds, gts, c, thr);
        if (ap >= 0.0) {
            sum += ap;
            ++n;
        }
    }
    return n > 0 ? sum / n : 0.0;
}

/// Largest one-to-one matching between same-class predictions and gts with
/// IoU >= thr, found by exhaustive recursion. The greedy matcher should
/// recover this TP count on small fixtures.
int optimal_tp_count(const std::vector<ScoredBox>& preds, const std::vector<ObjectLabel>& gts,
                     double thr) {
    std::vector<bool> used(gts.size(), false);
    const auto recurse = [&](auto&& self, std::size_t i) -> int {
        if (i == preds.size()) return 0;
        int best = self(self, i + 1); // leave prediction i unmatched
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (used[j] || gts[j].class_id != preds[i].class_id) continue;
            if (iou(preds[i].box, gts[j].box) < thr) continue;
            used[j] = true;
            best = std::max(best, 1 + self(self, i + 1));
            used[j] = false;
        }
        return best;
    };
    return recurse(recurse, 0);
}

Box random_box(Rng& rng) {
    const double w = rng.uniform(0.08, 0.5);
    const double h = rng.uniform(0.08, 0.5);
    return Box(rng.uniform(0.5 * w, 1.0 - 0.5 * w), rng.uniform(0.5 * h, 1.0 - 0.5 * h), w, h);
}

/// A scene of <= 5 boxes over <= 3 classes whose predictions are noisy
/// copies of the gts plus spurious extras, mimicking detector output.
void random_micro_fixture(Rng& rng, std::vector<ScoredBox>& preds,
                          std::vector<ObjectLabel>& gts) {
    preds.clear();
    gts.clear();
    const int n_gt = static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n_gt; ++i)
        gts.push_back({random_box(rng), static_cast<int>(rng.uniform_int(3))});
    for (const ObjectLabel& g : gts) {
        if (rng.uniform01() < 0.8) {
            Box noisy;
            if (Box::clipped_to_unit(g.box.cx + rng.normal(0.0, 0.04),
                                     g.box.cy + rng.normal(0.0, 0.04),
                                     g.box.w * std::exp(rng.normal(0.0, 0.1)),
                                     g.box.h * std::exp(rng.normal(0.0, 0.1)), noisy))
                preds.push_back(ScoredBox(noisy, g.class_id, rng.uniform(0.3, 1.0)));
        }
    }
    while (preds.size() < 5 && rng.uniform01() < 0.4)
        preds.push_back(
            ScoredBox(random_box(rng), static_cast<int>(rng.uniform_int(3)), rng.uniform01()));
}

} // namespace

TEST_CASE("match_predictions handles perfect, duplicate and threshold-edge cases") {
    const std::vector<ObjectLabel> gts{{Box(0.3, 0.3, 0.2, 0.2), 0}, {Box(0.7, 0.7, 0.2, 0.2), 1}};

    SUBCASE("exact predictions are all true positives") {
        const std::vector<ScoredBox> preds{ScoredBox(Box(0.3, 0.3, 0.2, 0.2), 0, 0.4),
                                           ScoredBox(Box(0.7, 0.7, 0.2, 0.2), 1, 0.9)};
        const auto tp = match_predictions(preds, gts, 0.5);
        REQUIRE(tp.size() == 2);
        CHECK(tp[0]);
        CHECK(tp[1]);
    }

    SUBCASE("second prediction on one gt is a false positive") {
        const std::vector<ScoredBox> preds{ScoredBox(Box(0.3, 0.3, 0.2, 0.2), 0, 0.6),
                                           ScoredBox(Box(0.31, 0.3, 0.2, 0.2), 0, 0.9)};
        const auto tp = match_predictions(preds, gts, 0.5);
        REQUIRE(tp.size() == 2);
        CHECK_FALSE(tp[0]); // lower confidence loses the gt
        CHECK(tp[1]);
    }

    SUBCASE("IoU below the threshold is a false positive") {
        // Sliding a 0.2-wide box by 0.076 gives IoU just under 0.45/1.0.
        const Box off(0.3 + 0.076, 0.3, 0.2, 0.2);
        REQUIRE(iou(off, gts[0].box) < 0.5);
        REQUIRE(iou(off, gts[0].box) > 0.4);
        const auto tp = match_predictions({ScoredBox(off, 0, 0.9)}, gts, 0.5);
        REQUIRE(tp.size() == 1);
        CHECK_FALSE(tp[0]);
    }
}

TEST_CASE("average_precision closed-form cases") {
    CHECK(average_precision({true, true, true}, 3) == doctest::Approx(1.0));
    CHECK(average_precision({}, 2) == doctest::Approx(0.0));
    CHECK(average_precision({false, false}, 0) == doctest::Approx(0.0));
    // [TP, FP, TP] over 2 gts: precisions (1, 1/2, 2/3), recalls
    // (1/2, 1/2, 1); envelope makes AP = 1/2 + 1/2 * 2/3.
    CHECK(average_precision({true, false, true}, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("evaluate perfect and empty detectors") {
    const std::vector<std::vector<ObjectLabel>> gts{
        {{Box(0.3, 0.3, 0.2, 0.2), 0}, {Box(0.7, 0.7, 0.2, 0.2), 1}},
        {{Box(0.5, 0.5, 0.3, 0.3), 1}}};

    std::vector<std::vector<ScoredBox>> perfect(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s)
        for (const ObjectLabel& g : gts[s]) perfect[s].push_back(ScoredBox(g.box, g.class_id, 1.0));

    const EvalResult full = evaluate(perfect, gts, coco_thresholds());
    CHECK(full.map50 == doctest::Approx(1.0));
    CHECK(full.map5095 == doctest::Approx(1.0));
    CHECK(full.counts.at(0).tp == 1);
    CHECK(full.counts.at(1).tp == 2);
    CHECK(full.counts.at(1).fp == 0);
    CHECK(full.counts.at(1).fn == 0);

    const EvalResult empty = evaluate({{}, {}}, gts, coco_thresholds());
    CHECK(empty.map50 == doctest::Approx(0.0));
    CHECK(empty.map5095 == doctest::Approx(0.0));
    CHECK(empty.counts.at(1).fn == 2);
}

TEST_CASE("evaluate matches the naive oracle on random micro-fixtures") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        const int n_scenes = 1 + static_cast<int>(rng.uniform_int(3));
        std::vector<std::vector<ScoredBox>> preds(static_cast<std::size_t>(n_scenes));
        std::vector<std::vector<ObjectLabel>> gts(static_cast<std::size_t>(n_scenes));
        bool any = false;
        for (int s = 0; s < n_scenes; ++s) {
            random_micro_fixture(rng, preds[static_cast<std::size_t>(s)],
                                 gts[static_cast<std::size_t>(s)]);
            any = any || !preds[static_cast<std::size_t>(s)].empty() ||
                  !gts[static_cast<std::size_t>(s)].empty();
        }
        if (!any) continue;
        for (const double thr : {0.5, 0.75}) {
            const EvalResult got = evaluate(preds, gts, {thr});
            CHECK(got.map50 == doctest::Approx(map_oracle(preds, gts, thr)).epsilon(1e-9));
        }
    }
}

TEST_CASE("greedy matching recovers the optimal TP count on small fixtures") {
    Rng rng(59);
    int scenes_checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoredBox> preds;
        std::vector<ObjectLabel> gts;
        random_micro_fixture(rng, preds, gts);
        if (preds.empty() || gts.empty()) continue;
        const auto tp = match_predictions(preds, gts, 0.5);
        const int greedy = static_cast<int>(std::count(tp.begin(), tp.end(), true));
        CHECK(greedy == optimal_tp_count(preds, gts, 0.5));
        ++scenes_checked;
    }
    CHECK(scenes_checked > 100);
}

TEST_CASE("AP is invariant under order-preserving confidence rescaling") {
    Rng rng(61);
    std::vector<std::vector<ScoredBox>> preds(2);
    std::vector<std::vector<ObjectLabel>> gts(2);
    random_micro_fixture(rng, preds[0], gts[0]);
    random_micro_fixture(rng, preds[1], gts[1]);
    const EvalResult before = evaluate(preds, gts, {0.5});
    for (auto& sp : preds)
        for (ScoredBox& p : sp) p.confidence *= 0.5; // halving preserves order
    const EvalResult after = evaluate(preds, gts, {0.5});
    CHECK(before.map50 == doctest::Approx(after.map50).epsilon(1e-12));
}

TEST_CASE("adding a duplicate false positive never raises any AP") {
    Rng rng(67);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<ScoredBox>> preds(1);
        std::vector<std::vector<ObjectLabel>> gts(1);
        random_micro_fixture(rng, preds[0], gts[0]);
        if (preds[0].empty()) continue;
        const EvalResult before = evaluate(preds, gts, {0.5});
        preds[0].push_back(preds[0][rng.uniform_int(preds[0].size())]);
        const EvalResult after = evaluate(preds, gts, {0.5});
        CHECK(after.map50 <= before.map50 + 1e-12);
    }
}

TEST_CASE("a single-threshold evaluate equals the multi-threshold machinery") {
    Rng rng(71);
    std::vector<std::vector<ScoredBox>> preds(3);
    std::vector<std::vector<ObjectLabel>> gts(3);
    for (int s = 0; s < 3; ++s)
        random_micro_fixture(rng, preds[static_cast<std::size_t>(s)],
                             gts[static_cast<std::size_t>(s)]);
    const EvalResult multi = evaluate(preds, gts, coco_thresholds());
    const EvalResult single = evaluate(preds, gts, {0.75});
    // Threshold index 5 of the canonical list is 0.75.
    for (const auto& [cls, aps] : multi.per_class_ap) {
        REQUIRE(aps.size() == 10);
        REQUIRE(single.per_class_ap.count(cls) == 1);
        CHECK(single.per_class_ap.at(cls)[0] == doctest::Approx(aps[5]).epsilon(1e-12));
    }
}
