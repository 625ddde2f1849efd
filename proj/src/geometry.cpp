#include "codetect/geometry.hpp"

#include "codetect/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace codetect {

namespace {

constexpr double kMinExtent = 1e-6;
constexpr double kCiouEps = 1e-9;

} // namespace

Box::Box(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {
    if (!(w > kMinExtent) || !(h > kMinExtent)) {
        std::ostringstream os;
        os << "degenerate box: w=" << w << " h=" << h << " (extents must exceed " << kMinExtent << ")";
        throw ConfigError(os.str());
    }
    const double ix1 = std::max(0.0, x1());
    const double iy1 = std::max(0.0, y1());
    const double ix2 = std::min(1.0, x2());
    const double iy2 = std::min(1.0, y2());
    if (!(ix2 - ix1 > 0.0) || !(iy2 - iy1 > 0.0)) {
        std::ostringstream os;
        os << "box (" << cx << "," << cy << "," << w << "," << h << ") lies outside the unit square";
        throw ConfigError(os.str());
    }
}

bool Box::clipped_to_unit(double cx, double cy, double w, double h, Box& out) {
    const double x1 = std::max(0.0, cx - 0.5 * w);
    const double y1 = std::max(0.0, cy - 0.5 * h);
    const double x2 = std::min(1.0, cx + 0.5 * w);
    const double y2 = std::min(1.0, cy + 0.5 * h);
    if (!(x2 - x1 > kMinExtent) || !(y2 - y1 > kMinExtent)) return false;
    out = Box(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
    return true;
}

ScoredBox::ScoredBox(const Box& b, int cls, double conf) : box(b), class_id(cls), confidence(conf) {
    if (cls < 0) throw ConfigError("negative class_id");
    if (!(conf >= 0.0 && conf <= 1.0)) throw ConfigError("confidence outside [0,1]");
}

double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

double ciou_loss(const Box& pred, const Box& target) {
    std::array<double, 4> unused;
    return ciou_loss_grad(pred, target, unused);
}

double ciou_loss_grad(const Box& pred, const Box& target, std::array<double, 4>& dpred) {
    // Work in corner coordinates of pred expressed through (cx,cy,w,h).
    const double px1 = pred.x1(), px2 = pred.x2(), py1 = pred.y1(), py2 = pred.y2();
    const double tx1 = target.x1(), tx2 = target.x2(), ty1 = target.y1(), ty2 = target.y2();

    // --- IoU and its derivative ------------------------------------------
    const double iw = std::min(px2, tx2) - std::max(px1, tx1);
    const double ih = std::min(py2, ty2) - std::max(py1, ty1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double inter = overlap ? iw * ih : 0.0;
    const double uni = pred.area() + target.area() - inter;
    const double iou_v = inter / uni;

    // d(iw)/d(px1,px2): active only on the pred side of min/max.
    double diw_dpx1 = 0.0, diw_dpx2 = 0.0, dih_dpy1 = 0.0, dih_dpy2 = 0.0;
    if (overlap) {
        if (px2 < tx2) diw_dpx2 = 1.0;
        if (px1 > tx1) diw_dpx1 = -1.0;
        if (py2 < ty2) dih_dpy2 = 1.0;
        if (py1 > ty1) dih_dpy1 = -1.0;
    }

    // Chain corner derivatives to center format: px1 = cx - w/2, px2 = cx + w/2.
    auto corner_to_center_x = [](double d1, double d2, double& dcx, double& dw) {
        dcx += d1 + d2;
        dw += 0.5 * (d2 - d1);
    };
    auto corner_to_center_y = [](double d1, double d2, double& dcy, double& dh) {
        dcy += d1 + d2;
        dh += 0.5 * (d2 - d1);
    };

    std::array<double, 4> diou = {0.0, 0.0, 0.0, 0.0}; // d(iou)/d(cx,cy,w,h)
    {
        // inter' and uni' w.r.t. each of the four center params.
        double dinter[4] = {0, 0, 0, 0};
        if (overlap) {
            double diw_dcx = 0, diw_dw = 0, dih_dcy = 0, dih_dh = 0;
            corner_to_center_x(diw_dpx1, diw_dpx2, diw_dcx, diw_dw);
            corner_to_center_y(dih_dpy1, dih_dpy2, dih_dcy, dih_dh);
            dinter[0] = diw_dcx * ih;
            dinter[1] = dih_dcy * iw;
            dinter[2] = diw_dw * ih;
            dinter[3] = dih_dh * iw;
        }
        const double darea[4] = {0.0, 0.0, pred.h, pred.w};
        for (int i = 0; i < 4; ++i) {
            const double duni = darea[i] - dinter[i];
            diou[i] = (dinter[i] * uni - inter * duni) / (uni * uni);
        }
    }

    // --- center distance over enclosing diagonal --------------------------
    const double dx = pred.cx - target.cx;
    const double dy = pred.cy - target.cy;
    const double rho2 = dx * dx + dy * dy;

    const double cw = std::max(px2, tx2) - std::min(px1, tx1);
    const double ch = std::max(py2, ty2) - std::min(py1, ty1);
    const double c2 = cw * cw + ch * ch;

    double dcw_dpx1 = (px1 < tx1) ? -1.0 : 0.0;
    double dcw_dpx2 = (px2 > tx2) ? 1.0 : 0.0;
    double dch_dpy1 = (py1 < ty1) ? -1.0 : 0.0;
    double dch_dpy2 = (py2 > ty2) ? 1.0 : 0.0;

    std::array<double, 4> dterm2 = {0, 0, 0, 0}; // d(rho2/c2)
    {
        double dcw_dcx = 0, dcw_dw = 0, dch_dcy = 0, dch_dh = 0;
        corner_to_center_x(dcw_dpx1, dcw_dpx2, dcw_dcx, dcw_dw);
        corner_to_center_y(dch_dpy1, dch_dpy2, dch_dcy, dch_dh);
        const double dc2[4] = {2.0 * cw * dcw_dcx, 2.0 * ch * dch_dcy, 2.0 * cw * dcw_dw, 2.0 * ch * dch_dh};
        const double drho2[4] = {2.0 * dx, 2.0 * dy, 0.0, 0.0};
        for (int i = 0; i < 4; ++i) {
            dterm2[i] = (drho2[i] * c2 - rho2 * dc2[i]) / (c2 * c2);
        }
    }

    // --- aspect-ratio term -------------------------------------------------
    const double q = std::atan2(target.w, target.h) - std::atan2(pred.w, pred.h);
    const double four_over_pi2 = 4.0 / (M_PI * M_PI);
    const double v = four_over_pi2 * q * q;
    const double denom_wh = pred.w * pred.w + pred.h * pred.h;
    // d(atan(w/h))/dw = h/(w^2+h^2); /dh = -w/(w^2+h^2)
    std::array<double, 4> dv = {0.0, 0.0, -2.0 * four_over_pi2 * q * pred.h / denom_wh,
                                2.0 * four_over_pi2 * q * pred.w / denom_wh};

    const double alpha_den = (1.0 - iou_v) + v + kCiouEps;
    const double alpha = v / alpha_den;

    const double ciou = iou_v - rho2 / c2 - alpha * v;

    for (int i = 0; i < 4; ++i) {
        const double dalpha = (dv[i] * ((1.0 - iou_v) + kCiouEps) + v * diou[i]) / (alpha_den * alpha_den);
        const double dciou = diou[i] - dterm2[i] - (dalpha * v + alpha * dv[i]);
        dpred[i] = -dciou;
    }
    return 1.0 - ciou;
}

std::vector<std::size_t> nms_indices(const std::vector<ScoredBox>& candidates,
                                     double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
        throw ConfigError("nms iou_threshold must lie in (0,1)");
    }
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].confidence != candidates[b].confidence)
            return candidates[a].confidence > candidates[b].confidence;
        if (candidates[a].class_id != candidates[b].class_id)
            return candidates[a].class_id < candidates[b].class_id;
        return a < b;
    });

    std::vector<std::size_t> kept;
    kept.reserve(candidates.size());
    for (const std::size_t idx : order) {
        const ScoredBox& cand = candidates[idx];
        bool suppressed = false;
        for (const std::size_t kidx : kept) {
            const ScoredBox& k = candidates[kidx];
            if (k.class_id == cand.class_id && iou(k.box, cand.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& candidates, double iou_threshold) {
    std::vector<ScoredBox> kept;
    kept.reserve(candidates.size());
    for (const std::size_t idx : nms_indices(candidates, iou_threshold)) {
        kept.push_back(candidates[idx]);
    }
    return kept;
}

} // namespace codetect
