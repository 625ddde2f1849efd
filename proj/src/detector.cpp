#include "codetect/detector.hpp"

#include "codetect/common.hpp"
#include "codetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace codetect {

namespace {

constexpr std::uint64_t kStreamInit = 0x1417;
constexpr double kLogSizeClamp = 8.0;

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Same-center shape IoU used for prior preference.
double shape_iou(double w, double h, double pw, double ph) {
    const double inter = std::min(w, pw) * std::min(h, ph);
    return inter / (w * h + pw * ph - inter);
}

} // namespace

void ArchConfig::validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (grid < 1) throw ConfigError("grid must be >= 1");
    if (stage_channels.empty()) throw ConfigError("need at least one conv stage");
    for (const int c : stage_channels) {
        if (c < 1) throw ConfigError("stage channel counts must be >= 1");
    }
    if (priors.empty()) throw ConfigError("need at least one anchor prior");
    for (const auto& p : priors) {
        if (!(p[0] > 0.0 && p[1] > 0.0)) throw ConfigError("prior extents must be positive");
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
        throw ConfigError("leaky_slope must lie in [0,1)");
    int expect = grid;
    for (std::size_t s = 0; s < stage_channels.size(); ++s) expect *= 2;
    if (img_size != expect) {
        std::ostringstream os;
        os << "img_size " << img_size << " must equal grid * 2^stages = " << expect;
        throw ConfigError(os.str());
    }
}

Detector::Detector(const ArchConfig& arch) : arch_(arch) {
    arch_.validate();
    std::size_t off = 0;
    int in_c = arch_.in_channels;
    for (int s = 0; s < arch_.num_stages(); ++s) {
        LayerDesc d;
        d.in_c = in_c;
        d.out_c = arch_.stage_channels[s];
        d.ksize = 3;
        d.stride = 2;
        d.w_off = off;
        off += static_cast<std::size_t>(d.out_c) * d.in_c * d.ksize * d.ksize;
        d.b_off = off;
        off += static_cast<std::size_t>(d.out_c);
        d.name = "stage" + std::to_string(s);
        layers_.push_back(d);
        in_c = d.out_c;
    }
    LayerDesc head;
    head.in_c = in_c;
    head.out_c = arch_.head_channels();
    head.ksize = 1;
    head.stride = 1;
    head.w_off = off;
    off += static_cast<std::size_t>(head.out_c) * head.in_c;
    head.b_off = off;
    off += static_cast<std::size_t>(head.out_c);
    head.name = "head";
    layers_.push_back(head);
    params_.assign(off, 0.0);
}

void Detector::init_params(std::uint64_t seed) {
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const LayerDesc& d = layers_[li];
        Rng rng(derive_seed(seed, kStreamInit, li));
        const double fan_in = static_cast<double>(d.in_c) * d.ksize * d.ksize;
        const double bound = std::sqrt(6.0 / fan_in);
        const std::size_t n_w = static_cast<std::size_t>(d.out_c) * d.in_c * d.ksize * d.ksize;
        for (std::size_t i = 0; i < n_w; ++i) params_[d.w_off + i] = rng.uniform(-bound, bound);
        for (int i = 0; i < d.out_c; ++i) params_[d.b_off + i] = 0.0;
    }
}

const std::string& Detector::layer_of_param(std::size_t i) const {
    for (const LayerDesc& d : layers_) {
        if (i >= d.w_off && i < d.b_off + static_cast<std::size_t>(d.out_c)) return d.name;
    }
    throw UsageError("parameter index out of range");
}

Tensor3 Detector::forward(const Tensor3& input, ForwardCache* cache) const {
    if (input.c != arch_.in_channels || input.h != arch_.img_size || input.w != arch_.img_size) {
        std::ostringstream os;
        os << "forward: input shape (" << input.c << "," << input.h << "," << input.w
           << ") does not match arch (" << arch_.in_channels << "," << arch_.img_size << ","
           << arch_.img_size << ")";
        throw UsageError(os.str());
    }
    if (cache) cache->acts.clear();

    Tensor3 cur = input;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const LayerDesc& d = layers_[li];
        const bool is_head = li + 1 == layers_.size();
        const int pad = d.ksize / 2;
        const int out_n = (cur.h + 2 * pad - d.ksize) / d.stride + 1;
        Tensor3 out(d.out_c, out_n, out_n);
        for (int oc = 0; oc < d.out_c; ++oc) {
            const double* w = &params_[d.w_off + static_cast<std::size_t>(oc) * d.in_c * d.ksize * d.ksize];
            const double bias = params_[d.b_off + oc];
            for (int oy = 0; oy < out_n; ++oy) {
                for (int ox = 0; ox < out_n; ++ox) {
                    double acc = bias;
                    for (int ic = 0; ic < d.in_c; ++ic) {
                        for (int ky = 0; ky < d.ksize; ++ky) {
                            const int iy = oy * d.stride + ky - pad;
                            if (iy < 0 || iy >= cur.h) continue;
                            for (int kx = 0; kx < d.ksize; ++kx) {
                                const int ix = ox * d.stride + kx - pad;
                                if (ix < 0 || ix >= cur.w) continue;
                                acc += w[(ic * d.ksize + ky) * d.ksize + kx] * cur.at(ic, iy, ix);
                            }
                        }
                    }
                    out.at(oc, oy, ox) = acc;
                }
            }
        }
        if (!is_head) {
            for (double& v : out.data) {
                if (v < 0.0) v *= arch_.leaky_slope;
            }
        }
        if (cache) cache->acts.push_back(out);
        cur = std::move(out);
    }
    return cur;
}

void Detector::backward(const Tensor3& input, const ForwardCache& cache, const Tensor3& dout,
                        std::vector<double>& grad) const {
    if (cache.acts.size() != layers_.size()) {
        throw UsageError("backward: cache does not match a full forward pass");
    }
    if (grad.size() != params_.size()) throw UsageError("backward: grad size mismatch");

    Tensor3 delta = dout;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerDesc& d = layers_[li];
        const bool is_head = li + 1 == layers_.size();
        const Tensor3& out = cache.acts[li];
        if (!delta.same_shape(out)) throw UsageError("backward: delta shape mismatch");

        // Undo the activation (the head is linear). Post-activation sign
        // equals pre-activation sign for leaky slopes in [0,1).
        if (!is_head) {
            for (std::size_t i = 0; i < delta.data.size(); ++i) {
                if (out.data[i] <= 0.0) delta.data[i] *= arch_.leaky_slope;
            }
        }

        const Tensor3& in = li == 0 ? input : cache.acts[li - 1];
        const int pad = d.ksize / 2;
        Tensor3 din(in.c, in.h, in.w);
        din.fill(0.0);
        for (int oc = 0; oc < d.out_c; ++oc) {
            const double* w = &params_[d.w_off + static_cast<std::size_t>(oc) * d.in_c * d.ksize * d.ksize];
            double* gw = &grad[d.w_off + static_cast<std::size_t>(oc) * d.in_c * d.ksize * d.ksize];
            double gb = 0.0;
            for (int oy = 0; oy < delta.h; ++oy) {
                for (int ox = 0; ox < delta.w; ++ox) {
                    const double dv = delta.at(oc, oy, ox);
                    if (dv == 0.0) continue;
                    gb += dv;
                    for (int ic = 0; ic < d.in_c; ++ic) {
                        for (int ky = 0; ky < d.ksize; ++ky) {
                            const int iy = oy * d.stride + ky - pad;
                            if (iy < 0 || iy >= in.h) continue;
                            for (int kx = 0; kx < d.ksize; ++kx) {
                                const int ix = ox * d.stride + kx - pad;
                                if (ix < 0 || ix >= in.w) continue;
                                const std::size_t wi = (static_cast<std::size_t>(ic) * d.ksize + ky) * d.ksize + kx;
                                gw[wi] += dv * in.at(ic, iy, ix);
                                din.at(ic, iy, ix) += dv * w[wi];
                            }
                        }
                    }
                }
            }
            grad[d.b_off + oc] += gb;
        }
        delta = std::move(din);
    }
}

void decode_box(const Tensor3& raw, int cell_y, int cell_x, int a, const ArchConfig& arch,
                double& cx, double& cy, double& w, double& h) {
    const double tx = raw.at(head_channel(a, 0, arch), cell_y, cell_x);
    const double ty = raw.at(head_channel(a, 1, arch), cell_y, cell_x);
    double tw = raw.at(head_channel(a, 2, arch), cell_y, cell_x);
    double th = raw.at(head_channel(a, 3, arch), cell_y, cell_x);
    tw = std::clamp(tw, -kLogSizeClamp, kLogSizeClamp);
    th = std::clamp(th, -kLogSizeClamp, kLogSizeClamp);
    cx = (cell_x + sigmoid(tx)) / arch.grid;
    cy = (cell_y + sigmoid(ty)) / arch.grid;
    w = arch.priors[a][0] * std::exp(tw);
    h = arch.priors[a][1] * std::exp(th);
}

Assignment assign_anchors(const std::vector<Box>& boxes, const ArchConfig& arch) {
    const int A = arch.num_anchors();
    Assignment asg;
    asg.label_of_anchor.assign(static_cast<std::size_t>(arch.anchors_total()), -1);
    asg.anchor_of_label.assign(boxes.size(), -1);

    for (std::size_t j = 0; j < boxes.size(); ++j) {
        const Box& b = boxes[j];
        const int cell_x = std::clamp(static_cast<int>(std::floor(b.cx * arch.grid)), 0, arch.grid - 1);
        const int cell_y = std::clamp(static_cast<int>(std::floor(b.cy * arch.grid)), 0, arch.grid - 1);

        std::vector<int> pref(A);
        std::iota(pref.begin(), pref.end(), 0);
        std::vector<double> score(A);
        for (int a = 0; a < A; ++a) score[a] = shape_iou(b.w, b.h, arch.priors[a][0], arch.priors[a][1]);
        std::sort(pref.begin(), pref.end(), [&](int x, int y) {
            if (score[x] != score[y]) return score[x] > score[y];
            return x < y;
        });

        for (const int a : pref) {
            const int idx = anchor_index(cell_y, cell_x, a, arch);
            if (asg.label_of_anchor[idx] == -1) {
                asg.label_of_anchor[idx] = static_cast<int>(j);
                asg.anchor_of_label[j] = idx;
                ++asg.n_assigned;
                break;
            }
        }
    }
    return asg;
}

std::vector<ScoredBox> predict(const Detector& det, const Tensor3& input, double conf_threshold,
                               double nms_iou) {
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
        throw ConfigError("conf_threshold must lie in [0,1]");
    const ArchConfig& arch = det.arch();
    const Tensor3 raw = det.forward(input);

    std::vector<ScoredBox> cands;
    for (int cy = 0; cy < arch.grid; ++cy) {
        for (int cx = 0; cx < arch.grid; ++cx) {
            for (int a = 0; a < arch.num_anchors(); ++a) {
                const double obj = sigmoid(raw.at(head_channel(a, 4, arch), cy, cx));
                int best_cls = 0;
                double best_logit = raw.at(head_channel(a, 5, arch), cy, cx);
                for (int k = 1; k < arch.num_classes; ++k) {
                    const double z = raw.at(head_channel(a, 5 + k, arch), cy, cx);
                    if (z > best_logit) {
                        best_logit = z;
                        best_cls = k;
                    }
                }
                const double conf = obj * sigmoid(best_logit);
                if (conf < conf_threshold) continue;
                double bx, by, bw, bh;
                decode_box(raw, cy, cx, a, arch, bx, by, bw, bh);
                Box clipped;
                if (!Box::clipped_to_unit(bx, by, bw, bh, clipped)) continue;
                cands.emplace_back(clipped, best_cls, conf);
            }
        }
    }
    return nms(cands, nms_iou);
}

void sgd_step(Detector& det, SgdState& state, const std::vector<double>& grad, double lr,
              double momentum) {
    std::vector<double>& p = det.params();
    if (grad.size() != p.size()) throw UsageError("sgd_step: grad size mismatch");
    if (state.velocity.empty()) state.velocity.assign(p.size(), 0.0);
    if (state.velocity.size() != p.size()) throw UsageError("sgd_step: velocity size mismatch");

    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            std::ostringstream os;
            os << "non-finite gradient in layer " << det.layer_of_param(i)
               << " (parameter " << i << ")";
            throw RuntimeFailure(os.str());
        }
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        state.velocity[i] = momentum * state.velocity[i] + grad[i];
        p[i] -= lr * state.velocity[i];
    }
}

} // namespace codetect
