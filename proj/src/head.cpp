#include "head.hpp"

namespace hpan::head {

namespace {

struct Lerp {
    int i0, i1;
    double w;  // weight of i1
};

Lerp lerp_coeff(int dst, int n_in, int n_out) {
    double f = (dst + 0.5) * double(n_in) / n_out - 0.5;
    f = std::clamp(f, 0.0, double(n_in - 1));
    Lerp l;
    l.i0 = int(f);
    l.i1 = std::min(l.i0 + 1, n_in - 1);
    l.w = f - l.i0;
    return l;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_same_shape(const std::vector<Vector>& pred, const std::vector<Vector>& gt) {
    require(pred.size() == gt.size(), ErrorKind::bad_shape, "loss: frame count mismatch");
    require(!pred.empty(), ErrorKind::invalid_argument, "loss: no frames");
    for (size_t t = 0; t < pred.size(); ++t)
        require(pred[t].size() == gt[t].size(), ErrorKind::bad_shape, "loss: pixel count mismatch");
}

std::vector<Vector> mask_vectors(const std::vector<Mask>& masks) {
    std::vector<Vector> out;
    for (const Mask& m : masks) out.push_back(mask_vector(m));
    return out;
}

}  // namespace

Vector bilinear_resample(const Vector& src, int h_in, int w_in, int h_out, int w_out) {
    if (h_in == h_out && w_in == w_out) return src;
    Vector dst(h_out * w_out);
    for (int y = 0; y < h_out; ++y) {
        Lerp ly = lerp_coeff(y, h_in, h_out);
        for (int x = 0; x < w_out; ++x) {
            Lerp lx = lerp_coeff(x, w_in, w_out);
            dst[y * w_out + x] = (1 - ly.w) * ((1 - lx.w) * src[ly.i0 * w_in + lx.i0] +
                                               lx.w * src[ly.i0 * w_in + lx.i1]) +
                                 ly.w * ((1 - lx.w) * src[ly.i1 * w_in + lx.i0] +
                                         lx.w * src[ly.i1 * w_in + lx.i1]);
        }
    }
    return dst;
}

Vector bilinear_resample_transpose(const Vector& d_dst, int h_in, int w_in, int h_out, int w_out) {
    if (h_in == h_out && w_in == w_out) return d_dst;
    Vector d_src = Vector::Zero(h_in * w_in);
    for (int y = 0; y < h_out; ++y) {
        Lerp ly = lerp_coeff(y, h_in, h_out);
        for (int x = 0; x < w_out; ++x) {
            Lerp lx = lerp_coeff(x, w_in, w_out);
            double g = d_dst[y * w_out + x];
            d_src[ly.i0 * w_in + lx.i0] += (1 - ly.w) * (1 - lx.w) * g;
            d_src[ly.i0 * w_in + lx.i1] += (1 - ly.w) * lx.w * g;
            d_src[ly.i1 * w_in + lx.i0] += ly.w * (1 - lx.w) * g;
            d_src[ly.i1 * w_in + lx.i1] += ly.w * lx.w * g;
        }
    }
    return d_src;
}

std::vector<Vector> decode(const bpam::HolisticAttention& ah, const HeadParams& params, int out_h,
                           int out_w, DecodeCache* cache) {
    const int c = int(ah.co.cols());
    require(params.proj.size() == 2 * c, ErrorKind::bad_shape, "head: proj must have 2C entries");
    require(out_h >= ah.layout.height && out_w >= ah.layout.width, ErrorKind::invalid_argument,
            "head: output dims must be >= grid dims");
    require(params.proj.allFinite() && std::isfinite(params.bias), ErrorKind::non_finite,
            "head: non-finite parameters");

    const int hw = ah.layout.height * ah.layout.width;
    Vector proj_co = params.proj.head(c);
    Vector proj_self = params.proj.tail(c);

    DecodeCache local;
    DecodeCache& cc = cache ? *cache : local;
    cc.logits_l3.clear();
    cc.probs_l3.clear();

    std::vector<Vector> preds;
    for (int f = 0; f < ah.layout.frames; ++f) {
        Vector logits = ah.co.middleRows(f * hw, hw) * proj_co +
                        ah.self.middleRows(f * hw, hw) * proj_self +
                        Vector::Constant(hw, params.bias);
        Vector probs(hw);
        for (int i = 0; i < hw; ++i) probs[i] = sigmoid(logits[i]);
        preds.push_back(
            bilinear_resample(probs, ah.layout.height, ah.layout.width, out_h, out_w));
        cc.logits_l3.push_back(std::move(logits));
        cc.probs_l3.push_back(std::move(probs));
    }
    return preds;
}

DecodeGrads decode_backward(const bpam::HolisticAttention& ah, const HeadParams& params, int out_h,
                            int out_w, const DecodeCache& cache,
                            const std::vector<Vector>& d_preds) {
    const int c = int(ah.co.cols());
    const int hw = ah.layout.height * ah.layout.width;
    Vector proj_co = params.proj.head(c);
    Vector proj_self = params.proj.tail(c);

    DecodeGrads g;
    g.d_proj = Vector::Zero(2 * c);
    g.d_co = Matrix::Zero(ah.co.rows(), c);
    g.d_self = Matrix::Zero(ah.self.rows(), c);

    for (int f = 0; f < ah.layout.frames; ++f) {
        Vector d_probs = bilinear_resample_transpose(d_preds[size_t(f)], ah.layout.height,
                                                     ah.layout.width, out_h, out_w);
        Vector d_logits(hw);
        for (int i = 0; i < hw; ++i) {
            double p = cache.probs_l3[size_t(f)][i];
            d_logits[i] = d_probs[i] * p * (1 - p);
        }
        g.d_proj.head(c) += ah.co.middleRows(f * hw, hw).transpose() * d_logits;
        g.d_proj.tail(c) += ah.self.middleRows(f * hw, hw).transpose() * d_logits;
        g.d_bias += d_logits.sum();
        g.d_co.middleRows(f * hw, hw) = d_logits * proj_co.transpose();
        g.d_self.middleRows(f * hw, hw) = d_logits * proj_self.transpose();
    }
    return g;
}

double ce_loss(const std::vector<Vector>& pred, const std::vector<Vector>& gt) {
    check_same_shape(pred, gt);
    double sum = 0;
    size_t n = 0;
    for (size_t t = 0; t < pred.size(); ++t) {
        for (int i = 0; i < pred[t].size(); ++i) {
            double p = std::clamp(pred[t][i], kCeClamp, 1 - kCeClamp);
            double y = gt[t][i];
            sum -= y * std::log(p) + (1 - y) * std::log(1 - p);
        }
        n += size_t(pred[t].size());
    }
    return sum / double(n);
}

std::vector<Vector> ce_loss_backward(const std::vector<Vector>& pred,
                                     const std::vector<Vector>& gt) {
    check_same_shape(pred, gt);
    size_t n = 0;
    for (const Vector& p : pred) n += size_t(p.size());
    std::vector<Vector> grads;
    for (size_t t = 0; t < pred.size(); ++t) {
        Vector g = Vector::Zero(pred[t].size());
        for (int i = 0; i < pred[t].size(); ++i) {
            double p = pred[t][i];
            if (p <= kCeClamp || p >= 1 - kCeClamp) continue;  // clamped region, zero slope
            double y = gt[t][i];
            g[i] = (-y / p + (1 - y) / (1 - p)) / double(n);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double iou_loss(const std::vector<Vector>& pred, const std::vector<Vector>& gt) {
    check_same_shape(pred, gt);
    double mean_iou = 0;
    for (size_t t = 0; t < pred.size(); ++t) {
        double inter = 0, uni = 0;
        for (int i = 0; i < pred[t].size(); ++i) {
            double p = pred[t][i], y = gt[t][i];
            inter += y * p;
            uni += y + p - y * p;
        }
        mean_iou += uni == 0 ? 1.0 : inter / uni;  // empty vs empty: perfect agreement
    }
    return 1.0 - mean_iou / double(pred.size());
}

std::vector<Vector> iou_loss_backward(const std::vector<Vector>& pred,
                                      const std::vector<Vector>& gt) {
    check_same_shape(pred, gt);
    const double t_inv = 1.0 / double(pred.size());
    std::vector<Vector> grads;
    for (size_t t = 0; t < pred.size(); ++t) {
        double inter = 0, uni = 0;
        for (int i = 0; i < pred[t].size(); ++i) {
            inter += gt[t][i] * pred[t][i];
            uni += gt[t][i] + pred[t][i] - gt[t][i] * pred[t][i];
        }
        Vector g = Vector::Zero(pred[t].size());
        if (uni > 0) {
            for (int i = 0; i < pred[t].size(); ++i) {
                double y = gt[t][i];
                // d(1 - I/U)/dp = -(y*U - I*(1-y)) / U^2, averaged over frames
                g[i] = -t_inv * (y * uni - inter * (1 - y)) / (uni * uni);
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double ce_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    return ce_loss(mask_vectors(pred), mask_vectors(gt));
}

double iou_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
    return iou_loss(mask_vectors(pred), mask_vectors(gt));
}

double proto_loss(const Matrix& p_h, double lambda_proto) {
    const int n = int(p_h.rows());
    require(n >= 2, ErrorKind::invalid_argument, "proto loss needs at least two prototypes");
    double sum = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            sum += pgam::cosine_similarity(p_h.row(i).transpose(), p_h.row(j).transpose());
        }
    return lambda_proto * sum / (double(n) * (n - 1));
}

Matrix proto_loss_backward(const Matrix& p_h, double lambda_proto) {
    const int n = int(p_h.rows());
    require(n >= 2, ErrorKind::invalid_argument, "proto loss needs at least two prototypes");
    const double w = lambda_proto / (double(n) * (n - 1));
    Matrix grad = Matrix::Zero(n, p_h.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Vector u = p_h.row(i).transpose();
            Vector v = p_h.row(j).transpose();
            Vector du = Vector::Zero(u.size());
            Vector dv = Vector::Zero(v.size());
            pgam::cosine_similarity_backward(u, v, w, du, dv);
            grad.row(i) += du.transpose();
            grad.row(j) += dv.transpose();
        }
    return grad;
}

LossReport total_loss(double ce, double iou, double proto, const LossWeights& weights) {
    require(weights.lambda_ce >= 0 && weights.lambda_iou >= 0 && weights.lambda_proto >= 0,
            ErrorKind::invalid_argument, "loss weights must be >= 0");
    LossReport r;
    r.ce = ce;
    r.iou = iou;
    r.proto = proto;
    r.total = weights.lambda_ce * ce + weights.lambda_iou * iou + weights.lambda_proto * proto;
    return r;
}

}  // namespace hpan::head
