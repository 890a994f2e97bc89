#pragma once

// Shared detection/segmentation stage: a small conv encoder-decoder yields a
// shrunk-text probability map and a feature map at 1/4 resolution; connected
// components of the thresholded map become word proposals; hard RoI masking
// pools per-word features for the LPN and the recognition heads.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "textmux/geometry.hpp"
#include "textmux/io.hpp"
#include "textmux/parameters.hpp"
#include "textmux/scenegen.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

struct TrunkConfig {
    double shrink_ratio = 0.5;       // r
    double binarize_threshold = 0.5;
    int feature_channels = 64;       // C of the feature map (paper scale: 256)
    int pooled_size = 16;            // S of the masked pooled feature (paper scale: 32)
    std::array<int, 5> encoder_widths = {16, 24, 32, 48, 64};  // conv1..conv5; conv6 emits C
    int min_component_pixels = 10;
    int stride = 4;  // feature map is H/stride x W/stride

    void validate() const {
        if (!(shrink_ratio > 0.0 && shrink_ratio < 1.0))
            throw std::invalid_argument("TrunkConfig: shrink ratio must be in (0,1)");
        if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
            throw std::invalid_argument("TrunkConfig: threshold must be in (0,1)");
        if (pooled_size < 4) throw std::invalid_argument("TrunkConfig: pooled size must be >= 4");
    }
};

// Inward offset by d = A(1-r^2)/L; nullopt marks a degenerate collapse.
inline std::optional<Polygon> shrink_polygon(const Polygon& poly, double shrink_ratio) {
    double area = polygon_area(poly);
    if (area <= 0.0) return std::nullopt;
    double d = shrink_distance(area, polygon_perimeter(poly), shrink_ratio);
    return inward_offset(poly, d);
}

struct Proposal {
    Polygon polygon;            // unclipped quad in image coordinates
    double confidence = 0.0;    // mean interior probability of the component
    std::vector<float> mask;    // binary mask at feature resolution
    int mask_height = 0, mask_width = 0;
    int id = 0;
};

template <class Real>
struct MaskedFeature {
    Tensor<Real> block;  // C x S x S, zero outside the proposal mask
    int source_id = 0;
};

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <class Real>
struct TrunkModel {
    TrunkConfig config;
    std::vector<Tensor<Real>> enc_w, enc_b;
    Tensor<Real> dec0_w, dec0_b, dec1_w, dec1_b;

    void init(ParameterSet<Real>& params, Rng& rng) {
        config.validate();
        const auto& ew = config.encoder_widths;
        std::array<int, 6> in = {1, ew[0], ew[1], ew[2], ew[3], ew[4]};
        std::array<int, 6> out = {ew[0], ew[1], ew[2], ew[3], ew[4], config.feature_channels};
        for (int i = 0; i < 6; ++i) {
            std::string base = "trunk/enc" + std::to_string(i) + "/";
            enc_w.push_back(params.add(base + "w", {out[i], in[i], 3, 3}, in[i] * 9, rng));
            enc_b.push_back(params.add(base + "b", {out[i]}, in[i] * 9, rng));
        }
        dec0_w = params.add("trunk/dec0/w", {ew[1], config.feature_channels, 3, 3},
                            config.feature_channels * 9, rng);
        dec0_b = params.add("trunk/dec0/b", {ew[1]}, config.feature_channels * 9, rng);
        dec1_w = params.add("trunk/dec1/w", {1, ew[1], 3, 3}, ew[1] * 9, rng);
        dec1_b = params.add("trunk/dec1/b", {1}, ew[1] * 9, rng);
    }

    struct Output {
        Tensor<Real> seg_prob;  // 1 x H x W probability map
        Tensor<Real> features;  // C x H/4 x W/4
    };

    Output forward(const GrayImage& img) const {
        if (img.height % config.stride != 0 || img.width % config.stride != 0)
            throw std::invalid_argument("trunk_forward: image size must be divisible by the stride");
        std::vector<Real> pixels(img.pixels.begin(), img.pixels.end());
        auto x = Tensor<Real>::constant({1, img.height, img.width}, std::move(pixels), "image");
        auto h0 = relu(conv2d(x, enc_w[0], enc_b[0], 1, 1));        // H
        auto h1 = relu(conv2d(h0, enc_w[1], enc_b[1], 2, 1));       // H/2
        auto h2 = relu(conv2d(h1, enc_w[2], enc_b[2], 1, 1));       // H/2
        auto h3 = relu(conv2d(h2, enc_w[3], enc_b[3], 2, 1));       // H/4
        auto h4 = relu(conv2d(h3, enc_w[4], enc_b[4], 1, 1));       // H/4
        auto feat = relu(conv2d(h4, enc_w[5], enc_b[5], 1, 1));     // C x H/4 x W/4
        auto d0 = relu(conv2d(upsample2x_nearest(feat), dec0_w, dec0_b, 1, 1));  // H/2
        auto d0s = add(d0, h1);  // skip connection
        auto logits = conv2d(upsample2x_nearest(d0s), dec1_w, dec1_b, 1, 1);     // 1 x H x W
        return {sigmoid(logits), feat};
    }
};

// ---------------------------------------------------------------------------
// segmentation targets and loss
// ---------------------------------------------------------------------------

struct SegTarget {
    std::vector<float> target;  // shrunk text regions as 0/1
    std::vector<float> weight;  // 0 inside illegible (don't-care) regions
    int height = 0, width = 0;
};

inline SegTarget build_seg_target(const std::vector<WordAnnotation>& words, int height, int width,
                                  double shrink_ratio) {
    SegTarget t;
    t.height = height;
    t.width = width;
    t.target.assign(static_cast<std::size_t>(height) * width, 0.f);
    t.weight.assign(static_cast<std::size_t>(height) * width, 1.f);
    for (const auto& w : words) {
        if (!w.legible) {
            rasterize_polygon(w.polygon(), height, width,
                              [&](int y, int x) { t.weight[static_cast<std::size_t>(y) * width + x] = 0.f; });
            continue;
        }
        auto shrunk = shrink_polygon(w.polygon(), shrink_ratio);
        if (!shrunk) continue;  // collapsed word is skipped in the target
        rasterize_polygon(*shrunk, height, width,
                          [&](int y, int x) { t.target[static_cast<std::size_t>(y) * width + x] = 1.f; });
    }
    return t;
}

// Pixelwise binary cross-entropy plus a dice term, equal weights; pixels with
// zero weight are excluded from both.
template <class Real>
Tensor<Real> segmentation_loss(const Tensor<Real>& pred_prob, const SegTarget& target) {
    if (pred_prob.size() != target.target.size())
        throw std::invalid_argument("segmentation_loss: shape mismatch");
    const Real eps = Real(1e-6);
    std::vector<Real> tv(target.target.begin(), target.target.end());
    std::vector<Real> wv(target.weight.begin(), target.weight.end());
    Real wsum = 0;
    for (Real w : wv) wsum += w;
    if (wsum <= 0) return Tensor<Real>::scalar(Real(0), "seg_loss");
    auto t = Tensor<Real>::constant(pred_prob.shape(), std::move(tv), "seg_target");
    auto w = Tensor<Real>::constant(pred_prob.shape(), std::move(wv), "seg_weight");

    auto p = clamp(pred_prob, eps, Real(1) - eps);
    auto one_minus_p = add_scalar(scale(p, Real(-1)), Real(1));
    auto one_minus_t = add_scalar(scale(t, Real(-1)), Real(1));
    auto ce = add(mul(t, log_op(p)), mul(one_minus_t, log_op(one_minus_p)));
    auto bce = scale(sum(mul(w, ce)), Real(-1) / wsum);

    auto pw = mul(w, pred_prob);
    auto num = add_scalar(scale(sum(mul(pw, t)), Real(2)), eps);
    auto den = add_scalar(add(sum(pw), sum(mul(w, t))), eps);
    auto dice = add_scalar(scale(div(num, den), Real(-1)), Real(1));
    return add(bce, dice);
}

// ---------------------------------------------------------------------------
// proposals
// ---------------------------------------------------------------------------

inline std::vector<Proposal> propose_regions(const std::vector<float>& seg_prob, int height,
                                             int width, const TrunkConfig& config) {
    std::vector<int> label(static_cast<std::size_t>(height) * width, -1);
    std::vector<Proposal> proposals;
    std::vector<std::pair<int, int>> stack;
    int next_id = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            std::size_t idx = static_cast<std::size_t>(y) * width + x;
            if (label[idx] >= 0 || seg_prob[idx] < config.binarize_threshold) continue;
            // flood-fill one 4-connected component in scan order
            std::vector<std::pair<int, int>> pixels;
            double prob_sum = 0;
            stack.clear();
            stack.push_back({y, x});
            label[idx] = next_id;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                pixels.push_back({cy, cx});
                prob_sum += seg_prob[static_cast<std::size_t>(cy) * width + cx];
                const int dy[4] = {-1, 1, 0, 0};
                const int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
                    std::size_t nidx = static_cast<std::size_t>(ny) * width + nx;
                    if (label[nidx] >= 0 || seg_prob[nidx] < config.binarize_threshold) continue;
                    label[nidx] = next_id;
                    stack.push_back({ny, nx});
                }
            }
            if (static_cast<int>(pixels.size()) < config.min_component_pixels) continue;
            // pixel corners -> min-area rectangle -> outward unclip
            std::vector<Point> corners;
            corners.reserve(pixels.size() * 4);
            for (auto [py, px] : pixels) {
                corners.push_back({static_cast<double>(px), static_cast<double>(py)});
                corners.push_back({static_cast<double>(px + 1), static_cast<double>(py)});
                corners.push_back({static_cast<double>(px), static_cast<double>(py + 1)});
                corners.push_back({static_cast<double>(px + 1), static_cast<double>(py + 1)});
            }
            Polygon rect = min_area_rect(corners);
            double d = unclip_distance(polygon_area(rect), polygon_perimeter(rect),
                                       config.shrink_ratio);
            Polygon quad = outward_offset(rect, d);

            Proposal prop;
            prop.polygon = quad;
            prop.confidence = prob_sum / static_cast<double>(pixels.size());
            prop.id = next_id;
            const int fh = height / config.stride, fw = width / config.stride;
            prop.mask_height = fh;
            prop.mask_width = fw;
            prop.mask.assign(static_cast<std::size_t>(fh) * fw, 0.f);
            Polygon scaled;
            for (const Point& p : quad)
                scaled.push_back({p.x / config.stride, p.y / config.stride});
            rasterize_polygon(scaled, fh, fw,
                              [&](int y2, int x2) { prop.mask[static_cast<std::size_t>(y2) * fw + x2] = 1.f; });
            if (std::count(prop.mask.begin(), prop.mask.end(), 1.f) == 0) continue;  // empty mask
            proposals.push_back(std::move(prop));
            ++next_id;
        }
    }
    return proposals;
}

// Mask for a known ground-truth quad at feature resolution.
inline Proposal proposal_from_polygon(const Polygon& poly, const TrunkConfig& config, int height,
                                      int width, int id = 0) {
    Proposal prop;
    prop.polygon = poly;
    prop.confidence = 1.0;
    prop.id = id;
    const int fh = height / config.stride, fw = width / config.stride;
    prop.mask_height = fh;
    prop.mask_width = fw;
    prop.mask.assign(static_cast<std::size_t>(fh) * fw, 0.f);
    Polygon scaled;
    for (const Point& p : poly) scaled.push_back({p.x / config.stride, p.y / config.stride});
    rasterize_polygon(scaled, fh, fw,
                      [&](int y, int x) { prop.mask[static_cast<std::size_t>(y) * fw + x] = 1.f; });
    if (std::count(prop.mask.begin(), prop.mask.end(), 1.f) == 0) {
        // degenerate at feature resolution: claim the nearest cell so tiny
        // words still pool
        double cx = 0, cy = 0;
        for (const Point& p : poly) {
            cx += p.x;
            cy += p.y;
        }
        int mx = std::clamp(static_cast<int>(cx / poly.size() / config.stride), 0, fw - 1);
        int my = std::clamp(static_cast<int>(cy / poly.size() / config.stride), 0, fh - 1);
        prop.mask[static_cast<std::size_t>(my) * fw + mx] = 1.f;
    }
    return prop;
}

// Hard RoI masking: multiply by the binary mask, crop the mask bounding box,
// bilinear-resample to S x S, then zero every cell whose nearest source
// pixel sits outside the mask.
template <class Real>
MaskedFeature<Real> roi_mask_pool(const Tensor<Real>& features, const Proposal& prop,
                                  int pooled_size) {
    const auto& shape = features.shape();
    if (shape.size() != 3 || shape[1] != prop.mask_height || shape[2] != prop.mask_width)
        throw std::invalid_argument("roi_mask_pool: proposal mask does not match feature extent");
    const int c = shape[0], h = shape[1], w = shape[2];
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (prop.mask[static_cast<std::size_t>(y) * w + x] != 0.f) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < y0) throw std::invalid_argument("roi_mask_pool: empty mask");

    std::vector<Real> full_mask(static_cast<std::size_t>(c) * h * w);
    for (int ic = 0; ic < c; ++ic)
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i)
            full_mask[static_cast<std::size_t>(ic) * h * w + i] = static_cast<Real>(prop.mask[i]);
    auto masked = mul(features, Tensor<Real>::constant({c, h, w}, std::move(full_mask), "roi_mask"));
    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    auto cropped = crop2d(masked, y0, x0, bh, bw);
    auto resized = bilinear_resize(cropped, pooled_size, pooled_size);

    // nearest-resampled indicator over the same bbox grid
    std::vector<Real> indicator(static_cast<std::size_t>(c) * pooled_size * pooled_size);
    for (int oy = 0; oy < pooled_size; ++oy) {
        double sy = (pooled_size > 1 && bh > 1)
                        ? static_cast<double>(oy) * (bh - 1) / (pooled_size - 1)
                        : 0.0;
        int iy = y0 + static_cast<int>(std::lround(sy));
        for (int ox = 0; ox < pooled_size; ++ox) {
            double sx = (pooled_size > 1 && bw > 1)
                            ? static_cast<double>(ox) * (bw - 1) / (pooled_size - 1)
                            : 0.0;
            int ix = x0 + static_cast<int>(std::lround(sx));
            Real inside = static_cast<Real>(prop.mask[static_cast<std::size_t>(iy) * w + ix]);
            for (int ic = 0; ic < c; ++ic)
                indicator[(static_cast<std::size_t>(ic) * pooled_size + oy) * pooled_size + ox] = inside;
        }
    }
    auto block = mul(resized, Tensor<Real>::constant({c, pooled_size, pooled_size},
                                                     std::move(indicator), "roi_indicator"));
    return {block, prop.id};
}

}  // namespace textmux
