#pragma once

// Language Prediction Network: two 2x2 convolutions with a 2x2 max pool in
// between, then two fully connected layers, softmax over the script classes.

#include <string>
#include <vector>

#include "textmux/charset.hpp"
#include "textmux/parameters.hpp"
#include "textmux/tensor.hpp"

namespace textmux {

struct LpnConfig {
    int feature_channels = 256;  // C of the masked pooled feature
    int pooled_size = 32;        // S
    int conv1 = 32;
    int conv2 = 16;
    int fc_hidden = 32;
    int num_languages = 8;       // L

    void validate() const {
        if (num_languages < 2) throw std::invalid_argument("LpnConfig: need at least 2 languages");
        if (conv1 <= 0 || conv2 <= 0 || fc_hidden <= 0)
            throw std::invalid_argument("LpnConfig: widths must be positive");
        if ((pooled_size - 1) / 2 - 1 <= 0)
            throw std::invalid_argument("LpnConfig: pooled size too small for the conv stack");
    }

    LpnCountConfig count_config() const {
        return {feature_channels, pooled_size, conv1, conv2, fc_hidden, num_languages};
    }
};

template <class Real>
struct LanguagePosterior {
    Tensor<Real> logits;  // [L]
    Tensor<Real> probs;   // softmax of logits

    // ties break toward the lowest ordinal (std::max_element keeps the first)
    int argmax() const {
        const auto& v = probs.values();
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    }
};

template <class Real>
struct LpnModel {
    LpnConfig config;
    Tensor<Real> conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b;

    void init(ParameterSet<Real>& params, Rng& rng) {
        config.validate();
        const int c = config.feature_channels;
        conv1_w = params.add("lpn/conv1/w", {config.conv1, c, 2, 2}, c * 4, rng);
        conv1_b = params.add("lpn/conv1/b", {config.conv1}, c * 4, rng);
        conv2_w = params.add("lpn/conv2/w", {config.conv2, config.conv1, 2, 2}, config.conv1 * 4, rng);
        conv2_b = params.add("lpn/conv2/b", {config.conv2}, config.conv1 * 4, rng);
        int side = (config.pooled_size - 1) / 2 - 1;
        int flat = config.conv2 * side * side;
        fc1_w = params.add("lpn/fc1/w", {config.fc_hidden, flat}, flat, rng);
        fc1_b = params.add("lpn/fc1/b", {config.fc_hidden}, flat, rng);
        fc2_w = params.add("lpn/fc2/w", {config.num_languages, config.fc_hidden}, config.fc_hidden, rng);
        fc2_b = params.add("lpn/fc2/b", {config.num_languages}, config.fc_hidden, rng);
    }

    LanguagePosterior<Real> forward(const Tensor<Real>& pooled) const {
        if (pooled.shape() != std::vector<int>{config.feature_channels, config.pooled_size,
                                               config.pooled_size})
            throw std::invalid_argument("lpn_forward: feature size mismatch");
        auto h1 = relu(conv2d(pooled, conv1_w, conv1_b, 1, 0));
        auto p1 = maxpool2x2(h1);
        auto h2 = relu(conv2d(p1, conv2_w, conv2_b, 1, 0));
        auto flat = reshape(h2, {static_cast<int>(h2.size())});
        auto f1 = relu(linear(fc1_w, flat, fc1_b));
        auto logits = linear(fc2_w, f1, fc2_b);
        return {logits, softmax_vec(logits)};
    }
};

// Cross-entropy against the ground-truth script: -log p(l_gt).
template <class Real>
Tensor<Real> language_loss(const LanguagePosterior<Real>& posterior, ScriptId l_gt) {
    int gt = static_cast<int>(l_gt);
    if (gt < 0 || gt >= static_cast<int>(posterior.logits.size()))
        throw std::invalid_argument("language_loss: script ordinal out of range");
    return scale(pick(log_softmax_vec(posterior.logits), static_cast<std::size_t>(gt)), Real(-1));
}

}  // namespace textmux
