#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fan/ops.hpp"
#include "fan/optim.hpp"
#include "fan/rng.hpp"

namespace fan::nn {

enum class BlockKind { Bottleneck, Hierarchical };

struct BlockConfig {
    BlockKind kind = BlockKind::Hierarchical;
    int64_t in_channels = 0;
    int64_t out_channels = 0;
};

struct FanConfig {
    int num_stacks = 4;
    int hg_depth = 4;
    int64_t width = 256;
    int64_t num_landmarks = 68;
    int64_t in_channels = 3;  // 3 for FAN, 3+N for the guided network
    int64_t input_resolution = 256;
    BlockKind block = BlockKind::Hierarchical;

    int64_t heatmap_resolution() const { return input_resolution / 4; }
};

struct DepthRegressorConfig {
    int64_t num_landmarks = 68;
    int64_t trunk_width = 32;
    int64_t input_resolution = 256;

    int64_t in_channels() const { return 3 + num_landmarks; }
};

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
    Tensor<T> weight, bias;
    int64_t stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad_, bool with_bias,
           Rng& rng)
        : stride(stride_), pad(pad_) {
        weight = Tensor<T>::zeros({cout, cin, k, k}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
        for (int64_t i = 0; i < weight.numel(); ++i)
            weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        if (with_bias) bias = Tensor<T>::zeros({cout}, true);
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
        return conv2d(tape, x, weight, bias, stride, pad);
    }

    void params(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
    }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma, beta, running_mean, running_var;
    T momentum = T(0.1), eps = T(1e-5);

    BatchNorm2d() = default;
    explicit BatchNorm2d(int64_t channels) {
        gamma = Tensor<T>::full({channels}, T(1), true);
        beta = Tensor<T>::zeros({channels}, true);
        running_mean = Tensor<T>::zeros({channels});
        running_var = Tensor<T>::full({channels}, T(1));
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
        return batchnorm2d(tape, x, gamma, beta, running_mean, running_var, train, momentum,
                           eps);
    }

    void params(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
    void buffers(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".running_mean", running_mean);
        out.emplace_back(prefix + ".running_var", running_var);
    }
};

// Pre-activation residual block. Hierarchical kind concatenates three
// cascaded 3x3 branches of out/2, out/4, out/4 channels; bottleneck kind is
// the standard 1x1 -> 3x3 -> 1x1 with out/2 intermediate channels. The skip
// is the identity when in==out, otherwise batchnorm+relu+1x1 conv. Block
// convolutions carry no bias (the following batchnorm beta absorbs it).
template <typename T>
struct ConvBlock {
    BlockConfig cfg;
    BatchNorm2d<T> bn1, bn2, bn3, bn_skip;
    Conv2d<T> conv1, conv2, conv3, conv_skip;

    ConvBlock() = default;
    ConvBlock(const BlockConfig& cfg_, Rng& rng) : cfg(cfg_) {
        const int64_t in = cfg.in_channels, out = cfg.out_channels;
        if (in < 1 || out < 1)
            throw ConfigError(strcat_("block channels must be positive, got in=", in,
                                      " out=", out));
        if (cfg.kind == BlockKind::Hierarchical) {
            if (out % 4 != 0)
                throw ConfigError(strcat_("hierarchical block needs out_channels divisible by 4",
                                          ", got ", out));
            bn1 = BatchNorm2d<T>(in);
            conv1 = Conv2d<T>(in, out / 2, 3, 1, 1, false, rng);
            bn2 = BatchNorm2d<T>(out / 2);
            conv2 = Conv2d<T>(out / 2, out / 4, 3, 1, 1, false, rng);
            bn3 = BatchNorm2d<T>(out / 4);
            conv3 = Conv2d<T>(out / 4, out / 4, 3, 1, 1, false, rng);
        } else {
            if (out % 2 != 0)
                throw ConfigError(strcat_("bottleneck block needs even out_channels, got ", out));
            bn1 = BatchNorm2d<T>(in);
            conv1 = Conv2d<T>(in, out / 2, 1, 1, 0, false, rng);
            bn2 = BatchNorm2d<T>(out / 2);
            conv2 = Conv2d<T>(out / 2, out / 2, 3, 1, 1, false, rng);
            bn3 = BatchNorm2d<T>(out / 2);
            conv3 = Conv2d<T>(out / 2, out, 1, 1, 0, false, rng);
        }
        if (in != out) {
            bn_skip = BatchNorm2d<T>(in);
            conv_skip = Conv2d<T>(in, out, 1, 1, 0, false, rng);
        }
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
        Tensor<T> y1 = conv1.forward(tape, relu(tape, bn1.forward(tape, x, train)));
        Tensor<T> y2 = conv2.forward(tape, relu(tape, bn2.forward(tape, y1, train)));
        Tensor<T> y3 = conv3.forward(tape, relu(tape, bn3.forward(tape, y2, train)));
        Tensor<T> main = cfg.kind == BlockKind::Hierarchical
                             ? concat_channels(tape, {y1, y2, y3})
                             : y3;
        Tensor<T> skip = cfg.in_channels == cfg.out_channels
                             ? x
                             : conv_skip.forward(tape, relu(tape, bn_skip.forward(tape, x, train)));
        return add(tape, main, skip);
    }

    void params(NamedTensors<T>& out, const std::string& p) const {
        bn1.params(out, p + ".bn1");
        conv1.params(out, p + ".conv1");
        bn2.params(out, p + ".bn2");
        conv2.params(out, p + ".conv2");
        bn3.params(out, p + ".bn3");
        conv3.params(out, p + ".conv3");
        if (cfg.in_channels != cfg.out_channels) {
            bn_skip.params(out, p + ".bn_skip");
            conv_skip.params(out, p + ".conv_skip");
        }
    }
    void buffers(NamedTensors<T>& out, const std::string& p) {
        bn1.buffers(out, p + ".bn1");
        bn2.buffers(out, p + ".bn2");
        bn3.buffers(out, p + ".bn3");
        if (cfg.in_channels != cfg.out_channels) bn_skip.buffers(out, p + ".bn_skip");
    }
};

// Spatial size must stay even through every pooling level, including the
// innermost feature map, so the input has to be divisible by 2^(depth+1).
inline void validate_hourglass_input(int64_t size, int depth) {
    int64_t s = size;
    for (int level = 0; level <= depth; ++level) {
        if (s % 2 != 0)
            throw ConfigError(strcat_("hourglass input ", size, " is not divisible by 2^",
                                      depth, " with an even quotient (fails at level ", level,
                                      " with size ", s, ")"));
        s /= 2;
    }
}

// Recursive encoder-decoder. Each level: a skip block at the current
// resolution plus a pooled main branch (block, recurse-or-block, block,
// nearest-neighbor upsample), merged by addition.
template <typename T>
struct Hourglass {
    int depth = 0;
    int64_t width = 0;
    std::vector<ConvBlock<T>> skip_blocks, low1_blocks, low3_blocks;
    std::unique_ptr<ConvBlock<T>> innermost;

    Hourglass() = default;
    Hourglass(int depth_, int64_t width_, BlockKind kind, Rng& rng) : depth(depth_), width(width_) {
        if (depth < 1) throw ConfigError("hourglass depth must be >= 1");
        BlockConfig bc{kind, width, width};
        for (int l = 0; l < depth; ++l) {
            skip_blocks.emplace_back(bc, rng);
            low1_blocks.emplace_back(bc, rng);
            low3_blocks.emplace_back(bc, rng);
        }
        innermost = std::make_unique<ConvBlock<T>>(bc, rng);
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
        validate_hourglass_input(x.dim(2), depth);
        validate_hourglass_input(x.dim(3), depth);
        return forward_level(tape, x, 0, train);
    }

    void params(NamedTensors<T>& out, const std::string& p) const {
        for (int l = 0; l < depth; ++l) {
            const std::string lp = p + ".l" + std::to_string(l);
            skip_blocks[static_cast<size_t>(l)].params(out, lp + ".skip");
            low1_blocks[static_cast<size_t>(l)].params(out, lp + ".low1");
            low3_blocks[static_cast<size_t>(l)].params(out, lp + ".low3");
        }
        innermost->params(out, p + ".inner");
    }
    void buffers(NamedTensors<T>& out, const std::string& p) {
        for (int l = 0; l < depth; ++l) {
            const std::string lp = p + ".l" + std::to_string(l);
            skip_blocks[static_cast<size_t>(l)].buffers(out, lp + ".skip");
            low1_blocks[static_cast<size_t>(l)].buffers(out, lp + ".low1");
            low3_blocks[static_cast<size_t>(l)].buffers(out, lp + ".low3");
        }
        innermost->buffers(out, p + ".inner");
    }

private:
    Tensor<T> forward_level(Tape<T>* tape, const Tensor<T>& x, int level, bool train) {
        Tensor<T> up = skip_blocks[static_cast<size_t>(level)].forward(tape, x, train);
        Tensor<T> low = maxpool2x2(tape, x);
        low = low1_blocks[static_cast<size_t>(level)].forward(tape, low, train);
        low = level + 1 < depth ? forward_level(tape, low, level + 1, train)
                                : innermost->forward(tape, low, train);
        low = low3_blocks[static_cast<size_t>(level)].forward(tape, low, train);
        return add(tape, up, upsample_nearest2x(tape, low));
    }
};

// ---------------------------------------------------------------------------
// FAN
// ---------------------------------------------------------------------------

template <typename T>
struct FanModel {
    FanConfig cfg;
    Conv2d<T> stem_conv;
    BatchNorm2d<T> stem_bn;
    ConvBlock<T> stem_b1, stem_b2, stem_b3;
    struct Stack {
        Hourglass<T> hg;
        ConvBlock<T> top;
        Conv2d<T> conv_last;
        BatchNorm2d<T> bn_end;
        Conv2d<T> head;
        Conv2d<T> remap_feat, remap_heat;  // absent on the last stack
    };
    std::vector<Stack> stacks;

    FanModel() = default;
    FanModel(const FanConfig& cfg_, Rng& rng) : cfg(cfg_) {
        validate(cfg);
        const int64_t w = cfg.width;
        stem_conv = Conv2d<T>(cfg.in_channels, w / 4, 7, 2, 3, true, rng);
        stem_bn = BatchNorm2d<T>(w / 4);
        stem_b1 = ConvBlock<T>({cfg.block, w / 4, w / 2}, rng);
        stem_b2 = ConvBlock<T>({cfg.block, w / 2, w / 2}, rng);
        stem_b3 = ConvBlock<T>({cfg.block, w / 2, w}, rng);
        for (int s = 0; s < cfg.num_stacks; ++s) {
            Stack st;
            st.hg = Hourglass<T>(cfg.hg_depth, w, cfg.block, rng);
            st.top = ConvBlock<T>({cfg.block, w, w}, rng);
            st.conv_last = Conv2d<T>(w, w, 1, 1, 0, true, rng);
            st.bn_end = BatchNorm2d<T>(w);
            st.head = Conv2d<T>(w, cfg.num_landmarks, 1, 1, 0, true, rng);
            if (s + 1 < cfg.num_stacks) {
                st.remap_feat = Conv2d<T>(w, w, 1, 1, 0, true, rng);
                st.remap_heat = Conv2d<T>(cfg.num_landmarks, w, 1, 1, 0, true, rng);
            }
            stacks.push_back(std::move(st));
        }
    }

    static void validate(const FanConfig& cfg) {
        if (cfg.num_stacks < 1 || cfg.num_stacks > 4)
            throw ConfigError(strcat_("num_stacks must be in 1..4, got ", cfg.num_stacks));
        if (cfg.num_landmarks < 1)
            throw ConfigError("num_landmarks must be positive");
        if (cfg.in_channels != 3 && cfg.in_channels != 3 + cfg.num_landmarks)
            throw ConfigError(strcat_("in_channels must be 3 or 3+N=", 3 + cfg.num_landmarks,
                                      ", got ", cfg.in_channels));
        if (cfg.input_resolution % 4 != 0)
            throw ConfigError(strcat_("input_resolution must be divisible by 4 (stem), got ",
                                      cfg.input_resolution));
        const int64_t div = cfg.block == BlockKind::Hierarchical ? 8 : 4;
        if (cfg.width % div != 0)
            throw ConfigError(strcat_("width must be divisible by ", div, ", got ", cfg.width));
        validate_hourglass_input(cfg.heatmap_resolution(), cfg.hg_depth);
    }

    // Returns one [B,N,h,w] heatmap stack per hourglass, first to last.
    std::vector<Tensor<T>> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
            throw ConfigError(strcat_("fan input must be [B,", cfg.in_channels, ",",
                                      cfg.input_resolution, ",", cfg.input_resolution,
                                      "], got ", shape_str(x.shape())));
        Tensor<T> f = relu(tape, stem_bn.forward(tape, stem_conv.forward(tape, x), train));
        f = stem_b1.forward(tape, f, train);
        f = maxpool2x2(tape, f);
        f = stem_b2.forward(tape, f, train);
        f = stem_b3.forward(tape, f, train);

        std::vector<Tensor<T>> heatmaps;
        for (int s = 0; s < cfg.num_stacks; ++s) {
            Stack& st = stacks[static_cast<size_t>(s)];
            Tensor<T> h = st.hg.forward(tape, f, train);
            h = st.top.forward(tape, h, train);
            Tensor<T> ll = relu(tape, st.bn_end.forward(tape, st.conv_last.forward(tape, h), train));
            Tensor<T> heat = st.head.forward(tape, ll);
            heatmaps.push_back(heat);
            if (s + 1 < cfg.num_stacks) {
                f = add(tape, add(tape, f, st.remap_feat.forward(tape, ll)),
                        st.remap_heat.forward(tape, heat));
            }
        }
        return heatmaps;
    }

    void params(NamedTensors<T>& out) const {
        stem_conv.params(out, "stem.conv");
        stem_bn.params(out, "stem.bn");
        stem_b1.params(out, "stem.b1");
        stem_b2.params(out, "stem.b2");
        stem_b3.params(out, "stem.b3");
        for (int s = 0; s < cfg.num_stacks; ++s) {
            const std::string p = "stack" + std::to_string(s);
            const Stack& st = stacks[static_cast<size_t>(s)];
            st.hg.params(out, p + ".hg");
            st.top.params(out, p + ".top");
            st.conv_last.params(out, p + ".conv_last");
            st.bn_end.params(out, p + ".bn_end");
            st.head.params(out, p + ".head");
            if (s + 1 < cfg.num_stacks) {
                st.remap_feat.params(out, p + ".remap_feat");
                st.remap_heat.params(out, p + ".remap_heat");
            }
        }
    }
    void buffers(NamedTensors<T>& out) {
        stem_bn.buffers(out, "stem.bn");
        stem_b1.buffers(out, "stem.b1");
        stem_b2.buffers(out, "stem.b2");
        stem_b3.buffers(out, "stem.b3");
        for (int s = 0; s < cfg.num_stacks; ++s) {
            const std::string p = "stack" + std::to_string(s);
            Stack& st = stacks[static_cast<size_t>(s)];
            st.hg.buffers(out, p + ".hg");
            st.top.buffers(out, p + ".top");
            st.bn_end.buffers(out, p + ".bn_end");
        }
    }
};

// ---------------------------------------------------------------------------
// depth regressor
// ---------------------------------------------------------------------------

// Reduced residual trunk mapping (image + N heatmap channels) to one depth
// value per landmark. Same input/output contract as the full-size network it
// stands in for: [B,3+N,R,R] -> [B,N].
template <typename T>
struct DepthRegressor {
    DepthRegressorConfig cfg;
    Conv2d<T> stem_conv;
    BatchNorm2d<T> stem_bn;
    ConvBlock<T> b1, b2, b3;
    BatchNorm2d<T> bn_out;
    Tensor<T> fc_weight, fc_bias;

    DepthRegressor() = default;
    DepthRegressor(const DepthRegressorConfig& cfg_, Rng& rng) : cfg(cfg_) {
        if (cfg.num_landmarks < 1) throw ConfigError("num_landmarks must be positive");
        if (cfg.input_resolution % 16 != 0)
            throw ConfigError(strcat_("depth regressor input resolution must be divisible by 16",
                                      ", got ", cfg.input_resolution));
        const int64_t w = cfg.trunk_width;
        if (w % 4 != 0) throw ConfigError("trunk_width must be divisible by 4");
        stem_conv = Conv2d<T>(cfg.in_channels(), w, 7, 2, 3, true, rng);
        stem_bn = BatchNorm2d<T>(w);
        b1 = ConvBlock<T>({BlockKind::Bottleneck, w, w}, rng);
        b2 = ConvBlock<T>({BlockKind::Bottleneck, w, 2 * w}, rng);
        b3 = ConvBlock<T>({BlockKind::Bottleneck, 2 * w, 2 * w}, rng);
        bn_out = BatchNorm2d<T>(2 * w);
        fc_weight = Tensor<T>::zeros({cfg.num_landmarks, 2 * w}, true);
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * w));
        for (int64_t i = 0; i < fc_weight.numel(); ++i)
            fc_weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
        fc_bias = Tensor<T>::zeros({cfg.num_landmarks}, true);
    }

    // image [B,3,R,R] stacked with heatmaps [B,N,R,R] by the caller
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels())
            throw ConfigError(strcat_("depth regressor input must be [B,", cfg.in_channels(),
                                      ",R,R], got ", shape_str(x.shape())));
        if (x.dim(2) != x.dim(3) || x.dim(2) != cfg.input_resolution)
            throw ConfigError(strcat_("depth regressor spatial mismatch: expected ",
                                      cfg.input_resolution, "x", cfg.input_resolution, ", got ",
                                      x.dim(2), "x", x.dim(3)));
        Tensor<T> f = relu(tape, stem_bn.forward(tape, stem_conv.forward(tape, x), train));
        f = maxpool2x2(tape, f);
        f = b1.forward(tape, f, train);
        f = maxpool2x2(tape, f);
        f = b2.forward(tape, f, train);
        f = maxpool2x2(tape, f);
        f = b3.forward(tape, f, train);
        f = relu(tape, bn_out.forward(tape, f, train));
        f = global_avgpool(tape, f);
        return linear(tape, f, fc_weight, fc_bias);
    }

    void params(NamedTensors<T>& out) const {
        stem_conv.params(out, "stem.conv");
        stem_bn.params(out, "stem.bn");
        b1.params(out, "b1");
        b2.params(out, "b2");
        b3.params(out, "b3");
        bn_out.params(out, "bn_out");
        out.emplace_back("fc.weight", fc_weight);
        out.emplace_back("fc.bias", fc_bias);
    }
    void buffers(NamedTensors<T>& out) {
        stem_bn.buffers(out, "stem.bn");
        b1.buffers(out, "b1");
        b2.buffers(out, "b2");
        b3.buffers(out, "b3");
        bn_out.buffers(out, "bn_out");
    }
};

// ---------------------------------------------------------------------------
// builders and accounting
// ---------------------------------------------------------------------------

template <typename T>
ConvBlock<T> build_block(const BlockConfig& cfg, Rng& rng) {
    return ConvBlock<T>(cfg, rng);
}

template <typename T>
Hourglass<T> build_hourglass(int depth, int64_t width, BlockKind kind, Rng& rng) {
    return Hourglass<T>(depth, width, kind, rng);
}

template <typename T>
FanModel<T> build_fan(const FanConfig& cfg, Rng& rng) {
    return FanModel<T>(cfg, rng);
}

// Guided network: identical topology, stem accepts RGB + one guide channel
// per landmark.
template <typename T>
FanModel<T> build_2d_to_3d_fan(const FanConfig& cfg, Rng& rng) {
    if (cfg.in_channels != 3 + cfg.num_landmarks)
        throw ConfigError(strcat_("2d-to-3d fan needs in_channels = 3+N = ",
                                  3 + cfg.num_landmarks, ", got ", cfg.in_channels));
    return FanModel<T>(cfg, rng);
}

template <typename T>
DepthRegressor<T> build_depth_regressor(const DepthRegressorConfig& cfg, Rng& rng) {
    return DepthRegressor<T>(cfg, rng);
}

// Exact count of trainable scalars (conv weights and biases, batchnorm
// gamma and beta, fully connected weights).
template <typename T>
int64_t count_parameters(const FanModel<T>& model) {
    NamedTensors<T> ps;
    model.params(ps);
    int64_t total = 0;
    for (auto& [name, p] : ps) total += p.numel();
    return total;
}

template <typename T>
int64_t count_parameters(const DepthRegressor<T>& model) {
    NamedTensors<T> ps;
    model.params(ps);
    int64_t total = 0;
    for (auto& [name, p] : ps) total += p.numel();
    return total;
}

// Monotone parameter ladder for the size study: stack count drops first,
// then channel width, mirroring the paper's 24M..2M sweep.
std::vector<FanConfig> size_sweep_configs(const FanConfig& base);
std::vector<FanConfig> size_sweep_configs();

}  // namespace fan::nn
