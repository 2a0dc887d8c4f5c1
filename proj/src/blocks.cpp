#include "nafrssr/blocks.hpp"

#include <stdexcept>

#include "nafrssr/ops.hpp"

namespace nafrssr::blocks {

namespace {

LayerNormParams make_norm(ParamBuilder& pb, const std::string& prefix, int c) {
    return {pb.ones(prefix + ".scale", {c}), pb.zeros(prefix + ".shift", {c})};
}

ConvParams make_conv(ParamBuilder& pb, const std::string& prefix, int cin, int cout, int k, int groups = 1) {
    ConvParams p;
    p.weight = pb.conv_weight(prefix + ".weight", cout, cin / groups, k, k);
    p.bias = pb.zeros(prefix + ".bias", {cout});
    p.padding = (k - 1) / 2;
    p.groups = groups;
    return p;
}

void check_dims(const BlockDims& d) {
    if (d.channels < 1 || d.expansion < 1 || d.group_width < 1) throw std::invalid_argument("block: non-positive size");
    if ((d.channels * d.expansion) % 2 != 0) throw std::invalid_argument("block: expanded channel count must be even");
    if (d.channels % d.group_width != 0)
        throw std::invalid_argument("block: channels " + std::to_string(d.channels) + " not divisible by group width " +
                                    std::to_string(d.group_width));
}

void check_channels(const char* what, const Tensor& x, int expected) {
    if (x.shape().c != expected)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(expected) + " channels, got " +
                                    std::to_string(x.shape().c));
}

Tensor residual(const Tensor& x, const Tensor& branch, const Tensor& scale) {
    return ops::add(x, ops::mul_broadcast(branch, scale));
}

}  // namespace

NafBlockParams make_naf_block(ParamBuilder& pb, const std::string& prefix, BlockDims d, bool with_sca) {
    check_dims(d);
    const int c = d.channels, wide = c * d.expansion, half = wide / 2;
    NafBlockParams p;
    p.channels = c;
    p.norm1 = make_norm(pb, prefix + ".norm1", c);
    p.expand1 = make_conv(pb, prefix + ".expand1", c, wide, 1);
    p.depthwise = make_conv(pb, prefix + ".depthwise", wide, wide, 3, wide);
    if (with_sca) {
        ScaParams s;
        s.weight = pb.conv_weight(prefix + ".sca.weight", half, half, 1, 1);
        s.bias = pb.zeros(prefix + ".sca.bias", {half});
        p.sca = s;
    }
    p.project1 = make_conv(pb, prefix + ".project1", half, c, 1);
    p.norm2 = make_norm(pb, prefix + ".norm2", c);
    p.expand2 = make_conv(pb, prefix + ".expand2", c, wide, 1);
    p.project2 = make_conv(pb, prefix + ".project2", half, c, 1);
    p.beta = pb.zeros(prefix + ".beta", {c});
    p.gamma = pb.zeros(prefix + ".gamma", {c});
    return p;
}

NafGcBlock1Params make_nafgc_block1(ParamBuilder& pb, const std::string& prefix, BlockDims d) {
    check_dims(d);
    const int c = d.channels, wide = c * d.expansion, half = wide / 2;
    if (half % (c / d.group_width) != 0) throw std::invalid_argument("nafgc_block1: gated width not divisible by groups");
    NafGcBlock1Params p;
    p.channels = c;
    p.norm1 = make_norm(pb, prefix + ".norm1", c);
    p.expand1 = make_conv(pb, prefix + ".expand1", c, wide, 1);
    p.depthwise = make_conv(pb, prefix + ".depthwise", wide, wide, 3, wide);
    p.group_conv = make_conv(pb, prefix + ".group_conv", half, c, 3, c / d.group_width);
    p.norm2 = make_norm(pb, prefix + ".norm2", c);
    p.expand2 = make_conv(pb, prefix + ".expand2", c, wide, 1);
    p.project2 = make_conv(pb, prefix + ".project2", half, c, 1);
    p.beta = pb.zeros(prefix + ".beta", {c});
    p.gamma = pb.zeros(prefix + ".gamma", {c});
    return p;
}

NafGcBlock2Params make_nafgc_block2(ParamBuilder& pb, const std::string& prefix, BlockDims d) {
    check_dims(d);
    const int c = d.channels, wide = c * d.expansion, half = wide / 2;
    if (wide % (c / d.group_width) != 0) throw std::invalid_argument("nafgc_block2: expanded width not divisible by groups");
    NafGcBlock2Params p;
    p.channels = c;
    p.norm = make_norm(pb, prefix + ".norm", c);
    p.expand1 = make_conv(pb, prefix + ".expand1", c, wide, 1);
    p.depthwise = make_conv(pb, prefix + ".depthwise", wide, wide, 3, wide);
    p.expand2 = make_conv(pb, prefix + ".expand2", half, wide, 1);
    p.group_conv = make_conv(pb, prefix + ".group_conv", wide, c, 3, c / d.group_width);
    p.beta = pb.zeros(prefix + ".beta", {c});
    return p;
}

ScamParams make_scam(ParamBuilder& pb, const std::string& prefix, int c) {
    ScamParams p;
    p.norm_left = make_norm(pb, prefix + ".norm_left", c);
    p.norm_right = make_norm(pb, prefix + ".norm_right", c);
    p.query_left = make_conv(pb, prefix + ".query_left", c, c, 1);
    p.query_right = make_conv(pb, prefix + ".query_right", c, c, 1);
    p.value_left = make_conv(pb, prefix + ".value_left", c, c, 1);
    p.value_right = make_conv(pb, prefix + ".value_right", c, c, 1);
    p.gamma_left = pb.zeros(prefix + ".gamma_left", {c});
    p.gamma_right = pb.zeros(prefix + ".gamma_right", {c});
    return p;
}

DsscamParams make_dsscam(ParamBuilder& pb, const std::string& prefix, int c) {
    DsscamParams p;
    p.norm = make_norm(pb, prefix + ".norm", c);
    p.depthwise = make_conv(pb, prefix + ".depthwise", c, c, 3, c);
    p.gamma_left = pb.zeros(prefix + ".gamma_left", {c});
    p.gamma_right = pb.zeros(prefix + ".gamma_right", {c});
    return p;
}

EdgeOpParams make_edge_op(ParamBuilder& pb, const std::string& prefix) {
    EdgeOpParams p;
    p.kernel = pb.values(prefix + ".kernel", {3, 3}, {0, 1, 0, 1, -4, 1, 0, 1, 0});
    p.mix = pb.zeros(prefix + ".mix", {1});
    return p;
}

Tensor conv(const Tensor& x, const ConvParams& p) {
    return ops::conv2d(x, p.weight, p.bias, {.stride = 1, .padding = p.padding, .groups = p.groups});
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) { return ops::layer_norm(x, p.scale, p.shift, kLayerNormEps); }

Tensor simple_gate(const Tensor& x) {
    const int c = x.shape().c;
    if (c % 2 != 0) throw std::invalid_argument("simple_gate: odd channel count " + std::to_string(c));
    return ops::mul(ops::channel_slice(x, 0, c / 2), ops::channel_slice(x, c / 2, c / 2));
}

Tensor sca(const Tensor& x, const ScaParams& p) {
    check_channels("sca", x, p.weight.shape().c);
    Tensor attention = ops::conv2d(ops::global_avg_pool(x), p.weight, p.bias);
    return ops::mul_broadcast(x, attention);
}

Tensor naf_block(const Tensor& x, const NafBlockParams& p) {
    check_channels("naf_block", x, p.channels);
    Tensor t = conv(conv(layer_norm(x, p.norm1), p.expand1), p.depthwise);
    t = simple_gate(t);
    if (p.sca) t = sca(t, *p.sca);
    Tensor y = residual(x, conv(t, p.project1), p.beta);
    Tensor f = simple_gate(conv(layer_norm(y, p.norm2), p.expand2));
    return residual(y, conv(f, p.project2), p.gamma);
}

Tensor nafgc_block1(const Tensor& x, const NafGcBlock1Params& p) {
    check_channels("nafgc_block1", x, p.channels);
    Tensor t = simple_gate(conv(conv(layer_norm(x, p.norm1), p.expand1), p.depthwise));
    Tensor y = residual(x, conv(t, p.group_conv), p.beta);
    Tensor f = simple_gate(conv(layer_norm(y, p.norm2), p.expand2));
    return residual(y, conv(f, p.project2), p.gamma);
}

Tensor nafgc_block2(const Tensor& x, const NafGcBlock2Params& p) {
    check_channels("nafgc_block2", x, p.channels);
    Tensor t = simple_gate(conv(conv(layer_norm(x, p.norm), p.expand1), p.depthwise));
    t = conv(conv(t, p.expand2), p.group_conv);
    return residual(x, t, p.beta);
}

namespace {

void check_pair(const char* what, const Tensor& l, const Tensor& r) {
    if (l.shape() != r.shape())
        throw std::invalid_argument(std::string(what) + ": view shapes differ " + l.shape().str() + " vs " + r.shape().str());
}

ViewPair fuse(const Tensor& x_left, const Tensor& x_right, const Tensor& q_left, const Tensor& q_right,
              const Tensor& v_left, const Tensor& v_right, const Tensor& gamma_left, const Tensor& gamma_right) {
    Tensor right_to_left = ops::row_attention(q_left, q_right, v_right);
    Tensor left_to_right = ops::row_attention(q_right, q_left, v_left);
    return {residual(x_left, right_to_left, gamma_left), residual(x_right, left_to_right, gamma_right)};
}

}  // namespace

ViewPair scam(const Tensor& x_left, const Tensor& x_right, const ScamParams& p) {
    check_pair("scam", x_left, x_right);
    Tensor q_left = conv(layer_norm(x_left, p.norm_left), p.query_left);
    Tensor q_right = conv(layer_norm(x_right, p.norm_right), p.query_right);
    Tensor v_left = conv(x_left, p.value_left);
    Tensor v_right = conv(x_right, p.value_right);
    return fuse(x_left, x_right, q_left, q_right, v_left, v_right, p.gamma_left, p.gamma_right);
}

ViewPair dsscam(const Tensor& x_left, const Tensor& x_right, const DsscamParams& p) {
    check_pair("dsscam", x_left, x_right);
    Tensor q_left = conv(layer_norm(x_left, p.norm), p.depthwise);
    Tensor q_right = conv(layer_norm(x_right, p.norm), p.depthwise);
    return fuse(x_left, x_right, q_left, q_right, x_left, x_right, p.gamma_left, p.gamma_right);
}

Tensor edge_augment(const Tensor& sr_base, const EdgeOpParams& p) {
    const int c = sr_base.shape().c;
    Tensor edges = ops::conv2d(sr_base, ops::tile_batch(p.kernel, c), Tensor(), {.stride = 1, .padding = 1, .groups = c});
    return ops::add(sr_base, ops::mul_broadcast(edges, p.mix));
}

}  // namespace nafrssr::blocks
