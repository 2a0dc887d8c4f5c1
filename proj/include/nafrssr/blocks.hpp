#pragma once

// Building blocks of the two-branch stereo network: the activation-free
// residual blocks, the cross-view attention modules, and the trainable edge
// operator. Parameters are plain handles into a ParameterStore, so several
// call sites can share one set of weights.

#include <optional>
#include <string>
#include <utility>

#include "nafrssr/parameter_store.hpp"
#include "nafrssr/tensor.hpp"

namespace nafrssr::blocks {

struct LayerNormParams {
    Tensor scale;  // [1, c, 1, 1]
    Tensor shift;
};

struct ConvParams {
    Tensor weight;  // [cout, cin/groups, k, k]
    Tensor bias;    // [1, cout, 1, 1]
    int padding = 0;
    int groups = 1;
};

struct ScaParams {
    Tensor weight;  // [c, c, 1, 1]
    Tensor bias;
};

/// LN -> expand(x s) -> DW 3x3 -> SimpleGate -> [SCA] -> PW back to c, then
/// LN -> expand(x s) -> SimpleGate -> PW, each path added back with a
/// per-channel residual scale.
struct NafBlockParams {
    int channels = 0;
    LayerNormParams norm1;
    ConvParams expand1, depthwise;
    std::optional<ScaParams> sca;
    ConvParams project1;
    LayerNormParams norm2;
    ConvParams expand2, project2;
    Tensor beta, gamma;
};

/// NAFBlock without SCA and with the first path's final PW replaced by a
/// grouped 3x3 convolution.
struct NafGcBlock1Params {
    int channels = 0;
    LayerNormParams norm1;
    ConvParams expand1, depthwise, group_conv;
    LayerNormParams norm2;
    ConvParams expand2, project2;
    Tensor beta, gamma;
};

/// Single path LN -> expand -> DW 3x3 -> SimpleGate -> expand -> grouped 3x3
/// (s*c -> c), one residual scale. Meant for weight-shared reapplication.
struct NafGcBlock2Params {
    int channels = 0;
    LayerNormParams norm;
    ConvParams expand1, depthwise, expand2, group_conv;
    Tensor beta;
};

struct ScamParams {
    LayerNormParams norm_left, norm_right;
    ConvParams query_left, query_right, value_left, value_right;
    Tensor gamma_left, gamma_right;
};

/// The left and right query paths hold the same tensors, not copies.
struct DsscamParams {
    LayerNormParams norm;
    ConvParams depthwise;
    Tensor gamma_left, gamma_right;
};

struct EdgeOpParams {
    Tensor kernel;  // [1, 1, 3, 3], shared by every colour channel
    Tensor mix;     // [1, 1, 1, 1]
};

inline constexpr double kLayerNormEps = 1e-6;

// Sizing shared by the residual blocks.
struct BlockDims {
    int channels;
    int expansion = 2;
    int group_width = 4;
};

NafBlockParams make_naf_block(ParamBuilder& pb, const std::string& prefix, BlockDims dims, bool with_sca);
NafGcBlock1Params make_nafgc_block1(ParamBuilder& pb, const std::string& prefix, BlockDims dims);
NafGcBlock2Params make_nafgc_block2(ParamBuilder& pb, const std::string& prefix, BlockDims dims);
ScamParams make_scam(ParamBuilder& pb, const std::string& prefix, int channels);
DsscamParams make_dsscam(ParamBuilder& pb, const std::string& prefix, int channels);
// Laplacian kernel, zero mix weight.
EdgeOpParams make_edge_op(ParamBuilder& pb, const std::string& prefix);

Tensor conv(const Tensor& x, const ConvParams& p);
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

Tensor simple_gate(const Tensor& x);
Tensor sca(const Tensor& x, const ScaParams& p);

Tensor naf_block(const Tensor& x, const NafBlockParams& p);
Tensor nafgc_block1(const Tensor& x, const NafGcBlock1Params& p);
Tensor nafgc_block2(const Tensor& x, const NafGcBlock2Params& p);

using ViewPair = std::pair<Tensor, Tensor>;

ViewPair scam(const Tensor& x_left, const Tensor& x_right, const ScamParams& p);
ViewPair dsscam(const Tensor& x_left, const Tensor& x_right, const DsscamParams& p);

/// sr_base + mix * depthwise_conv(sr_base, kernel), padding 1.
Tensor edge_augment(const Tensor& sr_base, const EdgeOpParams& p);

}  // namespace nafrssr::blocks
