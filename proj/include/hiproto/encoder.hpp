#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiproto/dsp.hpp"
#include "hiproto/tensor.hpp"

namespace hiproto {

// Embedding network layout: N blocks of [3x3 conv stride 2, per-channel
// affine, leaky rectifier], global average pool, linear projection.
struct ArchConfig {
    std::vector<int> channels{8, 16, 32, 64};
    int embed_dim = 64;
    double leak = 0.01;
    bool angular_head = false;  // adds learnable scale/bias for angular distance

    // small configuration used by the gradient-check harness
    static ArchConfig gradcheck_small() {
        ArchConfig a;
        a.channels = {4, 8, 16, 32};
        a.embed_dim = 8;
        return a;
    }

    std::string canonical_string() const;
    Digest digest() const { return sha256(canonical_string()); }
};

using Embedding = std::vector<double>;

// All learnable parameters. Tensor order: per block [kernel, scale, offset],
// then projection weight and bias, then (optionally) angular scale and bias.
struct EncoderParams {
    ArchConfig arch;
    std::vector<Tensor> tensors;
    std::vector<std::string> names;

    std::size_t param_count() const;
    double angular_scale() const;
    double angular_bias() const;
    void set_angular(double scale, double bias);
};

// Intermediates retained by forward for the backward pass.
struct ActivationTape {
    Tensor input;                    // 1 x 64 x 97
    std::vector<Tensor> conv_out;    // per block, pre-affine
    std::vector<Tensor> block_out;   // per block, post-activation
    std::vector<double> pooled;      // global average pool output
    Embedding embedding;
};

EncoderParams init_params(const ArchConfig& arch, std::uint64_t seed);

Embedding encoder_forward(const EncoderParams& params, const LogMelSpectrogram& x,
                          ActivationTape* tape = nullptr);

// Gradients of a scalar objective w.r.t. every parameter tensor and the input,
// given d(objective)/d(embedding).
struct BackwardResult {
    GradientSet grads;  // shape-matched to params.tensors
    Tensor grad_input;
};

BackwardResult encoder_backward(const EncoderParams& params, const ActivationTape& tape,
                                const std::vector<double>& grad_embedding);

GradientSet zero_gradients(const EncoderParams& params);
void accumulate(GradientSet& into, const GradientSet& add);

// Layer-by-layer parameter and multiply-accumulate counts.
struct LayerStats {
    std::string name;
    std::string shape;
    std::size_t params = 0;
    std::size_t macs = 0;
};

struct DescribeResult {
    std::vector<LayerStats> layers;
    std::size_t total_params = 0;
    std::size_t total_macs = 0;
};

DescribeResult describe(const ArchConfig& arch);

// Weight file: magic, version, arch digest, shape table, float32 payload.
std::vector<std::uint8_t> save_weights(const EncoderParams& params);
EncoderParams load_weights(const std::uint8_t* data, std::size_t len);
void write_weights_file(const std::string& path, const EncoderParams& params);
EncoderParams read_weights_file(const std::string& path);

}  // namespace hiproto
