#include "hiproto/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "hiproto/rng.hpp"

namespace hiproto {

namespace {

constexpr int kInputChannels = 1;
constexpr int kInputH = kMelBins;
constexpr int kInputW = kNumFrames;
constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;

int conv_out_dim(int in) { return (in + 2 * kPad - kKernel) / kStride + 1; }

struct BlockDims {
    int in_c, in_h, in_w;
    int out_c, out_h, out_w;
};

std::vector<BlockDims> block_dims(const ArchConfig& arch) {
    std::vector<BlockDims> dims;
    int c = kInputChannels, h = kInputH, w = kInputW;
    for (int oc : arch.channels) {
        BlockDims d{c, h, w, oc, conv_out_dim(h), conv_out_dim(w)};
        dims.push_back(d);
        c = oc;
        h = d.out_h;
        w = d.out_w;
    }
    return dims;
}

// C[M][N] += A[M][K] * B[K][N], row-major. Four-row blocking keeps the inner
// loop a straight fused multiply-add stream over contiguous B rows.
void gemm_acc(int M, int N, int K, const double* A, const double* B, double* C) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        const double* a0 = A + static_cast<std::size_t>(m) * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        double* c0 = C + static_cast<std::size_t>(m) * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        for (int k = 0; k < K; ++k) {
            const double* b = B + static_cast<std::size_t>(k) * N;
            const double w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
            for (int n = 0; n < N; ++n) {
                const double bv = b[n];
                c0[n] += w0 * bv;
                c1[n] += w1 * bv;
                c2[n] += w2 * bv;
                c3[n] += w3 * bv;
            }
        }
    }
    for (; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        double* c = C + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double* b = B + static_cast<std::size_t>(k) * N;
            const double w = a[k];
            for (int n = 0; n < N; ++n) c[n] += w * b[n];
        }
    }
}

// cols[(ic*9 + ky*3 + kx)][oy*ow + ox] = x[ic][oy*2 - 1 + ky][ox*2 - 1 + kx]
void im2col(const double* x, const BlockDims& d, double* cols) {
    const int N = d.out_h * d.out_w;
    for (int ic = 0; ic < d.in_c; ++ic) {
        const double* xc = x + static_cast<std::size_t>(ic) * d.in_h * d.in_w;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                double* row = cols + static_cast<std::size_t>(ic * 9 + ky * 3 + kx) * N;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * kStride - kPad + ky;
                    double* out = row + static_cast<std::size_t>(oy) * d.out_w;
                    if (iy < 0 || iy >= d.in_h) {
                        std::fill(out, out + d.out_w, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::size_t>(iy) * d.in_w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * kStride - kPad + kx;
                        out[ox] = (ix >= 0 && ix < d.in_w) ? xr[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, const BlockDims& d, double* dx) {
    const int N = d.out_h * d.out_w;
    for (int ic = 0; ic < d.in_c; ++ic) {
        double* xc = dx + static_cast<std::size_t>(ic) * d.in_h * d.in_w;
        for (int ky = 0; ky < kKernel; ++ky) {
            for (int kx = 0; kx < kKernel; ++kx) {
                const double* row = cols + static_cast<std::size_t>(ic * 9 + ky * 3 + kx) * N;
                for (int oy = 0; oy < d.out_h; ++oy) {
                    const int iy = oy * kStride - kPad + ky;
                    if (iy < 0 || iy >= d.in_h) continue;
                    const double* in = row + static_cast<std::size_t>(oy) * d.out_w;
                    double* xr = xc + static_cast<std::size_t>(iy) * d.in_w;
                    for (int ox = 0; ox < d.out_w; ++ox) {
                        const int ix = ox * kStride - kPad + kx;
                        if (ix >= 0 && ix < d.in_w) xr[ix] += in[ox];
                    }
                }
            }
        }
    }
}

std::vector<double>& scratch_cols() {
    thread_local std::vector<double> buf;
    return buf;
}

std::vector<double>& scratch_dcols() {
    thread_local std::vector<double> buf;
    return buf;
}

}  // namespace

std::string ArchConfig::canonical_string() const {
    std::string s = "conv3x3s2p1;in:1x64x97;ch:";
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(channels[i]);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, ";leak:%.6g;D:%d;ang:%d", leak, embed_dim,
                  angular_head ? 1 : 0);
    s += buf;
    return s;
}

std::size_t EncoderParams::param_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

double EncoderParams::angular_scale() const {
    if (!arch.angular_head) throw Error("encoder has no angular head");
    return tensors[tensors.size() - 2].v[0];
}

double EncoderParams::angular_bias() const {
    if (!arch.angular_head) throw Error("encoder has no angular head");
    return tensors.back().v[0];
}

void EncoderParams::set_angular(double scale, double bias) {
    if (!arch.angular_head) throw Error("encoder has no angular head");
    if (scale <= 0.0) throw Error("angular scale must be positive");
    tensors[tensors.size() - 2].v[0] = scale;
    tensors.back().v[0] = bias;
}

EncoderParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    if (arch.channels.empty()) throw Error("arch config: need at least one block");
    for (int c : arch.channels)
        if (c < 1) throw Error("arch config: channel widths must be positive");
    if (arch.embed_dim < 2) throw Error("arch config: embedding dim must be at least 2");
    if (arch.leak < 0.0 || arch.leak > 1.0) throw Error("arch config: leak out of range");

    EncoderParams p;
    p.arch = arch;
    Rng rng(seed);
    const auto uniform_fill = [&](Tensor& t, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : t.v) v = rng.uniform(-bound, bound);
    };

    const auto dims = block_dims(arch);
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const BlockDims& d = dims[i];
        Tensor kernel({d.out_c, d.in_c, kKernel, kKernel});
        uniform_fill(kernel, d.in_c * kKernel * kKernel);
        Tensor scale({d.out_c});
        std::fill(scale.v.begin(), scale.v.end(), 1.0);
        Tensor offset({d.out_c});
        const std::string prefix = "block" + std::to_string(i);
        p.tensors.push_back(std::move(kernel));
        p.names.push_back(prefix + ".kernel");
        p.tensors.push_back(std::move(scale));
        p.names.push_back(prefix + ".scale");
        p.tensors.push_back(std::move(offset));
        p.names.push_back(prefix + ".offset");
    }
    const int last_c = arch.channels.back();
    Tensor proj_w({arch.embed_dim, last_c});
    uniform_fill(proj_w, last_c);
    Tensor proj_b({arch.embed_dim});
    p.tensors.push_back(std::move(proj_w));
    p.names.push_back("proj.weight");
    p.tensors.push_back(std::move(proj_b));
    p.names.push_back("proj.bias");
    if (arch.angular_head) {
        Tensor w({1}), b({1});
        w.v[0] = 10.0;
        b.v[0] = -5.0;
        p.tensors.push_back(std::move(w));
        p.names.push_back("angular.scale");
        p.tensors.push_back(std::move(b));
        p.names.push_back("angular.bias");
    }
    return p;
}

Embedding encoder_forward(const EncoderParams& params, const LogMelSpectrogram& x,
                          ActivationTape* tape) {
    const ArchConfig& arch = params.arch;
    const auto dims = block_dims(arch);

    Tensor cur({kInputChannels, kInputH, kInputW});
    cur.v = x.values;
    if (tape) {
        tape->input = cur;
        tape->conv_out.clear();
        tape->block_out.clear();
    }

    for (std::size_t i = 0; i < dims.size(); ++i) {
        const BlockDims& d = dims[i];
        const Tensor& kernel = params.tensors[3 * i];
        const Tensor& scale = params.tensors[3 * i + 1];
        const Tensor& offset = params.tensors[3 * i + 2];
        const int K = d.in_c * 9;
        const int N = d.out_h * d.out_w;

        auto& cols = scratch_cols();
        cols.resize(static_cast<std::size_t>(K) * N);
        im2col(cur.data(), d, cols.data());

        Tensor conv({d.out_c, d.out_h, d.out_w});
        gemm_acc(d.out_c, N, K, kernel.data(), cols.data(), conv.data());

        Tensor act({d.out_c, d.out_h, d.out_w});
        for (int c = 0; c < d.out_c; ++c) {
            const double g = scale.v[static_cast<std::size_t>(c)];
            const double b = offset.v[static_cast<std::size_t>(c)];
            const double* u = conv.data() + static_cast<std::size_t>(c) * N;
            double* y = act.data() + static_cast<std::size_t>(c) * N;
            for (int n = 0; n < N; ++n) {
                const double v = g * u[n] + b;
                y[n] = v > 0.0 ? v : arch.leak * v;
            }
        }
        if (tape) {
            tape->conv_out.push_back(std::move(conv));
            tape->block_out.push_back(act);
        }
        cur = std::move(act);
    }

    // global average pool
    const BlockDims& last = dims.back();
    const int spatial = last.out_h * last.out_w;
    std::vector<double> pooled(static_cast<std::size_t>(last.out_c));
    for (int c = 0; c < last.out_c; ++c) {
        const double* y = cur.data() + static_cast<std::size_t>(c) * spatial;
        double acc = 0.0;
        for (int n = 0; n < spatial; ++n) acc += y[n];
        pooled[static_cast<std::size_t>(c)] = acc / spatial;
    }

    const Tensor& proj_w = params.tensors[3 * dims.size()];
    const Tensor& proj_b = params.tensors[3 * dims.size() + 1];
    Embedding emb(static_cast<std::size_t>(arch.embed_dim));
    for (int dd = 0; dd < arch.embed_dim; ++dd) {
        const double* w = proj_w.data() + static_cast<std::size_t>(dd) * last.out_c;
        double acc = proj_b.v[static_cast<std::size_t>(dd)];
        for (int c = 0; c < last.out_c; ++c) acc += w[c] * pooled[static_cast<std::size_t>(c)];
        emb[static_cast<std::size_t>(dd)] = acc;
    }
    if (tape) {
        tape->pooled = pooled;
        tape->embedding = emb;
    }
    return emb;
}

GradientSet zero_gradients(const EncoderParams& params) {
    GradientSet g;
    g.reserve(params.tensors.size());
    for (const auto& t : params.tensors) g.push_back(t.zeros_like());
    return g;
}

void accumulate(GradientSet& into, const GradientSet& add) {
    if (into.size() != add.size()) throw Error("gradient accumulate: tensor count mismatch");
    for (std::size_t i = 0; i < into.size(); ++i) {
        if (into[i].size() != add[i].size()) throw Error("gradient accumulate: shape mismatch");
        for (std::size_t j = 0; j < into[i].size(); ++j) into[i].v[j] += add[i].v[j];
    }
}

BackwardResult encoder_backward(const EncoderParams& params, const ActivationTape& tape,
                                const std::vector<double>& grad_embedding) {
    const ArchConfig& arch = params.arch;
    const auto dims = block_dims(arch);
    if (tape.block_out.size() != dims.size() || tape.pooled.empty())
        throw Error("encoder_backward: tape does not match a prior forward");
    if (grad_embedding.size() != static_cast<std::size_t>(arch.embed_dim))
        throw Error("encoder_backward: gradient length != embedding dim");

    BackwardResult res;
    res.grads = zero_gradients(params);

    const BlockDims& last = dims.back();
    const int spatial = last.out_h * last.out_w;
    const Tensor& proj_w = params.tensors[3 * dims.size()];
    Tensor& d_proj_w = res.grads[3 * dims.size()];
    Tensor& d_proj_b = res.grads[3 * dims.size() + 1];

    // projection
    std::vector<double> d_pooled(static_cast<std::size_t>(last.out_c), 0.0);
    for (int dd = 0; dd < arch.embed_dim; ++dd) {
        const double g = grad_embedding[static_cast<std::size_t>(dd)];
        d_proj_b.v[static_cast<std::size_t>(dd)] += g;
        const double* w = proj_w.data() + static_cast<std::size_t>(dd) * last.out_c;
        double* dw = d_proj_w.data() + static_cast<std::size_t>(dd) * last.out_c;
        for (int c = 0; c < last.out_c; ++c) {
            dw[c] += g * tape.pooled[static_cast<std::size_t>(c)];
            d_pooled[static_cast<std::size_t>(c)] += g * w[c];
        }
    }

    // pool spreads gradient uniformly
    Tensor d_out({last.out_c, last.out_h, last.out_w});
    for (int c = 0; c < last.out_c; ++c) {
        const double g = d_pooled[static_cast<std::size_t>(c)] / spatial;
        double* row = d_out.data() + static_cast<std::size_t>(c) * spatial;
        std::fill(row, row + spatial, g);
    }

    for (int i = static_cast<int>(dims.size()) - 1; i >= 0; --i) {
        const BlockDims& d = dims[static_cast<std::size_t>(i)];
        const int N = d.out_h * d.out_w;
        const int K = d.in_c * 9;
        const Tensor& kernel = params.tensors[3 * static_cast<std::size_t>(i)];
        const Tensor& scale = params.tensors[3 * static_cast<std::size_t>(i) + 1];
        const Tensor& u = tape.conv_out[static_cast<std::size_t>(i)];
        const Tensor& y = tape.block_out[static_cast<std::size_t>(i)];
        Tensor& d_kernel = res.grads[3 * static_cast<std::size_t>(i)];
        Tensor& d_scale = res.grads[3 * static_cast<std::size_t>(i) + 1];
        Tensor& d_offset = res.grads[3 * static_cast<std::size_t>(i) + 2];

        // through the rectifier and the per-channel affine
        Tensor d_conv({d.out_c, d.out_h, d.out_w});
        for (int c = 0; c < d.out_c; ++c) {
            const double g = scale.v[static_cast<std::size_t>(c)];
            const double* yrow = y.data() + static_cast<std::size_t>(c) * N;
            const double* urow = u.data() + static_cast<std::size_t>(c) * N;
            const double* dyrow = d_out.data() + static_cast<std::size_t>(c) * N;
            double* durow = d_conv.data() + static_cast<std::size_t>(c) * N;
            double dg = 0.0, db = 0.0;
            for (int n = 0; n < N; ++n) {
                const double dv = dyrow[n] * (yrow[n] > 0.0 ? 1.0 : arch.leak);
                dg += dv * urow[n];
                db += dv;
                durow[n] = dv * g;
            }
            d_scale.v[static_cast<std::size_t>(c)] += dg;
            d_offset.v[static_cast<std::size_t>(c)] += db;
        }

        // conv backward: weight grads against the re-built column matrix,
        // input grads via kernel-transpose GEMM + col2im
        const Tensor& x = i == 0 ? tape.input : tape.block_out[static_cast<std::size_t>(i) - 1];
        auto& cols = scratch_cols();
        cols.resize(static_cast<std::size_t>(K) * N);
        im2col(x.data(), d, cols.data());
        int oc = 0;
        for (; oc + 4 <= d.out_c; oc += 4) {
            const double* dy0 = d_conv.data() + static_cast<std::size_t>(oc) * N;
            const double* dy1 = dy0 + N;
            const double* dy2 = dy1 + N;
            const double* dy3 = dy2 + N;
            double* dw0 = d_kernel.data() + static_cast<std::size_t>(oc) * K;
            double* dw1 = dw0 + K;
            double* dw2 = dw1 + K;
            double* dw3 = dw2 + K;
            for (int k = 0; k < K; ++k) {
                const double* col = cols.data() + static_cast<std::size_t>(k) * N;
                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                for (int n = 0; n < N; ++n) {
                    const double c = col[n];
                    a0 += dy0[n] * c;
                    a1 += dy1[n] * c;
                    a2 += dy2[n] * c;
                    a3 += dy3[n] * c;
                }
                dw0[k] += a0;
                dw1[k] += a1;
                dw2[k] += a2;
                dw3[k] += a3;
            }
        }
        for (; oc < d.out_c; ++oc) {
            const double* dy = d_conv.data() + static_cast<std::size_t>(oc) * N;
            double* dw = d_kernel.data() + static_cast<std::size_t>(oc) * K;
            for (int k = 0; k < K; ++k) {
                const double* col = cols.data() + static_cast<std::size_t>(k) * N;
                double acc = 0.0;
                for (int n = 0; n < N; ++n) acc += dy[n] * col[n];
                dw[k] += acc;
            }
        }

        auto& d_cols = scratch_dcols();
        d_cols.assign(static_cast<std::size_t>(K) * N, 0.0);
        for (int k = 0; k < K; ++k) {
            double* dst = d_cols.data() + static_cast<std::size_t>(k) * N;
            int c = 0;
            for (; c + 4 <= d.out_c; c += 4) {
                const double* dy0 = d_conv.data() + static_cast<std::size_t>(c) * N;
                const double* dy1 = dy0 + N;
                const double* dy2 = dy1 + N;
                const double* dy3 = dy2 + N;
                const double w0 = kernel.v[static_cast<std::size_t>(c) * K + k];
                const double w1 = kernel.v[static_cast<std::size_t>(c + 1) * K + k];
                const double w2 = kernel.v[static_cast<std::size_t>(c + 2) * K + k];
                const double w3 = kernel.v[static_cast<std::size_t>(c + 3) * K + k];
                for (int n = 0; n < N; ++n)
                    dst[n] += w0 * dy0[n] + w1 * dy1[n] + w2 * dy2[n] + w3 * dy3[n];
            }
            for (; c < d.out_c; ++c) {
                const double* dy = d_conv.data() + static_cast<std::size_t>(c) * N;
                const double wv = kernel.v[static_cast<std::size_t>(c) * K + k];
                for (int n = 0; n < N; ++n) dst[n] += wv * dy[n];
            }
        }
        Tensor dx({d.in_c, d.in_h, d.in_w});
        col2im_acc(d_cols.data(), d, dx.data());
        d_out = std::move(dx);
    }

    res.grad_input = std::move(d_out);
    return res;
}

DescribeResult describe(const ArchConfig& arch) {
    DescribeResult r;
    const auto dims = block_dims(arch);
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const BlockDims& d = dims[i];
        const std::size_t spatial = static_cast<std::size_t>(d.out_h) * d.out_w;
        LayerStats conv;
        conv.name = "block" + std::to_string(i) + ".conv";
        conv.shape = shape_string({d.out_c, d.in_c, kKernel, kKernel});
        conv.params = static_cast<std::size_t>(d.out_c) * d.in_c * kKernel * kKernel;
        conv.macs = spatial * static_cast<std::size_t>(d.out_c) * d.in_c * kKernel * kKernel;
        r.layers.push_back(conv);
        LayerStats affine;
        affine.name = "block" + std::to_string(i) + ".affine";
        affine.shape = shape_string({2, d.out_c});
        affine.params = static_cast<std::size_t>(2) * d.out_c;
        affine.macs = spatial * static_cast<std::size_t>(d.out_c);
        r.layers.push_back(affine);
    }
    const BlockDims& last = dims.back();
    LayerStats proj;
    proj.name = "proj";
    proj.shape = shape_string({arch.embed_dim, last.out_c});
    proj.params = static_cast<std::size_t>(arch.embed_dim) * last.out_c +
                  static_cast<std::size_t>(arch.embed_dim);
    proj.macs = static_cast<std::size_t>(arch.embed_dim) * last.out_c;
    r.layers.push_back(proj);
    if (arch.angular_head) {
        LayerStats ang;
        ang.name = "angular";
        ang.shape = "[2]";
        ang.params = 2;
        ang.macs = 0;
        r.layers.push_back(ang);
    }
    for (const auto& l : r.layers) {
        r.total_params += l.params;
        r.total_macs += l.macs;
    }
    return r;
}

namespace {
constexpr char kWeightsMagic[4] = {'H', 'P', 'W', '1'};
constexpr std::uint32_t kWeightsVersion = 1;
}  // namespace

std::vector<std::uint8_t> save_weights(const EncoderParams& params) {
    ByteWriter b;
    b.bytes(kWeightsMagic, 4);
    b.u32(kWeightsVersion);
    const Digest digest = params.arch.digest();
    b.bytes(digest.data(), digest.size());
    b.u32(static_cast<std::uint32_t>(params.arch.channels.size()));
    for (int c : params.arch.channels) b.u32(static_cast<std::uint32_t>(c));
    b.u32(static_cast<std::uint32_t>(params.arch.embed_dim));
    std::uint64_t leak_bits;
    std::memcpy(&leak_bits, &params.arch.leak, 8);
    b.u64(leak_bits);
    b.u8(params.arch.angular_head ? 1 : 0);
    b.u32(static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& t : params.tensors) {
        b.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) b.u32(static_cast<std::uint32_t>(d));
    }
    for (const auto& t : params.tensors)
        for (double v : t.v) b.f32(static_cast<float>(v));
    return b.data();
}

EncoderParams load_weights(const std::uint8_t* data, std::size_t len) {
    ByteReader r(data, len);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw Error("weight file: bad magic");
    if (r.u32() != kWeightsVersion) throw Error("weight file: unsupported version");
    Digest digest;
    r.raw(digest.data(), digest.size());

    ArchConfig arch;
    arch.channels.resize(r.u32());
    for (auto& c : arch.channels) c = static_cast<int>(r.u32());
    arch.embed_dim = static_cast<int>(r.u32());
    const std::uint64_t leak_bits = r.u64();
    std::memcpy(&arch.leak, &leak_bits, 8);
    arch.angular_head = r.u8() != 0;
    if (arch.digest() != digest)
        throw Error("weight file: arch-config digest mismatch");

    EncoderParams fresh = init_params(arch, 0);
    const std::uint32_t count = r.u32();
    if (count != fresh.tensors.size()) throw Error("weight file: tensor count mismatch");
    for (auto& t : fresh.tensors) {
        const std::uint32_t ndim = r.u32();
        if (ndim != t.shape.size()) throw Error("weight file: tensor rank mismatch");
        for (int d : t.shape)
            if (r.u32() != static_cast<std::uint32_t>(d))
                throw Error("weight file: tensor shape mismatch");
    }
    for (auto& t : fresh.tensors)
        for (auto& v : t.v) {
            v = r.f32();
            if (!std::isfinite(v)) throw Error("weight file: non-finite parameter value");
        }
    if (!r.at_end()) throw Error("weight file: trailing bytes");
    return fresh;
}

void write_weights_file(const std::string& path, const EncoderParams& params) {
    write_file(path, save_weights(params));
}

EncoderParams read_weights_file(const std::string& path) {
    const auto bytes = read_file(path);
    return load_weights(bytes.data(), bytes.size());
}

}  // namespace hiproto
