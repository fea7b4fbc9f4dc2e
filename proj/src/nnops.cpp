#include "msdnn/nnops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msdnn {

namespace {

void check_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4) throw ShapeError(std::string(what) + " must be rank 4, got " + shape_str(t.shape()));
}

int conv_out_size(int in, int pad, int k, int stride, const char* what) {
    int span = in + 2 * pad - k;
    if (span < 0) throw ShapeError(std::string(what) + ": kernel " + std::to_string(k) +
                                   " exceeds padded input " + std::to_string(in + 2 * pad));
    if (span % stride != 0)
        throw ShapeError(std::string(what) + ": output size not integral (in=" + std::to_string(in) +
                         " pad=" + std::to_string(pad) + " k=" + std::to_string(k) +
                         " stride=" + std::to_string(stride) + ")");
    return span / stride + 1;
}

// Fills col [Cin*kh*kw, Ho*Wo] from one image [Cin,H,W]; out-of-bounds taps are zero.
void im2col(const real* img, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, real* col) {
    const int plane = H * W;
    const std::int64_t ncols = static_cast<std::int64_t>(Ho) * Wo;
    std::int64_t r = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++r) {
                real* dst = col + r * ncols;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + Wo, real(0));
                        dst += Wo;
                        continue;
                    }
                    const real* src_row = img + c * plane + ih * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        *dst++ = (iw < 0 || iw >= W) ? real(0) : src_row[iw];
                    }
                }
            }
        }
    }
}

// Scatter-adds col [Cin*kh*kw, Ho*Wo] back into one image [Cin,H,W] (adjoint of im2col).
void col2im_add(const real* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, real* img) {
    const int plane = H * W;
    const std::int64_t ncols = static_cast<std::int64_t>(Ho) * Wo;
    std::int64_t r = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++r) {
                const real* src = col + r * ncols;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride + ki - pad;
                    if (ih < 0 || ih >= H) {
                        src += Wo;
                        continue;
                    }
                    real* dst_row = img + c * plane + ih * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride + kj - pad;
                        if (iw >= 0 && iw < W) dst_row[iw] += src[ow];
                    }
                    src += Wo;
                }
            }
        }
    }
}

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous.
void matmul_add(const real* A, const real* B, real* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        real* crow = C + m * N;
        const real* arow = A + m * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const real a = arow[k];
            if (a == real(0)) continue;
            const real* brow = B + k * N;
            for (std::int64_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M,N] += A^T[K,M] * B[K,N]; A stored row-major as [K,M].
void matmul_at_b_add(const real* A, const real* B, real* C, std::int64_t K, std::int64_t M, std::int64_t N) {
    for (std::int64_t k = 0; k < K; ++k) {
        const real* arow = A + k * M;
        const real* brow = B + k * N;
        for (std::int64_t m = 0; m < M; ++m) {
            const real a = arow[m];
            if (a == real(0)) continue;
            real* crow = C + m * N;
            for (std::int64_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M,K] += A[M,N] * B^T where B is [K,N]; both operands walked row-contiguously.
void matmul_abt_add(const real* A, const real* B, real* C, std::int64_t M, std::int64_t N, std::int64_t K) {
    for (std::int64_t m = 0; m < M; ++m) {
        const real* arow = A + m * N;
        real* crow = C + m * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const real* brow = B + k * N;
            real acc = 0;
            for (std::int64_t n = 0; n < N; ++n) acc += arow[n] * brow[n];
            crow[k] += acc;
        }
    }
}

struct ConvGeom {
    int N, Cin, H, W, Cout, kh, kw, Ho, Wo;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& weights, int stride, int pad, const char* what) {
    check_rank4(input, what);
    check_rank4(weights, what);
    ConvGeom g;
    g.N = input.dim(0);
    g.Cin = input.dim(1);
    g.H = input.dim(2);
    g.W = input.dim(3);
    g.Cout = weights.dim(0);
    g.kh = weights.dim(2);
    g.kw = weights.dim(3);
    if (weights.dim(1) != g.Cin)
        throw ShapeError(std::string(what) + ": input channels " + std::to_string(g.Cin) +
                         " vs kernel channels " + std::to_string(weights.dim(1)));
    g.Ho = conv_out_size(g.H, pad, g.kh, stride, what);
    g.Wo = conv_out_size(g.W, pad, g.kw, stride, what);
    return g;
}

// Forward gather: out[n] = W[Cout,K] * im2col(x[n]) (+ bias per channel if given).
Tensor conv_forward_core(const Tensor& input, const Tensor& weights, const Tensor* bias,
                         int stride, int pad, const char* what) {
    const ConvGeom g = conv_geometry(input, weights, stride, pad, what);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.Cout))
        throw ShapeError(std::string(what) + ": bias shape " + shape_str(bias->shape()));
    const std::int64_t K = static_cast<std::int64_t>(g.Cin) * g.kh * g.kw;
    const std::int64_t ncols = static_cast<std::int64_t>(g.Ho) * g.Wo;
    Tensor out({g.N, g.Cout, g.Ho, g.Wo});
    std::vector<real> col(static_cast<std::size_t>(K * ncols));
    const std::int64_t in_stride = static_cast<std::int64_t>(g.Cin) * g.H * g.W;
    const std::int64_t out_stride = static_cast<std::int64_t>(g.Cout) * ncols;
    for (int n = 0; n < g.N; ++n) {
        im2col(input.data() + n * in_stride, g.Cin, g.H, g.W, g.kh, g.kw, stride, pad, g.Ho, g.Wo, col.data());
        real* o = out.data() + n * out_stride;
        matmul_add(weights.data(), col.data(), o, g.Cout, K, ncols);
        if (bias) {
            for (int c = 0; c < g.Cout; ++c) {
                const real b = (*bias)[c];
                real* row = o + static_cast<std::int64_t>(c) * ncols;
                for (std::int64_t i = 0; i < ncols; ++i) row[i] += b;
            }
        }
    }
    return out;
}

// Adjoint scatter: given src laid out like the forward output of a conv with
// `weights` [Cout,Cin,kh,kw], produce the matching input-shaped accumulation.
// Shared by conv2d_backward (grad wrt input) and transposed_conv2d forward.
Tensor conv_input_adjoint_core(const Tensor& src, const Tensor& weights, int stride, int pad,
                               int Hi, int Wi, const char* what) {
    check_rank4(src, what);
    check_rank4(weights, what);
    const int N = src.dim(0), Cout = weights.dim(0), Cin = weights.dim(1);
    const int kh = weights.dim(2), kw = weights.dim(3);
    if (src.dim(1) != Cout)
        throw ShapeError(std::string(what) + ": channels " + std::to_string(src.dim(1)) +
                         " vs kernel output channels " + std::to_string(Cout));
    const int Ho = src.dim(2), Wo = src.dim(3);
    if (conv_out_size(Hi, pad, kh, stride, what) != Ho || conv_out_size(Wi, pad, kw, stride, what) != Wo)
        throw ShapeError(std::string(what) + ": geometry mismatch for target " + std::to_string(Hi) + "x" +
                         std::to_string(Wi));
    const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
    const std::int64_t ncols = static_cast<std::int64_t>(Ho) * Wo;
    Tensor out({N, Cin, Hi, Wi});
    std::vector<real> col(static_cast<std::size_t>(K * ncols));
    const std::int64_t src_stride = static_cast<std::int64_t>(Cout) * ncols;
    const std::int64_t out_stride = static_cast<std::int64_t>(Cin) * Hi * Wi;
    for (int n = 0; n < N; ++n) {
        std::fill(col.begin(), col.end(), real(0));
        matmul_at_b_add(weights.data(), src.data() + n * src_stride, col.data(), Cout, K, ncols);
        col2im_add(col.data(), Cin, Hi, Wi, kh, kw, stride, pad, Ho, Wo, out.data() + n * out_stride);
    }
    return out;
}

// gW[Cout,Cin,kh,kw] for the conv pairing (x -> go); also used transposed for deconv.
Tensor conv_weight_grad_core(const Tensor& input, const Tensor& grad_out, int Cout, int kh, int kw,
                             int stride, int pad, const char* what) {
    const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Ho = grad_out.dim(2), Wo = grad_out.dim(3);
    const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
    const std::int64_t ncols = static_cast<std::int64_t>(Ho) * Wo;
    Tensor gw({Cout, Cin, kh, kw});
    std::vector<real> col(static_cast<std::size_t>(K * ncols));
    const std::int64_t in_stride = static_cast<std::int64_t>(Cin) * H * W;
    const std::int64_t go_stride = static_cast<std::int64_t>(Cout) * ncols;
    for (int n = 0; n < N; ++n) {
        im2col(input.data() + n * in_stride, Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        matmul_abt_add(grad_out.data() + n * go_stride, col.data(), gw.data(), Cout, ncols, K);
    }
    (void)what;
    return gw;
}

Tensor channel_sums(const Tensor& grad_out) {
    const int N = grad_out.dim(0), C = grad_out.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(grad_out.dim(2)) * grad_out.dim(3);
    Tensor gb({C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const real* p = grad_out.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            real s = 0;
            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            gb[c] += s;
        }
    return gb;
}

} // namespace

Tensor conv2d(const Tensor& input, const ConvParams& p) {
    return conv_forward_core(input, p.weights, &p.bias, p.stride, p.padding, "conv2d");
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
    const ConvGeom g = conv_geometry(input, p.weights, p.stride, p.padding, "conv2d_backward");
    if (grad_out.rank() != 4 || grad_out.dim(0) != g.N || grad_out.dim(1) != g.Cout ||
        grad_out.dim(2) != g.Ho || grad_out.dim(3) != g.Wo)
        throw ShapeError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) + " does not match forward output");
    ConvGrads grads;
    grads.grad_input = conv_input_adjoint_core(grad_out, p.weights, p.stride, p.padding, g.H, g.W, "conv2d_backward");
    grads.grad_weights = conv_weight_grad_core(input, grad_out, g.Cout, g.kh, g.kw, p.stride, p.padding, "conv2d_backward");
    grads.grad_bias = channel_sums(grad_out);
    return grads;
}

Tensor transposed_conv2d(const Tensor& input, const DeconvParams& p) {
    check_rank4(input, "transposed_conv2d");
    check_rank4(p.weights, "transposed_conv2d");
    if (p.stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
    const int Cin = p.weights.dim(0), Cout = p.weights.dim(1);
    const int kh = p.weights.dim(2), kw = p.weights.dim(3);
    if (input.dim(1) != Cin)
        throw ShapeError("transposed_conv2d: input channels " + std::to_string(input.dim(1)) + " vs kernel " +
                         std::to_string(Cin));
    if (p.bias.rank() != 1 || p.bias.dim(0) != Cout)
        throw ShapeError("transposed_conv2d: bias shape " + shape_str(p.bias.shape()));
    const int Hout = (input.dim(2) - 1) * p.stride + kh;
    const int Wout = (input.dim(3) - 1) * p.stride + kw;
    // The deconv weight layout [Cin,Cout,kh,kw] is exactly the conv layout of the
    // convolution this op is the adjoint of, so the backward-of-conv code path is
    // reused verbatim (keeps the two bitwise identical).
    Tensor out = conv_input_adjoint_core(input, p.weights, p.stride, 0, Hout, Wout, "transposed_conv2d");
    const std::int64_t plane = static_cast<std::int64_t>(Hout) * Wout;
    for (int n = 0; n < input.dim(0); ++n)
        for (int c = 0; c < Cout; ++c) {
            real* row = out.data() + (static_cast<std::int64_t>(n) * Cout + c) * plane;
            const real b = p.bias[c];
            for (std::int64_t i = 0; i < plane; ++i) row[i] += b;
        }
    return out;
}

DeconvGrads transposed_conv2d_backward(const Tensor& input, const DeconvParams& p, const Tensor& grad_out) {
    check_rank4(grad_out, "transposed_conv2d_backward");
    const int Cin = p.weights.dim(0), Cout = p.weights.dim(1);
    const int kh = p.weights.dim(2), kw = p.weights.dim(3);
    const int Hout = (input.dim(2) - 1) * p.stride + kh;
    const int Wout = (input.dim(3) - 1) * p.stride + kw;
    if (grad_out.dim(0) != input.dim(0) || grad_out.dim(1) != Cout || grad_out.dim(2) != Hout ||
        grad_out.dim(3) != Wout)
        throw ShapeError("transposed_conv2d_backward: grad_out " + shape_str(grad_out.shape()) +
                         " does not match forward output");
    DeconvGrads grads;
    // Adjoint of scatter is the plain strided gather.
    grads.grad_input = conv_forward_core(grad_out, p.weights, nullptr, p.stride, 0, "transposed_conv2d_backward");
    // Weight grad is the conv weight grad with the roles of input and output swapped,
    // which lands directly in the [Cin,Cout,kh,kw] layout.
    grads.grad_weights =
        conv_weight_grad_core(grad_out, input, Cin, kh, kw, p.stride, 0, "transposed_conv2d_backward");
    grads.grad_bias = channel_sums(grad_out);
    (void)Cin;
    return grads;
}

MaxPoolResult max_pool2(const Tensor& input) {
    check_rank4(input, "max_pool2");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("max_pool2: H and W must be even, got " + shape_str(input.shape()));
    const int Ho = H / 2, Wo = W / 2;
    MaxPoolResult res;
    res.output = Tensor({N, C, Ho, Wo});
    res.argmax.resize(static_cast<std::size_t>(res.output.size()));
    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    std::int64_t best_idx = base + (2 * oh) * W + 2 * ow;
                    real best = input[best_idx];
                    // row-major window scan, strict > keeps the first tie
                    const std::int64_t cand[3] = {base + (2 * oh) * W + 2 * ow + 1,
                                                  base + (2 * oh + 1) * W + 2 * ow,
                                                  base + (2 * oh + 1) * W + 2 * ow + 1};
                    for (std::int64_t idx : cand)
                        if (input[idx] > best) {
                            best = input[idx];
                            best_idx = idx;
                        }
                    res.output[oi] = best;
                    res.argmax[static_cast<std::size_t>(oi)] = best_idx;
                }
        }
    return res;
}

Tensor max_pool2_backward(const MaxPoolResult& cache, const Shape& input_shape, const Tensor& grad_out) {
    if (!grad_out.same_shape(cache.output))
        throw ShapeError("max_pool2_backward: grad_out " + shape_str(grad_out.shape()) + " vs cached output " +
                         shape_str(cache.output.shape()));
    Tensor grad_input(input_shape);
    for (std::int64_t i = 0; i < grad_out.size(); ++i)
        grad_input[cache.argmax[static_cast<std::size_t>(i)]] += grad_out[i];
    return grad_input;
}

Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1)
        throw ShapeError("fully_connected: expected input [N,D], weights [M,D], bias [M]");
    const int N = input.dim(0), D = input.dim(1), M = weights.dim(0);
    if (weights.dim(1) != D || bias.dim(0) != M)
        throw ShapeError("fully_connected: dimension mismatch input " + shape_str(input.shape()) + " weights " +
                         shape_str(weights.shape()));
    Tensor out({N, M});
    // out = input * weights^T + bias, both operands row-contiguous
    matmul_abt_add(input.data(), weights.data(), out.data(), N, D, M);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) out(n, m) += bias[m];
    return out;
}

FcGrads fully_connected_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
    const int N = input.dim(0), D = input.dim(1), M = weights.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != N || grad_out.dim(1) != M)
        throw ShapeError("fully_connected_backward: grad_out " + shape_str(grad_out.shape()));
    FcGrads g;
    g.grad_input = Tensor({N, D});
    g.grad_weights = Tensor({M, D});
    g.grad_bias = Tensor({M});
    matmul_add(grad_out.data(), weights.data(), g.grad_input.data(), N, M, D);
    matmul_at_b_add(grad_out.data(), input.data(), g.grad_weights.data(), N, M, D);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) g.grad_bias[m] += grad_out(n, m);
    return g;
}

Tensor relu(const Tensor& t) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = t[i] > 0 ? t[i] : real(0);
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    if (!input.same_shape(grad_out))
        throw ShapeError("relu_backward: " + shape_str(input.shape()) + " vs " + shape_str(grad_out.shape()));
    Tensor out(input.shape());
    for (std::int64_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0 ? grad_out[i] : real(0);
    return out;
}

Tensor sigmoid(const Tensor& t) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const real x = t[i];
        if (x >= 0) {
            out[i] = real(1) / (real(1) + std::exp(-x));
        } else {
            const real e = std::exp(x);
            out[i] = e / (real(1) + e);
        }
    }
    return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
    if (!output.same_shape(grad_out))
        throw ShapeError("sigmoid_backward: " + shape_str(output.shape()) + " vs " + shape_str(grad_out.shape()));
    Tensor out(output.shape());
    for (std::int64_t i = 0; i < output.size(); ++i) out[i] = grad_out[i] * output[i] * (real(1) - output[i]);
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Tensor& first = parts.front();
    check_rank4(first, "concat_channels");
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int Ctot = 0;
    for (const Tensor& p : parts) {
        check_rank4(p, "concat_channels");
        if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw ShapeError("concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(first.shape()));
        Ctot += p.dim(1);
    }
    Tensor out({N, Ctot, H, W});
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (const Tensor& p : parts) {
            const int C = p.dim(1);
            const real* src = p.data() + static_cast<std::int64_t>(n) * C * plane;
            real* dst = out.data() + (static_cast<std::int64_t>(n) * Ctot + coff) * plane;
            std::copy(src, src + static_cast<std::int64_t>(C) * plane, dst);
            coff += C;
        }
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) { return concat_channels(std::vector<Tensor>{a, b}); }

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channel_counts) {
    check_rank4(t, "split_channels");
    int Ctot = 0;
    for (int c : channel_counts) Ctot += c;
    if (Ctot != t.dim(1))
        throw ShapeError("split_channels: counts sum to " + std::to_string(Ctot) + " but tensor has " +
                         std::to_string(t.dim(1)) + " channels");
    const int N = t.dim(0), H = t.dim(2), W = t.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    std::vector<Tensor> parts;
    parts.reserve(channel_counts.size());
    int coff = 0;
    for (int C : channel_counts) {
        Tensor part({N, C, H, W});
        for (int n = 0; n < N; ++n) {
            const real* src = t.data() + (static_cast<std::int64_t>(n) * Ctot + coff) * plane;
            real* dst = part.data() + static_cast<std::int64_t>(n) * C * plane;
            std::copy(src, src + static_cast<std::int64_t>(C) * plane, dst);
        }
        parts.push_back(std::move(part));
        coff += C;
    }
    return parts;
}

} // namespace msdnn
