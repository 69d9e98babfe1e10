#pragma once

#include "twins/counters.hpp"
#include "twins/tensor.hpp"

namespace twins {

enum class PadMode { Zero, Circular };

// Cross-correlation over NHWC maps. w: [kh,kw,Cin/groups,Cout], square
// stride, symmetric padding. groups==C with Cout==C is depthwise;
// kernel==stride with pad 0 patchifies.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad, std::size_t groups,
                 PadMode mode = PadMode::Zero) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4) throw ShapeError("conv2d: input must be [B,H,W,C], got " + shape_str(sx));
    if (sw.size() != 4)
        throw ShapeError("conv2d: weight must be [kh,kw,Cin/groups,Cout], got " + shape_str(sw));
    const std::size_t B = sx[0], H = sx[1], W = sx[2], Cin = sx[3];
    const std::size_t kh = sw[0], kw = sw[1], Cg = sw[2], Cout = sw[3];
    if (groups == 0 || Cin % groups != 0 || Cout % groups != 0)
        throw ShapeError("conv2d: channels not divisible by groups");
    if (Cg != Cin / groups)
        throw ShapeError("conv2d: weight input channels " + std::to_string(Cg) +
                         " != Cin/groups " + std::to_string(Cin / groups));
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError("conv2d: kernel " + shape_str(sw) + " does not fit padded input " +
                         shape_str(sx));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (b.valid() && (b.ndim() != 1 || b.dim(0) != Cout))
        throw ShapeError("conv2d: bias shape mismatch");

    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    const std::size_t cog = Cout / groups;

    std::vector<T> out(B * Ho * Wo * Cout, T(0));
    const T* xp = x.data();
    const T* wp = w.data();
    if (b.valid()) {
        const T* bp = b.data();
        for (std::size_t i = 0; i < B * Ho * Wo; ++i)
            std::copy(bp, bp + Cout, out.data() + i * Cout);
    }
    auto wrap = [](std::ptrdiff_t v, std::size_t n) -> std::size_t {
        std::ptrdiff_t m = v % std::ptrdiff_t(n);
        return std::size_t(m < 0 ? m + std::ptrdiff_t(n) : m);
    };
    const bool circ = (mode == PadMode::Circular);
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                T* orow = out.data() + ((bi * Ho + oy) * Wo + ox) * Cout;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy =
                        std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                    std::size_t yy;
                    if (circ)
                        yy = wrap(iy, H);
                    else if (iy < 0 || iy >= std::ptrdiff_t(H))
                        continue;
                    else
                        yy = std::size_t(iy);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t ix =
                            std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                        std::size_t xx;
                        if (circ)
                            xx = wrap(ix, W);
                        else if (ix < 0 || ix >= std::ptrdiff_t(W))
                            continue;
                        else
                            xx = std::size_t(ix);
                        const T* irow = xp + ((bi * H + yy) * W + xx) * Cin;
                        const T* wrow = wp + (ky * kw + kx) * Cg * Cout;
                        for (std::size_t g = 0; g < groups; ++g)
                            for (std::size_t ci = 0; ci < Cg; ++ci) {
                                const T xv = irow[g * Cg + ci];
                                const T* wcol = wrow + ci * Cout + g * cog;
                                T* ocol = orow + g * cog;
                                for (std::size_t co = 0; co < cog; ++co)
                                    ocol[co] += xv * wcol[co];
                            }
                    }
                }
            }
    detail::add_macs(mac_t(B) * Ho * Wo * Cout * kh * kw * Cg);

    auto px = x.impl();
    auto pw = w.impl();
    auto pb = b.valid() ? b.impl() : nullptr;
    return detail::make_op<T>(
        "conv2d", Shape{B, Ho, Wo, Cout}, std::move(out), {x, w, b},
        [px, pw, pb, B, H, W, Cin, kh, kw, Cg, Cout, cog, Ho, Wo, stride, pad, groups, circ,
         wrap](TensorImpl<T>& self) {
            const T* dy = self.grad.data();
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const T* drow = dy + ((bi * Ho + oy) * Wo + ox) * Cout;
                        if (pb) {
                            for (std::size_t co = 0; co < Cout; ++co) pb->grad[co] += drow[co];
                        }
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const std::ptrdiff_t iy =
                                std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                            std::size_t yy;
                            if (circ)
                                yy = wrap(iy, H);
                            else if (iy < 0 || iy >= std::ptrdiff_t(H))
                                continue;
                            else
                                yy = std::size_t(iy);
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const std::ptrdiff_t ix =
                                    std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                                std::size_t xx;
                                if (circ)
                                    xx = wrap(ix, W);
                                else if (ix < 0 || ix >= std::ptrdiff_t(W))
                                    continue;
                                else
                                    xx = std::size_t(ix);
                                const std::size_t ibase = ((bi * H + yy) * W + xx) * Cin;
                                const T* wrow = pw->data.data() + (ky * kw + kx) * Cg * Cout;
                                T* dwrow = pw->grad.data() + (ky * kw + kx) * Cg * Cout;
                                for (std::size_t g = 0; g < groups; ++g)
                                    for (std::size_t ci = 0; ci < Cg; ++ci) {
                                        const T xv = px->data[ibase + g * Cg + ci];
                                        const T* wcol = wrow + ci * Cout + g * cog;
                                        T* dwcol = dwrow + ci * Cout + g * cog;
                                        const T* dcol = drow + g * cog;
                                        T acc = T(0);
                                        for (std::size_t co = 0; co < cog; ++co) {
                                            acc += dcol[co] * wcol[co];
                                            dwcol[co] += dcol[co] * xv;
                                        }
                                        px->grad[ibase + g * Cg + ci] += acc;
                                    }
                            }
                        }
                    }
        });
}

}  // namespace twins
