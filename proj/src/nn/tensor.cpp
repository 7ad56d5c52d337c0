#include "uspose/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "uspose/error.hpp"

namespace uspose::nn {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

void check_shape(const Shape& s, const char* who) {
    for (int d : s)
        if (d <= 0) throw ShapeError(strf("%s: shape %s has a non-positive dimension", who, shape_str(s).c_str()));
}

int64_t div_floor(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

int64_t div_ceil(int64_t a, int64_t b) { return -div_floor(-a, b); }

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape(shape, "zeros");
    auto impl = std::make_shared<TensorData>();
    impl->value.assign(static_cast<size_t>(numel(shape)), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    if (requires_grad) impl->grad.assign(impl->value.size(), 0.0);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape, "from_data");
    if (static_cast<int64_t>(values.size()) != numel(shape))
        throw ShapeError(strf("from_data: %zu values for shape %s", values.size(), shape_str(shape).c_str()));
    auto impl = std::make_shared<TensorData>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    impl->needs_grad = requires_grad;
    if (requires_grad) impl->grad.assign(impl->value.size(), 0.0);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

Tensor Tensor::rand_uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.value()) v = rng.uniform(lo, hi);
    return t;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw UsageError(strf("item: tensor of shape %s is not a scalar", shape_str(shape()).c_str()));
    return impl_->value[0];
}

Tensor Tape::result(Shape shape, bool needs_grad) {
    Tensor t = Tensor::zeros(std::move(shape), false);
    t.impl_->needs_grad = needs_grad;
    if (needs_grad) t.impl_->grad.assign(t.value().size(), 0.0);
    return t;
}

void Tape::record(const Tensor& out, std::function<void()> fn) {
    if (out.needs_grad()) entries_.push_back({out.ptr(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw UsageError(strf("backward: loss must be a scalar, got shape %s",
                              loss.defined() ? shape_str(loss.shape()).c_str() : "(undefined)"));
    if (!loss.needs_grad())
        throw UsageError("backward: loss does not depend on any requires_grad tensor");
    loss.ptr()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    entries_.clear();
}

// ---------------------------------------------------------------------------
// elementwise with suffix broadcast

namespace {

// Returns true if `small` is a suffix of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    const Tensor *big = &a, *small = &b;
    if (a.shape() != b.shape()) {
        if (is_suffix(b.shape(), a.shape())) {
            big = &a;
            small = &b;
        } else if (is_suffix(a.shape(), b.shape())) {
            big = &b;
            small = &a;
        } else {
            throw ShapeError(strf("add: shapes %s and %s are not broadcastable",
                                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
        }
    }
    const int64_t tail = small->size();
    const int64_t total = big->size();
    Tensor out = result(big->shape(), a.needs_grad() || b.needs_grad());
    const double* bv = big->value().data();
    const double* sv = small->value().data();
    double* ov = out.value().data();
    for (int64_t i = 0; i < total; ++i) ov[i] = bv[i] + sv[i % tail];
    record(out, [bigp = big->ptr(), smallp = small->ptr(), outp = out.ptr(), tail, total]() {
        const double* g = outp->grad.data();
        if (bigp->needs_grad) {
            double* bg = bigp->grad.data();
            for (int64_t i = 0; i < total; ++i) bg[i] += g[i];
        }
        if (smallp->needs_grad) {
            double* sg = smallp->grad.data();
            for (int64_t i = 0; i < total; ++i) sg[i % tail] += g[i];
        }
    });
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    const Tensor *big = &a, *small = &b;
    if (a.shape() != b.shape()) {
        if (is_suffix(b.shape(), a.shape())) {
            big = &a;
            small = &b;
        } else if (is_suffix(a.shape(), b.shape())) {
            big = &b;
            small = &a;
        } else {
            throw ShapeError(strf("mul: shapes %s and %s are not broadcastable",
                                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
        }
    }
    const int64_t tail = small->size();
    const int64_t total = big->size();
    Tensor out = result(big->shape(), a.needs_grad() || b.needs_grad());
    const double* bv = big->value().data();
    const double* sv = small->value().data();
    double* ov = out.value().data();
    for (int64_t i = 0; i < total; ++i) ov[i] = bv[i] * sv[i % tail];
    record(out, [bigp = big->ptr(), smallp = small->ptr(), outp = out.ptr(), tail, total]() {
        const double* g = outp->grad.data();
        const double* bv = bigp->value.data();
        const double* sv = smallp->value.data();
        if (bigp->needs_grad) {
            double* bg = bigp->grad.data();
            for (int64_t i = 0; i < total; ++i) bg[i] += g[i] * sv[i % tail];
        }
        if (smallp->needs_grad) {
            double* sg = smallp->grad.data();
            for (int64_t i = 0; i < total; ++i) sg[i % tail] += g[i] * bv[i];
        }
    });
    return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
    Tensor out = result(a.shape(), a.needs_grad());
    const double* av = a.value().data();
    double* ov = out.value().data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    record(out, [ap = a.ptr(), outp = out.ptr(), c, n]() {
        if (!ap->needs_grad) return;
        const double* g = outp->grad.data();
        double* ag = ap->grad.data();
        for (int64_t i = 0; i < n; ++i) ag[i] += g[i] * c;
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError(strf("matmul: incompatible shapes %s x %s", shape_str(a.shape()).c_str(),
                              shape_str(b.shape()).c_str()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = result({m, n}, a.needs_grad() || b.needs_grad());
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = out.value().data();
    for (int i = 0; i < m; ++i) {
        double* orow = ov + static_cast<size_t>(i) * n;
        const double* arow = av + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double x = arow[kk];
            const double* brow = bv + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    record(out, [ap = a.ptr(), bp = b.ptr(), outp = out.ptr(), m, k, n]() {
        const double* g = outp->grad.data();
        if (ap->needs_grad) {
            double* ag = ap->grad.data();
            const double* bv = bp->value.data();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const double* grow = g + static_cast<size_t>(i) * n;
                    const double* brow = bv + static_cast<size_t>(kk) * n;
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ag[static_cast<size_t>(i) * k + kk] += acc;
                }
        }
        if (bp->needs_grad) {
            double* bg = bp->grad.data();
            const double* av = ap->value.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<size_t>(i) * n;
                const double* arow = av + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double x = arow[kk];
                    double* brow = bg + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) brow[j] += x * grow[j];
                }
            }
        }
    });
    return out;
}

Tensor Tape::dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() < 1 || w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0))
        throw ShapeError(strf("dense: input %s incompatible with weight %s", shape_str(x.shape()).c_str(),
                              shape_str(w.shape()).c_str()));
    const int in = w.dim(0), outf = w.dim(1);
    if (!b.defined() || b.rank() != 1 || b.dim(0) != outf)
        throw ShapeError(strf("dense: bias %s incompatible with weight %s",
                              b.defined() ? shape_str(b.shape()).c_str() : "(undefined)",
                              shape_str(w.shape()).c_str()));
    const int64_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    Tensor out = result(std::move(out_shape), x.needs_grad() || w.needs_grad() || b.needs_grad());
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    const double* bv = b.value().data();
    double* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        double* orow = ov + r * outf;
        std::memcpy(orow, bv, sizeof(double) * outf);
        const double* xrow = xv + r * in;
        for (int i = 0; i < in; ++i) {
            const double xi = xrow[i];
            const double* wrow = wv + static_cast<size_t>(i) * outf;
            for (int o = 0; o < outf; ++o) orow[o] += xi * wrow[o];
        }
    }
    record(out, [xp = x.ptr(), wp = w.ptr(), bp = b.ptr(), outp = out.ptr(), rows, in, outf]() {
        const double* g = outp->grad.data();
        if (xp->needs_grad) {
            double* xg = xp->grad.data();
            const double* wv = wp->value.data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* grow = g + r * outf;
                double* xgrow = xg + r * in;
                for (int i = 0; i < in; ++i) {
                    const double* wrow = wv + static_cast<size_t>(i) * outf;
                    double acc = 0.0;
                    for (int o = 0; o < outf; ++o) acc += grow[o] * wrow[o];
                    xgrow[i] += acc;
                }
            }
        }
        if (wp->needs_grad) {
            double* wg = wp->grad.data();
            const double* xv = xp->value.data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* grow = g + r * outf;
                const double* xrow = xv + r * in;
                for (int i = 0; i < in; ++i) {
                    const double xi = xrow[i];
                    double* wgrow = wg + static_cast<size_t>(i) * outf;
                    for (int o = 0; o < outf; ++o) wgrow[o] += xi * grow[o];
                }
            }
        }
        if (bp->needs_grad) {
            double* bg = bp->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* grow = g + r * outf;
                for (int o = 0; o < outf; ++o) bg[o] += grow[o];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// convolution and pooling

Tensor Tape::conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1))
        throw ShapeError(strf("conv1d: input %s incompatible with weight %s", shape_str(x.shape()).c_str(),
                              shape_str(w.shape()).c_str()));
    if (!b.defined() || b.rank() != 1 || b.dim(0) != w.dim(0))
        throw ShapeError(strf("conv1d: bias %s incompatible with weight %s",
                              b.defined() ? shape_str(b.shape()).c_str() : "(undefined)",
                              shape_str(w.shape()).c_str()));
    if (stride < 1 || padding < 0)
        throw ShapeError(strf("conv1d: stride %d / padding %d out of range", stride, padding));
    const int batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const int cout = w.dim(0), kernel = w.dim(2);
    const int out_len = static_cast<int>((len + 2LL * padding - kernel) / stride + 1);
    if (len + 2 * padding < kernel)
        throw ShapeError(strf("conv1d: kernel %d exceeds padded input length %d", kernel, len + 2 * padding));

    Tensor out = result({batch, cout, out_len}, x.needs_grad() || w.needs_grad() || b.needs_grad());
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    const double* bv = b.value().data();
    double* ov = out.value().data();
    for (int n = 0; n < batch; ++n) {
        const double* xb = xv + static_cast<size_t>(n) * cin * len;
        double* ob = ov + static_cast<size_t>(n) * cout * out_len;
        for (int co = 0; co < cout; ++co) {
            double* orow = ob + static_cast<size_t>(co) * out_len;
            for (int l = 0; l < out_len; ++l) orow[l] = bv[co];
            for (int ci = 0; ci < cin; ++ci) {
                const double* xrow = xb + static_cast<size_t>(ci) * len;
                const double* wrow = wv + (static_cast<size_t>(co) * cin + ci) * kernel;
                for (int k = 0; k < kernel; ++k) {
                    const double wk = wrow[k];
                    const int off = k - padding;
                    const int l_lo = static_cast<int>(std::max<int64_t>(0, div_ceil(-off, stride)));
                    const int l_hi = static_cast<int>(std::min<int64_t>(out_len - 1, div_floor(len - 1 - off, stride)));
                    if (stride == 1) {
                        const double* src = xrow + off + l_lo;
                        double* dst = orow + l_lo;
                        const int span = l_hi - l_lo + 1;
                        for (int l = 0; l < span; ++l) dst[l] += wk * src[l];
                    } else {
                        for (int l = l_lo; l <= l_hi; ++l) orow[l] += wk * xrow[l * stride + off];
                    }
                }
            }
        }
    }
    record(out, [xp = x.ptr(), wp = w.ptr(), bp = b.ptr(), outp = out.ptr(), batch, cin, len, cout, kernel,
                 out_len, stride, padding]() {
        const double* g = outp->grad.data();
        const double* xv = xp->value.data();
        const double* wv = wp->value.data();
        for (int n = 0; n < batch; ++n) {
            const double* gb = g + static_cast<size_t>(n) * cout * out_len;
            const double* xb = xv + static_cast<size_t>(n) * cin * len;
            double* xgb = xp->needs_grad ? xp->grad.data() + static_cast<size_t>(n) * cin * len : nullptr;
            for (int co = 0; co < cout; ++co) {
                const double* grow = gb + static_cast<size_t>(co) * out_len;
                if (bp->needs_grad) {
                    double acc = 0.0;
                    for (int l = 0; l < out_len; ++l) acc += grow[l];
                    bp->grad[co] += acc;
                }
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xrow = xb + static_cast<size_t>(ci) * len;
                    const size_t wbase = (static_cast<size_t>(co) * cin + ci) * kernel;
                    for (int k = 0; k < kernel; ++k) {
                        const int off = k - padding;
                        const int l_lo = static_cast<int>(std::max<int64_t>(0, div_ceil(-off, stride)));
                        const int l_hi =
                            static_cast<int>(std::min<int64_t>(out_len - 1, div_floor(len - 1 - off, stride)));
                        if (wp->needs_grad) {
                            double acc = 0.0;
                            if (stride == 1) {
                                const double* src = xrow + off + l_lo;
                                const double* gg = grow + l_lo;
                                const int span = l_hi - l_lo + 1;
                                for (int l = 0; l < span; ++l) acc += src[l] * gg[l];
                            } else {
                                for (int l = l_lo; l <= l_hi; ++l) acc += xrow[l * stride + off] * grow[l];
                            }
                            wp->grad[wbase + k] += acc;
                        }
                        if (xgb) {
                            const double wk = wv[wbase + k];
                            double* xgrow = xgb + static_cast<size_t>(ci) * len;
                            if (stride == 1) {
                                double* dst = xgrow + off + l_lo;
                                const double* gg = grow + l_lo;
                                const int span = l_hi - l_lo + 1;
                                for (int l = 0; l < span; ++l) dst[l] += wk * gg[l];
                            } else {
                                for (int l = l_lo; l <= l_hi; ++l) xgrow[l * stride + off] += wk * grow[l];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor Tape::max_pool1d(const Tensor& x, int width, int stride) {
    if (x.rank() < 1) throw ShapeError("max_pool1d: input must have at least one axis");
    if (width < 1 || stride < 1)
        throw ShapeError(strf("max_pool1d: width %d / stride %d out of range", width, stride));
    const int len = x.dim(x.rank() - 1);
    if (len < width)
        throw ShapeError(strf("max_pool1d: window %d exceeds input length %d", width, len));
    const int out_len = (len - width) / stride + 1;
    const int64_t rows = x.size() / len;
    Shape out_shape = x.shape();
    out_shape.back() = out_len;
    Tensor out = result(std::move(out_shape), x.needs_grad());
    std::vector<int32_t> argmax(static_cast<size_t>(rows) * out_len);
    const double* xv = x.value().data();
    double* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xrow = xv + r * len;
        double* orow = ov + r * out_len;
        int32_t* arow = argmax.data() + r * out_len;
        for (int l = 0; l < out_len; ++l) {
            int best = l * stride;
            double bestv = xrow[best];
            for (int k = 1; k < width; ++k) {
                const int idx = l * stride + k;
                if (xrow[idx] > bestv) {
                    bestv = xrow[idx];
                    best = idx;
                }
            }
            orow[l] = bestv;
            arow[l] = best;
        }
    }
    record(out, [xp = x.ptr(), outp = out.ptr(), am = std::move(argmax), rows, len, out_len]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        double* xg = xp->grad.data();
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g + r * out_len;
            double* xgrow = xg + r * len;
            const int32_t* arow = am.data() + r * out_len;
            for (int l = 0; l < out_len; ++l) xgrow[arow[l]] += grow[l];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// activations and regularization

Tensor Tape::relu(const Tensor& x) {
    Tensor out = result(x.shape(), x.needs_grad());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    record(out, [xp = x.ptr(), outp = out.ptr(), n]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        const double* xv = xp->value.data();
        double* xg = xp->grad.data();
        for (int64_t i = 0; i < n; ++i)
            if (xv[i] > 0.0) xg[i] += g[i];
    });
    return out;
}

Tensor Tape::dropout(const Tensor& x, double rate, bool train, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError(strf("dropout: rate %g outside [0, 1)", rate));
    if (!train || rate == 0.0) return x;  // exact identity
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    const int64_t n = x.size();
    std::vector<float> mask(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) mask[i] = rng.uniform() < rate ? 0.0f : 1.0f;
    Tensor out = result(x.shape(), x.needs_grad());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] * mask[i] * inv_keep;
    record(out, [xp = x.ptr(), outp = out.ptr(), m = std::move(mask), inv_keep, n]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        double* xg = xp->grad.data();
        for (int64_t i = 0; i < n; ++i) xg[i] += g[i] * m[i] * inv_keep;
    });
    return out;
}

// ---------------------------------------------------------------------------
// normalization, softmax, reductions

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have at least one axis");
    if (!(eps > 0.0)) throw ShapeError(strf("layer_norm: eps %g must be > 0", eps));
    const int d = x.dim(x.rank() - 1);
    const bool affine = gain.defined() || bias.defined();
    if (affine) {
        if (!gain.defined() || !bias.defined() || gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 ||
            bias.dim(0) != d)
            throw ShapeError(strf("layer_norm: gain/bias must both be [%d]", d));
    }
    const int64_t rows = x.size() / d;
    bool needs = x.needs_grad() || (affine && (gain.needs_grad() || bias.needs_grad()));
    Tensor out = result(x.shape(), needs);
    std::vector<double> inv_std(static_cast<size_t>(rows));
    std::vector<double> normed(x.value().size());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    const double* gv = affine ? gain.value().data() : nullptr;
    const double* bv = affine ? bias.value().data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
        const double* xrow = xv + r * d;
        double mean = 0.0;
        for (int i = 0; i < d; ++i) mean += xrow[i];
        mean /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = xrow[i] - mean;
            var += c * c;
        }
        var /= d;
        const double r_inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = r_inv;
        double* nrow = normed.data() + r * d;
        double* orow = ov + r * d;
        for (int i = 0; i < d; ++i) {
            nrow[i] = (xrow[i] - mean) * r_inv;
            orow[i] = affine ? nrow[i] * gv[i] + bv[i] : nrow[i];
        }
    }
    record(out, [xp = x.ptr(), gp = affine ? gain.ptr() : nullptr, bp = affine ? bias.ptr() : nullptr,
                 outp = out.ptr(), inv = std::move(inv_std), nrm = std::move(normed), rows, d]() {
        const double* g = outp->grad.data();
        const bool affine = gp != nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g + r * d;
            const double* nrow = nrm.data() + r * d;
            if (affine) {
                if (gp->needs_grad) {
                    double* gg = gp->grad.data();
                    for (int i = 0; i < d; ++i) gg[i] += grow[i] * nrow[i];
                }
                if (bp->needs_grad) {
                    double* bg = bp->grad.data();
                    for (int i = 0; i < d; ++i) bg[i] += grow[i];
                }
            }
            if (xp->needs_grad) {
                // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                double sum_dn = 0.0, sum_dn_n = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double dn = affine ? grow[i] * gp->value[i] : grow[i];
                    sum_dn += dn;
                    sum_dn_n += dn * nrow[i];
                }
                const double mean_dn = sum_dn / d;
                const double mean_dn_n = sum_dn_n / d;
                double* xgrow = xp->grad.data() + r * d;
                for (int i = 0; i < d; ++i) {
                    const double dn = affine ? grow[i] * gp->value[i] : grow[i];
                    xgrow[i] += inv[r] * (dn - mean_dn - nrow[i] * mean_dn_n);
                }
            }
        }
    });
    return out;
}

namespace {

struct AxisStrides {
    int64_t outer, n, inner;
};

AxisStrides axis_strides(const Shape& shape, int axis, const char* who) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw ShapeError(strf("%s: axis %d out of range for shape %s", who, axis, shape_str(shape).c_str()));
    AxisStrides s{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[i];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor Tape::softmax(const Tensor& x, int axis) {
    const auto st = axis_strides(x.shape(), axis, "softmax");
    Tensor out = result(x.shape(), x.needs_grad());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    for (int64_t o = 0; o < st.outer; ++o)
        for (int64_t i = 0; i < st.inner; ++i) {
            const int64_t base = o * st.n * st.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < st.n; ++j) mx = std::max(mx, xv[base + j * st.inner]);
            double z = 0.0;
            for (int64_t j = 0; j < st.n; ++j) {
                const double e = std::exp(xv[base + j * st.inner] - mx);
                ov[base + j * st.inner] = e;
                z += e;
            }
            const double invz = 1.0 / z;
            for (int64_t j = 0; j < st.n; ++j) ov[base + j * st.inner] *= invz;
        }
    record(out, [xp = x.ptr(), outp = out.ptr(), st]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        const double* p = outp->value.data();
        double* xg = xp->grad.data();
        for (int64_t o = 0; o < st.outer; ++o)
            for (int64_t i = 0; i < st.inner; ++i) {
                const int64_t base = o * st.n * st.inner + i;
                double dot = 0.0;
                for (int64_t j = 0; j < st.n; ++j) dot += g[base + j * st.inner] * p[base + j * st.inner];
                for (int64_t j = 0; j < st.n; ++j) {
                    const int64_t idx = base + j * st.inner;
                    xg[idx] += p[idx] * (g[idx] - dot);
                }
            }
    });
    return out;
}

Tensor Tape::mean(const Tensor& x, int axis) {
    const auto st = axis_strides(x.shape(), axis, "mean");
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    Tensor out = result(std::move(out_shape), x.needs_grad());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    const double inv_n = 1.0 / static_cast<double>(st.n);
    for (int64_t o = 0; o < st.outer; ++o)
        for (int64_t i = 0; i < st.inner; ++i) {
            double acc = 0.0;
            const int64_t base = o * st.n * st.inner + i;
            for (int64_t j = 0; j < st.n; ++j) acc += xv[base + j * st.inner];
            ov[o * st.inner + i] = acc * inv_n;
        }
    record(out, [xp = x.ptr(), outp = out.ptr(), st, inv_n]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        double* xg = xp->grad.data();
        for (int64_t o = 0; o < st.outer; ++o)
            for (int64_t i = 0; i < st.inner; ++i) {
                const double d = g[o * st.inner + i] * inv_n;
                const int64_t base = o * st.n * st.inner + i;
                for (int64_t j = 0; j < st.n; ++j) xg[base + j * st.inner] += d;
            }
    });
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    Tensor out = result({}, x.needs_grad());
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    out.value()[0] = acc;
    record(out, [xp = x.ptr(), outp = out.ptr()]() {
        if (!xp->needs_grad) return;
        const double g = outp->grad[0];
        for (auto& v : xp->grad) v += g;
    });
    return out;
}

// ---------------------------------------------------------------------------
// structural ops

Tensor Tape::concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = xs[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw ShapeError(strf("concat: axis %d out of range for shape %s", axis, shape_str(first).c_str()));
    Shape out_shape = first;
    int total_axis = 0;
    bool needs = false;
    for (const auto& t : xs) {
        if (t.rank() != static_cast<int>(first.size()))
            throw ShapeError(strf("concat: rank mismatch %s vs %s", shape_str(first).c_str(),
                                  shape_str(t.shape()).c_str()));
        for (int i = 0; i < t.rank(); ++i)
            if (i != axis && t.dim(i) != first[i])
                throw ShapeError(strf("concat: shape %s differs from %s outside axis %d",
                                      shape_str(t.shape()).c_str(), shape_str(first).c_str(), axis));
        total_axis += t.dim(axis);
        needs = needs || t.needs_grad();
    }
    out_shape[axis] = total_axis;
    Tensor out = result(out_shape, needs);

    const auto st = axis_strides(out_shape, axis, "concat");
    double* ov = out.value().data();
    int64_t axis_off = 0;
    for (const auto& t : xs) {
        const int64_t tn = t.dim(axis);
        const double* tv = t.value().data();
        for (int64_t o = 0; o < st.outer; ++o)
            std::memcpy(ov + (o * st.n + axis_off) * st.inner, tv + o * tn * st.inner,
                        sizeof(double) * tn * st.inner);
        axis_off += tn;
    }
    std::vector<std::shared_ptr<TensorData>> parents;
    std::vector<int64_t> spans;
    for (const auto& t : xs) {
        parents.push_back(t.ptr());
        spans.push_back(t.dim(axis));
    }
    record(out, [parents, spans, outp = out.ptr(), st]() {
        const double* g = outp->grad.data();
        int64_t axis_off = 0;
        for (size_t p = 0; p < parents.size(); ++p) {
            const int64_t tn = spans[p];
            if (parents[p]->needs_grad) {
                double* tg = parents[p]->grad.data();
                for (int64_t o = 0; o < st.outer; ++o) {
                    const double* src = g + (o * st.n + axis_off) * st.inner;
                    double* dst = tg + o * tn * st.inner;
                    for (int64_t i = 0; i < tn * st.inner; ++i) dst[i] += src[i];
                }
            }
            axis_off += tn;
        }
    });
    return out;
}

Tensor Tape::reshape(const Tensor& x, Shape new_shape) {
    check_shape(new_shape, "reshape");
    if (numel(new_shape) != x.size())
        throw ShapeError(strf("reshape: cannot view %s as %s", shape_str(x.shape()).c_str(),
                              shape_str(new_shape).c_str()));
    Tensor out = result(std::move(new_shape), x.needs_grad());
    out.value() = x.value();
    record(out, [xp = x.ptr(), outp = out.ptr()]() {
        if (!xp->needs_grad) return;
        const double* g = outp->grad.data();
        double* xg = xp->grad.data();
        for (size_t i = 0; i < xp->grad.size(); ++i) xg[i] += g[i];
    });
    return out;
}

Tensor Tape::patches(const Tensor& x, int patch_height, int patch_width) {
    if (x.rank() != 3)
        throw ShapeError(strf("patches: expected [N,C,L], got %s", shape_str(x.shape()).c_str()));
    const int batch = x.dim(0), channels = x.dim(1), len = x.dim(2);
    if (patch_height < 1 || channels % patch_height != 0)
        throw ShapeError(strf("patches: patch height %d does not divide %d channels", patch_height, channels));
    if (patch_width < 1 || len % patch_width != 0)
        throw ShapeError(strf("patches: patch width %d does not divide length %d", patch_width, len));
    const int grid_rows = channels / patch_height;
    const int grid_cols = len / patch_width;
    const int tokens = grid_rows * grid_cols;
    const int patch_dim = patch_height * patch_width;
    Tensor out = result({batch, tokens, patch_dim}, x.needs_grad());
    const double* xv = x.value().data();
    double* ov = out.value().data();
    for (int n = 0; n < batch; ++n)
        for (int gr = 0; gr < grid_rows; ++gr)
            for (int gc = 0; gc < grid_cols; ++gc) {
                const int t = gr * grid_cols + gc;
                double* dst = ov + (static_cast<size_t>(n) * tokens + t) * patch_dim;
                for (int dr = 0; dr < patch_height; ++dr) {
                    const double* src =
                        xv + (static_cast<size_t>(n) * channels + gr * patch_height + dr) * len + gc * patch_width;
                    std::memcpy(dst + static_cast<size_t>(dr) * patch_width, src, sizeof(double) * patch_width);
                }
            }
    record(out, [xp = x.ptr(), outp = out.ptr(), batch, channels, len, grid_rows, grid_cols, patch_height,
                 patch_width]() {
        if (!xp->needs_grad) return;
        const int tokens = grid_rows * grid_cols;
        const int patch_dim = patch_height * patch_width;
        const double* g = outp->grad.data();
        double* xg = xp->grad.data();
        for (int n = 0; n < batch; ++n)
            for (int gr = 0; gr < grid_rows; ++gr)
                for (int gc = 0; gc < grid_cols; ++gc) {
                    const int t = gr * grid_cols + gc;
                    const double* src = g + (static_cast<size_t>(n) * tokens + t) * patch_dim;
                    for (int dr = 0; dr < patch_height; ++dr) {
                        double* dst = xg + (static_cast<size_t>(n) * channels + gr * patch_height + dr) * len +
                                      gc * patch_width;
                        const double* s = src + static_cast<size_t>(dr) * patch_width;
                        for (int i = 0; i < patch_width; ++i) dst[i] += s[i];
                    }
                }
    });
    return out;
}

// ---------------------------------------------------------------------------
// attention

Tensor Tape::attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
        throw ShapeError(strf("attention: q %s, k %s, v %s must share shape [N,T,D]",
                              shape_str(q.shape()).c_str(), shape_str(k.shape()).c_str(),
                              shape_str(v.shape()).c_str()));
    const int batch = q.dim(0), tokens = q.dim(1), dim = q.dim(2);
    if (heads < 1 || dim % heads != 0)
        throw ShapeError(strf("attention: %d heads do not divide embedding dim %d", heads, dim));
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool needs = q.needs_grad() || k.needs_grad() || v.needs_grad();
    Tensor out = result(q.shape(), needs);

    // probs[n][h] is a T x T row-softmax matrix, kept for the backward pass.
    std::vector<double> probs(static_cast<size_t>(batch) * heads * tokens * tokens);
    const double* qv = q.value().data();
    const double* kv = k.value().data();
    const double* vv = v.value().data();
    double* ov = out.value().data();
    auto at = [&](const double* base, int n, int t, int h, int c) {
        return base[(static_cast<size_t>(n) * tokens + t) * dim + h * hd + c];
    };
    for (int n = 0; n < batch; ++n)
        for (int h = 0; h < heads; ++h) {
            double* pmat = probs.data() + ((static_cast<size_t>(n) * heads + h) * tokens) * tokens;
            for (int i = 0; i < tokens; ++i) {
                double* prow = pmat + static_cast<size_t>(i) * tokens;
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < tokens; ++j) {
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) s += at(qv, n, i, h, c) * at(kv, n, j, h, c);
                    prow[j] = s * scale;
                    mx = std::max(mx, prow[j]);
                }
                double z = 0.0;
                for (int j = 0; j < tokens; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    z += prow[j];
                }
                const double invz = 1.0 / z;
                for (int j = 0; j < tokens; ++j) prow[j] *= invz;
                double* orow = ov + (static_cast<size_t>(n) * tokens + i) * dim + h * hd;
                for (int c = 0; c < hd; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < tokens; ++j) acc += prow[j] * at(vv, n, j, h, c);
                    orow[c] = acc;
                }
            }
        }
    record(out, [qp = q.ptr(), kp = k.ptr(), vp = v.ptr(), outp = out.ptr(), pr = std::move(probs), batch,
                 tokens, dim, heads, hd, scale]() {
        const double* g = outp->grad.data();
        const double* qv = qp->value.data();
        const double* kv = kp->value.data();
        const double* vv = vp->value.data();
        auto idx = [&](int n, int t, int h, int c) {
            return (static_cast<size_t>(n) * tokens + t) * dim + h * hd + c;
        };
        std::vector<double> dp(static_cast<size_t>(tokens) * tokens);
        for (int n = 0; n < batch; ++n)
            for (int h = 0; h < heads; ++h) {
                const double* pmat = pr.data() + ((static_cast<size_t>(n) * heads + h) * tokens) * tokens;
                // dV = P^T dO; dP = dO V^T
                if (vp->needs_grad) {
                    double* vg = vp->grad.data();
                    for (int j = 0; j < tokens; ++j)
                        for (int c = 0; c < hd; ++c) {
                            double acc = 0.0;
                            for (int i = 0; i < tokens; ++i)
                                acc += pmat[static_cast<size_t>(i) * tokens + j] * g[idx(n, i, h, c)];
                            vg[idx(n, j, h, c)] += acc;
                        }
                }
                if (!qp->needs_grad && !kp->needs_grad) continue;
                for (int i = 0; i < tokens; ++i)
                    for (int j = 0; j < tokens; ++j) {
                        double acc = 0.0;
                        for (int c = 0; c < hd; ++c) acc += g[idx(n, i, h, c)] * vv[idx(n, j, h, c)];
                        dp[static_cast<size_t>(i) * tokens + j] = acc;
                    }
                // dS = P o (dP - rowdot(dP, P)); dQ = scale * dS K; dK = scale * dS^T Q
                for (int i = 0; i < tokens; ++i) {
                    const double* prow = pmat + static_cast<size_t>(i) * tokens;
                    double* dprow = dp.data() + static_cast<size_t>(i) * tokens;
                    double rowdot = 0.0;
                    for (int j = 0; j < tokens; ++j) rowdot += dprow[j] * prow[j];
                    for (int j = 0; j < tokens; ++j) dprow[j] = prow[j] * (dprow[j] - rowdot);
                }
                if (qp->needs_grad) {
                    double* qg = qp->grad.data();
                    for (int i = 0; i < tokens; ++i)
                        for (int c = 0; c < hd; ++c) {
                            double acc = 0.0;
                            for (int j = 0; j < tokens; ++j)
                                acc += dp[static_cast<size_t>(i) * tokens + j] * kv[idx(n, j, h, c)];
                            qg[idx(n, i, h, c)] += scale * acc;
                        }
                }
                if (kp->needs_grad) {
                    double* kg = kp->grad.data();
                    for (int j = 0; j < tokens; ++j)
                        for (int c = 0; c < hd; ++c) {
                            double acc = 0.0;
                            for (int i = 0; i < tokens; ++i)
                                acc += dp[static_cast<size_t>(i) * tokens + j] * qv[idx(n, i, h, c)];
                            kg[idx(n, j, h, c)] += scale * acc;
                        }
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// loss

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw ShapeError(strf("cross_entropy: logits must be [batch, classes], got %s",
                              shape_str(logits.shape()).c_str()));
    const int batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw ShapeError(strf("cross_entropy: %zu labels for batch %d", labels.size(), batch));
    for (int n = 0; n < batch; ++n)
        if (labels[n] < 0 || labels[n] >= classes)
            throw InputError(strf("cross_entropy: label %d at index %d outside [0, %d)", labels[n], n, classes));

    Tensor out = result({}, logits.needs_grad());
    std::vector<double> probs(logits.value().size());
    const double* lv = logits.value().data();
    double loss = 0.0;
    for (int n = 0; n < batch; ++n) {
        const double* row = lv + static_cast<size_t>(n) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        double* prow = probs.data() + static_cast<size_t>(n) * classes;
        for (int c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - mx);
            z += prow[c];
        }
        const double invz = 1.0 / z;
        for (int c = 0; c < classes; ++c) prow[c] *= invz;
        loss += std::log(z) + mx - row[labels[n]];
    }
    out.value()[0] = loss / batch;
    record(out, [lp = logits.ptr(), outp = out.ptr(), pr = std::move(probs), labels, batch, classes]() {
        if (!lp->needs_grad) return;
        const double g = outp->grad[0] / batch;
        double* lg = lp->grad.data();
        for (int n = 0; n < batch; ++n) {
            const double* prow = pr.data() + static_cast<size_t>(n) * classes;
            double* grow = lg + static_cast<size_t>(n) * classes;
            for (int c = 0; c < classes; ++c) grow[c] += g * (prow[c] - (c == labels[n] ? 1.0 : 0.0));
        }
    });
    return out;
}

}  // namespace uspose::nn
