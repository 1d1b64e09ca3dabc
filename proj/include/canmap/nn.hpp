#pragma once

// Layer library with explicit forward/backward. Every forward writes what the
// matching backward needs into a caller-owned context, so one network can be
// run several times per step (the cycle objective needs that) without the
// passes clobbering each other. Templated on the scalar type: production runs
// float (dispatched kernels), gradient checks run double (scalar kernels).

#include <any>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "canmap/kernels.hpp"
#include "canmap/rng.hpp"
#include "canmap/tensor.hpp"

namespace canmap::nn {

template <class T>
struct Param {
    std::string name;
    Tensor<T> v;
    Tensor<T> g;

    void init_shape(std::vector<int> shape) {
        v = Tensor<T>(shape);
        g = Tensor<T>(std::move(shape));
    }
};

template <class T>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& x : t.data) x = static_cast<T>(rng.normal(0.0, stddev));
}

template <class T>
void init_he(Tensor<T>& t, Rng& rng, int fan_in) {
    init_normal(t, rng, std::sqrt(2.0 / fan_in));
}

template <class T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    virtual Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool training) = 0;
    // gy is the gradient w.r.t. the forward output; returns gradient w.r.t.
    // the input. accum_params=false skips parameter-gradient accumulation
    // (used when a frozen discriminator only relays gradients to a generator).
    virtual Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool accum_params) = 0;
    virtual void collect(std::vector<Param<T>*>& out) { (void)out; }

    const std::string& name() const { return name_; }

private:
    std::string name_;
};

// ---------------------------------------------------------------------------
// Conv2d: W [cout, cin*kh*kw], bias [cout]; forward lowers to im2col + GEMM.
// ---------------------------------------------------------------------------

template <class T>
class Conv2d : public Layer<T> {
public:
    Conv2d(std::string name, int cin, int cout, int k, int stride, int pad, kern::Pad pad_mode,
           Rng& rng, double init_std = 0.02)
        : Layer<T>(std::move(name)), cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
          pad_mode_(pad_mode) {
        w_.name = this->name() + ".w";
        w_.init_shape({cout, cin * k * k});
        b_.name = this->name() + ".b";
        b_.init_shape({cout});
        init_normal(w_.v, rng, init_std);
    }

    struct Ctx {
        Tensor<T> col; // [N, cin*k*k, outH*outW]
        int H = 0, W = 0;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        if (x.dim(1) != cin_)
            throw std::invalid_argument(this->name() + ": expected " + std::to_string(cin_) +
                                        " input channels, got " + std::to_string(x.dim(1)));
        const int oh = kern::conv_out_dim(H, k_, stride_, pad_);
        const int ow = kern::conv_out_dim(W, k_, stride_, pad_);
        const int kk = cin_ * k_ * k_;
        Ctx c;
        c.H = H;
        c.W = W;
        c.col = Tensor<T>({N, kk, oh * ow});
        Tensor<T> y({N, cout_, oh, ow});
        for (int n = 0; n < N; ++n) {
            T* col_n = c.col.ptr() + static_cast<int64_t>(n) * kk * oh * ow;
            kern::im2col(x.ptr() + static_cast<int64_t>(n) * cin_ * H * W, cin_, H, W, k_, k_,
                         stride_, pad_, pad_mode_, col_n);
            T* y_n = y.ptr() + static_cast<int64_t>(n) * cout_ * oh * ow;
            kern::gemm_nn(cout_, oh * ow, kk, w_.v.ptr(), kk, col_n, oh * ow, y_n, oh * ow, false);
            for (int co = 0; co < cout_; ++co) {
                T bv = b_.v[co];
                T* row = y_n + static_cast<int64_t>(co) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) row[i] += bv;
            }
        }
        ctx = std::move(c);
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool accum_params) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const int N = gy.dim(0), oh = gy.dim(2), ow = gy.dim(3);
        const int kk = cin_ * k_ * k_;
        // dX needs W^T once per backward
        Tensor<T> wt({kk, cout_});
        kern::transpose(w_.v.ptr(), cout_, kk, wt.ptr());
        Tensor<T> dx({N, cin_, c.H, c.W}, T(0));
        Tensor<T> dcol({kk, oh * ow});
        for (int n = 0; n < N; ++n) {
            const T* gy_n = gy.ptr() + static_cast<int64_t>(n) * cout_ * oh * ow;
            const T* col_n = c.col.ptr() + static_cast<int64_t>(n) * kk * oh * ow;
            if (accum_params) {
                kern::gemm_nt(cout_, kk, oh * ow, gy_n, oh * ow, col_n, oh * ow, w_.g.ptr(), kk,
                              true);
                for (int co = 0; co < cout_; ++co)
                    b_.g[co] += static_cast<T>(
                        kern::sum(gy_n + static_cast<int64_t>(co) * oh * ow, oh * ow));
            }
            kern::gemm_nn(kk, oh * ow, cout_, wt.ptr(), cout_, gy_n, oh * ow, dcol.ptr(), oh * ow,
                          false);
            kern::col2im(dcol.ptr(), cin_, c.H, c.W, k_, k_, stride_, pad_, pad_mode_,
                         dx.ptr() + static_cast<int64_t>(n) * cin_ * c.H * c.W);
        }
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

private:
    int cin_, cout_, k_, stride_, pad_;
    kern::Pad pad_mode_;
    Param<T> w_, b_;
};

// ---------------------------------------------------------------------------
// ConvTranspose2d: W [cin, cout*kh*kw]; forward is the data-gradient of the
// matching strided convolution (GEMM + col2im scatter).
// ---------------------------------------------------------------------------

template <class T>
class ConvTranspose2d : public Layer<T> {
public:
    ConvTranspose2d(std::string name, int cin, int cout, int k, int stride, int pad, Rng& rng,
                    double init_std = 0.02)
        : Layer<T>(std::move(name)), cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad) {
        w_.name = this->name() + ".w";
        w_.init_shape({cin, cout * k * k});
        b_.name = this->name() + ".b";
        b_.init_shape({cout});
        init_normal(w_.v, rng, init_std);
    }

    int out_dim(int in) const { return (in - 1) * stride_ - 2 * pad_ + k_; }

    struct Ctx {
        Tensor<T> x;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        if (x.dim(1) != cin_)
            throw std::invalid_argument(this->name() + ": channel mismatch");
        const int oh = out_dim(H), ow = out_dim(W);
        const int kk = cout_ * k_ * k_;
        Tensor<T> wt({kk, cin_});
        kern::transpose(w_.v.ptr(), cin_, kk, wt.ptr());
        Tensor<T> y({N, cout_, oh, ow}, T(0));
        Tensor<T> col({kk, H * W});
        for (int n = 0; n < N; ++n) {
            const T* x_n = x.ptr() + static_cast<int64_t>(n) * cin_ * H * W;
            kern::gemm_nn(kk, H * W, cin_, wt.ptr(), cin_, x_n, H * W, col.ptr(), H * W, false);
            T* y_n = y.ptr() + static_cast<int64_t>(n) * cout_ * oh * ow;
            kern::col2im(col.ptr(), cout_, oh, ow, k_, k_, stride_, pad_, kern::Pad::zero, y_n);
            for (int co = 0; co < cout_; ++co) {
                T bv = b_.v[co];
                T* row = y_n + static_cast<int64_t>(co) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) row[i] += bv;
            }
        }
        ctx = Ctx{x};
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool accum_params) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const Tensor<T>& x = c.x;
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        const int oh = gy.dim(2), ow = gy.dim(3);
        const int kk = cout_ * k_ * k_;
        Tensor<T> dx({N, cin_, H, W});
        Tensor<T> col({kk, H * W});
        for (int n = 0; n < N; ++n) {
            const T* gy_n = gy.ptr() + static_cast<int64_t>(n) * cout_ * oh * ow;
            kern::im2col(gy_n, cout_, oh, ow, k_, k_, stride_, pad_, kern::Pad::zero, col.ptr());
            if (accum_params) {
                const T* x_n = x.ptr() + static_cast<int64_t>(n) * cin_ * H * W;
                kern::gemm_nt(cin_, kk, H * W, x_n, H * W, col.ptr(), H * W, w_.g.ptr(), kk, true);
                for (int co = 0; co < cout_; ++co)
                    b_.g[co] += static_cast<T>(
                        kern::sum(gy_n + static_cast<int64_t>(co) * oh * ow, oh * ow));
            }
            kern::gemm_nn(cin_, H * W, kk, w_.v.ptr(), kk, col.ptr(), H * W,
                          dx.ptr() + static_cast<int64_t>(n) * cin_ * H * W, H * W, false);
        }
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    int cin_, cout_, k_, stride_, pad_;
    Param<T> w_, b_;
};

// ---------------------------------------------------------------------------
// InstanceNorm2d, affine-free: per-sample per-channel standardization.
// ---------------------------------------------------------------------------

template <class T>
class InstanceNorm2d : public Layer<T> {
public:
    explicit InstanceNorm2d(std::string name, double eps = 1e-5)
        : Layer<T>(std::move(name)), eps_(eps) {}

    struct Ctx {
        Tensor<T> y;
        std::vector<T> inv_std; // per (n,c)
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        const int N = x.dim(0), C = x.dim(1);
        const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
        Ctx c;
        c.y = Tensor<T>(x.shape);
        c.inv_std.resize(static_cast<size_t>(N) * C);
        for (int n = 0; n < N; ++n) {
            for (int ch = 0; ch < C; ++ch) {
                const T* xp = x.ptr() + (static_cast<int64_t>(n) * C + ch) * hw;
                T* yp = c.y.ptr() + (static_cast<int64_t>(n) * C + ch) * hw;
                T mean, var;
                kern::mean_var(xp, hw, mean, var);
                T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps_));
                for (int64_t i = 0; i < hw; ++i) yp[i] = (xp[i] - mean) * inv;
                c.inv_std[static_cast<size_t>(n) * C + ch] = inv;
            }
        }
        Tensor<T> out = c.y;
        ctx = std::move(c);
        return out;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const int N = gy.dim(0), C = gy.dim(1);
        const int64_t hw = static_cast<int64_t>(gy.dim(2)) * gy.dim(3);
        Tensor<T> dx(gy.shape);
        for (int n = 0; n < N; ++n) {
            for (int ch = 0; ch < C; ++ch) {
                const int64_t off = (static_cast<int64_t>(n) * C + ch) * hw;
                const T* y = c.y.ptr() + off;
                const T* dy = gy.ptr() + off;
                T* dxp = dx.ptr() + off;
                double mdy = kern::sum(dy, hw) / static_cast<double>(hw);
                double mdyy = kern::dot(dy, y, hw) / static_cast<double>(hw);
                T inv = c.inv_std[static_cast<size_t>(n) * C + ch];
                for (int64_t i = 0; i < hw; ++i)
                    dxp[i] = static_cast<T>(inv * (dy[i] - mdy - y[i] * mdyy));
            }
        }
        return dx;
    }

private:
    double eps_;
};

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

enum class Act { relu, lrelu, tanh, sigmoid };

template <class T>
class Activation : public Layer<T> {
public:
    Activation(std::string name, Act kind, double slope = 0.2)
        : Layer<T>(std::move(name)), kind_(kind), slope_(static_cast<T>(slope)) {}

    struct Ctx {
        Tensor<T> y;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        Tensor<T> y(x.shape);
        const int64_t n = x.size();
        switch (kind_) {
        case Act::relu: kern::relu_fwd(x.ptr(), y.ptr(), n); break;
        case Act::lrelu: kern::lrelu_fwd(x.ptr(), y.ptr(), n, slope_); break;
        case Act::tanh:
            for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
            break;
        case Act::sigmoid:
            for (int64_t i = 0; i < n; ++i) y[i] = static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x[i]));
            break;
        }
        ctx = Ctx{y};
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const Tensor<T>& y = c.y;
        Tensor<T> dx(gy.shape);
        const int64_t n = gy.size();
        switch (kind_) {
        case Act::relu: kern::relu_bwd(y.ptr(), gy.ptr(), dx.ptr(), n); break;
        case Act::lrelu: kern::lrelu_bwd(y.ptr(), gy.ptr(), dx.ptr(), n, slope_); break;
        case Act::tanh:
            for (int64_t i = 0; i < n; ++i) dx[i] = gy[i] * (static_cast<T>(1) - y[i] * y[i]);
            break;
        case Act::sigmoid:
            for (int64_t i = 0; i < n; ++i) dx[i] = gy[i] * y[i] * (static_cast<T>(1) - y[i]);
            break;
        }
        return dx;
    }

private:
    Act kind_;
    T slope_;
};

// ---------------------------------------------------------------------------

template <class T>
class MaxPool2x2 : public Layer<T> {
public:
    explicit MaxPool2x2(std::string name) : Layer<T>(std::move(name)) {}

    struct Ctx {
        Tensor<int32_t> idx;
        int H = 0, W = 0;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        if (H % 2 || W % 2) throw std::invalid_argument(this->name() + ": odd spatial size");
        Ctx c;
        c.H = H;
        c.W = W;
        c.idx = Tensor<int32_t>({N, C, H / 2, W / 2});
        Tensor<T> y({N, C, H / 2, W / 2});
        for (int n = 0; n < N; ++n)
            kern::maxpool2x2_fwd(x.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W,
                                 y.ptr() + static_cast<int64_t>(n) * C * (H / 2) * (W / 2),
                                 c.idx.ptr() + static_cast<int64_t>(n) * C * (H / 2) * (W / 2));
        ctx = std::move(c);
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const int N = gy.dim(0), C = gy.dim(1);
        Tensor<T> dx({N, C, c.H, c.W});
        for (int n = 0; n < N; ++n)
            kern::maxpool2x2_bwd(gy.ptr() + static_cast<int64_t>(n) * C * (c.H / 2) * (c.W / 2), C,
                                 c.H, c.W,
                                 c.idx.ptr() + static_cast<int64_t>(n) * C * (c.H / 2) * (c.W / 2),
                                 dx.ptr() + static_cast<int64_t>(n) * C * c.H * c.W);
        return dx;
    }
};

template <class T>
class Flatten : public Layer<T> {
public:
    explicit Flatten(std::string name) : Layer<T>(std::move(name)) {}

    struct Ctx {
        std::vector<int> shape;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        ctx = Ctx{x.shape};
        Tensor<T> y = x;
        y.shape = {x.dim(0), static_cast<int>(x.size() / x.dim(0))};
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        Tensor<T> dx = gy;
        dx.shape = c.shape;
        return dx;
    }
};

template <class T>
class Linear : public Layer<T> {
public:
    Linear(std::string name, int in, int out, Rng& rng, double init_std = -1.0)
        : Layer<T>(std::move(name)), in_(in), out_(out) {
        w_.name = this->name() + ".w";
        w_.init_shape({out, in});
        b_.name = this->name() + ".b";
        b_.init_shape({out});
        if (init_std < 0)
            init_he(w_.v, rng, in);
        else
            init_normal(w_.v, rng, init_std);
    }

    struct Ctx {
        Tensor<T> x;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool) override {
        const int N = x.dim(0);
        if (x.dim(1) != in_) throw std::invalid_argument(this->name() + ": width mismatch");
        Tensor<T> y({N, out_});
        kern::gemm_nt(N, out_, in_, x.ptr(), in_, w_.v.ptr(), in_, y.ptr(), out_, false);
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out_; ++o) y[static_cast<int64_t>(n) * out_ + o] += b_.v[o];
        ctx = Ctx{x};
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool accum_params) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        const int N = gy.dim(0);
        if (accum_params) {
            kern::gemm_tn(out_, in_, N, gy.ptr(), out_, c.x.ptr(), in_, w_.g.ptr(), in_, true);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < out_; ++o) b_.g[o] += gy[static_cast<int64_t>(n) * out_ + o];
        }
        Tensor<T> dx({N, in_});
        kern::gemm_nn(N, in_, out_, gy.ptr(), out_, w_.v.ptr(), in_, dx.ptr(), in_, false);
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

    Param<T>& weight() { return w_; }
    Param<T>& bias() { return b_; }

private:
    int in_, out_;
    Param<T> w_, b_;
};

// Inverted dropout; identity in eval mode.
template <class T>
class Dropout : public Layer<T> {
public:
    Dropout(std::string name, double rate, uint64_t seed)
        : Layer<T>(std::move(name)), rate_(rate), rng_(seed) {}

    struct Ctx {
        Tensor<T> mask;
        bool active = false;
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool training) override {
        Ctx c;
        c.active = training && rate_ > 0.0;
        if (!c.active) {
            ctx = std::move(c);
            return x;
        }
        const T keep_inv = static_cast<T>(1.0 / (1.0 - rate_));
        c.mask = Tensor<T>(x.shape);
        Tensor<T> y(x.shape);
        for (int64_t i = 0; i < x.size(); ++i) {
            T m = rng_.bernoulli(1.0 - rate_) ? keep_inv : T(0);
            c.mask[i] = m;
            y[i] = x[i] * m;
        }
        ctx = std::move(c);
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        if (!c.active) return gy;
        Tensor<T> dx(gy.shape);
        kern::mul(gy.ptr(), c.mask.ptr(), dx.ptr(), gy.size());
        return dx;
    }

private:
    double rate_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Sequential container
// ---------------------------------------------------------------------------

template <class T>
class Sequential {
public:
    using Ctx = std::vector<std::any>;

    Sequential() = default;

    void add(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }

    Tensor<T> forward(const Tensor<T>& x, Ctx& ctx, bool training) const {
        ctx.clear();
        ctx.resize(layers_.size());
        Tensor<T> h = x;
        for (size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, ctx[i], training);
        return h;
    }

    Tensor<T> backward(Ctx& ctx, const Tensor<T>& gy, bool accum_params) const {
        Tensor<T> g = gy;
        for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(ctx[i], g, accum_params);
        return g;
    }

    void collect(std::vector<Param<T>*>& out) const {
        for (auto& l : layers_) l->collect(out);
    }

    size_t size() const { return layers_.size(); }
    Layer<T>* layer(size_t i) { return layers_[i].get(); }
    const Layer<T>* layer(size_t i) const { return layers_[i].get(); }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Residual unit: body(x) + shortcut(x), optional 1x1 projection when the
// channel count changes, optional activation after the addition.
template <class T>
class ResidualBlock : public Layer<T> {
public:
    ResidualBlock(std::string name, Sequential<T> body, std::unique_ptr<Conv2d<T>> proj,
                  bool post_relu)
        : Layer<T>(std::move(name)), body_(std::move(body)), proj_(std::move(proj)),
          post_relu_(post_relu) {}

    struct Ctx {
        typename Sequential<T>::Ctx body;
        std::any proj;
        Tensor<T> y; // post-activation output, for relu backward
    };

    Tensor<T> forward(const Tensor<T>& x, std::any& ctx, bool training) override {
        Ctx c;
        Tensor<T> h = body_.forward(x, c.body, training);
        Tensor<T> s = proj_ ? proj_->forward(x, c.proj, training) : x;
        check_same_shape(h, s, "residual add");
        Tensor<T> y(h.shape);
        kern::add(h.ptr(), s.ptr(), y.ptr(), h.size());
        if (post_relu_) {
            kern::relu_fwd(y.ptr(), y.ptr(), y.size());
            c.y = y;
        }
        ctx = std::move(c);
        return y;
    }

    Tensor<T> backward(std::any& ctx, const Tensor<T>& gy, bool accum_params) override {
        Ctx& c = *std::any_cast<Ctx>(&ctx);
        Tensor<T> g = gy;
        if (post_relu_) {
            Tensor<T> gr(gy.shape);
            kern::relu_bwd(c.y.ptr(), gy.ptr(), gr.ptr(), gy.size());
            g = std::move(gr);
        }
        Tensor<T> dx = body_.backward(c.body, g, accum_params);
        if (proj_) {
            Tensor<T> ds = proj_->backward(c.proj, g, accum_params);
            kern::add(dx.ptr(), ds.ptr(), dx.ptr(), dx.size());
        } else {
            kern::add(dx.ptr(), g.ptr(), dx.ptr(), dx.size());
        }
        return dx;
    }

    void collect(std::vector<Param<T>*>& out) override {
        body_.collect(out);
        if (proj_) proj_->collect(out);
    }

private:
    Sequential<T> body_;
    std::unique_ptr<Conv2d<T>> proj_;
    bool post_relu_;
};

} // namespace canmap::nn
