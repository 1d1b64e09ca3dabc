#pragma once

// Loss values and their input gradients. Reductions accumulate in double.

#include <cmath>
#include <stdexcept>

#include "canmap/tensor.hpp"

namespace canmap::nn {

template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* dpred) {
    check_same_shape(pred, target, "mse_loss");
    const int64_t n = pred.size();
    if (n == 0) throw std::invalid_argument("mse_loss: empty input");
    double acc = 0.0;
    if (dpred) *dpred = Tensor<T>(pred.shape);
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
        if (dpred) (*dpred)[i] = static_cast<T>(2.0 * d / n);
    }
    return acc / n;
}

inline double softplus(double x) { return (x > 0 ? x : 0) + std::log1p(std::exp(-std::abs(x))); }

// binary cross-entropy on a sigmoid head, computed from the logits for
// stability; gradient is w.r.t. the logits.
template <class T>
double bce_logits_loss(const Tensor<T>& logits, const Tensor<T>& target, Tensor<T>* dlogits) {
    check_same_shape(logits, target, "bce_logits_loss");
    const int64_t n = logits.size();
    if (n == 0) throw std::invalid_argument("bce_logits_loss: empty input");
    double acc = 0.0;
    if (dlogits) *dlogits = Tensor<T>(logits.shape);
    for (int64_t i = 0; i < n; ++i) {
        double z = logits[i];
        double t = target[i];
        acc += softplus(-z) + (1.0 - t) * z;
        if (dlogits) {
            double s = 1.0 / (1.0 + std::exp(-z));
            (*dlogits)[i] = static_cast<T>((s - t) / n);
        }
    }
    return acc / n;
}

// mean absolute error; gradient w.r.t. `a` is sign(a-b)/n (zero diffs get 0)
template <class T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* da) {
    check_same_shape(a, b, "l1_loss");
    const int64_t n = a.size();
    if (n == 0) throw std::invalid_argument("l1_loss: empty input");
    double acc = 0.0;
    if (da) *da = Tensor<T>(a.shape);
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += std::abs(d);
        if (da) (*da)[i] = static_cast<T>(d > 0 ? 1.0 / n : (d < 0 ? -1.0 / n : 0.0));
    }
    return acc / n;
}

// least-squares GAN pieces, real target 1 and fake target 0.
//   d_loss = mean((D(real)-1)^2) + mean(D(fake)^2)
//   g_loss = mean((D(fake)-1)^2)
template <class T>
double lsgan_d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake, Tensor<T>* d_d_real,
                    Tensor<T>* d_d_fake) {
    const int64_t nr = d_real.size(), nf = d_fake.size();
    if (nr == 0 || nf == 0) throw std::invalid_argument("lsgan_d_loss: empty input");
    double acc = 0.0;
    if (d_d_real) *d_d_real = Tensor<T>(d_real.shape);
    if (d_d_fake) *d_d_fake = Tensor<T>(d_fake.shape);
    for (int64_t i = 0; i < nr; ++i) {
        double d = static_cast<double>(d_real[i]) - 1.0;
        acc += d * d / nr;
        if (d_d_real) (*d_d_real)[i] = static_cast<T>(2.0 * d / nr);
    }
    for (int64_t i = 0; i < nf; ++i) {
        double d = d_fake[i];
        acc += d * d / nf;
        if (d_d_fake) (*d_d_fake)[i] = static_cast<T>(2.0 * d / nf);
    }
    return acc;
}

template <class T>
double lsgan_g_loss(const Tensor<T>& d_fake, Tensor<T>* d_d_fake) {
    const int64_t n = d_fake.size();
    if (n == 0) throw std::invalid_argument("lsgan_g_loss: empty input");
    double acc = 0.0;
    if (d_d_fake) *d_d_fake = Tensor<T>(d_fake.shape);
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(d_fake[i]) - 1.0;
        acc += d * d;
        if (d_d_fake) (*d_d_fake)[i] = static_cast<T>(2.0 * d / n);
    }
    return acc / n;
}

} // namespace canmap::nn
