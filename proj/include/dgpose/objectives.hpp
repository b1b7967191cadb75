#pragma once

// Loss terms and the two combined objectives.
//
// Every term is a batch average: sum over rows of (row weight x row term),
// divided by the batch size. Where a gradient tensor is supplied, the term's
// gradient times `scale` is *added* to it, so terms compose by accumulation.

#include <span>
#include <vector>

#include <json.hpp>

#include "dgpose/tensor.hpp"

namespace dgpose::obj {

/// Per-row weights; empty means all ones.
using RowWeights = std::span<const double>;

template <std::floating_point T>
struct DiagonalGaussian {
    Tensor<T> mu;       // (B, D, 1, 1)
    Tensor<T> log_var;  // same shape
};

/// mu + exp(log_var / 2) * eps.
template <std::floating_point T>
Tensor<T> reparameterize(const DiagonalGaussian<T>& g, const Tensor<T>& eps);

/// Chain rule through reparameterize; accumulates into grad_mu / grad_log_var.
template <std::floating_point T>
void reparameterize_backward(const Tensor<T>& grad_sample, const DiagonalGaussian<T>& g, const Tensor<T>& eps,
                             Tensor<T>& grad_mu, Tensor<T>& grad_log_var);

/// Standard normal with the shape of `like`.
template <std::floating_point T>
DiagonalGaussian<T> standard_normal_like(const Tensor<T>& like);

/// KL(q || p) summed over dimensions, averaged over the batch.
template <std::floating_point T>
double kl_diag_gaussians(const DiagonalGaussian<T>& q, const DiagonalGaussian<T>& p, RowWeights w = {},
                         DiagonalGaussian<T>* grad_q = nullptr, DiagonalGaussian<T>* grad_p = nullptr,
                         double scale = 1.0);

/// Mean absolute difference per row, averaged over the batch.
template <std::floating_point T>
double l1_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat, RowWeights w = {},
                         Tensor<T>* grad_x_hat = nullptr, double scale = 1.0);

/// Mean squared difference per row, averaged over the batch.
template <std::floating_point T>
double mean_squared_error(const Tensor<T>& pred, const Tensor<T>& target, RowWeights w = {},
                          Tensor<T>* grad_pred = nullptr, double scale = 1.0);

/// Regression of the 48 pose coordinates (MSE).
template <std::floating_point T>
double pose_regression_loss(const Tensor<T>& y_pred, const Tensor<T>& y_label, RowWeights w = {},
                            Tensor<T>* grad_pred = nullptr, double scale = 1.0);

/// Per-pixel MSE between heatmap stacks.
template <std::floating_point T>
double mapper_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad_pred = nullptr,
                   double scale = 1.0);

struct GanLosses {
    double d_loss = 0.0;
    double g_loss = 0.0;
};

/// Discriminator probabilities in, d_loss = -mean[log D(real) + log(1 - D(fake))]
/// and the non-saturating g_loss = -mean log D(fake).
template <std::floating_point T>
GanLosses gan_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake);

template <std::floating_point T>
double gan_d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake, Tensor<T>* grad_real = nullptr,
                  Tensor<T>* grad_fake = nullptr, double scale = 1.0);

template <std::floating_point T>
double gan_g_loss(const Tensor<T>& d_fake, Tensor<T>* grad_fake = nullptr, double scale = 1.0);

struct LossWeights {
    double alpha = 100.0;        // pose regression
    double gamma = 1.0;          // supervised sum
    double lambda_gan = 1.0;     // adversarial term
    double recon_weight = 1.0;   // multiplies the (per-pixel mean) L1 term
    double regression_weight = 1.0;  // multiplies the (per-coordinate mean) regression term

    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

/// Named terms of one evaluation. `l1` and `kl_z` cover every row; the
/// _sup / _unsup parts split them by routine. `total` is the generator-side
/// objective, see total_of.
struct LossBreakdown {
    double l1 = 0.0, l1_sup = 0.0, l1_unsup = 0.0;
    double kl_z = 0.0, kl_z_sup = 0.0, kl_z_unsup = 0.0;
    double kl_y = 0.0;
    double regression = 0.0;
    double gan_d = 0.0;
    double gan_g = 0.0;
    double total = 0.0;
    int labelled = 0;
    int unlabelled = 0;
    bool semi = false;
    LossWeights weights;

    /// conditional: recon*l1 + kl_z + lambda*gan_g
    /// semi: recon*(l1_unsup + gamma*l1_sup) + kl_z_unsup + gamma*kl_z_sup + kl_y
    ///       + gamma*alpha*regression_weight*regression + lambda*gan_g
    double total_of() const;
    nlohmann::json to_json() const;
};

template <std::floating_point T>
struct ConditionalInputs {
    const Tensor<T>* x = nullptr;
    const Tensor<T>* x_hat = nullptr;
    const DiagonalGaussian<T>* posterior = nullptr;  // q(z | x, y_h)
    const DiagonalGaussian<T>* prior = nullptr;      // p(z | y_h) from the Prior network
    const Tensor<T>* d_fake = nullptr;               // D(x_hat); may be null when lambda_gan = 0
};

template <std::floating_point T>
struct ConditionalGrads {
    Tensor<T> x_hat;
    DiagonalGaussian<T> posterior;
    DiagonalGaussian<T> prior;
    Tensor<T> d_fake;
};

template <std::floating_point T>
LossBreakdown conditional_objective(const ConditionalInputs<T>& in, const LossWeights& w,
                                    ConditionalGrads<T>* grads = nullptr);

template <std::floating_point T>
struct SemiInputs {
    const Tensor<T>* x = nullptr;
    const Tensor<T>* x_hat = nullptr;
    const DiagonalGaussian<T>* z = nullptr;   // q(z | x)
    const DiagonalGaussian<T>* y = nullptr;   // q(y_v | x), standardized pose
    const Tensor<T>* y_label = nullptr;       // (B, 48); rows read only where labelled
    const std::vector<bool>* labelled = nullptr;
    const Tensor<T>* d_fake = nullptr;
};

template <std::floating_point T>
struct SemiGrads {
    Tensor<T> x_hat;
    DiagonalGaussian<T> z;
    DiagonalGaussian<T> y;
    Tensor<T> d_fake;
};

/// Unlabelled rows: l1 + KL(q(z|x) || N(0,I)) + KL(q(y|x) || N(0,I)).
/// Labelled rows: gamma * (l1 + KL_z + alpha * regression(mu_y, label)).
/// Plus lambda_gan * g_loss over all rows.
template <std::floating_point T>
LossBreakdown semi_objective(const SemiInputs<T>& in, const LossWeights& w, SemiGrads<T>* grads = nullptr);

}  // namespace dgpose::obj
