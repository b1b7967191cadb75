#include "dgpose/objectives.hpp"

#include <cmath>

namespace dgpose::obj {

namespace {

constexpr double kProbFloor = 1e-12;

void check_same(const Shape& a, const Shape& b, const char* what) {
    if (a.size() != b.size() || a.n != b.n) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

double weight(RowWeights w, int r) { return w.empty() ? 1.0 : w[r]; }

template <class T>
void ensure_grad(Tensor<T>* g, const Tensor<T>& like) {
    if (g && g->size() != like.size()) *g = Tensor<T>(like.shape());
}

// Per-row mean of f(a - b).
template <class T, class F>
std::vector<double> row_means(const Tensor<T>& a, const Tensor<T>& b, F f) {
    const int n = a.shape().n;
    const std::size_t per = a.shape().per_sample();
    std::vector<double> out(n, 0.0);
    for (int r = 0; r < n; ++r) {
        const T* p = a.sample(r);
        const T* q = b.sample(r);
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) acc += f(static_cast<double>(p[i]) - static_cast<double>(q[i]));
        out[r] = per ? acc / static_cast<double>(per) : 0.0;
    }
    return out;
}

double batch_average(const std::vector<double>& rows, RowWeights w) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) acc += weight(w, static_cast<int>(r)) * rows[r];
    return rows.empty() ? 0.0 : acc / static_cast<double>(rows.size());
}

}  // namespace

template <std::floating_point T>
Tensor<T> reparameterize(const DiagonalGaussian<T>& g, const Tensor<T>& eps) {
    check_same(g.mu.shape(), g.log_var.shape(), "reparameterize");
    check_same(g.mu.shape(), eps.shape(), "reparameterize");
    Tensor<T> out(g.mu.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = g.mu[i] + std::exp(T(0.5) * g.log_var[i]) * eps[i];
    }
    return out;
}

template <std::floating_point T>
void reparameterize_backward(const Tensor<T>& grad_sample, const DiagonalGaussian<T>& g, const Tensor<T>& eps,
                             Tensor<T>& grad_mu, Tensor<T>& grad_log_var) {
    ensure_grad(&grad_mu, g.mu);
    ensure_grad(&grad_log_var, g.log_var);
    for (std::size_t i = 0; i < grad_sample.size(); ++i) {
        grad_mu[i] += grad_sample[i];
        grad_log_var[i] += grad_sample[i] * T(0.5) * std::exp(T(0.5) * g.log_var[i]) * eps[i];
    }
}

template <std::floating_point T>
DiagonalGaussian<T> standard_normal_like(const Tensor<T>& like) {
    return {Tensor<T>(like.shape()), Tensor<T>(like.shape())};
}

template <std::floating_point T>
double kl_diag_gaussians(const DiagonalGaussian<T>& q, const DiagonalGaussian<T>& p, RowWeights w,
                         DiagonalGaussian<T>* gq, DiagonalGaussian<T>* gp, double scale) {
    check_same(q.mu.shape(), p.mu.shape(), "kl");
    check_same(q.mu.shape(), q.log_var.shape(), "kl");
    check_same(p.mu.shape(), p.log_var.shape(), "kl");
    const int n = q.mu.shape().n;
    const std::size_t d = q.mu.shape().per_sample();
    if (gq) {
        ensure_grad(&gq->mu, q.mu);
        ensure_grad(&gq->log_var, q.log_var);
    }
    if (gp) {
        ensure_grad(&gp->mu, p.mu);
        ensure_grad(&gp->log_var, p.log_var);
    }
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
        const double wr = weight(w, r);
        const double k = scale * wr / n;
        double row = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t j = r * d + i;
            const double lq = q.log_var[j], lp = p.log_var[j];
            const double diff = static_cast<double>(q.mu[j]) - static_cast<double>(p.mu[j]);
            const double vq = std::exp(lq), inv_vp = std::exp(-lp);
            row += 0.5 * (lp - lq + (vq + diff * diff) * inv_vp - 1.0);
            if (wr == 0.0) continue;
            if (gq) {
                gq->mu[j] += static_cast<T>(k * diff * inv_vp);
                gq->log_var[j] += static_cast<T>(k * 0.5 * (vq * inv_vp - 1.0));
            }
            if (gp) {
                gp->mu[j] += static_cast<T>(-k * diff * inv_vp);
                gp->log_var[j] += static_cast<T>(k * 0.5 * (1.0 - (vq + diff * diff) * inv_vp));
            }
        }
        total += wr * row;
    }
    return n ? total / n : 0.0;
}

template <std::floating_point T>
double l1_reconstruction(const Tensor<T>& x, const Tensor<T>& x_hat, RowWeights w, Tensor<T>* grad,
                         double scale) {
    check_same(x.shape(), x_hat.shape(), "l1");
    const auto rows = row_means(x_hat, x, [](double v) { return std::abs(v); });
    if (grad) {
        ensure_grad(grad, x_hat);
        const int n = x.shape().n;
        const std::size_t per = x.shape().per_sample();
        for (int r = 0; r < n; ++r) {
            const double k = scale * weight(w, r) / (static_cast<double>(n) * per);
            if (k == 0.0) continue;
            for (std::size_t i = 0; i < per; ++i) {
                const std::size_t j = r * per + i;
                const double diff = static_cast<double>(x_hat[j]) - static_cast<double>(x[j]);
                (*grad)[j] += static_cast<T>(diff > 0 ? k : (diff < 0 ? -k : 0.0));
            }
        }
    }
    return batch_average(rows, w);
}

template <std::floating_point T>
double mean_squared_error(const Tensor<T>& pred, const Tensor<T>& target, RowWeights w, Tensor<T>* grad,
                          double scale) {
    check_same(pred.shape(), target.shape(), "mse");
    const auto rows = row_means(pred, target, [](double v) { return v * v; });
    if (grad) {
        ensure_grad(grad, pred);
        const int n = pred.shape().n;
        const std::size_t per = pred.shape().per_sample();
        for (int r = 0; r < n; ++r) {
            const double k = 2.0 * scale * weight(w, r) / (static_cast<double>(n) * per);
            if (k == 0.0) continue;
            for (std::size_t i = 0; i < per; ++i) {
                const std::size_t j = r * per + i;
                (*grad)[j] += static_cast<T>(k * (static_cast<double>(pred[j]) - static_cast<double>(target[j])));
            }
        }
    }
    return batch_average(rows, w);
}

template <std::floating_point T>
double pose_regression_loss(const Tensor<T>& y_pred, const Tensor<T>& y_label, RowWeights w, Tensor<T>* grad,
                            double scale) {
    return mean_squared_error(y_pred, y_label, w, grad, scale);
}

template <std::floating_point T>
double mapper_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad, double scale) {
    return mean_squared_error(pred, target, {}, grad, scale);
}

template <std::floating_point T>
double gan_d_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake, Tensor<T>* g_real, Tensor<T>* g_fake,
                  double scale) {
    const int nr = d_real.shape().n, nf = d_fake.shape().n;
    ensure_grad(g_real, d_real);
    ensure_grad(g_fake, d_fake);
    double real = 0.0, fake = 0.0;
    for (int i = 0; i < nr; ++i) {
        const double p = std::max(static_cast<double>(d_real[i]), kProbFloor);
        real += -std::log(p);
        if (g_real) (*g_real)[i] += static_cast<T>(-scale / (nr * p));
    }
    for (int i = 0; i < nf; ++i) {
        const double q = std::max(1.0 - static_cast<double>(d_fake[i]), kProbFloor);
        fake += -std::log(q);
        if (g_fake) (*g_fake)[i] += static_cast<T>(scale / (nf * q));
    }
    return (nr ? real / nr : 0.0) + (nf ? fake / nf : 0.0);
}

template <std::floating_point T>
double gan_g_loss(const Tensor<T>& d_fake, Tensor<T>* g_fake, double scale) {
    const int n = d_fake.shape().n;
    ensure_grad(g_fake, d_fake);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = std::max(static_cast<double>(d_fake[i]), kProbFloor);
        acc += -std::log(p);
        if (g_fake) (*g_fake)[i] += static_cast<T>(-scale / (n * p));
    }
    return n ? acc / n : 0.0;
}

template <std::floating_point T>
GanLosses gan_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    return {gan_d_loss(d_real, d_fake), gan_g_loss(d_fake)};
}

nlohmann::json LossWeights::to_json() const {
    return {{"alpha", alpha}, {"gamma", gamma}, {"lambda_gan", lambda_gan}, {"recon_weight", recon_weight},
            {"regression_weight", regression_weight}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    w.alpha = j.value("alpha", w.alpha);
    w.gamma = j.value("gamma", w.gamma);
    w.lambda_gan = j.value("lambda_gan", w.lambda_gan);
    w.recon_weight = j.value("recon_weight", w.recon_weight);
    w.regression_weight = j.value("regression_weight", w.regression_weight);
    return w;
}

double LossBreakdown::total_of() const {
    const auto& w = weights;
    if (!semi) return w.recon_weight * l1 + kl_z + w.lambda_gan * gan_g;
    return w.recon_weight * (l1_unsup + w.gamma * l1_sup) + kl_z_unsup + w.gamma * kl_z_sup + kl_y +
           w.gamma * w.alpha * w.regression_weight * regression + w.lambda_gan * gan_g;
}

nlohmann::json LossBreakdown::to_json() const {
    nlohmann::json j = {{"l1", l1},       {"kl_z", kl_z},   {"gan_d", gan_d}, {"gan_g", gan_g},
                        {"total", total}, {"weights", weights.to_json()}};
    if (semi) {
        j["l1_sup"] = l1_sup;
        j["l1_unsup"] = l1_unsup;
        j["kl_z_sup"] = kl_z_sup;
        j["kl_z_unsup"] = kl_z_unsup;
        j["kl_y"] = kl_y;
        j["regression"] = regression;
        j["labelled"] = labelled;
        j["unlabelled"] = unlabelled;
    }
    return j;
}

template <std::floating_point T>
LossBreakdown conditional_objective(const ConditionalInputs<T>& in, const LossWeights& w, ConditionalGrads<T>* g) {
    if (!in.x || !in.x_hat || !in.posterior || !in.prior) {
        throw std::invalid_argument("conditional objective needs images, posterior and prior");
    }
    LossBreakdown b;
    b.weights = w;
    b.labelled = in.x->shape().n;
    b.l1 = l1_reconstruction(*in.x, *in.x_hat, {}, g ? &g->x_hat : nullptr, w.recon_weight);
    b.kl_z = kl_diag_gaussians(*in.posterior, *in.prior, {}, g ? &g->posterior : nullptr,
                               g ? &g->prior : nullptr);
    if (in.d_fake) b.gan_g = gan_g_loss(*in.d_fake, g ? &g->d_fake : nullptr, w.lambda_gan);
    b.total = b.total_of();
    return b;
}

template <std::floating_point T>
LossBreakdown semi_objective(const SemiInputs<T>& in, const LossWeights& w, SemiGrads<T>* g) {
    if (!in.x || !in.x_hat || !in.z || !in.y || !in.labelled) {
        throw std::invalid_argument("semi objective needs images, both posteriors and the label mask");
    }
    const int n = in.x->shape().n;
    if (static_cast<int>(in.labelled->size()) != n) throw std::invalid_argument("label mask size");
    std::vector<double> sup(n), unsup(n), ones(n, 1.0), sup_g(n), reg(n);
    LossBreakdown b;
    b.semi = true;
    b.weights = w;
    for (int r = 0; r < n; ++r) {
        const bool l = (*in.labelled)[r];
        sup[r] = l ? 1.0 : 0.0;
        unsup[r] = l ? 0.0 : 1.0;
        sup_g[r] = l ? w.gamma : 0.0;
        (l ? b.labelled : b.unlabelled) += 1;
    }
    if (b.labelled && !in.y_label) throw std::invalid_argument("labelled rows need pose labels");

    // gradient weights per row: recon * (1 or gamma)
    std::vector<double> l1w(n), klw(n);
    for (int r = 0; r < n; ++r) {
        klw[r] = unsup[r] + sup_g[r];
        l1w[r] = w.recon_weight * klw[r];
    }
    const auto zero_z = standard_normal_like(in.z->mu);
    const auto zero_y = standard_normal_like(in.y->mu);

    b.l1 = l1_reconstruction(*in.x, *in.x_hat);
    b.l1_sup = l1_reconstruction(*in.x, *in.x_hat, sup);
    b.l1_unsup = l1_reconstruction(*in.x, *in.x_hat, unsup);
    if (g) l1_reconstruction(*in.x, *in.x_hat, l1w, &g->x_hat);

    b.kl_z = kl_diag_gaussians(*in.z, zero_z);
    b.kl_z_sup = kl_diag_gaussians(*in.z, zero_z, sup);
    b.kl_z_unsup = kl_diag_gaussians(*in.z, zero_z, unsup);
    if (g) kl_diag_gaussians(*in.z, zero_z, klw, &g->z);

    b.kl_y = kl_diag_gaussians(*in.y, zero_y, unsup, g ? &g->y : nullptr);
    if (b.labelled) {
        b.regression = pose_regression_loss(in.y->mu, *in.y_label, sup, g ? &g->y.mu : nullptr,
                                            w.gamma * w.alpha * w.regression_weight);
    }
    if (in.d_fake) b.gan_g = gan_g_loss(*in.d_fake, g ? &g->d_fake : nullptr, w.lambda_gan);
    b.total = b.total_of();
    return b;
}

#define DGPOSE_INSTANTIATE(T)                                                                              \
    template Tensor<T> reparameterize(const DiagonalGaussian<T>&, const Tensor<T>&);                      \
    template void reparameterize_backward(const Tensor<T>&, const DiagonalGaussian<T>&, const Tensor<T>&, \
                                          Tensor<T>&, Tensor<T>&);                                        \
    template DiagonalGaussian<T> standard_normal_like(const Tensor<T>&);                                  \
    template double kl_diag_gaussians(const DiagonalGaussian<T>&, const DiagonalGaussian<T>&, RowWeights, \
                                      DiagonalGaussian<T>*, DiagonalGaussian<T>*, double);                \
    template double l1_reconstruction(const Tensor<T>&, const Tensor<T>&, RowWeights, Tensor<T>*, double); \
    template double mean_squared_error(const Tensor<T>&, const Tensor<T>&, RowWeights, Tensor<T>*, double); \
    template double pose_regression_loss(const Tensor<T>&, const Tensor<T>&, RowWeights, Tensor<T>*,      \
                                         double);                                                         \
    template double mapper_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, double);                  \
    template double gan_d_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*, double);       \
    template double gan_g_loss(const Tensor<T>&, Tensor<T>*, double);                                     \
    template GanLosses gan_losses(const Tensor<T>&, const Tensor<T>&);                                    \
    template LossBreakdown conditional_objective(const ConditionalInputs<T>&, const LossWeights&,         \
                                                 ConditionalGrads<T>*);                                   \
    template LossBreakdown semi_objective(const SemiInputs<T>&, const LossWeights&, SemiGrads<T>*);

DGPOSE_INSTANTIATE(float)
DGPOSE_INSTANTIATE(double)

#undef DGPOSE_INSTANTIATE

}  // namespace dgpose::obj
