#include "forge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "forge/parallel.hpp"
#include "forge/rng.hpp"

namespace forge {

std::vector<Segment> make_segments(const Trajectory& traj, int len) {
    if (len < 2) throw ConfigError("segment length must be >= 2");
    std::vector<Segment> out;
    const std::size_t n = traj.size();
    std::size_t start = 0;
    while (start + 1 < n) {
        std::size_t stop = std::min(start + static_cast<std::size_t>(len), n);
        Segment s;
        s.times.assign(traj.times.begin() + start, traj.times.begin() + stop);
        s.states.assign(traj.states.begin() + start, traj.states.begin() + stop);
        out.push_back(std::move(s));
        if (stop == n) break;
        start = stop - 1;  // consecutive windows share an endpoint
    }
    return out;
}

namespace {

// forward RK4 substep on the raw net (no exception-per-call overhead)
void net_step_rk4(const DenseNet& net, std::vector<double>& z, double h,
                  std::vector<double>& k1, std::vector<double>& k2, std::vector<double>& k3,
                  std::vector<double>& k4, std::vector<double>& tmp) {
    const std::size_t d = z.size();
    net.forward(z, k1);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
    net.forward(tmp, k2);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
    net.forward(tmp, k3);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = z[i] + h * k3[i];
    net.forward(tmp, k4);
    for (std::size_t i = 0; i < d; ++i)
        z[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

int substep_count(double dt, double h_target) {
    return std::max(1, static_cast<int>(std::ceil(dt / h_target - 1e-12)));
}

struct SegmentWork {
    double loss = 0.0;            // sum of scaled squared residuals (unnormalized)
    std::vector<double> grad;     // d(sum)/dparams
};

// One segment: forward rollout storing substep states, then reverse sweep.
// grad accumulates d(sum of squared scaled residuals)/dparams; the caller
// divides by the batch entry count.
void segment_loss_grad(const DenseNet& net, const Segment& seg, double h_target,
                       std::span<const double> inv_scale2, SegmentWork& work) {
    const std::size_t d = seg.states.front().size();
    const std::size_t L = seg.times.size();

    struct Interval {
        std::size_t z_begin;  // index into zs of the first substep start
        int n_sub;
        double h;
    };
    std::vector<Interval> intervals;
    std::vector<std::vector<double>> zs;  // substep start states, then final state

    std::vector<double> z = seg.states.front();
    std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
    for (std::size_t k = 0; k + 1 < L; ++k) {
        const double dt = seg.times[k + 1] - seg.times[k];
        const int n_sub = substep_count(dt, h_target);
        const double h = dt / n_sub;
        intervals.push_back({zs.size(), n_sub, h});
        for (int s = 0; s < n_sub; ++s) {
            zs.push_back(z);
            net_step_rk4(net, z, h, k1, k2, k3, k4, tmp);
        }
        // residual at observation k+1
        for (std::size_t j = 0; j < d; ++j) {
            const double r = z[j] - seg.states[k + 1][j];
            work.loss += r * r * inv_scale2[j];
        }
        // final prediction; earlier interval ends reappear as the next
        // interval's first substep start
        if (k + 2 == L) zs.push_back(z);
    }
    if (!std::isfinite(work.loss))
        throw NonFiniteError("trajectory-matching loss is non-finite (rollout diverged)");

    // reverse sweep: adjoint of the unrolled RK4 chain. Stage traces are
    // rebuilt per substep (states are stored, stages are cheap to replay).
    std::vector<double> g(d, 0.0);
    std::vector<double> a(d), u(d), u_sum(d);
    DenseNet::Trace tr1, tr2, tr3, tr4;
    std::vector<double> x2(d), x3(d), x4(d);
    for (std::size_t k = L - 1; k-- > 0;) {
        const Interval& iv = intervals[k];
        // prediction at observation k+1: for the last interval it is the stored
        // final state; for earlier ones it is the start of the next interval.
        const std::vector<double>& pred =
            (k + 2 == L) ? zs.back() : zs[intervals[k + 1].z_begin];
        for (std::size_t j = 0; j < d; ++j)
            g[j] += 2.0 * (pred[j] - seg.states[k + 1][j]) * inv_scale2[j];
        // walk substeps backwards
        for (int s = iv.n_sub; s-- > 0;) {
            const std::vector<double>& zn = zs[iv.z_begin + static_cast<std::size_t>(s)];
            const double h = iv.h;
            // replay the stages, keeping each trace for the VJPs below
            net.forward_trace(zn, tr1, k1);
            for (std::size_t j = 0; j < d; ++j) x2[j] = zn[j] + 0.5 * h * k1[j];
            net.forward_trace(x2, tr2, k2);
            for (std::size_t j = 0; j < d; ++j) x3[j] = zn[j] + 0.5 * h * k2[j];
            net.forward_trace(x3, tr3, k3);
            for (std::size_t j = 0; j < d; ++j) x4[j] = zn[j] + h * k3[j];
            net.forward_trace(x4, tr4, k4);

            for (std::size_t j = 0; j < d; ++j) u_sum[j] = 0.0;
            // stage 4: x4 feeds the update with weight h/6
            for (std::size_t j = 0; j < d; ++j) a[j] = (h / 6.0) * g[j];
            net.vjp(tr4, a, work.grad, u);
            for (std::size_t j = 0; j < d; ++j) u_sum[j] += u[j];
            // stage 3: weight h/3 in the update, plus its effect through x4
            for (std::size_t j = 0; j < d; ++j) a[j] = (h / 3.0) * g[j] + h * u[j];
            net.vjp(tr3, a, work.grad, u);
            for (std::size_t j = 0; j < d; ++j) u_sum[j] += u[j];
            // stage 2
            for (std::size_t j = 0; j < d; ++j) a[j] = (h / 3.0) * g[j] + 0.5 * h * u[j];
            net.vjp(tr2, a, work.grad, u);
            for (std::size_t j = 0; j < d; ++j) u_sum[j] += u[j];
            // stage 1
            for (std::size_t j = 0; j < d; ++j) a[j] = (h / 6.0) * g[j] + 0.5 * h * u[j];
            net.vjp(tr1, a, work.grad, u);
            for (std::size_t j = 0; j < d; ++j) u_sum[j] += u[j];

            for (std::size_t j = 0; j < d; ++j) g[j] += u_sum[j];
        }
    }
}

}  // namespace

GradResult grad_params(const MlpField& field, std::span<const Segment> batch, double h_target,
                       std::span<const double> scale, int jobs) {
    if (batch.empty()) throw DomainError("empty segment batch");
    const std::size_t d = static_cast<std::size_t>(field.dim());
    for (const auto& seg : batch)
        if (seg.times.size() < 2) throw DomainError("segments need at least 2 observations");
    std::vector<double> inv_scale2(d, 1.0);
    if (!scale.empty()) {
        if (scale.size() != d) throw DimensionMismatchError("scale size mismatch");
        for (std::size_t j = 0; j < d; ++j) inv_scale2[j] = 1.0 / (scale[j] * scale[j]);
    }
    std::size_t entries = 0;
    for (const auto& seg : batch) entries += (seg.times.size() - 1) * d;

    std::vector<SegmentWork> works(batch.size());
    const std::size_t nparams = field.net.params.size();
    parallel_for(batch.size(), jobs, [&](std::size_t i) {
        works[i].grad.assign(nparams, 0.0);
        segment_loss_grad(field.net, batch[i], h_target, inv_scale2, works[i]);
    });

    GradResult res;
    res.grad.assign(nparams, 0.0);
    for (const auto& w : works) {  // fixed reduction order
        res.loss += w.loss;
        for (std::size_t p = 0; p < nparams; ++p) res.grad[p] += w.grad[p];
    }
    const double inv_n = 1.0 / static_cast<double>(entries);
    res.loss *= inv_n;
    for (auto& gv : res.grad) gv *= inv_n;
    for (double gv : res.grad)
        if (!std::isfinite(gv)) throw NonFiniteError("parameter gradient is non-finite");
    return res;
}

namespace {

double validation_mse(const DenseNet& net, const Dataset& ds, double h_target,
                      std::span<const double> inv_scale2) {
    const std::size_t d = ds.dim();
    double sum = 0.0;
    std::size_t entries = 0;
    std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
    for (int ti : ds.val_idx) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        std::vector<double> z = traj.states.front();
        for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
            const double dt = traj.times[k + 1] - traj.times[k];
            const int n_sub = substep_count(dt, h_target);
            const double h = dt / n_sub;
            for (int s = 0; s < n_sub; ++s) net_step_rk4(net, z, h, k1, k2, k3, k4, tmp);
            for (std::size_t j = 0; j < d; ++j) {
                const double r = z[j] - traj.states[k + 1][j];
                sum += r * r * inv_scale2[j];
                ++entries;
            }
        }
    }
    return sum / static_cast<double>(entries);
}

}  // namespace

std::pair<MlpField, TrainReport> train(const Dataset& ds, const TrainConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    if (ds.trajectories.empty() || ds.train_idx.empty() || ds.val_idx.empty())
        throw DomainError("dataset needs nonempty train and validation splits");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr <= 0 || cfg.segment_len < 2 ||
        cfg.patience < 1)
        throw ConfigError("invalid training configuration");
    const int d = static_cast<int>(ds.dim());

    std::vector<Segment> segments;
    std::vector<double> gaps;
    for (int ti : ds.train_idx) {
        const auto& traj = ds.trajectories[static_cast<std::size_t>(ti)];
        for (auto& s : make_segments(traj, cfg.segment_len)) segments.push_back(std::move(s));
        for (std::size_t k = 1; k < traj.times.size(); ++k)
            gaps.push_back(traj.times[k] - traj.times[k - 1]);
    }
    if (segments.empty()) throw DomainError("no usable training segments");
    std::sort(gaps.begin(), gaps.end());
    const double median_dt = gaps[gaps.size() / 2];
    const double h_target = median_dt / 4.0;

    std::vector<double> mean, scale;
    dataset_statistics(ds, mean, scale);
    std::vector<double> inv_scale2(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j)
        inv_scale2[static_cast<std::size_t>(j)] =
            1.0 / (scale[static_cast<std::size_t>(j)] * scale[static_cast<std::size_t>(j)]);

    MlpField field = make_mlp_field(d, cfg.hidden_width, cfg.n_layers, cfg.seed);
    Adam adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;

    TrainReport report;
    std::vector<double> best_params = field.net.params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    report.stop_reason = "epochs";

    std::vector<std::size_t> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t epoch_entries = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Segment> batch;
            batch.reserve(e - b);
            std::size_t batch_entries = 0;
            for (std::size_t i = b; i < e; ++i) {
                batch.push_back(segments[order[i]]);
                batch_entries += (segments[order[i]].times.size() - 1) * static_cast<std::size_t>(d);
            }
            GradResult gr = grad_params(field, batch, h_target, scale, cfg.jobs);
            adam.step(field.net.params, gr.grad);
            epoch_loss += gr.loss * static_cast<double>(batch_entries);
            epoch_entries += batch_entries;
        }
        report.train_mse.push_back(epoch_loss / static_cast<double>(epoch_entries));

        double val;
        try {
            val = validation_mse(field.net, ds, h_target, inv_scale2);
            if (!std::isfinite(val)) val = std::numeric_limits<double>::infinity();
        } catch (const Error&) {
            val = std::numeric_limits<double>::infinity();
        }
        report.val_mse.push_back(val);

        if (val < best_val) {
            best_val = val;
            best_params = field.net.params;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (val <= cfg.target_val_mse) {
            report.stop_reason = "target";
            break;
        }
        if (since_best >= cfg.patience) {
            report.stop_reason = "patience";
            break;
        }
    }

    field.net.params = std::move(best_params);
    field.final_val_mse = best_val;
    report.final_val_mse = report.val_mse.back();
    report.best_val_mse = best_val;
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(field), std::move(report)};
}

std::vector<std::pair<std::vector<double>, std::vector<double>>> sample_pairs(
    const FieldFn& f, std::span<const double> lo, std::span<const double> hi, int n,
    std::uint64_t seed) {
    if (n < 1) throw DomainError("need n >= 1 pairs");
    if (lo.size() != hi.size()) throw DimensionMismatchError("box bounds size mismatch");
    const std::size_t d = lo.size();
    Rng rng(derive_seed(seed, "pairs"));
    std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> z(d), dz(d);
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.uniform(lo[j], hi[j]);
        f(z, dz);
        out.emplace_back(std::move(z), std::move(dz));
    }
    return out;
}

double field_fidelity(const FieldFn& f_hat, const SystemSpec& spec, int n, std::uint64_t seed) {
    if (n < 1) throw DomainError("need n >= 1 evaluation points");
    Rng rng(derive_seed(seed, "fidelity"));
    const std::size_t d = static_cast<std::size_t>(spec.dim);
    std::vector<double> z(d), ft(d), fx(d);
    double acc = 0.0;
    int done = 0;
    long guard = 0;
    while (done < n) {
        if (++guard > 10000L * n)
            throw RejectionExhaustedError("fidelity sampling rejection rate too high");
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.uniform(spec.box_lo[j], spec.box_hi[j]);
        if (spec.ic_accept && !spec.ic_accept(z)) continue;
        spec.field(z, fx);
        f_hat(z, ft);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            num += (ft[j] - fx[j]) * (ft[j] - fx[j]);
            den += fx[j] * fx[j];
        }
        acc += num / (den + 1e-12);
        ++done;
    }
    return acc / static_cast<double>(n);
}

double field_fidelity(const MlpField& field, const SystemSpec& spec, int n, std::uint64_t seed) {
    const DenseNet& net = field.net;
    FieldFn f = [&net](std::span<const double> z, std::span<double> dz) { net.forward(z, dz); };
    return field_fidelity(f, spec, n, seed);
}

}  // namespace forge
