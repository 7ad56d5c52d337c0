#include "uspose/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "uspose/error.hpp"

namespace uspose::nn {

GradcheckResult gradcheck(const std::function<Tensor(Tape&)>& loss_fn, const std::vector<Tensor>& params,
                          const GradcheckConfig& cfg) {
    if (!(cfg.step > 0.0)) throw UsageError(strf("gradcheck: step %g must be > 0", cfg.step));

    for (const auto& p : params) {
        if (!p.defined() || !p.requires_grad())
            throw UsageError("gradcheck: every parameter must be defined with requires_grad");
        const_cast<Tensor&>(p).zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = loss_fn(tape);
        tape.backward(loss);
        for (const auto& p : params) analytic.push_back(p.grad());
    }
    auto eval = [&]() {
        Tape tape;
        return loss_fn(tape).item();
    };

    GradcheckResult res;
    Rng rng(cfg.sample_seed, "gradcheck");
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& values = const_cast<Tensor&>(params[pi]).value();
        const int64_t n = static_cast<int64_t>(values.size());
        std::vector<int64_t> coords;
        if (cfg.samples_per_tensor > 0 && cfg.samples_per_tensor < n) {
            Rng local = rng.fork(pi);
            std::unordered_set<int64_t> seen;
            while (static_cast<int>(seen.size()) < cfg.samples_per_tensor) {
                const int64_t c = local.uniform_int(0, n - 1);
                if (seen.insert(c).second) coords.push_back(c);
            }
            std::sort(coords.begin(), coords.end());
        } else {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        }
        for (int64_t c : coords) {
            const double old = values[static_cast<size_t>(c)];
            values[static_cast<size_t>(c)] = old + cfg.step;
            const double fp = eval();
            values[static_cast<size_t>(c)] = old - cfg.step;
            const double fm = eval();
            values[static_cast<size_t>(c)] = old;
            const double numeric = (fp - fm) / (2.0 * cfg.step);
            const double a = analytic[pi][static_cast<size_t>(c)];
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            ++res.coords_checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = strf("param %zu coord %lld: analytic %.12g numeric %.12g", pi,
                                 static_cast<long long>(c), a, numeric);
            }
        }
    }
    return res;
}

}  // namespace uspose::nn
