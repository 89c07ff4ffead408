#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "navigator.hpp"

namespace contrafeat {

AttributeChangeMatrix attribute_change_matrix(const std::vector<Tensor>& mods,
                                              const ToyWorld& world, int sample_count,
                                              float strength, Rng& rng, float eps_row) {
    if (sample_count < 1) throw ConfigError("attribute_change_matrix: need N >= 1");
    const int m = static_cast<int>(mods.size());
    const int p = world.factor_count();
    const int k_layers = world.config().k_layers;

    AttributeChangeMatrix out;
    out.a_raw = Tensor({m, p});
    out.sample_count = sample_count;

    for (int i = 0; i < sample_count; ++i) {
        const LatentCodeExt w = broadcast(world.sample_w0(rng), k_layers);
        const Tensor base = world.read_factors(w);
        for (int d = 0; d < m; ++d) {
            LatentCodeExt w_mod = w;
            for (std::size_t j = 0; j < w_mod.size(); ++j) w_mod[j] += strength * mods[static_cast<std::size_t>(d)][j];
            const Tensor f = world.read_factors(w_mod);
            for (int c = 0; c < p; ++c)
                out.a_raw.at(d, c) += std::abs(f[static_cast<std::size_t>(c)] - base[static_cast<std::size_t>(c)]);
        }
    }
    for (auto& e : out.a_raw.v) e /= static_cast<float>(sample_count);

    out.a = Tensor({m, p});
    for (int d = 0; d < m; ++d) {
        float mx = 0.0f;
        for (int c = 0; c < p; ++c) mx = std::max(mx, out.a_raw.at(d, c));
        if (mx < eps_row) {
            out.dead_rows.push_back(d);
            continue;
        }
        for (int c = 0; c < p; ++c) out.a.at(d, c) = out.a_raw.at(d, c) / mx;
    }
    return out;
}

namespace {

bool row_is_dead(const AttributeChangeMatrix& acm, int d) {
    return std::find(acm.dead_rows.begin(), acm.dead_rows.end(), d) != acm.dead_rows.end();
}

}  // namespace

float s_disen(const AttributeChangeMatrix& acm) {
    const int m = acm.m(), p = acm.p();
    float sum = 0.0f;
    int live = 0;
    for (int d = 0; d < m; ++d) {
        if (row_is_dead(acm, d)) continue;
        float max1 = -1.0f, max2 = -1.0f;
        for (int c = 0; c < p; ++c) {
            const float v = acm.a.at(d, c);
            if (v > max1) {
                max2 = max1;
                max1 = v;
            } else if (v > max2) {
                max2 = v;
            }
        }
        if (p < 2) max2 = 0.0f;
        sum += max1 - max2;
        ++live;
    }
    if (live == 0) throw NumericalError("s_disen: all rows dead");
    return sum / static_cast<float>(live);
}

int n_discov(const AttributeChangeMatrix& acm, float eps_tie) {
    const int m = acm.m(), p = acm.p();
    int count = 0;
    for (int c = 0; c < p; ++c) {
        bool hit = false;
        for (int d = 0; d < m && !hit; ++d) {
            if (row_is_dead(acm, d)) continue;
            if (acm.a.at(d, c) >= 1.0f - eps_tie) hit = true;
        }
        if (hit) ++count;
    }
    return count;
}

namespace {

// Equal-frequency binning by rank; ties broken by index for determinism.
std::vector<int> quantile_bins(const std::vector<float>& col, int bins) {
    const std::size_t n = col.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&col](std::size_t a, std::size_t b) { return col[a] < col[b]; });
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r)
        out[order[r]] = static_cast<int>((r * static_cast<std::size_t>(bins)) / n);
    return out;
}

double discrete_entropy(const std::vector<int>& x, int bins) {
    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    for (int b : x) counts[static_cast<std::size_t>(b)] += 1.0;
    const double n = static_cast<double>(x.size());
    double h = 0.0;
    for (double c : counts)
        if (c > 0.0) h -= (c / n) * std::log(c / n);
    return h;
}

double mutual_information(const std::vector<int>& x, const std::vector<int>& y, int bins) {
    std::vector<double> joint(static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins), 0.0);
    std::vector<double> px(static_cast<std::size_t>(bins), 0.0), py(static_cast<std::size_t>(bins), 0.0);
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        joint[static_cast<std::size_t>(x[i]) * static_cast<std::size_t>(bins) + static_cast<std::size_t>(y[i])] += 1.0;
        px[static_cast<std::size_t>(x[i])] += 1.0;
        py[static_cast<std::size_t>(y[i])] += 1.0;
    }
    double mi = 0.0;
    for (int a = 0; a < bins; ++a)
        for (int b = 0; b < bins; ++b) {
            const double j = joint[static_cast<std::size_t>(a) * static_cast<std::size_t>(bins) + static_cast<std::size_t>(b)];
            if (j <= 0.0) continue;
            mi += (j / n) * std::log(j * n / (px[static_cast<std::size_t>(a)] * py[static_cast<std::size_t>(b)]));
        }
    return std::max(0.0, mi);
}

}  // namespace

MigResult mig(const std::vector<std::vector<float>>& codes,
              const std::vector<std::vector<float>>& factors, int bins) {
    if (codes.empty() || factors.empty() || codes.size() != factors.size())
        throw ConfigError("mig: codes and factors must be non-empty and aligned");
    const std::size_t n = codes.size();
    const int q = static_cast<int>(codes[0].size());
    const int p = static_cast<int>(factors[0].size());

    std::vector<std::vector<int>> code_bins(static_cast<std::size_t>(q)), factor_bins(static_cast<std::size_t>(p));
    std::vector<float> col(n);
    for (int j = 0; j < q; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = codes[i][static_cast<std::size_t>(j)];
        code_bins[static_cast<std::size_t>(j)] = quantile_bins(col, bins);
    }
    for (int j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = factors[i][static_cast<std::size_t>(j)];
        factor_bins[static_cast<std::size_t>(j)] = quantile_bins(col, bins);
    }

    MigResult res;
    double sum = 0.0;
    int used = 0;
    for (int f = 0; f < p; ++f) {
        const double h = discrete_entropy(factor_bins[static_cast<std::size_t>(f)], bins);
        if (h < 1e-6) {
            res.excluded_factors.push_back(f);
            continue;
        }
        double best = -1.0, second = -1.0;
        for (int c = 0; c < q; ++c) {
            const double mi = mutual_information(code_bins[static_cast<std::size_t>(c)],
                                                 factor_bins[static_cast<std::size_t>(f)], bins);
            if (mi > best) {
                second = best;
                best = mi;
            } else if (mi > second) {
                second = mi;
            }
        }
        if (q < 2) second = 0.0;
        sum += (best - second) / h;
        ++used;
    }
    if (used == 0) throw NumericalError("mig: all factor columns have zero entropy");
    res.value = static_cast<float>(sum / used);
    return res;
}

float fvm(int factor_count, int code_dim, const FixedFactorSampler& sample_codes, Rng& rng,
          int votes, int samples_per_vote) {
    if (factor_count < 1 || code_dim < 1) throw ConfigError("fvm: bad dimensions");

    // Global per-dimension scale from a pool of unconditioned batches.
    std::vector<double> mean(static_cast<std::size_t>(code_dim), 0.0), sq(static_cast<std::size_t>(code_dim), 0.0);
    std::vector<std::vector<float>> batch;
    long long pooled = 0;
    const int calibration_batches = 32;
    for (int it = 0; it < calibration_batches; ++it) {
        const int f = static_cast<int>(rng.below(static_cast<std::uint64_t>(factor_count)));
        sample_codes(f, samples_per_vote, batch);
        for (const auto& c : batch) {
            for (int j = 0; j < code_dim; ++j) {
                mean[static_cast<std::size_t>(j)] += c[static_cast<std::size_t>(j)];
                sq[static_cast<std::size_t>(j)] += static_cast<double>(c[static_cast<std::size_t>(j)]) * c[static_cast<std::size_t>(j)];
            }
            ++pooled;
        }
    }
    std::vector<double> scale(static_cast<std::size_t>(code_dim));
    std::vector<bool> active(static_cast<std::size_t>(code_dim));
    int n_active = 0;
    for (int j = 0; j < code_dim; ++j) {
        const double mu = mean[static_cast<std::size_t>(j)] / static_cast<double>(pooled);
        const double var = sq[static_cast<std::size_t>(j)] / static_cast<double>(pooled) - mu * mu;
        scale[static_cast<std::size_t>(j)] = std::sqrt(std::max(var, 0.0));
        active[static_cast<std::size_t>(j)] = scale[static_cast<std::size_t>(j)] > 1e-8;
        if (active[static_cast<std::size_t>(j)]) ++n_active;
    }
    if (n_active == 0) throw NumericalError("fvm: all code dimensions are degenerate");

    // Votes: (argmin normalized variance dim, fixed factor).
    std::vector<std::vector<long long>> table(static_cast<std::size_t>(code_dim),
                                              std::vector<long long>(static_cast<std::size_t>(factor_count), 0));
    std::vector<std::pair<int, int>> vote_list;
    for (int v = 0; v < votes; ++v) {
        const int f = static_cast<int>(rng.below(static_cast<std::uint64_t>(factor_count)));
        sample_codes(f, samples_per_vote, batch);
        int best = -1;
        double best_var = 0.0;
        for (int j = 0; j < code_dim; ++j) {
            if (!active[static_cast<std::size_t>(j)]) continue;
            double s = 0.0, s2 = 0.0;
            for (const auto& c : batch) {
                const double x = c[static_cast<std::size_t>(j)] / scale[static_cast<std::size_t>(j)];
                s += x;
                s2 += x * x;
            }
            const double nn = static_cast<double>(batch.size());
            const double var = s2 / nn - (s / nn) * (s / nn);
            if (best < 0 || var < best_var) {
                best = j;
                best_var = var;
            }
        }
        table[static_cast<std::size_t>(best)][static_cast<std::size_t>(f)] += 1;
        vote_list.emplace_back(best, f);
    }

    std::vector<int> predict(static_cast<std::size_t>(code_dim), 0);
    for (int j = 0; j < code_dim; ++j) {
        long long bestc = -1;
        for (int f = 0; f < factor_count; ++f)
            if (table[static_cast<std::size_t>(j)][static_cast<std::size_t>(f)] > bestc) {
                bestc = table[static_cast<std::size_t>(j)][static_cast<std::size_t>(f)];
                predict[static_cast<std::size_t>(j)] = f;
            }
    }
    long long correct = 0;
    for (const auto& [dim, f] : vote_list)
        if (predict[static_cast<std::size_t>(dim)] == f) ++correct;
    return static_cast<float>(correct) / static_cast<float>(votes);
}

}  // namespace contrafeat
